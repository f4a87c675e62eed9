//! Shallow regression trees over grid cells, fit by μ̂ₙ-weighted least
//! squares.
//!
//! Each occupied cell is one observation located at its center with weight
//! μ̂ₙ(Bⱼ). Candidate thresholds are the grid's own slab boundaries, so every
//! leaf is a union of cells and the tree output is again a cell function.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hazrisk::{norms, CellFunction};
use crate::partition::{CellStats, Grid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
        weight: f64,
    },
    /// Cells whose slab on `axis` is below `slab` go left.
    Split {
        axis: usize,
        slab: usize,
        threshold: f64,
        improvement: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedTree {
    /// Arena; the root is `nodes[0]`.
    pub nodes: Vec<Node>,
    pub splits_used: usize,
}

impl FittedTree {
    /// Leaf value for cell `j` (also for empty cells, which is extrapolation).
    pub fn value_at(&self, grid: &Grid, j: usize) -> f64 {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                Node::Leaf { value, .. } => return value,
                Node::Split {
                    axis,
                    slab,
                    left,
                    right,
                    ..
                } => {
                    id = if grid.slab_of(j, axis) < slab {
                        left
                    } else {
                        right
                    }
                }
            }
        }
    }

    /// The tree on every cell of the grid.
    pub fn evaluate(&self, grid: &Grid) -> CellFunction {
        CellFunction {
            values: (0..grid.cell_count())
                .map(|j| self.value_at(grid, j))
                .collect(),
        }
    }

    /// Total improvement per axis over all splits.
    pub fn split_improvements(&self) -> BTreeMap<usize, f64> {
        let mut out = BTreeMap::new();
        for node in &self.nodes {
            if let Node::Split {
                axis, improvement, ..
            } = node
            {
                *out.entry(*axis).or_insert(0.0) += improvement;
            }
        }
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

pub fn split_improvements(tree: &FittedTree) -> BTreeMap<usize, f64> {
    tree.split_improvements()
}

struct Obs {
    coords: Vec<usize>,
    w: f64,
    y: f64,
}

#[derive(Clone, Copy)]
struct Candidate {
    axis: usize,
    slab: usize,
    improvement: f64,
}

struct OpenLeaf {
    node: usize,
    members: Vec<usize>,
    ranges: Vec<(usize, usize)>,
    best: Option<Candidate>,
}

fn weighted_mean(obs: &[Obs], members: &[usize]) -> (f64, f64) {
    let (w, wy) = members.iter().fold((0.0, 0.0), |(w, wy), &i| {
        (w + obs[i].w, wy + obs[i].w * obs[i].y)
    });
    (if w > 0.0 { wy / w } else { 0.0 }, w)
}

/// Best split of one leaf. Strict comparison keeps the lowest axis and the
/// lowest threshold among equal improvements.
fn best_split(obs: &[Obs], members: &[usize], ranges: &[(usize, usize)]) -> Option<Candidate> {
    let first = obs[members[0]].y;
    if members.iter().all(|&i| obs[i].y == first) {
        return None;
    }
    // centered targets keep the mean difference free of cancellation
    let (mean, _) = weighted_mean(obs, members);
    let mut best: Option<Candidate> = None;
    for (axis, &(lo, hi)) in ranges.iter().enumerate() {
        if hi - lo < 2 {
            continue;
        }
        let mut w = vec![0.0; hi - lo];
        let mut wy = vec![0.0; hi - lo];
        for &i in members {
            let k = obs[i].coords[axis] - lo;
            w[k] += obs[i].w;
            wy[k] += obs[i].w * (obs[i].y - mean);
        }
        let total_w: f64 = w.iter().sum();
        let total_wy: f64 = wy.iter().sum();
        let (mut wl, mut wyl) = (0.0, 0.0);
        for k in 1..hi - lo {
            wl += w[k - 1];
            wyl += wy[k - 1];
            let wr = total_w - wl;
            if wl <= 0.0 || wr <= 0.0 {
                continue;
            }
            let diff = wyl / wl - (total_wy - wyl) / wr;
            let improvement = wl * wr / total_w * diff * diff;
            if improvement > 0.0 && best.is_none_or(|b| improvement > b.improvement) {
                best = Some(Candidate {
                    axis,
                    slab: lo + k,
                    improvement,
                });
            }
        }
    }
    best
}

/// Greedy best-first weighted least-squares tree with at most `max_splits`
/// splits, fit to `target` on the occupied cells.
pub fn fit_tree(
    target: &CellFunction,
    stats: &CellStats,
    grid: &Grid,
    max_splits: usize,
) -> Result<FittedTree> {
    let obs: Vec<Obs> = stats
        .occupied_cells()
        .map(|j| Obs {
            coords: grid.coords(j),
            w: stats.mass[j],
            y: target.values[j],
        })
        .collect();
    if obs.is_empty() {
        return Err(Error::NoOccupiedCells);
    }
    let members: Vec<usize> = (0..obs.len()).collect();
    let ranges: Vec<(usize, usize)> = grid.axes().iter().map(|a| (0, a.slab_count())).collect();
    let (value, weight) = weighted_mean(&obs, &members);
    let mut nodes = vec![Node::Leaf { value, weight }];
    let best = best_split(&obs, &members, &ranges);
    let mut open = vec![OpenLeaf {
        node: 0,
        members,
        ranges,
        best,
    }];

    let mut splits_used = 0;
    while splits_used < max_splits {
        let mut pick: Option<(usize, f64)> = None;
        for (i, leaf) in open.iter().enumerate() {
            if let Some(c) = leaf.best {
                if pick.is_none_or(|(_, imp)| c.improvement > imp) {
                    pick = Some((i, c.improvement));
                }
            }
        }
        let Some((i, _)) = pick else { break };
        let leaf = open.remove(i);
        let c = leaf.best.expect("picked leaf has a split");
        let (left_members, right_members): (Vec<usize>, Vec<usize>) = leaf
            .members
            .iter()
            .partition(|&&m| obs[m].coords[c.axis] < c.slab);

        let mut left_ranges = leaf.ranges.clone();
        left_ranges[c.axis].1 = c.slab;
        let mut right_ranges = leaf.ranges;
        right_ranges[c.axis].0 = c.slab;

        let left_id = nodes.len();
        let right_id = left_id + 1;
        for (members, ranges) in [(left_members, left_ranges), (right_members, right_ranges)] {
            let (value, weight) = weighted_mean(&obs, &members);
            let node = nodes.len();
            nodes.push(Node::Leaf { value, weight });
            let best = best_split(&obs, &members, &ranges);
            open.push(OpenLeaf {
                node,
                members,
                ranges,
                best,
            });
        }
        nodes[leaf.node] = Node::Split {
            axis: c.axis,
            slab: c.slab,
            threshold: grid.axes()[c.axis].threshold(c.slab),
            improvement: c.improvement,
            left: left_id,
            right: right_id,
        };
        // keep open leaves ordered by creation for deterministic tie-breaks
        open.sort_by_key(|l| l.node);
        splits_used += 1;
    }
    Ok(FittedTree { nodes, splits_used })
}

/// Tree output on occupied cells scaled to unit μ̂ₙ-L2 norm (0 on empty
/// cells).
pub fn normalize(tree: &FittedTree, grid: &Grid, stats: &CellStats) -> Result<CellFunction> {
    let mut f = CellFunction::zeros(grid.cell_count());
    for j in stats.occupied_cells() {
        f.values[j] = tree.value_at(grid, j);
    }
    let l2 = norms(&f, stats).l2;
    if !(l2.is_finite() && l2 > 0.0) {
        return Err(Error::ZeroDirection);
    }
    Ok(f.scaled(1.0 / l2))
}

/// Σ μ̂ⱼ (target − tree)² over occupied cells.
pub fn weighted_sse(
    tree: &FittedTree,
    target: &CellFunction,
    grid: &Grid,
    stats: &CellStats,
) -> f64 {
    stats
        .occupied_cells()
        .map(|j| {
            let r = target.values[j] - tree.value_at(grid, j);
            stats.mass[j] * r * r
        })
        .sum()
}
