//! Histogram partition of the time-covariate domain and the empirical
//! at-risk measure of each cell.
//!
//! Axis 0 is time. Every axis is cut into slabs; a cell is one slab per axis.
//! Interval slabs are left-open right-closed, `(e_k, e_{k+1}]`, with the
//! first slab also holding its left edge so the unit time window is covered.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcdata::Dataset;

const MAX_CELLS: usize = 50_000_000;

/// How to cut one axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisSpec {
    /// Explicit, strictly increasing edges.
    Breakpoints(Vec<f64>),
    /// Equal-width slabs: over `[0, 1]` for time, over the observed range for
    /// covariates.
    Uniform(usize),
    /// One slab per level; values must match a level exactly.
    Categorical(Vec<f64>),
    /// Cuts at midpoints between consecutive distinct observed values
    /// (failure times on the time axis).
    Midpoints,
}

impl AxisSpec {
    /// Parses `uniform:N`, `breaks:a,b,c`, `categorical:l1,l2`, or `midpoints`.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("cannot parse axis spec `{text}`"));
        let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
        let list = |s: &str| -> Result<Vec<f64>> {
            s.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
                .collect()
        };
        match kind.trim() {
            "uniform" => rest
                .trim()
                .parse()
                .map(AxisSpec::Uniform)
                .map_err(|_| bad()),
            "breaks" | "breakpoints" => list(rest).map(AxisSpec::Breakpoints),
            "categorical" => list(rest).map(AxisSpec::Categorical),
            "midpoints" if rest.is_empty() => Ok(AxisSpec::Midpoints),
            _ => Err(bad()),
        }
    }
}

/// A built axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Axis {
    /// Slabs `(edges[k], edges[k+1]]`. With `open_ends` the first and last
    /// slabs extend to -inf and +inf.
    Interval {
        edges: Vec<f64>,
        open_ends: bool,
    },
    Categorical {
        levels: Vec<f64>,
    },
}

impl Axis {
    pub fn slab_count(&self) -> usize {
        match self {
            Axis::Interval { edges, .. } => edges.len() - 1,
            Axis::Categorical { levels } => levels.len(),
        }
    }

    pub fn slab(&self, v: f64) -> Option<usize> {
        if v.is_nan() {
            return None;
        }
        match self {
            Axis::Interval { edges, open_ends } => {
                let last = edges.len() - 1;
                if !open_ends && (v < edges[0] || v > edges[last]) {
                    return None;
                }
                Some(edges[1..last].partition_point(|&e| e < v))
            }
            Axis::Categorical { levels } => levels.iter().position(|&l| l == v),
        }
    }

    /// Midpoint of an interval slab, or the level of a categorical one.
    pub fn center(&self, k: usize) -> f64 {
        match self {
            Axis::Interval { edges, .. } => 0.5 * (edges[k] + edges[k + 1]),
            Axis::Categorical { levels } => levels[k],
        }
    }

    /// Finite bounds of slab `k` (for categorical slabs, the level twice).
    pub fn bounds(&self, k: usize) -> (f64, f64) {
        match self {
            Axis::Interval { edges, .. } => (edges[k], edges[k + 1]),
            Axis::Categorical { levels } => (levels[k], levels[k]),
        }
    }

    /// Boundary value separating slab `k - 1` from slab `k`.
    pub fn threshold(&self, k: usize) -> f64 {
        match self {
            Axis::Interval { edges, .. } => edges[k],
            Axis::Categorical { levels } => 0.5 * (levels[k - 1] + levels[k]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridAxes", into = "GridAxes")]
pub struct Grid {
    axes: Vec<Axis>,
    strides: Vec<usize>,
}

/// Serialized form: the axes in order, time first.
#[derive(Serialize, Deserialize)]
struct GridAxes {
    axes: Vec<Axis>,
}

impl TryFrom<GridAxes> for Grid {
    type Error = Error;

    fn try_from(value: GridAxes) -> Result<Self> {
        Grid::new(value.axes)
    }
}

impl From<Grid> for GridAxes {
    fn from(grid: Grid) -> Self {
        GridAxes { axes: grid.axes }
    }
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::InvalidConfig("grid needs a time axis".into()));
        }
        for (i, axis) in axes.iter().enumerate() {
            validate_axis(i, axis)?;
        }
        let strides = strides_for(&axes)?;
        Ok(Grid { axes, strides })
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn cell_count(&self) -> usize {
        self.strides[0] * self.axes[0].slab_count()
    }

    /// Mixed-radix index with time as the most significant digit.
    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    pub fn coords(&self, mut j: usize) -> Vec<usize> {
        self.strides
            .iter()
            .map(|s| {
                let c = j / s;
                j %= s;
                c
            })
            .collect()
    }

    pub fn slab_of(&self, j: usize, axis: usize) -> usize {
        (j / self.strides[axis]) % self.axes[axis].slab_count()
    }

    pub fn center(&self, j: usize) -> Vec<f64> {
        self.coords(j)
            .iter()
            .zip(&self.axes)
            .map(|(&k, a)| a.center(k))
            .collect()
    }

    fn covariate_offset(&self, x: &[f64]) -> Result<usize> {
        if x.len() + 1 != self.axes.len() {
            return Err(Error::GridMismatch(format!(
                "grid has {} covariate axes, point has {} covariates",
                self.axes.len() - 1,
                x.len()
            )));
        }
        let mut offset = 0;
        for (i, &v) in x.iter().enumerate() {
            let k = self.axes[i + 1].slab(v).ok_or(Error::OutOfGrid {
                axis: i + 1,
                value: v,
            })?;
            offset += k * self.strides[i + 1];
        }
        Ok(offset)
    }

    /// The unique cell containing `(t, x)`.
    pub fn locate(&self, t: f64, x: &[f64]) -> Result<usize> {
        let k = self.axes[0]
            .slab(t)
            .ok_or(Error::OutOfGrid { axis: 0, value: t })?;
        Ok(k * self.strides[0] + self.covariate_offset(x)?)
    }

    /// Adds `f(cell, overlap)` for every cell the time interval `(a, b]`
    /// crosses at fixed covariate `x`.
    pub fn for_each_overlap(
        &self,
        a: f64,
        b: f64,
        x: &[f64],
        mut f: impl FnMut(usize, f64),
    ) -> Result<()> {
        let offset = self.covariate_offset(x)?;
        let Axis::Interval { edges, .. } = &self.axes[0] else {
            return Err(Error::InvalidConfig(
                "time axis must be an interval axis".into(),
            ));
        };
        let last = edges.len() - 1;
        if a < edges[0] || b > edges[last] {
            let value = if a < edges[0] { a } else { b };
            return Err(Error::OutOfGrid { axis: 0, value });
        }
        let mut k = edges[1..last].partition_point(|&e| e <= a);
        while k < last && edges[k] < b {
            let overlap = b.min(edges[k + 1]) - a.max(edges[k]);
            if overlap > 0.0 {
                f(k * self.strides[0] + offset, overlap);
            }
            k += 1;
        }
        Ok(())
    }
}

fn strides_for(axes: &[Axis]) -> Result<Vec<usize>> {
    let mut strides = vec![1; axes.len()];
    let mut total: usize = 1;
    for i in (0..axes.len()).rev() {
        strides[i] = total;
        total = total
            .checked_mul(axes[i].slab_count())
            .filter(|&t| t <= MAX_CELLS)
            .ok_or_else(|| Error::InvalidConfig(format!("grid exceeds {MAX_CELLS} cells")))?;
    }
    Ok(strides)
}

fn validate_axis(i: usize, axis: &Axis) -> Result<()> {
    let bad = |msg: &str| Error::DegenerateAxis {
        axis: i,
        msg: msg.to_string(),
    };
    match axis {
        Axis::Interval { edges, open_ends } => {
            if edges.len() < 2 {
                return Err(bad("needs at least two edges"));
            }
            if edges.iter().any(|e| !e.is_finite()) {
                return Err(bad("edges must be finite"));
            }
            if edges.windows(2).any(|w| w[0] >= w[1]) {
                return Err(bad("edges must be strictly increasing"));
            }
            if i == 0 && (*open_ends || edges[0] > 0.0 || edges[edges.len() - 1] < 1.0) {
                return Err(bad("time edges must cover [0, 1]"));
            }
        }
        Axis::Categorical { levels } => {
            if i == 0 {
                return Err(bad("time axis cannot be categorical"));
            }
            if levels.is_empty() || levels.iter().any(|l| !l.is_finite()) {
                return Err(bad("categorical levels must be finite and nonempty"));
            }
            if levels.windows(2).any(|w| w[0] >= w[1]) {
                return Err(bad("categorical levels must be distinct"));
            }
        }
    }
    Ok(())
}

fn sorted_distinct(mut values: Vec<f64>) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    values.dedup();
    values
}

fn observed_values(data: &Dataset, axis: usize) -> Vec<f64> {
    if axis == 0 {
        data.subjects
            .iter()
            .filter_map(|s| s.event_time())
            .collect()
    } else {
        data.subjects
            .iter()
            .flat_map(|s| s.segments().iter().map(move |seg| seg.x[axis - 1]))
            .collect()
    }
}

fn build_axis(i: usize, spec: &AxisSpec, data: &Dataset) -> Result<Axis> {
    let bad = |msg: String| Error::DegenerateAxis { axis: i, msg };
    let axis = match spec {
        AxisSpec::Breakpoints(edges) => Axis::Interval {
            edges: edges.clone(),
            open_ends: false,
        },
        AxisSpec::Categorical(levels) => {
            let sorted = sorted_distinct(levels.clone());
            if sorted.len() != levels.len() {
                return Err(bad("categorical levels must be distinct".into()));
            }
            Axis::Categorical { levels: sorted }
        }
        AxisSpec::Uniform(0) => return Err(bad("uniform count must be at least 1".into())),
        AxisSpec::Uniform(k) if i == 0 => Axis::Interval {
            edges: (0..=*k).map(|m| m as f64 / *k as f64).collect(),
            open_ends: false,
        },
        AxisSpec::Uniform(k) => {
            let values = sorted_distinct(observed_values(data, i));
            let (Some(&lo), Some(&hi)) = (values.first(), values.last()) else {
                return Err(bad("no observed values to span".into()));
            };
            let edges = if *k == 1 {
                vec![lo, if hi > lo { hi } else { lo + 1.0 }]
            } else if hi > lo {
                (0..=*k)
                    .map(|m| lo + (hi - lo) * m as f64 / *k as f64)
                    .collect()
            } else {
                return Err(bad(format!(
                    "all observed values equal {lo}; cannot cut into {k}"
                )));
            };
            Axis::Interval {
                edges,
                open_ends: true,
            }
        }
        AxisSpec::Midpoints => {
            let values = sorted_distinct(observed_values(data, i));
            if values.len() < 2 {
                return Err(bad("fewer than two distinct observed values".into()));
            }
            let mids = values.windows(2).map(|w| 0.5 * (w[0] + w[1]));
            if i == 0 {
                let mut edges = vec![0.0];
                edges.extend(mids.filter(|&m| m > 0.0 && m < 1.0));
                edges.push(1.0);
                Axis::Interval {
                    edges,
                    open_ends: false,
                }
            } else {
                let mut edges = vec![values[0]];
                edges.extend(mids);
                edges.push(values[values.len() - 1]);
                Axis::Interval {
                    edges,
                    open_ends: true,
                }
            }
        }
    };
    validate_axis(i, &axis)?;
    Ok(axis)
}

/// Builds the grid; data is consulted only for data-driven axes.
pub fn build_grid(specs: &[AxisSpec], data: &Dataset) -> Result<Grid> {
    if specs.len() != data.p + 1 {
        return Err(Error::InvalidConfig(format!(
            "need {} axis specs (time + {} covariates), got {}",
            data.p + 1,
            data.p,
            specs.len()
        )));
    }
    let axes = specs
        .iter()
        .enumerate()
        .map(|(i, s)| build_axis(i, s, data))
        .collect::<Result<Vec<_>>>()?;
    Grid::new(axes)
}

/// Per-cell empirical mass and failure counts over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    /// Number of subjects the masses are averaged over.
    pub n: usize,
    pub mass: Vec<f64>,
    pub failures: Vec<u64>,
}

impl CellStats {
    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn occupied(&self, j: usize) -> bool {
        self.mass[j] > 0.0
    }

    pub fn occupied_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.mass.len()).filter(|&j| self.mass[j] > 0.0)
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied_cells().count()
    }

    pub fn empty_cells(&self) -> Vec<usize> {
        (0..self.mass.len())
            .filter(|&j| self.mass[j] <= 0.0)
            .collect()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    pub fn total_failures(&self) -> u64 {
        self.failures.iter().sum()
    }

    /// Dⱼ / n.
    pub fn failure_rate(&self, j: usize) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.failures[j] as f64 / self.n as f64
        }
    }
}

struct SubjectContribution {
    overlaps: Vec<(usize, f64)>,
    failure_cell: Option<usize>,
}

fn subject_contribution(
    grid: &Grid,
    subject: &crate::funcdata::Subject,
) -> Result<SubjectContribution> {
    let mut overlaps = Vec::new();
    for seg in subject.segments() {
        grid.for_each_overlap(seg.t_start, seg.t_end, &seg.x, |j, len| {
            overlaps.push((j, len))
        })?;
    }
    let failure_cell = match subject.failure_point() {
        Some((t, x)) => Some(grid.locate(t, x)?),
        None => None,
    };
    Ok(SubjectContribution {
        overlaps,
        failure_cell,
    })
}

/// Exact μ̂ₙ(Bⱼ) and Dⱼ by interval overlap.
///
/// Subjects are processed in parallel, but contributions are merged in
/// subject order so the sums do not depend on the worker count.
pub fn accumulate(grid: &Grid, data: &Dataset) -> Result<CellStats> {
    let contributions = data
        .subjects
        .par_iter()
        .map(|s| subject_contribution(grid, s))
        .collect::<Result<Vec<_>>>()?;
    let cells = grid.cell_count();
    let mut time = vec![0.0; cells];
    let mut failures = vec![0u64; cells];
    for c in &contributions {
        for &(j, len) in &c.overlaps {
            time[j] += len;
        }
        if let Some(j) = c.failure_cell {
            failures[j] += 1;
        }
    }
    let n = data.n();
    if n > 0 {
        let inv = n as f64;
        time.iter_mut().for_each(|m| *m /= inv);
    }
    Ok(CellStats {
        n,
        mass: time,
        failures,
    })
}
