//! Joint choice of tree size and iteration count by k-fold cross-validated
//! likelihood risk.
//!
//! Subjects, never segments, are assigned to folds. One boosting path is run
//! per (fold, tree size) and scored on the held-out fold after every
//! iteration.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boost::{fit_stats, BoostFit, Schedule};
use crate::error::{Error, Result};
use crate::funcdata::Dataset;
use crate::hazrisk::risk;
use crate::partition::{accumulate, build_grid, AxisSpec, CellStats, Grid};

pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvPlan {
    pub folds: usize,
    pub splits_grid: Vec<usize>,
    pub iters_max: usize,
    pub seed: u64,
}

impl Default for CvPlan {
    fn default() -> Self {
        CvPlan {
            folds: DEFAULT_FOLDS,
            splits_grid: vec![1, 2, 3, 4, 5, 6],
            iters_max: crate::boost::DEFAULT_MAX_ITERS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub max_splits: usize,
    pub m: usize,
    pub mean_heldout_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Rows ordered by (max_splits, m).
    pub table: Vec<CvRow>,
    pub chosen_splits: usize,
    pub chosen_iters: usize,
    pub best_risk: f64,
}

impl CvResult {
    /// `max_splits,m,mean_heldout_risk` table.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "max_splits,m,mean_heldout_risk")?;
        for row in &self.table {
            writeln!(
                out,
                "{},{},{}",
                row.max_splits, row.m, row.mean_heldout_risk
            )?;
        }
        Ok(())
    }
}

/// Fold of each subject (indexed as in `data`). Subjects are ordered by id
/// before the seeded shuffle, so the assignment ignores input order.
pub fn assign_folds(data: &Dataset, folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..data.n()).collect();
    order.sort_by(|&a, &b| data.subjects[a].id.cmp(&data.subjects[b].id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut fold = vec![0; data.n()];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

struct Fold {
    train: CellStats,
    test: CellStats,
}

fn prepare_folds(data: &Dataset, grid: &Grid, plan: &CvPlan) -> Result<Vec<Fold>> {
    let assignment = assign_folds(data, plan.folds, plan.seed);
    let mut by_id: Vec<usize> = (0..data.n()).collect();
    by_id.sort_by(|&a, &b| data.subjects[a].id.cmp(&data.subjects[b].id));
    (0..plan.folds)
        .map(|f| {
            let (test_idx, train_idx): (Vec<usize>, Vec<usize>) =
                by_id.iter().partition(|&&i| assignment[i] == f);
            let train = accumulate(grid, &data.subset(&train_idx))?;
            if train.total_failures() == 0 {
                return Err(Error::FoldWithoutFailures { fold: f });
            }
            let test = accumulate(grid, &data.subset(&test_idx))?;
            Ok(Fold { train, test })
        })
        .collect()
}

/// Held-out risk after each of `0..=iters_max` iterations. A path that stops
/// early keeps its final model for the remaining iteration counts.
fn heldout_path(
    grid: &Grid,
    fold: &Fold,
    max_splits: usize,
    schedule: &Schedule,
) -> Result<Vec<f64>> {
    let mut path = Vec::with_capacity(schedule.max_iters + 1);
    fit_stats(grid, &fold.train, max_splits, schedule, |_, coeffs| {
        path.push(risk(coeffs, &fold.test));
    })?;
    let last = *path.last().expect("observer sees the starting model");
    path.resize(schedule.max_iters + 1, last);
    Ok(path)
}

pub fn cross_validate_on_grid(
    data: &Dataset,
    grid: &Grid,
    plan: &CvPlan,
    schedule: &Schedule,
) -> Result<CvResult> {
    if plan.folds < 2 {
        return Err(Error::InvalidConfig(
            "cross-validation needs at least 2 folds".into(),
        ));
    }
    if plan.folds > data.n() {
        return Err(Error::InvalidConfig(format!(
            "{} folds for {} subjects",
            plan.folds,
            data.n()
        )));
    }
    if plan.splits_grid.is_empty() {
        return Err(Error::InvalidConfig("empty splits grid".into()));
    }
    let mut splits_grid = plan.splits_grid.clone();
    splits_grid.sort_unstable();
    splits_grid.dedup();
    let schedule = schedule.clone().with_max_iters(plan.iters_max);
    let folds = prepare_folds(data, grid, plan)?;

    let tasks: Vec<(usize, usize)> = splits_grid
        .iter()
        .flat_map(|&s| (0..folds.len()).map(move |f| (s, f)))
        .collect();
    let paths = tasks
        .par_iter()
        .map(|&(s, f)| heldout_path(grid, &folds[f], s, &schedule))
        .collect::<Result<Vec<_>>>()?;

    let k = folds.len() as f64;
    let mut table = Vec::with_capacity(splits_grid.len() * (plan.iters_max + 1));
    for (si, &max_splits) in splits_grid.iter().enumerate() {
        let fold_paths = &paths[si * folds.len()..(si + 1) * folds.len()];
        for m in 0..=plan.iters_max {
            let total: f64 = fold_paths.iter().map(|p| p[m]).sum();
            table.push(CvRow {
                max_splits,
                m,
                mean_heldout_risk: total / k,
            });
        }
    }
    let best = table
        .iter()
        .fold(None::<&CvRow>, |best, row| match best {
            Some(b) if b.mean_heldout_risk <= row.mean_heldout_risk => Some(b),
            _ => Some(row),
        })
        .expect("table is nonempty");
    Ok(CvResult {
        chosen_splits: best.max_splits,
        chosen_iters: best.m,
        best_risk: best.mean_heldout_risk,
        table,
    })
}

/// Builds the grid on the full data, then cross-validates in practical mode.
pub fn cross_validate(data: &Dataset, axes: &[AxisSpec], plan: &CvPlan) -> Result<CvResult> {
    let grid = build_grid(axes, data)?;
    cross_validate_on_grid(data, &grid, plan, &Schedule::practical())
}

/// Cross-validates, then refits on all subjects with the chosen tree size
/// and iteration count.
pub fn fit_with_cv(
    data: &Dataset,
    grid: &Grid,
    plan: &CvPlan,
    schedule: &Schedule,
) -> Result<(CvResult, BoostFit)> {
    let cv = cross_validate_on_grid(data, grid, plan, schedule)?;
    let schedule = schedule.clone().with_max_iters(cv.chosen_iters);
    let fit = crate::boost::fit(data, grid, cv.chosen_splits, &schedule)?;
    Ok((cv, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::funcdata::{Segment, Subject};

    fn toy(n: usize) -> Dataset {
        let subjects = (0..n)
            .map(|i| {
                let end = 0.2 + 0.7 * (i as f64 / n as f64);
                let x = (i % 2 + 1) as f64;
                Subject::new(
                    format!("s{i:03}"),
                    vec![Segment::new(0.0, end, vec![x])],
                    i % 3 != 0,
                )
                .unwrap()
            })
            .collect();
        Dataset::new(subjects, 1, 1.0).unwrap()
    }

    fn axes() -> Vec<AxisSpec> {
        vec![AxisSpec::Uniform(4), AxisSpec::Categorical(vec![1.0, 2.0])]
    }

    #[test]
    fn folds_partition_subjects() {
        let d = toy(23);
        let f = assign_folds(&d, 5, 7);
        let mut counts = [0; 5];
        f.iter().for_each(|&k| counts[k] += 1);
        assert_eq!(counts.iter().sum::<usize>(), 23);
        assert!(counts.iter().all(|&c| c == 4 || c == 5));
    }

    #[test]
    fn leave_one_out_runs_one_fit_per_subject() {
        let d = Dataset::new(
            vec![
                Subject::new("a", vec![Segment::new(0.0, 0.5, vec![1.0])], true).unwrap(),
                Subject::new("b", vec![Segment::new(0.0, 0.7, vec![2.0])], true).unwrap(),
                Subject::new("c", vec![Segment::new(0.0, 0.9, vec![1.0])], true).unwrap(),
            ],
            1,
            1.0,
        )
        .unwrap();
        let plan = CvPlan {
            folds: 3,
            splits_grid: vec![1],
            iters_max: 2,
            seed: 1,
        };
        let grid = build_grid(&axes(), &d).unwrap();
        let folds = prepare_folds(&d, &grid, &plan).unwrap();
        assert_eq!(folds.len(), 3);
        assert!(folds.iter().all(|f| f.test.n == 1 && f.train.n == 2));
        let cv = cross_validate(&d, &axes(), &plan).unwrap();
        assert_eq!(cv.table.len(), 3);
    }

    #[test]
    fn zero_iterations_scores_the_zero_model() {
        let d = toy(20);
        let plan = CvPlan {
            folds: 4,
            splits_grid: vec![2],
            iters_max: 0,
            seed: 3,
        };
        let cv = cross_validate(&d, &axes(), &plan).unwrap();
        assert_eq!(cv.chosen_iters, 0);
        // mean over folds of the held-out average at-risk time
        let assign = assign_folds(&d, 4, 3);
        let mut expected = 0.0;
        for f in 0..4 {
            let idx: Vec<usize> = (0..d.n()).filter(|&i| assign[i] == f).collect();
            expected += d.subset(&idx).mean_at_risk_time();
        }
        assert!((cv.best_risk - expected / 4.0).abs() < 1e-12);
    }

    #[test]
    fn input_order_does_not_matter() {
        let d = toy(30);
        let mut rev = d.clone();
        rev.subjects.reverse();
        let plan = CvPlan {
            folds: 3,
            splits_grid: vec![1, 2],
            iters_max: 15,
            seed: 11,
        };
        assert_eq!(
            cross_validate(&d, &axes(), &plan).unwrap(),
            cross_validate(&rev, &axes(), &plan).unwrap()
        );
    }

    #[test]
    fn fold_without_failures_is_reported() {
        let subjects = (0..4)
            .map(|i| {
                Subject::new(
                    format!("s{i}"),
                    vec![Segment::new(0.0, 0.5, vec![1.0])],
                    i == 0,
                )
                .unwrap()
            })
            .collect();
        let d = Dataset::new(subjects, 1, 1.0).unwrap();
        let plan = CvPlan {
            folds: 4,
            splits_grid: vec![1],
            iters_max: 3,
            seed: 0,
        };
        assert!(matches!(
            cross_validate(&d, &axes(), &plan),
            Err(Error::FoldWithoutFailures { .. })
        ));
    }

    #[test]
    fn ties_go_to_smaller_settings() {
        let d = toy(12);
        let plan = CvPlan {
            folds: 3,
            splits_grid: vec![3, 1],
            iters_max: 0,
            seed: 0,
        };
        // with m = 0 every tree size scores the zero model identically
        let cv = cross_validate(&d, &axes(), &plan).unwrap();
        assert_eq!((cv.chosen_splits, cv.chosen_iters), (1, 0));
    }

    #[test]
    fn csv_table_format() {
        let r = CvResult {
            table: vec![CvRow {
                max_splits: 2,
                m: 0,
                mean_heldout_risk: 0.5,
            }],
            chosen_splits: 2,
            chosen_iters: 0,
            best_risk: 0.5,
        };
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "max_splits,m,mean_heldout_risk\n2,0,0.5\n"
        );
    }
}
