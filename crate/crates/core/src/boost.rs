//! Functional gradient descent on the likelihood risk.
//!
//! Each iteration fits a shallow tree to the negative gradient, normalizes
//! it to a unit direction, and steps along it. The step is either the
//! shrunken harmonic schedule `ν/(m+1)` with a sup-norm budget Ψ, or a line
//! search over `(0, ν/(m+1)]`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcdata::Dataset;
use crate::hazrisk::{
    alignment, gradient, norms, risk, risk_along, CellFunction, PiecewiseLogHazard,
};
use crate::partition::{accumulate, CellStats, Grid};
use crate::treelearn::{fit_tree, normalize};

/// Gradient norms below this count as an exactly zero gradient.
pub const GRADIENT_TOLERANCE: f64 = 1e-10;

pub const DEFAULT_MAX_ITERS: usize = 1000;
pub const DEFAULT_LINE_SEARCH_TOL: f64 = 1e-6;

/// Principal branch of the Lambert W function: the real `w` with
/// `w·exp(w) = y`, for `y >= 0`. Returns NaN for negative or NaN input.
pub fn lambert_w(y: f64) -> f64 {
    if y.is_nan() || y < 0.0 {
        return f64::NAN;
    }
    if y == 0.0 {
        return 0.0;
    }
    if y.is_infinite() {
        return f64::INFINITY;
    }
    let mut w = if y <= std::f64::consts::E {
        // Winitzki's approximation
        let l = y.ln_1p();
        l * (1.0 - (1.0 + l).ln() / (2.0 + l))
    } else {
        let l1 = y.ln();
        let l2 = l1.ln();
        l1 - l2 + l2 / l1
    };
    for _ in 0..64 {
        let ew = w.exp();
        let f = w * ew - y;
        let wp1 = w + 1.0;
        // Halley step
        let delta = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
        w -= delta;
        if delta.abs() <= 1e-16 * w.abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Steps `ν/(m+1)` with the sup-norm early stop at Ψ.
    Theory,
    /// Line search within `(0, ν/(m+1)]`, ν = 1.
    Practical,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Theory => write!(f, "theory"),
            Mode::Practical => write!(f, "practical"),
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theory" => Ok(Mode::Theory),
            "practical" => Ok(Mode::Practical),
            other => Err(Error::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub mode: Mode,
    /// Sup-norm budget Ψₙ; only used in theory mode.
    pub psi: Option<f64>,
    pub nu: f64,
    pub max_iters: usize,
    pub line_search_tol: f64,
}

impl Schedule {
    pub fn practical() -> Self {
        Schedule {
            mode: Mode::Practical,
            psi: None,
            nu: 1.0,
            max_iters: DEFAULT_MAX_ITERS,
            line_search_tol: DEFAULT_LINE_SEARCH_TOL,
        }
    }

    /// Ψₙ = W(n^{1/4}) and ν chosen so that ν²·exp(Ψₙ) = log n / (64 n^{1/4}).
    pub fn theory(n: usize) -> Self {
        let n = n.max(1) as f64;
        let psi = lambert_w(n.powf(0.25));
        // exp(Ψ) = n^{1/4} / Ψ
        let nu = (psi * n.ln() / (64.0 * n.sqrt())).sqrt();
        Schedule {
            mode: Mode::Theory,
            psi: Some(psi),
            nu,
            max_iters: DEFAULT_MAX_ITERS,
            line_search_tol: DEFAULT_LINE_SEARCH_TOL,
        }
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }
}

pub fn make_schedule(n: usize, mode: Mode) -> Schedule {
    match mode {
        Mode::Theory => Schedule::theory(n),
        Mode::Practical => Schedule::practical(),
    }
}

/// Step `s ∈ (0, ν/(m+1)]` minimizing the risk of `F − s·direction`, by
/// ternary search. The risk is strictly convex along a ray, so the search
/// needs no bracketing.
pub fn line_search(
    coeffs: &[f64],
    direction: &CellFunction,
    m: usize,
    stats: &CellStats,
    nu: f64,
    tol: f64,
) -> f64 {
    let cap = nu / (m as f64 + 1.0);
    let phi = |s: f64| risk_along(coeffs, &direction.values, s, stats);
    let (mut lo, mut hi) = (0.0, cap);
    let width = tol * cap;
    while hi - lo >= width {
        let third = (hi - lo) / 3.0;
        let (m1, m2) = (lo + third, hi - third);
        if phi(m1) < phi(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let mid = 0.5 * (lo + hi);
    if phi(cap) <= phi(mid) {
        cap
    } else {
        mid
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The gradient vanished.
    ZeroGradient,
    /// The tree direction vanished on the occupied cells.
    ZeroDirection,
    /// The next iterate would have reached the sup-norm budget.
    SupNormBudget,
    /// The line-searched step no longer lowered the risk.
    NoImprovement,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub step: f64,
    pub epsilon: f64,
    /// Training risk after the update.
    pub risk: f64,
    /// μ̂ₙ-L2 norm of the gradient the step was computed from.
    pub gradient_norm: f64,
    pub sup_norm: f64,
    pub splits: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoostFit {
    pub model: PiecewiseLogHazard,
    pub schedule: Schedule,
    pub max_splits: usize,
    pub n: usize,
    pub initial_risk: f64,
    pub log: Vec<IterationRecord>,
    /// Raw per-axis split improvements summed over all trees.
    pub split_gain: BTreeMap<usize, f64>,
    pub stop: StopReason,
}

impl BoostFit {
    pub fn iterations(&self) -> usize {
        self.log.len()
    }

    pub fn final_risk(&self) -> f64 {
        self.log.last().map_or(self.initial_risk, |r| r.risk)
    }

    pub fn sup_norm_history(&self) -> Vec<f64> {
        self.log.iter().map(|r| r.sup_norm).collect()
    }

    pub fn risk_history(&self) -> Vec<f64> {
        std::iter::once(self.initial_risk)
            .chain(self.log.iter().map(|r| r.risk))
            .collect()
    }
}

/// Boosts on precomputed cell statistics. `observer(m, coeffs)` sees the
/// starting model (`m = 0`) and every accepted iterate.
pub fn fit_stats(
    grid: &Grid,
    stats: &CellStats,
    max_splits: usize,
    schedule: &Schedule,
    mut observer: impl FnMut(usize, &[f64]),
) -> Result<BoostFit> {
    if stats.occupied_count() == 0 {
        return Err(Error::NoOccupiedCells);
    }
    if stats.total_failures() == 0 {
        return Err(Error::NoFailures);
    }
    if stats.len() != grid.cell_count() {
        return Err(Error::GridMismatch(
            "statistics do not match the grid".into(),
        ));
    }
    let mut model = PiecewiseLogHazard::zero(grid.clone(), stats);
    let initial_risk = risk(&model.coeffs, stats);
    let mut current = initial_risk;
    let mut log = Vec::new();
    let mut split_gain = BTreeMap::new();
    let mut stop = StopReason::MaxIterations;
    observer(0, &model.coeffs);

    for m in 0..schedule.max_iters {
        let g = gradient(&model.coeffs, stats);
        let g_norm = norms(&g, stats).l2;
        if g_norm < GRADIENT_TOLERANCE {
            stop = StopReason::ZeroGradient;
            break;
        }
        let tree = fit_tree(&g.scaled(-1.0), stats, grid, max_splits)?;
        let descent = match normalize(&tree, grid, stats) {
            Ok(d) => d,
            Err(Error::ZeroDirection) => {
                stop = StopReason::ZeroDirection;
                break;
            }
            Err(e) => return Err(e),
        };
        let eps_gradient = descent.scaled(-1.0);
        let epsilon = alignment(&g, &eps_gradient, stats)?;
        let step = match schedule.mode {
            Mode::Practical => line_search(
                &model.coeffs,
                &eps_gradient,
                m,
                stats,
                schedule.nu,
                schedule.line_search_tol,
            ),
            Mode::Theory => schedule.nu / (m as f64 + 1.0),
        };
        let candidate: Vec<f64> = model
            .coeffs
            .iter()
            .zip(&eps_gradient.values)
            .map(|(c, d)| c - step * d)
            .collect();
        let sup_norm = candidate.iter().fold(0.0_f64, |a, c| a.max(c.abs()));
        if let (Mode::Theory, Some(psi)) = (schedule.mode, schedule.psi) {
            if sup_norm >= psi {
                stop = StopReason::SupNormBudget;
                break;
            }
        }
        let next = risk(&candidate, stats);
        if schedule.mode == Mode::Practical
            && next.partial_cmp(&current) != Some(std::cmp::Ordering::Less)
        {
            stop = StopReason::NoImprovement;
            break;
        }
        model.coeffs = candidate;
        current = next;
        for (axis, gain) in tree.split_improvements() {
            *split_gain.entry(axis).or_insert(0.0) += gain;
        }
        log.push(IterationRecord {
            step,
            epsilon,
            risk: next,
            gradient_norm: g_norm,
            sup_norm,
            splits: tree.splits_used,
        });
        observer(m + 1, &model.coeffs);
    }

    Ok(BoostFit {
        model,
        schedule: schedule.clone(),
        max_splits,
        n: stats.n,
        initial_risk,
        log,
        split_gain,
        stop,
    })
}

/// Accumulates statistics for `data` on `grid`, then boosts.
pub fn fit(
    data: &Dataset,
    grid: &Grid,
    max_splits: usize,
    schedule: &Schedule,
) -> Result<BoostFit> {
    if data.is_empty() {
        return Err(Error::InvalidDataset(
            "cannot fit on an empty dataset".into(),
        ));
    }
    let stats = accumulate(grid, data)?;
    fit_stats(grid, &stats, max_splits, schedule, |_, _| {})
}

/// Per-axis split improvement over all iterations, scaled so the largest is
/// 1. Every axis of the grid appears; all zero when no split was made.
pub fn importance(fit: &BoostFit) -> BTreeMap<usize, f64> {
    let max = fit.split_gain.values().fold(0.0_f64, |m, &v| m.max(v));
    (0..fit.model.grid.dims())
        .map(|axis| {
            let raw = fit.split_gain.get(&axis).copied().unwrap_or(0.0);
            (axis, if max > 0.0 { raw / max } else { 0.0 })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub hazard: f64,
    /// The cell had no at-risk mass in training.
    pub extrapolated: bool,
}

/// exp(F̂) at `(t, x)` in normalized time.
pub fn predict(model: &PiecewiseLogHazard, t: f64, x: &[f64]) -> Result<Prediction> {
    let j = model.grid.locate(t, x)?;
    Ok(Prediction {
        hazard: model.coeffs[j].exp(),
        extrapolated: model.is_extrapolated(j),
    })
}

/// On-disk model: grid, fitted coefficients, and the iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub grid: Grid,
    /// `[cell_index, c_j]` for every cell with training mass.
    pub coeffs: Vec<(usize, f64)>,
    pub n: usize,
    pub iterations: usize,
    pub importance: BTreeMap<usize, f64>,
    pub mode: Mode,
    /// Cells with no training mass; hazard there is 1 and extrapolated.
    pub flags: Vec<usize>,
    pub horizon: f64,
    pub covariate_names: Vec<String>,
    pub max_splits: usize,
    pub schedule: Schedule,
    pub initial_risk: f64,
    pub stop: StopReason,
    pub log: Vec<IterationRecord>,
}

impl ModelFile {
    pub fn from_fit(fit: &BoostFit, horizon: f64, covariate_names: Vec<String>) -> Self {
        let m = &fit.model;
        let coeffs = (0..m.coeffs.len())
            .filter(|j| !m.is_extrapolated(*j))
            .map(|j| (j, m.coeffs[j]))
            .collect();
        ModelFile {
            grid: m.grid.clone(),
            coeffs,
            n: fit.n,
            iterations: fit.iterations(),
            importance: importance(fit),
            mode: fit.schedule.mode,
            flags: m.empty_cells.clone(),
            horizon,
            covariate_names,
            max_splits: fit.max_splits,
            schedule: fit.schedule.clone(),
            initial_risk: fit.initial_risk,
            stop: fit.stop,
            log: fit.log.clone(),
        }
    }

    pub fn model(&self) -> Result<PiecewiseLogHazard> {
        let cells = self.grid.cell_count();
        let mut coeffs = vec![0.0; cells];
        for &(j, c) in &self.coeffs {
            if j >= cells || !c.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "bad coefficient entry for cell {j}"
                )));
            }
            coeffs[j] = c;
        }
        let mut empty_cells = self.flags.clone();
        empty_cells.sort_unstable();
        Ok(PiecewiseLogHazard {
            grid: self.grid.clone(),
            coeffs,
            empty_cells,
        })
    }

    pub fn final_risk(&self) -> f64 {
        self.log.last().map_or(self.initial_risk, |r| r.risk)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::Axis;

    /// Bisection on w·e^w − y over [0, max(1, ln y + 1)].
    fn lambert_bisect(y: f64) -> f64 {
        let (mut lo, mut hi) = (0.0_f64, y.ln().max(0.0) + 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid.exp() < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn lambert_values() {
        let e = std::f64::consts::E;
        assert!((lambert_w(e) - 1.0).abs() < 1e-15);
        assert_eq!(lambert_w(0.0), 0.0);
        assert!(lambert_w(1e-300) > 0.0 && lambert_w(1e-300) < 1e-299);
        let y = 55.0_f64.powf(0.25);
        let oracle = lambert_bisect(y);
        // ≈ 1.0009 (a first-order expansion about W(e) = 1 gives 1 + 0.00503/(2e))
        assert!((oracle - 1.0009).abs() < 1e-4);
        assert!((lambert_w(y) - oracle).abs() < 1e-13);
        assert!((lambert_w(1.0) - 0.567_143_290_409_783_8).abs() < 1e-15);
        assert!(lambert_w(-1.0).is_nan());
    }

    #[test]
    fn schedules() {
        let s = make_schedule(55, Mode::Theory);
        let psi = s.psi.unwrap();
        assert!((psi - lambert_bisect(55.0_f64.powf(0.25))).abs() < 1e-12);
        let n = 55.0_f64;
        let lhs = s.nu * s.nu * psi.exp();
        assert!((lhs - n.ln() / (64.0 * n.powf(0.25))).abs() < 1e-10);

        let p = make_schedule(55, Mode::Practical);
        assert_eq!(p.nu, 1.0);
        assert_eq!(p.psi, None);
    }

    fn one_cell(mass: f64, failures: u64, n: usize) -> (Grid, CellStats) {
        let g = Grid::new(vec![Axis::Interval {
            edges: vec![0.0, 1.0],
            open_ends: false,
        }])
        .unwrap();
        (
            g,
            CellStats {
                n,
                mass: vec![mass],
                failures: vec![failures],
            },
        )
    }

    #[test]
    fn line_search_hits_calculus_minimum() {
        // mass 1, D/n ≈ e: risk(0 + s) = e^s − e·s is minimized at s = 1,
        // which is also the cap for m = 0
        let s = CellStats {
            n: 1_000_000_000,
            mass: vec![1.0],
            failures: vec![2_718_281_828],
        };
        let dir = CellFunction { values: vec![-1.0] };
        assert_eq!(line_search(&[0.0], &dir, 0, &s, 1.0, 1e-6), 1.0);

        // interior minimum at ln(D/n) = ln 2 for a cap of 1
        let s = CellStats {
            failures: vec![2],
            n: 1,
            mass: vec![1.0],
        };
        let step = line_search(&[0.0], &dir, 0, &s, 1.0, 1e-9);
        assert!((step - 2.0_f64.ln()).abs() < 1e-6);
        let phi = |x: f64| risk_along(&[0.0], &dir.values, x, &s);
        assert!(phi(step) <= phi(0.0) && phi(step) <= phi(1.0));

        // flat direction returns the cap
        let flat = CellFunction { values: vec![0.0] };
        assert_eq!(line_search(&[0.0], &flat, 3, &s, 1.0, 1e-6), 0.25);
    }

    #[test]
    fn single_cell_converges_to_log_four() {
        let (g, s) = one_cell(0.25, 1, 1);
        let fit = fit_stats(
            &g,
            &s,
            3,
            &Schedule::practical().with_max_iters(200),
            |_, _| {},
        )
        .unwrap();
        assert!(
            (fit.model.coeffs[0] - 4.0_f64.ln()).abs() < 1e-6,
            "{:?}",
            fit.model.coeffs
        );
        assert!((fit.final_risk() - (1.0 - 4.0_f64.ln())).abs() < 1e-10);
        let p = predict(&fit.model, 0.1, &[]).unwrap();
        assert!((p.hazard - 4.0).abs() < 1e-5);
        assert!(!p.extrapolated);
        for r in &fit.log {
            assert!((r.epsilon - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_at_start_means_no_iterations() {
        // D/(n·mass) = 1 so c = 0 is already the MLE
        let (g, s) = one_cell(0.5, 1, 2);
        let fit = fit_stats(&g, &s, 2, &Schedule::practical(), |_, _| {}).unwrap();
        assert_eq!(fit.iterations(), 0);
        assert_eq!(fit.stop, StopReason::ZeroGradient);
        assert_eq!(fit.model.coeffs, vec![0.0]);
    }

    #[test]
    fn theory_mode_respects_budget() {
        let (g, s) = one_cell(0.25, 1, 1);
        let schedule = Schedule {
            mode: Mode::Theory,
            psi: Some(0.3),
            nu: 1.0,
            max_iters: 1000,
            line_search_tol: 1e-6,
        };
        let fit = fit_stats(&g, &s, 1, &schedule, |_, _| {}).unwrap();
        assert_eq!(fit.stop, StopReason::SupNormBudget);
        assert!(fit.sup_norm_history().iter().all(|&v| v < 0.3));
    }

    #[test]
    fn no_failures_is_an_error() {
        let (g, s) = one_cell(0.25, 0, 1);
        assert!(matches!(
            fit_stats(&g, &s, 1, &Schedule::practical(), |_, _| {}),
            Err(Error::NoFailures)
        ));
    }

    #[test]
    fn importance_scaling() {
        let (g, s) = one_cell(0.25, 1, 1);
        let mut fit = fit_stats(
            &g,
            &s,
            1,
            &Schedule::practical().with_max_iters(0),
            |_, _| {},
        )
        .unwrap();
        assert_eq!(importance(&fit), BTreeMap::from([(0, 0.0)]));
        fit.model.grid = Grid::new(vec![
            Axis::Interval {
                edges: vec![0.0, 1.0],
                open_ends: false,
            },
            Axis::Categorical {
                levels: vec![1.0, 2.0],
            },
        ])
        .unwrap();
        fit.split_gain = BTreeMap::from([(0, 4.0), (1, 2.0)]);
        assert_eq!(importance(&fit), BTreeMap::from([(0, 1.0), (1, 0.5)]));
        fit.split_gain = BTreeMap::from([(0, 3.0)]);
        assert_eq!(importance(&fit), BTreeMap::from([(0, 1.0), (1, 0.0)]));
    }

    #[test]
    fn untrained_cells_predict_one() {
        let g = Grid::new(vec![Axis::Interval {
            edges: vec![0.0, 0.5, 1.0],
            open_ends: false,
        }])
        .unwrap();
        let s = CellStats {
            n: 1,
            mass: vec![0.5, 0.0],
            failures: vec![1, 0],
        };
        let fit = fit_stats(&g, &s, 1, &Schedule::practical(), |_, _| {}).unwrap();
        let p = predict(&fit.model, 0.75, &[]).unwrap();
        assert_eq!(p.hazard, 1.0);
        assert!(p.extrapolated);

        let file = ModelFile::from_fit(&fit, 1.0, vec![]);
        let back = ModelFile::from_json(&file.to_json().unwrap()).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.model().unwrap(), fit.model);
    }
}
