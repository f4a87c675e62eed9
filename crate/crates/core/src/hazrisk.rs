//! Likelihood risk of a histogram log-hazard, its gradient, and the
//! empirical norms.
//!
//! With the histogram basis every quantity is a per-cell sum over cells of
//! positive empirical mass. Cells with zero mass do not enter the risk; their
//! coefficients stay at 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcdata::Dataset;
use crate::partition::{CellStats, Grid};

/// A real function that is constant on every grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFunction {
    pub values: Vec<f64>,
}

impl CellFunction {
    pub fn zeros(cells: usize) -> Self {
        CellFunction {
            values: vec![0.0; cells],
        }
    }

    pub fn constant(cells: usize, v: f64) -> Self {
        CellFunction {
            values: vec![v; cells],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> CellFunction {
        CellFunction {
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

/// F(t, x) = Σⱼ cⱼ I_{Bⱼ}(t, x).
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLogHazard {
    pub grid: Grid,
    pub coeffs: Vec<f64>,
    /// Cells with zero training mass; their coefficient is frozen at 0.
    pub empty_cells: Vec<usize>,
}

impl PiecewiseLogHazard {
    /// The zero log-hazard (hazard 1 everywhere) over `grid`, with empty
    /// cells taken from `stats`.
    pub fn zero(grid: Grid, stats: &CellStats) -> Self {
        let cells = grid.cell_count();
        PiecewiseLogHazard {
            grid,
            coeffs: vec![0.0; cells],
            empty_cells: stats.empty_cells(),
        }
    }

    pub fn is_extrapolated(&self, j: usize) -> bool {
        self.empty_cells.binary_search(&j).is_ok()
    }

    pub fn sup_norm(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn risk(&self, stats: &CellStats) -> f64 {
        risk(&self.coeffs, stats)
    }
}

/// Cell-wise maximum likelihood hazard Dⱼ / (n μ̂ₙ(Bⱼ)); 0 on empty cells.
pub fn mle_hazard(stats: &CellStats) -> CellFunction {
    let values = (0..stats.len())
        .map(|j| {
            if stats.occupied(j) {
                stats.failure_rate(j) / stats.mass[j]
            } else {
                0.0
            }
        })
        .collect();
    CellFunction { values }
}

/// R̂ₙ(F) = Σ_{μ̂ⱼ>0} (exp(cⱼ) μ̂ⱼ − cⱼ Dⱼ / n), summed in cell order.
pub fn risk(coeffs: &[f64], stats: &CellStats) -> f64 {
    let mut total = 0.0;
    for j in stats.occupied_cells() {
        let c = coeffs[j];
        total += c.exp() * stats.mass[j] - c * stats.failure_rate(j);
    }
    total
}

/// Risk of `F − s·direction`, without materializing the moved coefficients.
pub fn risk_along(coeffs: &[f64], direction: &[f64], s: f64, stats: &CellStats) -> f64 {
    let mut total = 0.0;
    for j in stats.occupied_cells() {
        let c = coeffs[j] - s * direction[j];
        total += c.exp() * stats.mass[j] - c * stats.failure_rate(j);
    }
    total
}

/// ĝ_F = exp(F) − λ̂ on occupied cells, 0 elsewhere.
pub fn gradient(coeffs: &[f64], stats: &CellStats) -> CellFunction {
    let values = (0..stats.len())
        .map(|j| {
            if stats.occupied(j) {
                coeffs[j].exp() - stats.failure_rate(j) / stats.mass[j]
            } else {
                0.0
            }
        })
        .collect();
    CellFunction { values }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l1: f64,
    pub l2: f64,
    pub sup: f64,
}

/// μ̂ₙ-weighted L1 and L2 norms plus the sup norm over all cells.
pub fn norms(f: &CellFunction, stats: &CellStats) -> Norms {
    let mut l1 = 0.0;
    let mut sq = 0.0;
    for j in stats.occupied_cells() {
        let v = f.values[j];
        l1 += v.abs() * stats.mass[j];
        sq += v * v * stats.mass[j];
    }
    let sup = f.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    Norms {
        l1,
        l2: sq.sqrt(),
        sup,
    }
}

/// ⟨f, g⟩ under μ̂ₙ.
pub fn inner(f: &CellFunction, g: &CellFunction, stats: &CellStats) -> f64 {
    stats
        .occupied_cells()
        .map(|j| f.values[j] * g.values[j] * stats.mass[j])
        .sum()
}

/// ⟨g / ‖g‖, direction⟩: the ε achieved by a unit-norm direction.
pub fn alignment(
    gradient: &CellFunction,
    direction: &CellFunction,
    stats: &CellStats,
) -> Result<f64> {
    let g_norm = norms(gradient, stats).l2;
    if g_norm <= 0.0 {
        return Err(Error::ZeroGradient);
    }
    Ok(inner(gradient, direction, stats) / g_norm)
}

/// A log-hazard that can be evaluated pointwise and integrated along a
/// constant-covariate stretch of time.
pub trait LogHazard {
    fn log_hazard(&self, t: f64, x: &[f64]) -> Result<f64>;

    /// ∫ₐᵇ exp F(t, x) dt with x held fixed.
    fn integrated_hazard(&self, a: f64, b: f64, x: &[f64]) -> Result<f64>;
}

impl LogHazard for PiecewiseLogHazard {
    fn log_hazard(&self, t: f64, x: &[f64]) -> Result<f64> {
        Ok(self.coeffs[self.grid.locate(t, x)?])
    }

    fn integrated_hazard(&self, a: f64, b: f64, x: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        self.grid
            .for_each_overlap(a, b, x, |j, len| total += self.coeffs[j].exp() * len)?;
        Ok(total)
    }
}

/// The negative log-likelihood evaluated directly on subjects:
/// (1/n) Σᵢ ∫ Yᵢ e^F dt − (1/n) Σᵢ Δᵢ F(Tᵢ, Xᵢ(Tᵢ)).
pub fn risk_on_subjects(model: &impl LogHazard, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let mut exposure = 0.0;
    let mut events = 0.0;
    for s in &data.subjects {
        for seg in s.segments() {
            exposure += model.integrated_hazard(seg.t_start, seg.t_end, &seg.x)?;
        }
        if let Some((t, x)) = s.failure_point() {
            events += model.log_hazard(t, x)?;
        }
    }
    let n = data.n() as f64;
    Ok(exposure / n - events / n)
}
