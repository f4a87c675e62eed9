//! Discrete-event simulation of a multi-server queue whose service
//! hazard depends on elapsed service time, the number of customers in
//! service and the customer's type.
//!
//! Arrivals follow a daily piecewise-constant Poisson profile. Up to
//! `capacity` customers are served at once; the rest wait first come, first
//! served. Completions are drawn by thinning against `lambda_max`.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::funcdata::{Dataset, Segment, Subject};
use crate::hazrisk::CellFunction;
use crate::partition::Grid;

const HOURS_PER_DAY: f64 = 24.0;

/// Arrival rate (per hour) from `start_hour` until the next block or midnight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateBlock {
    pub start_hour: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub arrival_rates: Vec<RateBlock>,
    pub capacity: usize,
    pub type_probs: Vec<f64>,
    pub completions_target: usize,
    /// Observation window in hours; also the time unit of the output.
    pub censor_horizon: f64,
    pub seed: u64,
    pub lambda_max: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            arrival_rates: vec![
                RateBlock {
                    start_hour: 0.0,
                    rate: 0.5,
                },
                RateBlock {
                    start_hour: 12.0,
                    rate: 20.0,
                },
            ],
            capacity: 3,
            type_probs: vec![0.5, 0.5],
            completions_target: 5000,
            censor_horizon: 1.0,
            seed: 0,
            lambda_max: 2.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.arrival_rates.is_empty() {
            return bad("arrival profile is empty");
        }
        if self.arrival_rates[0].start_hour != 0.0 {
            return bad("arrival profile must start at hour 0");
        }
        for w in self.arrival_rates.windows(2) {
            if w[1].start_hour <= w[0].start_hour {
                return bad("arrival blocks must have increasing start hours");
            }
        }
        if self
            .arrival_rates
            .last()
            .map(|b| b.start_hour >= HOURS_PER_DAY)
            .unwrap_or(false)
        {
            return bad("arrival blocks must start before hour 24");
        }
        if self
            .arrival_rates
            .iter()
            .any(|b| !(b.rate.is_finite() && b.rate >= 0.0))
        {
            return bad("arrival rates must be finite and nonnegative");
        }
        if self.arrival_rates.iter().all(|b| b.rate == 0.0) {
            return bad("all arrival rates are zero");
        }
        if self.capacity == 0 {
            return bad("capacity must be at least 1");
        }
        if self.type_probs.is_empty() || self.type_probs.iter().any(|&p| p.is_nan() || p < 0.0) {
            return bad("type probabilities must be nonnegative");
        }
        if (self.type_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("type probabilities must sum to 1");
        }
        if !(self.censor_horizon.is_finite() && self.censor_horizon > 0.0) {
            return bad("censor horizon must be positive");
        }
        if !(self.lambda_max.is_finite() && self.lambda_max > 0.0) {
            return bad("lambda_max must be positive");
        }
        Ok(())
    }

    fn block_at(&self, hour_of_day: f64) -> usize {
        self.arrival_rates
            .partition_point(|b| b.start_hour <= hour_of_day)
            - 1
    }
}

/// Service hazard as a function of elapsed service time (hours) and the
/// covariates `[in_service, type]`.
pub trait ServiceHazard: Sync {
    fn rate(&self, t: f64, x: &[f64]) -> f64;
}

/// The two-type hazard with a linear trend in elapsed time. It is held at
/// its one-hour value for longer services.
#[derive(Debug, Clone, Copy, Default)]
pub struct QueueHazard;

impl QueueHazard {
    pub const SUP: f64 = 41.0 / 24.0;
    pub const INF: f64 = 5.0 / 12.0;
}

impl ServiceHazard for QueueHazard {
    fn rate(&self, t: f64, x: &[f64]) -> f64 {
        let t = t.clamp(0.0, 1.0);
        let load = x[0];
        if x[1] <= 1.0 {
            1.5 - 0.5 / load - 0.75 * (t - 0.5)
        } else {
            0.5 + 0.5 / load + 0.5 * (t - 0.5)
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantHazard(pub f64);

impl ServiceHazard for ConstantHazard {
    fn rate(&self, _t: f64, _x: &[f64]) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub completions: usize,
    pub censored_fraction: f64,
    pub sim_days: f64,
    /// Mean true service duration in hours.
    pub mean_duration: f64,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub data: Dataset,
    pub summary: SimSummary,
    /// True service durations in hours, in subject order.
    pub durations: Vec<f64>,
}

struct Active {
    kind: usize,
    start: f64,
    /// (absolute time, load) at each change of load since service start.
    changes: Vec<(f64, usize)>,
    candidate: f64,
}

struct Sim<'a, H: ServiceHazard> {
    cfg: &'a SimConfig,
    hazard: &'a H,
    rng: ChaCha8Rng,
    dominating: Exp<f64>,
    now: f64,
    waiting: VecDeque<usize>,
    active: Vec<Active>,
}

impl<H: ServiceHazard> Sim<'_, H> {
    fn next_arrival(&mut self, from: f64) -> f64 {
        let mut t = from;
        loop {
            let day = (t / HOURS_PER_DAY).floor();
            let hour = t - day * HOURS_PER_DAY;
            let b = self.cfg.block_at(hour);
            let block_end = self
                .cfg
                .arrival_rates
                .get(b + 1)
                .map_or(HOURS_PER_DAY, |n| n.start_hour);
            let end = day * HOURS_PER_DAY + block_end;
            let rate = self.cfg.arrival_rates[b].rate;
            if rate > 0.0 {
                let gap: f64 = Exp::new(rate).expect("positive rate").sample(&mut self.rng);
                if t + gap < end {
                    return t + gap;
                }
            }
            t = end;
        }
    }

    fn draw_type(&mut self) -> usize {
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        for (k, p) in self.cfg.type_probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k + 1;
            }
        }
        self.cfg.type_probs.len()
    }

    /// Records a load change for everyone in service and redraws their
    /// thinning candidates.
    fn load_changed(&mut self) {
        let load = self.active.len();
        let now = self.now;
        for a in self.active.iter_mut() {
            if a.changes.last().map(|c| c.1) != Some(load) {
                a.changes.push((now, load));
            }
        }
        for i in 0..self.active.len() {
            self.active[i].candidate = now + self.dominating.sample(&mut self.rng);
        }
    }

    fn admit(&mut self, kind: usize) {
        let now = self.now;
        self.active.push(Active {
            kind,
            start: now,
            changes: Vec::new(),
            candidate: f64::INFINITY,
        });
    }
}

fn observed_subject(id: String, a: &Active, end: f64, horizon: f64) -> Result<Subject> {
    let duration = end - a.start;
    let event = duration <= horizon;
    let stop = if event { duration / horizon } else { 1.0 };
    let mut segments: Vec<Segment> = Vec::with_capacity(a.changes.len());
    for (k, &(t, load)) in a.changes.iter().enumerate() {
        let lo = (t - a.start) / horizon;
        if lo >= stop {
            break;
        }
        let hi = a
            .changes
            .get(k + 1)
            .map_or(stop, |n| ((n.0 - a.start) / horizon).min(stop));
        if hi > lo {
            segments.push(Segment::new(lo, hi, vec![load as f64, a.kind as f64]));
        }
    }
    Subject::new(id, segments, event)
}

/// Runs the queue until `completions_target` customers have finished
/// service. Observation of each customer stops at `censor_horizon`; the
/// physical service continues to completion.
pub fn simulate<H: ServiceHazard>(config: &SimConfig, hazard: &H) -> Result<SimOutput> {
    config.validate()?;
    let mut sim = Sim {
        cfg: config,
        hazard,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        dominating: Exp::new(config.lambda_max).expect("validated"),
        now: 0.0,
        waiting: VecDeque::new(),
        active: Vec::new(),
    };
    let width = config.completions_target.max(1).to_string().len();
    let mut subjects = Vec::with_capacity(config.completions_target);
    let mut durations = Vec::with_capacity(config.completions_target);
    let mut next_arrival = sim.next_arrival(0.0);

    while subjects.len() < config.completions_target {
        let (who, t_candidate) = sim
            .active
            .iter()
            .enumerate()
            .map(|(i, a)| (i, a.candidate))
            .fold((usize::MAX, f64::INFINITY), |best, c| {
                if c.1 < best.1 {
                    c
                } else {
                    best
                }
            });

        if next_arrival <= t_candidate {
            sim.now = next_arrival;
            let kind = sim.draw_type();
            if sim.active.len() < config.capacity {
                sim.admit(kind);
                sim.load_changed();
            } else {
                sim.waiting.push_back(kind);
            }
            next_arrival = sim.next_arrival(sim.now);
            continue;
        }

        sim.now = t_candidate;
        let a = &sim.active[who];
        let x = [sim.active.len() as f64, a.kind as f64];
        let rate = sim.hazard.rate(sim.now - a.start, &x);
        if rate.is_nan() || rate > config.lambda_max {
            return Err(Error::HazardExceedsBound {
                value: rate,
                bound: config.lambda_max,
            });
        }
        let u: f64 = sim.rng.gen();
        if u * config.lambda_max >= rate {
            let d = sim.dominating.sample(&mut sim.rng);
            sim.active[who].candidate = sim.now + d;
            continue;
        }

        let done = sim.active.remove(who);
        let id = format!("c{:0width$}", subjects.len() + 1);
        subjects.push(observed_subject(id, &done, sim.now, config.censor_horizon)?);
        durations.push(sim.now - done.start);
        if let Some(kind) = sim.waiting.pop_front() {
            sim.admit(kind);
        }
        sim.load_changed();
    }

    let censored = subjects.iter().filter(|s| !s.event()).count();
    let completions = subjects.len();
    let summary = SimSummary {
        completions,
        censored_fraction: if completions == 0 {
            0.0
        } else {
            censored as f64 / completions as f64
        },
        sim_days: sim.now / HOURS_PER_DAY,
        mean_duration: if completions == 0 {
            0.0
        } else {
            durations.iter().sum::<f64>() / completions as f64
        },
    };
    let data = Dataset::with_names(
        subjects,
        vec!["x1".into(), "x2".into()],
        config.censor_horizon,
    )?;
    Ok(SimOutput {
        data,
        summary,
        durations,
    })
}

/// Independent replications with consecutive seeds, returned in seed order.
pub fn simulate_replications<H: ServiceHazard>(
    config: &SimConfig,
    hazard: &H,
    count: usize,
) -> Result<Vec<SimOutput>> {
    (0..count as u64)
        .into_par_iter()
        .map(|r| {
            let cfg = SimConfig {
                seed: config.seed.wrapping_add(r),
                ..config.clone()
            };
            simulate(&cfg, hazard)
        })
        .collect()
}

/// The hazard at each cell center; time is rescaled from the unit window to
/// hours by `horizon`.
pub fn true_hazard_table<H: ServiceHazard>(hazard: &H, grid: &Grid, horizon: f64) -> CellFunction {
    let values = (0..grid.cell_count())
        .map(|j| {
            let c = grid.center(j);
            hazard.rate(c[0] * horizon, &c[1..])
        })
        .collect();
    CellFunction { values }
}
