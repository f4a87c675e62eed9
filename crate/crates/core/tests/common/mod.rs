#![allow(dead_code)]

use hazboost::funcdata::{Dataset, Segment, Subject};
use hazboost::partition::{accumulate, build_grid, AxisSpec, CellStats, Grid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random subjects on the unit window with `p` covariates drawn from
/// {0, 0.25, ..., 1} (p ≥ 1) and up to four segments each.
pub fn random_dataset(seed: u64, n: usize, p: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subjects = (0..n)
        .map(|i| {
            let end: f64 = rng.gen_range(0.05..=1.0);
            let pieces = rng.gen_range(1..=4);
            let mut cuts: Vec<f64> = (1..pieces).map(|_| rng.gen_range(0.0..end)).collect();
            cuts.push(0.0);
            cuts.push(end);
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let segments = cuts
                .windows(2)
                .filter(|w| w[1] > w[0])
                .map(|w| {
                    let x = (0..p).map(|_| rng.gen_range(0..=4) as f64 / 4.0).collect();
                    Segment::new(w[0], w[1], x)
                })
                .collect();
            Subject::new(format!("s{i:04}"), segments, rng.gen_bool(0.6)).unwrap()
        })
        .collect();
    Dataset::new(subjects, p, 1.0).unwrap()
}

/// Random data with a matching grid: equal-width slabs on [0, 1] for time
/// and every covariate.
pub fn random_problem(
    seed: u64,
    n: usize,
    p: usize,
    time_slabs: usize,
    cov_slabs: usize,
) -> (Dataset, Grid, CellStats) {
    let data = random_dataset(seed, n, p);
    let mut specs = vec![AxisSpec::Uniform(time_slabs)];
    let edges: Vec<f64> = (0..=cov_slabs)
        .map(|k| k as f64 / cov_slabs as f64)
        .collect();
    specs.extend((0..p).map(|_| AxisSpec::Breakpoints(edges.clone())));
    let grid = build_grid(&specs, &data).unwrap();
    let stats = accumulate(&grid, &data).unwrap();
    (data, grid, stats)
}

pub fn random_coeffs(seed: u64, len: usize, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..len).map(|_| rng.gen_range(-scale..=scale)).collect()
}
