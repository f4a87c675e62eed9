//! One test per acceptance criterion. Each writes a single PASS/FAIL line to
//! stderr, bypassing the test harness capture, then asserts.

mod common;

use std::io::Write;
use std::process::Command;
use std::time::Instant;

use hazboost::boost::{fit, lambert_w, Schedule};
use hazboost::cli::hazard_error;
use hazboost::crossval::{fit_with_cv, CvPlan};
use hazboost::error::Result;
use hazboost::funcdata::read_csv;
use hazboost::hazrisk::{
    gradient, mle_hazard, norms, risk, risk_on_subjects, CellFunction, LogHazard,
    PiecewiseLogHazard,
};
use hazboost::partition::{accumulate, build_grid, Axis, AxisSpec, Grid};
use hazboost::simqueue::{simulate, true_hazard_table, QueueHazard, SimConfig};

fn report(n: u32, name: &str, pass: bool, detail: String, started: Instant) {
    let line = format!(
        "acceptance {n:>2} {} {name}: {detail} ({:.2}s)\n",
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn is_non_increasing(path: &[f64]) -> bool {
    path.windows(2).all(|w| w[1] <= w[0])
}

/// F(t) = 1 on [0, 1/4), 0 elsewhere, evaluated pointwise.
struct LeftClosedQuarter;

impl LogHazard for LeftClosedQuarter {
    fn log_hazard(&self, t: f64, _x: &[f64]) -> Result<f64> {
        Ok(if (0.0..0.25).contains(&t) { 1.0 } else { 0.0 })
    }

    fn integrated_hazard(&self, a: f64, b: f64, _x: &[f64]) -> Result<f64> {
        let inside = (b.min(0.25) - a.max(0.0)).max(0.0);
        Ok(inside * std::f64::consts::E + ((b - a) - inside))
    }
}

#[test]
fn criterion_01_coordinate_dependence() {
    let started = Instant::now();
    let data = read_csv(
        "subject_id,t_start,t_end,event\nA,0,0.25,1\n".as_bytes(),
        1.0,
    )
    .unwrap();
    let e = std::f64::consts::E;
    let pointwise = risk_on_subjects(&LeftClosedQuarter, &data).unwrap();

    let grid = Grid::new(vec![Axis::Interval {
        edges: vec![0.0, 0.25, 1.0],
        open_ends: false,
    }])
    .unwrap();
    let stats = accumulate(&grid, &data).unwrap();
    let cell_form = risk(&[1.0, 0.0], &stats);

    let pass = (pointwise - e / 4.0).abs() <= 1e-12 && (cell_form - (e / 4.0 - 1.0)).abs() <= 1e-12;
    report(
        1,
        "coordinate dependence of the risk",
        pass,
        format!("pointwise {pointwise:.12} (e/4), cell form {cell_form:.12} (e/4-1)"),
        started,
    );
    assert!(pass);
}

#[test]
fn criterion_02_gradient_matches_finite_differences() {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..100u64 {
        let n = 1 + (seed as usize % 12);
        let (_, grid, stats) =
            common::random_problem(seed, n, 1 + (seed as usize % 2), 3 + (seed as usize % 4), 2);
        let c = common::random_coeffs(seed, grid.cell_count(), 1.5);
        let g = gradient(&c, &stats);
        let h = 1e-6;
        for j in stats.occupied_cells() {
            let mut up = c.clone();
            let mut down = c.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (risk(&up, &stats) - risk(&down, &stats)) / (2.0 * h);
            let analytic = c[j].exp() * stats.mass[j] - stats.failures[j] as f64 / stats.n as f64;
            assert!(
                (analytic - g.values[j] * stats.mass[j]).abs() <= 1e-14 * analytic.abs().max(1.0)
            );
            // relative to the exposure term so cells where the two terms cancel stay meaningful
            let scale = analytic.abs().max(c[j].exp() * stats.mass[j]);
            worst = worst.max((fd - analytic).abs() / scale);
            checked += 1;
        }
    }
    let pass = worst <= 1e-6;
    report(
        2,
        "analytic gradient vs central differences",
        pass,
        format!("{checked} cells over 100 datasets, worst relative error {worst:.2e}"),
        started,
    );
    assert!(pass);
}

#[test]
fn criterion_03_subject_form_equals_cell_form() {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..200u64 {
        let (data, grid, stats) =
            common::random_problem(seed, 5 + seed as usize % 30, 1 + seed as usize % 3, 6, 3);
        let coeffs = common::random_coeffs(seed, grid.cell_count(), 2.0);
        let model = PiecewiseLogHazard {
            grid,
            coeffs: coeffs.clone(),
            empty_cells: stats.empty_cells(),
        };
        let direct = risk_on_subjects(&model, &data).unwrap();
        worst = worst.max((direct - risk(&coeffs, &stats)).abs());
    }
    let pass = worst <= 1e-12;
    report(
        3,
        "subject-level risk equals histogram risk",
        pass,
        format!("200 datasets, worst absolute gap {worst:.2e}"),
        started,
    );
    assert!(pass);
}

/// Per-cell Newton on e^c·mass − D/n = 0.
fn newton_cell(mass: f64, rate: f64) -> f64 {
    let mut c = 0.0_f64;
    for _ in 0..200 {
        let f = c.exp() * mass - rate;
        c -= f / (c.exp() * mass);
    }
    c.exp()
}

#[test]
fn criterion_04_saturated_boosting_reaches_cell_mle() {
    let started = Instant::now();
    // smallest seed whose every occupied cell has at least one failure
    let (seed, (data, grid, stats)) = (0..)
        .map(|s| (s, common::random_problem(s, 60, 1, 3, 2)))
        .find(|(_, (_, _, st))| st.occupied_cells().all(|j| st.failures[j] > 0))
        .unwrap();
    let cells = grid.cell_count();
    let schedule = Schedule::practical().with_max_iters(20_000);
    let fitted = fit(&data, &grid, cells, &schedule).unwrap();
    let mle = mle_hazard(&stats);
    let mut worst: f64 = 0.0;
    for j in stats.occupied_cells() {
        let oracle = newton_cell(stats.mass[j], stats.failures[j] as f64 / stats.n as f64);
        assert!((oracle - mle.values[j]).abs() <= 1e-9 * oracle);
        worst = worst.max((fitted.model.coeffs[j].exp() - oracle).abs());
    }
    let monotone = is_non_increasing(&fitted.risk_history());
    let pass = worst <= 1e-4 && monotone;
    report(
        4,
        "saturated trees converge to the cell MLE",
        pass,
        format!(
            "seed {seed}, {} occupied cells, {} iterations, worst hazard gap {worst:.2e}",
            stats.occupied_count(),
            fitted.iterations()
        ),
        started,
    );
    assert!(pass);
}

#[test]
fn criterion_05_lambert_w() {
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    let mut lower_bound_ok = true;
    let points = 2001;
    for i in 0..points {
        let y = 10f64.powf(-6.0 + 12.0 * i as f64 / (points - 1) as f64);
        let w = lambert_w(y);
        worst = worst.max((w * w.exp() - y).abs() / y.max(1.0));
        if y >= std::f64::consts::E {
            lower_bound_ok &= w >= y.ln() - y.ln().ln();
        }
    }
    let pass = worst <= 1e-12 && lower_bound_ok;
    report(
        5,
        "Lambert W accuracy and lower bound",
        pass,
        format!("{points} points in [1e-6, 1e6], worst scaled residual {worst:.2e}, log bound held: {lower_bound_ok}"),
        started,
    );
    assert!(pass);
}

#[test]
fn criterion_06_censored_share() {
    let started = Instant::now();
    let fractions: Vec<f64> = (1..=5u64)
        .map(|seed| {
            let cfg = SimConfig {
                seed,
                ..SimConfig::default()
            };
            simulate(&cfg, &QueueHazard)
                .unwrap()
                .summary
                .censored_fraction
        })
        .collect();
    let pass = fractions.iter().all(|f| (0.34..=0.40).contains(f));
    report(
        6,
        "censored share at default settings",
        pass,
        format!("seeds 1-5: {fractions:?}, band [0.34, 0.40]"),
        started,
    );
    assert!(pass);
}

#[test]
fn criterion_07_tracks_true_hazard() {
    let started = Instant::now();
    let sim = simulate(
        &SimConfig {
            seed: 1,
            ..SimConfig::default()
        },
        &QueueHazard,
    )
    .unwrap();
    let data = sim.data;
    let plan = CvPlan {
        folds: 5,
        splits_grid: (1..=6).collect(),
        iters_max: 1000,
        seed: 0,
    };
    let mut pass = true;
    let mut parts = Vec::new();
    let mut chosen = Vec::new();
    for divisions in [25, 50, 75] {
        let specs = [
            AxisSpec::Uniform(divisions),
            AxisSpec::Categorical(vec![1.0, 2.0, 3.0]),
            AxisSpec::Categorical(vec![1.0, 2.0]),
        ];
        let grid = build_grid(&specs, &data).unwrap();
        let stats = accumulate(&grid, &data).unwrap();
        let (cv, fitted) = fit_with_cv(&data, &grid, &plan, &Schedule::practical()).unwrap();
        let truth = true_hazard_table(&QueueHazard, &grid, data.horizon);
        let err = hazard_error(&fitted.model, &truth, &stats);
        pass &= err.mae <= 0.15 && is_non_increasing(&fitted.risk_history());
        chosen.push(cv.chosen_splits);
        parts.push(format!(
            "{divisions}: mae {:.4} (splits {}, m {})",
            err.mae, cv.chosen_splits, cv.chosen_iters
        ));
    }
    report(
        7,
        "fitted hazard tracks the true hazard",
        pass,
        format!("{}; tolerance 0.15; chosen splits {chosen:?} (reference pattern [4, 3, 2], not asserted)", parts.join(", ")),
        started,
    );
    assert!(pass);
}

#[test]
fn criterion_08_practical_training_risk_is_monotone() {
    let started = Instant::now();
    let mut fits = 0;
    let mut pass = true;
    for seed in 0..40u64 {
        let (data, grid, _) = common::random_problem(seed, 10 + seed as usize, 2, 5, 3);
        if data.failures() == 0 {
            continue;
        }
        for splits in [1, 3, 8] {
            let f = fit(
                &data,
                &grid,
                splits,
                &Schedule::practical().with_max_iters(300),
            )
            .unwrap();
            pass &= is_non_increasing(&f.risk_history());
            fits += 1;
        }
    }
    let sim = simulate(
        &SimConfig {
            seed: 2,
            completions_target: 1500,
            ..SimConfig::default()
        },
        &QueueHazard,
    )
    .unwrap();
    let grid = build_grid(
        &[
            AxisSpec::Uniform(30),
            AxisSpec::Categorical(vec![1.0, 2.0, 3.0]),
            AxisSpec::Categorical(vec![1.0, 2.0]),
        ],
        &sim.data,
    )
    .unwrap();
    for splits in 1..=6 {
        let f = fit(&sim.data, &grid, splits, &Schedule::practical()).unwrap();
        pass &= is_non_increasing(&f.risk_history());
        fits += 1;
    }
    report(
        8,
        "practical-mode training risk never increases",
        pass,
        format!("{fits} fits checked"),
        started,
    );
    assert!(pass);
}

#[test]
fn criterion_09_norm_chain() {
    let started = Instant::now();
    let mut violations = 0;
    for seed in 0..1000u64 {
        let (_, grid, stats) = common::random_problem(seed, 1 + seed as usize % 20, 1, 4, 3);
        let scale = 10f64.powf((seed % 7) as f64 - 3.0);
        let f = CellFunction {
            values: common::random_coeffs(seed, grid.cell_count(), scale),
        };
        let m = norms(&f, &stats);
        if !(m.l1 <= m.l2 * (1.0 + 1e-12) && m.l2 <= m.sup * (1.0 + 1e-12)) {
            violations += 1;
        }
    }
    let pass = violations == 0;
    report(
        9,
        "L1 <= L2 <= sup under the at-risk measure",
        pass,
        format!("1000 random cell functions, {violations} violations"),
        started,
    );
    assert!(pass);
}

#[test]
fn criterion_10_outputs_do_not_depend_on_workers() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let out = Command::new(env!("CARGO_BIN_EXE_hazboost"))
            .args(args)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let mut outputs = Vec::new();
    for workers in ["1", "2", "8"] {
        let csv = dir.path().join(format!("sim{workers}.csv"));
        let model = dir.path().join(format!("fit{workers}.json"));
        let (csv_s, model_s) = (
            csv.to_string_lossy().into_owned(),
            model.to_string_lossy().into_owned(),
        );
        run(&[
            "--workers",
            workers,
            "simulate",
            "--seed",
            "11",
            "--completions",
            "2000",
            "--out",
            &csv_s,
        ]);
        run(&[
            "--workers",
            workers,
            "fit",
            "--data",
            &csv_s,
            "--time-divisions",
            "25",
            "--cv-folds",
            "5",
            "--iters",
            "300",
            "--out",
            &model_s,
        ]);
        outputs.push((std::fs::read(&csv).unwrap(), std::fs::read(&model).unwrap()));
    }
    let pass = outputs.windows(2).all(|w| w[0] == w[1]);
    report(
        10,
        "simulate and fit are identical across 1, 2 and 8 workers",
        pass,
        format!(
            "csv {} bytes, model {} bytes",
            outputs[0].0.len(),
            outputs[0].1.len()
        ),
        started,
    );
    assert!(pass);
}
