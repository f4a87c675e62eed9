//! Command-line front end: simulate, fit, cv, predict, profile, importance
//! and eval. Every table is written as CSV; models and summaries as JSON.
//!
//! Each command also accepts `--config <json>`, an object whose keys are the
//! long flag names (hyphens or underscores). Flags on the command line win.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use crate::boost::{self, make_schedule, Mode, ModelFile};
use crate::crossval::{cross_validate_on_grid, fit_with_cv, CvPlan, DEFAULT_FOLDS};
use crate::error::{Error, Result};
use crate::funcdata::{ingest_csv, Dataset};
use crate::hazrisk::{risk_on_subjects, CellFunction, PiecewiseLogHazard};
use crate::partition::{accumulate, build_grid, Axis, AxisSpec, CellStats, Grid};
use crate::simqueue::{simulate, simulate_replications, QueueHazard, SimConfig, SimOutput};

const DEFAULT_TIME_DIVISIONS: usize = 50;
const DEFAULT_SPLITS: usize = 3;
const AUTO_CATEGORICAL_LEVELS: usize = 12;
const AUTO_UNIFORM_SLABS: usize = 10;

#[derive(Debug, Parser)]
#[command(
    name = "hazboost",
    version,
    about = "Boosted hazard regression with time-dependent covariates"
)]
pub struct Cli {
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the multi-server queue and write a subjects CSV.
    Simulate(SimulateArgs),
    /// Fit a boosted hazard model.
    Fit(FitArgs),
    /// Cross-validate tree size and iteration count.
    Cv(CvArgs),
    /// Hazard per cell, or at the points of a CSV file.
    Predict(PredictArgs),
    /// Hazard along one axis with the others held fixed.
    Profile(ProfileArgs),
    /// Relative importance of each variable.
    Importance(ImportanceArgs),
    /// Risk on a dataset and error against a reference hazard.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub completions: Option<usize>,
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Observation window in hours.
    #[arg(long)]
    pub censor_horizon: Option<f64>,
    #[arg(long)]
    pub lambda_max: Option<f64>,
    /// Independent runs with seeds seed, seed+1, ...
    #[arg(long)]
    pub replications: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Summary JSON (default: `<out>.summary.json`).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args, Clone)]
pub struct GridArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Length of the observation window in the data's time unit.
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Equal-width divisions of the time window.
    #[arg(long)]
    pub time_divisions: Option<usize>,
    /// Time axis spec; overrides `--time-divisions`.
    #[arg(long)]
    pub time_axis: Option<String>,
    /// Covariate axis specs in column order: `uniform:N`, `breaks:a,b,..`,
    /// `categorical:l1,l2,..`, `midpoints` or `auto`.
    #[arg(long = "axis")]
    pub axes: Vec<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub splits: Option<usize>,
    /// Maximum boosting iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub mode: Option<Mode>,
    /// Choose splits and iterations by cross-validation with this many folds.
    #[arg(long)]
    pub cv_folds: Option<usize>,
    /// Comma-separated tree sizes tried by cross-validation.
    #[arg(long)]
    pub splits_grid: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Cross-validation table CSV, when `--cv-folds` is given.
    #[arg(long)]
    pub cv_table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CvArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub splits_grid: Option<String>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// CSV with columns `t,<covariates...>` in raw time.
    #[arg(long)]
    pub points: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Axis to vary: `t`, a covariate name, or an axis index.
    #[arg(long)]
    pub vary: Option<String>,
    /// Fixed value for another axis, `name=value`. Unlisted axes are held at
    /// their median.
    #[arg(long = "at")]
    pub at: Vec<String>,
    /// Data for the medians of unlisted axes; slab centers are used without it.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImportanceArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// `queue` for the simulator's service hazard, or a model JSON on the
    /// same grid.
    #[arg(long)]
    pub truth: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses the process arguments and runs the command. Returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Error::InvalidConfig("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Cv(a) => cmd_cv(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Profile(a) => cmd_profile(a),
        Command::Importance(a) => cmd_importance(a),
        Command::Eval(a) => cmd_eval(a),
    })
}

/// Flag values from a `--config` JSON object.
#[derive(Default)]
struct ConfigFile(Map<String, Value>);

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile::default());
        };
        match serde_json::from_str(&fs::read_to_string(path)?)? {
            Value::Object(map) => Ok(ConfigFile(
                map.into_iter()
                    .map(|(k, v)| (k.replace('-', "_"), v))
                    .collect(),
            )),
            _ => Err(Error::InvalidConfig(
                "config file must hold a JSON object".into(),
            )),
        }
    }

    fn get<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>> {
        self.0
            .get(key)
            .map(|v| {
                serde_json::from_value(v.clone())
                    .map_err(|e| Error::InvalidConfig(format!("config key `{key}`: {e}")))
            })
            .transpose()
    }

    fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }

    fn require<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<T> {
        self.pick(flag, key)?
            .ok_or_else(|| Error::InvalidConfig(format!("missing --{}", key.replace('_', "-"))))
    }

    fn list(&self, flag: Vec<String>, key: &str) -> Result<Vec<String>> {
        if !flag.is_empty() {
            return Ok(flag);
        }
        Ok(self.get(key)?.unwrap_or_default())
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn fmt_f(v: f64) -> String {
    format!("{v}")
}

fn parse_usize_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad integer list `{text}`")))
        })
        .collect()
}

fn replication_path(out: &Path, r: usize) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match out.extension() {
        Some(ext) => format!("{stem}.r{r}.{}", ext.to_string_lossy()),
        None => format!("{stem}.r{r}"),
    };
    out.with_file_name(name)
}

fn summary_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".summary.json");
    PathBuf::from(s)
}

fn write_sim(out: &Path, summary: Option<&Path>, sim: &SimOutput) -> Result<()> {
    fs::write(out, sim.data.to_csv_string())?;
    let summary = summary
        .map(Path::to_path_buf)
        .unwrap_or_else(|| summary_path(out));
    fs::write(summary, serde_json::to_string_pretty(&sim.summary)? + "\n")?;
    Ok(())
}

pub fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let mut cfg: SimConfig = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?,
        None => SimConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(c) = a.completions {
        cfg.completions_target = c;
    }
    if let Some(c) = a.capacity {
        cfg.capacity = c;
    }
    if let Some(h) = a.censor_horizon {
        cfg.censor_horizon = h;
    }
    if let Some(l) = a.lambda_max {
        cfg.lambda_max = l;
    }
    match a.replications.unwrap_or(1) {
        0 => Err(Error::InvalidConfig(
            "--replications must be at least 1".into(),
        )),
        1 => write_sim(&a.out, a.summary.as_deref(), &simulate(&cfg, &QueueHazard)?),
        r => {
            for (k, sim) in simulate_replications(&cfg, &QueueHazard, r)?
                .iter()
                .enumerate()
            {
                write_sim(&replication_path(&a.out, k), None, sim)?;
            }
            Ok(())
        }
    }
}

/// `categorical` over the observed levels when there are few, else
/// equal-width slabs over the observed range.
fn auto_axis(data: &Dataset, k: usize) -> AxisSpec {
    let mut values: Vec<f64> = data
        .subjects
        .iter()
        .flat_map(|s| s.segments().iter().map(move |g| g.x[k]))
        .collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    if values.len() <= AUTO_CATEGORICAL_LEVELS {
        AxisSpec::Categorical(values)
    } else {
        AxisSpec::Uniform(AUTO_UNIFORM_SLABS)
    }
}

struct Prepared {
    data: Dataset,
    grid: Grid,
}

fn prepare(g: GridArgs, cfg: &ConfigFile) -> Result<Prepared> {
    let data_path: PathBuf = cfg.require(g.data, "data")?;
    let horizon: f64 = cfg.pick(g.horizon, "horizon")?.unwrap_or(1.0);
    let data = ingest_csv(&data_path, horizon)?;
    let time = match cfg.pick(g.time_axis, "time_axis")? {
        Some(spec) => AxisSpec::parse(&spec)?,
        None => AxisSpec::Uniform(
            cfg.pick(g.time_divisions, "time_divisions")?
                .unwrap_or(DEFAULT_TIME_DIVISIONS),
        ),
    };
    let given = cfg.list(g.axes, "axis")?;
    if !given.is_empty() && given.len() != data.p {
        return Err(Error::InvalidConfig(format!(
            "{} --axis specs for {} covariates",
            given.len(),
            data.p
        )));
    }
    let mut specs = vec![time];
    for k in 0..data.p {
        specs.push(match given.get(k).map(String::as_str) {
            None | Some("auto") => auto_axis(&data, k),
            Some(s) => AxisSpec::parse(s)?,
        });
    }
    let grid = build_grid(&specs, &data)?;
    Ok(Prepared { data, grid })
}

fn cv_plan(
    cfg: &ConfigFile,
    folds: Option<usize>,
    grid: Option<String>,
    iters: usize,
    seed: Option<u64>,
) -> Result<CvPlan> {
    let defaults = CvPlan::default();
    Ok(CvPlan {
        folds: folds.unwrap_or(DEFAULT_FOLDS),
        splits_grid: match cfg.pick(grid, "splits_grid")? {
            Some(s) => parse_usize_list(&s)?,
            None => defaults.splits_grid,
        },
        iters_max: iters,
        seed: cfg.pick(seed, "seed")?.unwrap_or(0),
    })
}

pub fn cmd_fit(a: FitArgs) -> Result<()> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let Prepared { data, grid } = prepare(a.grid, &cfg)?;
    let mode = cfg.pick(a.mode, "mode")?.unwrap_or(Mode::Practical);
    let mut schedule = make_schedule(data.n(), mode);
    if let Some(m) = cfg.pick(a.iters, "iters")? {
        schedule = schedule.with_max_iters(m);
    }
    let out: Option<PathBuf> = cfg.pick(a.out, "out")?;
    let fit = match cfg.pick(a.cv_folds, "cv_folds")? {
        Some(folds) => {
            let plan = cv_plan(&cfg, Some(folds), a.splits_grid, schedule.max_iters, a.seed)?;
            let (cv, fit) = fit_with_cv(&data, &grid, &plan, &schedule)?;
            if let Some(p) = cfg.pick(a.cv_table, "cv_table")? {
                let p: PathBuf = p;
                cv.write_csv(fs::File::create(p)?)?;
            }
            fit
        }
        None => {
            let splits = cfg.pick(a.splits, "splits")?.unwrap_or(DEFAULT_SPLITS);
            boost::fit(&data, &grid, splits, &schedule)?
        }
    };
    let file = ModelFile::from_fit(&fit, data.horizon, data.covariate_names.clone());
    write_output(out.as_deref(), &(file.to_json()? + "\n"))
}

pub fn cmd_cv(a: CvArgs) -> Result<()> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let Prepared { data, grid } = prepare(a.grid, &cfg)?;
    let mode = cfg.pick(a.mode, "mode")?.unwrap_or(Mode::Practical);
    let schedule = make_schedule(data.n(), mode);
    let iters = cfg.pick(a.iters, "iters")?.unwrap_or(schedule.max_iters);
    let folds = cfg.pick(a.folds, "folds")?;
    let plan = cv_plan(&cfg, folds, a.splits_grid, iters, a.seed)?;
    let cv = cross_validate_on_grid(&data, &grid, &plan, &schedule)?;
    let mut buf = Vec::new();
    cv.write_csv(&mut buf)?;
    let out: Option<PathBuf> = cfg.pick(a.out, "out")?;
    write_output(out.as_deref(), &String::from_utf8_lossy(&buf))?;
    eprintln!(
        "chosen max_splits={} m={} risk={}",
        cv.chosen_splits, cv.chosen_iters, cv.best_risk
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<(ModelFile, PiecewiseLogHazard)> {
    let file = ModelFile::from_json(&fs::read_to_string(path)?)?;
    let model = file.model()?;
    Ok((file, model))
}

fn axis_names(file: &ModelFile) -> Vec<String> {
    let mut names = vec!["t".to_string()];
    names.extend((0..file.grid.dims() - 1).map(|k| {
        file.covariate_names
            .get(k)
            .cloned()
            .unwrap_or_else(|| format!("x{}", k + 1))
    }));
    names
}

pub fn cmd_predict(a: PredictArgs) -> Result<()> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let model_path: PathBuf = cfg.require(a.model, "model")?;
    let (file, model) = load_model(&model_path)?;
    let names = axis_names(&file);
    let mut text = String::new();
    match cfg.pick(a.points, "points")? {
        Some(points) => {
            let points: PathBuf = points;
            let mut reader = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_path(&points)?;
            text.push_str(&names.join(","));
            text.push_str(",hazard,extrapolated\n");
            for (line, rec) in reader.records().enumerate() {
                let rec = rec?;
                let vals = rec
                    .iter()
                    .map(|v| v.parse::<f64>())
                    .collect::<std::result::Result<Vec<f64>, _>>()
                    .map_err(|e| Error::Parse {
                        line: line as u64 + 2,
                        msg: e.to_string(),
                    })?;
                if vals.len() != names.len() {
                    return Err(Error::Parse {
                        line: line as u64 + 2,
                        msg: format!("expected {} columns", names.len()),
                    });
                }
                let p = boost::predict(&model, vals[0] / file.horizon, &vals[1..])?;
                let row: Vec<String> = vals.iter().map(|&v| fmt_f(v)).collect();
                text.push_str(&format!(
                    "{},{},{}\n",
                    row.join(","),
                    fmt_f(p.hazard),
                    p.extrapolated as u8
                ));
            }
        }
        None => {
            text.push_str("cell,t_lo,t_hi,");
            text.push_str(&names[1..].join(","));
            text.push_str(",hazard,extrapolated\n");
            for j in 0..model.grid.cell_count() {
                let k = model.grid.slab_of(j, 0);
                let (lo, hi) = model.grid.axes()[0].bounds(k);
                let center = model.grid.center(j);
                let cov: Vec<String> = center[1..].iter().map(|&v| fmt_f(v)).collect();
                text.push_str(&format!(
                    "{j},{},{},{},{},{}\n",
                    fmt_f(lo * file.horizon),
                    fmt_f(hi * file.horizon),
                    cov.join(","),
                    fmt_f(model.coeffs[j].exp()),
                    model.is_extrapolated(j) as u8
                ));
            }
        }
    }
    let out: Option<PathBuf> = cfg.pick(a.out, "out")?;
    write_output(out.as_deref(), &text)
}

/// Median of an axis's values weighted by at-risk time in the data.
fn weighted_median(data: &Dataset, k: usize) -> Option<f64> {
    let mut pts: Vec<(f64, f64)> = data
        .subjects
        .iter()
        .flat_map(|s| s.segments().iter().map(move |g| (g.x[k], g.len())))
        .collect();
    if pts.is_empty() {
        return None;
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let half = pts.iter().map(|p| p.1).sum::<f64>() / 2.0;
    let mut acc = 0.0;
    for (v, w) in &pts {
        acc += w;
        if acc >= half {
            return Some(*v);
        }
    }
    pts.last().map(|p| p.0)
}

fn axis_index(names: &[String], key: &str) -> Result<usize> {
    if let Some(i) = names.iter().position(|n| n == key) {
        return Ok(i);
    }
    key.parse::<usize>()
        .ok()
        .filter(|&i| i < names.len())
        .ok_or_else(|| Error::InvalidConfig(format!("unknown axis `{key}`")))
}

pub fn cmd_profile(a: ProfileArgs) -> Result<()> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let model_path: PathBuf = cfg.require(a.model, "model")?;
    let (file, model) = load_model(&model_path)?;
    let names = axis_names(&file);
    let vary = axis_index(
        &names,
        &cfg.pick(a.vary, "vary")?.unwrap_or_else(|| "t".into()),
    )?;
    let data = match cfg.pick(a.data, "data")? {
        Some(p) => {
            let p: PathBuf = p;
            Some(ingest_csv(p, file.horizon)?)
        }
        None => None,
    };

    // Fixed point in normalized time.
    let mut point: Vec<f64> = (0..names.len())
        .map(|i| {
            let from_data = match (&data, i) {
                (Some(_), 0) | (None, _) => None,
                (Some(d), i) => weighted_median(d, i - 1),
            };
            from_data.unwrap_or_else(|| {
                let axis = &model.grid.axes()[i];
                axis.center(axis.slab_count() / 2)
            })
        })
        .collect();
    if data.is_some() {
        point[0] = model.grid.axes()[0].center(model.grid.axes()[0].slab_count() / 2);
    }
    for spec in cfg.list(a.at, "at")? {
        let (key, value) = spec.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("--at expects name=value, got `{spec}`"))
        })?;
        let i = axis_index(&names, key.trim())?;
        let v: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::InvalidConfig(format!("bad value in `{spec}`")))?;
        point[i] = if i == 0 { v / file.horizon } else { v };
    }

    let axis = &model.grid.axes()[vary];
    let scale = if vary == 0 { file.horizon } else { 1.0 };
    let mut text = format!("{},lo,hi,hazard,extrapolated\n", names[vary]);
    for k in 0..axis.slab_count() {
        point[vary] = axis.center(k);
        let p = boost::predict(&model, point[0], &point[1..])?;
        let (lo, hi) = axis.bounds(k);
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f(point[vary] * scale),
            fmt_f(lo * scale),
            fmt_f(hi * scale),
            fmt_f(p.hazard),
            p.extrapolated as u8
        ));
    }
    let out: Option<PathBuf> = cfg.pick(a.out, "out")?;
    write_output(out.as_deref(), &text)
}

pub fn cmd_importance(a: ImportanceArgs) -> Result<()> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let model_path: PathBuf = cfg.require(a.model, "model")?;
    let (file, _) = load_model(&model_path)?;
    let names = axis_names(&file);
    let mut rows: Vec<(usize, f64)> = file.importance.iter().map(|(&k, &v)| (k, v)).collect();
    rows.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut text = String::from("variable,importance\n");
    for (k, v) in rows {
        text.push_str(&format!("{},{}\n", names[k], fmt_f(v)));
    }
    let out: Option<PathBuf> = cfg.pick(a.out, "out")?;
    write_output(out.as_deref(), &text)
}

/// Errors of `fitted` against `truth` on the hazard scale, weighted by the
/// at-risk measure of each cell.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HazardError {
    pub l1: f64,
    pub l2: f64,
    /// `l1` divided by the total at-risk mass.
    pub mae: f64,
}

pub fn hazard_error(
    fitted: &PiecewiseLogHazard,
    truth: &CellFunction,
    stats: &CellStats,
) -> HazardError {
    let (mut l1, mut l2, mut mass) = (0.0, 0.0, 0.0);
    for j in stats.occupied_cells() {
        let d = (fitted.coeffs[j].exp() - truth.values[j]).abs();
        l1 += stats.mass[j] * d;
        l2 += stats.mass[j] * d * d;
        mass += stats.mass[j];
    }
    HazardError {
        l1,
        l2: l2.sqrt(),
        mae: if mass > 0.0 { l1 / mass } else { 0.0 },
    }
}

fn same_shape(a: &Grid, b: &Grid) -> bool {
    a.axes().len() == b.axes().len()
        && a.axes().iter().zip(b.axes()).all(|(x, y)| match (x, y) {
            (Axis::Interval { edges: e1, .. }, Axis::Interval { edges: e2, .. }) => e1 == e2,
            _ => x == y,
        })
}

#[derive(Debug, serde::Serialize)]
struct EvalReport {
    n: usize,
    risk: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<HazardError>,
}

pub fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let model_path: PathBuf = cfg.require(a.model, "model")?;
    let data_path: PathBuf = cfg.require(a.data, "data")?;
    let (file, model) = load_model(&model_path)?;
    let data = ingest_csv(&data_path, file.horizon)?;
    if data.p + 1 != model.grid.dims() {
        return Err(Error::GridMismatch(format!(
            "data has {} covariates, model grid has {} axes",
            data.p,
            model.grid.dims()
        )));
    }
    let risk = risk_on_subjects(&model, &data)?;
    let error = match cfg.pick(a.truth, "truth")? {
        None => None,
        Some(truth) => {
            let truth: String = truth;
            let table = if truth == "queue" || truth == "eq24" {
                crate::simqueue::true_hazard_table(&QueueHazard, &model.grid, file.horizon)
            } else {
                let (_, other) = load_model(Path::new(&truth))?;
                if !same_shape(&other.grid, &model.grid) {
                    return Err(Error::GridMismatch(
                        "truth model is on a different grid".into(),
                    ));
                }
                CellFunction {
                    values: other.coeffs.iter().map(|c| c.exp()).collect(),
                }
            };
            let stats = accumulate(&model.grid, &data)?;
            Some(hazard_error(&model, &table, &stats))
        }
    };
    let report = EvalReport {
        n: data.n(),
        risk,
        error,
    };
    let out: Option<PathBuf> = cfg.pick(a.out, "out")?;
    write_output(
        out.as_deref(),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )
}
