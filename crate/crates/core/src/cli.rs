//! Command-line front end.
//!
//! Every subcommand reads an optional JSON config, writes its data files into
//! one output directory and prints a one-line summary. Exit status is 0 on
//! success, 1 for configuration or usage errors and 2 for numerical failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::adjoint::gradient_check;
use crate::analysis::convergence::convergence_study;
use crate::analysis::spectrum::stability_spectrum;
use crate::analysis::sweep::{summarize_by_intervals, summarize_sweep, sweep, GroupStats};
use crate::bspline::SplineBasis;
use crate::config::{ExperimentConfig, OutputFormat, Resolved};
use crate::control::{ControlKind, ControlParams, ParamsDocument};
use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::problems::{Dataset, Problem};
use crate::train::loss::Target;
use crate::train::{evaluate, initial_params, train, Architecture, Evaluation, NetworkSpec};

#[derive(Debug, Parser)]
#[command(name = "splinet", version, about = "Continuous-depth networks with B-spline controls")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON experiment config; built-in defaults are used when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `output.directory`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Validation,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one network; writes run_record.json, loss_history.csv and params.json.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Random hyperparameter sweep over the configured architectures.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Euler error against an RK4 reference for a range of step counts.
    Convergence {
        #[command(flatten)]
        common: Common,
        /// Control to study; a seeded random control otherwise.
        #[arg(long)]
        params: Option<PathBuf>,
    },
    /// Layer Jacobian eigenvalues along a probe trajectory.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Step size used to scale eigenvalues into the Euler disk (default: the grid step).
        #[arg(long)]
        step: Option<f64>,
    },
    /// Compare adjoint gradients with central finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-6)]
        epsilon: f64,
        /// Number of leading training samples in the objective.
        #[arg(long, default_value_t = 4)]
        samples: usize,
        /// Exit with status 2 if the relative error exceeds this.
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Tabulate every basis function on a uniform grid over [0, 1].
    Basis {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        degree: Option<usize>,
        #[arg(long)]
        intervals: Option<usize>,
        #[arg(long, default_value_t = 401)]
        samples: usize,
    },
    /// Dump the problem's datasets.
    Dataset {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Split::All)]
        split: Split,
    },
    /// Evaluate saved parameters, optionally on a different number of steps.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        params: PathBuf,
        #[arg(long = "network-N")]
        network_n: Option<usize>,
    },
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::Train { common }
            | Command::Sweep { common, .. }
            | Command::Convergence { common, .. }
            | Command::Spectrum { common, .. }
            | Command::Gradcheck { common, .. }
            | Command::Basis { common, .. }
            | Command::Dataset { common, .. }
            | Command::Eval { common, .. } => common,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Sweep { .. } => "sweep",
            Command::Convergence { .. } => "convergence",
            Command::Spectrum { .. } => "spectrum",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Basis { .. } => "basis",
            Command::Dataset { .. } => "dataset",
            Command::Eval { .. } => "eval",
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numerical() {
        2
    } else {
        1
    }
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

struct Output {
    dir: PathBuf,
    json: bool,
    csv: bool,
}

impl Output {
    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        if !self.json {
            return Ok(());
        }
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
            path: path.display().to_string(),
            source,
        })?;
        text.push('\n');
        write_file(&path, text.as_bytes())
    }

    fn jsonl<T: Serialize>(&self, name: &str, values: &[T]) -> Result<()> {
        if !self.json {
            return Ok(());
        }
        let path = self.dir.join(name);
        let mut text = String::new();
        for v in values {
            text.push_str(&serde_json::to_string(v).map_err(|source| Error::Json {
                path: path.display().to_string(),
                source,
            })?);
            text.push('\n');
        }
        write_file(&path, text.as_bytes())
    }

    fn csv<R: Serialize>(&self, name: &str, rows: &[R]) -> Result<()> {
        if !self.csv {
            return Ok(());
        }
        let path = self.dir.join(name);
        let io = |e: csv::Error| Error::Io {
            path: path.display().to_string(),
            source: e.into(),
        };
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e.into_error(),
        })?;
        write_file(&path, &bytes)
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    match &common.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(ExperimentConfig::default()),
    }
}

fn open_output(common: &Common, cfg: &ExperimentConfig) -> Result<Output> {
    let dir = common.out.clone().unwrap_or_else(|| cfg.output.directory.clone());
    std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })?;
    Ok(Output {
        dir,
        json: cfg.output.wants(OutputFormat::Json),
        csv: cfg.output.wants(OutputFormat::Csv),
    })
}

fn load_params(path: &Path) -> Result<ControlParams> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let doc: ParamsDocument = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.display().to_string(),
        source,
    })?;
    ControlParams::from_document(&doc)
}

/// Params from `--params`, or the seeded initialization of the configured network.
fn params_or_init(path: &Option<PathBuf>, r: &Resolved) -> Result<ControlParams> {
    match path {
        Some(p) => {
            let params = load_params(p)?;
            if params.width != r.network.width {
                return Err(Error::config(
                    "network.width",
                    format!("params have width {}, config has {}", params.width, r.network.width),
                ));
            }
            Ok(params)
        }
        None => initial_params(&r.network, &r.training),
    }
}

/// Network matching the control layout of `params`.
fn network_for_params(base: &NetworkSpec, params: &ControlParams, steps: Option<usize>) -> Result<NetworkSpec> {
    let mut net = *base;
    net.lambda = params.lambda;
    net.antisymmetric = params.antisymmetric;
    net.gamma_shift = params.gamma_shift;
    match params.kind {
        ControlKind::Spline { degree, intervals } => {
            net.architecture = Architecture::Splinet { degree, intervals };
            if let Some(n) = steps {
                net.steps = n;
            }
        }
        ControlKind::PerLayer { layers } => {
            if let Some(n) = steps {
                if n != layers {
                    return Err(Error::config(
                        "network.N",
                        format!("per-layer control has {layers} layers and cannot run on {n} steps"),
                    ));
                }
            }
            if let Architecture::Splinet { .. } = net.architecture {
                net.architecture = Architecture::Odenet;
            }
            net.steps = layers;
        }
    }
    net.validate()?;
    Ok(net)
}

fn probe_state(cfg: &ExperimentConfig, r: &Resolved) -> Result<Vector> {
    let raw = match &cfg.analysis.probe {
        Some(p) => p.clone(),
        None => r.problem.train.inputs[0].clone(),
    };
    r.problem
        .spec
        .input_map
        .apply(&raw, r.network.width)
        .map_err(|e| Error::config("analysis.probe", e.to_string()))
}

#[derive(Serialize)]
struct Metadata<'a> {
    subcommand: &'a str,
    version: &'a str,
    timestamp_unix: u64,
    wall_time_s: f64,
}

fn write_metadata(out: &Output, subcommand: &str, started: Instant) -> Result<()> {
    let timestamp_unix = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    out.json(
        "metadata.json",
        &Metadata {
            subcommand,
            version: env!("CARGO_PKG_VERSION"),
            timestamp_unix,
            wall_time_s: started.elapsed().as_secs_f64(),
        },
    )
}

/// Runs one subcommand and returns its summary line.
pub fn run(command: &Command) -> Result<String> {
    let started = Instant::now();
    let common = command.common();
    let cfg = load_config(common)?;
    let out = open_output(common, &cfg)?;
    out.json("config.json", &cfg)?;
    let result = match command {
        Command::Train { .. } => run_train(&cfg, &out),
        Command::Sweep { jobs, .. } => run_sweep(&cfg, &out, *jobs),
        Command::Convergence { params, .. } => run_convergence(&cfg, &out, params),
        Command::Spectrum { params, step, .. } => run_spectrum(&cfg, &out, params, *step),
        Command::Gradcheck {
            params,
            epsilon,
            samples,
            tolerance,
            ..
        } => run_gradcheck(&cfg, &out, params, *epsilon, *samples, *tolerance),
        Command::Basis {
            degree,
            intervals,
            samples,
            ..
        } => run_basis(&cfg, &out, *degree, *intervals, *samples),
        Command::Dataset { split, .. } => run_dataset(&cfg, &out, *split),
        Command::Eval { params, network_n, .. } => run_eval(&cfg, &out, params, *network_n),
    };
    write_metadata(&out, command.name(), started)?;
    result
}

fn describe(net: &NetworkSpec) -> String {
    match net.architecture {
        Architecture::Splinet { degree, intervals } => format!("splinet d={degree} L={intervals} N={}", net.steps),
        Architecture::Odenet => format!("odenet N={}", net.steps),
        Architecture::Resnet => format!("resnet N={}", net.steps),
    }
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

fn run_train(cfg: &ExperimentConfig, out: &Output) -> Result<String> {
    let r = cfg.resolve()?;
    let result = train(&r.network, &r.training, &r.problem)?;
    let rec = &result.record;
    out.json("run_record.json", rec)?;
    let rows: Vec<LossRow> = rec
        .loss_history
        .iter()
        .enumerate()
        .map(|(epoch, &loss)| LossRow { epoch, loss })
        .collect();
    out.csv("loss_history.csv", &rows)?;
    out.json("params.json", &result.params.to_document())?;
    if rec.diverged {
        return Err(Error::Diverged {
            epoch: rec.diverged_epoch.unwrap_or(0),
        });
    }
    let v = rec.validation.as_ref().expect("validation of a finished run");
    let mut line = format!(
        "train: {} {}: validation loss {:.3e}, accuracy {:.4}",
        r.problem.train.name,
        describe(&r.network),
        v.loss,
        v.accuracy
    );
    if let Some(lambda) = rec.learned_lambda {
        line.push_str(&format!(", lambda {lambda:.4}"));
    }
    line.push_str(&format!(" -> {}", out.dir.display()));
    Ok(line)
}

#[derive(Serialize)]
struct StatsRow {
    architecture: String,
    #[serde(rename = "L")]
    intervals: Option<usize>,
    n: usize,
    diverged: usize,
    mean: f64,
    std: f64,
    min: f64,
    q1: f64,
    median: f64,
    q3: f64,
    max: f64,
    mean_ci_lower: f64,
    mean_ci_upper: f64,
    std_ci_lower: f64,
    std_ci_upper: f64,
}

impl From<&GroupStats> for StatsRow {
    fn from(g: &GroupStats) -> Self {
        let s = &g.summary;
        StatsRow {
            architecture: g.architecture.clone(),
            intervals: g.intervals,
            n: s.n,
            diverged: g.diverged,
            mean: s.mean,
            std: s.std,
            min: s.min,
            q1: s.q1,
            median: s.median,
            q3: s.q3,
            max: s.max,
            mean_ci_lower: s.mean_ci.lower,
            mean_ci_upper: s.mean_ci.upper,
            std_ci_lower: s.std_ci.lower,
            std_ci_upper: s.std_ci.upper,
        }
    }
}

#[derive(Serialize)]
struct SweepStats<'a> {
    metric: &'a str,
    by_architecture: &'a [GroupStats],
    by_intervals: &'a [GroupStats],
}

fn run_sweep(cfg: &ExperimentConfig, out: &Output, jobs: usize) -> Result<String> {
    if jobs == 0 {
        return Err(Error::config("--jobs", "must be >= 1"));
    }
    let r = cfg.resolve()?;
    let entries = sweep(&r.sweep, &r.network, &r.training, &r.problem, jobs)?;
    out.jsonl("records.jsonl", &entries)?;
    let classification = r.problem.spec.is_classification();
    let resamples = cfg.sweep.bootstrap_resamples;
    let seed = cfg.sweep.bootstrap_seed;
    let metric = if classification {
        "validation accuracy"
    } else {
        "validation loss"
    };
    if r.sweep.n_runs < 2 {
        return Ok(format!(
            "sweep: {} runs over {} architectures (no statistics for a single run) -> {}",
            entries.len(),
            r.sweep.architectures.len(),
            out.dir.display()
        ));
    }
    let by_arch = summarize_sweep(&entries, classification, resamples, seed)?;
    let by_l = summarize_by_intervals(&entries, classification, resamples, seed)?;
    out.csv("stats.csv", &by_arch.iter().map(StatsRow::from).collect::<Vec<_>>())?;
    out.csv("stats_by_L.csv", &by_l.iter().map(StatsRow::from).collect::<Vec<_>>())?;
    out.json(
        "stats.json",
        &SweepStats {
            metric,
            by_architecture: &by_arch,
            by_intervals: &by_l,
        },
    )?;
    let parts: Vec<String> = by_arch
        .iter()
        .map(|g| {
            let best = if classification { g.summary.max } else { g.summary.min };
            format!("{} mean {:.3e} best {:.3e}", g.architecture, g.summary.mean, best)
        })
        .collect();
    Ok(format!(
        "sweep: {} runs, {metric}: {} -> {}",
        entries.len(),
        parts.join("; "),
        out.dir.display()
    ))
}

#[derive(Serialize)]
struct ConvergenceRow {
    #[serde(rename = "N")]
    steps: usize,
    h: f64,
    error: f64,
}

fn run_convergence(cfg: &ExperimentConfig, out: &Output, params: &Option<PathBuf>) -> Result<String> {
    let r = cfg.resolve()?;
    let p = params_or_init(params, &r)?;
    let x0 = probe_state(cfg, &r)?;
    let report = convergence_study(&p, &x0, r.network.activation, &cfg.analysis.convergence_steps)
        .map_err(|e| match e {
            Error::InvalidArgument(msg) => Error::config("analysis.convergence_steps", msg),
            other => other,
        })?;
    let rows: Vec<ConvergenceRow> = report
        .steps
        .iter()
        .zip(&report.h)
        .zip(&report.errors)
        .map(|((&steps, &h), &error)| ConvergenceRow { steps, h, error })
        .collect();
    out.csv("convergence.csv", &rows)?;
    out.json("convergence.json", &report)?;
    let slope = report
        .slope
        .map(|s| format!("{s:.4}"))
        .unwrap_or_else(|| "undefined (zero error)".into());
    Ok(format!(
        "convergence: {} step counts, fitted order {slope} -> {}",
        report.steps.len(),
        out.dir.display()
    ))
}

#[derive(Serialize)]
struct SpectrumCsvRow {
    layer: usize,
    time: f64,
    re: f64,
    im: f64,
    re_scaled: f64,
    im_scaled: f64,
    inside_disk: bool,
}

fn run_spectrum(cfg: &ExperimentConfig, out: &Output, params: &Option<PathBuf>, step: Option<f64>) -> Result<String> {
    let r = cfg.resolve()?;
    let p = params_or_init(params, &r)?;
    let net = network_for_params(&r.network, &p, None)?;
    let grid = net.grid()?;
    let x0 = probe_state(cfg, &r)?;
    let report = stability_spectrum(&p, &grid, net.activation, &x0)?;
    let h = match step {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(Error::config("--step", format!("must be positive, got {h}"))),
        None => report.h,
    };
    let scaled = report.rows_with_step(h);
    let mut rows = Vec::with_capacity(scaled.len());
    let mut k = 0;
    for layer in &report.layers {
        for z in &layer.eigenvalues {
            let s = scaled[k];
            rows.push(SpectrumCsvRow {
                layer: layer.layer,
                time: layer.time,
                re: z.re,
                im: z.im,
                re_scaled: s.re,
                im_scaled: s.im,
                inside_disk: s.inside_disk,
            });
            k += 1;
        }
    }
    out.csv("spectrum.csv", &rows)?;
    out.json("spectrum.json", &report)?;
    let inside = rows.iter().filter(|r| r.inside_disk).count();
    Ok(format!(
        "spectrum: {} layers, {inside}/{} eigenvalues inside the Euler disk at h = {h:e} -> {}",
        report.layers.len(),
        rows.len(),
        out.dir.display()
    ))
}

fn run_gradcheck(
    cfg: &ExperimentConfig,
    out: &Output,
    params: &Option<PathBuf>,
    epsilon: f64,
    samples: usize,
    tolerance: f64,
) -> Result<String> {
    let r = cfg.resolve()?;
    let p = params_or_init(params, &r)?;
    let net = network_for_params(&r.network, &p, None)?;
    let all = r.problem.samples(&r.problem.train)?;
    if samples == 0 {
        return Err(Error::config("--samples", "must be >= 1"));
    }
    let batch = &all[..samples.min(all.len())];
    let objective = net.objective(r.problem.spec.loss, r.training.gamma)?;
    let report = gradient_check(&objective, &p, batch, epsilon).map_err(|e| match e {
        Error::InvalidArgument(msg) => Error::config("--epsilon", msg),
        other => other,
    })?;
    out.json("gradcheck.json", &report)?;
    let line = format!(
        "gradcheck: {} parameters, {} samples, eps {epsilon:e}: max relative error {:.3e} at index {}",
        report.n_params,
        batch.len(),
        report.max_rel_error,
        report.worst_index
    );
    if !(report.max_rel_error < tolerance) {
        println!("{line}");
        return Err(Error::GradientMismatch {
            error: report.max_rel_error,
            tolerance,
        });
    }
    Ok(line)
}

#[derive(Serialize)]
struct BasisRow {
    t: f64,
    l: i64,
    value: f64,
}

fn run_basis(
    cfg: &ExperimentConfig,
    out: &Output,
    degree: Option<usize>,
    intervals: Option<usize>,
    samples: usize,
) -> Result<String> {
    let d = degree.unwrap_or(cfg.network.degree);
    let l = intervals.unwrap_or(cfg.network.intervals);
    if samples < 2 {
        return Err(Error::config("--samples", "need at least 2 sample points"));
    }
    let basis = SplineBasis::reference(d, l).map_err(|e| Error::config("network.L", e.to_string()))?;
    let mut rows = Vec::with_capacity(samples * basis.len());
    for k in 0..samples {
        let t = k as f64 / (samples - 1) as f64;
        for idx in basis.min_index()..=basis.max_index() {
            rows.push(BasisRow {
                t,
                l: idx,
                value: basis.eval(idx, t)?,
            });
        }
    }
    out.csv("basis.csv", &rows)?;
    Ok(format!(
        "basis: degree {d}, {l} intervals, {} functions at {samples} points -> {}",
        basis.len(),
        out.dir.display()
    ))
}

#[derive(Serialize)]
struct DatasetRow {
    split: &'static str,
    index: usize,
    x: f64,
    y: Option<f64>,
    target: f64,
}

fn dataset_rows(split: &'static str, data: &Dataset, rows: &mut Vec<DatasetRow>) {
    for (index, (x, t)) in data.inputs.iter().zip(&data.targets).enumerate() {
        rows.push(DatasetRow {
            split,
            index,
            x: x[0],
            y: x.get(1).copied(),
            target: match *t {
                Target::Scalar(v) => v,
                Target::Class(k) => k as f64,
            },
        });
    }
}

fn run_dataset(cfg: &ExperimentConfig, out: &Output, split: Split) -> Result<String> {
    let problem: Problem = cfg.build_problem()?;
    let mut rows = Vec::new();
    if split != Split::Validation {
        dataset_rows("train", &problem.train, &mut rows);
    }
    if split != Split::Train {
        dataset_rows("validation", &problem.validation, &mut rows);
    }
    out.csv("dataset.csv", &rows)?;
    Ok(format!(
        "dataset: {}, {} rows -> {}",
        problem.train.name,
        rows.len(),
        out.dir.display()
    ))
}

#[derive(Serialize)]
struct EvalReport {
    network: NetworkSpec,
    h: f64,
    train: Evaluation,
    validation: Evaluation,
}

fn run_eval(cfg: &ExperimentConfig, out: &Output, params: &Path, network_n: Option<usize>) -> Result<String> {
    let r = cfg.resolve()?;
    let p = load_params(params)?;
    if p.width != r.network.width {
        return Err(Error::config(
            "network.width",
            format!("params have width {}, problem needs {}", p.width, r.network.width),
        ));
    }
    let net = network_for_params(&r.network, &p, network_n)?;
    let train_eval = evaluate(&p, &net, &r.problem.spec, &r.problem.train)?;
    let val_eval = evaluate(&p, &net, &r.problem.spec, &r.problem.validation)?;
    let report = EvalReport {
        network: net,
        h: net.grid()?.h(),
        train: train_eval,
        validation: val_eval,
    };
    out.json("eval.json", &report)?;
    Ok(format!(
        "eval: {} {}: validation loss {:.3e}, accuracy {:.4} -> {}",
        r.problem.train.name,
        describe(&net),
        val_eval.loss,
        val_eval.accuracy,
        out.dir.display()
    ))
}
