//! `kcrr`: runs benchmark plans, theory checks and the rate probe, writing
//! CSV, markdown and a JSON-lines run log to the output directory.
//!
//! Settings are resolved as command-line flag, then plan file, then built-in
//! default.

mod tables;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use kcrr::data::NoiseFamily;
use kcrr::evalsel::{metric_csv, run_real, run_synthetic, BenchmarkReport, Metric, Plan};
use kcrr::par::Exec;
use kcrr::theory::{self, Check, CheckOptions, QuadSettings, RateConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;

fn version() -> &'static str {
    option_env!("KCRR_GIT_VERSION").unwrap_or(concat!("v", env!("CARGO_PKG_VERSION")))
}

#[derive(Parser, Debug)]
#[command(name = "kcrr", version = version(), about = "Kernel Cauchy ridge regression benchmarks and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Friedman benchmark with calibrated heavy-tailed noise.
    Synth(Common),
    /// Benchmark on registered CSV datasets.
    Real(Common),
    /// Numerical checks of Cauchy-loss properties.
    Theory {
        #[command(flatten)]
        common: Common,
        /// Comma-separated subset of c1, calibration, variance, clipping,
        /// optimality, lipschitz.
        #[arg(long, value_delimiter = ',')]
        checks: Vec<String>,
        /// Comma-separated subset of gaussian, cauchy, pareto.
        #[arg(long, value_delimiter = ',')]
        noise: Vec<String>,
    },
    /// Empirical learning-rate probe on a one-dimensional target.
    Rate(Common),
}

#[derive(Args, Debug, Clone, Serialize)]
struct Common {
    /// TOML plan file.
    #[arg(long)]
    plan: Option<PathBuf>,
    /// Output directory, created if absent.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed; overrides the plan (default 42).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Progress on stderr; repeat for more.
    #[arg(short, long, action = clap::ArgAction::Count)]
    verbose: u8,
}

/// Plan file for `theory` and `rate`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TheoryPlan {
    checks: Option<Vec<Check>>,
    noises: Option<Vec<NoiseFamily>>,
    options: CheckOptions,
    rate: RateConfig,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 1,
            Failure::Numerical(_) => 2,
        }
    }
}

impl From<kcrr::Error> for Failure {
    fn from(e: kcrr::Error) -> Self {
        if e.is_numerical() { Failure::Numerical(e.to_string()) } else { Failure::Config(e.to_string()) }
    }
}

struct RunLog {
    file: fs::File,
    path: PathBuf,
}

impl RunLog {
    fn create(dir: &Path) -> Result<Self, Failure> {
        let path = dir.join("runlog.jsonl");
        let file = fs::File::create(&path).map_err(|e| io_failure(&path, e))?;
        Ok(Self { file, path })
    }

    fn emit(&mut self, v: serde_json::Value) -> Result<(), Failure> {
        writeln!(self.file, "{v}").map_err(|e| io_failure(&self.path, e))
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| io_failure(&path, e))
}

fn prepare(common: &Common) -> Result<(), Failure> {
    if let Some(t) = common.threads {
        if t == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure::Config(format!("thread pool: {e}")))?;
    }
    fs::create_dir_all(&common.out).map_err(|e| io_failure(&common.out, e))
}

fn start_log(common: &Common, subcommand: &str, config: serde_json::Value) -> Result<RunLog, Failure> {
    let mut log = RunLog::create(&common.out)?;
    log.emit(json!({
        "event": "config",
        "version": version(),
        "subcommand": subcommand,
        "flags": common,
        "threads": rayon::current_num_threads(),
        "config": config,
    }))?;
    Ok(log)
}

fn load_plan(common: &Common) -> Result<Plan, Failure> {
    let path = common
        .plan
        .as_ref()
        .ok_or_else(|| Failure::Config("a benchmark needs --plan <file.toml>".into()))?;
    let mut plan = Plan::load(path)?;
    if let Some(s) = common.seed {
        plan.seed = s;
    }
    Ok(plan)
}

fn benchmark(common: &Common, real: bool) -> Result<(), Failure> {
    let plan = load_plan(common)?;
    prepare(common)?;
    let name = if real { "real" } else { "synth" };
    let mut log = start_log(common, name, serde_json::to_value(&plan).expect("plan serializes"))?;
    if common.verbose > 0 {
        eprintln!("kcrr {name}: seed {}, {} reps, {} folds", plan.seed, plan.reps, plan.folds);
    }
    let t = Instant::now();
    let report = if real { run_real(&plan, Exec::default())? } else { run_synthetic(&plan, Exec::default())? };
    log.emit(json!({"event": "phase", "phase": "benchmark", "seconds": t.elapsed().as_secs_f64()}))?;
    log_tasks(&mut log, &report)?;
    let t = Instant::now();
    write_file(&common.out, "mae.csv", &metric_csv(&report, Metric::Mae)?)?;
    write_file(&common.out, "rsse.csv", &metric_csv(&report, Metric::Rsse)?)?;
    write_file(&common.out, "tables.md", &tables::render_tables(&report))?;
    log.emit(json!({"event": "phase", "phase": "write", "seconds": t.elapsed().as_secs_f64()}))?;
    if common.verbose > 0 {
        eprint!("{}", tables::render_tables(&report));
    }
    let failed = report.cells.iter().flat_map(|c| &c.results).filter(|r| r.mae.is_none()).count();
    log.emit(json!({"event": "done", "notes": report.notes, "failed_estimators": failed}))?;
    if failed > 0 {
        return Err(Failure::Numerical(format!(
            "{failed} estimator cell(s) failed in every repetition; see {}",
            log.path.display()
        )));
    }
    Ok(())
}

fn log_tasks(log: &mut RunLog, report: &BenchmarkReport) -> Result<(), Failure> {
    for c in &report.cells {
        log.emit(json!({"event": "cell", "dataset": c.dataset, "noise": c.noise, "noise_scale": c.noise_scale}))?;
        for r in &c.results {
            for rep in &r.reps {
                log.emit(json!({
                    "event": "task",
                    "dataset": c.dataset,
                    "noise": c.noise,
                    "estimator": r.estimator.name(),
                    "rep": rep.rep,
                    "selected": rep.selected,
                    "cv_mae": rep.cv_mae,
                    "invalid_points": rep.invalid_points,
                    "test_mae": rep.test_mae,
                    "test_rsse": rep.test_rsse,
                    "error": rep.error,
                    "seconds": rep.seconds,
                }))?;
            }
        }
    }
    Ok(())
}

fn load_theory_plan(common: &Common) -> Result<TheoryPlan, Failure> {
    let mut plan = match &common.plan {
        None => TheoryPlan::default(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_failure(p, e))?;
            toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?
        }
    };
    if let Some(s) = common.seed {
        plan.options.seed = s;
        plan.rate.seed = s;
    }
    Ok(plan)
}

fn finish_theory(common: &Common, log: &mut RunLog, reports: &[theory::TheoryReport]) -> Result<(), Failure> {
    write_file(&common.out, "theory.csv", &theory::theory_csv(reports))?;
    let failed: Vec<String> =
        reports.iter().filter(|r| !r.passed).map(|r| format!("{}/{}", r.check, r.noise)).collect();
    for r in reports {
        if common.verbose > 0 {
            eprintln!("{:<12} {:<9} {}", r.check, r.noise, if r.passed { "pass" } else { "FAIL" });
        }
        log.emit(json!({"event": "check", "report": r}))?;
    }
    log.emit(json!({"event": "done", "failed": failed}))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numerical(format!("checks failed: {}", failed.join(", "))))
    }
}

fn theory_cmd(common: &Common, checks: &[String], noise: &[String]) -> Result<(), Failure> {
    let plan = load_theory_plan(common)?;
    let checks: Vec<Check> = if checks.is_empty() {
        plan.checks.clone().unwrap_or_else(|| Check::ALL.to_vec())
    } else {
        checks.iter().map(|c| Check::parse(c.trim())).collect::<kcrr::Result<_>>()?
    };
    let noises: Vec<NoiseFamily> = if noise.is_empty() {
        plan.noises.clone().unwrap_or_else(|| vec![NoiseFamily::Gaussian, NoiseFamily::Cauchy, NoiseFamily::Pareto])
    } else {
        noise.iter().map(|n| parse_noise(n.trim())).collect::<Result<_, _>>()?
    };
    prepare(common)?;
    let config = json!({"checks": checks, "noises": noises, "options": plan.options});
    let mut log = start_log(common, "theory", config)?;
    let t = Instant::now();
    let reports = theory::run_checks(&checks, &noises, &plan.options, &QuadSettings::default(), Exec::default())?;
    log.emit(json!({"event": "phase", "phase": "checks", "seconds": t.elapsed().as_secs_f64()}))?;
    finish_theory(common, &mut log, &reports)
}

fn parse_noise(s: &str) -> Result<NoiseFamily, Failure> {
    match s {
        "gaussian" => Ok(NoiseFamily::Gaussian),
        "cauchy" => Ok(NoiseFamily::Cauchy),
        "pareto" => Ok(NoiseFamily::Pareto),
        other => Err(Failure::Config(format!("unknown noise {other:?}; expected gaussian, cauchy or pareto"))),
    }
}

fn rate_cmd(common: &Common) -> Result<(), Failure> {
    let plan = load_theory_plan(common)?;
    prepare(common)?;
    let mut log = start_log(common, "rate", serde_json::to_value(&plan.rate).expect("config serializes"))?;
    let t = Instant::now();
    let r = theory::rate_probe(&plan.rate, Exec::default())?;
    log.emit(json!({"event": "phase", "phase": "rate", "seconds": t.elapsed().as_secs_f64()}))?;
    for (n, errs) in r.n_list.iter().zip(&r.errors) {
        log.emit(json!({"event": "task", "n": n, "squared_l2_errors": errs}))?;
    }
    finish_theory(common, &mut log, &[theory::rate_report(&r)])
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Synth(c) => benchmark(c, false),
        Command::Real(c) => benchmark(c, true),
        Command::Theory { common, checks, noise } => theory_cmd(common, checks, noise),
        Command::Rate(c) => rate_cmd(c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (kind, msg) = match &f {
                Failure::Config(m) => ("configuration error", m),
                Failure::Numerical(m) => ("numerical failure", m),
            };
            eprintln!("kcrr: {kind}: {msg}");
            ExitCode::from(f.code())
        }
    }
}
