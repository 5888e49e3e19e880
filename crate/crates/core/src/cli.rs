//! Command-line front end.
//!
//! Every command writes into an output directory (`--out`, else
//! `$MEDEXPLORE_OUT_DIR`, else `./out`) and finishes with `manifest.json`.
//! Files are written to a temporary sibling and renamed into place. Exit
//! codes: 0 success, 2 usage or config error, 3 runtime error.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::campaign::{
    best_region_points, compare_designs, run_exploration, timing_profile, write_timing_csv, CampaignConfig,
    CampaignError, CampaignState, CompareConfig, LossMetrics,
};
use crate::design::{generate, DesignKind};
use crate::{par, stats};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const OUT_DIR_ENV: &str = "MEDEXPLORE_OUT_DIR";

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "medexplore", version, about = "Explore expensive multi-response systems with minimum energy designs")]
pub struct Cli {
    /// Worker threads (0 = all cores). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a space-filling design in [0,1]^p.
    Design(DesignArgs),
    /// Run an exploration campaign from a config file.
    Explore(ExploreArgs),
    /// Compare the proposed design against uniform designs.
    Compare(CompareArgs),
    /// Time MED on dtlz2_mod over a grid of dimensions and sizes.
    Bench(BenchArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct DesignArgs {
    #[arg(long = "type", value_enum)]
    pub kind: DesignKind,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub p: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExploreArgs {
    pub config: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub p: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<CampaignError> for CliError {
    fn from(e: CampaignError) -> Self {
        match e {
            CampaignError::InvalidConfig(_) | CampaignError::Checkpoint(_) => CliError::Usage(e.to_string()),
            CampaignError::Med(crate::med::MedError::InvalidArgument(_)) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExploreFile {
    schema_version: u32,
    campaign: CampaignConfig,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompareFile {
    schema_version: u32,
    compare: CompareConfig,
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path, version: impl Fn(&T) -> u32) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let parsed: T = toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let v = version(&parsed);
    if v != CONFIG_SCHEMA_VERSION {
        return Err(CliError::Usage(format!(
            "{}: schema_version {v} is not supported (expected {CONFIG_SCHEMA_VERSION})",
            path.display()
        )));
    }
    Ok(parsed)
}

/// sha256 of the config's canonical JSON form (keys sorted), so it does not
/// depend on key order or formatting in the file.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    fn canonical(v: serde_json::Value) -> serde_json::Value {
        match v {
            serde_json::Value::Object(m) => {
                let mut entries: Vec<_> = m.into_iter().collect();
                entries.sort_by(|a, b| a.0.cmp(&b.0));
                serde_json::Value::Object(entries.into_iter().map(|(k, v)| (k, canonical(v))).collect())
            }
            serde_json::Value::Array(a) => serde_json::Value::Array(a.into_iter().map(canonical).collect()),
            other => other,
        }
    }
    let value = canonical(serde_json::to_value(config).expect("config serializes"));
    hex::encode(Sha256::digest(value.to_string().as_bytes()))
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

#[derive(Debug, Serialize)]
struct OutputFile {
    path: String,
    sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    tool: &'static str,
    version: &'static str,
    command: String,
    config_hash: String,
    seed: u64,
    threads: usize,
    started_at: String,
    finished_at: String,
    outputs: Vec<OutputFile>,
}

struct Run {
    dir: PathBuf,
    command: &'static str,
    threads: usize,
    started_at: String,
    outputs: Vec<OutputFile>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl Run {
    fn start(dir: PathBuf, command: &'static str, threads: usize) -> Self {
        Self { dir, command, threads, started_at: now(), outputs: Vec::new() }
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.dir.join(name), bytes).map_err(|e| runtime(format!("writing {name}: {e}")))?;
        let sha256 = hex::encode(Sha256::digest(bytes));
        match self.outputs.iter_mut().find(|o| o.path == name) {
            Some(o) => o.sha256 = sha256,
            None => self.outputs.push(OutputFile { path: name.to_string(), sha256 }),
        }
        Ok(())
    }

    fn finish(mut self, config_hash: String, seed: u64) -> Result<(), CliError> {
        self.outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: self.command.to_string(),
            config_hash,
            seed,
            threads: self.threads,
            started_at: self.started_at,
            finished_at: now(),
            outputs: self.outputs,
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        write_atomic(&self.dir.join("manifest.json"), json.as_bytes()).map_err(runtime)
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(runtime)?;
    Ok(buf)
}

fn cmd_design(args: &DesignArgs, threads: usize) -> Result<(), CliError> {
    let d = generate(args.kind, args.n, args.p, args.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut run = Run::start(out_dir(&args.out), "design", threads);
    let bytes = csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record((1..=args.p).map(|j| format!("x{j}")))?;
        for row in d.rows() {
            w.write_record(row.iter().map(f64::to_string))?;
        }
        w.flush()?;
        Ok(())
    })?;
    run.write("design.csv", &bytes)?;
    run.finish(config_hash(args), args.seed)
}

#[derive(Debug, Serialize)]
struct ExploreReport<'a> {
    problem: &'a str,
    mode: &'static str,
    cycles: usize,
    evaluations: usize,
    initial: &'a LossMetrics,
    per_cycle: Vec<&'a LossMetrics>,
    final_metrics: LossMetrics,
    best_x: Option<&'a [f64]>,
    best_loss: Option<f64>,
    best_region_cutoff: f64,
    best_region_count: usize,
    best_region_min_distance: Option<f64>,
}

/// Loss cutoff of the reported best region: the 10% quantile of the
/// feasible losses.
fn best_region_cutoff(state: &CampaignState) -> f64 {
    let mut l = state.table.feasible_losses();
    l.sort_by(f64::total_cmp);
    if l.is_empty() {
        return 0.0;
    }
    let k = ((l.len() as f64 * 0.1).ceil() as usize).clamp(1, l.len());
    if k < l.len() {
        0.5 * (l[k - 1] + l[k])
    } else {
        f64::INFINITY
    }
}

fn explore_report(cfg: &CampaignConfig, state: &CampaignState) -> String {
    let best = state
        .table
        .records
        .iter()
        .filter(|r| r.loss.is_some())
        .min_by(|a, b| a.loss.unwrap_or(f64::INFINITY).total_cmp(&b.loss.unwrap_or(f64::INFINITY)));
    let cutoff = best_region_cutoff(state);
    let region = best_region_points(&state.table.records, cutoff);
    let report = ExploreReport {
        problem: &state.problem,
        mode: if cfg.surrogate.is_some() { "surrogate" } else { "direct" },
        cycles: state.cycles_done(),
        evaluations: state.table.len(),
        initial: &state.initial_metrics,
        per_cycle: state.cycles.iter().map(|c| &c.metrics).collect(),
        final_metrics: state.metrics(),
        best_x: best.map(|r| r.x.as_slice()),
        best_loss: best.and_then(|r| r.loss),
        best_region_cutoff: cutoff,
        best_region_count: region.count,
        best_region_min_distance: region.min_distance,
    };
    serde_json::to_string_pretty(&report).expect("report serializes")
}

fn table_csv(state: &CampaignState) -> Result<Vec<u8>, CliError> {
    csv_bytes(|buf| state.table.write_csv(buf, state.p, state.q))
}

fn cmd_explore(args: &ExploreArgs, threads: usize) -> Result<(), CliError> {
    let file: ExploreFile = read_config(&args.config, |f: &ExploreFile| f.schema_version)?;
    let cfg = file.campaign;
    cfg.validate()?;
    cfg.problem.build().map_err(|e| CliError::Usage(format!("{}: problem: {e}", args.config.display())))?;
    let resume = match &args.resume {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            Some(CampaignState::from_json(&text)?)
        }
        None => None,
    };
    let mut run = Run::start(out_dir(&args.out), "explore", threads);
    let mut write_err = None;
    let state = run_exploration(&cfg, resume, |state| {
        let result = table_csv(state)
            .and_then(|csv| run.write("evaluations.csv", &csv))
            .and_then(|_| run.write("checkpoint.json", state.to_json().as_bytes()));
        if let Err(e) = result {
            write_err = Some(e);
            return Err(CampaignError::Checkpoint("could not write checkpoint".into()));
        }
        Ok(())
    });
    if let Some(e) = write_err {
        return Err(e);
    }
    let state = state?;
    run.write("evaluations.csv", &table_csv(&state)?)?;
    run.write("checkpoint.json", state.to_json().as_bytes())?;
    run.write("report.json", explore_report(&cfg, &state).as_bytes())?;
    run.finish(config_hash(&cfg), cfg.seed)
}

#[derive(Debug, Serialize)]
struct CompareSummary {
    problem: String,
    reps: usize,
    min_win_rate: f64,
    median_win_rate: f64,
    sd_win_rate: f64,
    median_delta_min: f64,
    median_delta_median: f64,
    median_sd_ratio: f64,
}

fn cmd_compare(args: &CompareArgs, threads: usize) -> Result<(), CliError> {
    let file: CompareFile = read_config(&args.config, |f: &CompareFile| f.schema_version)?;
    let cfg = file.compare;
    if cfg.reps < 1 {
        return Err(CliError::Usage(format!("{}: compare.reps must be >= 1", args.config.display())));
    }
    let problem =
        cfg.problem.build().map_err(|e| CliError::Usage(format!("{}: problem: {e}", args.config.display())))?;
    let mut run = Run::start(out_dir(&args.out), "compare", threads);
    let stats = compare_designs(&cfg)?;
    let col = |f: fn(&crate::campaign::RepetitionStats) -> f64| stats.reps.iter().map(f).collect::<Vec<_>>();
    let summary = CompareSummary {
        problem: problem.name().to_string(),
        reps: stats.reps.len(),
        min_win_rate: stats.min_win_rate,
        median_win_rate: stats.median_win_rate,
        sd_win_rate: stats.sd_win_rate,
        median_delta_min: stats::median(&col(|r| r.delta_min)),
        median_delta_median: stats::median(&col(|r| r.delta_median)),
        median_sd_ratio: stats::median(&col(|r| r.sd_ratio)),
    };
    run.write("comparison.csv", &csv_bytes(|buf| stats.write_csv(buf))?)?;
    run.write("summary.json", serde_json::to_string_pretty(&summary).expect("summary serializes").as_bytes())?;
    run.finish(config_hash(&cfg), cfg.seed_base)
}

fn cmd_bench(args: &BenchArgs, threads: usize) -> Result<(), CliError> {
    if let Some(p) = args.p.iter().find(|&&p| p < 4) {
        return Err(CliError::Usage(format!("--p values must be >= 4, got {p}")));
    }
    if let Some(n) = args.n.iter().find(|&&n| n < 2) {
        return Err(CliError::Usage(format!("--n values must be >= 2, got {n}")));
    }
    if args.repeats < 1 {
        return Err(CliError::Usage("--repeats must be >= 1".into()));
    }
    let mut run = Run::start(out_dir(&args.out), "bench", threads);
    let rows = timing_profile(&args.p, &args.n, args.seed, args.repeats)?;
    run.write("timing.csv", &csv_bytes(|buf| write_timing_csv(&rows, buf))?)?;
    run.finish(config_hash(args), args.seed)
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let threads = cli.threads;
    par::with_threads(threads, move || match &cli.command {
        Command::Design(a) => cmd_design(a, threads),
        Command::Explore(a) => cmd_explore(a, threads),
        Command::Compare(a) => cmd_compare(a, threads),
        Command::Bench(a) => cmd_bench(a, threads),
    })
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with_args(args: impl IntoIterator<Item = std::ffi::OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
