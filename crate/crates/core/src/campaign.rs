//! Exploration campaigns and the design comparison harness.
//!
//! A campaign evaluates an initial design and then runs `cycles` rounds of:
//! refit the feasibility classifier, optionally refit the loss surrogate,
//! run MED, and append what was truly evaluated. In direct mode MED calls
//! the problem itself (infeasible points imputed), so its accepted points are
//! the new rows. In surrogate mode MED runs on the surrogate; only the
//! returned design points that the classifier calls feasible are evaluated,
//! as validation rows.
//!
//! Seeds: the initial design uses `derive_seed(seed, INITIAL_DESIGN)`; cycle
//! `c` (from 1) works from `derive_seed(seed, 1000 + c)`, from which the
//! classifier, surrogate and MED seeds are derived by their stream ids.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{dtlz2_mod, BenchError, EvaluationRecord, EvaluationTable, Problem, ProblemSpec, Source};
use crate::classify::{
    select_classifier, stratified_split, Classifier, ClassifierSpec, ClassifyError, ConfusionMetrics, Dataset,
    SelectionPolicy, DEFAULT_THRESHOLD,
};
use crate::design::{generate, min_pairwise_distance_rows, uniform_design, DesignError, DesignKind};
use crate::med::{
    impute_records, log_r_from_loss, med_generate_from, DirectLogResponse, ImputeMode, IterationTrace,
    LogResponseFunction, MedConfig, MedError,
};
use crate::surrogate::{fit_surrogate, LossSurrogate, SurrogateConfig, SurrogateError};
use crate::{par, rng, stats};

pub const STATE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("initial design of {n} points found no feasible point; enlarge the design or revisit the input box")]
    NoFeasibleInitial { n: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Med(#[from] MedError),
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialDesignConfig {
    pub kind: DesignKind,
    pub n: usize,
}

impl Default for InitialDesignConfig {
    fn default() -> Self {
        Self { kind: DesignKind::Maximin, n: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub enabled: bool,
    /// With more than one candidate, the preferred one on a stratified
    /// hold-out split is refitted on all rows.
    pub candidates: Vec<ClassifierSpec>,
    pub policy: SelectionPolicy,
    pub test_fraction: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            candidates: vec![ClassifierSpec::default()],
            policy: SelectionPolicy::default(),
            test_fraction: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub initial: InitialDesignConfig,
    /// `med.seed` is ignored; each cycle derives its own.
    #[serde(default)]
    pub med: MedConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    /// Absent means direct-evaluation mode.
    #[serde(default)]
    pub surrogate: Option<SurrogateConfig>,
    /// Feasibility probability a proposal needs to be validated.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default = "default_cycles")]
    pub cycles: usize,
    #[serde(default)]
    pub impute: ImputeMode,
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_cycles() -> usize {
    1
}

impl CampaignConfig {
    pub fn new(problem: ProblemSpec) -> Self {
        Self {
            problem,
            seed: 0,
            initial: InitialDesignConfig::default(),
            med: MedConfig::default(),
            classifier: ClassifierConfig::default(),
            surrogate: None,
            threshold: DEFAULT_THRESHOLD,
            cycles: 1,
            impute: ImputeMode::default(),
        }
    }

    pub fn validate(&self) -> Result<(), CampaignError> {
        let bad = |m: String| Err(CampaignError::InvalidConfig(m));
        if self.initial.n < 2 {
            return bad(format!("initial.n must be >= 2, got {}", self.initial.n));
        }
        if self.cycles < 1 {
            return bad("cycles must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold must lie in [0, 1], got {}", self.threshold));
        }
        if self.classifier.enabled && self.classifier.candidates.is_empty() {
            return bad("classifier.candidates is empty".into());
        }
        if !(self.classifier.test_fraction > 0.0 && self.classifier.test_fraction < 1.0) {
            return bad("classifier.test_fraction must lie in (0, 1)".into());
        }
        self.med.validate()?;
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        if self.surrogate.is_some() {
            Mode::Surrogate
        } else {
            Mode::Direct
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Direct,
    Surrogate,
}

/// Loss summaries over the feasible rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossMetrics {
    pub n: usize,
    pub n_feasible: usize,
    pub feasible_fraction: f64,
    pub min: Option<f64>,
    pub median: Option<f64>,
    pub sd: Option<f64>,
}

pub fn loss_metrics(records: &[EvaluationRecord]) -> LossMetrics {
    let losses: Vec<f64> = records.iter().filter_map(|r| r.loss).collect();
    let n = records.len();
    let some = |v: f64| v.is_finite().then_some(v);
    LossMetrics {
        n,
        n_feasible: losses.len(),
        feasible_fraction: if n == 0 { 0.0 } else { losses.len() as f64 / n as f64 },
        min: some(stats::min(&losses)),
        median: some(stats::median(&losses)),
        sd: some(stats::sd(&losses)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub mode: Mode,
    pub med_trace: Vec<IterationTrace>,
    pub proposed: usize,
    /// True evaluations spent in this cycle.
    pub evaluated: usize,
    /// Surrogate-mode proposals that failed the feasibility gate.
    pub rejected: Vec<Vec<f64>>,
    pub classifier_metrics: Option<Vec<ConfusionMetrics>>,
    pub metrics: LossMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub version: u32,
    pub problem: String,
    pub p: usize,
    pub q: usize,
    pub table: EvaluationTable,
    pub initial_metrics: LossMetrics,
    pub cycles: Vec<CycleRecord>,
    pub classifier: Option<Classifier>,
    pub surrogate: Option<LossSurrogate>,
}

impl CampaignState {
    pub fn cycles_done(&self) -> usize {
        self.cycles.len()
    }

    pub fn metrics(&self) -> LossMetrics {
        loss_metrics(&self.table.records)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("state serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, CampaignError> {
        let state: Self = serde_json::from_str(s).map_err(|e| CampaignError::Checkpoint(e.to_string()))?;
        if state.version != STATE_FORMAT_VERSION {
            return Err(CampaignError::Checkpoint(format!(
                "unsupported state version {} (expected {STATE_FORMAT_VERSION})",
                state.version
            )));
        }
        Ok(state)
    }
}

pub fn cycle_seed(seed: u64, cycle: usize) -> u64 {
    rng::derive_seed(seed, 1000 + cycle as u64)
}

fn fit_classifier(
    cfg: &ClassifierConfig,
    records: &[EvaluationRecord],
    threshold: f64,
    seed: u64,
) -> Result<Option<(Classifier, Option<Vec<ConfusionMetrics>>)>, CampaignError> {
    if !cfg.enabled {
        return Ok(None);
    }
    let x: Vec<Vec<f64>> = records.iter().map(|r| r.x.clone()).collect();
    let z: Vec<bool> = records.iter().map(|r| r.z).collect();
    if z.iter().all(|&v| v) || z.iter().all(|&v| !v) {
        log::warn!("all {} rows share one feasibility class; no classifier fitted", z.len());
        return Ok(None);
    }
    if cfg.candidates.len() == 1 {
        return Ok(Some((cfg.candidates[0].fit(&x, &z, seed)?, None)));
    }
    let (train, test) = stratified_split(&z, cfg.test_fraction, seed);
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<bool>) { idx.iter().map(|&i| (x[i].clone(), z[i])).unzip() };
    let (xtr, ztr) = pick(&train);
    let (xte, zte) = pick(&test);
    let sel = select_classifier(
        &cfg.candidates,
        Dataset { x: &xtr, z: &ztr },
        Dataset { x: &xte, z: &zte },
        cfg.policy,
        threshold,
        seed,
    )?;
    let refit = cfg.candidates[sel.index].fit(&x, &z, rng::derive_seed(seed, sel.index as u64))?;
    Ok(Some((refit, Some(sel.metrics))))
}

struct SurrogateLogResponse<'a>(&'a LossSurrogate);

impl LogResponseFunction for SurrogateLogResponse<'_> {
    fn log_r(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>, MedError> {
        let losses = self.0.predict_batch(xs).map_err(|e| MedError::Evaluation {
            x: xs.first().cloned().unwrap_or_default(),
            message: e.to_string(),
        })?;
        Ok(losses.into_iter().map(log_r_from_loss).collect())
    }
}

/// Evaluates the initial design and returns the starting state.
pub fn initialize(cfg: &CampaignConfig, problem: &Problem) -> Result<CampaignState, CampaignError> {
    cfg.validate()?;
    let design = generate(
        cfg.initial.kind,
        cfg.initial.n,
        problem.p(),
        rng::derive_seed(cfg.seed, rng::streams::INITIAL_DESIGN),
    )?;
    let records: Vec<EvaluationRecord> =
        problem.evaluate_batch(&design.to_rows())?.into_iter().map(|r| r.with_source(Source::Initial)).collect();
    if records.iter().all(|r| !r.z) {
        return Err(CampaignError::NoFeasibleInitial { n: records.len() });
    }
    let initial_metrics = loss_metrics(&records);
    Ok(CampaignState {
        version: STATE_FORMAT_VERSION,
        problem: problem.name().to_string(),
        p: problem.p(),
        q: problem.q(),
        table: EvaluationTable::new(records),
        initial_metrics,
        cycles: Vec::new(),
        classifier: None,
        surrogate: None,
    })
}

/// Runs one cycle and appends its rows and record to `state`.
pub fn run_cycle(cfg: &CampaignConfig, problem: &Problem, state: &mut CampaignState) -> Result<(), CampaignError> {
    let cycle = state.cycles_done() + 1;
    let cs = cycle_seed(cfg.seed, cycle);
    let records = &state.table.records;

    let fitted = fit_classifier(&cfg.classifier, records, cfg.threshold, rng::derive_seed(cs, rng::streams::CLASSIFIER))?;
    let (classifier, classifier_metrics) = match fitted {
        Some((c, m)) => (Some(c), m),
        None => (None, None),
    };

    let xs: Vec<Vec<f64>> = records.iter().map(|r| r.x.clone()).collect();
    let log_r: Vec<f64> = impute_records(records, cfg.impute)?.into_iter().map(log_r_from_loss).collect();
    let med_cfg = MedConfig { seed: rng::derive_seed(cs, rng::streams::MED), ..cfg.med.clone() };
    let before = state.table.len();

    let (trace, proposed, rejected, new_rows, surrogate) = match &cfg.surrogate {
        None => {
            let f = DirectLogResponse::new(problem, records, cfg.impute, Source::Med);
            let res = med_generate_from(&xs, &log_r, &f, &med_cfg)?;
            let rows = f.into_records().split_off(before);
            (res.trace, rows.len(), Vec::new(), rows, None)
        }
        Some(scfg) => {
            let (s, report) = fit_surrogate(
                records,
                problem.targets(),
                problem.weights(),
                classifier.clone(),
                cfg.threshold,
                scfg,
                rng::derive_seed(cs, rng::streams::SURROGATE),
            )?;
            log::info!(
                "cycle {cycle}: surrogate models {} responses ({} screened out)",
                s.responses.len(),
                report.screened_out.len()
            );
            let res = med_generate_from(&xs, &log_r, &SurrogateLogResponse(&s), &med_cfg)?;
            let proposals = res.design_points();
            let probs = match &classifier {
                Some(c) => c.predict_batch(&proposals)?,
                None => vec![1.0; proposals.len()],
            };
            let (pass, fail): (Vec<_>, Vec<_>) = proposals.into_iter().zip(probs).partition(|(_, pr)| *pr >= cfg.threshold);
            let pass: Vec<Vec<f64>> = pass.into_iter().map(|(x, _)| x).collect();
            let rows: Vec<EvaluationRecord> =
                problem.evaluate_batch(&pass)?.into_iter().map(|r| r.with_source(Source::Validation)).collect();
            (res.trace, med_cfg.n, fail.into_iter().map(|(x, _)| x).collect(), rows, Some(s))
        }
    };
    let evaluated = new_rows.len();
    state.table.extend(new_rows);
    let metrics = state.metrics();
    log::info!(
        "cycle {cycle}: {evaluated} true evaluations, min loss {:?}, feasible fraction {:.3}",
        metrics.min,
        metrics.feasible_fraction
    );
    state.cycles.push(CycleRecord {
        cycle,
        mode: cfg.mode(),
        med_trace: trace,
        proposed,
        evaluated,
        rejected,
        classifier_metrics,
        metrics,
    });
    state.classifier = classifier;
    state.surrogate = surrogate;
    Ok(())
}

/// Runs the campaign to `cfg.cycles`, starting from `resume` when given.
/// `checkpoint` sees the state after every completed cycle.
pub fn run_exploration(
    cfg: &CampaignConfig,
    resume: Option<CampaignState>,
    mut checkpoint: impl FnMut(&CampaignState) -> Result<(), CampaignError>,
) -> Result<CampaignState, CampaignError> {
    cfg.validate()?;
    let problem = cfg.problem.build()?;
    let mut state = match resume {
        Some(s) => {
            if s.p != problem.p() || s.q != problem.q() {
                return Err(CampaignError::Checkpoint(format!(
                    "checkpoint has p={}, q={} but the problem has p={}, q={}",
                    s.p,
                    s.q,
                    problem.p(),
                    problem.q()
                )));
            }
            if s.cycles_done() > cfg.cycles {
                return Err(CampaignError::Checkpoint(format!(
                    "checkpoint already has {} cycles, config asks for {}",
                    s.cycles_done(),
                    cfg.cycles
                )));
            }
            s
        }
        None => initialize(cfg, &problem)?,
    };
    while state.cycles_done() < cfg.cycles {
        run_cycle(cfg, &problem, &mut state)?;
        checkpoint(&state)?;
    }
    Ok(state)
}

/// Points with loss below `cutoff` and their smallest pairwise distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRegion {
    pub points: Vec<Vec<f64>>,
    pub count: usize,
    pub min_distance: Option<f64>,
}

pub fn best_region_points(records: &[EvaluationRecord], cutoff: f64) -> BestRegion {
    let points: Vec<Vec<f64>> =
        records.iter().filter(|r| r.loss.is_some_and(|l| l < cutoff)).map(|r| r.x.clone()).collect();
    let min_distance = if points.len() >= 2 { min_pairwise_distance_rows(&points).ok() } else { None };
    BestRegion { count: points.len(), points, min_distance }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub seed_base: u64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub initial: InitialDesignConfig,
    #[serde(default)]
    pub med: MedConfig,
    /// Size of the uniform arm; absent means the proposed arm's size.
    #[serde(default)]
    pub uniform_n: Option<usize>,
    #[serde(default)]
    pub impute: ImputeMode,
}

fn default_reps() -> usize {
    100
}

impl CompareConfig {
    fn proposed(&self, seed: u64) -> CampaignConfig {
        CampaignConfig {
            problem: self.problem.clone(),
            seed,
            initial: self.initial.clone(),
            med: self.med.clone(),
            classifier: ClassifierConfig { enabled: false, ..Default::default() },
            surrogate: None,
            threshold: DEFAULT_THRESHOLD,
            cycles: 1,
            impute: self.impute,
        }
    }

    pub fn proposed_size(&self) -> usize {
        self.initial.n + self.med.n * self.med.iterations
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionStats {
    pub rep: usize,
    pub seed: u64,
    pub proposed: LossMetrics,
    pub uniform: LossMetrics,
    /// `min(uniform) − min(proposed)`.
    pub delta_min: f64,
    pub delta_median: f64,
    /// `sd(uniform) / sd(proposed)`.
    pub sd_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonStats {
    pub reps: Vec<RepetitionStats>,
    pub min_win_rate: f64,
    pub median_win_rate: f64,
    pub sd_win_rate: f64,
}

impl ComparisonStats {
    pub fn from_reps(reps: Vec<RepetitionStats>) -> Self {
        let rate = |f: &dyn Fn(&RepetitionStats) -> bool| {
            if reps.is_empty() {
                0.0
            } else {
                reps.iter().filter(|r| f(r)).count() as f64 / reps.len() as f64
            }
        };
        let min_win_rate = rate(&|r| r.delta_min > 0.0);
        let median_win_rate = rate(&|r| r.delta_median > 0.0);
        let sd_win_rate = rate(&|r| r.sd_ratio > 1.0);
        Self { reps, min_win_rate, median_win_rate, sd_win_rate }
    }

    /// `rep,seed,delta_min,delta_median,sd_ratio,...` one row per repetition.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "rep",
            "seed",
            "delta_min",
            "delta_median",
            "sd_ratio",
            "proposed_min",
            "proposed_median",
            "proposed_sd",
            "proposed_feasible",
            "uniform_min",
            "uniform_median",
            "uniform_sd",
            "uniform_feasible",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.reps {
            out.write_record([
                r.rep.to_string(),
                r.seed.to_string(),
                r.delta_min.to_string(),
                r.delta_median.to_string(),
                r.sd_ratio.to_string(),
                opt(r.proposed.min),
                opt(r.proposed.median),
                opt(r.proposed.sd),
                r.proposed.n_feasible.to_string(),
                opt(r.uniform.min),
                opt(r.uniform.median),
                opt(r.uniform.sd),
                r.uniform.n_feasible.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn difference(a: Option<f64>, b: Option<f64>) -> f64 {
    match (a, b) {
        (Some(a), Some(b)) => a - b,
        _ => f64::NAN,
    }
}

/// One repetition: the proposed pipeline (initial design + direct MED) and
/// a uniform design of matching size, both rooted at `seed`. Infeasible
/// points contribute no loss to either arm.
pub fn compare_once(cfg: &CompareConfig, rep: usize, seed: u64) -> Result<RepetitionStats, CampaignError> {
    let state = run_exploration(&cfg.proposed(seed), None, |_| Ok(()))?;
    let problem = cfg.problem.build()?;
    let n_uniform = cfg.uniform_n.unwrap_or_else(|| cfg.proposed_size());
    let design = uniform_design(n_uniform, problem.p(), rng::derive_seed(seed, rng::streams::UNIFORM_ARM))?;
    let uniform: Vec<EvaluationRecord> =
        problem.evaluate_batch(&design.to_rows())?.into_iter().map(|r| r.with_source(Source::Uniform)).collect();
    let proposed = state.metrics();
    let uniform = loss_metrics(&uniform);
    let sd_ratio = match (uniform.sd, proposed.sd) {
        (Some(u), Some(p)) if p > 0.0 => u / p,
        _ => f64::NAN,
    };
    Ok(RepetitionStats {
        rep,
        seed,
        delta_min: difference(uniform.min, proposed.min),
        delta_median: difference(uniform.median, proposed.median),
        sd_ratio,
        proposed,
        uniform,
    })
}

/// Repetition `i` uses seed `seed_base + i` for both arms. Repetitions run
/// in parallel; results are in repetition order.
pub fn compare_designs(cfg: &CompareConfig) -> Result<ComparisonStats, CampaignError> {
    if cfg.reps < 1 {
        return Err(CampaignError::InvalidConfig("reps must be >= 1".into()));
    }
    cfg.med.validate()?;
    let reps = par::map_range(cfg.reps, |i| compare_once(cfg, i, cfg.seed_base.wrapping_add(i as u64)));
    Ok(ComparisonStats::from_reps(reps.into_iter().collect::<Result<_, _>>()?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub p: usize,
    pub n: usize,
    pub repeat: usize,
    pub seconds: f64,
}

/// Wall-clock time of one MED iteration adding `n` points to an `n`-point
/// maximin LHD on `dtlz2_mod(p)`, for every `(p, n)` pair and repeat. Only
/// the MED step is timed.
pub fn timing_profile(ps: &[usize], ns: &[usize], seed: u64, repeats: usize) -> Result<Vec<TimingRow>, CampaignError> {
    let mut rows = Vec::new();
    for &p in ps {
        let problem = dtlz2_mod(p)?;
        for &n in ns {
            for repeat in 0..repeats {
                let s = rng::derive_seed(seed, (p * 1_000_003 + n * 101 + repeat) as u64);
                let design = generate(DesignKind::Maximin, n, p, rng::derive_seed(s, rng::streams::INITIAL_DESIGN))?;
                let xs = design.to_rows();
                let init = problem.evaluate_batch(&xs)?;
                let lr: Vec<f64> = impute_records(&init, ImputeMode::MaxObserved)?.into_iter().map(log_r_from_loss).collect();
                let cfg = MedConfig { n, iterations: 1, seed: rng::derive_seed(s, rng::streams::MED), ..Default::default() };
                let f = DirectLogResponse::new(&problem, &init, ImputeMode::MaxObserved, Source::Med);
                let start = Instant::now();
                med_generate_from(&xs, &lr, &f, &cfg)?;
                rows.push(TimingRow { p, n, repeat, seconds: start.elapsed().as_secs_f64() });
            }
        }
    }
    Ok(rows)
}

pub fn write_timing_csv<W: std::io::Write>(rows: &[TimingRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["p", "n", "repeat", "seconds"])?;
    for r in rows {
        out.write_record([r.p.to_string(), r.n.to_string(), r.repeat.to_string(), format!("{:.6}", r.seconds)])?;
    }
    out.flush()?;
    Ok(())
}
