//! Minimum energy designs.
//!
//! Each point carries a charge `q(x) = r(x)^{−1/(2p)}` with `r = 1/L`, and a
//! design is good when its potential energy `Σ_{i<j} q_i q_j / d_ij` is small:
//! points crowd where the loss is low but still repel each other. Charges are
//! handled as logarithms throughout.
//!
//! [`med_generate`] grows a design sequentially. Every iteration draws
//! candidates around the current design (Gaussian jitter with a shrinking
//! scale, plus a share of uniform draws), scores their log r with a cheap
//! proxy fitted to the evaluations so far, and greedily accepts the `n`
//! candidates with the smallest energy increment against everything already
//! placed. Only the accepted points are evaluated, so a run costs exactly
//! `K·n` evaluations of `f`.

use std::sync::Mutex;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{BenchError, EvaluationRecord, EvaluationTable, Problem, Source};
use crate::classify::{Classifier, ClassifyError};
use crate::design::{sq_dist, DesignMatrix};
use crate::gp_ei::{fit_gp, GpConfig, GpModel};
use crate::rng;

/// Losses are floored here before taking logs.
pub const LOSS_FLOOR: f64 = 1e-12;
/// Candidates closer than this to a placed point are discarded.
pub const DUPLICATE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MedError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("initial design found no feasible points")]
    NoFeasiblePoints,
    #[error("points {0} and {1} coincide; energy is infinite")]
    CoincidentPoints(usize, usize),
    #[error("evaluation failed at {x:?}: {message}")]
    Evaluation { x: Vec<f64>, message: String },
    #[error(transparent)]
    Classify(#[from] ClassifyError),
}

/// `log q = −log r / (2p)`.
pub fn charge(log_r: f64, p: usize) -> f64 {
    -log_r / (2.0 * p as f64)
}

/// `log r = −log max(L, floor)`.
pub fn log_r_from_loss(loss: f64) -> f64 {
    -loss.max(LOSS_FLOOR).ln()
}

/// `Σ_{i<j} q_i q_j / d_ij`, each term formed as `exp(log q_i + log q_j − log d_ij)`.
pub fn total_energy(points: &[Vec<f64>], log_charges: &[f64]) -> Result<f64, MedError> {
    if points.len() < 2 || points.len() != log_charges.len() {
        return Err(MedError::InvalidArgument("need at least two points with one charge each".into()));
    }
    let mut e = 0.0;
    for i in 0..points.len() {
        for j in 0..i {
            let d2 = sq_dist(&points[i], &points[j]);
            if d2 == 0.0 {
                return Err(MedError::CoincidentPoints(j, i));
            }
            e += (log_charges[i] + log_charges[j] - 0.5 * d2.ln()).exp();
        }
    }
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum ImputeMode {
    #[default]
    MaxObserved,
    Fixed(f64),
}

/// Complete loss vector: infeasible rows get the largest feasible loss, or a
/// fixed `M` that must be at least that large.
pub fn impute_losses(table: &EvaluationTable, mode: ImputeMode) -> Result<Vec<f64>, MedError> {
    impute_records(&table.records, mode)
}

pub fn impute_records(records: &[EvaluationRecord], mode: ImputeMode) -> Result<Vec<f64>, MedError> {
    let max = records.iter().filter_map(|r| r.loss).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(MedError::NoFeasiblePoints);
    }
    let m = match mode {
        ImputeMode::MaxObserved => max,
        ImputeMode::Fixed(m) if m >= max => m,
        ImputeMode::Fixed(m) => {
            return Err(MedError::InvalidArgument(format!("imputed loss {m} is below the largest observed loss {max}")))
        }
    };
    Ok(records.iter().map(|r| r.loss.unwrap_or(m)).collect())
}

/// Maps a batch of points to `log r`. Implementations must be deterministic.
pub trait LogResponseFunction: Sync {
    fn log_r(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>, MedError>;
}

/// Any pure point function is a log-response function.
impl<F: Fn(&[f64]) -> f64 + Sync> LogResponseFunction for F {
    fn log_r(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>, MedError> {
        let v = crate::par::map(xs, |x| self(x));
        match v.iter().position(|l| !l.is_finite()) {
            Some(i) => Err(MedError::Evaluation { x: xs[i].clone(), message: "non-finite log r".into() }),
            None => Ok(v),
        }
    }
}

/// Evaluates a [`Problem`] directly. Infeasible points are imputed against
/// every feasible loss seen so far (including the current batch), and all
/// records are kept for later inspection.
#[derive(Debug)]
pub struct DirectLogResponse<'a> {
    problem: &'a Problem,
    mode: ImputeMode,
    source: Source,
    records: Mutex<Vec<EvaluationRecord>>,
}

impl<'a> DirectLogResponse<'a> {
    /// `history` seeds the running maximum used for imputation.
    pub fn new(problem: &'a Problem, history: &[EvaluationRecord], mode: ImputeMode, source: Source) -> Self {
        Self { problem, mode, source, records: Mutex::new(history.to_vec()) }
    }

    pub fn into_records(self) -> Vec<EvaluationRecord> {
        self.records.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}

impl LogResponseFunction for DirectLogResponse<'_> {
    fn log_r(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>, MedError> {
        let batch = self.problem.evaluate_batch(xs).map_err(|e| {
            let x = match &e {
                BenchError::OutOfDomain { x } => x.clone(),
                _ => xs.first().cloned().unwrap_or_default(),
            };
            MedError::Evaluation { x, message: e.to_string() }
        })?;
        let mut records = self.records.lock().unwrap_or_else(|e| e.into_inner());
        let start = records.len();
        records.extend(batch.into_iter().map(|r| r.with_source(self.source)));
        let losses = impute_records(&records, self.mode)?;
        Ok(losses[start..].iter().map(|&l| log_r_from_loss(l)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClipPolicy {
    #[default]
    Clip,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CandidateScoring {
    /// Kriging proxy of log r fitted to the evaluations so far.
    #[default]
    Proxy,
    /// Call `f` on every candidate; only sensible when `f` is cheap.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MedConfig {
    pub n: usize,
    #[serde(rename = "k")]
    pub iterations: usize,
    pub candidate_pool: usize,
    pub jitter_scale: f64,
    pub jitter_decay: f64,
    /// Share of each pool drawn uniformly over the box.
    pub global_fraction: f64,
    /// Exponent `k` in the increment `Σ_j (q_c q_j / d_cj)^k`; `None` means `k = p`.
    pub energy_power: Option<f64>,
    pub clip_policy: ClipPolicy,
    pub scoring: CandidateScoring,
    pub seed: u64,
}

impl Default for MedConfig {
    fn default() -> Self {
        Self {
            n: 20,
            iterations: 4,
            candidate_pool: 50,
            jitter_scale: 0.1,
            jitter_decay: 0.7,
            global_fraction: 0.2,
            energy_power: None,
            clip_policy: ClipPolicy::Clip,
            scoring: CandidateScoring::Proxy,
            seed: 0,
        }
    }
}

impl MedConfig {
    pub fn validate(&self) -> Result<(), MedError> {
        let bad = |m: &str| Err(MedError::InvalidArgument(m.into()));
        if self.n < 2 {
            return bad("n must be >= 2");
        }
        if self.iterations < 1 {
            return bad("K must be >= 1");
        }
        if self.candidate_pool < 1 {
            return bad("candidate_pool must be >= 1");
        }
        if !(self.jitter_scale > 0.0 && self.jitter_scale <= 1.0) {
            return bad("jitter_scale must lie in (0, 1]");
        }
        if !(self.jitter_decay > 0.0 && self.jitter_decay <= 1.0) {
            return bad("jitter_decay must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.global_fraction) {
            return bad("global_fraction must lie in [0, 1]");
        }
        if self.energy_power.is_some_and(|k| !(k > 0.0 && k.is_finite())) {
            return bad("energy_power must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iter: usize,
    /// Energy of the `n` points accepted in this iteration (charges from true `f`).
    pub energy: Option<f64>,
    pub best_loss: f64,
    pub proxy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedResult {
    pub p: usize,
    pub points: Vec<Vec<f64>>,
    pub log_r: Vec<f64>,
    /// 0 for initial rows, `k` for rows generated in iteration `k`.
    pub iteration: Vec<usize>,
    pub trace: Vec<IterationTrace>,
    /// Rows of the returned design: the `n` points accepted in the last iteration.
    pub design: Vec<usize>,
    /// Number of calls of `f` on single points.
    pub evaluations: usize,
}

impl MedResult {
    pub fn design_points(&self) -> Vec<Vec<f64>> {
        self.design.iter().map(|&i| self.points[i].clone()).collect()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.log_r.iter().map(|l| (-l).exp()).collect()
    }

    pub fn generated(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points
            .iter()
            .zip(&self.log_r)
            .zip(&self.iteration)
            .filter(|(_, &k)| k > 0)
            .map(|((x, &l), _)| (x.as_slice(), l))
    }

    /// `iter,x1..xp,log_r,loss,source`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> csv::Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["iter".to_string()];
        header.extend((1..=self.p).map(|i| format!("x{i}")));
        header.extend(["log_r".into(), "loss".into(), "source".into()]);
        wr.write_record(&header)?;
        for ((x, l), k) in self.points.iter().zip(&self.log_r).zip(&self.iteration) {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            row.push(l.to_string());
            row.push((-l).exp().to_string());
            row.push(if *k == 0 { Source::Initial } else { Source::Med }.as_str().to_string());
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn trace_json(&self) -> String {
        serde_json::to_string_pretty(&self.trace).expect("trace serializes")
    }
}

/// Order in which candidates would be accepted one at a time: each step
/// takes the candidate with the smallest `Σ_j (q_c q_j / d_cj)^k` over the
/// placed points and the candidates accepted before it. Ties go to the
/// lowest index; candidates within [`DUPLICATE_TOL`] of a placed point are
/// dropped. At most `take` indices are returned.
pub fn rank_candidates(
    placed: &[Vec<f64>],
    placed_log_r: &[f64],
    candidates: &[Vec<f64>],
    candidate_log_r: &[f64],
    p: usize,
    power: f64,
    take: usize,
) -> Vec<usize> {
    let log_q = |lr: f64| charge(lr, p);
    // acc[c] = log Σ_j exp(k (log q_j − log d_cj)), over placed points so far.
    let mut acc: Vec<f64> = crate::par::map(candidates, |c| {
        let mut a = f64::NEG_INFINITY;
        for (x, &lr) in placed.iter().zip(placed_log_r) {
            let d2 = sq_dist(c, x);
            if d2 <= DUPLICATE_TOL * DUPLICATE_TOL {
                return f64::NAN;
            }
            a = log_add_exp(a, power * (log_q(lr) - 0.5 * d2.ln()));
        }
        a
    });
    let mut order = Vec::with_capacity(take.min(candidates.len()));
    let mut used = vec![false; candidates.len()];
    while order.len() < take {
        let mut best: Option<(usize, (u8, f64))> = None;
        for (i, &a) in acc.iter().enumerate() {
            if used[i] || a.is_nan() {
                continue;
            }
            // With nothing placed yet every increment is zero; prefer the smallest charge.
            let key = if a == f64::NEG_INFINITY { (0, log_q(candidate_log_r[i])) } else { (1, power * log_q(candidate_log_r[i]) + a) };
            if best.is_none_or(|(_, b)| key.0 < b.0 || (key.0 == b.0 && key.1 < b.1)) {
                best = Some((i, key));
            }
        }
        let Some((i, _)) = best else { break };
        used[i] = true;
        order.push(i);
        let (xi, lqi) = (&candidates[i], log_q(candidate_log_r[i]));
        for (c, a) in candidates.iter().zip(acc.iter_mut()) {
            if a.is_nan() {
                continue;
            }
            let d2 = sq_dist(c, xi);
            if d2 <= DUPLICATE_TOL * DUPLICATE_TOL {
                *a = f64::NAN;
            } else {
                *a = log_add_exp(*a, power * (lqi - 0.5 * d2.ln()));
            }
        }
    }
    order
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

enum Proxy {
    Gp(GpModel),
    Idw { x: Vec<Vec<f64>>, y: Vec<f64> },
}

impl Proxy {
    fn fit(x: &[Vec<f64>], y: &[f64], seed: u64) -> Self {
        let cfg = GpConfig { restarts: 2, evals_per_dim: 30, ..GpConfig::default() };
        match fit_gp(x, y, &cfg, seed) {
            Ok(gp) => Proxy::Gp(gp),
            Err(e) => {
                log::warn!("log r proxy: kriging fit failed ({e}); using inverse-distance weighting");
                Proxy::Idw { x: x.to_vec(), y: y.to_vec() }
            }
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Proxy::Gp(_) => "kriging",
            Proxy::Idw { .. } => "idw",
        }
    }

    fn predict(&self, c: &[f64], lo: f64, hi: f64) -> f64 {
        let v = match self {
            Proxy::Gp(gp) => gp.predict_mean(c),
            Proxy::Idw { x, y } => {
                let (mut num, mut den) = (0.0, 0.0);
                for (xi, yi) in x.iter().zip(y) {
                    let w = 1.0 / sq_dist(xi, c).max(1e-24);
                    num += w * yi;
                    den += w;
                }
                num / den
            }
        };
        // Keep extrapolation inside the observed range.
        v.clamp(lo, hi)
    }
}

fn draw_candidates(
    design: &[Vec<f64>],
    cfg: &MedConfig,
    scale: f64,
    r: &mut rng::Rng,
) -> Vec<Vec<f64>> {
    let p = design[0].len();
    let normal = Normal::new(0.0, scale).expect("positive scale");
    let n_global = (cfg.candidate_pool as f64 * cfg.global_fraction).round() as usize;
    let mut out = Vec::with_capacity(design.len() * cfg.candidate_pool);
    for x in design {
        for j in 0..cfg.candidate_pool {
            if j >= cfg.candidate_pool - n_global.min(cfg.candidate_pool) {
                out.push((0..p).map(|_| r.random::<f64>()).collect());
                continue;
            }
            let c = x
                .iter()
                .map(|&v| match cfg.clip_policy {
                    ClipPolicy::Clip => (v + normal.sample(r)).clamp(0.0, 1.0),
                    ClipPolicy::Reject => {
                        for _ in 0..100 {
                            let w = v + normal.sample(r);
                            if (0.0..=1.0).contains(&w) {
                                return w;
                            }
                        }
                        v
                    }
                })
                .collect();
            out.push(c);
        }
    }
    out
}

/// Evaluates `f` on `initial` and runs [`med_generate_from`].
pub fn med_generate(initial: &DesignMatrix, f: &dyn LogResponseFunction, cfg: &MedConfig) -> Result<MedResult, MedError> {
    let rows = initial.to_rows();
    let lr = f.log_r(&rows)?;
    let mut res = med_generate_from(&rows, &lr, f, cfg)?;
    res.evaluations += rows.len();
    Ok(res)
}

/// Runs `cfg.iterations` iterations from already evaluated points.
///
/// `initial` may hold more than `n` rows; the first design is the `n`-point
/// minimum energy subset of it.
pub fn med_generate_from(
    initial: &[Vec<f64>],
    initial_log_r: &[f64],
    f: &dyn LogResponseFunction,
    cfg: &MedConfig,
) -> Result<MedResult, MedError> {
    cfg.validate()?;
    if initial.len() < 2 || initial.len() != initial_log_r.len() {
        return Err(MedError::InvalidArgument("need at least two initial points, each with log r".into()));
    }
    let p = initial[0].len();
    if p == 0 || initial.iter().any(|x| x.len() != p || x.iter().any(|v| !(0.0..=1.0).contains(v))) {
        return Err(MedError::InvalidArgument("initial points must lie in [0, 1]^p".into()));
    }
    if initial_log_r.iter().any(|v| !v.is_finite()) {
        return Err(MedError::InvalidArgument("initial log r must be finite".into()));
    }
    let mut points = initial.to_vec();
    let mut log_r = initial_log_r.to_vec();
    let mut iteration = vec![0; points.len()];
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut evaluations = 0;
    let power = cfg.energy_power.unwrap_or(p as f64);

    for k in 1..=cfg.iterations {
        let iter_seed = rng::derive_seed(cfg.seed, k as u64);
        let mut r = rng::stream(iter_seed, rng::streams::MED);

        let design: Vec<Vec<f64>> = rank_candidates(&[], &[], &points, &log_r, p, power, cfg.n)
            .into_iter()
            .map(|i| points[i].clone())
            .collect();
        let scale = cfg.jitter_scale * cfg.jitter_decay.powi(k as i32 - 1);
        let candidates = draw_candidates(&design, cfg, scale, &mut r);

        let (cand_lr, proxy_name) = match cfg.scoring {
            CandidateScoring::Exact => {
                evaluations += candidates.len();
                (f.log_r(&candidates)?, "exact")
            }
            CandidateScoring::Proxy => {
                let proxy = Proxy::fit(&points, &log_r, iter_seed);
                let lo = log_r.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = log_r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (crate::par::map(&candidates, |c| proxy.predict(c, lo, hi)), proxy.name())
            }
        };
        let chosen = rank_candidates(&points, &log_r, &candidates, &cand_lr, p, power, cfg.n);
        if chosen.len() < cfg.n {
            return Err(MedError::InvalidArgument(format!(
                "iteration {k}: only {} usable candidates for {} new points",
                chosen.len(),
                cfg.n
            )));
        }
        let new_points: Vec<Vec<f64>> = chosen.iter().map(|&i| candidates[i].clone()).collect();
        let new_lr: Vec<f64> = match cfg.scoring {
            CandidateScoring::Exact => chosen.iter().map(|&i| cand_lr[i]).collect(),
            CandidateScoring::Proxy => {
                evaluations += new_points.len();
                f.log_r(&new_points)?
            }
        };
        if new_lr.len() != new_points.len() || new_lr.iter().any(|v| !v.is_finite()) {
            let i = new_lr.iter().position(|v| !v.is_finite()).unwrap_or(0);
            return Err(MedError::Evaluation { x: new_points[i].clone(), message: "non-finite log r".into() });
        }
        points.extend(new_points.iter().cloned());
        log_r.extend(new_lr.iter().copied());
        let charges: Vec<f64> = new_lr.iter().map(|&l| charge(l, p)).collect();
        let energy = total_energy(&new_points, &charges).ok();
        iteration.extend(std::iter::repeat_n(k, cfg.n));
        let best_loss = log_r.iter().map(|l| (-l).exp()).fold(f64::INFINITY, f64::min);
        log::info!("MED iteration {k}: best loss {best_loss:.4e}, proxy {proxy_name}");
        trace.push(IterationTrace { iter: k, energy, best_loss, proxy: proxy_name.to_string() });
    }
    let design = (points.len() - cfg.n..points.len()).collect();
    Ok(MedResult { p, points, log_r, iteration, trace, design, evaluations })
}

/// Points whose predicted feasibility probability is at least `threshold`.
pub fn filter_feasible(points: &[Vec<f64>], classifier: &Classifier, threshold: f64) -> Result<Vec<Vec<f64>>, MedError> {
    let probs = classifier.predict_batch(points)?;
    Ok(points.iter().zip(probs).filter(|(_, pr)| *pr >= threshold).map(|(x, _)| x.clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::toy2d;
    use crate::classify::{Classifier, LogisticModel};
    use crate::design::{maximin_lhd, min_pairwise_distance_rows, uniform_design};

    fn brute_energy(pts: &[Vec<f64>], q: &[f64]) -> f64 {
        let mut e = 0.0;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                let d: f64 = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                e += q[i] * q[j] / d;
            }
        }
        e
    }

    #[test]
    fn charge_spot_values() {
        assert_eq!(charge(0.0, 3), 0.0);
        assert!((charge(16f64.ln(), 2).exp() - 0.5).abs() < 1e-15);
        assert!((charge(4f64.ln(), 1).exp() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn energy_examples() {
        let e = total_energy(&[vec![0.0], vec![0.5]], &[0.0, 0.0]).unwrap();
        assert!((e - 2.0).abs() < 1e-15);
        let e = total_energy(&[vec![0.0], vec![0.5], vec![1.0]], &[0.0; 3]).unwrap();
        assert!((e - 5.0).abs() < 1e-14);
        let pts = vec![vec![0.1, 0.2], vec![0.4, 0.9], vec![0.7, 0.3]];
        let lq = [0.1, -0.3, 0.5];
        let e1 = total_energy(&pts, &lq).unwrap();
        let e2 = total_energy(&pts, &lq.map(|v| v + 2f64.ln())).unwrap();
        assert!((e2 / e1 - 4.0).abs() < 1e-12);
        assert!((e1 - brute_energy(&pts, &lq.map(f64::exp))).abs() < 1e-12 * e1);
    }

    #[test]
    fn coincident_points_are_an_error() {
        let r = total_energy(&[vec![0.3, 0.3], vec![0.1, 0.2], vec![0.3, 0.3]], &[0.0; 3]);
        assert!(matches!(r, Err(MedError::CoincidentPoints(0, 2))));
    }

    #[test]
    fn imputation_modes() {
        let recs = vec![
            EvaluationRecord::feasible(vec![0.1], vec![1.0], 0.5),
            EvaluationRecord::infeasible(vec![0.2]),
            EvaluationRecord::feasible(vec![0.3], vec![1.0], 2.0),
        ];
        assert_eq!(impute_records(&recs, ImputeMode::MaxObserved).unwrap(), vec![0.5, 2.0, 2.0]);
        assert_eq!(impute_records(&recs, ImputeMode::Fixed(9.0)).unwrap(), vec![0.5, 9.0, 2.0]);
        assert!(impute_records(&recs, ImputeMode::Fixed(1.0)).is_err());
        let none = vec![EvaluationRecord::infeasible(vec![0.2])];
        assert!(matches!(impute_records(&none, ImputeMode::MaxObserved), Err(MedError::NoFeasiblePoints)));
        let all = vec![EvaluationRecord::feasible(vec![0.1], vec![1.0], 0.5)];
        assert_eq!(impute_records(&all, ImputeMode::MaxObserved).unwrap(), vec![0.5]);
    }

    #[test]
    fn ranking_takes_far_candidate_at_equal_charge() {
        let placed = vec![vec![0.0, 0.0]];
        let cands = vec![vec![0.1, 0.0], vec![1.0, 1.0], vec![0.0, 0.0]];
        let order = rank_candidates(&placed, &[0.0], &cands, &[0.0; 3], 2, 1.0, 3);
        assert_eq!(order, vec![1, 0]);
    }

    #[test]
    fn med_budget_and_domain() {
        let prob = toy2d();
        let init = maximin_lhd(20, 2, 20, 3).unwrap();
        let rows = init.to_rows();
        let base = prob.evaluate_batch(&rows).unwrap();
        let lr: Vec<f64> = impute_records(&base, ImputeMode::MaxObserved).unwrap().into_iter().map(log_r_from_loss).collect();
        let before = prob.evaluations();
        let f = DirectLogResponse::new(&prob, &base, ImputeMode::MaxObserved, Source::Med);
        let res = med_generate_from(&rows, &lr, &f, &MedConfig { seed: 4, ..Default::default() }).unwrap();
        assert_eq!(prob.evaluations() - before, 80);
        assert_eq!(res.evaluations, 80);
        assert_eq!(res.points.len(), 100);
        assert!(res.points.iter().all(|x| x.iter().all(|v| (0.0..=1.0).contains(v))));
        assert_eq!(res.trace.len(), 4);
    }

    #[test]
    fn constant_response_spreads_points() {
        let mut ratios = Vec::new();
        for seed in 0..10 {
            let init = maximin_lhd(10, 2, 10, seed).unwrap();
            let flat = |_: &[f64]| 0.0;
            let cfg = MedConfig { n: 10, iterations: 3, seed, ..Default::default() };
            let res = med_generate(&init, &flat, &cfg).unwrap();
            let med = min_pairwise_distance_rows(&res.points).unwrap();
            let uni = min_pairwise_distance(&uniform_design(40, 2, seed).unwrap());
            ratios.push(med / uni);
        }
        assert!(crate::stats::median(&ratios) >= 1.0, "{ratios:?}");
    }

    fn min_pairwise_distance(d: &DesignMatrix) -> f64 {
        crate::design::min_pairwise_distance(d).unwrap()
    }

    #[test]
    fn gate_thresholds() {
        let model = LogisticModel {
            intercept: 0.0,
            coefficients: vec![10.0],
            means: vec![0.5],
            scales: vec![1.0],
            l2_penalty: 0.0,
        };
        let c = Classifier::Logistic(model);
        let pts: Vec<Vec<f64>> = (0..11).map(|i| vec![i as f64 / 10.0]).collect();
        assert_eq!(filter_feasible(&pts, &c, 0.0).unwrap().len(), 11);
        assert!(filter_feasible(&pts, &c, 1.1).unwrap().is_empty());
        let kept = filter_feasible(&pts, &c, 0.5).unwrap();
        assert!(kept.iter().all(|x| x[0] >= 0.5) && kept.len() == 6);
    }
}
