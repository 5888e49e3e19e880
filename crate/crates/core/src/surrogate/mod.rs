//! Cheap loss surrogate built from the individual responses.
//!
//! The pipeline screens out responses that barely vary, keeps the smallest
//! set of responses carrying a share `δ` of the total squared scaled error,
//! and models each kept response through its transformed response (TR)
//! `U = ln(|Y − T| / w)`, floored at `ln ε`. TRs are clustered on their
//! correlations; inside a cluster the best-predicted TR becomes the baseline
//! and the others are added one by one, each allowed the earlier TRs of its
//! chain as extra predictors. The loss prediction is `Σ exp(2Û)` over all
//! modelled TRs, or the big-loss constant `M` where the feasibility
//! classifier says no.

mod cluster;
mod lasso;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cluster::{cluster_responses, correlation_distance, silhouette, MAX_AUTO_CLUSTERS};
pub use lasso::{fit_lasso, lambda_max, lasso_at, lasso_at_traced, LassoConfig, LassoModel};

use crate::bench::EvaluationRecord;
use crate::classify::{Classifier, ClassifyError};
use crate::{par, rng, stats};

pub const SURROGATE_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_EPSILON: f64 = 1e-10;
pub const DEFAULT_SD_FLOOR: f64 = 1e-8;
pub const DEFAULT_INCLUSION_RULE: f64 = 0.01;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("scaled errors are all zero; the response share is undefined")]
    AllZero,
    #[error("lasso did not converge at lambda {lambda:.3e} after {sweeps} sweeps (last max change {max_change:.3e})")]
    LassoNotConverged { lambda: f64, sweeps: usize, max_change: f64 },
    #[error(transparent)]
    Classify(#[from] ClassifyError),
    #[error("surrogate json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported surrogate format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
}

fn check_rect(rows: &[Vec<f64>], width: usize) -> Result<(), SurrogateError> {
    match rows.iter().find(|r| r.len() != width) {
        Some(r) => Err(SurrogateError::DimensionMismatch { expected: width, got: r.len() }),
        None => Ok(()),
    }
}

fn check_tw(q: usize, targets: &[f64], weights: &[f64]) -> Result<(), SurrogateError> {
    if targets.len() != q {
        return Err(SurrogateError::DimensionMismatch { expected: q, got: targets.len() });
    }
    if weights.len() != q {
        return Err(SurrogateError::DimensionMismatch { expected: q, got: weights.len() });
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(SurrogateError::InvalidArgument("weights must be positive".into()));
    }
    Ok(())
}

/// Scaled individual errors `E_ij = (Y_ij − T_j)/w_j` with column summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SieMatrix {
    pub values: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    /// Sample sd (`N − 1` denominator); 0 when there is a single row.
    pub sds: Vec<f64>,
}

impl SieMatrix {
    pub fn from_values(values: Vec<Vec<f64>>) -> Result<Self, SurrogateError> {
        let q = values.first().map_or(0, Vec::len);
        check_rect(&values, q)?;
        let cols: Vec<Vec<f64>> = (0..q).map(|j| values.iter().map(|r| r[j]).collect()).collect();
        let means = cols.iter().map(|c| stats::mean(c)).collect();
        let sds = cols.iter().map(|c| if c.len() < 2 { 0.0 } else { stats::sd(c) }).collect();
        Ok(Self { values, means, sds })
    }

    pub fn q(&self) -> usize {
        self.means.len()
    }

    pub fn column_sum_squares(&self) -> Vec<f64> {
        (0..self.q()).map(|j| self.values.iter().map(|r| r[j] * r[j]).sum()).collect()
    }

    pub fn select_columns(&self, cols: &[usize]) -> Result<Self, SurrogateError> {
        Self::from_values(self.values.iter().map(|r| cols.iter().map(|&j| r[j]).collect()).collect())
    }
}

pub fn sie_matrix(y: &[Vec<f64>], targets: &[f64], weights: &[f64]) -> Result<SieMatrix, SurrogateError> {
    let q = targets.len();
    check_tw(q, targets, weights)?;
    check_rect(y, q)?;
    if y.is_empty() {
        return Err(SurrogateError::InvalidArgument("no response rows".into()));
    }
    SieMatrix::from_values(
        y.iter().map(|row| row.iter().zip(targets).zip(weights).map(|((y, t), w)| (y - t) / w).collect()).collect(),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSubset {
    /// Column indices in the order they were added.
    pub indices: Vec<usize>,
    pub proportion: f64,
    pub delta: f64,
}

/// Adds columns by decreasing `Σ_i E²_ij` (ties to the lower index) until
/// their share of the total reaches `delta`.
pub fn select_responses(e: &SieMatrix, delta: f64) -> Result<ResponseSubset, SurrogateError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(SurrogateError::InvalidArgument(format!("delta must be in (0, 1), got {delta}")));
    }
    let ss = e.column_sum_squares();
    let total: f64 = ss.iter().sum();
    if !(total > 0.0) {
        return Err(SurrogateError::AllZero);
    }
    let mut order: Vec<usize> = (0..ss.len()).collect();
    order.sort_by(|&a, &b| ss[b].total_cmp(&ss[a]).then(a.cmp(&b)));
    let mut indices = Vec::new();
    let mut acc = 0.0;
    for j in order {
        indices.push(j);
        acc += ss[j];
        if acc / total >= delta {
            break;
        }
    }
    Ok(ResponseSubset { indices, proportion: (acc / total).min(1.0), delta })
}

/// `U = ln(max(|Y − T|, ε·w) / w)`.
pub fn transform_responses(
    y: &[Vec<f64>],
    targets: &[f64],
    weights: &[f64],
    epsilon: f64,
) -> Result<Vec<Vec<f64>>, SurrogateError> {
    check_tw(targets.len(), targets, weights)?;
    check_rect(y, targets.len())?;
    if !(epsilon > 0.0) {
        return Err(SurrogateError::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    Ok(y
        .iter()
        .map(|row| {
            row.iter().zip(targets).zip(weights).map(|((y, t), w)| ((y - t).abs().max(epsilon * w) / w).ln()).collect()
        })
        .collect())
}

pub fn feature_count(p: usize) -> usize {
    2 * p + p * p.saturating_sub(1) / 2
}

/// Column names matching [`expand_features`]: `x1..xp`, `x1^2..xp^2`, then
/// `xh*xk` for `h < k` in lexicographic order.
pub fn feature_names(p: usize) -> Vec<String> {
    let mut names: Vec<String> = (1..=p).map(|h| format!("x{h}")).collect();
    names.extend((1..=p).map(|h| format!("x{h}^2")));
    for h in 1..=p {
        for k in h + 1..=p {
            names.push(format!("x{h}*x{k}"));
        }
    }
    names
}

pub fn expand_row(x: &[f64]) -> Vec<f64> {
    let p = x.len();
    let mut out = Vec::with_capacity(feature_count(p));
    out.extend_from_slice(x);
    out.extend(x.iter().map(|v| v * v));
    for h in 0..p {
        for k in h + 1..p {
            out.push(x[h] * x[k]);
        }
    }
    out
}

pub fn expand_features(x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    x.iter().map(|r| expand_row(r)).collect()
}

/// One link of a cluster chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainModel {
    /// TR column this model predicts.
    pub response: usize,
    /// Positions of earlier chain links whose TRs are extra inputs, appended
    /// after the expanded features in this order.
    pub predecessors: Vec<usize>,
    pub model: LassoModel,
    /// Out-of-sample R² on the internal hold-out split.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterChain {
    pub models: Vec<ChainModel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModelSet {
    pub p: usize,
    pub clusters: Vec<ClusterChain>,
}

impl ClusterModelSet {
    /// Every predecessor refers to an earlier link of its own chain.
    pub fn is_acyclic(&self) -> bool {
        self.clusters
            .iter()
            .all(|c| c.models.iter().enumerate().all(|(k, m)| m.predecessors.iter().all(|&j| j < k)))
    }

    /// Predicted TRs as `(response, Û)`, chains evaluated in order with
    /// predicted values standing in for predecessor TRs.
    pub fn predict(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let base = expand_row(x);
        let mut out = Vec::new();
        for chain in &self.clusters {
            let mut values: Vec<f64> = Vec::with_capacity(chain.models.len());
            for m in &chain.models {
                let mut row = base.clone();
                row.extend(m.predecessors.iter().map(|&j| values[j]));
                let v = m.model.predict(&row);
                values.push(v);
                out.push((m.response, v));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    /// Minimum gain in out-of-sample R² for predecessor TRs to be used.
    pub inclusion_rule: f64,
    pub test_fraction: f64,
    pub lasso: LassoConfig,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { inclusion_rule: DEFAULT_INCLUSION_RULE, test_fraction: 0.2, lasso: LassoConfig::default() }
    }
}

fn r_squared(pred: &[f64], actual: &[f64]) -> f64 {
    let m = stats::mean(actual);
    let sst: f64 = actual.iter().map(|a| (a - m).powi(2)).sum();
    let sse: f64 = pred.iter().zip(actual).map(|(p, a)| (p - a).powi(2)).sum();
    if sst > 0.0 {
        1.0 - sse / sst
    } else if sse <= 1e-20 * actual.len() as f64 {
        1.0
    } else {
        0.0
    }
}

struct ChainData<'a> {
    features: &'a [Vec<f64>],
    u: &'a [Vec<f64>],
    train: Vec<usize>,
    test: Vec<usize>,
    cfg: &'a ChainConfig,
    seed: u64,
}

impl ChainData<'_> {
    fn rows(&self, response: usize, preds: &[usize], idx: &[usize]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let f = idx
            .iter()
            .map(|&i| {
                let mut r = self.features[i].clone();
                r.extend(preds.iter().map(|&j| self.u[i][j]));
                r
            })
            .collect();
        (f, idx.iter().map(|&i| self.u[i][response]).collect())
    }

    /// Hold-out R² of a model for `response` with the given predecessor TR
    /// columns as extra inputs.
    fn score(&self, response: usize, preds: &[usize]) -> Result<f64, SurrogateError> {
        let seed = rng::derive_seed(rng::derive_seed(self.seed, response as u64), preds.len() as u64);
        let (f, u) = self.rows(response, preds, &self.train);
        let model = fit_lasso(&f, &u, &self.cfg.lasso, seed)?;
        let (ft, ut) = self.rows(response, preds, &self.test);
        let pred: Vec<f64> = ft.iter().map(|r| model.predict(r)).collect();
        Ok(r_squared(&pred, &ut))
    }

    fn refit(&self, response: usize, preds: &[usize]) -> Result<LassoModel, SurrogateError> {
        let all: Vec<usize> = (0..self.u.len()).collect();
        let (f, u) = self.rows(response, preds, &all);
        let seed = rng::derive_seed(rng::derive_seed(self.seed, response as u64), u64::MAX - preds.len() as u64);
        fit_lasso(&f, &u, &self.cfg.lasso, seed)
    }

    fn chain(&self, members: &[usize]) -> Result<ClusterChain, SurrogateError> {
        let base = par::try_map(members, |&j| self.score(j, &[]))?;
        let mut remaining: Vec<(usize, f64)> = members.iter().copied().zip(base).collect();
        let mut models: Vec<ChainModel> = Vec::new();
        while !remaining.is_empty() {
            let chain_tr: Vec<usize> = models.iter().map(|m| m.response).collect();
            let options = par::try_map(&remaining, |&(j, base_score)| -> Result<_, SurrogateError> {
                if chain_tr.is_empty() || !self.cfg.inclusion_rule.is_finite() {
                    return Ok((base_score, false));
                }
                let with = self.score(j, &chain_tr)?;
                Ok(if with - base_score >= self.cfg.inclusion_rule { (with, true) } else { (base_score, false) })
            })?;
            let mut best = 0;
            for (k, o) in options.iter().enumerate() {
                let (s, b) = (o.0, options[best].0);
                if s > b || (s == b && remaining[k].0 < remaining[best].0) {
                    best = k;
                }
            }
            let (response, _) = remaining.remove(best);
            let (score, uses) = options[best];
            let predecessors: Vec<usize> = if uses { (0..models.len()).collect() } else { Vec::new() };
            let cols: Vec<usize> = predecessors.iter().map(|&k| chain_tr[k]).collect();
            let model = self.refit(response, &cols)?;
            models.push(ChainModel { response, predecessors, model, score });
        }
        Ok(ClusterChain { models })
    }
}

/// Builds one chain per cluster. `u` has one row per observation and one
/// column per TR; `labels[j]` is the cluster of TR `j`.
///
/// Scores are R² on a fixed hold-out split (`test_fraction` of the rows).
/// The baseline is the TR with the best score from the expanded inputs
/// alone. Each later step scores every remaining TR with and without all
/// current chain TRs as extra predictors, keeps the predecessors only if
/// they add at least `inclusion_rule`, and appends the TR with the best
/// resulting score (ties to the lower column). Final models are refitted on
/// all rows.
pub fn fit_cluster_models(
    u: &[Vec<f64>],
    labels: &[usize],
    x: &[Vec<f64>],
    cfg: &ChainConfig,
    seed: u64,
) -> Result<ClusterModelSet, SurrogateError> {
    let n = u.len();
    if x.len() != n {
        return Err(SurrogateError::DimensionMismatch { expected: n, got: x.len() });
    }
    let q = labels.len();
    check_rect(u, q)?;
    let p = x.first().map_or(0, Vec::len);
    check_rect(x, p)?;
    if p == 0 || q == 0 {
        return Err(SurrogateError::InvalidArgument("need at least one input and one response".into()));
    }
    if n < 5 {
        return Err(SurrogateError::InvalidArgument(format!("need at least 5 rows, got {n}")));
    }
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(SurrogateError::InvalidArgument("test_fraction must be in (0, 1)".into()));
    }
    if !(cfg.inclusion_rule >= 0.0) {
        return Err(SurrogateError::InvalidArgument("inclusion_rule must be >= 0".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, rng::streams::SPLIT));
    let n_test = ((n as f64 * cfg.test_fraction).round() as usize).clamp(1, n - 3);
    let mut test = order[..n_test].to_vec();
    let mut train = order[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();

    let features = expand_features(x);
    let data = ChainData { features: &features, u, train, test, cfg, seed };
    let n_clusters = labels.iter().max().map_or(0, |m| m + 1);
    let groups: Vec<Vec<usize>> =
        (0..n_clusters).map(|c| (0..q).filter(|&j| labels[j] == c).collect()).filter(|g: &Vec<usize>| !g.is_empty()).collect();
    let clusters = par::try_map(&groups, |g| data.chain(g))?;
    Ok(ClusterModelSet { p, clusters })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurrogateConfig {
    pub delta: f64,
    pub epsilon: f64,
    /// Responses whose SIE sd is below this are not modelled.
    pub sd_floor: f64,
    /// Total cluster count; absent means chosen by silhouette.
    pub clusters: Option<usize>,
    /// Big-loss constant; absent means the largest observed loss.
    pub big_loss: Option<f64>,
    pub chain: ChainConfig,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            delta: 0.95,
            epsilon: DEFAULT_EPSILON,
            sd_floor: DEFAULT_SD_FLOOR,
            clusters: None,
            big_loss: None,
            chain: ChainConfig::default(),
        }
    }
}

/// A fitted surrogate. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSurrogate {
    pub version: u32,
    pub p: usize,
    /// Original response index of each modelled TR column.
    pub responses: Vec<usize>,
    pub epsilon: f64,
    pub big_loss: f64,
    pub threshold: f64,
    pub classifier: Option<Classifier>,
    pub models: ClusterModelSet,
}

impl LossSurrogate {
    /// `M` where the classifier's feasibility probability is below the
    /// threshold, otherwise `Σ exp(2Û)` capped at `M`.
    pub fn predict_loss(&self, x: &[f64]) -> Result<f64, SurrogateError> {
        if x.len() != self.p {
            return Err(SurrogateError::DimensionMismatch { expected: self.p, got: x.len() });
        }
        if let Some(c) = &self.classifier {
            if c.predict_proba(x)? < self.threshold {
                return Ok(self.big_loss);
            }
        }
        let total: f64 = self.models.predict(x).iter().map(|(_, u)| (2.0 * u).exp()).sum();
        Ok(if total.is_nan() { self.big_loss } else { total.min(self.big_loss) })
    }

    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>, SurrogateError> {
        par::try_map(xs, |x| self.predict_loss(x))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("surrogate serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, SurrogateError> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        let found = v.get("version").and_then(serde_json::Value::as_u64).unwrap_or(0) as u32;
        if found != SURROGATE_FORMAT_VERSION {
            return Err(SurrogateError::Version { found, expected: SURROGATE_FORMAT_VERSION });
        }
        Ok(serde_json::from_value(v)?)
    }
}

/// What the pipeline kept and dropped along the way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReport {
    pub screened_out: Vec<usize>,
    /// Selected responses in original indices, in selection order.
    pub subset: ResponseSubset,
    /// Cluster label per modelled TR column.
    pub labels: Vec<usize>,
}

/// Runs the whole pipeline on the feasible records.
///
/// Responses outside the selected subset are not modelled, so the surrogate
/// predicts the selected part of the loss.
pub fn fit_surrogate(
    records: &[EvaluationRecord],
    targets: &[f64],
    weights: &[f64],
    classifier: Option<Classifier>,
    threshold: f64,
    cfg: &SurrogateConfig,
    seed: u64,
) -> Result<(LossSurrogate, SurrogateReport), SurrogateError> {
    let feasible: Vec<&EvaluationRecord> = records.iter().filter(|r| r.z).collect();
    let p = records.first().map_or(0, |r| r.x.len());
    let x: Vec<Vec<f64>> = feasible.iter().map(|r| r.x.clone()).collect();
    let y: Vec<Vec<f64>> = feasible.iter().map(|r| r.y.clone().unwrap_or_default()).collect();
    if feasible.len() < 5 {
        return Err(SurrogateError::InvalidArgument(format!("need at least 5 feasible records, got {}", feasible.len())));
    }
    let max_loss = stats::max(&feasible.iter().filter_map(|r| r.loss).collect::<Vec<_>>());
    let big_loss = match cfg.big_loss {
        Some(m) if m >= max_loss => m,
        Some(m) => {
            return Err(SurrogateError::InvalidArgument(format!("big_loss {m} below the largest observed loss {max_loss}")))
        }
        None => max_loss,
    };
    if !(cfg.epsilon > 0.0) {
        return Err(SurrogateError::InvalidArgument("epsilon must be > 0".into()));
    }

    let sie = sie_matrix(&y, targets, weights)?;
    let (kept, screened_out): (Vec<usize>, Vec<usize>) = (0..sie.q()).partition(|&j| sie.sds[j] >= cfg.sd_floor);
    if kept.is_empty() {
        return Err(SurrogateError::InvalidArgument("no response varies above the sd floor".into()));
    }
    let local = select_responses(&sie.select_columns(&kept)?, cfg.delta)?;
    let subset = ResponseSubset {
        indices: local.indices.iter().map(|&j| kept[j]).collect(),
        proportion: local.proportion,
        delta: local.delta,
    };
    let mut responses = subset.indices.clone();
    responses.sort_unstable();

    let pick = |rows: &[Vec<f64>]| -> Vec<Vec<f64>> {
        rows.iter().map(|r| responses.iter().map(|&j| r[j]).collect()).collect()
    };
    let t: Vec<f64> = responses.iter().map(|&j| targets[j]).collect();
    let w: Vec<f64> = responses.iter().map(|&j| weights[j]).collect();
    let u = transform_responses(&pick(&y), &t, &w, cfg.epsilon)?;
    let labels = match responses.len() {
        1 => vec![0],
        q => cluster_responses(&u, cfg.clusters.map(|c| c.min(q)))?,
    };
    let models = fit_cluster_models(&u, &labels, &x, &cfg.chain, rng::derive_seed(seed, rng::streams::SURROGATE))?;
    debug_assert!(models.is_acyclic());
    let surrogate = LossSurrogate {
        version: SURROGATE_FORMAT_VERSION,
        p,
        responses,
        epsilon: cfg.epsilon,
        big_loss,
        threshold,
        classifier,
        models,
    };
    Ok((surrogate, SurrogateReport { screened_out, subset, labels }))
}
