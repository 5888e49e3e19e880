//! Feasibility classifiers and their test-set evaluation.
//!
//! The positive class is `z = 1` (feasible). Sensitivity is TP/(TP+FN) and
//! specificity TN/(FP+TN); a rate whose denominator is zero is `None`.

mod forest;
mod logistic;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forest::{fit_forest, fit_forest_oob, ForestModel, ForestParams, Node, Tree};
pub use logistic::{
    fit_logistic, fit_logistic_traced, LogisticModel, LogisticObjective, DEFAULT_L2_PENALTY, DEFAULT_MAX_ITER,
    DEFAULT_TOL,
};

use crate::rng;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum ClassifyError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("logistic fit did not converge (gradient norm {grad_norm:.3e})")]
    NotConverged { model: Box<LogisticModel>, grad_norm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMetrics {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

impl ConfusionMetrics {
    pub fn from_counts(tp: usize, tn: usize, fp: usize, fn_: usize) -> Self {
        let rate = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        Self { tp, tn, fp, fn_, sensitivity: rate(tp, tp + fn_), specificity: rate(tn, fp + tn) }
    }
}

/// Counts predictions `prob >= threshold` against the observed flags.
pub fn confusion_metrics(probs: &[f64], z: &[bool], threshold: f64) -> Result<ConfusionMetrics, ClassifyError> {
    if probs.is_empty() {
        return Err(ClassifyError::InvalidArgument("empty input".into()));
    }
    if probs.len() != z.len() {
        return Err(ClassifyError::DimensionMismatch { expected: z.len(), got: probs.len() });
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&p, &actual) in probs.iter().zip(z) {
        match (p >= threshold, actual) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(ConfusionMetrics::from_counts(tp, tn, fp, fn_))
}

/// A fitted feasibility classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "model", rename_all = "lowercase")]
pub enum Classifier {
    Logistic(LogisticModel),
    Forest(ForestModel),
}

impl Classifier {
    pub fn p(&self) -> usize {
        match self {
            Classifier::Logistic(m) => m.p(),
            Classifier::Forest(m) => m.p,
        }
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<f64, ClassifyError> {
        if x.len() != self.p() {
            return Err(ClassifyError::DimensionMismatch { expected: self.p(), got: x.len() });
        }
        Ok(match self {
            Classifier::Logistic(m) => m.predict_proba(x),
            Classifier::Forest(m) => m.predict_proba(x),
        })
    }

    pub fn predict_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<f64>, ClassifyError> {
        crate::par::try_map(xs, |x| self.predict_proba(x))
    }
}

const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    classifier: Classifier,
}

impl Classifier {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ModelDocument { format_version: MODEL_FORMAT_VERSION, classifier: self.clone() })
            .expect("classifier serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ClassifyError> {
        let doc: ModelDocument =
            serde_json::from_str(s).map_err(|e| ClassifyError::InvalidArgument(format!("bad model document: {e}")))?;
        if doc.format_version != MODEL_FORMAT_VERSION {
            return Err(ClassifyError::InvalidArgument(format!(
                "unsupported model format version {}",
                doc.format_version
            )));
        }
        Ok(doc.classifier)
    }
}

/// How to build a classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClassifierSpec {
    Logistic {
        #[serde(default = "default_l2")]
        l2_penalty: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
        #[serde(default = "default_tol")]
        tol: f64,
    },
    Forest {
        #[serde(default = "default_ntree")]
        ntree: usize,
        #[serde(default)]
        mtry: Option<usize>,
        #[serde(default = "default_min_leaf")]
        min_leaf: usize,
    },
}

fn default_l2() -> f64 {
    DEFAULT_L2_PENALTY
}
fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}
fn default_tol() -> f64 {
    DEFAULT_TOL
}
fn default_ntree() -> usize {
    200
}
fn default_min_leaf() -> usize {
    1
}

impl Default for ClassifierSpec {
    fn default() -> Self {
        ClassifierSpec::Logistic { l2_penalty: DEFAULT_L2_PENALTY, max_iter: DEFAULT_MAX_ITER, tol: DEFAULT_TOL }
    }
}

impl ClassifierSpec {
    pub fn fit(&self, x: &[Vec<f64>], z: &[bool], seed: u64) -> Result<Classifier, ClassifyError> {
        match *self {
            ClassifierSpec::Logistic { l2_penalty, max_iter, tol } => {
                fit_logistic(x, z, l2_penalty, max_iter, tol).map(Classifier::Logistic)
            }
            ClassifierSpec::Forest { ntree, mtry, min_leaf } => {
                fit_forest(x, z, &ForestParams { ntree, mtry, min_leaf }, seed).map(Classifier::Forest)
            }
        }
    }

    /// The random forest tuning grid NTREE × MTRY, for replication sweeps.
    pub fn forest_grid(ntrees: &[usize], mtrys: &[usize]) -> Vec<ClassifierSpec> {
        ntrees
            .iter()
            .flat_map(|&ntree| mtrys.iter().map(move |&m| ClassifierSpec::Forest { ntree, mtry: Some(m), min_leaf: 1 }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Highest sensitivity, ties broken by specificity.
    #[default]
    SensitivityFirst,
    /// Highest specificity, ties broken by sensitivity.
    SpecificityFirst,
}

/// Index of the preferred candidate; earlier candidates win exact ties.
pub fn rank_by_policy(metrics: &[ConfusionMetrics], policy: SelectionPolicy) -> Option<usize> {
    let key = |m: &ConfusionMetrics| {
        let (sens, spec) = (m.sensitivity.unwrap_or(-1.0), m.specificity.unwrap_or(-1.0));
        match policy {
            SelectionPolicy::SensitivityFirst => (sens, spec),
            SelectionPolicy::SpecificityFirst => (spec, sens),
        }
    };
    let mut best: Option<(usize, (f64, f64))> = None;
    for (i, m) in metrics.iter().enumerate() {
        let k = key(m);
        if best.is_none_or(|(_, b)| k.0 > b.0 || (k.0 == b.0 && k.1 > b.1)) {
            best = Some((i, k));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub index: usize,
    pub classifier: Classifier,
    pub metrics: Vec<ConfusionMetrics>,
}

pub struct Dataset<'a> {
    pub x: &'a [Vec<f64>],
    pub z: &'a [bool],
}

/// Fits every candidate on `train`, scores on `test` at `threshold`, and
/// returns the one preferred by `policy`.
pub fn select_classifier(
    candidates: &[ClassifierSpec],
    train: Dataset<'_>,
    test: Dataset<'_>,
    policy: SelectionPolicy,
    threshold: f64,
    seed: u64,
) -> Result<Selection, ClassifyError> {
    if candidates.is_empty() {
        return Err(ClassifyError::InvalidArgument("no candidate classifiers".into()));
    }
    let mut fitted = Vec::with_capacity(candidates.len());
    let mut metrics = Vec::with_capacity(candidates.len());
    for (i, spec) in candidates.iter().enumerate() {
        let model = spec.fit(train.x, train.z, rng::derive_seed(seed, i as u64))?;
        let probs = model.predict_batch(test.x)?;
        metrics.push(confusion_metrics(&probs, test.z, threshold)?);
        fitted.push(model);
    }
    let index = rank_by_policy(&metrics, policy).expect("non-empty candidates");
    Ok(Selection { index, classifier: fitted.swap_remove(index), metrics })
}

/// Stratified train/test split; returns `(train, test)` row indices, each sorted.
pub fn stratified_split(z: &[bool], test_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut r = rng::stream(seed, rng::streams::SPLIT);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for class in [false, true] {
        let mut idx: Vec<usize> = (0..z.len()).filter(|&i| z[i] == class).collect();
        idx.shuffle(&mut r);
        let k = (idx.len() as f64 * test_fraction).round() as usize;
        test.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}
