//! Benchmark problems, the weighted squared-error loss, and evaluation records.

mod dtlz;
mod external;
mod record;
mod toy;

use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dtlz::{dtlz2_mod, Dtlz2Mod};
pub use external::{external_problem, ExternalEvaluatorSpec};
pub use record::{EvaluationRecord, EvaluationTable, Source};
pub use toy::{toy2d, toy2d_with_weights, Toy2d, toy_optima};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("input {x:?} outside the unit hypercube or of wrong dimension")]
    OutOfDomain { x: Vec<f64> },
    #[error("evaluator failed: {0}")]
    Evaluation(String),
    #[error("malformed evaluator output: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Result of running the system at one input.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Feasible(Vec<f64>),
    Infeasible,
}

/// Something that maps a batch of inputs in `[0, 1]^p` to outcomes.
///
/// Implementations must be deterministic and preserve row order.
pub trait Evaluator: Send + Sync + fmt::Debug {
    fn evaluate_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Outcome>, BenchError>;
}

/// Convenience trait for pure point-wise evaluators; batches run data-parallel.
pub trait PointEvaluator: Send + Sync + fmt::Debug {
    fn evaluate_point(&self, x: &[f64]) -> Outcome;
}

impl<T: PointEvaluator> Evaluator for T {
    fn evaluate_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Outcome>, BenchError> {
        Ok(crate::par::map(xs, |x| self.evaluate_point(x)))
    }
}

/// Σ_j ((y_j − T_j) / w_j)².
pub fn loss(y: &[f64], targets: &[f64], weights: &[f64]) -> Result<f64, BenchError> {
    if y.len() != targets.len() || y.len() != weights.len() {
        return Err(BenchError::InvalidArgument(format!(
            "dimension mismatch: |y|={}, |T|={}, |W|={}",
            y.len(),
            targets.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(BenchError::InvalidArgument("weights must be positive".into()));
    }
    Ok(y.iter().zip(targets).zip(weights).map(|((y, t), w)| ((y - t) / w).powi(2)).sum())
}

/// An evaluable multi-response system with its targets and weights.
#[derive(Debug, Clone)]
pub struct Problem {
    name: String,
    p: usize,
    q: usize,
    targets: Vec<f64>,
    weights: Vec<f64>,
    evaluator: Arc<dyn Evaluator>,
    evaluations: Arc<AtomicUsize>,
}

impl Problem {
    pub fn new(
        name: impl Into<String>,
        p: usize,
        targets: Vec<f64>,
        weights: Vec<f64>,
        evaluator: Arc<dyn Evaluator>,
    ) -> Result<Self, BenchError> {
        let q = targets.len();
        if p == 0 || q == 0 {
            return Err(BenchError::InvalidArgument("p and q must be positive".into()));
        }
        if weights.len() != q {
            return Err(BenchError::InvalidArgument("|W| must equal |T|".into()));
        }
        if weights.iter().any(|w| !(*w > 0.0)) {
            return Err(BenchError::InvalidArgument("weights must be positive".into()));
        }
        Ok(Self {
            name: name.into(),
            p,
            q,
            targets,
            weights,
            evaluator,
            evaluations: Arc::new(AtomicUsize::new(0)),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Number of points passed to the evaluator so far (shared across clones).
    pub fn evaluations(&self) -> usize {
        self.evaluations.load(Ordering::SeqCst)
    }

    pub fn loss(&self, y: &[f64]) -> Result<f64, BenchError> {
        loss(y, &self.targets, &self.weights)
    }

    fn check_domain(&self, x: &[f64]) -> Result<(), BenchError> {
        if x.len() != self.p || x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(BenchError::OutOfDomain { x: x.to_vec() });
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<EvaluationRecord, BenchError> {
        let mut out = self.evaluate_batch(&[x.to_vec()])?;
        Ok(out.remove(0))
    }

    pub fn evaluate_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<EvaluationRecord>, BenchError> {
        for x in xs {
            self.check_domain(x)?;
        }
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let outcomes = self.evaluator.evaluate_batch(xs)?;
        if outcomes.len() != xs.len() {
            return Err(BenchError::Format(format!(
                "evaluator returned {} outcomes for {} inputs",
                outcomes.len(),
                xs.len()
            )));
        }
        self.evaluations.fetch_add(xs.len(), Ordering::SeqCst);
        xs.iter()
            .zip(outcomes)
            .map(|(x, o)| match o {
                Outcome::Infeasible => Ok(EvaluationRecord::infeasible(x.clone())),
                Outcome::Feasible(y) => {
                    if y.len() != self.q {
                        return Err(BenchError::Format(format!("expected {} responses, got {}", self.q, y.len())));
                    }
                    let l = self.loss(&y)?;
                    Ok(EvaluationRecord::feasible(x.clone(), y, l))
                }
            })
            .collect()
    }
}

/// Serializable reference to a problem, as used in configs and checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    Toy2d {
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    Dtlz2Mod {
        p: usize,
    },
    External(ExternalEvaluatorSpec),
}

impl ProblemSpec {
    pub fn build(&self) -> Result<Problem, BenchError> {
        match self {
            ProblemSpec::Toy2d { weights: None } => Ok(toy2d()),
            ProblemSpec::Toy2d { weights: Some(w) } => toy2d_with_weights(w.clone()),
            ProblemSpec::Dtlz2Mod { p } => dtlz2_mod(*p),
            ProblemSpec::External(spec) => external_problem(spec.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        assert_eq!(loss(&[1.0, 2.0], &[1.0, 2.0], &[1.0, 5.0]).unwrap(), 0.0);
        assert_eq!(loss(&[3.0], &[1.0], &[1.0]).unwrap(), 4.0);
        assert_eq!(loss(&[5.0], &[1.0], &[2.0]).unwrap(), 4.0);
        assert!(loss(&[1.0], &[1.0, 2.0], &[1.0, 1.0]).is_err());
        assert!(loss(&[1.0], &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn evaluate_rejects_out_of_domain() {
        let p = toy2d();
        assert!(matches!(p.evaluate(&[1.2, 0.5]), Err(BenchError::OutOfDomain { .. })));
        assert!(matches!(p.evaluate(&[0.5]), Err(BenchError::OutOfDomain { .. })));
        assert_eq!(p.evaluations(), 0);
    }

    #[test]
    fn record_loss_is_recomputable() {
        let p = toy2d();
        let r = p.evaluate(&[0.62, 0.81]).unwrap();
        let y = r.y.as_ref().unwrap();
        assert_eq!(r.loss.unwrap().to_bits(), p.loss(y).unwrap().to_bits());
        assert_eq!(p.evaluate(&[0.62, 0.81]).unwrap(), r);
        assert_eq!(p.evaluations(), 2);
    }

    #[test]
    fn problem_spec_round_trip() {
        let spec: ProblemSpec = serde_json::from_str(r#"{"kind":"dtlz2_mod","p":6}"#).unwrap();
        assert_eq!(spec, ProblemSpec::Dtlz2Mod { p: 6 });
        assert_eq!(spec.build().unwrap().q(), 6);
        assert!(serde_json::from_str::<ProblemSpec>(r#"{"kind":"nope"}"#).is_err());
    }
}
