//! L2-penalized logistic regression fitted by damped Newton iterations on
//! internally standardized features. The intercept is not penalized.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ClassifyError;

pub const DEFAULT_L2_PENALTY: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 100;
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    /// Coefficients on the standardized scale.
    pub coefficients: Vec<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub l2_penalty: f64,
}

impl LogisticModel {
    pub fn p(&self) -> usize {
        self.coefficients.len()
    }

    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.intercept
            + x.iter()
                .zip(&self.coefficients)
                .zip(self.means.iter().zip(&self.scales))
                .map(|((v, b), (m, s))| b * (v - m) / s)
                .sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(x))
    }
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^t) without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Penalized negative log-likelihood on a standardized design.
///
/// Parameters are `[intercept, β_1, ..., β_p]`.
#[derive(Debug, Clone)]
pub struct LogisticObjective {
    rows: Vec<Vec<f64>>,
    z: Vec<f64>,
    l2_penalty: f64,
}

impl LogisticObjective {
    pub fn new(rows: Vec<Vec<f64>>, z: &[bool], l2_penalty: f64) -> Self {
        Self { rows, z: z.iter().map(|&b| f64::from(u8::from(b))).collect(), l2_penalty }
    }

    fn eta(&self, row: &[f64], params: &[f64]) -> f64 {
        params[0] + row.iter().zip(&params[1..]).map(|(x, b)| x * b).sum::<f64>()
    }

    pub fn value(&self, params: &[f64]) -> f64 {
        let nll: f64 = self
            .rows
            .iter()
            .zip(&self.z)
            .map(|(r, z)| {
                let e = self.eta(r, params);
                softplus(e) - z * e
            })
            .sum();
        nll + 0.5 * self.l2_penalty * params[1..].iter().map(|b| b * b).sum::<f64>()
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; params.len()];
        for (r, z) in self.rows.iter().zip(&self.z) {
            let resid = sigmoid(self.eta(r, params)) - z;
            g[0] += resid;
            for (gj, x) in g[1..].iter_mut().zip(r) {
                *gj += resid * x;
            }
        }
        for (gj, b) in g[1..].iter_mut().zip(&params[1..]) {
            *gj += self.l2_penalty * b;
        }
        g
    }

    fn hessian(&self, params: &[f64]) -> DMatrix<f64> {
        let k = params.len();
        let mut h = DMatrix::zeros(k, k);
        let mut aug = vec![1.0; k];
        for r in &self.rows {
            let mu = sigmoid(self.eta(r, params));
            let w = mu * (1.0 - mu);
            aug[1..].copy_from_slice(r);
            for a in 0..k {
                for b in 0..=a {
                    h[(a, b)] += w * aug[a] * aug[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        for j in 1..k {
            h[(j, j)] += self.l2_penalty;
        }
        h
    }
}

fn standardize(x: &[Vec<f64>], p: usize) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let n = x.len() as f64;
    let means: Vec<f64> = (0..p).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let scales: Vec<f64> = (0..p)
        .map(|j| {
            let v = x.iter().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n;
            if v > 1e-24 {
                v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let rows = x
        .iter()
        .map(|r| (0..p).map(|j| (r[j] - means[j]) / scales[j]).collect())
        .collect();
    (means, scales, rows)
}

/// Fits the model; the per-sample gradient norm must drop to `tol`.
pub fn fit_logistic(
    x: &[Vec<f64>],
    z: &[bool],
    l2_penalty: f64,
    max_iter: usize,
    tol: f64,
) -> Result<LogisticModel, ClassifyError> {
    fit_logistic_traced(x, z, l2_penalty, max_iter, tol).map(|(m, _)| m)
}

/// As [`fit_logistic`], also returning the objective value after each iteration.
pub fn fit_logistic_traced(
    x: &[Vec<f64>],
    z: &[bool],
    l2_penalty: f64,
    max_iter: usize,
    tol: f64,
) -> Result<(LogisticModel, Vec<f64>), ClassifyError> {
    let n = x.len();
    if n == 0 || n != z.len() {
        return Err(ClassifyError::InvalidArgument("need equal, non-zero numbers of rows and labels".into()));
    }
    let p = x[0].len();
    if x.iter().any(|r| r.len() != p) {
        return Err(ClassifyError::DimensionMismatch { expected: p, got: 0 });
    }
    if !(l2_penalty >= 0.0) {
        return Err(ClassifyError::InvalidArgument("l2 penalty must be non-negative".into()));
    }
    let (means, scales, rows) = standardize(x, p);
    let obj = LogisticObjective::new(rows, z, l2_penalty);
    let mut params = vec![0.0; p + 1];
    let mut value = obj.value(&params);
    let mut trace = vec![value];
    let build = |params: &[f64]| LogisticModel {
        intercept: params[0],
        coefficients: params[1..].to_vec(),
        means: means.clone(),
        scales: scales.clone(),
        l2_penalty,
    };

    for _ in 0..max_iter {
        let g = obj.gradient(&params);
        let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt() / n as f64;
        if gnorm <= tol {
            return Ok((build(&params), trace));
        }
        let mut h = obj.hessian(&params);
        let gv = DVector::from_vec(g);
        let mut jitter = 1e-10;
        let step = loop {
            if let Some(ch) = h.clone().cholesky() {
                break ch.solve(&gv);
            }
            for j in 0..=p {
                h[(j, j)] += jitter;
            }
            jitter *= 10.0;
            if jitter > 1e6 {
                return Err(ClassifyError::NotConverged { model: Box::new(build(&params)), grad_norm: gnorm });
            }
        };
        // Step halving keeps the objective non-increasing.
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..50 {
            let cand: Vec<f64> = params.iter().zip(step.iter()).map(|(a, s)| a - t * s).collect();
            let v = obj.value(&cand);
            if v <= value {
                params = cand;
                value = v;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        trace.push(value);
        if !accepted {
            break;
        }
    }
    let g = obj.gradient(&params);
    let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt() / n as f64;
    if gnorm <= tol {
        Ok((build(&params), trace))
    } else {
        Err(ClassifyError::NotConverged { model: Box::new(build(&params)), grad_norm: gnorm })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_one_dimensional() {
        let mut x = Vec::new();
        let mut z = Vec::new();
        for _ in 0..10 {
            x.push(vec![0.0]);
            z.push(false);
            x.push(vec![1.0]);
            z.push(true);
        }
        let m = fit_logistic(&x, &z, 1e-3, 200, 1e-8).unwrap();
        let acc = x.iter().zip(&z).filter(|(r, &zz)| (m.predict_proba(r) >= 0.5) == zz).count();
        assert_eq!(acc, 20);
    }

    #[test]
    fn all_positive_gives_near_one() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 12.0, 0.5]).collect();
        let z = vec![true; 12];
        let m = fit_logistic(&x, &z, 1e-4, 200, 1e-8).unwrap();
        assert!(m.predict_proba(&[0.3, 0.5]) > 0.999_999);
    }

    #[test]
    fn zero_model_is_half() {
        let m = LogisticModel {
            intercept: 0.0,
            coefficients: vec![0.0, 0.0],
            means: vec![0.0, 0.0],
            scales: vec![1.0, 1.0],
            l2_penalty: 0.0,
        };
        assert_eq!(m.predict_proba(&[3.0, -2.0]), 0.5);
    }

    #[test]
    fn monotone_in_positive_coefficient() {
        let m = LogisticModel {
            intercept: -1.0,
            coefficients: vec![2.5],
            means: vec![0.5],
            scales: vec![0.3],
            l2_penalty: 0.0,
        };
        let probs: Vec<f64> = (0..50).map(|i| m.predict_proba(&[i as f64 / 49.0])).collect();
        assert!(probs.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn non_convergence_carries_iterate() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let z: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        match fit_logistic(&x, &z, 0.0, 2, 1e-14) {
            Err(ClassifyError::NotConverged { model, .. }) => assert!(model.coefficients[0] > 0.0),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn stable_extremes() {
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
    }
}
