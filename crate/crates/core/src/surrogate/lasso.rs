//! Lasso regression by cyclic coordinate descent.
//!
//! Features are centred and scaled to unit variance (`1/n` denominator) and
//! the target is centred before fitting. On that scale the objective is
//! `RSS/(2n) + λ‖β‖₁`; returned coefficients are mapped back to the original
//! feature scale. Constant features never enter the model.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::SurrogateError;
use crate::{par, rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LassoConfig {
    pub n_lambda: usize,
    /// Smallest grid value as a fraction of λ_max. `None` picks 1e-4 when
    /// there are more rows than features and 1e-2 otherwise.
    pub lambda_min_ratio: Option<f64>,
    /// Cross-validation folds. Below 2 the smallest λ of the grid is used.
    pub folds: usize,
    pub max_sweeps: usize,
    /// Convergence when no coefficient moves more than `tol` times the
    /// target's scale in a sweep.
    pub tol: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self { n_lambda: 50, lambda_min_ratio: None, folds: 5, max_sweeps: 100_000, tol: 1e-9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub lambda: f64,
    pub cv_error: Option<f64>,
}

impl LassoModel {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }

    pub fn support(&self) -> Vec<usize> {
        self.coefficients.iter().enumerate().filter(|(_, b)| **b != 0.0).map(|(j, _)| j).collect()
    }
}

fn soft_threshold(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_inputs(f: &[Vec<f64>], u: &[f64]) -> Result<usize, SurrogateError> {
    if f.len() != u.len() {
        return Err(SurrogateError::DimensionMismatch { expected: f.len(), got: u.len() });
    }
    if f.len() < 2 {
        return Err(SurrogateError::InvalidArgument("lasso needs at least 2 rows".into()));
    }
    let m = f[0].len();
    if let Some(row) = f.iter().find(|r| r.len() != m) {
        return Err(SurrogateError::DimensionMismatch { expected: m, got: row.len() });
    }
    if f.iter().flatten().chain(u).any(|v| !v.is_finite()) {
        return Err(SurrogateError::InvalidArgument("non-finite value in lasso inputs".into()));
    }
    Ok(m)
}

struct Standardized {
    n: usize,
    cols: Vec<Vec<f64>>,
    means: Vec<f64>,
    scales: Vec<f64>,
    u_mean: f64,
    u_scale: f64,
    u: Vec<f64>,
}

impl Standardized {
    fn new(f: &[Vec<f64>], u: &[f64], rows: &[usize]) -> Self {
        let n = rows.len();
        let m = f[0].len();
        let nf = n as f64;
        let mut cols = Vec::with_capacity(m);
        let mut means = Vec::with_capacity(m);
        let mut scales = Vec::with_capacity(m);
        for j in 0..m {
            let mean = rows.iter().map(|&i| f[i][j]).sum::<f64>() / nf;
            let var = rows.iter().map(|&i| (f[i][j] - mean).powi(2)).sum::<f64>() / nf;
            let scale = var.sqrt();
            if scale > 1e-12 * (1.0 + mean.abs()) {
                cols.push(rows.iter().map(|&i| (f[i][j] - mean) / scale).collect());
                scales.push(scale);
            } else {
                cols.push(Vec::new());
                scales.push(0.0);
            }
            means.push(mean);
        }
        let u_mean = rows.iter().map(|&i| u[i]).sum::<f64>() / nf;
        let uc: Vec<f64> = rows.iter().map(|&i| u[i] - u_mean).collect();
        let u_scale = (dot(&uc, &uc) / nf).sqrt();
        Self { n, cols, means, scales, u_mean, u_scale, u: uc }
    }

    fn lambda_max(&self) -> f64 {
        self.cols
            .iter()
            .filter(|c| !c.is_empty())
            .map(|c| dot(c, &self.u).abs() / self.n as f64)
            .fold(0.0, f64::max)
    }

    fn objective(&self, beta: &[f64], resid: &[f64], lambda: f64) -> f64 {
        dot(resid, resid) / (2.0 * self.n as f64) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }

    fn sweep(&self, idx: &[usize], lambda: f64, beta: &mut [f64], resid: &mut [f64]) -> f64 {
        let nf = self.n as f64;
        let mut max_change: f64 = 0.0;
        for &j in idx {
            let col = &self.cols[j];
            let old = beta[j];
            let new = soft_threshold(old + dot(col, resid) / nf, lambda);
            if new != old {
                let d = new - old;
                for (r, c) in resid.iter_mut().zip(col) {
                    *r -= d * c;
                }
                beta[j] = new;
                max_change = max_change.max(d.abs());
            }
        }
        max_change
    }

    /// Coordinate descent from a warm start; alternates full sweeps with
    /// sweeps over the current support.
    fn descend(
        &self,
        lambda: f64,
        beta: &mut [f64],
        resid: &mut [f64],
        cfg: &LassoConfig,
        mut trace: Option<&mut Vec<f64>>,
    ) -> Result<(), SurrogateError> {
        let all: Vec<usize> = (0..self.cols.len()).filter(|&j| !self.cols[j].is_empty()).collect();
        let thr = cfg.tol * self.u_scale.max(f64::MIN_POSITIVE);
        let mut sweeps = 0;
        let mut last = f64::INFINITY;
        while sweeps < cfg.max_sweeps {
            last = self.sweep(&all, lambda, beta, resid);
            sweeps += 1;
            if let Some(t) = trace.as_deref_mut() {
                t.push(self.objective(beta, resid, lambda));
            }
            if last <= thr {
                return Ok(());
            }
            let active: Vec<usize> = all.iter().copied().filter(|&j| beta[j] != 0.0).collect();
            while sweeps < cfg.max_sweeps {
                last = self.sweep(&active, lambda, beta, resid);
                sweeps += 1;
                if let Some(t) = trace.as_deref_mut() {
                    t.push(self.objective(beta, resid, lambda));
                }
                if last <= thr {
                    break;
                }
            }
        }
        Err(SurrogateError::LassoNotConverged { lambda, sweeps, max_change: last })
    }

    fn model(&self, beta: &[f64], lambda: f64) -> LassoModel {
        let coefficients: Vec<f64> = beta
            .iter()
            .zip(&self.scales)
            .map(|(b, s)| if *s > 0.0 { b / s } else { 0.0 })
            .collect();
        let intercept = self.u_mean - coefficients.iter().zip(&self.means).map(|(b, m)| b * m).sum::<f64>();
        LassoModel { intercept, coefficients, lambda, cv_error: None }
    }

    /// Warm-started fits along a decreasing λ grid.
    fn path(&self, lambdas: &[f64], cfg: &LassoConfig) -> Result<Vec<LassoModel>, SurrogateError> {
        let mut beta = vec![0.0; self.cols.len()];
        let mut resid = self.u.clone();
        let mut out = Vec::with_capacity(lambdas.len());
        for &lambda in lambdas {
            if self.u_scale > 0.0 {
                self.descend(lambda, &mut beta, &mut resid, cfg, None)?;
            }
            out.push(self.model(&beta, lambda));
        }
        Ok(out)
    }
}

/// Smallest λ at which every standardized coefficient is zero: `max|F'u|/n`.
pub fn lambda_max(f: &[Vec<f64>], u: &[f64]) -> Result<f64, SurrogateError> {
    check_inputs(f, u)?;
    let rows: Vec<usize> = (0..f.len()).collect();
    Ok(Standardized::new(f, u, &rows).lambda_max())
}

/// Fits at a single λ.
pub fn lasso_at(f: &[Vec<f64>], u: &[f64], lambda: f64, cfg: &LassoConfig) -> Result<LassoModel, SurrogateError> {
    Ok(lasso_at_traced(f, u, lambda, cfg)?.0)
}

/// As [`lasso_at`], also returning the standardized objective after every
/// coordinate sweep.
pub fn lasso_at_traced(
    f: &[Vec<f64>],
    u: &[f64],
    lambda: f64,
    cfg: &LassoConfig,
) -> Result<(LassoModel, Vec<f64>), SurrogateError> {
    check_inputs(f, u)?;
    if !(lambda >= 0.0) {
        return Err(SurrogateError::InvalidArgument(format!("lambda must be >= 0, got {lambda}")));
    }
    let rows: Vec<usize> = (0..f.len()).collect();
    let s = Standardized::new(f, u, &rows);
    let mut beta = vec![0.0; s.cols.len()];
    let mut resid = s.u.clone();
    let mut trace = vec![s.objective(&beta, &resid, lambda)];
    if s.u_scale > 0.0 {
        s.descend(lambda, &mut beta, &mut resid, cfg, Some(&mut trace))?;
    }
    Ok((s.model(&beta, lambda), trace))
}

fn lambda_grid(lmax: f64, n: usize, m: usize, cfg: &LassoConfig) -> Vec<f64> {
    let ratio = cfg.lambda_min_ratio.unwrap_or(if n > m { 1e-4 } else { 1e-2 });
    let k = cfg.n_lambda.max(1);
    if k == 1 {
        return vec![lmax * ratio];
    }
    (0..k).map(|i| lmax * ratio.powf(i as f64 / (k - 1) as f64)).collect()
}

/// Fits along a λ grid and keeps the λ with the smallest cross-validated
/// squared error (ties go to the larger λ).
pub fn fit_lasso(f: &[Vec<f64>], u: &[f64], cfg: &LassoConfig, seed: u64) -> Result<LassoModel, SurrogateError> {
    let m = check_inputs(f, u)?;
    let n = f.len();
    let rows: Vec<usize> = (0..n).collect();
    let full = Standardized::new(f, u, &rows);
    let lmax = full.lambda_max();
    if lmax == 0.0 || full.u_scale == 0.0 {
        return Ok(full.model(&vec![0.0; m], lmax));
    }
    let grid = lambda_grid(lmax, n, m, cfg);
    if cfg.folds < 2 || n < 2 * cfg.folds {
        let mut path = full.path(&grid, cfg)?;
        return Ok(path.pop().expect("grid is non-empty"));
    }

    let mut order = rows.clone();
    order.shuffle(&mut rng::stream(seed, rng::streams::SPLIT));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % cfg.folds;
    }
    let fold_sse = par::map_range(cfg.folds, |k| -> Result<Vec<f64>, SurrogateError> {
        let train: Vec<usize> = rows.iter().copied().filter(|&i| fold_of[i] != k).collect();
        let path = Standardized::new(f, u, &train).path(&grid, cfg)?;
        Ok(path
            .iter()
            .map(|model| {
                rows.iter().filter(|&&i| fold_of[i] == k).map(|&i| (model.predict(&f[i]) - u[i]).powi(2)).sum()
            })
            .collect())
    });
    let mut cv = vec![0.0; grid.len()];
    for sse in fold_sse {
        for (c, e) in cv.iter_mut().zip(sse?) {
            *c += e / n as f64;
        }
    }
    let mut best = 0;
    for (i, e) in cv.iter().enumerate() {
        if *e < cv[best] {
            best = i;
        }
    }
    let mut path = full.path(&grid[..=best], cfg)?;
    let mut model = path.pop().expect("grid is non-empty");
    model.cv_error = Some(cv[best]);
    Ok(model)
}
