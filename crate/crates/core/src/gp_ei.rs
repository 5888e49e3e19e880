//! Ordinary kriging with an anisotropic Gaussian kernel, and the expected
//! improvement (EI) search used as a global-optimization baseline.
//!
//! Correlation: `r(x, x') = exp(−½ Σ_h ((x_h − x'_h) / ℓ_h)²)`, with nugget `η`
//! added to the diagonal. Given lengthscales, the constant mean and process
//! variance have closed forms; lengthscales maximize the profile likelihood
//! `−(n/2) ln σ̂² − ½ ln |R|` by multi-start pattern search in `ln ℓ`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::bench::{BenchError, EvaluationRecord, Problem, Source};
use crate::design::{sq_dist, DesignMatrix};
use crate::rng;

pub const NUGGET_LADDER: [f64; 5] = [1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

#[derive(Debug, Error)]
pub enum GpError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("covariance not positive definite at the largest nugget")]
    NotPositiveDefinite,
    #[error(transparent)]
    Bench(#[from] BenchError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    /// Bounds on each lengthscale.
    pub lengthscale_bounds: (f64, f64),
    pub restarts: usize,
    /// Likelihood evaluations allowed per restart, per input dimension.
    pub evals_per_dim: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self { lengthscale_bounds: (0.01, 10.0), restarts: 3, evals_per_dim: 60 }
    }
}

#[derive(Debug, Clone)]
pub struct GpModel {
    x: Vec<Vec<f64>>,
    pub mean: f64,
    pub variance: f64,
    pub lengthscales: Vec<f64>,
    pub nugget: f64,
    pub log_likelihood: f64,
    alpha: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

fn correlation(a: &[f64], b: &[f64], inv_ls: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).zip(inv_ls).map(|((x, y), il)| ((x - y) * il).powi(2)).sum();
    (-0.5 * s).exp()
}

struct Profile {
    ll: f64,
    nugget: f64,
    mean: f64,
    variance: f64,
    alpha: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

fn profile(x: &[Vec<f64>], y: &[f64], lengthscales: &[f64]) -> Option<Profile> {
    let n = x.len();
    let inv: Vec<f64> = lengthscales.iter().map(|l| 1.0 / l).collect();
    let mut base = DMatrix::from_element(n, n, 1.0);
    for i in 0..n {
        for j in 0..i {
            let r = correlation(&x[i], &x[j], &inv);
            base[(i, j)] = r;
            base[(j, i)] = r;
        }
    }
    let yv = DVector::from_column_slice(y);
    let ones = DVector::from_element(n, 1.0);
    for &nugget in &NUGGET_LADDER {
        let mut r = base.clone();
        for i in 0..n {
            r[(i, i)] += nugget;
        }
        let Some(chol) = r.cholesky() else { continue };
        let ri_y = chol.solve(&yv);
        let ri_1 = chol.solve(&ones);
        let mean = ones.dot(&ri_y) / ones.dot(&ri_1);
        let resid = &yv - &ones * mean;
        let alpha = chol.solve(&resid);
        let variance = (resid.dot(&alpha) / n as f64).max(1e-300);
        let log_det: f64 = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let ll = -0.5 * n as f64 * variance.ln() - 0.5 * log_det;
        if !ll.is_finite() {
            continue;
        }
        return Some(Profile { ll, nugget, mean, variance, alpha, chol });
    }
    None
}

/// Profile log-likelihood at the given lengthscales (`None` if no nugget works).
pub fn profile_log_likelihood(x: &[Vec<f64>], y: &[f64], lengthscales: &[f64]) -> Option<f64> {
    profile(x, y, lengthscales).map(|p| p.ll)
}

/// Pattern search in log-lengthscale space; only improving moves are taken.
fn local_search(x: &[Vec<f64>], y: &[f64], start: Vec<f64>, bounds: (f64, f64), budget: usize) -> (Vec<f64>, f64) {
    let (lo, hi) = (bounds.0.ln(), bounds.1.ln());
    let eval = |logs: &[f64]| {
        let ls: Vec<f64> = logs.iter().map(|v| v.exp()).collect();
        profile_log_likelihood(x, y, &ls).unwrap_or(f64::NEG_INFINITY)
    };
    let mut cur = start;
    let mut best = eval(&cur);
    let mut step = 1.0;
    let mut evals = 1;
    while step > 1e-3 && evals < budget {
        let mut improved = false;
        for d in 0..cur.len() {
            for dir in [1.0, -1.0] {
                let mut cand = cur.clone();
                cand[d] = (cand[d] + dir * step).clamp(lo, hi);
                if cand[d] == cur[d] {
                    continue;
                }
                let v = eval(&cand);
                evals += 1;
                if v > best {
                    best = v;
                    cur = cand;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (cur, best)
}

/// Fits the model. Restart 0 starts from `ℓ_h = 0.5` (clamped); further
/// restarts start uniformly in the log bounds.
pub fn fit_gp(x: &[Vec<f64>], y: &[f64], cfg: &GpConfig, seed: u64) -> Result<GpModel, GpError> {
    let n = x.len();
    if n < 2 || n != y.len() {
        return Err(GpError::InvalidArgument("need at least two rows and matching outputs".into()));
    }
    let p = x[0].len();
    if p == 0 || x.iter().any(|r| r.len() != p) {
        return Err(GpError::InvalidArgument("ragged inputs".into()));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(GpError::InvalidArgument("non-finite outputs".into()));
    }
    let (lo, hi) = (cfg.lengthscale_bounds.0.ln(), cfg.lengthscale_bounds.1.ln());
    let mut r = rng::stream(seed, 0);
    let starts: Vec<Vec<f64>> = (0..cfg.restarts.max(1))
        .map(|k| {
            if k == 0 {
                vec![0.5f64.ln().clamp(lo, hi); p]
            } else {
                (0..p).map(|_| r.random_range(lo..=hi)).collect()
            }
        })
        .collect();
    let budget = cfg.evals_per_dim.max(1) * p;
    let results = crate::par::map(&starts, |s| local_search(x, y, s.clone(), cfg.lengthscale_bounds, budget));
    let (best_logs, _) = results
        .into_iter()
        .fold((Vec::new(), f64::NEG_INFINITY), |acc, (l, v)| if v > acc.1 { (l, v) } else { acc });
    if best_logs.is_empty() {
        return Err(GpError::NotPositiveDefinite);
    }
    let lengthscales: Vec<f64> = best_logs.iter().map(|v| v.exp()).collect();
    let prof = profile(x, y, &lengthscales).ok_or(GpError::NotPositiveDefinite)?;
    Ok(GpModel {
        x: x.to_vec(),
        mean: prof.mean,
        variance: prof.variance,
        lengthscales,
        nugget: prof.nugget,
        log_likelihood: prof.ll,
        alpha: prof.alpha,
        chol: prof.chol,
    })
}

impl GpModel {
    fn corr_vector(&self, x: &[f64]) -> DVector<f64> {
        let inv: Vec<f64> = self.lengthscales.iter().map(|l| 1.0 / l).collect();
        DVector::from_iterator(self.x.len(), self.x.iter().map(|xi| correlation(xi, x, &inv)))
    }

    pub fn predict_mean(&self, x: &[f64]) -> f64 {
        self.mean + self.corr_vector(x).dot(&self.alpha)
    }

    /// Posterior mean and standard deviation.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let r = self.corr_vector(x);
        let mean = self.mean + r.dot(&self.alpha);
        let ri_r = self.chol.solve(&r);
        let var = self.variance * (1.0 - r.dot(&ri_r)).max(0.0);
        (mean, var.sqrt())
    }

    pub fn training_inputs(&self) -> &[Vec<f64>] {
        &self.x
    }
}

pub fn gp_predict(model: &GpModel, x: &[f64]) -> (f64, f64) {
    model.predict(x)
}

/// EI for minimization: `(f_min − μ) Φ(u) + σ φ(u)`, `u = (f_min − μ)/σ`.
pub fn expected_improvement_from(mean: f64, sd: f64, f_min: f64) -> f64 {
    let diff = f_min - mean;
    if !(sd > 1e-300) {
        return diff.max(0.0);
    }
    let n = Normal::standard();
    let u = diff / sd;
    (diff * n.cdf(u) + sd * n.pdf(u)).max(0.0)
}

pub fn expected_improvement(model: &GpModel, x: &[f64], f_min: f64) -> f64 {
    let (m, s) = model.predict(x);
    expected_improvement_from(m, s, f_min)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EiConfig {
    pub candidates: usize,
    pub polish_starts: usize,
    /// Model `ln L` instead of `L`.
    pub log_loss: bool,
    pub gp: GpConfig,
}

impl Default for EiConfig {
    fn default() -> Self {
        Self { candidates: 4096, polish_starts: 5, log_loss: true, gp: GpConfig::default() }
    }
}

/// Losses with infeasible rows replaced by the largest feasible loss.
fn imputed_losses(records: &[EvaluationRecord]) -> Result<Vec<f64>, GpError> {
    let m = records.iter().filter_map(|r| r.loss).fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return Err(GpError::InvalidArgument("no feasible points to impute from".into()));
    }
    Ok(records.iter().map(|r| r.loss.unwrap_or(m)).collect())
}

/// Coordinate-wise pattern ascent of `f` inside the unit box.
fn polish(start: Vec<f64>, f: impl Fn(&[f64]) -> f64) -> (Vec<f64>, f64) {
    let mut cur = start;
    let mut best = f(&cur);
    let mut step = 0.05;
    let mut iters = 0;
    while step > 1e-7 && iters < 400 {
        iters += 1;
        let mut improved = false;
        for d in 0..cur.len() {
            for dir in [1.0, -1.0] {
                let mut cand = cur.clone();
                cand[d] = (cand[d] + dir * step).clamp(0.0, 1.0);
                let v = f(&cand);
                if v > best {
                    best = v;
                    cur = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (cur, best)
}

/// Sequential EI search starting from already evaluated `initial` records.
///
/// Returns the initial records followed by `n_new` records tagged `ei`.
pub fn ei_optimize(
    problem: &Problem,
    initial: &[EvaluationRecord],
    n_new: usize,
    cfg: &EiConfig,
    seed: u64,
) -> Result<Vec<EvaluationRecord>, GpError> {
    let mut records = initial.to_vec();
    let p = problem.p();
    for step in 0..n_new {
        let xs: Vec<Vec<f64>> = records.iter().map(|r| r.x.clone()).collect();
        let mut losses = imputed_losses(&records)?;
        if cfg.log_loss {
            losses.iter_mut().for_each(|l| *l = l.max(crate::med::LOSS_FLOOR).ln());
        }
        let f_min = losses.iter().copied().fold(f64::INFINITY, f64::min);
        let step_seed = rng::derive_seed(seed, step as u64);
        let mut r = rng::stream(step_seed, rng::streams::EI);
        let cands: Vec<Vec<f64>> = (0..cfg.candidates).map(|_| (0..p).map(|_| r.random::<f64>()).collect()).collect();
        let next = match fit_gp(&xs, &losses, &cfg.gp, step_seed) {
            Ok(gp) => {
                let scores = crate::par::map(&cands, |c| expected_improvement(&gp, c, f_min));
                let mut order: Vec<usize> = (0..cands.len()).collect();
                order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
                let starts: Vec<Vec<f64>> = order.iter().take(cfg.polish_starts.max(1)).map(|&i| cands[i].clone()).collect();
                let polished = crate::par::map(&starts, |s| polish(s.clone(), |x| expected_improvement(&gp, x, f_min)));
                let (best_x, best_ei) = polished
                    .into_iter()
                    .fold((Vec::new(), f64::NEG_INFINITY), |acc, (x, v)| if v > acc.1 { (x, v) } else { acc });
                if best_ei > 0.0 {
                    best_x
                } else {
                    log::info!("EI step {step}: zero improvement everywhere, taking max-sd candidate");
                    max_sd_candidate(&gp, &cands)
                }
            }
            Err(e) => {
                log::warn!("EI step {step}: GP fit failed ({e}); exploring the least covered candidate");
                farthest_candidate(&xs, &cands)
            }
        };
        records.push(problem.evaluate(&next)?.with_source(Source::Ei));
    }
    Ok(records)
}

/// Evaluates `initial` on `problem` and continues with [`ei_optimize`].
pub fn ei_optimize_design(
    problem: &Problem,
    initial: &DesignMatrix,
    n_new: usize,
    cfg: &EiConfig,
    seed: u64,
) -> Result<Vec<EvaluationRecord>, GpError> {
    let init = problem.evaluate_batch(&initial.to_rows())?;
    ei_optimize(problem, &init, n_new, cfg, seed)
}

fn max_sd_candidate(gp: &GpModel, cands: &[Vec<f64>]) -> Vec<f64> {
    let sds = crate::par::map(cands, |c| gp.predict(c).1);
    let i = (0..cands.len()).fold(0, |b, i| if sds[i] > sds[b] { i } else { b });
    cands[i].clone()
}

fn farthest_candidate(xs: &[Vec<f64>], cands: &[Vec<f64>]) -> Vec<f64> {
    let gaps = crate::par::map(cands, |c| xs.iter().map(|x| sq_dist(x, c)).fold(f64::INFINITY, f64::min));
    let i = (0..cands.len()).fold(0, |b, i| if gaps[i] > gaps[b] { i } else { b });
    cands[i].clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::toy2d;
    use crate::design::maximin_lhd;

    #[test]
    fn interpolates_training_data() {
        let x: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 / 7.0, ((i * 3) % 8) as f64 / 7.0]).collect();
        let y: Vec<f64> = x.iter().map(|v| (3.0 * v[0]).sin() + v[1] * v[1]).collect();
        let gp = fit_gp(&x, &y, &GpConfig::default(), 1).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let (m, s) = gp.predict(xi);
            assert!((m - yi).abs() < 1e-3, "{m} vs {yi}");
            assert!(s <= (gp.variance * gp.nugget * 10.0).sqrt() + 1e-6);
        }
    }

    #[test]
    fn linear_target_midpoints() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0]).collect();
        let y: Vec<f64> = x.iter().map(|v| v[0]).collect();
        let gp = fit_gp(&x, &y, &GpConfig::default(), 2).unwrap();
        for k in 0..4 {
            let mid = (k as f64 + 0.5) / 4.0;
            assert!((gp.predict_mean(&[mid]) - mid).abs() < 0.05);
        }
    }

    #[test]
    fn fixed_seed_same_hyperparameters() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![(i as f64 * 0.31).fract(), (i as f64 * 0.57).fract()]).collect();
        let y: Vec<f64> = x.iter().map(|v| v[0] - 2.0 * v[1] * v[0]).collect();
        let a = fit_gp(&x, &y, &GpConfig::default(), 5).unwrap();
        let b = fit_gp(&x, &y, &GpConfig::default(), 5).unwrap();
        assert_eq!(a.lengthscales, b.lengthscales);
    }

    #[test]
    fn far_field_reverts_to_prior() {
        let x = vec![vec![0.0], vec![0.1], vec![0.2]];
        let y = vec![1.0, 2.0, 1.5];
        let gp = fit_gp(&x, &y, &GpConfig { lengthscale_bounds: (0.01, 0.05), ..Default::default() }, 0).unwrap();
        let (m, s) = gp.predict(&[50.0]);
        assert!((m - gp.mean).abs() < 1e-12);
        assert!((s - gp.variance.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn symmetric_two_point_prediction() {
        let x = vec![vec![0.2], vec![0.8]];
        let y = vec![3.0, 3.0];
        let gp = fit_gp(&x, &y, &GpConfig::default(), 0).unwrap();
        assert!((gp.predict_mean(&[0.5]) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn ei_closed_form_values() {
        assert_eq!(expected_improvement_from(1.0, 0.0, 0.5), 0.0);
        assert!((expected_improvement_from(0.2, 0.0, 0.5) - 0.3).abs() < 1e-15);
        assert!((expected_improvement_from(0.0, 1.0, 0.0) - 0.398_942_280_401_432_7).abs() < 1e-12);
        let mut r = rng::stream(1, 0);
        for _ in 0..1000 {
            let (m, s, f) = (r.random_range(-5.0..5.0), r.random_range(0.0..3.0), r.random_range(-5.0..5.0));
            assert!(expected_improvement_from(m, s, f) >= 0.0);
        }
    }

    #[test]
    fn ei_with_zero_new_points_returns_initial() {
        let prob = toy2d();
        let d = maximin_lhd(10, 2, 10, 1).unwrap();
        let recs = ei_optimize_design(&prob, &d, 0, &EiConfig::default(), 1).unwrap();
        assert_eq!(recs.len(), 10);
        assert!(recs.iter().all(|r| r.source == Source::Initial));
    }

    #[test]
    fn likelihood_improves_on_every_start() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![(i as f64 * 0.29).fract(), (i as f64 * 0.71).fract()]).collect();
        let y: Vec<f64> = x.iter().map(|v| (5.0 * v[0]).cos() * v[1]).collect();
        let cfg = GpConfig::default();
        let gp = fit_gp(&x, &y, &cfg, 3).unwrap();
        let start = profile_log_likelihood(&x, &y, &[0.5, 0.5]).unwrap();
        assert!(gp.log_likelihood >= start);
    }
}
