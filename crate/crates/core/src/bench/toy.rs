//! The two-input, two-response toy system with an elliptical infeasible region.

use std::sync::Arc;

use super::{BenchError, Outcome, PointEvaluator, Problem};

/// The two zero-loss points, `(0.3, (−0.5 + √1.45)/2)` and `(0.7, (−0.5 + √3.05)/2)`.
pub fn toy_optima() -> [[f64; 2]; 2] {
    [[0.3, (-0.5 + 1.45f64.sqrt()) / 2.0], [0.7, (-0.5 + 3.05f64.sqrt()) / 2.0]]
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Toy2d;

impl Toy2d {
    pub fn responses(x: &[f64]) -> [f64; 2] {
        let (x1, x2) = (x[0], x[1]);
        [(2.0 + (x1 - 0.7) * (x1 - 0.3)).ln(), (2.0 + x2 * x2 + 0.5 * x2 - x1).ln()]
    }

    /// Latent score of the logistic feasibility model; feasible iff `u >= 0`.
    pub fn latent(x: &[f64]) -> f64 {
        -0.25 + ((x[0] - 0.1) / 0.25).powi(2) + ((x[1] - 0.2) / 0.5).powi(2)
    }

    pub fn feasibility_probability(x: &[f64]) -> f64 {
        let u = Self::latent(x);
        u.exp() / (1.0 + u.exp())
    }
}

impl PointEvaluator for Toy2d {
    fn evaluate_point(&self, x: &[f64]) -> Outcome {
        // π(u) ≥ 0.5 ⇔ u ≥ 0; comparing u avoids rounding π to exactly 0.5 near the boundary.
        if Self::latent(x) >= 0.0 {
            Outcome::Feasible(Self::responses(x).to_vec())
        } else {
            Outcome::Infeasible
        }
    }
}

pub fn toy2d() -> Problem {
    toy2d_with_weights(vec![1.0, 20.0]).expect("default toy weights are valid")
}

pub fn toy2d_with_weights(weights: Vec<f64>) -> Result<Problem, BenchError> {
    if weights.len() != 2 {
        return Err(BenchError::InvalidArgument("toy2d needs two weights".into()));
    }
    let t = 2f64.ln();
    Problem::new("toy2d", 2, vec![t, t], weights, Arc::new(Toy2d))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_at_center_matches_direct_substitution() {
        let p = toy2d();
        let r = p.evaluate(&[0.5, 0.5]).unwrap();
        let y = r.y.unwrap();
        assert!((y[0] - 1.96f64.ln()).abs() < 1e-15);
        assert!((y[1] - 2f64.ln()).abs() < 1e-15);
        let expected = (1.96f64.ln() - 2f64.ln()).powi(2);
        assert!((r.loss.unwrap() - expected).abs() < 1e-15);
        assert!((r.loss.unwrap() - 4.0810e-4).abs() < 1e-7);
    }

    #[test]
    fn optima_have_zero_loss() {
        assert!((toy_optima()[0][1] - 0.35208).abs() < 1e-5);
        assert!((toy_optima()[1][1] - 0.62321).abs() < 1e-5);
        let p = toy2d();
        for opt in toy_optima() {
            let r = p.evaluate(&opt).unwrap();
            assert!(r.z);
            assert!(r.loss.unwrap() < 1e-28);
        }
    }

    #[test]
    fn ellipse_centre_is_infeasible() {
        assert!((Toy2d::latent(&[0.1, 0.2]) + 0.25).abs() < 1e-15);
        let r = toy2d().evaluate(&[0.1, 0.2]).unwrap();
        assert!(!r.z);
        assert!(r.y.is_none() && r.loss.is_none());
    }

    #[test]
    fn boundary_counts_as_feasible() {
        // u = 0 at x1 = 0.1 + 0.25 * 0.5, x2 = 0.2 (exactly representable ratios).
        let x = [0.225, 0.2];
        assert_eq!(Toy2d::latent(&x), 0.0);
        assert_eq!(Toy2d::feasibility_probability(&x), 0.5);
        assert!(toy2d().evaluate(&x).unwrap().z);
    }
}
