//! Modified DTLZ2 family with a box-shaped infeasible corner.
//!
//! Angles use `x_i · 3π/2` for `i ≤ p − 2` and `x_{p−1} · π/2`; the distance
//! function is `g(x) = (2 x_p − 0.5)²`. Responses follow the usual DTLZ2
//! cosine/sine chain:
//! `y_1 = (1+g) Π cos θ_i`, `y_m = (1+g) Π_{i ≤ p−m} cos θ_i · sin θ_{p−m+1}`.
//! For `p = 4` this is exactly the four-response benchmark; larger `p` keeps
//! `q = p`, targets 0.7 everywhere and weight 3 on the last response.

use std::f64::consts::PI;
use std::sync::Arc;

use super::{BenchError, Outcome, PointEvaluator, Problem};

#[derive(Debug, Clone, Copy)]
pub struct Dtlz2Mod {
    pub p: usize,
}

impl Dtlz2Mod {
    pub fn g(&self, x: &[f64]) -> f64 {
        (2.0 * x[self.p - 1] - 0.5).powi(2)
    }

    pub fn responses(&self, x: &[f64]) -> Vec<f64> {
        let p = self.p;
        let theta: Vec<f64> = (0..p - 1)
            .map(|i| if i < p - 2 { x[i] * 3.0 * PI / 2.0 } else { x[i] * PI / 2.0 })
            .collect();
        let scale = 1.0 + self.g(x);
        (1..=p)
            .map(|m| {
                let cos_prod: f64 = theta[..p - m].iter().map(|t| t.cos()).product();
                if m == 1 {
                    scale * cos_prod
                } else {
                    scale * cos_prod * theta[p - m].sin()
                }
            })
            .collect()
    }

    pub fn is_infeasible(&self, x: &[f64]) -> bool {
        x[..self.p - 1].iter().all(|&v| v <= 0.2) && x[self.p - 1] <= 0.1
    }
}

impl PointEvaluator for Dtlz2Mod {
    fn evaluate_point(&self, x: &[f64]) -> Outcome {
        if self.is_infeasible(x) {
            Outcome::Infeasible
        } else {
            Outcome::Feasible(self.responses(x))
        }
    }
}

pub fn dtlz2_mod(p: usize) -> Result<Problem, BenchError> {
    if p < 4 {
        return Err(BenchError::InvalidArgument(format!("dtlz2_mod needs p >= 4, got {p}")));
    }
    let targets = vec![0.7; p];
    let mut weights = vec![1.0; p];
    weights[p - 1] = 3.0;
    Problem::new(format!("dtlz2_mod{p}"), p, targets, weights, Arc::new(Dtlz2Mod { p }))
}
