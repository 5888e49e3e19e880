//! Space-filling designs on the unit hypercube.
//!
//! Latin hypercube designs place exactly one point in each of the `n` slabs of
//! every coordinate, at the slab midpoints `(k + 0.5) / n`. The optimized
//! variants only ever swap two entries within a column, so the Latin property
//! survives every move.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Rng};

pub const DEFAULT_PHI_EXPONENT: u32 = 15;
pub const DEFAULT_SWEEPS: usize = 100;
const COOLING_RATIO: f64 = 0.95;

#[derive(Debug, Error, PartialEq)]
pub enum DesignError {
    #[error("invalid design argument: {0}")]
    InvalidArgument(String),
}

/// `n` points in `[0, 1]^p`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    n: usize,
    p: usize,
    data: Vec<f64>,
}

impl DesignMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, DesignError> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if p == 0 {
            return Err(DesignError::InvalidArgument("design needs at least one column".into()));
        }
        let mut data = Vec::with_capacity(n * p);
        for row in rows {
            if row.len() != p {
                return Err(DesignError::InvalidArgument("ragged design rows".into()));
            }
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(DesignError::InvalidArgument(format!("entry {v} outside [0, 1]")));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n, p, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.p + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.p)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, j)).collect()
    }

    fn swap_in_column(&mut self, col: usize, a: usize, b: usize) {
        self.data.swap(a * self.p + col, b * self.p + col);
    }

    /// True when every column is a permutation of the cell midpoints.
    pub fn is_latin(&self) -> bool {
        (0..self.p).all(|j| {
            let mut seen = vec![false; self.n];
            self.column(j).iter().all(|&v| {
                let k = v * self.n as f64 - 0.5;
                let idx = k.round();
                if (k - idx).abs() > 1e-9 || idx < 0.0 || idx as usize >= self.n {
                    return false;
                }
                !std::mem::replace(&mut seen[idx as usize], true)
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignCriterion {
    pub phi_p_exponent: u32,
    /// Weight of the mean squared column correlation against normalized φ_p.
    pub correlation_weight: f64,
}

impl Default for DesignCriterion {
    fn default() -> Self {
        Self { phi_p_exponent: DEFAULT_PHI_EXPONENT, correlation_weight: 0.5 }
    }
}

impl DesignCriterion {
    pub fn validate(&self) -> Result<(), DesignError> {
        if self.phi_p_exponent < 1 {
            return Err(DesignError::InvalidArgument("phi_p exponent must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.correlation_weight) {
            return Err(DesignError::InvalidArgument("correlation weight must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Lhd,
    Maximin,
    Omlhd,
    Uniform,
}

/// Builds a design of the given kind with default optimizer settings.
pub fn generate(kind: DesignKind, n: usize, p: usize, seed: u64) -> Result<DesignMatrix, DesignError> {
    match kind {
        DesignKind::Lhd => random_lhd(n, p, seed),
        DesignKind::Maximin => maximin_lhd(n, p, DEFAULT_SWEEPS, seed),
        DesignKind::Omlhd => omlhd(n, p, &DesignCriterion::default(), DEFAULT_SWEEPS, seed),
        DesignKind::Uniform => uniform_design(n, p, seed),
    }
}

fn check_dims(n: usize, p: usize) -> Result<(), DesignError> {
    if n < 2 {
        return Err(DesignError::InvalidArgument(format!("need n >= 2, got {n}")));
    }
    if p < 1 {
        return Err(DesignError::InvalidArgument("need p >= 1".into()));
    }
    Ok(())
}

fn random_lhd_with(n: usize, p: usize, rng: &mut Rng) -> DesignMatrix {
    let mut data = vec![0.0; n * p];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..p {
        perm.shuffle(rng);
        for (i, &k) in perm.iter().enumerate() {
            data[i * p + j] = (k as f64 + 0.5) / n as f64;
        }
    }
    DesignMatrix { n, p, data }
}

pub fn random_lhd(n: usize, p: usize, seed: u64) -> Result<DesignMatrix, DesignError> {
    check_dims(n, p)?;
    Ok(random_lhd_with(n, p, &mut rng::stream(seed, 0)))
}

pub fn uniform_design(n: usize, p: usize, seed: u64) -> Result<DesignMatrix, DesignError> {
    if n < 1 || p < 1 {
        return Err(DesignError::InvalidArgument("need n >= 1 and p >= 1".into()));
    }
    let mut rng = rng::stream(seed, 0);
    let data = (0..n * p).map(|_| rng.random::<f64>()).collect();
    Ok(DesignMatrix { n, p, data })
}

pub fn min_pairwise_distance(d: &DesignMatrix) -> Result<f64, DesignError> {
    min_pairwise_distance_rows(&d.to_rows())
}

pub fn min_pairwise_distance_rows(rows: &[Vec<f64>]) -> Result<f64, DesignError> {
    if rows.len() < 2 {
        return Err(DesignError::InvalidArgument("need at least two points".into()));
    }
    let mut best = f64::INFINITY;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            best = best.min(euclidean(&rows[i], &rows[j]));
        }
    }
    Ok(best)
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// φ_p = (Σ_{i<j} d_ij^{-k})^{1/k}; smaller is more space filling.
pub fn phi_p(d: &DesignMatrix, exponent: u32) -> f64 {
    let k = exponent as f64;
    let mut s = 0.0;
    for i in 0..d.n {
        for j in i + 1..d.n {
            s += sq_dist(d.row(i), d.row(j)).powf(-k / 2.0);
        }
    }
    s.powf(1.0 / k)
}

/// Mean of squared pairwise column correlations (0 for a single column).
pub fn mean_sq_correlation(d: &DesignMatrix) -> f64 {
    if d.p < 2 {
        return 0.0;
    }
    let cols: Vec<Vec<f64>> = (0..d.p).map(|j| d.column(j)).collect();
    let mut s = 0.0;
    let mut pairs = 0usize;
    for a in 0..d.p {
        for b in a + 1..d.p {
            s += crate::stats::correlation(&cols[a], &cols[b]).map_or(0.0, |r| r * r);
            pairs += 1;
        }
    }
    s / pairs as f64
}

/// Incrementally maintained φ_p sum and column cross products for an LHD.
struct LhdScorer {
    design: DesignMatrix,
    exponent: f64,
    d2: Vec<f64>,
    inv_sum: f64,
    cross: Vec<f64>,
    col_var_n: f64,
}

impl LhdScorer {
    fn new(design: DesignMatrix, exponent: u32) -> Self {
        let n = design.n;
        let p = design.p;
        let mut d2 = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = sq_dist(design.row(i), design.row(j));
                d2[i * n + j] = v;
                d2[j * n + i] = v;
            }
        }
        let mut cross = vec![0.0; p * p];
        for a in 0..p {
            for b in 0..p {
                cross[a * p + b] = (0..n).map(|i| design.get(i, a) * design.get(i, b)).sum();
            }
        }
        // Every LHD column is a permutation of the same midpoints.
        let m = 0.5;
        let col_var_n: f64 = design.column(0).iter().map(|v| (v - m) * (v - m)).sum();
        let mut s = Self { design, exponent: exponent as f64, d2, inv_sum: 0.0, cross, col_var_n };
        s.recompute_sum();
        s
    }

    fn recompute_sum(&mut self) {
        let n = self.design.n;
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                s += self.d2[i * n + j].powf(-self.exponent / 2.0);
            }
        }
        self.inv_sum = s;
    }

    fn phi(&self) -> f64 {
        self.inv_sum.powf(1.0 / self.exponent)
    }

    fn mean_sq_corr(&self) -> f64 {
        let p = self.design.p;
        if p < 2 {
            return 0.0;
        }
        let n = self.design.n as f64;
        let mut s = 0.0;
        for a in 0..p {
            for b in a + 1..p {
                let r = (self.cross[a * p + b] - n * 0.25) / self.col_var_n;
                s += r * r;
            }
        }
        s / (p * (p - 1) / 2) as f64
    }

    /// Change in the inverse-distance sum if column `col` of rows `a`, `b` were swapped.
    fn swap_delta(&self, col: usize, a: usize, b: usize) -> f64 {
        let n = self.design.n;
        let (va, vb) = (self.design.get(a, col), self.design.get(b, col));
        let h = -self.exponent / 2.0;
        let mut delta = 0.0;
        for j in 0..n {
            if j == a || j == b {
                continue;
            }
            let vj = self.design.get(j, col);
            let old_a = self.d2[a * n + j];
            let old_b = self.d2[b * n + j];
            let new_a = old_a - (va - vj).powi(2) + (vb - vj).powi(2);
            let new_b = old_b - (vb - vj).powi(2) + (va - vj).powi(2);
            delta += new_a.powf(h) - old_a.powf(h) + new_b.powf(h) - old_b.powf(h);
        }
        delta
    }

    fn apply_swap(&mut self, col: usize, a: usize, b: usize, delta: f64) {
        let n = self.design.n;
        let p = self.design.p;
        let (va, vb) = (self.design.get(a, col), self.design.get(b, col));
        for j in 0..n {
            if j == a || j == b {
                continue;
            }
            let vj = self.design.get(j, col);
            let new_a = self.d2[a * n + j] - (va - vj).powi(2) + (vb - vj).powi(2);
            let new_b = self.d2[b * n + j] - (vb - vj).powi(2) + (va - vj).powi(2);
            self.d2[a * n + j] = new_a;
            self.d2[j * n + a] = new_a;
            self.d2[b * n + j] = new_b;
            self.d2[j * n + b] = new_b;
        }
        for other in 0..p {
            if other == col {
                continue;
            }
            let c = (vb - va) * (self.design.get(a, other) - self.design.get(b, other));
            self.cross[col * p + other] += c;
            self.cross[other * p + col] += c;
        }
        self.design.swap_in_column(col, a, b);
        self.inv_sum += delta;
    }

    /// Mean squared correlation after a hypothetical swap.
    fn corr_after_swap(&self, col: usize, a: usize, b: usize) -> f64 {
        let p = self.design.p;
        if p < 2 {
            return 0.0;
        }
        let n = self.design.n as f64;
        let (va, vb) = (self.design.get(a, col), self.design.get(b, col));
        let mut s = 0.0;
        for x in 0..p {
            for y in x + 1..p {
                let mut c = self.cross[x * p + y];
                if x == col || y == col {
                    let other = if x == col { y } else { x };
                    c += (vb - va) * (self.design.get(a, other) - self.design.get(b, other));
                }
                let r = (c - n * 0.25) / self.col_var_n;
                s += r * r;
            }
        }
        s / (p * (p - 1) / 2) as f64
    }
}

fn random_move(rng: &mut Rng, n: usize, p: usize) -> (usize, usize, usize) {
    let col = rng.random_range(0..p);
    let a = rng.random_range(0..n);
    let mut b = rng.random_range(0..n - 1);
    if b >= a {
        b += 1;
    }
    (col, a, b)
}

/// Maximin LHD by greedy column-swap descent on φ_p (exponent 15).
///
/// One sweep proposes `n * p` swaps. `sweeps = 0` returns the starting LHD.
pub fn maximin_lhd(n: usize, p: usize, sweeps: usize, seed: u64) -> Result<DesignMatrix, DesignError> {
    check_dims(n, p)?;
    let mut rng = rng::stream(seed, 0);
    let start = random_lhd_with(n, p, &mut rng);
    if sweeps == 0 {
        return Ok(start);
    }
    let mut scorer = LhdScorer::new(start, DEFAULT_PHI_EXPONENT);
    for _ in 0..sweeps {
        for _ in 0..n * p {
            let (col, a, b) = random_move(&mut rng, n, p);
            let delta = scorer.swap_delta(col, a, b);
            if delta < 0.0 {
                scorer.apply_swap(col, a, b, delta);
            }
        }
        scorer.recompute_sum();
    }
    Ok(scorer.design)
}

/// ψ = ω·ρ̄² + (1 − ω)·φ_p / φ_p(reference).
pub fn omlhd_criterion(d: &DesignMatrix, criterion: &DesignCriterion, reference_phi: f64) -> f64 {
    let w = criterion.correlation_weight;
    w * mean_sq_correlation(d) + (1.0 - w) * phi_p(d, criterion.phi_p_exponent) / reference_phi
}

/// Orthogonal-maximin LHD by simulated annealing on [`omlhd_criterion`],
/// normalized against the starting random LHD. Returns the best design seen.
pub fn omlhd(
    n: usize,
    p: usize,
    criterion: &DesignCriterion,
    sweeps: usize,
    seed: u64,
) -> Result<DesignMatrix, DesignError> {
    check_dims(n, p)?;
    criterion.validate()?;
    let mut rng = rng::stream(seed, 0);
    let start = random_lhd_with(n, p, &mut rng);
    if sweeps == 0 {
        return Ok(start);
    }
    let w = criterion.correlation_weight;
    let mut scorer = LhdScorer::new(start, criterion.phi_p_exponent);
    let phi0 = scorer.phi();
    let k = scorer.exponent;
    let psi_of = |inv_sum: f64, corr: f64| w * corr + (1.0 - w) * inv_sum.max(0.0).powf(1.0 / k) / phi0;

    let mut current = psi_of(scorer.inv_sum, scorer.mean_sq_corr());
    // Starting temperature: mean absolute criterion change over random probes.
    let probes = 64;
    let mut spread = 0.0;
    for _ in 0..probes {
        let (col, a, b) = random_move(&mut rng, n, p);
        let cand = psi_of(scorer.inv_sum + scorer.swap_delta(col, a, b), scorer.corr_after_swap(col, a, b));
        spread += (cand - current).abs();
    }
    let mut temp = (spread / probes as f64).max(1e-12);

    let mut best = scorer.design.clone();
    let mut best_psi = current;
    for _ in 0..sweeps {
        for _ in 0..n * p {
            let (col, a, b) = random_move(&mut rng, n, p);
            let delta = scorer.swap_delta(col, a, b);
            let cand = psi_of(scorer.inv_sum + delta, scorer.corr_after_swap(col, a, b));
            let diff = cand - current;
            if diff < 0.0 || rng.random::<f64>() < (-diff / temp).exp() {
                scorer.apply_swap(col, a, b, delta);
                current = cand;
                if current < best_psi {
                    best_psi = current;
                    best = scorer.design.clone();
                }
            }
        }
        scorer.recompute_sum();
        current = psi_of(scorer.inv_sum, scorer.mean_sq_corr());
        temp *= COOLING_RATIO;
    }
    Ok(best)
}
