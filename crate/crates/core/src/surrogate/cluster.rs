//! Average-linkage clustering of response columns on `1 − |corr|`.

use super::SurrogateError;
use crate::stats;

/// Largest cluster count tried by the silhouette search.
pub const MAX_AUTO_CLUSTERS: usize = 10;

fn column(u: &[Vec<f64>], j: usize) -> Vec<f64> {
    u.iter().map(|row| row[j]).collect()
}

fn is_constant(c: &[f64]) -> bool {
    let lo = stats::min(c);
    let hi = stats::max(c);
    hi - lo <= 1e-12 * (1.0 + lo.abs().max(hi.abs()))
}

/// `1 − |corr|` between the given columns of `u`.
pub fn correlation_distance(u: &[Vec<f64>], cols: &[usize]) -> Vec<Vec<f64>> {
    let data: Vec<Vec<f64>> = cols.iter().map(|&j| column(u, j)).collect();
    let m = cols.len();
    let mut d = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in a + 1..m {
            let r = stats::correlation(&data[a], &data[b]).unwrap_or(0.0);
            d[a][b] = 1.0 - r.abs();
            d[b][a] = d[a][b];
        }
    }
    d
}

/// Every partition from `m` singletons down to one cluster, as produced by
/// repeatedly merging the pair with the smallest average distance. Ties go
/// to the pair listed first. `levels[c - 1]` has `c` clusters.
fn agglomerate(d: &[Vec<f64>]) -> Vec<Vec<Vec<usize>>> {
    let m = d.len();
    let mut clusters: Vec<Vec<usize>> = (0..m).map(|i| vec![i]).collect();
    let mut levels = vec![clusters.clone()];
    let avg = |a: &[usize], b: &[usize]| {
        a.iter().flat_map(|&i| b.iter().map(move |&j| d[i][j])).sum::<f64>() / (a.len() * b.len()) as f64
    };
    while clusters.len() > 1 {
        let mut best = (0, 1, f64::INFINITY);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let v = avg(&clusters[a], &clusters[b]);
                if v < best.2 {
                    best = (a, b, v);
                }
            }
        }
        let merged = clusters.remove(best.1);
        clusters[best.0].extend(merged);
        clusters[best.0].sort_unstable();
        levels.push(clusters.clone());
    }
    levels.reverse();
    levels
}

/// Mean silhouette width; singletons contribute 0.
pub fn silhouette(d: &[Vec<f64>], clusters: &[Vec<usize>]) -> f64 {
    let m = d.len();
    let mut label = vec![0; m];
    for (c, members) in clusters.iter().enumerate() {
        for &i in members {
            label[i] = c;
        }
    }
    let mean_to = |i: usize, members: &[usize]| {
        let others: Vec<f64> = members.iter().filter(|&&j| j != i).map(|&j| d[i][j]).collect();
        stats::mean(&others)
    };
    let total: f64 = (0..m)
        .map(|i| {
            let own = &clusters[label[i]];
            if own.len() < 2 {
                return 0.0;
            }
            let a = mean_to(i, own);
            let b = clusters
                .iter()
                .enumerate()
                .filter(|(c, _)| *c != label[i])
                .map(|(_, members)| mean_to(i, members))
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            if denom > 0.0 {
                (b - a) / denom
            } else {
                0.0
            }
        })
        .sum();
    total / m as f64
}

/// Assigns each column of `u` (rows are observations) a cluster label.
///
/// Constant columns have no correlation and become singleton clusters.
/// `count` is the total number of clusters including those singletons;
/// `None` picks the count for the varying columns by the largest silhouette
/// over `2..=min(10, m − 1)`, ties to the smaller count (with fewer than 3
/// varying columns each is its own cluster). Labels are numbered in order of
/// each cluster's smallest column index.
pub fn cluster_responses(u: &[Vec<f64>], count: Option<usize>) -> Result<Vec<usize>, SurrogateError> {
    let q = u.first().map_or(0, Vec::len);
    if q < 1 || u.len() < 2 {
        return Err(SurrogateError::InvalidArgument("clustering needs at least 2 rows and 1 column".into()));
    }
    if let Some(row) = u.iter().find(|r| r.len() != q) {
        return Err(SurrogateError::DimensionMismatch { expected: q, got: row.len() });
    }
    if let Some(c) = count {
        if c == 0 || c > q {
            return Err(SurrogateError::InvalidArgument(format!("cluster count {c} outside 1..={q}")));
        }
    }
    let (constant, varying): (Vec<usize>, Vec<usize>) = (0..q).partition(|&j| is_constant(&column(u, j)));
    let mut groups: Vec<Vec<usize>> = constant.iter().map(|&j| vec![j]).collect();
    if !varying.is_empty() {
        let d = correlation_distance(u, &varying);
        let levels = agglomerate(&d);
        let m = varying.len();
        let c = match count {
            Some(c) => c.saturating_sub(constant.len()).clamp(1, m),
            None if m < 3 => m,
            None => {
                let mut best = (2, f64::NEG_INFINITY);
                for c in 2..=MAX_AUTO_CLUSTERS.min(m - 1) {
                    let s = silhouette(&d, &levels[c - 1]);
                    if s > best.1 {
                        best = (c, s);
                    }
                }
                best.0
            }
        };
        groups.extend(levels[c - 1].iter().map(|g| g.iter().map(|&i| varying[i]).collect()));
    }
    groups.sort_by_key(|g| g.iter().copied().min());
    let mut labels = vec![0; q];
    for (c, g) in groups.iter().enumerate() {
        for &j in g {
            labels[j] = c;
        }
    }
    Ok(labels)
}
