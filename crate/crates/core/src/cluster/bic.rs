use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{sq_dist, Partition};

/// BIC of a clustering model. `degenerate` marks models whose pooled variance
/// is not positive (or with no residual degrees of freedom); their value is
/// negative infinity so any proper model is preferred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BicScore {
    pub value: f64,
    pub degenerate: bool,
}

impl BicScore {
    const DEGENERATE: BicScore = BicScore { value: f64::NEG_INFINITY, degenerate: true };
}

/// Identical-spherical-Gaussian BIC (Pelleg & Moore form).
///
/// With `n` points in `d` dimensions, `K` clusters of sizes `n_j` and pooled
/// variance `s2 = SSE / (n - K)`:
///
/// ```text
/// l_j = -n_j/2 ln(2 pi) - n_j d/2 ln(s2) - (n_j - K)/2 + n_j ln n_j - n_j ln n
/// BIC = sum_j l_j - p/2 ln n,   p = (K - 1) + d K + 1
/// ```
pub fn bic_of(points: &[Vec<f64>], rows: &[usize], labels: &[usize], centroids: &[Vec<f64>]) -> BicScore {
    let n = rows.len();
    let k = centroids.len();
    if n <= k || k == 0 {
        return BicScore::DEGENERATE;
    }
    let d = points[rows[0]].len() as f64;
    let mut sizes = vec![0usize; k];
    let mut sse = 0.0;
    for (&row, &l) in rows.iter().zip(labels) {
        sizes[l] += 1;
        sse += sq_dist(&points[row], &centroids[l]);
    }
    let variance = sse / (n - k) as f64;
    if !(variance > 0.0) {
        return BicScore::DEGENERATE;
    }
    let (nf, kf) = (n as f64, k as f64);
    let log_likelihood: f64 = sizes
        .iter()
        .filter(|&&nj| nj > 0)
        .map(|&nj| {
            let nj = nj as f64;
            -nj / 2.0 * (2.0 * PI).ln() - nj * d / 2.0 * variance.ln() - (nj - kf) / 2.0 + nj * nj.ln() - nj * nf.ln()
        })
        .sum();
    let params = (kf - 1.0) + d * kf + 1.0;
    BicScore { value: log_likelihood - params / 2.0 * nf.ln(), degenerate: false }
}

pub fn bic(partition: &Partition, points: &[Vec<f64>]) -> BicScore {
    bic_of(points, &partition.items, &partition.labels, &partition.centroids)
}

/// BIC of the one-cluster model over `rows`.
pub(crate) fn single_cluster_bic(points: &[Vec<f64>], rows: &[usize]) -> BicScore {
    if rows.is_empty() {
        return BicScore::DEGENERATE;
    }
    let d = points[rows[0]].len();
    let mut mean = vec![0.0; d];
    for &r in rows {
        for (m, x) in mean.iter_mut().zip(&points[r]) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= rows.len() as f64);
    bic_of(points, rows, &vec![0; rows.len()], &[mean])
}
