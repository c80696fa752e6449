use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{sq_dist, validate_points, ClusterError, Partition};

/// Per-iteration record of a Lloyd run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansTrace {
    /// Inertia after every assignment step, starting with the seeded one.
    pub inertia: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Rows ordered by coordinates so that seeding does not depend on input order.
pub(crate) fn canonical_order(points: &[Vec<f64>], rows: &[usize]) -> Vec<usize> {
    let mut order = rows.to_vec();
    order.sort_by(|&a, &b| {
        points[a]
            .iter()
            .zip(&points[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Seeded k-means++: first centre uniform, then proportional to squared
/// distance from the nearest chosen centre.
pub(crate) fn seed_plus_plus(points: &[Vec<f64>], rows: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut chosen = vec![rows[rng.gen_range(0..rows.len())]];
    let mut nearest: Vec<f64> = rows.iter().map(|&r| sq_dist(&points[r], &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = rows.len() - 1;
            for (i, w) in nearest.iter().enumerate() {
                acc += w;
                if acc > target && *w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            // All remaining points coincide with a centre.
            rows.iter().position(|r| !chosen.contains(r)).unwrap_or(0)
        };
        let row = rows[pick];
        chosen.push(row);
        for (i, &r) in rows.iter().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(&points[r], &points[row]));
        }
    }
    chosen.into_iter().map(|r| points[r].clone()).collect()
}

/// Nearest centroid; on ties the current label is kept if it is among the
/// nearest, otherwise the lowest index wins.
fn assign(points: &[Vec<f64>], rows: &[usize], centroids: &[Vec<f64>], labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (slot, &row) in rows.iter().enumerate() {
        let current = labels[slot];
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in centroids.iter().enumerate() {
            let d = sq_dist(&points[row], centroid);
            if d < best_d || (d == best_d && c == current) {
                best = c;
                best_d = d;
            }
        }
        labels[slot] = best;
        inertia += best_d;
    }
    inertia
}

fn means(points: &[Vec<f64>], rows: &[usize], labels: &[usize], k: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (&row, &l) in rows.iter().zip(labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(&points[row]) {
            *s += x;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|x| *x /= n as f64);
        }
    }
    (sums, counts)
}

/// Moves the point farthest from its centroid (taken from a cluster with more
/// than one member) into each empty cluster.
fn repair_empty(
    points: &[Vec<f64>],
    rows: &[usize],
    labels: &mut [usize],
    centroids: &mut [Vec<f64>],
    counts: &mut [usize],
    dim: usize,
) {
    while let Some(empty) = counts.iter().position(|&n| n == 0) {
        let mut far = None;
        let mut far_d = -1.0;
        for (slot, &row) in rows.iter().enumerate() {
            let l = labels[slot];
            if counts[l] > 1 {
                let d = sq_dist(&points[row], &centroids[l]);
                if d > far_d {
                    far_d = d;
                    far = Some(slot);
                }
            }
        }
        let Some(slot) = far else { return };
        let donor = labels[slot];
        labels[slot] = empty;
        counts[donor] -= 1;
        counts[empty] = 1;
        centroids[empty] = points[rows[slot]].clone();
        let (m, _) = means(points, rows, labels, centroids.len(), dim);
        centroids[donor] = m[donor].clone();
    }
}

/// Lloyd iterations from the given centroids until the assignment is a
/// fixpoint or `max_iterations` update steps have run.
pub fn lloyd_from(
    points: &[Vec<f64>],
    rows: &[usize],
    initial: Vec<Vec<f64>>,
    max_iterations: usize,
) -> (Partition, KMeansTrace) {
    let k = initial.len();
    let dim = points.first().map_or(0, Vec::len);
    let mut centroids = initial;
    let mut labels = vec![usize::MAX; rows.len()];
    let mut history = vec![assign(points, rows, &centroids, &mut labels)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iterations {
        iterations += 1;
        let (mut next, mut counts) = means(points, rows, &labels, k, dim);
        repair_empty(points, rows, &mut labels, &mut next, &mut counts, dim);
        centroids = next;
        let previous = labels.clone();
        history.push(assign(points, rows, &centroids, &mut labels));
        if labels == previous {
            converged = true;
            break;
        }
    }
    let (mut final_centroids, mut counts) = means(points, rows, &labels, k, dim);
    repair_empty(points, rows, &mut labels, &mut final_centroids, &mut counts, dim);
    let inertia = rows.iter().zip(&labels).map(|(&r, &l)| sq_dist(&points[r], &final_centroids[l])).sum();
    let partition = Partition { items: rows.to_vec(), labels, centroids: final_centroids, inertia };
    (partition, KMeansTrace { inertia: history, iterations, converged })
}

pub(crate) fn kmeans_rows(
    points: &[Vec<f64>],
    rows: &[usize],
    k: usize,
    seed: u64,
    max_iterations: usize,
) -> Result<(Partition, KMeansTrace), ClusterError> {
    if k == 0 || rows.len() < k {
        return Err(ClusterError::TooFewPoints { n: rows.len(), k });
    }
    let ordered = canonical_order(points, rows);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial = seed_plus_plus(points, &ordered, k, &mut rng);
    let (mut partition, trace) = lloyd_from(points, &ordered, initial, max_iterations);
    restore_item_order(&mut partition, rows);
    partition.canonicalize();
    Ok((partition, trace))
}

/// Reorders a partition's items to follow `rows`.
pub(crate) fn restore_item_order(partition: &mut Partition, rows: &[usize]) {
    let label_of: std::collections::HashMap<usize, usize> =
        partition.items.iter().copied().zip(partition.labels.iter().copied()).collect();
    partition.items = rows.to_vec();
    partition.labels = rows.iter().map(|r| label_of[r]).collect();
}

/// Seeded k-means++ followed by Lloyd iterations over every point.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, max_iterations: usize) -> Result<Partition, ClusterError> {
    kmeans_traced(points, k, seed, max_iterations).map(|(p, _)| p)
}

pub fn kmeans_traced(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iterations: usize,
) -> Result<(Partition, KMeansTrace), ClusterError> {
    validate_points(points)?;
    let rows: Vec<usize> = (0..points.len()).collect();
    kmeans_rows(points, &rows, k, seed, max_iterations)
}
