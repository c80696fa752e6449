use super::{sq_dist, Partition};

/// Drops, per cluster, the members farther from the centroid than the
/// cluster's nearest-rank `percentile` distance, then recomputes centroids on
/// the survivors. Returns the trimmed partition and the excluded rows in item
/// order. Cluster numbering is unchanged; no cluster is ever emptied.
pub fn filter_outliers(partition: &Partition, points: &[Vec<f64>], percentile: f64) -> (Partition, Vec<usize>) {
    let k = partition.k();
    let dist: Vec<f64> = partition
        .items
        .iter()
        .zip(&partition.labels)
        .map(|(&row, &l)| sq_dist(&points[row], &partition.centroids[l]).sqrt())
        .collect();

    let mut thresholds = vec![f64::INFINITY; k];
    for (c, threshold) in thresholds.iter_mut().enumerate() {
        let mut ds: Vec<f64> = dist.iter().zip(&partition.labels).filter(|(_, &l)| l == c).map(|(&d, _)| d).collect();
        if ds.is_empty() {
            continue;
        }
        ds.sort_by(f64::total_cmp);
        let rank = ((percentile / 100.0) * ds.len() as f64).ceil() as usize;
        *threshold = ds[rank.clamp(1, ds.len()) - 1];
    }

    let mut kept = Partition { items: Vec::new(), labels: Vec::new(), centroids: Vec::new(), inertia: 0.0 };
    let mut excluded = Vec::new();
    for ((&row, &l), &d) in partition.items.iter().zip(&partition.labels).zip(&dist) {
        if d > thresholds[l] {
            excluded.push(row);
        } else {
            kept.items.push(row);
            kept.labels.push(l);
        }
    }

    let dim = partition.centroids.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (&row, &l) in kept.items.iter().zip(&kept.labels) {
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(&points[row]) {
            *s += x;
        }
    }
    kept.centroids = sums
        .into_iter()
        .zip(&counts)
        .enumerate()
        .map(|(c, (s, &n))| if n == 0 { partition.centroids[c].clone() } else { s.into_iter().map(|v| v / n as f64).collect() })
        .collect();
    kept.inertia = kept.items.iter().zip(&kept.labels).map(|(&row, &l)| sq_dist(&points[row], &kept.centroids[l])).sum();
    (kept, excluded)
}
