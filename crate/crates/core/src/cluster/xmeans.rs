use super::bic::{bic_of, single_cluster_bic};
use super::kmeans::{canonical_order, kmeans_rows, lloyd_from, restore_item_order};
use super::{validate_points, ClusterConfig, ClusterError, Partition, BIC_TIE_TOLERANCE};

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined inputs
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Local structure test for one cluster: a 2-means split is kept only when its
/// BIC on the cluster's own points beats the one-cluster model by more than
/// the tie tolerance.
fn try_split(
    points: &[Vec<f64>],
    members: &[usize],
    seed: u64,
    max_iterations: usize,
) -> Option<[Vec<f64>; 2]> {
    if members.len() < 2 {
        return None;
    }
    let parent = single_cluster_bic(points, members);
    let (child, _) = kmeans_rows(points, members, 2, seed, max_iterations).ok()?;
    let child_score = bic_of(points, &child.items, &child.labels, &child.centroids);
    if child_score.degenerate || child_score.value - parent.value <= BIC_TIE_TOLERANCE {
        return None;
    }
    let [a, b]: [Vec<f64>; 2] = child.centroids.try_into().ok()?;
    Some([a, b])
}

/// The pair of clusters whose union is best explained by a single cluster,
/// if any pair's merged BIC is not worse than its split BIC.
fn best_merge(points: &[Vec<f64>], partition: &Partition) -> Option<(usize, usize)> {
    let k = partition.k();
    let members: Vec<Vec<usize>> = (0..k).map(|c| partition.members(c)).collect();
    let mut best: Option<(f64, usize, usize)> = None;
    for a in 0..k {
        for b in (a + 1)..k {
            let rows: Vec<usize> = members[a].iter().chain(&members[b]).copied().collect();
            let labels: Vec<usize> = std::iter::repeat_n(0, members[a].len())
                .chain(std::iter::repeat_n(1, members[b].len()))
                .collect();
            let split = bic_of(
                points,
                &rows,
                &labels,
                &[partition.centroids[a].clone(), partition.centroids[b].clone()],
            );
            let merged = single_cluster_bic(points, &rows);
            // A split that does not beat the merged model by more than the
            // tolerance is not justified.
            let justified = !split.degenerate && split.value - merged.value > BIC_TIE_TOLERANCE;
            if !justified {
                let gain = if split.degenerate { f64::INFINITY } else { merged.value - split.value };
                if best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, a, b));
                }
            }
        }
    }
    best.map(|(_, a, b)| (a, b))
}

/// X-Means: k-means at `k0`, then repeated BIC-tested 2-means splits of each
/// cluster with a global Lloyd refinement after every round, stopping when no
/// split is accepted or `k_max` is reached. With `config.merge`, unjustified
/// cluster pairs are then merged. A final Lloyd refinement runs at the chosen K.
///
/// The result is independent of input order up to relabeling; clusters are
/// numbered by their smallest member row.
pub fn xmeans(points: &[Vec<f64>], config: &ClusterConfig) -> Result<Partition, ClusterError> {
    config.validate()?;
    validate_points(points)?;
    if points.len() < config.k0 {
        return Err(ClusterError::TooFewPoints { n: points.len(), k: config.k0 });
    }
    let all: Vec<usize> = (0..points.len()).collect();
    let rows = canonical_order(points, &all);
    let (mut partition, _) = kmeans_rows(points, &rows, config.k0, config.seed, config.max_iterations)?;

    let mut round = 0u64;
    while partition.k() < config.k_max {
        round += 1;
        let k = partition.k();
        let mut centroids = Vec::with_capacity(config.k_max);
        let mut budget = config.k_max - k;
        let mut accepted = 0;
        for c in 0..k {
            let members = partition.members(c);
            let split = if budget > 0 {
                try_split(points, &members, mix(config.seed, round, c as u64), config.max_iterations)
            } else {
                None
            };
            match split {
                Some([a, b]) => {
                    centroids.push(a);
                    centroids.push(b);
                    budget -= 1;
                    accepted += 1;
                }
                None => centroids.push(partition.centroids[c].clone()),
            }
        }
        if accepted == 0 {
            break;
        }
        partition = refine(points, &partition.items, centroids, config.max_iterations);
    }

    if config.merge {
        while partition.k() > 1 {
            let Some((a, b)) = best_merge(points, &partition) else { break };
            let mut centroids = partition.centroids.clone();
            let merged_rows: Vec<usize> = partition.members(a).into_iter().chain(partition.members(b)).collect();
            let dim = centroids[a].len();
            let mean: Vec<f64> = (0..dim)
                .map(|j| merged_rows.iter().map(|&r| points[r][j]).sum::<f64>() / merged_rows.len() as f64)
                .collect();
            centroids[a] = mean;
            centroids.remove(b);
            partition = refine(points, &partition.items, centroids, config.max_iterations);
        }
    }

    let centroids = partition.centroids.clone();
    let mut partition = refine(points, &partition.items, centroids, config.max_iterations);
    restore_item_order(&mut partition, &all);
    partition.canonicalize();
    Ok(partition)
}

fn refine(points: &[Vec<f64>], rows: &[usize], centroids: Vec<Vec<f64>>, max_iterations: usize) -> Partition {
    lloyd_from(points, rows, centroids, max_iterations).0
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn blobs(centres: &[Vec<f64>], per: usize, sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut points = Vec::new();
        let mut labels = Vec::new();
        for (c, centre) in centres.iter().enumerate() {
            for _ in 0..per {
                points.push(centre.iter().map(|m| m + normal.sample(&mut rng)).collect());
                labels.push(c);
            }
        }
        (points, labels)
    }

    #[test]
    fn one_tight_blob_stays_whole() {
        let (points, _) = blobs(&[vec![0.0; 4]], 80, 0.1, 3);
        let config = ClusterConfig { k0: 1, ..ClusterConfig::default() };
        assert_eq!(xmeans(&points, &config).unwrap().k(), 1);
    }

    #[test]
    fn separated_blobs_are_found() {
        let centres: Vec<Vec<f64>> = (0..3).map(|i| (0..8).map(|j| if j == i { 8.0 } else { 0.0 }).collect()).collect();
        let (points, truth) = blobs(&centres, 60, 1.0, 11);
        let p = xmeans(&points, &ClusterConfig::default()).unwrap();
        assert_eq!(p.k(), 3);
        for i in 0..points.len() {
            for j in 0..points.len() {
                assert_eq!(truth[i] == truth[j], p.labels[i] == p.labels[j]);
            }
        }
    }

    #[test]
    fn k_max_caps_the_search() {
        let centres: Vec<Vec<f64>> = (0..6).map(|i| vec![10.0 * i as f64, 0.0]).collect();
        let (points, _) = blobs(&centres, 20, 0.5, 5);
        let config = ClusterConfig { k0: 1, k_max: 4, merge: false, ..ClusterConfig::default() };
        let p = xmeans(&points, &config).unwrap();
        assert!(p.k() >= 1 && p.k() <= 4);
    }

    #[test]
    fn without_merge_k_never_drops_below_k0() {
        let (points, _) = blobs(&[vec![0.0; 8]], 120, 1.0, 9);
        let config = ClusterConfig { merge: false, ..ClusterConfig::default() };
        assert!(xmeans(&points, &config).unwrap().k() >= 3);
        let merged = xmeans(&points, &ClusterConfig::default()).unwrap();
        assert_eq!(merged.k(), 1);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let centres = vec![vec![0.0, 0.0], vec![9.0, 0.0], vec![0.0, 9.0], vec![9.0, 9.0]];
        let (points, _) = blobs(&centres, 30, 1.0, 21);
        let a = xmeans(&points, &ClusterConfig::default()).unwrap();
        let b = xmeans(&points, &ClusterConfig::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.k(), 4);
    }

    #[test]
    fn too_few_points() {
        let points = vec![vec![0.0], vec![1.0]];
        assert_eq!(
            xmeans(&points, &ClusterConfig::default()),
            Err(ClusterError::TooFewPoints { n: 2, k: 3 })
        );
    }
}
