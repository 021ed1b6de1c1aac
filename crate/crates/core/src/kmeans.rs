//! Lloyd's k-means, used only to produce starting partitions for EM.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;

const MAX_LLOYD_ITER: usize = 100;

/// Returns 0-based cluster labels for the rows of `x`.
///
/// Centroids are seeded from `g` distinct random observations. Empty
/// clusters are re-seeded with the point farthest from its centroid.
pub(crate) fn kmeans_labels<R: Rng + ?Sized>(x: &DMatrix<f64>, g: usize, rng: &mut R) -> Vec<usize> {
    let (n, p) = x.shape();
    if g <= 1 {
        return vec![0; n];
    }
    let mut centroids: Vec<Vec<f64>> = sample(rng, n, g.min(n))
        .into_iter()
        .map(|i| x.row(i).iter().copied().collect())
        .collect();
    let mut labels = vec![usize::MAX; n];
    let mut dist = vec![0.0; n];

    for _ in 0..MAX_LLOYD_ITER {
        let mut changed = false;
        for i in 0..n {
            let (best, d) = nearest(x, i, &centroids);
            dist[i] = d;
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
        }

        let mut sums = vec![vec![0.0; p]; g];
        let mut counts = vec![0usize; g];
        for i in 0..n {
            counts[labels[i]] += 1;
            for j in 0..p {
                sums[labels[i]][j] += x[(i, j)];
            }
        }
        for k in 0..g {
            if counts[k] == 0 {
                // steal the worst-fitted point from a cluster that can spare it
                let far = (0..n)
                    .filter(|&i| counts[labels[i]] > 1)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]));
                if let Some(i) = far {
                    counts[labels[i]] -= 1;
                    for j in 0..p {
                        sums[labels[i]][j] -= x[(i, j)];
                    }
                    labels[i] = k;
                    dist[i] = 0.0;
                    counts[k] = 1;
                    sums[k] = x.row(i).iter().copied().collect();
                    changed = true;
                }
            }
        }
        for k in 0..g {
            if counts[k] > 0 {
                for j in 0..p {
                    centroids[k][j] = sums[k][j] / counts[k] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

fn nearest(x: &DMatrix<f64>, i: usize, centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d: f64 = c.iter().enumerate().map(|(j, cj)| (x[(i, j)] - cj).powi(2)).sum();
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}
