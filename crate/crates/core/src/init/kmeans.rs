use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid and its squared distance. Ties go to the
/// lower index.
pub fn nearest_centroid(x: ArrayView1<'_, f64>, centroids: ArrayView2<'_, f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.rows().into_iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding: first center uniform, the rest drawn with probability
/// proportional to the squared distance to the nearest chosen center.
fn seed_plus_plus(samples: ArrayView2<'_, f64>, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let m = samples.nrows();
    let mut chosen = vec![rng.random_range(0..m)];
    let mut dist: Vec<f64> = samples
        .rows()
        .into_iter()
        .map(|x| sq_dist(x, samples.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let next = match WeightedIndex::new(&dist) {
            Ok(w) => w.sample(rng),
            // all remaining mass is zero (duplicates): take the first unused row
            Err(_) => (0..m).find(|i| !chosen.contains(i)).expect("m >= k"),
        };
        chosen.push(next);
        let c = samples.row(next);
        for (d, x) in dist.iter_mut().zip(samples.rows()) {
            *d = d.min(sq_dist(x, c));
        }
    }
    chosen
}

/// Lloyd's algorithm with k-means++ seeding. Deterministic given `seed`.
///
/// An empty cluster is re-seeded at the sample farthest from its currently
/// assigned centroid.
pub fn kmeans(samples: ArrayView2<'_, f64>, k: usize, seed: u64, max_iters: usize) -> Result<Array2<f64>> {
    let (m, d) = samples.dim();
    if k == 0 {
        return Err(Error::Config("k-means needs k >= 1".into()));
    }
    if m < k {
        return Err(Error::TooFewSamples { needed: k, got: m });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Array2::zeros((k, d));
    for (j, &i) in seed_plus_plus(samples, k, &mut rng).iter().enumerate() {
        centroids.row_mut(j).assign(&samples.row(i));
    }

    let mut assignment = vec![usize::MAX; m];
    let mut dist = vec![0.0; m];
    for _ in 0..max_iters {
        let mut changed = false;
        for (i, x) in samples.rows().into_iter().enumerate() {
            let (j, dj) = nearest_centroid(x, centroids.view());
            if assignment[i] != j {
                assignment[i] = j;
                changed = true;
            }
            dist[i] = dj;
        }
        if !changed {
            break;
        }

        let mut sums = Array2::<f64>::zeros((k, d));
        let mut counts = vec![0usize; k];
        for (x, &j) in samples.rows().into_iter().zip(&assignment) {
            sums.row_mut(j).scaled_add(1.0, &x);
            counts[j] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                let mean = &sums.row(j) / counts[j] as f64;
                centroids.row_mut(j).assign(&mean);
            } else {
                // farthest sample from its own centroid; it leaves that cluster
                let far = (0..m)
                    .filter(|&i| counts[assignment[i]] > 1)
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    counts[assignment[i]] -= 1;
                    counts[j] = 1;
                    assignment[i] = j;
                    dist[i] = 0.0;
                    centroids.row_mut(j).assign(&samples.row(i));
                }
            }
        }
    }
    Ok(centroids)
}
