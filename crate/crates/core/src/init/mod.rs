//! Building cluster models from sampled local features.

mod kmeans;

pub use kmeans::{kmeans, nearest_centroid};

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::encoding::ClusterModel;
use crate::error::{Error, Result};
use crate::features::{ClassId, LabelKind, LocalFeatureSet, SemanticPartition};

pub const DEFAULT_POOL_SIZE: usize = 50_000;
pub const DEFAULT_KMEANS_ITERS: usize = 100;
/// Norm of the noise added to antipodal shadows.
pub const SHADOW_NOISE: f64 = 0.1;

// keeps the candidate k-means stream independent of the representative one
const CANDIDATE_SEED_SALT: u64 = 0x5eed_cafe_f00d_0001;

/// Normalized local features sampled across images, with labels when every
/// source image carries them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePool {
    pub features: Array2<f64>,
    pub labels: Option<Vec<ClassId>>,
}

impl FeaturePool {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    fn rows_of(&self, partition: &SemanticPartition, kind: LabelKind) -> Array2<f64> {
        let rows: Vec<usize> = match &self.labels {
            Some(l) => (0..l.len()).filter(|&i| partition.kind(l[i]) == kind).collect(),
            None => Vec::new(),
        };
        self.features.select(Axis(0), &rows)
    }
}

/// Samples up to `size` features uniformly over all images, normalizing them.
pub fn sample_pool(sets: &[LocalFeatureSet], size: usize, seed: u64) -> Result<FeaturePool> {
    let total: usize = sets.iter().map(|s| s.len()).sum();
    let depth = sets.first().map_or(0, |s| s.depth());
    let with_labels = !sets.is_empty() && sets.iter().all(|s| s.labels().is_some());

    let mut picks: Vec<usize> = if total <= size {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        index::sample(&mut rng, total, size).into_vec()
    };
    picks.sort_unstable();

    let mut features = Array2::zeros((picks.len(), depth));
    let mut labels = with_labels.then(|| Vec::with_capacity(picks.len()));
    let mut cursor = picks.iter().enumerate().peekable();
    let mut offset = 0;
    for set in sets {
        if set.depth() != depth {
            return Err(Error::DimensionMismatch {
                context: "pool feature depth",
                expected: depth,
                found: set.depth(),
            });
        }
        let end = offset + set.len();
        if cursor.peek().is_some_and(|(_, &p)| p < end) {
            let norm = set.normalize()?;
            while let Some((slot, &p)) = cursor.next_if(|(_, &p)| p < end) {
                features.row_mut(slot).assign(&norm.feature(p - offset));
                if let (Some(out), Some(l)) = (labels.as_mut(), norm.labels()) {
                    out.push(l[p - offset]);
                }
            }
        }
        offset = end;
    }
    Ok(FeaturePool { features, labels })
}

/// VLAD-style initialization: representatives are k-means centers of the
/// whole pool, and each shadow is the unit antipode of its representative
/// perturbed by seeded Gaussian noise of norm about [`SHADOW_NOISE`].
pub fn init_normal(
    pool: ArrayView2<'_, f64>,
    clusters: usize,
    shadows: usize,
    scale: f64,
    seed: u64,
) -> Result<ClusterModel> {
    let reps = kmeans(pool, clusters, seed, DEFAULT_KMEANS_ITERS)?;
    let d = reps.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(CANDIDATE_SEED_SALT));
    let sigma = SHADOW_NOISE / (d as f64).sqrt();
    let mut sh = Array3::zeros((clusters, shadows, d));
    for k in 0..clusters {
        for l in 0..shadows {
            let mut v: Vec<f64> = reps
                .row(k)
                .iter()
                .map(|c| -c + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 0.0 {
                v.iter_mut().for_each(|x| *x /= n);
            }
            for (j, x) in v.into_iter().enumerate() {
                sh[(k, l, j)] = x;
            }
        }
    }
    ClusterModel::from_centroids(reps, sh, scale)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticInitConfig {
    pub clusters: usize,
    pub shadows: usize,
    /// Number of shadow candidates; `None` means `2 * S * K` capped by the
    /// dynamic pool size.
    pub candidates: Option<usize>,
    pub scale: f64,
    pub seed: u64,
}

/// Semantic-constrained initialization: representatives from static-labeled
/// features only, shadows chosen per cluster as the `S` nearest of the
/// candidates clustered from dynamic-labeled features.
pub fn init_semantic(pool: &FeaturePool, partition: &SemanticPartition, cfg: &SemanticInitConfig) -> Result<ClusterModel> {
    let stat = pool.rows_of(partition, LabelKind::Static);
    if stat.nrows() < cfg.clusters {
        return Err(Error::InsufficientStatic {
            needed: cfg.clusters,
            got: stat.nrows(),
        });
    }
    let reps = kmeans(stat.view(), cfg.clusters, cfg.seed, DEFAULT_KMEANS_ITERS)?;
    let d = reps.ncols();
    if cfg.shadows == 0 {
        return ClusterModel::without_shadows(reps, cfg.scale);
    }

    let dynm = pool.rows_of(partition, LabelKind::Dynamic);
    if dynm.nrows() < cfg.shadows {
        return Err(Error::InsufficientDynamic {
            needed: cfg.shadows,
            got: dynm.nrows(),
        });
    }
    let n_cand = cfg
        .candidates
        .unwrap_or(2 * cfg.shadows * cfg.clusters)
        .clamp(cfg.shadows, dynm.nrows());
    let candidates = kmeans(
        dynm.view(),
        n_cand,
        cfg.seed ^ CANDIDATE_SEED_SALT,
        DEFAULT_KMEANS_ITERS,
    )?;

    let mut sh = Array3::zeros((cfg.clusters, cfg.shadows, d));
    for k in 0..cfg.clusters {
        let c = reps.row(k);
        let mut order: Vec<(f64, usize)> = candidates
            .rows()
            .into_iter()
            .enumerate()
            .map(|(i, s)| (s.iter().zip(c.iter()).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (l, &(_, i)) in order.iter().take(cfg.shadows).enumerate() {
            sh.slice_mut(ndarray::s![k, l, ..]).assign(&candidates.row(i));
        }
    }
    ClusterModel::from_centroids(reps, sh, cfg.scale)
}
