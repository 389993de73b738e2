use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, Array3, ArrayView2};

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"SRLM";
pub const MODEL_VERSION: u32 = 1;

/// Default decay constant for unit-norm features.
pub const DEFAULT_SCALE: f64 = 30.0;

/// Expands centroids into affine form: `w = 2a c`, `b = -a ||c||^2`.
///
/// `centroids` is `[n, D]`; returns weights `[n, D]` and biases `[n]`.
pub fn centroids_to_affine(centroids: ArrayView2<'_, f64>, scale: f64) -> (Array2<f64>, Array1<f64>) {
    let weights = centroids.mapv(|c| 2.0 * scale * c);
    let biases = centroids
        .rows()
        .into_iter()
        .map(|c| -scale * c.dot(&c))
        .collect();
    (weights, biases)
}

/// Cluster parameters: representative and shadow centroids, the affine
/// parameters driving both softmaxes, and the residual centroids used in the
/// aggregation.
///
/// Channel `n = 0` of cluster `k` is the representative, `n = 1..=S` its
/// shadows. The centroids are kept as a record of the initialization; after
/// training only the affine parameters and residual centroids are live.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    scale: f64,
    representatives: Array2<f64>,
    shadows: Array3<f64>,
    weights: Array3<f64>,
    biases: Array2<f64>,
    residual_centroids: Array2<f64>,
}

impl ClusterModel {
    /// `representatives` is `[K, D]`, `shadows` is `[K, S, D]`.
    pub fn from_centroids(representatives: Array2<f64>, shadows: Array3<f64>, scale: f64) -> Result<Self> {
        let (k, d) = representatives.dim();
        let (sk, s, sd) = shadows.dim();
        if k == 0 {
            return Err(Error::DimensionMismatch {
                context: "cluster count K >= 1",
                expected: 1,
                found: 0,
            });
        }
        if sk != k {
            return Err(Error::DimensionMismatch {
                context: "shadow clusters vs K",
                expected: k,
                found: sk,
            });
        }
        if s > 0 && sd != d {
            return Err(Error::DimensionMismatch {
                context: "shadow depth vs D",
                expected: d,
                found: sd,
            });
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!("scale must be positive, got {scale}")));
        }
        let shadows = if s == 0 { Array3::zeros((k, 0, d)) } else { shadows };

        let mut weights = Array3::zeros((k, s + 1, d));
        let mut biases = Array2::zeros((k, s + 1));
        for c in 0..k {
            let mut stacked = Array2::zeros((s + 1, d));
            stacked.row_mut(0).assign(&representatives.row(c));
            stacked.slice_mut(s![1.., ..]).assign(&shadows.slice(s![c, .., ..]));
            let (w, b) = centroids_to_affine(stacked.view(), scale);
            weights.slice_mut(s![c, .., ..]).assign(&w);
            biases.row_mut(c).assign(&b);
        }
        Ok(Self {
            scale,
            residual_centroids: representatives.clone(),
            representatives,
            shadows,
            weights,
            biases,
        })
    }

    /// A model without shadows: plain soft-assignment VLAD.
    pub fn without_shadows(representatives: Array2<f64>, scale: f64) -> Result<Self> {
        let (k, d) = representatives.dim();
        Self::from_centroids(representatives, Array3::zeros((k, 0, d)), scale)
    }

    pub fn num_clusters(&self) -> usize {
        self.representatives.nrows()
    }

    pub fn num_shadows(&self) -> usize {
        self.shadows.dim().1
    }

    pub fn depth(&self) -> usize {
        self.representatives.ncols()
    }

    /// Length of the raw descriptor, `K * D`.
    pub fn descriptor_len(&self) -> usize {
        self.num_clusters() * self.depth()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn representatives(&self) -> &Array2<f64> {
        &self.representatives
    }

    pub fn shadows(&self) -> &Array3<f64> {
        &self.shadows
    }

    /// `[K, S+1, D]`
    pub fn weights(&self) -> &Array3<f64> {
        &self.weights
    }

    /// `[K, S+1]`
    pub fn biases(&self) -> &Array2<f64> {
        &self.biases
    }

    /// `[K, D]`
    pub fn residual_centroids(&self) -> &Array2<f64> {
        &self.residual_centroids
    }

    pub fn weights_mut(&mut self) -> &mut Array3<f64> {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut Array2<f64> {
        &mut self.biases
    }

    pub fn residual_centroids_mut(&mut self) -> &mut Array2<f64> {
        &mut self.residual_centroids
    }

    pub(crate) fn check_depth(&self, d: usize) -> Result<()> {
        if d != self.depth() {
            return Err(Error::DimensionMismatch {
                context: "feature depth vs model depth",
                expected: self.depth(),
                found: d,
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(MODEL_MAGIC);
        w.u32(MODEL_VERSION);
        w.dim(self.num_clusters())?;
        w.dim(self.num_shadows())?;
        w.dim(self.depth())?;
        w.f64(self.scale);
        w.f64s(self.representatives.iter());
        w.f64s(self.shadows.iter());
        w.f64s(self.weights.iter());
        w.f64s(self.biases.iter());
        w.f64s(self.residual_centroids.iter());
        Ok(w.finish())
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(data);
        r.magic(MODEL_MAGIC)?;
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(r.format_error(format!("unsupported model version {version}")));
        }
        let k = r.u32()? as usize;
        let s = r.u32()? as usize;
        let d = r.u32()? as usize;
        if k == 0 || d == 0 {
            return Err(r.format_error("zero K or D in model header"));
        }
        let scale = r.f64()?;
        let expected = 8 * (k * d + k * s * d + k * (s + 1) * d + k * (s + 1) + k * d);
        if r.remaining() != expected {
            return Err(Error::DimensionMismatch {
                context: "model payload bytes",
                expected,
                found: r.remaining(),
            });
        }
        let representatives = Array2::from_shape_vec((k, d), r.f64_vec(k * d)?).unwrap();
        let shadows = Array3::from_shape_vec((k, s, d), r.f64_vec(k * s * d)?).unwrap();
        let weights = Array3::from_shape_vec((k, s + 1, d), r.f64_vec(k * (s + 1) * d)?).unwrap();
        let biases = Array2::from_shape_vec((k, s + 1), r.f64_vec(k * (s + 1))?).unwrap();
        let residual_centroids = Array2::from_shape_vec((k, d), r.f64_vec(k * d)?).unwrap();
        r.expect_end()?;
        Ok(Self {
            scale,
            representatives,
            shadows,
            weights,
            biases,
            residual_centroids,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
