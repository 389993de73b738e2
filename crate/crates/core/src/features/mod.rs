//! Local feature sets, geotags and the on-disk formats that carry them.

mod directory;
mod geo;
mod io;
mod manifest;
mod synthetic;

pub use directory::{
    feature_path, read_dataset_dir, write_dataset_dir, DatasetFiles, FEATURES_DIR, GEOTAGS_FILE, PARTITION_FILE, SPLIT_FILE,
};
pub use geo::{GeoFrame, GeoTag};
pub(crate) use geo::common_frame as geo_common_frame;
pub use io::{read_feature_file, write_feature_file, FEATURE_MAGIC, FEATURE_VERSION};
pub use manifest::{
    read_geotags, read_split, write_geotags, write_split, DatasetSplit, LabelKind, Role, SemanticPartition, Split,
    SplitEntry,
};
pub use synthetic::{generate_synthetic_dataset, SyntheticDataset, SyntheticPlaceSpec};

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

/// Semantic class id, one per local feature.
pub type ClassId = u16;

/// Row norms below this are treated as zero features.
pub const ZERO_NORM: f64 = 1e-12;

/// One image's grid of local features, stored row-major as `[H*W, D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFeatureSet {
    image_id: String,
    height: usize,
    width: usize,
    features: Array2<f64>,
    labels: Option<Vec<ClassId>>,
    is_normalized: bool,
}

impl LocalFeatureSet {
    /// Builds a raw (not yet normalized) feature set.
    pub fn new(
        image_id: impl Into<String>,
        height: usize,
        width: usize,
        features: Array2<f64>,
        labels: Option<Vec<ClassId>>,
    ) -> Result<Self> {
        Self::with_state(image_id, height, width, features, labels, false)
    }

    pub(crate) fn with_state(
        image_id: impl Into<String>,
        height: usize,
        width: usize,
        features: Array2<f64>,
        labels: Option<Vec<ClassId>>,
        is_normalized: bool,
    ) -> Result<Self> {
        let cells = height * width;
        if cells == 0 {
            return Err(Error::DimensionMismatch {
                context: "feature grid H*W",
                expected: 1,
                found: 0,
            });
        }
        if features.nrows() != cells {
            return Err(Error::DimensionMismatch {
                context: "feature rows vs H*W",
                expected: cells,
                found: features.nrows(),
            });
        }
        if features.ncols() < 2 {
            return Err(Error::DimensionMismatch {
                context: "feature depth D >= 2",
                expected: 2,
                found: features.ncols(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != cells {
                return Err(Error::DimensionMismatch {
                    context: "labels vs H*W",
                    expected: cells,
                    found: l.len(),
                });
            }
        }
        Ok(Self {
            image_id: image_id.into(),
            height,
            width,
            features,
            labels,
            is_normalized,
        })
    }

    pub fn image_id(&self) -> &str {
        &self.image_id
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Feature depth `D`.
    pub fn depth(&self) -> usize {
        self.features.ncols()
    }

    /// Number of local features, `H*W`.
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.nrows() == 0
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn feature(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> Option<&[ClassId]> {
        self.labels.as_deref()
    }

    pub fn is_normalized(&self) -> bool {
        self.is_normalized
    }

    /// L2-normalizes every row. See [`normalize_features`].
    pub fn normalize(&self) -> Result<Self> {
        normalize_features(self)
    }

    /// Largest `| ||x_i|| - 1 |` over all rows.
    pub fn max_norm_deviation(&self) -> f64 {
        self.features
            .rows()
            .into_iter()
            .map(|r| (r.dot(&r).sqrt() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Divides every local feature by its L2 norm.
///
/// Already-normalized input is re-projected, which is a no-op up to rounding;
/// sets loaded from float32 files regain full double precision this way.
pub fn normalize_features(fs: &LocalFeatureSet) -> Result<LocalFeatureSet> {
    let mut features = fs.features.clone();
    for (i, mut row) in features.rows_mut().into_iter().enumerate() {
        let norm = row.dot(&row).sqrt();
        if !(norm >= ZERO_NORM) {
            return Err(Error::ZeroFeature { row: i });
        }
        row.mapv_inplace(|v| v / norm);
    }
    Ok(LocalFeatureSet {
        image_id: fs.image_id.clone(),
        height: fs.height,
        width: fs.width,
        features,
        labels: fs.labels.clone(),
        is_normalized: true,
    })
}
