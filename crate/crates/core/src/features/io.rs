use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{ClassId, LocalFeatureSet};
use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"SRLF";
pub const FEATURE_VERSION: u32 = 1;

// float32 storage only guarantees unit norm to about this precision
const F32_NORM_TOLERANCE: f64 = 1e-5;

pub(crate) fn encode_feature_set(fs: &LocalFeatureSet) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.bytes(FEATURE_MAGIC);
    w.u32(FEATURE_VERSION);
    w.dim(fs.height())?;
    w.dim(fs.width())?;
    w.dim(fs.depth())?;
    w.u8(fs.labels().is_some() as u8);
    w.u8(fs.is_normalized() as u8);
    w.string(fs.image_id())?;
    for v in fs.features().iter() {
        w.f32(*v as f32);
    }
    if let Some(labels) = fs.labels() {
        for l in labels {
            w.u16(*l);
        }
    }
    Ok(w.finish())
}

pub(crate) fn decode_feature_set(data: &[u8]) -> Result<LocalFeatureSet> {
    let mut r = ByteReader::new(data);
    r.magic(FEATURE_MAGIC)?;
    let version = r.u32()?;
    if version != FEATURE_VERSION {
        return Err(Error::Format {
            offset: r.offset() - 4,
            message: format!("unsupported version {version}"),
        });
    }
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let depth = r.u32()? as usize;
    if height == 0 || width == 0 || depth == 0 {
        return Err(Error::Format {
            offset: r.offset() - 12,
            message: format!("zero dimension in header {height}x{width}x{depth}"),
        });
    }
    let has_labels = r.bool()?;
    let is_normalized = r.bool()?;
    let image_id = r.string()?;

    let cells = height
        .checked_mul(width)
        .and_then(|c| c.checked_mul(depth).map(|_| c))
        .ok_or_else(|| r.format_error("header dimensions overflow"))?;
    let payload = cells * depth * 4 + if has_labels { cells * 2 } else { 0 };
    if r.remaining() < payload {
        return Err(Error::DimensionMismatch {
            context: "feature payload bytes",
            expected: payload,
            found: r.remaining(),
        });
    }

    let raw = r.take(cells * depth * 4)?;
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let features = Array2::from_shape_vec((cells, depth), values).expect("payload length checked");

    let labels = if has_labels {
        let mut l: Vec<ClassId> = Vec::with_capacity(cells);
        for _ in 0..cells {
            l.push(r.u16()?);
        }
        Some(l)
    } else {
        None
    };
    r.expect_end()?;

    if is_normalized {
        for (i, row) in features.rows().into_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if (norm - 1.0).abs() > F32_NORM_TOLERANCE {
                return Err(Error::Format {
                    offset: 0,
                    message: format!("row {i} has norm {norm} but file is flagged normalized"),
                });
            }
        }
    }

    LocalFeatureSet::with_state(image_id, height, width, features, labels, is_normalized)
}

/// Writes a feature set in the SRLF little-endian format. Values are stored
/// as float32.
pub fn write_feature_file(fs: &LocalFeatureSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_feature_set(fs)?)?;
    Ok(())
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<LocalFeatureSet> {
    decode_feature_set(&fs::read(path)?)
}
