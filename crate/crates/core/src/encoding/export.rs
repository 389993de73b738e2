use std::io::Write;

use super::AttentionMaps;
use crate::error::Result;
use crate::features::LocalFeatureSet;

pub const ATTENTION_CSV_HEADER: &str = "image_id,row,col,cluster,alpha,beta";

/// Writes one line per (feature, cluster) pair. `row`/`col` locate the
/// feature on the `H x W` grid. Pass `header = false` to append further images.
pub fn write_attention_csv<W: Write>(
    out: &mut W,
    fs: &LocalFeatureSet,
    maps: &AttentionMaps,
    header: bool,
) -> Result<()> {
    if header {
        writeln!(out, "{ATTENTION_CSV_HEADER}")?;
    }
    let width = fs.width();
    for (i, (a, b)) in maps.alpha.rows().into_iter().zip(maps.beta.rows()).enumerate() {
        for (k, (alpha, beta)) in a.iter().zip(b.iter()).enumerate() {
            writeln!(out, "{},{},{},{},{},{}", fs.image_id(), i / width, i % width, k, alpha, beta)?;
        }
    }
    Ok(())
}
