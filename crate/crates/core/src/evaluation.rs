//! Exact nearest-neighbor retrieval and Recall@N under a geographic
//! success radius.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::binio::{ByteReader, ByteWriter};
use crate::encoding::squared_distance;
use crate::error::{Error, Result};
use crate::features::{GeoFrame, GeoTag};

pub const INDEX_MAGIC: &[u8; 4] = b"SRLI";
const INDEX_VERSION: u32 = 1;

/// Success radius for retrieval, meters.
pub const DEFAULT_SUCCESS_RADIUS_M: f64 = 25.0;

/// Brute-force descriptor database. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorIndex {
    ids: Vec<String>,
    geotags: Vec<GeoTag>,
    dim: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    /// Position in the index.
    pub index: usize,
    pub distance: f64,
}

impl DescriptorIndex {
    /// Stores descriptors contiguously. All descriptors must share one
    /// length and all geotags one frame.
    pub fn build<S, D>(entries: impl IntoIterator<Item = (S, D, GeoTag)>) -> Result<Self>
    where
        S: Into<String>,
        D: AsRef<[f64]>,
    {
        let mut ids = Vec::new();
        let mut geotags = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        let mut seen = HashSet::new();
        for (id, desc, tag) in entries {
            let id = id.into();
            let desc = desc.as_ref();
            match dim {
                None => dim = Some(desc.len()),
                Some(d) if d != desc.len() => {
                    return Err(Error::DimensionMismatch {
                        context: "index descriptor length",
                        expected: d,
                        found: desc.len(),
                    })
                }
                _ => {}
            }
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            ids.push(id);
            geotags.push(tag);
            data.extend_from_slice(desc);
        }
        crate::features::geo_common_frame(&geotags)?;
        Ok(Self {
            ids,
            geotags,
            dim: dim.unwrap_or(0),
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn id(&self, i: usize) -> &str {
        &self.ids[i]
    }

    pub fn geotag(&self, i: usize) -> &GeoTag {
        &self.geotags[i]
    }

    pub fn descriptor(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Exact top-`n` by Euclidean distance; ties broken by id.
    pub fn query(&self, q: &[f64], n: usize) -> Result<Vec<Neighbor>> {
        if self.is_empty() {
            return Err(Error::EmptyIndex);
        }
        if q.len() != self.dim {
            return Err(Error::DimensionMismatch {
                context: "query descriptor length",
                expected: self.dim,
                found: q.len(),
            });
        }
        let mut all: Vec<Neighbor> = (0..self.len())
            .map(|i| Neighbor {
                index: i,
                distance: squared_distance(q, self.descriptor(i)).sqrt(),
            })
            .collect();
        let order = |a: &Neighbor, b: &Neighbor| -> Ordering {
            a.distance
                .total_cmp(&b.distance)
                .then_with(|| self.ids[a.index].cmp(&self.ids[b.index]))
        };
        let n = n.min(all.len());
        if n < all.len() && n > 0 {
            all.select_nth_unstable_by(n - 1, order);
            all.truncate(n);
        }
        all.sort_by(order);
        all.truncate(n);
        Ok(all)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(INDEX_MAGIC);
        w.u32(INDEX_VERSION);
        w.dim(self.len())?;
        w.dim(self.dim)?;
        let frame = crate::features::geo_common_frame(&self.geotags)?.unwrap_or(GeoFrame::Planar);
        w.u8(match frame {
            GeoFrame::Planar => 0,
            GeoFrame::Spherical => 1,
        });
        for i in 0..self.len() {
            w.string(&self.ids[i])?;
            let (a, b) = self.geotags[i].coords();
            w.f64(a);
            w.f64(b);
            w.f64s(self.descriptor(i));
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(INDEX_MAGIC)?;
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(r.format_error(format!("unsupported index version {version}")));
        }
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let frame = r.u8()?;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let id = r.string()?;
            let (a, b) = (r.f64()?, r.f64()?);
            let tag = match frame {
                0 => GeoTag::planar(a, b),
                1 => GeoTag::spherical(a, b),
                f => return Err(r.format_error(format!("unknown geo frame {f}"))),
            };
            entries.push((id, r.f64_vec(dim)?, tag));
        }
        r.expect_end()?;
        let mut index = Self::build(entries)?;
        index.dim = dim;
        Ok(index)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Recall@N for each requested `N`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    pub n_values: Vec<usize>,
    pub recalls: Vec<f64>,
    pub successes: Vec<usize>,
    pub evaluated: usize,
    /// Queries with no database image inside the radius. They count as
    /// failures at every `N`.
    pub without_positive: usize,
}

impl RecallReport {
    pub fn recall(&self, n: usize) -> Option<f64> {
        self.n_values.iter().position(|&v| v == n).map(|i| self.recalls[i])
    }

    /// `N,recall` CSV with a header line.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "N,recall")?;
        for (n, r) in self.n_values.iter().zip(&self.recalls) {
            writeln!(out, "{n},{r}")?;
        }
        Ok(())
    }

    /// Whitespace-separated columns for plotting recall curves.
    pub fn write_gnuplot<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "# N recall")?;
        for (n, r) in self.n_values.iter().zip(&self.recalls) {
            writeln!(out, "{n} {r}")?;
        }
        Ok(())
    }
}

/// A query succeeds at `N` if any of its top-`N` results lies within
/// `radius` meters of the query's position.
pub fn recall_at<D: AsRef<[f64]> + Sync>(
    index: &DescriptorIndex,
    queries: &[(D, GeoTag)],
    n_values: &[usize],
    radius: f64,
) -> Result<RecallReport> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let mut n_sorted: Vec<usize> = n_values.to_vec();
    n_sorted.sort_unstable();
    n_sorted.dedup();
    let max_n = n_sorted.last().copied().unwrap_or(0);

    // rank of the first in-range hit per query, if any within max_n
    let outcomes: Vec<(Option<usize>, bool)> = queries
        .par_iter()
        .map(|(desc, tag)| {
            let has_positive = (0..index.len()).any(|i| index.geotag(i).distance(tag) <= radius);
            let hits = index.query(desc.as_ref(), max_n)?;
            let first = hits.iter().position(|h| index.geotag(h.index).distance(tag) <= radius);
            Ok((first, has_positive))
        })
        .collect::<Result<_>>()?;

    let evaluated = queries.len();
    let without_positive = outcomes.iter().filter(|(_, p)| !p).count();
    let successes: Vec<usize> = n_sorted
        .iter()
        .map(|&n| outcomes.iter().filter(|(f, _)| f.is_some_and(|r| r < n)).count())
        .collect();
    let recalls = successes
        .iter()
        .map(|&s| if evaluated == 0 { 0.0 } else { s as f64 / evaluated as f64 })
        .collect();
    Ok(RecallReport {
        n_values: n_sorted,
        recalls,
        successes,
        evaluated,
        without_positive,
    })
}
