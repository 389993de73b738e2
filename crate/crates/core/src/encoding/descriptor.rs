use std::fs;
use std::path::Path;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::{Error, Result};

pub const DESCRIPTOR_MAGIC: &[u8; 4] = b"SRLD";
const DESCRIPTOR_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DescriptorState {
    Raw,
    IntraNormalized,
    FullyNormalized,
    Whitened,
}

impl DescriptorState {
    pub(crate) fn code(self) -> u8 {
        match self {
            DescriptorState::Raw => 0,
            DescriptorState::IntraNormalized => 1,
            DescriptorState::FullyNormalized => 2,
            DescriptorState::Whitened => 3,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => DescriptorState::Raw,
            1 => DescriptorState::IntraNormalized,
            2 => DescriptorState::FullyNormalized,
            3 => DescriptorState::Whitened,
            _ => return None,
        })
    }
}

/// Image embedding: `K` visual-word blocks of length `D`, concatenated.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    values: Vec<f64>,
    block_len: usize,
    state: DescriptorState,
}

impl Descriptor {
    pub fn new(values: Vec<f64>, block_len: usize, state: DescriptorState) -> Self {
        assert!(block_len > 0 && values.len().is_multiple_of(block_len), "length must be a multiple of block_len");
        Self { values, block_len, state }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    pub fn state(&self) -> DescriptorState {
        self.state
    }

    pub fn norm(&self) -> f64 {
        l2(&self.values)
    }

    pub fn blocks(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.block_len)
    }

    pub fn distance(&self, other: &Descriptor) -> f64 {
        squared_distance(&self.values, &other.values).sqrt()
    }
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Intra-normalizes each block, then L2-normalizes the whole vector.
///
/// Zero blocks (empty clusters) stay zero. Only raw descriptors are accepted.
pub fn finalize(desc: &Descriptor) -> Result<Descriptor> {
    if desc.state != DescriptorState::Raw {
        return Err(Error::Config(format!("finalize expects a raw descriptor, got {:?}", desc.state)));
    }
    let mut values = desc.values.clone();
    for block in values.chunks_exact_mut(desc.block_len) {
        let n = l2(block);
        if n > 0.0 {
            block.iter_mut().for_each(|v| *v /= n);
        }
    }
    let total = l2(&values);
    if !(total > 0.0) {
        return Err(Error::DegenerateDescriptor);
    }
    values.iter_mut().for_each(|v| *v /= total);
    Ok(Descriptor {
        values,
        block_len: desc.block_len,
        state: DescriptorState::FullyNormalized,
    })
}

/// Descriptors of many images, all of one length and state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DescriptorSet {
    pub ids: Vec<String>,
    pub descriptors: Vec<Descriptor>,
}

impl DescriptorSet {
    pub fn push(&mut self, id: impl Into<String>, desc: Descriptor) {
        self.ids.push(id.into());
        self.descriptors.push(desc);
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Descriptor> {
        self.ids.iter().position(|i| i == id).map(|p| &self.descriptors[p])
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let first = self.descriptors.first();
        let dim = first.map_or(0, |d| d.len());
        let block_len = first.map_or(1, |d| d.block_len());
        let state = first.map_or(DescriptorState::Raw, |d| d.state());
        let mut w = ByteWriter::new();
        w.bytes(DESCRIPTOR_MAGIC);
        w.u32(DESCRIPTOR_VERSION);
        w.dim(self.len())?;
        w.dim(dim)?;
        w.dim(block_len)?;
        w.u8(state.code());
        for (id, d) in self.ids.iter().zip(&self.descriptors) {
            if d.len() != dim || d.block_len() != block_len || d.state() != state {
                return Err(Error::DimensionMismatch {
                    context: "descriptor set entries",
                    expected: dim,
                    found: d.len(),
                });
            }
            w.string(id)?;
            w.f64s(d.values());
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(DESCRIPTOR_MAGIC)?;
        let version = r.u32()?;
        if version != DESCRIPTOR_VERSION {
            return Err(r.format_error(format!("unsupported descriptor version {version}")));
        }
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let block_len = r.u32()? as usize;
        if block_len == 0 || !dim.is_multiple_of(block_len) {
            return Err(r.format_error(format!("block length {block_len} does not divide {dim}")));
        }
        let code = r.u8()?;
        let state = DescriptorState::from_code(code)
            .ok_or_else(|| r.format_error(format!("unknown descriptor state {code}")))?;
        let mut set = DescriptorSet::default();
        for _ in 0..count {
            let id = r.string()?;
            set.push(id, Descriptor::new(r.f64_vec(dim)?, block_len, state));
        }
        r.expect_end()?;
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intra_then_global() {
        let d = Descriptor::new(vec![3.0, 4.0, 0.0, 1.0], 2, DescriptorState::Raw);
        let f = finalize(&d).unwrap();
        let h = 1.0 / 2f64.sqrt();
        let expected = [0.6 * h, 0.8 * h, 0.0, h];
        for (a, b) in f.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((f.norm() - 1.0).abs() < 1e-12);
        assert_eq!(f.state(), DescriptorState::FullyNormalized);
    }

    #[test]
    fn zero_block_preserved() {
        let d = Descriptor::new(vec![0.0, 0.0, 2.0, 0.0, 1.0, 1.0], 2, DescriptorState::Raw);
        let f = finalize(&d).unwrap();
        assert_eq!(&f.values()[..2], &[0.0, 0.0]);
        assert!((f.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_zero_is_degenerate() {
        let d = Descriptor::new(vec![0.0; 6], 3, DescriptorState::Raw);
        assert!(matches!(finalize(&d), Err(Error::DegenerateDescriptor)));
    }

    #[test]
    fn set_round_trip() {
        let mut set = DescriptorSet::default();
        set.push("a", Descriptor::new(vec![0.6, 0.8, 0.0, 0.0], 2, DescriptorState::FullyNormalized));
        set.push("b", Descriptor::new(vec![0.0, 0.0, 1.0, 0.0], 2, DescriptorState::FullyNormalized));
        let bytes = set.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"SRLD");
        assert_eq!(DescriptorSet::from_bytes(&bytes).unwrap(), set);
        set.push("c", Descriptor::new(vec![1.0, 0.0], 2, DescriptorState::FullyNormalized));
        assert!(set.to_bytes().is_err());
    }

    #[test]
    fn refuses_non_raw() {
        let d = Descriptor::new(vec![1.0, 0.0], 2, DescriptorState::FullyNormalized);
        assert!(finalize(&d).is_err());
    }
}
