//! Per-parameter keep/prune flags and their on-disk bit-array format.
//!
//! File layout (little-endian):
//! `b"GCMK"`, u32 version, u64 param count, u32 iteration, u8 method,
//! u32 layer count, then per layer {u16 name length, name bytes, u64 offset,
//! u64 length, u8 prunable, u8 rank, u64 × rank dims}, then the keep bits
//! packed LSB-first into `ceil(n / 8)` bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LayerMap, LayerSlice};

const MAGIC: &[u8; 4] = b"GCMK";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PruneMethod {
    Causal,
    Magnitude,
    #[default]
    None,
}

impl PruneMethod {
    fn code(self) -> u8 {
        match self {
            PruneMethod::Causal => 0,
            PruneMethod::Magnitude => 1,
            PruneMethod::None => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(PruneMethod::Causal),
            1 => Some(PruneMethod::Magnitude),
            2 => Some(PruneMethod::None),
            _ => None,
        }
    }
}

impl std::fmt::Display for PruneMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PruneMethod::Causal => "causal",
            PruneMethod::Magnitude => "magnitude",
            PruneMethod::None => "none",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Provenance {
    pub iteration: u32,
    pub method: PruneMethod,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PruneMask {
    keep: Vec<bool>,
    prunable: Vec<bool>,
    layer_map: LayerMap,
    pub provenance: Provenance,
}

impl PruneMask {
    /// Mask keeping every parameter.
    pub fn all_kept(layer_map: &LayerMap) -> Self {
        PruneMask {
            keep: vec![true; layer_map.total_len()],
            prunable: layer_map.prunable_flags(),
            layer_map: layer_map.clone(),
            provenance: Provenance::default(),
        }
    }

    pub fn from_keep(layer_map: &LayerMap, keep: Vec<bool>, provenance: Provenance) -> Result<Self> {
        let mut mask = PruneMask::all_kept(layer_map);
        if keep.len() != mask.len() {
            return Err(Error::Mask(format!(
                "{} flags for {} parameters",
                keep.len(),
                mask.len()
            )));
        }
        for (k, &kp) in keep.iter().enumerate() {
            if !kp {
                mask.prune(k)?;
            }
        }
        mask.provenance = provenance;
        Ok(mask)
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn layer_map(&self) -> &LayerMap {
        &self.layer_map
    }

    pub fn is_kept(&self, k: usize) -> bool {
        self.keep[k]
    }

    pub fn is_prunable(&self, k: usize) -> bool {
        self.prunable[k]
    }

    pub fn keep_flags(&self) -> &[bool] {
        &self.keep
    }

    pub fn prune(&mut self, k: usize) -> Result<()> {
        if !self.prunable[k] {
            return Err(Error::Mask(format!("parameter {k} is not prunable")));
        }
        self.keep[k] = false;
        Ok(())
    }

    pub fn prunable_count(&self) -> usize {
        self.prunable.iter().filter(|&&p| p).count()
    }

    pub fn pruned_count(&self) -> usize {
        self.keep.iter().filter(|&&k| !k).count()
    }

    /// Percentage of prunable parameters that are pruned.
    pub fn percent_pruned(&self) -> f64 {
        let total = self.prunable_count();
        if total == 0 {
            0.0
        } else {
            100.0 * self.pruned_count() as f64 / total as f64
        }
    }

    /// Indices of kept prunable parameters, ascending.
    pub fn kept_prunable(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&k| self.prunable[k] && self.keep[k])
            .collect()
    }

    /// Prunes everything `other` prunes.
    pub fn union_pruned(&mut self, other: &PruneMask) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Mask(format!(
                "cannot combine masks of {} and {} parameters",
                self.len(),
                other.len()
            )));
        }
        for (k, kp) in self.keep.iter_mut().enumerate() {
            *kp &= other.keep[k];
        }
        Ok(())
    }

    /// True when every parameter pruned here is also pruned in `later`.
    pub fn is_subset_of(&self, later: &PruneMask) -> bool {
        self.len() == later.len() && (0..self.len()).all(|k| self.keep[k] || !later.keep[k])
    }

    /// Zeroes pruned coordinates.
    pub fn apply(&self, values: &mut [f64]) {
        for (v, &k) in values.iter_mut().zip(&self.keep) {
            if !k {
                *v = 0.0;
            }
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(self.len() as u64)?;
        w.write_u32::<LittleEndian>(self.provenance.iteration)?;
        w.write_u8(self.provenance.method.code())?;
        w.write_u32::<LittleEndian>(self.layer_map.entries.len() as u32)?;
        for e in &self.layer_map.entries {
            let name = e.name.as_bytes();
            w.write_u16::<LittleEndian>(name.len() as u16)?;
            w.write_all(name)?;
            w.write_u64::<LittleEndian>(e.offset as u64)?;
            w.write_u64::<LittleEndian>(e.len as u64)?;
            w.write_u8(e.prunable as u8)?;
            w.write_u8(e.filter_shape.len() as u8)?;
            for &d in &e.filter_shape {
                w.write_u64::<LittleEndian>(d as u64)?;
            }
        }
        let mut bytes = vec![0u8; self.len().div_ceil(8)];
        for (k, &kp) in self.keep.iter().enumerate() {
            if kp {
                bytes[k / 8] |= 1 << (k % 8);
            }
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path)?);
        Self::read_from(&mut r).map_err(|e| match e {
            Error::Io(io) => Error::format(path, format!("truncated or unreadable mask: {io}")),
            Error::Mask(m) => Error::format(path, m),
            other => other,
        })
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Mask("not a mask file (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Mask(format!("unsupported mask version {version}")));
        }
        let n = r.read_u64::<LittleEndian>()? as usize;
        let iteration = r.read_u32::<LittleEndian>()?;
        let method = PruneMethod::from_code(r.read_u8()?)
            .ok_or_else(|| Error::Mask("unknown pruning method code".into()))?;
        let layers = r.read_u32::<LittleEndian>()? as usize;
        let mut entries = Vec::with_capacity(layers);
        for _ in 0..layers {
            let len = r.read_u16::<LittleEndian>()? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Mask("layer name is not UTF-8".into()))?;
            let offset = r.read_u64::<LittleEndian>()? as usize;
            let len = r.read_u64::<LittleEndian>()? as usize;
            let prunable = r.read_u8()? != 0;
            let rank = r.read_u8()? as usize;
            let mut filter_shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                filter_shape.push(r.read_u64::<LittleEndian>()? as usize);
            }
            entries.push(LayerSlice {
                name,
                offset,
                len,
                prunable,
                filter_shape,
            });
        }
        let layer_map = LayerMap::new(entries).map_err(|e| Error::Mask(e.to_string()))?;
        if layer_map.total_len() != n {
            return Err(Error::Mask(format!(
                "header says {n} parameters but layers cover {}",
                layer_map.total_len()
            )));
        }
        let mut bytes = vec![0u8; n.div_ceil(8)];
        r.read_exact(&mut bytes)?;
        let keep = (0..n).map(|k| bytes[k / 8] >> (k % 8) & 1 == 1).collect();
        PruneMask::from_keep(&layer_map, keep, Provenance { iteration, method })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, Activation, LossKind, ModelSpec};
    use proptest::prelude::*;

    fn map() -> LayerMap {
        let spec = ModelSpec::mlp(&[2, 4, 2], Activation::Relu, LossKind::CrossEntropy);
        build_model(&spec, 0).unwrap().layer_map
    }

    #[test]
    fn biases_cannot_be_pruned() {
        let mut m = PruneMask::all_kept(&map());
        assert!(m.prune(8).is_err());
        m.prune(0).unwrap();
        assert_eq!(m.pruned_count(), 1);
        assert_eq!(m.prunable_count(), 16);
        assert!((m.percent_pruned() - 6.25).abs() < 1e-12);
    }

    #[test]
    fn union_only_grows() {
        let lm = map();
        let mut a = PruneMask::all_kept(&lm);
        a.prune(0).unwrap();
        let mut b = PruneMask::all_kept(&lm);
        b.prune(3).unwrap();
        let before = a.clone();
        a.union_pruned(&b).unwrap();
        assert!(before.is_subset_of(&a));
        assert!(!a.is_kept(0) && !a.is_kept(3));
    }

    #[test]
    fn bad_magic_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.bin");
        std::fs::write(&p, b"XXXXjunk").unwrap();
        let err = PruneMask::load(&p).unwrap_err();
        assert!(err.to_string().contains("m.bin"), "{err}");
    }

    proptest! {
        #[test]
        fn file_round_trip(bits in proptest::collection::vec(any::<bool>(), 16), iter in 0u32..20) {
            let lm = map();
            let prunable = lm.prunable_flags();
            let keep: Vec<bool> = (0..22).map(|k| !prunable[k] || bits[k % 16]).collect();
            let m = PruneMask::from_keep(&lm, keep, Provenance { iteration: iter, method: PruneMethod::Causal }).unwrap();
            let mut buf = Vec::new();
            m.write_to(&mut buf).unwrap();
            let back = PruneMask::read_from(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(m, back);
        }
    }
}
