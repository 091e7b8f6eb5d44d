use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Location of one parameter tensor inside the flat vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSlice {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    pub prunable: bool,
    /// Full tensor shape; the first axis indexes filters (output neurons for
    /// dense weights, output channels for convolutions).
    pub filter_shape: Vec<usize>,
}

impl LayerSlice {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }

    pub fn num_filters(&self) -> usize {
        self.filter_shape.first().copied().unwrap_or(1)
    }

    pub fn filter_len(&self) -> usize {
        self.len / self.num_filters().max(1)
    }

    /// Absolute index range of filter `j`.
    pub fn filter_range(&self, j: usize) -> std::ops::Range<usize> {
        let fl = self.filter_len();
        let start = self.offset + j * fl;
        start..start + fl
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMap {
    pub entries: Vec<LayerSlice>,
}

impl LayerMap {
    pub fn new(entries: Vec<LayerSlice>) -> Result<Self> {
        let map = LayerMap { entries };
        map.validate()?;
        Ok(map)
    }

    /// Slices must tile `0..total` in order with no gaps, and every filter
    /// shape must multiply out to its slice length.
    pub fn validate(&self) -> Result<()> {
        let mut expected = 0usize;
        for e in &self.entries {
            if e.offset != expected {
                return Err(Error::Shape(format!(
                    "layer {} starts at {} but previous layers end at {}",
                    e.name, e.offset, expected
                )));
            }
            if e.len == 0 {
                return Err(Error::Shape(format!("layer {} is empty", e.name)));
            }
            let prod: usize = e.filter_shape.iter().product();
            if prod != e.len {
                return Err(Error::Shape(format!(
                    "layer {} shape {:?} does not match length {}",
                    e.name, e.filter_shape, e.len
                )));
            }
            expected += e.len;
        }
        Ok(())
    }

    pub fn total_len(&self) -> usize {
        self.entries.last().map_or(0, |e| e.offset + e.len)
    }

    pub fn prunable_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.total_len()];
        for e in &self.entries {
            flags[e.range()].fill(e.prunable);
        }
        flags
    }

    pub fn prunable_layers(&self) -> impl Iterator<Item = &LayerSlice> {
        self.entries.iter().filter(|e| e.prunable)
    }

    pub fn get(&self, name: &str) -> Option<&LayerSlice> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// All model parameters as one flat vector plus the map locating each tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatParams {
    pub values: Vec<f64>,
    pub layer_map: LayerMap,
}

impl FlatParams {
    pub fn new(values: Vec<f64>, layer_map: LayerMap) -> Result<Self> {
        if values.len() != layer_map.total_len() {
            return Err(Error::Shape(format!(
                "{} values for a layer map covering {}",
                values.len(),
                layer_map.total_len()
            )));
        }
        Ok(FlatParams { values, layer_map })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layer(&self, name: &str) -> Option<&[f64]> {
        self.layer_map.get(name).map(|e| &self.values[e.range()])
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layer_map.get(name)?.range();
        Some(&mut self.values[range])
    }

    /// Copies each layer out as its own tensor.
    pub fn to_tensors(&self) -> Vec<(String, Vec<f64>)> {
        self.layer_map
            .entries
            .iter()
            .map(|e| (e.name.clone(), self.values[e.range()].to_vec()))
            .collect()
    }

    /// Inverse of [`FlatParams::to_tensors`].
    pub fn from_tensors(tensors: &[(String, Vec<f64>)], layer_map: LayerMap) -> Result<Self> {
        let mut values = vec![0.0; layer_map.total_len()];
        if tensors.len() != layer_map.entries.len() {
            return Err(Error::Shape(format!(
                "{} tensors for {} layers",
                tensors.len(),
                layer_map.entries.len()
            )));
        }
        for ((name, t), e) in tensors.iter().zip(&layer_map.entries) {
            if name != &e.name || t.len() != e.len {
                return Err(Error::Shape(format!(
                    "tensor {name} (len {}) does not match layer {} (len {})",
                    t.len(),
                    e.name,
                    e.len
                )));
            }
            values[e.range()].copy_from_slice(t);
        }
        Ok(FlatParams { values, layer_map })
    }
}
