use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    /// Row-major `n × width` regression targets.
    Values { data: Vec<f64>, width: usize },
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values { data, width } => {
                if *width == 0 {
                    0
                } else {
                    data.len() / width
                }
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Values { data, width } => {
                let mut out = Vec::with_capacity(idx.len() * width);
                for &i in idx {
                    out.extend_from_slice(&data[i * width..(i + 1) * width]);
                }
                Targets::Values {
                    data: out,
                    width: *width,
                }
            }
        }
    }
}

/// A set of samples: row-major inputs (one row of `sample_len` values per
/// sample) and matching targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub inputs: Vec<f64>,
    pub targets: Targets,
    pub sample_len: usize,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, targets: Targets, sample_len: usize) -> Result<Self> {
        let n = targets.len();
        if n == 0 {
            return Err(Error::Shape("batch has no samples".into()));
        }
        if sample_len == 0 || inputs.len() != n * sample_len {
            return Err(Error::Shape(format!(
                "{} input values for {} samples of length {}",
                inputs.len(),
                n,
                sample_len
            )));
        }
        if let Targets::Values { data, width } = &targets {
            if *width == 0 || data.len() % width != 0 {
                return Err(Error::Shape("ragged regression targets".into()));
            }
        }
        Ok(Batch {
            inputs,
            targets,
            sample_len,
        })
    }

    pub fn size(&self) -> usize {
        self.targets.len()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.sample_len..(i + 1) * self.sample_len]
    }

    /// Sub-batch of the given sample indices, in that order.
    pub fn select(&self, idx: &[usize]) -> Batch {
        let mut inputs = Vec::with_capacity(idx.len() * self.sample_len);
        for &i in idx {
            inputs.extend_from_slice(self.sample(i));
        }
        Batch {
            inputs,
            targets: self.targets.gather(idx),
            sample_len: self.sample_len,
        }
    }

    /// First `n` samples (or all of them).
    pub fn head(&self, n: usize) -> Batch {
        let idx: Vec<usize> = (0..n.min(self.size())).collect();
        self.select(&idx)
    }
}
