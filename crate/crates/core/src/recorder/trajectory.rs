use std::fs::{self, File};
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::OptimizerConfig;

const MAGIC: &[u8; 4] = b"GCTJ";
/// Version 1 stores snapshots as f32, version 2 as f64.
const VERSION_F32: u32 = 1;
const VERSION_F64: u32 = 2;

/// Which batch each recorded loss is evaluated on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProbeMode {
    /// `Lᵗ` is the loss at `θᵗ` on the minibatch used for step `t`.
    #[default]
    Minibatch,
    /// Every `Lᵗ` is evaluated on one fixed probe batch.
    Fixed,
}

impl ProbeMode {
    fn code(self) -> u8 {
        match self {
            ProbeMode::Minibatch => 0,
            ProbeMode::Fixed => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotPrecision {
    #[default]
    F32,
    F64,
}

impl SnapshotPrecision {
    pub fn round(self, v: f64) -> f64 {
        match self {
            SnapshotPrecision::F32 => v as f32 as f64,
            SnapshotPrecision::F64 => v,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub spec_hash: String,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub probe: ProbeMode,
    pub precision: SnapshotPrecision,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub params: Vec<f64>,
    pub loss: f64,
    pub batch_id: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    data_file: String,
    param_count: u64,
    meta: TrajectoryMeta,
}

#[derive(Debug)]
struct Store {
    path: PathBuf,
    writer: BufWriter<File>,
}

/// Ordered `(t, θᵗ, Lᵗ)` records of one training phase, optionally written
/// through to an append-only file.
///
/// Snapshots are rounded to the configured precision when recorded, so the
/// in-memory trajectory always equals what a reload from disk returns.
#[derive(Debug)]
pub struct Trajectory {
    pub meta: TrajectoryMeta,
    records: Vec<StepRecord>,
    param_count: Option<usize>,
    store: Option<Store>,
}

impl Trajectory {
    pub fn in_memory(meta: TrajectoryMeta) -> Self {
        Trajectory {
            meta,
            records: Vec::new(),
            param_count: None,
            store: None,
        }
    }

    /// Creates `path` (and a `.toml` manifest beside it) and writes every
    /// subsequent record through to it.
    pub fn create(path: impl AsRef<Path>, meta: TrajectoryMeta, param_count: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut writer = BufWriter::new(File::create(&path)?);
        writer.write_all(MAGIC)?;
        writer.write_u32::<LittleEndian>(match meta.precision {
            SnapshotPrecision::F32 => VERSION_F32,
            SnapshotPrecision::F64 => VERSION_F64,
        })?;
        writer.write_u64::<LittleEndian>(param_count as u64)?;
        writer.write_u8(meta.probe.code())?;
        writer.flush()?;
        let manifest = Manifest {
            data_file: path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            param_count: param_count as u64,
            meta: meta.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Trajectory(e.to_string()))?;
        fs::write(manifest_path(&path), text)?;
        Ok(Trajectory {
            meta,
            records: Vec::new(),
            param_count: Some(param_count),
            store: Some(Store { path, writer }),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn param_count(&self) -> Option<usize> {
        self.param_count
    }

    pub fn path(&self) -> Option<&Path> {
        self.store.as_ref().map(|s| s.path.as_path())
    }

    /// Appends `(t, θᵗ, Lᵗ)`; `t` must continue the contiguous index
    /// sequence starting at 0.
    pub fn record_step(&mut self, t: u64, params: &[f64], loss: f64, batch_id: Option<u64>) -> Result<()> {
        let expected = self.records.len() as u64;
        if t != expected {
            return Err(Error::Trajectory(format!("step {t} recorded where {expected} was expected")));
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {t}")));
        }
        match self.param_count {
            Some(n) if n != params.len() => {
                return Err(Error::Trajectory(format!(
                    "snapshot of {} parameters in a trajectory of {n}",
                    params.len()
                )))
            }
            None => self.param_count = Some(params.len()),
            _ => {}
        }
        let precision = self.meta.precision;
        let snapshot: Vec<f64> = params.iter().map(|&v| precision.round(v)).collect();
        if let Some(store) = &mut self.store {
            let w = &mut store.writer;
            w.write_u64::<LittleEndian>(t)?;
            for &v in &snapshot {
                match precision {
                    SnapshotPrecision::F32 => w.write_f32::<LittleEndian>(v as f32)?,
                    SnapshotPrecision::F64 => w.write_f64::<LittleEndian>(v)?,
                }
            }
            w.write_f64::<LittleEndian>(loss)?;
            w.flush()?;
        }
        self.records.push(StepRecord {
            step: t,
            params: snapshot,
            loss,
            batch_id,
        });
        Ok(())
    }

    /// Reads a trajectory file (and its manifest when present).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |msg: String| Error::format(path, msg);
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("missing header".into()))?;
        if &magic != MAGIC {
            return Err(bad("not a trajectory file (bad magic)".into()));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|_| bad("missing header".into()))?;
        let precision = match version {
            VERSION_F32 => SnapshotPrecision::F32,
            VERSION_F64 => SnapshotPrecision::F64,
            v => return Err(bad(format!("unsupported trajectory version {v}"))),
        };
        let n = r.read_u64::<LittleEndian>().map_err(|_| bad("missing header".into()))? as usize;
        let probe = match r.read_u8().map_err(|_| bad("missing header".into()))? {
            0 => ProbeMode::Minibatch,
            1 => ProbeMode::Fixed,
            c => return Err(bad(format!("unknown probe mode {c}"))),
        };
        let meta = match fs::read_to_string(manifest_path(path)) {
            Ok(text) => {
                let m: Manifest = toml::from_str(&text).map_err(|e| bad(format!("manifest: {e}")))?;
                if m.param_count as usize != n || m.meta.probe != probe || m.meta.precision != precision {
                    return Err(bad("manifest disagrees with file header".into()));
                }
                m.meta
            }
            Err(e) if e.kind() == ErrorKind::NotFound => TrajectoryMeta {
                spec_hash: String::new(),
                optimizer: OptimizerConfig::sgd(1.0),
                seed: 0,
                probe,
                precision,
            },
            Err(e) => return Err(e.into()),
        };
        let mut records = Vec::new();
        loop {
            let step = match r.read_u64::<LittleEndian>() {
                Ok(s) => s,
                Err(e) if e.kind() == ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            };
            let mut params = Vec::with_capacity(n);
            let truncated = |_| bad(format!("record {step} is truncated"));
            for _ in 0..n {
                params.push(match precision {
                    SnapshotPrecision::F32 => r.read_f32::<LittleEndian>().map_err(truncated)? as f64,
                    SnapshotPrecision::F64 => r.read_f64::<LittleEndian>().map_err(truncated)?,
                });
            }
            let loss = r.read_f64::<LittleEndian>().map_err(truncated)?;
            if step != records.len() as u64 {
                return Err(bad(format!("non-contiguous step {step}")));
            }
            records.push(StepRecord {
                step,
                params,
                loss,
                batch_id: None,
            });
        }
        Ok(Trajectory {
            meta,
            records,
            param_count: Some(n),
            store: None,
        })
    }

    /// Removes the backing file and manifest, keeping the in-memory records.
    pub fn delete_files(&mut self) -> Result<()> {
        if let Some(store) = self.store.take() {
            drop(store.writer);
            fs::remove_file(&store.path)?;
            let m = manifest_path(&store.path);
            if m.exists() {
                fs::remove_file(m)?;
            }
        }
        Ok(())
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("toml")
}
