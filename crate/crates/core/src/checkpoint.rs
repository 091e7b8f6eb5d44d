//! Parameter checkpoints: `"GCCK"`, `u32` version, `u64` count, the model
//! spec hash as a length-prefixed string, then little-endian `f64` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GCCK";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec_hash: String,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u64::<LittleEndian>(self.params.len() as u64)?;
        w.write_u32::<LittleEndian>(self.spec_hash.len() as u32)?;
        w.write_all(self.spec_hash.as_bytes())?;
        for &v in &self.params {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |msg: &str| Error::format(path, msg);
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated checkpoint header"))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated checkpoint header"))?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let n = r.read_u64::<LittleEndian>().map_err(|_| bad("truncated checkpoint header"))? as usize;
        let len = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated checkpoint header"))? as usize;
        let mut hash = vec![0u8; len];
        r.read_exact(&mut hash).map_err(|_| bad("truncated checkpoint header"))?;
        let spec_hash = String::from_utf8(hash).map_err(|_| bad("spec hash is not UTF-8"))?;
        let mut params = Vec::with_capacity(n.min(1 << 24));
        for _ in 0..n {
            params.push(r.read_f64::<LittleEndian>().map_err(|_| bad("truncated parameter data"))?);
        }
        if r.read(&mut [0u8; 1])? != 0 {
            return Err(bad("trailing bytes after parameter data"));
        }
        Ok(Checkpoint { spec_hash, params })
    }
}
