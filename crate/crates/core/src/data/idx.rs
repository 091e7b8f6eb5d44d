use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::model::{Batch, Targets};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
}

/// Reads an IDX3 image file: returns `(count, rows, cols, pixels / 255)`.
pub fn read_idx_images(path: impl AsRef<Path>) -> Result<(usize, usize, usize, Vec<f64>)> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let header = |at| be_u32(&bytes, at).ok_or_else(|| Error::format(path, "truncated IDX header"));
    let magic = header(0)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::format(path, format!("bad IDX image magic {magic:#010x}")));
    }
    let (n, rows, cols) = (header(4)? as usize, header(8)? as usize, header(12)? as usize);
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(Error::format(
            path,
            format!("expected {} pixel bytes, found {}", n * rows * cols, body.len()),
        ));
    }
    Ok((n, rows, cols, body.iter().map(|&b| b as f64 / 255.0).collect()))
}

pub fn read_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let magic = be_u32(&bytes, 0).ok_or_else(|| Error::format(path, "truncated IDX header"))?;
    if magic != LABELS_MAGIC {
        return Err(Error::format(path, format!("bad IDX label magic {magic:#010x}")));
    }
    let n = be_u32(&bytes, 4).ok_or_else(|| Error::format(path, "truncated IDX header"))? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::format(path, format!("expected {n} labels, found {}", body.len())));
    }
    Ok(body.iter().map(|&b| b as usize).collect())
}

/// One image/label file pair as a batch of `1 × rows × cols` samples, in file order.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<(Vec<usize>, Batch)> {
    let (n, rows, cols, pixels) = read_idx_images(&images)?;
    let y = read_idx_labels(&labels)?;
    if y.len() != n {
        return Err(Error::format(
            labels.as_ref(),
            format!("{} labels for {n} images in {}", y.len(), images.as_ref().display()),
        ));
    }
    Ok((vec![1, rows, cols], Batch::new(pixels, Targets::Classes(y), rows * cols)?))
}

/// Train/test IDX pairs; `val_fraction` of the training file (chosen by a
/// seeded shuffle) becomes the validation split. Pixels are already in `[0, 1]`.
pub fn load_idx_dataset(
    train_images: impl AsRef<Path>,
    train_labels: impl AsRef<Path>,
    test_images: impl AsRef<Path>,
    test_labels: impl AsRef<Path>,
    val_fraction: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("val_fraction must lie in [0, 1), got {val_fraction}")));
    }
    let (shape, train_all) = load_idx(train_images, train_labels)?;
    let (test_shape, test) = load_idx(test_images, test_labels)?;
    if test_shape != shape {
        return Err(Error::Shape(format!("train images {shape:?} vs test images {test_shape:?}")));
    }
    let n = train_all.size();
    let n_val = ((n as f64) * val_fraction).round().max(1.0) as usize;
    if n_val >= n {
        return Err(Error::Config("training file too small for a validation split".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (val_idx, train_idx) = order.split_at(n_val);
    let classes = match (&train_all.targets, &test.targets) {
        (Targets::Classes(a), Targets::Classes(b)) => a.iter().chain(b).max().map_or(0, |m| m + 1),
        _ => 0,
    };
    Ok(Dataset {
        input_shape: shape,
        classes,
        train: train_all.select(train_idx),
        val: train_all.select(val_idx),
        test,
        normalization: None,
    })
}
