//! CIFAR-10 binary batches: 3,073-byte records of one label byte followed
//! by 3,072 channel-planar pixel bytes (32x32 red, green, then blue).

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::derived_rng;
use crate::tensor::Tensor;

pub const RECORD_BYTES: usize = 3073;
const PIXELS: usize = 3072;
const PLANE: usize = 1024;
const CLASSES: usize = 10;
pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

/// Per-channel normalization constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

struct Raw {
    labels: Vec<u8>,
    pixels: Vec<u8>,
}

fn read_batch(path: &Path, raw: &mut Raw) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            offset: (bytes.len() / RECORD_BYTES * RECORD_BYTES) as u64,
            detail: format!(
                "truncated record: {} trailing bytes, records are {RECORD_BYTES} bytes",
                bytes.len() % RECORD_BYTES
            ),
        });
    }
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        if rec[0] as usize >= CLASSES {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                offset: (i * RECORD_BYTES) as u64,
                detail: format!("label byte {} is not a class in 0..=9", rec[0]),
            });
        }
        raw.labels.push(rec[0]);
        raw.pixels.extend_from_slice(&rec[1..]);
    }
    Ok(())
}

/// A batch file, or a directory holding the five training batches.
fn read_split(path: &Path) -> Result<Raw> {
    let mut raw = Raw {
        labels: Vec::new(),
        pixels: Vec::new(),
    };
    if path.is_dir() {
        for f in TRAIN_FILES {
            read_batch(&path.join(f), &mut raw)?;
        }
    } else {
        read_batch(path, &mut raw)?;
    }
    Ok(raw)
}

/// Seeded class-balanced subset; class counts differ by at most one, with
/// the remainder going to the lowest class indices. `None` keeps every
/// record in file order.
fn balanced_indices(labels: &[u8], subset: Option<usize>, seed: u64, path: &Path) -> Result<Vec<usize>> {
    let Some(subset) = subset else {
        return Ok((0..labels.len()).collect());
    };
    let mut out = Vec::with_capacity(subset);
    for class in 0..CLASSES {
        let want = subset / CLASSES + usize::from(class < subset % CLASSES);
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] as usize == class).collect();
        if idx.len() < want {
            return Err(Error::Precondition(format!(
                "{} has {} records of class {class}, subset needs {want}",
                path.display(),
                idx.len()
            )));
        }
        idx.shuffle(&mut derived_rng(seed, &[0xc1fa, class as u64]));
        out.extend_from_slice(&idx[..want]);
    }
    out.shuffle(&mut derived_rng(seed, &[0xc1fa, 99]));
    Ok(out)
}

fn to_dataset(raw: &Raw, idx: &[usize], stats: &ChannelStats) -> Result<Dataset> {
    let mut data = Vec::with_capacity(idx.len() * PIXELS);
    for &i in idx {
        let px = &raw.pixels[i * PIXELS..(i + 1) * PIXELS];
        for (j, &p) in px.iter().enumerate() {
            let ch = j / PLANE;
            data.push((p as f64 / 255.0 - stats.mean[ch]) / stats.std[ch]);
        }
    }
    let labels = idx.iter().map(|&i| raw.labels[i] as usize).collect();
    Dataset::new(Tensor::new(vec![idx.len(), 3, 32, 32], data)?, labels, CLASSES)
}

fn channel_stats(raw: &Raw, idx: &[usize]) -> ChannelStats {
    let mut sum = [0.0; 3];
    let mut sq = [0.0; 3];
    for &i in idx {
        for (j, &p) in raw.pixels[i * PIXELS..(i + 1) * PIXELS].iter().enumerate() {
            let v = p as f64 / 255.0;
            sum[j / PLANE] += v;
            sq[j / PLANE] += v * v;
        }
    }
    let n = (idx.len() * PLANE) as f64;
    let mut stats = ChannelStats {
        mean: [0.0; 3],
        std: [1.0; 3],
    };
    for c in 0..3 {
        let m = sum[c] / n;
        let var = (sq[c] / n - m * m).max(0.0);
        stats.mean[c] = m;
        if var > 0.0 {
            stats.std[c] = var.sqrt();
        }
    }
    stats
}

/// Loads a class-balanced training subset (all records when `subset` is
/// `None`), normalized with its own per-channel statistics.
pub fn load_cifar10(path: &Path, subset: Option<usize>, seed: u64) -> Result<(Dataset, ChannelStats)> {
    let raw = read_split(path)?;
    let idx = balanced_indices(&raw.labels, subset, seed, path)?;
    if idx.is_empty() {
        return Err(Error::Precondition(format!("no records selected from {}", path.display())));
    }
    let stats = channel_stats(&raw, &idx);
    Ok((to_dataset(&raw, &idx, &stats)?, stats))
}

/// Loads a split normalized with statistics from elsewhere, typically the
/// training subset.
pub fn load_cifar10_split(path: &Path, subset: Option<usize>, seed: u64, stats: &ChannelStats) -> Result<Dataset> {
    let raw = read_split(path)?;
    let idx = balanced_indices(&raw.labels, subset, seed, path)?;
    to_dataset(&raw, &idx, stats)
}

/// Training directory and test file of an extracted `cifar-10-batches-bin`.
pub fn standard_paths(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.to_path_buf(), dir.join(TEST_FILE))
}
