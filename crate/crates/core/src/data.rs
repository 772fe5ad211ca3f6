//! CIFAR-10 binary ingestion and seeded splits.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, shape_err, Error, Result};
use crate::numerics::Tensor;

pub const RECORD_BYTES: usize = 3073;
pub const IMAGE_SHAPE: [usize; 3] = [3, 32, 32];
pub const NUM_CLASSES: usize = 10;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

/// Images `N×C×H×W` with one label per image.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<u8>) -> Result<Self> {
        let (n, ..) = images.dims4()?;
        if n != labels.len() {
            return shape_err(format!("{n} images but {} labels", labels.len()));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn gather(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            images: self.images.gather_outer(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    pub fn concat(parts: &[Dataset]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return invalid("cannot concatenate zero datasets");
        };
        let mut shape = first.images.shape().to_vec();
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for p in parts {
            if p.images.shape()[1..] != shape[1..] {
                return shape_err("datasets with different image shapes");
            }
            data.extend_from_slice(p.images.data());
            labels.extend_from_slice(&p.labels);
        }
        shape[0] = labels.len();
        Self::new(Tensor::new(shape, data)?, labels)
    }
}

/// Decode raw CIFAR-10 binary records (label byte + 3072 channel-planar
/// pixel bytes), scaling pixels to `[0,1]`.
pub fn decode_cifar10(bytes: &[u8], path: &Path) -> Result<Dataset> {
    let fail = |offset: usize, reason: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason,
    };
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        let whole = bytes.len() / RECORD_BYTES * RECORD_BYTES;
        return Err(fail(
            whole,
            format!(
                "file length {} is not a multiple of {RECORD_BYTES}; last record is truncated",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut images = Vec::with_capacity(n * 3072);
    let mut labels = Vec::with_capacity(n);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        if rec[0] as usize >= NUM_CLASSES {
            return Err(fail(i * RECORD_BYTES, format!("label {} out of range in record {i}", rec[0])));
        }
        labels.push(rec[0]);
        images.extend(rec[1..].iter().map(|&p| p as f32 / 255.0));
    }
    Dataset::new(Tensor::new(vec![n, 3, 32, 32], images)?, labels)
}

/// Read and concatenate CIFAR-10 batch files.
pub fn load_cifar10(paths: &[PathBuf]) -> Result<Dataset> {
    let parts = paths
        .iter()
        .map(|p| decode_cifar10(&fs::read(p)?, p))
        .collect::<Result<Vec<_>>>()?;
    Dataset::concat(&parts)
}

/// Training and test batch paths under `dir` (or its `cifar-10-batches-bin`
/// subdirectory). Missing training batches are tolerated as long as one
/// exists.
pub fn locate_cifar10(dir: &Path) -> Result<(Vec<PathBuf>, PathBuf)> {
    for base in [dir.to_path_buf(), dir.join("cifar-10-batches-bin")] {
        let train: Vec<PathBuf> = TRAIN_FILES.iter().map(|f| base.join(f)).filter(|p| p.is_file()).collect();
        let test = base.join(TEST_FILE);
        if !train.is_empty() && test.is_file() {
            return Ok((train, test));
        }
    }
    invalid(format!(
        "no CIFAR-10 binary batches under {} (expected data_batch_*.bin and {TEST_FILE}; \
         download the binary version of CIFAR-10 and pass its directory with --data-dir)",
        dir.display()
    ))
}

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Standardization {
    pub fn fit(data: &Dataset) -> Result<Self> {
        let (n, c, h, w) = data.images.dims4()?;
        if c != 3 || n == 0 {
            return shape_err("standardization expects a non-empty 3-channel dataset");
        }
        let plane = h * w;
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        for (i, &v) in data.images.data().iter().enumerate() {
            let ch = (i / plane) % 3;
            sum[ch] += v as f64;
            sq[ch] += v as f64 * v as f64;
        }
        let count = (n * plane) as f64;
        let mut mean = [0.0; 3];
        let mut std = [0.0; 3];
        for ch in 0..3 {
            let m = sum[ch] / count;
            mean[ch] = m as f32;
            std[ch] = ((sq[ch] / count - m * m).max(0.0).sqrt()).max(1e-6) as f32;
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, data: &mut Dataset) -> Result<()> {
        let (_, c, h, w) = data.images.dims4()?;
        if c != 3 {
            return shape_err("standardization expects 3 channels");
        }
        let plane = h * w;
        for (i, v) in data.images.data_mut().iter_mut().enumerate() {
            let ch = (i / plane) % 3;
            *v = (*v - self.mean[ch]) / self.std[ch];
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    /// Held out from training; scores the accuracy reward.
    pub mini: usize,
    pub test: usize,
    /// Drawn from the training split.
    pub calibration: usize,
}

impl Default for SplitSizes {
    fn default() -> Self {
        Self {
            train: 10_000,
            mini: 1_000,
            test: 2_000,
            calibration: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub mini: Dataset,
    pub test: Dataset,
    pub calibration: Dataset,
    /// Positions in the training pool of each split, for the manifest.
    pub train_indices: Vec<usize>,
    pub mini_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub calibration_indices: Vec<usize>,
}

/// Seeded disjoint train/mini split of `pool`, a test sample from
/// `test_pool`, and a calibration batch taken from the training split.
pub fn subset(pool: &Dataset, test_pool: &Dataset, sizes: SplitSizes, seed: u64) -> Result<Splits> {
    if sizes.train + sizes.mini > pool.len() {
        return invalid(format!(
            "train ({}) + mini ({}) exceed the {} available training images",
            sizes.train,
            sizes.mini,
            pool.len()
        ));
    }
    if sizes.test > test_pool.len() {
        return invalid(format!("test size {} exceeds the {} test images", sizes.test, test_pool.len()));
    }
    if sizes.calibration > sizes.train {
        return invalid("calibration batch must fit inside the training split");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rng);
    let train_indices = order[..sizes.train].to_vec();
    let mini_indices = order[sizes.train..sizes.train + sizes.mini].to_vec();
    let mut test_order: Vec<usize> = (0..test_pool.len()).collect();
    test_order.shuffle(&mut rng);
    let test_indices = test_order[..sizes.test].to_vec();
    let mut cal = train_indices.clone();
    cal.shuffle(&mut rng);
    let calibration_indices = cal[..sizes.calibration].to_vec();
    Ok(Splits {
        train: pool.gather(&train_indices)?,
        mini: pool.gather(&mini_indices)?,
        test: test_pool.gather(&test_indices)?,
        calibration: pool.gather(&calibration_indices)?,
        train_indices,
        mini_indices,
        test_indices,
        calibration_indices,
    })
}
