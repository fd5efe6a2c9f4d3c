//! CIFAR binary batches: one label byte (two for CIFAR-100) followed by
//! 3072 channel-planar pixels per record.

use std::path::{Path, PathBuf};

use super::{Dataset, Normalization, Split};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const CIFAR_RECORD_BYTES: usize = 3073;

pub const CIFAR10_NORM: Normalization<3> = Normalization {
    mean: [0.4914, 0.4822, 0.4465],
    std: [0.2470, 0.2435, 0.2616],
};

pub const CIFAR100_NORM: Normalization<3> = Normalization {
    mean: [0.5071, 0.4865, 0.4409],
    std: [0.2673, 0.2564, 0.2762],
};

/// Splits a batch file into `(label, planar pixels)` records. `label_bytes`
/// is 1 for CIFAR-10 and 2 (coarse, fine) for CIFAR-100; the last label
/// byte is used.
pub fn parse_cifar_records(bytes: &[u8], label_bytes: usize, classes: usize) -> std::result::Result<Vec<(usize, &[u8])>, String> {
    let rec = label_bytes + 3072;
    if bytes.len() % rec != 0 {
        return Err(format!("length {} is not a multiple of the {rec}-byte record", bytes.len()));
    }
    bytes
        .chunks_exact(rec)
        .enumerate()
        .map(|(i, r)| {
            let label = r[label_bytes - 1] as usize;
            if label >= classes {
                Err(format!("record {i}: label byte {label} >= {classes}"))
            } else {
                Ok((label, &r[label_bytes..]))
            }
        })
        .collect()
}

fn load_files<T: Scalar>(
    files: Vec<PathBuf>,
    label_bytes: usize,
    classes: usize,
    norm: &Normalization<3>,
) -> Result<Dataset<T>> {
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for path in files {
        let bytes = std::fs::read(&path).map_err(|e| Error::Dataset {
            path: path.clone(),
            detail: e.to_string(),
        })?;
        let records = parse_cifar_records(&bytes, label_bytes, classes).map_err(|detail| Error::Dataset {
            path: path.clone(),
            detail,
        })?;
        for (label, planar) in records {
            labels.push(label);
            for p in 0..1024 {
                for c in 0..3 {
                    let v = planar[c * 1024 + p] as f64 / 255.0;
                    data.push(T::lit((v - norm.mean[c]) / norm.std[c]));
                }
            }
        }
    }
    let n = labels.len();
    if n == 0 {
        return Err(Error::invalid("no CIFAR records found"));
    }
    let fill = (0..3).map(|c| T::lit(-norm.mean[c] / norm.std[c])).collect();
    Dataset::new(Tensor::new(vec![n, 32, 32, 3], data)?, labels, classes, fill)
}

/// `data_batch_{1..5}.bin` / `test_batch.bin` under `root`.
pub fn load_cifar10<T: Scalar>(root: impl AsRef<Path>, split: Split) -> Result<Dataset<T>> {
    let root = root.as_ref();
    let files = match split {
        Split::Train => (1..=5).map(|i| root.join(format!("data_batch_{i}.bin"))).collect(),
        Split::Test => vec![root.join("test_batch.bin")],
    };
    load_files(files, 1, 10, &CIFAR10_NORM)
}

/// `train.bin` / `test.bin` under `root`, fine labels.
pub fn load_cifar100<T: Scalar>(root: impl AsRef<Path>, split: Split) -> Result<Dataset<T>> {
    let root = root.as_ref();
    let file = match split {
        Split::Train => root.join("train.bin"),
        Split::Test => root.join("test.bin"),
    };
    load_files(vec![file], 2, 100, &CIFAR100_NORM)
}
