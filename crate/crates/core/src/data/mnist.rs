//! IDX files as distributed for MNIST.

use std::path::Path;

use super::{Dataset, Normalization, Split};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MNIST_NORM: Normalization<1> = Normalization {
    mean: [0.1307],
    std: [0.3081],
};

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes(b.try_into().unwrap()))
}

/// Parses an image file (magic 2051) into `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> std::result::Result<(usize, usize, usize, &[u8]), String> {
    match be_u32(bytes, 0) {
        Some(2051) => {}
        Some(m) => return Err(format!("bad image magic {m} (expected 2051)")),
        None => return Err("file shorter than its header".into()),
    }
    let dims: Vec<usize> = (1..4)
        .map(|i| be_u32(bytes, 4 * i).map(|v| v as usize))
        .collect::<Option<_>>()
        .ok_or("truncated image header")?;
    let (n, h, w) = (dims[0], dims[1], dims[2]);
    let need = n * h * w;
    let body = &bytes[16..];
    if body.len() != need {
        return Err(format!("payload holds {} bytes, header promises {need}", body.len()));
    }
    Ok((n, h, w, body))
}

/// Parses a label file (magic 2049).
pub fn parse_idx_labels(bytes: &[u8]) -> std::result::Result<&[u8], String> {
    match be_u32(bytes, 0) {
        Some(2049) => {}
        Some(m) => return Err(format!("bad label magic {m} (expected 2049)")),
        None => return Err("file shorter than its header".into()),
    }
    let n = be_u32(bytes, 4).ok_or("truncated label header")? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(format!("payload holds {} labels, header promises {n}", body.len()));
    }
    if let Some(bad) = body.iter().find(|&&l| l > 9) {
        return Err(format!("label {bad} outside 0..=9"));
    }
    Ok(body)
}

/// Loads `{train,t10k}-{images-idx3,labels-idx1}-ubyte` from `root`, scales
/// pixels to `[0, 1]` and normalizes them.
pub fn load_mnist<T: Scalar>(root: impl AsRef<Path>, split: Split) -> Result<Dataset<T>> {
    let root = root.as_ref();
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let ipath = root.join(format!("{prefix}-images-idx3-ubyte"));
    let lpath = root.join(format!("{prefix}-labels-idx1-ubyte"));
    let read = |p: &Path| {
        std::fs::read(p).map_err(|e| Error::Dataset {
            path: p.to_path_buf(),
            detail: e.to_string(),
        })
    };
    let ibytes = read(&ipath)?;
    let lbytes = read(&lpath)?;
    let (n, h, w, pixels) = parse_idx_images(&ibytes).map_err(|detail| Error::Dataset {
        path: ipath.clone(),
        detail,
    })?;
    let labels = parse_idx_labels(&lbytes).map_err(|detail| Error::Dataset {
        path: lpath.clone(),
        detail,
    })?;
    if labels.len() != n {
        return Err(Error::Dataset {
            path: lpath,
            detail: format!("{} labels for {n} images", labels.len()),
        });
    }
    let (mean, std) = (MNIST_NORM.mean[0], MNIST_NORM.std[0]);
    let data = pixels.iter().map(|&p| T::lit((p as f64 / 255.0 - mean) / std)).collect();
    Dataset::new(
        Tensor::new(vec![n, h, w, 1], data)?,
        labels.iter().map(|&l| l as usize).collect(),
        10,
        vec![T::lit(-mean / std)],
    )
}
