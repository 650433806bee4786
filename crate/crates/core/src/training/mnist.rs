//! Handwritten-digit images in the gzip-compressed IDX format, reduced to 64 modes.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::mode::ModeVector;
use crate::training::dataset::Dataset;

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;
pub const IMAGE_SIDE: usize = 28;
pub const REDUCED_SIDE: usize = 8;
pub const N_FEATURES: usize = REDUCED_SIDE * REDUCED_SIDE;

/// Grayscale images with pixel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Images {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<Vec<f64>>,
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Data("truncated IDX header".into()))
}

fn check_magic(bytes: &[u8], magic: u32) -> Result<()> {
    let found = read_u32(bytes, 0)?;
    if found != magic {
        return Err(Error::Data(format!("IDX magic {found}, expected {magic}")));
    }
    Ok(())
}

/// Parses an uncompressed IDX image file.
pub fn parse_images(bytes: &[u8]) -> Result<Images> {
    check_magic(bytes, IMAGE_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let rows = read_u32(bytes, 8)? as usize;
    let cols = read_u32(bytes, 12)? as usize;
    let size = rows * cols;
    let body = &bytes[16..];
    if body.len() != count * size {
        return Err(Error::Data(format!(
            "IDX image body has {} bytes, expected {}",
            body.len(),
            count * size
        )));
    }
    let pixels = body
        .chunks_exact(size.max(1))
        .take(count)
        .map(|c| c.iter().map(|&b| f64::from(b) / 255.0).collect())
        .collect();
    Ok(Images { rows, cols, pixels })
}

/// Parses an uncompressed IDX label file.
pub fn parse_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    check_magic(bytes, LABEL_MAGIC)?;
    let count = read_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Data(format!(
            "IDX label body has {} bytes, expected {count}",
            body.len()
        )));
    }
    Ok(body.iter().map(|&b| usize::from(b)).collect())
}

fn read_gz(path: &Path) -> Result<Vec<u8>> {
    let file = File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    GzDecoder::new(BufReader::new(file))
        .read_to_end(&mut out)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(out)
}

pub fn load_images(path: &Path) -> Result<Images> {
    parse_images(&read_gz(path)?)
}

pub fn load_labels(path: &Path) -> Result<Vec<usize>> {
    parse_labels(&read_gz(path)?)
}

/// 28×28 → zero-pad to 32×32 → 4×4 block means → 8×8, flattened and unit-normalized.
pub fn mnist64_preprocess(image: &[f64]) -> Result<ModeVector> {
    if image.len() != IMAGE_SIDE * IMAGE_SIDE {
        return Err(Error::DimensionMismatch {
            expected: IMAGE_SIDE * IMAGE_SIDE,
            found: image.len(),
        });
    }
    if image.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument(
            "pixel values must lie in [0, 1]".into(),
        ));
    }
    let padded = 32;
    let pad = (padded - IMAGE_SIDE) / 2;
    let block = padded / REDUCED_SIDE;
    let mut reduced = vec![0.0; N_FEATURES];
    for r in 0..IMAGE_SIDE {
        for c in 0..IMAGE_SIDE {
            let (pr, pc) = (r + pad, c + pad);
            reduced[(pr / block) * REDUCED_SIDE + pc / block] += image[r * IMAGE_SIDE + c];
        }
    }
    let area = (block * block) as f64;
    let reduced: Vec<f64> = reduced.into_iter().map(|v| v / area).collect();
    Ok(ModeVector::from_real(&reduced).normalized()?.0)
}

/// Loads the images and labels in `dir` (standard file names) as 64-feature points.
///
/// The first `n_train` training images form the train split and the first
/// `n_test` test images the test split; `None` keeps every image.
pub fn load_mnist64(dir: &Path, n_train: Option<usize>, n_test: Option<usize>) -> Result<Dataset> {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (prefix, limit, split) in [("train", n_train, &mut train), ("t10k", n_test, &mut test)] {
        let images = load_images(&dir.join(format!("{prefix}-images-idx3-ubyte.gz")))?;
        let lbls = load_labels(&dir.join(format!("{prefix}-labels-idx1-ubyte.gz")))?;
        if images.pixels.len() != lbls.len() {
            return Err(Error::Data(format!(
                "{prefix}: {} images but {} labels",
                images.pixels.len(),
                lbls.len()
            )));
        }
        if images.rows != IMAGE_SIDE || images.cols != IMAGE_SIDE {
            return Err(Error::Data(format!(
                "{prefix}: images are {}×{}",
                images.rows, images.cols
            )));
        }
        let take = limit.unwrap_or(lbls.len()).min(lbls.len());
        for (img, &label) in images.pixels.iter().zip(&lbls).take(take) {
            let v = mnist64_preprocess(img)?;
            split.push(points.len());
            points.push(v.iter().map(|z| z.re).collect());
            labels.push(label);
        }
    }
    Dataset::with_split(points, labels, 10, train, test)
}
