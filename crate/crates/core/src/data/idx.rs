//! IDX files as distributed with MNIST: a big-endian magic number whose low
//! byte is the dimension count, big-endian u32 dimension sizes, then bytes.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Image, ImageSet, Split};
use crate::error::{GaeError, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(GaeError::Truncated {
            expected: (offset + 4) as u64,
            actual: bytes.len() as u64,
        })
}

/// Parses header dims and returns `(dims, payload offset)`.
fn parse_header(bytes: &[u8], magic: u32) -> Result<(Vec<usize>, usize)> {
    let found = read_u32(bytes, 0)?;
    if found != magic {
        return Err(GaeError::Format(format!(
            "bad IDX magic 0x{found:08x}, expected 0x{magic:08x}"
        )));
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims)
        .map(|d| read_u32(bytes, 4 + 4 * d).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndims;
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| GaeError::Format(format!("IDX dimensions {dims:?} overflow")))?;
    let expected = header
        .checked_add(payload)
        .ok_or_else(|| GaeError::Format(format!("IDX dimensions {dims:?} overflow")))?;
    if bytes.len() < expected {
        return Err(GaeError::Truncated {
            expected: expected as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok((dims, header))
}

/// Decodes an image file; pixel bytes are scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], split: Split) -> Result<ImageSet> {
    let (dims, offset) = parse_header(bytes, IMAGE_MAGIC)?;
    let (count, rows, cols) = (dims[0], dims[1], dims[2]);
    let size = rows * cols;
    let images: Vec<Image> = (0..count)
        .map(|i| {
            let start = offset + i * size;
            Array2::from_shape_fn((rows, cols), |(r, c)| {
                f64::from(bytes[start + r * cols + c]) / 255.0
            })
        })
        .collect();
    ImageSet::new(images, split)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let (dims, offset) = parse_header(bytes, LABEL_MAGIC)?;
    Ok(bytes[offset..offset + dims[0]].to_vec())
}

pub fn load_idx(path: impl AsRef<Path>, split: Split) -> Result<ImageSet> {
    parse_idx_images(&fs::read(path)?, split)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<u8>> {
    parse_idx_labels(&fs::read(path)?)
}
