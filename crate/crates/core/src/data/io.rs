//! `GAEPAIR1` files: magic, little-endian u64 `N` and `P`, the `x` rows then
//! the `y` rows as little-endian f32, then `N` little-endian i16 labels.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::PairDataset;
use crate::error::{GaeError, Result};

pub const PAIR_MAGIC: &[u8; 8] = b"GAEPAIR1";

pub fn encode_pairs(dataset: &PairDataset) -> Vec<u8> {
    let (n, p) = dataset.x.dim();
    let mut out = Vec::with_capacity(24 + 8 * n * p + 2 * n);
    out.extend_from_slice(PAIR_MAGIC);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(p as u64).to_le_bytes());
    for v in dataset.x.iter().chain(dataset.y.iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for a in &dataset.angle_label {
        out.extend_from_slice(&a.to_le_bytes());
    }
    out
}

pub fn decode_pairs(bytes: &[u8]) -> Result<PairDataset> {
    if bytes.len() < 24 {
        return Err(GaeError::Truncated {
            expected: 24,
            actual: bytes.len() as u64,
        });
    }
    if &bytes[..8] != PAIR_MAGIC {
        return Err(GaeError::Format("not a GAEPAIR1 file (bad magic)".into()));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let p = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    let expected = n
        .checked_mul(p)
        .and_then(|np| np.checked_mul(8))
        .and_then(|b| b.checked_add(n.checked_mul(2)?))
        .and_then(|b| b.checked_add(24))
        .ok_or_else(|| GaeError::Format(format!("pair file dimensions {n}×{p} overflow")))?;
    if (bytes.len() as u64) < expected {
        return Err(GaeError::Truncated {
            expected,
            actual: bytes.len() as u64,
        });
    }
    if (bytes.len() as u64) > expected {
        return Err(GaeError::Format(format!(
            "pair file has {} trailing bytes",
            bytes.len() as u64 - expected
        )));
    }
    let (n, p) = (n as usize, p as usize);
    let floats = |start: usize| {
        Array2::from_shape_fn((n, p), |(i, j)| {
            let at = start + 4 * (i * p + j);
            f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
        })
    };
    let x = floats(24);
    let y = floats(24 + 4 * n * p);
    let label_start = 24 + 8 * n * p;
    let labels = (0..n)
        .map(|i| {
            let at = label_start + 2 * i;
            i16::from_le_bytes([bytes[at], bytes[at + 1]])
        })
        .collect();
    PairDataset::new(x, y, labels)
}

pub fn write_pairs(dataset: &PairDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pairs(dataset))?;
    Ok(())
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<PairDataset> {
    decode_pairs(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(n: usize, p: usize, seed: u32) -> PairDataset {
        let x = Array2::from_shape_fn((n, p), |(i, j)| (i * p + j) as f32 * 0.25 - seed as f32);
        let y = Array2::from_shape_fn((n, p), |(i, j)| (j as f32 - i as f32) / 3.0);
        let labels = (0..n).map(|i| (i as i16 * 20) - 180).collect();
        PairDataset::new(x, y, labels).unwrap()
    }

    #[test]
    fn layout_is_as_documented() {
        let bytes = encode_pairs(&dataset(2, 3, 0));
        assert_eq!(&bytes[..8], b"GAEPAIR1");
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
        assert_eq!(bytes.len(), 24 + 2 * 2 * 3 * 4 + 2 * 2);
        assert_eq!(&bytes[bytes.len() - 4..], &[0x4c, 0xff, 0x60, 0xff]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let mut bytes = encode_pairs(&dataset(2, 3, 0));
        let truncated = &bytes[..bytes.len() - 1];
        assert!(matches!(
            decode_pairs(truncated),
            Err(GaeError::Truncated { expected: 76, actual: 75 })
        ));
        bytes[0] = b'X';
        assert!(matches!(decode_pairs(&bytes), Err(GaeError::Format(_))));
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(n in 0usize..6, p in 1usize..10, seed in 0u32..100) {
            let d = dataset(n, p, seed);
            let back = decode_pairs(&encode_pairs(&d)).unwrap();
            prop_assert_eq!(back, d);
        }
    }
}
