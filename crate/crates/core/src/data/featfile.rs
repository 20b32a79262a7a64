//! Binary feature container: `"HLGT"`, `u16` version, `u32` rows, `u32`
//! cols, then `rows·cols` little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{HlgtError, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: [u8; 4] = *b"HLGT";
pub const FEATURE_VERSION: u16 = 1;
pub const FEATURE_HEADER_LEN: usize = 14;

pub fn encode_features(t: &Tensor<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + 4 * t.data().len());
    out.extend_from_slice(&FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
    for x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

/// Decodes one record from the front of `bytes`, returning the tensor and
/// the number of bytes consumed. `path` only labels errors.
pub fn decode_features(bytes: &[u8], path: &Path) -> Result<(Tensor<f32>, usize)> {
    if bytes.len() < FEATURE_HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != FEATURE_MAGIC {
            return Err(bad_magic(bytes, path));
        }
        return Err(HlgtError::Truncated {
            path: path.to_path_buf(),
            expected: FEATURE_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if bytes[..4] != FEATURE_MAGIC {
        return Err(bad_magic(bytes, path));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FEATURE_VERSION {
        return Err(HlgtError::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: FEATURE_VERSION,
        });
    }
    let rows = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    let expected = FEATURE_HEADER_LEN + 4 * rows * cols;
    if bytes.len() < expected {
        return Err(HlgtError::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len(),
        });
    }
    let data = bytes[FEATURE_HEADER_LEN..expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((Tensor::new(rows, cols, data)?, expected))
}

fn bad_magic(bytes: &[u8], path: &Path) -> HlgtError {
    HlgtError::BadMagic {
        path: path.to_path_buf(),
        found: bytes[..4].try_into().expect("4 bytes"),
    }
}

pub fn write_features(t: &Tensor<f32>, path: &Path) -> Result<()> {
    if !t.is_finite() {
        return Err(HlgtError::NonFiniteInput("write_features"));
    }
    fs::write(path, encode_features(t)).map_err(|e| HlgtError::io(path, e))
}

/// Reads a single-record feature file; trailing bytes are rejected.
pub fn read_features(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| HlgtError::io(path, e))?;
    let (t, used) = decode_features(&bytes, path)?;
    if used != bytes.len() {
        return Err(HlgtError::Truncated {
            path: path.to_path_buf(),
            expected: used,
            actual: bytes.len(),
        });
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.hlgt");
        let t = Tensor::new(2, 3, vec![1.0, -2.5, 3.0, f32::MIN_POSITIVE, 0.0, -0.0]).unwrap();
        write_features(&t, &p).unwrap();
        let back = read_features(&p).unwrap();
        assert_eq!(
            back.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );

        let mut bytes = fs::read(&p).unwrap();
        bytes[0] = b'X';
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_features(&p), Err(HlgtError::BadMagic { .. })));

        let mut bytes = encode_features(&t);
        bytes[4] = 9;
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(
            read_features(&p),
            Err(HlgtError::VersionMismatch { found: 9, .. })
        ));

        let bytes = encode_features(&t);
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        match read_features(&p) {
            Err(HlgtError::Truncated {
                expected, actual, ..
            }) => assert_eq!((expected, actual), (38, 35)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
