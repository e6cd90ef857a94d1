//! FMAP tensor container.
//!
//! Little-endian layout: magic `FMAP`, version u32 = 1, dtype u8 = 0 (f32),
//! ndims u32 = 4, then the four dims as u32 in (batch, channels, width,
//! height) order, then the raw f32 payload with element (b,c,x,y) at offset
//! ((b*C + c)*W + x)*H + y. Values are held as f64 in memory and quantized to
//! f32 on write, so read(write(m)) is bit-identical whenever the data is
//! f32-representable -- which holds for anything that itself came from disk.

use std::fmt;
use std::path::Path;

use fctl_core::tensor::{Dims, FeatureMap};

pub const MAGIC: &[u8; 4] = b"FMAP";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
/// Magic + version + dtype + ndims + four dims.
pub const HEADER_LEN: usize = 4 + 4 + 1 + 4 + 16;

/// A malformed tensor file; every variant carries the byte offset at which
/// decoding failed.
#[derive(Debug, Clone, PartialEq)]
pub enum FormatError {
    BadMagic { found: [u8; 4] },
    BadVersion { found: u32 },
    BadDtype { found: u8 },
    BadNdims { found: u32 },
    BadDim { index: usize, offset: usize },
    Truncated { offset: usize, expected: usize, actual: usize },
    NonFinite { offset: usize },
}

impl fmt::Display for FormatError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormatError::BadMagic { found } => {
                write!(f, "byte 0: bad magic {:?}, expected \"FMAP\"", String::from_utf8_lossy(found))
            }
            FormatError::BadVersion { found } => {
                write!(f, "byte 4: unsupported version {found}, expected {VERSION}")
            }
            FormatError::BadDtype { found } => {
                write!(f, "byte 8: unsupported dtype code {found}, expected {DTYPE_F32} (f32)")
            }
            FormatError::BadNdims { found } => {
                write!(f, "byte 9: ndims is {found}, expected 4")
            }
            FormatError::BadDim { index, offset } => {
                write!(f, "byte {offset}: dimension {index} is zero")
            }
            FormatError::Truncated { offset, expected, actual } => {
                write!(f, "byte {offset}: truncated file, expected {expected} bytes total, got {actual}")
            }
            FormatError::NonFinite { offset } => {
                write!(f, "byte {offset}: non-finite payload value")
            }
        }
    }
}

impl std::error::Error for FormatError {}

pub fn encode(map: &FeatureMap) -> Vec<u8> {
    let dims = map.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * dims.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.extend_from_slice(&4u32.to_le_bytes());
    for d in [dims.batch, dims.channels, dims.width, dims.height] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in map.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<FeatureMap, FormatError> {
    let need = |offset: usize, expected: usize| -> Result<(), FormatError> {
        if bytes.len() < expected {
            Err(FormatError::Truncated { offset, expected, actual: bytes.len() })
        } else {
            Ok(())
        }
    };
    need(bytes.len(), HEADER_LEN)?;
    if &bytes[0..4] != MAGIC {
        return Err(FormatError::BadMagic { found: bytes[0..4].try_into().unwrap() });
    }
    let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(FormatError::BadVersion { found: version });
    }
    if bytes[8] != DTYPE_F32 {
        return Err(FormatError::BadDtype { found: bytes[8] });
    }
    let ndims = u32_at(9);
    if ndims != 4 {
        return Err(FormatError::BadNdims { found: ndims });
    }
    let mut dims = [0usize; 4];
    for (i, d) in dims.iter_mut().enumerate() {
        let offset = 13 + 4 * i;
        *d = u32_at(offset) as usize;
        if *d == 0 {
            return Err(FormatError::BadDim { index: i, offset });
        }
    }
    let dims = Dims::new(dims[0], dims[1], dims[2], dims[3]);
    let expected = HEADER_LEN + 4 * dims.len();
    need(bytes.len().min(expected), expected)?;
    let mut data = Vec::with_capacity(dims.len());
    for i in 0..dims.len() {
        let at = HEADER_LEN + 4 * i;
        let v = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        if !v.is_finite() {
            return Err(FormatError::NonFinite { offset: at });
        }
        data.push(v as f64);
    }
    Ok(FeatureMap::from_vec(dims, data).expect("dims and finiteness checked above"))
}

pub fn write_tensor_file(map: &FeatureMap, path: &Path) -> anyhow::Result<()> {
    std::fs::write(path, encode(map))
        .map_err(|e| anyhow::anyhow!("writing {}: {e}", path.display()))
}

pub fn read_tensor_file(path: &Path) -> anyhow::Result<FeatureMap> {
    let bytes =
        std::fs::read(path).map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
    decode(&bytes).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use fctl_core::rng::SplitMix64;

    fn random_quantized(seed: u64, dims: Dims) -> FeatureMap {
        let mut rng = SplitMix64::new(seed);
        FeatureMap::from_fn(dims, |_, _, _, _| rng.uniform(-5.0, 5.0)).unwrap().quantize_f32()
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let m = random_quantized(3, Dims::new(2, 2, 5, 7));
        let back = decode(&encode(&m)).unwrap();
        assert_eq!(m.dims(), back.dims());
        for (a, b) in m.data().iter().zip(back.data().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn counter_pattern_obeys_index_law() {
        let dims = Dims::new(2, 3, 4, 5);
        let mut n = 0.0;
        let m = FeatureMap::from_fn(dims, |_, _, _, _| {
            n += 1.0;
            n
        })
        .unwrap();
        let bytes = encode(&m);
        // Element (b,c,x,y) lives at payload offset ((b*C + c)*W + x)*H + y.
        let (b, c, x, y) = (1, 2, 3, 4);
        let idx = ((b * dims.channels + c) * dims.width + x) * dims.height + y;
        let at = HEADER_LEN + 4 * idx;
        let v = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        assert_eq!(v as f64, m.get(b, c, x, y));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = encode(&random_quantized(4, Dims::new(1, 1, 2, 2)));
        bytes[0..4].copy_from_slice(b"XXXX");
        let err = decode(&bytes).unwrap_err();
        assert!(matches!(err, FormatError::BadMagic { .. }));
        assert!(err.to_string().starts_with("byte 0"));
    }

    #[test]
    fn bad_dtype_is_rejected() {
        let mut bytes = encode(&random_quantized(5, Dims::new(1, 1, 2, 2)));
        bytes[8] = 7;
        assert!(matches!(decode(&bytes).unwrap_err(), FormatError::BadDtype { found: 7 }));
    }

    #[test]
    fn truncation_names_expected_and_actual_length() {
        let bytes = encode(&random_quantized(6, Dims::new(1, 1, 3, 3)));
        let err = decode(&bytes[..bytes.len() - 5]).unwrap_err();
        match err {
            FormatError::Truncated { expected, actual, .. } => {
                assert_eq!(expected, bytes.len());
                assert_eq!(actual, bytes.len() - 5);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn zero_dimension_is_rejected() {
        let mut bytes = encode(&random_quantized(7, Dims::new(1, 1, 2, 2)));
        bytes[17..21].copy_from_slice(&0u32.to_le_bytes());
        let err = decode(&bytes).unwrap_err();
        assert!(matches!(err, FormatError::BadDim { index: 1, offset: 17 }));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.fmap");
        let m = random_quantized(8, Dims::new(1, 2, 4, 4));
        write_tensor_file(&m, &path).unwrap();
        let back = read_tensor_file(&path).unwrap();
        assert_eq!(m.data(), back.data());
    }
}
