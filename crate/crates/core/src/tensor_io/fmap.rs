//! `FMP1` feature files: magic `FMP1`, little-endian `u32` C, H, W, one
//! `u8` scale exponent, three reserved zero bytes, then `C * H * W`
//! little-endian `f32` values, planar.

use std::fs;
use std::path::Path;

use super::{FeatureMap, Planar, Planes};
use crate::error::{Error, Result};

pub const FMAP_MAGIC: [u8; 4] = *b"FMP1";
pub const FMAP_HEADER_LEN: usize = 20;

pub fn read_fmap(path: impl AsRef<Path>) -> Result<FeatureMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fmap(&bytes)
}

pub fn write_fmap(fmap: &FeatureMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_fmap(fmap)).map_err(|e| Error::io(path, e))
}

pub(crate) fn decode_fmap(bytes: &[u8]) -> Result<FeatureMap> {
    if bytes.len() < FMAP_HEADER_LEN {
        return Err(Error::Truncated { expected: FMAP_HEADER_LEN, found: bytes.len() });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != FMAP_MAGIC {
        return Err(Error::BadMagic { expected: FMAP_MAGIC, found: magic });
    }
    let dim = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (c, h, w) = (dim(4), dim(8), dim(12));
    let scale = bytes[16];
    let n = c
        .checked_mul(h)
        .and_then(|n| n.checked_mul(w))
        .ok_or_else(|| Error::Malformed("FMP1 dimensions overflow".into()))?;
    let expected = n
        .checked_mul(4)
        .and_then(|b| b.checked_add(FMAP_HEADER_LEN))
        .ok_or_else(|| Error::Malformed("FMP1 dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Truncated { expected, found: bytes.len() });
    }
    let data = bytes[FMAP_HEADER_LEN..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Ok(FeatureMap::new(Planes::new(c, h, w, data)?, scale))
}

pub(crate) fn encode_fmap(fmap: &FeatureMap) -> Vec<u8> {
    let p = fmap.planes();
    let mut out = Vec::with_capacity(FMAP_HEADER_LEN + 4 * p.data().len());
    out.extend_from_slice(&FMAP_MAGIC);
    for d in [p.channels(), p.height(), p.width()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.push(fmap.scale_exponent());
    out.extend_from_slice(&[0, 0, 0]);
    for v in p.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_value_layout() {
        let fmap = FeatureMap::new(Planes::new(1, 1, 1, vec![7.0]).unwrap(), 0);
        let bytes = encode_fmap(&fmap);
        assert_eq!(bytes.len(), FMAP_HEADER_LEN + 4);
        assert_eq!(bytes.len(), 24);
        assert_eq!(&bytes[..4], b"FMP1");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &[0, 0, 0, 0]);
        assert_eq!(&bytes[20..], &7.0f32.to_le_bytes());
        assert_eq!(decode_fmap(&bytes).unwrap(), fmap);
    }

    #[test]
    fn declared_size_larger_than_payload() {
        let fmap = FeatureMap::new(Planes::filled(2, 2, 2, 1.0).unwrap(), 3);
        let mut bytes = encode_fmap(&fmap);
        bytes[4] = 3;
        assert!(matches!(decode_fmap(&bytes), Err(Error::Truncated { .. })));
    }

    #[test]
    fn bad_magic() {
        let fmap = FeatureMap::new(Planes::filled(1, 1, 1, 1.0).unwrap(), 0);
        let mut bytes = encode_fmap(&fmap);
        bytes[3] = b'2';
        assert!(matches!(decode_fmap(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn scale_exponent_survives() {
        let fmap = FeatureMap::new(Planes::filled(4, 3, 3, 0.25).unwrap(), 3);
        let back = decode_fmap(&encode_fmap(&fmap)).unwrap();
        assert_eq!(back.scale_exponent(), 3);
        assert_eq!(back, fmap);
    }
}
