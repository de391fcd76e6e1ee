//! Middlebury `.flo`: magic `PIEH`, little-endian `u32` width and height,
//! then `H * W` interleaved `(u, v)` little-endian `f32` pairs.

use std::fs;
use std::path::Path;

use super::{FlowField, Planar};
use crate::error::{Error, Result};

pub const FLO_MAGIC: [u8; 4] = *b"PIEH";

/// Middlebury marks unknown flow with values above this magnitude.
pub const UNKNOWN_FLOW_THRESHOLD: f32 = 1e9;

const HEADER_LEN: usize = 12;

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_flo(&bytes)
}

pub fn write_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_flo(flow)).map_err(|e| Error::io(path, e))
}

pub(crate) fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { expected: HEADER_LEN, found: bytes.len() });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != FLO_MAGIC {
        return Err(Error::BadMagic { expected: FLO_MAGIC, found: magic });
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::Malformed("flo dimensions overflow".into()))?;
    let expected = n
        .checked_mul(8)
        .and_then(|b| b.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Malformed("flo dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Truncated { expected, found: bytes.len() });
    }
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let value = f32::from_le_bytes(chunk.try_into().unwrap());
        if !value.is_finite() || value.abs() > UNKNOWN_FLOW_THRESHOLD {
            return Err(Error::NonFiniteValue { index: i });
        }
        if i % 2 == 0 {
            u.push(value as f64);
        } else {
            v.push(value as f64);
        }
    }
    FlowField::from_uv(height, width, u, v)
}

pub(crate) fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let (h, w) = (flow.height(), flow.width());
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * h * w);
    out.extend_from_slice(&FLO_MAGIC);
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    for (u, v) in flow.u().iter().zip(flow.v()) {
        out.extend_from_slice(&(*u as f32).to_le_bytes());
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_assembled_constant() -> Vec<u8> {
        let mut b = b"PIEH".to_vec();
        b.extend_from_slice(&[2, 0, 0, 0, 2, 0, 0, 0]);
        for _ in 0..4 {
            // 1.5f32 = 0x3FC00000, -2.0f32 = 0xC0000000
            b.extend_from_slice(&[0x00, 0x00, 0xC0, 0x3F]);
            b.extend_from_slice(&[0x00, 0x00, 0x00, 0xC0]);
        }
        b
    }

    #[test]
    fn constant_flow_matches_hand_bytes() {
        let flow = FlowField::constant(2, 2, 1.5, -2.0).unwrap();
        let bytes = encode_flo(&flow);
        assert_eq!(bytes, hand_assembled_constant());
        let back = decode_flo(&bytes).unwrap();
        assert_eq!(back.u(), &[1.5; 4]);
        assert_eq!(back.v(), &[-2.0; 4]);
    }

    #[test]
    fn file_roundtrip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.flo");
        std::fs::write(&p, hand_assembled_constant()).unwrap();
        let q = dir.path().join("b.flo");
        write_flo(&read_flo(&p).unwrap(), &q).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&q).unwrap());
    }

    #[test]
    fn bad_magic() {
        let mut b = hand_assembled_constant();
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_flo(&b), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_and_oversized() {
        let b = hand_assembled_constant();
        assert!(matches!(decode_flo(&b[..b.len() - 1]), Err(Error::Truncated { .. })));
        assert!(matches!(decode_flo(&b[..6]), Err(Error::Truncated { .. })));
        let mut longer = b.clone();
        longer.push(0);
        assert!(matches!(decode_flo(&longer), Err(Error::Truncated { .. })));
    }

    #[test]
    fn unknown_flow_sentinel_rejected() {
        let mut b = hand_assembled_constant();
        b[12..16].copy_from_slice(&1.5e9f32.to_le_bytes());
        assert!(matches!(decode_flo(&b), Err(Error::NonFiniteValue { index: 0 })));
        b[12..16].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode_flo(&b), Err(Error::NonFiniteValue { .. })));
    }

    #[test]
    fn unwritable_path_is_io_failure() {
        let flow = FlowField::zeros(1, 1).unwrap();
        let err = write_flo(&flow, "/nonexistent-dir/x/y.flo").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
