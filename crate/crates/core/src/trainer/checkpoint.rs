//! Flat binary model checkpoints.
//!
//! Layout: `RDPM`, version `u16`, kind tag `u8` (0 linear, 1 two-layer),
//! `in_dim`, `out_dim`, `hidden` as `u32`, then every weight as little-endian `f64`.
//! All integers are little-endian.

use std::path::Path;

use super::model::{EncoderKind, EncoderModel};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RDPM";
const VERSION: u16 = 1;
const HEADER: usize = 4 + 2 + 1 + 12;

pub fn encode(model: &EncoderModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + 8 * model.weights.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let (tag, hidden) = match model.kind {
        EncoderKind::Linear => (0u8, 0usize),
        EncoderKind::TwoLayer { hidden } => (1u8, hidden),
    };
    out.push(tag);
    for d in [model.in_dim, model.out_dim, hidden] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for w in &model.weights {
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<EncoderModel> {
    let bad = |m: &str| Error::arg(format!("invalid checkpoint: {m}"));
    if bytes.len() < HEADER || &bytes[..4] != MAGIC {
        return Err(bad("missing RDPM header"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let dim = |i: usize| {
        let o = 7 + 4 * i;
        u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize
    };
    let (in_dim, out_dim, hidden) = (dim(0), dim(1), dim(2));
    let kind = match bytes[6] {
        0 => EncoderKind::Linear,
        1 => EncoderKind::TwoLayer { hidden },
        t => return Err(bad(&format!("unknown encoder tag {t}"))),
    };
    let body = &bytes[HEADER..];
    if !body.len().is_multiple_of(8) {
        return Err(bad("truncated weights"));
    }
    let weights = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    EncoderModel::new(kind, in_dim, out_dim, weights)
}

pub fn save(model: &EncoderModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<EncoderModel> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        for kind in [EncoderKind::Linear, EncoderKind::TwoLayer { hidden: 3 }] {
            let m = EncoderModel::init(kind, 4, 2, 11).unwrap();
            let bytes = encode(&m);
            assert_eq!(&bytes[..4], b"RDPM");
            assert_eq!(bytes.len(), HEADER + 8 * m.num_params());
            assert_eq!(decode(&bytes).unwrap(), m);
        }
    }

    #[test]
    fn rejects_corruption() {
        let m = EncoderModel::init(EncoderKind::Linear, 2, 2, 0).unwrap();
        let bytes = encode(&m);
        assert!(decode(&bytes[..bytes.len() - 8]).is_err());
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        let mut b = bytes.clone();
        b[0] = b'X';
        assert!(decode(&b).is_err());
        let mut b = bytes;
        b[4] = 9;
        assert!(decode(&b).is_err());
    }
}
