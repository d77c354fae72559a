//! `model.bin`: magic `SNF1`, six little-endian `u32` dimensions
//! `[n_x, n_u, n_y, n_w, n_vu, n_vy]`, then little-endian `f64` values of
//! `w`, `v_u`, `v_y` and `S` in that order.

use std::fmt;

use snf_core::model::{Block, Model};

pub const MAGIC: &[u8; 4] = b"SNF1";
const HEADER_WORDS: usize = 6;

#[derive(Debug, Clone, PartialEq)]
pub enum SnapshotError {
    BadMagic,
    Truncated { expected: usize, got: usize },
    Mismatch { field: &'static str, expected: u32, got: u32 },
    TooLong { expected: usize, got: usize },
}

impl fmt::Display for SnapshotError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SnapshotError::BadMagic => f.write_str("not a model snapshot (bad magic)"),
            SnapshotError::Truncated { expected, got } => {
                write!(f, "snapshot truncated: expected {expected} bytes, got {got}")
            }
            SnapshotError::Mismatch { field, expected, got } => {
                write!(f, "snapshot {field} is {got} but the configured model has {expected}")
            }
            SnapshotError::TooLong { expected, got } => {
                write!(f, "snapshot has trailing data: expected {expected} bytes, got {got}")
            }
        }
    }
}

impl std::error::Error for SnapshotError {}

fn dims(model: &Model) -> [(&'static str, u32); HEADER_WORDS] {
    [
        ("n_x", model.n_x() as u32),
        ("n_u", model.n_u() as u32),
        ("n_y", model.n_y() as u32),
        ("n_w", model.block_len(Block::W) as u32),
        ("n_vu", model.block_len(Block::Vu) as u32),
        ("n_vy", model.block_len(Block::Vy) as u32),
    ]
}

pub fn encode(model: &Model) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * HEADER_WORDS + 8 * model.flat_len());
    out.extend_from_slice(MAGIC);
    for (_, d) in dims(model) {
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in model.flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Loads parameters into `model`, whose structure must match the header.
pub fn decode_into(bytes: &[u8], model: &mut Model) -> Result<(), SnapshotError> {
    let head = 4 + 4 * HEADER_WORDS;
    if bytes.len() < head {
        return Err(SnapshotError::Truncated {
            expected: head,
            got: bytes.len(),
        });
    }
    if &bytes[..4] != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    for (i, (field, expected)) in dims(model).into_iter().enumerate() {
        let o = 4 + 4 * i;
        let got = u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        if got != expected {
            return Err(SnapshotError::Mismatch { field, expected, got });
        }
    }
    let total = head + 8 * model.flat_len();
    if bytes.len() < total {
        return Err(SnapshotError::Truncated {
            expected: total,
            got: bytes.len(),
        });
    }
    if bytes.len() > total {
        return Err(SnapshotError::TooLong {
            expected: total,
            got: bytes.len(),
        });
    }
    let theta: Vec<f64> = bytes[head..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    model.set_flat(&theta).expect("length checked against header");
    Ok(())
}
