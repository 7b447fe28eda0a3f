use std::path::Path;

use crate::captioner::FeatureGrid;
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"FEAT";
pub const FEATURE_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// Encodes a grid as `FEAT`, version, regions, dim, then `f32` LE values.
/// Values are narrowed to `f32`.
pub fn encode_features(grid: &FeatureGrid) -> Vec<u8> {
    let values = grid.values().data();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * values.len());
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.n_regions() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.feat_dim() as u32).to_le_bytes());
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8], origin: &Path) -> Result<FeatureGrid> {
    let bad = |detail: String| Error::Format {
        path: origin.to_path_buf(),
        detail,
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[0..4] != FEATURE_MAGIC {
        return Err(bad(format!("bad magic {:?}", &bytes[0..4])));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != FEATURE_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let (n, dim) = (word(8) as usize, word(12) as usize);
    let expected = n
        .checked_mul(dim)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(HEADER_LEN))
        .ok_or_else(|| bad(format!("header dims {n} x {dim} overflow")))?;
    if bytes.len() != expected {
        return Err(bad(format!(
            "header says {n} x {dim} ({expected} bytes), file has {}",
            bytes.len()
        )));
    }
    let values = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    FeatureGrid::new(n, dim, values).map_err(|e| bad(e.to_string()))
}

pub fn write_features(path: &Path, grid: &FeatureGrid) -> Result<()> {
    std::fs::write(path, encode_features(grid)).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<FeatureGrid> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_features(&bytes, path)
}
