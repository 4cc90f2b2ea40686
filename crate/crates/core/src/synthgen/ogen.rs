//! "OGEN" binary grids: magic, u32 version, u32 ndim, ndim × u32 dims, then
//! row-major little-endian f32 values.

use std::fs;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"OGEN";
pub const VERSION: u32 = 1;

pub fn encode(grid: &ArrayD<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * grid.ndim() + 4 * grid.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.ndim() as u32).to_le_bytes());
    for &d in grid.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in grid.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: &mut usize) -> Result<u32> {
    let chunk = bytes
        .get(*at..*at + 4)
        .ok_or_else(|| Error::Format("truncated OGEN header".into()))?;
    *at += 4;
    Ok(u32::from_le_bytes(chunk.try_into().expect("4 bytes")))
}

/// Parses one grid from the front of `bytes`; returns it with the number of
/// bytes consumed.
pub fn decode_prefix(bytes: &[u8]) -> Result<(ArrayD<f32>, usize)> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing OGEN magic".into()));
    }
    let mut at = 4;
    let version = read_u32(bytes, &mut at)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported OGEN version {version}")));
    }
    let ndim = read_u32(bytes, &mut at)? as usize;
    if ndim > 8 {
        return Err(Error::Format(format!("implausible OGEN rank {ndim}")));
    }
    let dims = (0..ndim)
        .map(|_| read_u32(bytes, &mut at).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = dims.iter().product();
    let payload = bytes
        .get(at..at + 4 * n)
        .ok_or_else(|| Error::Format("truncated OGEN payload".into()))?;
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let grid = ArrayD::from_shape_vec(IxDyn(&dims), values).expect("dims match payload");
    Ok((grid, at + 4 * n))
}

pub fn decode(bytes: &[u8]) -> Result<ArrayD<f32>> {
    let (grid, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::Format("trailing bytes after OGEN payload".into()));
    }
    Ok(grid)
}

pub fn write_grid(path: &Path, grid: &ArrayD<f32>) -> Result<()> {
    fs::write(path, encode(grid)).map_err(|e| Error::io(path, e))
}

pub fn read_grid(path: &Path) -> Result<ArrayD<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let g = ArrayD::from_shape_vec(IxDyn(&[2, 3]), vec![1.0f32, -2.0, 0.5, 0.0, 3.25, -0.0]).unwrap();
        let bytes = encode(&g);
        assert_eq!(&bytes[..4], b"OGEN");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 12 + 8 + 24);
        assert_eq!(f32::from_le_bytes(bytes[20..24].try_into().unwrap()), 1.0);
        let back = decode(&bytes).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn rejects_bad_headers() {
        let g = ArrayD::<f32>::zeros(IxDyn(&[2]));
        let mut bytes = encode(&g);
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        let mut bytes = encode(&g);
        bytes[4] = 2;
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        let bytes = encode(&g);
        assert!(matches!(decode(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert_eq!(Error::Format(String::new()).exit_code(), 4);
    }
}
