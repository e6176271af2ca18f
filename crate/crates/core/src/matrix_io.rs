//! Binary matrix files for features and reliability masks.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content                                      |
//! |-------|----------------------------------------------|
//! | 8     | magic: `LSSEF64\0` (features) or `RMASKU8\0` (masks) |
//! | 4     | format version, `u32` (currently 1)          |
//! | 8     | rows `T`, `u64`                              |
//! | 8     | columns `B`, `u64`                           |
//! | ...   | row-major payload: `f64` LE for features, one byte 0/1 for masks |

use std::io::Write;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 8] = b"LSSEF64\0";
pub const MASK_MAGIC: &[u8; 8] = b"RMASKU8\0";
pub const MATRIX_VERSION: u32 = 1;
const HEADER_LEN: usize = 28;

fn header(magic: &[u8; 8], rows: usize, cols: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(magic);
    out.extend_from_slice(&MATRIX_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    out
}

fn parse_header(bytes: &[u8], magic: &[u8; 8], what: &str) -> Result<(usize, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Parse(format!("{what} file truncated: {} bytes", bytes.len())));
    }
    if &bytes[..8] != magic {
        return Err(Error::Parse(format!(
            "not a {what} file: expected magic {:?}",
            String::from_utf8_lossy(&magic[..7])
        )));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != MATRIX_VERSION {
        return Err(Error::Parse(format!(
            "{what} file version {version} is not supported (expected {MATRIX_VERSION})"
        )));
    }
    let rows = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[20..28].try_into().unwrap()) as usize;
    Ok((rows, cols))
}

pub fn encode_features(m: &Array2<f64>) -> Vec<u8> {
    let mut out = header(FEATURE_MAGIC, m.nrows(), m.ncols());
    out.reserve(m.len() * 8);
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<Array2<f64>> {
    let (rows, cols) = parse_header(bytes, FEATURE_MAGIC, "feature")?;
    let payload = &bytes[HEADER_LEN..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Parse("feature dimensions overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::Parse(format!(
            "feature payload is {} bytes, header implies {expected}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked"))
}

pub fn encode_mask(m: &Array2<bool>) -> Vec<u8> {
    let mut out = header(MASK_MAGIC, m.nrows(), m.ncols());
    out.extend(m.iter().map(|&b| b as u8));
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<Array2<bool>> {
    let (rows, cols) = parse_header(bytes, MASK_MAGIC, "mask")?;
    let payload = &bytes[HEADER_LEN..];
    if Some(payload.len()) != rows.checked_mul(cols) {
        return Err(Error::Parse(format!(
            "mask payload is {} bytes, header implies {rows}×{cols}",
            payload.len()
        )));
    }
    let data = payload
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Parse(format!("mask byte {other} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Array2::from_shape_vec((rows, cols), data).expect("length checked"))
}

/// CSV with one row per frame, no header.
pub fn features_to_csv(m: &Array2<f64>) -> String {
    let mut out = Vec::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
        writeln!(out, "{}", line.join(",")).expect("write to Vec");
    }
    String::from_utf8(out).expect("ascii")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn features_round_trip() {
        let m = array![[1.5, -2.25, f64::MIN_POSITIVE], [0.1, 1e300, -0.0]];
        let bytes = encode_features(&m);
        assert_eq!(&bytes[..8], FEATURE_MAGIC);
        assert_eq!(decode_features(&bytes).unwrap(), m);
    }

    #[test]
    fn mask_round_trip_and_rejections() {
        let m = array![[true, false, true], [false, false, true]];
        let bytes = encode_mask(&m);
        assert_eq!(decode_mask(&bytes).unwrap(), m);
        assert!(decode_features(&bytes).is_err());
        assert!(decode_mask(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(decode_mask(&bad).unwrap_err().to_string().contains("version"));
        let mut bad = bytes;
        bad[HEADER_LEN] = 2;
        assert!(decode_mask(&bad).is_err());
    }

    #[test]
    fn csv_has_one_line_per_frame() {
        let m = array![[1.0, 2.0], [3.0, 4.0]];
        let csv = features_to_csv(&m);
        assert_eq!(csv.lines().count(), 2);
        let parsed: f64 = csv.lines().next().unwrap().split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(parsed, 2.0);
    }
}
