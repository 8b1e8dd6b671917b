// SPDX-License-Identifier: Apache-2.0

//! Heat-map persistence and grayscale rendering.
//!
//! Binary layout (little-endian): `OBFX`, version byte `1`, `u16` rows,
//! `u16` cols, row-major `i32` cells, then the row-major availability mask
//! packed LSB-first into `ceil(rows * cols / 8)` bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{HeatMap, MetricsError};

pub const HEATMAP_MAGIC: &[u8; 4] = b"OBFX";
const VERSION: u8 = 1;

/// Signed affine mapping of an error to a gray level: `-scale -> 0`,
/// `0 -> 128`, `+scale -> 255` (clamped).
pub fn gray_level(error: i32, scale: u32) -> u8 {
    let scale = scale.max(1) as f64;
    (128.0 + 128.0 * error as f64 / scale).round().clamp(0.0, 255.0) as u8
}

impl HeatMap {
    /// Row-major gray levels; masked cells become 128.
    pub fn to_gray(&self, scale: u32) -> Vec<u8> {
        let mask = self.mask();
        self.cells()
            .iter()
            .enumerate()
            .map(|(n, &e)| {
                if mask.is_some_and(|m| !m[n]) {
                    128
                } else {
                    gray_level(e, scale)
                }
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.rows() * self.cols();
        let mut out = Vec::with_capacity(9 + 4 * n + n.div_ceil(8));
        out.extend_from_slice(HEATMAP_MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.rows() as u16).to_le_bytes());
        out.extend_from_slice(&(self.cols() as u16).to_le_bytes());
        for c in self.cells() {
            out.extend_from_slice(&c.to_le_bytes());
        }
        let mut packed = vec![0u8; n.div_ceil(8)];
        for (k, byte) in packed.iter_mut().enumerate() {
            for bit in 0..8 {
                let idx = 8 * k + bit;
                if idx < n && self.mask().is_none_or(|m| m[idx]) {
                    *byte |= 1 << bit;
                }
            }
        }
        out.extend_from_slice(&packed);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MetricsError> {
        let bad = |msg: &str| MetricsError::Format(msg.to_string());
        if bytes.len() < 9 || &bytes[..4] != HEATMAP_MAGIC {
            return Err(bad("missing OBFX magic"));
        }
        if bytes[4] != VERSION {
            return Err(bad("unsupported version"));
        }
        let rows = u16::from_le_bytes([bytes[5], bytes[6]]) as usize;
        let cols = u16::from_le_bytes([bytes[7], bytes[8]]) as usize;
        let n = rows * cols;
        let body = &bytes[9..];
        if body.len() != 4 * n + n.div_ceil(8) {
            return Err(bad("payload length does not match header"));
        }
        let cells = body[..4 * n]
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let packed = &body[4 * n..];
        let mask = (0..n).map(|idx| packed[idx / 8] >> (idx % 8) & 1 == 1).collect();
        HeatMap::new(rows, cols, cells, Some(mask))
    }
}

pub fn write_heatmap(map: &HeatMap, path: &Path) -> Result<(), MetricsError> {
    fs::write(path, map.to_bytes())?;
    Ok(())
}

pub fn read_heatmap(path: &Path) -> Result<HeatMap, MetricsError> {
    HeatMap::from_bytes(&fs::read(path)?)
}

/// Writes a binary PGM (P5) scaled by the map's own largest magnitude.
pub fn render_heatmap(map: &HeatMap, path: &Path) -> Result<(), MetricsError> {
    let gray = map.to_gray(map.max_abs());
    let mut f = fs::File::create(path)?;
    write!(f, "P5\n{} {}\n255\n", map.cols(), map.rows())?;
    f.write_all(&gray)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::heatmap;
    use crate::netlist::ResponseTable;

    #[test]
    fn binary_round_trip() {
        let h = heatmap(&ResponseTable::from_fn(|a, b| a as u16 ^ b as u16));
        let bytes = h.to_bytes();
        assert_eq!(bytes.len(), 9 + 4 * 65536 + 8192);
        assert_eq!(HeatMap::from_bytes(&bytes).unwrap(), h);
        let sub = h.subsample(0.3, 5).unwrap();
        assert_eq!(HeatMap::from_bytes(&sub.to_bytes()).unwrap(), sub);
        assert!(HeatMap::from_bytes(&bytes[..100]).is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(HeatMap::from_bytes(&wrong).is_err());
    }

    #[test]
    fn gray_mapping() {
        assert_eq!(gray_level(0, 10), 128);
        assert_eq!(gray_level(-10, 10), 0);
        assert_eq!(gray_level(10, 10), 255);
        assert_eq!(gray_level(5, 0), 255);
    }

    fn read_pgm(path: &Path) -> Vec<u8> {
        let data = fs::read(path).unwrap();
        let header = b"P5\n256 256\n255\n";
        assert_eq!(&data[..header.len()], header);
        data[header.len()..].to_vec()
    }

    #[test]
    fn rendered_images() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("zero.pgm");
        render_heatmap(&heatmap(&ResponseTable::from_fn(|a, b| a as u16 * b as u16)), &p).unwrap();
        assert!(read_pgm(&p).iter().all(|&v| v == 128));

        let c0 = heatmap(&ResponseTable::from_fn(|_, _| 0));
        render_heatmap(&c0, &p).unwrap();
        let px = read_pgm(&p);
        assert_eq!(px[0], 128);
        assert_eq!(px[65535], 0);
        let mut by_product: Vec<(u32, u8)> = (0..65536usize)
            .map(|n| (((n >> 8) * (n & 255)) as u32, px[n]))
            .collect();
        by_product.sort();
        assert!(by_product.windows(2).all(|w| w[0].1 >= w[1].1));

        let masked = c0.subsample(0.1, 2).unwrap();
        render_heatmap(&masked, &p).unwrap();
        let mid = read_pgm(&p).iter().filter(|&&v| v == 128).count();
        // masked cells plus the observed cells that happen to be zero-error
        assert!(mid >= 65536 - 6553);
        assert!(mid <= 65536 - 6553 + 600);
    }
}
