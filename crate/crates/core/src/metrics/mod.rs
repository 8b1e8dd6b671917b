// SPDX-License-Identifier: Apache-2.0

//! Error heat maps and the statistics derived from them.
//!
//! A heat map cell holds `out(i, j) - i * j` for operand pair `(i, j)`. Maps
//! may carry an availability mask when only part of the response table was
//! observed; every statistic here is computed over available cells only.

mod io;
mod ssim;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netlist::{ResponseTable, TABLE_LEN};

pub use io::{gray_level, read_heatmap, render_heatmap, write_heatmap, HEATMAP_MAGIC};
pub use ssim::{ssim, ssim_normalized, SsimParams};

pub const SIDE: usize = 256;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no available cells")]
    EmptyMask,
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    Dimensions(usize, usize, usize, usize),
    #[error("map is {0}x{1}, smaller than the {2}x{2} window")]
    TooSmall(usize, usize, usize),
    #[error("operation needs a fully observed map")]
    Masked,
    #[error("subsample fraction {0} outside (0, 1]")]
    Fraction(f64),
    #[error("cell or mask length does not match {0}x{1}")]
    Length(usize, usize),
    #[error("bad heat-map file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `i * j` for every table index.
fn products() -> &'static [u16] {
    static PRODUCTS: OnceLock<Vec<u16>> = OnceLock::new();
    PRODUCTS.get_or_init(|| (0..TABLE_LEN).map(|n| ((n >> 8) * (n & 0xFF)) as u16).collect())
}

/// Signed error surface with an optional availability mask.
#[derive(Clone, PartialEq, Eq)]
pub struct HeatMap {
    rows: usize,
    cols: usize,
    cells: Vec<i32>,
    mask: Option<Vec<bool>>,
}

impl fmt::Debug for HeatMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HeatMap")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("available", &self.available_count())
            .finish_non_exhaustive()
    }
}

impl HeatMap {
    pub fn new(
        rows: usize,
        cols: usize,
        cells: Vec<i32>,
        mask: Option<Vec<bool>>,
    ) -> Result<Self, MetricsError> {
        let n = rows * cols;
        if cells.len() != n || mask.as_ref().is_some_and(|m| m.len() != n) {
            return Err(MetricsError::Length(rows, cols));
        }
        // an all-true mask is stored as "full"
        let mask = mask.filter(|m| m.iter().any(|a| !a));
        Ok(Self {
            rows,
            cols,
            cells,
            mask,
        })
    }

    /// Heat map of a 16-input multiplier response table.
    pub fn from_table(table: &ResponseTable) -> Self {
        let cells = table
            .as_slice()
            .iter()
            .zip(products())
            .map(|(&out, &p)| out as i32 - p as i32)
            .collect();
        Self {
            rows: SIDE,
            cols: SIDE,
            cells,
            mask: None,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cells(&self) -> &[i32] {
        &self.cells
    }

    pub fn cell(&self, i: usize, j: usize) -> i32 {
        self.cells[i * self.cols + j]
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn is_full(&self) -> bool {
        self.mask.is_none()
    }

    pub fn available(&self, i: usize, j: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i * self.cols + j])
    }

    pub fn available_count(&self) -> usize {
        match &self.mask {
            None => self.cells.len(),
            Some(m) => m.iter().filter(|&&a| a).count(),
        }
    }

    /// Iterates the available cell values.
    pub fn observed(&self) -> impl Iterator<Item = i32> + '_ {
        let mask = self.mask.as_deref();
        self.cells
            .iter()
            .enumerate()
            .filter(move |(n, _)| mask.is_none_or(|m| m[*n]))
            .map(|(_, &c)| c)
    }

    pub fn max_abs(&self) -> u32 {
        self.observed().map(i32::unsigned_abs).max().unwrap_or(0)
    }

    /// Mirrors the map about its main diagonal, i.e. swaps the operands.
    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows, self.cols);
        let mut cells = vec![0; r * c];
        for i in 0..r {
            for j in 0..c {
                cells[j * r + i] = self.cells[i * c + j];
            }
        }
        let mask = self.mask.as_ref().map(|m| {
            let mut t = vec![false; r * c];
            for i in 0..r {
                for j in 0..c {
                    t[j * r + i] = m[i * c + j];
                }
            }
            t
        });
        Self {
            rows: c,
            cols: r,
            cells,
            mask,
        }
    }

    /// Keeps `floor(fraction * cells)` cells chosen uniformly without
    /// replacement; the rest are masked out.
    pub fn subsample(&self, fraction: f64, rng_seed: u64) -> Result<Self, MetricsError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(MetricsError::Fraction(fraction));
        }
        if !self.is_full() {
            return Err(MetricsError::Masked);
        }
        let n = self.cells.len();
        let keep = (fraction * n as f64).floor() as usize;
        if keep == n {
            return Ok(self.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let mut mask = vec![false; n];
        for idx in rand::seq::index::sample(&mut rng, n, keep) {
            mask[idx] = true;
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            cells: self.cells.clone(),
            mask: Some(mask),
        })
    }
}

pub fn heatmap(table: &ResponseTable) -> HeatMap {
    HeatMap::from_table(table)
}

pub fn transpose(map: &HeatMap) -> HeatMap {
    map.transpose()
}

pub fn apply_subsample(map: &HeatMap, fraction: f64, rng_seed: u64) -> Result<HeatMap, MetricsError> {
    map.subsample(fraction, rng_seed)
}

/// The three constrained error metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Wce,
    Mae,
    Ep,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Wce, Metric::Mae, Metric::Ep];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Wce => "wce",
            Metric::Mae => "mae",
            Metric::Ep => "ep",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wce" => Ok(Metric::Wce),
            "mae" => Ok(Metric::Mae),
            "ep" => Ok(Metric::Ep),
            other => Err(format!("unknown metric `{other}` (expected wce, mae or ep)")),
        }
    }
}

/// Worst-case error, mean absolute error and error probability.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub wce: u32,
    pub mae: f64,
    pub ep: f64,
}

impl ErrorMetrics {
    pub const ZERO: ErrorMetrics = ErrorMetrics {
        wce: 0,
        mae: 0.0,
        ep: 0.0,
    };

    fn from_sums(wce: u32, sum_abs: u64, nonzero: u64, count: u64) -> Self {
        Self {
            wce,
            mae: sum_abs as f64 / count as f64,
            ep: nonzero as f64 / count as f64,
        }
    }

    /// Metrics straight from a full response table, without building the map.
    pub fn from_table(table: &ResponseTable) -> Self {
        let mut wce = 0u32;
        let mut sum_abs = 0u64;
        let mut nonzero = 0u64;
        for (row, prow) in table.as_slice().chunks_exact(SIDE).zip(products().chunks_exact(SIDE)) {
            // per-row partial sums stay well inside u32
            let (mut rmax, mut rsum, mut rnz) = (0u32, 0u32, 0u32);
            for (&out, &p) in row.iter().zip(prow) {
                let e = (out as i32 - p as i32).unsigned_abs();
                rmax = rmax.max(e);
                rsum += e;
                rnz += (e != 0) as u32;
            }
            wce = wce.max(rmax);
            sum_abs += rsum as u64;
            nonzero += rnz as u64;
        }
        Self::from_sums(wce, sum_abs, nonzero, TABLE_LEN as u64)
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Wce => self.wce as f64,
            Metric::Mae => self.mae,
            Metric::Ep => self.ep,
        }
    }
}

/// WCE, MAE and EP over the available cells of `map`.
pub fn error_metrics(map: &HeatMap) -> Result<ErrorMetrics, MetricsError> {
    let mut wce = 0u32;
    let mut sum_abs = 0u64;
    let mut nonzero = 0u64;
    let mut count = 0u64;
    for e in map.observed() {
        let e = e.unsigned_abs();
        wce = wce.max(e);
        sum_abs += e as u64;
        nonzero += (e != 0) as u64;
        count += 1;
    }
    if count == 0 {
        return Err(MetricsError::EmptyMask);
    }
    Ok(ErrorMetrics::from_sums(wce, sum_abs, nonzero, count))
}

/// Per-output-bit disagreement rate between two circuits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HammingProfile {
    pub per_bit: [f64; 16],
}

impl HammingProfile {
    pub fn mean(&self) -> f64 {
        self.per_bit.iter().sum::<f64>() / 16.0
    }
}

pub fn hamming_profile(a: &ResponseTable, b: &ResponseTable) -> HammingProfile {
    let mut counts = [0u64; 16];
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        let mut diff = x ^ y;
        while diff != 0 {
            counts[diff.trailing_zeros() as usize] += 1;
            diff &= diff - 1;
        }
    }
    let mut per_bit = [0.0; 16];
    for (p, c) in per_bit.iter_mut().zip(counts) {
        *p = c as f64 / TABLE_LEN as f64;
    }
    HammingProfile { per_bit }
}

/// 128-bit content hash of a response table. Equal tables give equal
/// digests; callers compare full tables when digests collide.
pub fn table_digest(table: &ResponseTable) -> u128 {
    let mut h1 = 0x243F_6A88_85A3_08D3u64;
    let mut h2 = 0x1319_8A2E_0370_7344u64;
    for chunk in table.as_slice().chunks_exact(4) {
        let w = chunk[0] as u64 | (chunk[1] as u64) << 16 | (chunk[2] as u64) << 32 | (chunk[3] as u64) << 48;
        h1 = (h1 ^ w).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(29);
        h2 = (h2.rotate_left(17) ^ w).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    }
    let fin = |mut x: u64| {
        x ^= x >> 33;
        x = x.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
        x ^= x >> 33;
        x = x.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
        x ^ (x >> 33)
    };
    (fin(h1) as u128) << 64 | fin(h2 ^ h1) as u128
}
