// SPDX-License-Identifier: Apache-2.0

//! Mean SSIM between two heat maps.
//!
//! Both maps are scaled jointly by `M = max(1, max |cell|)` to `(e/M + 1)/2`
//! so a shared dynamic range of 1 applies. Local statistics use a separable
//! Gaussian window over "valid" positions only (no padding).

use super::{HeatMap, MetricsError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

fn gaussian(window: usize, sigma: f64) -> Vec<f64> {
    let c = (window as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..window)
        .map(|k| (-((k as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Valid-mode separable filter of a row-major image.
fn filter(img: &[f64], rows: usize, cols: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let oc = cols - n + 1;
    let or = rows - n + 1;
    let mut horiz = vec![0.0; rows * oc];
    for i in 0..rows {
        let row = &img[i * cols..(i + 1) * cols];
        for j in 0..oc {
            horiz[i * oc + j] = k.iter().zip(&row[j..j + n]).map(|(w, x)| w * x).sum();
        }
    }
    let mut out = vec![0.0; or * oc];
    for i in 0..or {
        for j in 0..oc {
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                acc += w * horiz[(i + t) * oc + j];
            }
            out[i * oc + j] = acc;
        }
    }
    out
}

/// Mean SSIM of two equally sized images with values in `[0, L]`.
pub fn ssim_normalized(
    x: &[f64],
    y: &[f64],
    rows: usize,
    cols: usize,
    params: &SsimParams,
) -> f64 {
    let k = gaussian(params.window, params.sigma);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = filter(x, rows, cols, &k);
    let my = filter(y, rows, cols, &k);
    let mxx = filter(&xx, rows, cols, &k);
    let myy = filter(&yy, rows, cols, &k);
    let mxy = filter(&xy, rows, cols, &k);
    let c1 = (params.k1 * params.dynamic_range).powi(2);
    let c2 = (params.k2 * params.dynamic_range).powi(2);
    let total: f64 = (0..mx.len())
        .map(|p| {
            let (ux, uy) = (mx[p], my[p]);
            let vx = mxx[p] - ux * ux;
            let vy = myy[p] - uy * uy;
            let cov = mxy[p] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    total / mx.len() as f64
}

/// SSIM between two fully observed heat maps under joint normalization.
pub fn ssim(a: &HeatMap, b: &HeatMap) -> Result<f64, MetricsError> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(MetricsError::Dimensions(a.rows(), a.cols(), b.rows(), b.cols()));
    }
    if !a.is_full() || !b.is_full() {
        return Err(MetricsError::Masked);
    }
    let params = SsimParams::default();
    if a.rows() < params.window || a.cols() < params.window {
        return Err(MetricsError::TooSmall(a.rows(), a.cols(), params.window));
    }
    let scale = a.max_abs().max(b.max_abs()).max(1) as f64;
    let norm = |m: &HeatMap| -> Vec<f64> {
        m.cells().iter().map(|&e| (e as f64 / scale + 1.0) / 2.0).collect()
    };
    Ok(ssim_normalized(&norm(a), &norm(b), a.rows(), a.cols(), &params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{heatmap, SIDE};
    use crate::netlist::ResponseTable;

    /// Direct 2-D windowed SSIM with an independently built kernel.
    fn reference_ssim(x: &[f64], y: &[f64], n: usize) -> f64 {
        let mut w = [[0.0f64; 11]; 11];
        let mut total = 0.0;
        for (u, row) in w.iter_mut().enumerate() {
            for (v, cell) in row.iter_mut().enumerate() {
                let d2 = (u as f64 - 5.0).powi(2) + (v as f64 - 5.0).powi(2);
                *cell = (-d2 / 4.5).exp();
                total += *cell;
            }
        }
        let (c1, c2) = (0.0001, 0.0009);
        let mut acc = 0.0;
        let m = n - 10;
        for i in 0..m {
            for j in 0..m {
                let (mut ux, mut uy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for u in 0..11 {
                    for v in 0..11 {
                        let wt = w[u][v] / total;
                        let a = x[(i + u) * n + j + v];
                        let b = y[(i + u) * n + j + v];
                        ux += wt * a;
                        uy += wt * b;
                        sxx += wt * a * a;
                        syy += wt * b * b;
                        sxy += wt * a * b;
                    }
                }
                let vx = sxx - ux * ux;
                let vy = syy - uy * uy;
                let cov = sxy - ux * uy;
                acc += (2.0 * ux * uy + c1) * (2.0 * cov + c2) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            }
        }
        acc / (m * m) as f64
    }

    fn odd_map() -> HeatMap {
        heatmap(&ResponseTable::from_fn(|a, b| {
            (a as u16 * b as u16) ^ ((a as u16 & 0x7) << 3) ^ (b as u16 & 0x3)
        }))
    }

    #[test]
    fn self_similarity_and_symmetry() {
        let h = odd_map();
        assert!((ssim(&h, &h).unwrap() - 1.0).abs() < 1e-9);
        let t = h.transpose();
        let (ab, ba) = (ssim(&h, &t).unwrap(), ssim(&t, &h).unwrap());
        assert!((ab - ba).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn matches_direct_window_reference() {
        let zero = heatmap(&ResponseTable::from_fn(|a, b| a as u16 * b as u16));
        let const0 = heatmap(&ResponseTable::from_fn(|_, _| 0));
        let got = ssim(&zero, &const0).unwrap();
        let scale = 65025.0;
        let norm = |m: &HeatMap| -> Vec<f64> { m.cells().iter().map(|&e| (e as f64 / scale + 1.0) / 2.0).collect() };
        let want = reference_ssim(&norm(&zero), &norm(&const0), SIDE);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        // smooth gradient against a flat map: low variance keeps SSIM high
        assert!((got - 0.907_005_836_5).abs() < 1e-6, "{got}");

        let h = odd_map();
        let t = h.transpose();
        let s = h.max_abs().max(t.max_abs()) as f64;
        let norm = |m: &HeatMap| -> Vec<f64> { m.cells().iter().map(|&e| (e as f64 / s + 1.0) / 2.0).collect() };
        let want = reference_ssim(&norm(&h), &norm(&t), SIDE);
        assert!((ssim(&h, &t).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_inputs() {
        let a = HeatMap::new(4, 4, vec![0; 16], None).unwrap();
        assert!(matches!(ssim(&a, &a), Err(MetricsError::TooSmall(..))));
        let b = HeatMap::new(12, 11, vec![0; 132], None).unwrap();
        let c = HeatMap::new(11, 12, vec![0; 132], None).unwrap();
        assert!(matches!(ssim(&b, &c), Err(MetricsError::Dimensions(..))));
        let h = odd_map();
        let sub = h.subsample(0.5, 1).unwrap();
        assert!(matches!(ssim(&h, &sub), Err(MetricsError::Masked)));
    }
}
