// SPDX-License-Identifier: Apache-2.0

//! Theft detection from heat-map pairs.
//!
//! Three detectors share one interface: a ratio-window threshold on a
//! single metric (CL1), and a CART tree or random forest over the six
//! metric features of a pair (CL2).

mod model;
mod tree;

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{CircuitLibrary, DatasetError, IndexRow, PairMaps, SamplePair};
use crate::metrics::{error_metrics, ErrorMetrics, Metric, MetricsError};
use crate::par;

pub use model::{load_model, save_model, ModelParseError};
pub use tree::{DecisionTree, ForestParams, RandomForest, TreeNode, TreeParams};

pub const FEATURES: usize = 6;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("no samples")]
    Empty,
    #[error("training set holds a single class")]
    SingleClass,
    #[error("{0} feature rows but {1} labels")]
    Length(usize, usize),
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error("prediction for index {0} has no matching index row")]
    UnknownIndex(usize),
    #[error("{path}:{line}: {msg}")]
    Predictions { path: String, line: usize, msg: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelParseError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `(mae_a, wce_a, ep_a, mae_g, wce_g, ep_g)` for seed `a` and suspect `g`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURES]);

impl FeatureVector {
    pub const NAMES: [&'static str; FEATURES] = ["mae_seed", "wce_seed", "ep_seed", "mae_suspect", "wce_suspect", "ep_suspect"];

    pub fn from_metrics(seed: &ErrorMetrics, suspect: &ErrorMetrics) -> Self {
        Self([seed.mae, seed.wce as f64, seed.ep, suspect.mae, suspect.wce as f64, suspect.ep])
    }

    fn slot(metric: Metric) -> usize {
        match metric {
            Metric::Mae => 0,
            Metric::Wce => 1,
            Metric::Ep => 2,
        }
    }

    pub fn seed_value(&self, metric: Metric) -> f64 {
        self.0[Self::slot(metric)]
    }

    pub fn suspect_value(&self, metric: Metric) -> f64 {
        self.0[Self::slot(metric) + 3]
    }
}

/// Features over the observed cells of both maps.
pub fn extract_features(maps: &PairMaps) -> Result<FeatureVector, DetectError> {
    Ok(FeatureVector::from_metrics(&error_metrics(&maps.seed)?, &error_metrics(&maps.suspect)?))
}

/// Full-map features straight from the library. Metrics are invariant
/// under transposition, so the swap code is irrelevant here.
pub fn pair_features(lib: &CircuitLibrary, pair: &SamplePair) -> Result<FeatureVector, DetectError> {
    Ok(FeatureVector::from_metrics(
        &lib.entry(&pair.seed_id)?.metrics,
        &lib.entry(&pair.suspect_id)?.metrics,
    ))
}

/// Features and labels for a list of pairs.
pub fn labeled_features(lib: &CircuitLibrary, pairs: &[&SamplePair]) -> Result<(Vec<FeatureVector>, Vec<bool>), DetectError> {
    let x = pairs.iter().map(|p| pair_features(lib, p)).collect::<Result<Vec<_>, _>>()?;
    Ok((x, pairs.iter().map(|p| p.label).collect()))
}

fn ratio_in_window(seed: f64, suspect: f64, t: f64) -> bool {
    if seed == 0.0 {
        return suspect == 0.0;
    }
    let r = suspect / seed;
    r >= 1.0 / (1.0 + t) && r <= 1.0 + t
}

/// Class-Y iff `metric(suspect) / metric(seed)` lies in `[1/(1+t), 1+t]`.
/// A zero seed value matches only a zero suspect value.
pub fn cl1_classify(seed: &ErrorMetrics, suspect: &ErrorMetrics, metric: Metric, t: f64) -> bool {
    ratio_in_window(seed.get(metric), suspect.get(metric), t)
}

/// Window candidates `10^(-4 + k/10)` for `k = 0..=50`, i.e. 1e-4 to 10.
pub fn cl1_grid() -> Vec<f64> {
    (0..=50).map(|k| 10f64.powf(-4.0 + k as f64 / 10.0)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cl1Model {
    pub metric: Metric,
    pub t: f64,
}

impl Cl1Model {
    pub fn predict(&self, x: &FeatureVector) -> bool {
        ratio_in_window(x.seed_value(self.metric), x.suspect_value(self.metric), self.t)
    }
}

/// Accuracy-maximizing window on the grid; the smallest wins ties. A
/// single-class set returns the grid midpoint with a warning.
pub fn cl1_calibrate(x: &[FeatureVector], y: &[bool], metric: Metric) -> Result<Cl1Model, DetectError> {
    if x.len() != y.len() {
        return Err(DetectError::Length(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(DetectError::Empty);
    }
    let grid = cl1_grid();
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        let t = grid[grid.len() / 2];
        log::warn!("single-class CL1 calibration set; using window {t}");
        return Ok(Cl1Model { metric, t });
    }
    let mut best = (0usize, grid[0]);
    for &t in &grid {
        let m = Cl1Model { metric, t };
        let correct = x.iter().zip(y).filter(|(v, &l)| m.predict(v) == l).count();
        if correct > best.0 {
            best = (correct, t);
        }
    }
    Ok(Cl1Model { metric, t: best.1 })
}

/// A trained detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Classifier {
    Cl1(Cl1Model),
    Tree(DecisionTree),
    Forest(RandomForest),
}

impl Classifier {
    pub fn predict(&self, x: &FeatureVector) -> bool {
        match self {
            Classifier::Cl1(m) => m.predict(x),
            Classifier::Tree(t) => t.predict(x),
            Classifier::Forest(f) => f.predict(x),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Classifier::Cl1(_) => "cl1",
            Classifier::Tree(_) => "tree",
            Classifier::Forest(_) => "forest",
        }
    }
}

/// Confusion counts and the rates derived from them. A rate whose
/// denominator is zero is reported as 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub split: String,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

fn rate(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        Self {
            dataset: String::new(),
            split: String::new(),
            tp,
            fp,
            tn,
            fn_,
            accuracy: rate(tp + tn, tp + tn + fp + fn_),
            sensitivity: rate(tp, tp + fn_),
            specificity: rate(tn, tn + fp),
        }
    }

    pub fn from_predictions(predicted: &[bool], actual: &[bool]) -> Result<Self, DetectError> {
        if predicted.len() != actual.len() {
            return Err(DetectError::Length(predicted.len(), actual.len()));
        }
        if predicted.is_empty() {
            return Err(DetectError::Empty);
        }
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
        Ok(Self::from_counts(tp, fp, tn, fn_))
    }

    pub fn labeled(mut self, dataset: &str, split: &str) -> Self {
        self.dataset = dataset.to_string();
        self.split = split.to_string();
        self
    }

    pub const CSV_HEADER: &'static str = "dataset,split,tp,fp,tn,fn,accuracy,sensitivity,specificity";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.6},{:.6},{:.6}",
            self.dataset, self.split, self.tp, self.fp, self.tn, self.fn_, self.accuracy, self.sensitivity, self.specificity
        )
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<10} {:<10} acc {:>6.2}%  sens {:>6.2}%  spec {:>6.2}%  (TP {} FP {} TN {} FN {})",
            self.dataset,
            self.split,
            100.0 * self.accuracy,
            100.0 * self.sensitivity,
            100.0 * self.specificity,
            self.tp,
            self.fp,
            self.tn,
            self.fn_
        )
    }
}

pub fn evaluate(model: &Classifier, x: &[FeatureVector], y: &[bool]) -> Result<EvalReport, DetectError> {
    let predicted = par::map(x, |v| model.predict(v));
    EvalReport::from_predictions(&predicted, y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fraction: f64,
    pub report: EvalReport,
}

/// Subsample stream for side `side` (0 seed, 1 suspect) of sample `k`.
fn subsample_seed(rng_seed: u64, k: usize, side: u64) -> u64 {
    rng_seed ^ (2 * k as u64 + side).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Re-evaluates an unchanged model when each map of every pair keeps only
/// `fraction` of its cells.
pub fn subsampled_sweep(
    model: &Classifier,
    lib: &CircuitLibrary,
    pairs: &[&SamplePair],
    fractions: &[f64],
    rng_seed: u64,
) -> Result<Vec<SweepPoint>, DetectError> {
    let labels: Vec<bool> = pairs.iter().map(|p| p.label).collect();
    let jobs: Vec<(usize, &SamplePair)> = pairs.iter().copied().enumerate().collect();
    fractions
        .iter()
        .map(|&fraction| {
            let feats = par::map(&jobs, |&(k, p)| -> Result<FeatureVector, DetectError> {
                let maps = p.maps(lib)?;
                let sub = PairMaps {
                    seed: maps.seed.subsample(fraction, subsample_seed(rng_seed, k, 0))?,
                    suspect: maps.suspect.subsample(fraction, subsample_seed(rng_seed, k, 1))?,
                };
                extract_features(&sub)
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
            Ok(SweepPoint {
                fraction,
                report: evaluate(model, &feats, &labels)?,
            })
        })
        .collect()
}

/// One `idx,score,label` line from an external model.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub idx: usize,
    pub score: f64,
    pub label: bool,
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, DetectError> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (n == 0 && line.starts_with("idx")) {
            continue;
        }
        let bad = |msg: &str| DetectError::Predictions {
            path: path.display().to_string(),
            line: n + 1,
            msg: msg.to_string(),
        };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(bad("expected idx,score,label"));
        }
        let score: f64 = f[1].parse().map_err(|_| bad("score is not a number"))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(bad("score outside [0, 1]"));
        }
        out.push(Prediction {
            idx: f[0].parse().map_err(|_| bad("idx is not an integer"))?,
            score,
            label: match f[2] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("label must be 0 or 1")),
            },
        });
    }
    Ok(out)
}

/// Scores external predictions against the ground truth in an index file.
pub fn report_from_predictions(predictions: &[Prediction], index: &[IndexRow]) -> Result<EvalReport, DetectError> {
    let mut predicted = Vec::with_capacity(predictions.len());
    let mut actual = Vec::with_capacity(predictions.len());
    for p in predictions {
        let row = index.iter().find(|r| r.idx == p.idx).ok_or(DetectError::UnknownIndex(p.idx))?;
        predicted.push(p.label);
        actual.push(row.label);
    }
    EvalReport::from_predictions(&predicted, &actual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_baseline, SwapCode};
    use crate::metrics::{HeatMap, SIDE};

    fn m(wce: u32, mae: f64, ep: f64) -> ErrorMetrics {
        ErrorMetrics { wce, mae, ep }
    }

    #[test]
    fn cl1_window() {
        let a = m(100, 10.0, 0.5);
        assert!(cl1_classify(&a, &a, Metric::Mae, 0.0));
        assert!(!cl1_classify(&a, &m(100, 20.0, 0.5), Metric::Mae, 0.05));
        assert!(cl1_classify(&a, &m(100, 10.4, 0.5), Metric::Mae, 0.05));
        assert!(cl1_classify(&a, &m(100, 9.6, 0.5), Metric::Mae, 0.05));
        assert!(!cl1_classify(&a, &m(100, 9.5, 0.5), Metric::Mae, 0.05));
        assert!(!cl1_classify(&a, &m(101, 10.0, 0.5), Metric::Wce, 0.0));
        let z = ErrorMetrics::ZERO;
        assert!(cl1_classify(&z, &z, Metric::Ep, 1.0));
        assert!(!cl1_classify(&z, &m(1, 0.1, 0.1), Metric::Ep, 10.0));
    }

    #[test]
    fn cl1_calibration() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for k in 0..30 {
            let base = 5.0 + k as f64;
            let pos = k % 3 == 0;
            let s = if pos { base } else { base * (2.5 + k as f64 / 30.0) };
            x.push(FeatureVector([base, 0.0, 0.0, s, 0.0, 0.0]));
            y.push(pos);
        }
        let model = cl1_calibrate(&x, &y, Metric::Mae).unwrap();
        assert_eq!(model.t, cl1_grid()[0]);
        let single = cl1_calibrate(&x, &vec![true; 30], Metric::Mae).unwrap();
        assert_eq!(single.t, cl1_grid()[25]);
        assert!(matches!(cl1_calibrate(&[], &[], Metric::Mae), Err(DetectError::Empty)));
    }

    #[test]
    fn report_identities() {
        let r = EvalReport::from_predictions(&[true, true, false, false], &[true, true, false, false]).unwrap();
        assert_eq!((r.accuracy, r.sensitivity, r.specificity), (1.0, 1.0, 1.0));
        let actual: Vec<bool> = (0..60).map(|k| k % 6 == 0).collect();
        let r = EvalReport::from_predictions(&[false; 60], &actual).unwrap();
        assert!((r.accuracy - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!((r.sensitivity, r.specificity), (0.0, 1.0));
        assert!(EvalReport::from_predictions(&[], &[]).is_err());
        assert_eq!(r.csv_row().split(',').count(), EvalReport::CSV_HEADER.split(',').count());
    }

    #[test]
    fn features_ignore_transposition() {
        let cells: Vec<i32> = (0..SIDE * SIDE).map(|n| ((n * 7919) % 601) as i32 - 300).collect();
        let h = HeatMap::new(SIDE, SIDE, cells, None).unwrap();
        let zero = HeatMap::new(SIDE, SIDE, vec![0; SIDE * SIDE], None).unwrap();
        let f = |a: &HeatMap, b: &HeatMap| extract_features(&PairMaps { seed: a.clone(), suspect: b.clone() }).unwrap();
        assert_eq!(f(&h, &zero), f(&h.transpose(), &zero));
        assert_eq!(f(&zero, &h), f(&zero, &h.transpose()));
        assert_eq!(f(&zero, &zero), FeatureVector([0.0; 6]));
        let sub = h.subsample(0.1, 3).unwrap();
        assert_eq!(sub.available_count(), 6553);
    }

    #[test]
    fn sweep_at_full_fraction_matches_evaluate() {
        let lib = crate::dataset::tests::toy_library(8, 2);
        let m = build_baseline(&lib, 5, 0).unwrap();
        let pairs: Vec<&SamplePair> = m.samples.iter().collect();
        let (x, y) = labeled_features(&lib, &pairs).unwrap();
        let tree = Classifier::Tree(DecisionTree::train(&x, &y, TreeParams::default()).unwrap());
        let full = evaluate(&tree, &x, &y).unwrap();
        let sweep = subsampled_sweep(&tree, &lib, &pairs, &[1.0, 0.5], 1).unwrap();
        assert_eq!(sweep[0].report, full);
        assert_eq!(sweep[1].report.tp + sweep[1].report.fp + sweep[1].report.tn + sweep[1].report.fn_, pairs.len());
    }

    #[test]
    fn external_predictions() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.csv");
        fs::write(&p, "idx,score,label\n0,0.9,1\n1,0.2,0\n2,0.7,1\n").unwrap();
        let preds = read_predictions(&p).unwrap();
        let index: Vec<IndexRow> = [true, false, false]
            .iter()
            .enumerate()
            .map(|(idx, &label)| IndexRow {
                idx,
                label,
                seed_id: "s".into(),
                suspect_id: "o".into(),
                swap: SwapCode(0),
            })
            .collect();
        let r = report_from_predictions(&preds, &index).unwrap();
        assert_eq!((r.tp, r.fp, r.tn, r.fn_), (1, 1, 1, 0));
        fs::write(&p, "0,1.5,1\n").unwrap();
        assert!(read_predictions(&p).is_err());
    }
}
