// SPDX-License-Identifier: Apache-2.0

//! Campaign artifacts to datasets, detectors and reports.
//!
//! Every stage reads its inputs from and writes its outputs to a work
//! directory, so stages can run separately:
//!
//! ```text
//! dataset/baseline.json  dataset/swapped.json  dataset/summary.csv
//! models/<dataset>_<model>.txt  models/calibration.csv
//! reports/detection.csv  reports/detection.txt
//! reports/sweep.csv   reports/sweep.txt
//! tensors/<dataset>/<split>.obft  tensors/<dataset>/<split>.index.csv
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::campaign::{load_seeds, load_summaries, CampaignError};
use crate::dataset::{
    build_baseline, build_swapped, export_tensors, split, CircuitLibrary, CircuitSource, DatasetError,
    DatasetManifest, ExportSummary, Role, Split, DEFAULT_FRACTIONS,
};
use crate::detect::{
    cl1_calibrate, evaluate, labeled_features, load_model, read_predictions, report_from_predictions, save_model,
    subsampled_sweep, Classifier, DecisionTree, DetectError, EvalReport, ForestParams, RandomForest, SweepPoint,
    TreeParams,
};
use crate::metrics::Metric;
use crate::netlist::parse_netlist;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Campaign(#[from] CampaignError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error("{path}: {msg}")]
    Artifact { path: String, msg: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

/// Dataset names in report order.
pub const DATASETS: [&str; 2] = ["baseline", "swapped"];

/// Detector names in report order.
pub const MODELS: [&str; 5] = ["cl1_mae", "cl1_wce", "cl1_ep", "tree", "forest"];

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub negatives_per: usize,
    pub fractions: [f64; 3],
    pub sweep_fractions: Vec<f64>,
    pub tree: TreeParams,
    pub forest: ForestParams,
    pub rng_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            negatives_per: 5,
            fractions: DEFAULT_FRACTIONS,
            sweep_fractions: vec![1.0, 0.9, 0.7, 0.5, 0.3, 0.2, 0.1],
            tree: TreeParams::default(),
            forest: ForestParams::default(),
            rng_seed: 0,
        }
    }
}

/// Library id of an obfuscated circuit stored in `runs/<dir>`.
pub fn obfuscated_id(run_dir: &str) -> String {
    run_dir.replace(['/', '\\'], ":")
}

/// Seeds and final circuits of every completed run of one or more
/// campaign directories.
pub fn load_library(campaigns: &[PathBuf]) -> Result<CircuitLibrary, PipelineError> {
    let mut sources = Vec::new();
    for dir in campaigns {
        let seeds = load_seeds(dir)?;
        for s in seeds {
            sources.push(CircuitSource {
                id: s.id,
                family: s.family,
                role: Role::Seed,
                genome: s.genome,
            });
        }
        for r in load_summaries(dir)? {
            let path = dir.join("runs").join(&r.dir).join("beta.gl");
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let genome = parse_netlist(&text).map_err(|e| PipelineError::Artifact {
                path: path.display().to_string(),
                msg: e.to_string(),
            })?;
            sources.push(CircuitSource {
                id: obfuscated_id(&r.dir),
                family: r.family,
                role: Role::Obfuscated { seed: r.seed_id },
                genome,
            });
        }
    }
    // a seed listed by several campaigns is kept once
    let mut seen = std::collections::HashSet::new();
    sources.retain(|s| s.role != Role::Seed || seen.insert(s.id.clone()));
    Ok(CircuitLibrary::build(sources)?)
}

/// Split baseline manifest and its swapped expansion.
pub fn build_datasets(lib: &CircuitLibrary, cfg: &PipelineConfig) -> Result<[DatasetManifest; 2], PipelineError> {
    let base = build_baseline(lib, cfg.negatives_per, cfg.rng_seed)?;
    let base = split(&base, cfg.fractions, cfg.rng_seed)?;
    let swapped = build_swapped(&base);
    Ok([base, swapped])
}

pub fn manifest_path(work: &Path, dataset: &str) -> PathBuf {
    work.join("dataset").join(format!("{dataset}.json"))
}

pub fn write_datasets(work: &Path, sets: &[DatasetManifest; 2]) -> Result<(), PipelineError> {
    let mut summary = String::from("dataset,split,samples,positives,negatives\n");
    for (name, m) in DATASETS.iter().zip(sets) {
        let json = serde_json::to_string(m).expect("manifest serializes");
        write_file(&manifest_path(work, name), json)?;
        for s in Split::ALL {
            let part = m.subset(s);
            let pos = part.iter().filter(|p| p.label).count();
            writeln!(summary, "{name},{s},{},{pos},{}", part.len(), part.len() - pos).unwrap();
        }
    }
    write_file(&work.join("dataset").join("summary.csv"), summary)
}

pub fn read_manifest(work: &Path, dataset: &str) -> Result<DatasetManifest, PipelineError> {
    let path = manifest_path(work, dataset);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Artifact {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

pub fn model_path(work: &Path, dataset: &str, model: &str) -> PathBuf {
    work.join("models").join(format!("{dataset}_{model}.txt"))
}

/// Trains every detector of [`MODELS`] on the train split.
pub fn train_models(
    lib: &CircuitLibrary,
    manifest: &DatasetManifest,
    cfg: &PipelineConfig,
) -> Result<Vec<(&'static str, Classifier)>, PipelineError> {
    let (x, y) = labeled_features(lib, &manifest.subset(Split::Train))?;
    let mut out = Vec::with_capacity(MODELS.len());
    for (name, metric) in [("cl1_mae", Metric::Mae), ("cl1_wce", Metric::Wce), ("cl1_ep", Metric::Ep)] {
        out.push((name, Classifier::Cl1(cl1_calibrate(&x, &y, metric)?)));
    }
    out.push(("tree", Classifier::Tree(DecisionTree::train(&x, &y, cfg.tree)?)));
    out.push(("forest", Classifier::Forest(RandomForest::train(&x, &y, cfg.forest)?)));
    Ok(out)
}

/// Trains on both datasets and saves the models plus the CL1 windows.
pub fn train_stage(work: &Path, lib: &CircuitLibrary, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let mut calib = String::from("dataset,model,metric,t\n");
    for name in DATASETS {
        let manifest = read_manifest(work, name)?;
        for (model, c) in train_models(lib, &manifest, cfg)? {
            if let Classifier::Cl1(m) = &c {
                writeln!(calib, "{name},{model},{},{}", m.metric, m.t).unwrap();
                log::info!("{name}: calibrated {model} window t = {}", m.t);
            }
            let path = model_path(work, name, model);
            write_file(&path, "")?;
            save_model(&c, &path)?;
        }
    }
    write_file(&work.join("models").join("calibration.csv"), calib)
}

/// One detector evaluated on one split of one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub model: String,
    pub trained_on: String,
    pub report: EvalReport,
}

impl TableRow {
    pub const CSV_HEADER: &'static str = "model,trained_on,dataset,split,tp,fp,tn,fn,accuracy,sensitivity,specificity";

    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.model, self.trained_on, self.report.csv_row())
    }
}

/// Test-split reports of every saved model on its own dataset, plus the
/// baseline-trained models on the swapped test split.
pub fn eval_stage(work: &Path, lib: &CircuitLibrary) -> Result<Vec<TableRow>, PipelineError> {
    let sets = [read_manifest(work, DATASETS[0])?, read_manifest(work, DATASETS[1])?];
    let mut rows = Vec::new();
    let plan = [(0usize, 0usize), (1, 1), (0, 1)];
    for (trained, tested) in plan {
        let pairs = sets[tested].subset(Split::Test);
        let (x, y) = labeled_features(lib, &pairs)?;
        for model in MODELS {
            let c = load_model(&model_path(work, DATASETS[trained], model))?;
            rows.push(TableRow {
                model: model.to_string(),
                trained_on: DATASETS[trained].to_string(),
                report: evaluate(&c, &x, &y)?.labeled(DATASETS[tested], "test"),
            });
        }
    }
    let mut csv = format!("{}\n", TableRow::CSV_HEADER);
    let mut txt = String::from("Detection on held-out test splits\n\n");
    writeln!(txt, "{:<8} {:<10} {:<10} {:>9} {:>12} {:>12}", "model", "trained", "tested", "accuracy", "sensitivity", "specificity").unwrap();
    for r in &rows {
        csv.push_str(&r.csv_row());
        csv.push('\n');
        writeln!(
            txt,
            "{:<8} {:<10} {:<10} {:>8.2}% {:>11.2}% {:>11.2}%",
            r.model,
            r.trained_on,
            r.report.dataset,
            100.0 * r.report.accuracy,
            100.0 * r.report.sensitivity,
            100.0 * r.report.specificity
        )
        .unwrap();
    }
    write_file(&work.join("reports").join("detection.csv"), csv)?;
    write_file(&work.join("reports").join("detection.txt"), txt)?;
    Ok(rows)
}

/// Baseline-trained tree and forest on subsampled baseline test pairs.
pub fn sweep_stage(work: &Path, lib: &CircuitLibrary, cfg: &PipelineConfig) -> Result<Vec<(String, SweepPoint)>, PipelineError> {
    let manifest = read_manifest(work, DATASETS[0])?;
    let pairs = manifest.subset(Split::Test);
    let mut out = Vec::new();
    for model in ["tree", "forest"] {
        let c = load_model(&model_path(work, DATASETS[0], model))?;
        for mut p in subsampled_sweep(&c, lib, &pairs, &cfg.sweep_fractions, cfg.rng_seed)? {
            p.report = p.report.labeled(DATASETS[0], "test");
            out.push((model.to_string(), p));
        }
    }
    let mut csv = String::from("model,fraction,tp,fp,tn,fn,accuracy,sensitivity,specificity\n");
    let mut txt = String::from("Accuracy under partial response availability (no retraining)\n\n");
    writeln!(txt, "{:<8} {:>9} {:>9}", "model", "fraction", "accuracy").unwrap();
    for (m, p) in &out {
        let r = &p.report;
        writeln!(
            csv,
            "{m},{},{},{},{},{},{:.6},{:.6},{:.6}",
            p.fraction, r.tp, r.fp, r.tn, r.fn_, r.accuracy, r.sensitivity, r.specificity
        )
        .unwrap();
        writeln!(txt, "{m:<8} {:>9} {:>8.2}%", p.fraction, 100.0 * r.accuracy).unwrap();
    }
    write_file(&work.join("reports").join("sweep.csv"), csv)?;
    write_file(&work.join("reports").join("sweep.txt"), txt)?;
    Ok(out)
}

/// Tensor files for both datasets under `tensors/<dataset>/`.
pub fn export_stage(work: &Path, lib: &CircuitLibrary) -> Result<Vec<ExportSummary>, PipelineError> {
    DATASETS
        .iter()
        .map(|name| {
            let manifest = read_manifest(work, name)?;
            let dir = work.join("tensors").join(name);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
            Ok(export_tensors(&manifest, lib, &dir)?)
        })
        .collect()
}

/// Scores an external `idx,score,label` predictions file against a tensor
/// index file.
pub fn external_report(predictions: &Path, index: &Path, dataset: &str, split: &str) -> Result<EvalReport, PipelineError> {
    let preds = read_predictions(predictions)?;
    let rows = crate::dataset::read_index(index)?;
    Ok(report_from_predictions(&preds, &rows)?.labeled(dataset, split))
}

/// Every stage in order.
pub fn run_pipeline(campaigns: &[PathBuf], work: &Path, cfg: &PipelineConfig) -> Result<Vec<TableRow>, PipelineError> {
    let lib = load_library(campaigns)?;
    write_datasets(work, &build_datasets(&lib, cfg)?)?;
    train_stage(work, &lib, cfg)?;
    let rows = eval_stage(work, &lib)?;
    sweep_stage(work, &lib, cfg)?;
    export_stage(work, &lib)?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::toy_library;

    #[test]
    fn stages_write_reports() {
        let lib = toy_library(20, 3);
        let tmp = tempfile::tempdir().unwrap();
        let work = tmp.path();
        let cfg = PipelineConfig {
            forest: ForestParams { n_trees: 5, ..Default::default() },
            sweep_fractions: vec![1.0, 0.5],
            ..Default::default()
        };
        let sets = build_datasets(&lib, &cfg).unwrap();
        assert_eq!(sets[0].len(), 60 * 6);
        assert_eq!(sets[1].len(), 4 * sets[0].len());
        write_datasets(work, &sets).unwrap();
        assert_eq!(read_manifest(work, "swapped").unwrap(), sets[1]);
        train_stage(work, &lib, &cfg).unwrap();
        let rows = eval_stage(work, &lib).unwrap();
        assert_eq!(rows.len(), 3 * MODELS.len());
        for r in &rows {
            let e = &r.report;
            let n = (e.tp + e.fp + e.tn + e.fn_) as f64;
            assert_eq!(e.accuracy, (e.tp + e.tn) as f64 / n);
        }
        let sweep = sweep_stage(work, &lib, &cfg).unwrap();
        assert_eq!(sweep.len(), 4);
        let tree_full = rows.iter().find(|r| r.model == "tree" && r.trained_on == "baseline" && r.report.dataset == "baseline").unwrap();
        assert_eq!(sweep[0].1.report, tree_full.report);
        let exported = export_stage(work, &lib).unwrap();
        assert_eq!(exported.len(), 2);
        for f in ["reports/detection.csv", "reports/detection.txt", "reports/sweep.csv", "models/calibration.csv", "dataset/summary.csv"] {
            assert!(work.join(f).is_file(), "missing {f}");
        }
    }
}
