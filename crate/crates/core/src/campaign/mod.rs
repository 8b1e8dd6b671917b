// SPDX-License-Identifier: Apache-2.0

//! Batches of independent obfuscation runs and their on-disk artifacts.
//!
//! Layout under the output directory:
//!
//! ```text
//! seeds.csv                      id,family,wce,mae,ep,active_gates
//! seeds/<id>.gl                  seed netlists
//! runs/<seed>/<run>/trajectory.jsonl
//! runs/<seed>/<run>/beta.gl      final accepted parent
//! runs/<seed>/<run>/summary.json
//! runs/<seed>/<run>/ssim.csv     SSIM to the seed against edit distance
//! runs/<seed>/<run>/hamming.csv  per-output-bit disagreement, final vs seed
//! runs/<seed>/<run>/nodes.csv    rewired nodes per accepted step
//! runs/<seed>/<run>/done         completion marker
//! runs.csv                       one row per run
//! uniqueness.csv                 per family
//! ```

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{metric_set_label, parse_metric_set, CampaignConfig, ConfigError, SeedSpec};

use crate::metrics::{hamming_profile, heatmap, ssim, ErrorMetrics, Metric, MetricsError};
use crate::netlist::{parse_netlist, serialize_netlist, simulate_exhaustive, CircuitGenome};
use crate::obfuscate::{
    changed_node_log, run_obfuscation, uniqueness, write_trajectory, ConstraintSpec, ObfuscateError,
    ObfuscationConfig, Trajectory, TrajectoryError,
};
use crate::par;

/// Most error-affecting steps sampled into `ssim.csv`, besides the final one.
pub const SSIM_SAMPLES: usize = 64;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Obfuscate(#[from] ObfuscateError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {msg}")]
    Artifact { path: String, msg: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CampaignError + '_ {
    move |source| CampaignError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CampaignError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<String, CampaignError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Per-run stream seed: the first eight bytes of SHA-256 over the global
/// seed, seed id, tau, metric set and run index.
pub fn run_rng_seed(global: u64, seed_id: &str, tau: f64, metrics: &[Metric], run: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(seed_id.as_bytes());
    h.update([0]);
    h.update(tau.to_bits().to_le_bytes());
    h.update(metric_set_label(metrics).as_bytes());
    h.update([0]);
    h.update((run as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// One planned run of a campaign.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    pub seed_index: usize,
    pub seed_id: String,
    pub family: String,
    pub tau: f64,
    pub metrics: Vec<Metric>,
    pub run: usize,
    pub rng_seed: u64,
}

impl RunSpec {
    /// Path of the run directory relative to `runs/`.
    pub fn rel_dir(&self) -> PathBuf {
        Path::new(&self.seed_id).join(format!("tau{}_{}_r{}", self.tau, metric_set_label(&self.metrics), self.run))
    }
}

/// Runs in seed, tau, metric set, run order.
pub fn plan_runs(cfg: &CampaignConfig) -> Vec<RunSpec> {
    let mut out = Vec::with_capacity(cfg.run_count());
    for (seed_index, s) in cfg.seeds.iter().enumerate() {
        let seed_id = s.id();
        for &tau in &cfg.taus {
            for metrics in &cfg.metric_sets {
                for run in 0..cfg.runs {
                    out.push(RunSpec {
                        seed_index,
                        seed_id: seed_id.clone(),
                        family: s.family(),
                        tau,
                        metrics: metrics.clone(),
                        run,
                        rng_seed: run_rng_seed(cfg.rng_seed, &seed_id, tau, metrics, run),
                    });
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed_id: String,
    pub family: String,
    pub tau: f64,
    pub metrics: String,
    pub run: usize,
    pub rng_seed: u64,
    pub generations: u64,
    pub evaluations: u64,
    /// Accepted steps, the seed step excluded.
    pub steps: usize,
    pub final_d: u32,
    pub final_metrics: ErrorMetrics,
    pub seed_metrics: ErrorMetrics,
    pub active_gates: u32,
    pub unique: bool,
    pub ssim_final: f64,
    pub hamming_mean: f64,
    /// `runs/`-relative directory.
    pub dir: String,
}

impl RunSummary {
    pub const CSV_HEADER: &'static str =
        "seed_id,family,tau,metrics,run,rng_seed,steps,final_d,wce,mae,ep,active_gates,unique,ssim_final,hamming_mean";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{:.6},{:.6}",
            self.seed_id,
            self.family,
            self.tau,
            self.metrics,
            self.run,
            self.rng_seed,
            self.steps,
            self.final_d,
            self.final_metrics.wce,
            self.final_metrics.mae,
            self.final_metrics.ep,
            self.active_gates,
            self.unique as u8,
            self.ssim_final,
            self.hamming_mean
        )
    }
}

/// Indices of the steps whose metric triple differs from the previous
/// accepted parent.
pub fn error_affecting_steps(traj: &Trajectory) -> Vec<usize> {
    let s = traj.steps();
    (1..s.len()).filter(|&k| s[k].metrics != s[k - 1].metrics).collect()
}

/// Evenly spaced picks of at most `limit` items, always keeping the last.
fn spread(items: &[usize], limit: usize) -> Vec<usize> {
    if items.len() <= limit {
        return items.to_vec();
    }
    let mut picks: Vec<usize> = (0..limit)
        .map(|k| items[(k + 1) * items.len() / limit - 1])
        .collect();
    picks.dedup();
    picks
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SsimRecord {
    pub step: usize,
    pub generation: u64,
    pub d: u32,
    pub ssim: f64,
}

/// SSIM between the seed map and the maps of up to [`SSIM_SAMPLES`]
/// error-affecting parents plus the final one.
pub fn ssim_records(traj: &Trajectory) -> Result<Vec<SsimRecord>, MetricsError> {
    let seed_map = heatmap(&simulate_exhaustive(traj.seed()));
    let mut chosen = spread(&error_affecting_steps(traj), SSIM_SAMPLES);
    let last = traj.steps().len() - 1;
    if chosen.last() != Some(&last) {
        chosen.push(last);
    }
    let mut genomes = Vec::with_capacity(chosen.len());
    let mut next = 0;
    traj.for_each_genome(|k, g| {
        if chosen.get(next) == Some(&k) {
            genomes.push((k, g.clone()));
            next += 1;
        }
    });
    par::map(&genomes, |(k, g)| {
        let step = &traj.steps()[*k];
        Ok(SsimRecord {
            step: *k,
            generation: step.generation,
            d: step.d,
            ssim: ssim(&seed_map, &heatmap(&simulate_exhaustive(g)))?,
        })
    })
    .into_iter()
    .collect()
}

fn ssim_csv(records: &[SsimRecord]) -> String {
    let mut s = String::from("step,generation,d,ssim\n");
    for r in records {
        writeln!(s, "{},{},{},{:.9}", r.step, r.generation, r.d, r.ssim).unwrap();
    }
    s
}

fn nodes_csv(traj: &Trajectory) -> String {
    let mut s = String::from("step,generation,error_affecting,nodes,outputs\n");
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
    for c in changed_node_log(traj) {
        writeln!(s, "{},{},{},{},{}", c.step, c.generation, c.error_affecting as u8, join(&c.nodes), join(&c.outputs)).unwrap();
    }
    s
}

/// Executes one run and writes its artifacts into `dir`, the `done`
/// marker last.
pub fn execute_run(
    seed: &CircuitGenome,
    spec: &RunSpec,
    search: &ObfuscationConfig,
    dir: &Path,
) -> Result<RunSummary, CampaignError> {
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let constraint = ConstraintSpec::for_seed(seed, spec.tau, &spec.metrics)?;
    let cfg = ObfuscationConfig {
        rng_seed: spec.rng_seed,
        ..*search
    };
    let traj = run_obfuscation(seed, &constraint, &cfg)?;
    write_trajectory(&traj, &dir.join("trajectory.jsonl"))?;
    write_file(&dir.join("beta.gl"), serialize_netlist(traj.final_genome()))?;

    let records = ssim_records(&traj)?;
    write_file(&dir.join("ssim.csv"), ssim_csv(&records))?;
    let profile = hamming_profile(&simulate_exhaustive(seed), &simulate_exhaustive(traj.final_genome()));
    let mut hamming = String::from("bit,rate\n");
    for (b, r) in profile.per_bit.iter().enumerate() {
        writeln!(hamming, "{b},{r:.9}").unwrap();
    }
    write_file(&dir.join("hamming.csv"), hamming)?;
    write_file(&dir.join("nodes.csv"), nodes_csv(&traj))?;

    let last = traj.final_step();
    let summary = RunSummary {
        seed_id: spec.seed_id.clone(),
        family: spec.family.clone(),
        tau: spec.tau,
        metrics: metric_set_label(&spec.metrics),
        run: spec.run,
        rng_seed: spec.rng_seed,
        generations: traj.generations,
        evaluations: traj.evaluations,
        steps: traj.steps().len() - 1,
        final_d: last.d,
        final_metrics: last.metrics,
        seed_metrics: traj.steps()[0].metrics,
        active_gates: last.active_gates,
        unique: uniqueness(&traj),
        ssim_final: records.last().map_or(1.0, |r| r.ssim),
        hamming_mean: profile.mean(),
        dir: spec.rel_dir().display().to_string(),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write_file(&dir.join("summary.json"), json + "\n")?;
    write_file(&dir.join("done"), "")?;
    Ok(summary)
}

/// Summary of a completed run directory, or `None` when it is incomplete.
pub fn completed_run(dir: &Path) -> Option<RunSummary> {
    if !dir.join("done").is_file() {
        return None;
    }
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).ok()?).ok()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct UniquenessRow {
    pub family: String,
    pub runs: usize,
    pub unique: usize,
    pub rate: f64,
}

pub fn uniqueness_by_family(summaries: &[RunSummary]) -> Vec<UniquenessRow> {
    let mut by: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for s in summaries {
        let e = by.entry(&s.family).or_default();
        e.0 += 1;
        e.1 += s.unique as usize;
    }
    by.into_iter()
        .map(|(f, (runs, unique))| UniquenessRow {
            family: f.to_string(),
            runs,
            unique,
            rate: unique as f64 / runs as f64,
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct CampaignReport {
    /// Completed runs in plan order.
    pub summaries: Vec<RunSummary>,
    pub executed: usize,
    pub skipped: usize,
    /// Run directory and error message of each failed run.
    pub failures: Vec<(String, String)>,
}

impl CampaignReport {
    pub fn uniqueness(&self) -> Vec<UniquenessRow> {
        uniqueness_by_family(&self.summaries)
    }
}

/// Seed netlists plus `seeds.csv`.
fn write_seeds(cfg: &CampaignConfig, genomes: &[CircuitGenome]) -> Result<(), CampaignError> {
    let dir = cfg.output.join("seeds");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut csv = String::from("id,family,wce,mae,ep,active_gates\n");
    for (s, g) in cfg.seeds.iter().zip(genomes) {
        let m = ErrorMetrics::from_table(&simulate_exhaustive(g));
        writeln!(csv, "{},{},{},{},{},{}", s.id(), s.family(), m.wce, m.mae, m.ep, g.active_gate_count()).unwrap();
        write_file(&dir.join(format!("{}.gl", s.id())), serialize_netlist(g))?;
    }
    write_file(&cfg.output.join("seeds.csv"), csv)
}

/// Runs every planned run not already completed, then rewrites the
/// aggregate reports. Failed runs are logged and reported, not fatal.
pub fn run_campaign(cfg: &CampaignConfig) -> Result<CampaignReport, CampaignError> {
    cfg.validate()?;
    let genomes = cfg.seeds.iter().map(SeedSpec::load).collect::<Result<Vec<_>, _>>()?;
    fs::create_dir_all(&cfg.output).map_err(io_err(&cfg.output))?;
    write_seeds(cfg, &genomes)?;

    let runs_dir = cfg.output.join("runs");
    let plan = plan_runs(cfg);
    let done: Vec<Option<RunSummary>> = plan.iter().map(|r| completed_run(&runs_dir.join(r.rel_dir()))).collect();
    let todo: Vec<&RunSpec> = plan.iter().zip(&done).filter(|(_, d)| d.is_none()).map(|(r, _)| r).collect();
    log::info!("campaign: {} runs planned, {} to execute", plan.len(), todo.len());

    let results = par::with_workers(cfg.workers, || {
        par::map(&todo, |r| {
            let dir = runs_dir.join(r.rel_dir());
            let out = execute_run(&genomes[r.seed_index], r, &cfg.search, &dir);
            match &out {
                Ok(s) => log::info!("run {} done: d = {}, unique = {}", s.dir, s.final_d, s.unique),
                Err(e) => log::error!("run {} failed: {e}", r.rel_dir().display()),
            }
            out
        })
    });

    let mut report = CampaignReport {
        skipped: plan.len() - todo.len(),
        ..Default::default()
    };
    let mut fresh = results.into_iter();
    for (r, prior) in plan.iter().zip(done) {
        match prior {
            Some(s) => report.summaries.push(s),
            None => match fresh.next().expect("one result per executed run") {
                Ok(s) => {
                    report.executed += 1;
                    report.summaries.push(s);
                }
                Err(e) => report.failures.push((r.rel_dir().display().to_string(), e.to_string())),
            },
        }
    }

    let mut runs_csv = format!("{}\n", RunSummary::CSV_HEADER);
    for s in &report.summaries {
        runs_csv.push_str(&s.csv_row());
        runs_csv.push('\n');
    }
    write_file(&cfg.output.join("runs.csv"), runs_csv)?;
    let mut uniq = String::from("family,runs,unique,rate\n");
    for u in report.uniqueness() {
        writeln!(uniq, "{},{},{},{:.6}", u.family, u.runs, u.unique, u.rate).unwrap();
    }
    write_file(&cfg.output.join("uniqueness.csv"), uniq)?;
    Ok(report)
}

/// A seed recorded in `seeds.csv`.
#[derive(Clone, Debug)]
pub struct StoredSeed {
    pub id: String,
    pub family: String,
    pub genome: CircuitGenome,
}

/// Reads the seeds of a finished campaign directory.
pub fn load_seeds(output: &Path) -> Result<Vec<StoredSeed>, CampaignError> {
    let index = output.join("seeds.csv");
    let text = read_file(&index)?;
    let mut out = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let mut f = line.split(',');
        let (Some(id), Some(family)) = (f.next(), f.next()) else {
            return Err(CampaignError::Artifact {
                path: index.display().to_string(),
                msg: format!("malformed row `{line}`"),
            });
        };
        let path = output.join("seeds").join(format!("{id}.gl"));
        let genome = parse_netlist(&read_file(&path)?).map_err(|e| CampaignError::Artifact {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        out.push(StoredSeed {
            id: id.to_string(),
            family: family.to_string(),
            genome,
        });
    }
    Ok(out)
}

/// Summaries of every completed run under `output/runs`, sorted by
/// directory.
pub fn load_summaries(output: &Path) -> Result<Vec<RunSummary>, CampaignError> {
    let runs = output.join("runs");
    let mut out = Vec::new();
    let mut seed_dirs: Vec<PathBuf> = fs::read_dir(&runs)
        .map_err(io_err(&runs))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    seed_dirs.sort();
    for sd in seed_dirs {
        let mut run_dirs: Vec<PathBuf> = fs::read_dir(&sd)
            .map_err(io_err(&sd))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        run_dirs.sort();
        out.extend(run_dirs.iter().filter_map(|d| completed_run(d)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path) -> CampaignConfig {
        let text = "output = out\nrng_seed = 3\ntaus = 0.05\nruns = 2\ngmax = 60\nseed = bam 5 3\n";
        CampaignConfig::parse(text, dir).unwrap()
    }

    #[test]
    fn rng_seeds_are_distinct_and_stable() {
        let cfg = tiny_config(Path::new("/x"));
        let plan = plan_runs(&cfg);
        assert_eq!(plan.len(), 2);
        assert_ne!(plan[0].rng_seed, plan[1].rng_seed);
        assert_eq!(plan[0].rng_seed, run_rng_seed(3, "bam_v5_h3", 0.05, &Metric::ALL, 0));
        assert_ne!(run_rng_seed(3, "bam_v5_h3", 0.05, &[Metric::Wce], 0), plan[0].rng_seed);
        assert_eq!(plan[1].rel_dir(), Path::new("bam_v5_h3/tau0.05_wce+mae+ep_r1"));
    }

    #[test]
    fn spread_keeps_last_and_bounds_count() {
        let v: Vec<usize> = (0..200).collect();
        let s = spread(&v, 64);
        assert_eq!(s.len(), 64);
        assert_eq!(*s.last().unwrap(), 199);
        assert_eq!(spread(&[1, 2], 64), vec![1, 2]);
    }

    #[test]
    fn campaign_writes_and_resumes() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny_config(tmp.path());
        let first = run_campaign(&cfg).unwrap();
        assert_eq!((first.executed, first.skipped, first.failures.len()), (2, 0, 0));
        let run0 = cfg.output.join("runs").join(plan_runs(&cfg)[0].rel_dir());
        for f in ["trajectory.jsonl", "beta.gl", "summary.json", "ssim.csv", "hamming.csv", "nodes.csv", "done"] {
            assert!(run0.join(f).is_file(), "missing {f}");
        }
        let runs_csv = fs::read_to_string(cfg.output.join("runs.csv")).unwrap();

        // an incomplete directory is redone, a complete one skipped
        fs::remove_file(run0.join("done")).unwrap();
        let second = run_campaign(&cfg).unwrap();
        assert_eq!((second.executed, second.skipped), (1, 1));
        assert_eq!(second.summaries, first.summaries);
        assert_eq!(fs::read_to_string(cfg.output.join("runs.csv")).unwrap(), runs_csv);

        assert_eq!(load_summaries(&cfg.output).unwrap(), first.summaries);
        let seeds = load_seeds(&cfg.output).unwrap();
        assert_eq!(seeds.len(), 1);
        assert_eq!(seeds[0].genome, SeedSpec::Bam { v: 5, h: 3 }.load().unwrap());
    }
}
