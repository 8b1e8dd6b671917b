// SPDX-License-Identifier: Apache-2.0

//! Accepted-parent history of a search run, stored as gene diffs against
//! the previous parent, plus its line-delimited JSON persistence.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::metrics::ErrorMetrics;
use crate::netlist::{simulate_exhaustive, CircuitGenome, GeneSite};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneChange {
    pub position: u32,
    pub old: u32,
    pub new: u32,
}

/// One accepted parent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub generation: u64,
    /// Edit distance to the seed.
    pub d: u32,
    pub metrics: ErrorMetrics,
    pub active_gates: u32,
    #[serde(with = "hex128")]
    pub heatmap_digest: u128,
    /// Genes that differ from the previous accepted parent.
    pub changes: Vec<GeneChange>,
    /// Distinct gene positions modified at least once so far.
    pub touched: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    seed: CircuitGenome,
    steps: Vec<Step>,
    final_genome: CircuitGenome,
    /// Exhaustive simulations actually performed.
    pub evaluations: u64,
    pub generations: u64,
}

impl Trajectory {
    pub(super) fn start(seed: CircuitGenome, first: Step) -> Self {
        Self {
            final_genome: seed.clone(),
            seed,
            steps: vec![first],
            evaluations: 0,
            generations: 0,
        }
    }

    pub(super) fn push(&mut self, step: Step) {
        self.steps.push(step);
    }

    pub(super) fn finish(&mut self, last: CircuitGenome) {
        self.final_genome = last;
    }

    pub fn seed(&self) -> &CircuitGenome {
        &self.seed
    }

    /// Step 0 is the seed itself.
    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn final_genome(&self) -> &CircuitGenome {
        &self.final_genome
    }

    pub fn final_step(&self) -> &Step {
        self.steps.last().expect("trajectory always holds the seed step")
    }

    /// Rebuilds the genome of accepted parent `k`.
    pub fn genome_at(&self, k: usize) -> CircuitGenome {
        let mut g = self.seed.clone();
        for step in &self.steps[1..=k] {
            for c in &step.changes {
                g.set_gene(c.position as usize, c.new).expect("recorded change is legal");
            }
        }
        g
    }

    /// Visits every accepted parent in order without rebuilding from the
    /// seed each time.
    pub fn for_each_genome(&self, mut f: impl FnMut(usize, &CircuitGenome)) {
        let mut g = self.seed.clone();
        for (k, step) in self.steps.iter().enumerate() {
            for c in &step.changes {
                g.set_gene(c.position as usize, c.new).expect("recorded change is legal");
            }
            f(k, &g);
        }
    }
}

/// True when the final heat map differs from the seed's and from every
/// intermediate accepted parent's. Digest matches are confirmed by full
/// re-simulation.
pub fn uniqueness(traj: &Trajectory) -> bool {
    let steps = traj.steps();
    if steps.len() < 2 {
        return false;
    }
    let last = steps.len() - 1;
    let target = steps[last].heatmap_digest;
    let matches: Vec<usize> = (0..last).filter(|&k| steps[k].heatmap_digest == target).collect();
    if matches.is_empty() {
        return true;
    }
    let final_table = simulate_exhaustive(traj.final_genome());
    !matches
        .into_iter()
        .any(|k| simulate_exhaustive(&traj.genome_at(k)) == final_table)
}

/// Nodes and outputs rewired at one accepted step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChangedNodes {
    pub step: usize,
    pub generation: u64,
    pub nodes: Vec<usize>,
    pub outputs: Vec<usize>,
    /// Whether the step changed the error metric triple.
    pub error_affecting: bool,
}

pub fn changed_node_log(traj: &Trajectory) -> Vec<ChangedNodes> {
    let seed = traj.seed();
    traj.steps()
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let mut nodes = Vec::new();
            let mut outputs = Vec::new();
            for c in &w[1].changes {
                match seed.site(c.position as usize) {
                    GeneSite::Output { index } => outputs.push(index),
                    site => nodes.push(site.node().expect("node gene")),
                }
            }
            nodes.dedup();
            ChangedNodes {
                step: k + 1,
                generation: w[1].generation,
                nodes,
                outputs,
                error_affecting: w[0].metrics != w[1].metrics,
            }
        })
        .collect()
}

/// SHA-256 over the little-endian gene vector, hex encoded.
pub fn genome_digest(genome: &CircuitGenome) -> String {
    let mut h = Sha256::new();
    h.update((genome.n_inputs() as u32).to_le_bytes());
    for gene in genome.genes() {
        h.update(gene.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
    #[error("line {line}: {msg}")]
    Content { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct Record {
    step: usize,
    #[serde(flatten)]
    body: Step,
    genome_digest: String,
}

#[derive(Serialize, Deserialize)]
struct Summary {
    generations: u64,
    evaluations: u64,
    steps: usize,
}

/// One JSON record per accepted step, then a summary line.
pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<(), TrajectoryError> {
    let mut out = BufWriter::new(File::create(path)?);
    let mut failure = None;
    traj.for_each_genome(|k, g| {
        if failure.is_some() {
            return;
        }
        let rec = Record {
            step: k,
            body: traj.steps[k].clone(),
            genome_digest: genome_digest(g),
        };
        let res = serde_json::to_writer(&mut out, &rec)
            .map_err(|e| TrajectoryError::Json { line: k + 1, source: e })
            .and_then(|_| out.write_all(b"\n").map_err(TrajectoryError::from));
        if let Err(e) = res {
            failure = Some(e);
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let summary = Summary {
        generations: traj.generations,
        evaluations: traj.evaluations,
        steps: traj.steps.len(),
    };
    serde_json::to_writer(&mut out, &serde_json::json!({ "summary": summary }))
        .map_err(|e| TrajectoryError::Json { line: traj.steps.len() + 1, source: e })?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Reads a trajectory written by [`write_trajectory`], replaying it on
/// `seed` and checking every stored genome digest.
pub fn read_trajectory(seed: &CircuitGenome, path: &Path) -> Result<Trajectory, TrajectoryError> {
    let reader = BufReader::new(File::open(path)?);
    let mut traj: Option<Trajectory> = None;
    let mut genome = seed.clone();
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| TrajectoryError::Json { line: line_no, source: e })?;
        if let Some(s) = value.get("summary") {
            let s: Summary = serde_json::from_value(s.clone())
                .map_err(|e| TrajectoryError::Json { line: line_no, source: e })?;
            let t = traj.as_mut().ok_or(TrajectoryError::Content {
                line: line_no,
                msg: "summary before any step".into(),
            })?;
            t.generations = s.generations;
            t.evaluations = s.evaluations;
            continue;
        }
        let rec: Record =
            serde_json::from_value(value).map_err(|e| TrajectoryError::Json { line: line_no, source: e })?;
        let content = |msg: String| TrajectoryError::Content { line: line_no, msg };
        for c in &rec.body.changes {
            let p = c.position as usize;
            if p >= genome.gene_count() || genome.gene(p) != c.old {
                return Err(content(format!("change at gene {p} does not apply")));
            }
            genome.set_gene(p, c.new).map_err(|e| content(e.to_string()))?;
        }
        if genome_digest(&genome) != rec.genome_digest {
            return Err(content("genome digest mismatch".into()));
        }
        match traj.as_mut() {
            None if rec.step == 0 => traj = Some(Trajectory::start(seed.clone(), rec.body)),
            Some(t) if rec.step == t.steps.len() => t.push(rec.body),
            _ => return Err(content(format!("unexpected step index {}", rec.step))),
        }
    }
    let mut traj = traj.ok_or(TrajectoryError::Content {
        line: 0,
        msg: "empty trajectory file".into(),
    })?;
    traj.finish(genome);
    Ok(traj)
}

mod hex128 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{v:032x}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let s = String::deserialize(d)?;
        u128::from_str_radix(&s, 16).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Metric;
    use crate::obfuscate::{run_obfuscation, ConstraintSpec, ObfuscationConfig};
    use crate::seeds::{gen_bam, BamConfig};

    fn sample_run() -> Trajectory {
        let seed = gen_bam(8, BamConfig::new(7, 2)).unwrap();
        let spec = ConstraintSpec::for_seed(&seed, 0.05, &Metric::ALL).unwrap();
        let cfg = ObfuscationConfig { g_max: 300, rng_seed: 2, ..Default::default() };
        run_obfuscation(&seed, &spec, &cfg).unwrap()
    }

    #[test]
    fn persistence_round_trip() {
        let t = sample_run();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.jsonl");
        write_trajectory(&t, &p).unwrap();
        let back = read_trajectory(t.seed(), &p).unwrap();
        assert_eq!(back, t);

        let text = std::fs::read_to_string(&p).unwrap();
        let tampered = text.replacen("\"step\":1,", "\"step\":2,", 1);
        std::fs::write(&p, tampered).unwrap();
        assert!(read_trajectory(t.seed(), &p).is_err());
    }

    #[test]
    fn node_log_flags_follow_metrics() {
        let t = sample_run();
        let log = changed_node_log(&t);
        assert_eq!(log.len(), t.steps().len() - 1);
        for entry in &log {
            let (a, b) = (&t.steps()[entry.step - 1], &t.steps()[entry.step]);
            assert_eq!(entry.error_affecting, a.metrics != b.metrics);
            assert!(!entry.nodes.is_empty() || !entry.outputs.is_empty());
        }
    }

    #[test]
    fn uniqueness_definition() {
        let t = sample_run();
        let last = t.final_step().heatmap_digest;
        let expected = t.steps()[..t.steps().len() - 1].iter().all(|s| s.heatmap_digest != last);
        assert_eq!(uniqueness(&t), expected);

        let seed = t.seed().clone();
        let lone = Trajectory::start(seed.clone(), t.steps()[0].clone());
        assert!(!uniqueness(&lone));
    }

    #[test]
    fn digest_tracks_genes() {
        let g = gen_bam(8, BamConfig::new(3, 1)).unwrap();
        let mut h = g.clone();
        assert_eq!(genome_digest(&g), genome_digest(&h));
        h.set_gene(0, (g.gene(0) + 1) % g.gene_limit(0)).unwrap();
        assert_ne!(genome_digest(&g), genome_digest(&h));
        assert_eq!(genome_digest(&g).len(), 64);
    }
}
