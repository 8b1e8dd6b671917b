// SPDX-License-Identifier: Apache-2.0

//! Constrained 1+λ CGP search that pushes a circuit's encoding away from
//! its seed while keeping every constrained error metric within
//! `E_i(seed) * (1 + tau)`.
//!
//! Fitness of a candidate is its gene-wise edit distance to the seed when
//! all constraints hold and 0 otherwise. Only constraint-satisfying
//! offspring may replace the parent, and equally fit offspring win ties.

mod trajectory;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{table_digest, ErrorMetrics, Metric};
use crate::netlist::{simulate_exhaustive, CircuitGenome, GeneSite, ResponseTable};
use crate::par;

pub use trajectory::{
    changed_node_log, genome_digest, read_trajectory, uniqueness, write_trajectory, ChangedNodes,
    GeneChange, Step, Trajectory, TrajectoryError,
};

#[derive(Debug, Error, PartialEq)]
pub enum ObfuscateError {
    #[error("constraint set is empty")]
    NoConstraints,
    #[error("tau must be finite and non-negative, got {0}")]
    Tau(f64),
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error("genomes differ in shape")]
    Shape,
}

/// Error bounds fixed from the seed at construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    tau: f64,
    constrained: Vec<Metric>,
    reference: ErrorMetrics,
}

impl ConstraintSpec {
    pub fn new(reference: ErrorMetrics, tau: f64, constrained: &[Metric]) -> Result<Self, ObfuscateError> {
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(ObfuscateError::Tau(tau));
        }
        let mut constrained = constrained.to_vec();
        constrained.sort();
        constrained.dedup();
        if constrained.is_empty() {
            return Err(ObfuscateError::NoConstraints);
        }
        Ok(Self {
            tau,
            constrained,
            reference,
        })
    }

    /// Simulates `seed` once and derives the bounds from its metrics.
    pub fn for_seed(seed: &CircuitGenome, tau: f64, constrained: &[Metric]) -> Result<Self, ObfuscateError> {
        Self::new(ErrorMetrics::from_table(&simulate_exhaustive(seed)), tau, constrained)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn constrained(&self) -> &[Metric] {
        &self.constrained
    }

    /// Seed metrics the bounds derive from.
    pub fn reference(&self) -> &ErrorMetrics {
        &self.reference
    }

    /// `E(seed) * (1 + tau)` for any metric, constrained or not.
    pub fn limit(&self, metric: Metric) -> f64 {
        self.reference.get(metric) * (1.0 + self.tau)
    }

    /// Bound for a constrained metric.
    pub fn bound(&self, metric: Metric) -> Option<f64> {
        self.constrained.contains(&metric).then(|| self.limit(metric))
    }

    pub fn satisfied(&self, m: &ErrorMetrics) -> bool {
        self.constrained.iter().all(|&k| m.get(k) <= self.limit(k))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObfuscationConfig {
    pub lambda: usize,
    pub h: usize,
    pub g_max: u64,
    pub rng_seed: u64,
}

impl Default for ObfuscationConfig {
    fn default() -> Self {
        Self {
            lambda: 1,
            h: 1,
            g_max: 15_000,
            rng_seed: 0,
        }
    }
}

impl ObfuscationConfig {
    pub fn validate(&self) -> Result<(), ObfuscateError> {
        let bad = |m: &str| Err(ObfuscateError::Config(m.to_string()));
        if self.lambda == 0 {
            return bad("lambda must be at least 1");
        }
        if self.h == 0 {
            return bad("h must be at least 1");
        }
        if self.g_max == 0 {
            return bad("g_max must be at least 1");
        }
        Ok(())
    }
}

/// Number of gene positions whose values differ.
pub fn edit_distance(a: &CircuitGenome, b: &CircuitGenome) -> Result<usize, ObfuscateError> {
    if !a.same_shape(b) {
        return Err(ObfuscateError::Shape);
    }
    Ok(a.genes().zip(b.genes()).filter(|(x, y)| x != y).count())
}

/// Draws `h` distinct positions and a uniformly random legal value for each.
/// The drawn value may equal the current one. Changes come back in position
/// order and are not yet applied.
pub fn draw_mutation<R: Rng + ?Sized>(genome: &CircuitGenome, h: usize, rng: &mut R) -> Vec<GeneChange> {
    let n = genome.gene_count();
    let mut positions = index::sample(rng, n, h.min(n)).into_vec();
    positions.sort_unstable();
    positions
        .into_iter()
        .map(|p| GeneChange {
            position: p as u32,
            old: genome.gene(p),
            new: rng.gen_range(0..genome.gene_limit(p)),
        })
        .collect()
}

/// Mutated copy of `genome` with `h` positions resampled.
pub fn mutate<R: Rng + ?Sized>(genome: &CircuitGenome, h: usize, rng: &mut R) -> CircuitGenome {
    let mut child = genome.clone();
    for c in draw_mutation(genome, h, rng) {
        child
            .set_gene(c.position as usize, c.new)
            .expect("drawn values respect gene limits");
    }
    child
}

/// Fitness of `candidate` against `seed` under `spec`: the edit distance
/// when every constrained metric is within bounds, 0 otherwise.
pub fn fitness(candidate: &CircuitGenome, seed: &CircuitGenome, spec: &ConstraintSpec) -> Result<usize, ObfuscateError> {
    let d = edit_distance(candidate, seed)?;
    let m = ErrorMetrics::from_table(&simulate_exhaustive(candidate));
    Ok(if spec.satisfied(&m) { d } else { 0 })
}

struct Parent {
    genome: CircuitGenome,
    active: Vec<bool>,
    metrics: ErrorMetrics,
    digest: u128,
    d: usize,
    fitness: usize,
}

struct Offspring {
    genome: CircuitGenome,
    changes: Vec<GeneChange>,
    d: usize,
    /// `None` when the phenotype provably equals the parent's.
    table: Option<ResponseTable>,
    metrics: ErrorMetrics,
}

/// Whether every effective change sits on a gene the outputs cannot see.
fn is_silent(changes: &[GeneChange], genome: &CircuitGenome, active: &[bool]) -> bool {
    changes.iter().filter(|c| c.old != c.new).all(|c| match genome.site(c.position as usize) {
        GeneSite::Output { .. } => false,
        site => !active[site.node().expect("node gene")],
    })
}

fn evaluate(child: &mut Offspring) {
    let table = simulate_exhaustive(&child.genome);
    child.metrics = ErrorMetrics::from_table(&table);
    child.table = Some(table);
}

/// Runs the constrained search from `seed` for `cfg.g_max` generations.
pub fn run_obfuscation(
    seed: &CircuitGenome,
    spec: &ConstraintSpec,
    cfg: &ObfuscationConfig,
) -> Result<Trajectory, ObfuscateError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let seed_table = simulate_exhaustive(seed);
    let seed_metrics = ErrorMetrics::from_table(&seed_table);
    let mut parent = Parent {
        genome: seed.clone(),
        active: seed.active_nodes(),
        metrics: seed_metrics,
        digest: table_digest(&seed_table),
        d: 0,
        fitness: 0,
    };
    let mut traj = Trajectory::start(seed.clone(), Step {
        generation: 0,
        d: 0,
        metrics: seed_metrics,
        active_gates: parent.active.iter().filter(|&&a| a).count() as u32,
        heatmap_digest: parent.digest,
        changes: Vec::new(),
        touched: 0,
    });
    let mut touched = vec![false; seed.gene_count()];
    let mut touched_count = 0u32;

    for generation in 1..=cfg.g_max {
        let mut brood: Vec<Offspring> = (0..cfg.lambda)
            .map(|_| {
                let changes = draw_mutation(&parent.genome, cfg.h, &mut rng);
                let mut genome = parent.genome.clone();
                let mut d = parent.d;
                for c in &changes {
                    let p = c.position as usize;
                    let s = seed.gene(p);
                    d = d + (c.old == s && c.new != s) as usize - (c.old != s && c.new == s) as usize;
                    genome.set_gene(p, c.new).expect("legal value");
                }
                Offspring {
                    genome,
                    changes,
                    d,
                    table: None,
                    metrics: parent.metrics,
                }
            })
            .collect();

        let silent: Vec<bool> = brood
            .iter()
            .map(|o| is_silent(&o.changes, &parent.genome, &parent.active))
            .collect();
        let pending = silent.iter().filter(|&&s| !s).count();
        traj.evaluations += pending as u64;
        if pending == 1 || (pending > 1 && par::current_threads() == 1) {
            for (o, _) in brood.iter_mut().zip(&silent).filter(|(_, &s)| !s) {
                evaluate(o);
            }
        } else if pending > 1 {
            let jobs: Vec<CircuitGenome> = brood
                .iter()
                .zip(&silent)
                .filter(|(_, &s)| !s)
                .map(|(o, _)| o.genome.clone())
                .collect();
            let mut done = par::map(&jobs, |g| {
                let t = simulate_exhaustive(g);
                (ErrorMetrics::from_table(&t), t)
            })
            .into_iter();
            for (o, _) in brood.iter_mut().zip(&silent).filter(|(_, &s)| !s) {
                let (m, t) = done.next().expect("one result per job");
                o.metrics = m;
                o.table = Some(t);
            }
        }

        // best feasible offspring; the first one wins among equals
        let mut best: Option<(usize, usize)> = None;
        for (k, o) in brood.iter().enumerate() {
            if spec.satisfied(&o.metrics) && best.is_none_or(|(_, f)| o.d > f) {
                best = Some((k, o.d));
            }
        }
        let Some((k, f)) = best else { continue };
        if f < parent.fitness {
            continue;
        }
        let child = brood.swap_remove(k);
        let effective: Vec<GeneChange> = child.changes.into_iter().filter(|c| c.old != c.new).collect();
        if effective.is_empty() {
            continue;
        }
        for c in &effective {
            let p = c.position as usize;
            if !touched[p] {
                touched[p] = true;
                touched_count += 1;
            }
        }
        let digest = child.table.as_ref().map_or(parent.digest, table_digest);
        parent = Parent {
            active: child.genome.active_nodes(),
            genome: child.genome,
            metrics: child.metrics,
            digest,
            d: child.d,
            fitness: f,
        };
        traj.push(Step {
            generation,
            d: parent.d as u32,
            metrics: parent.metrics,
            active_gates: parent.active.iter().filter(|&&a| a).count() as u32,
            heatmap_digest: digest,
            changes: effective,
            touched: touched_count,
        });
    }
    traj.generations = cfg.g_max;
    traj.finish(parent.genome);
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{GateFunction, Node};
    use crate::seeds::{gen_bam, BamConfig};

    fn spec_all(seed: &CircuitGenome, tau: f64) -> ConstraintSpec {
        ConstraintSpec::for_seed(seed, tau, &Metric::ALL).unwrap()
    }

    #[test]
    fn distance_basics() {
        let g = gen_bam(8, BamConfig::new(5, 3)).unwrap();
        assert_eq!(edit_distance(&g, &g).unwrap(), 0);
        let mut a = g.clone();
        let mut b = g.clone();
        let pa = 3 * 10 + 2;
        let pb = 3 * 40 + 1;
        a.set_gene(pa, (g.gene(pa) + 1) % 10).unwrap();
        b.set_gene(pb, (g.gene(pb) + 1) % g.gene_limit(pb)).unwrap();
        assert_eq!(edit_distance(&g, &a).unwrap(), 1);
        assert_eq!(edit_distance(&a, &b).unwrap(), 2);
        assert_eq!(
            edit_distance(&g, &CircuitGenome::identity(16)),
            Err(ObfuscateError::Shape)
        );
    }

    #[test]
    fn spec_rejects_bad_input() {
        assert_eq!(
            ConstraintSpec::new(ErrorMetrics::ZERO, 0.1, &[]),
            Err(ObfuscateError::NoConstraints)
        );
        assert!(ConstraintSpec::new(ErrorMetrics::ZERO, -0.1, &[Metric::Wce]).is_err());
        assert!(ConstraintSpec::new(ErrorMetrics::ZERO, f64::NAN, &[Metric::Wce]).is_err());
        let s = ConstraintSpec::new(ErrorMetrics { wce: 100, mae: 2.0, ep: 0.5 }, 0.05, &[Metric::Mae, Metric::Wce, Metric::Wce]).unwrap();
        assert_eq!(s.constrained(), &[Metric::Wce, Metric::Mae]);
        assert_eq!(s.bound(Metric::Ep), None);
        assert!((s.bound(Metric::Wce).unwrap() - 105.0).abs() < 1e-12);
        assert!(s.satisfied(&ErrorMetrics { wce: 105, mae: 2.1, ep: 1.0 }));
        assert!(!s.satisfied(&ErrorMetrics { wce: 106, mae: 0.0, ep: 0.0 }));
    }

    #[test]
    fn config_validation() {
        assert!(ObfuscationConfig::default().validate().is_ok());
        for cfg in [
            ObfuscationConfig { lambda: 0, ..Default::default() },
            ObfuscationConfig { h: 0, ..Default::default() },
            ObfuscationConfig { g_max: 0, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(ObfuscateError::Config(_))));
        }
    }

    #[test]
    fn fitness_follows_constraints() {
        let seed = gen_bam(8, BamConfig::new(5, 3)).unwrap();
        let spec = spec_all(&seed, 0.05);
        assert_eq!(fitness(&seed, &seed, &spec).unwrap(), 0);
        // route the product MSB to a constant-ish input bit: WCE explodes
        let mut broken = seed.clone();
        let last = broken.gene_count() - 1;
        broken.set_gene(last, 0).unwrap();
        assert_eq!(fitness(&broken, &seed, &spec).unwrap(), 0);
        assert_eq!(edit_distance(&broken, &seed).unwrap(), 1);
    }

    #[test]
    fn single_generation_neutral_drift() {
        // one spare node nobody reads; mutating it is accepted with d = 1
        let nodes = vec![
            Node::new(GateFunction::And, 0, 8),
            Node::new(GateFunction::Xor, 1, 9),
        ];
        let mut outputs = vec![16u32];
        outputs.extend(std::iter::repeat_n(0, 15));
        let seed = CircuitGenome::new(16, nodes, outputs).unwrap();
        let spec = spec_all(&seed, 0.0);
        let inactive_hit = (0..10_000u64)
            .find(|&s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let c = draw_mutation(&seed, 1, &mut rng);
                (3..6).contains(&c[0].position) && c[0].old != c[0].new
            })
            .unwrap();
        let cfg = ObfuscationConfig { g_max: 1, rng_seed: inactive_hit, ..Default::default() };
        let t = run_obfuscation(&seed, &spec, &cfg).unwrap();
        assert_eq!(t.steps().len(), 2);
        assert_eq!(t.final_genome().active_gate_count(), 1);
        assert_eq!(edit_distance(t.final_genome(), &seed).unwrap(), 1);
        assert_eq!(simulate_exhaustive(t.final_genome()), simulate_exhaustive(&seed));
        assert_eq!(t.evaluations, 0);
        assert!(!uniqueness(&t));
    }

    #[test]
    fn short_run_respects_bounds_and_is_reproducible() {
        let seed = gen_bam(8, BamConfig::new(6, 2)).unwrap();
        let spec = spec_all(&seed, 0.02);
        let cfg = ObfuscationConfig { g_max: 400, rng_seed: 11, ..Default::default() };
        let t = run_obfuscation(&seed, &spec, &cfg).unwrap();
        assert_eq!(t, run_obfuscation(&seed, &spec, &cfg).unwrap());
        assert!(t.steps().len() > 1);
        let mut last = 0;
        for (k, step) in t.steps().iter().enumerate() {
            let g = t.genome_at(k);
            let m = ErrorMetrics::from_table(&simulate_exhaustive(&g));
            assert_eq!(m, step.metrics);
            assert!(spec.satisfied(&m));
            assert_eq!(edit_distance(&g, &seed).unwrap(), step.d as usize);
            assert!(step.d >= last);
            last = step.d;
        }
        assert_eq!(&t.genome_at(t.steps().len() - 1), t.final_genome());
    }

    #[test]
    fn wider_brood_matches_itself() {
        let seed = gen_bam(8, BamConfig::new(4, 1)).unwrap();
        let spec = spec_all(&seed, 0.05);
        let cfg = ObfuscationConfig { lambda: 4, h: 2, g_max: 60, rng_seed: 3 };
        let a = run_obfuscation(&seed, &spec, &cfg).unwrap();
        let b = par::with_workers(1, || run_obfuscation(&seed, &spec, &cfg).unwrap());
        assert_eq!(a, b);
        for (k, s) in a.steps().iter().enumerate().skip(1) {
            assert!(s.changes.len() <= 2);
            assert!(spec.satisfied(&ErrorMetrics::from_table(&simulate_exhaustive(&a.genome_at(k)))));
        }
    }

    #[test]
    fn exact_seed_stays_exact() {
        let seed = crate::seeds::gen_exact(8).unwrap();
        let spec = spec_all(&seed, 0.05);
        let cfg = ObfuscationConfig { g_max: 300, rng_seed: 5, ..Default::default() };
        let t = run_obfuscation(&seed, &spec, &cfg).unwrap();
        for s in t.steps() {
            assert_eq!(s.metrics, ErrorMetrics::ZERO);
        }
        assert_eq!(ErrorMetrics::from_table(&simulate_exhaustive(t.final_genome())), ErrorMetrics::ZERO);
    }
}
