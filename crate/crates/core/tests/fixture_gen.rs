// SPDX-License-Identifier: Apache-2.0

//! Regenerates the evolved seed fixtures in `tests/data`.
//!
//! Run with `cargo test --release -p axmul-core --test fixture_gen -- --ignored`.

use axmul_core::metrics::ErrorMetrics;
use axmul_core::netlist::simulate_exhaustive;
use axmul_core::obfuscate::draw_mutation;
use axmul_core::seeds::{export_structural, gen_exact};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Area-minimizing 1+1 search under a WCE ceiling, started from the exact
/// array. Ties go to the offspring.
fn evolve(wce_limit: u32, generations: u64, rng_seed: u64) -> axmul_core::netlist::CircuitGenome {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut parent = gen_exact(8).unwrap();
    let mut area = parent.active_gate_count();
    for _ in 0..generations {
        let h = rng.gen_range(1..=4);
        let mut child = parent.clone();
        for c in draw_mutation(&parent, h, &mut rng) {
            child.set_gene(c.position as usize, c.new).unwrap();
        }
        let child_area = child.active_gate_count();
        if child_area > area {
            continue;
        }
        let m = ErrorMetrics::from_table(&simulate_exhaustive(&child));
        if m.wce <= wce_limit {
            parent = child;
            area = child_area;
        }
    }
    parent
}

#[test]
#[ignore]
fn regenerate_evolved_seeds() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data");
    for (name, wce, seed) in [("evo_w64", 64, 1u64), ("evo_w256", 256, 2), ("evo_w1024", 1024, 3)] {
        let g = evolve(wce, 120_000, seed);
        let m = ErrorMetrics::from_table(&simulate_exhaustive(&g));
        println!("{name}: {} active gates, {m:?}", g.active_gate_count());
        std::fs::write(dir.join(format!("{name}.v")), export_structural(&g, name)).unwrap();
    }
}
