// SPDX-License-Identifier: Apache-2.0

//! Scalar and word-packed simulation.
//!
//! Input bits 0..8 carry operand `a` and bits 8..16 carry operand `b`, both
//! LSB-first. Output bit `k` is output gene `k`. The exhaustive table is
//! indexed `a * 256 + b`.

use std::fmt;

use super::{CircuitGenome, GateFunction};

pub const OPERAND_BITS: usize = 8;
pub const TABLE_LEN: usize = 1 << (2 * OPERAND_BITS);

/// Words evaluated together per gate; 64 words cover 4096 input vectors.
const BLOCK: usize = 64;

/// Outputs of a 16-input circuit for all 65,536 input vectors.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ResponseTable {
    values: Box<[u16]>,
}

impl ResponseTable {
    pub fn from_vec(values: Vec<u16>) -> Option<Self> {
        (values.len() == TABLE_LEN).then(|| Self {
            values: values.into_boxed_slice(),
        })
    }

    /// Table of `f(a, b)` over all operand pairs.
    pub fn from_fn(mut f: impl FnMut(u8, u8) -> u16) -> Self {
        let values = (0..TABLE_LEN)
            .map(|n| f((n >> 8) as u8, n as u8))
            .collect::<Vec<_>>();
        Self {
            values: values.into_boxed_slice(),
        }
    }

    #[inline]
    pub fn get(&self, a: u8, b: u8) -> u16 {
        self.values[(a as usize) << 8 | b as usize]
    }

    pub fn as_slice(&self) -> &[u16] {
        &self.values
    }
}

impl fmt::Debug for ResponseTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ResponseTable({:?}..)", &self.values[..8])
    }
}

/// Evaluates one input vector. Input bit `k` of the genome reads bit `k` of
/// `inputs`; at most 64 outputs are returned LSB-first.
pub fn simulate_vector(genome: &CircuitGenome, inputs: u64) -> u64 {
    let n_i = genome.n_inputs();
    let mut values = Vec::with_capacity(genome.signal_count());
    values.extend((0..n_i).map(|k| inputs >> k & 1 == 1));
    for node in genome.nodes() {
        let a = values[node.src_a as usize] as u64;
        let b = values[node.src_b as usize] as u64;
        values.push(node.func.eval(a, b) & 1 == 1);
    }
    genome
        .outputs()
        .iter()
        .enumerate()
        .fold(0u64, |acc, (k, &o)| acc | (values[o as usize] as u64) << k)
}

/// Output of a 16-input genome for operands `a` and `b`.
pub fn simulate(genome: &CircuitGenome, a: u8, b: u8) -> u16 {
    simulate_vector(genome, a as u64 | (b as u64) << OPERAND_BITS) as u16
}

const LANE_PATTERNS: [u64; 6] = [
    0xAAAA_AAAA_AAAA_AAAA,
    0xCCCC_CCCC_CCCC_CCCC,
    0xF0F0_F0F0_F0F0_F0F0,
    0xFF00_FF00_FF00_FF00,
    0xFFFF_0000_FFFF_0000,
    0xFFFF_FFFF_0000_0000,
];

#[inline(always)]
fn apply<F: Fn(u64, u64) -> u64>(dst: &mut [u64; BLOCK], a: &[u64; BLOCK], b: &[u64; BLOCK], f: F) {
    for l in 0..BLOCK {
        dst[l] = f(a[l], b[l]);
    }
}

/// Transposes four side-by-side 16x16 bit matrices held in `m`.
/// Afterwards bit `16g + k` of `m[t]` is the former bit `16g + t` of `m[k]`.
#[inline(always)]
fn transpose16x4(m: &mut [u64; 16]) {
    const MASKS: [(usize, u64); 4] = [
        (8, 0x00FF_00FF_00FF_00FF),
        (4, 0x0F0F_0F0F_0F0F_0F0F),
        (2, 0x3333_3333_3333_3333),
        (1, 0x5555_5555_5555_5555),
    ];
    for (j, mask) in MASKS {
        for k in 0..16 {
            if k & j == 0 {
                let t = ((m[k] >> j) ^ m[k + j]) & mask;
                m[k + j] ^= t;
                m[k] ^= t << j;
            }
        }
    }
}

/// Exhaustive word-packed simulation of a 16-input genome.
///
/// Only nodes in the active cone are evaluated.
///
/// # Panics
/// If the genome does not have 16 inputs or has more than 16 outputs.
pub fn simulate_exhaustive(genome: &CircuitGenome) -> ResponseTable {
    assert_eq!(genome.n_inputs(), 2 * OPERAND_BITS, "exhaustive simulation needs 16 inputs");
    assert!(genome.n_outputs() <= 16, "at most 16 outputs fit a response word");

    let n_i = genome.n_inputs();
    let active = genome.active_nodes();
    let program: Vec<(usize, usize, usize, GateFunction)> = genome
        .nodes()
        .iter()
        .enumerate()
        .filter(|&(k, _)| active[k])
        .map(|(k, n)| (n_i + k, n.src_a as usize, n.src_b as usize, n.func))
        .collect();
    let outputs: Vec<usize> = genome.outputs().iter().map(|&o| o as usize).collect();

    let mut vals = vec![[0u64; BLOCK]; genome.signal_count()];
    let mut table = vec![0u16; TABLE_LEN];

    for (blk, block_out) in table.chunks_exact_mut(BLOCK * 64).enumerate() {
        for (s, lanes) in vals[..n_i].iter_mut().enumerate() {
            // input s is operand-a bit s (index bit 8 + s) or operand-b bit s - 8
            let q = if s < OPERAND_BITS { OPERAND_BITS + s } else { s - OPERAND_BITS };
            for (l, lane) in lanes.iter_mut().enumerate() {
                let base = (blk * BLOCK + l) * 64;
                *lane = if q < 6 {
                    LANE_PATTERNS[q]
                } else if base >> q & 1 == 1 {
                    !0
                } else {
                    0
                };
            }
        }

        for &(dst, sa, sb, func) in &program {
            let a = vals[sa];
            let b = vals[sb];
            let d = &mut vals[dst];
            match func {
                GateFunction::BufA => apply(d, &a, &b, |x, _| x),
                GateFunction::BufB => apply(d, &a, &b, |_, y| y),
                GateFunction::NotA => apply(d, &a, &b, |x, _| !x),
                GateFunction::NotB => apply(d, &a, &b, |_, y| !y),
                GateFunction::And => apply(d, &a, &b, |x, y| x & y),
                GateFunction::Or => apply(d, &a, &b, |x, y| x | y),
                GateFunction::Xor => apply(d, &a, &b, |x, y| x ^ y),
                GateFunction::Nand => apply(d, &a, &b, |x, y| !(x & y)),
                GateFunction::Nor => apply(d, &a, &b, |x, y| !(x | y)),
                GateFunction::Xnor => apply(d, &a, &b, |x, y| !(x ^ y)),
            }
        }

        let mut words = [[0u64; BLOCK]; 16];
        for (w, &o) in words.iter_mut().zip(&outputs) {
            *w = vals[o];
        }
        for (l, chunk) in block_out.chunks_exact_mut(64).enumerate() {
            let mut m = [0u64; 16];
            for k in 0..16 {
                m[k] = words[k][l];
            }
            transpose16x4(&mut m);
            for g in 0..4 {
                for t in 0..16 {
                    chunk[16 * g + t] = (m[t] >> (16 * g)) as u16;
                }
            }
        }
    }
    ResponseTable::from_vec(table).expect("table length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::Node;

    #[test]
    fn transpose_matches_naive() {
        let mut m = [0u64; 16];
        let mut x = 0x9E37_79B9_7F4A_7C15u64;
        for w in m.iter_mut() {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            *w = x;
        }
        let orig = m;
        transpose16x4(&mut m);
        for g in 0..4 {
            for k in 0..16 {
                for t in 0..16 {
                    assert_eq!(m[t] >> (16 * g + k) & 1, orig[k] >> (16 * g + t) & 1);
                }
            }
        }
    }

    #[test]
    fn identity_echoes_operands() {
        let t = simulate_exhaustive(&CircuitGenome::identity(16));
        for (a, b) in [(0u8, 0u8), (1, 0), (0, 1), (173, 92), (255, 255)] {
            assert_eq!(t.get(a, b), a as u16 | (b as u16) << 8);
            assert_eq!(simulate(&CircuitGenome::identity(16), a, b), t.get(a, b));
        }
    }

    #[test]
    fn packed_matches_scalar_on_mixed_gates() {
        let nodes = vec![
            Node::new(GateFunction::Xor, 0, 8),
            Node::new(GateFunction::Nand, 16, 15),
            Node::new(GateFunction::NotB, 3, 17),
            Node::new(GateFunction::Or, 18, 7),
            Node::new(GateFunction::Xnor, 19, 14),
        ];
        let outputs = vec![16, 17, 18, 19, 20, 0, 8, 15, 7, 20, 19, 18, 17, 16, 1, 9];
        let g = CircuitGenome::new(16, nodes, outputs).unwrap();
        let t = simulate_exhaustive(&g);
        for n in 0..TABLE_LEN {
            let (a, b) = ((n >> 8) as u8, n as u8);
            assert_eq!(t.get(a, b), simulate(&g, a, b), "({a},{b})");
        }
    }
}
