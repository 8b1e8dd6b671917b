// SPDX-License-Identifier: Apache-2.0

//! Gate-level circuits encoded as CGP chromosomes.
//!
//! A [`CircuitGenome`] holds `z` two-input nodes followed by `n_o` output
//! selectors, i.e. `3z + n_o` integer genes. Node `k` lives at global index
//! `n_i + k` and may read any primary input or earlier node.

mod format;
mod sim;

use thiserror::Error;

pub use format::{parse_netlist, serialize_netlist, ParseError};
pub use sim::{simulate, simulate_exhaustive, simulate_vector, ResponseTable, OPERAND_BITS, TABLE_LEN};

/// The ten two-input gate functions available to every node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum GateFunction {
    BufA = 0,
    BufB = 1,
    NotA = 2,
    NotB = 3,
    And = 4,
    Or = 5,
    Xor = 6,
    Nand = 7,
    Nor = 8,
    Xnor = 9,
}

impl GateFunction {
    pub const COUNT: u32 = 10;

    pub const ALL: [GateFunction; 10] = [
        GateFunction::BufA,
        GateFunction::BufB,
        GateFunction::NotA,
        GateFunction::NotB,
        GateFunction::And,
        GateFunction::Or,
        GateFunction::Xor,
        GateFunction::Nand,
        GateFunction::Nor,
        GateFunction::Xnor,
    ];

    pub fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn code(self) -> u32 {
        self as u32
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            GateFunction::BufA => "BUF_A",
            GateFunction::BufB => "BUF_B",
            GateFunction::NotA => "NOT_A",
            GateFunction::NotB => "NOT_B",
            GateFunction::And => "AND2",
            GateFunction::Or => "OR2",
            GateFunction::Xor => "XOR2",
            GateFunction::Nand => "NAND2",
            GateFunction::Nor => "NOR2",
            GateFunction::Xnor => "XNOR2",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|f| f.mnemonic() == s)
    }

    /// Bitwise evaluation over 64 packed vectors.
    #[inline(always)]
    pub fn eval(self, a: u64, b: u64) -> u64 {
        match self {
            GateFunction::BufA => a,
            GateFunction::BufB => b,
            GateFunction::NotA => !a,
            GateFunction::NotB => !b,
            GateFunction::And => a & b,
            GateFunction::Or => a | b,
            GateFunction::Xor => a ^ b,
            GateFunction::Nand => !(a & b),
            GateFunction::Nor => !(a | b),
            GateFunction::Xnor => !(a ^ b),
        }
    }

    /// Whether the output depends on the first (resp. second) operand.
    pub fn uses(self) -> (bool, bool) {
        match self {
            GateFunction::BufA | GateFunction::NotA => (true, false),
            GateFunction::BufB | GateFunction::NotB => (false, true),
            _ => (true, true),
        }
    }
}

/// One CGP node: two connection genes and a function gene.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Node {
    pub src_a: u32,
    pub src_b: u32,
    pub func: GateFunction,
}

impl Node {
    pub fn new(func: GateFunction, src_a: u32, src_b: u32) -> Self {
        Self { src_a, src_b, func }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GenomeError {
    #[error("node {node} reads signal {src}, which is not earlier in the netlist")]
    ForwardReference { node: usize, src: u32 },
    #[error("output {output} selects signal {src}, but only {limit} signals exist")]
    OutputOutOfRange { output: usize, src: u32, limit: usize },
    #[error("expected {expected} outputs, got {got}")]
    OutputCount { expected: usize, got: usize },
    #[error("gene {position} is out of range (genome has {len} genes)")]
    GenePosition { position: usize, len: usize },
    #[error("value {value} is invalid for gene {position} (limit {limit})")]
    GeneValue { position: usize, value: u32, limit: u32 },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// What a gene position encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GeneSite {
    /// Connection gene `slot` (0 or 1) of node `node`.
    Connection { node: usize, slot: u8 },
    Function { node: usize },
    Output { index: usize },
}

impl GeneSite {
    /// Node index touched by this gene, if any.
    pub fn node(self) -> Option<usize> {
        match self {
            GeneSite::Connection { node, .. } | GeneSite::Function { node } => Some(node),
            GeneSite::Output { .. } => None,
        }
    }
}

/// CGP chromosome for an `n_i`-input, `n_o`-output feed-forward gate netlist.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CircuitGenome {
    n_inputs: usize,
    nodes: Vec<Node>,
    outputs: Vec<u32>,
}

impl CircuitGenome {
    pub fn new(n_inputs: usize, nodes: Vec<Node>, outputs: Vec<u32>) -> Result<Self, GenomeError> {
        let genome = Self {
            n_inputs,
            nodes,
            outputs,
        };
        genome.validate()?;
        Ok(genome)
    }

    /// Genome with no gates whose outputs read the primary inputs directly.
    pub fn identity(n: usize) -> Self {
        Self {
            n_inputs: n,
            nodes: Vec::new(),
            outputs: (0..n as u32).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), GenomeError> {
        for (k, node) in self.nodes.iter().enumerate() {
            let limit = (self.n_inputs + k) as u32;
            for src in [node.src_a, node.src_b] {
                if src >= limit {
                    return Err(GenomeError::ForwardReference { node: k, src });
                }
            }
        }
        let limit = self.signal_count();
        for (output, &src) in self.outputs.iter().enumerate() {
            if src as usize >= limit {
                return Err(GenomeError::OutputOutOfRange { output, src, limit });
            }
        }
        Ok(())
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn outputs(&self) -> &[u32] {
        &self.outputs
    }

    /// Grid size `z`.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Primary inputs plus nodes.
    pub fn signal_count(&self) -> usize {
        self.n_inputs + self.nodes.len()
    }

    /// `3z + n_o`.
    pub fn gene_count(&self) -> usize {
        3 * self.nodes.len() + self.outputs.len()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_inputs == other.n_inputs
            && self.nodes.len() == other.nodes.len()
            && self.outputs.len() == other.outputs.len()
    }

    pub fn site(&self, position: usize) -> GeneSite {
        let node_genes = 3 * self.nodes.len();
        if position < node_genes {
            let node = position / 3;
            match position % 3 {
                0 => GeneSite::Connection { node, slot: 0 },
                1 => GeneSite::Connection { node, slot: 1 },
                _ => GeneSite::Function { node },
            }
        } else {
            GeneSite::Output {
                index: position - node_genes,
            }
        }
    }

    /// Number of legal values for the gene at `position`.
    pub fn gene_limit(&self, position: usize) -> u32 {
        match self.site(position) {
            GeneSite::Connection { node, .. } => (self.n_inputs + node) as u32,
            GeneSite::Function { .. } => GateFunction::COUNT,
            GeneSite::Output { .. } => self.signal_count() as u32,
        }
    }

    pub fn gene(&self, position: usize) -> u32 {
        match self.site(position) {
            GeneSite::Connection { node, slot: 0 } => self.nodes[node].src_a,
            GeneSite::Connection { node, .. } => self.nodes[node].src_b,
            GeneSite::Function { node } => self.nodes[node].func.code(),
            GeneSite::Output { index } => self.outputs[index],
        }
    }

    pub fn genes(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.gene_count()).map(move |p| self.gene(p))
    }

    /// Overwrites one gene, keeping the genome valid.
    pub fn set_gene(&mut self, position: usize, value: u32) -> Result<(), GenomeError> {
        let len = self.gene_count();
        if position >= len {
            return Err(GenomeError::GenePosition { position, len });
        }
        let limit = self.gene_limit(position);
        if value >= limit {
            return Err(GenomeError::GeneValue {
                position,
                value,
                limit,
            });
        }
        match self.site(position) {
            GeneSite::Connection { node, slot: 0 } => self.nodes[node].src_a = value,
            GeneSite::Connection { node, .. } => self.nodes[node].src_b = value,
            GeneSite::Function { node } => {
                self.nodes[node].func = GateFunction::from_code(value).expect("checked above")
            }
            GeneSite::Output { index } => self.outputs[index] = value,
        }
        Ok(())
    }

    /// Marks every node reachable backwards from the outputs.
    pub fn active_nodes(&self) -> Vec<bool> {
        let mut active = vec![false; self.nodes.len()];
        let n_i = self.n_inputs;
        for &o in &self.outputs {
            if o as usize >= n_i {
                active[o as usize - n_i] = true;
            }
        }
        for k in (0..self.nodes.len()).rev() {
            if !active[k] {
                continue;
            }
            let node = self.nodes[k];
            let (use_a, use_b) = node.func.uses();
            for (used, src) in [(use_a, node.src_a), (use_b, node.src_b)] {
                if used && src as usize >= n_i {
                    active[src as usize - n_i] = true;
                }
            }
        }
        active
    }

    pub fn active_gate_count(&self) -> usize {
        self.active_nodes().into_iter().filter(|&a| a).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_and() -> CircuitGenome {
        let mut outputs: Vec<u32> = (0..16).collect();
        outputs[0] = 16;
        CircuitGenome::new(16, vec![Node::new(GateFunction::And, 0, 8)], outputs).unwrap()
    }

    #[test]
    fn mnemonics_round_trip() {
        for f in GateFunction::ALL {
            assert_eq!(GateFunction::from_mnemonic(f.mnemonic()), Some(f));
            assert_eq!(GateFunction::from_code(f.code()), Some(f));
        }
        assert_eq!(GateFunction::from_code(10), None);
    }

    #[test]
    fn truth_tables() {
        let a = 0b1100u64;
        let b = 0b1010u64;
        let expect = [
            0b1100, 0b1010, !0b1100, !0b1010, 0b1000, 0b1110, 0b0110, !0b1000, !0b1110, !0b0110,
        ];
        for (f, e) in GateFunction::ALL.iter().zip(expect) {
            assert_eq!(f.eval(a, b), e, "{f:?}");
        }
    }

    #[test]
    fn gene_count_is_three_z_plus_outputs() {
        let g = one_and();
        assert_eq!(g.gene_count(), 3 + 16);
        assert_eq!(g.genes().count(), 19);
        assert_eq!(g.gene(2), GateFunction::And.code());
        assert_eq!(g.gene(3), 16);
    }

    #[test]
    fn forward_reference_rejected() {
        let err = CircuitGenome::new(2, vec![Node::new(GateFunction::And, 0, 2)], vec![2]);
        assert_eq!(err, Err(GenomeError::ForwardReference { node: 0, src: 2 }));
        let err = CircuitGenome::new(2, vec![], vec![2]);
        assert!(matches!(err, Err(GenomeError::OutputOutOfRange { .. })));
    }

    #[test]
    fn active_counts() {
        assert_eq!(CircuitGenome::identity(16).active_gate_count(), 0);
        assert_eq!(one_and().active_gate_count(), 1);
        // a buffer only activates the operand it reads
        let g = CircuitGenome::new(
            2,
            vec![
                Node::new(GateFunction::And, 0, 1),
                Node::new(GateFunction::BufB, 2, 1),
            ],
            vec![3],
        )
        .unwrap();
        assert_eq!(g.active_nodes(), vec![false, true]);
    }

    #[test]
    fn set_gene_enforces_limits() {
        let mut g = one_and();
        assert!(g.set_gene(0, 16).is_err());
        assert!(g.set_gene(2, 10).is_err());
        assert!(g.set_gene(19, 0).is_err());
        g.set_gene(2, GateFunction::Or.code()).unwrap();
        assert_eq!(g.nodes()[0].func, GateFunction::Or);
        g.validate().unwrap();
    }
}
