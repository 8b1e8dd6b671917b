// SPDX-License-Identifier: Apache-2.0

//! Seed multipliers: a carry-save array multiplier, its broken-array
//! variants, and import/export of a small assign-style structural grammar.

use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::cmp::Reverse;
use std::fmt::Write as _;

use thiserror::Error;

use crate::netlist::{parse_netlist, CircuitGenome, GateFunction, Node, ParseError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SeedError {
    #[error("BAM parameter out of range: v = {v} (max {v_max}), h = {h} (max {h_max})")]
    OutOfRange { v: u32, h: u32, v_max: u32, h_max: u32 },
    #[error("operand width must be between 1 and 32, got {0}")]
    Width(u32),
}

/// Broken-array slicing: `v` low columns and `h` low rows are dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BamConfig {
    pub v: u32,
    pub h: u32,
}

impl BamConfig {
    pub const EXACT: BamConfig = BamConfig { v: 0, h: 0 };

    pub fn new(v: u32, h: u32) -> Self {
        Self { v, h }
    }

    /// Whether partial product `a_c * b_r` survives the slicing.
    pub fn keeps(&self, row: u32, col: u32) -> bool {
        row >= self.h && row + col >= self.v
    }

    pub fn id(&self) -> String {
        format!("bam_v{}_h{}", self.v, self.h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Sig {
    Zero,
    Net(u32),
}

struct Builder {
    n_inputs: usize,
    nodes: Vec<Node>,
}

impl Builder {
    fn new(n_inputs: usize) -> Self {
        Self {
            n_inputs,
            nodes: Vec::new(),
        }
    }

    fn input(&self, k: usize) -> Sig {
        Sig::Net(k as u32)
    }

    fn gate(&mut self, func: GateFunction, a: u32, b: u32) -> Sig {
        let id = (self.n_inputs + self.nodes.len()) as u32;
        self.nodes.push(Node::new(func, a, b));
        Sig::Net(id)
    }

    fn and(&mut self, a: Sig, b: Sig) -> Sig {
        match (a, b) {
            (Sig::Net(x), Sig::Net(y)) => self.gate(GateFunction::And, x, y),
            _ => Sig::Zero,
        }
    }

    fn or(&mut self, a: Sig, b: Sig) -> Sig {
        match (a, b) {
            (Sig::Net(x), Sig::Net(y)) => self.gate(GateFunction::Or, x, y),
            (Sig::Zero, s) | (s, Sig::Zero) => s,
        }
    }

    fn xor(&mut self, a: Sig, b: Sig) -> Sig {
        match (a, b) {
            (Sig::Net(x), Sig::Net(y)) => self.gate(GateFunction::Xor, x, y),
            (Sig::Zero, s) | (s, Sig::Zero) => s,
        }
    }

    /// Returns `(sum, carry)`; constant-zero operands shrink the cell.
    fn full_adder(&mut self, x: Sig, y: Sig, z: Sig) -> (Sig, Sig) {
        let live: Vec<Sig> = [x, y, z].into_iter().filter(|s| *s != Sig::Zero).collect();
        match live[..] {
            [] => (Sig::Zero, Sig::Zero),
            [p] => (p, Sig::Zero),
            [p, q] => (self.xor(p, q), self.and(p, q)),
            [p, q, r] => {
                let half = self.xor(p, q);
                let sum = self.xor(half, r);
                let c1 = self.and(p, q);
                let c2 = self.and(r, half);
                (sum, self.or(c1, c2))
            }
            _ => unreachable!(),
        }
    }

    fn finish(mut self, outputs: &[Sig]) -> CircuitGenome {
        let mut zero = None;
        let outs = outputs
            .iter()
            .map(|s| match *s {
                Sig::Net(id) => id,
                Sig::Zero => *zero.get_or_insert_with(|| match self.gate(GateFunction::Xor, 0, 0) {
                    Sig::Net(id) => id,
                    Sig::Zero => unreachable!(),
                }),
            })
            .collect();
        CircuitGenome::new(self.n_inputs, self.nodes, outs).expect("builder emits valid genomes")
    }
}

/// Carry-save array multiplier for two `width`-bit operands.
pub fn gen_exact(width: u32) -> Result<CircuitGenome, SeedError> {
    gen_bam(width, BamConfig::EXACT)
}

/// Broken array multiplier. Operand `a` occupies inputs `0..width`, operand
/// `b` inputs `width..2*width`; partial-product row `r` is `a * b_r`.
pub fn gen_bam(width: u32, cfg: BamConfig) -> Result<CircuitGenome, SeedError> {
    if width == 0 || width > 32 {
        return Err(SeedError::Width(width));
    }
    if cfg.v > 2 * width || cfg.h > width {
        return Err(SeedError::OutOfRange {
            v: cfg.v,
            h: cfg.h,
            v_max: 2 * width,
            h_max: width,
        });
    }
    let w = width as usize;
    let mut b = Builder::new(2 * w);
    let pp = |b: &mut Builder, r: usize, c: usize| {
        if cfg.keeps(r as u32, c as u32) {
            let (x, y) = (b.input(c), b.input(w + r));
            b.and(x, y)
        } else {
            Sig::Zero
        }
    };

    let mut sum = vec![Sig::Zero; 2 * w];
    let mut carry = vec![Sig::Zero; 2 * w + 1];
    for c in 0..w {
        sum[c] = pp(&mut b, 0, c);
    }
    for r in 1..w {
        let mut next = vec![Sig::Zero; 2 * w + 1];
        for c in 0..w {
            let col = r + c;
            let p = pp(&mut b, r, c);
            let (s, co) = b.full_adder(p, sum[col], carry[col]);
            sum[col] = s;
            next[col + 1] = co;
        }
        carry = next;
    }
    // final ripple-carry vector merge
    let mut ripple = Sig::Zero;
    for col in w..2 * w {
        let (s, co) = b.full_adder(sum[col], carry[col], ripple);
        sum[col] = s;
        ripple = co;
    }
    Ok(b.finish(&sum))
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImportError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: undeclared identifier `{name}`")]
    Undeclared { line: usize, name: String },
    #[error("line {line}: `{name}` declared twice")]
    Redeclared { line: usize, name: String },
    #[error("line {line}: wrong operand count for `{op}`")]
    Arity { line: usize, op: String },
    #[error("line {line}: `{name}` already has a driver")]
    DuplicateDriver { line: usize, name: String },
    #[error("`{name}` is used but never driven")]
    Undriven { name: String },
    #[error("combinational cycle through {}", names.join(", "))]
    Cycle { names: Vec<String> },
}

/// A genome imported from a structural document, with its signal names.
#[derive(Clone, Debug)]
pub struct ImportedCircuit {
    pub genome: CircuitGenome,
    pub module: Option<String>,
    /// Signal index of every declared identifier that ended up in the genome.
    pub names: HashMap<String, u32>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Decl {
    Input,
    Output,
    Wire,
}

struct Assign {
    line: usize,
    lhs: String,
    func: GateFunction,
    operands: Vec<String>,
}

fn binary_op(word: &str) -> Option<GateFunction> {
    Some(match word {
        "AND" => GateFunction::And,
        "OR" => GateFunction::Or,
        "XOR" => GateFunction::Xor,
        "NAND" => GateFunction::Nand,
        "NOR" => GateFunction::Nor,
        "XNOR" => GateFunction::Xnor,
        _ => return None,
    })
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '[' || c == ']')
}

/// Imports a flat structural document.
///
/// ```text
/// module m
/// input a0 b0
/// output y0
/// y0 = a0 AND b0
/// endmodule
/// ```
///
/// Statements end at a newline or `;`, may appear in any order, and are
/// one of `w = x OP y`, `w = NOT x` or `w = x`. Declared inputs become
/// primary inputs and declared outputs become primary outputs, both in
/// declaration order.
pub fn import_structural(text: &str) -> Result<ImportedCircuit, ImportError> {
    let mut module = None;
    let mut decls: HashMap<String, Decl> = HashMap::new();
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut assigns: Vec<Assign> = Vec::new();
    let mut driver: HashMap<String, usize> = HashMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let code = raw.split('#').next().unwrap_or("");
        let code = code.split("//").next().unwrap_or("");
        for stmt in code.split(';') {
            let words: Vec<&str> = stmt
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|w| !w.is_empty())
                .collect();
            let Some(&head) = words.first() else { continue };
            match head {
                "module" => {
                    if words.len() != 2 {
                        return Err(ImportError::Syntax {
                            line,
                            msg: "expected `module NAME`".into(),
                        });
                    }
                    module = Some(words[1].to_string());
                }
                "endmodule" => {}
                "input" | "output" | "wire" => {
                    let kind = match head {
                        "input" => Decl::Input,
                        "output" => Decl::Output,
                        _ => Decl::Wire,
                    };
                    for &name in &words[1..] {
                        if !is_ident(name) {
                            return Err(ImportError::Syntax {
                                line,
                                msg: format!("bad identifier `{name}`"),
                            });
                        }
                        if decls.insert(name.to_string(), kind).is_some() {
                            return Err(ImportError::Redeclared {
                                line,
                                name: name.into(),
                            });
                        }
                        match kind {
                            Decl::Input => inputs.push(name.to_string()),
                            Decl::Output => outputs.push(name.to_string()),
                            Decl::Wire => {}
                        }
                    }
                }
                _ => {
                    if words.get(1) != Some(&"=") {
                        return Err(ImportError::Syntax {
                            line,
                            msg: format!("expected `{head} = ...`"),
                        });
                    }
                    let rhs = &words[2..];
                    let (func, operands) = match rhs {
                        [x] => (GateFunction::BufA, vec![*x]),
                        ["NOT", x] => (GateFunction::NotA, vec![*x]),
                        [x, op, y] if binary_op(op).is_some() => (binary_op(op).unwrap(), vec![*x, *y]),
                        _ => {
                            let op = rhs
                                .iter()
                                .find(|w| **w == "NOT" || binary_op(w).is_some())
                                .map(|w| w.to_string());
                            return Err(match op {
                                Some(op) => ImportError::Arity { line, op },
                                None => ImportError::Syntax {
                                    line,
                                    msg: format!("cannot parse `{}`", rhs.join(" ")),
                                },
                            });
                        }
                    };
                    if driver.insert(head.to_string(), assigns.len()).is_some() {
                        return Err(ImportError::DuplicateDriver {
                            line,
                            name: head.into(),
                        });
                    }
                    assigns.push(Assign {
                        line,
                        lhs: head.to_string(),
                        func,
                        operands: operands.into_iter().map(String::from).collect(),
                    });
                }
            }
        }
    }

    for a in &assigns {
        for name in std::iter::once(&a.lhs).chain(&a.operands) {
            if !decls.contains_key(name) {
                return Err(ImportError::Undeclared {
                    line: a.line,
                    name: name.clone(),
                });
            }
        }
        if decls[&a.lhs] == Decl::Input {
            return Err(ImportError::DuplicateDriver {
                line: a.line,
                name: a.lhs.clone(),
            });
        }
        for op in &a.operands {
            if decls[op] != Decl::Input && !driver.contains_key(op) {
                return Err(ImportError::Undriven { name: op.clone() });
            }
        }
    }
    for o in &outputs {
        if !driver.contains_key(o) {
            return Err(ImportError::Undriven { name: o.clone() });
        }
    }

    // Kahn's algorithm, ties broken by statement order
    let mut pending = vec![0usize; assigns.len()];
    let mut users: Vec<Vec<usize>> = vec![Vec::new(); assigns.len()];
    for (k, a) in assigns.iter().enumerate() {
        for op in &a.operands {
            if let Some(&d) = driver.get(op) {
                pending[k] += 1;
                users[d].push(k);
            }
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> = pending
        .iter()
        .enumerate()
        .filter(|(_, &n)| n == 0)
        .map(|(k, _)| Reverse(k))
        .collect();
    let mut names: HashMap<String, u32> = inputs
        .iter()
        .enumerate()
        .map(|(k, n)| (n.clone(), k as u32))
        .collect();
    let mut nodes = Vec::with_capacity(assigns.len());
    while let Some(Reverse(k)) = ready.pop() {
        let a = &assigns[k];
        let src: Vec<u32> = a.operands.iter().map(|o| names[o]).collect();
        let (sa, sb) = (src[0], *src.get(1).unwrap_or(&src[0]));
        names.insert(a.lhs.clone(), (inputs.len() + nodes.len()) as u32);
        nodes.push(Node::new(a.func, sa, sb));
        for &u in &users[k] {
            pending[u] -= 1;
            if pending[u] == 0 {
                ready.push(Reverse(u));
            }
        }
    }
    if nodes.len() != assigns.len() {
        let mut stuck: Vec<String> = assigns
            .iter()
            .enumerate()
            .filter(|(k, _)| pending[*k] > 0)
            .map(|(_, a)| a.lhs.clone())
            .collect();
        stuck.sort();
        return Err(ImportError::Cycle { names: stuck });
    }

    let outs = outputs.iter().map(|o| names[o]).collect();
    let genome = CircuitGenome::new(inputs.len(), nodes, outs).expect("topologically sorted");
    Ok(ImportedCircuit {
        genome,
        module,
        names,
    })
}

#[derive(Debug, Error)]
pub enum ReadCircuitError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{source}")]
    Netlist { path: String, source: ParseError },
    #[error("{path}: {source}")]
    Structural { path: String, source: ImportError },
}

/// Reads a circuit file: `.v` and `.sv` files use the structural grammar,
/// anything else the gate-list format.
pub fn read_circuit(path: &std::path::Path) -> Result<CircuitGenome, ReadCircuitError> {
    let p = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ReadCircuitError::Io { path: p.clone(), source })?;
    match path.extension().and_then(|e| e.to_str()) {
        Some("v" | "sv") => import_structural(&text)
            .map(|c| c.genome)
            .map_err(|source| ReadCircuitError::Structural { path: p, source }),
        _ => parse_netlist(&text).map_err(|source| ReadCircuitError::Netlist { path: p, source }),
    }
}

/// Writes a genome in the structural import grammar. Inputs are named
/// `a0..a7 b0..b7` for 16-input genomes and `x<k>` otherwise; outputs are
/// `y<k>`; every node, active or not, becomes one statement.
pub fn export_structural(genome: &CircuitGenome, module: &str) -> String {
    let n_i = genome.n_inputs();
    let input_name = |k: usize| {
        if n_i == 16 {
            if k < 8 {
                format!("a{k}")
            } else {
                format!("b{}", k - 8)
            }
        } else {
            format!("x{k}")
        }
    };
    // the first output reading a node names that node directly
    let mut owned: BTreeMap<u32, usize> = BTreeMap::new();
    for (k, &o) in genome.outputs().iter().enumerate() {
        if o as usize >= n_i {
            owned.entry(o).or_insert(k);
        }
    }
    let name = |s: u32| -> String {
        if (s as usize) < n_i {
            input_name(s as usize)
        } else if let Some(k) = owned.get(&s) {
            format!("y{k}")
        } else {
            format!("n{s}")
        }
    };

    let mut out = String::new();
    let _ = writeln!(out, "module {module}");
    let ins: Vec<String> = (0..n_i).map(input_name).collect();
    let _ = writeln!(out, "input {}", ins.join(" "));
    let outs: Vec<String> = (0..genome.n_outputs()).map(|k| format!("y{k}")).collect();
    let _ = writeln!(out, "output {}", outs.join(" "));
    let wires: Vec<String> = (0..genome.node_count())
        .map(|k| (n_i + k) as u32)
        .filter(|s| !owned.contains_key(s))
        .map(|s| format!("n{s}"))
        .collect();
    if !wires.is_empty() {
        let _ = writeln!(out, "wire {}", wires.join(" "));
    }
    for (k, node) in genome.nodes().iter().enumerate() {
        let lhs = name((n_i + k) as u32);
        let (a, b) = (name(node.src_a), name(node.src_b));
        let rhs = match node.func {
            GateFunction::BufA => a,
            GateFunction::BufB => b,
            GateFunction::NotA => format!("NOT {a}"),
            GateFunction::NotB => format!("NOT {b}"),
            GateFunction::And => format!("{a} AND {b}"),
            GateFunction::Or => format!("{a} OR {b}"),
            GateFunction::Xor => format!("{a} XOR {b}"),
            GateFunction::Nand => format!("{a} NAND {b}"),
            GateFunction::Nor => format!("{a} NOR {b}"),
            GateFunction::Xnor => format!("{a} XNOR {b}"),
        };
        let _ = writeln!(out, "{lhs} = {rhs}");
    }
    for (k, &o) in genome.outputs().iter().enumerate() {
        if owned.get(&o) != Some(&k) {
            let _ = writeln!(out, "y{k} = {}", name(o));
        }
    }
    out.push_str("endmodule\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netlist::{simulate, simulate_exhaustive, ResponseTable};

    fn bam_model(a: u8, b: u8, cfg: BamConfig) -> u16 {
        let mut acc = 0u32;
        for r in 0..8 {
            for c in 0..8 {
                if cfg.keeps(r, c) && (a >> c) & 1 == 1 && (b >> r) & 1 == 1 {
                    acc += 1 << (r + c);
                }
            }
        }
        acc as u16
    }

    #[test]
    fn exact_small_cases() {
        let g = gen_exact(8).unwrap();
        assert_eq!(g.n_inputs(), 16);
        assert_eq!(g.n_outputs(), 16);
        assert_eq!(simulate(&g, 3, 5), 15);
        assert_eq!(simulate(&g, 255, 255), 65025);
        assert_eq!(simulate(&g, 0, 200), 0);
    }

    #[test]
    fn exact_other_widths() {
        for w in 1..=6u32 {
            let g = gen_exact(w).unwrap();
            for a in 0..1u64 << w {
                for b in 0..1u64 << w {
                    let v = crate::netlist::simulate_vector(&g, a | b << w);
                    assert_eq!(v, a * b, "w={w} {a}*{b}");
                }
            }
        }
    }

    #[test]
    fn bam_zero_is_exact() {
        assert_eq!(gen_bam(8, BamConfig::new(0, 0)).unwrap(), gen_exact(8).unwrap());
    }

    #[test]
    fn bam_matches_behavioral_model() {
        let cfg = BamConfig::new(5, 3);
        let g = gen_bam(8, cfg).unwrap();
        assert_eq!(simulate(&g, 173, 92), bam_model(173, 92, cfg));
        for cfg in [BamConfig::new(5, 3), BamConfig::new(9, 0), BamConfig::new(0, 4), BamConfig::new(16, 2)] {
            let g = gen_bam(8, cfg).unwrap();
            let t = simulate_exhaustive(&g);
            assert_eq!(t, ResponseTable::from_fn(|a, b| bam_model(a, b, cfg)), "{cfg:?}");
        }
    }

    #[test]
    fn bam_range_checked() {
        assert!(gen_bam(8, BamConfig::new(17, 0)).is_err());
        assert!(gen_bam(8, BamConfig::new(0, 9)).is_err());
        assert!(gen_bam(8, BamConfig::new(16, 8)).is_ok());
    }

    #[test]
    fn import_single_gate() {
        let c = import_structural("input a0 b0\noutput y0\ny0 = a0 AND b0\n").unwrap();
        assert_eq!(c.genome.node_count(), 1);
        assert_eq!(c.genome.nodes()[0], Node::new(GateFunction::And, 0, 1));
        assert_eq!(c.genome.outputs(), &[2]);
        assert_eq!(c.names["y0"], 2);
    }

    #[test]
    fn import_errors() {
        let cycle = "input a0 b0; output y; wire w1 w2; w1 = w2 AND a0; w2 = w1 OR b0; y = w1";
        assert_eq!(
            import_structural(cycle).unwrap_err(),
            ImportError::Cycle {
                names: vec!["w1".into(), "w2".into(), "y".into()]
            }
        );
        assert!(matches!(
            import_structural("input a; output y; y = a AND q").unwrap_err(),
            ImportError::Undeclared { .. }
        ));
        assert!(matches!(
            import_structural("input a b; output y; y = a AND").unwrap_err(),
            ImportError::Arity { .. }
        ));
        assert!(matches!(
            import_structural("input a b; output y; y = NOT a b").unwrap_err(),
            ImportError::Arity { .. }
        ));
        assert!(matches!(
            import_structural("input a b; output y; y = a; y = b").unwrap_err(),
            ImportError::DuplicateDriver { .. }
        ));
        assert!(matches!(
            import_structural("input a b; output y; a = b; y = a").unwrap_err(),
            ImportError::DuplicateDriver { .. }
        ));
        assert!(matches!(
            import_structural("input a b; output y; wire w; y = w AND a").unwrap_err(),
            ImportError::Undriven { .. }
        ));
        assert!(matches!(
            import_structural("input a b; output y; y = a MUX b").unwrap_err(),
            ImportError::Syntax { .. }
        ));
    }

    #[test]
    fn export_import_preserves_function() {
        let g = gen_bam(8, BamConfig::new(5, 3)).unwrap();
        let doc = export_structural(&g, "bam_v5_h3");
        let back = import_structural(&doc).unwrap();
        assert_eq!(back.module.as_deref(), Some("bam_v5_h3"));
        assert_eq!(simulate_exhaustive(&back.genome), simulate_exhaustive(&g));
        let exact = gen_exact(8).unwrap();
        let back = import_structural(&export_structural(&exact, "exact8")).unwrap();
        assert_eq!(back.genome.node_count(), exact.node_count());
    }
}
