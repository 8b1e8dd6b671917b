// SPDX-License-Identifier: Apache-2.0

//! Line-based gate-list documents.
//!
//! ```text
//! .inputs 16
//! .outputs 16
//! .gate 16 AND2 0 8
//! .out 16 1 2 3 4 5 6 7 8 9 10 11 12 13 14 15
//! ```

use std::fmt::Write as _;

use thiserror::Error;

use super::{CircuitGenome, GateFunction, GenomeError, Node};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}: gate {gate} reads signal {src}, which is not defined before it")]
    ForwardReference { line: usize, gate: u32, src: u32 },
    #[error("{line}: index {index} out of range (limit {limit})")]
    IndexOutOfRange { line: usize, index: u32, limit: u32 },
    #[error("{line}:{col}: unknown gate function `{name}`")]
    UnknownFunction { line: usize, col: usize, name: String },
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Section {
    Start,
    Inputs,
    Outputs,
    Gates,
    Done,
}

struct Token<'a> {
    text: &'a str,
    col: usize,
}

fn tokens(line: &str) -> Vec<Token<'_>> {
    let code = line.split('#').next().unwrap_or("");
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in code.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token {
                    text: &code[s..i],
                    col: s + 1,
                });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token {
            text: &code[s..],
            col: s + 1,
        });
    }
    out
}

fn syntax(line: usize, col: usize, msg: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line,
        col,
        msg: msg.into(),
    }
}

fn number(line: usize, tok: &Token<'_>) -> Result<u32, ParseError> {
    tok.text
        .parse()
        .map_err(|_| syntax(line, tok.col, format!("expected a number, found `{}`", tok.text)))
}

fn arity(line: usize, toks: &[Token<'_>], want: usize) -> Result<(), ParseError> {
    if toks.len() != want {
        let col = toks.get(want).map_or(toks[0].col, |t| t.col);
        return Err(syntax(
            line,
            col,
            format!("`{}` takes {} operand(s)", toks[0].text, want - 1),
        ));
    }
    Ok(())
}

/// Parses a gate-list document into a validated genome.
pub fn parse_netlist(text: &str) -> Result<CircuitGenome, ParseError> {
    let mut section = Section::Start;
    let mut n_inputs = 0u32;
    let mut n_outputs = 0u32;
    let mut nodes = Vec::new();
    let mut outputs = Vec::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let toks = tokens(raw);
        let Some(head) = toks.first() else { continue };
        match head.text {
            ".inputs" => {
                if section != Section::Start {
                    return Err(syntax(line, head.col, "`.inputs` must come first"));
                }
                arity(line, &toks, 2)?;
                n_inputs = number(line, &toks[1])?;
                section = Section::Inputs;
            }
            ".outputs" => {
                if section != Section::Inputs {
                    return Err(syntax(line, head.col, "`.outputs` must follow `.inputs`"));
                }
                arity(line, &toks, 2)?;
                n_outputs = number(line, &toks[1])?;
                section = Section::Outputs;
            }
            ".gate" => {
                if !matches!(section, Section::Outputs | Section::Gates) {
                    return Err(syntax(line, head.col, "`.gate` outside the gate section"));
                }
                section = Section::Gates;
                arity(line, &toks, 5)?;
                let gate = number(line, &toks[1])?;
                let expected = n_inputs + nodes.len() as u32;
                if gate != expected {
                    return Err(syntax(
                        line,
                        toks[1].col,
                        format!("gate index {gate} out of sequence, expected {expected}"),
                    ));
                }
                let func = GateFunction::from_mnemonic(toks[2].text).ok_or_else(|| {
                    ParseError::UnknownFunction {
                        line,
                        col: toks[2].col,
                        name: toks[2].text.to_string(),
                    }
                })?;
                let src_a = number(line, &toks[3])?;
                let src_b = number(line, &toks[4])?;
                for src in [src_a, src_b] {
                    if src >= gate {
                        return Err(ParseError::ForwardReference { line, gate, src });
                    }
                }
                nodes.push(Node::new(func, src_a, src_b));
            }
            ".out" => {
                if !matches!(section, Section::Outputs | Section::Gates) {
                    return Err(syntax(line, head.col, "`.out` before `.outputs`"));
                }
                arity(line, &toks, n_outputs as usize + 1)?;
                let limit = n_inputs + nodes.len() as u32;
                for tok in &toks[1..] {
                    let index = number(line, tok)?;
                    if index >= limit {
                        return Err(ParseError::IndexOutOfRange { line, index, limit });
                    }
                    outputs.push(index);
                }
                section = Section::Done;
            }
            other if section == Section::Done => {
                return Err(syntax(line, head.col, format!("`{other}` after `.out`")));
            }
            other => return Err(syntax(line, head.col, format!("unknown directive `{other}`"))),
        }
    }
    if section != Section::Done {
        return Err(syntax(last_line.max(1), 1, "missing `.out` line"));
    }
    CircuitGenome::new(n_inputs as usize, nodes, outputs).map_err(|e| match e {
        // unreachable in practice: every index was checked while parsing
        GenomeError::ForwardReference { node, src } => ParseError::ForwardReference {
            line: 0,
            gate: n_inputs + node as u32,
            src,
        },
        other => syntax(0, 0, other.to_string()),
    })
}

/// Canonical document: single spaces, ascending gate order, no comments.
pub fn serialize_netlist(genome: &CircuitGenome) -> String {
    let mut out = String::with_capacity(32 * genome.node_count() + 128);
    let n_i = genome.n_inputs();
    let _ = writeln!(out, ".inputs {n_i}");
    let _ = writeln!(out, ".outputs {}", genome.n_outputs());
    for (k, node) in genome.nodes().iter().enumerate() {
        let _ = writeln!(
            out,
            ".gate {} {} {} {}",
            n_i + k,
            node.func.mnemonic(),
            node.src_a,
            node.src_b
        );
    }
    out.push_str(".out");
    for o in genome.outputs() {
        let _ = write!(out, " {o}");
    }
    out.push('\n');
    out
}
