// SPDX-License-Identifier: Apache-2.0

//! Versioned plain-text model documents.
//!
//! ```text
//! axmul-detector 1
//! kind forest
//! trees 2
//! tree 3
//! S 3 14.5 1 2
//! L 1 40
//! L 0 61
//! tree 1
//! L 0.25 8
//! ```
//!
//! `S feature threshold left right` is a split node and `L positive count` a
//! leaf. A CL1 document holds `metric <name>` and `t <window>` instead.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use super::{Cl1Model, Classifier, DecisionTree, DetectError, RandomForest, TreeNode, FEATURES};

const HEADER: &str = "axmul-detector 1";

#[derive(Debug, Error, PartialEq, Eq)]
#[error("model line {line}: {msg}")]
pub struct ModelParseError {
    pub line: usize,
    pub msg: String,
}

fn write_tree(out: &mut String, t: &DecisionTree) {
    writeln!(out, "tree {}", t.nodes.len()).unwrap();
    for n in &t.nodes {
        match *n {
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => writeln!(out, "S {feature} {threshold} {left} {right}").unwrap(),
            TreeNode::Leaf { positive, count } => writeln!(out, "L {positive} {count}").unwrap(),
        }
    }
}

pub fn model_to_text(model: &Classifier) -> String {
    let mut out = format!("{HEADER}\nkind {}\n", model.kind());
    match model {
        Classifier::Cl1(m) => {
            writeln!(out, "metric {}\nt {}", m.metric, m.t).unwrap();
        }
        Classifier::Tree(t) => write_tree(&mut out, t),
        Classifier::Forest(f) => {
            writeln!(out, "trees {}", f.trees.len()).unwrap();
            for t in &f.trees {
                write_tree(&mut out, t);
            }
        }
    }
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, msg: impl Into<String>) -> ModelParseError {
        ModelParseError {
            line: self.last,
            msg: msg.into(),
        }
    }

    fn next_fields(&mut self) -> Result<Vec<&'a str>, ModelParseError> {
        for (n, line) in self.inner.by_ref() {
            self.last = n + 1;
            let line = line.trim();
            if !line.is_empty() && !line.starts_with('#') {
                return Ok(line.split_whitespace().collect());
            }
        }
        Err(self.err("unexpected end of document"))
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str, ModelParseError> {
        let f = self.next_fields()?;
        match f.as_slice() {
            [k, v] if *k == key => Ok(v),
            _ => Err(self.err(format!("expected `{key} <value>`"))),
        }
    }

    fn num<T: std::str::FromStr>(&self, s: &str) -> Result<T, ModelParseError> {
        s.parse().map_err(|_| self.err(format!("bad number `{s}`")))
    }
}

fn read_tree(lines: &mut Lines) -> Result<DecisionTree, ModelParseError> {
    let n: usize = {
        let v = lines.keyed("tree")?;
        lines.num(v)?
    };
    if n == 0 {
        return Err(lines.err("tree without nodes"));
    }
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        let f = lines.next_fields()?;
        let node = match f.as_slice() {
            ["S", feat, thr, l, r] => {
                let node = TreeNode::Split {
                    feature: lines.num(feat)?,
                    threshold: lines.num(thr)?,
                    left: lines.num(l)?,
                    right: lines.num(r)?,
                };
                if let TreeNode::Split { feature, left, right, .. } = node {
                    if feature >= FEATURES || left >= n || right >= n || left <= nodes.len() || right <= nodes.len() {
                        return Err(lines.err("split references an invalid feature or node"));
                    }
                }
                node
            }
            ["L", p, c] => TreeNode::Leaf {
                positive: lines.num(p)?,
                count: lines.num(c)?,
            },
            _ => return Err(lines.err("expected an `S` or `L` node")),
        };
        nodes.push(node);
    }
    Ok(DecisionTree { nodes })
}

pub fn model_from_text(text: &str) -> Result<Classifier, ModelParseError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    if lines.next_fields()?.join(" ") != HEADER {
        return Err(lines.err(format!("missing `{HEADER}` header")));
    }
    let kind = lines.keyed("kind")?;
    let model = match kind {
        "cl1" => {
            let metric = lines.keyed("metric")?;
            let metric = metric.parse().map_err(|e: String| lines.err(e))?;
            let t = lines.keyed("t")?;
            Classifier::Cl1(Cl1Model { metric, t: lines.num(t)? })
        }
        "tree" => Classifier::Tree(read_tree(&mut lines)?),
        "forest" => {
            let k = lines.keyed("trees")?;
            let k: usize = lines.num(k)?;
            if k == 0 {
                return Err(lines.err("forest without trees"));
            }
            let trees = (0..k).map(|_| read_tree(&mut lines)).collect::<Result<_, _>>()?;
            Classifier::Forest(RandomForest { trees })
        }
        other => return Err(lines.err(format!("unknown model kind `{other}`"))),
    };
    if lines.next_fields().is_ok() {
        return Err(lines.err("trailing content"));
    }
    Ok(model)
}

pub fn save_model(model: &Classifier, path: &Path) -> Result<(), DetectError> {
    fs::write(path, model_to_text(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Classifier, DetectError> {
    Ok(model_from_text(&fs::read_to_string(path)?)?)
}
