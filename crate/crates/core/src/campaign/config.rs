// SPDX-License-Identifier: Apache-2.0

//! Flat `key = value` campaign configuration.
//!
//! ```text
//! # obfuscation campaign
//! output      = runs
//! rng_seed    = 42
//! taus        = 0.01, 0.02, 0.05
//! metric_sets = wce+mae+ep; wce
//! runs        = 5
//! gmax        = 15000
//! lambda      = 1
//! h           = 1
//! workers     = 0
//! seed = bam 5 3
//! seed = exact
//! seed = import evo circuits/evo_w256.v
//! seed = netlist custom circuits/mine.gl
//! ```
//!
//! `seed` may repeat; every other key may appear once. Relative paths are
//! resolved against the configuration file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::metrics::Metric;
use crate::netlist::{parse_netlist, CircuitGenome};
use crate::obfuscate::ObfuscationConfig;
use crate::seeds::{gen_bam, gen_exact, import_structural, BamConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("seed `{id}`: {msg}")]
    Seed { id: String, msg: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SeedSpec {
    Exact,
    Bam { v: u32, h: u32 },
    /// Structural (assign-style) document.
    Import { family: String, path: PathBuf },
    /// Gate-list document.
    Netlist { family: String, path: PathBuf },
}

impl SeedSpec {
    pub fn id(&self) -> String {
        match self {
            SeedSpec::Exact => "exact".into(),
            SeedSpec::Bam { v, h } => BamConfig::new(*v, *h).id(),
            SeedSpec::Import { path, .. } | SeedSpec::Netlist { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "seed".into()),
        }
    }

    pub fn family(&self) -> String {
        match self {
            SeedSpec::Exact => "exact".into(),
            SeedSpec::Bam { .. } => "bam".into(),
            SeedSpec::Import { family, .. } | SeedSpec::Netlist { family, .. } => family.clone(),
        }
    }

    /// Builds or reads the seed genome.
    pub fn load(&self) -> Result<CircuitGenome, ConfigError> {
        let seed_err = |msg: String| ConfigError::Seed { id: self.id(), msg };
        let read = |p: &Path| {
            fs::read_to_string(p).map_err(|e| ConfigError::Io {
                path: p.display().to_string(),
                source: e,
            })
        };
        match self {
            SeedSpec::Exact => gen_exact(8).map_err(|e| seed_err(e.to_string())),
            SeedSpec::Bam { v, h } => gen_bam(8, BamConfig::new(*v, *h)).map_err(|e| seed_err(e.to_string())),
            SeedSpec::Import { path, .. } => import_structural(&read(path)?)
                .map(|c| c.genome)
                .map_err(|e| seed_err(e.to_string())),
            SeedSpec::Netlist { path, .. } => parse_netlist(&read(path)?).map_err(|e| seed_err(e.to_string())),
        }
        .and_then(|g| {
            if g.n_inputs() != 16 || g.n_outputs() != 16 {
                Err(seed_err(format!("expected 16 inputs and 16 outputs, got {} and {}", g.n_inputs(), g.n_outputs())))
            } else {
                Ok(g)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CampaignConfig {
    pub seeds: Vec<SeedSpec>,
    pub taus: Vec<f64>,
    pub metric_sets: Vec<Vec<Metric>>,
    pub runs: usize,
    pub search: ObfuscationConfig,
    pub output: PathBuf,
    pub rng_seed: u64,
    /// Worker threads for independent runs; 0 uses every core.
    pub workers: usize,
}

pub fn metric_set_label(set: &[Metric]) -> String {
    set.iter().map(|m| m.name()).collect::<Vec<_>>().join("+")
}

pub fn parse_metric_set(s: &str) -> Result<Vec<Metric>, String> {
    let mut set = s
        .split(['+', ','])
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(str::parse)
        .collect::<Result<Vec<Metric>, _>>()?;
    set.sort();
    set.dedup();
    if set.is_empty() {
        return Err("empty metric set".into());
    }
    Ok(set)
}

impl CampaignConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut seeds = Vec::new();
        let mut taus = None;
        let mut metric_sets = None;
        let mut runs = None;
        let mut search = ObfuscationConfig::default();
        let mut output = None;
        let mut rng_seed = None;
        let mut workers = None;
        let mut seen: Vec<String> = Vec::new();

        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let syntax = |msg: String| ConfigError::Syntax { line: line_no, msg };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(syntax(format!("expected `key = value`, got `{line}`")));
            };
            let (key, value) = (key.trim(), value.trim());
            if key != "seed" {
                if seen.iter().any(|k| k == key) {
                    return Err(syntax(format!("duplicate key `{key}`")));
                }
                seen.push(key.to_string());
            }
            let int = |v: &str| v.parse::<u64>().map_err(|_| syntax(format!("`{key}` expects an integer, got `{v}`")));
            match key {
                "seed" => seeds.push(parse_seed(value, base_dir).map_err(syntax)?),
                "taus" => {
                    let t = value
                        .split(',')
                        .map(|v| v.trim().parse::<f64>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| syntax(format!("bad tau list `{value}`")))?;
                    taus = Some(t);
                }
                "metric_sets" => {
                    let sets = value
                        .split(';')
                        .map(parse_metric_set)
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(syntax)?;
                    metric_sets = Some(sets);
                }
                "runs" => runs = Some(int(value)? as usize),
                "gmax" => search.g_max = int(value)?,
                "lambda" => search.lambda = int(value)? as usize,
                "h" => search.h = int(value)? as usize,
                "rng_seed" => rng_seed = Some(int(value)?),
                "workers" => workers = Some(int(value)? as usize),
                "output" => output = Some(base_dir.join(value)),
                other => return Err(syntax(format!("unknown key `{other}`"))),
            }
        }

        let cfg = Self {
            seeds,
            taus: taus.unwrap_or_else(|| vec![0.01, 0.02, 0.05]),
            metric_sets: metric_sets.unwrap_or_else(|| vec![Metric::ALL.to_vec()]),
            runs: runs.unwrap_or(5),
            search,
            output: output.unwrap_or_else(|| base_dir.join("campaign")),
            rng_seed: rng_seed.unwrap_or(0),
            workers: workers.unwrap_or(0),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.seeds.is_empty() {
            return invalid("at least one seed is required".into());
        }
        if self.taus.is_empty() || self.taus.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return invalid(format!("taus must be a non-empty list of non-negative numbers, got {:?}", self.taus));
        }
        if self.runs == 0 {
            return invalid("runs must be at least 1".into());
        }
        let mut ids: Vec<String> = self.seeds.iter().map(SeedSpec::id).collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return invalid(format!("seed id `{}` appears twice", w[0]));
        }
        self.search
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// `|seeds| * |taus| * |metric sets| * runs`.
    pub fn run_count(&self) -> usize {
        self.seeds.len() * self.taus.len() * self.metric_sets.len() * self.runs
    }
}

fn parse_seed(value: &str, base_dir: &Path) -> Result<SeedSpec, String> {
    let f: Vec<&str> = value.split_whitespace().collect();
    let num = |s: &str| s.parse::<u32>().map_err(|_| format!("bad BAM parameter `{s}`"));
    match f.as_slice() {
        ["exact"] => Ok(SeedSpec::Exact),
        ["bam", v, h] => Ok(SeedSpec::Bam { v: num(v)?, h: num(h)? }),
        ["import", family, path] => Ok(SeedSpec::Import {
            family: family.to_string(),
            path: base_dir.join(path),
        }),
        ["netlist", family, path] => Ok(SeedSpec::Netlist {
            family: family.to_string(),
            path: base_dir.join(path),
        }),
        _ => Err(format!("bad seed spec `{value}` (expected `exact`, `bam V H`, `import FAMILY PATH` or `netlist FAMILY PATH`)")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# two seeds
output = out
rng_seed = 7
taus = 0.01, 0.05
metric_sets = wce+mae+ep; wce
runs = 3
gmax = 200
seed = bam 5 3
seed = exact   # trailing comment
";

    #[test]
    fn parses_sample() {
        let c = CampaignConfig::parse(SAMPLE, Path::new("/base")).unwrap();
        assert_eq!(c.seeds, vec![SeedSpec::Bam { v: 5, h: 3 }, SeedSpec::Exact]);
        assert_eq!(c.taus, vec![0.01, 0.05]);
        assert_eq!(c.metric_sets, vec![vec![Metric::Wce, Metric::Mae, Metric::Ep], vec![Metric::Wce]]);
        assert_eq!(c.run_count(), 2 * 2 * 2 * 3);
        assert_eq!(c.search.g_max, 200);
        assert_eq!(c.search.lambda, 1);
        assert_eq!(c.output, Path::new("/base/out"));
        assert_eq!(c.rng_seed, 7);
        assert_eq!(c.seeds[0].id(), "bam_v5_h3");
        assert_eq!(metric_set_label(&c.metric_sets[0]), "wce+mae+ep");
    }

    #[test]
    fn reports_line_numbers() {
        let err = CampaignConfig::parse("runs = 2\nbogus line\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }), "{err}");
        let err = CampaignConfig::parse("runs = 2\nruns = 3\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 2, .. }));
        let err = CampaignConfig::parse("seed = bam x 1\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { line: 1, .. }));
        assert!(matches!(CampaignConfig::parse("runs = 2\n", Path::new(".")), Err(ConfigError::Invalid(_))));
        assert!(CampaignConfig::parse("seed = exact\nruns = 0\n", Path::new(".")).is_err());
        assert!(CampaignConfig::parse("seed = exact\nseed = exact\n", Path::new(".")).is_err());
        assert!(CampaignConfig::parse("seed = exact\nmetric_sets = wce; foo\n", Path::new(".")).is_err());
    }

    #[test]
    fn seed_ids_and_loading() {
        let s = SeedSpec::Import {
            family: "evo".into(),
            path: PathBuf::from("a/b/evo_w64.v"),
        };
        assert_eq!((s.id(), s.family()), ("evo_w64".to_string(), "evo".to_string()));
        assert_eq!(SeedSpec::Exact.load().unwrap().node_count(), 320);
        assert!(matches!(s.load(), Err(ConfigError::Io { .. })));
    }
}
