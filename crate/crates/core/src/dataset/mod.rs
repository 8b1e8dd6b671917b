// SPDX-License-Identifier: Apache-2.0

//! Labeled heat-map pairs for detector training.
//!
//! Circuits live once in a [`CircuitLibrary`] with their heat maps and
//! metrics; samples only reference them by id. A pair is positive when the
//! suspect was obfuscated from the paired seed.

mod tensor;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{heatmap, ErrorMetrics, HeatMap};
use crate::netlist::{simulate_exhaustive, CircuitGenome};
use crate::par;

pub use tensor::{export_tensors, pair_gray, read_index, read_tensors, ExportSummary, IndexRow, TensorFile, TENSOR_MAGIC};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("duplicate circuit id `{0}`")]
    DuplicateId(String),
    #[error("unknown circuit id `{0}`")]
    UnknownId(String),
    #[error("obfuscated circuit `{suspect}` names `{seed}`, which is not a seed")]
    NotASeed { suspect: String, seed: String },
    #[error("only {available} eligible negative seeds for `{suspect}`, need {needed}")]
    TooFewSeeds { suspect: String, available: usize, needed: usize },
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    Fractions([f64; 3]),
    #[error("cannot split {groups} seed groups into {fractions:?} within 3%: achieved {achieved:?}")]
    SplitInfeasible {
        groups: usize,
        fractions: [f64; 3],
        achieved: [f64; 3],
    },
    #[error("bad tensor file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "lowercase")]
pub enum Role {
    Seed,
    Obfuscated { seed: String },
}

#[derive(Clone, Debug)]
pub struct LibraryEntry {
    pub id: String,
    pub family: String,
    pub role: Role,
    pub map: HeatMap,
    pub metrics: ErrorMetrics,
}

/// Circuit description handed to [`CircuitLibrary::build`].
#[derive(Clone, Debug)]
pub struct CircuitSource {
    pub id: String,
    pub family: String,
    pub role: Role,
    pub genome: CircuitGenome,
}

/// Heat maps and metrics of every seed and obfuscated circuit, by id.
#[derive(Clone, Debug, Default)]
pub struct CircuitLibrary {
    entries: Vec<LibraryEntry>,
    index: HashMap<String, usize>,
}

impl CircuitLibrary {
    /// Simulates every circuit (in parallel) and checks references.
    pub fn build(sources: Vec<CircuitSource>) -> Result<Self, DatasetError> {
        let maps = par::map(&sources, |s| heatmap(&simulate_exhaustive(&s.genome)));
        let mut lib = Self::default();
        for (s, map) in sources.into_iter().zip(maps) {
            lib.insert(s.id, s.family, s.role, map)?;
        }
        lib.check_roles()?;
        Ok(lib)
    }

    pub fn insert(&mut self, id: String, family: String, role: Role, map: HeatMap) -> Result<(), DatasetError> {
        if self.index.contains_key(&id) {
            return Err(DatasetError::DuplicateId(id));
        }
        let metrics = crate::metrics::error_metrics(&map).expect("library maps are fully observed");
        self.index.insert(id.clone(), self.entries.len());
        self.entries.push(LibraryEntry {
            id,
            family,
            role,
            map,
            metrics,
        });
        Ok(())
    }

    /// Every obfuscated entry must name a seed entry.
    pub fn check_roles(&self) -> Result<(), DatasetError> {
        for e in &self.entries {
            if let Role::Obfuscated { seed } = &e.role {
                match self.get(seed) {
                    Some(s) if s.role == Role::Seed => {}
                    Some(_) => {
                        return Err(DatasetError::NotASeed {
                            suspect: e.id.clone(),
                            seed: seed.clone(),
                        })
                    }
                    None => return Err(DatasetError::UnknownId(seed.clone())),
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&LibraryEntry> {
        self.index.get(id).map(|&k| &self.entries[k])
    }

    pub fn entry(&self, id: &str) -> Result<&LibraryEntry, DatasetError> {
        self.get(id).ok_or_else(|| DatasetError::UnknownId(id.to_string()))
    }

    pub fn entries(&self) -> &[LibraryEntry] {
        &self.entries
    }

    pub fn seeds(&self) -> impl Iterator<Item = &LibraryEntry> {
        self.entries.iter().filter(|e| e.role == Role::Seed)
    }

    pub fn obfuscated(&self) -> impl Iterator<Item = &LibraryEntry> {
        self.entries.iter().filter(|e| matches!(e.role, Role::Obfuscated { .. }))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Which side(s) of a pair are transposed: bit 1 the seed map, bit 0 the
/// suspect map. Displays as two digits, seed first.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SwapCode(pub u8);

impl SwapCode {
    pub const ALL: [SwapCode; 4] = [SwapCode(0), SwapCode(1), SwapCode(2), SwapCode(3)];

    pub fn seed_transposed(self) -> bool {
        self.0 & 2 != 0
    }

    pub fn suspect_transposed(self) -> bool {
        self.0 & 1 != 0
    }

    pub fn compose(self, other: SwapCode) -> SwapCode {
        SwapCode((self.0 ^ other.0) & 3)
    }
}

impl fmt::Display for SwapCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.seed_transposed() as u8, self.suspect_transposed() as u8)
    }
}

impl FromStr for SwapCode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "00" => Ok(SwapCode(0)),
            "01" => Ok(SwapCode(1)),
            "10" => Ok(SwapCode(2)),
            "11" => Ok(SwapCode(3)),
            _ => Err(format!("invalid swap code `{s}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Validation,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Test, Split::Validation];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Validation => "validation",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "validation" | "val" => Ok(Split::Validation),
            _ => Err(format!("unknown split `{s}`")),
        }
    }
}

/// A labeled (seed, suspect) reference pair.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SamplePair {
    pub seed_id: String,
    pub suspect_id: String,
    pub label: bool,
    pub swap: SwapCode,
    /// True seed of the suspect; the unit of split assignment.
    pub group: String,
}

/// Heat maps of a pair with its swap variant applied.
pub struct PairMaps {
    pub seed: HeatMap,
    pub suspect: HeatMap,
}

impl SamplePair {
    pub fn maps(&self, lib: &CircuitLibrary) -> Result<PairMaps, DatasetError> {
        let side = |id: &str, t: bool| -> Result<HeatMap, DatasetError> {
            let m = &lib.entry(id)?.map;
            Ok(if t { m.transpose() } else { m.clone() })
        };
        Ok(PairMaps {
            seed: side(&self.seed_id, self.swap.seed_transposed())?,
            suspect: side(&self.suspect_id, self.swap.suspect_transposed())?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub samples: Vec<SamplePair>,
    /// Parallel to `samples` once [`split`] has run.
    pub splits: Option<Vec<Split>>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// (positives, negatives).
    pub fn class_counts(&self) -> (usize, usize) {
        let pos = self.samples.iter().filter(|s| s.label).count();
        (pos, self.samples.len() - pos)
    }

    pub fn split_of(&self, k: usize) -> Option<Split> {
        self.splits.as_ref().map(|s| s[k])
    }

    /// Samples assigned to `which`; all samples when unsplit and `which` is train.
    pub fn subset(&self, which: Split) -> Vec<&SamplePair> {
        match &self.splits {
            None if which == Split::Train => self.samples.iter().collect(),
            None => Vec::new(),
            Some(s) => self.samples.iter().zip(s).filter(|(_, &t)| t == which).map(|(p, _)| p).collect(),
        }
    }

    pub fn split_sizes(&self) -> BTreeMap<Split, usize> {
        let mut out: BTreeMap<Split, usize> = Split::ALL.iter().map(|&s| (s, 0)).collect();
        if let Some(s) = &self.splits {
            for t in s {
                *out.get_mut(t).expect("all splits present") += 1;
            }
        }
        out
    }
}

/// One positive and `negatives_per` negatives per obfuscated circuit.
/// Negatives draw distinct seeds from every family, skipping the true seed
/// and any seed whose heat map equals it.
pub fn build_baseline(lib: &CircuitLibrary, negatives_per: usize, rng_seed: u64) -> Result<DatasetManifest, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let seeds: Vec<&LibraryEntry> = lib.seeds().collect();
    let mut samples = Vec::new();
    for suspect in lib.obfuscated() {
        let Role::Obfuscated { seed: true_id } = &suspect.role else { unreachable!() };
        let true_seed = lib.entry(true_id)?;
        let eligible: Vec<&LibraryEntry> = seeds
            .iter()
            .copied()
            .filter(|s| s.id != true_seed.id && s.map != true_seed.map)
            .collect();
        if eligible.len() < negatives_per {
            return Err(DatasetError::TooFewSeeds {
                suspect: suspect.id.clone(),
                available: eligible.len(),
                needed: negatives_per,
            });
        }
        let pair = |seed: &LibraryEntry, label: bool| SamplePair {
            seed_id: seed.id.clone(),
            suspect_id: suspect.id.clone(),
            label,
            swap: SwapCode(0),
            group: true_seed.id.clone(),
        };
        samples.push(pair(true_seed, true));
        let mut picks = index::sample(&mut rng, eligible.len(), negatives_per).into_vec();
        picks.sort_unstable();
        samples.extend(picks.into_iter().map(|k| pair(eligible[k], false)));
    }
    Ok(DatasetManifest { samples, splits: None })
}

/// Expands every pair into its four transpose variants, keeping labels and
/// split assignments.
pub fn build_swapped(base: &DatasetManifest) -> DatasetManifest {
    let mut samples = Vec::with_capacity(4 * base.samples.len());
    let mut splits = base.splits.as_ref().map(|_| Vec::with_capacity(4 * base.samples.len()));
    for (k, p) in base.samples.iter().enumerate() {
        for code in SwapCode::ALL {
            samples.push(SamplePair {
                swap: p.swap.compose(code),
                ..p.clone()
            });
            if let Some(s) = splits.as_mut() {
                s.push(base.split_of(k).expect("split present"));
            }
        }
    }
    DatasetManifest { samples, splits }
}

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.634, 0.206, 0.160];
const SPLIT_TOLERANCE: f64 = 0.03;

/// Assigns whole seed groups to train/test/validation so achieved
/// fractions land within 3 percentage points of `fractions`.
pub fn split(manifest: &DatasetManifest, fractions: [f64; 3], rng_seed: u64) -> Result<DatasetManifest, DatasetError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(DatasetError::Fractions(fractions));
    }
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &manifest.samples {
        *sizes.entry(s.group.as_str()).or_default() += 1;
    }
    let mut groups: Vec<(&str, usize)> = sizes.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    groups.shuffle(&mut rng);
    groups.sort_by_key(|g| std::cmp::Reverse(g.1));

    let total = manifest.samples.len() as f64;
    let mut filled = [0usize; 3];
    let mut assignment: HashMap<&str, Split> = HashMap::new();
    for (g, n) in groups.iter().copied() {
        let k = (0..3)
            .filter(|&k| fractions[k] > 0.0)
            .max_by(|&a, &b| {
                let da = fractions[a] * total - filled[a] as f64;
                let db = fractions[b] * total - filled[b] as f64;
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("fractions sum to 1");
        filled[k] += n;
        assignment.insert(g, Split::ALL[k]);
    }
    let achieved = filled.map(|n| if total > 0.0 { n as f64 / total } else { 0.0 });
    if total > 0.0 && (0..3).any(|k| (achieved[k] - fractions[k]).abs() > SPLIT_TOLERANCE) {
        return Err(DatasetError::SplitInfeasible {
            groups: groups.len(),
            fractions,
            achieved,
        });
    }
    let splits = manifest.samples.iter().map(|s| assignment[s.group.as_str()]).collect();
    Ok(DatasetManifest {
        samples: manifest.samples.clone(),
        splits: Some(splits),
    })
}
