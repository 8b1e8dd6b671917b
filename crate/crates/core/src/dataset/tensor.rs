// SPDX-License-Identifier: Apache-2.0

//! Grayscale pair tensors for external image models.
//!
//! File layout (little-endian): `OBFT`, version byte `1`, `u32` sample
//! count, `u16` height, `u16` width, `u8` channel count (2), then for each
//! sample the seed grid followed by the suspect grid, row-major bytes.
//! Both grids of a pair share one scale, `max(1, max |cell|)` over the two
//! maps. Masked cells are written as 128.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{CircuitLibrary, DatasetError, DatasetManifest, PairMaps, SamplePair, Split, SwapCode};
use crate::metrics::SIDE;

pub const TENSOR_MAGIC: &[u8; 4] = b"OBFT";
const VERSION: u8 = 1;
const CHANNELS: u8 = 2;
const HEADER_LEN: usize = 4 + 1 + 4 + 2 + 2 + 1;
const INDEX_HEADER: &str = "idx,label,seed_id,suspect_id,swap_code";

/// Seed grid then suspect grid under their joint scale.
pub fn pair_gray(maps: &PairMaps) -> Vec<u8> {
    let scale = maps.seed.max_abs().max(maps.suspect.max_abs()).max(1);
    let mut out = maps.seed.to_gray(scale);
    out.extend(maps.suspect.to_gray(scale));
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExportSummary {
    /// (split name, sample count, tensor path, index path).
    pub files: Vec<(String, usize, PathBuf, PathBuf)>,
}

fn write_header(out: &mut impl Write, n: usize) -> std::io::Result<()> {
    out.write_all(TENSOR_MAGIC)?;
    out.write_all(&[VERSION])?;
    out.write_all(&(n as u32).to_le_bytes())?;
    out.write_all(&(SIDE as u16).to_le_bytes())?;
    out.write_all(&(SIDE as u16).to_le_bytes())?;
    out.write_all(&[CHANNELS])
}

fn write_split(
    lib: &CircuitLibrary,
    samples: &[&SamplePair],
    tensor_path: &Path,
    index_path: &Path,
) -> Result<(), DatasetError> {
    let mut t = BufWriter::new(File::create(tensor_path)?);
    let mut ix = BufWriter::new(File::create(index_path)?);
    write_header(&mut t, samples.len())?;
    writeln!(ix, "{INDEX_HEADER}")?;
    for (k, p) in samples.iter().enumerate() {
        t.write_all(&pair_gray(&p.maps(lib)?))?;
        writeln!(ix, "{k},{},{},{},{}", p.label as u8, p.seed_id, p.suspect_id, p.swap)?;
    }
    t.flush()?;
    ix.flush()?;
    Ok(())
}

/// Writes `<split>.obft` and `<split>.index.csv` per split into `dir`, or a
/// single `all` pair when the manifest is unsplit.
pub fn export_tensors(manifest: &DatasetManifest, lib: &CircuitLibrary, dir: &Path) -> Result<ExportSummary, DatasetError> {
    fs::create_dir_all(dir)?;
    let parts: Vec<(String, Vec<&SamplePair>)> = match &manifest.splits {
        None => vec![("all".to_string(), manifest.samples.iter().collect())],
        Some(_) => Split::ALL.iter().map(|&s| (s.name().to_string(), manifest.subset(s))).collect(),
    };
    let mut files = Vec::new();
    for (name, samples) in parts {
        let tp = dir.join(format!("{name}.obft"));
        let ip = dir.join(format!("{name}.index.csv"));
        write_split(lib, &samples, &tp, &ip)?;
        files.push((name, samples.len(), tp, ip));
    }
    Ok(ExportSummary { files })
}

/// Contents of one tensor file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorFile {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl TensorFile {
    /// Channel `c` of sample `k`.
    pub fn grid(&self, k: usize, c: usize) -> &[u8] {
        let plane = self.height * self.width;
        let start = (k * self.channels + c) * plane;
        &self.data[start..start + plane]
    }
}

pub fn read_tensors(path: &Path) -> Result<TensorFile, DatasetError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| DatasetError::Format(format!("{}: {m}", path.display()));
    if bytes.len() < HEADER_LEN || &bytes[..4] != TENSOR_MAGIC {
        return Err(bad("missing OBFT magic"));
    }
    if bytes[4] != VERSION {
        return Err(bad("unsupported version"));
    }
    let count = u32::from_le_bytes(bytes[5..9].try_into().expect("4 bytes")) as usize;
    let height = u16::from_le_bytes([bytes[9], bytes[10]]) as usize;
    let width = u16::from_le_bytes([bytes[11], bytes[12]]) as usize;
    let channels = bytes[13] as usize;
    let data = bytes.split_off(HEADER_LEN);
    if data.len() != count * channels * height * width {
        return Err(bad("payload size does not match header"));
    }
    Ok(TensorFile {
        count,
        height,
        width,
        channels,
        data,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IndexRow {
    pub idx: usize,
    pub label: bool,
    pub seed_id: String,
    pub suspect_id: String,
    pub swap: SwapCode,
}

pub fn read_index(path: &Path) -> Result<Vec<IndexRow>, DatasetError> {
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if n == 0 && line.trim() == INDEX_HEADER || line.trim().is_empty() {
            continue;
        }
        let bad = || DatasetError::Format(format!("{}:{}: malformed index row", path.display(), n + 1));
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 5 {
            return Err(bad());
        }
        rows.push(IndexRow {
            idx: f[0].parse().map_err(|_| bad())?,
            label: match f[1] {
                "0" => false,
                "1" => true,
                _ => return Err(bad()),
            },
            seed_id: f[2].to_string(),
            suspect_id: f[3].to_string(),
            swap: f[4].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}
