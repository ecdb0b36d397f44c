//! Dataset synthesis, file formats and seed derivation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use cfuq_core::molgraph::parse_smiles;
use cfuq_core::oracle::{default_seeds, generate_dataset, LabeledSample};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetConfig, DatasetSource};

pub const DATASET_SCHEMA: &str = "cfuq.dataset.v1";

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Format {
        path: String,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Synthesis(#[from] cfuq_core::oracle::DatasetError),
    #[error("dataset is empty")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    #[serde(default)]
    pub schema: Option<String>,
    pub smiles: String,
    pub y: f64,
}

/// One step of the splitmix64 generator.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of repetition `rep` (0-based) under `master`.
pub fn repetition_seed(master: u64, rep: usize) -> u64 {
    splitmix64(master.wrapping_add(1 + rep as u64))
}

/// Seed of the synthetic dataset under `master`; shared by all repetitions.
pub fn dataset_seed(master: u64) -> u64 {
    splitmix64(master)
}

/// Independent stream for a named stage inside a repetition.
pub fn stage_seed(rep_seed: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(rep_seed ^ h)
}

pub fn stage_rng(rep_seed: u64, stage: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stage_seed(rep_seed, stage))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Builds or loads the dataset described by `cfg`.
pub fn load_dataset(cfg: &DatasetConfig, master_seed: u64) -> Result<Vec<LabeledSample>, DataError> {
    let data = match cfg.source {
        DatasetSource::Synthetic => {
            let mut rng = ChaCha8Rng::seed_from_u64(dataset_seed(master_seed));
            generate_dataset(&default_seeds(), cfg.size, cfg.max_steps, &mut rng)?
        }
        DatasetSource::Jsonl => read_jsonl(cfg.path.as_deref().expect("validated"))?,
        DatasetSource::Smiles => read_smiles_file(cfg.path.as_deref().expect("validated"))?,
    };
    if data.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(data)
}

pub fn write_jsonl(samples: &[LabeledSample], path: &Path) -> Result<(), DataError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for s in samples {
        let row = DatasetRow {
            schema: Some(DATASET_SCHEMA.into()),
            smiles: s.smiles().to_string(),
            y: s.y,
        };
        let line = serde_json::to_string(&row).expect("row serialization");
        writeln!(out, "{line}").map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Reads `{smiles, y}` rows; labels are taken from the file.
pub fn read_jsonl(path: &Path) -> Result<Vec<LabeledSample>, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let fmt = |message: String| DataError::Format {
            path: path.display().to_string(),
            line: idx + 1,
            message,
        };
        let row: DatasetRow = serde_json::from_str(&line).map_err(|e| fmt(e.to_string()))?;
        let graph = parse_smiles(&row.smiles).map_err(|e| fmt(e.to_string()))?;
        out.push(LabeledSample { graph, y: row.y });
    }
    Ok(out)
}

/// Reads one SMILES per line (blank lines and `#` comments skipped) and
/// labels every molecule with the oracle.
pub fn read_smiles_file(path: &Path) -> Result<Vec<LabeledSample>, DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let s = line.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let graph = parse_smiles(s).map_err(|e| DataError::Format {
            path: path.display().to_string(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(LabeledSample::from_graph(graph));
    }
    Ok(out)
}
