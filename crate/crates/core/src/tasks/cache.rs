//! On-disk dataset cache: raw little-endian f64 arrays plus a JSON sidecar.
//!
//! Labels are stored as f64 with `-1` marking unlabelled frames.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, Targets, TaskSpec};
use crate::error::{Error, Result};
use crate::tensorops::{FrameLabels, SeqBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub spec_hash: String,
    pub spec: TaskSpec,
    /// `(batch, channels, length)` of the inputs.
    pub input_shape: [usize; 3],
    /// `(batch, length)` of the labels.
    pub label_shape: [usize; 2],
    pub dtype: String,
}

/// SHA-256 over the canonical JSON of the spec.
pub fn spec_hash(spec: &TaskSpec) -> Result<String> {
    let json = serde_json::to_vec(spec)?;
    Ok(hex::encode(Sha256::digest(&json)))
}

fn paths(dir: &Path, split: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{split}.inputs.f64le")),
        dir.join(format!("{split}.labels.f64le")),
        dir.join(format!("{split}.json")),
    )
}

fn write_f64s(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    for v in values {
        f.write_all(&v.to_le_bytes())?;
    }
    f.flush()?;
    Ok(())
}

fn read_f64s(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::invalid(format!(
            "{} is not a whole number of f64 values",
            path.display()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Writes one split (`"train"` or `"val"`) of a classification dataset.
pub fn write_dataset(dir: &Path, split: &str, spec: &TaskSpec, data: &Dataset) -> Result<()> {
    let Targets::Classes(labels) = &data.targets else {
        return Err(Error::invalid("only classification datasets can be cached"));
    };
    fs::create_dir_all(dir)?;
    let (inp, lab, side) = paths(dir, split);
    write_f64s(&inp, data.inputs.data().iter().copied())?;
    write_f64s(
        &lab,
        labels.labels().iter().map(|l| l.map_or(-1.0, |v| v as f64)),
    )?;
    let (b, c, t) = data.inputs.shape();
    let sidecar = DatasetSidecar {
        spec_hash: spec_hash(spec)?,
        spec: spec.clone(),
        input_shape: [b, c, t],
        label_shape: [labels.batch(), labels.length()],
        dtype: "f64le".into(),
    };
    fs::write(side, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Reads a cached split; returns `None` if absent or written for a different spec.
pub fn read_dataset(dir: &Path, split: &str, spec: &TaskSpec) -> Result<Option<Dataset>> {
    let (inp, lab, side) = paths(dir, split);
    if !side.exists() {
        return Ok(None);
    }
    let sidecar: DatasetSidecar = serde_json::from_str(&fs::read_to_string(side)?)?;
    if sidecar.spec_hash != spec_hash(spec)? {
        return Ok(None);
    }
    let [b, c, t] = sidecar.input_shape;
    let inputs = SeqBatch::from_vec(b, c, t, read_f64s(&inp)?)?;
    let [lb, lt] = sidecar.label_shape;
    let labels = read_f64s(&lab)?
        .into_iter()
        .map(|v| if v < 0.0 { None } else { Some(v as usize) })
        .collect();
    Ok(Some(Dataset {
        inputs,
        targets: Targets::Classes(FrameLabels::new(lb, lt, labels)?),
    }))
}
