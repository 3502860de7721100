//! Model checkpoints: a JSON header line describing the run and parameter
//! layout, followed by named parameter blobs as 32-bit little-endian floats.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cell::Genotype;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Fingerprint of the resolved run configuration.
    pub fingerprint: String,
    /// Model kind name (see `ModelKind::name`).
    pub model: String,
    pub genotype: Option<Genotype>,
    /// Fold this checkpoint was trained on, when fold-based.
    pub fold: Option<usize>,
    /// Fingerprint of the dataset container the model was trained against.
    pub dataset_fingerprint: Option<String>,
    pub params: Vec<ParamMeta>,
}

/// Write header + blobs. Parameter order in the header matches blob order.
pub fn save_checkpoint(
    path: &Path,
    mut header: CheckpointHeader,
    named: &[(String, Tensor<f32>)],
) -> Result<()> {
    header.params = named
        .iter()
        .map(|(name, t)| ParamMeta { name: name.clone(), shape: t.shape().to_vec() })
        .collect();
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (_, t) in named {
        for v in t.data().iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read header + blobs back as named buffers.
pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, HashMap<String, Vec<f32>>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header_bytes = Vec::new();
    loop {
        let mut b = [0u8; 1];
        r.read_exact(&mut b).map_err(|_| Error::Checkpoint("missing header line".into()))?;
        if b[0] == b'\n' {
            break;
        }
        header_bytes.push(b[0]);
    }
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;
    let mut blobs = HashMap::new();
    for meta in &header.params {
        let numel: usize = meta.shape.iter().product();
        let mut bytes = vec![0u8; numel * 4];
        r.read_exact(&mut bytes).map_err(|_| {
            Error::Checkpoint(format!("truncated blob for parameter {:?}", meta.name))
        })?;
        let values =
            bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        blobs.insert(meta.name.clone(), values);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after final blob".into()));
    }
    Ok((header, blobs))
}

/// Copy loaded buffers into a freshly built model's named state. Every
/// parameter must be present with the right size.
pub fn apply_state(named: &[(String, Tensor<f32>)], blobs: &HashMap<String, Vec<f32>>) -> Result<()> {
    for (name, t) in named {
        let values = blobs
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("checkpoint missing parameter {name:?}")))?;
        if values.len() != t.numel() {
            return Err(Error::Checkpoint(format!(
                "parameter {name:?}: checkpoint holds {} values, model expects {}",
                values.len(),
                t.numel()
            )));
        }
        t.set_data(values);
    }
    Ok(())
}
