//! The SERC1 dataset container.
//!
//! Layout, bit-exact:
//! - magic bytes `SERC1\n`
//! - one JSON header line:
//!   `{"count":N,"height":128,"width":128,"classes":[...],"records":[{"label":l,"speaker":s},...]}`
//! - `count * 128 * 128` little-endian f32 features in record order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{SpectrogramRecord, CLASS_NAMES, FEATURE_SIDE};

pub const MAGIC: &[u8; 6] = b"SERC1\n";

#[derive(Serialize, Deserialize)]
struct HeaderRecord {
    label: usize,
    speaker: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    count: usize,
    height: usize,
    width: usize,
    classes: Vec<String>,
    records: Vec<HeaderRecord>,
}

/// Write records to a SERC1 file. At least one record is required; labels
/// must be valid class indices and features exactly 128x128 finite values.
pub fn save_container(records: &[SpectrogramRecord], path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::ContainerFormat("cannot save an empty container".into()));
    }
    for (i, r) in records.iter().enumerate() {
        if r.label >= CLASS_NAMES.len() {
            return Err(Error::ContainerFormat(format!(
                "record {i}: label {} out of range ({} classes)",
                r.label,
                CLASS_NAMES.len()
            )));
        }
        if r.features.len() != FEATURE_SIDE * FEATURE_SIDE {
            return Err(Error::ContainerFormat(format!(
                "record {i}: expected {} features, got {}",
                FEATURE_SIDE * FEATURE_SIDE,
                r.features.len()
            )));
        }
        if r.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::ContainerFormat(format!("record {i}: non-finite feature value")));
        }
    }
    let header = Header {
        count: records.len(),
        height: FEATURE_SIDE,
        width: FEATURE_SIDE,
        classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        records: records
            .iter()
            .map(|r| HeaderRecord { label: r.label, speaker: r.speaker_id.clone() })
            .collect(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for r in records {
        for v in &r.features {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a SERC1 file back; `load(save(x))` is bitwise `x`.
pub fn load_container(path: &Path) -> Result<Vec<SpectrogramRecord>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(|_| Error::ContainerFormat("file too short for magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::ContainerFormat(format!("bad magic {magic:?}")));
    }
    let mut header_bytes = Vec::new();
    loop {
        let mut b = [0u8; 1];
        r.read_exact(&mut b).map_err(|_| Error::ContainerFormat("unterminated header line".into()))?;
        if b[0] == b'\n' {
            break;
        }
        header_bytes.push(b[0]);
        if header_bytes.len() > 1 << 24 {
            return Err(Error::ContainerFormat("header line too long".into()));
        }
    }
    let header: Header = serde_json::from_slice(&header_bytes)?;
    if header.height != FEATURE_SIDE || header.width != FEATURE_SIDE {
        return Err(Error::ContainerFormat(format!(
            "unsupported feature shape {}x{}",
            header.height, header.width
        )));
    }
    if header.records.len() != header.count {
        return Err(Error::ContainerFormat(format!(
            "header count {} but {} record entries",
            header.count,
            header.records.len()
        )));
    }
    let expected_classes: Vec<String> = CLASS_NAMES.iter().map(|s| s.to_string()).collect();
    if header.classes != expected_classes {
        return Err(Error::ContainerFormat(format!("unexpected class list {:?}", header.classes)));
    }

    let per_record = FEATURE_SIDE * FEATURE_SIDE;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != header.count * per_record * 4 {
        return Err(Error::ContainerFormat(format!(
            "payload length mismatch: header promises {} bytes, file holds {}",
            header.count * per_record * 4,
            payload.len()
        )));
    }

    let mut records = Vec::with_capacity(header.count);
    for (i, meta) in header.records.into_iter().enumerate() {
        if meta.label >= CLASS_NAMES.len() {
            return Err(Error::ContainerFormat(format!("record {i}: label {} out of range", meta.label)));
        }
        let base = i * per_record * 4;
        let features: Vec<f32> = payload[base..base + per_record * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(SpectrogramRecord { features, label: meta.label, speaker_id: meta.speaker });
    }
    Ok(records)
}
