//! Audio-to-spectrogram pipeline, dataset container, fold logic, and the
//! synthetic dataset used for desk-scale verification.

use crate::error::{Error, Result};
use crate::optim::Example;
use crate::rng::RngState;
use crate::tensor::{Element, Tensor};

mod container;
mod mfcc;
mod wav;

pub use container::{load_container, save_container, MAGIC};
pub use mfcc::{dct_ortho, idct_ortho, mfcc, MelFilterbank, MfccConfig};
pub use wav::{read_wav_pcm16_mono, write_wav_pcm16_mono};

/// The four emotion classes, in label order.
pub const CLASS_NAMES: [&str; 4] = ["happiness", "sadness", "anger", "neutral"];

/// Spectrogram side length: features are `FEATURE_SIDE x FEATURE_SIDE`.
pub const FEATURE_SIDE: usize = 128;

/// Default utterance length in seconds after padding/truncation.
pub const TARGET_SECONDS: usize = 8;

/// One labelled audio clip.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub waveform: Vec<f32>,
    pub sample_rate: u32,
    /// 0=happiness, 1=sadness, 2=anger, 3=neutral.
    pub label: usize,
    pub speaker_id: String,
}

/// One labelled 128x128 feature matrix plus speaker metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramRecord {
    pub features: Vec<f32>,
    pub label: usize,
    pub speaker_id: String,
}

impl SpectrogramRecord {
    /// View as a training example shaped `[1, 128, 128]`.
    pub fn to_example<S: Element>(&self) -> Example<S> {
        Example {
            features: self.features.iter().map(|&v| S::from_f64(v as f64)).collect(),
            shape: vec![1, FEATURE_SIDE, FEATURE_SIDE],
            label: self.label,
        }
    }
}

/// Convert a slice of records into examples.
pub fn to_examples<S: Element>(records: &[SpectrogramRecord]) -> Vec<Example<S>> {
    records.iter().map(|r| r.to_example()).collect()
}

/// Force the waveform to exactly `target_seconds`: zero-pad short clips at
/// the end, truncate long ones.
pub fn pad_or_truncate(u: &Utterance, target_seconds: usize) -> Result<Utterance> {
    if u.waveform.is_empty() {
        return Err(Error::Dataset("pad_or_truncate: empty waveform".into()));
    }
    let target = target_seconds * u.sample_rate as usize;
    let mut waveform = u.waveform.clone();
    waveform.resize(target, 0.0);
    Ok(Utterance { waveform, ..u.clone() })
}

/// Max-pool the `[128 x 512]` MFCC matrix along time with kernel and stride
/// (1, 4), producing the final `[128 x 128]` spectrogram.
pub fn downsample(m: &Tensor<f32>) -> Result<Tensor<f32>> {
    let cfg = MfccConfig::default();
    if m.shape() != [cfg.n_mels, cfg.n_frames] {
        return Err(Error::ShapeMismatch {
            op: "downsample",
            lhs: m.shape().to_vec(),
            rhs: vec![cfg.n_mels, cfg.n_frames],
        });
    }
    let factor = cfg.n_frames / FEATURE_SIDE;
    let v = m.data();
    let mut out = vec![0.0f32; cfg.n_mels * FEATURE_SIDE];
    for row in 0..cfg.n_mels {
        for t in 0..FEATURE_SIDE {
            let base = row * cfg.n_frames + t * factor;
            let mut best = v[base];
            for j in 1..factor {
                best = best.max(v[base + j]);
            }
            out[row * FEATURE_SIDE + t] = best;
        }
    }
    drop(v);
    Tensor::from_vec(&[cfg.n_mels, FEATURE_SIDE], out)
}

/// Full feature extraction for one utterance: pad/truncate, MFCC,
/// time-axis max-pool.
pub fn extract_features(u: &Utterance) -> Result<SpectrogramRecord> {
    let padded = pad_or_truncate(u, TARGET_SECONDS)?;
    let wide = mfcc(&padded.waveform, padded.sample_rate, &MfccConfig::default())?;
    let narrow = downsample(&wide)?;
    Ok(SpectrogramRecord {
        features: narrow.to_vec(),
        label: u.label,
        speaker_id: u.speaker_id.clone(),
    })
}

// ── Folds ───────────────────────────────────────────────────────────

/// One cross-validation fold: record indices per role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub test_speakers: Vec<String>,
    pub search: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Five speaker-independent folds with a 70/30 search/train split of the
/// non-test records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

pub const NUM_FOLDS: usize = 5;

/// Fraction of non-test records assigned to the search split.
pub const SEARCH_FRACTION_PERCENT: usize = 70;

/// Partition speakers into five groups (sizes differing by at most one) and
/// build each fold: the group's utterances are the test set, the rest are
/// shuffled and split 70/30 into search/train.
pub fn make_folds(records: &[SpectrogramRecord], rng: &mut RngState) -> Result<FoldPlan> {
    // distinct speakers in order of first appearance
    let mut speakers: Vec<String> = Vec::new();
    for r in records {
        if !speakers.contains(&r.speaker_id) {
            speakers.push(r.speaker_id.clone());
        }
    }
    if speakers.len() < NUM_FOLDS {
        return Err(Error::Dataset(format!(
            "need at least {NUM_FOLDS} distinct speakers, got {}",
            speakers.len()
        )));
    }
    rng.shuffle(&mut speakers);
    let n = speakers.len();
    let (base, extra) = (n / NUM_FOLDS, n % NUM_FOLDS);
    let mut groups: Vec<Vec<String>> = Vec::with_capacity(NUM_FOLDS);
    let mut cursor = 0;
    for k in 0..NUM_FOLDS {
        let size = base + usize::from(k < extra);
        groups.push(speakers[cursor..cursor + size].to_vec());
        cursor += size;
    }

    let mut folds = Vec::with_capacity(NUM_FOLDS);
    for group in groups {
        let (mut test, mut rest): (Vec<usize>, Vec<usize>) = (Vec::new(), Vec::new());
        for (i, r) in records.iter().enumerate() {
            if group.contains(&r.speaker_id) {
                test.push(i);
            } else {
                rest.push(i);
            }
        }
        rng.shuffle(&mut rest);
        let search_n = (rest.len() * SEARCH_FRACTION_PERCENT + 50) / 100;
        let (search, train) = rest.split_at(search_n);
        folds.push(Fold {
            test_speakers: group,
            search: search.to_vec(),
            train: train.to_vec(),
            test,
        });
    }
    Ok(FoldPlan { folds })
}

// ── Synthetic dataset ───────────────────────────────────────────────

/// Class-conditional synthetic spectrograms: each class is a band-limited
/// 2D pattern at a distinct spatial frequency, each speaker adds a small
/// fixed offset pattern, and `noise_scale = 1` adds Gaussian noise at
/// roughly 10 dB SNR. Labels are balanced and speakers round-robin.
pub fn synth_dataset(
    n: usize,
    speakers: usize,
    noise_scale: f64,
    rng: &mut RngState,
) -> Result<Vec<SpectrogramRecord>> {
    let classes = CLASS_NAMES.len();
    if n < classes || n % classes != 0 {
        return Err(Error::Dataset(format!(
            "cannot balance {n} records over {classes} classes"
        )));
    }
    if speakers == 0 {
        return Err(Error::Dataset("need at least one speaker".into()));
    }
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % classes;
        let speaker = i % speakers;
        let clean = synth_pattern(label, speaker);
        // scale noise for ~10 dB SNR at noise_scale = 1
        let power = clean.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>()
            / clean.len() as f64;
        let sigma = noise_scale * (power / 10.0).sqrt();
        let features: Vec<f32> =
            clean.iter().map(|&v| v + rng.normal(sigma) as f32).collect();
        records.push(SpectrogramRecord {
            features,
            label,
            speaker_id: format!("spk{speaker}"),
        });
    }
    Ok(records)
}

/// The noiseless pattern for (class, speaker).
pub fn synth_pattern(label: usize, speaker: usize) -> Vec<f32> {
    // distinct spatial frequencies per class on both axes
    const FREQ_T: [f64; 4] = [3.0, 7.0, 12.0, 18.0];
    const FREQ_M: [f64; 4] = [2.0, 5.0, 9.0, 14.0];
    let side = FEATURE_SIDE as f64;
    let tau = std::f64::consts::TAU;
    let mut out = vec![0.0f32; FEATURE_SIDE * FEATURE_SIDE];
    for r in 0..FEATURE_SIDE {
        for c in 0..FEATURE_SIDE {
            let class_part = (tau * FREQ_T[label] * c as f64 / side).sin()
                * (tau * FREQ_M[label] * r as f64 / side).cos();
            let speaker_part =
                (tau * (speaker as f64 + 1.0) * (r as f64 + 2.0 * c as f64) / side).sin();
            out[r * FEATURE_SIDE + c] = (class_part + 0.15 * speaker_part) as f32;
        }
    }
    out
}
