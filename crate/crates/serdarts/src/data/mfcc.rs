//! MFCC extraction: Hann-windowed STFT, power spectrum, triangular mel
//! filterbank, log, and an orthonormal DCT-II over the mel axis.
//!
//! The full 128-coefficient DCT makes the map from log-mel energies
//! invertible, which the tests exploit. All DSP runs in f64; the emitted
//! feature matrix is f32.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Feature geometry and DSP parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_frames: usize,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig { n_fft: 2048, hop: 250, n_mels: 128, n_frames: 512, log_floor: 1e-10 }
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular, area-normalized mel filterbank covering 0..Nyquist.
/// Each filter is stored as (first FFT bin, weights).
pub struct MelFilterbank {
    pub filters: Vec<(usize, Vec<f64>)>,
    pub n_bins: usize,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32) -> Self {
        let n_bins = n_fft / 2 + 1;
        let nyquist = sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let points: Vec<f64> =
            (0..n_mels + 2).map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64)).collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;

        let filters = (0..n_mels)
            .map(|m| {
                let (lo, mid, hi) = (points[m], points[m + 1], points[m + 2]);
                let norm = 2.0 / (hi - lo); // area normalization
                let first = (lo / bin_hz).ceil() as usize;
                let last = ((hi / bin_hz).floor() as usize).min(n_bins - 1);
                let weights: Vec<f64> = (first..=last)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f <= mid {
                            (f - lo) / (mid - lo)
                        } else {
                            (hi - f) / (hi - mid)
                        };
                        w.max(0.0) * norm
                    })
                    .collect();
                (first, weights)
            })
            .collect();
        MelFilterbank { filters, n_bins }
    }

    /// Apply to one power spectrum frame.
    fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, (first, weights)) in self.filters.iter().enumerate() {
            let mut acc = 0.0;
            for (i, w) in weights.iter().enumerate() {
                acc += w * power[first + i];
            }
            out[m] = acc;
        }
    }

    /// Row sums; positive and finite for a well-formed bank.
    pub fn row_sums(&self) -> Vec<f64> {
        self.filters.iter().map(|(_, w)| w.iter().sum()).collect()
    }

    /// Total filter weight per FFT bin (coverage diagnostic).
    pub fn bin_coverage(&self) -> Vec<f64> {
        let mut cover = vec![0.0; self.n_bins];
        for (first, weights) in &self.filters {
            for (i, w) in weights.iter().enumerate() {
                cover[first + i] += w;
            }
        }
        cover
    }
}

/// Orthonormal DCT-II along the leading axis of a column-major-by-frame
/// buffer: `out[k] = s_k * sum_n x[n] cos(pi (n + 1/2) k / N)`.
pub fn dct_ortho(input: &[f64], n: usize) -> Vec<f64> {
    let frames = input.len() / n;
    let mut basis = vec![0.0; n * n];
    let scale0 = (1.0 / n as f64).sqrt();
    let scale = (2.0 / n as f64).sqrt();
    for k in 0..n {
        for j in 0..n {
            let s = if k == 0 { scale0 } else { scale };
            basis[k * n + j] =
                s * (std::f64::consts::PI * (j as f64 + 0.5) * k as f64 / n as f64).cos();
        }
    }
    let mut out = vec![0.0; input.len()];
    for t in 0..frames {
        let col = &input[t * n..(t + 1) * n];
        for k in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += basis[k * n + j] * col[j];
            }
            out[t * n + k] = acc;
        }
    }
    out
}

/// Inverse of [`dct_ortho`] (DCT-III with the same normalization).
pub fn idct_ortho(input: &[f64], n: usize) -> Vec<f64> {
    let frames = input.len() / n;
    let mut out = vec![0.0; input.len()];
    let scale0 = (1.0 / n as f64).sqrt();
    let scale = (2.0 / n as f64).sqrt();
    for t in 0..frames {
        let col = &input[t * n..(t + 1) * n];
        for j in 0..n {
            let mut acc = scale0 * col[0];
            for k in 1..n {
                acc += scale
                    * col[k]
                    * (std::f64::consts::PI * (j as f64 + 0.5) * k as f64 / n as f64).cos();
            }
            out[t * n + j] = acc;
        }
    }
    out
}

/// Extract the `[n_mels x n_frames]` MFCC matrix from a waveform.
///
/// Pipeline: center-padded Hann STFT (zero padding), power spectrum, mel
/// filterbank, log with floor, orthonormal DCT-II keeping all coefficients;
/// the time axis is then truncated or zero-padded to exactly `n_frames`.
pub fn mfcc(waveform: &[f32], sample_rate: u32, cfg: &MfccConfig) -> Result<Tensor<f32>> {
    if waveform.is_empty() {
        return Err(Error::Dataset("mfcc: empty waveform".into()));
    }
    if waveform.len() < cfg.n_fft {
        return Err(Error::invalid(
            "mfcc",
            format!("sample rate too low: {} samples cannot fill an n_fft={} window", waveform.len(), cfg.n_fft),
        ));
    }
    let n_fft = cfg.n_fft;
    let half = n_fft / 2;
    let n_bins = half + 1;

    // center padding with zeros
    let mut padded = vec![0.0f64; waveform.len() + n_fft];
    for (i, &s) in waveform.iter().enumerate() {
        padded[half + i] = s as f64;
    }
    let raw_frames = 1 + waveform.len() / cfg.hop;

    // periodic Hann window
    let window: Vec<f64> = (0..n_fft)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * i as f64 / n_fft as f64).cos()))
        .collect();

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n_fft);
    let bank = MelFilterbank::new(cfg.n_mels, n_fft, sample_rate);

    let frames = raw_frames.min(cfg.n_frames);
    let mut log_mel = vec![0.0f64; cfg.n_mels * frames];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0f64; n_bins];
    let mut mel = vec![0.0f64; cfg.n_mels];
    for t in 0..frames {
        let start = t * cfg.hop;
        for i in 0..n_fft {
            buf[i] = Complex64::new(padded[start + i] * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }
        bank.apply(&power, &mut mel);
        for (m, &e) in mel.iter().enumerate() {
            log_mel[t * cfg.n_mels + m] = e.max(cfg.log_floor).ln();
        }
    }

    let cepstra = dct_ortho(&log_mel, cfg.n_mels);

    // [n_mels x n_frames], zero-padding missing frames
    let mut out = vec![0.0f32; cfg.n_mels * cfg.n_frames];
    for t in 0..frames {
        for m in 0..cfg.n_mels {
            out[m * cfg.n_frames + t] = cepstra[t * cfg.n_mels + m] as f32;
        }
    }
    Tensor::from_vec(&[cfg.n_mels, cfg.n_frames], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eight_seconds_at_16k_gives_128x512() {
        let wave = vec![0.25f32; 8 * 16000];
        let m = mfcc(&wave, 16000, &MfccConfig::default()).unwrap();
        assert_eq!(m.shape(), &[128, 512]);
    }

    #[test]
    fn silence_gives_constant_columns() {
        let wave = vec![0.0f32; 8 * 16000];
        let m = mfcc(&wave, 16000, &MfccConfig::default()).unwrap();
        let v = m.to_vec();
        for row in 0..128 {
            let first = v[row * 512];
            for t in 1..512 {
                assert_eq!(v[row * 512 + t], first, "row {row} frame {t}");
            }
        }
    }

    #[test]
    fn deterministic_features() {
        let wave: Vec<f32> =
            (0..8 * 16000).map(|i| (i as f32 * 0.001).sin() * 0.3).collect();
        let a = mfcc(&wave, 16000, &MfccConfig::default()).unwrap().to_vec();
        let b = mfcc(&wave, 16000, &MfccConfig::default()).unwrap().to_vec();
        assert_eq!(a, b);
    }

    #[test]
    fn too_short_input_is_an_error() {
        let wave = vec![0.0f32; 1000];
        assert!(mfcc(&wave, 100, &MfccConfig::default()).is_err());
    }

    #[test]
    fn dct_roundtrip_is_tight() {
        let n = 128;
        let x: Vec<f64> = (0..n * 7).map(|i| ((i * 37 % 101) as f64 - 50.0) / 13.0).collect();
        let back = idct_ortho(&dct_ortho(&x, n), n);
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn filterbank_rows_positive_and_bins_covered() {
        let bank = MelFilterbank::new(128, 2048, 16000);
        for (m, s) in bank.row_sums().iter().enumerate() {
            assert!(s.is_finite() && *s > 0.0, "filter {m} sums to {s}");
        }
        let cover = bank.bin_coverage();
        // every analysis bin above DC carries weight in some filter
        for (k, c) in cover.iter().enumerate().skip(1) {
            assert!(*c > 0.0, "bin {k} uncovered");
        }
    }
}
