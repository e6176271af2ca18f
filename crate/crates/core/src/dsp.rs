//! Log-spectral subband energy (LSSE) features.
//!
//! Pipeline: Hamming-windowed frames (512 samples, shift 256 at 16 kHz),
//! periodogram PSD `|DFT|²` over the 257 non-negative frequency bins, a bank of
//! 26 triangular mel-spaced filters with unit peak, then `ln` with a floor.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
pub const FRAME_LEN: usize = 512;
pub const FRAME_SHIFT: usize = 256;
pub const NUM_BANDS: usize = 26;
/// Floor applied inside the logarithm so silent frames stay finite.
pub const LOG_FLOOR: f64 = 1e-12;

/// Framing parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameParams {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub frame_shift: usize,
    pub num_bands: usize,
}

impl Default for FrameParams {
    fn default() -> Self {
        FrameParams {
            sample_rate: SAMPLE_RATE,
            frame_len: FRAME_LEN,
            frame_shift: FRAME_SHIFT,
            num_bands: NUM_BANDS,
        }
    }
}

impl FrameParams {
    pub fn check(&self) -> Result<()> {
        if self.frame_len == 0 || !self.frame_len.is_multiple_of(2) {
            return Err(Error::Input(format!(
                "frame_len must be even and positive, got {}",
                self.frame_len
            )));
        }
        if self.frame_shift == 0 || self.frame_shift > self.frame_len {
            return Err(Error::Input(format!(
                "frame_shift must be in 1..={}, got {}",
                self.frame_len, self.frame_shift
            )));
        }
        if self.sample_rate == 0 || self.num_bands == 0 {
            return Err(Error::Input("sample_rate and num_bands must be positive".into()));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// `1 + ⌊(n − frame_len)/frame_shift⌋`, or 1 for shorter non-empty input.
    pub fn num_frames(&self, n: usize) -> usize {
        if n <= self.frame_len {
            1
        } else {
            1 + (n - self.frame_len) / self.frame_shift
        }
    }
}

/// Symmetric Hamming window `0.54 − 0.46·cos(2πn/(N−1))`.
pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let denom = (len - 1) as f64;
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / denom).cos())
        .collect()
}

/// Splits `samples` into overlapping Hamming-windowed frames (T × frame_len).
/// Input shorter than one frame yields a single zero-padded frame.
pub fn frame_signal(samples: &[f64], params: &FrameParams) -> Result<Array2<f64>> {
    params.check()?;
    if samples.is_empty() {
        return Err(Error::Input("cannot frame an empty signal".into()));
    }
    let window = hamming(params.frame_len);
    let t = params.num_frames(samples.len());
    let mut frames = Array2::zeros((t, params.frame_len));
    for (i, mut row) in frames.axis_iter_mut(Axis(0)).enumerate() {
        let start = i * params.frame_shift;
        let end = (start + params.frame_len).min(samples.len());
        for (j, &x) in samples[start..end].iter().enumerate() {
            row[j] = x * window[j];
        }
    }
    Ok(frames)
}

/// Periodogram estimator with a cached FFT plan.
#[derive(Clone)]
pub struct Periodogram {
    fft: Arc<dyn Fft<f64>>,
    len: usize,
}

impl std::fmt::Debug for Periodogram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Periodogram").field("len", &self.len).finish()
    }
}

impl Periodogram {
    pub fn new(frame_len: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(frame_len);
        Periodogram { fft, len: frame_len }
    }

    /// Single-sided `|X_k|²` for `k = 0..=N/2`, DC and Nyquist included.
    pub fn psd(&self, frame: ArrayView1<f64>) -> Result<Array1<f64>> {
        if frame.len() != self.len {
            return Err(Error::Input(format!(
                "frame has {} samples, expected {}",
                frame.len(),
                self.len
            )));
        }
        let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
        self.fft.process(&mut buf);
        Ok(buf[..=self.len / 2].iter().map(|c| c.norm_sqr()).collect())
    }

    /// PSD of every row of a frame matrix (T × (N/2+1)).
    pub fn psd_frames(&self, frames: &Array2<f64>) -> Result<Array2<f64>> {
        let rows: Vec<Array1<f64>> = (0..frames.nrows())
            .into_par_iter()
            .map(|i| self.psd(frames.row(i)))
            .collect::<Result<_>>()?;
        let mut out = Array2::zeros((rows.len(), self.len / 2 + 1));
        for (mut dst, src) in out.axis_iter_mut(Axis(0)).zip(rows) {
            dst.assign(&src);
        }
        Ok(out)
    }
}

/// Periodogram of one frame (length must be 512 for the standard setup).
pub fn periodogram_psd(frame: &[f64]) -> Result<Array1<f64>> {
    Periodogram::new(frame.len()).psd(ArrayView1::from(frame))
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank `h_{b,k}` (B × (n_fft/2+1)), unit peak.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    weights: Array2<f64>,
    edges_hz: Vec<f64>,
}

impl MelFilterbank {
    /// `B + 2` edges uniform in mel over 0 Hz .. Nyquist; filter `b` rises
    /// from edge `b` to `b+1` and falls to `b+2`, sampled at bin centres
    /// `k · sample_rate / n_fft`.
    pub fn new(num_bands: usize, n_fft: usize, sample_rate: u32) -> Result<Self> {
        if num_bands == 0 || n_fft < 2 {
            return Err(Error::Input("filterbank needs B ≥ 1 and n_fft ≥ 2".into()));
        }
        let nyquist = sample_rate as f64 / 2.0;
        let mel_max = hz_to_mel(nyquist);
        let edges_hz: Vec<f64> = (0..num_bands + 2)
            .map(|i| mel_to_hz(mel_max * i as f64 / (num_bands + 1) as f64))
            .collect();
        let bins = n_fft / 2 + 1;
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let mut weights = Array2::zeros((num_bands, bins));
        for b in 0..num_bands {
            let (lo, mid, hi) = (edges_hz[b], edges_hz[b + 1], edges_hz[b + 2]);
            for k in 0..bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                weights[[b, k]] = w;
            }
            if weights.row(b).sum() <= 0.0 {
                return Err(Error::Input(format!(
                    "mel filter {b} ({lo:.1}–{hi:.1} Hz) covers no FFT bin; \
                     {num_bands} bands is too many for n_fft = {n_fft}"
                )));
            }
        }
        Ok(MelFilterbank { weights, edges_hz })
    }

    pub fn standard() -> Self {
        Self::new(NUM_BANDS, FRAME_LEN, SAMPLE_RATE).expect("standard filterbank is valid")
    }

    /// Builds a filterbank directly from a weight matrix (for custom banks).
    pub fn from_weights(weights: Array2<f64>) -> Result<Self> {
        if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
            return Err(Error::Input("filter weights must be finite and non-negative".into()));
        }
        if weights.axis_iter(Axis(0)).any(|r| r.sum() <= 0.0) {
            return Err(Error::Input("every filter needs a positive entry".into()));
        }
        Ok(MelFilterbank {
            weights,
            edges_hz: Vec::new(),
        })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn edges_hz(&self) -> &[f64] {
        &self.edges_hz
    }

    pub fn num_bands(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.weights.ncols()
    }

    /// `Σ_k h_{b,k} · x_k` for every band.
    pub fn apply(&self, spectrum: ArrayView1<f64>) -> Array1<f64> {
        self.weights.dot(&spectrum)
    }
}

/// `X_b = ln(max(Σ_k h_{b,k} P_k, ε))`.
pub fn lsse(psd: ArrayView1<f64>, fb: &MelFilterbank) -> Result<Array1<f64>> {
    if psd.len() != fb.num_bins() {
        return Err(Error::Input(format!(
            "PSD has {} bins, filterbank expects {}",
            psd.len(),
            fb.num_bins()
        )));
    }
    Ok(fb.apply(psd).mapv(|e| e.max(LOG_FLOOR).ln()))
}

/// LSSEs for every row of a PSD matrix.
pub fn lsse_frames(psd: &Array2<f64>, fb: &MelFilterbank) -> Result<Array2<f64>> {
    if psd.ncols() != fb.num_bins() {
        return Err(Error::Input(format!(
            "PSD has {} bins, filterbank expects {}",
            psd.ncols(),
            fb.num_bins()
        )));
    }
    Ok(psd.dot(&fb.weights.t()).mapv(|e| e.max(LOG_FLOOR).ln()))
}

/// T × B matrix of LSSEs.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence(pub Array2<f64>);

impl FeatureSequence {
    pub fn num_frames(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_bands(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }
}

/// Reusable extractor holding the FFT plan and filterbank.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    params: FrameParams,
    periodogram: Periodogram,
    filterbank: MelFilterbank,
}

impl FeatureExtractor {
    pub fn new(params: FrameParams) -> Result<Self> {
        params.check()?;
        Ok(FeatureExtractor {
            periodogram: Periodogram::new(params.frame_len),
            filterbank: MelFilterbank::new(params.num_bands, params.frame_len, params.sample_rate)?,
            params,
        })
    }

    pub fn params(&self) -> &FrameParams {
        &self.params
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// Per-frame periodogram PSDs (T × 257).
    pub fn psd(&self, samples: &[f64]) -> Result<Array2<f64>> {
        let frames = frame_signal(samples, &self.params)?;
        self.periodogram.psd_frames(&frames)
    }

    pub fn features_from_psd(&self, psd: &Array2<f64>) -> Result<FeatureSequence> {
        lsse_frames(psd, &self.filterbank).map(FeatureSequence)
    }

    pub fn extract(&self, samples: &[f64]) -> Result<FeatureSequence> {
        self.features_from_psd(&self.psd(samples)?)
    }
}

/// Frame → periodogram → LSSE.
pub fn extract_features(samples: &[f64], params: &FrameParams) -> Result<FeatureSequence> {
    FeatureExtractor::new(*params)?.extract(samples)
}
