//! Synthetic speakers and noise sources.
//!
//! A speaker is a harmonic source with its own fundamental, shaped by three
//! second-order resonances ("formants") at speaker-specific frequencies.
//! Utterances are strings of syllables separated by short pauses, with a low
//! broadband noise floor throughout.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Corpus, Speaker, Utterance};
use crate::dsp::SAMPLE_RATE;
use crate::error::{Error, Result};
use crate::seed;

const FS: f64 = SAMPLE_RATE as f64;
const F0_RANGE: (f64, f64) = (80.0, 300.0);
const FORMANT_RANGES: [(f64, f64); 3] = [(300.0, 900.0), (950.0, 2400.0), (2500.0, 3800.0)];
const UTTERANCE_RMS: f64 = 0.05;
/// Floor noise level relative to the utterance RMS.
const FLOOR_DB: f64 = -35.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthCorpusParams {
    pub speakers: usize,
    pub train_per_speaker: usize,
    pub test_per_speaker: usize,
    pub utterance_seconds: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SynthCorpusParams {
    fn default() -> Self {
        SynthCorpusParams {
            speakers: 10,
            train_per_speaker: 3,
            test_per_speaker: 2,
            utterance_seconds: 2.0,
            seed: 0,
        }
    }
}

/// Fixed characteristics of one synthetic talker.
#[derive(Debug, Clone, PartialEq)]
pub struct VoiceProfile {
    pub f0: f64,
    pub formants: [f64; 3],
    pub bandwidths: [f64; 3],
}

impl VoiceProfile {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let log_f0 = rng.random_range(F0_RANGE.0.ln()..F0_RANGE.1.ln());
        VoiceProfile {
            f0: log_f0.exp(),
            formants: FORMANT_RANGES.map(|(lo, hi)| rng.random_range(lo..hi)),
            bandwidths: [0; 3].map(|_| rng.random_range(60.0..130.0)),
        }
    }
}

/// `n` profiles with stratified fundamentals and formants, so that no two
/// talkers share the same stratum in any dimension.
pub fn voice_profiles(n: usize, seed: u64) -> Vec<VoiceProfile> {
    let mut rng = seed::rng(seed::derive_str(seed, "voices"));
    let strata = |rng: &mut ChaCha8Rng| {
        let mut s: Vec<usize> = (0..n).collect();
        s.shuffle(rng);
        s
    };
    let f0_strata = strata(&mut rng);
    let formant_strata: Vec<Vec<usize>> = (0..3).map(|_| strata(&mut rng)).collect();
    let pick = |(lo, hi): (f64, f64), stratum: usize, log: bool, rng: &mut ChaCha8Rng| {
        let u = (stratum as f64 + rng.random_range(0.15..0.85)) / n as f64;
        if log {
            (lo.ln() + u * (hi.ln() - lo.ln())).exp()
        } else {
            lo + u * (hi - lo)
        }
    };
    (0..n)
        .map(|i| {
            let f0 = pick(F0_RANGE, f0_strata[i], true, &mut rng);
            let mut formants = [0.0; 3];
            for (j, f) in formants.iter_mut().enumerate() {
                *f = pick(FORMANT_RANGES[j], formant_strata[j][i], false, &mut rng);
            }
            let bandwidths = [0; 3].map(|_| rng.random_range(60.0..130.0));
            VoiceProfile {
                f0,
                formants,
                bandwidths,
            }
        })
        .collect()
}

/// Magnitude response of a unit-DC-gain two-pole resonator.
fn resonance(f: f64, centre: f64, bandwidth: f64) -> f64 {
    let c2 = centre * centre;
    c2 / ((c2 - f * f).powi(2) + (bandwidth * f).powi(2)).sqrt()
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn scale_to_rms(x: &mut [f64], target: f64) {
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt();
    if rms > 0.0 {
        x.iter_mut().for_each(|v| *v *= target / rms);
    }
}

/// Adds one voiced syllable starting at `start`.
fn add_syllable(out: &mut [f64], voice: &VoiceProfile, rng: &mut ChaCha8Rng, start: usize, len: usize) {
    let f0 = voice.f0 * (1.0 + 0.04 * gaussian(rng)).clamp(0.9, 1.1);
    let glide: f64 = rng.random_range(-0.08..0.08);
    let formants: Vec<f64> = voice
        .formants
        .iter()
        .map(|f| f * (1.0 + 0.04 * gaussian(rng)).clamp(0.9, 1.1))
        .collect();
    let amp = 10f64.powf(rng.random_range(-3.0..3.0) / 20.0);
    let harmonics: Vec<f64> = (1..)
        .take_while(|&k| k as f64 * f0 * (1.0 + glide.abs()) < 7800.0)
        .map(|k| {
            let f = k as f64 * f0;
            let shape: f64 = formants
                .iter()
                .zip(&voice.bandwidths)
                .map(|(&c, &b)| resonance(f, c, b))
                .product();
            shape / k as f64
        })
        .collect();
    let mut phase = 0.0;
    let end = (start + len).min(out.len());
    for (t, sample) in out[start..end].iter_mut().enumerate() {
        let progress = t as f64 / len as f64;
        let inst_f0 = f0 * (1.0 + glide * progress);
        phase += 2.0 * PI * inst_f0 / FS;
        let env = (PI * progress).sin().powf(0.6);
        let s: f64 = harmonics
            .iter()
            .enumerate()
            .map(|(k, a)| a * ((k + 1) as f64 * phase).sin())
            .sum();
        *sample += amp * env * s;
    }
}

/// One utterance of `seconds` duration for `voice`.
pub fn synthesize_utterance(voice: &VoiceProfile, seconds: f64, seed: u64) -> Vec<f64> {
    let n = (seconds * FS).round().max(1.0) as usize;
    let mut rng = seed::rng(seed);
    let mut out = vec![0.0; n];
    let mut t = (rng.random_range(0.02..0.1) * FS) as usize;
    while t < n {
        let len = (rng.random_range(0.12..0.3) * FS) as usize;
        add_syllable(&mut out, voice, &mut rng, t, len);
        t += len + (rng.random_range(0.03..0.12) * FS) as usize;
    }
    scale_to_rms(&mut out, UTTERANCE_RMS);
    let floor = UTTERANCE_RMS * 10f64.powf(FLOOR_DB / 20.0);
    for v in &mut out {
        *v += floor * gaussian(&mut rng);
    }
    out
}

/// Deterministic synthetic corpus; speaker ids are `spk00`, `spk01`, ...
pub fn generate_synthetic_corpus(params: &SynthCorpusParams) -> Result<Corpus> {
    if params.speakers < 2 {
        return Err(Error::Input(format!(
            "a synthetic corpus needs at least 2 speakers, got {}",
            params.speakers
        )));
    }
    if !(params.utterance_seconds > 0.0 && params.utterance_seconds.is_finite()) {
        return Err(Error::Input(format!(
            "utterance_seconds must be positive, got {}",
            params.utterance_seconds
        )));
    }
    let voices = voice_profiles(params.speakers, params.seed);
    let width = (params.speakers - 1).to_string().len().max(2);
    let speakers = voices
        .iter()
        .enumerate()
        .map(|(i, voice)| {
            let id = format!("spk{i:0width$}");
            let make = |part: &str, count: usize| -> Vec<Utterance> {
                (0..count)
                    .map(|j| {
                        let s = seed::derive_str(params.seed, &format!("{id}/{part}/{j}"));
                        let samples = synthesize_utterance(voice, params.utterance_seconds, s);
                        Utterance::in_memory(format!("{part}{j:02}"), samples)
                    })
                    .collect()
            };
            Speaker {
                train: make("train", params.train_per_speaker),
                test: make("test", params.test_per_speaker),
                id,
            }
        })
        .collect();
    Corpus::new(speakers)
}

/// Kinds of synthetic interference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthNoise {
    /// Several overlapping synthetic talkers (non-stationary, speech-like).
    Babble,
    /// Band-limited noise bursts at random centre frequencies (non-stationary).
    Bursts,
    /// Low-pass noise with a tonal engine hum (stationary, coloured).
    Coloured,
}

impl SynthNoise {
    pub const ALL: [SynthNoise; 3] = [SynthNoise::Babble, SynthNoise::Bursts, SynthNoise::Coloured];

    pub fn name(&self) -> &'static str {
        match self {
            SynthNoise::Babble => "babble",
            SynthNoise::Bursts => "bursts",
            SynthNoise::Coloured => "coloured",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn generate(&self, num_samples: usize, seed: u64) -> Vec<f64> {
        let mut rng = seed::rng(seed::derive_str(seed, self.name()));
        let mut out = match self {
            SynthNoise::Babble => babble(num_samples, &mut rng),
            SynthNoise::Bursts => bursts(num_samples, &mut rng),
            SynthNoise::Coloured => coloured(num_samples, &mut rng),
        };
        scale_to_rms(&mut out, UTTERANCE_RMS);
        out
    }
}

fn babble(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let seconds = n as f64 / FS;
    let mut out = vec![0.0; n];
    for _ in 0..6 {
        let voice = VoiceProfile::random(rng);
        let talker = synthesize_utterance(&voice, seconds, rng.random());
        out.iter_mut().zip(talker).for_each(|(o, v)| *o += v);
    }
    out
}

/// RBJ band-pass biquad (constant 0 dB peak gain).
struct BandPass {
    b: [f64; 3],
    a: [f64; 2],
    x: [f64; 2],
    y: [f64; 2],
}

impl BandPass {
    fn new(centre: f64, q: f64) -> Self {
        let w = 2.0 * PI * centre / FS;
        let alpha = w.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        BandPass {
            b: [alpha / a0, 0.0, -alpha / a0],
            a: [-2.0 * w.cos() / a0, (1.0 - alpha) / a0],
            x: [0.0; 2],
            y: [0.0; 2],
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.b[1] * self.x[0] + self.b[2] * self.x[1]
            - self.a[0] * self.y[0]
            - self.a[1] * self.y[1];
        self.x = [x, self.x[0]];
        self.y = [y, self.y[0]];
        y
    }
}

fn bursts(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out: Vec<f64> = (0..n).map(|_| 0.05 * gaussian(rng)).collect();
    let mut t = 0;
    while t < n {
        let len = (rng.random_range(0.05..0.4) * FS) as usize;
        let centre = (rng.random_range(200f64.ln()..6000f64.ln())).exp();
        let mut filter = BandPass::new(centre, rng.random_range(0.7..4.0));
        let gain = 10f64.powf(rng.random_range(-6.0..6.0) / 20.0) * 3.0;
        for (i, o) in out.iter_mut().skip(t).take(len).enumerate() {
            let env = (PI * i as f64 / len as f64).sin();
            *o += gain * env * filter.step(gaussian(rng));
        }
        t += len + (rng.random_range(0.0..0.3) * FS) as usize;
    }
    out
}

fn coloured(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let hum = rng.random_range(90.0..140.0);
    let mut low = 0.0;
    (0..n)
        .map(|t| {
            low = 0.95 * low + gaussian(rng);
            let tonal: f64 = (1..=6)
                .map(|k| (2.0 * PI * k as f64 * hum * t as f64 / FS).sin() / k as f64)
                .sum();
            0.3 * low + 0.4 * gaussian(rng) + 2.0 * tonal
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::extract_features;
    use crate::dsp::FrameParams;

    fn small() -> SynthCorpusParams {
        SynthCorpusParams {
            speakers: 3,
            train_per_speaker: 1,
            test_per_speaker: 1,
            utterance_seconds: 0.5,
            seed: 9,
        }
    }

    #[test]
    fn corpus_shape_and_determinism() {
        let a = generate_synthetic_corpus(&small()).unwrap();
        let b = generate_synthetic_corpus(&small()).unwrap();
        assert_eq!(a.speakers().len(), 3);
        for (sa, sb) in a.speakers().iter().zip(b.speakers()) {
            assert_eq!(sa.id, sb.id);
            for (ua, ub) in sa.train.iter().zip(&sb.train) {
                let (x, y) = (ua.samples().unwrap(), ub.samples().unwrap());
                assert_eq!(x.len(), 8000);
                assert_eq!(x, y);
                assert!(x.iter().all(|v| v.abs() < 1.0));
            }
        }
        let mut other = small();
        other.seed = 10;
        let c = generate_synthetic_corpus(&other).unwrap();
        assert_ne!(
            a.speakers()[0].train[0].samples().unwrap(),
            c.speakers()[0].train[0].samples().unwrap()
        );
    }

    #[test]
    fn rejects_single_speaker() {
        let mut p = small();
        p.speakers = 1;
        assert!(generate_synthetic_corpus(&p).is_err());
    }

    #[test]
    fn speakers_have_distinct_spectra() {
        let voices = voice_profiles(4, 1);
        let means: Vec<Vec<f64>> = voices
            .iter()
            .map(|v| {
                let x = synthesize_utterance(v, 1.0, 3);
                let f = extract_features(&x, &FrameParams::default()).unwrap();
                f.0.mean_axis(ndarray::Axis(0)).unwrap().to_vec()
            })
            .collect();
        for i in 0..means.len() {
            for j in i + 1..means.len() {
                let differing = means[i]
                    .iter()
                    .zip(&means[j])
                    .filter(|(a, b)| (*a - *b).abs() > 1.0)
                    .count();
                assert!(differing >= 3, "speakers {i} and {j} differ in {differing} bands");
            }
        }
    }

    #[test]
    fn noise_generators() {
        for kind in SynthNoise::ALL {
            let a = kind.generate(4000, 5);
            assert_eq!(a, kind.generate(4000, 5));
            assert_eq!(a.len(), 4000);
            let rms = (a.iter().map(|v| v * v).sum::<f64>() / 4000.0).sqrt();
            assert!((rms - UTTERANCE_RMS).abs() < 1e-12);
            assert_eq!(SynthNoise::from_name(kind.name()), Some(kind));
        }
        assert_eq!(SynthNoise::from_name("pink"), None);
    }
}
