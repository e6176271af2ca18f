//! Additive noise mixing, oracle a-priori SNR, reliability masks and evidence.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{FeatureSequence, MelFilterbank};
use crate::error::{Error, Result};
use crate::seed;
use crate::spn::{Evidence, EvidenceState};

/// Floor on the noise PSD when forming the a-priori SNR.
pub const SNR_FLOOR: f64 = 1e-12;

/// How an unreliable component enters the evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceMode {
    /// Every component observed (no missing-feature handling).
    None,
    /// Unreliable components integrated over the whole real line.
    Marginal,
    /// Unreliable components integrated up to the noisy value.
    Bounded,
}

impl EvidenceMode {
    pub const ALL: [EvidenceMode; 3] = [EvidenceMode::None, EvidenceMode::Marginal, EvidenceMode::Bounded];

    pub fn name(&self) -> &'static str {
        match self {
            EvidenceMode::None => "none",
            EvidenceMode::Marginal => "marginal",
            EvidenceMode::Bounded => "bounded",
        }
    }
}

impl std::str::FromStr for EvidenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(EvidenceMode::None),
            "marginal" => Ok(EvidenceMode::Marginal),
            "bounded" => Ok(EvidenceMode::Bounded),
            other => Err(Error::Input(format!(
                "unknown mode `{other}` (expected none, marginal or bounded)"
            ))),
        }
    }
}

/// How per-bin SNRs are pooled into subbands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrAggregation {
    /// Filter-weighted mean of the per-bin ξ.
    #[default]
    MeanXi,
    /// Filtered clean PSD over filtered noise PSD.
    PsdRatio,
}

impl SnrAggregation {
    pub fn name(&self) -> &'static str {
        match self {
            SnrAggregation::MeanXi => "mean_xi",
            SnrAggregation::PsdRatio => "psd_ratio",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixSpec {
    pub snr_db: f64,
    /// First noise sample used for the excerpt.
    pub noise_offset: usize,
}

impl MixSpec {
    /// Offset drawn uniformly from the admissible range using `seed`.
    pub fn with_random_offset(snr_db: f64, clean_len: usize, noise_len: usize, seed: u64) -> Result<Self> {
        if noise_len < clean_len {
            return Err(Error::Input(format!(
                "noise ({noise_len} samples) is shorter than the clean signal ({clean_len})"
            )));
        }
        let offset = seed::rng(seed).random_range(0..=noise_len - clean_len);
        Ok(MixSpec {
            snr_db,
            noise_offset: offset,
        })
    }
}

/// Output of [`mix_at_snr`]: `noisy = clean + scaled_noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub noisy: Vec<f64>,
    pub scaled_noise: Vec<f64>,
    pub gain: f64,
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

/// `10·log₁₀(Σ clean² / Σ noise²)`.
pub fn snr_db(clean: &[f64], noise: &[f64]) -> f64 {
    10.0 * (energy(clean) / energy(noise)).log10()
}

/// Adds a noise excerpt scaled so the whole-utterance SNR equals `spec.snr_db`.
pub fn mix_at_snr(clean: &[f64], noise: &[f64], spec: &MixSpec) -> Result<Mixture> {
    let end = spec
        .noise_offset
        .checked_add(clean.len())
        .filter(|&e| e <= noise.len())
        .ok_or_else(|| {
            Error::Input(format!(
                "noise excerpt [{}, {}) exceeds the noise length {}",
                spec.noise_offset,
                spec.noise_offset + clean.len(),
                noise.len()
            ))
        })?;
    if !spec.snr_db.is_finite() {
        return Err(Error::Input(format!("target SNR {} dB is not finite", spec.snr_db)));
    }
    let excerpt = &noise[spec.noise_offset..end];
    let (ec, en) = (energy(clean), energy(excerpt));
    if ec == 0.0 {
        return Err(Error::Degenerate("input: clean signal is all zeros".into()));
    }
    if en == 0.0 {
        return Err(Error::Degenerate("input: noise excerpt is all zeros".into()));
    }
    // g = RMS(clean) / (RMS(noise) · 10^(snr/20)); lengths are equal so RMS ratio = energy ratio.
    let gain = (ec / en).sqrt() / 10f64.powf(spec.snr_db / 20.0);
    let scaled_noise: Vec<f64> = excerpt.iter().map(|n| gain * n).collect();
    let noisy = clean.iter().zip(&scaled_noise).map(|(c, n)| c + n).collect();
    Ok(Mixture {
        noisy,
        scaled_noise,
        gain,
    })
}

/// `ξ[t,k] = clean_psd[t,k] / max(noise_psd[t,k], ε)`.
pub fn oracle_a_priori_snr(clean_psd: &Array2<f64>, noise_psd: &Array2<f64>) -> Result<Array2<f64>> {
    if clean_psd.dim() != noise_psd.dim() {
        return Err(Error::Input(format!(
            "PSD shapes differ: clean {:?}, noise {:?}",
            clean_psd.dim(),
            noise_psd.dim()
        )));
    }
    let mut xi = clean_psd.clone();
    xi.zip_mut_with(noise_psd, |c, &n| *c /= n.max(SNR_FLOOR));
    Ok(xi)
}

/// Filter-weighted mean of ξ per subband: `Σ_k h_{b,k} ξ_k / Σ_k h_{b,k}`.
pub fn subband_snr(xi: &Array2<f64>, fb: &MelFilterbank) -> Result<Array2<f64>> {
    if xi.ncols() != fb.num_bins() {
        return Err(Error::Input(format!(
            "ξ has {} bins, filterbank expects {}",
            xi.ncols(),
            fb.num_bins()
        )));
    }
    let row_sums = fb.weights().sum_axis(Axis(1));
    let mut out = xi.dot(&fb.weights().t());
    for mut row in out.rows_mut() {
        row /= &row_sums;
    }
    Ok(out)
}

/// Subband SNR as filtered clean PSD over filtered noise PSD.
pub fn subband_snr_psd_ratio(
    clean_psd: &Array2<f64>,
    noise_psd: &Array2<f64>,
    fb: &MelFilterbank,
) -> Result<Array2<f64>> {
    if clean_psd.dim() != noise_psd.dim() || clean_psd.ncols() != fb.num_bins() {
        return Err(Error::Input("PSD shapes do not match the filterbank".into()));
    }
    let c = clean_psd.dot(&fb.weights().t());
    let n = noise_psd.dot(&fb.weights().t());
    let mut out = c;
    out.zip_mut_with(&n, |c, &n| *c /= n.max(SNR_FLOOR));
    Ok(out)
}

/// Subband a-priori SNR under the chosen aggregation.
pub fn subband_a_priori_snr(
    clean_psd: &Array2<f64>,
    noise_psd: &Array2<f64>,
    fb: &MelFilterbank,
    aggregation: SnrAggregation,
) -> Result<Array2<f64>> {
    match aggregation {
        SnrAggregation::MeanXi => subband_snr(&oracle_a_priori_snr(clean_psd, noise_psd)?, fb),
        SnrAggregation::PsdRatio => subband_snr_psd_ratio(clean_psd, noise_psd, fb),
    }
}

/// T × B reliability flags; `true` marks a reliable component.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityMask(pub Array2<bool>);

impl ReliabilityMask {
    pub fn all_reliable(frames: usize, bands: usize) -> Self {
        ReliabilityMask(Array2::from_elem((frames, bands), true))
    }

    pub fn reliable_fraction(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().filter(|&&r| r).count() as f64 / self.0.len() as f64
    }
}

/// Reliable where `10·log₁₀ ξ_b > threshold_db` (strict).
pub fn reliability_mask(subband_xi: &Array2<f64>, threshold_db: f64) -> ReliabilityMask {
    let threshold = 10f64.powf(threshold_db / 10.0);
    ReliabilityMask(subband_xi.mapv(|x| x > threshold))
}

/// One [`Evidence`] per frame.
pub fn build_evidence(
    features: &FeatureSequence,
    mask: &ReliabilityMask,
    mode: EvidenceMode,
) -> Result<Vec<Evidence>> {
    if features.0.dim() != mask.0.dim() {
        return Err(Error::Input(format!(
            "feature shape {:?} and mask shape {:?} differ",
            features.0.dim(),
            mask.0.dim()
        )));
    }
    features
        .0
        .rows()
        .into_iter()
        .zip(mask.0.rows())
        .map(|(x, m)| {
            let states = x
                .iter()
                .zip(m)
                .map(|(&v, &reliable)| match (reliable, mode) {
                    (true, _) | (false, EvidenceMode::None) => EvidenceState::Observed(v),
                    (false, EvidenceMode::Marginal) => EvidenceState::Missing,
                    (false, EvidenceMode::Bounded) => EvidenceState::UpperBounded(v),
                })
                .collect();
            Evidence::new(states)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    fn unit_rms(n: usize, phase: f64) -> Vec<f64> {
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37 + phase).sin()).collect();
        let rms = (energy(&x) / n as f64).sqrt();
        x.iter().map(|v| v / rms).collect()
    }

    #[test]
    fn gain_examples() {
        let c = unit_rms(1000, 0.0);
        let n = unit_rms(1000, 1.3);
        let m = mix_at_snr(&c, &n, &MixSpec { snr_db: 0.0, noise_offset: 0 }).unwrap();
        assert!((m.gain - 1.0).abs() < 1e-12);
        let m = mix_at_snr(&c, &n, &MixSpec { snr_db: 20.0, noise_offset: 0 }).unwrap();
        assert!((m.gain - 0.1).abs() < 1e-12);
    }

    #[test]
    fn achieved_snr_matches_target() {
        let c = unit_rms(3000, 0.1);
        let n: Vec<f64> = (0..5000).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        for snr in [-5.0, 0.0, 5.0, 10.0, 15.0, 3.7] {
            let spec = MixSpec::with_random_offset(snr, c.len(), n.len(), 4).unwrap();
            let m = mix_at_snr(&c, &n, &spec).unwrap();
            assert!((snr_db(&c, &m.scaled_noise) - snr).abs() < 1e-9);
            for ((y, x), e) in m.noisy.iter().zip(&c).zip(&m.scaled_noise) {
                assert_eq!(*y, x + e);
            }
        }
    }

    #[test]
    fn degenerate_and_short_inputs() {
        let c = vec![0.0; 10];
        let n = vec![1.0; 10];
        let spec = MixSpec { snr_db: 0.0, noise_offset: 0 };
        assert!(matches!(mix_at_snr(&c, &n, &spec), Err(Error::Degenerate(_))));
        assert!(matches!(mix_at_snr(&n, &c, &spec), Err(Error::Degenerate(_))));
        let spec = MixSpec { snr_db: 0.0, noise_offset: 5 };
        assert!(matches!(mix_at_snr(&n, &n, &spec), Err(Error::Input(_))));
        assert!(MixSpec::with_random_offset(0.0, 20, 10, 0).is_err());
    }

    #[test]
    fn oracle_snr_examples() {
        let p = array![[1.0, 2.0], [0.5, 3.0]];
        assert_eq!(oracle_a_priori_snr(&p, &p).unwrap(), Array2::<f64>::ones((2, 2)));
        let xi = oracle_a_priori_snr(&p, &Array2::zeros((2, 2))).unwrap();
        assert_eq!(xi[[0, 0]], 1.0 / SNR_FLOOR);
        assert!(xi.iter().all(|v| v.is_finite()));
        let xi = oracle_a_priori_snr(&(&p * 4.0), &p).unwrap();
        assert!(xi.iter().all(|&v| (v - 4.0).abs() < 1e-15));
        assert!((10.0 * 4f64.log10() - 6.0206).abs() < 1e-4);
        assert!(oracle_a_priori_snr(&p, &Array2::zeros((3, 2))).is_err());
    }

    #[test]
    fn subband_snr_of_constants() {
        let fb = MelFilterbank::standard();
        for c in [1.0, 4.0] {
            let xi = Array2::from_elem((3, 257), c);
            let s = subband_snr(&xi, &fb).unwrap();
            assert_eq!(s.dim(), (3, 26));
            assert!(s.iter().all(|&v| (v - c).abs() < 1e-12));
        }
    }

    #[test]
    fn subband_snr_toy_filterbank() {
        // bins 0..4, ξ = k; filter 0 = [1, 1, 0, 0], filter 1 = [0, 0.5, 1, 0.5]
        let fb = MelFilterbank::from_weights(array![[1.0, 1.0, 0.0, 0.0], [0.0, 0.5, 1.0, 0.5]])
            .unwrap();
        let xi = array![[0.0, 1.0, 2.0, 3.0]];
        let s = subband_snr(&xi, &fb).unwrap();
        // (0 + 1)/2 = 0.5 ; (0.5 + 2 + 1.5)/2 = 2
        assert!((s[[0, 0]] - 0.5).abs() < 1e-15);
        assert!((s[[0, 1]] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn mask_threshold_is_strict() {
        let m = reliability_mask(&array![[1.0, 1.0001, 0.0, 5.0]], 0.0);
        assert_eq!(m.0, array![[false, true, false, true]]);
        let m = reliability_mask(&Array2::zeros((2, 3)), 0.0);
        assert!(m.0.iter().all(|&r| !r));
        let m = reliability_mask(&array![[10.0, 10.5]], 10.0);
        assert_eq!(m.0, array![[false, true]]);
    }

    #[test]
    fn evidence_modes() {
        let f = FeatureSequence(array![[1.0, 2.0], [3.0, 4.0]]);
        let all = ReliabilityMask::all_reliable(2, 2);
        for mode in EvidenceMode::ALL {
            let ev = build_evidence(&f, &all, mode).unwrap();
            assert!(ev.iter().all(|e| e.states().iter().all(|s| s.is_observed())));
        }
        let none = ReliabilityMask(Array2::from_elem((2, 2), false));
        let ev = build_evidence(&f, &none, EvidenceMode::Marginal).unwrap();
        assert!(ev.iter().all(|e| e.states().iter().all(|s| *s == EvidenceState::Missing)));

        let mixed = ReliabilityMask(array![[true, false], [false, true]]);
        let ev = build_evidence(&f, &mixed, EvidenceMode::Bounded).unwrap();
        assert_eq!(
            ev[0].states(),
            &[EvidenceState::Observed(1.0), EvidenceState::UpperBounded(2.0)]
        );
        assert_eq!(
            ev[1].states(),
            &[EvidenceState::UpperBounded(3.0), EvidenceState::Observed(4.0)]
        );
        assert!(build_evidence(&f, &ReliabilityMask::all_reliable(3, 2), EvidenceMode::None).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("bounded".parse::<EvidenceMode>().unwrap(), EvidenceMode::Bounded);
        assert!("maybe".parse::<EvidenceMode>().is_err());
    }
}
