//! Speaker-identification experiments: corpora, per-speaker training,
//! utterance scoring and the noise × SNR × mode accuracy grid.

mod report;
pub mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{Cell, ExperimentReport, ParameterSummary, ResultRow, REPORT_MAGIC};
pub use synth::{generate_synthetic_corpus, SynthCorpusParams, SynthNoise};

use crate::dsp::{FeatureExtractor, FeatureSequence, FrameParams, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::format::SpeakerModel;
use crate::gmm::{fit_em, EmParams};
use crate::learn::{learn_spn, DataMatrix, LearnParams};
use crate::reliability::{
    build_evidence, mix_at_snr, reliability_mask, subband_a_priori_snr, EvidenceMode, MixSpec,
    ReliabilityMask, SnrAggregation,
};
use crate::spn::Evidence;
use crate::{seed, wav};

/// Where an utterance's samples live.
#[derive(Debug, Clone, PartialEq)]
pub enum Waveform {
    File(PathBuf),
    Memory(Arc<[f64]>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub waveform: Waveform,
}

impl Utterance {
    pub fn in_memory(id: impl Into<String>, samples: Vec<f64>) -> Self {
        Utterance {
            id: id.into(),
            waveform: Waveform::Memory(samples.into()),
        }
    }

    pub fn file(id: impl Into<String>, path: impl Into<PathBuf>) -> Self {
        Utterance {
            id: id.into(),
            waveform: Waveform::File(path.into()),
        }
    }

    pub fn samples(&self) -> Result<Arc<[f64]>> {
        match &self.waveform {
            Waveform::File(p) => wav::read_wav(p).map(Into::into),
            Waveform::Memory(s) => Ok(s.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Speaker {
    pub id: String,
    pub train: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

/// Speakers sorted by id.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    speakers: Vec<Speaker>,
}

impl Corpus {
    pub fn new(mut speakers: Vec<Speaker>) -> Result<Self> {
        speakers.sort_by(|a, b| a.id.cmp(&b.id));
        if speakers.len() < 2 {
            return Err(Error::Input(format!(
                "a corpus needs at least 2 speakers, found {}",
                speakers.len()
            )));
        }
        if let Some(w) = speakers.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::Input(format!("duplicate speaker id `{}`", w[0].id)));
        }
        if let Some(s) = speakers.iter().find(|s| s.train.is_empty()) {
            return Err(Error::Input(format!("speaker `{}` has no training utterances", s.id)));
        }
        Ok(Corpus { speakers })
    }

    /// Reads `<root>/<speaker>/{train,test}/*.wav`, sorted by file name.
    pub fn from_dir(root: &Path) -> Result<Self> {
        let mut speakers = Vec::new();
        for dir in sorted_entries(root)? {
            if !dir.is_dir() {
                continue;
            }
            let id = dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let list = |part: &str| -> Result<Vec<Utterance>> {
                let sub = dir.join(part);
                if !sub.is_dir() {
                    return Ok(Vec::new());
                }
                Ok(sorted_entries(&sub)?
                    .into_iter()
                    .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")))
                    .map(|p| {
                        let id = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
                        Utterance::file(id, p)
                    })
                    .collect())
            };
            speakers.push(Speaker {
                train: list("train")?,
                test: list("test")?,
                id,
            });
        }
        Corpus::new(speakers).map_err(|e| match e {
            Error::Input(msg) => Error::Input(format!("{}: {msg}", root.display())),
            other => other,
        })
    }

    /// Writes the corpus in the layout read by [`Corpus::from_dir`].
    pub fn write_dir(&self, root: &Path) -> Result<()> {
        for s in &self.speakers {
            for (part, utts) in [("train", &s.train), ("test", &s.test)] {
                let dir = root.join(&s.id).join(part);
                std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                for u in utts {
                    wav::write_wav(&dir.join(format!("{}.wav", u.id)), &u.samples()?)?;
                }
            }
        }
        Ok(())
    }

    pub fn speakers(&self) -> &[Speaker] {
        &self.speakers
    }

    pub fn speaker_ids(&self) -> Vec<&str> {
        self.speakers.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn num_test_utterances(&self) -> usize {
        self.speakers.iter().map(|s| s.test.len()).sum()
    }

    fn check_for_evaluation(&self) -> Result<()> {
        match self.speakers.iter().find(|s| s.test.is_empty()) {
            Some(s) => Err(Error::Input(format!("speaker `{}` has no test utterances", s.id))),
            None => Ok(()),
        }
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    #[default]
    Spn,
    Gmm,
}

impl ModelFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ModelFamily::Spn => "spn",
            ModelFamily::Gmm => "gmm",
        }
    }
}

impl std::str::FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spn" => Ok(ModelFamily::Spn),
            "gmm" => Ok(ModelFamily::Gmm),
            other => Err(Error::Input(format!("unknown model family `{other}` (expected spn or gmm)"))),
        }
    }
}

/// Source of the reliability mask. Only the oracle is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Masker {
    #[default]
    Oracle,
}

impl Masker {
    pub fn name(&self) -> &'static str {
        match self {
            Masker::Oracle => "oracle",
        }
    }
}

/// Training settings shared by `train` and `evaluate`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub model_family: ModelFamily,
    pub features: FrameParams,
    pub learn: LearnParams,
    pub em: EmParams,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub modes: Vec<EvidenceMode>,
    pub snr_levels_db: Vec<f64>,
    /// WAV paths, or `synth:<babble|bursts|coloured>` for generated noise.
    pub noise_sources: Vec<String>,
    pub masker: Masker,
    pub snr_aggregation: SnrAggregation,
    pub threshold_db: f64,
    /// Minimum length of generated noise; extended to the longest test utterance.
    pub synth_noise_seconds: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            modes: EvidenceMode::ALL.to_vec(),
            snr_levels_db: vec![-5.0, 0.0, 5.0, 10.0, 15.0],
            noise_sources: vec!["synth:babble".into(), "synth:coloured".into()],
            masker: Masker::Oracle,
            snr_aggregation: SnrAggregation::MeanXi,
            threshold_db: 0.0,
            synth_noise_seconds: 30.0,
        }
    }
}

impl ExperimentConfig {
    pub fn check(&self) -> Result<()> {
        if self.modes.is_empty() {
            return Err(Error::Input("modes must not be empty".into()));
        }
        if self.snr_levels_db.is_empty() {
            return Err(Error::Input("snr_levels_db must not be empty".into()));
        }
        if self.noise_sources.is_empty() {
            return Err(Error::Input("noise_sources must not be empty".into()));
        }
        if let Some(s) = self.snr_levels_db.iter().find(|s| !s.is_finite()) {
            return Err(Error::Input(format!("snr level {s} is not finite")));
        }
        if !self.threshold_db.is_finite() {
            return Err(Error::Input("threshold_db must be finite".into()));
        }
        Ok(())
    }
}

/// A named noise waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSource {
    pub name: String,
    pub samples: Vec<f64>,
}

impl NoiseSource {
    /// Resolves a `noise_sources` entry; generated noise is at least `min_len` samples.
    pub fn resolve(reference: &str, min_len: usize, seed: u64) -> Result<Self> {
        if let Some(kind) = reference.strip_prefix("synth:") {
            let k = SynthNoise::from_name(kind).ok_or_else(|| {
                Error::Input(format!(
                    "unknown synthetic noise `{kind}` (expected babble, bursts or coloured)"
                ))
            })?;
            return Ok(NoiseSource {
                name: kind.to_string(),
                samples: k.generate(min_len, seed::derive_str(seed, reference)),
            });
        }
        let path = Path::new(reference);
        Ok(NoiseSource {
            name: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| reference.to_string()),
            samples: wav::read_wav(path)?,
        })
    }
}

fn speaker_features(
    extractor: &FeatureExtractor,
    speaker: &Speaker,
) -> Result<Vec<FeatureSequence>> {
    speaker
        .train
        .iter()
        .map(|u| extractor.extract(&u.samples()?))
        .collect()
}

/// Fits one model per speaker; seeds are derived from `config.seed` and the speaker id.
pub fn train_speaker_models(
    corpus: &Corpus,
    config: &TrainConfig,
) -> Result<BTreeMap<String, SpeakerModel>> {
    let extractor = FeatureExtractor::new(config.features)?;
    config.learn.check()?;
    corpus
        .speakers()
        .par_iter()
        .map(|s| {
            let training = |reason: String| Error::Training {
                speaker: s.id.clone(),
                reason,
            };
            let feats = speaker_features(&extractor, s)?;
            let views: Vec<ArrayView2<f64>> = feats.iter().map(|f| f.0.view()).collect();
            let data = DataMatrix::stack(&views).map_err(|e| training(e.to_string()))?;
            if data.rows() == 0 {
                return Err(training("no usable frames".into()));
            }
            let speaker_seed = seed::derive_str(config.seed, &format!("train/{}", s.id));
            let model = match config.model_family {
                ModelFamily::Spn => {
                    let params = LearnParams {
                        seed: speaker_seed,
                        ..config.learn.clone()
                    };
                    let g = learn_spn(&data, &params)
                        .and_then(|g| g.normalize_weights())
                        .map_err(|e| training(e.to_string()))?;
                    SpeakerModel::Spn(g)
                }
                ModelFamily::Gmm => {
                    let params = EmParams {
                        seed: speaker_seed,
                        ..config.em.clone()
                    };
                    let fit = fit_em(&data, &params).map_err(|e| training(e.to_string()))?;
                    SpeakerModel::Gmm(fit.model)
                }
            };
            Ok((s.id.clone(), model))
        })
        .collect()
}

/// Σ_t log p(e_t); all-missing frames contribute 0.
pub fn score_utterance(model: &SpeakerModel, frames: &[Evidence]) -> Result<f64> {
    frames.iter().map(|e| model.log_density(e)).sum()
}

/// Highest-scoring speaker; ties go to the lexicographically smallest id.
pub fn identify<'a>(
    models: &'a BTreeMap<String, SpeakerModel>,
    frames: &[Evidence],
) -> Result<&'a str> {
    let mut best: Option<(&str, f64)> = None;
    for (id, model) in models {
        let score = score_utterance(model, frames)?;
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((id, score));
        }
    }
    best.map(|(id, _)| id)
        .ok_or_else(|| Error::Input("no enrolled speakers".into()))
}

/// Trained models plus the report computed with them.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub models: BTreeMap<String, SpeakerModel>,
    pub report: ExperimentReport,
}

/// Trains models on `corpus` and evaluates them.
pub fn run_experiment(
    corpus: &Corpus,
    train: &TrainConfig,
    config: &ExperimentConfig,
) -> Result<ExperimentOutcome> {
    config.check()?;
    corpus.check_for_evaluation()?;
    let models = train_speaker_models(corpus, train)?;
    let report = evaluate_models(corpus, &models, train, config)?;
    Ok(ExperimentOutcome { models, report })
}

struct TestItem<'a> {
    speaker: &'a str,
    utterance: &'a str,
    samples: Arc<[f64]>,
}

/// Predictions for one utterance: clean per mode, then per (noise, snr) per mode.
type UtterancePredictions = (
    Result<Vec<String>>,
    Vec<Result<Vec<String>>>,
);

/// Runs the noise × SNR × mode grid with already trained models.
pub fn evaluate_models(
    corpus: &Corpus,
    models: &BTreeMap<String, SpeakerModel>,
    train: &TrainConfig,
    config: &ExperimentConfig,
) -> Result<ExperimentReport> {
    config.check()?;
    corpus.check_for_evaluation()?;
    if models.is_empty() {
        return Err(Error::Input("no speaker models".into()));
    }
    let extractor = FeatureExtractor::new(train.features)?;
    if let Some((id, m)) = models.iter().find(|(_, m)| m.num_variables() != train.features.num_bands) {
        return Err(Error::Input(format!(
            "model `{id}` has {} variables but features have {} bands",
            m.num_variables(),
            train.features.num_bands
        )));
    }

    let items: Vec<TestItem> = corpus
        .speakers()
        .iter()
        .flat_map(|s| s.test.iter().map(move |u| (s, u)))
        .map(|(s, u)| {
            Ok(TestItem {
                speaker: &s.id,
                utterance: &u.id,
                samples: u.samples()?,
            })
        })
        .collect::<Result<_>>()?;
    let longest = items.iter().map(|i| i.samples.len()).max().unwrap_or(0);
    let min_noise = longest.max((config.synth_noise_seconds * SAMPLE_RATE as f64) as usize);
    let noises: Vec<NoiseSource> = config
        .noise_sources
        .iter()
        .map(|r| NoiseSource::resolve(r, min_noise, train.seed))
        .collect::<Result<_>>()?;

    let predictions: Vec<UtterancePredictions> = items
        .par_iter()
        .map(|item| predict_utterance(item, models, &extractor, &noises, train.seed, config))
        .collect();

    Ok(report::assemble(
        &items
            .iter()
            .map(|i| i.speaker.to_string())
            .collect::<Vec<_>>(),
        &predictions,
        &noises,
        models,
        train,
        config,
    ))
}

fn classify_all_modes(
    features: &FeatureSequence,
    mask: &ReliabilityMask,
    models: &BTreeMap<String, SpeakerModel>,
    modes: &[EvidenceMode],
) -> Result<Vec<String>> {
    modes
        .iter()
        .map(|&mode| {
            let evidence = build_evidence(features, mask, mode)?;
            identify(models, &evidence).map(str::to_string)
        })
        .collect()
}

fn predict_utterance(
    item: &TestItem,
    models: &BTreeMap<String, SpeakerModel>,
    extractor: &FeatureExtractor,
    noises: &[NoiseSource],
    seed: u64,
    config: &ExperimentConfig,
) -> UtterancePredictions {
    let clean_psd = extractor.psd(&item.samples);
    let clean = clean_psd.as_ref().map_err(clone_err).and_then(|psd| {
        let f = extractor.features_from_psd(psd)?;
        let mask = ReliabilityMask::all_reliable(f.num_frames(), f.num_bands());
        classify_all_modes(&f, &mask, models, &config.modes)
    });

    let mut noisy = Vec::with_capacity(noises.len() * config.snr_levels_db.len());
    for noise in noises {
        let offset_seed =
            seed::derive_str(seed, &format!("mix/{}/{}/{}", noise.name, item.speaker, item.utterance));
        for &snr in &config.snr_levels_db {
            let cell = (|| {
                let clean_psd = clean_psd.as_ref().map_err(clone_err)?;
                let spec =
                    MixSpec::with_random_offset(snr, item.samples.len(), noise.samples.len(), offset_seed)?;
                let mix = mix_at_snr(&item.samples, &noise.samples, &spec)?;
                let noise_psd = extractor.psd(&mix.scaled_noise)?;
                let xi = subband_a_priori_snr(
                    clean_psd,
                    &noise_psd,
                    extractor.filterbank(),
                    config.snr_aggregation,
                )?;
                let mask = reliability_mask(&xi, config.threshold_db);
                let features = extractor.extract(&mix.noisy)?;
                classify_all_modes(&features, &mask, models, &config.modes)
            })();
            noisy.push(cell.map_err(|e| {
                Error::Input(format!("{}/{}: {e}", item.speaker, item.utterance))
            }));
        }
    }
    (clean, noisy)
}

fn clone_err(e: &Error) -> Error {
    Error::Input(e.to_string())
}
