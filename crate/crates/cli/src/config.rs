//! Resolved configuration: defaults, then the `--config` TOML file, then flags.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use spn_asi::dsp::FrameParams;
use spn_asi::gmm::EmParams;
use spn_asi::harness::{ExperimentConfig, ModelFamily, SynthCorpusParams, TrainConfig};
use spn_asi::learn::LearnParams;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    /// Every stage derives its own seed from this one.
    pub seed: u64,
    pub model_family: ModelFamily,
    pub features: FrameParams,
    pub learn: LearnParams,
    pub em: EmParams,
    pub experiment: ExperimentConfig,
    pub synth: SynthCorpusParams,
}

impl CliConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.message().to_string() + &span_hint(&e))
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("config {}: {e}", path.display()))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model_family: self.model_family,
            features: self.features,
            learn: self.learn.clone(),
            em: self.em.clone(),
            seed: self.seed,
        }
    }

    pub fn synth_params(&self) -> SynthCorpusParams {
        SynthCorpusParams {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    /// `section.key=value` lines, one per leaf setting.
    pub fn dotted_lines(&self) -> Vec<String> {
        let mut out = Vec::new();
        flatten("", &serde_json::to_value(self).expect("config serializes"), &mut out);
        out
    }
}

fn span_hint(e: &toml::de::Error) -> String {
    match e.span() {
        Some(span) => format!(" (at byte {})", span.start),
        None => String::new(),
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, child, out);
            }
        }
        Value::String(s) => out.push(format!("{prefix}={s}")),
        other => out.push(format!("{prefix}={other}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_show_paper_constants() {
        let lines = CliConfig::default().dotted_lines();
        for expected in [
            "learn.min_instances_to_split=50",
            "learn.independence_threshold=0.3",
            "em.components=48",
            "features.frame_len=512",
            "features.frame_shift=256",
            "features.num_bands=26",
            "experiment.snr_levels_db=[-5.0,0.0,5.0,10.0,15.0]",
            "experiment.snr_aggregation=mean_xi",
        ] {
            assert!(lines.iter().any(|l| l == expected), "missing {expected}");
        }
    }

    #[test]
    fn file_values_and_unknown_keys() {
        let c = CliConfig::from_toml("seed = 4\n[experiment]\nsnr_levels_db = [0.0]\n").unwrap();
        assert_eq!(c.seed, 4);
        assert_eq!(c.experiment.snr_levels_db, vec![0.0]);
        assert_eq!(c.learn, LearnParams::default());
        let err = CliConfig::from_toml("[learn]\nmin_instance = 3\n").unwrap_err();
        assert!(err.contains("min_instance"), "{err}");
        let err = CliConfig::from_toml("[learn]\nindependence_threshold = \"high\"\n").unwrap_err();
        assert!(err.contains("independence_threshold") || err.contains("invalid type"), "{err}");
    }
}
