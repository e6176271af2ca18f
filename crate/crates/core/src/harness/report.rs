//! Accuracy tables: structured report, rendered text table and CSV.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ExperimentConfig, NoiseSource, TrainConfig, UtterancePredictions};
use crate::error::{Error, Result};
use crate::format::SpeakerModel;
use crate::reliability::EvidenceMode;

pub const REPORT_MAGIC: &str = "spn-asi-report";
pub const REPORT_VERSION: u32 = 1;

/// Accuracy over the test utterances of one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cell {
    /// `None` for the clean column.
    pub noise: Option<String>,
    pub snr_db: Option<f64>,
    pub correct: usize,
    pub total: usize,
    /// Utterances whose processing failed; any failure voids `accuracy`.
    pub failed: usize,
    pub accuracy: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRow {
    pub model: String,
    pub mode: EvidenceMode,
    pub clean: Cell,
    /// Noise-major, SNR-minor.
    pub cells: Vec<Cell>,
    /// Mean accuracy over the noisy cells, absent if any cell failed.
    pub average: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSummary {
    pub per_speaker: BTreeMap<String, usize>,
    pub mean: f64,
}

impl ParameterSummary {
    pub fn from_models(models: &BTreeMap<String, SpeakerModel>) -> Self {
        let per_speaker: BTreeMap<String, usize> = models
            .iter()
            .map(|(id, m)| (id.clone(), m.parameter_count()))
            .collect();
        let mean = per_speaker.values().sum::<usize>() as f64 / per_speaker.len().max(1) as f64;
        ParameterSummary { per_speaker, mean }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentReport {
    pub magic: String,
    pub version: u32,
    pub train: TrainConfig,
    pub experiment: ExperimentConfig,
    pub speakers: Vec<String>,
    pub test_utterances: usize,
    pub noises: Vec<String>,
    pub rows: Vec<ResultRow>,
    pub parameters: ParameterSummary,
}

pub(super) fn assemble(
    truth: &[String],
    predictions: &[UtterancePredictions],
    noises: &[NoiseSource],
    models: &BTreeMap<String, SpeakerModel>,
    train: &TrainConfig,
    config: &ExperimentConfig,
) -> ExperimentReport {
    let tally = |noise: Option<&str>, snr: Option<f64>, mode_idx: usize, pick: &dyn Fn(&UtterancePredictions) -> &Result<Vec<String>>| {
        let mut cell = Cell {
            noise: noise.map(str::to_string),
            snr_db: snr,
            correct: 0,
            total: truth.len(),
            failed: 0,
            accuracy: None,
            failure: None,
        };
        for (t, p) in truth.iter().zip(predictions) {
            match pick(p) {
                Ok(labels) => cell.correct += usize::from(labels[mode_idx] == *t),
                Err(e) => {
                    cell.failed += 1;
                    cell.failure.get_or_insert_with(|| e.to_string());
                }
            }
        }
        if cell.failed == 0 && cell.total > 0 {
            cell.accuracy = Some(100.0 * cell.correct as f64 / cell.total as f64);
        }
        cell
    };

    let model = train.model_family.name().to_string();
    let rows = config
        .modes
        .iter()
        .enumerate()
        .map(|(m, &mode)| {
            let clean = tally(None, None, m, &|p| &p.0);
            let mut cells = Vec::new();
            for (n, noise) in noises.iter().enumerate() {
                for (s, &snr) in config.snr_levels_db.iter().enumerate() {
                    let idx = n * config.snr_levels_db.len() + s;
                    cells.push(tally(Some(&noise.name), Some(snr), m, &|p| &p.1[idx]));
                }
            }
            let average = cells
                .iter()
                .map(|c| c.accuracy)
                .collect::<Option<Vec<f64>>>()
                .map(|a| a.iter().sum::<f64>() / a.len() as f64);
            ResultRow {
                model: model.clone(),
                mode,
                clean,
                cells,
                average,
            }
        })
        .collect();

    ExperimentReport {
        magic: REPORT_MAGIC.to_string(),
        version: REPORT_VERSION,
        train: train.clone(),
        experiment: config.clone(),
        speakers: models.keys().cloned().collect(),
        test_utterances: truth.len(),
        noises: noises.iter().map(|n| n.name.clone()).collect(),
        rows,
        parameters: ParameterSummary::from_models(models),
    }
}

fn fmt_acc(c: &Cell) -> String {
    match c.accuracy {
        Some(a) => format!("{a:.2}"),
        None => "fail".into(),
    }
}

impl ExperimentReport {
    pub fn row(&self, mode: EvidenceMode) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    /// Accuracy of `mode` at `(noise, snr)`.
    pub fn accuracy(&self, mode: EvidenceMode, noise: &str, snr_db: f64) -> Option<f64> {
        self.row(mode)?
            .cells
            .iter()
            .find(|c| c.noise.as_deref() == Some(noise) && c.snr_db == Some(snr_db))?
            .accuracy
    }

    /// Mean accuracy of `mode` over all noises at `snr_db`.
    pub fn mean_accuracy_at(&self, mode: EvidenceMode, snr_db: f64) -> Option<f64> {
        let cells: Vec<f64> = self
            .row(mode)?
            .cells
            .iter()
            .filter(|c| c.snr_db == Some(snr_db))
            .map(|c| c.accuracy)
            .collect::<Option<_>>()?;
        (!cells.is_empty()).then(|| cells.iter().sum::<f64>() / cells.len() as f64)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: ExperimentReport =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("report: {e}")))?;
        if r.magic != REPORT_MAGIC {
            return Err(Error::Parse(format!("report: bad magic `{}`", r.magic)));
        }
        if r.version != REPORT_VERSION {
            return Err(Error::Parse(format!("report: unsupported version {}", r.version)));
        }
        Ok(r)
    }

    /// One line per cell: `model,mode,noise,snr_db,correct,total,failed,accuracy,failure`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = ["model", "mode", "noise", "snr_db", "correct", "total", "failed", "accuracy", "failure"];
        w.write_record(header).expect("in-memory csv");
        for row in &self.rows {
            for c in std::iter::once(&row.clean).chain(&row.cells) {
                w.write_record([
                    row.model.clone(),
                    row.mode.name().to_string(),
                    c.noise.clone().unwrap_or_else(|| "clean".into()),
                    c.snr_db.map(|s| s.to_string()).unwrap_or_default(),
                    c.correct.to_string(),
                    c.total.to_string(),
                    c.failed.to_string(),
                    c.accuracy.map(|a| format!("{a:.4}")).unwrap_or_default(),
                    c.failure.clone().unwrap_or_default(),
                ])
                .expect("in-memory csv");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }

    /// Plain-text table: one row per (model, mode), one block of SNR columns per noise.
    pub fn render_table(&self) -> String {
        const W: usize = 7;
        let snrs = &self.experiment.snr_levels_db;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "ASI accuracy (%)  speakers={}  test utterances={}  masker={}  snr aggregation={}",
            self.speakers.len(),
            self.test_utterances,
            self.experiment.masker.name(),
            self.experiment.snr_aggregation.name()
        );
        let block = snrs.len() * W;
        let mut line = format!("{:<16}{:>W$} ", "", "");
        for n in &self.noises {
            let _ = write!(line, "| {n:^block$} ");
        }
        let _ = writeln!(line, "| {:>W$}", "");
        out.push_str(&line);
        let mut line = format!("{:<16}{:>W$} ", "system", "clean");
        for _ in &self.noises {
            line.push_str("| ");
            for s in snrs {
                let _ = write!(line, "{s:>W$}");
            }
            line.push(' ');
        }
        let _ = writeln!(line, "| {:>W$}", "avg");
        out.push_str(&line);
        out.push_str(&"-".repeat(line.len() - 1));
        out.push('\n');
        for row in &self.rows {
            let label = format!("{} ({})", row.model.to_uppercase(), row.mode.name());
            let mut line = format!("{label:<16}{:>W$} ", fmt_acc(&row.clean));
            for chunk in row.cells.chunks(snrs.len().max(1)) {
                line.push_str("| ");
                for c in chunk {
                    let _ = write!(line, "{:>W$}", fmt_acc(c));
                }
                line.push(' ');
            }
            let avg = row.average.map(|a| format!("{a:.2}")).unwrap_or_else(|| "fail".into());
            let _ = writeln!(line, "| {avg:>W$}");
            out.push_str(&line);
        }
        let _ = writeln!(out, "\nParams. per speaker (mean): {:.1}", self.parameters.mean);
        for row in &self.rows {
            for c in std::iter::once(&row.clean).chain(&row.cells) {
                if let Some(f) = &c.failure {
                    let cond = match (&c.noise, c.snr_db) {
                        (Some(n), Some(s)) => format!("{n} @ {s} dB"),
                        _ => "clean".into(),
                    };
                    let _ = writeln!(out, "failed: {} ({}) {cond}: {f}", row.model, row.mode.name());
                }
            }
        }
        out
    }
}
