use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spn_asi::dsp::FeatureExtractor;
use spn_asi::format::SpeakerModel;
use spn_asi::harness::{self, Corpus, ModelFamily, SynthNoise};
use spn_asi::reliability::{
    mix_at_snr, reliability_mask, snr_db, subband_a_priori_snr, EvidenceMode, MixSpec,
    SnrAggregation,
};
use spn_asi::{matrix_io, seed, wav, Error};

mod config;

use config::CliConfig;

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_DATA: u8 = 4;
const EXIT_MODEL: u8 = 5;

/// Speaker identification with sum-product networks and missing-feature marginalisation.
#[derive(Debug, Parser)]
#[command(name = "spn-asi", version)]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Print the fully resolved configuration and exit.
    #[arg(long, global = true)]
    show_config: bool,

    /// Log progress and EM rescues to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Extract LSSE features from a WAV file.
    Features {
        #[arg(long, value_name = "WAV")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        output: PathBuf,
        /// Write CSV instead of the binary matrix format.
        #[arg(long)]
        csv: bool,
    },
    /// Add noise to a clean recording at a target SNR.
    Mix {
        #[arg(long, value_name = "WAV")]
        clean: PathBuf,
        /// Noise WAV, or `synth:<babble|bursts|coloured>`.
        #[arg(long, value_name = "WAV")]
        noise: String,
        #[arg(long, allow_hyphen_values = true, value_name = "DB")]
        snr: f64,
        #[arg(long, value_name = "WAV")]
        output: PathBuf,
        /// Also write the oracle reliability mask.
        #[arg(long, value_name = "FILE")]
        mask: Option<PathBuf>,
    },
    /// Train one model per speaker of a corpus directory.
    Train {
        #[command(flatten)]
        model: ModelArgs,
        /// Directory receiving `<speaker>.json`.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Run the noise × SNR × mode identification experiment.
    Evaluate {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        grid: GridArgs,
        /// Use models saved by `train` instead of training.
        #[arg(long, value_name = "DIR", conflicts_with = "save_models")]
        models: Option<PathBuf>,
        /// Save the trained models here.
        #[arg(long, value_name = "DIR")]
        save_models: Option<PathBuf>,
        /// Structured report (JSON).
        #[arg(long, value_name = "FILE")]
        report: Option<PathBuf>,
        /// Per-cell CSV.
        #[arg(long, value_name = "FILE")]
        csv: Option<PathBuf>,
    },
    /// Summarise a model file.
    Inspect {
        #[arg(value_name = "MODEL")]
        path: PathBuf,
    },
    /// Write a synthetic corpus in the directory layout read by `train`/`evaluate`.
    SynthCorpus {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        speakers: Option<usize>,
        #[arg(long)]
        train_per_speaker: Option<usize>,
        #[arg(long)]
        test_per_speaker: Option<usize>,
        #[arg(long, value_name = "SECONDS")]
        seconds: Option<f64>,
        /// Also write one WAV per synthetic noise kind into this directory.
        #[arg(long, value_name = "DIR")]
        noise_out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct ModelArgs {
    /// Corpus root: `<root>/<speaker>/{train,test}/*.wav`.
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    #[arg(long, value_parser = parse_family)]
    family: Option<ModelFamily>,
    #[arg(long)]
    min_instances_to_split: Option<usize>,
    #[arg(long)]
    independence_threshold: Option<f64>,
    #[arg(long)]
    components: Option<usize>,
}

#[derive(Debug, Args)]
struct GridArgs {
    /// Comma-separated SNR levels in dB.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, value_name = "DB,...")]
    snr: Option<Vec<f64>>,
    /// Comma-separated noise sources (WAV paths or `synth:<kind>`).
    #[arg(long, value_delimiter = ',', value_name = "SRC,...")]
    noise: Option<Vec<String>>,
    /// Comma-separated subset of none, marginal, bounded.
    #[arg(long, value_delimiter = ',', value_parser = parse_mode, value_name = "MODE,...")]
    modes: Option<Vec<EvidenceMode>>,
    #[arg(long, value_parser = parse_aggregation)]
    snr_aggregation: Option<SnrAggregation>,
}

fn parse_family(s: &str) -> Result<ModelFamily, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<EvidenceMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_aggregation(s: &str) -> Result<SnrAggregation, String> {
    match s {
        "mean_xi" => Ok(SnrAggregation::MeanXi),
        "psd_ratio" => Ok(SnrAggregation::PsdRatio),
        other => Err(format!("unknown aggregation `{other}` (expected mean_xi or psd_ratio)")),
    }
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => EXIT_IO,
            Error::Audio { .. } | Error::Input(_) | Error::Degenerate(_) | Error::Training { .. } => {
                EXIT_DATA
            }
            Error::Parse(_) | Error::Structure(_) => EXIT_MODEL,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn resolve_config(cli: &Cli) -> Result<CliConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => CliConfig::load(path).map_err(Failure::usage)?,
        None => CliConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match &cli.command {
        Some(Command::Train { model, .. }) => apply_model_args(&mut cfg, model),
        Some(Command::Evaluate { model, grid, .. }) => {
            apply_model_args(&mut cfg, model);
            if let Some(snr) = &grid.snr {
                cfg.experiment.snr_levels_db = snr.clone();
            }
            if let Some(noise) = &grid.noise {
                cfg.experiment.noise_sources = noise.clone();
            }
            if let Some(modes) = &grid.modes {
                cfg.experiment.modes = modes.clone();
            }
            if let Some(a) = grid.snr_aggregation {
                cfg.experiment.snr_aggregation = a;
            }
        }
        Some(Command::SynthCorpus {
            speakers,
            train_per_speaker,
            test_per_speaker,
            seconds,
            ..
        }) => {
            let s = &mut cfg.synth;
            s.speakers = speakers.unwrap_or(s.speakers);
            s.train_per_speaker = train_per_speaker.unwrap_or(s.train_per_speaker);
            s.test_per_speaker = test_per_speaker.unwrap_or(s.test_per_speaker);
            s.utterance_seconds = seconds.unwrap_or(s.utterance_seconds);
        }
        _ => {}
    }
    cfg.features.check().map_err(|e| Failure::usage(format!("features: {e}")))?;
    cfg.learn.check().map_err(|e| Failure::usage(format!("learn: {e}")))?;
    cfg.experiment
        .check()
        .map_err(|e| Failure::usage(format!("experiment: {e}")))?;
    Ok(cfg)
}

fn apply_model_args(cfg: &mut CliConfig, m: &ModelArgs) {
    if let Some(f) = m.family {
        cfg.model_family = f;
    }
    if let Some(v) = m.min_instances_to_split {
        cfg.learn.min_instances_to_split = v;
    }
    if let Some(v) = m.independence_threshold {
        cfg.learn.independence_threshold = v;
    }
    if let Some(v) = m.components {
        cfg.em.components = v;
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CmdResult {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn create_dir(path: &Path) -> CmdResult {
    std::fs::create_dir_all(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn features(cfg: &CliConfig, input: &Path, output: &Path, csv: bool) -> CmdResult {
    let samples = wav::read_wav(input)?;
    let feats = FeatureExtractor::new(cfg.features)?.extract(&samples)?;
    if csv {
        write_file(output, matrix_io::features_to_csv(&feats.0))
    } else {
        write_file(output, matrix_io::encode_features(&feats.0))
    }?;
    println!(
        "{}: {} frames x {} bands",
        output.display(),
        feats.num_frames(),
        feats.num_bands()
    );
    Ok(())
}

fn mix(
    cfg: &CliConfig,
    clean_path: &Path,
    noise_ref: &str,
    snr: f64,
    output: &Path,
    mask_path: Option<&Path>,
) -> CmdResult {
    let clean = wav::read_wav(clean_path)?;
    let noise = harness::NoiseSource::resolve(noise_ref, clean.len(), cfg.seed)?;
    let offset_seed = seed::derive_str(cfg.seed, &format!("mix/{}", noise.name));
    let spec = MixSpec::with_random_offset(snr, clean.len(), noise.samples.len(), offset_seed)?;
    let m = mix_at_snr(&clean, &noise.samples, &spec)?;
    wav::write_wav(output, &m.noisy)?;
    println!(
        "{}: offset {} gain {:.6} achieved snr {:.6} dB",
        output.display(),
        spec.noise_offset,
        m.gain,
        snr_db(&clean, &m.scaled_noise)
    );
    if let Some(path) = mask_path {
        let fx = FeatureExtractor::new(cfg.features)?;
        let xi = subband_a_priori_snr(
            &fx.psd(&clean)?,
            &fx.psd(&m.scaled_noise)?,
            fx.filterbank(),
            cfg.experiment.snr_aggregation,
        )?;
        let mask = reliability_mask(&xi, cfg.experiment.threshold_db);
        write_file(path, matrix_io::encode_mask(&mask.0))?;
        println!(
            "{}: {:.1}% reliable",
            path.display(),
            100.0 * mask.reliable_fraction()
        );
    }
    Ok(())
}

fn save_models(models: &BTreeMap<String, SpeakerModel>, dir: &Path) -> CmdResult {
    create_dir(dir)?;
    for (id, m) in models {
        m.save(&dir.join(format!("{id}.json")))?;
    }
    Ok(())
}

fn load_models(corpus: &Corpus, dir: &Path) -> Result<BTreeMap<String, SpeakerModel>, Failure> {
    corpus
        .speaker_ids()
        .into_iter()
        .map(|id| {
            let m = SpeakerModel::load(&dir.join(format!("{id}.json")))?;
            Ok((id.to_string(), m))
        })
        .collect()
}

fn train(cfg: &CliConfig, corpus_dir: &Path, out: &Path) -> CmdResult {
    let corpus = Corpus::from_dir(corpus_dir)?;
    let models = harness::train_speaker_models(&corpus, &cfg.train_config())?;
    save_models(&models, out)?;
    for (id, m) in &models {
        println!("{id}: {} model, {} parameters", m.kind(), m.parameter_count());
    }
    Ok(())
}

fn evaluate(
    cfg: &CliConfig,
    corpus_dir: &Path,
    models_dir: Option<&Path>,
    save_dir: Option<&Path>,
    report_path: Option<&Path>,
    csv_path: Option<&Path>,
) -> CmdResult {
    let corpus = Corpus::from_dir(corpus_dir)?;
    let train = cfg.train_config();
    let report = match models_dir {
        Some(dir) => {
            let models = load_models(&corpus, dir)?;
            if let Some((id, m)) = models.iter().find(|(_, m)| m.kind() != cfg.model_family.name()) {
                return Err(Failure::usage(format!(
                    "model `{id}` is a {} model but model_family is {}",
                    m.kind(),
                    cfg.model_family.name()
                )));
            }
            harness::evaluate_models(&corpus, &models, &train, &cfg.experiment)?
        }
        None => {
            let out = harness::run_experiment(&corpus, &train, &cfg.experiment)?;
            if let Some(dir) = save_dir {
                save_models(&out.models, dir)?;
            }
            out.report
        }
    };
    if let Some(path) = report_path {
        write_file(path, report.to_json())?;
    }
    if let Some(path) = csv_path {
        write_file(path, report.to_csv())?;
    }
    print!("{}", report.render_table());
    Ok(())
}

fn inspect(path: &Path) -> CmdResult {
    let model = SpeakerModel::load(path)?;
    let graph = match &model {
        SpeakerModel::Spn(g) => g.clone(),
        SpeakerModel::Gmm(g) => {
            println!("components: {}", g.num_components());
            g.to_spn()?
        }
    };
    let (sums, products, leaves) = graph.node_counts();
    let report = graph.validate();
    println!("kind: {}", model.kind());
    println!("num_variables: {}", model.num_variables());
    println!("nodes: {sums} sum, {products} product, {leaves} leaf");
    match graph.depth() {
        Ok(d) => println!("depth: {d}"),
        Err(e) => println!("depth: undefined ({e})"),
    }
    println!("parameter_count: {}", model.parameter_count());
    println!("valid: {}", report.is_valid());
    print!("{report}");
    Ok(())
}

fn synth_corpus(cfg: &CliConfig, out: &Path, noise_out: Option<&Path>) -> CmdResult {
    let params = cfg.synth_params();
    let corpus = harness::generate_synthetic_corpus(&params)?;
    corpus.write_dir(out)?;
    println!(
        "{}: {} speakers, {} train + {} test utterances each",
        out.display(),
        params.speakers,
        params.train_per_speaker,
        params.test_per_speaker
    );
    if let Some(dir) = noise_out {
        create_dir(dir)?;
        let len = (cfg.experiment.synth_noise_seconds * spn_asi::dsp::SAMPLE_RATE as f64) as usize;
        for kind in SynthNoise::ALL {
            let source = harness::NoiseSource::resolve(&format!("synth:{}", kind.name()), len, cfg.seed)?;
            let path = dir.join(format!("{}.wav", kind.name()));
            wav::write_wav(&path, &source.samples)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    let cfg = resolve_config(&cli)?;
    if cli.show_config {
        for line in cfg.dotted_lines() {
            println!("{line}");
        }
        return Ok(());
    }
    let Some(command) = &cli.command else {
        return Err(Failure::usage("no subcommand given (see --help)"));
    };
    match command {
        Command::Features { input, output, csv } => features(&cfg, input, output, *csv),
        Command::Mix {
            clean,
            noise,
            snr,
            output,
            mask,
        } => mix(&cfg, clean, noise, *snr, output, mask.as_deref()),
        Command::Train { model, out } => train(&cfg, &model.corpus, out),
        Command::Evaluate {
            model,
            models,
            save_models,
            report,
            csv,
            ..
        } => evaluate(
            &cfg,
            &model.corpus,
            models.as_deref(),
            save_models.as_deref(),
            report.as_deref(),
            csv.as_deref(),
        ),
        Command::Inspect { path } => inspect(path),
        Command::SynthCorpus { out, noise_out, .. } => synth_corpus(&cfg, out, noise_out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
