use std::path::Path;
use std::process::{Command, Output};

use ndarray::Array2;
use spn_asi::format::SpeakerModel;
use spn_asi::gmm::DiagonalGmm;
use spn_asi::{matrix_io, wav, GaussianLeaf, NodeId, SpnGraph, SpnNode};

fn spn_asi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spn-asi"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tone(n: usize, freq: f64, amp: f64) -> Vec<f64> {
    (0..n)
        .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin())
        .collect()
}

#[test]
fn show_config_defaults() {
    let out = spn_asi(&["--show-config"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.lines().any(|l| l == "learn.min_instances_to_split=50"), "{text}");
    assert!(text.lines().any(|l| l == "learn.independence_threshold=0.3"), "{text}");
    assert!(text.lines().any(|l| l == "em.components=48"), "{text}");
}

#[test]
fn train_without_corpus_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = spn_asi(&["train", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--corpus"), "{}", stderr(&out));
}

#[test]
fn flag_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 11\n[experiment]\nsnr_levels_db = [0.0, 5.0]\n").unwrap();

    let out = spn_asi(&["--config", s(&cfg), "--show-config", "evaluate", "--corpus", "unused"]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("experiment.snr_levels_db=[0.0,5.0]"));
    assert!(stdout(&out).contains("seed=11"));

    let out = spn_asi(&[
        "--config", s(&cfg), "--show-config", "evaluate", "--corpus", "unused", "--snr", "-5,10",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("experiment.snr_levels_db=[-5.0,10.0]"), "{}", stdout(&out));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[learn]\nmin_instances = 10\n").unwrap();
    let out = spn_asi(&["--config", s(&cfg), "--show-config"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("min_instances"), "{}", stderr(&out));
}

#[test]
fn inspect_gmm_anchor() {
    let dir = tempfile::tempdir().unwrap();
    let (k, b) = (48, 26);
    let gmm = DiagonalGmm::new(
        vec![1.0 / k as f64; k],
        Array2::from_shape_fn((k, b), |(i, j)| (i + j) as f64 * 0.1),
        Array2::from_elem((k, b), 1.0),
    )
    .unwrap();
    let path = dir.path().join("gmm.json");
    SpeakerModel::Gmm(gmm).save(&path).unwrap();
    let out = spn_asi(&["inspect", s(&path)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("kind: gmm"));
    assert!(text.contains("parameter_count: 2544"), "{text}");
    assert!(text.contains("valid: true"));
}

#[test]
fn inspect_two_component_fixture() {
    let leaf = |v, m, var| SpnNode::Leaf(GaussianLeaf::univariate(v, m, var).unwrap());
    let g = SpnGraph::new(
        vec![
            SpnNode::Sum {
                children: vec![NodeId(1), NodeId(2)],
                weights: vec![0.3, 0.7],
            },
            SpnNode::Product {
                children: vec![NodeId(3), NodeId(4)],
            },
            SpnNode::Product {
                children: vec![NodeId(5), NodeId(6)],
            },
            leaf(0, 0.0, 1.0),
            leaf(1, 1.0, 2.0),
            leaf(0, -1.0, 0.5),
            leaf(1, 2.0, 1.5),
        ],
        NodeId(0),
        2,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fig.json");
    SpeakerModel::Spn(g).save(&path).unwrap();
    let out = spn_asi(&["inspect", s(&path)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("nodes: 1 sum, 2 product, 4 leaf"), "{text}");
    assert!(text.contains("depth: 2"));
    assert!(text.contains("parameter_count: 10"));
    assert!(text.contains("valid: true"));

    let full = std::fs::read_to_string(&path).unwrap();
    let cut = dir.path().join("cut.json");
    std::fs::write(&cut, &full[..full.len() / 2]).unwrap();
    let out = spn_asi(&["inspect", s(&cut)]);
    assert_eq!(out.status.code(), Some(5));
    assert!(stderr(&out).contains("parse error"), "{}", stderr(&out));

    let out = spn_asi(&["inspect", s(&dir.path().join("missing.json"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn features_and_mix() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.wav");
    let noise = dir.path().join("noise.wav");
    wav::write_wav(&clean, &tone(8000, 440.0, 0.3)).unwrap();
    wav::write_wav(&noise, &tone(16000, 3000.0, 0.2)).unwrap();

    let feats = dir.path().join("clean.lsse");
    let out = spn_asi(&["features", "--input", s(&clean), "--output", s(&feats)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let m = matrix_io::decode_features(&std::fs::read(&feats).unwrap()).unwrap();
    assert_eq!(m.dim(), (30, 26));

    let noisy = dir.path().join("noisy.wav");
    let mask = dir.path().join("noisy.mask");
    let out = spn_asi(&[
        "mix", "--clean", s(&clean), "--noise", s(&noise), "--snr", "-5", "--output", s(&noisy),
        "--mask", s(&mask), "--seed", "3",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("achieved snr -5.000000 dB"), "{}", stdout(&out));
    assert_eq!(wav::read_wav(&noisy).unwrap().len(), 8000);
    let mask = matrix_io::decode_mask(&std::fs::read(&mask).unwrap()).unwrap();
    assert_eq!(mask.dim(), (30, 26));
    // the band around the clean tone stays reliable at -5 dB
    assert!(mask.column(4).iter().all(|&r| r));

    let out = spn_asi(&["features", "--input", s(&dir.path().join("nope.wav")), "--output", s(&feats)]);
    assert_eq!(out.status.code(), Some(3));

    let silent = dir.path().join("silent.wav");
    wav::write_wav(&silent, &[0.0; 8000]).unwrap();
    let out = spn_asi(&[
        "mix", "--clean", s(&silent), "--noise", s(&noise), "--snr", "0", "--output", s(&noisy),
    ]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn corpus_train_inspect_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let out = spn_asi(&[
        "synth-corpus", "--out", s(&corpus), "--speakers", "3", "--train-per-speaker", "2",
        "--test-per-speaker", "1", "--seconds", "1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(corpus.join("spk01/test/test00.wav").exists());

    let models = dir.path().join("models");
    let out = spn_asi(&["train", "--corpus", s(&corpus), "--out", s(&models)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let out = spn_asi(&["inspect", s(&models.join("spk00.json"))]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("kind: spn"));
    assert!(stdout(&out).contains("valid: true"));

    let run = |tag: &str, extra: &[&str]| {
        let report = dir.path().join(format!("{tag}.json"));
        let csv = dir.path().join(format!("{tag}.csv"));
        let mut args = vec![
            "evaluate", "--corpus", s(&corpus), "--snr", "0,10", "--noise", "synth:bursts",
            "--report", s(&report), "--csv", s(&csv),
        ];
        args.extend_from_slice(extra);
        let out = spn_asi(&args);
        assert!(out.status.success(), "{}", stderr(&out));
        (stdout(&out), std::fs::read(report).unwrap(), std::fs::read_to_string(csv).unwrap())
    };
    let saved = dir.path().join("saved");
    let (table, report_a, csv) = run("a", &["--save-models", s(&saved)]);
    assert!(table.contains("SPN (bounded)"), "{table}");
    assert_eq!(csv.lines().count(), 1 + 3 * 3);
    let (_, report_b, _) = run("b", &["--models", s(&models)]);
    assert_eq!(report_a, report_b, "trained-in-place and loaded models must agree");
    for id in ["spk00", "spk01", "spk02"] {
        let a = std::fs::read(saved.join(format!("{id}.json"))).unwrap();
        let b = std::fs::read(models.join(format!("{id}.json"))).unwrap();
        assert_eq!(a, b);
    }

    let out = spn_asi(&["evaluate", "--corpus", s(&corpus), "--models", s(&models), "--family", "gmm"]);
    assert_eq!(out.status.code(), Some(2));

    let out = spn_asi(&["train", "--corpus", s(&dir.path().join("none")), "--out", s(&models)]);
    assert_eq!(out.status.code(), Some(3));
}
