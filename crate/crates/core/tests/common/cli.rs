//! Drives the `mmsivae` binary through the full command chain.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_mmsivae");

/// A small two-stage cohort that trains in well under a second.
pub const SMALL_SPEC: &str = r#"
seed = 5
regions_per_modality = 6
n_reference = 40
n_holdout = 10
stage_names = ["early", "late"]
stage_sizes = [12, 12]
stage_shifts = [2.0, 4.0]
planted_regions = [0, 3]
"#;

pub fn mmsivae(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .output()
        .expect("spawn mmsivae")
}

pub fn ok(args: &[&str]) -> Output {
    let out = mmsivae(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub struct Run {
    pub data: PathBuf,
    pub train: PathBuf,
    pub score: PathBuf,
    pub eval: PathBuf,
    pub interp: PathBuf,
}

impl Run {
    pub fn dirs(&self) -> [&PathBuf; 5] {
        [
            &self.data,
            &self.train,
            &self.score,
            &self.eval,
            &self.interp,
        ]
    }

    /// Every non-manifest output of the chain.
    pub fn primary_outputs(&self) -> Vec<PathBuf> {
        vec![
            self.train.join("checkpoint.mmsv"),
            self.train.join("train_log.jsonl"),
            self.train.join("train_summary.json"),
            self.score.join("deviations.csv"),
            self.score.join("reference_stats.json"),
            self.eval.join("evaluation.json"),
            self.eval.join("likelihood_ratios.csv"),
            self.interp.join("latent_mask.json"),
            self.interp.join("effect_map.csv"),
        ]
    }
}

/// synth, train, score, evaluate and interpret under `root`.
pub fn chain(root: &Path) -> Run {
    fs::create_dir_all(root).unwrap();
    let spec = root.join("spec.toml");
    fs::write(&spec, SMALL_SPEC).unwrap();
    let r = Run {
        data: root.join("data"),
        train: root.join("train"),
        score: root.join("score"),
        eval: root.join("eval"),
        interp: root.join("interp"),
    };
    ok(&["synth", "--spec", s(&spec), "--out", s(&r.data)]);
    ok(&[
        "train",
        "--data",
        s(&r.data),
        "--out",
        s(&r.train),
        "--epochs",
        "3",
        "--batch-size",
        "16",
        "--latent-dim",
        "3",
        "--learning-rate",
        "1e-3",
        "--seed",
        "9",
    ]);
    let ckpt = r.train.join("checkpoint.mmsv");
    ok(&[
        "score",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&r.data),
        "--out",
        s(&r.score),
        "--p-level",
        "0.01",
    ]);
    let report = r.score.join("deviations.csv");
    ok(&[
        "evaluate",
        "--report",
        s(&report),
        "--data",
        s(&r.data),
        "--out",
        s(&r.eval),
        "--p-levels",
        "0.05,0.01",
    ]);
    ok(&[
        "interpret",
        "--checkpoint",
        s(&ckpt),
        "--report",
        s(&report),
        "--data",
        s(&r.data),
        "--out",
        s(&r.interp),
        "--threshold",
        "0.5",
    ]);
    r
}

/// Outputs whose bytes changed between two runs of the chain in `root`.
pub fn rerun_differences(root: &Path) -> Vec<PathBuf> {
    let r = chain(root);
    let first: Vec<Vec<u8>> = r
        .primary_outputs()
        .iter()
        .map(|f| fs::read(f).unwrap())
        .collect();
    chain(root);
    r.primary_outputs()
        .into_iter()
        .zip(first)
        .filter(|(f, bytes)| fs::read(f).unwrap() != *bytes)
        .map(|(f, _)| f)
        .collect()
}
