//! Command implementations behind the CLI.
//!
//! Every command validates its inputs, computes its results in memory, writes
//! each output atomically, and appends one line to `manifest.jsonl` in its
//! output directory. Configuration precedence is flag > config file > default;
//! the effective configuration is echoed into the manifest.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dataio::{
    generate_synthetic, ingest, read_header, read_labels, DatasetHeader, MultimodalBatch,
    SynthSpec, COVARIATE_FILE, HEADER_FILE, LABEL_FILE, SYNTH_SPEC_FILE,
};
use crate::error::{Error, Result};
use crate::fsio::{sha256_file, sha256_hex, write_atomic};
use crate::fusion::FusionMethod;
use crate::interpret::{
    effect_size_maps, masked_feature_z, select_significant_dims, CovariatePolicy, FillPolicy,
    LatentMask, DEFAULT_Q, DEFAULT_THRESHOLD,
};
use crate::metrics::{emd_1d, likelihood_ratio, LikelihoodRatio};
use crate::net::checkpoint::{load_checkpoint, Checkpoint};
use crate::score::{
    chi_square_threshold, fit_reference, score_subjects, DeviationReport, LatentMode,
    ReferenceStats, DEFAULT_P_LEVEL, DEFAULT_SHRINKAGE,
};
use crate::trainer::{train, TrainConfig};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.mmsv";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const TRAIN_SUMMARY_FILE: &str = "train_summary.json";
pub const REPORT_FILE: &str = "deviations.csv";
pub const REFERENCE_STATS_FILE: &str = "reference_stats.json";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const LR_TABLE_FILE: &str = "likelihood_ratios.csv";
pub const MASK_FILE: &str = "latent_mask.json";
pub const EFFECT_MAP_FILE: &str = "effect_map.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub version: String,
}

fn digest(path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

fn dataset_files(dir: &Path, header: &DatasetHeader) -> Vec<PathBuf> {
    let mut files = vec![dir.join(HEADER_FILE)];
    files.extend(header.modalities.iter().map(|m| dir.join(&m.file)));
    files.push(dir.join(COVARIATE_FILE));
    files.push(dir.join(LABEL_FILE));
    files
}

struct Outputs {
    dir: PathBuf,
    written: Vec<FileDigest>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        }
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.written.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    fn finish(
        self,
        command: &str,
        config: &impl Serialize,
        seed: Option<u64>,
        inputs: Vec<FileDigest>,
    ) -> Result<Vec<PathBuf>> {
        let manifest = RunManifest {
            command: command.into(),
            config: serde_json::to_value(config)?,
            seed,
            inputs,
            outputs: self.written.clone(),
            version: env!("CARGO_PKG_VERSION").into(),
        };
        let mut line = serde_json::to_vec(&manifest)?;
        line.push(b'\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join(MANIFEST_FILE))?;
        f.write_all(&line)?;
        Ok(self
            .written
            .iter()
            .map(|d| PathBuf::from(&d.path))
            .collect())
    }
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(Error::Usage(format!(
            "{what} {} is not a directory",
            path.display()
        )));
    }
    Ok(())
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Usage(format!(
            "{what} {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

/// Reads a TOML config (or JSON, by `.json` extension); `None` gives defaults.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    require_file(path, "config file")?;
    let text = fs::read_to_string(path)?;
    if path.extension().is_some_and(|e| e == "json") {
        return serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())));
    }
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn cmd_synth(spec_file: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<Vec<PathBuf>> {
    let mut spec: SynthSpec = load_config(spec_file)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    spec.validate()?;
    let header = generate_synthetic(&spec, out)?;
    let mut outputs = Outputs::new(out);
    for path in dataset_files(out, &header)
        .into_iter()
        .chain([out.join(SYNTH_SPEC_FILE)])
    {
        outputs.written.push(digest(&path)?);
    }
    let inputs = spec_file.map(digest).transpose()?.into_iter().collect();
    outputs.finish("synth", &spec, Some(spec.seed), inputs)
}

/// Command-line overrides for [`TrainConfig`].
#[derive(Debug, Clone, Default)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub latent_dim: Option<usize>,
    pub seed: Option<u64>,
    pub fusion: Option<FusionMethod>,
}

impl TrainOverrides {
    pub fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.latent_dim {
            cfg.latent_dim = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.fusion {
            cfg.fusion = v;
        }
    }
}

fn standardized(dir: &Path, ckpt: &Checkpoint) -> Result<(MultimodalBatch, DatasetHeader)> {
    let (batch, header) = ingest(dir)?;
    if header.modalities != ckpt.meta.dataset.modalities
        || header.covariates != ckpt.meta.dataset.covariates
    {
        return Err(Error::Contract(format!(
            "dataset in {} does not match the checkpoint's feature layout",
            dir.display()
        )));
    }
    Ok((ckpt.standardization.standardize(&batch)?, header))
}

#[derive(Serialize)]
struct TrainSummary {
    epochs: usize,
    initial_rec: f64,
    final_rec: f64,
    n_train: usize,
}

pub fn cmd_train(
    data: &Path,
    out: &Path,
    config: Option<&Path>,
    overrides: &TrainOverrides,
) -> Result<Vec<PathBuf>> {
    require_dir(data, "data directory")?;
    let mut cfg: TrainConfig = load_config(config)?;
    overrides.apply(&mut cfg);
    cfg.validate()?;
    let (batch, header) = ingest(data)?;
    let stats = crate::dataio::StandardizationStats::fit(&batch, header.reference_tag())?;
    let reference = stats.standardize(&batch)?.cohort(header.reference_tag());
    let (ckpt, log) = train(&reference, &header, &stats, &cfg)?;

    let mut outputs = Outputs::new(out);
    fs::create_dir_all(out)?;
    outputs.write(CHECKPOINT_FILE, &ckpt.to_bytes()?)?;
    outputs.write(TRAIN_LOG_FILE, log.to_jsonl()?.as_bytes())?;
    let summary = TrainSummary {
        epochs: cfg.epochs,
        initial_rec: log.initial_rec,
        final_rec: log.final_rec,
        n_train: reference.len(),
    };
    outputs.write(TRAIN_SUMMARY_FILE, &serde_json::to_vec_pretty(&summary)?)?;
    let mut inputs: Vec<FileDigest> = dataset_files(data, &header)
        .iter()
        .map(|p| digest(p))
        .collect::<Result<_>>()?;
    inputs.extend(config.map(digest).transpose()?);
    outputs.finish("train", &cfg, Some(cfg.seed), inputs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    pub p_level: f64,
    pub shrinkage: f64,
    pub latent_mode: LatentMode,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            p_level: DEFAULT_P_LEVEL,
            shrinkage: DEFAULT_SHRINKAGE,
            latent_mode: LatentMode::PosteriorMean,
        }
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!(
            "p-level must lie in (0, 1), got {p}"
        )));
    }
    Ok(())
}

/// Command-line overrides for [`ScoreConfig`].
#[derive(Debug, Clone, Default)]
pub struct ScoreOverrides {
    pub p_level: Option<f64>,
    pub shrinkage: Option<f64>,
    pub sample_seed: Option<u64>,
}

pub fn cmd_score(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    config: Option<&Path>,
    overrides: &ScoreOverrides,
) -> Result<Vec<PathBuf>> {
    require_file(checkpoint, "checkpoint")?;
    require_dir(data, "data directory")?;
    let mut cfg: ScoreConfig = load_config(config)?;
    if let Some(v) = overrides.p_level {
        cfg.p_level = v;
    }
    if let Some(v) = overrides.shrinkage {
        cfg.shrinkage = v;
    }
    if let Some(seed) = overrides.sample_seed {
        cfg.latent_mode = LatentMode::Sample { seed };
    }
    check_p(cfg.p_level)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let (all, header) = standardized(data, &ckpt)?;
    let stats = fit_reference(
        &ckpt,
        &all.cohort(header.reference_tag()),
        cfg.shrinkage,
        cfg.latent_mode,
    )?;
    let report = score_subjects(&ckpt, &stats, &all, cfg.p_level)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }

    let mut outputs = Outputs::new(out);
    fs::create_dir_all(out)?;
    outputs.write(REPORT_FILE, &report.to_csv()?)?;
    outputs.write(REFERENCE_STATS_FILE, &serde_json::to_vec_pretty(&stats)?)?;
    let mut inputs = vec![digest(checkpoint)?];
    inputs.extend(
        dataset_files(data, &header)
            .iter()
            .map(|p| digest(p))
            .collect::<Result<Vec<_>>>()?,
    );
    inputs.extend(config.map(digest).transpose()?);
    let seed = match cfg.latent_mode {
        LatentMode::Sample { seed } => Some(seed),
        LatentMode::PosteriorMean => None,
    };
    outputs.finish("score", &cfg, seed, inputs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub p_levels: Vec<f64>,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        Self {
            p_levels: vec![0.05, 0.01, 0.001],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrRow {
    pub p_level: f64,
    pub score: String,
    pub cohort: String,
    #[serde(flatten)]
    pub lr: LikelihoodRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmdRow {
    pub score: String,
    pub cohort: String,
    pub emd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub cohort: String,
    pub n: usize,
    pub d_ml_mean: f64,
    pub d_ml_median: f64,
    pub d_ml_sd: f64,
    pub d_mf_mean: f64,
    pub d_mf_median: f64,
    pub d_mf_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub control: String,
    pub stages: Vec<String>,
    pub likelihood_ratios: Vec<LrRow>,
    pub emd: Vec<EmdRow>,
    pub summaries: Vec<CohortSummary>,
}

fn summary(values: &[f64]) -> (f64, f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    let median = if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    };
    (mean, median, sd)
}

/// Likelihood ratios per p-level, EMD of deviation scores against the
/// holdout controls, and per-cohort summaries. Outlier flags are recomputed
/// from `D_ml`/`D_mf` at each p-level.
pub fn evaluate(
    report: &DeviationReport,
    header: &DatasetHeader,
    p_levels: &[f64],
) -> Result<Evaluation> {
    let control = header.holdout_tag.clone();
    let stages = header.stage_tags();
    let group = |tag: &str| -> Vec<&crate::score::DeviationRecord> {
        report.records.iter().filter(|r| r.cohort == tag).collect()
    };
    let controls = group(&control);
    if controls.is_empty() {
        return Err(Error::Contract(format!("report has no {control} subjects")));
    }
    let mut groups: Vec<(String, Vec<&crate::score::DeviationRecord>)> =
        stages.iter().map(|s| (s.clone(), group(s))).collect();
    groups.push((
        "all".into(),
        report
            .records
            .iter()
            .filter(|r| stages.contains(&r.cohort))
            .collect(),
    ));
    if let Some((tag, _)) = groups.iter().find(|(_, g)| g.is_empty()) {
        return Err(Error::Contract(format!("report has no {tag} subjects")));
    }
    type Score = fn(&crate::score::DeviationRecord) -> f64;
    let scores: [(&str, usize, Score); 2] = [
        ("d_ml", report.latent_dim(), |r| r.d_ml),
        ("d_mf", report.region_names.len(), |r| r.d_mf),
    ];

    let mut lrs = Vec::new();
    for &p in p_levels {
        check_p(p)?;
        for (name, dof, get) in scores {
            let thr = chi_square_threshold(dof.max(1), p)?;
            let flag = |rs: &[&crate::score::DeviationRecord]| -> Vec<bool> {
                rs.iter().map(|r| get(r) * get(r) > thr).collect()
            };
            let c = flag(&controls);
            for (tag, g) in &groups {
                lrs.push(LrRow {
                    p_level: p,
                    score: name.into(),
                    cohort: tag.clone(),
                    lr: likelihood_ratio(&flag(g), &c)?,
                });
            }
        }
    }

    let mut emd = Vec::new();
    for (name, _, get) in scores {
        let c: Vec<f64> = controls.iter().map(|r| get(r)).collect();
        for (tag, g) in &groups {
            let v: Vec<f64> = g.iter().map(|r| get(r)).collect();
            emd.push(EmdRow {
                score: name.into(),
                cohort: tag.clone(),
                emd: emd_1d(&v, &c)?,
            });
        }
    }

    let mut summaries = Vec::new();
    for tag in &header.cohorts {
        let g = group(tag);
        if g.is_empty() {
            continue;
        }
        let ml: Vec<f64> = g.iter().map(|r| r.d_ml).collect();
        let mf: Vec<f64> = g.iter().map(|r| r.d_mf).collect();
        let (a, b, c) = summary(&ml);
        let (d, e, f) = summary(&mf);
        summaries.push(CohortSummary {
            cohort: tag.clone(),
            n: g.len(),
            d_ml_mean: a,
            d_ml_median: b,
            d_ml_sd: c,
            d_mf_mean: d,
            d_mf_median: e,
            d_mf_sd: f,
        });
    }
    Ok(Evaluation {
        control,
        stages,
        likelihood_ratios: lrs,
        emd,
        summaries,
    })
}

fn lr_table(rows: &[LrRow]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record([
        "p_level",
        "score",
        "cohort",
        "n_disease",
        "disease_outliers",
        "n_control",
        "control_outliers",
        "tpr",
        "fpr",
        "fpr_floored",
        "ratio",
    ])?;
    for r in rows {
        let l = &r.lr;
        w.write_record([
            r.p_level.to_string(),
            r.score.clone(),
            r.cohort.clone(),
            l.n_disease.to_string(),
            l.disease_outliers.to_string(),
            l.n_control.to_string(),
            l.control_outliers.to_string(),
            l.tpr.to_string(),
            l.fpr.to_string(),
            l.fpr_floored.to_string(),
            l.ratio.to_string(),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn cmd_evaluate(
    report_path: &Path,
    data: &Path,
    out: &Path,
    config: Option<&Path>,
    p_levels: Option<Vec<f64>>,
) -> Result<Vec<PathBuf>> {
    require_file(report_path, "report")?;
    require_dir(data, "data directory")?;
    let mut cfg: EvaluateConfig = load_config(config)?;
    if let Some(p) = p_levels {
        cfg.p_levels = p;
    }
    if cfg.p_levels.is_empty() {
        return Err(Error::Config("at least one p-level is required".into()));
    }
    let report = DeviationReport::read_csv(report_path)?;
    let header = read_header(data)?;
    let labels = read_labels(data)?;
    for r in &report.records {
        match labels.get(&r.subject_id) {
            Some(tag) if *tag == r.cohort => {}
            Some(tag) => {
                return Err(Error::Contract(format!(
                    "subject {} is {} in the report but {tag} in the labels",
                    r.subject_id, r.cohort
                )))
            }
            None => {
                return Err(Error::Contract(format!(
                    "subject {} has no label",
                    r.subject_id
                )))
            }
        }
    }
    let eval = evaluate(&report, &header, &cfg.p_levels)?;

    let mut outputs = Outputs::new(out);
    fs::create_dir_all(out)?;
    outputs.write(EVALUATION_FILE, &serde_json::to_vec_pretty(&eval)?)?;
    outputs.write(LR_TABLE_FILE, &lr_table(&eval.likelihood_ratios)?)?;
    let mut inputs = vec![
        digest(report_path)?,
        digest(&data.join(HEADER_FILE))?,
        digest(&data.join(LABEL_FILE))?,
    ];
    inputs.extend(config.map(digest).transpose()?);
    outputs.finish("evaluate", &cfg, None, inputs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpretConfig {
    pub threshold: f64,
    pub fill: FillPolicy,
    pub covariates: CovariatePolicy,
    pub q: f64,
}

impl Default for InterpretConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            fill: FillPolicy::Zeros,
            covariates: CovariatePolicy::Zero,
            q: DEFAULT_Q,
        }
    }
}

/// Command-line overrides for [`InterpretConfig`].
#[derive(Debug, Clone, Default)]
pub struct InterpretOverrides {
    pub threshold: Option<f64>,
    pub fill: Option<FillPolicy>,
    pub covariates: Option<CovariatePolicy>,
    pub q: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    #[serde(flatten)]
    pub mask: LatentMask,
    /// Mean |Z_ml| per latent dimension over the disease stages.
    pub mean_abs_z_ml: Vec<f64>,
    pub n_disease: usize,
}

/// Latent selection and effect maps from a scored cohort.
pub fn interpret(
    ckpt: &Checkpoint,
    stats: &ReferenceStats,
    report: &DeviationReport,
    all: &MultimodalBatch,
    header: &DatasetHeader,
    cfg: &InterpretConfig,
) -> Result<(MaskRecord, crate::interpret::EffectMap)> {
    let stages = header.stage_tags();
    let z_ml: Vec<Vec<f64>> = report
        .records
        .iter()
        .filter(|r| stages.contains(&r.cohort))
        .map(|r| r.z_ml.clone())
        .collect();
    if z_ml.is_empty() {
        return Err(Error::Contract(
            "report has no disease-stage subjects".into(),
        ));
    }
    let d = stats.latent.dim();
    if z_ml.iter().any(|z| z.len() != d) {
        return Err(Error::dim("interpret", d, z_ml[0].len()));
    }
    let mean_abs: Vec<f64> = (0..d)
        .map(|j| z_ml.iter().map(|z| z[j].abs()).sum::<f64>() / z_ml.len() as f64)
        .collect();
    let mask = LatentMask {
        dims: select_significant_dims(&z_ml, cfg.threshold),
        latent_dim: d,
        fill: cfg.fill,
        covariates: cfg.covariates,
        threshold: cfg.threshold,
    };
    let reference = all.cohort(header.reference_tag());
    let rest_idx: Vec<usize> = (0..all.len())
        .filter(|&i| all.cohorts[i] == header.holdout_tag || stages.contains(&all.cohorts[i]))
        .collect();
    let rest = all.select(&rest_idx);
    let z_mf = masked_feature_z(ckpt, stats, &reference, &rest, &mask)?;
    let map = effect_size_maps(
        &z_mf,
        &rest.cohorts,
        &header.holdout_tag,
        &stages,
        header,
        cfg.q,
    )?;
    Ok((
        MaskRecord {
            mask,
            mean_abs_z_ml: mean_abs,
            n_disease: z_ml.len(),
        },
        map,
    ))
}

pub fn cmd_interpret(
    checkpoint: &Path,
    report_path: &Path,
    reference_stats: Option<&Path>,
    data: &Path,
    out: &Path,
    config: Option<&Path>,
    overrides: &InterpretOverrides,
) -> Result<Vec<PathBuf>> {
    require_file(checkpoint, "checkpoint")?;
    require_file(report_path, "report")?;
    require_dir(data, "data directory")?;
    let stats_path = reference_stats.map(Path::to_path_buf).unwrap_or_else(|| {
        report_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(REFERENCE_STATS_FILE)
    });
    require_file(&stats_path, "reference statistics")?;
    let mut cfg: InterpretConfig = load_config(config)?;
    if let Some(v) = overrides.threshold {
        cfg.threshold = v;
    }
    if let Some(v) = overrides.fill {
        cfg.fill = v;
    }
    if let Some(v) = overrides.covariates {
        cfg.covariates = v;
    }
    if let Some(v) = overrides.q {
        cfg.q = v;
    }
    if !(cfg.q > 0.0 && cfg.q < 1.0) {
        return Err(Error::Config(format!(
            "q must lie in (0, 1), got {}",
            cfg.q
        )));
    }
    let ckpt = load_checkpoint(checkpoint)?;
    let stats = ReferenceStats::load(&stats_path)?;
    let report = DeviationReport::read_csv(report_path)?;
    let (all, header) = standardized(data, &ckpt)?;
    let (mask, map) = interpret(&ckpt, &stats, &report, &all, &header, &cfg)?;

    let mut outputs = Outputs::new(out);
    fs::create_dir_all(out)?;
    outputs.write(MASK_FILE, &serde_json::to_vec_pretty(&mask)?)?;
    outputs.write(EFFECT_MAP_FILE, &map.to_csv()?)?;
    let mut inputs = vec![
        digest(checkpoint)?,
        digest(report_path)?,
        digest(&stats_path)?,
    ];
    inputs.extend(
        dataset_files(data, &header)
            .iter()
            .map(|p| digest(p))
            .collect::<Result<Vec<_>>>()?,
    );
    inputs.extend(config.map(digest).transpose()?);
    outputs.finish("interpret", &cfg, None, inputs)
}
