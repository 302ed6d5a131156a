//! Reference-cohort statistics and subject-level deviation scores.
//!
//! Each subject is embedded at the joint posterior mean (or a posterior draw
//! in sampling mode) and reconstructed from it. Two multivariate scores are
//! computed against the reference cohort:
//!
//! * `D_ml`, the Mahalanobis distance of the latent embedding,
//! * `D_mf`, the Mahalanobis distance of the per-region squared
//!   reconstruction errors, concatenated over modalities.
//!
//! Per-dimension z-scores `Z_ml` and `Z_mf` use the reference mean and sample
//! standard deviation. A subject is an outlier at level `p` when `D^2`
//! exceeds the chi-square `1 - p` quantile with `dim` degrees of freedom.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dataio::MultimodalBatch;
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::fusion::{fuse_vars, joint_posterior_mean, FusionSpec};
use crate::gauss::categorical_index;
use crate::net::checkpoint::Checkpoint;
use crate::net::{Binding, Model};
use crate::numkit::{cholesky, forward_solve, mean_cov, Matrix, Tape};

pub const DEFAULT_SHRINKAGE: f64 = 0.05;
pub const DEFAULT_P_LEVEL: f64 = 0.001;

/// How a subject's latent position is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum LatentMode {
    #[default]
    PosteriorMean,
    /// One draw from the joint posterior per subject.
    Sample { seed: u64 },
}

/// Latent positions (`n x d`) and their per-modality reconstructions.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub latent: Matrix,
    pub recon: Vec<Matrix>,
}

/// Decodes latents `z` (`n x d`) through every modality decoder.
pub fn decode_latents(model: &Model, z: &Matrix, cov: &Matrix) -> Result<Vec<Matrix>> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, Binding::Constant, Binding::Constant)?;
    let zv = tape.constant(z.clone())?;
    let c = tape.constant(cov.clone())?;
    let out = bound.decode_all(&mut tape, zv, c)?;
    Ok(out.iter().map(|&v| tape.value(v).clone()).collect())
}

pub fn embed(
    model: &Model,
    spec: &FusionSpec,
    x: &[Matrix],
    cov: &Matrix,
    mode: LatentMode,
) -> Result<Embedding> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, Binding::Constant, Binding::Constant)?;
    let xs = x
        .iter()
        .map(|m| tape.constant(m.clone()))
        .collect::<Result<Vec<_>>>()?;
    let c = tape.constant(cov.clone())?;
    let q = bound.encode_all(&mut tape, &xs, c)?;
    let mix = fuse_vars(&mut tape, &q, spec)?;
    let n = cov.rows();
    let d = model.arch.latent_dim;
    let mut rng = match mode {
        LatentMode::Sample { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        LatentMode::PosteriorMean => None,
    };
    let mut latent = Matrix::zeros(n, d);
    for r in 0..n {
        let post = mix.row(&tape, r);
        let z = match rng.as_mut() {
            None => joint_posterior_mean(&post),
            Some(rng) => {
                let k = categorical_index(&post.weights, rng.random::<f64>());
                let eps: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                post.components[k].reparam_sample(&eps)?
            }
        };
        latent.row_mut(r).copy_from_slice(&z);
    }
    let recon = decode_latents(model, &latent, cov)?;
    Ok(Embedding { latent, recon })
}

/// Per-region squared residuals, concatenated over modalities (`n x total`).
pub fn squared_errors(x: &[Matrix], recon: &[Matrix]) -> Result<Matrix> {
    if x.len() != recon.len() {
        return Err(Error::dim("squared_errors", x.len(), recon.len()));
    }
    let parts = x
        .iter()
        .zip(recon)
        .map(|(a, b)| a.zip_map(b, "squared_errors", |p, q| (p - q) * (p - q)))
        .collect::<Result<Vec<_>>>()?;
    Matrix::hcat(&parts.iter().collect::<Vec<_>>())
}

/// Mean, shrunk covariance, its Cholesky factor, and per-dimension SDs of a
/// reference sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianRefFields", into = "GaussianRefFields")]
pub struct GaussianRef {
    pub mean: Vec<f64>,
    pub cov: Matrix,
    /// Sample SD per dimension, before shrinkage.
    pub sd: Vec<f64>,
    chol: Matrix,
}

#[derive(Serialize, Deserialize)]
struct GaussianRefFields {
    mean: Vec<f64>,
    cov: Matrix,
    sd: Vec<f64>,
}

impl TryFrom<GaussianRefFields> for GaussianRef {
    type Error = Error;

    fn try_from(f: GaussianRefFields) -> Result<Self> {
        GaussianRef::new(f.mean, f.cov, f.sd)
    }
}

impl From<GaussianRef> for GaussianRefFields {
    fn from(g: GaussianRef) -> Self {
        Self {
            mean: g.mean,
            cov: g.cov,
            sd: g.sd,
        }
    }
}

/// `(1 - lambda) cov + lambda tr(cov) / dim I`. A zero-trace covariance
/// shrinks towards the unit identity instead.
pub fn shrink(cov: &Matrix, lambda: f64) -> Matrix {
    let d = cov.rows();
    let avg = (0..d).map(|i| cov.get(i, i)).sum::<f64>() / d as f64;
    let target = if avg > 0.0 { avg } else { 1.0 };
    Matrix::from_fn(d, d, |i, j| {
        (1.0 - lambda) * cov.get(i, j) + if i == j { lambda * target } else { 0.0 }
    })
}

impl GaussianRef {
    pub fn new(mean: Vec<f64>, cov: Matrix, sd: Vec<f64>) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) || sd.len() != mean.len() {
            return Err(Error::dim(
                "GaussianRef",
                mean.len(),
                format!("{:?}", cov.shape()),
            ));
        }
        let chol = cholesky(&cov)?;
        Ok(Self {
            mean,
            cov,
            sd,
            chol,
        })
    }

    /// Fits to the rows of `x` with covariance shrinkage `lambda`.
    pub fn fit(x: &Matrix, lambda: f64) -> Result<Self> {
        if x.rows() < 2 {
            return Err(Error::Contract(format!(
                "reference cohort needs at least 2 subjects, got {}",
                x.rows()
            )));
        }
        let (mean, cov) = mean_cov(x);
        let sd = (0..cov.rows()).map(|i| cov.get(i, i).sqrt()).collect();
        Self::new(mean, shrink(&cov, lambda), sd)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cholesky(&self) -> &Matrix {
        &self.chol
    }

    pub fn mahalanobis(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::dim("mahalanobis", self.dim(), x.len()));
        }
        let diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let y = forward_solve(&self.chol, &diff)?;
        Ok(y.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// Z-scores; dimensions with zero reference SD get 0.
    pub fn z_scores(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.sd)
            .map(|((v, m), s)| if *s > 0.0 { (v - m) / s } else { 0.0 })
            .collect()
    }

    pub fn zero_sd_dims(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| !(self.sd[i] > 0.0)).collect()
    }
}

/// `sqrt((x - mu)^T sigma^-1 (x - mu))` via a Cholesky solve.
pub fn mahalanobis(x: &[f64], mu: &[f64], sigma: &Matrix) -> Result<f64> {
    if mu.len() != x.len() || sigma.shape() != (x.len(), x.len()) {
        return Err(Error::dim(
            "mahalanobis",
            x.len(),
            format!("{} / {:?}", mu.len(), sigma.shape()),
        ));
    }
    let l = cholesky(sigma)?;
    let diff: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    let y = forward_solve(&l, &diff)?;
    Ok(y.iter().map(|v| v * v).sum::<f64>().sqrt())
}

/// `chi2_dof` quantile at `1 - p`.
pub fn chi_square_threshold(dof: usize, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Config(format!(
            "p-level must lie in (0, 1), got {p}"
        )));
    }
    let chi = ChiSquared::new(dof as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(chi.inverse_cdf(1.0 - p))
}

/// Upper tail probability of `d2` under chi-square with `dof` degrees of freedom.
pub fn chi_square_sf(d2: f64, dof: usize) -> Result<f64> {
    let chi = ChiSquared::new(dof as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok(chi.sf(d2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStats {
    pub latent: GaussianRef,
    pub error: GaussianRef,
    pub shrinkage: f64,
    pub n_reference: usize,
    pub latent_mode: LatentMode,
}

impl ReferenceStats {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Fits latent and error statistics on a standardized reference cohort.
pub fn fit_reference(
    ckpt: &Checkpoint,
    cohort: &MultimodalBatch,
    shrinkage: f64,
    mode: LatentMode,
) -> Result<ReferenceStats> {
    if cohort.len() < 2 {
        return Err(Error::Contract(format!(
            "reference cohort needs at least 2 subjects, got {}",
            cohort.len()
        )));
    }
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(Error::Config(format!(
            "shrinkage must lie in [0, 1], got {shrinkage}"
        )));
    }
    let emb = embed(
        &ckpt.model,
        &ckpt.meta.fusion,
        &cohort.modalities,
        &cohort.covariates,
        mode,
    )?;
    let err = squared_errors(&cohort.modalities, &emb.recon)?;
    Ok(ReferenceStats {
        latent: GaussianRef::fit(&emb.latent, shrinkage)?,
        error: GaussianRef::fit(&err, shrinkage)?,
        shrinkage,
        n_reference: cohort.len(),
        latent_mode: mode,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationRecord {
    pub subject_id: String,
    pub cohort: String,
    pub d_ml: f64,
    pub d_mf: f64,
    pub z_ml: Vec<f64>,
    pub z_mf: Vec<f64>,
    pub outlier_latent: bool,
    pub outlier_feature: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeviationReport {
    pub p_level: f64,
    pub latent_threshold: f64,
    pub feature_threshold: f64,
    pub region_names: Vec<String>,
    pub records: Vec<DeviationRecord>,
    /// Dimensions excluded from z-scores because their reference SD is zero.
    pub warnings: Vec<String>,
}

/// Scores a standardized cohort against reference statistics.
pub fn score_subjects(
    ckpt: &Checkpoint,
    stats: &ReferenceStats,
    cohort: &MultimodalBatch,
    p_level: f64,
) -> Result<DeviationReport> {
    let emb = embed(
        &ckpt.model,
        &ckpt.meta.fusion,
        &cohort.modalities,
        &cohort.covariates,
        stats.latent_mode,
    )?;
    let err = squared_errors(&cohort.modalities, &emb.recon)?;
    if emb.latent.cols() != stats.latent.dim() || err.cols() != stats.error.dim() {
        return Err(Error::dim(
            "score_subjects",
            format!("{}/{}", stats.latent.dim(), stats.error.dim()),
            format!("{}/{}", emb.latent.cols(), err.cols()),
        ));
    }
    let latent_threshold = chi_square_threshold(stats.latent.dim(), p_level)?;
    let feature_threshold = chi_square_threshold(stats.error.dim(), p_level)?;
    let region_names: Vec<String> = ckpt
        .meta
        .dataset
        .modalities
        .iter()
        .flat_map(|m| m.regions.iter().cloned())
        .collect();

    let mut warnings = Vec::new();
    for (what, g) in [
        ("latent dimension", &stats.latent),
        ("region error", &stats.error),
    ] {
        for i in g.zero_sd_dims() {
            warnings.push(format!(
                "{what} {i} has zero reference SD; excluded from z-scores"
            ));
        }
    }
    let mut records = Vec::with_capacity(cohort.len());
    for r in 0..cohort.len() {
        let d_ml = stats.latent.mahalanobis(emb.latent.row(r))?;
        let d_mf = stats.error.mahalanobis(err.row(r))?;
        records.push(DeviationRecord {
            subject_id: cohort.subject_ids[r].clone(),
            cohort: cohort.cohorts[r].clone(),
            d_ml,
            d_mf,
            z_ml: stats.latent.z_scores(emb.latent.row(r)),
            z_mf: stats.error.z_scores(err.row(r)),
            outlier_latent: d_ml * d_ml > latent_threshold,
            outlier_feature: d_mf * d_mf > feature_threshold,
        });
    }
    Ok(DeviationReport {
        p_level,
        latent_threshold,
        feature_threshold,
        region_names,
        records,
        warnings,
    })
}

const FIXED_COLUMNS: [&str; 7] = [
    "subject_id",
    "cohort",
    "d_ml",
    "d_mf",
    "outlier_latent",
    "outlier_feature",
    "p_level",
];

impl DeviationReport {
    pub fn latent_dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.z_ml.len())
    }

    /// One row per subject: fixed columns, then `z_ml_<k>`, then `z_mf_<region>`.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend((0..self.latent_dim()).map(|k| format!("z_ml_{k}")));
        header.extend(self.region_names.iter().map(|r| format!("z_mf_{r}")));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.subject_id.clone(),
                r.cohort.clone(),
                r.d_ml.to_string(),
                r.d_mf.to_string(),
                u8::from(r.outlier_latent).to_string(),
                u8::from(r.outlier_feature).to_string(),
                self.p_level.to_string(),
            ];
            row.extend(r.z_ml.iter().map(f64::to_string));
            row.extend(r.z_mf.iter().map(f64::to_string));
            w.write_record(&row)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    /// Parses a report written by [`DeviationReport::to_csv`]. Thresholds
    /// are recomputed from the stored p-level and column counts.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = path.display().to_string();
        let mut rdr = csv::Reader::from_path(path)?;
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if header.len() < FIXED_COLUMNS.len() || header[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
            return Err(Error::Ingest(format!("{file}: not a deviation report")));
        }
        let d = header.iter().filter(|h| h.starts_with("z_ml_")).count();
        let region_names: Vec<String> = header
            .iter()
            .filter_map(|h| h.strip_prefix("z_mf_").map(str::to_owned))
            .collect();
        let parse = |s: &str, row: usize, col: usize| -> Result<f64> {
            s.parse::<f64>().map_err(|_| Error::Parse {
                file: file.clone(),
                row,
                col,
                msg: format!("not a number: {s:?}"),
            })
        };
        let flag = |s: &str, row: usize, col: usize| -> Result<bool> {
            match s {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(Error::Parse {
                    file: file.clone(),
                    row,
                    col,
                    msg: format!("expected 0 or 1, got {s:?}"),
                }),
            }
        };
        let mut records = Vec::new();
        let mut p_level = DEFAULT_P_LEVEL;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            if rec.len() != header.len() {
                return Err(Error::Parse {
                    file: file.clone(),
                    row,
                    col: rec.len(),
                    msg: format!("expected {} columns", header.len()),
                });
            }
            p_level = parse(&rec[6], row, 7)?;
            let z: Vec<f64> = (7..rec.len())
                .map(|c| parse(&rec[c], row, c + 1))
                .collect::<Result<_>>()?;
            records.push(DeviationRecord {
                subject_id: rec[0].to_owned(),
                cohort: rec[1].to_owned(),
                d_ml: parse(&rec[2], row, 3)?,
                d_mf: parse(&rec[3], row, 4)?,
                outlier_latent: flag(&rec[4], row, 5)?,
                outlier_feature: flag(&rec[5], row, 6)?,
                z_ml: z[..d].to_vec(),
                z_mf: z[d..].to_vec(),
            });
        }
        Ok(Self {
            p_level,
            latent_threshold: chi_square_threshold(d.max(1), p_level)?,
            feature_threshold: chi_square_threshold(region_names.len().max(1), p_level)?,
            region_names,
            records,
            warnings: Vec::new(),
        })
    }
}
