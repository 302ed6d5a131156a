//! Mapping latent deviations back to regions.
//!
//! Latent dimensions whose mean absolute `Z_ml` over the disease cohort
//! exceeds a threshold are kept; the rest are filled (with zeros or the
//! reference means) and the masked latents are decoded. Region-level
//! deviations `Z_mf` of the masked reconstructions are then compared between
//! the holdout controls and each disease stage with Cohen's d, Welch p-values
//! and Benjamini-Hochberg control across regions.

use serde::{Deserialize, Serialize};

use crate::dataio::{DatasetHeader, MultimodalBatch};
use crate::error::{Error, Result};
use crate::metrics::{bh_fdr, cohens_d, welch_t_test};
use crate::net::checkpoint::Checkpoint;
use crate::net::Model;
use crate::numkit::Matrix;
use crate::score::{decode_latents, embed, squared_errors, ReferenceStats};

pub const DEFAULT_THRESHOLD: f64 = 1.96;
pub const DEFAULT_Q: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FillPolicy {
    #[default]
    Zeros,
    ReferenceMeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariatePolicy {
    #[default]
    Zero,
    Keep,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentMask {
    pub dims: Vec<usize>,
    pub latent_dim: usize,
    pub fill: FillPolicy,
    pub covariates: CovariatePolicy,
    /// Selection rule: mean |Z_ml| over the disease cohort above this value.
    pub threshold: f64,
}

impl LatentMask {
    pub fn full(latent_dim: usize) -> Self {
        Self {
            dims: (0..latent_dim).collect(),
            latent_dim,
            fill: FillPolicy::Zeros,
            covariates: CovariatePolicy::Keep,
            threshold: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(&bad) = self.dims.iter().find(|&&j| j >= self.latent_dim) {
            return Err(Error::Contract(format!(
                "mask dimension {bad} out of {}",
                self.latent_dim
            )));
        }
        Ok(())
    }
}

/// `{ j : mean_i |z[i][j]| > threshold }`.
pub fn select_significant_dims(z_ml: &[Vec<f64>], threshold: f64) -> Vec<usize> {
    let Some(d) = z_ml.first().map(Vec::len) else {
        return Vec::new();
    };
    let n = z_ml.len() as f64;
    (0..d)
        .filter(|&j| z_ml.iter().map(|r| r[j].abs()).sum::<f64>() / n > threshold)
        .collect()
}

/// Replaces unselected dimensions according to the fill policy.
pub fn apply_mask(latent: &Matrix, mask: &LatentMask, reference_means: &[f64]) -> Result<Matrix> {
    mask.validate()?;
    if latent.cols() != mask.latent_dim || reference_means.len() != mask.latent_dim {
        return Err(Error::dim("apply_mask", mask.latent_dim, latent.cols()));
    }
    let mut keep = vec![false; mask.latent_dim];
    for &j in &mask.dims {
        keep[j] = true;
    }
    Ok(Matrix::from_fn(latent.rows(), latent.cols(), |i, j| {
        if keep[j] {
            latent.get(i, j)
        } else {
            match mask.fill {
                FillPolicy::Zeros => 0.0,
                FillPolicy::ReferenceMeans => reference_means[j],
            }
        }
    }))
}

/// Decodes masked latents; covariates are zeroed under `CovariatePolicy::Zero`.
pub fn masked_decode(
    model: &Model,
    latent: &Matrix,
    mask: &LatentMask,
    reference_means: &[f64],
    cov: &Matrix,
) -> Result<Vec<Matrix>> {
    let z = apply_mask(latent, mask, reference_means)?;
    match mask.covariates {
        CovariatePolicy::Keep => decode_latents(model, &z, cov),
        CovariatePolicy::Zero => decode_latents(model, &z, &Matrix::zeros(cov.rows(), cov.cols())),
    }
}

/// Per-region `Z_mf` of masked reconstructions for `cohort`, against error
/// statistics of the reference cohort recomputed under the same mask.
pub fn masked_feature_z(
    ckpt: &Checkpoint,
    stats: &ReferenceStats,
    reference: &MultimodalBatch,
    cohort: &MultimodalBatch,
    mask: &LatentMask,
) -> Result<Matrix> {
    let errors = |b: &MultimodalBatch| -> Result<Matrix> {
        let emb = embed(
            &ckpt.model,
            &ckpt.meta.fusion,
            &b.modalities,
            &b.covariates,
            stats.latent_mode,
        )?;
        let rec = masked_decode(
            &ckpt.model,
            &emb.latent,
            mask,
            &stats.latent.mean,
            &b.covariates,
        )?;
        squared_errors(&b.modalities, &rec)
    };
    let ref_err = errors(reference)?;
    if ref_err.rows() < 2 {
        return Err(Error::Contract(
            "reference cohort needs at least 2 subjects".into(),
        ));
    }
    let (mean, sd) = crate::dataio::column_mean_sd(&ref_err);
    let err = errors(cohort)?;
    Ok(Matrix::from_fn(err.rows(), err.cols(), |i, j| {
        if sd[j] > 0.0 {
            (err.get(i, j) - mean[j]) / sd[j]
        } else {
            0.0
        }
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEntry {
    pub modality: String,
    pub stage_pair: String,
    pub region: String,
    /// `None` when either group is degenerate; such regions are left out of
    /// the FDR family.
    pub cohens_d: Option<f64>,
    pub p: Option<f64>,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectMap {
    pub q: f64,
    pub entries: Vec<EffectEntry>,
}

/// Effect-size maps on `|Z_mf|`: for each modality and each stage, Cohen's d
/// of (stage vs control), Welch p-values, and BH rejections across regions.
pub fn effect_size_maps(
    z_mf: &Matrix,
    cohorts: &[String],
    control: &str,
    stages: &[String],
    header: &DatasetHeader,
    q: f64,
) -> Result<EffectMap> {
    if cohorts.len() != z_mf.rows() {
        return Err(Error::dim("effect_size_maps", z_mf.rows(), cohorts.len()));
    }
    let total: usize = header.widths().iter().sum();
    if z_mf.cols() != total {
        return Err(Error::dim("effect_size_maps", total, z_mf.cols()));
    }
    let rows_of =
        |tag: &str| -> Vec<usize> { (0..cohorts.len()).filter(|&i| cohorts[i] == tag).collect() };
    let column = |rows: &[usize], j: usize| -> Vec<f64> {
        rows.iter().map(|&i| z_mf.get(i, j).abs()).collect()
    };
    let control_rows = rows_of(control);
    if control_rows.len() < 2 {
        return Err(Error::Contract(format!(
            "control cohort {control} needs at least 2 subjects"
        )));
    }
    let mut entries = Vec::new();
    let mut offset = 0;
    for m in &header.modalities {
        for stage in stages {
            let stage_rows = rows_of(stage);
            if stage_rows.len() < 2 {
                return Err(Error::Contract(format!(
                    "stage cohort {stage} needs at least 2 subjects"
                )));
            }
            let pair = format!("{control}-vs-{stage}");
            let mut block = Vec::with_capacity(m.regions.len());
            for (r, region) in m.regions.iter().enumerate() {
                let a = column(&stage_rows, offset + r);
                let b = column(&control_rows, offset + r);
                let (d, p) = match (cohens_d(&a, &b), welch_t_test(&a, &b)) {
                    (Ok(d), Ok(t)) => (Some(d), Some(t.p)),
                    _ => (None, None),
                };
                block.push(EffectEntry {
                    modality: m.name.clone(),
                    stage_pair: pair.clone(),
                    region: region.clone(),
                    cohens_d: d,
                    p,
                    rejected: false,
                });
            }
            let defined: Vec<usize> = (0..block.len()).filter(|&i| block[i].p.is_some()).collect();
            let ps: Vec<f64> = defined
                .iter()
                .map(|&i| block[i].p.expect("defined"))
                .collect();
            for (&i, rej) in defined.iter().zip(bh_fdr(&ps, q)?) {
                block[i].rejected = rej;
            }
            entries.extend(block);
        }
        offset += m.regions.len();
    }
    Ok(EffectMap { q, entries })
}

impl EffectMap {
    /// Columns `modality,stage_pair,region,cohens_d,p,rejected`; undefined
    /// effects are written as empty cells.
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record([
            "modality",
            "stage_pair",
            "region",
            "cohens_d",
            "p",
            "rejected",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.entries {
            w.write_record([
                e.modality.clone(),
                e.stage_pair.clone(),
                e.region.clone(),
                opt(e.cohens_d),
                opt(e.p),
                u8::from(e.rejected).to_string(),
            ])?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}
