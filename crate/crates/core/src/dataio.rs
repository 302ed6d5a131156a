//! Dataset files, standardization, and the synthetic cohort generator.
//!
//! A dataset directory holds:
//!
//! * `dataset.json` – [`DatasetHeader`],
//! * one CSV per modality: `subject_id,<region>...`,
//! * `covariates.csv`: `subject_id,age,sex`,
//! * `labels.csv`: `subject_id,cohort`.
//!
//! Floats are written with the shortest representation that parses back to
//! the same `f64`, so emit/ingest round trips are lossless.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::numkit::Matrix;

pub const HEADER_FILE: &str = "dataset.json";
pub const COVARIATE_FILE: &str = "covariates.csv";
pub const LABEL_FILE: &str = "labels.csv";
pub const SYNTH_SPEC_FILE: &str = "synth_spec.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityHeader {
    pub name: String,
    pub file: String,
    pub regions: Vec<String>,
}

/// One-hot covariate layout: age bins from `age_bin_edges` (k edges give
/// k+1 bins, a value equal to an edge falls in the upper bin) followed by one
/// column per sex level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateLayout {
    pub age_bin_edges: Vec<f64>,
    pub sex_levels: Vec<String>,
}

impl Default for CovariateLayout {
    fn default() -> Self {
        Self {
            age_bin_edges: vec![65.0, 72.0, 79.0],
            sex_levels: vec!["F".into(), "M".into()],
        }
    }
}

impl CovariateLayout {
    pub fn width(&self) -> usize {
        self.age_bin_edges.len() + 1 + self.sex_levels.len()
    }

    pub fn age_bin(&self, age: f64) -> usize {
        self.age_bin_edges.iter().filter(|&&e| age >= e).count()
    }

    pub fn encode(&self, age: f64, sex: &str) -> Result<Vec<f64>> {
        let sex_idx = self
            .sex_levels
            .iter()
            .position(|s| s == sex)
            .ok_or_else(|| Error::Ingest(format!("unknown sex level {sex:?}")))?;
        let mut out = vec![0.0; self.width()];
        out[self.age_bin(age)] = 1.0;
        out[self.age_bin_edges.len() + 1 + sex_idx] = 1.0;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub modalities: Vec<ModalityHeader>,
    pub covariates: CovariateLayout,
    /// Allowed cohort tags; the first is the reference cohort.
    pub cohorts: Vec<String>,
    pub holdout_tag: String,
}

impl DatasetHeader {
    pub fn reference_tag(&self) -> &str {
        &self.cohorts[0]
    }

    pub fn widths(&self) -> Vec<usize> {
        self.modalities.iter().map(|m| m.regions.len()).collect()
    }

    /// Disease-stage tags: everything except reference and holdout.
    pub fn stage_tags(&self) -> Vec<String> {
        self.cohorts
            .iter()
            .skip(1)
            .filter(|c| **c != self.holdout_tag)
            .cloned()
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::Ingest("dataset declares no modalities".into()));
        }
        let mut names = BTreeSet::new();
        for m in &self.modalities {
            if m.regions.is_empty() {
                return Err(Error::Ingest(format!("modality {} has no regions", m.name)));
            }
            if !names.insert(&m.name) {
                return Err(Error::Ingest(format!("duplicate modality name {}", m.name)));
            }
            let unique: BTreeSet<_> = m.regions.iter().collect();
            if unique.len() != m.regions.len() {
                return Err(Error::Ingest(format!(
                    "duplicate region names in {}",
                    m.name
                )));
            }
        }
        if self.cohorts.len() < 2 || !self.cohorts.contains(&self.holdout_tag) {
            return Err(Error::Ingest(
                "cohort vocabulary must list reference and holdout tags".into(),
            ));
        }
        Ok(())
    }
}

/// Row-aligned multimodal data, sorted by subject id.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalBatch {
    pub subject_ids: Vec<String>,
    pub modalities: Vec<Matrix>,
    pub covariates: Matrix,
    /// Raw covariates `(age, sex)` as read, kept for re-emission.
    pub raw_covariates: Vec<(f64, String)>,
    pub cohorts: Vec<String>,
}

impl MultimodalBatch {
    pub fn len(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subject_ids.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            subject_ids: idx.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            modalities: self.modalities.iter().map(|m| m.select_rows(idx)).collect(),
            covariates: self.covariates.select_rows(idx),
            raw_covariates: idx
                .iter()
                .map(|&i| self.raw_covariates[i].clone())
                .collect(),
            cohorts: idx.iter().map(|&i| self.cohorts[i].clone()).collect(),
        }
    }

    pub fn indices_of(&self, tag: &str) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.cohorts[i] == tag)
            .collect()
    }

    pub fn cohort(&self, tag: &str) -> Self {
        self.select(&self.indices_of(tag))
    }
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let header = rdr.headers()?.iter().map(str::to_owned).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_owned).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok((header, rows))
}

fn parse_f64(s: &str, file: &str, row: usize, col: usize) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| Error::Parse {
        file: file.into(),
        row,
        col,
        msg: format!("not a number: {s:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            file: file.into(),
            row,
            col,
            msg: format!("non-finite value {s:?}"),
        });
    }
    Ok(v)
}

/// Row number in the file and the non-key cells, keyed by subject id.
type KeyedRows = BTreeMap<String, (usize, Vec<String>)>;

/// Reads a keyed table: first column must be `subject_id`. Rows are returned
/// keyed by id; line numbers in errors are 1-based file lines.
fn read_keyed(path: &Path) -> Result<(Vec<String>, KeyedRows)> {
    let name = path.display().to_string();
    if !path.exists() {
        return Err(Error::Ingest(format!("missing file {name}")));
    }
    let (header, rows) = read_csv(path)?;
    if header.first().map(String::as_str) != Some("subject_id") {
        return Err(Error::Ingest(format!(
            "{name}: first column must be subject_id"
        )));
    }
    let mut out = BTreeMap::new();
    for (i, r) in rows.into_iter().enumerate() {
        let line = i + 2;
        if r.len() != header.len() {
            return Err(Error::Parse {
                file: name.clone(),
                row: line,
                col: r.len(),
                msg: format!("expected {} columns", header.len()),
            });
        }
        let id = r[0].clone();
        if out.insert(id.clone(), (line, r[1..].to_vec())).is_some() {
            return Err(Error::Ingest(format!("{name}: duplicate subject id {id}")));
        }
    }
    Ok((header[1..].to_vec(), out))
}

pub fn read_header(dir: &Path) -> Result<DatasetHeader> {
    let path = dir.join(HEADER_FILE);
    if !path.exists() {
        return Err(Error::Ingest(format!("missing {}", path.display())));
    }
    let header: DatasetHeader = serde_json::from_slice(&fs::read(&path)?)?;
    header.validate()?;
    Ok(header)
}

/// Subject id to cohort tag, validated against the header vocabulary.
pub fn read_labels(dir: &Path) -> Result<BTreeMap<String, String>> {
    let header = read_header(dir)?;
    let path = dir.join(LABEL_FILE);
    let (cols, rows) = read_keyed(&path)?;
    if cols != ["cohort"] {
        return Err(Error::Ingest(format!(
            "{}: expected columns subject_id,cohort",
            path.display()
        )));
    }
    let mut out = BTreeMap::new();
    for (id, (line, cells)) in rows {
        let tag = cells[0].trim().to_owned();
        if !header.cohorts.contains(&tag) {
            return Err(Error::Parse {
                file: path.display().to_string(),
                row: line,
                col: 2,
                msg: format!("cohort {tag:?} not in declared vocabulary"),
            });
        }
        out.insert(id, tag);
    }
    Ok(out)
}

/// Loads every file of a dataset directory and aligns rows by subject id.
pub fn ingest(dir: &Path) -> Result<(MultimodalBatch, DatasetHeader)> {
    let header = read_header(dir)?;

    let mut tables = Vec::new();
    for m in &header.modalities {
        let path = dir.join(&m.file);
        let (cols, rows) = read_keyed(&path)?;
        if cols != m.regions {
            return Err(Error::Ingest(format!(
                "{}: region columns do not match dataset header",
                path.display()
            )));
        }
        tables.push((path, rows));
    }
    let cov_path = dir.join(COVARIATE_FILE);
    let (cov_cols, cov_rows) = read_keyed(&cov_path)?;
    if cov_cols != ["age", "sex"] {
        return Err(Error::Ingest(format!(
            "{}: expected columns subject_id,age,sex",
            cov_path.display()
        )));
    }
    let label_path = dir.join(LABEL_FILE);
    let (label_cols, label_rows) = read_keyed(&label_path)?;
    if label_cols != ["cohort"] {
        return Err(Error::Ingest(format!(
            "{}: expected columns subject_id,cohort",
            label_path.display()
        )));
    }

    let key_sets: Vec<BTreeSet<&String>> = tables
        .iter()
        .map(|(_, rows)| rows.keys().collect())
        .chain([cov_rows.keys().collect(), label_rows.keys().collect()])
        .collect();
    let all: BTreeSet<&String> = key_sets.iter().flatten().copied().collect();
    let incomplete: Vec<&String> = all
        .iter()
        .copied()
        .filter(|id| key_sets.iter().any(|s| !s.contains(id)))
        .collect();
    if !incomplete.is_empty() {
        let ids: Vec<&str> = incomplete.iter().map(|s| s.as_str()).collect();
        return Err(Error::Ingest(format!(
            "subjects missing from at least one file: {}",
            ids.join(", ")
        )));
    }

    let ids: Vec<String> = all.into_iter().cloned().collect();
    let n = ids.len();
    let mut modalities = Vec::new();
    for ((path, rows), m) in tables.iter().zip(&header.modalities) {
        let file = path.display().to_string();
        let w = m.regions.len();
        let mut data = Vec::with_capacity(n * w);
        for id in &ids {
            let (line, cells) = &rows[id];
            for (j, c) in cells.iter().enumerate() {
                data.push(parse_f64(c, &file, *line, j + 2)?);
            }
        }
        modalities.push(Matrix::new(n, w, data)?);
    }

    let cov_file = cov_path.display().to_string();
    let mut cov = Vec::with_capacity(n * header.covariates.width());
    let mut raw = Vec::with_capacity(n);
    for id in &ids {
        let (line, cells) = &cov_rows[id];
        let age = parse_f64(&cells[0], &cov_file, *line, 2)?;
        let sex = cells[1].trim().to_owned();
        cov.extend(
            header
                .covariates
                .encode(age, &sex)
                .map_err(|e| Error::Parse {
                    file: cov_file.clone(),
                    row: *line,
                    col: 3,
                    msg: e.to_string(),
                })?,
        );
        raw.push((age, sex));
    }
    let covariates = Matrix::new(n, header.covariates.width(), cov)?;

    let mut cohorts = Vec::with_capacity(n);
    for id in &ids {
        let (line, cells) = &label_rows[id];
        let tag = cells[0].trim().to_owned();
        if !header.cohorts.contains(&tag) {
            return Err(Error::Parse {
                file: label_path.display().to_string(),
                row: *line,
                col: 2,
                msg: format!("cohort {tag:?} not in declared vocabulary"),
            });
        }
        cohorts.push(tag);
    }

    Ok((
        MultimodalBatch {
            subject_ids: ids,
            modalities,
            covariates,
            raw_covariates: raw,
            cohorts,
        },
        header,
    ))
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Writes a batch in the dataset-directory layout.
pub fn emit(dir: &Path, batch: &MultimodalBatch, header: &DatasetHeader) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_atomic(&dir.join(HEADER_FILE), &serde_json::to_vec_pretty(header)?)?;
    for (m, mat) in header.modalities.iter().zip(&batch.modalities) {
        let cols: Vec<String> = std::iter::once("subject_id".to_owned())
            .chain(m.regions.iter().cloned())
            .collect();
        let rows = (0..batch.len()).map(|i| {
            std::iter::once(batch.subject_ids[i].clone())
                .chain(mat.row(i).iter().map(|v| v.to_string()))
                .collect()
        });
        write_atomic(&dir.join(&m.file), &csv_bytes(&cols, rows)?)?;
    }
    let cov_rows = (0..batch.len()).map(|i| {
        let (age, sex) = &batch.raw_covariates[i];
        vec![batch.subject_ids[i].clone(), age.to_string(), sex.clone()]
    });
    write_atomic(
        &dir.join(COVARIATE_FILE),
        &csv_bytes(&["subject_id".into(), "age".into(), "sex".into()], cov_rows)?,
    )?;
    let label_rows =
        (0..batch.len()).map(|i| vec![batch.subject_ids[i].clone(), batch.cohorts[i].clone()]);
    write_atomic(
        &dir.join(LABEL_FILE),
        &csv_bytes(&["subject_id".into(), "cohort".into()], label_rows)?,
    )?;
    Ok(())
}

/// Per-region mean and sample standard deviation of the reference cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<Vec<f64>>,
    pub sd: Vec<Vec<f64>>,
}

pub(crate) fn column_mean_sd(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows() as f64;
    let mean: Vec<f64> = m.sum_rows().as_slice().iter().map(|s| s / n).collect();
    let mut ss = vec![0.0; m.cols()];
    for r in 0..m.rows() {
        for (j, v) in m.row(r).iter().enumerate() {
            ss[j] += (v - mean[j]).powi(2);
        }
    }
    let sd = ss.iter().map(|s| (s / (n - 1.0)).sqrt()).collect();
    (mean, sd)
}

impl StandardizationStats {
    /// Fits on the rows tagged `reference_tag` only.
    pub fn fit(batch: &MultimodalBatch, reference_tag: &str) -> Result<Self> {
        let idx = batch.indices_of(reference_tag);
        if idx.len() < 2 {
            return Err(Error::Contract(format!(
                "standardization needs at least 2 {reference_tag} subjects, found {}",
                idx.len()
            )));
        }
        let mut mean = Vec::new();
        let mut sd = Vec::new();
        for (k, m) in batch.modalities.iter().enumerate() {
            let (mu, s) = column_mean_sd(&m.select_rows(&idx));
            if let Some(j) = s.iter().position(|v| !(*v > 0.0)) {
                return Err(Error::Ingest(format!(
                    "modality {k} region {j} has zero variance in the reference cohort"
                )));
            }
            mean.push(mu);
            sd.push(s);
        }
        Ok(Self { mean, sd })
    }

    fn check(&self, batch: &MultimodalBatch) -> Result<()> {
        if batch.modalities.len() != self.mean.len() {
            return Err(Error::dim(
                "standardize",
                self.mean.len(),
                batch.modalities.len(),
            ));
        }
        for (m, mu) in batch.modalities.iter().zip(&self.mean) {
            if m.cols() != mu.len() {
                return Err(Error::dim("standardize", mu.len(), m.cols()));
            }
        }
        Ok(())
    }

    pub fn standardize(&self, batch: &MultimodalBatch) -> Result<MultimodalBatch> {
        self.check(batch)?;
        let mut out = batch.clone();
        for ((m, mu), sd) in out.modalities.iter_mut().zip(&self.mean).zip(&self.sd) {
            *m = Matrix::from_fn(m.rows(), m.cols(), |i, j| (m.get(i, j) - mu[j]) / sd[j]);
        }
        Ok(out)
    }

    pub fn destandardize(&self, batch: &MultimodalBatch) -> Result<MultimodalBatch> {
        self.check(batch)?;
        let mut out = batch.clone();
        for ((m, mu), sd) in out.modalities.iter_mut().zip(&self.mean).zip(&self.sd) {
            *m = Matrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j) * sd[j] + mu[j]);
        }
        Ok(out)
    }
}

/// Parameters of the synthetic multimodal cohort.
///
/// Each subject has `latent_factors` standard-normal factors. Factor 0 loads
/// on the planted regions with the disease sign pattern (negative in the
/// first modality, positive in the others); the remaining factors load on all
/// regions with Gaussian weights. Disease stages add `stage_shifts[k]` times
/// the planted pattern. Age and sex enter through random per-region
/// coefficients. Raw values are then given region-specific offsets and scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub seed: u64,
    pub modality_names: Vec<String>,
    pub regions_per_modality: usize,
    pub n_reference: usize,
    pub n_holdout: usize,
    pub stage_names: Vec<String>,
    pub stage_sizes: Vec<usize>,
    pub stage_shifts: Vec<f64>,
    pub latent_factors: usize,
    pub planted_regions: Vec<usize>,
    pub planted_loading: f64,
    pub loading_sd: f64,
    pub noise_sd: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    pub age_effect: f64,
    pub sex_effect: f64,
    pub covariates: CovariateLayout,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 20_240_601,
            modality_names: vec!["mri".into(), "pet".into()],
            regions_per_modality: 90,
            n_reference: 248,
            n_holdout: 48,
            stage_names: vec!["stage1".into(), "stage2".into(), "stage3".into()],
            stage_sizes: vec![305, 236, 185],
            stage_shifts: vec![2.0, 3.5, 5.0],
            latent_factors: 4,
            planted_regions: (0..90).step_by(6).collect(),
            planted_loading: 0.8,
            loading_sd: 0.5,
            noise_sd: 0.5,
            age_mean: 73.0,
            age_sd: 7.0,
            age_effect: 0.3,
            sex_effect: 0.2,
            covariates: CovariateLayout::default(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth spec: {m}")));
        if self.n_reference < 2 || self.n_holdout < 2 || self.stage_sizes.iter().any(|&s| s < 2) {
            return bad("every cohort needs at least 2 subjects");
        }
        if self.stage_sizes.len() != self.stage_names.len()
            || self.stage_shifts.len() != self.stage_names.len()
        {
            return bad("stage names, sizes, and shifts must have equal length");
        }
        if self.stage_shifts.windows(2).any(|w| w[1] < w[0]) {
            return bad("stage shifts must be monotone nondecreasing");
        }
        if self.modality_names.is_empty()
            || self.regions_per_modality == 0
            || self.latent_factors == 0
        {
            return bad("need at least one modality, region, and factor");
        }
        if self
            .planted_regions
            .iter()
            .any(|&r| r >= self.regions_per_modality)
        {
            return bad("planted region index out of range");
        }
        if !(self.noise_sd > 0.0) {
            return bad("noise_sd must be positive");
        }
        Ok(())
    }

    pub fn cohort_tags(&self) -> Vec<String> {
        let mut tags = vec!["reference".to_owned(), "holdout".to_owned()];
        tags.extend(self.stage_names.iter().cloned());
        tags
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            modalities: self
                .modality_names
                .iter()
                .map(|name| ModalityHeader {
                    name: name.clone(),
                    file: format!("{name}.csv"),
                    regions: (0..self.regions_per_modality)
                        .map(|r| format!("{name}_r{r:03}"))
                        .collect(),
                })
                .collect(),
            covariates: self.covariates.clone(),
            cohorts: self.cohort_tags(),
            holdout_tag: "holdout".into(),
        }
    }

    /// Planted-region mask per modality, in region order.
    pub fn planted_mask(&self) -> Vec<bool> {
        (0..self.regions_per_modality)
            .map(|r| self.planted_regions.contains(&r))
            .collect()
    }
}

/// Draws the full synthetic dataset in memory (raw, unstandardized units).
pub fn synthesize(spec: &SynthSpec) -> Result<(MultimodalBatch, DatasetHeader)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_mod = spec.modality_names.len();
    let r = spec.regions_per_modality;
    let k = spec.latent_factors;
    let planted = spec.planted_mask();
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };

    // Fixed generative parameters, drawn first.
    struct ModalityParams {
        loadings: Matrix, // k x r
        pattern: Vec<f64>,
        age_coef: Vec<f64>,
        sex_coef: Vec<f64>,
        offset: Vec<f64>,
        scale: Vec<f64>,
    }
    let mut params = Vec::with_capacity(n_mod);
    for m in 0..n_mod {
        let sign = if m == 0 { -1.0 } else { 1.0 };
        let pattern: Vec<f64> = planted
            .iter()
            .map(|&p| if p { sign } else { 0.0 })
            .collect();
        let mut loadings = Matrix::zeros(k, r);
        for (j, &s) in pattern.iter().enumerate() {
            loadings.set(0, j, spec.planted_loading * s);
            for f in 1..k {
                loadings.set(f, j, spec.loading_sd * normal(&mut rng));
            }
        }
        let age_coef = (0..r).map(|_| spec.age_effect * normal(&mut rng)).collect();
        let sex_coef = (0..r).map(|_| spec.sex_effect * normal(&mut rng)).collect();
        let offset = (0..r).map(|_| rng.random_range(1.0..5.0)).collect();
        let scale = (0..r).map(|_| rng.random_range(0.5..2.0)).collect();
        params.push(ModalityParams {
            loadings,
            pattern,
            age_coef,
            sex_coef,
            offset,
            scale,
        });
    }

    let mut cohorts: Vec<(String, usize, f64)> = vec![
        ("reference".into(), spec.n_reference, 0.0),
        ("holdout".into(), spec.n_holdout, 0.0),
    ];
    for ((name, &size), &shift) in spec
        .stage_names
        .iter()
        .zip(&spec.stage_sizes)
        .zip(&spec.stage_shifts)
    {
        cohorts.push((name.clone(), size, shift));
    }
    let total: usize = cohorts.iter().map(|c| c.1).sum();
    let id_width = total.to_string().len().max(5);

    let mut ids = Vec::with_capacity(total);
    let mut tags = Vec::with_capacity(total);
    let mut raw_cov = Vec::with_capacity(total);
    let mut data: Vec<Vec<f64>> = vec![Vec::with_capacity(total * r); n_mod];
    let mut next = 0usize;
    for (tag, size, shift) in &cohorts {
        for _ in 0..*size {
            next += 1;
            ids.push(format!("sub-{next:0id_width$}"));
            tags.push(tag.clone());
            let factors: Vec<f64> = (0..k).map(|_| normal(&mut rng)).collect();
            let age = (spec.age_mean + spec.age_sd * normal(&mut rng)).clamp(50.0, 100.0);
            // ages are recorded at 0.1-year resolution
            let age = (age * 10.0).round() / 10.0;
            let sex_idx = usize::from(rng.random_bool(0.5))
                .min(spec.covariates.sex_levels.len().saturating_sub(1));
            let sex = spec
                .covariates
                .sex_levels
                .get(sex_idx)
                .cloned()
                .unwrap_or_default();
            let age_z = (age - spec.age_mean) / spec.age_sd;
            let sex_c = sex_idx as f64 - 0.5;
            for (m, p) in params.iter().enumerate() {
                for j in 0..r {
                    let mut v = (0..k)
                        .map(|f| p.loadings.get(f, j) * factors[f])
                        .sum::<f64>();
                    v += p.age_coef[j] * age_z + p.sex_coef[j] * sex_c;
                    v += shift * p.pattern[j];
                    v += spec.noise_sd * normal(&mut rng);
                    data[m].push(p.offset[j] + p.scale[j] * v);
                }
            }
            raw_cov.push((age, sex));
        }
    }

    let header = spec.header();
    let covariates = {
        let rows = raw_cov
            .iter()
            .map(|(a, s)| header.covariates.encode(*a, s))
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(&rows)?
    };
    let modalities = data
        .into_iter()
        .map(|d| Matrix::new(total, r, d))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        MultimodalBatch {
            subject_ids: ids,
            modalities,
            covariates,
            raw_covariates: raw_cov,
            cohorts: tags,
        },
        header,
    ))
}

/// Generates the synthetic dataset and writes it, with the spec, to `dir`.
pub fn generate_synthetic(spec: &SynthSpec, dir: &Path) -> Result<DatasetHeader> {
    let (batch, header) = synthesize(spec)?;
    emit(dir, &batch, &header)?;
    write_atomic(
        &dir.join(SYNTH_SPEC_FILE),
        &serde_json::to_vec_pretty(spec)?,
    )?;
    Ok(header)
}
