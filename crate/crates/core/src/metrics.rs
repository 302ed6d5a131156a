//! Cohort-level evaluation statistics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Positive likelihood ratio with its counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodRatio {
    pub n_disease: usize,
    pub disease_outliers: usize,
    pub n_control: usize,
    pub control_outliers: usize,
    pub tpr: f64,
    pub fpr: f64,
    /// FPR after the continuity floor `0.5 / n_control`.
    pub fpr_floored: f64,
    pub ratio: f64,
}

/// `TPR / max(FPR, 0.5 / n_control)`.
pub fn likelihood_ratio(disease: &[bool], control: &[bool]) -> Result<LikelihoodRatio> {
    if disease.is_empty() || control.is_empty() {
        return Err(Error::Contract(
            "likelihood ratio needs non-empty disease and control cohorts".into(),
        ));
    }
    let dpos = disease.iter().filter(|&&f| f).count();
    let cpos = control.iter().filter(|&&f| f).count();
    let tpr = dpos as f64 / disease.len() as f64;
    let fpr = cpos as f64 / control.len() as f64;
    let fpr_floored = fpr.max(0.5 / control.len() as f64);
    Ok(LikelihoodRatio {
        n_disease: disease.len(),
        disease_outliers: dpos,
        n_control: control.len(),
        control_outliers: cpos,
        tpr,
        fpr,
        fpr_floored,
        ratio: tpr / fpr_floored,
    })
}

fn check_finite(xs: &[f64], what: &str) -> Result<()> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract(format!(
            "{what} contains non-finite values"
        )));
    }
    Ok(())
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// 1-Wasserstein distance between two empirical distributions, integrating
/// the absolute difference of their CDFs.
pub fn emd_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Contract("emd_1d needs non-empty samples".into()));
    }
    check_finite(a, "emd_1d input")?;
    check_finite(b, "emd_1d input")?;
    let a = sorted(a);
    let b = sorted(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// `(mean_a - mean_b) / s_pooled` with `n - 1` weighting.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Contract(
            "cohens_d needs at least 2 values per group".into(),
        ));
    }
    check_finite(a, "cohens_d input")?;
    check_finite(b, "cohens_d input")?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled =
        (((na - 1.0) * sample_var(a) + (nb - 1.0) * sample_var(b)) / (na + nb - 2.0)).sqrt();
    if !(pooled > 0.0) {
        return Err(Error::Numeric(
            "cohens_d undefined: pooled SD is zero".into(),
        ));
    }
    Ok((mean(a) - mean(b)) / pooled)
}

/// Benjamini-Hochberg step-up rejections at level `q`.
pub fn bh_fdr(p: &[f64], q: f64) -> Result<Vec<bool>> {
    if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Contract("p-values must lie in [0, 1]".into()));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
    let cutoff = (1..=m)
        .rev()
        .find(|&k| p[order[k - 1]] <= k as f64 * q / m as f64)
        .map(|k| p[order[k - 1]]);
    Ok(match cutoff {
        Some(c) => p.iter().map(|&v| v <= c).collect(),
        None => vec![false; m],
    })
}

/// Sample correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Contract(
            "pearson needs two equal-length samples of at least 2".into(),
        ));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::Numeric("pearson undefined: zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchTest {
    pub t: f64,
    pub df: f64,
    /// Two-sided p-value.
    pub p: f64,
}

/// Welch's unequal-variance t-test.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Contract(
            "welch_t_test needs at least 2 values per group".into(),
        ));
    }
    let (va, vb) = (
        sample_var(a) / a.len() as f64,
        sample_var(b) / b.len() as f64,
    );
    let se2 = va + vb;
    if !(se2 > 0.0) {
        return Err(Error::Numeric(
            "welch_t_test undefined: both groups constant".into(),
        ));
    }
    let t = (mean(a) - mean(b)) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() as f64 - 1.0) + vb * vb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Numeric(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(WelchTest { t, df, p })
}
