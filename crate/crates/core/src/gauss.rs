//! Diagonal-Gaussian algebra.
//!
//! Every operation exists twice: on plain vectors ([`DiagGaussian`]) for
//! scoring and closed-form checks, and batched on a [`Tape`] ([`GaussVar`],
//! one posterior per row) for training.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, Tape, Var};

/// Encoder log-variances are clamped into `[-LOGVAR_BOUND, LOGVAR_BOUND]`.
pub const LOGVAR_BOUND: f64 = 10.0;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Factorized Gaussian given by mean and log-variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mu: Vec<f64>, logvar: Vec<f64>) -> Result<Self> {
        if mu.len() != logvar.len() {
            return Err(Error::dim("DiagGaussian::new", mu.len(), logvar.len()));
        }
        if logvar.iter().chain(&mu).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "DiagGaussian::new",
            });
        }
        Ok(Self { mu, logvar })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mu: vec![0.0; dim],
            logvar: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.logvar.iter().map(|lv| lv.exp()).collect()
    }

    /// KL(self || N(0, I)).
    pub fn kl_to_std_normal(&self) -> f64 {
        0.5 * self
            .mu
            .iter()
            .zip(&self.logvar)
            .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
            .sum::<f64>()
    }

    /// `mu + exp(logvar / 2) * eps`.
    pub fn reparam_sample(&self, eps: &[f64]) -> Result<Vec<f64>> {
        if eps.len() != self.dim() {
            return Err(Error::dim("reparam_sample", self.dim(), eps.len()));
        }
        Ok(self
            .mu
            .iter()
            .zip(&self.logvar)
            .zip(eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect())
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        -0.5 * self
            .mu
            .iter()
            .zip(&self.logvar)
            .zip(z)
            .map(|((m, lv), x)| lv + (x - m).powi(2) * (-lv).exp() + LN_2PI)
            .sum::<f64>()
    }
}

fn std_normal_log_density(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|x| x * x + LN_2PI).sum::<f64>()
}

/// Closed-form product of Gaussian experts, optionally including the
/// standard-normal prior as an extra unit-precision expert.
pub fn product_of_experts(experts: &[DiagGaussian], include_prior: bool) -> Result<DiagGaussian> {
    let dim = match (experts.first(), include_prior) {
        (Some(e), _) => e.dim(),
        (None, true) => {
            return Err(Error::Contract(
                "product_of_experts needs a latent dim; pass at least one expert".into(),
            ))
        }
        (None, false) => {
            return Err(Error::Contract(
                "product_of_experts over an empty expert list".into(),
            ))
        }
    };
    if let Some(bad) = experts.iter().find(|e| e.dim() != dim) {
        return Err(Error::dim("product_of_experts", dim, bad.dim()));
    }
    if experts.len() == 1 && !include_prior {
        return Ok(experts[0].clone());
    }
    let mut precision = vec![if include_prior { 1.0 } else { 0.0 }; dim];
    let mut weighted = vec![0.0; dim];
    for e in experts {
        for j in 0..dim {
            let t = (-e.logvar[j]).exp();
            precision[j] += t;
            weighted[j] += e.mu[j] * t;
        }
    }
    let logvar: Vec<f64> = precision.iter().map(|t| -t.ln()).collect();
    let mu = weighted
        .iter()
        .zip(&logvar)
        .map(|(w, lv)| w * lv.exp())
        .collect();
    DiagGaussian::new(mu, logvar)
}

pub(crate) fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::dim("mixture weights", n, weights.len()));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Contract(
            "mixture weights must be nonnegative".into(),
        ));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Contract(format!(
            "mixture weights sum to {total}, not 1"
        )));
    }
    Ok(())
}

/// Draws from component `selected` of a mixture by reparameterization.
pub fn mixture_sample(
    components: &[DiagGaussian],
    weights: &[f64],
    selected: usize,
    eps: &[f64],
) -> Result<Vec<f64>> {
    check_weights(weights, components.len())?;
    let comp = components.get(selected).ok_or_else(|| {
        Error::Contract(format!("component {selected} out of {}", components.len()))
    })?;
    comp.reparam_sample(eps)
}

/// Picks a component index from a uniform draw `u` in `[0, 1)`.
pub fn categorical_index(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

/// `log sum_k w_k q_k(z)`.
pub fn mixture_log_density(components: &[DiagGaussian], weights: &[f64], z: &[f64]) -> f64 {
    let terms: Vec<f64> = components
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w > 0.0)
        .map(|(c, w)| w.ln() + c.log_density(z))
        .collect();
    let mx = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    mx + terms.iter().map(|t| (t - mx).exp()).sum::<f64>().ln()
}

/// Monte Carlo estimate of KL(mixture || N(0, I)).
///
/// Each component contributes `n_mc` reparameterized draws weighted by its
/// mixture weight, so the estimator is stratified over components.
pub fn mixture_kl_to_std_normal<R: Rng + ?Sized>(
    components: &[DiagGaussian],
    weights: &[f64],
    n_mc: usize,
    rng: &mut R,
) -> Result<f64> {
    check_weights(weights, components.len())?;
    if n_mc == 0 {
        return Err(Error::Contract("n_mc must be at least 1".into()));
    }
    let mut total = 0.0;
    for (comp, w) in components.iter().zip(weights) {
        let mut acc = 0.0;
        for _ in 0..n_mc {
            let eps: Vec<f64> = (0..comp.dim())
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let z = comp.reparam_sample(&eps)?;
            acc += mixture_log_density(components, weights, &z) - std_normal_log_density(&z);
        }
        total += w * acc / n_mc as f64;
    }
    Ok(total)
}

/// A batch of diagonal Gaussians on a tape: `mu` and `logvar` are `n x d`.
#[derive(Debug, Clone, Copy)]
pub struct GaussVar {
    pub mu: Var,
    pub logvar: Var,
}

impl GaussVar {
    /// Row `r` as a plain [`DiagGaussian`].
    pub fn row(&self, tape: &Tape, r: usize) -> DiagGaussian {
        DiagGaussian {
            mu: tape.value(self.mu).row(r).to_vec(),
            logvar: tape.value(self.logvar).row(r).to_vec(),
        }
    }
}

/// Per-row KL to the standard normal, `n x 1`.
pub fn kl_rows(tape: &mut Tape, q: GaussVar) -> Result<Var> {
    let var = tape.exp(q.logvar)?;
    let mu2 = tape.square(q.mu)?;
    let a = tape.add(var, mu2)?;
    let b = tape.sub(a, q.logvar)?;
    let c = tape.add_scalar(b, -1.0)?;
    let s = tape.row_sum(c)?;
    tape.scale(s, 0.5)
}

pub fn reparam(tape: &mut Tape, q: GaussVar, eps: Var) -> Result<Var> {
    let half = tape.scale(q.logvar, 0.5)?;
    let sd = tape.exp(half)?;
    let noise = tape.mul(sd, eps)?;
    tape.add(q.mu, noise)
}

pub fn poe_vars(tape: &mut Tape, experts: &[GaussVar], include_prior: bool) -> Result<GaussVar> {
    let first = *experts
        .first()
        .ok_or_else(|| Error::Contract("product_of_experts over an empty expert list".into()))?;
    if experts.len() == 1 && !include_prior {
        return Ok(first);
    }
    let mut precision: Option<Var> = None;
    let mut weighted: Option<Var> = None;
    for e in experts {
        let neg = tape.neg(e.logvar)?;
        let t = tape.exp(neg)?;
        let mt = tape.mul(e.mu, t)?;
        precision = Some(match precision {
            Some(p) => tape.add(p, t)?,
            None => t,
        });
        weighted = Some(match weighted {
            Some(w) => tape.add(w, mt)?,
            None => mt,
        });
    }
    let mut precision = precision.expect("non-empty");
    if include_prior {
        precision = tape.add_scalar(precision, 1.0)?;
    }
    let log_t = tape.log(precision)?;
    let logvar = tape.neg(log_t)?;
    let var = tape.exp(logvar)?;
    let mu = tape.mul(weighted.expect("non-empty"), var)?;
    Ok(GaussVar { mu, logvar })
}

/// Per-row `log q(z)`, `n x 1`.
pub fn log_density_rows(tape: &mut Tape, q: GaussVar, z: Var) -> Result<Var> {
    let diff = tape.sub(z, q.mu)?;
    let d2 = tape.square(diff)?;
    let neg = tape.neg(q.logvar)?;
    let prec = tape.exp(neg)?;
    let maha = tape.mul(d2, prec)?;
    let inner = tape.add(maha, q.logvar)?;
    let inner = tape.add_scalar(inner, LN_2PI)?;
    let s = tape.row_sum(inner)?;
    tape.scale(s, -0.5)
}

fn std_log_density_rows(tape: &mut Tape, z: Var) -> Result<Var> {
    let z2 = tape.square(z)?;
    let inner = tape.add_scalar(z2, LN_2PI)?;
    let s = tape.row_sum(inner)?;
    tape.scale(s, -0.5)
}

/// Per-row Monte Carlo KL(mixture || N(0, I)), `n x 1`.
///
/// `eps[k]` holds the `n x d` noise draws for component `k` (one or more per
/// component); gradients flow through the reparameterized draws.
pub fn mixture_kl_rows(
    tape: &mut Tape,
    components: &[GaussVar],
    weights: &[f64],
    eps: &[Vec<Matrix>],
) -> Result<Var> {
    check_weights(weights, components.len())?;
    if eps.len() != components.len() || eps.iter().any(Vec::is_empty) {
        return Err(Error::Contract(
            "mixture_kl_rows needs at least one noise draw per component".into(),
        ));
    }
    let mut total: Option<Var> = None;
    for (k, (comp, w)) in components.iter().zip(weights).enumerate() {
        if *w == 0.0 {
            continue;
        }
        let n_mc = eps[k].len();
        for e in &eps[k] {
            let e = tape.constant(e.clone())?;
            let z = reparam(tape, *comp, e)?;
            let mut cols = Vec::with_capacity(components.len());
            for (other, wo) in components.iter().zip(weights) {
                if *wo == 0.0 {
                    continue;
                }
                let ld = log_density_rows(tape, *other, z)?;
                cols.push(tape.add_scalar(ld, wo.ln())?);
            }
            let stacked = tape.hcat(&cols)?;
            let log_mix = tape.row_logsumexp(stacked)?;
            let log_prior = std_log_density_rows(tape, z)?;
            let term = tape.sub(log_mix, log_prior)?;
            let term = tape.scale(term, w / n_mc as f64)?;
            total = Some(match total {
                Some(t) => tape.add(t, term)?,
                None => term,
            });
        }
    }
    total.ok_or_else(|| Error::Contract("mixture has no positive-weight component".into()))
}

/// Draws row `r` from component `selector[r]`; `eps` is `n x d`.
pub fn mixture_sample_rows(
    tape: &mut Tape,
    components: &[GaussVar],
    weights: &[f64],
    selector: &[usize],
    eps: Var,
) -> Result<Var> {
    check_weights(weights, components.len())?;
    let (n, d) = tape.shape(eps);
    if selector.len() != n {
        return Err(Error::dim("mixture_sample_rows", n, selector.len()));
    }
    if let Some(&bad) = selector.iter().find(|&&k| k >= components.len()) {
        return Err(Error::Contract(format!(
            "component {bad} out of {}",
            components.len()
        )));
    }
    if components.len() == 1 {
        return reparam(tape, components[0], eps);
    }
    let mut out: Option<Var> = None;
    for (k, comp) in components.iter().enumerate() {
        if !selector.contains(&k) {
            continue;
        }
        let draw = reparam(tape, *comp, eps)?;
        let mask = tape.constant(Matrix::from_fn(n, d, |i, _| {
            f64::from(u8::from(selector[i] == k))
        }))?;
        let picked = tape.mul(draw, mask)?;
        out = Some(match out {
            Some(o) => tape.add(o, picked)?,
            None => picked,
        });
    }
    Ok(out.expect("selector is non-empty"))
}

/// Row `r` draws from component `r mod k`.
pub fn cyclic_selector(n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|r| r % k).collect()
}
