//! Encoder and decoder losses of the soft-introspective game.
//!
//! Both losses are minimized. With `s` the scale, real terms `(L_r, KL)` and
//! generated-sample branches `b` with terms `(L_b, KL_b)`:
//!
//! ```text
//! encoder = s (beta_rec L_r + beta_kl KL) + mean_b 1/2 exp(-2 s (beta_rec L_b + beta_neg KL_b))
//! decoder = s beta_rec L_r + s mean_b (beta_kl KL_b + gamma_r beta_rec L_b)
//! ```
//!
//! The two branches used in training are re-encoded reconstructions and
//! re-encoded prior samples. The exponent is clamped to `<= 0`; it is
//! nonpositive analytically and only Monte Carlo noise in a mixture KL can
//! push it above zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{Matrix, Tape, Var};

/// How squared errors are reduced over the features of one modality inside
/// the training losses.
///
/// `Sum` treats each modality term as a Gaussian log-likelihood summed over
/// features, so `s = 1 / features` turns it into a per-feature mean. `Mean`
/// averages within each modality before scaling by `s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossHyper {
    pub beta_rec: f64,
    pub beta_kl: f64,
    pub beta_neg: f64,
    pub gamma_r: f64,
    /// Scale `s`, conventionally `1 / total feature count`.
    pub scale: f64,
    #[serde(default)]
    pub reduction: Reduction,
}

impl LossHyper {
    /// `beta_rec = beta_kl = 1`, `beta_neg = 10`, `gamma_r = 1e-8`, `s = 1 / features`.
    pub fn defaults_for(total_features: usize) -> Self {
        Self {
            beta_rec: 1.0,
            beta_kl: 1.0,
            beta_neg: 10.0,
            gamma_r: 1e-8,
            scale: 1.0 / total_features as f64,
            reduction: Reduction::Sum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.beta_rec,
            self.beta_kl,
            self.beta_neg,
            self.gamma_r,
            self.scale,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) || self.scale <= 0.0 {
            return Err(Error::Config(format!(
                "invalid loss hyperparameters {self:?}"
            )));
        }
        Ok(())
    }
}

/// Reconstruction and KL terms for one set of inputs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Terms {
    pub rec: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermBundle {
    pub real: Terms,
    pub generated: Vec<Terms>,
}

impl TermBundle {
    pub fn single(real: Terms, generated: Terms) -> Self {
        Self {
            real,
            generated: vec![generated],
        }
    }
}

fn exp_elbo(t: &Terms, h: &LossHyper) -> f64 {
    0.5 * (-2.0 * h.scale * (h.beta_rec * t.rec + h.beta_neg * t.kl))
        .min(0.0)
        .exp()
}

pub fn encoder_loss(terms: &TermBundle, h: &LossHyper) -> f64 {
    let real = h.scale * (h.beta_rec * terms.real.rec + h.beta_kl * terms.real.kl);
    let n = terms.generated.len() as f64;
    real + terms.generated.iter().map(|t| exp_elbo(t, h)).sum::<f64>() / n
}

pub fn decoder_loss(terms: &TermBundle, h: &LossHyper) -> f64 {
    let n = terms.generated.len() as f64;
    let gen: f64 = terms
        .generated
        .iter()
        .map(|t| h.beta_kl * t.kl + h.gamma_r * h.beta_rec * t.rec)
        .sum::<f64>()
        / n;
    h.scale * h.beta_rec * terms.real.rec + h.scale * gen
}

/// Sum over modalities of the per-subject mean squared error, averaged over
/// subjects.
pub fn recon_error(x: &[Matrix], x_hat: &[Matrix]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::dim("recon_error", x.len(), x_hat.len()));
    }
    let n = x.first().map_or(0, Matrix::rows);
    let mut total = 0.0;
    for (a, b) in x.iter().zip(x_hat) {
        a.check_same(b, "recon_error")?;
        if a.rows() != n {
            return Err(Error::dim("recon_error", n, a.rows()));
        }
        let sq: f64 = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(p, q)| (p - q).powi(2))
            .sum();
        total += sq / a.cols() as f64;
    }
    Ok(total / n as f64)
}

/// Per-row terms on a tape, each `n x 1`.
#[derive(Debug, Clone, Copy)]
pub struct TermVars {
    pub rec: Var,
    pub kl: Var,
}

/// Per-row reconstruction error, `n x 1`: `sum_m sum_j (x - x_hat)^2` for
/// `Sum`, `sum_m mean_j (x - x_hat)^2` for `Mean`.
pub fn recon_rows(tape: &mut Tape, x: &[Var], x_hat: &[Var], reduction: Reduction) -> Result<Var> {
    if x.len() != x_hat.len() || x.is_empty() {
        return Err(Error::dim("recon_rows", x.len(), x_hat.len()));
    }
    let mut total: Option<Var> = None;
    for (&a, &b) in x.iter().zip(x_hat) {
        let w = tape.shape(a).1 as f64;
        let d = tape.sub(a, b)?;
        let d2 = tape.square(d)?;
        let s = tape.row_sum(d2)?;
        let m = match reduction {
            Reduction::Sum => s,
            Reduction::Mean => tape.scale(s, 1.0 / w)?,
        };
        total = Some(match total {
            Some(t) => tape.add(t, m)?,
            None => m,
        });
    }
    Ok(total.expect("non-empty"))
}

fn weighted_sum(tape: &mut Tape, a: Var, wa: f64, b: Var, wb: f64) -> Result<Var> {
    let sa = tape.scale(a, wa)?;
    let sb = tape.scale(b, wb)?;
    tape.add(sa, sb)
}

/// Batch-mean encoder loss; the exponential is applied per subject.
pub fn encoder_loss_var(
    tape: &mut Tape,
    real: TermVars,
    generated: &[TermVars],
    h: &LossHyper,
) -> Result<Var> {
    if generated.is_empty() {
        return Err(Error::Contract(
            "encoder loss needs at least one generated branch".into(),
        ));
    }
    let r = weighted_sum(
        tape,
        real.rec,
        h.scale * h.beta_rec,
        real.kl,
        h.scale * h.beta_kl,
    )?;
    let mut acc = r;
    let nb = generated.len() as f64;
    for g in generated {
        let arg = weighted_sum(
            tape,
            g.rec,
            -2.0 * h.scale * h.beta_rec,
            g.kl,
            -2.0 * h.scale * h.beta_neg,
        )?;
        let arg = tape.clamp(arg, f64::NEG_INFINITY, 0.0)?;
        let e = tape.exp(arg)?;
        let e = tape.scale(e, 0.5 / nb)?;
        acc = tape.add(acc, e)?;
    }
    tape.mean(acc)
}

/// Batch-mean decoder loss.
pub fn decoder_loss_var(
    tape: &mut Tape,
    real_rec: Var,
    generated: &[TermVars],
    h: &LossHyper,
) -> Result<Var> {
    if generated.is_empty() {
        return Err(Error::Contract(
            "decoder loss needs at least one generated branch".into(),
        ));
    }
    let mut acc = tape.scale(real_rec, h.scale * h.beta_rec)?;
    let nb = generated.len() as f64;
    for g in generated {
        let t = weighted_sum(
            tape,
            g.kl,
            h.scale * h.beta_kl / nb,
            g.rec,
            h.scale * h.gamma_r * h.beta_rec / nb,
        )?;
        acc = tape.add(acc, t)?;
    }
    tape.mean(acc)
}
