//! Joint posterior construction from unimodal posteriors.
//!
//! Each fusion method is a uniform mixture over a list of modality subsets,
//! where every subset contributes the product of its experts:
//!
//! * `PoE`   – the single full subset,
//! * `MoE`   – the singletons,
//! * `MOPOE` – every non-empty subset, in binary-counter order.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{self, DiagGaussian, GaussVar};
use crate::numkit::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMethod {
    Poe,
    Moe,
    Mopoe,
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMethod::Poe => "poe",
            FusionMethod::Moe => "moe",
            FusionMethod::Mopoe => "mopoe",
        })
    }
}

impl FromStr for FusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poe" => Ok(Self::Poe),
            "moe" => Ok(Self::Moe),
            "mopoe" => Ok(Self::Mopoe),
            other => Err(Error::Config(format!("unknown fusion method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionSpec {
    pub method: FusionMethod,
    pub include_prior: bool,
    pub subsets: Vec<Vec<usize>>,
}

impl FusionSpec {
    pub fn new(method: FusionMethod, n_modalities: usize, include_prior: bool) -> Result<Self> {
        if n_modalities == 0 {
            return Err(Error::Contract("fusion needs at least one modality".into()));
        }
        let subsets = match method {
            FusionMethod::Poe => vec![(0..n_modalities).collect()],
            FusionMethod::Moe => (0..n_modalities).map(|i| vec![i]).collect(),
            FusionMethod::Mopoe => nonempty_subsets(n_modalities),
        };
        Ok(Self {
            method,
            include_prior,
            subsets,
        })
    }

    /// Explicit subset list, e.g. to restrict MOPOE to a sub-family.
    pub fn with_subsets(
        method: FusionMethod,
        subsets: Vec<Vec<usize>>,
        include_prior: bool,
    ) -> Result<Self> {
        if subsets.is_empty() || subsets.iter().any(Vec::is_empty) {
            return Err(Error::Contract(
                "subset list must be non-empty and contain no empty subset".into(),
            ));
        }
        Ok(Self {
            method,
            include_prior,
            subsets,
        })
    }

    pub fn n_components(&self) -> usize {
        self.subsets.len()
    }

    /// Uniform weights `1 / |subsets|`.
    pub fn weights(&self) -> Vec<f64> {
        vec![1.0 / self.subsets.len() as f64; self.subsets.len()]
    }

    fn check_modalities(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::Contract("fusion over an empty modality list".into()));
        }
        if let Some(&bad) = self.subsets.iter().flatten().find(|&&i| i >= n) {
            return Err(Error::Contract(format!(
                "subset refers to modality {bad} but only {n} given"
            )));
        }
        Ok(())
    }
}

/// Non-empty subsets of `0..n` in binary-counter order (bit `i` = modality `i`).
pub fn nonempty_subsets(n: usize) -> Vec<Vec<usize>> {
    (1u64..(1u64 << n))
        .map(|mask| (0..n).filter(|i| mask >> i & 1 == 1).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePosterior {
    pub components: Vec<DiagGaussian>,
    pub weights: Vec<f64>,
}

impl MixturePosterior {
    pub fn dim(&self) -> usize {
        self.components.first().map_or(0, DiagGaussian::dim)
    }
}

pub fn fuse(unimodal: &[DiagGaussian], spec: &FusionSpec) -> Result<MixturePosterior> {
    spec.check_modalities(unimodal.len())?;
    let dim = unimodal[0].dim();
    if let Some(bad) = unimodal.iter().find(|q| q.dim() != dim) {
        return Err(Error::dim("fuse", dim, bad.dim()));
    }
    let components = spec
        .subsets
        .iter()
        .map(|s| {
            let experts: Vec<DiagGaussian> = s.iter().map(|&i| unimodal[i].clone()).collect();
            gauss::product_of_experts(&experts, spec.include_prior)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MixturePosterior {
        components,
        weights: spec.weights(),
    })
}

/// `sum_k w_k mu_k`.
pub fn joint_posterior_mean(mix: &MixturePosterior) -> Vec<f64> {
    let mut out = vec![0.0; mix.dim()];
    for (c, w) in mix.components.iter().zip(&mix.weights) {
        for (o, m) in out.iter_mut().zip(&c.mu) {
            *o += w * m;
        }
    }
    out
}

/// Batched mixture on a tape: one component per subset, each `n x d`.
#[derive(Debug, Clone)]
pub struct MixtureVar {
    pub components: Vec<GaussVar>,
    pub weights: Vec<f64>,
}

impl MixtureVar {
    pub fn row(&self, tape: &Tape, r: usize) -> MixturePosterior {
        MixturePosterior {
            components: self.components.iter().map(|c| c.row(tape, r)).collect(),
            weights: self.weights.clone(),
        }
    }
}

pub fn fuse_vars(tape: &mut Tape, unimodal: &[GaussVar], spec: &FusionSpec) -> Result<MixtureVar> {
    spec.check_modalities(unimodal.len())?;
    let components = spec
        .subsets
        .iter()
        .map(|s| {
            let experts: Vec<GaussVar> = s.iter().map(|&i| unimodal[i]).collect();
            gauss::poe_vars(tape, &experts, spec.include_prior)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MixtureVar {
        components,
        weights: spec.weights(),
    })
}
