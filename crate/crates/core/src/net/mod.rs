//! Modality-specific encoder and decoder MLPs with covariate conditioning.

pub mod checkpoint;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gauss::{GaussVar, LOGVAR_BOUND};
use crate::numkit::{Matrix, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// Network shape shared by every modality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub modality_widths: Vec<usize>,
    pub covariate_width: usize,
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub activation: Activation,
    pub condition_encoder: bool,
    pub condition_decoder: bool,
}

impl Architecture {
    pub fn new(modality_widths: Vec<usize>, covariate_width: usize, latent_dim: usize) -> Self {
        Self {
            modality_widths,
            covariate_width,
            latent_dim,
            encoder_hidden: vec![64, 32],
            decoder_hidden: vec![32, 64],
            activation: Activation::Relu,
            condition_encoder: true,
            condition_decoder: true,
        }
    }

    pub fn n_modalities(&self) -> usize {
        self.modality_widths.len()
    }

    pub fn total_features(&self) -> usize {
        self.modality_widths.iter().sum()
    }

    pub fn encoder_input(&self, modality: usize) -> usize {
        self.modality_widths[modality]
            + if self.condition_encoder {
                self.covariate_width
            } else {
                0
            }
    }

    pub fn decoder_input(&self) -> usize {
        self.latent_dim
            + if self.condition_decoder {
                self.covariate_width
            } else {
                0
            }
    }

    pub fn validate(&self) -> Result<()> {
        if self.modality_widths.is_empty() || self.modality_widths.contains(&0) {
            return Err(Error::Config(
                "every modality needs a positive width".into(),
            ));
        }
        if self.latent_dim == 0 {
            return Err(Error::Config("latent dim must be at least 1".into()));
        }
        if self.encoder_hidden.contains(&0) || self.decoder_hidden.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Affine layer `x W + b` with `W: in x out`, `b: 1 x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, gain2: f64, rng: &mut R) -> Self {
        // uniform(-b, b) has variance b^2 / 3 = gain^2 / fan_in
        let bound = (3.0 * gain2 / fan_in as f64).sqrt();
        Self {
            weight: Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-bound..bound)),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(fan_in, fan_out),
            bias: Matrix::zeros(1, fan_out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub trunk: Vec<Linear>,
    pub mu_head: Linear,
    pub logvar_head: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    /// Hidden layers followed by the linear output layer.
    pub layers: Vec<Linear>,
}

impl EncoderParams {
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = Vec::new();
        for l in self.trunk.iter().chain([&self.mu_head, &self.logvar_head]) {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = Vec::new();
        for l in self
            .trunk
            .iter_mut()
            .chain([&mut self.mu_head, &mut self.logvar_head])
        {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }
}

impl DecoderParams {
    pub fn tensors(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// Encoder and decoder weights for every modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub encoders: Vec<EncoderParams>,
    pub decoders: Vec<DecoderParams>,
}

fn hidden_gain2(act: Activation) -> f64 {
    match act {
        Activation::Relu => 2.0,
        Activation::Tanh => 1.0,
    }
}

impl Model {
    /// Kaiming-style uniform fan-in initialization; biases start at zero.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let g = hidden_gain2(arch.activation);
        let d = arch.latent_dim;
        let mut encoders = Vec::new();
        let mut decoders = Vec::new();
        for m in 0..arch.n_modalities() {
            let mut trunk = Vec::new();
            let mut fan_in = arch.encoder_input(m);
            for &h in &arch.encoder_hidden {
                trunk.push(Linear::init(fan_in, h, g, rng));
                fan_in = h;
            }
            encoders.push(EncoderParams {
                trunk,
                mu_head: Linear::init(fan_in, d, 1.0, rng),
                logvar_head: Linear::init(fan_in, d, 1.0, rng),
            });

            let mut layers = Vec::new();
            let mut fan_in = arch.decoder_input();
            for &h in &arch.decoder_hidden {
                layers.push(Linear::init(fan_in, h, g, rng));
                fan_in = h;
            }
            layers.push(Linear::init(fan_in, arch.modality_widths[m], 1.0, rng));
            decoders.push(DecoderParams { layers });
        }
        Ok(Self {
            arch,
            encoders,
            decoders,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let d = arch.latent_dim;
        let mut encoders = Vec::new();
        let mut decoders = Vec::new();
        for m in 0..arch.n_modalities() {
            let mut trunk = Vec::new();
            let mut fan_in = arch.encoder_input(m);
            for &h in &arch.encoder_hidden {
                trunk.push(Linear::zeros(fan_in, h));
                fan_in = h;
            }
            encoders.push(EncoderParams {
                trunk,
                mu_head: Linear::zeros(fan_in, d),
                logvar_head: Linear::zeros(fan_in, d),
            });
            let mut layers = Vec::new();
            let mut fan_in = arch.decoder_input();
            for &h in &arch.decoder_hidden {
                layers.push(Linear::zeros(fan_in, h));
                fan_in = h;
            }
            layers.push(Linear::zeros(fan_in, arch.modality_widths[m]));
            decoders.push(DecoderParams { layers });
        }
        Ok(Self {
            arch,
            encoders,
            decoders,
        })
    }

    pub fn encoder_tensors(&self) -> Vec<&Matrix> {
        self.encoders
            .iter()
            .flat_map(EncoderParams::tensors)
            .collect()
    }

    pub fn decoder_tensors(&self) -> Vec<&Matrix> {
        self.decoders
            .iter()
            .flat_map(DecoderParams::tensors)
            .collect()
    }

    pub fn encoder_tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.encoders
            .iter_mut()
            .flat_map(EncoderParams::tensors_mut)
            .collect()
    }

    pub fn decoder_tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.decoders
            .iter_mut()
            .flat_map(DecoderParams::tensors_mut)
            .collect()
    }

    /// Places the weights on a tape. Encoder and decoder sets are bound
    /// independently so that each training step differentiates only its own.
    pub fn bind(&self, tape: &mut Tape, encoder: Binding, decoder: Binding) -> Result<BoundModel> {
        let mut enc_leaves = Vec::new();
        let mut encoders = Vec::new();
        for e in &self.encoders {
            let mut bl = |l: &Linear, tape: &mut Tape| -> Result<BoundLinear> {
                let (w, wl) = encoder.place(tape, &l.weight)?;
                let (b, bl) = encoder.place(tape, &l.bias)?;
                enc_leaves.extend([wl, bl]);
                Ok(BoundLinear { w, b })
            };
            let trunk = e
                .trunk
                .iter()
                .map(|l| bl(l, tape))
                .collect::<Result<Vec<_>>>()?;
            let mu_head = bl(&e.mu_head, tape)?;
            let logvar_head = bl(&e.logvar_head, tape)?;
            encoders.push(BoundEncoder {
                trunk,
                mu_head,
                logvar_head,
            });
        }
        let mut dec_leaves = Vec::new();
        let mut decoders = Vec::new();
        for d in &self.decoders {
            let mut layers = Vec::new();
            for l in &d.layers {
                let (w, wl) = decoder.place(tape, &l.weight)?;
                let (b, bl) = decoder.place(tape, &l.bias)?;
                dec_leaves.extend([wl, bl]);
                layers.push(BoundLinear { w, b });
            }
            decoders.push(BoundDecoder { layers });
        }
        Ok(BoundModel {
            arch: self.arch.clone(),
            encoders,
            decoders,
            encoder_leaves: enc_leaves,
            decoder_leaves: dec_leaves,
        })
    }
}

/// How a parameter set enters a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    /// Differentiable leaf.
    Trainable,
    /// Leaf behind a stop-gradient: its gradient is observable and must be zero.
    Detached,
    /// Plain constant.
    Constant,
}

impl Binding {
    fn place(self, tape: &mut Tape, m: &Matrix) -> Result<(Var, Var)> {
        match self {
            Binding::Trainable => {
                let v = tape.param(m.clone())?;
                Ok((v, v))
            }
            Binding::Detached => {
                let leaf = tape.param(m.clone())?;
                Ok((tape.stop_gradient(leaf)?, leaf))
            }
            Binding::Constant => {
                let v = tape.constant(m.clone())?;
                Ok((v, v))
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub w: Var,
    pub b: Var,
}

impl BoundLinear {
    fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.w)?;
        tape.add_row(xw, self.b)
    }
}

#[derive(Debug, Clone)]
pub struct BoundEncoder {
    pub trunk: Vec<BoundLinear>,
    pub mu_head: BoundLinear,
    pub logvar_head: BoundLinear,
}

#[derive(Debug, Clone)]
pub struct BoundDecoder {
    pub layers: Vec<BoundLinear>,
}

/// A [`Model`] whose tensors live on a tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub arch: Architecture,
    pub encoders: Vec<BoundEncoder>,
    pub decoders: Vec<BoundDecoder>,
    /// Leaves in the same order as [`Model::encoder_tensors`].
    pub encoder_leaves: Vec<Var>,
    /// Leaves in the same order as [`Model::decoder_tensors`].
    pub decoder_leaves: Vec<Var>,
}

impl BoundModel {
    /// Unimodal posterior for modality `m`; `x` is `n x width_m`, `cov` is
    /// `n x covariate_width`.
    pub fn encode(&self, tape: &mut Tape, m: usize, x: Var, cov: Var) -> Result<GaussVar> {
        let (n, w) = tape.shape(x);
        if w != self.arch.modality_widths[m] {
            return Err(Error::dim("encode", self.arch.modality_widths[m], w));
        }
        check_cov(tape, cov, n, self.arch.covariate_width)?;
        let enc = &self.encoders[m];
        let mut h = if self.arch.condition_encoder && self.arch.covariate_width > 0 {
            tape.hcat(&[x, cov])?
        } else {
            x
        };
        for l in &enc.trunk {
            let a = l.forward(tape, h)?;
            h = self.arch.activation.apply(tape, a)?;
        }
        let mu = enc.mu_head.forward(tape, h)?;
        let raw = enc.logvar_head.forward(tape, h)?;
        let logvar = tape.clamp(raw, -LOGVAR_BOUND, LOGVAR_BOUND)?;
        Ok(GaussVar { mu, logvar })
    }

    /// Reconstruction of modality `m` from latents `z` (`n x d`).
    pub fn decode(&self, tape: &mut Tape, m: usize, z: Var, cov: Var) -> Result<Var> {
        let (n, d) = tape.shape(z);
        if d != self.arch.latent_dim {
            return Err(Error::dim("decode", self.arch.latent_dim, d));
        }
        check_cov(tape, cov, n, self.arch.covariate_width)?;
        let dec = &self.decoders[m];
        let mut h = if self.arch.condition_decoder && self.arch.covariate_width > 0 {
            tape.hcat(&[z, cov])?
        } else {
            z
        };
        let last = dec.layers.len() - 1;
        for (i, l) in dec.layers.iter().enumerate() {
            h = l.forward(tape, h)?;
            if i < last {
                h = self.arch.activation.apply(tape, h)?;
            }
        }
        Ok(h)
    }

    pub fn encode_all(&self, tape: &mut Tape, xs: &[Var], cov: Var) -> Result<Vec<GaussVar>> {
        if xs.len() != self.arch.n_modalities() {
            return Err(Error::dim("encode_all", self.arch.n_modalities(), xs.len()));
        }
        xs.iter()
            .enumerate()
            .map(|(m, &x)| self.encode(tape, m, x, cov))
            .collect()
    }

    pub fn decode_all(&self, tape: &mut Tape, z: Var, cov: Var) -> Result<Vec<Var>> {
        (0..self.arch.n_modalities())
            .map(|m| self.decode(tape, m, z, cov))
            .collect()
    }
}

fn check_cov(tape: &Tape, cov: Var, n: usize, width: usize) -> Result<()> {
    let shape = tape.shape(cov);
    if shape != (n, width) {
        return Err(Error::dim(
            "covariates",
            format!("{n}x{width}"),
            format!("{}x{}", shape.0, shape.1),
        ));
    }
    Ok(())
}
