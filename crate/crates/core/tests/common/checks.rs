//! Randomized comparisons against the oracles, each returning its worst
//! discrepancy so that callers choose how to report it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mmsivae::fusion::{fuse, nonempty_subsets, FusionMethod, FusionSpec, MixturePosterior};
use mmsivae::gauss::{product_of_experts, DiagGaussian};
use mmsivae::metrics::{bh_fdr, emd_1d, pearson};
use mmsivae::net::{Architecture, Binding, Model};
use mmsivae::numkit::{AdamConfig, Matrix, Tape};
use mmsivae::objective::LossHyper;
use mmsivae::score::mahalanobis;
use mmsivae::trainer::{
    decoder_graph, decoder_step, encoder_graph, encoder_step, Optimizers, StepNoise,
};

use super::{
    bh_brute, emd_lp_oracle, kl_quadrature_1d, pearson_definitional, product_density_linf,
};

fn random_gaussian(rng: &mut ChaCha8Rng, d: usize) -> DiagGaussian {
    let mu = (0..d)
        .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let logvar = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    DiagGaussian::new(mu, logvar).unwrap()
}

fn normal_pdf(x: f64, mu: f64, var: f64) -> f64 {
    (-(x - mu) * (x - mu) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Worst L-inf gap between the closed-form product and the normalized
/// quadrature product, per latent coordinate.
pub fn poe_quadrature_linf(instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let m = rng.random_range(1..=3);
        let d = rng.random_range(1..=2);
        let prior = rng.random_bool(0.5);
        let experts: Vec<DiagGaussian> = (0..m).map(|_| random_gaussian(&mut rng, d)).collect();
        let q = product_of_experts(&experts, prior).unwrap();
        let var = q.variance();
        for (j, &vj) in var.iter().enumerate() {
            let mut factors: Vec<(f64, f64)> = experts
                .iter()
                .map(|e| (e.mu[j], e.logvar[j].exp()))
                .collect();
            if prior {
                factors.push((0.0, 1.0));
            }
            worst = worst.max(product_density_linf(&factors, |x| {
                normal_pdf(x, q.mu[j], vj)
            }));
        }
    }
    worst
}

fn mixture_gap(a: &MixturePosterior, b: &MixturePosterior) -> f64 {
    if a.components.len() != b.components.len() {
        return f64::INFINITY;
    }
    let w = a.weights.iter().zip(&b.weights).map(|(x, y)| (x - y).abs());
    let c = a.components.iter().zip(&b.components).flat_map(|(p, q)| {
        p.mu.iter()
            .chain(&p.logvar)
            .zip(q.mu.iter().chain(&q.logvar))
            .map(|(u, v)| (u - v).abs())
    });
    w.chain(c).fold(0.0, f64::max)
}

/// Worst gap of MOPOE over {full set} vs PoE and over singletons vs MoE.
pub fn mopoe_reduction_gap(instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let m = rng.random_range(1..=4);
        let d = rng.random_range(1..=4);
        let prior = rng.random_bool(0.5);
        let q: Vec<DiagGaussian> = (0..m).map(|_| random_gaussian(&mut rng, d)).collect();
        let full =
            FusionSpec::with_subsets(FusionMethod::Mopoe, vec![(0..m).collect()], prior).unwrap();
        let poe = FusionSpec::new(FusionMethod::Poe, m, prior).unwrap();
        worst = worst.max(mixture_gap(
            &fuse(&q, &full).unwrap(),
            &fuse(&q, &poe).unwrap(),
        ));
        let singles = FusionSpec::with_subsets(
            FusionMethod::Mopoe,
            (0..m).map(|i| vec![i]).collect(),
            prior,
        )
        .unwrap();
        let moe = FusionSpec::new(FusionMethod::Moe, m, prior).unwrap();
        worst = worst.max(mixture_gap(
            &fuse(&q, &singles).unwrap(),
            &fuse(&q, &moe).unwrap(),
        ));
        let all = fuse(&q, &FusionSpec::new(FusionMethod::Mopoe, m, prior).unwrap()).unwrap();
        if all.components.len() != nonempty_subsets(m).len() {
            return f64::INFINITY;
        }
        worst = worst.max((all.weights.iter().sum::<f64>() - 1.0).abs());
    }
    worst
}

pub struct KlReport {
    pub worst_gap: f64,
    pub min_kl: f64,
    pub standard: f64,
}

pub fn kl_against_quadrature(cases: usize) -> KlReport {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst_gap: f64 = 0.0;
    let mut min_kl = f64::INFINITY;
    for _ in 0..cases {
        let d = rng.random_range(1..=4);
        let q = random_gaussian(&mut rng, d);
        let closed = q.kl_to_std_normal();
        let quad: f64 =
            q.mu.iter()
                .zip(&q.logvar)
                .map(|(&m, &l)| kl_quadrature_1d(m, l))
                .sum();
        worst_gap = worst_gap.max((closed - quad).abs());
        min_kl = min_kl.min(closed);
    }
    KlReport {
        worst_gap,
        min_kl,
        standard: DiagGaussian::standard(7).kl_to_std_normal(),
    }
}

/// Worst gap between `emd_1d` and the transport LP, on tie-heavy samples.
pub fn emd_oracle_gap(instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.random_range(1..=8);
        let m = rng.random_range(1..=8);
        let draw = |rng: &mut ChaCha8Rng| {
            (rng.random_range(-6..=6) as f64) * 0.5 + rng.random_range(0..2) as f64 * 0.1
        };
        let a: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let b: Vec<f64> = (0..m).map(|_| draw(&mut rng)).collect();
        worst = worst.max((emd_1d(&a, &b).unwrap() - emd_lp_oracle(&a, &b)).abs());
    }
    worst
}

/// Number of instances where `bh_fdr` disagrees with the set definition.
pub fn bh_mismatches(instances: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut bad = 0;
    for _ in 0..instances {
        let m = rng.random_range(0..=10);
        let q = [0.01, 0.05, 0.1, 0.2][rng.random_range(0..4)];
        // a third of the p-values come from a coarse grid, so ties are common
        let p: Vec<f64> = (0..m)
            .map(|_| {
                if rng.random_bool(0.3) {
                    rng.random_range(0..20) as f64 / 200.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        if bh_fdr(&p, q).unwrap() != bh_brute(&p, q) {
            bad += 1;
        }
    }
    bad
}

/// Worst gap on 2-D cases worked by hand.
pub fn mahalanobis_hand_gap() -> f64 {
    let sigma = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
    let diag = Matrix::from_rows(&[vec![4.0, 0.0], vec![0.0, 9.0]]).unwrap();
    // inverse of sigma is [[2, -1], [-1, 2]] / 3
    let cases: [(&Matrix, [f64; 2], [f64; 2], f64); 4] = [
        (&sigma, [1.0, 0.0], [0.0, 0.0], (2.0f64 / 3.0).sqrt()),
        (&sigma, [2.0, 0.0], [1.0, 1.0], 2.0f64.sqrt()),
        (&sigma, [5.0, -1.0], [5.0, -1.0], 0.0),
        (&diag, [2.0, 3.0], [0.0, 0.0], 2.0f64.sqrt()),
    ];
    cases
        .iter()
        .map(|(s, x, mu, want)| (mahalanobis(x, mu, s).unwrap() - want).abs())
        .fold(0.0, f64::max)
}

pub fn pearson_gap(instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.random_range(3..50);
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let k: f64 = rng.random_range(-1.0..1.0);
        let y: Vec<f64> = x
            .iter()
            .map(|v| k * v + rng.sample::<f64, _>(StandardNormal))
            .collect();
        worst = worst.max((pearson(&x, &y).unwrap() - pearson_definitional(&x, &y)).abs());
    }
    worst
}

fn snapshot(tensors: Vec<&Matrix>) -> Vec<Vec<u64>> {
    tensors
        .into_iter()
        .map(|m| m.as_slice().iter().map(|v| v.to_bits()).collect())
        .collect()
}

/// Runs alternating encoder/decoder steps and checks after each that only
/// the stepped set moved, and that cross gradients are never reached.
pub fn scoping(method: FusionMethod, steps: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(method as u64 + 40);
    let arch = Architecture::new(vec![5, 4, 3], 2, 3);
    let hyper = LossHyper::defaults_for(arch.total_features());
    let spec = FusionSpec::new(method, 3, true).unwrap();
    let mut model = Model::init(arch, &mut rng).unwrap();
    let mut opt = Optimizers::new(
        &model,
        AdamConfig {
            lr: 1e-3,
            ..AdamConfig::default()
        },
    );
    let n = 12;
    let mut normal = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| rng.sample(StandardNormal));
    let x = vec![normal(n, 5), normal(n, 4), normal(n, 3)];
    let cov = normal(n, 2);
    let fail = |step: usize, what: &str| Err(format!("{method} step {step}: {what}"));

    for step in 0..steps {
        let noise = StepNoise::draw(&mut rng, n, 3, spec.n_components(), 1);

        let dec_before = snapshot(model.decoder_tensors());
        let enc_before = snapshot(model.encoder_tensors());
        let (_, z) = encoder_step(&mut model, &mut opt, &spec, &hyper, &x, &cov, &noise)
            .map_err(|e| e.to_string())?;
        if snapshot(model.decoder_tensors()) != dec_before {
            return fail(step, "encoder step changed the decoder");
        }
        if snapshot(model.encoder_tensors()) == enc_before {
            return fail(step, "encoder step left the encoder unchanged");
        }

        let enc_before = snapshot(model.encoder_tensors());
        let dec_before = snapshot(model.decoder_tensors());
        decoder_step(&mut model, &mut opt, &spec, &hyper, &x, &cov, &z, &noise)
            .map_err(|e| e.to_string())?;
        if snapshot(model.encoder_tensors()) != enc_before {
            return fail(step, "decoder step changed the encoder");
        }
        if snapshot(model.decoder_tensors()) == dec_before {
            return fail(step, "decoder step left the decoder unchanged");
        }

        // With both sets bound as leaves, no gradient crosses over.
        let mut tape = Tape::new();
        let g = decoder_graph(
            &mut tape,
            &model,
            &spec,
            &hyper,
            &x,
            &cov,
            &z,
            &noise,
            Binding::Detached,
            Binding::Trainable,
        )
        .map_err(|e| e.to_string())?;
        let grads = tape.backward(g.loss).map_err(|e| e.to_string())?;
        if g.bound.encoder_leaves.iter().any(|&l| grads.reached(l)) {
            return fail(step, "encoder gradient reached through the decoder loss");
        }
        if !g.bound.decoder_leaves.iter().any(|&l| grads.reached(l)) {
            return fail(step, "decoder loss has no decoder gradient");
        }

        let mut tape = Tape::new();
        let g = encoder_graph(
            &mut tape,
            &model,
            &spec,
            &hyper,
            &x,
            &cov,
            &noise,
            Binding::Trainable,
            Binding::Detached,
        )
        .map_err(|e| e.to_string())?;
        let grads = tape.backward(g.loss).map_err(|e| e.to_string())?;
        if g.bound.decoder_leaves.iter().any(|&l| grads.reached(l)) {
            return fail(step, "decoder gradient reached through the encoder loss");
        }
        if !g.bound.encoder_leaves.iter().any(|&l| grads.reached(l)) {
            return fail(step, "encoder loss has no encoder gradient");
        }
    }
    Ok(())
}
