//! Reverse-mode gradients against central finite differences.
//!
//! Graphs containing stop-gradient nodes are re-evaluated on a tape that
//! replays the stopped values from the unperturbed pass, so the differences
//! approximate the derivative of the same surrogate `backward` computes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use mmsivae::fusion::{FusionMethod, FusionSpec};
use mmsivae::gauss::{self, GaussVar};
use mmsivae::net::{Activation, Architecture, Binding, Model};
use mmsivae::numkit::{Matrix, Tape, Var};
use mmsivae::objective::LossHyper;
use mmsivae::trainer::{decoder_graph, encoder_graph, StepNoise};
use mmsivae::Result;

const H: f64 = 1e-6;
pub const TOL: f64 = 1e-5;
/// Denominator floor: below this magnitude the error is measured absolutely.
const FLOOR: f64 = 1e-6;

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

/// Max relative error over every entry of every parameter.
fn check<F>(params: &[Matrix], build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let leaves: Vec<Var> = params
        .iter()
        .map(|p| tape.param(p.clone()).unwrap())
        .collect();
    let loss = build(&mut tape, &leaves).unwrap();
    let grads = tape.backward(loss).unwrap();
    let stops = tape.stopped_values();

    let eval = |ps: &[Matrix]| -> f64 {
        let mut t = Tape::with_frozen_stops(stops.clone());
        let ls: Vec<Var> = ps.iter().map(|p| t.param(p.clone()).unwrap()).collect();
        let l = build(&mut t, &ls).unwrap();
        t.scalar(l)
    };
    let mut worst: f64 = 0.0;
    for (k, p) in params.iter().enumerate() {
        let g = grads.get(leaves[k]);
        for i in 0..p.rows() {
            for j in 0..p.cols() {
                let mut ps = params.to_vec();
                ps[k].set(i, j, p.get(i, j) + H);
                let up = eval(&ps);
                ps[k].set(i, j, p.get(i, j) - H);
                let down = eval(&ps);
                worst = worst.max(rel(g.get(i, j), (up - down) / (2.0 * H)));
            }
        }
    }
    worst
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Uniform entries with magnitude in `[lo, hi]` and random sign.
fn away_from_zero(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| {
        let m = rng.random_range(lo..hi);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Contracts a matrix output with fixed weights so every Jacobian entry
/// contributes to the scalar.
fn contract(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = tape.constant(rand_matrix(&mut rng, r, c))?;
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

/// Named worst-case relative errors.
pub type Errors = Vec<(String, f64)>;

/// Every tape operation on small random inputs.
pub fn op_errors() -> Errors {
    let mut out = Errors::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_matrix(&mut rng, 3, 4);
    let b = rand_matrix(&mut rng, 3, 4);
    let m = rand_matrix(&mut rng, 4, 2);
    let row = rand_matrix(&mut rng, 1, 4);
    let narrow = rand_matrix(&mut rng, 3, 2);
    let pos = Matrix::from_fn(3, 4, |_, _| rng.random_range(0.5..2.0));
    let kinky = away_from_zero(&mut rng, 3, 4, 0.1, 1.5);
    // half the entries inside the clamp interval, half outside, none near an edge
    let clampy = Matrix::from_fn(3, 4, |i, j| {
        let m = if (i + j) % 2 == 0 { 0.3 } else { 0.8 };
        if i % 2 == 0 {
            m
        } else {
            -m
        }
    });

    type Build = fn(&mut Tape, &[Var]) -> Result<Var>;
    let cases: Vec<(&str, Vec<Matrix>, Build)> = vec![
        ("matmul", vec![a.clone(), m.clone()], |t, v| {
            t.matmul(v[0], v[1])
        }),
        ("add", vec![a.clone(), b.clone()], |t, v| t.add(v[0], v[1])),
        ("sub", vec![a.clone(), b.clone()], |t, v| t.sub(v[0], v[1])),
        ("mul", vec![a.clone(), b.clone()], |t, v| t.mul(v[0], v[1])),
        ("add_row", vec![a.clone(), row.clone()], |t, v| {
            t.add_row(v[0], v[1])
        }),
        ("scale", vec![a.clone()], |t, v| t.scale(v[0], -1.7)),
        ("neg", vec![a.clone()], |t, v| t.neg(v[0])),
        ("add_scalar", vec![a.clone()], |t, v| {
            t.add_scalar(v[0], 0.3)
        }),
        ("exp", vec![a.clone()], |t, v| t.exp(v[0])),
        ("log", vec![pos.clone()], |t, v| t.log(v[0])),
        ("relu", vec![kinky.clone()], |t, v| t.relu(v[0])),
        ("tanh", vec![a.clone()], |t, v| t.tanh(v[0])),
        ("square", vec![a.clone()], |t, v| t.square(v[0])),
        ("clamp", vec![clampy.clone()], |t, v| {
            t.clamp(v[0], -0.5, 0.5)
        }),
        ("row_sum", vec![a.clone()], |t, v| t.row_sum(v[0])),
        ("row_logsumexp", vec![a.clone()], |t, v| {
            t.row_logsumexp(v[0])
        }),
        ("hcat", vec![a.clone(), narrow.clone()], |t, v| {
            t.hcat(&[v[0], v[1]])
        }),
        ("stop_gradient", vec![a.clone()], |t, v| {
            let s = t.stop_gradient(v[0])?;
            let sq = t.square(v[0])?;
            t.mul(s, sq)
        }),
    ];
    for (i, (name, params, build)) in cases.into_iter().enumerate() {
        let err = check(&params, |t, v| {
            let y = build(t, v)?;
            contract(t, y, 100 + i as u64)
        });
        out.push((name.into(), err));
    }
    // scalar reductions are checked without contraction
    out.push((
        "sum".into(),
        check(std::slice::from_ref(&a), |t, v| t.sum(v[0])),
    ));
    out.push((
        "mean".into(),
        check(std::slice::from_ref(&a), |t, v| t.mean(v[0])),
    ));
    out
}

fn gauss_params(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Matrix> {
    let mut v = Vec::new();
    for _ in 0..3 {
        v.push(rand_matrix(rng, n, d));
        v.push(rand_matrix(rng, n, d).scale(0.5));
    }
    v
}

fn experts(v: &[Var]) -> Vec<GaussVar> {
    v.chunks(2)
        .map(|c| GaussVar {
            mu: c[0],
            logvar: c[1],
        })
        .collect()
}

/// Gaussian and mixture graph builders.
pub fn gauss_errors() -> Errors {
    let mut out = Errors::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, d) = (4, 2);
    let params = gauss_params(&mut rng, n, d);
    let eps = rand_matrix(&mut rng, n, d);
    let z = rand_matrix(&mut rng, n, d);
    let kl_eps: Vec<Vec<Matrix>> = (0..3)
        .map(|_| vec![rand_matrix(&mut rng, n, d), rand_matrix(&mut rng, n, d)])
        .collect();
    let weights = [0.5, 0.3, 0.2];
    let selector = gauss::cyclic_selector(n, 3);

    out.push((
        "kl_rows".into(),
        check(&params[..2], |t, v| {
            let k = gauss::kl_rows(t, experts(v)[0])?;
            contract(t, k, 1)
        }),
    ));
    out.push((
        "reparam".into(),
        check(&params[..2], |t, v| {
            let e = t.constant(eps.clone())?;
            let r = gauss::reparam(t, experts(v)[0], e)?;
            contract(t, r, 2)
        }),
    ));
    for prior in [false, true] {
        out.push((
            format!("poe_vars prior={prior}"),
            check(&params, |t, v| {
                let q = gauss::poe_vars(t, &experts(v), prior)?;
                let s = t.hcat(&[q.mu, q.logvar])?;
                contract(t, s, 3)
            }),
        ));
    }
    out.push((
        "log_density_rows".into(),
        check(
            &[params[0].clone(), params[1].clone(), z.clone()],
            |t, v| {
                let q = GaussVar {
                    mu: v[0],
                    logvar: v[1],
                };
                let l = gauss::log_density_rows(t, q, v[2])?;
                contract(t, l, 4)
            },
        ),
    ));
    out.push((
        "mixture_kl_rows".into(),
        check(&params, |t, v| {
            let k = gauss::mixture_kl_rows(t, &experts(v), &weights, &kl_eps)?;
            contract(t, k, 5)
        }),
    ));
    out.push((
        "mixture_sample_rows".into(),
        check(&params, |t, v| {
            let e = t.constant(eps.clone())?;
            let s = gauss::mixture_sample_rows(t, &experts(v), &weights, &selector, e)?;
            contract(t, s, 6)
        }),
    ));
    out
}

struct Fixture {
    model: Model,
    x: Vec<Matrix>,
    cov: Matrix,
    noise: StepNoise,
    z: Matrix,
}

fn fixture(method: FusionMethod, seed: u64) -> (Fixture, FusionSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture {
        encoder_hidden: vec![3],
        decoder_hidden: vec![3],
        activation: Activation::Tanh,
        ..Architecture::new(vec![2, 2], 2, 2)
    };
    let model = Model::init(arch, &mut rng).unwrap();
    let spec = FusionSpec::new(method, 2, true).unwrap();
    let n = 5;
    let x = vec![rand_matrix(&mut rng, n, 2), rand_matrix(&mut rng, n, 2)];
    let cov = Matrix::from_fn(n, 2, |i, j| f64::from(u8::from(i % 2 == j)));
    let noise = StepNoise::draw(&mut rng, n, 2, spec.n_components(), 2);
    let z = rand_matrix(&mut rng, n, 2);
    (
        Fixture {
            model,
            x,
            cov,
            noise,
            z,
        },
        spec,
    )
}

fn with_tensors(model: &Model, tensors: &[Matrix], encoder: bool) -> Model {
    let mut m = model.clone();
    let slots = if encoder {
        m.encoder_tensors_mut()
    } else {
        m.decoder_tensors_mut()
    };
    for (slot, t) in slots.into_iter().zip(tensors) {
        *slot = t.clone();
    }
    m
}

/// Checks a complete loss with respect to one parameter set (encoder or
/// decoder); the model is rebuilt from the perturbed tensors each time.
fn check_loss(f: &Fixture, spec: &FusionSpec, hyper: &LossHyper, encoder: bool) -> f64 {
    let base: Vec<Matrix> = if encoder {
        f.model.encoder_tensors().into_iter().cloned().collect()
    } else {
        f.model.decoder_tensors().into_iter().cloned().collect()
    };
    let build = |tensors: &[Matrix], tape: &mut Tape| -> (Var, Vec<Var>) {
        let m = with_tensors(&f.model, tensors, encoder);
        if encoder {
            let g = encoder_graph(
                tape,
                &m,
                spec,
                hyper,
                &f.x,
                &f.cov,
                &f.noise,
                Binding::Trainable,
                Binding::Constant,
            )
            .unwrap();
            (g.loss, g.bound.encoder_leaves.clone())
        } else {
            let g = decoder_graph(
                tape,
                &m,
                spec,
                hyper,
                &f.x,
                &f.cov,
                &f.z,
                &f.noise,
                Binding::Detached,
                Binding::Trainable,
            )
            .unwrap();
            (g.loss, g.bound.decoder_leaves.clone())
        }
    };
    let mut tape = Tape::new();
    let (loss, leaves) = build(&base, &mut tape);
    let grads = tape.backward(loss).unwrap();
    let stops = tape.stopped_values();
    let eval = |ts: &[Matrix]| -> f64 {
        let mut t = Tape::with_frozen_stops(stops.clone());
        let (l, _) = build(ts, &mut t);
        t.scalar(l)
    };
    let mut worst: f64 = 0.0;
    for (k, p) in base.iter().enumerate() {
        let g = grads.get(leaves[k]);
        for i in 0..p.rows() {
            for j in 0..p.cols() {
                let mut ts = base.clone();
                ts[k].set(i, j, p.get(i, j) + H);
                let up = eval(&ts);
                ts[k].set(i, j, p.get(i, j) - H);
                let down = eval(&ts);
                worst = worst.max(rel(g.get(i, j), (up - down) / (2.0 * H)));
            }
        }
    }
    worst
}

/// Both complete losses, per fusion method, with the paper weights and with
/// `gamma_r = 1` so the generated reconstruction terms carry visible weight.
pub fn loss_errors() -> Errors {
    let mut out = Errors::new();
    for method in [FusionMethod::Poe, FusionMethod::Moe, FusionMethod::Mopoe] {
        let (f, spec) = fixture(method, 7);
        let paper = LossHyper::defaults_for(4);
        let heavy = LossHyper {
            gamma_r: 1.0,
            beta_neg: 0.5,
            ..paper
        };
        for (label, hyper) in [("paper", paper), ("heavy", heavy)] {
            out.push((
                format!("encoder loss {method} {label}"),
                check_loss(&f, &spec, &hyper, true),
            ));
            out.push((
                format!("decoder loss {method} {label}"),
                check_loss(&f, &spec, &hyper, false),
            ));
        }
    }
    out
}
