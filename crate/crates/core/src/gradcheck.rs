//! Central finite-difference checks of tape gradients, with a catalogue of
//! randomized cases covering every differentiable operation and the full
//! diffusion objective.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::calibration::reparameterize;
use crate::diffusion::{hybrid_losses, linear_beta_schedule, loss_total, DiffusionBatch};
use crate::error::Result;
use crate::nets::{Conditioning, Denoiser, DenoiserConfig};
use crate::tensor::{seeded_rng, SeededRng};
use crate::{Tape, Tensor, Var};

pub const STEP: f64 = 1e-5;

/// Builds a scalar loss from variables bound to the case inputs.
pub type Build = dyn Fn(&mut Tape, &[Var]) -> Result<Var>;

/// Random inputs plus the loss to differentiate.
pub type Instance = (Vec<Tensor>, Box<Build>);

#[derive(Clone, Copy)]
pub struct GradCase {
    pub name: &'static str,
    pub make: fn(&mut SeededRng) -> Instance,
}

impl core::fmt::Debug for GradCase {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name)
    }
}

fn eval(inputs: &[Tensor], build: &Build) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    tape.scalar(loss)
}

fn bump(t: &Tensor, j: usize, h: f64) -> Result<Tensor> {
    let mut d = t.data().to_vec();
    d[j] += h;
    Tensor::new(t.shape(), d)
}

/// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e-6)` over
/// every input element, with central differences of step `h`.
pub fn max_relative_error(inputs: &[Tensor], build: &Build, h: f64) -> Result<f64> {
    let params: Vec<Tensor> = inputs.iter().map(|t| t.clone().into_param()).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|t| tape.leaf(t)).collect();
    let loss = build(&mut tape, &vars)?;
    tape.backward(loss)?;

    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        for (j, &a) in analytic.iter().enumerate() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            plus[i] = bump(&inputs[i], j, h)?;
            minus[i] = bump(&inputs[i], j, -h)?;
            let numeric = (eval(&plus, build)? - eval(&minus, build)?) / (2.0 * h);
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

/// Worst relative error of `case` over `instances` seeded draws.
pub fn check_case(case: &GradCase, instances: u64, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for k in 0..instances {
        let mut rng = seeded_rng(seed.wrapping_add(k));
        let (inputs, build) = (case.make)(&mut rng);
        worst = worst.max(max_relative_error(&inputs, &*build, STEP)?);
    }
    Ok(worst)
}

/// `sum(out ⊙ w)` with a fixed random `w`, so every output element has a
/// distinct sensitivity.
fn weighted(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let w = tape.constant(seeded_rng(seed).normal_sample(&shape));
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn dims(rng: &mut SeededRng) -> (usize, usize, usize) {
    (rng.int_in(1, 4), rng.int_in(1, 4), rng.int_in(1, 4))
}

fn mat(rng: &mut SeededRng, r: usize, c: usize) -> Tensor {
    rng.normal_sample(&[r, c])
}

macro_rules! case {
    ($name:expr, |$rng:ident| $body:expr) => {
        GradCase { name: $name, make: |$rng: &mut SeededRng| -> Instance { $body } }
    };
}

/// One case per differentiable tape operation plus a composed MLP.
pub fn op_cases() -> Vec<GradCase> {
    vec![
        case!("add", |rng| {
            let (r, c, _) = dims(rng);
            (
                vec![mat(rng, r, c), mat(rng, r, c)],
                Box::new(|t, v| {
                    let o = t.add(v[0], v[1])?;
                    weighted(t, o, 1)
                }),
            )
        }),
        case!("sub", |rng| {
            let (r, c, _) = dims(rng);
            (
                vec![mat(rng, r, c), mat(rng, r, c)],
                Box::new(|t, v| {
                    let o = t.sub(v[0], v[1])?;
                    weighted(t, o, 2)
                }),
            )
        }),
        case!("mul", |rng| {
            let (r, c, _) = dims(rng);
            (
                vec![mat(rng, r, c), mat(rng, r, c)],
                Box::new(|t, v| {
                    let o = t.mul(v[0], v[1])?;
                    weighted(t, o, 3)
                }),
            )
        }),
        case!("mul-broadcast", |rng| {
            let (r, c, _) = dims(rng);
            let ins = vec![mat(rng, r, c), rng.normal_sample(&[1])];
            (
                ins,
                Box::new(|t, v| {
                    let o = t.mul(v[1], v[0])?;
                    weighted(t, o, 4)
                }),
            )
        }),
        case!("scale", |rng| {
            let (r, c, _) = dims(rng);
            (
                vec![mat(rng, r, c)],
                Box::new(|t, v| {
                    let o = t.scale(v[0], -1.7);
                    weighted(t, o, 5)
                }),
            )
        }),
        case!("add-scalar", |rng| {
            let (r, c, _) = dims(rng);
            (
                vec![mat(rng, r, c)],
                Box::new(|t, v| {
                    let o = t.add_scalar(v[0], 0.3);
                    weighted(t, o, 6)
                }),
            )
        }),
        case!("silu", |rng| {
            let (r, c, _) = dims(rng);
            (
                vec![mat(rng, r, c)],
                Box::new(|t, v| {
                    let o = t.silu(v[0]);
                    weighted(t, o, 7)
                }),
            )
        }),
        case!("exp", |rng| {
            let (r, c, _) = dims(rng);
            (
                vec![mat(rng, r, c)],
                Box::new(|t, v| {
                    let o = t.exp(v[0]);
                    weighted(t, o, 8)
                }),
            )
        }),
        case!("ln", |rng| {
            let (r, c, _) = dims(rng);
            let x = mat(rng, r, c).map(|x| 0.5 + libm::fabs(x));
            (
                vec![x],
                Box::new(|t, v| {
                    let o = t.ln(v[0]);
                    weighted(t, o, 9)
                }),
            )
        }),
        case!("square", |rng| {
            let (r, c, _) = dims(rng);
            (
                vec![mat(rng, r, c)],
                Box::new(|t, v| {
                    let o = t.square(v[0]);
                    weighted(t, o, 10)
                }),
            )
        }),
        case!("sum", |rng| {
            let (r, c, _) = dims(rng);
            (
                vec![mat(rng, r, c)],
                Box::new(|t, v| {
                    let s = t.square(v[0]);
                    Ok(t.sum(s))
                }),
            )
        }),
        case!("mean", |rng| {
            let (r, c, _) = dims(rng);
            (
                vec![mat(rng, r, c)],
                Box::new(|t, v| {
                    let s = t.square(v[0]);
                    Ok(t.mean(s))
                }),
            )
        }),
        case!("matmul", |rng| {
            let (m, k, n) = dims(rng);
            (
                vec![mat(rng, m, k), mat(rng, k, n)],
                Box::new(|t, v| {
                    let o = t.matmul(v[0], v[1])?;
                    weighted(t, o, 11)
                }),
            )
        }),
        case!("affine", |rng| {
            let (m, k, n) = dims(rng);
            let ins = vec![mat(rng, m, k), mat(rng, k, n), rng.normal_sample(&[n])];
            (
                ins,
                Box::new(|t, v| {
                    let o = t.affine(v[0], v[1], v[2])?;
                    weighted(t, o, 12)
                }),
            )
        }),
        case!("concat-rows", |rng| {
            let (r1, r2, c) = dims(rng);
            let ins = vec![mat(rng, r1, c), mat(rng, r2, c)];
            (
                ins,
                Box::new(|t, v| {
                    let o = t.concat(&[v[0], v[1]], 0)?;
                    weighted(t, o, 13)
                }),
            )
        }),
        case!("concat-cols", |rng| {
            let (r, c1, c2) = dims(rng);
            let ins = vec![mat(rng, r, c1), mat(rng, r, c2), mat(rng, r, 2)];
            (
                ins,
                Box::new(|t, v| {
                    let o = t.concat(&[v[0], v[1], v[2]], 1)?;
                    weighted(t, o, 14)
                }),
            )
        }),
        case!("slice-rows", |rng| {
            let (r, c, _) = dims(rng);
            (
                vec![mat(rng, r + 2, c)],
                Box::new(move |t, v| {
                    let o = t.slice(v[0], 0, 1, r + 1)?;
                    weighted(t, o, 15)
                }),
            )
        }),
        case!("slice-cols", |rng| {
            let (r, c, _) = dims(rng);
            (
                vec![mat(rng, r, c + 2)],
                Box::new(move |t, v| {
                    let o = t.slice(v[0], 1, 1, c + 2)?;
                    weighted(t, o, 16)
                }),
            )
        }),
        case!("gather-rows", |rng| {
            let (r, c, n) = dims(rng);
            let idx: Vec<usize> = (0..n + 2).map(|_| rng.int_in(0, r - 1)).collect();
            (
                vec![mat(rng, r, c)],
                Box::new(move |t, v| {
                    let o = t.gather_rows(v[0], &idx)?;
                    weighted(t, o, 17)
                }),
            )
        }),
        case!("log-softmax", |rng| {
            let (r, c, _) = dims(rng);
            (
                vec![mat(rng, r, c + 1)],
                Box::new(|t, v| {
                    let o = t.log_softmax(v[0])?;
                    weighted(t, o, 18)
                }),
            )
        }),
        case!("mlp", |rng| {
            let ins = vec![mat(rng, 3, 4), mat(rng, 4, 5), rng.normal_sample(&[5]), mat(rng, 5, 3)];
            (
                ins,
                Box::new(|t, v| {
                    let h = t.affine(v[0], v[1], v[2])?;
                    let h = t.silu(h);
                    let o = t.matmul(h, v[3])?;
                    let l = t.log_softmax(o)?;
                    weighted(t, l, 19)
                }),
            )
        }),
    ]
}

const TINY: DenoiserConfig = DenoiserConfig {
    latent_dim: 2,
    feature_dim: 3,
    cond_dim: 2,
    time_dim: 4,
    hidden: 5,
    timesteps: 10,
    time_period: 100.0,
};

/// Hybrid loss `L_simple + λ·L_vlb` of a small random denoiser on a random
/// batch, differentiated with respect to every denoiser parameter and the
/// conditioning features. The reverse-step mean uses a fixed `ε̂` so the
/// objective is a smooth function of all inputs.
fn hybrid_case(rng: &mut SeededRng) -> Instance {
    let rows = 3;
    let net = Denoiser::new(TINY, rng.next_u64()).expect("valid config");
    let mut inputs: Vec<Tensor> =
        net.params().iter().map(|(_, p)| Tensor::new(p.shape(), p.data().to_vec()).expect("shape")).collect();
    inputs.push(mat(rng, rows, TINY.feature_dim));
    let z0 = mat(rng, rows, TINY.latent_dim);
    let eps = mat(rng, rows, TINY.latent_dim);
    let frozen = mat(rng, rows, TINY.latent_dim);
    let mut t: Vec<usize> = (0..rows).map(|_| rng.int_in(2, TINY.timesteps)).collect();
    t[0] = 1;
    let lambda = rng.uniform() * 2.0;
    let schedule = linear_beta_schedule(TINY.timesteps, 1e-2, 0.2).expect("valid schedule");
    let n = net.params().len();
    (
        inputs,
        Box::new(move |tape, v| {
            let bound = net.bind_vars(tape, v[..n].to_vec())?;
            let cond = Conditioning::Features(v[n]);
            let batch = DiffusionBatch { z0: &z0, t: &t, eps: &eps };
            let terms = hybrid_losses(tape, &bound, &schedule, batch, &cond, Some(&frozen))?;
            loss_total(tape, terms, lambda)
        }),
    )
}

/// The end-to-end objective, and the reparameterized draw that feeds it
/// during inversion.
pub fn loss_cases() -> Vec<GradCase> {
    vec![
        GradCase { name: "hybrid-loss", make: hybrid_case },
        case!("reparameterize", |rng| {
            let d = rng.int_in(1, 5);
            let ins = vec![mat(rng, 1, d), mat(rng, 1, d).map(|x| 0.5 * x), mat(rng, 1, d)];
            (
                ins,
                Box::new(|t, v| {
                    let o = reparameterize(t, v[0], v[1], v[2])?;
                    weighted(t, o, 20)
                }),
            )
        }),
    ]
}
