use alloc::vec::Vec;

use super::NoiseSchedule;
use crate::error::{Error, Result};
use crate::nets::{Conditioning, NoiseModel};
use crate::{Tape, Tensor, Var};

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

/// One noised minibatch: clean latents, per-row timesteps and the noise used
/// to produce `z_t`.
#[derive(Debug, Clone, Copy)]
pub struct DiffusionBatch<'a> {
    pub z0: &'a Tensor,
    pub t: &'a [usize],
    pub eps: &'a Tensor,
}

/// Both terms of the hybrid objective, recorded on the same tape.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub simple: Var,
    pub vlb: Var,
}

/// `KL(N(m1, e^lv1) ‖ N(m2, e^lv2))` summed over dimensions.
pub fn diag_gaussian_kl(m1: &[f64], lv1: &[f64], m2: &[f64], lv2: &[f64]) -> f64 {
    m1.iter()
        .zip(lv1)
        .zip(m2.iter().zip(lv2))
        .map(|((a, la), (b, lb))| 0.5 * (lb - la - 1.0 + libm::exp(la - lb) + (a - b) * (a - b) * libm::exp(-lb)))
        .sum()
}

fn check_batch(schedule: &NoiseSchedule, model: &impl NoiseModel, b: &DiffusionBatch<'_>) -> Result<()> {
    if b.z0.shape() != b.eps.shape() {
        return Err(Error::shape("diffusion loss", b.z0.shape(), b.eps.shape()));
    }
    if b.z0.cols() != model.latent_dim() {
        return Err(Error::shape("diffusion loss", b.z0.shape(), &[model.latent_dim()]));
    }
    if b.t.len() != b.z0.rows() {
        return Err(Error::shape("diffusion loss", b.z0.shape(), &[b.t.len()]));
    }
    for &t in b.t {
        schedule.check_t(t)?;
    }
    Ok(())
}

fn as_matrix(t: &Tensor) -> Result<Tensor> {
    t.clone().reshape(&[t.rows(), t.cols()])
}

/// Records `L_simple` and `L_vlb` for one batch.
///
/// `L_simple` is the squared error between `ε` and `ε̂`, summed over latent
/// dimensions and averaged over rows. `L_vlb` is the per-row KL between the
/// true posterior and the model's reverse step (Gaussian NLL of `z_0` on rows
/// with `t = 1`), with the same reduction. The reverse-step mean is built from
/// a gradient-blocked `ε̂`, or from `frozen_mean_eps` when given, so only `v`
/// receives gradient through `L_vlb`.
pub fn hybrid_losses(
    tape: &mut Tape,
    model: &impl NoiseModel,
    schedule: &NoiseSchedule,
    batch: DiffusionBatch<'_>,
    cond: &Conditioning,
    frozen_mean_eps: Option<&Tensor>,
) -> Result<LossTerms> {
    check_batch(schedule, model, &batch)?;
    let rows = batch.z0.rows();
    let d = batch.z0.cols();
    let z_t = schedule.q_sample(batch.z0, batch.t, batch.eps)?;
    let zv = tape.constant(as_matrix(&z_t)?);
    let (eps_hat, v) = model.predict(tape, zv, batch.t, cond)?;

    let target = tape.constant(as_matrix(batch.eps)?);
    let diff = tape.sub(eps_hat, target)?;
    let sq = tape.square(diff);
    let total = tape.sum(sq);
    let simple = tape.scale(total, 1.0 / rows as f64);

    let mean_eps: Vec<f64> = match frozen_mean_eps {
        Some(e) => {
            if e.shape() != batch.eps.shape() {
                return Err(Error::shape("loss_vlb", batch.eps.shape(), e.shape()));
            }
            e.data().to_vec()
        }
        None => tape.value(eps_hat).to_vec(),
    };

    // Per element: 0.5·(logvar_p + A·exp(−logvar_p) + C).
    let mut slope = Vec::with_capacity(rows * d);
    let mut offset = Vec::with_capacity(rows * d);
    let mut a = Vec::with_capacity(rows * d);
    let mut c = Vec::with_capacity(rows * d);
    for i in 0..rows {
        let t = batch.t[i];
        let ab = schedule.alpha_bar(t);
        let log_beta = libm::log(schedule.beta(t));
        let log_tilde = schedule.posterior_log_variance(t);
        let (c0, ct) = schedule.posterior_mean_coefs(t);
        for j in 0..d {
            let k = i * d + j;
            let zt = z_t.data()[k];
            let z0 = batch.z0.data()[k];
            let x0_hat = (zt - libm::sqrt(1.0 - ab) * mean_eps[k]) / libm::sqrt(ab);
            let mu_p = c0 * x0_hat + ct * zt;
            slope.push(log_beta - log_tilde);
            offset.push(log_tilde);
            if t == 1 {
                a.push((z0 - mu_p) * (z0 - mu_p));
                c.push(LOG_2PI);
            } else {
                let mu_q = c0 * z0 + ct * zt;
                a.push(schedule.posterior_variance(t) + (mu_q - mu_p) * (mu_q - mu_p));
                c.push(-log_tilde - 1.0);
            }
        }
    }
    let shape = [rows, d];
    let slope = tape.constant(Tensor::new(&shape, slope)?);
    let offset = tape.constant(Tensor::new(&shape, offset)?);
    let a = tape.constant(Tensor::new(&shape, a)?);
    let c = tape.constant(Tensor::new(&shape, c)?);
    let scaled = tape.mul(v, slope)?;
    let logvar = tape.add(scaled, offset)?;
    let neg = tape.scale(logvar, -1.0);
    let inv_var = tape.exp(neg);
    let quad = tape.mul(a, inv_var)?;
    let inner = tape.add(logvar, quad)?;
    let inner = tape.add(inner, c)?;
    let total = tape.sum(inner);
    let vlb = tape.scale(total, 0.5 / rows as f64);
    Ok(LossTerms { simple, vlb })
}

/// `L_simple` alone.
pub fn loss_simple(
    tape: &mut Tape,
    model: &impl NoiseModel,
    schedule: &NoiseSchedule,
    batch: DiffusionBatch<'_>,
    cond: &Conditioning,
) -> Result<Var> {
    check_batch(schedule, model, &batch)?;
    let z_t = schedule.q_sample(batch.z0, batch.t, batch.eps)?;
    let zv = tape.constant(as_matrix(&z_t)?);
    let (eps_hat, _) = model.predict(tape, zv, batch.t, cond)?;
    let target = tape.constant(as_matrix(batch.eps)?);
    let diff = tape.sub(eps_hat, target)?;
    let sq = tape.square(diff);
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / batch.z0.rows() as f64))
}

/// `L_vlb` alone.
pub fn loss_vlb(
    tape: &mut Tape,
    model: &impl NoiseModel,
    schedule: &NoiseSchedule,
    batch: DiffusionBatch<'_>,
    cond: &Conditioning,
    frozen_mean_eps: Option<&Tensor>,
) -> Result<Var> {
    Ok(hybrid_losses(tape, model, schedule, batch, cond, frozen_mean_eps)?.vlb)
}

/// `L_simple + λ·L_vlb`.
pub fn loss_total(tape: &mut Tape, terms: LossTerms, lambda: f64) -> Result<Var> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::config(alloc::format!("vlb weight must be finite and non-negative, got {lambda}")));
    }
    let weighted = tape.scale(terms.vlb, lambda);
    tape.add(terms.simple, weighted)
}
