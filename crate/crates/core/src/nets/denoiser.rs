use alloc::vec;
use alloc::vec::Vec;

use super::{check_cols, dense_init};
use crate::error::{Error, Result};
use crate::tensor::{seeded_rng, ParamStore};
use crate::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserConfig {
    pub latent_dim: usize,
    pub feature_dim: usize,
    pub cond_dim: usize,
    pub time_dim: usize,
    pub hidden: usize,
    /// Number of diffusion steps `T`; valid timesteps are `1..=T`.
    pub timesteps: usize,
    pub time_period: f64,
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::config("time embedding dimension must be even and positive"));
        }
        if self.latent_dim == 0 || self.feature_dim == 0 || self.cond_dim == 0 || self.hidden == 0 {
            return Err(Error::config("denoiser dimensions must be positive"));
        }
        if self.timesteps == 0 {
            return Err(Error::config("timesteps must be positive"));
        }
        Ok(())
    }
}

/// How the conditioning slot of a batch is filled.
#[derive(Debug, Clone)]
pub enum Conditioning {
    /// One feature row per batch row.
    Features(Var),
    /// Learned null embedding for every row.
    Null,
    /// Feature rows, except rows flagged `true` which take the null embedding.
    Dropout { features: Var, null_rows: Vec<bool> },
}

/// Sinusoidal embedding of timestep `t`: `sin(t·ω_i)` then `cos(t·ω_i)` with
/// `ω_i = period^(-i / (dim/2))`.
pub fn time_embedding(t: usize, dim: usize, period: f64) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let w = libm::pow(period, -(i as f64) / half as f64);
        let a = t as f64 * w;
        out[i] = libm::sin(a);
        out[half + i] = libm::cos(a);
    }
    out
}

/// Conditional noise predictor `ε_θ(z_t, t, f)`.
///
/// Input row: `[z_t | time-embed(t) | cond]` where `cond` is either an affine
/// projection of `f` or the learned null embedding. Output row: `[ε̂ | v]`,
/// `v` interpolating the reverse-process log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    config: DenoiserConfig,
    params: ParamStore,
}

const COND_W: usize = 0;
const COND_B: usize = 1;
const NULL: usize = 2;

impl Denoiser {
    pub fn new(config: DenoiserConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded_rng(seed);
        let mut params = ParamStore::new();
        let (cw, cb) = dense_init(&mut rng, config.feature_dim, config.cond_dim);
        params.push("cond.w", cw)?;
        params.push("cond.b", cb)?;
        params.push("null", rng.normal_sample(&[1, config.cond_dim]))?;
        let input = config.latent_dim + config.time_dim + config.cond_dim;
        let (w1, b1) = dense_init(&mut rng, input, config.hidden);
        let (w2, b2) = dense_init(&mut rng, config.hidden, config.hidden);
        let (w3, b3) = dense_init(&mut rng, config.hidden, 2 * config.latent_dim);
        for (name, t) in [("l1.w", w1), ("l1.b", b1), ("l2.w", w2), ("l2.b", b2), ("out.w", w3), ("out.b", b3)] {
            params.push(name, t)?;
        }
        Ok(Self { config, params })
    }

    pub fn from_parts(config: DenoiserConfig, params: ParamStore) -> Result<Self> {
        let template = Self::new(config, 0)?;
        if !template.params.same_layout(&params) {
            return Err(Error::config("denoiser parameters do not match the configured layout"));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> DenoiserConfig {
        self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Binds the parameters as trainable leaves.
    pub fn bind<'a>(&'a self, tape: &mut Tape) -> BoundDenoiser<'a> {
        BoundDenoiser { net: self, vars: self.params.bind(tape) }
    }

    /// Binds the parameters as constants.
    pub fn bind_frozen<'a>(&'a self, tape: &mut Tape) -> BoundDenoiser<'a> {
        BoundDenoiser { net: self, vars: self.params.bind_frozen(tape) }
    }

    /// Uses already-recorded variables, in parameter order, as the weights.
    pub fn bind_vars<'a>(&'a self, tape: &Tape, vars: Vec<Var>) -> Result<BoundDenoiser<'a>> {
        if vars.len() != self.params.len() {
            return Err(Error::config("denoiser binding needs one variable per parameter"));
        }
        for ((_, p), v) in self.params.iter().zip(&vars) {
            if tape.shape(*v) != p.shape() {
                return Err(Error::shape("bind_vars", p.shape(), tape.shape(*v)));
            }
        }
        Ok(BoundDenoiser { net: self, vars })
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.config.timesteps {
            return Err(Error::Domain { what: "timestep", value: t, min: 1, max: self.config.timesteps });
        }
        Ok(())
    }

    /// Returns `(ε̂, v)` for a batch sharing timestep `t`; `cond = None`
    /// selects the null embedding.
    pub fn denoise(&self, z_t: &Tensor, t: usize, cond: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        check_cols("denoise", z_t, self.config.latent_dim)?;
        let mut tape = Tape::new();
        let bound = self.bind_frozen(&mut tape);
        let z = tape.constant(z_t.clone().reshape(&[z_t.rows(), z_t.cols()])?);
        let c = match cond {
            Some(f) => {
                check_cols("denoise", f, self.config.feature_dim)?;
                if f.rows() != z_t.rows() {
                    return Err(Error::shape("denoise", z_t.shape(), f.shape()));
                }
                Conditioning::Features(tape.constant(f.clone().reshape(&[f.rows(), f.cols()])?))
            }
            None => Conditioning::Null,
        };
        let ts = vec![t; z_t.rows()];
        let (e, v) = bound.predict(&mut tape, z, &ts, &c)?;
        Ok((tape.tensor(e), tape.tensor(v)))
    }
}

/// A noise predictor evaluated on a tape, so losses can differentiate through
/// it (with respect to its parameters, its conditioning, or both).
pub trait NoiseModel {
    fn latent_dim(&self) -> usize;

    /// `(ε̂, v)` for each row of `z_t` at its own timestep `t[row]`.
    fn predict(&self, tape: &mut Tape, z_t: Var, t: &[usize], cond: &Conditioning) -> Result<(Var, Var)>;
}

/// A [`Denoiser`] whose parameters have been recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundDenoiser<'a> {
    net: &'a Denoiser,
    vars: Vec<Var>,
}

impl BoundDenoiser<'_> {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl NoiseModel for BoundDenoiser<'_> {
    fn latent_dim(&self) -> usize {
        self.net.config.latent_dim
    }

    fn predict(&self, tape: &mut Tape, z_t: Var, t: &[usize], cond: &Conditioning) -> Result<(Var, Var)> {
        let cfg = &self.net.config;
        let rows = tape.shape(z_t)[0];
        if t.len() != rows {
            return Err(Error::shape("denoise", tape.shape(z_t), &[t.len()]));
        }
        let mut temb = Vec::with_capacity(rows * cfg.time_dim);
        for &ti in t {
            self.net.check_t(ti)?;
            temb.extend(time_embedding(ti, cfg.time_dim, cfg.time_period));
        }
        let temb = tape.constant(Tensor::matrix(rows, cfg.time_dim, temb)?);
        let v = &self.vars;
        let null_rows = |tape: &mut Tape| tape.gather_rows(v[NULL], &vec![0; rows]);
        let c = match cond {
            Conditioning::Null => null_rows(tape)?,
            Conditioning::Features(f) => {
                if tape.shape(*f)[0] != rows {
                    return Err(Error::shape("denoise", tape.shape(z_t), tape.shape(*f)));
                }
                tape.affine(*f, v[COND_W], v[COND_B])?
            }
            Conditioning::Dropout { features, null_rows } => {
                if tape.shape(*features)[0] != rows || null_rows.len() != rows {
                    return Err(Error::shape("denoise", tape.shape(z_t), tape.shape(*features)));
                }
                let projected = tape.affine(*features, v[COND_W], v[COND_B])?;
                let pool = tape.concat(&[projected, v[NULL]], 0)?;
                let index: Vec<usize> =
                    null_rows.iter().enumerate().map(|(i, &null)| if null { rows } else { i }).collect();
                tape.gather_rows(pool, &index)?
            }
        };
        let input = tape.concat(&[z_t, temb, c], 1)?;
        let h = tape.affine(input, v[3], v[4])?;
        let h = tape.silu(h);
        let h = tape.affine(h, v[5], v[6])?;
        let h = tape.silu(h);
        let out = tape.affine(h, v[7], v[8])?;
        let d = cfg.latent_dim;
        let eps = tape.slice(out, 1, 0, d)?;
        let var = tape.slice(out, 1, d, 2 * d)?;
        Ok((eps, var))
    }
}

/// Plain-value noise prediction used by the samplers.
pub trait EpsPredictor {
    fn latent_dim(&self) -> usize;

    /// `ε̂(z_t, t, cond)` for every row; `cond = None` is the null token.
    fn predict_eps(&self, z_t: &Tensor, t: usize, cond: Option<&Tensor>) -> Result<Tensor>;
}

impl EpsPredictor for Denoiser {
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn predict_eps(&self, z_t: &Tensor, t: usize, cond: Option<&Tensor>) -> Result<Tensor> {
        Ok(self.denoise(z_t, t, cond)?.0)
    }
}
