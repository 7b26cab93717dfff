use super::{check_cols, dense_init, minibatches, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::tensor::{seeded_rng, AdamState, ParamStore};
use crate::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AutoencoderMode {
    /// `E` and `D` are exact identities; latent and data space coincide.
    Identity,
    /// Affine encoder and decoder trained on reconstruction error.
    Linear,
}

/// Latent autoencoder `(E, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    mode: AutoencoderMode,
    input_dim: usize,
    latent_dim: usize,
    params: ParamStore,
}

impl Autoencoder {
    pub fn identity(dim: usize) -> Self {
        Self { mode: AutoencoderMode::Identity, input_dim: dim, latent_dim: dim, params: ParamStore::new() }
    }

    pub fn linear(input_dim: usize, latent_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let mut params = ParamStore::new();
        let (we, be) = dense_init(&mut rng, input_dim, latent_dim);
        let (wd, bd) = dense_init(&mut rng, latent_dim, input_dim);
        params.push("enc.w", we)?;
        params.push("enc.b", be)?;
        params.push("dec.w", wd)?;
        params.push("dec.b", bd)?;
        Ok(Self { mode: AutoencoderMode::Linear, input_dim, latent_dim, params })
    }

    pub fn from_parts(mode: AutoencoderMode, input_dim: usize, latent_dim: usize, params: ParamStore) -> Result<Self> {
        let template = match mode {
            AutoencoderMode::Identity => {
                if input_dim != latent_dim {
                    return Err(Error::config("identity autoencoder requires latent_dim == input_dim"));
                }
                Self::identity(input_dim)
            }
            AutoencoderMode::Linear => Self::linear(input_dim, latent_dim, 0)?,
        };
        if !template.params.same_layout(&params) {
            return Err(Error::config("autoencoder parameters do not match the configured layout"));
        }
        Ok(Self { params, ..template })
    }

    pub fn mode(&self) -> AutoencoderMode {
        self.mode
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        check_cols("encode", x, self.input_dim)?;
        match self.mode {
            AutoencoderMode::Identity => Ok(x.clone().reshape(&[x.rows(), x.cols()])?),
            AutoencoderMode::Linear => self.apply(x, 0),
        }
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        check_cols("decode", z, self.latent_dim)?;
        match self.mode {
            AutoencoderMode::Identity => Ok(z.clone().reshape(&[z.rows(), z.cols()])?),
            AutoencoderMode::Linear => self.apply(z, 2),
        }
    }

    fn apply(&self, x: &Tensor, first: usize) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone().reshape(&[x.rows(), x.cols()])?);
        let y = tape.affine(xv, vars[first], vars[first + 1])?;
        Ok(tape.tensor(y))
    }

    fn reconstruction(&self, tape: &mut Tape, vars: &[Var], x: &Tensor) -> Result<Var> {
        let xv = tape.constant(x.clone());
        let z = tape.affine(xv, vars[0], vars[1])?;
        let xh = tape.affine(z, vars[2], vars[3])?;
        let d = tape.sub(xh, xv)?;
        let sq = tape.square(d);
        Ok(tape.mean(sq))
    }

    /// Mean squared reconstruction error per element.
    pub fn reconstruction_mse(&self, x: &Tensor) -> Result<f64> {
        let xh = self.decode(&self.encode(x)?)?;
        let n = x.numel() as f64;
        Ok(xh.data().iter().zip(x.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
    }
}

/// Fits a linear autoencoder by minimizing reconstruction MSE.
pub fn train_autoencoder(ae: &mut Autoencoder, x: &Tensor, train: &TrainConfig) -> Result<TrainReport> {
    if ae.mode == AutoencoderMode::Identity {
        return Err(Error::Mode("identity"));
    }
    train.validate()?;
    check_cols("train_autoencoder", x, ae.input_dim)?;
    let mut adam = AdamState::new(&ae.params, train.lr.target);
    let mut rng = seeded_rng(train.seed);
    let mut report = TrainReport::default();
    let mut step = 0;
    for _ in 0..train.epochs {
        for batch in minibatches(&mut rng, x.rows(), train.batch_size) {
            let xb = x.select_rows(&batch)?;
            let mut tape = Tape::new();
            let vars = ae.params.bind(&mut tape);
            let loss = ae.reconstruction(&mut tape, &vars, &xb)?;
            tape.backward(loss)?;
            ae.params.zero_grad();
            ae.params.collect_grads(&tape, &vars)?;
            adam.lr = train.lr.lr(step);
            adam.step(&mut ae.params)?;
            report.losses.push(tape.scalar(loss)?);
            step += 1;
        }
    }
    Ok(report)
}
