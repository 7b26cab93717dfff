use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::{check_cols, dense_init, minibatches, TrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::tensor::{seeded_rng, AdamState, ParamStore};
use crate::{ClassId, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtractorConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub feature_dim: usize,
}

/// Three-layer MLP classifier. The activation feeding the logits layer is
/// the conditioning feature `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    config: ExtractorConfig,
    classes: Vec<ClassId>,
    params: ParamStore,
}

impl FeatureExtractor {
    /// Random hidden layers and an all-zero logits layer, so the untrained
    /// classifier predicts the uniform distribution.
    pub fn new(config: ExtractorConfig, classes: Vec<ClassId>, seed: u64) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::config("feature extractor needs at least two classes"));
        }
        let mut rng = seeded_rng(seed);
        let mut params = ParamStore::new();
        let (w1, b1) = dense_init(&mut rng, config.input_dim, config.hidden);
        let (w2, b2) = dense_init(&mut rng, config.hidden, config.feature_dim);
        params.push("l1.w", w1)?;
        params.push("l1.b", b1)?;
        params.push("l2.w", w2)?;
        params.push("l2.b", b2)?;
        params.push("head.w", Tensor::zeros(&[config.feature_dim, classes.len()]))?;
        params.push("head.b", Tensor::zeros(&[classes.len()]))?;
        Ok(Self { config, classes, params })
    }

    pub fn from_parts(config: ExtractorConfig, classes: Vec<ClassId>, params: ParamStore) -> Result<Self> {
        let template = Self::new(config, classes.clone(), 0)?;
        if !template.params.same_layout(&params) {
            return Err(Error::config("extractor parameters do not match the configured layout"));
        }
        Ok(Self { config, classes, params })
    }

    pub fn config(&self) -> ExtractorConfig {
        self.config
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    /// Returns `(features, logits)` for a batch of inputs.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<(Var, Var)> {
        let h = tape.affine(x, vars[0], vars[1])?;
        let h = tape.silu(h);
        let a = tape.affine(h, vars[2], vars[3])?;
        let a = tape.silu(a);
        let logits = tape.affine(a, vars[4], vars[5])?;
        Ok((a, logits))
    }

    /// Penultimate features for each row of `x`.
    pub fn extract(&self, x: &Tensor) -> Result<Tensor> {
        check_cols("extract_feature", x, self.config.input_dim)?;
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone().reshape(&[x.rows(), x.cols()])?);
        let (f, _) = self.forward(&mut tape, &vars, xv)?;
        Ok(tape.tensor(f))
    }

    pub fn extract_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.extract(&Tensor::row_vector(x)?)?.into_data())
    }

    /// Class logits for each row of `x`.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        check_cols("logits", x, self.config.input_dim)?;
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let xv = tape.constant(x.clone());
        let (_, l) = self.forward(&mut tape, &vars, xv)?;
        Ok(tape.tensor(l))
    }

    /// Mean cross-entropy of `labels` under the classifier.
    pub fn cross_entropy(&self, x: &Tensor, labels: &[ClassId]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let targets = self.one_hot(labels)?;
        let loss = self.ce_loss(&mut tape, &vars, x, targets)?;
        tape.scalar(loss)
    }

    /// Fraction of rows whose arg-max logit is the true class.
    pub fn accuracy(&self, x: &Tensor, labels: &[ClassId]) -> Result<f64> {
        let logits = self.logits(x)?;
        let mut hits = 0usize;
        for (row, y) in logits.row_iter().zip(labels) {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0;
            hits += (self.classes[best] == *y) as usize;
        }
        Ok(hits as f64 / labels.len().max(1) as f64)
    }

    fn one_hot(&self, labels: &[ClassId]) -> Result<Tensor> {
        let index: BTreeMap<ClassId, usize> = self.classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let k = self.classes.len();
        let mut data = alloc::vec![0.0; labels.len() * k];
        for (r, y) in labels.iter().enumerate() {
            let j = *index.get(y).ok_or(Error::MissingClass(*y))?;
            data[r * k + j] = 1.0;
        }
        Tensor::matrix(labels.len(), k, data)
    }

    fn ce_loss(&self, tape: &mut Tape, vars: &[Var], x: &Tensor, targets: Tensor) -> Result<Var> {
        let n = x.rows() as f64;
        let xv = tape.constant(x.clone());
        let (_, logits) = self.forward(tape, vars, xv)?;
        let logp = tape.log_softmax(logits)?;
        let tv = tape.constant(targets);
        let picked = tape.mul(logp, tv)?;
        let s = tape.sum(picked);
        Ok(tape.scale(s, -1.0 / n))
    }
}

/// Trains the classifier with cross-entropy on seen-class data.
pub fn train_extractor(
    x: &Tensor,
    labels: &[ClassId],
    config: ExtractorConfig,
    train: &TrainConfig,
) -> Result<(FeatureExtractor, TrainReport)> {
    train.validate()?;
    check_cols("train_extractor", x, config.input_dim)?;
    if x.rows() != labels.len() {
        return Err(Error::shape("train_extractor", x.shape(), &[labels.len()]));
    }
    let mut classes: Vec<ClassId> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut net = FeatureExtractor::new(config, classes, train.seed)?;
    let mut adam = AdamState::new(&net.params, train.lr.target);
    let mut rng = seeded_rng(train.seed ^ 0x5eed_e8a7);
    let mut report = TrainReport::default();
    let mut step = 0;
    for _ in 0..train.epochs {
        for batch in minibatches(&mut rng, x.rows(), train.batch_size) {
            let xb = x.select_rows(&batch)?;
            let yb: Vec<ClassId> = batch.iter().map(|&i| labels[i]).collect();
            let targets = net.one_hot(&yb)?;
            let mut tape = Tape::new();
            let vars = net.params.bind(&mut tape);
            let loss = net.ce_loss(&mut tape, &vars, &xb, targets)?;
            tape.backward(loss)?;
            net.params.zero_grad();
            net.params.collect_grads(&tape, &vars)?;
            adam.lr = train.lr.lr(step);
            adam.step(&mut net.params)?;
            report.losses.push(tape.scalar(loss)?);
            step += 1;
        }
    }
    Ok((net, report))
}
