use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nets::FeatureExtractor;
use crate::synth::{sample_episode, Dataset, SplitSpec};
use crate::tensor::{seeded_rng, AdamState, ParamStore};
use crate::{ClassId, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FewShotConfig {
    /// Classes per episode; `None` uses `min(10, |unseen|)`.
    pub ways: Option<usize>,
    pub shots: usize,
    /// Generated items per class added to the head's training set.
    pub fakes: usize,
    pub episodes: usize,
    pub head_steps: usize,
    pub head_lr: f64,
    pub seed: u64,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self { ways: None, shots: 1, fakes: 64, episodes: 10, head_steps: 300, head_lr: 0.05, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewShotResult {
    pub ways: usize,
    pub shots: usize,
    /// Mean query accuracy of heads trained on supports plus generated items.
    pub augmented: f64,
    /// Mean query accuracy of heads trained on supports only.
    pub baseline: f64,
    /// `(augmented, baseline)` per episode.
    pub episodes: Vec<(f64, f64)>,
}

/// Softmax-regression head on frozen features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    params: ParamStore,
}

impl LinearHead {
    /// Full-batch Adam on cross-entropy; `labels` index `0..classes`.
    pub fn fit(features: &Tensor, labels: &[usize], classes: usize, steps: usize, lr: f64) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape("LinearHead::fit", features.shape(), &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Domain { what: "head label", value: bad, min: 0, max: classes - 1 });
        }
        let d = features.cols();
        let mut params = ParamStore::new();
        params.push("w", Tensor::zeros(&[d, classes]))?;
        params.push("b", Tensor::zeros(&[classes]))?;
        let mut one_hot = vec![0.0; labels.len() * classes];
        for (i, &l) in labels.iter().enumerate() {
            one_hot[i * classes + l] = 1.0;
        }
        let targets = Tensor::matrix(labels.len(), classes, one_hot)?;
        let x = features.clone().reshape(&[features.rows(), d])?;
        let mut adam = AdamState::new(&params, lr);
        for _ in 0..steps {
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape);
            let xv = tape.constant(x.clone());
            let logits = tape.affine(xv, vars[0], vars[1])?;
            let logp = tape.log_softmax(logits)?;
            let tv = tape.constant(targets.clone());
            let picked = tape.mul(logp, tv)?;
            let s = tape.sum(picked);
            let loss = tape.scale(s, -1.0 / labels.len() as f64);
            tape.backward(loss)?;
            params.zero_grad();
            params.collect_grads(&tape, &vars)?;
            adam.step(&mut params)?;
        }
        Ok(Self { params })
    }

    pub fn predict(&self, features: &Tensor) -> Result<Vec<usize>> {
        let mut tape = Tape::new();
        let vars = self.params.bind_frozen(&mut tape);
        let xv = tape.constant(features.clone().reshape(&[features.rows(), features.cols()])?);
        let logits = tape.affine(xv, vars[0], vars[1])?;
        let t = tape.tensor(logits);
        Ok(t.row_iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }

    pub fn accuracy(&self, features: &Tensor, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(features)?;
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}

fn stack(parts: &[Tensor]) -> Result<Tensor> {
    let cols = parts[0].cols();
    let mut data = Vec::new();
    let mut rows = 0;
    for p in parts {
        if p.cols() != cols {
            return Err(Error::shape("stack", parts[0].shape(), p.shape()));
        }
        data.extend_from_slice(p.data());
        rows += p.rows();
    }
    Tensor::matrix(rows, cols, data)
}

/// N-way K-shot evaluation of generated data as training augmentation.
///
/// `generate(class, support_x, count, seed)` returns `count` data-space
/// items for an unseen class given its support items. Per episode, a head is
/// trained on extractor features of the supports plus the generated items,
/// another on the supports alone, and both are scored on the remaining real
/// items of the episode's classes.
pub fn few_shot_classification<G>(
    data: &Dataset,
    split: &SplitSpec,
    extractor: &FeatureExtractor,
    cfg: &FewShotConfig,
    mut generate: G,
) -> Result<FewShotResult>
where
    G: FnMut(ClassId, &Tensor, usize, u64) -> Result<Tensor>,
{
    let ways = cfg.ways.unwrap_or(split.unseen.len().min(10));
    if ways < 2 || ways > split.unseen.len() {
        return Err(Error::config(alloc::format!("ways must lie in 2..={}, got {ways}", split.unseen.len())));
    }
    if cfg.episodes == 0 {
        return Err(Error::config("few-shot evaluation needs at least one episode"));
    }
    let mut episodes = Vec::with_capacity(cfg.episodes);
    for e in 0..cfg.episodes {
        let seed = cfg.seed.wrapping_add(e as u64);
        let mut classes = split.unseen.clone();
        seeded_rng(seed).shuffle(&mut classes);
        classes.truncate(ways);
        let (mut real, mut real_y, mut fake, mut fake_y, mut query, mut query_y) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (label, &class) in classes.iter().enumerate() {
            let ep = sample_episode(data, split, class, cfg.shots, seed.wrapping_mul(31).wrapping_add(class as u64))?;
            let support_x = data.x.select_rows(&ep.support)?;
            real.push(extractor.extract(&support_x)?);
            real_y.extend(vec![label; ep.support.len()]);
            query.push(extractor.extract(&data.x.select_rows(&ep.query)?)?);
            query_y.extend(vec![label; ep.query.len()]);
            if cfg.fakes > 0 {
                let g = generate(class, &support_x, cfg.fakes, ep.seed)?;
                if g.rows() != cfg.fakes {
                    return Err(Error::shape("few_shot_classification", g.shape(), &[cfg.fakes]));
                }
                fake.push(extractor.extract(&g)?);
                fake_y.extend(vec![label; cfg.fakes]);
            }
        }
        let real_f = stack(&real)?;
        let query_f = stack(&query)?;
        let baseline =
            LinearHead::fit(&real_f, &real_y, ways, cfg.head_steps, cfg.head_lr)?.accuracy(&query_f, &query_y)?;
        let augmented = if fake.is_empty() {
            baseline
        } else {
            let mut parts = real.clone();
            parts.extend(fake);
            let mut labels = real_y.clone();
            labels.extend(fake_y);
            LinearHead::fit(&stack(&parts)?, &labels, ways, cfg.head_steps, cfg.head_lr)?
                .accuracy(&query_f, &query_y)?
        };
        episodes.push((augmented, baseline));
    }
    let n = episodes.len() as f64;
    Ok(FewShotResult {
        ways,
        shots: cfg.shots,
        augmented: episodes.iter().map(|e| e.0).sum::<f64>() / n,
        baseline: episodes.iter().map(|e| e.1).sum::<f64>() / n,
        episodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_separates_clusters() {
        let mut rng = seeded_rng(2);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let l = i % 3;
            let c = [(l as f64) * 3.0, -(l as f64) * 2.0];
            rows.push([c[0] + 0.3 * rng.normal(), c[1] + 0.3 * rng.normal()]);
            labels.push(l);
        }
        let x = Tensor::from_rows(&rows).unwrap();
        let head = LinearHead::fit(&x, &labels, 3, 300, 0.05).unwrap();
        assert!(head.accuracy(&x, &labels).unwrap() > 0.95);
        assert!(LinearHead::fit(&x, &vec![5; 60], 3, 1, 0.1).is_err());
    }
}
