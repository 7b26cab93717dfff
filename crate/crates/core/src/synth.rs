//! Synthetic labelled datasets with known per-class generators, seen/unseen
//! splits and K-shot episodes.
//!
//! Item of class `y`: `x = φ(M · (a_y + s_y ⊙ ε))`, `ε ~ N(0, I)`, with a
//! shared mixing matrix `M`, per-class anchor `a_y` and scale `s_y`, and an
//! elementwise nonlinearity `φ`.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{seeded_rng, SeededRng};
use crate::{ClassId, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Nonlinearity {
    Identity,
    Tanh,
    /// `x³`
    Cubic,
}

impl Nonlinearity {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Identity => x,
            Nonlinearity::Tanh => libm::tanh(x),
            Nonlinearity::Cubic => x * x * x,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Nonlinearity::Identity => "identity",
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Cubic => "cubic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Nonlinearity::Identity),
            "tanh" => Some(Nonlinearity::Tanh),
            "cubic" => Some(Nonlinearity::Cubic),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mixing {
    Identity,
    /// Entries drawn from N(0, 1/d).
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    /// Anchors are drawn from N(0, anchor_spread²·I).
    pub anchor_spread: f64,
    /// Anchors are `B·u_y` with `u_y` of this dimension and a shared random
    /// `B`, so classes lie on a common subspace; 0 draws full-rank anchors.
    pub anchor_rank: usize,
    /// Per-dimension scales are uniform in `[scale_min, scale_max]`.
    pub scale_min: f64,
    pub scale_max: f64,
    pub nonlinearity: Nonlinearity,
    pub mixing: Mixing,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 12,
            dim: 16,
            samples_per_class: 256,
            anchor_spread: 1.0,
            anchor_rank: 0,
            scale_min: 0.2,
            scale_max: 0.5,
            nonlinearity: Nonlinearity::Tanh,
            mixing: Mixing::Random,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 4 {
            return Err(Error::config("synthetic data needs at least 4 classes"));
        }
        if self.samples_per_class < 8 {
            return Err(Error::config("synthetic data needs at least 8 samples per class"));
        }
        if self.dim == 0 {
            return Err(Error::config("data dimension must be positive"));
        }
        if self.anchor_rank > self.dim {
            return Err(Error::config("anchor rank exceeds the data dimension"));
        }
        if !(self.scale_min >= 0.0 && self.scale_min <= self.scale_max) || !(self.anchor_spread >= 0.0) {
            return Err(Error::config("invalid scale or anchor spread"));
        }
        Ok(())
    }
}

/// Generator parameters of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGenerator {
    pub class: ClassId,
    pub anchor: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Everything needed to draw fresh items of any class.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub mixing: Tensor,
    pub nonlinearity: Nonlinearity,
    pub classes: Vec<ClassGenerator>,
}

impl GroundTruth {
    pub fn generator(&self, class: ClassId) -> Result<&ClassGenerator> {
        self.classes.iter().find(|g| g.class == class).ok_or(Error::MissingClass(class))
    }

    fn mix(&self, u: &[f64]) -> Vec<f64> {
        let d = u.len();
        let m = self.mixing.data();
        (0..d).map(|i| self.nonlinearity.apply((0..d).map(|j| m[i * d + j] * u[j]).sum())).collect()
    }

    /// `n` fresh items of `class`.
    pub fn sample(&self, class: ClassId, n: usize, rng: &mut SeededRng) -> Result<Tensor> {
        let g = self.generator(class)?;
        let d = g.anchor.len();
        let mut data = Vec::with_capacity(n * d);
        for _ in 0..n {
            let u: Vec<f64> = g.anchor.iter().zip(&g.scale).map(|(a, s)| a + s * rng.normal()).collect();
            data.extend(self.mix(&u));
        }
        Tensor::matrix(n, d, data)
    }

    /// `φ(M·a_y)`, the image of the class anchor.
    pub fn anchor_image(&self, class: ClassId) -> Result<Vec<f64>> {
        Ok(self.mix(&self.generator(class)?.anchor))
    }
}

/// Labelled items, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub labels: Vec<ClassId>,
}

impl Dataset {
    pub fn new(x: Tensor, labels: Vec<ClassId>) -> Result<Self> {
        if x.rows() != labels.len() || x.shape().len() != 2 {
            return Err(Error::shape("dataset", x.shape(), &[labels.len()]));
        }
        Ok(Self { x, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Sorted distinct labels.
    pub fn class_ids(&self) -> Vec<ClassId> {
        self.labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn indices_of(&self, class: ClassId) -> Vec<usize> {
        self.labels.iter().enumerate().filter(|(_, &y)| y == class).map(|(i, _)| i).collect()
    }

    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        Ok(Self { x: self.x.select_rows(idx)?, labels: idx.iter().map(|&i| self.labels[i]).collect() })
    }

    /// All items whose label is in `classes`, in original order.
    pub fn restrict(&self, classes: &[ClassId]) -> Result<Self> {
        let keep: BTreeSet<ClassId> = classes.iter().copied().collect();
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep.contains(&self.labels[i])).collect();
        if idx.is_empty() {
            return Err(Error::config("no items for the requested classes"));
        }
        self.subset(&idx)
    }

    pub fn class_rows(&self, class: ClassId) -> Result<Tensor> {
        let idx = self.indices_of(class);
        if idx.is_empty() {
            return Err(Error::MissingClass(class));
        }
        self.x.select_rows(&idx)
    }
}

/// Draws a dataset and keeps its generators for oracle checks.
pub fn generate_dataset(spec: &SyntheticSpec) -> Result<(Dataset, GroundTruth)> {
    spec.validate()?;
    let d = spec.dim;
    let mut rng = seeded_rng(spec.seed);
    let mixing = match spec.mixing {
        Mixing::Identity => {
            let mut m = vec![0.0; d * d];
            (0..d).for_each(|i| m[i * d + i] = 1.0);
            Tensor::matrix(d, d, m)?
        }
        Mixing::Random => {
            let s = 1.0 / libm::sqrt(d as f64);
            rng.normal_sample(&[d, d]).map(|x| x * s)
        }
    };
    let r = spec.anchor_rank;
    let basis = (r > 0).then(|| rng.normal_sample(&[d, r]).map(|x| x / libm::sqrt(r as f64)));
    let mut classes = Vec::with_capacity(spec.classes);
    for c in 0..spec.classes {
        let anchor: Vec<f64> = match &basis {
            None => (0..d).map(|_| spec.anchor_spread * rng.normal()).collect(),
            Some(b) => {
                let u: Vec<f64> = (0..r).map(|_| spec.anchor_spread * rng.normal()).collect();
                (0..d).map(|i| (0..r).map(|j| b.row(i)[j] * u[j]).sum()).collect()
            }
        };
        let scale: Vec<f64> =
            (0..d).map(|_| spec.scale_min + (spec.scale_max - spec.scale_min) * rng.uniform()).collect();
        classes.push(ClassGenerator { class: c as ClassId, anchor, scale });
    }
    for i in 0..classes.len() {
        for j in i + 1..classes.len() {
            if classes[i].anchor == classes[j].anchor {
                return Err(Error::config(format!("classes {i} and {j} share an anchor")));
            }
        }
    }
    let truth = GroundTruth { mixing, nonlinearity: spec.nonlinearity, classes };
    let mut data = Vec::with_capacity(spec.classes * spec.samples_per_class * d);
    let mut labels = Vec::with_capacity(spec.classes * spec.samples_per_class);
    for g in &truth.classes {
        let xs = truth.sample(g.class, spec.samples_per_class, &mut rng)?;
        data.extend_from_slice(xs.data());
        labels.extend(core::iter::repeat_n(g.class, spec.samples_per_class));
    }
    let x = Tensor::matrix(labels.len(), d, data)?;
    Ok((Dataset::new(x, labels)?, truth))
}

/// Disjoint seen / unseen class partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub seen: Vec<ClassId>,
    pub unseen: Vec<ClassId>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitRule {
    /// `seen : unseen` class-count ratio; classes assigned by a seeded shuffle.
    Ratio {
        seen: usize,
        unseen: usize,
    },
    Explicit {
        seen: Vec<ClassId>,
        unseen: Vec<ClassId>,
    },
}

impl Default for SplitRule {
    fn default() -> Self {
        SplitRule::Ratio { seen: 5, unseen: 1 }
    }
}

impl SplitSpec {
    pub fn validate(&self, all: &[ClassId]) -> Result<()> {
        let seen: BTreeSet<_> = self.seen.iter().collect();
        let unseen: BTreeSet<_> = self.unseen.iter().collect();
        if seen.len() < 2 || unseen.is_empty() {
            return Err(Error::config("split needs at least 2 seen and 1 unseen class"));
        }
        if seen.len() != self.seen.len() || unseen.len() != self.unseen.len() {
            return Err(Error::config("split lists contain duplicates"));
        }
        if seen.intersection(&unseen).next().is_some() {
            return Err(Error::config("a class is both seen and unseen"));
        }
        let union: BTreeSet<_> = seen.union(&unseen).copied().collect();
        let all: BTreeSet<_> = all.iter().collect();
        if union != all {
            return Err(Error::config("split does not cover exactly the dataset classes"));
        }
        Ok(())
    }
}

pub fn split(classes: &[ClassId], rule: &SplitRule, seed: u64) -> Result<SplitSpec> {
    let spec = match rule {
        SplitRule::Explicit { seen, unseen } => SplitSpec { seen: seen.clone(), unseen: unseen.clone() },
        SplitRule::Ratio { seen, unseen } => {
            if seen + unseen == 0 {
                return Err(Error::config("split ratio is empty"));
            }
            let c = classes.len();
            let n_unseen = libm::round((c * unseen) as f64 / (seen + unseen) as f64) as usize;
            if n_unseen == 0 || n_unseen + 2 > c {
                return Err(Error::config(format!("ratio {seen}:{unseen} over {c} classes leaves a side empty")));
            }
            let mut order = classes.to_vec();
            seeded_rng(seed).shuffle(&mut order);
            let mut unseen: Vec<ClassId> = order[..n_unseen].to_vec();
            let mut seen: Vec<ClassId> = order[n_unseen..].to_vec();
            unseen.sort_unstable();
            seen.sort_unstable();
            SplitSpec { seen, unseen }
        }
    };
    spec.validate(classes)?;
    Ok(spec)
}

/// One K-shot task: indices into the dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Episode {
    pub class: ClassId,
    pub support: Vec<usize>,
    pub query: Vec<usize>,
    pub seed: u64,
}

pub fn sample_episode(data: &Dataset, split: &SplitSpec, class: ClassId, shots: usize, seed: u64) -> Result<Episode> {
    if !split.unseen.contains(&class) {
        return Err(Error::config(format!("class {class} is not an unseen class")));
    }
    let mut idx = data.indices_of(class);
    if idx.is_empty() {
        return Err(Error::MissingClass(class));
    }
    if shots == 0 || shots >= idx.len() {
        return Err(Error::config(format!("K = {shots} must lie in 1..{}", idx.len())));
    }
    seeded_rng(seed).shuffle(&mut idx);
    let query = idx.split_off(shots);
    Ok(Episode { class, support: idx, query, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_scale_identity_items_equal_anchor() {
        let spec = SyntheticSpec {
            classes: 4,
            samples_per_class: 8,
            scale_min: 0.0,
            scale_max: 0.0,
            nonlinearity: Nonlinearity::Identity,
            mixing: Mixing::Identity,
            ..SyntheticSpec::default()
        };
        let (data, truth) = generate_dataset(&spec).unwrap();
        for (row, y) in data.x.row_iter().zip(&data.labels) {
            assert_eq!(row, truth.generator(*y).unwrap().anchor.as_slice());
        }
    }

    #[test]
    fn class_mean_matches_anchor_image() {
        let spec = SyntheticSpec {
            classes: 4,
            samples_per_class: 10_000,
            nonlinearity: Nonlinearity::Identity,
            ..SyntheticSpec::default()
        };
        let (data, truth) = generate_dataset(&spec).unwrap();
        for c in 0..4 {
            let rows = data.class_rows(c).unwrap();
            let target = truth.anchor_image(c).unwrap();
            // Per-coordinate std of M·(s ⊙ ε) is at most scale_max · max row norm of M.
            let m = truth.mixing.data();
            let max_row = (0..spec.dim)
                .map(|i| (0..spec.dim).map(|j| m[i * spec.dim + j].powi(2)).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            let tol = 5.0 * spec.scale_max * max_row / (10_000f64).sqrt();
            for j in 0..spec.dim {
                let mean = rows.row_iter().map(|r| r[j]).sum::<f64>() / 10_000.0;
                assert!((mean - target[j]).abs() < tol, "class {c} dim {j}: {mean} vs {}", target[j]);
            }
        }
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let spec = SyntheticSpec::default();
        assert_eq!(generate_dataset(&spec).unwrap(), generate_dataset(&spec).unwrap());
    }

    #[test]
    fn rejects_small_specs() {
        let bad = SyntheticSpec { classes: 3, ..SyntheticSpec::default() };
        assert!(generate_dataset(&bad).is_err());
        let bad = SyntheticSpec { samples_per_class: 7, ..SyntheticSpec::default() };
        assert!(generate_dataset(&bad).is_err());
    }

    #[test]
    fn default_ratio_gives_ten_and_two() {
        let classes: Vec<ClassId> = (0..12).collect();
        let s = split(&classes, &SplitRule::default(), 3).unwrap();
        assert_eq!((s.seen.len(), s.unseen.len()), (10, 2));
        assert!(s.seen.iter().all(|c| !s.unseen.contains(c)));
        assert_eq!(s, split(&classes, &SplitRule::default(), 3).unwrap());
    }

    #[test]
    fn explicit_split_is_verbatim() {
        let classes: Vec<ClassId> = (0..5).collect();
        let rule = SplitRule::Explicit { seen: vec![4, 0, 2], unseen: vec![1, 3] };
        let s = split(&classes, &rule, 0).unwrap();
        assert_eq!(s.seen, vec![4, 0, 2]);
        assert_eq!(s.unseen, vec![1, 3]);
        let overlap = SplitRule::Explicit { seen: vec![0, 1, 2], unseen: vec![2, 3, 4] };
        assert!(split(&classes, &overlap, 0).is_err());
    }

    #[test]
    fn ratio_that_empties_a_side_fails() {
        let classes: Vec<ClassId> = (0..4).collect();
        assert!(split(&classes, &SplitRule::Ratio { seen: 10, unseen: 1 }, 0).is_err());
    }

    #[test]
    fn episode_partitions_class() {
        let (data, _) = generate_dataset(&SyntheticSpec::default()).unwrap();
        let classes = data.class_ids();
        let s = split(&classes, &SplitRule::default(), 1).unwrap();
        let c = s.unseen[0];
        for k in [1, 3] {
            let ep = sample_episode(&data, &s, c, k, 9).unwrap();
            assert_eq!(ep.support.len(), k);
            assert_eq!(ep.support.len() + ep.query.len(), 256);
            assert!(ep.support.iter().all(|i| !ep.query.contains(i)));
            assert!(ep.support.iter().chain(&ep.query).all(|&i| data.labels[i] == c));
            assert_eq!(ep, sample_episode(&data, &s, c, k, 9).unwrap());
        }
        assert!(sample_episode(&data, &s, c, 256, 9).is_err());
        assert!(sample_episode(&data, &s, s.seen[0], 3, 9).is_err());
    }

    #[test]
    fn low_rank_anchors_share_a_subspace() {
        let spec = SyntheticSpec { classes: 6, dim: 5, anchor_rank: 2, ..SyntheticSpec::default() };
        let (_, truth) = generate_dataset(&spec).unwrap();
        // Any three anchors in a 2-D subspace are linearly dependent: the
        // Gram matrix of three of them is singular.
        let a: Vec<&Vec<f64>> = truth.classes.iter().take(3).map(|g| &g.anchor).collect();
        let dot = |x: &Vec<f64>, y: &Vec<f64>| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
        let g: Vec<Vec<f64>> = (0..3).map(|i| (0..3).map(|j| dot(a[i], a[j])).collect()).collect();
        let det = g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1]) - g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0])
            + g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0]);
        let scale = g[0][0] * g[1][1] * g[2][2];
        assert!(det.abs() < 1e-9 * scale, "det {det}");
        assert!(SyntheticSpec { anchor_rank: 6, dim: 5, ..SyntheticSpec::default() }.validate().is_err());
    }
}
