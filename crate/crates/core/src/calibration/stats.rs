use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::SeededRng;
use crate::{ClassId, Tape, Tensor, Var};

/// Smallest variance admitted before taking logs.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Diagonal Gaussian fitted to one class's features.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub class: ClassId,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

/// Handling of seen classes with a single feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SingletonPolicy {
    #[default]
    Reject,
    /// Substitute the mean variance of the classes that have `n ≥ 2`.
    BankMeanVariance,
}

/// Statistics of every seen class, keyed by class id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeenBank {
    stats: BTreeMap<ClassId, ClassStats>,
}

impl SeenBank {
    pub fn from_stats(stats: impl IntoIterator<Item = ClassStats>) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut dim = None;
        for s in stats {
            if s.mean.len() != s.var.len() || *dim.get_or_insert(s.mean.len()) != s.mean.len() {
                return Err(Error::shape("seen bank", &[s.mean.len()], &[s.var.len()]));
            }
            if s.var.iter().any(|v| !(*v >= 0.0 && v.is_finite())) || s.mean.iter().any(|m| !m.is_finite()) {
                return Err(Error::config(alloc::format!("class {} has invalid statistics", s.class)));
            }
            if map.insert(s.class, s).is_some() {
                return Err(Error::config("duplicate class in seen bank"));
            }
        }
        Ok(Self { stats: map })
    }

    pub fn get(&self, class: ClassId) -> Result<&ClassStats> {
        self.stats.get(&class).ok_or(Error::MissingClass(class))
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    pub fn classes(&self) -> Vec<ClassId> {
        self.stats.keys().copied().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ClassStats> {
        self.stats.values()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.stats.values().next().map(|s| s.mean.len())
    }
}

/// Per-class mean and unbiased per-dimension variance.
pub fn compute_seen_stats(groups: &[(ClassId, Tensor)], policy: SingletonPolicy) -> Result<SeenBank> {
    let mut stats = Vec::with_capacity(groups.len());
    let mut singletons = Vec::new();
    for (class, x) in groups {
        let n = x.rows();
        let d = x.cols();
        let mut mean = alloc::vec![0.0; d];
        for row in x.row_iter() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        if n < 2 {
            match policy {
                SingletonPolicy::Reject => return Err(Error::InsufficientSamples { needed: 2, got: n }),
                SingletonPolicy::BankMeanVariance => {
                    singletons.push(stats.len());
                    stats.push(ClassStats { class: *class, mean, var: alloc::vec![0.0; d], count: n });
                    continue;
                }
            }
        }
        let mut var = alloc::vec![0.0; d];
        for row in x.row_iter() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= (n - 1) as f64);
        stats.push(ClassStats { class: *class, mean, var, count: n });
    }
    if !singletons.is_empty() {
        let full: Vec<&ClassStats> = stats.iter().filter(|s| s.count >= 2).collect();
        if full.is_empty() {
            return Err(Error::InsufficientSamples { needed: 2, got: 1 });
        }
        let d = full[0].var.len();
        let mut fill = alloc::vec![0.0; d];
        for s in &full {
            for (f, v) in fill.iter_mut().zip(&s.var) {
                *f += v / full.len() as f64;
            }
        }
        for i in singletons {
            stats[i].var = fill.clone();
        }
    }
    SeenBank::from_stats(stats)
}

/// Mean of the support features.
pub fn support_mean<R: AsRef<[f64]>>(supports: &[R]) -> Result<Vec<f64>> {
    let first = supports.first().ok_or(Error::EmptySupport)?.as_ref();
    let mut mean = alloc::vec![0.0; first.len()];
    for s in supports {
        let s = s.as_ref();
        if s.len() != mean.len() {
            return Err(Error::shape("support_mean", &[mean.len()], &[s.len()]));
        }
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= supports.len() as f64);
    Ok(mean)
}

/// The `count` seen classes whose means are closest to `query`, ordered by
/// distance then class id.
pub fn nearest_seen_classes(bank: &SeenBank, query: &[f64], count: usize) -> Result<Vec<ClassId>> {
    if bank.is_empty() {
        return Err(Error::EmptyBank);
    }
    if count == 0 || count > bank.len() {
        return Err(Error::config(alloc::format!("neighbor count must lie in 1..={}, got {count}", bank.len())));
    }
    let mut ranked = Vec::with_capacity(bank.len());
    for s in bank.iter() {
        if s.mean.len() != query.len() {
            return Err(Error::shape("nearest_seen_classes", &[s.mean.len()], &[query.len()]));
        }
        let d2: f64 = s.mean.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
        ranked.push((d2, s.class));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(ranked.into_iter().take(count).map(|(_, c)| c).collect())
}

/// Elementwise mean of the neighbors' variances.
pub fn calibrate_variance(bank: &SeenBank, neighbors: &[ClassId]) -> Result<Vec<f64>> {
    let first = bank.get(*neighbors.first().ok_or(Error::config("neighbor set is empty"))?)?;
    let mut var = alloc::vec![0.0; first.var.len()];
    for &c in neighbors {
        for (a, v) in var.iter_mut().zip(&bank.get(c)?.var) {
            *a += v;
        }
    }
    var.iter_mut().for_each(|v| *v /= neighbors.len() as f64);
    Ok(var)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Provenance {
    #[default]
    Calibrated,
    Inverted,
}

/// Where neighbor classes are looked up from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeighborMode {
    /// Neighbors of the support mean.
    #[default]
    ClassMean,
    /// Neighbors of each support feature separately; the variance averages
    /// the per-support calibrated variances.
    PerSupport,
}

/// Diagonal Gaussian for an unseen class, parameterized by `log σ²`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnseenDistribution {
    pub class: ClassId,
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
    pub provenance: Provenance,
    pub neighbors: Vec<ClassId>,
}

impl UnseenDistribution {
    pub fn new(class: ClassId, mean: Vec<f64>, var: &[f64], neighbors: Vec<ClassId>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(Error::shape("unseen distribution", &[mean.len()], &[var.len()]));
        }
        if neighbors.is_empty() {
            return Err(Error::config("neighbor set is empty"));
        }
        let log_var = var.iter().map(|v| libm::log(v.max(VARIANCE_FLOOR))).collect();
        Ok(Self { class, mean, log_var, provenance: Provenance::Calibrated, neighbors })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self) -> Vec<f64> {
        self.log_var.iter().map(|l| libm::exp(*l)).collect()
    }

    pub fn is_valid(&self) -> bool {
        !self.neighbors.is_empty()
            && self.mean.iter().all(|m| m.is_finite())
            && self.log_var.iter().all(|l| {
                let v = libm::exp(*l);
                v.is_finite() && v > 0.0
            })
    }
}

/// Support mean plus neighbor-averaged variance.
pub fn calibrate<R: AsRef<[f64]>>(
    bank: &SeenBank,
    class: ClassId,
    supports: &[R],
    count: usize,
    mode: NeighborMode,
) -> Result<UnseenDistribution> {
    let mean = support_mean(supports)?;
    match mode {
        NeighborMode::ClassMean => {
            let neighbors = nearest_seen_classes(bank, &mean, count)?;
            let var = calibrate_variance(bank, &neighbors)?;
            UnseenDistribution::new(class, mean, &var, neighbors)
        }
        NeighborMode::PerSupport => {
            let mut var = alloc::vec![0.0; mean.len()];
            let mut all = Vec::new();
            for s in supports {
                let n = nearest_seen_classes(bank, s.as_ref(), count)?;
                for (a, v) in var.iter_mut().zip(calibrate_variance(bank, &n)?) {
                    *a += v / supports.len() as f64;
                }
                all.extend(n);
            }
            all.sort_unstable();
            all.dedup();
            UnseenDistribution::new(class, mean, &var, all)
        }
    }
}

/// One draw `μ + σ ⊙ ε`.
pub fn sample_conditional(dist: &UnseenDistribution, rng: &mut SeededRng) -> Vec<f64> {
    dist.mean.iter().zip(&dist.log_var).map(|(m, l)| m + libm::exp(0.5 * l) * rng.normal()).collect()
}

/// `μ + exp(½·log σ²) ⊙ ε` on a tape, differentiable in `mean` and `log_var`.
pub fn reparameterize(tape: &mut Tape, mean: Var, log_var: Var, eps: Var) -> Result<Var> {
    let half = tape.scale(log_var, 0.5);
    let std = tape.exp(half);
    let noise = tape.mul(std, eps)?;
    tape.add(mean, noise)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::seeded_rng;

    fn bank(entries: &[(ClassId, &[f64], &[f64])]) -> SeenBank {
        SeenBank::from_stats(entries.iter().map(|(c, m, v)| ClassStats {
            class: *c,
            mean: m.to_vec(),
            var: v.to_vec(),
            count: 10,
        }))
        .unwrap()
    }

    #[test]
    fn hand_stats() {
        let x = Tensor::from_rows(&[[1.0, 3.0], [3.0, 5.0]]).unwrap();
        let b = compute_seen_stats(&[(4, x)], SingletonPolicy::Reject).unwrap();
        let s = b.get(4).unwrap();
        assert_eq!(s.mean, [2.0, 4.0]);
        assert_eq!(s.var, [2.0, 2.0]);
        assert_eq!(s.count, 2);
    }

    #[test]
    fn identical_features_zero_variance() {
        let x = Tensor::from_rows(&[[1.5, -2.0]; 5]).unwrap();
        let b = compute_seen_stats(&[(0, x)], SingletonPolicy::Reject).unwrap();
        assert_eq!(b.get(0).unwrap().var, [0.0, 0.0]);
    }

    #[test]
    fn singleton_policy() {
        let one = Tensor::from_rows(&[[1.0, 1.0]]).unwrap();
        let two = Tensor::from_rows(&[[0.0, 0.0], [2.0, 4.0]]).unwrap();
        let groups = [(0, one), (1, two)];
        assert_eq!(
            compute_seen_stats(&groups, SingletonPolicy::Reject),
            Err(Error::InsufficientSamples { needed: 2, got: 1 })
        );
        let b = compute_seen_stats(&groups, SingletonPolicy::BankMeanVariance).unwrap();
        assert_eq!(b.get(0).unwrap().var, [2.0, 8.0]);
    }

    #[test]
    fn support_means() {
        assert_eq!(support_mean(&[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]]).unwrap(), [1.0, 1.0]);
        assert_eq!(support_mean(&[[0.25, 7.0]]).unwrap(), [0.25, 7.0]);
        assert_eq!(support_mean::<[f64; 2]>(&[]), Err(Error::EmptySupport));
    }

    #[test]
    fn neighbor_selection() {
        let b = bank(&[(0, &[0.0, 0.0], &[1.0, 1.0]), (1, &[10.0, 0.0], &[1.0, 1.0])]);
        assert_eq!(nearest_seen_classes(&b, &[1.0, 0.0], 1).unwrap(), [0]);
        assert_eq!(nearest_seen_classes(&b, &[5.0, 0.0], 1).unwrap(), [0]);
        let flipped = bank(&[(7, &[0.0, 0.0], &[1.0, 1.0]), (3, &[10.0, 0.0], &[1.0, 1.0])]);
        assert_eq!(nearest_seen_classes(&flipped, &[5.0, 0.0], 1).unwrap(), [3]);
        assert_eq!(nearest_seen_classes(&SeenBank::default(), &[0.0], 1), Err(Error::EmptyBank));
        assert!(nearest_seen_classes(&b, &[0.0, 0.0], 3).is_err());
    }

    #[test]
    fn variance_calibration() {
        let b = bank(&[(0, &[0.0, 0.0], &[2.0, 4.0]), (1, &[1.0, 0.0], &[4.0, 8.0])]);
        assert_eq!(calibrate_variance(&b, &[0, 1]).unwrap(), [3.0, 6.0]);
        assert_eq!(calibrate_variance(&b, &[1]).unwrap(), [4.0, 8.0]);
        assert_eq!(calibrate_variance(&b, &[1, 1]).unwrap(), [4.0, 8.0]);
        assert_eq!(calibrate_variance(&b, &[9]), Err(Error::MissingClass(9)));
    }

    #[test]
    fn per_support_mode_unions_neighbors() {
        let b = bank(&[(0, &[0.0, 0.0], &[1.0, 1.0]), (1, &[10.0, 0.0], &[3.0, 3.0]), (2, &[50.0, 50.0], &[9.0, 9.0])]);
        let supports = [[0.5, 0.0], [9.5, 0.0]];
        let d = calibrate(&b, 5, &supports, 1, NeighborMode::PerSupport).unwrap();
        assert_eq!(d.neighbors, [0, 1]);
        for v in d.variance() {
            assert!((v - 2.0).abs() < 1e-12);
        }
        let d = calibrate(&b, 5, &supports, 1, NeighborMode::ClassMean).unwrap();
        assert_eq!(d.neighbors.len(), 1);
    }

    #[test]
    fn zero_variance_draw_is_mean() {
        let mut d = UnseenDistribution::new(0, alloc::vec![1.0, -2.0], &[1.0, 1.0], alloc::vec![1]).unwrap();
        d.log_var = alloc::vec![f64::NEG_INFINITY; 2];
        assert_eq!(sample_conditional(&d, &mut seeded_rng(0)), [1.0, -2.0]);
    }

    #[test]
    fn draw_moments() {
        let d = UnseenDistribution::new(0, alloc::vec![1.0, -3.0], &[0.25, 4.0], alloc::vec![1]).unwrap();
        let mut rng = seeded_rng(9);
        let n = 10_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| sample_conditional(&d, &mut rng)).collect();
        for j in 0..2 {
            let m = draws.iter().map(|r| r[j]).sum::<f64>() / n as f64;
            let v = draws.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / (n - 1) as f64;
            let sd = libm::sqrt(d.variance()[j]);
            assert!((m - d.mean[j]).abs() < 5.0 * sd / 100.0);
            assert!((v - d.variance()[j]).abs() < 0.1 * d.variance()[j]);
        }
    }
}
