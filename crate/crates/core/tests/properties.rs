use cdm_core::calibration::{compute_seen_stats, nearest_seen_classes, SeenBank, SingletonPolicy};
use cdm_core::metrics::{diversity_score, fit_gaussian, frechet_distance, CovarianceMode};
use cdm_core::tensor::seeded_rng;
use cdm_core::{ClassId, Tensor};
use proptest::prelude::*;

fn sample(seed: u64, rows: usize, cols: usize, shift: f64, scale: f64) -> Tensor {
    seeded_rng(seed).normal_sample(&[rows, cols]).map(|v| shift + scale * v)
}

/// Applies `x ↦ R·x + b` to every row, with `R` a product of plane rotations.
fn rigid(x: &[f64], angle: f64, offset: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for i in 0..y.len() - 1 {
        let (s, c) = (angle * (i + 1) as f64).sin_cos();
        let (a, b) = (y[i], y[i + 1]);
        y[i] = c * a - s * b;
        y[i + 1] = s * a + c * b;
    }
    y.iter().zip(offset).map(|(v, o)| v + o).collect()
}

fn bank_from_means(means: &[Vec<f64>]) -> SeenBank {
    let groups: Vec<(ClassId, Tensor)> = means
        .iter()
        .enumerate()
        .map(|(c, m)| {
            let lo: Vec<f64> = m.iter().map(|v| v - 0.1).collect();
            let hi: Vec<f64> = m.iter().map(|v| v + 0.1).collect();
            (c as ClassId, Tensor::from_rows(&[lo, hi]).unwrap())
        })
        .collect();
    compute_seen_stats(&groups, SingletonPolicy::Reject).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn frechet_is_symmetric_and_zero_on_itself(seed in 0u64..1000, shift in -2.0f64..2.0, scale in 0.2f64..3.0) {
        let a = sample(seed, 40, 4, 0.0, 1.0);
        let b = sample(seed + 1, 40, 4, shift, scale);
        for mode in [CovarianceMode::Diagonal, CovarianceMode::Full] {
            let fa = fit_gaussian(&a, mode).unwrap();
            let fb = fit_gaussian(&b, mode).unwrap();
            let ab = frechet_distance(&fa, &fb).unwrap();
            let ba = frechet_distance(&fb, &fa).unwrap();
            prop_assert!((ab - ba).abs() <= 1e-9 * (1.0 + ab));
            prop_assert!(frechet_distance(&fa, &fa).unwrap() < 1e-9);
        }
    }

    #[test]
    fn full_frechet_agrees_with_diagonal_on_diagonal_data(
        va in proptest::collection::vec(0.1f64..4.0, 3),
        vb in proptest::collection::vec(0.1f64..4.0, 3),
        shift in -2.0f64..2.0,
    ) {
        let axis = |v: &[f64], m: f64| {
            let rows: Vec<Vec<f64>> = (0..3)
                .flat_map(|i| [1.0, -1.0].map(|s| (0..3).map(|j| m + if i == j { s * v[j].sqrt() } else { 0.0 }).collect()))
                .collect();
            Tensor::from_rows(&rows).unwrap()
        };
        let (a, b) = (axis(&va, 0.0), axis(&vb, shift));
        let diag = frechet_distance(&fit_gaussian(&a, CovarianceMode::Diagonal).unwrap(), &fit_gaussian(&b, CovarianceMode::Diagonal).unwrap()).unwrap();
        let full = frechet_distance(&fit_gaussian(&a, CovarianceMode::Full).unwrap(), &fit_gaussian(&b, CovarianceMode::Full).unwrap()).unwrap();
        prop_assert!((diag - full).abs() <= 1e-8 * (1.0 + diag), "{} vs {}", diag, full);
    }

    #[test]
    fn diversity_scales_linearly(seed in 0u64..1000, k in 0.1f64..10.0) {
        let classes = vec![sample(seed, 12, 3, 0.0, 1.0), sample(seed + 7, 9, 3, 1.0, 0.5)];
        let scaled: Vec<Tensor> = classes.iter().map(|x| x.map(|v| k * v)).collect();
        let d = diversity_score(&classes).unwrap();
        let dk = diversity_score(&scaled).unwrap();
        prop_assert!((dk - k * d).abs() <= 1e-9 * dk.max(1.0));
    }

    #[test]
    fn neighbors_survive_rigid_motion(
        seed in 0u64..1000,
        angle in -3.0f64..3.0,
        offset in proptest::collection::vec(-5.0f64..5.0, 4),
        count in 1usize..6,
    ) {
        let mut rng = seeded_rng(seed);
        let means: Vec<Vec<f64>> = (0..6).map(|_| rng.normal_vec(4)).collect();
        let query = rng.normal_vec(4);
        let moved: Vec<Vec<f64>> = means.iter().map(|m| rigid(m, angle, &offset)).collect();
        let before = nearest_seen_classes(&bank_from_means(&means), &query, count).unwrap();
        let after = nearest_seen_classes(&bank_from_means(&moved), &rigid(&query, angle, &offset), count).unwrap();
        prop_assert_eq!(before, after);
    }

    #[test]
    fn class_statistics_ignore_row_order(seed in 0u64..1000, perm_seed in 0u64..1000) {
        let groups: Vec<(ClassId, Tensor)> = (0..3).map(|c| (c, sample(seed + c as u64, 10, 3, c as f64, 1.0))).collect();
        let shuffled: Vec<(ClassId, Tensor)> = groups
            .iter()
            .rev()
            .map(|(c, x)| {
                let mut idx: Vec<usize> = (0..x.rows()).collect();
                seeded_rng(perm_seed).shuffle(&mut idx);
                (*c, x.select_rows(&idx).unwrap())
            })
            .collect();
        let a = compute_seen_stats(&groups, SingletonPolicy::Reject).unwrap();
        let b = compute_seen_stats(&shuffled, SingletonPolicy::Reject).unwrap();
        prop_assert_eq!(a.classes(), b.classes());
        for (sa, sb) in a.iter().zip(b.iter()) {
            prop_assert_eq!(sa.count, sb.count);
            for (x, y) in sa.mean.iter().zip(&sb.mean).chain(sa.var.iter().zip(&sb.var)) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }
}
