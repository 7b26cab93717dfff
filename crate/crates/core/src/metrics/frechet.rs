use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::Tensor;

/// Largest dimension accepted for full-covariance fits.
pub const FULL_COVARIANCE_MAX_DIM: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceMode {
    #[default]
    Diagonal,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    /// Row-major `d x d`.
    Full(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: Vec<f64>,
    pub cov: Covariance,
    pub count: usize,
}

impl GaussianFit {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mode(&self) -> CovarianceMode {
        match self.cov {
            Covariance::Diagonal(_) => CovarianceMode::Diagonal,
            Covariance::Full(_) => CovarianceMode::Full,
        }
    }

    fn full_matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        match &self.cov {
            Covariance::Diagonal(v) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v)),
            Covariance::Full(c) => DMatrix::from_row_slice(d, d, c),
        }
    }
}

/// Sample mean and unbiased covariance of the rows of `features`.
pub fn fit_gaussian(features: &Tensor, mode: CovarianceMode) -> Result<GaussianFit> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    let d = features.cols();
    if mode == CovarianceMode::Full && d > FULL_COVARIANCE_MAX_DIM {
        return Err(Error::config(alloc::format!(
            "full covariance supports at most {FULL_COVARIANCE_MAX_DIM} dimensions, got {d}"
        )));
    }
    let mut mean = vec![0.0; d];
    for row in features.row_iter() {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x / n as f64;
        }
    }
    let denom = (n - 1) as f64;
    let cov = match mode {
        CovarianceMode::Diagonal => {
            let mut v = vec![0.0; d];
            for row in features.row_iter() {
                for j in 0..d {
                    let c = row[j] - mean[j];
                    v[j] += c * c / denom;
                }
            }
            Covariance::Diagonal(v)
        }
        CovarianceMode::Full => {
            let mut c = vec![0.0; d * d];
            for row in features.row_iter() {
                for i in 0..d {
                    let a = row[i] - mean[i];
                    for j in 0..d {
                        c[i * d + j] += a * (row[j] - mean[j]) / denom;
                    }
                }
            }
            Covariance::Full(c)
        }
    };
    Ok(GaussianFit { mean, cov, count: n })
}

fn psd_sqrt(m: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m);
    let vals = eig.eigenvalues.map(|l| libm::sqrt(l.max(0.0)));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2})`.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape("frechet_distance", &[a.dim()], &[b.dim()]));
    }
    if a.mode() != b.mode() {
        return Err(Error::config("Fréchet distance needs fits with the same covariance mode"));
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let cov_term = match (&a.cov, &b.cov) {
        (Covariance::Diagonal(va), Covariance::Diagonal(vb)) => va
            .iter()
            .zip(vb)
            .map(|(x, y)| {
                let d = libm::sqrt(x.max(0.0)) - libm::sqrt(y.max(0.0));
                d * d
            })
            .sum(),
        _ => {
            let sa = a.full_matrix();
            let sb = b.full_matrix();
            let root_a = psd_sqrt(sa.clone());
            let mut inner = &root_a * &sb * &root_a;
            inner = (&inner + inner.transpose()) * 0.5;
            let cross: f64 = SymmetricEigen::new(inner).eigenvalues.iter().map(|l| libm::sqrt(l.max(0.0))).sum();
            sa.trace() + sb.trace() - 2.0 * cross
        }
    };
    Ok((mean_term + cov_term).max(0.0))
}

/// Mean over classes of the mean pairwise Euclidean distance within a class.
pub fn diversity_score(per_class: &[Tensor]) -> Result<f64> {
    if per_class.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let mut total = 0.0;
    for x in per_class {
        let n = x.rows();
        if n < 2 {
            return Err(Error::InsufficientSamples { needed: 2, got: n });
        }
        let mut sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let d2: f64 = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                sum += libm::sqrt(d2);
            }
        }
        total += sum / (n * (n - 1) / 2) as f64;
    }
    Ok(total / per_class.len() as f64)
}
