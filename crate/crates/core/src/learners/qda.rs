//! Quadratic discriminant analysis with a trace-scaled ridge.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One class-conditional Gaussian, stored through its Cholesky factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianClass {
    pub mean: Vec<f64>,
    /// Row-major lower-triangular factor of the regularized covariance.
    pub chol: Vec<f64>,
    pub log_det: f64,
    pub log_prior: f64,
}

impl GaussianClass {
    fn new(mean: Vec<f64>, cov: &DMatrix<f64>, prior: f64) -> Result<Self> {
        let d = mean.len();
        let max_diag = (0..d).map(|i| cov[(i, i)]).fold(0.0, f64::max);
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("class covariance is not positive definite".into()))?;
        let l = chol.l();
        let mut flat = vec![0.0; d * d];
        let mut log_det = 0.0;
        for i in 0..d {
            for j in 0..=i {
                flat[i * d + j] = l[(i, j)];
            }
            // a pivot at rounding level means the factorization only succeeded by accident
            if l[(i, i)] * l[(i, i)] <= 1e-12 * max_diag {
                return Err(Error::Numerical("class covariance is singular".into()));
            }
            log_det += 2.0 * l[(i, i)].ln();
        }
        Ok(GaussianClass {
            mean,
            chol: flat,
            log_det,
            log_prior: prior.ln(),
        })
    }

    /// `log prior - log det / 2 - mahalanobis^2 / 2`.
    fn log_density(&self, x: &[f64], scratch: &mut Vec<f64>) -> f64 {
        let d = self.mean.len();
        scratch.clear();
        let mut sq = 0.0;
        for i in 0..d {
            let mut v = x[i] - self.mean[i];
            let row = &self.chol[i * d..i * d + i];
            for (k, lik) in row.iter().enumerate() {
                v -= lik * scratch[k];
            }
            v /= self.chol[i * d + i];
            scratch.push(v);
            sq += v * v;
        }
        self.log_prior - 0.5 * self.log_det - 0.5 * sq
    }

    fn precision(&self) -> DMatrix<f64> {
        let d = self.mean.len();
        let l = DMatrix::from_row_slice(d, d, &self.chol);
        let cov = &l * l.transpose();
        cov.try_inverse().expect("factor has a positive diagonal")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QdaModel {
    pub positive: GaussianClass,
    pub negative: GaussianClass,
}

impl QdaModel {
    /// Builds a model straight from class moments, without regularization.
    pub fn from_moments(
        mean_pos: Vec<f64>,
        cov_pos: &Matrix,
        prior_pos: f64,
        mean_neg: Vec<f64>,
        cov_neg: &Matrix,
        prior_neg: f64,
    ) -> Result<Self> {
        let to_na = |m: &Matrix| DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice());
        Ok(QdaModel {
            positive: GaussianClass::new(mean_pos, &to_na(cov_pos), prior_pos)?,
            negative: GaussianClass::new(mean_neg, &to_na(cov_neg), prior_neg)?,
        })
    }

    /// Log-posterior of positive minus log-posterior of negative.
    pub fn decision(&self, x: &[f64]) -> f64 {
        let mut scratch = Vec::with_capacity(x.len());
        self.positive.log_density(x, &mut scratch) - self.negative.log_density(x, &mut scratch)
    }

    /// Matrix `A` of the quadratic term `x' A x` in [`Self::decision`].
    pub fn quadratic_coefficient(&self) -> Matrix {
        let a = (self.negative.precision() - self.positive.precision()) * 0.5;
        let d = a.nrows();
        let mut out = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                out.set(i, j, a[(i, j)]);
            }
        }
        out
    }
}

pub fn fit_qda(x: &Matrix, y: &[Label], reg_eps: f64) -> Result<QdaModel> {
    super::validate_training(x, y)?;
    let d = x.cols();
    let n = x.rows() as f64;
    let fit_class = |label: Label| -> Result<GaussianClass> {
        let rows: Vec<&[f64]> = x.row_iter().zip(y).filter(|(_, l)| **l == label).map(|(r, _)| r).collect();
        let nc = rows.len();
        if nc < d + 1 && reg_eps <= 0.0 {
            return Err(Error::Input(format!(
                "class {label} has {nc} rows; QDA without regularization needs at least {}",
                d + 1
            )));
        }
        let mut mean = vec![0.0; d];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= nc as f64);
        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut centered = DVector::<f64>::zeros(d);
        for r in &rows {
            for k in 0..d {
                centered[k] = r[k] - mean[k];
            }
            cov.ger(1.0, &centered, &centered, 1.0);
        }
        if nc > 1 {
            cov /= (nc - 1) as f64;
        }
        // all-constant features leave no scale to borrow; fall back to an absolute ridge
        let trace = cov.trace();
        let ridge = if trace > 0.0 { reg_eps * trace / d as f64 } else { reg_eps };
        for k in 0..d {
            cov[(k, k)] += ridge;
        }
        GaussianClass::new(mean, &cov, nc as f64 / n)
    };
    Ok(QdaModel {
        positive: fit_class(Label::Positive)?,
        negative: fit_class(Label::Negative)?,
    })
}
