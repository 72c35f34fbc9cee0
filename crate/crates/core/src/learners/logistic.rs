//! L1-penalized logistic regression fitted by coordinate-descent Newton.
//!
//! Minimizes `||w||_1 + C * sum_i log(1 + exp(-y_i (w·x_i + b)))` with an
//! unpenalized intercept. Each coordinate step takes the one-dimensional
//! Newton direction of the smooth part, soft-thresholded for the L1 term,
//! then backtracks until the Armijo condition holds.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::Result;
use crate::matrix::Matrix;
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn decision(&self, row: &[f64]) -> f64 {
        self.bias + dot(&self.weights, row)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LogisticOptions {
    /// Relative change in objective between sweeps that counts as converged.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            tol: 1e-6,
            max_sweeps: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LogisticSolution {
    pub model: LogisticModel,
    /// Full objective before the first sweep and after every sweep.
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `log(1 + exp(-z))` without overflow.
fn log_loss(z: f64) -> f64 {
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

/// `1 / (1 + exp(z))`, the derivative of `log_loss` negated.
fn neg_sigmoid(z: f64) -> f64 {
    if z > 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// `C * sum_i log(1 + exp(-y_i (w·x_i + b)))`.
pub fn smooth_objective(x: &Matrix, y: &[Label], w: &[f64], b: f64, c: f64) -> f64 {
    c * x
        .row_iter()
        .zip(y)
        .map(|(r, l)| log_loss(l.sign() * (dot(w, r) + b)))
        .sum::<f64>()
}

/// Smooth objective plus `||w||_1`.
pub fn objective(x: &Matrix, y: &[Label], w: &[f64], b: f64, c: f64) -> f64 {
    smooth_objective(x, y, w, b, c) + w.iter().map(|v| v.abs()).sum::<f64>()
}

/// Gradient of [`smooth_objective`] with respect to `(w, b)`.
pub fn smooth_gradient(x: &Matrix, y: &[Label], w: &[f64], b: f64, c: f64) -> (Vec<f64>, f64) {
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (r, l) in x.row_iter().zip(y) {
        let s = l.sign();
        let coef = -c * s * neg_sigmoid(s * (dot(w, r) + b));
        for (g, v) in gw.iter_mut().zip(r) {
            *g += coef * v;
        }
        gb += coef;
    }
    (gw, gb)
}

pub fn fit_logistic_l1(x: &Matrix, y: &[Label], c: f64, seed: u64) -> Result<LogisticModel> {
    Ok(solve(x, y, c, seed, LogisticOptions::default())?.model)
}

pub fn solve(x: &Matrix, y: &[Label], c: f64, seed: u64, opts: LogisticOptions) -> Result<LogisticSolution> {
    super::validate_training(x, y)?;
    let n = x.rows();
    let d = x.cols();
    let cols: Vec<Vec<f64>> = (0..d).map(|j| x.column(j).collect()).collect();
    let ones = vec![1.0; n];
    let signs: Vec<f64> = y.iter().map(|l| l.sign()).collect();

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    // z_i = y_i (w·x_i + b)
    let mut z = vec![0.0; n];
    let mut trace = vec![c * n as f64 * std::f64::consts::LN_2];
    let mut order: Vec<usize> = (0..=d).collect();
    let mut rng = seeds::rng(seed);
    let mut converged = false;
    let mut sweeps = 0;

    const SIGMA: f64 = 0.01;
    const MAX_BACKTRACK: usize = 40;

    while sweeps < opts.max_sweeps {
        sweeps += 1;
        order.shuffle(&mut rng);
        for &j in &order {
            let is_bias = j == d;
            let col = if is_bias { &ones } else { &cols[j] };
            let mut g = 0.0;
            let mut h = 0.0;
            for i in 0..n {
                let q = neg_sigmoid(z[i]);
                let xv = col[i];
                g -= signs[i] * xv * q;
                h += xv * xv * q * (1.0 - q);
            }
            g *= c;
            h = c * h + 1e-12;

            let wj = if is_bias { b } else { w[j] };
            let step = if is_bias {
                -g / h
            } else if g + 1.0 <= h * wj {
                -(g + 1.0) / h
            } else if g - 1.0 >= h * wj {
                -(g - 1.0) / h
            } else {
                -wj
            };
            if step == 0.0 {
                continue;
            }
            let l1 = |v: f64| if is_bias { 0.0 } else { v.abs() };
            let delta = g * step + l1(wj + step) - l1(wj);

            let mut lambda = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACK {
                let t = lambda * step;
                let mut diff = l1(wj + t) - l1(wj);
                for i in 0..n {
                    let zi = z[i] + t * signs[i] * col[i];
                    diff += c * (log_loss(zi) - log_loss(z[i]));
                }
                if diff <= SIGMA * lambda * delta {
                    accepted = Some(t);
                    break;
                }
                lambda *= 0.5;
            }
            if let Some(t) = accepted {
                if is_bias {
                    b += t;
                } else {
                    w[j] += t;
                }
                for i in 0..n {
                    z[i] += t * signs[i] * col[i];
                }
            }
        }
        let obj = c * z.iter().map(|&v| log_loss(v)).sum::<f64>() + w.iter().map(|v| v.abs()).sum::<f64>();
        let prev = trace[trace.len() - 1];
        trace.push(obj);
        if (prev - obj).abs() <= opts.tol * prev.abs().max(1e-300) {
            converged = true;
            break;
        }
    }

    Ok(LogisticSolution {
        model: LogisticModel { weights: w, bias: b },
        objective_trace: trace,
        sweeps,
        converged,
    })
}
