//! Soft-margin RBF-kernel SVM solved by sequential minimal optimization.
//!
//! Works on the minimization form of the dual,
//! `f(a) = a'Qa/2 - sum(a)` with `Q_ij = y_i y_j K(x_i, x_j)`,
//! `0 <= a_i <= C`, `sum a_i y_i = 0`. Working pairs come from the
//! maximal-violating-pair rule with second-order selection of the partner;
//! the gradient `G = Qa - 1` is updated in place after each step.

use std::collections::VecDeque;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seeds;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub gamma: f64,
    pub support_vectors: Matrix,
    /// `alpha_i * y_i` for each support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
}

impl SvmModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .row_iter()
            .zip(&self.dual_coef)
            .map(|(sv, c)| c * rbf(self.gamma, sv, x))
            .sum::<f64>()
            + self.bias
    }
}

pub fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

#[derive(Debug, Clone, Copy)]
pub struct SmoOptions {
    /// Stop once the maximal KKT violation is at most this.
    pub tol: f64,
    /// Cap on pair updates.
    pub max_iter: usize,
    pub cache_bytes: usize,
    /// Record the dual objective after every update.
    pub record_trace: bool,
}

impl Default for SmoOptions {
    fn default() -> Self {
        SmoOptions {
            tol: 1e-3,
            max_iter: 1_000_000,
            cache_bytes: 256 << 20,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SmoSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub iterations: usize,
    /// Final maximal violation `m(a) - M(a)`.
    pub violation: f64,
    /// Dual objective `sum(a) - a'Qa/2` after each update, when recorded.
    pub dual_trace: Vec<f64>,
}

struct KernelCache<'a> {
    x: &'a Matrix,
    gamma: f64,
    rows: Vec<Option<Arc<Vec<f64>>>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl<'a> KernelCache<'a> {
    fn new(x: &'a Matrix, gamma: f64, bytes: usize) -> Self {
        let n = x.rows();
        let capacity = (bytes / (8 * n.max(1))).max(2);
        KernelCache {
            x,
            gamma,
            rows: vec![None; n],
            order: VecDeque::new(),
            capacity,
        }
    }

    fn row(&mut self, i: usize) -> Arc<Vec<f64>> {
        if let Some(r) = &self.rows[i] {
            return Arc::clone(r);
        }
        if self.order.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.rows[old] = None;
            }
        }
        let xi = self.x.row(i);
        let r: Arc<Vec<f64>> = Arc::new(self.x.row_iter().map(|xk| rbf(self.gamma, xi, xk)).collect());
        self.rows[i] = Some(Arc::clone(&r));
        self.order.push_back(i);
        r
    }
}

pub fn fit_svm_rbf(x: &Matrix, y: &[Label], c: f64, gamma: f64, seed: u64) -> Result<SvmModel> {
    let sol = solve_smo(x, y, c, gamma, seed, SmoOptions::default())?;
    Ok(model_from_solution(x, y, gamma, &sol))
}

pub fn model_from_solution(x: &Matrix, y: &[Label], gamma: f64, sol: &SmoSolution) -> SvmModel {
    let mut sv = Matrix::empty(x.cols());
    let mut coef = Vec::new();
    for (i, &a) in sol.alpha.iter().enumerate() {
        if a > 0.0 {
            sv.push_row(x.row(i)).expect("same width");
            coef.push(a * y[i].sign());
        }
    }
    SvmModel {
        gamma,
        support_vectors: sv,
        dual_coef: coef,
        bias: sol.bias,
    }
}

pub fn solve_smo(x: &Matrix, y: &[Label], c: f64, gamma: f64, seed: u64, opts: SmoOptions) -> Result<SmoSolution> {
    super::validate_training(x, y)?;
    if !(c > 0.0 && gamma > 0.0) {
        return Err(Error::Config(format!("SVM_RBF: C and gamma must be > 0, got C={c} gamma={gamma}")));
    }
    let n = x.rows();
    let s: Vec<f64> = y.iter().map(|l| l.sign()).collect();
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let mut cache = KernelCache::new(x, gamma, opts.cache_bytes);
    let mut rng = seeds::rng(seed);
    let mut primal_f = 0.0;
    let mut trace = Vec::new();
    let mut stalled = false;
    let mut iterations = 0;

    let in_up = |a: f64, s: f64| (s > 0.0 && a < c) || (s < 0.0 && a > 0.0);
    let in_low = |a: f64, s: f64| (s < 0.0 && a < c) || (s > 0.0 && a > 0.0);

    loop {
        // i maximizes -y G over I_up
        let mut gmax = f64::NEG_INFINITY;
        let mut i_sel = usize::MAX;
        let mut gmin = f64::INFINITY;
        for t in 0..n {
            let v = -s[t] * grad[t];
            if in_up(alpha[t], s[t]) && v > gmax {
                gmax = v;
                i_sel = t;
            }
            if in_low(alpha[t], s[t]) && v < gmin {
                gmin = v;
            }
        }
        let violation = gmax - gmin;
        if i_sel == usize::MAX || violation <= opts.tol {
            let bias = -rho(&alpha, &grad, &s, c);
            return Ok(SmoSolution {
                alpha,
                bias,
                iterations,
                violation: violation.max(0.0),
                dual_trace: trace,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::Convergence {
                iterations,
                violation,
                duals: alpha,
            });
        }
        iterations += 1;

        let i = i_sel;
        let ki = cache.row(i);
        let j = if stalled {
            // random violating partner breaks a stalled pair
            let cands: Vec<usize> = (0..n)
                .filter(|&t| t != i && in_low(alpha[t], s[t]) && -s[t] * grad[t] < gmax)
                .collect();
            *cands.choose(&mut rng).expect("violation implies a partner")
        } else {
            let mut best = f64::INFINITY;
            let mut j_sel = usize::MAX;
            for t in 0..n {
                let v = -s[t] * grad[t];
                if in_low(alpha[t], s[t]) && v < gmax {
                    let b = gmax - v;
                    let a = (2.0 - 2.0 * ki[t]).max(TAU);
                    let score = -b * b / a;
                    if score < best {
                        best = score;
                        j_sel = t;
                    }
                }
            }
            j_sel
        };
        let kj = cache.row(j);

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = s[i] * s[j] * ki[j];
        // RBF kernel has K(x, x) = 1
        let (qii, qjj) = (1.0, 1.0);
        if s[i] != s[j] {
            let quad = (qii + qjj + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        stalled = di == 0.0 && dj == 0.0;
        if opts.record_trace {
            primal_f += grad[i] * di + grad[j] * dj + 0.5 * (qii * di * di + qjj * dj * dj) + qij * di * dj;
            trace.push(-primal_f);
        }
        if !stalled {
            for t in 0..n {
                grad[t] += s[t] * (s[i] * ki[t] * di + s[j] * kj[t] * dj);
            }
        }
    }
}

/// Offset: mean of `y G` over free vectors, else the midpoint of the bounds.
fn rho(alpha: &[f64], grad: &[f64], s: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut n_free = 0;
    for t in 0..alpha.len() {
        let yg = s[t] * grad[t];
        if alpha[t] >= c {
            if s[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if s[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum += yg;
        }
    }
    if n_free > 0 {
        sum / n_free as f64
    } else {
        (ub + lb) / 2.0
    }
}
