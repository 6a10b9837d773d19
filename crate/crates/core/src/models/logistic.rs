//! L2-penalized logistic regression fitted by damped Newton iterations.
//!
//! Objective: `Σ log(1 + exp(−s·z)) + ‖w‖² / (2C)` with `s = 2y − 1`,
//! `z = w·x + b`. The intercept is not penalized.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub c: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub c: f64,
    /// Stop when the gradient's max-norm falls below this.
    pub tol: f64,
    pub max_iter: usize,
}

impl LogisticParams {
    pub fn with_c(c: f64) -> Self {
        Self { c, ..Self::default() }
    }
}

impl Default for LogisticParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-8,
            max_iter: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub loss: f64,
    pub grad_weights: Vec<f64>,
    pub grad_intercept: f64,
}

impl Objective {
    pub fn grad_max_norm(&self) -> f64 {
        self.grad_weights
            .iter()
            .fold(self.grad_intercept.abs(), |m, g| m.max(g.abs()))
    }
}

/// `log(1 + exp(t))` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn check(x: &Matrix, y: &[bool], weights: &[f64], intercept: f64, c: f64) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.n_rows(),
            found: y.len(),
        });
    }
    if x.n_cols() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: weights.len(),
            found: x.n_cols(),
        });
    }
    if !(c > 0.0) || c.is_nan() {
        return Err(Error::InvalidArgument(format!("C must be positive, got {c}")));
    }
    if !intercept.is_finite() || weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("logistic parameters".into()));
    }
    Ok(())
}

fn linear(x: &[f64], weights: &[f64], intercept: f64) -> f64 {
    x.iter().zip(weights).map(|(a, w)| a * w).sum::<f64>() + intercept
}

fn penalty(weights: &[f64], c: f64) -> f64 {
    if c.is_infinite() {
        0.0
    } else {
        weights.iter().map(|w| w * w).sum::<f64>() / (2.0 * c)
    }
}

fn loss_only(weights: &[f64], intercept: f64, x: &Matrix, y: &[bool], c: f64) -> f64 {
    let nll: f64 = (0..x.n_rows())
        .map(|i| {
            let s = if y[i] { 1.0 } else { -1.0 };
            softplus(-s * linear(x.row(i), weights, intercept))
        })
        .sum();
    nll + penalty(weights, c)
}

/// Penalized negative log-likelihood and its analytic gradient.
pub fn logistic_objective(weights: &[f64], intercept: f64, x: &Matrix, y: &[bool], c: f64) -> Result<Objective> {
    check(x, y, weights, intercept, c)?;
    let p = weights.len();
    let mut loss = 0.0;
    let mut grad_weights = vec![0.0; p];
    let mut grad_intercept = 0.0;
    for i in 0..x.n_rows() {
        let row = x.row(i);
        let s = if y[i] { 1.0 } else { -1.0 };
        let m = s * linear(row, weights, intercept);
        loss += softplus(-m);
        // d/dz log(1 + exp(-s z)) = -s σ(-s z)
        let g = -s * sigmoid(-m);
        for (gw, a) in grad_weights.iter_mut().zip(row) {
            *gw += g * a;
        }
        grad_intercept += g;
    }
    loss += penalty(weights, c);
    if c.is_finite() {
        for (gw, w) in grad_weights.iter_mut().zip(weights) {
            *gw += w / c;
        }
    }
    Ok(Objective {
        loss,
        grad_weights,
        grad_intercept,
    })
}

pub fn train_logistic(x: &Matrix, y: &[bool], params: &LogisticParams) -> Result<LogisticModel> {
    train_logistic_from(x, y, params, None)
}

/// Newton minimization, optionally warm-started from `(weights, intercept)`.
pub fn train_logistic_from(
    x: &Matrix,
    y: &[bool],
    params: &LogisticParams,
    init: Option<(&[f64], f64)>,
) -> Result<LogisticModel> {
    let p = x.n_cols();
    let n = x.n_rows();
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} rows")));
    }
    if y.iter().all(|&v| v) || !y.iter().any(|&v| v) {
        return Err(Error::SingleClass("logistic regression needs both classes".into()));
    }
    let (mut w, mut b) = match init {
        Some((w0, b0)) if w0.len() == p => (w0.to_vec(), b0),
        _ => (vec![0.0; p], 0.0),
    };
    let c = params.c;
    let ridge = if c.is_finite() { 1.0 / c } else { 0.0 };
    let mut obj = logistic_objective(&w, b, x, y, c)?;

    for iter in 0..params.max_iter {
        if obj.grad_max_norm() < params.tol {
            return Ok(LogisticModel {
                weights: w,
                intercept: b,
                c,
                iterations: iter,
            });
        }
        // Hessian over (w, b): Xᵀ D X + diag(1/C, .., 1/C, 0)
        let d = p + 1;
        let mut h = DMatrix::<f64>::zeros(d, d);
        for i in 0..n {
            let row = x.row(i);
            let pr = sigmoid(linear(row, &w, b));
            let di = pr * (1.0 - pr);
            if di == 0.0 {
                continue;
            }
            for a in 0..d {
                let xa = if a < p { row[a] } else { 1.0 };
                if xa == 0.0 {
                    continue;
                }
                let s = di * xa;
                for bb in 0..=a {
                    let xb = if bb < p { row[bb] } else { 1.0 };
                    h[(a, bb)] += s * xb;
                }
            }
        }
        for a in 0..d {
            for bb in 0..a {
                h[(bb, a)] = h[(a, bb)];
            }
        }
        for a in 0..p {
            h[(a, a)] += ridge;
        }
        let mut g = DVector::<f64>::zeros(d);
        for a in 0..p {
            g[a] = obj.grad_weights[a];
        }
        g[p] = obj.grad_intercept;

        let step = solve_spd(h, &g);
        let mut t = 1.0;
        let slope: f64 = -g.dot(&step);
        let mut accepted = false;
        if -slope <= 1e-10 * (1.0 + obj.loss.abs()) {
            // decrement below loss rounding: Armijo cannot discriminate, and a
            // full Newton step is what converges here
            for (wi, si) in w.iter_mut().zip(step.iter()) {
                *wi -= si;
            }
            b -= step[p];
            obj = logistic_objective(&w, b, x, y, c)?;
            continue;
        }
        for _ in 0..60 {
            let w_new: Vec<f64> = w.iter().zip(step.iter()).map(|(wi, si)| wi - t * si).collect();
            let b_new = b - t * step[p];
            let loss_new = loss_only(&w_new, b_new, x, y, c);
            if loss_new <= obj.loss + 1e-4 * t * slope {
                w = w_new;
                b = b_new;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no representable descent left along the Newton direction
            return Err(Error::NotConverged {
                iterations: iter + 1,
                grad_norm: obj.grad_max_norm(),
            });
        }
        obj = logistic_objective(&w, b, x, y, c)?;
    }
    if obj.grad_max_norm() < params.tol {
        return Ok(LogisticModel {
            weights: w,
            intercept: b,
            c,
            iterations: params.max_iter,
        });
    }
    Err(Error::NotConverged {
        iterations: params.max_iter,
        grad_norm: obj.grad_max_norm(),
    })
}

/// Solves `H s = g` for symmetric positive (semi)definite `H`, adding jitter if needed.
fn solve_spd(h: DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let mut jitter = 0.0;
    let scale = (0..h.nrows()).map(|i| h[(i, i)].abs()).fold(1e-12, f64::max);
    loop {
        let mut hj = h.clone();
        if jitter > 0.0 {
            for i in 0..hj.nrows() {
                hj[(i, i)] += jitter;
            }
        }
        if let Some(chol) = hj.cholesky() {
            return chol.solve(g);
        }
        jitter = if jitter == 0.0 { scale * 1e-12 } else { jitter * 10.0 };
    }
}

impl LogisticModel {
    pub fn decision(&self, x: &[f64]) -> f64 {
        linear(x, &self.weights, self.intercept)
    }

    pub fn n_features(&self) -> usize {
        self.weights.len()
    }

    pub fn objective(&self, x: &Matrix, y: &[bool]) -> Result<f64> {
        Ok(logistic_objective(&self.weights, self.intercept, x, y, self.c)?.loss)
    }
}

pub fn predict_proba_logistic(model: &LogisticModel, x: &Matrix) -> Result<Vec<f64>> {
    if x.n_cols() != model.weights.len() {
        return Err(Error::DimensionMismatch {
            expected: model.weights.len(),
            found: x.n_cols(),
        });
    }
    Ok((0..x.n_rows()).map(|i| sigmoid(model.decision(x.row(i)))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_instance(seed: u64, n: usize, p: usize) -> (Matrix, Vec<bool>) {
        let mut rng = substream(seed, 0);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let mut y: Vec<bool> = rows.iter().map(|r| r[0] + rng.gen_range(-1.0..1.0) > 0.0).collect();
        y[0] = true;
        y[1] = false;
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn zero_parameters_give_n_log_two() {
        let (x, y) = random_instance(1, 10, 3);
        let obj = logistic_objective(&[0.0; 3], 0.0, &x, &y, 1.0).unwrap();
        assert!((obj.loss - 10.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn penalty_vanishes_as_c_grows() {
        let (x, y) = random_instance(2, 10, 2);
        let w = [0.7, -1.3];
        let base = logistic_objective(&w, 0.2, &x, &y, f64::INFINITY).unwrap().loss;
        let big = logistic_objective(&w, 0.2, &x, &y, 1e12).unwrap().loss;
        assert!((big - base).abs() < 1e-9);
    }

    #[test]
    fn gradient_matches_central_differences() {
        for seed in 0..20 {
            let mut rng = substream(seed, 1);
            let (x, y) = random_instance(seed, 12, 4);
            let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let b = rng.gen_range(-1.0..1.0);
            let c = 0.5;
            let obj = logistic_objective(&w, b, &x, &y, c).unwrap();
            let eps = 1e-5;
            for j in 0..4 {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[j] += eps;
                wm[j] -= eps;
                let fd = (logistic_objective(&wp, b, &x, &y, c).unwrap().loss
                    - logistic_objective(&wm, b, &x, &y, c).unwrap().loss)
                    / (2.0 * eps);
                let rel = (fd - obj.grad_weights[j]).abs() / obj.grad_weights[j].abs().max(1.0);
                assert!(rel < 1e-6, "seed {seed} j {j}: {rel}");
            }
        }
    }

    #[test]
    fn separable_one_dimensional_data() {
        let x = Matrix::from_rows(&[vec![-1.0], vec![-1.0], vec![1.0], vec![1.0]]).unwrap();
        let y = [false, false, true, true];
        let m = train_logistic(&x, &y, &LogisticParams::with_c(1.0)).unwrap();
        assert!(m.weights[0] > 0.0 && m.weights[0].is_finite());
    }

    #[test]
    fn duplicated_columns_share_weight() {
        let (x, y) = random_instance(4, 40, 2);
        let dup = Matrix::from_columns(40, &[x.column(0), x.column(0), x.column(1)]).unwrap();
        let m = train_logistic(&dup, &y, &LogisticParams::with_c(1.0)).unwrap();
        assert!((m.weights[0] - m.weights[1]).abs() < 1e-6);
    }

    #[test]
    fn one_class_is_rejected() {
        let x = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        assert!(matches!(
            train_logistic(&x, &[true, true], &LogisticParams::default()),
            Err(Error::SingleClass(_))
        ));
    }

    #[test]
    fn probabilities() {
        let m = LogisticModel {
            weights: vec![0.0, 0.0],
            intercept: 0.0,
            c: 1.0,
            iterations: 0,
        };
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(predict_proba_logistic(&m, &x).unwrap(), vec![0.5]);
        let m = LogisticModel {
            weights: vec![0.8, -0.3],
            ..m
        };
        let xs = Matrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, -2.0]]).unwrap();
        let p = predict_proba_logistic(&m, &xs).unwrap();
        assert!((p[0] + p[1] - 1.0).abs() < 1e-15);
        assert!(predict_proba_logistic(&m, &Matrix::from_rows(&[vec![1.0]]).unwrap()).is_err());
        let lo = sigmoid(m.decision(&[1.0, 2.0]));
        let hi = sigmoid(LogisticModel { intercept: 1.0, ..m.clone() }.decision(&[1.0, 2.0]));
        assert!(hi > lo);
    }

    #[test]
    fn warm_start_reaches_same_optimum() {
        let (x, y) = random_instance(6, 50, 3);
        let params = LogisticParams::with_c(10.0);
        let cold = train_logistic(&x, &y, &params).unwrap();
        let warm = train_logistic_from(&x, &y, &params, Some((&[0.3, -0.2, 0.1], 0.5))).unwrap();
        for (a, b) in cold.weights.iter().zip(&warm.weights) {
            assert!((a - b).abs() < 1e-7);
        }
    }
}
