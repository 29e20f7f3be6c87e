//! Support vector classification trained by sequential minimal optimization.
//!
//! The binary solver works on the dual
//! `min ½ αᵀQα − eᵀα  s.t. 0 ≤ α ≤ C, yᵀα = 0` with `Q_ij = y_i y_j K(x_i, x_j)`,
//! picking the working pair by maximal violation for `i` and second-order gain
//! for `j`. Multi-class problems are split one-vs-rest.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::scalar::{dot, sq_dist, Matrix, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Kernel<T> {
    Linear,
    Rbf { gamma: T },
}

impl<T: Scalar> Kernel<T> {
    #[inline]
    pub fn eval(&self, a: &[T], b: &[T]) -> T {
        match *self {
            Kernel::Linear => dot(a, b),
            Kernel::Rbf { gamma } => (-gamma * sq_dist(a, b)).exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmParams<T> {
    pub kernel: Kernel<T>,
    pub c: T,
    /// Stop once the maximal KKT violation `m(α) − M(α)` is below `tol`.
    pub tol: T,
    /// `None` selects `max(1_000_000, 100·N)`.
    pub max_iter: Option<usize>,
    /// Kernel row cache budget.
    pub cache_bytes: usize,
}

impl<T: Scalar> Default for SvmParams<T> {
    fn default() -> Self {
        SvmParams {
            kernel: Kernel::Linear,
            c: T::one(),
            tol: T::of(1e-3),
            max_iter: None,
            cache_bytes: 128 << 20,
        }
    }
}

impl<T: Scalar> SvmParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > T::zero() && self.c.is_finite()) {
            return Err(Error::invalid(format!("C must be positive, got {}", self.c)));
        }
        if !(self.tol > T::zero()) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if let Kernel::Rbf { gamma } = self.kernel {
            if !(gamma > T::zero() && gamma.is_finite()) {
                return Err(Error::invalid(format!("RBF gamma must be positive, got {gamma}")));
            }
        }
        Ok(())
    }
}

struct KernelRows<'a, T> {
    x: &'a Matrix<T>,
    y: &'a [i8],
    kernel: Kernel<T>,
    capacity: usize,
    rows: HashMap<usize, Arc<Vec<T>>>,
    order: VecDeque<usize>,
}

impl<'a, T: Scalar> KernelRows<'a, T> {
    fn new(x: &'a Matrix<T>, y: &'a [i8], kernel: Kernel<T>, cache_bytes: usize) -> Self {
        let row_bytes = (x.rows() * std::mem::size_of::<T>()).max(1);
        let capacity = (cache_bytes / row_bytes).clamp(2, x.rows().max(2));
        KernelRows {
            x,
            y,
            kernel,
            capacity,
            rows: HashMap::new(),
            order: VecDeque::new(),
        }
    }

    /// Row `i` of Q.
    fn q_row(&mut self, i: usize) -> Arc<Vec<T>> {
        if let Some(r) = self.rows.get(&i) {
            return Arc::clone(r);
        }
        let (x, y, kernel) = (self.x, self.y, self.kernel);
        let xi = x.row(i);
        let yi = T::of(y[i] as f64);
        let n = x.rows();
        let entry = |k: usize| yi * T::of(y[k] as f64) * kernel.eval(xi, x.row(k));
        let row: Vec<T> = if n >= 2048 {
            (0..n).into_par_iter().map(entry).collect()
        } else {
            (0..n).map(entry).collect()
        };
        let row = Arc::new(row);
        if self.rows.len() >= self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.rows.remove(&old);
            }
        }
        self.rows.insert(i, Arc::clone(&row));
        self.order.push_back(i);
        row
    }
}

/// Dual solution of one binary problem, over all training points.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySolution<T> {
    pub alpha: Vec<T>,
    pub bias: T,
    pub iterations: usize,
    pub converged: bool,
    /// Final `m(α) − M(α)`.
    pub gap: T,
}

/// SMO on labels `y ∈ {−1, +1}`.
pub fn solve_binary<T: Scalar>(x: &Matrix<T>, y: &[i8], params: &SvmParams<T>) -> Result<BinarySolution<T>> {
    params.validate()?;
    let n = x.rows();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
            context: Some("labels".into()),
        });
    }
    if y.iter().any(|&v| v != 1 && v != -1) {
        return Err(Error::invalid("binary labels must be ±1"));
    }
    if !y.contains(&1) || !y.contains(&-1) {
        return Err(Error::invalid("both classes must be present"));
    }

    let c = params.c;
    let tau = T::of(1e-12);
    let max_iter = params.max_iter.unwrap_or_else(|| (100 * n).max(1_000_000));
    let mut q = KernelRows::new(x, y, params.kernel, params.cache_bytes);
    let qd: Vec<T> = (0..n).map(|i| params.kernel.eval(x.row(i), x.row(i))).collect();
    let yf: Vec<T> = y.iter().map(|&v| T::of(v as f64)).collect();

    let mut alpha = vec![T::zero(); n];
    let mut grad = vec![-T::one(); n];
    let in_up = |a: T, yv: i8| if yv > 0 { a < c } else { a > T::zero() };
    let in_low = |a: T, yv: i8| if yv > 0 { a > T::zero() } else { a < c };

    let mut iterations = 0;
    let mut gap;
    let converged = loop {
        // i: maximal violator in I_up
        let mut gmax = T::neg_infinity();
        let mut i_sel = None;
        for t in 0..n {
            if in_up(alpha[t], y[t]) {
                let v = -yf[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i_sel = Some(t);
                }
            }
        }
        let mut gmin = T::infinity();
        for t in 0..n {
            if in_low(alpha[t], y[t]) {
                gmin = gmin.min(-yf[t] * grad[t]);
            }
        }
        gap = gmax - gmin;
        let Some(i) = i_sel else { break true };
        if gap < params.tol {
            break true;
        }
        if iterations >= max_iter {
            break false;
        }

        // j: second-order selection within I_low
        let qi = q.q_row(i);
        let mut best = T::infinity();
        let mut j_sel = None;
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let b = gmax + yf[t] * grad[t];
            if b > T::zero() {
                let mut a = qd[i] + qd[t] - T::of(2.0) * yf[i] * yf[t] * qi[t];
                if a <= T::zero() {
                    a = tau;
                }
                let obj = -(b * b) / a;
                if obj < best {
                    best = obj;
                    j_sel = Some(t);
                }
            }
        }
        let Some(j) = j_sel else { break true };
        let qj = q.q_row(j);

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let mut quad = qd[i] + qd[j] + T::of(2.0) * qi[j];
            if quad <= T::zero() {
                quad = tau;
            }
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > T::zero() {
                if alpha[j] < T::zero() {
                    alpha[j] = T::zero();
                    alpha[i] = diff;
                }
            } else if alpha[i] < T::zero() {
                alpha[i] = T::zero();
                alpha[j] = -diff;
            }
            if diff > T::zero() {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let mut quad = qd[i] + qd[j] - T::of(2.0) * qi[j];
            if quad <= T::zero() {
                quad = tau;
            }
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < T::zero() {
                alpha[j] = T::zero();
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < T::zero() {
                alpha[i] = T::zero();
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += qi[t] * di + qj[t] * dj;
        }
        iterations += 1;
    };

    let bias = -rho(&alpha, &grad, &yf, c);
    Ok(BinarySolution {
        alpha,
        bias,
        iterations,
        converged,
        gap,
    })
}

fn rho<T: Scalar>(alpha: &[T], grad: &[T], y: &[T], c: T) -> T {
    let (mut ub, mut lb) = (T::infinity(), T::neg_infinity());
    let mut sum_free = T::zero();
    let mut n_free = 0usize;
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        let at_upper = alpha[t] >= c;
        let at_lower = alpha[t] <= T::zero();
        if at_upper {
            if y[t] < T::zero() {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if y[t] > T::zero() {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    if n_free > 0 {
        sum_free / T::of_usize(n_free)
    } else {
        (ub + lb) / T::of(2.0)
    }
}

/// Dual objective `eᵀα − ½ αᵀQα` (the quantity SMO maximizes).
pub fn dual_objective<T: Scalar>(x: &Matrix<T>, y: &[i8], kernel: &Kernel<T>, alpha: &[T]) -> f64 {
    let n = x.rows();
    let mut quad = 0.0;
    for i in 0..n {
        if alpha[i] == T::zero() {
            continue;
        }
        for j in 0..n {
            if alpha[j] == T::zero() {
                continue;
            }
            quad += alpha[i].as_f64()
                * alpha[j].as_f64()
                * (y[i] * y[j]) as f64
                * kernel.eval(x.row(i), x.row(j)).as_f64();
        }
    }
    alpha.iter().map(|a| a.as_f64()).sum::<f64>() - 0.5 * quad
}

/// Largest violation of the per-point KKT conditions for decision `f = Σ α y K + b`:
/// `α = 0 ⇒ y f ≥ 1`, `α = C ⇒ y f ≤ 1`, otherwise `y f = 1`.
pub fn kkt_violation<T: Scalar>(
    x: &Matrix<T>,
    y: &[i8],
    kernel: &Kernel<T>,
    c: T,
    alpha: &[T],
    bias: T,
) -> f64 {
    let n = x.rows();
    let mut worst = 0.0f64;
    for i in 0..n {
        let f: f64 = (0..n)
            .filter(|&j| alpha[j] > T::zero())
            .map(|j| alpha[j].as_f64() * y[j] as f64 * kernel.eval(x.row(j), x.row(i)).as_f64())
            .sum::<f64>()
            + bias.as_f64();
        let m = y[i] as f64 * f;
        let v = if alpha[i] <= T::zero() {
            (1.0 - m).max(0.0)
        } else if alpha[i] >= c {
            (m - 1.0).max(0.0)
        } else {
            (m - 1.0).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// One binary machine, keeping only its support vectors (`α > 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryMachine<T> {
    /// Class scored positively by this machine.
    pub positive_class: usize,
    pub support: Vec<Vec<T>>,
    pub alpha: Vec<T>,
    pub labels: Vec<i8>,
    pub bias: T,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> BinaryMachine<T> {
    fn from_solution(positive_class: usize, x: &Matrix<T>, y: &[i8], sol: BinarySolution<T>) -> Self {
        let mut m = BinaryMachine {
            positive_class,
            support: Vec::new(),
            alpha: Vec::new(),
            labels: Vec::new(),
            bias: sol.bias,
            iterations: sol.iterations,
            converged: sol.converged,
        };
        for (i, &a) in sol.alpha.iter().enumerate() {
            if a > T::zero() {
                m.support.push(x.row(i).to_vec());
                m.alpha.push(a);
                m.labels.push(y[i]);
            }
        }
        m
    }

    pub fn decision(&self, kernel: &Kernel<T>, x: &[T]) -> T {
        self.support
            .iter()
            .zip(&self.alpha)
            .zip(&self.labels)
            .fold(self.bias, |acc, ((sv, &a), &l)| acc + a * T::of(l as f64) * kernel.eval(sv, x))
    }

    /// Primal normal `w = Σ α y x` (meaningful for the linear kernel).
    pub fn primal_weights(&self) -> Vec<T> {
        let d = self.support.first().map_or(0, Vec::len);
        let mut w = vec![T::zero(); d];
        for ((sv, &a), &l) in self.support.iter().zip(&self.alpha).zip(&self.labels) {
            let s = a * T::of(l as f64);
            for (wk, &v) in w.iter_mut().zip(sv) {
                *wk += s * v;
            }
        }
        w
    }

    /// `Σ α_i y_i` over the retained support vectors.
    pub fn equality_residual(&self) -> f64 {
        self.alpha
            .iter()
            .zip(&self.labels)
            .map(|(a, &l)| a.as_f64() * l as f64)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel<T> {
    pub kernel: Kernel<T>,
    pub c: T,
    pub dim: usize,
    pub classes: Vec<String>,
    /// A single machine for two classes (scoring class 1), otherwise one per class.
    pub machines: Vec<BinaryMachine<T>>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmPrediction<T> {
    pub class: usize,
    pub scores: Vec<T>,
}

/// Trains a classifier on `labels` (indices into `classes`).
pub fn train_svm<T: Scalar>(
    x: &Matrix<T>,
    labels: &[usize],
    classes: Vec<String>,
    params: &SvmParams<T>,
) -> Result<SvmModel<T>> {
    params.validate()?;
    if labels.len() != x.rows() {
        return Err(Error::DimensionMismatch {
            expected: x.rows(),
            found: labels.len(),
            context: Some("labels".into()),
        });
    }
    if classes.len() < 2 {
        return Err(Error::invalid("need at least two classes"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes.len()) {
        return Err(Error::invalid(format!("label {bad} outside class list")));
    }
    for (k, name) in classes.iter().enumerate() {
        if !labels.contains(&k) {
            return Err(Error::invalid(format!("class {name} has no training points")));
        }
    }

    let positives: Vec<usize> = if classes.len() == 2 { vec![1] } else { (0..classes.len()).collect() };
    let machines = positives
        .into_par_iter()
        .map(|k| {
            let y: Vec<i8> = labels.iter().map(|&l| if l == k { 1 } else { -1 }).collect();
            solve_binary(x, &y, params).map(|sol| BinaryMachine::from_solution(k, x, &y, sol))
        })
        .collect::<Result<Vec<_>>>()?;
    let converged = machines.iter().all(|m| m.converged);
    Ok(SvmModel {
        kernel: params.kernel,
        c: params.c,
        dim: x.cols(),
        classes,
        machines,
        converged,
    })
}

impl<T: Scalar> SvmModel<T> {
    /// Per-class scores: `[−f, f]` for two classes, one-vs-rest decisions otherwise.
    pub fn scores(&self, x: &[T]) -> Vec<T> {
        if self.classes.len() == 2 {
            let f = self.machines[0].decision(&self.kernel, x);
            vec![-f, f]
        } else {
            self.machines.iter().map(|m| m.decision(&self.kernel, x)).collect()
        }
    }
}

/// Argmax of the class scores; ties go to the lowest class index.
pub fn predict_svm<T: Scalar>(model: &SvmModel<T>, x: &Matrix<T>) -> Result<Vec<SvmPrediction<T>>> {
    if x.cols() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            found: x.cols(),
            context: Some("SVM input features".into()),
        });
    }
    Ok((0..x.rows())
        .into_par_iter()
        .map(|i| {
            let scores = model.scores(x.row(i));
            let mut class = 0;
            for (k, s) in scores.iter().enumerate() {
                if *s > scores[class] {
                    class = k;
                }
            }
            SvmPrediction { class, scores }
        })
        .collect())
}
