//! Linear ε-insensitive regression fit by full-batch subgradient descent.

use serde::{Deserialize, Serialize};

use crate::scalar::{Matrix, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegParams {
    /// Tube half-width in target units; `None` selects `0.1 · std(t)`.
    pub epsilon: Option<f64>,
    /// L2 penalty on the weights.
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for RegParams {
    fn default() -> Self {
        RegParams {
            epsilon: None,
            lambda: 1e-4,
            epochs: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegModel<T> {
    pub weights: Vec<T>,
    pub bias: T,
    pub epsilon: T,
    pub lambda: T,
    /// Objective after each epoch.
    pub loss_trace: Vec<f64>,
}

impl<T: Scalar> RegModel<T> {
    pub fn predict_one(&self, x: &[T]) -> T {
        self.weights.iter().zip(x).fold(self.bias, |acc, (&w, &v)| acc + w * v)
    }

    pub fn predict(&self, x: &Matrix<T>) -> Result<Vec<T>> {
        if x.cols() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                found: x.cols(),
                context: Some("regressor input features".into()),
            });
        }
        Ok(x.iter_rows().map(|r| self.predict_one(r)).collect())
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

// Problem in standardized features: w_k = v_k / s_k, b = c − Σ v_k m_k / s_k.
struct Problem {
    z: Vec<Vec<f64>>,
    t: Vec<f64>,
    scale: Vec<f64>,
    eps: f64,
    lambda: f64,
}

impl Problem {
    fn objective(&self, v: &[f64], c: f64) -> f64 {
        let hinge: f64 = self
            .z
            .iter()
            .zip(&self.t)
            .map(|(z, &t)| {
                let r = z.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() + c - t;
                (r.abs() - self.eps).max(0.0)
            })
            .sum();
        hinge / self.t.len() as f64 + self.penalty(v)
    }

    fn penalty(&self, v: &[f64]) -> f64 {
        self.lambda * v.iter().zip(&self.scale).map(|(a, s)| (a / s) * (a / s)).sum::<f64>()
    }

    fn subgradient(&self, v: &[f64], c: f64) -> (Vec<f64>, f64) {
        let n = self.t.len() as f64;
        let mut gv = vec![0.0; v.len()];
        let mut gc = 0.0;
        for (z, &t) in self.z.iter().zip(&self.t) {
            let r = z.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() + c - t;
            let s = if r > self.eps {
                1.0
            } else if r < -self.eps {
                -1.0
            } else {
                continue;
            };
            for (g, &zk) in gv.iter_mut().zip(z) {
                *g += s * zk;
            }
            gc += s;
        }
        for ((g, &vk), &sk) in gv.iter_mut().zip(v).zip(&self.scale) {
            *g = *g / n + 2.0 * self.lambda * vk / (sk * sk);
        }
        (gv, gc / n)
    }
}

/// Fits `t ≈ w·x + b` minimizing `mean(max(0, |r| − ε)) + λ‖w‖²`.
///
/// Features are standardized internally. Each epoch takes one subgradient step
/// with a backtracking step size and only accepts steps that do not increase
/// the objective, so the loss trace is non-increasing.
pub fn train_regressor<T: Scalar>(x: &Matrix<T>, t: &[T], params: &RegParams) -> Result<RegModel<T>> {
    let n = x.rows();
    if t.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: t.len(),
            context: Some("regression targets".into()),
        });
    }
    if n == 0 {
        return Err(Error::invalid("no training points"));
    }
    if t.iter().any(|v| !v.is_finite()) || x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("regression inputs must be finite"));
    }
    let tf: Vec<f64> = t.iter().map(|v| v.as_f64()).collect();
    let (t_mean, t_std) = mean_std(&tf);
    let t_lo = tf.iter().cloned().fold(f64::INFINITY, f64::min);
    let t_hi = tf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(t_hi > t_lo) {
        return Err(Error::DegenerateTargets);
    }
    let eps = params.epsilon.unwrap_or(0.1 * t_std);
    if !(eps >= 0.0 && eps.is_finite()) || !(params.lambda >= 0.0) {
        return Err(Error::invalid("epsilon and lambda must be non-negative"));
    }

    let d = x.cols();
    let mut means = vec![0.0; d];
    let mut scale = vec![1.0; d];
    for k in 0..d {
        let col: Vec<f64> = x.iter_rows().map(|r| r[k].as_f64()).collect();
        let (m, s) = mean_std(&col);
        means[k] = m;
        scale[k] = if s > 0.0 { s } else { 1.0 };
    }
    let z: Vec<Vec<f64>> = x
        .iter_rows()
        .map(|r| (0..d).map(|k| (r[k].as_f64() - means[k]) / scale[k]).collect())
        .collect();
    let prob = Problem {
        z,
        t: tf.clone(),
        scale: scale.clone(),
        eps,
        lambda: params.lambda,
    };

    let mut sorted = tf;
    sorted.sort_by(f64::total_cmp);
    let mut c = sorted[n / 2];
    let mut v = vec![0.0; d];
    let mut loss = prob.objective(&v, c);
    let mut step = t_std.max(t_mean.abs() * 1e-3);
    let mut trace = Vec::with_capacity(params.epochs);

    for _ in 0..params.epochs {
        let (gv, gc) = prob.subgradient(&v, c);
        let mut accepted = false;
        for _ in 0..40 {
            let cand_v: Vec<f64> = v.iter().zip(&gv).map(|(a, g)| a - step * g).collect();
            let cand_c = c - step * gc;
            let cand_loss = prob.objective(&cand_v, cand_c);
            if cand_loss <= loss {
                v = cand_v;
                c = cand_c;
                loss = cand_loss;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if accepted {
            step *= 1.5;
        }
        trace.push(loss);
    }

    let weights: Vec<f64> = v.iter().zip(&scale).map(|(a, s)| a / s).collect();
    let bias = c - weights.iter().zip(&means).map(|(w, m)| w * m).sum::<f64>();
    Ok(RegModel {
        weights: weights.into_iter().map(T::of).collect(),
        bias: T::of(bias),
        epsilon: T::of(eps),
        lambda: T::of(params.lambda),
        loss_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_targets_rejected_even_with_zero_epsilon() {
        let x = Matrix::from_rows(&[[1.0f64], [2.0], [3.0]]).unwrap();
        let params = RegParams { epsilon: Some(0.0), ..Default::default() };
        assert!(matches!(train_regressor(&x, &[3.0; 3], &params), Err(Error::DegenerateTargets)));
    }

    #[test]
    fn exact_linear_data_fits_inside_tube() {
        let xs: Vec<[f64; 1]> = (0..20).map(|i| [i as f64 * 0.5]).collect();
        let t: Vec<f64> = xs.iter().map(|x| 2.0 * x[0] + 1.0).collect();
        let x = Matrix::from_rows(&xs).unwrap();
        let model = train_regressor(&x, &t, &RegParams::default()).unwrap();
        let pred = model.predict(&x).unwrap();
        let mae = pred.iter().zip(&t).map(|(p, t)| (p - t).abs()).sum::<f64>() / 20.0;
        assert!(mae <= model.epsilon, "mae {mae} eps {}", model.epsilon);
    }

    #[test]
    fn loss_trace_non_increasing() {
        let xs: Vec<[f64; 3]> = (0..60)
            .map(|i| {
                let f = i as f64;
                [(f * 0.3).sin(), (f * 0.7).cos() * 10.0, f * 0.01]
            })
            .collect();
        let t: Vec<f64> = xs.iter().enumerate().map(|(i, x)| 3.0 * x[0] - 0.2 * x[1] + 40.0 + ((i * 7) % 5) as f64 * 0.3).collect();
        let model = train_regressor(&Matrix::from_rows(&xs).unwrap(), &t, &RegParams::default()).unwrap();
        assert_eq!(model.loss_trace.len(), 500);
        assert!(model.loss_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    }

    #[test]
    fn duplicated_dataset_gives_same_model() {
        let xs: Vec<[f64; 2]> = (0..25).map(|i| [i as f64, ((i * 13) % 7) as f64]).collect();
        let t: Vec<f64> = xs.iter().map(|x| 0.7 * x[0] - 1.3 * x[1] + 5.0 + (x[0] * 1.7).sin()).collect();
        let x = Matrix::from_rows(&xs).unwrap();
        let mut xs2 = xs.clone();
        xs2.extend_from_slice(&xs);
        let mut t2 = t.clone();
        t2.extend_from_slice(&t);
        let a = train_regressor(&x, &t, &RegParams::default()).unwrap();
        let b = train_regressor(&Matrix::from_rows(&xs2).unwrap(), &t2, &RegParams::default()).unwrap();
        for (u, v) in a.weights.iter().zip(&b.weights) {
            assert!((u - v).abs() <= 1e-9 * u.abs().max(1.0));
        }
        assert!((a.bias - b.bias).abs() <= 1e-9 * a.bias.abs().max(1.0));
    }
}
