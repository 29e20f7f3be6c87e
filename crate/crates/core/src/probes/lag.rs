//! Subgroup learning-lag curves: a logistic-regression classifier trained on
//! the whole population, with accuracy tracked separately for a subgroup.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::scalar::{Matrix, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagParams {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Share of points held out for validation curves.
    pub val_fraction: f64,
}

impl Default for LagParams {
    fn default() -> Self {
        LagParams {
            epochs: 50,
            lr: 0.1,
            seed: 0,
            val_fraction: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagEpoch {
    pub epoch: usize,
    pub overall_train_acc: f64,
    pub subgroup_train_acc: f64,
    pub rest_train_acc: f64,
    /// `None` when the validation split (or its subgroup share) is empty.
    pub overall_val_acc: Option<f64>,
    pub subgroup_val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagReport {
    pub epochs: Vec<LagEpoch>,
    /// Members of the tracked subgroup (record keys or indices, set by the caller).
    pub subgroup: Vec<String>,
}

/// Mean logistic loss and its gradient for labels in {0, 1}.
pub fn logistic_loss_grad(x: &[Vec<f64>], y: &[bool], w: &[f64], b: f64) -> (f64, Vec<f64>, f64) {
    let n = x.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; w.len()];
    let mut gb = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let z = xi.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
        let target = if yi { 1.0 } else { 0.0 };
        // log(1 + e^z) − y z, evaluated stably
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - target * z;
        let p = 1.0 / (1.0 + (-z).exp());
        let r = p - target;
        for (g, &v) in gw.iter_mut().zip(xi) {
            *g += r * v;
        }
        gb += r;
    }
    gw.iter_mut().for_each(|g| *g /= n);
    (loss / n, gw, gb / n)
}

fn accuracy(x: &[Vec<f64>], y: &[bool], w: &[f64], b: f64, members: &[usize]) -> Option<f64> {
    if members.is_empty() {
        return None;
    }
    let correct = members
        .iter()
        .filter(|&&i| {
            let z = x[i].iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b;
            (z > 0.0) == y[i]
        })
        .count();
    Some(correct as f64 / members.len() as f64)
}

/// Trains on every training point (the subgroup is not excluded) with one
/// full-batch gradient step per epoch, recording accuracies after each step.
pub fn train_lag_curves<T: Scalar>(
    x: &Matrix<T>,
    y: &[bool],
    subgroup: &[bool],
    params: &LagParams,
) -> Result<LagReport> {
    let n = x.rows();
    if y.len() != n || subgroup.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: if y.len() != n { y.len() } else { subgroup.len() },
            context: Some("lag-curve labels / subgroup mask".into()),
        });
    }
    let members = subgroup.iter().filter(|&&s| s).count();
    if members == 0 {
        return Err(Error::invalid("subgroup is empty"));
    }
    if members == n {
        return Err(Error::invalid("subgroup covers the whole population"));
    }
    if !(0.0..1.0).contains(&params.val_fraction) || !(params.lr > 0.0) {
        return Err(Error::invalid("val_fraction must lie in [0, 1) and lr must be positive"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(params.seed));
    let n_val = (params.val_fraction * n as f64).floor() as usize;
    let (val, train) = order.split_at(n_val);
    let mut train = train.to_vec();
    train.sort_unstable();
    let mut val = val.to_vec();
    val.sort_unstable();

    // standardize with training statistics
    let d = x.cols();
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for &i in &train {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += v.as_f64();
        }
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    for &i in &train {
        for ((s, m), v) in sd.iter_mut().zip(&mean).zip(x.row(i)) {
            *s += (v.as_f64() - m).powi(2);
        }
    }
    sd.iter_mut().for_each(|s| {
        *s = (*s / train.len() as f64).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    });
    let z: Vec<Vec<f64>> = x
        .iter_rows()
        .map(|r| r.iter().zip(&mean).zip(&sd).map(|((v, m), s)| (v.as_f64() - m) / s).collect())
        .collect();

    let train_x: Vec<Vec<f64>> = train.iter().map(|&i| z[i].clone()).collect();
    let train_y: Vec<bool> = train.iter().map(|&i| y[i]).collect();
    let split_members = |set: &[usize], want: bool| -> Vec<usize> {
        set.iter().cloned().filter(|&i| subgroup[i] == want).collect()
    };
    let (train_sub, train_rest) = (split_members(&train, true), split_members(&train, false));
    let val_sub = split_members(&val, true);

    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut epochs = Vec::with_capacity(params.epochs);
    for epoch in 1..=params.epochs {
        let (_, gw, gb) = logistic_loss_grad(&train_x, &train_y, &w, b);
        for (wk, g) in w.iter_mut().zip(&gw) {
            *wk -= params.lr * g;
        }
        b -= params.lr * gb;
        let acc = |m: &[usize]| accuracy(&z, y, &w, b, m);
        epochs.push(LagEpoch {
            epoch,
            overall_train_acc: acc(&train).unwrap_or(0.0),
            subgroup_train_acc: acc(&train_sub).unwrap_or(0.0),
            rest_train_acc: acc(&train_rest).unwrap_or(0.0),
            overall_val_acc: acc(&val),
            subgroup_val_acc: acc(&val_sub),
        });
    }
    Ok(LagReport {
        epochs,
        subgroup: (0..n).filter(|&i| subgroup[i]).map(|i| i.to_string()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_epochs_gives_empty_report() {
        let x = Matrix::from_rows(&[[0.0f64], [1.0], [2.0]]).unwrap();
        let r = train_lag_curves(&x, &[false, true, true], &[true, false, false], &LagParams { epochs: 0, ..Default::default() }).unwrap();
        assert!(r.epochs.is_empty());
        assert_eq!(r.subgroup, vec!["0"]);
    }

    #[test]
    fn subgroup_must_be_proper() {
        let x = Matrix::from_rows(&[[0.0f64], [1.0], [2.0]]).unwrap();
        let y = [false, true, true];
        assert!(train_lag_curves(&x, &y, &[false; 3], &LagParams::default()).is_err());
        assert!(train_lag_curves(&x, &y, &[true; 3], &LagParams::default()).is_err());
    }

    fn central_diff(x: &[Vec<f64>], y: &[bool], w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let h = 1e-6;
        let gw = (0..w.len())
            .map(|k| {
                let mut wp = w.to_vec();
                let mut wm = w.to_vec();
                wp[k] += h;
                wm[k] -= h;
                (logistic_loss_grad(x, y, &wp, b).0 - logistic_loss_grad(x, y, &wm, b).0) / (2.0 * h)
            })
            .collect();
        let gb = (logistic_loss_grad(x, y, w, b + h).0 - logistic_loss_grad(x, y, w, b - h).0) / (2.0 * h);
        (gw, gb)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn gradient_matches_finite_differences(
            rows in proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, 3), 4..12),
            labels in proptest::collection::vec(any::<bool>(), 12),
            w in proptest::collection::vec(-1.5f64..1.5, 3),
            b in -1.0f64..1.0,
        ) {
            let y = &labels[..rows.len()];
            let (_, gw, gb) = logistic_loss_grad(&rows, y, &w, b);
            let (fw, fb) = central_diff(&rows, y, &w, b);
            let num: f64 = gw.iter().zip(&fw).map(|(a, c)| (a - c).powi(2)).sum::<f64>() + (gb - fb).powi(2);
            let den: f64 = fw.iter().map(|c| c * c).sum::<f64>() + fb * fb;
            prop_assert!(num.sqrt() <= 1e-5 * den.sqrt().max(1e-3), "abs err {}", num.sqrt());
        }
    }
}
