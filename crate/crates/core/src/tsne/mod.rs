//! Two-dimensional t-SNE layouts.
//!
//! Affinities are calibrated per point to a target perplexity; the layout is
//! optimized by gradient descent with momentum and per-coordinate gains on
//! `KL(P‖Q)` with a Student-t kernel. Inputs up to `exact_threshold` points use
//! the exact gradient, larger ones the Barnes-Hut approximation over sparse
//! k-nearest-neighbour affinities.
//!
//! Every reduction runs in a fixed order, so results are bit-identical for any
//! number of rayon workers.

mod affinity;
mod gradient;
mod quadtree;

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data_model::{Dataset, Region};
use crate::scalar::{Matrix, Scalar};
use crate::{Error, Result};

pub use affinity::{
    calibrate_affinities, calibrate_sparse_affinities, conditional_row, entropy_bits,
    nearest_neighbors, row_perplexity, AffinityMatrix, Calibration, CalibrationParams,
    CalibrationWarning, RowIter,
};
pub use gradient::{barnes_hut_gradient, exact_gradient, kl_divergence, GradientEval};
pub use quadtree::{QuadTree, Repulsion};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    /// Exaggeration applies to iterations `0..exaggeration_iters`.
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    /// `None` selects `max(N / 12, 50)`.
    pub learning_rate: Option<f64>,
    pub theta: f64,
    pub seed: u64,
    pub exact_threshold: usize,
    pub tol: f64,
    pub max_bisect: usize,
}

impl Default for TsneParams {
    fn default() -> Self {
        TsneParams {
            perplexity: 50.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            learning_rate: None,
            theta: 0.5,
            seed: 0,
            exact_threshold: 5000,
            tol: 1e-5,
            max_bisect: 64,
        }
    }
}

impl TsneParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 3 {
            return Err(Error::invalid(format!("t-SNE needs at least 3 points, found {n}")));
        }
        if !(self.perplexity >= 2.0) {
            return Err(Error::invalid(format!("perplexity {} must be at least 2", self.perplexity)));
        }
        if self.perplexity >= n as f64 {
            return Err(Error::invalid(format!(
                "perplexity {} must be below the number of points ({n})",
                self.perplexity
            )));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::invalid(format!("theta {} must lie in [0, 1]", self.theta)));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!("learning rate {lr} must be positive")));
            }
        }
        if !(self.early_exaggeration > 0.0) {
            return Err(Error::invalid("early exaggeration must be positive"));
        }
        Ok(())
    }

    pub fn learning_rate_for(&self, n: usize) -> f64 {
        self.learning_rate.unwrap_or_else(|| (n as f64 / 12.0).max(50.0))
    }

    /// Neighbour count for the sparse affinities.
    pub fn neighbors_for(&self, n: usize) -> usize {
        ((3.0 * self.perplexity).floor() as usize).min(n - 1)
    }

    pub fn uses_exact(&self, n: usize) -> bool {
        n <= self.exact_threshold
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Progress {
    pub iteration: usize,
    pub total: usize,
    pub kl: f64,
}

/// Receives progress once per iteration; returning `false` cancels the run.
pub trait Monitor: Sync {
    fn on_iteration(&self, progress: &Progress) -> bool;
}

impl Monitor for () {
    fn on_iteration(&self, _: &Progress) -> bool {
        true
    }
}

impl<F: Fn(&Progress) -> bool + Sync> Monitor for F {
    fn on_iteration(&self, progress: &Progress) -> bool {
        self(progress)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TsneWarning {
    Calibration(CalibrationWarning),
    /// All input points coincide; the layout carries no structure.
    DegenerateInput,
}

#[derive(Debug, Clone)]
pub struct TsneOutput<T> {
    /// `N × 2`, rows in input order.
    pub layout: Matrix<T>,
    /// KL(P‖Q) before each update, with the true (unexaggerated) P.
    pub kl_trace: Vec<f64>,
    pub exact: bool,
    pub warnings: Vec<TsneWarning>,
}

/// Seeded initial layout; point `k` draws from its own ChaCha stream so the
/// start position depends only on `(seed, k)`.
pub fn initial_layout<T: Scalar>(n: usize, seed: u64) -> Matrix<T> {
    let normal = Normal::new(0.0, 1e-4).expect("valid sigma");
    let mut data = Vec::with_capacity(2 * n);
    for k in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        data.push(T::of(normal.sample(&mut rng)));
        data.push(T::of(normal.sample(&mut rng)));
    }
    Matrix::from_vec(n, 2, data).expect("2n entries")
}

/// Calibrates affinities in the regime `params` selects for `x`.
pub fn affinities_for<T: Scalar>(x: &Matrix<T>, params: &TsneParams) -> Result<Calibration<T>> {
    let cal = CalibrationParams {
        perplexity: params.perplexity,
        tol: params.tol,
        max_bisect: params.max_bisect,
    };
    if params.uses_exact(x.rows()) {
        calibrate_affinities(x, &cal)
    } else {
        calibrate_sparse_affinities(x, &cal, params.neighbors_for(x.rows()))
    }
}

/// Runs t-SNE on the rows of `x`.
pub fn tsne_matrix<T: Scalar>(x: &Matrix<T>, params: &TsneParams, monitor: &dyn Monitor) -> Result<TsneOutput<T>> {
    let n = x.rows();
    params.validate(n)?;
    let cal = affinities_for(x, params)?;
    let mut warnings: Vec<TsneWarning> = cal.warnings.iter().cloned().map(TsneWarning::Calibration).collect();
    if (1..n).all(|i| x.row(i) == x.row(0)) {
        warnings.push(TsneWarning::DegenerateInput);
    }
    let (layout, kl_trace) = optimize(&cal.affinities, params, monitor)?;
    Ok(TsneOutput {
        layout,
        kl_trace,
        exact: params.uses_exact(n),
        warnings,
    })
}

/// Gradient descent on a prepared affinity matrix.
pub fn optimize<T: Scalar>(
    p: &AffinityMatrix<T>,
    params: &TsneParams,
    monitor: &dyn Monitor,
) -> Result<(Matrix<T>, Vec<f64>)> {
    let n = p.n();
    let exact = params.uses_exact(n);
    let lr = T::of(params.learning_rate_for(n));
    let theta = T::of(params.theta);
    let p_log_p = p.neg_entropy();

    let mut y = initial_layout::<T>(n, params.seed);
    let mut update = vec![T::zero(); 2 * n];
    let mut gains = vec![T::one(); 2 * n];
    let mut trace = Vec::with_capacity(params.iterations);
    let min_gain = T::of(0.01);

    for it in 0..params.iterations {
        let exaggeration = if it < params.exaggeration_iters {
            T::of(params.early_exaggeration)
        } else {
            T::one()
        };
        let momentum = T::of(if it < params.momentum_switch_iter {
            params.initial_momentum
        } else {
            params.final_momentum
        });
        let eval = if exact {
            exact_gradient(p, &y, exaggeration)?
        } else {
            barnes_hut_gradient(p, &y, exaggeration, theta)?
        };
        if eval.grad.as_slice().iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { iteration: it });
        }
        // p_log_w comes from the unscaled P, so this is KL against the true P
        let kl = eval.kl(p_log_p);
        trace.push(kl);

        let g = eval.grad.as_slice();
        let ys = y.as_mut_slice();
        for k in 0..2 * n {
            let same_sign = (g[k] > T::zero()) == (update[k] > T::zero());
            gains[k] = if same_sign {
                gains[k] * T::of(0.8)
            } else {
                gains[k] + T::of(0.2)
            };
            if gains[k] < min_gain {
                gains[k] = min_gain;
            }
            update[k] = momentum * update[k] - lr * gains[k] * g[k];
            ys[k] += update[k];
        }
        center(&mut y);

        if !monitor.on_iteration(&Progress {
            iteration: it + 1,
            total: params.iterations,
            kl,
        }) {
            return Err(Error::Canceled);
        }
    }
    Ok((y, trace))
}

fn center<T: Scalar>(y: &mut Matrix<T>) {
    let n = y.rows();
    if n == 0 {
        return;
    }
    let mut mean = [T::zero(); 2];
    for r in y.iter_rows() {
        mean[0] += r[0];
        mean[1] += r[1];
    }
    let nn = T::of_usize(n);
    mean = [mean[0] / nn, mean[1] / nn];
    for i in 0..n {
        let r = y.row_mut(i);
        r[0] -= mean[0];
        r[1] -= mean[1];
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutPoint {
    pub subject_id: String,
    pub region: Region,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone)]
pub struct DatasetLayout {
    /// One point per dataset record, in record order.
    pub points: Vec<LayoutPoint>,
    pub kl_trace: Vec<f64>,
    pub exact: bool,
    pub warnings: Vec<TsneWarning>,
}

/// Lays out every record of a dataset. Records are processed sorted by
/// `(subject_id, region)`, so the result does not depend on record order.
pub fn tsne_layout<T: Scalar>(ds: &Dataset, params: &TsneParams, monitor: &dyn Monitor) -> Result<DatasetLayout> {
    let order = ds.sorted_indices();
    let x = ds.matrix::<T>().select_rows(&order);
    let out = tsne_matrix(&x, params, monitor)?;
    let mut points: Vec<Option<LayoutPoint>> = vec![None; ds.len()];
    for (row, &rec_idx) in order.iter().enumerate() {
        let r = &ds.records()[rec_idx];
        let xy = out.layout.row(row);
        points[rec_idx] = Some(LayoutPoint {
            subject_id: r.subject_id.clone(),
            region: r.region,
            x: xy[0].as_f64(),
            y: xy[1].as_f64(),
        });
    }
    Ok(DatasetLayout {
        points: points.into_iter().map(|p| p.expect("every record placed")).collect(),
        kl_trace: out.kl_trace,
        exact: out.exact,
        warnings: out.warnings,
    })
}

/// `subject_id,region,x,y`
pub fn write_layout_csv<W: Write>(w: W, points: &[LayoutPoint]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["subject_id", "region", "x", "y"])?;
    for p in points {
        wr.write_record([p.subject_id.clone(), p.region.to_string(), p.x.to_string(), p.y.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_layout_csv<R: Read>(r: R) -> Result<Vec<LayoutPoint>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["subject_id", "region", "x", "y"] {
        return Err(Error::format("layout CSV header must be subject_id,region,x,y"));
    }
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::format(format!("layout row {}: bad coordinate `{s}`", i + 2)))
        };
        out.push(LayoutPoint {
            subject_id: row[0].to_string(),
            region: row[1].parse()?,
            x: num(&row[2])?,
            y: num(&row[3])?,
        });
    }
    Ok(out)
}

/// `iter,kl`
pub fn write_kl_trace_csv<W: Write>(w: W, trace: &[f64]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["iter", "kl"])?;
    for (i, kl) in trace.iter().enumerate() {
        wr.write_record([i.to_string(), kl.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}
