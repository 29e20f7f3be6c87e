//! KL objective and its gradient, exact and Barnes-Hut.

use rayon::prelude::*;

use super::affinity::AffinityMatrix;
use super::quadtree::QuadTree;
use crate::scalar::{Matrix, Scalar};
use crate::{Error, Result};

/// Gradient of `KL(P‖Q)` w.r.t. the layout plus the terms needed to evaluate
/// the objective without another pass over all pairs.
#[derive(Debug, Clone)]
pub struct GradientEval<T> {
    pub grad: Matrix<T>,
    /// Normalizer `Σ_{k≠l} w_kl` of the Student-t kernel (approximate under Barnes-Hut).
    pub z: f64,
    /// `Σ p_ij ln w_ij` over the non-zero entries of P.
    pub p_log_w: f64,
}

impl<T> GradientEval<T> {
    /// `KL(P‖Q) = Σ p ln p − Σ p ln w + ln Z`, given `Σ p ln p`.
    pub fn kl(&self, p_log_p: f64) -> f64 {
        (p_log_p - self.p_log_w + self.z.ln()).max(0.0)
    }
}

fn check_layout<T: Scalar>(p: &AffinityMatrix<T>, layout: &Matrix<T>) -> Result<()> {
    if layout.cols() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: layout.cols(),
            context: Some("layout columns".into()),
        });
    }
    if layout.rows() != p.n() {
        return Err(Error::DimensionMismatch {
            expected: p.n(),
            found: layout.rows(),
            context: Some("layout points vs affinity size".into()),
        });
    }
    Ok(())
}

#[inline]
fn kernel<T: Scalar>(a: &[T], b: &[T]) -> (T, T, T) {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (T::one() / (T::one() + dx * dx + dy * dy), dx, dy)
}

/// Attractive term `Σ_j p_ij w_ij (y_i − y_j)` and `Σ_j p_ij ln w_ij` for row `i`.
fn attraction<T: Scalar>(p: &AffinityMatrix<T>, y: &Matrix<T>, i: usize) -> ([T; 2], f64) {
    let yi = y.row(i);
    let mut f = [T::zero(); 2];
    let mut plw = 0.0f64;
    for (j, pij) in p.row(i) {
        let (w, dx, dy) = kernel(yi, y.row(j));
        f[0] += pij * w * dx;
        f[1] += pij * w * dy;
        plw += pij.as_f64() * w.as_f64().ln();
    }
    (f, plw)
}

fn assemble<T: Scalar>(
    n: usize,
    parts: Vec<([T; 2], [T; 2], T, f64)>,
    exaggeration: T,
) -> GradientEval<T> {
    // ordered reductions keep results independent of the worker count
    let z: f64 = parts.iter().map(|p| p.2.as_f64()).sum();
    let p_log_w: f64 = parts.iter().map(|p| p.3).sum();
    let zt = T::of(z);
    let four = T::of(4.0);
    let mut grad = Matrix::zeros(n, 2);
    for (i, (attr, rep, _, _)) in parts.into_iter().enumerate() {
        let g = grad.row_mut(i);
        g[0] = four * (exaggeration * attr[0] - rep[0] / zt);
        g[1] = four * (exaggeration * attr[1] - rep[1] / zt);
    }
    GradientEval { grad, z, p_log_w }
}

/// Exact O(N²) gradient with the attractive term scaled by `exaggeration`.
pub fn exact_gradient<T: Scalar>(
    p: &AffinityMatrix<T>,
    layout: &Matrix<T>,
    exaggeration: T,
) -> Result<GradientEval<T>> {
    check_layout(p, layout)?;
    let n = layout.rows();
    let parts: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| {
            let yi = layout.row(i);
            let mut z = T::zero();
            let mut rep = [T::zero(); 2];
            for j in 0..n {
                if j == i {
                    continue;
                }
                let (w, dx, dy) = kernel(yi, layout.row(j));
                z += w;
                rep[0] += w * w * dx;
                rep[1] += w * w * dy;
            }
            let (attr, plw) = attraction(p, layout, i);
            (attr, rep, z, plw)
        })
        .collect();
    Ok(assemble(n, parts, exaggeration))
}

/// Barnes-Hut gradient: exact attraction over the non-zeros of P, quadtree
/// approximation of the repulsion with opening criterion `cell_size / distance < theta`.
pub fn barnes_hut_gradient<T: Scalar>(
    p: &AffinityMatrix<T>,
    layout: &Matrix<T>,
    exaggeration: T,
    theta: T,
) -> Result<GradientEval<T>> {
    check_layout(p, layout)?;
    let n = layout.rows();
    let tree = QuadTree::build(layout.as_slice());
    let parts: Vec<_> = (0..n)
        .into_par_iter()
        .map(|i| {
            let r = tree.repulsion(i, theta);
            let (attr, plw) = attraction(p, layout, i);
            (attr, r.force, r.z, plw)
        })
        .collect();
    Ok(assemble(n, parts, exaggeration))
}

/// Exact `KL(P‖Q)` with Q the normalized Student-t similarities of the layout.
/// Rounding below zero is clamped.
pub fn kl_divergence<T: Scalar>(p: &AffinityMatrix<T>, layout: &Matrix<T>) -> Result<f64> {
    check_layout(p, layout)?;
    let n = layout.rows();
    let parts: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let yi = layout.row(i);
            let z: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| kernel(yi, layout.row(j)).0.as_f64())
                .sum();
            (z, attraction(p, layout, i).1)
        })
        .collect();
    let z: f64 = parts.iter().map(|x| x.0).sum();
    let plw: f64 = parts.iter().map(|x| x.1).sum();
    Ok((p.neg_entropy() - plw + z.ln()).max(0.0))
}
