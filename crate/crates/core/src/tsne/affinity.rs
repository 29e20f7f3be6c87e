//! Perplexity-calibrated input affinities.

use rayon::prelude::*;

use crate::scalar::{sq_dist, Matrix, Scalar};
use crate::{Error, Result};

/// Symmetric joint probabilities over point pairs.
///
/// Dense storage is used for the exact gradient; the sparse (CSR) form holds
/// the symmetrized k-nearest-neighbour affinities used by Barnes-Hut.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix<T> {
    n: usize,
    storage: Storage<T>,
}

#[derive(Debug, Clone, PartialEq)]
enum Storage<T> {
    Dense(Vec<T>),
    Sparse {
        row_ptr: Vec<usize>,
        cols: Vec<usize>,
        vals: Vec<T>,
    },
}

impl<T: Scalar> AffinityMatrix<T> {
    /// Builds a dense matrix from a full `n × n` buffer. No normalization is applied.
    pub fn from_dense(n: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: data.len(),
                context: Some("dense affinity buffer".into()),
            });
        }
        Ok(AffinityMatrix {
            n,
            storage: Storage::Dense(data),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse { .. })
    }

    pub fn nnz(&self) -> usize {
        match &self.storage {
            Storage::Dense(d) => d.iter().filter(|v| **v > T::zero()).count(),
            Storage::Sparse { vals, .. } => vals.len(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        match &self.storage {
            Storage::Dense(d) => d[i * self.n + j],
            Storage::Sparse { row_ptr, cols, vals } => {
                let lo = row_ptr[i];
                let hi = row_ptr[i + 1];
                match cols[lo..hi].binary_search(&j) {
                    Ok(k) => vals[lo + k],
                    Err(_) => T::zero(),
                }
            }
        }
    }

    /// Non-zero `(j, p_ij)` entries of row `i`, by ascending `j`.
    pub fn row(&self, i: usize) -> RowIter<'_, T> {
        match &self.storage {
            Storage::Dense(d) => RowIter::Dense {
                row: &d[i * self.n..(i + 1) * self.n],
                j: 0,
            },
            Storage::Sparse { row_ptr, cols, vals } => {
                let (lo, hi) = (row_ptr[i], row_ptr[i + 1]);
                RowIter::Sparse {
                    cols: &cols[lo..hi],
                    vals: &vals[lo..hi],
                    k: 0,
                }
            }
        }
    }

    /// Sum of all entries, accumulated in f64 row by row.
    pub fn total(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row(i).map(|(_, p)| p.as_f64()).sum::<f64>())
            .sum()
    }

    /// Largest `|p_ij − p_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for (j, p) in self.row(i) {
                worst = worst.max((p - self.get(j, i)).abs().as_f64());
            }
        }
        worst
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.n * self.n];
        for i in 0..self.n {
            for (j, p) in self.row(i) {
                out[i * self.n + j] = p;
            }
        }
        out
    }

    /// Sum of `p ln p` over non-zero entries.
    pub(crate) fn neg_entropy(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                self.row(i)
                    .map(|(_, p)| {
                        let p = p.as_f64();
                        p * p.ln()
                    })
                    .sum::<f64>()
            })
            .sum()
    }
}

pub enum RowIter<'a, T> {
    Dense { row: &'a [T], j: usize },
    Sparse { cols: &'a [usize], vals: &'a [T], k: usize },
}

impl<T: Scalar> Iterator for RowIter<'_, T> {
    type Item = (usize, T);

    fn next(&mut self) -> Option<(usize, T)> {
        match self {
            RowIter::Dense { row, j } => {
                while *j < row.len() {
                    let cur = *j;
                    *j += 1;
                    if row[cur] > T::zero() {
                        return Some((cur, row[cur]));
                    }
                }
                None
            }
            RowIter::Sparse { cols, vals, k } => {
                let cur = *k;
                if cur < cols.len() {
                    *k += 1;
                    Some((cols[cur], vals[cur]))
                } else {
                    None
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationParams {
    pub perplexity: f64,
    /// Tolerance on |log2(perplexity) − log2(target)|.
    pub tol: f64,
    pub max_bisect: usize,
}

impl CalibrationParams {
    pub fn new(perplexity: f64) -> Self {
        CalibrationParams {
            perplexity,
            tol: 1e-5,
            max_bisect: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CalibrationWarning {
    /// Bisection hit its iteration cap; `perplexity` is what the row achieved.
    NotConverged { point: usize, perplexity: f64 },
    /// The row has at least `perplexity` exact duplicates; its conditional is
    /// uniform over them and bisection was skipped.
    Duplicates { point: usize, count: usize },
}

#[derive(Debug, Clone)]
pub struct Calibration<T> {
    pub affinities: AffinityMatrix<T>,
    /// Per-point Gaussian precision (`f64::INFINITY` for duplicate-collapsed rows).
    pub betas: Vec<f64>,
    /// Achieved perplexity of each conditional row.
    pub perplexities: Vec<f64>,
    pub warnings: Vec<CalibrationWarning>,
}

/// Conditional probabilities `p_{j|i} ∝ exp(−β d_j)` over squared distances.
/// Distances are shifted by their minimum so the largest weight is exactly 1.
pub fn conditional_row(sq_dists: &[f64], beta: f64) -> Vec<f64> {
    let dmin = sq_dists.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = sq_dists
        .iter()
        .map(|&d| {
            let s = d - dmin;
            if s == 0.0 {
                1.0
            } else {
                (-beta * s).exp()
            }
        })
        .collect();
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Shannon entropy in bits.
pub fn entropy_bits(probs: &[f64]) -> f64 {
    -probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.log2())
        .sum::<f64>()
}

pub fn row_perplexity(probs: &[f64]) -> f64 {
    entropy_bits(probs).exp2()
}

pub(crate) struct RowCalibration {
    pub probs: Vec<f64>,
    pub beta: f64,
    pub perplexity: f64,
    pub warning: Option<CalibrationWarning>,
}

/// Bisection on β for a single row of squared distances to its candidate neighbours.
pub(crate) fn calibrate_row(point: usize, sq_dists: &[f64], params: &CalibrationParams) -> RowCalibration {
    let zeros = sq_dists.iter().filter(|&&d| d == 0.0).count();
    if zeros > 0 && zeros as f64 >= params.perplexity {
        let u = 1.0 / zeros as f64;
        let probs = sq_dists.iter().map(|&d| if d == 0.0 { u } else { 0.0 }).collect();
        return RowCalibration {
            probs,
            beta: f64::INFINITY,
            perplexity: zeros as f64,
            warning: Some(CalibrationWarning::Duplicates { point, count: zeros }),
        };
    }

    let target = params.perplexity.log2();
    let dmin = sq_dists.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean_shift = sq_dists.iter().map(|d| d - dmin).sum::<f64>() / sq_dists.len() as f64;
    let mut beta = if mean_shift > 0.0 { 1.0 / mean_shift } else { 1.0 };
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);

    let mut probs = conditional_row(sq_dists, beta);
    let mut h = entropy_bits(&probs);
    let mut converged = (h - target).abs() <= params.tol;
    let mut steps = 0;
    while !converged && steps < params.max_bisect {
        if h > target {
            lo = beta;
            beta = if hi.is_infinite() { beta * 2.0 } else { 0.5 * (beta + hi) };
        } else {
            hi = beta;
            beta = 0.5 * (lo + beta);
        }
        probs = conditional_row(sq_dists, beta);
        h = entropy_bits(&probs);
        converged = (h - target).abs() <= params.tol;
        steps += 1;
    }
    let perplexity = h.exp2();
    RowCalibration {
        probs,
        beta,
        perplexity,
        warning: (!converged).then_some(CalibrationWarning::NotConverged { point, perplexity }),
    }
}

fn check_input<T: Scalar>(x: &Matrix<T>, params: &CalibrationParams) -> Result<()> {
    let n = x.rows();
    if n < 3 {
        return Err(Error::invalid(format!("need at least 3 points, found {n}")));
    }
    if !(params.perplexity >= 1.0 && params.perplexity < n as f64) {
        return Err(Error::invalid(format!(
            "perplexity {} must lie in [1, N={n})",
            params.perplexity
        )));
    }
    if x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("input contains non-finite values"));
    }
    Ok(())
}

/// Dense calibration over all pairs: `p_ij = (p_{j|i} + p_{i|j}) / 2N`.
pub fn calibrate_affinities<T: Scalar>(x: &Matrix<T>, params: &CalibrationParams) -> Result<Calibration<T>> {
    check_input(x, params)?;
    let n = x.rows();
    let rows: Vec<(RowCalibration, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            let d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| sq_dist(xi, x.row(j)).as_f64())
                .collect();
            let cal = calibrate_row(i, &d, params);
            // reinsert the diagonal
            let mut full = Vec::with_capacity(n);
            full.extend_from_slice(&cal.probs[..i]);
            full.push(0.0);
            full.extend_from_slice(&cal.probs[i..]);
            (cal, full)
        })
        .collect();

    let denom = 2.0 * n as f64;
    let mut data = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                data[i * n + j] = T::of((rows[i].1[j] + rows[j].1[i]) / denom);
            }
        }
    }
    Ok(finish(n, Storage::Dense(data), rows.into_iter().map(|(c, _)| c)))
}

/// The `k` nearest neighbours of every point (ties broken by index), brute force.
pub fn nearest_neighbors<T: Scalar>(x: &Matrix<T>, k: usize) -> Vec<Vec<(usize, f64)>> {
    let n = x.rows();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (sq_dist(xi, x.row(j)).as_f64(), j))
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k < d.len() {
                d.select_nth_unstable_by(k, cmp);
                d.truncate(k);
            }
            d.sort_unstable_by(cmp);
            d.into_iter().map(|(dist, j)| (j, dist)).collect()
        })
        .collect()
}

/// Sparse calibration over each point's `k` nearest neighbours, symmetrized as in
/// the dense case.
pub fn calibrate_sparse_affinities<T: Scalar>(
    x: &Matrix<T>,
    params: &CalibrationParams,
    k: usize,
) -> Result<Calibration<T>> {
    check_input(x, params)?;
    let n = x.rows();
    let k = k.clamp(1, n - 1);
    let knn = nearest_neighbors(x, k);
    let rows: Vec<RowCalibration> = knn
        .par_iter()
        .enumerate()
        .map(|(i, nb)| {
            let d: Vec<f64> = nb.iter().map(|&(_, d)| d).collect();
            calibrate_row(i, &d, params)
        })
        .collect();

    let denom = 2.0 * n as f64;
    let mut triplets: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, (nb, cal)) in knn.iter().zip(&rows).enumerate() {
        for (&(j, _), &p) in nb.iter().zip(&cal.probs) {
            if p > 0.0 {
                triplets[i].push((j, p / denom));
                triplets[j].push((i, p / denom));
            }
        }
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for mut t in triplets {
        t.sort_by_key(|&(j, _)| j);
        let mut iter = t.into_iter().peekable();
        while let Some((j, mut p)) = iter.next() {
            while let Some(&(j2, p2)) = iter.peek() {
                if j2 != j {
                    break;
                }
                p += p2;
                iter.next();
            }
            cols.push(j);
            vals.push(T::of(p));
        }
        row_ptr.push(cols.len());
    }
    Ok(finish(n, Storage::Sparse { row_ptr, cols, vals }, rows.into_iter()))
}

fn finish<T: Scalar>(
    n: usize,
    storage: Storage<T>,
    rows: impl Iterator<Item = RowCalibration>,
) -> Calibration<T> {
    let mut betas = Vec::with_capacity(n);
    let mut perplexities = Vec::with_capacity(n);
    let mut warnings = Vec::new();
    for r in rows {
        betas.push(r.beta);
        perplexities.push(r.perplexity);
        warnings.extend(r.warning);
    }
    Calibration {
        affinities: AffinityMatrix { n, storage },
        betas,
        perplexities,
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, d: usize, seed: u64) -> Matrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        Matrix::from_vec(n, d, data).unwrap()
    }

    #[test]
    fn equidistant_points_give_uniform_conditionals() {
        // unit vectors: every pairwise squared distance is exactly 2
        let x = Matrix::<f64>::from_rows(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        for perp in [1.0, 1.5, 2.0, 2.9] {
            let cal = calibrate_affinities(&x, &CalibrationParams::new(perp)).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    let expected = if i == j { 0.0 } else { 1.0 / 6.0 };
                    assert!((cal.affinities.get(i, j) - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn calibrated_rows_hit_target() {
        let x = gaussian(60, 5, 3);
        let params = CalibrationParams::new(10.0);
        let cal = calibrate_affinities(&x, &params).unwrap();
        assert!(cal.warnings.is_empty());
        for (i, beta) in cal.betas.iter().enumerate() {
            let xi = x.row(i);
            let d: Vec<f64> = (0..60).filter(|&j| j != i).map(|j| sq_dist(xi, x.row(j))).collect();
            let p = conditional_row(&d, *beta);
            assert!((entropy_bits(&p) - 10f64.log2()).abs() <= params.tol);
        }
    }

    #[test]
    fn dense_matches_direct_recomputation() {
        let x = gaussian(10, 3, 11);
        let cal = calibrate_affinities(&x, &CalibrationParams::new(5.0)).unwrap();
        let p = &cal.affinities;
        assert!((p.total() - 1.0).abs() < 1e-9);
        assert!(p.max_asymmetry() < 1e-15);

        // independent recomputation from the calibrated betas
        let n = 10;
        let mut cond = vec![vec![0.0; n]; n];
        for i in 0..n {
            let w: Vec<f64> = (0..n)
                .map(|j| if i == j { 0.0 } else { (-cal.betas[i] * sq_dist(x.row(i), x.row(j))).exp() })
                .collect();
            let s: f64 = w.iter().sum();
            for j in 0..n {
                cond[i][j] = w[j] / s;
            }
        }
        for i in 0..n {
            assert_eq!(p.get(i, i), 0.0);
            for j in 0..n {
                let direct = (cond[i][j] + cond[j][i]) / (2.0 * n as f64);
                assert!((p.get(i, j) - direct).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    #[test]
    fn sparse_is_normalized_and_symmetric() {
        let x = gaussian(200, 4, 5);
        let cal = calibrate_sparse_affinities(&x, &CalibrationParams::new(10.0), 30).unwrap();
        assert!(cal.affinities.is_sparse());
        assert!((cal.affinities.total() - 1.0).abs() < 1e-9);
        assert!(cal.affinities.max_asymmetry() < 1e-15);
        for i in 0..200 {
            assert_eq!(cal.affinities.get(i, i), 0.0);
        }
    }

    #[test]
    fn sparse_with_all_neighbours_equals_dense() {
        let x = gaussian(25, 3, 8);
        let params = CalibrationParams::new(6.0);
        let dense = calibrate_affinities(&x, &params).unwrap();
        let sparse = calibrate_sparse_affinities(&x, &params, 24).unwrap();
        let (a, b) = (dense.affinities.to_dense(), sparse.affinities.to_dense());
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_points_are_uniform_without_crash() {
        let x = Matrix::<f64>::from_rows(&[[1.0, 1.0]; 6]).unwrap();
        let cal = calibrate_affinities(&x, &CalibrationParams::new(3.0)).unwrap();
        assert_eq!(cal.warnings.len(), 6);
        assert!(matches!(cal.warnings[0], CalibrationWarning::Duplicates { count: 5, .. }));
        for i in 0..6 {
            for j in 0..6 {
                let expected = if i == j { 0.0 } else { 1.0 / 30.0 };
                assert!((cal.affinities.get(i, j) - expected).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn few_duplicates_still_bisect() {
        let mut rows = vec![[0.0, 0.0], [0.0, 0.0]];
        rows.extend((1..20).map(|i| [i as f64, (i * i) as f64 * 0.1]));
        let x = Matrix::from_rows(&rows).unwrap();
        let cal = calibrate_affinities(&x, &CalibrationParams::new(5.0)).unwrap();
        assert!(cal.warnings.is_empty());
        assert!(cal.affinities.as_finite());
    }

    #[test]
    fn rejects_bad_perplexity() {
        let x = gaussian(5, 2, 0);
        assert!(calibrate_affinities(&x, &CalibrationParams::new(5.0)).is_err());
        assert!(calibrate_affinities(&x.select_rows(&[0, 1]), &CalibrationParams::new(1.0)).is_err());
    }

    impl AffinityMatrix<f64> {
        fn as_finite(&self) -> bool {
            self.to_dense().iter().all(|v| v.is_finite())
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        // entropy is non-increasing in beta
        #[test]
        fn entropy_monotone_in_beta(
            d in proptest::collection::vec(0.0f64..50.0, 2..40),
            b1 in 1e-4f64..10.0,
            factor in 1.0f64..10.0,
        ) {
            let h1 = entropy_bits(&conditional_row(&d, b1));
            let h2 = entropy_bits(&conditional_row(&d, b1 * factor));
            prop_assert!(h2 <= h1 + 1e-12);
        }
    }
}
