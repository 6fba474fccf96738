//! Dense linear-algebra kernels shared across the crate: level norms and the
//! induced operator norms, SVD-based subspace machinery, a matrix exponential
//! with exact handling of nilpotent input, and deterministic low-discrepancy
//! sampling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm attached to one level of a tower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Euclidean,
    Max,
    /// Weighted euclidean norm `sqrt(sum (w_k x_k)^2)`, all weights > 0.
    Weighted(Vec<f64>),
}

impl NormKind {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if let NormKind::Weighted(w) = self {
            if w.len() != dim {
                return Err(Error::ShapeMismatch(format!(
                    "weight vector has length {} but level dim is {}",
                    w.len(),
                    dim
                )));
            }
            if w.iter().any(|&x| x <= 0.0) {
                return Err(Error::NonPositiveInput("norm weight".into()));
            }
        }
        Ok(())
    }

    pub fn vector_norm(&self, v: &DVector<f64>) -> f64 {
        match self {
            NormKind::Euclidean => v.norm(),
            NormKind::Max => v.iter().fold(0.0, |m, x| m.max(x.abs())),
            NormKind::Weighted(w) => v
                .iter()
                .zip(w.iter())
                .map(|(x, w)| (x * w) * (x * w))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Diagonal rescaling under which the norm becomes plain euclidean or max.
    fn scaling(&self, _dim: usize) -> (Shape, Option<DVector<f64>>) {
        match self {
            NormKind::Euclidean => (Shape::Euclidean, None),
            NormKind::Max => (Shape::Max, None),
            NormKind::Weighted(w) => (Shape::Euclidean, Some(DVector::from_vec(w.clone()))),
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Shape {
    Euclidean,
    Max,
}

fn rescale(m: &DMatrix<f64>, target_w: &Option<DVector<f64>>, source_w: &Option<DVector<f64>>) -> DMatrix<f64> {
    let mut out = m.clone();
    if let Some(w) = target_w {
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= w[i];
        }
    }
    if let Some(w) = source_w {
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col /= w[j];
        }
    }
    out
}

/// Exact operator norm of `m` from `(source norm)` to `(target norm)`.
///
/// Euclidean-to-euclidean is the largest singular value; the max-norm cases
/// reduce to row sums, row norms, or maximization over the hypercube vertices
/// (the unit ball of the max norm is a polytope, so the convex maximum is
/// attained at a vertex).
pub fn operator_norm(m: &DMatrix<f64>, source: &NormKind, target: &NormKind) -> f64 {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0.0;
    }
    let (s_shape, s_w) = source.scaling(m.ncols());
    let (t_shape, t_w) = target.scaling(m.nrows());
    let a = rescale(m, &t_w, &s_w);
    match (s_shape, t_shape) {
        (Shape::Euclidean, Shape::Euclidean) => sigma_max(&a),
        (Shape::Max, Shape::Max) => a
            .row_iter()
            .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
            .fold(0.0, f64::max),
        (Shape::Euclidean, Shape::Max) => a.row_iter().map(|r| r.norm()).fold(0.0, f64::max),
        (Shape::Max, Shape::Euclidean) => {
            // max over sign vertices; exact for moderate widths, sampled otherwise
            let n = a.ncols();
            if n <= 20 {
                let mut best: f64 = 0.0;
                for mask in 0u64..(1u64 << (n - 1)) {
                    let s = DVector::from_fn(n, |j, _| {
                        if j == 0 || mask >> (j - 1) & 1 == 0 {
                            1.0
                        } else {
                            -1.0
                        }
                    });
                    best = best.max((&a * s).norm());
                }
                best
            } else {
                let mut best: f64 = 0.0;
                let mut state = 0x9e3779b97f4a7c15u64;
                for _ in 0..20_000 {
                    let s = DVector::from_fn(n, |_, _| {
                        state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                        if state >> 63 == 0 {
                            1.0
                        } else {
                            -1.0
                        }
                    });
                    best = best.max((&a * s).norm());
                }
                best
            }
        }
    }
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    m.clone().svd(false, false).singular_values
}

pub fn sigma_max(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    singular_values(m).iter().fold(0.0f64, |a, &b| a.max(b))
}

/// Smallest singular value over `min(nrows, ncols)` values.
pub fn sigma_min(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    singular_values(m).iter().fold(f64::INFINITY, |a, &b| a.min(b))
}

pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    let top = sv.iter().fold(0.0f64, |a, &b| a.max(b));
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * top).count()
}

/// Moore-Penrose pseudoinverse with a relative singular-value cutoff.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(true, true);
    let top = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    let eps = rel_tol * top;
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let mut s_inv = DMatrix::zeros(vt.nrows(), u.ncols());
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > eps {
            s_inv[(i, i)] = 1.0 / s;
        }
    }
    vt.transpose() * s_inv * u.transpose()
}

/// Orthonormal basis of the column space (columns of the result).
pub fn column_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(true, false);
    let top = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    let eps = rel_tol * top;
    let u = svd.u.as_ref().unwrap();
    let cols: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > eps)
        .map(|(i, _)| i)
        .collect();
    let mut out = DMatrix::zeros(m.nrows(), cols.len());
    for (k, &i) in cols.iter().enumerate() {
        out.set_column(k, &u.column(i));
    }
    out
}

/// Orthonormal basis of the null space (columns of the result).
pub fn null_space(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = m.clone().svd(false, true);
    let top = svd.singular_values.iter().fold(0.0f64, |a, &b| a.max(b));
    let eps = rel_tol * top;
    let vt = svd.v_t.as_ref().unwrap();
    let r = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let n = m.ncols();
    if vt.nrows() < n {
        // wide matrix: the thin SVD does not carry the kernel rows of V^T,
        // take the orthogonal complement of the row space instead
        let row_space = column_space(&m.transpose(), rel_tol);
        let proj = &row_space * row_space.transpose();
        let complement = DMatrix::identity(n, n) - proj;
        return column_space(&complement, 1e-8);
    }
    let mut out = DMatrix::zeros(n, n - r);
    for k in r..n {
        out.set_column(k - r, &vt.row(k).transpose());
    }
    out
}

/// Residual of `v` against the column space of `basis` (orthonormal columns).
pub fn projection_residual(basis: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    if basis.ncols() == 0 {
        return v.norm();
    }
    (v - basis * (basis.transpose() * v)).norm()
}

// Pade-13 coefficients for the scaling-and-squaring exponential.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Matrix exponential.
///
/// Nilpotent input (some power is exactly zero) is summed as the exact
/// truncated series; everything else goes through Pade-13 scaling and
/// squaring.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm needs a square matrix");
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    // exact nilpotent path
    let mut power = a.clone();
    let mut result = DMatrix::identity(n, n);
    let mut factorial = 1.0;
    for k in 1..=n {
        factorial *= k as f64;
        if power.iter().all(|&x| x == 0.0) {
            return result;
        }
        result += &power / factorial;
        power = &power * a;
    }
    if power.iter().all(|&x| x == 0.0) {
        return result;
    }

    let norm1 = a
        .column_iter()
        .map(|c| c.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let theta13 = 5.371920351148152;
    let s = if norm1 > theta13 {
        (norm1 / theta13).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(s);
    let mut e = pade13(&scaled);
    for _ in 0..s {
        e = &e * &e;
    }
    e
}

fn pade13(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let id = DMatrix::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let b = &PADE13;
    let u = a * (&a6 * (b[13] * &a6 + b[11] * &a4 + b[9] * &a2)
        + b[7] * &a6
        + b[5] * &a4
        + b[3] * &a2
        + b[1] * &id);
    let v = &a6 * (b[12] * &a6 + b[10] * &a4 + b[8] * &a2)
        + b[6] * &a6
        + b[4] * &a4
        + b[2] * &a2
        + b[0] * &id;
    let lhs = &v - &u;
    let rhs = &v + &u;
    lhs.lu().solve(&rhs).expect("pade denominator is singular")
}

/// Van der Corput radical inverse in the given base.
fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

const PRIMES: [usize; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

/// `count` Halton points in the box `center +- halfwidth` (componentwise).
pub fn halton_box(center: &DVector<f64>, halfwidth: f64, count: usize) -> Vec<DVector<f64>> {
    let dim = center.len();
    (1..=count)
        .map(|i| {
            DVector::from_fn(dim, |j, _| {
                let u = radical_inverse(i, PRIMES[j % PRIMES.len()]);
                center[j] + halfwidth * (2.0 * u - 1.0)
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn operator_norm_euclidean_is_sigma_max() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        assert_relative_eq!(
            operator_norm(&m, &NormKind::Euclidean, &NormKind::Euclidean),
            3.0
        );
    }

    #[test]
    fn operator_norm_max_to_max_is_row_sum() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 0.5]);
        assert_relative_eq!(operator_norm(&m, &NormKind::Max, &NormKind::Max), 3.0);
    }

    #[test]
    fn operator_norm_max_to_euclidean_vertex_enumeration() {
        // sup over the square's vertices of ||(x+y, x-y)||: attained at (1,1) with value 2
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, -1.0]);
        assert_relative_eq!(
            operator_norm(&m, &NormKind::Max, &NormKind::Euclidean),
            2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn weighted_norm_rescales() {
        let m = DMatrix::from_row_slice(1, 1, &[1.0]);
        let src = NormKind::Weighted(vec![2.0]);
        // ||x||_src = 2|x|, so unit ball is |x| <= 1/2 and the norm halves
        assert_relative_eq!(operator_norm(&m, &src, &NormKind::Euclidean), 0.5);
    }

    #[test]
    fn expm_nilpotent_exact() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 0.0, 0.0]);
        let e = expm(&a);
        assert_eq!(e, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]));
    }

    #[test]
    fn expm_diagonal() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let e = expm(&a);
        assert_relative_eq!(e[(0, 0)], 1f64.exp(), epsilon = 1e-12);
        assert_relative_eq!(e[(1, 1)], (-0.5f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(e[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn expm_matches_series_for_random_small() {
        let a = DMatrix::from_row_slice(3, 3, &[0.3, -0.2, 0.1, 0.0, 0.4, 0.25, -0.1, 0.2, -0.3]);
        let mut series = DMatrix::identity(3, 3);
        let mut term = DMatrix::identity(3, 3);
        for k in 1..30 {
            term = &term * &a / k as f64;
            series += &term;
        }
        let e = expm(&a);
        assert_relative_eq!((e - series).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn null_space_of_projection() {
        let m = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let ns = null_space(&m, 1e-10);
        assert_eq!(ns.ncols(), 1);
        assert_relative_eq!(ns[(0, 0)].abs(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(ns[(1, 0)].abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn pinv_left_inverse_of_injective() {
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let p = pinv(&m, 1e-12);
        let prod = p * &m;
        assert_relative_eq!((prod - DMatrix::identity(2, 2)).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn halton_points_stay_in_box() {
        let c = DVector::from_vec(vec![1.0, -1.0]);
        for p in halton_box(&c, 0.5, 100) {
            assert!((p[0] - 1.0).abs() <= 0.5);
            assert!((p[1] + 1.0).abs() <= 0.5);
        }
    }
}
