//! Unipotent matrix group towers. Level i is the group of (i+2)x(i+2)
//! upper-triangular matrices with unit diagonal, coordinatized by the
//! strictly-upper entries; bondings truncate to the top-left corner, which
//! is a group homomorphism. A chosen subalgebra tower induces a
//! left-invariant anchored structure whose exponentials are polynomial.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::algebroid::{AlgebroidTower, AnchorMap, AnchoredLevel};
use crate::error::{Error, Result};
use crate::linalg;
use crate::tower::{make_tower, BanachLevel, BondingMap, Tower};

/// Subalgebra closure tolerance.
pub const SUBALGEBRA_TOL: f64 = 1e-10;
pub const MAX_GROUP_DEPTH: usize = 5;
/// Chart half-width around the identity in strict-entry coordinates.
pub const GROUP_CHART_HALFWIDTH: f64 = 0.9;

/// Strictly-upper entry positions of an s x s matrix, row-major.
pub fn strict_positions(s: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(s * (s - 1) / 2);
    for r in 0..s {
        for c in (r + 1)..s {
            out.push((r, c));
        }
    }
    out
}

pub fn strict_dim(s: usize) -> usize {
    s * (s - 1) / 2
}

/// Group element from strict-entry coordinates.
pub fn matrix_from_coords(s: usize, z: &DVector<f64>) -> DMatrix<f64> {
    let mut g = DMatrix::identity(s, s);
    for (k, &(r, c)) in strict_positions(s).iter().enumerate() {
        g[(r, c)] = z[k];
    }
    g
}

/// Strict-entry coordinates of an upper-triangular matrix (diagonal
/// ignored).
pub fn coords_from_matrix(m: &DMatrix<f64>) -> DVector<f64> {
    let s = m.nrows();
    let pos = strict_positions(s);
    DVector::from_fn(pos.len(), |k, _| m[pos[k]])
}

/// Nilpotent matrix exponential; the series terminates.
pub fn nilpotent_exp(n: &DMatrix<f64>) -> DMatrix<f64> {
    let s = n.nrows();
    let mut out = DMatrix::identity(s, s);
    let mut term = DMatrix::identity(s, s);
    for j in 1..s {
        term = (&term * n) / (j as f64);
        if term.amax() == 0.0 {
            break;
        }
        out += &term;
    }
    out
}

/// Inverse of a unipotent matrix; the Neumann series terminates.
pub fn unipotent_inverse(g: &DMatrix<f64>) -> DMatrix<f64> {
    let s = g.nrows();
    let n = g - DMatrix::identity(s, s);
    let mut out = DMatrix::identity(s, s);
    let mut term = DMatrix::identity(s, s);
    for _ in 1..s {
        term *= -&n;
        if term.amax() == 0.0 {
            break;
        }
        out += &term;
    }
    out
}

/// Corner truncation in strict-entry coordinates: level i+1 to level i.
pub fn truncation_matrix(s_to: usize, s_from: usize) -> DMatrix<f64> {
    let pos_to = strict_positions(s_to);
    let pos_from = strict_positions(s_from);
    let mut m = DMatrix::zeros(pos_to.len(), pos_from.len());
    for (row, &(r, c)) in pos_to.iter().enumerate() {
        let col = pos_from.iter().position(|&p| p == (r, c)).unwrap();
        m[(row, col)] = 1.0;
    }
    m
}

/// Which subalgebra tower to run through the anchored machinery.
#[derive(Debug, Clone)]
pub enum SubalgebraSpec {
    /// The whole strictly-upper algebra.
    Full,
    /// First-row generators E_{0,c}; abelian.
    FirstRow,
    /// Explicit per-level generator coordinates (level 0 first).
    Span(Vec<Vec<DVector<f64>>>),
}

/// The group side of the fixture.
#[derive(Debug, Clone)]
pub struct GroupTower {
    /// Matrix sizes per level, i + 2.
    pub sizes: Vec<usize>,
    /// Strict-entry coordinate tower.
    pub coord_tower: Tower,
    /// Matrix-form subalgebra bases per level.
    pub h_bases: Vec<Vec<DMatrix<f64>>>,
    /// Coefficient tower of the subalgebras.
    pub h_tower: Tower,
}

fn basis_matrices(size: usize, spec: &SubalgebraSpec, level: usize) -> Result<Vec<DMatrix<f64>>> {
    match spec {
        SubalgebraSpec::Full => Ok(strict_positions(size)
            .iter()
            .map(|&(r, c)| {
                let mut e = DMatrix::zeros(size, size);
                e[(r, c)] = 1.0;
                e
            })
            .collect()),
        SubalgebraSpec::FirstRow => Ok((1..size)
            .map(|c| {
                let mut e = DMatrix::zeros(size, size);
                e[(0, c)] = 1.0;
                e
            })
            .collect()),
        SubalgebraSpec::Span(levels) => {
            let gens = levels.get(level).ok_or_else(|| {
                Error::ShapeMismatch(format!("no generators for level {}", level))
            })?;
            gens.iter()
                .map(|z| {
                    if z.len() != strict_dim(size) {
                        return Err(Error::ShapeMismatch("generator coordinate dim".into()));
                    }
                    Ok(matrix_from_coords(size, z) - DMatrix::identity(size, size))
                })
                .collect()
        }
    }
}

/// Expands commutators of the basis in the basis itself; rejects the spec if
/// a commutator escapes the span.
fn structure_tensors(basis: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    let dim = basis.len();
    if dim == 0 {
        return Ok(Vec::new());
    }
    let s = basis[0].nrows();
    let mut bmat = DMatrix::zeros(strict_dim(s), dim);
    for (a, h) in basis.iter().enumerate() {
        bmat.set_column(a, &coords_from_matrix(h));
    }
    let pinv = linalg::pinv(&bmat, 1e-12);
    let mut tensors = vec![DMatrix::zeros(dim, dim); dim];
    for a in 0..dim {
        for b in 0..dim {
            let comm = &basis[a] * &basis[b] - &basis[b] * &basis[a];
            let target = coords_from_matrix(&comm);
            let coeffs = &pinv * &target;
            let recon = &bmat * &coeffs;
            let defect = (&recon - &target).norm();
            if defect > SUBALGEBRA_TOL {
                return Err(Error::NotASubalgebra(defect));
            }
            for k in 0..dim {
                tensors[k][(a, b)] = coeffs[k];
            }
        }
    }
    Ok(tensors)
}

/// Builds the group tower and its left-invariant anchored tower. The anchor
/// columns are g(z) h_a in strict-entry coordinates (affine in z); the frame
/// weight is left translation back to the identity, making the anchor norm
/// base-independent.
pub fn build_group_tower(
    depth: usize,
    spec: &SubalgebraSpec,
) -> Result<(GroupTower, AlgebroidTower)> {
    if depth > MAX_GROUP_DEPTH {
        return Err(Error::DepthTooLarge(depth));
    }
    let n_levels = depth + 1;
    let sizes: Vec<usize> = (0..n_levels).map(|i| i + 2).collect();

    let mut coord_levels = Vec::with_capacity(n_levels);
    let mut coord_bondings = Vec::with_capacity(depth);
    for (i, &s) in sizes.iter().enumerate() {
        coord_levels.push(BanachLevel::euclidean(i, strict_dim(s)));
    }
    for i in 0..depth {
        coord_bondings.push(BondingMap::new(i, truncation_matrix(sizes[i], sizes[i + 1])));
    }
    let coord_tower = make_tower(coord_levels, coord_bondings)?;

    let mut h_bases = Vec::with_capacity(n_levels);
    for (i, &s) in sizes.iter().enumerate() {
        h_bases.push(basis_matrices(s, spec, i)?);
    }

    // coefficient bondings: truncate a generator, re-expand below
    let mut h_levels = Vec::with_capacity(n_levels);
    let mut h_bondings = Vec::with_capacity(depth);
    for (i, basis) in h_bases.iter().enumerate() {
        h_levels.push(BanachLevel::euclidean(i, basis.len()));
    }
    for i in 0..depth {
        let lower = &h_bases[i];
        let upper = &h_bases[i + 1];
        let s_lo = sizes[i];
        let mut lower_mat = DMatrix::zeros(strict_dim(s_lo), lower.len());
        for (a, h) in lower.iter().enumerate() {
            lower_mat.set_column(a, &coords_from_matrix(h));
        }
        let pinv = linalg::pinv(&lower_mat, 1e-12);
        let mut bond = DMatrix::zeros(lower.len(), upper.len());
        for (b, h) in upper.iter().enumerate() {
            let corner = h.view((0, 0), (s_lo, s_lo)).into_owned();
            let target = coords_from_matrix(&corner);
            let coeffs = &pinv * &target;
            if (&lower_mat * &coeffs - &target).norm() > SUBALGEBRA_TOL {
                return Err(Error::NotASubalgebra(
                    (&lower_mat * &coeffs - &target).norm(),
                ));
            }
            bond.set_column(b, &coeffs);
        }
        h_bondings.push(BondingMap::new(i, bond));
    }
    let h_tower = make_tower(h_levels, h_bondings)?;

    let mut anchored = Vec::with_capacity(n_levels);
    for (i, &s) in sizes.iter().enumerate() {
        let basis = &h_bases[i];
        let d = strict_dim(s);
        let fdim = basis.len();
        let mut constant = DMatrix::zeros(d, fdim);
        for (a, h) in basis.iter().enumerate() {
            constant.set_column(a, &coords_from_matrix(h));
        }
        let positions = strict_positions(s);
        let mut linear = Vec::with_capacity(d);
        for &(r, c) in &positions {
            let mut e = DMatrix::zeros(s, s);
            e[(r, c)] = 1.0;
            let mut lk = DMatrix::zeros(d, fdim);
            for (a, h) in basis.iter().enumerate() {
                lk.set_column(a, &coords_from_matrix(&(&e * h)));
            }
            linear.push(lk);
        }
        let structure = structure_tensors(basis)?;
        let size = s;
        let frame: crate::algebroid::FrameFn = Arc::new(move |z: &DVector<f64>| {
            let ginv = unipotent_inverse(&matrix_from_coords(size, z));
            let pos = strict_positions(size);
            let d = pos.len();
            let mut w = DMatrix::zeros(d, d);
            for (col, &(r, c)) in pos.iter().enumerate() {
                let mut e = DMatrix::zeros(size, size);
                e[(r, c)] = 1.0;
                w.set_column(col, &coords_from_matrix(&(&ginv * e)));
            }
            w
        });
        anchored.push(AnchoredLevel::new(
            d,
            fdim,
            DVector::zeros(d),
            GROUP_CHART_HALFWIDTH,
            AnchorMap::Affine { constant, linear },
            structure,
            Some(frame),
        )?);
    }

    let algebroid = AlgebroidTower::new(coord_tower.clone(), h_tower.clone(), anchored)?;
    Ok((
        GroupTower {
            sizes,
            coord_tower,
            h_bases,
            h_tower,
        },
        algebroid,
    ))
}

/// Max defect of the homomorphism law truncate(gh) = truncate(g)truncate(h)
/// over sampled pairs.
pub fn homomorphism_defect(gt: &GroupTower, samples: usize) -> f64 {
    let mut defect = 0.0f64;
    for i in 0..gt.sizes.len() - 1 {
        let s_hi = gt.sizes[i + 1];
        let s_lo = gt.sizes[i];
        let d = strict_dim(s_hi);
        let pts = linalg::halton_box(&DVector::zeros(d), 1.0, 2 * samples);
        for pair in pts.chunks_exact(2) {
            let g = matrix_from_coords(s_hi, &pair[0]);
            let h = matrix_from_coords(s_hi, &pair[1]);
            let prod = &g * &h;
            let lhs = prod.view((0, 0), (s_lo, s_lo)).into_owned();
            let rhs = g.view((0, 0), (s_lo, s_lo)).into_owned()
                * h.view((0, 0), (s_lo, s_lo)).into_owned();
            defect = defect.max((lhs - rhs).amax());
        }
    }
    defect
}

/// Max defect of truncate(exp(N)) = exp(truncate(N)) over sampled algebra
/// points; exact for nilpotent towers.
pub fn exp_coherence_defect(gt: &GroupTower, samples: usize) -> f64 {
    let mut defect = 0.0f64;
    for i in 0..gt.sizes.len() - 1 {
        let s_hi = gt.sizes[i + 1];
        let s_lo = gt.sizes[i];
        let d = strict_dim(s_hi);
        for z in linalg::halton_box(&DVector::zeros(d), 1.0, samples) {
            let n = matrix_from_coords(s_hi, &z) - DMatrix::identity(s_hi, s_hi);
            let big = nilpotent_exp(&n);
            let lhs = big.view((0, 0), (s_lo, s_lo)).into_owned();
            let rhs = nilpotent_exp(&n.view((0, 0), (s_lo, s_lo)).into_owned());
            defect = defect.max((lhs - rhs).amax());
        }
    }
    defect
}
