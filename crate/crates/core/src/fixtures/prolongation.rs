//! Tangent prolongation towers. Each step replaces the anchored bundle by
//! its tangent: base dims grow by the fiber dim, fiber dims double, and the
//! anchor acts blockwise as (b, c) -> (rho(x) b, c). The level operator
//! norms therefore never exceed sup(seed norm, 1).

use nalgebra::{DMatrix, DVector};

use crate::algebroid::{AlgebroidTower, AnchorMap, AnchoredLevel};
use crate::error::{Error, Result};
use crate::tower::{make_tower, BanachLevel, BondingMap};

pub const MAX_PROLONGATION_DEPTH: usize = 5;
pub const PROLONGATION_CHART_HALFWIDTH: f64 = 1.0;

/// The level-0 data; the anchor may be constant or affine in the base.
#[derive(Debug, Clone)]
pub struct SeedAlgebroid {
    pub base_dim: usize,
    pub fiber_dim: usize,
    pub anchor: AnchorMap,
    /// Antisymmetric structure tensors, one per fiber coordinate.
    pub structure: Vec<DMatrix<f64>>,
}

impl SeedAlgebroid {
    /// Constant-anchor seed with an abelian bracket.
    pub fn constant(anchor: DMatrix<f64>) -> Self {
        let base_dim = anchor.nrows();
        let fiber_dim = anchor.ncols();
        SeedAlgebroid {
            base_dim,
            fiber_dim,
            anchor: AnchorMap::Constant(anchor),
            structure: vec![DMatrix::zeros(fiber_dim, fiber_dim); fiber_dim],
        }
    }
}

fn prolong_anchor(anchor: &AnchorMap, base_dim: usize, fiber_dim: usize) -> Result<AnchorMap> {
    // new anchor (x, a) acting on (b, c): block diag of rho(x) and identity
    let nb = base_dim + fiber_dim;
    let nf = 2 * fiber_dim;
    let embed = |m: &DMatrix<f64>, with_identity: bool| {
        let mut out = DMatrix::zeros(nb, nf);
        out.view_mut((0, 0), (base_dim, fiber_dim)).copy_from(m);
        if with_identity {
            for k in 0..fiber_dim {
                out[(base_dim + k, fiber_dim + k)] = 1.0;
            }
        }
        out
    };
    match anchor {
        AnchorMap::Constant(m) => Ok(AnchorMap::Constant(embed(m, true))),
        AnchorMap::Affine { constant, linear } => {
            let mut new_linear = Vec::with_capacity(nb);
            for lk in linear {
                new_linear.push(embed(lk, false));
            }
            // the new fiber coordinates of the base do not enter the anchor
            new_linear.resize(nb, DMatrix::zeros(nb, nf));
            Ok(AnchorMap::Affine {
                constant: embed(constant, true),
                linear: new_linear,
            })
        }
        AnchorMap::Smooth(_) => Err(Error::DomainViolation(
            "prolongation needs a constant or affine seed anchor".into(),
        )),
    }
}

/// Tangent lift of the bracket: C'((b1,c1),(b2,c2)) = (C(b1,b2),
/// C(b1,c2) + C(c1,b2)).
fn prolong_structure(structure: &[DMatrix<f64>], fiber_dim: usize) -> Vec<DMatrix<f64>> {
    let nf = 2 * fiber_dim;
    let mut out = Vec::with_capacity(nf);
    for q in structure.iter() {
        let mut big = DMatrix::zeros(nf, nf);
        big.view_mut((0, 0), (fiber_dim, fiber_dim)).copy_from(q);
        out.push(big);
    }
    for q in structure.iter() {
        let mut big = DMatrix::zeros(nf, nf);
        big.view_mut((0, fiber_dim), (fiber_dim, fiber_dim)).copy_from(q);
        big.view_mut((fiber_dim, 0), (fiber_dim, fiber_dim)).copy_from(q);
        out.push(big);
    }
    out
}

/// Iterates the tangent prolongation to the requested depth. Bondings are
/// the bundle projections (keep the first block of coordinates).
pub fn build_prolongation_tower(seed: &SeedAlgebroid, depth: usize) -> Result<AlgebroidTower> {
    if depth > MAX_PROLONGATION_DEPTH {
        return Err(Error::DepthTooLarge(depth));
    }
    let n_levels = depth + 1;
    let mut base_dims = Vec::with_capacity(n_levels);
    let mut fiber_dims = Vec::with_capacity(n_levels);
    let mut anchors = Vec::with_capacity(n_levels);
    let mut structures = Vec::with_capacity(n_levels);
    base_dims.push(seed.base_dim);
    fiber_dims.push(seed.fiber_dim);
    anchors.push(seed.anchor.clone());
    structures.push(seed.structure.clone());
    for i in 0..depth {
        let bd = base_dims[i];
        let fd = fiber_dims[i];
        anchors.push(prolong_anchor(&anchors[i], bd, fd)?);
        structures.push(prolong_structure(&structures[i], fd));
        base_dims.push(bd + fd);
        fiber_dims.push(2 * fd);
    }

    let truncation = |to: usize, from: usize| {
        let mut m = DMatrix::zeros(to, from);
        for k in 0..to {
            m[(k, k)] = 1.0;
        }
        m
    };
    let base = make_tower(
        base_dims
            .iter()
            .enumerate()
            .map(|(i, &d)| BanachLevel::euclidean(i, d))
            .collect(),
        (0..depth)
            .map(|i| BondingMap::new(i, truncation(base_dims[i], base_dims[i + 1])))
            .collect(),
    )?;
    let fiber = make_tower(
        fiber_dims
            .iter()
            .enumerate()
            .map(|(i, &d)| BanachLevel::euclidean(i, d))
            .collect(),
        (0..depth)
            .map(|i| BondingMap::new(i, truncation(fiber_dims[i], fiber_dims[i + 1])))
            .collect(),
    )?;

    let mut levels = Vec::with_capacity(n_levels);
    for i in 0..n_levels {
        levels.push(AnchoredLevel::new(
            base_dims[i],
            fiber_dims[i],
            DVector::zeros(base_dims[i]),
            PROLONGATION_CHART_HALFWIDTH,
            anchors[i].clone(),
            structures[i].clone(),
            None,
        )?);
    }
    AlgebroidTower::new(base, fiber, levels)
}
