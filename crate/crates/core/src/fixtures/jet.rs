//! Jet-space towers for a trivial bundle R^n x R^m, with the Cartan
//! distribution presented as an anchored subbundle: the generators are the
//! n total-derivative lifts plus the top-order vertical fields. At any
//! finite order the generators fail to close under brackets; the lifts from
//! one order higher project onto fields tangent to the lower distribution.

use nalgebra::{DMatrix, DVector};

use crate::algebroid::{AlgebroidTower, AnchorMap, AnchoredLevel};
use crate::error::{Error, Result};
use crate::linalg;
use crate::tower::{make_tower, BanachLevel, BondingMap, Tower};

pub const MAX_JET_ORDER: usize = 4;
pub const JET_CHART_HALFWIDTH: f64 = 0.5;

/// Multi-indices over n slots with total degree exactly j, lexicographic.
pub fn multi_indices(n: usize, j: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![j]];
    }
    let mut out = Vec::new();
    for first in (0..=j).rev() {
        for rest in multi_indices(n - 1, j - first) {
            let mut idx = Vec::with_capacity(n);
            idx.push(first);
            idx.extend(rest);
            out.push(idx);
        }
    }
    out
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let mut out = 1usize;
    for i in 0..k.min(n - k) {
        out = out * (n - i) / (i + 1);
    }
    out
}

/// Number of degree-j symmetric slots over n variables.
pub fn sym_dim(n: usize, j: usize) -> usize {
    binomial(n + j - 1, j)
}

/// Coordinate labels of one jet order.
#[derive(Debug, Clone, PartialEq)]
pub enum JetCoord {
    /// Base coordinate x_a.
    X(usize),
    /// Derivative coordinate u^comp_sigma.
    U { comp: usize, multi: Vec<usize> },
}

/// One jet space with its coordinate layout.
#[derive(Debug, Clone)]
pub struct JetLevel {
    pub order: usize,
    pub coords: Vec<JetCoord>,
}

impl JetLevel {
    fn build(n: usize, m: usize, order: usize) -> Self {
        let mut coords = Vec::new();
        for a in 0..n {
            coords.push(JetCoord::X(a));
        }
        for j in 0..=order {
            for multi in multi_indices(n, j) {
                for comp in 0..m {
                    coords.push(JetCoord::U {
                        comp,
                        multi: multi.clone(),
                    });
                }
            }
        }
        JetLevel { order, coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn index_of(&self, target: &JetCoord) -> Option<usize> {
        self.coords.iter().position(|c| c == target)
    }
}

#[derive(Debug, Clone)]
pub struct JetTower {
    pub n: usize,
    pub m: usize,
    pub k_max: usize,
    pub levels: Vec<JetLevel>,
    /// Coordinate tower with the jet truncations as bondings.
    pub coord_tower: Tower,
}

fn truncation(lower: &JetLevel, upper: &JetLevel) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(lower.dim(), upper.dim());
    for (row, c) in lower.coords.iter().enumerate() {
        let col = upper.index_of(c).expect("lower coords embed upward");
        m[(row, col)] = 1.0;
    }
    m
}

/// Cartan generator count at order k.
pub fn cartan_rank(n: usize, m: usize, k: usize) -> usize {
    n + m * sym_dim(n, k)
}

/// Builds the anchor of the Cartan distribution on one jet level. Columns:
/// the total-derivative lifts D_a (affine: the u-coefficients are jet
/// coordinates one order up), then the vertical top-order fields.
fn cartan_anchor(n: usize, m: usize, level: &JetLevel) -> AnchorMap {
    let k = level.order;
    let dim = level.dim();
    let fdim = cartan_rank(n, m, k);
    let mut constant = DMatrix::zeros(dim, fdim);
    let mut linear = vec![DMatrix::zeros(dim, fdim); dim];
    for a in 0..n {
        constant[(a, a)] = 1.0;
        // D_a moves u_sigma along u_{sigma+e_a}
        for (row, c) in level.coords.iter().enumerate() {
            if let JetCoord::U { comp, multi } = c {
                if multi.iter().sum::<usize>() >= k {
                    continue;
                }
                let mut up = multi.clone();
                up[a] += 1;
                let src = level
                    .index_of(&JetCoord::U {
                        comp: *comp,
                        multi: up,
                    })
                    .expect("raised index stays within the level");
                linear[src][(row, a)] = 1.0;
            }
        }
    }
    let mut col = n;
    for multi in multi_indices(n, k) {
        for comp in 0..m {
            let row = level
                .index_of(&JetCoord::U {
                    comp,
                    multi: multi.clone(),
                })
                .unwrap();
            constant[(row, col)] = 1.0;
            col += 1;
        }
    }
    AnchorMap::Affine { constant, linear }
}

/// Fiber bondings between Cartan generator spaces: D_a maps to D_a, the
/// vertical for sigma + e_1 maps to the vertical for sigma, the rest die.
fn cartan_fiber_bonding(n: usize, m: usize, k_lower: usize) -> DMatrix<f64> {
    let f_lo = cartan_rank(n, m, k_lower);
    let f_hi = cartan_rank(n, m, k_lower + 1);
    let mut bond = DMatrix::zeros(f_lo, f_hi);
    for a in 0..n {
        bond[(a, a)] = 1.0;
    }
    let lower_multis = multi_indices(n, k_lower);
    let upper_multis = multi_indices(n, k_lower + 1);
    for (li, lm) in lower_multis.iter().enumerate() {
        let mut raised = lm.clone();
        raised[0] += 1;
        let ui = upper_multis.iter().position(|u| u == &raised).unwrap();
        for comp in 0..m {
            bond[(n + li * m + comp, n + ui * m + comp)] = 1.0;
        }
    }
    bond
}

/// Builds the jet tower and the Cartan distribution as an anchored tower.
pub fn build_jet_tower(n: usize, m: usize, k_max: usize) -> Result<(JetTower, AlgebroidTower)> {
    if n == 0 || m == 0 {
        return Err(Error::NonPositiveInput("jet base and fiber dims".into()));
    }
    if k_max > MAX_JET_ORDER {
        return Err(Error::DepthTooLarge(k_max));
    }
    let levels: Vec<JetLevel> = (0..=k_max).map(|k| JetLevel::build(n, m, k)).collect();
    let coord_tower = make_tower(
        levels
            .iter()
            .enumerate()
            .map(|(i, l)| BanachLevel::euclidean(i, l.dim()))
            .collect(),
        (0..k_max)
            .map(|i| BondingMap::new(i, truncation(&levels[i], &levels[i + 1])))
            .collect(),
    )?;
    let fiber_tower = make_tower(
        (0..=k_max)
            .map(|k| BanachLevel::euclidean(k, cartan_rank(n, m, k)))
            .collect(),
        (0..k_max)
            .map(|i| BondingMap::new(i, cartan_fiber_bonding(n, m, i)))
            .collect(),
    )?;
    let mut anchored = Vec::with_capacity(k_max + 1);
    for level in &levels {
        let fdim = cartan_rank(n, m, level.order);
        anchored.push(AnchoredLevel::new(
            level.dim(),
            fdim,
            DVector::zeros(level.dim()),
            JET_CHART_HALFWIDTH,
            cartan_anchor(n, m, level),
            vec![DMatrix::zeros(fdim, fdim); fdim],
            None,
        )?);
    }
    let algebroid = AlgebroidTower::new(coord_tower.clone(), fiber_tower, anchored)?;
    Ok((
        JetTower {
            n,
            m,
            k_max,
            levels,
            coord_tower,
        },
        algebroid,
    ))
}

/// Max residual, over sampled points one order up, of the projected
/// total-derivative lifts against the lower Cartan distribution. Near zero:
/// the escape directions die under projection, which is what makes the
/// limit distribution closed under brackets.
pub fn lift_projection_residual(jet: &JetTower, t: &AlgebroidTower, k: usize, samples: usize) -> f64 {
    let upper = &t.levels[k + 1];
    let lower = &t.levels[k];
    let proj = &jet.coord_tower.bondings()[k].matrix;
    let mut residual = 0.0f64;
    for z in upper.sample_points(samples) {
        let zl = proj * &z;
        let span = linalg::column_space(&lower.anchor.eval(&zl), 1e-10);
        let rho_up = upper.anchor.eval(&z);
        for a in 0..jet.n {
            let pushed = proj * rho_up.column(a).into_owned();
            residual = residual.max(linalg::projection_residual(&span, &pushed));
        }
    }
    residual
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebroid::involutivity_defect;

    #[test]
    fn scalar_jet_dims() {
        let (jet, _) = build_jet_tower(1, 1, 4).unwrap();
        let dims: Vec<usize> = jet.levels.iter().map(|l| l.dim()).collect();
        assert_eq!(dims, vec![2, 3, 4, 5, 6]);
    }

    #[test]
    fn multivariate_dims_follow_symmetric_counts() {
        let (jet, _) = build_jet_tower(2, 3, 2).unwrap();
        // 2 + 3 * (1 + 2 + 3)
        assert_eq!(jet.levels[2].dim(), 2 + 3 * 6);
        assert_eq!(sym_dim(3, 2), 6);
        assert_eq!(sym_dim(2, 4), 5);
    }

    #[test]
    fn projections_compose_exactly() {
        let (jet, _) = build_jet_tower(2, 2, 3).unwrap();
        let p01 = &jet.coord_tower.bondings()[0].matrix;
        let p12 = &jet.coord_tower.bondings()[1].matrix;
        let p02 = jet.coord_tower.composite(0, 2);
        assert_eq!((p01 * p12 - p02).amax(), 0.0);
    }

    #[test]
    fn cartan_rank_counts_generators() {
        let (_, t) = build_jet_tower(1, 1, 2).unwrap();
        for (k, level) in t.levels.iter().enumerate() {
            assert_eq!(level.fiber_dim, 2, "order {k}");
            let z = DVector::from_fn(level.base_dim, |i, _| 0.1 * (i as f64 + 1.0));
            assert_eq!(linalg::rank(&level.anchor.eval(&z), 1e-10), 2);
        }
        let (_, t2) = build_jet_tower(2, 1, 2).unwrap();
        assert_eq!(t2.levels[2].fiber_dim, 2 + 3);
    }

    #[test]
    fn scalar_cartan_generators_have_expected_form() {
        let (jet, t) = build_jet_tower(1, 1, 1).unwrap();
        // J^1 coords (x, u, u_1); D_x = (1, u_1, 0), vertical = (0, 0, 1)
        let z = DVector::from_vec(vec![0.2, 0.3, 0.4]);
        let rho = t.levels[1].anchor.eval(&z);
        assert_eq!(rho[(0, 0)], 1.0);
        assert_eq!(rho[(1, 0)], 0.4);
        assert_eq!(rho[(2, 0)], 0.0);
        assert_eq!(rho[(2, 1)], 1.0);
        assert_eq!(jet.levels[1].coords[2], JetCoord::U { comp: 0, multi: vec![1] });
    }

    #[test]
    fn first_order_cartan_is_not_involutive() {
        let (_, t) = build_jet_tower(1, 1, 1).unwrap();
        let defect = involutivity_defect(&t.levels[1], 64);
        assert!(defect >= 1e-2, "defect {defect}");
    }

    #[test]
    fn every_finite_order_escapes() {
        let (_, t) = build_jet_tower(1, 1, 3).unwrap();
        for k in 1..=3 {
            assert!(involutivity_defect(&t.levels[k], 32) >= 1e-2, "order {k}");
        }
    }

    #[test]
    fn lifts_project_tangent_to_lower_cartan() {
        let (jet, t) = build_jet_tower(1, 1, 2).unwrap();
        for k in 0..2 {
            let r = lift_projection_residual(&jet, &t, k, 64);
            assert!(r <= 1e-9, "order {k} residual {r}");
        }
        let (jet2, t2) = build_jet_tower(2, 2, 2).unwrap();
        assert!(lift_projection_residual(&jet2, &t2, 1, 32) <= 1e-9);
    }

    #[test]
    fn order_zero_is_involutive() {
        // C^0 is the whole tangent space of J^0
        let (_, t) = build_jet_tower(1, 1, 1).unwrap();
        assert!(involutivity_defect(&t.levels[0], 16) <= 1e-10);
    }

    #[test]
    fn order_is_capped() {
        assert!(matches!(
            build_jet_tower(1, 1, 5),
            Err(Error::DepthTooLarge(5))
        ));
    }
}
