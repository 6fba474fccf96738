//! Graded linear maps between towers: level-coherent sequences of matrices,
//! their seminorms `p_n` and uniform norm, injectivity and openness
//! diagnostics, and the level-wise exponential.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::tower::Tower;

/// Tolerance on the commutative-square defect of a graded operator.
pub const OPERATOR_COHERENCE_TOL: f64 = 1e-9;
/// Relative singular-value cutoff for injectivity decisions.
pub const INJECTIVITY_TOL: f64 = 1e-10;

/// A coherent sequence of linear maps `L_n: source level n -> target level n`.
#[derive(Debug, Clone)]
pub struct GradedOperator {
    pub source: Tower,
    pub target: Tower,
    pub levels: Vec<DMatrix<f64>>,
}

/// The seminorms `p_0..p_N` and their maximum (the finite truncation of the
/// uniform norm).
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorNorms {
    pub p: Vec<f64>,
    pub norm_inf: f64,
}

/// Per-level injectivity record. Closed range is automatic in finite
/// dimensions and reported for interface parity with the graded setting.
#[derive(Debug, Clone)]
pub struct InjectivityLevel {
    pub injective: bool,
    pub closed_range: bool,
    pub smallest_singular_value: f64,
}

#[derive(Debug, Clone)]
pub struct InjectivityProfile {
    pub levels: Vec<InjectivityLevel>,
    pub injective: bool,
}

impl GradedOperator {
    pub fn new(source: Tower, target: Tower, levels: Vec<DMatrix<f64>>) -> Result<Self> {
        if source.depth() != target.depth() {
            return Err(Error::ShapeMismatch(
                "source and target towers have different depths".into(),
            ));
        }
        if levels.len() != source.levels().len() {
            return Err(Error::ShapeMismatch(format!(
                "{} level maps for {} levels",
                levels.len(),
                source.levels().len()
            )));
        }
        for (n, m) in levels.iter().enumerate() {
            if m.nrows() != target.dim(n) || m.ncols() != source.dim(n) {
                return Err(Error::ShapeMismatch(format!(
                    "level {} map has shape {}x{}, expected {}x{}",
                    n,
                    m.nrows(),
                    m.ncols(),
                    target.dim(n),
                    source.dim(n)
                )));
            }
        }
        Ok(GradedOperator {
            source,
            target,
            levels,
        })
    }

    pub fn identity(tower: &Tower) -> Self {
        let levels = tower
            .levels()
            .iter()
            .map(|l| DMatrix::identity(l.dim, l.dim))
            .collect();
        GradedOperator {
            source: tower.clone(),
            target: tower.clone(),
            levels,
        }
    }

    pub fn depth(&self) -> usize {
        self.source.depth()
    }

    fn ensure_coherent(&self) -> Result<()> {
        let (ok, defect) = check_coherence(self);
        if !ok {
            return Err(Error::NotCoherent(defect));
        }
        Ok(())
    }
}

/// Verifies the commutative squares `target-bonding . L_{n+1} = L_n . source-bonding`.
pub fn check_coherence(l: &GradedOperator) -> (bool, f64) {
    let mut max_defect = 0.0f64;
    for n in 0..l.depth() {
        let lhs = &l.target.bondings()[n].matrix * &l.levels[n + 1];
        let rhs = &l.levels[n] * &l.source.bondings()[n].matrix;
        max_defect = max_defect.max(linalg::sigma_max(&(lhs - rhs)));
    }
    (max_defect <= OPERATOR_COHERENCE_TOL, max_defect)
}

/// `p_n = max_{k <= n}` of the level-k operator norm, and `norm_inf = max p_n`.
pub fn operator_seminorms(l: &GradedOperator) -> Result<OperatorNorms> {
    l.ensure_coherent()?;
    let mut p = Vec::with_capacity(l.levels.len());
    let mut running = 0.0f64;
    for (n, m) in l.levels.iter().enumerate() {
        let level_norm =
            linalg::operator_norm(m, &l.source.level(n).norm, &l.target.level(n).norm);
        running = running.max(level_norm);
        p.push(running);
    }
    let norm_inf = running;
    Ok(OperatorNorms { p, norm_inf })
}

pub fn is_uniformly_bounded(l: &GradedOperator, c: f64) -> Result<bool> {
    if c <= 0.0 {
        return Err(Error::NonPositiveInput("uniform bound C".into()));
    }
    Ok(operator_seminorms(l)?.norm_inf <= c)
}

/// Level-wise rank analysis; the operator is injective iff every level is.
pub fn injectivity_profile(l: &GradedOperator) -> Result<InjectivityProfile> {
    l.ensure_coherent()?;
    let mut levels = Vec::with_capacity(l.levels.len());
    let mut injective = true;
    for m in &l.levels {
        let sv = linalg::singular_values(m);
        let top = sv.iter().fold(0.0f64, |a, &b| a.max(b));
        let smallest = if m.ncols() > sv.len() {
            0.0
        } else {
            sv.iter().fold(f64::INFINITY, |a, &b| a.min(b))
        };
        let inj = m.ncols() <= m.nrows() && smallest > INJECTIVITY_TOL * top.max(1.0);
        injective &= inj;
        levels.push(InjectivityLevel {
            injective: inj,
            closed_range: true,
            smallest_singular_value: smallest,
        });
    }
    Ok(InjectivityProfile { levels, injective })
}

/// A radius m > 0 such that every coherent perturbation `T` with
/// `||T - L||_inf < m` stays level-wise injective: half the minimum over
/// levels of the smallest singular value.
pub fn openness_margin(l: &GradedOperator) -> Result<f64> {
    let profile = injectivity_profile(l)?;
    if !profile.injective {
        return Err(Error::NotInjective);
    }
    let min_sv = profile
        .levels
        .iter()
        .map(|lv| lv.smallest_singular_value)
        .fold(f64::INFINITY, f64::min);
    Ok(min_sv / 2.0)
}

/// Level-wise matrix exponential; coherence is preserved because the
/// exponential commutes with intertwining bondings.
pub fn exp_tower(a: &GradedOperator) -> Result<GradedOperator> {
    a.ensure_coherent()?;
    for (n, m) in a.levels.iter().enumerate() {
        if m.nrows() != m.ncols() {
            return Err(Error::ShapeMismatch(format!("level {n} map is not square")));
        }
    }
    let levels = a.levels.iter().map(linalg::expm).collect();
    GradedOperator::new(a.source.clone(), a.target.clone(), levels)
}

/// Composition `L . M` (applies `m` first).
pub fn compose(l: &GradedOperator, m: &GradedOperator) -> Result<GradedOperator> {
    if l.depth() != m.depth() {
        return Err(Error::ShapeMismatch("depth mismatch in composition".into()));
    }
    let levels = l
        .levels
        .iter()
        .zip(m.levels.iter())
        .map(|(a, b)| a * b)
        .collect();
    GradedOperator::new(m.source.clone(), l.target.clone(), levels)
}

/// Random coherent operator on a tower, built bottom-up: level 0 free, each
/// higher level the minimum-norm solution of the coherence square plus a
/// random kernel-space contribution.
pub fn random_coherent<R: rand::Rng>(tower: &Tower, rng: &mut R, scale: f64) -> GradedOperator {
    let mut levels: Vec<DMatrix<f64>> = Vec::with_capacity(tower.levels().len());
    let d0 = tower.dim(0);
    levels.push(DMatrix::from_fn(d0, d0, |_, _| {
        scale * (rng.gen::<f64>() * 2.0 - 1.0)
    }));
    for n in 0..tower.depth() {
        let b = &tower.bondings()[n].matrix;
        let b_pinv = tower.section(n);
        let d = tower.dim(n + 1);
        // particular solution of B . X = L_n . B plus B-kernel noise
        let particular = b_pinv * &levels[n] * b;
        let r = DMatrix::from_fn(d, d, |_, _| scale * (rng.gen::<f64>() * 2.0 - 1.0));
        let kernel_part = (DMatrix::identity(d, d) - b_pinv * b) * r;
        levels.push(particular + kernel_part);
    }
    GradedOperator {
        source: tower.clone(),
        target: tower.clone(),
        levels,
    }
}
