//! Anchored bundle towers with brackets. Each level is a trivialized bundle
//! over a chart box: an anchor field of matrices plus constant structure
//! tensors. Verifiers cover the Leibniz and Jacobi identities, the bonding
//! compatibility squares, and the uniform anchor-norm / kernel conditions a
//! coherent splitting needs.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::tower::Tower;

/// Bonding-square tolerance for anchor and bracket compatibility.
pub const PSBLA_TOL: f64 = 1e-8;
/// Antisymmetry tolerance on structure tensors.
pub const ANTISYMMETRY_TOL: f64 = 1e-10;

/// Base-point dependent anchor matrix (fiber -> base tangent coordinates).
#[derive(Clone)]
pub enum AnchorMap {
    Constant(DMatrix<f64>),
    /// `rho(z) = constant + sum_k z_k linear[k]`.
    Affine {
        constant: DMatrix<f64>,
        linear: Vec<DMatrix<f64>>,
    },
    Smooth(Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>),
}

impl AnchorMap {
    pub fn eval(&self, z: &DVector<f64>) -> DMatrix<f64> {
        match self {
            AnchorMap::Constant(m) => m.clone(),
            AnchorMap::Affine { constant, linear } => {
                let mut m = constant.clone();
                for (k, lk) in linear.iter().enumerate() {
                    m += lk * z[k];
                }
                m
            }
            AnchorMap::Smooth(f) => f(z),
        }
    }

    /// `d/dz [rho(z) u]` as a (base_dim x base_dim) matrix; exact for the
    /// constant and affine variants, central differences otherwise.
    pub fn jacobian_times(&self, z: &DVector<f64>, u: &DVector<f64>, fd_step: f64) -> DMatrix<f64> {
        let base_dim = z.len();
        match self {
            AnchorMap::Constant(m) => DMatrix::zeros(m.nrows(), base_dim),
            AnchorMap::Affine { linear, .. } => {
                let rows = linear[0].nrows();
                let mut j = DMatrix::zeros(rows, base_dim);
                for (k, lk) in linear.iter().enumerate() {
                    j.set_column(k, &(lk * u));
                }
                j
            }
            AnchorMap::Smooth(f) => {
                let rows = f(z).nrows();
                let mut j = DMatrix::zeros(rows, base_dim);
                for k in 0..base_dim {
                    let mut zp = z.clone();
                    let mut zm = z.clone();
                    zp[k] += fd_step;
                    zm[k] -= fd_step;
                    j.set_column(k, &((f(&zp) * u - f(&zm) * u) / (2.0 * fd_step)));
                }
                j
            }
        }
    }
}

impl std::fmt::Debug for AnchorMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnchorMap::Constant(_) => f.write_str("AnchorMap::Constant"),
            AnchorMap::Affine { .. } => f.write_str("AnchorMap::Affine"),
            AnchorMap::Smooth(_) => f.write_str("AnchorMap::Smooth"),
        }
    }
}

/// Base-point dependent weight applied to tangent coordinates before
/// measuring anchor norms (a Finsler choice; identity when absent).
pub type FrameFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// One trivialized anchored level over a chart box.
#[derive(Clone)]
pub struct AnchoredLevel {
    pub base_dim: usize,
    pub fiber_dim: usize,
    pub chart_center: DVector<f64>,
    pub chart_halfwidth: f64,
    pub anchor: AnchorMap,
    /// `structure[k]` is the antisymmetric matrix with `C(a,b)_k = a^T Q_k b`.
    pub structure: Vec<DMatrix<f64>>,
    pub frame: Option<FrameFn>,
}

impl std::fmt::Debug for AnchoredLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnchoredLevel")
            .field("base_dim", &self.base_dim)
            .field("fiber_dim", &self.fiber_dim)
            .field("anchor", &self.anchor)
            .finish()
    }
}

impl AnchoredLevel {
    pub fn new(
        base_dim: usize,
        fiber_dim: usize,
        chart_center: DVector<f64>,
        chart_halfwidth: f64,
        anchor: AnchorMap,
        structure: Vec<DMatrix<f64>>,
        frame: Option<FrameFn>,
    ) -> Result<Self> {
        if chart_center.len() != base_dim {
            return Err(Error::ShapeMismatch("chart center dim".into()));
        }
        if structure.len() != fiber_dim {
            return Err(Error::ShapeMismatch(format!(
                "{} structure matrices for fiber dim {}",
                structure.len(),
                fiber_dim
            )));
        }
        for q in &structure {
            if q.nrows() != fiber_dim || q.ncols() != fiber_dim {
                return Err(Error::ShapeMismatch("structure matrix shape".into()));
            }
            let sym = q + q.transpose();
            if sym.amax() > ANTISYMMETRY_TOL {
                return Err(Error::DomainViolation(
                    "structure tensor is not antisymmetric".into(),
                ));
            }
        }
        let probe = anchor.eval(&chart_center);
        if probe.nrows() != base_dim || probe.ncols() != fiber_dim {
            return Err(Error::ShapeMismatch(format!(
                "anchor is {}x{}, expected {}x{}",
                probe.nrows(),
                probe.ncols(),
                base_dim,
                fiber_dim
            )));
        }
        Ok(AnchoredLevel {
            base_dim,
            fiber_dim,
            chart_center,
            chart_halfwidth,
            anchor,
            structure,
            frame,
        })
    }

    pub fn contains(&self, z: &DVector<f64>) -> bool {
        (z - &self.chart_center).amax() <= self.chart_halfwidth + 1e-12
    }

    pub fn fd_step(&self) -> f64 {
        1e-5 * self.chart_halfwidth.max(1e-3)
    }

    pub fn sample_points(&self, count: usize) -> Vec<DVector<f64>> {
        linalg::halton_box(&self.chart_center, self.chart_halfwidth, count)
    }

    /// `C(a, b)` from the structure tensors.
    pub fn structure_bracket(&self, a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.fiber_dim, |k, _| (a.transpose() * &self.structure[k] * b)[0])
    }
}

/// A local section of the fiber bundle, with enough jet data for brackets.
pub trait Section {
    fn value(&self, z: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, z: &DVector<f64>) -> DMatrix<f64>;
}

/// Polynomial section of degree at most two: exact values and jacobians.
#[derive(Debug, Clone)]
pub struct PolySection {
    pub constant: DVector<f64>,
    /// fiber_dim x base_dim.
    pub linear: DMatrix<f64>,
    /// Per fiber component, the base_dim x base_dim quadratic form.
    pub quad: Vec<DMatrix<f64>>,
}

impl PolySection {
    pub fn constant(v: DVector<f64>, base_dim: usize) -> Self {
        let fiber_dim = v.len();
        PolySection {
            constant: v,
            linear: DMatrix::zeros(fiber_dim, base_dim),
            quad: vec![DMatrix::zeros(base_dim, base_dim); fiber_dim],
        }
    }

    pub fn affine(constant: DVector<f64>, linear: DMatrix<f64>) -> Self {
        let fiber_dim = constant.len();
        let base_dim = linear.ncols();
        PolySection {
            constant,
            linear,
            quad: vec![DMatrix::zeros(base_dim, base_dim); fiber_dim],
        }
    }
}

impl Section for PolySection {
    fn value(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut v = &self.constant + &self.linear * z;
        for (k, q) in self.quad.iter().enumerate() {
            v[k] += (z.transpose() * q * z)[0];
        }
        v
    }

    fn jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let mut j = self.linear.clone();
        for (k, q) in self.quad.iter().enumerate() {
            let row = (q + q.transpose()) * z;
            for c in 0..j.ncols() {
                j[(k, c)] += row[c];
            }
        }
        j
    }
}

/// Scalar polynomial of degree at most two on the chart.
#[derive(Debug, Clone)]
pub struct ScalarPoly {
    pub constant: f64,
    pub linear: DVector<f64>,
    pub quad: DMatrix<f64>,
}

impl ScalarPoly {
    pub fn constant(c: f64, base_dim: usize) -> Self {
        ScalarPoly {
            constant: c,
            linear: DVector::zeros(base_dim),
            quad: DMatrix::zeros(base_dim, base_dim),
        }
    }

    pub fn linear(c: f64, l: DVector<f64>) -> Self {
        let d = l.len();
        ScalarPoly {
            constant: c,
            linear: l,
            quad: DMatrix::zeros(d, d),
        }
    }

    pub fn eval(&self, z: &DVector<f64>) -> f64 {
        self.constant + self.linear.dot(z) + (z.transpose() * &self.quad * z)[0]
    }
}

/// `[a, b](z) = Jb(z) rho(z) a(z) - Ja(z) rho(z) b(z) + C(a(z), b(z))`.
/// The derivative terms make Leibniz structural; the constant tensor carries
/// the Lie-algebra content.
pub fn bracket_value(
    level: &AnchoredLevel,
    a: &dyn Section,
    b: &dyn Section,
    z: &DVector<f64>,
) -> DVector<f64> {
    let rho = level.anchor.eval(z);
    let av = a.value(z);
    let bv = b.value(z);
    b.jacobian(z) * (&rho * &av) - a.jacobian(z) * (&rho * &bv) + level.structure_bracket(&av, &bv)
}

/// A bracket reused as a section; jacobian by central differences so brackets
/// can nest.
pub struct BracketSection<'a> {
    pub level: &'a AnchoredLevel,
    pub a: &'a dyn Section,
    pub b: &'a dyn Section,
}

impl Section for BracketSection<'_> {
    fn value(&self, z: &DVector<f64>) -> DVector<f64> {
        bracket_value(self.level, self.a, self.b, z)
    }

    fn jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let h = self.level.fd_step();
        let mut j = DMatrix::zeros(self.level.fiber_dim, z.len());
        for k in 0..z.len() {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            j.set_column(k, &((self.value(&zp) - self.value(&zm)) / (2.0 * h)));
        }
        j
    }
}

/// `f * a` with the product-rule jacobian (exact scalar gradient).
pub struct ScaledSection<'a> {
    pub f: &'a ScalarPoly,
    pub a: &'a dyn Section,
}

impl Section for ScaledSection<'_> {
    fn value(&self, z: &DVector<f64>) -> DVector<f64> {
        self.a.value(z) * self.f.eval(z)
    }

    fn jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let grad = &self.f.linear + (&self.f.quad + self.f.quad.transpose()) * z;
        self.a.value(z) * grad.transpose() + self.a.jacobian(z) * self.f.eval(z)
    }
}

/// Pushforward of an upper-level section along `ell` through a right inverse
/// `sigma` of the base bonding.
pub struct ProjectedSection<'a> {
    pub ell: &'a DMatrix<f64>,
    pub sigma: &'a DMatrix<f64>,
    pub inner: &'a dyn Section,
}

impl Section for ProjectedSection<'_> {
    fn value(&self, z: &DVector<f64>) -> DVector<f64> {
        self.ell * self.inner.value(&(self.sigma * z))
    }

    fn jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        self.ell * self.inner.jacobian(&(self.sigma * z)) * self.sigma
    }
}

fn check_points(level: &AnchoredLevel, points: &[DVector<f64>]) -> Result<()> {
    for p in points {
        if !level.contains(p) {
            return Err(Error::DomainViolation(
                "sample point outside the chart box".into(),
            ));
        }
    }
    Ok(())
}

/// Max defect of `[a1, f a2] = f [a1, a2] + df(rho(a1)) a2` over the points.
/// The directional derivative of `f` uses central differences along
/// `rho(z) a1(z)`.
pub fn check_leibniz(
    level: &AnchoredLevel,
    a1: &dyn Section,
    a2: &dyn Section,
    f: &ScalarPoly,
    points: &[DVector<f64>],
) -> Result<f64> {
    check_points(level, points)?;
    let h = level.fd_step();
    let mut defect = 0.0f64;
    for z in points {
        let scaled = ScaledSection { f, a: a2 };
        let lhs = bracket_value(level, a1, &scaled, z);
        let w = level.anchor.eval(z) * a1.value(z);
        let wn = w.norm();
        let df = if wn < 1e-14 {
            0.0
        } else {
            let dir = &w / wn;
            (f.eval(&(z + &dir * h)) - f.eval(&(z - &dir * h))) / (2.0 * h) * wn
        };
        let rhs = bracket_value(level, a1, a2, z) * f.eval(z) + a2.value(z) * df;
        defect = defect.max((lhs - rhs).norm());
    }
    Ok(defect)
}

/// Max over the points of the cyclic-sum norm
/// `[a1,[a2,a3]] + [a2,[a3,a1]] + [a3,[a1,a2]]`.
pub fn check_jacobi(
    level: &AnchoredLevel,
    a1: &dyn Section,
    a2: &dyn Section,
    a3: &dyn Section,
    points: &[DVector<f64>],
) -> Result<f64> {
    check_points(level, points)?;
    let b23 = BracketSection { level, a: a2, b: a3 };
    let b31 = BracketSection { level, a: a3, b: a1 };
    let b12 = BracketSection { level, a: a1, b: a2 };
    let mut defect = 0.0f64;
    for z in points {
        let cyc = bracket_value(level, a1, &b23, z)
            + bracket_value(level, a2, &b31, z)
            + bracket_value(level, a3, &b12, z);
        defect = defect.max(cyc.norm());
    }
    Ok(defect)
}

/// Residual of `rho([a,b]) = [rho(a), rho(b)]` with the base-field Lie
/// bracket taken by central-difference jacobians.
pub fn check_anchor_morphism(
    level: &AnchoredLevel,
    a: &dyn Section,
    b: &dyn Section,
    points: &[DVector<f64>],
) -> Result<f64> {
    check_points(level, points)?;
    let h = level.fd_step();
    let field = |s: &dyn Section, z: &DVector<f64>| level.anchor.eval(z) * s.value(z);
    let field_jac = |s: &dyn Section, z: &DVector<f64>| {
        let mut j = DMatrix::zeros(level.base_dim, level.base_dim);
        for k in 0..level.base_dim {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[k] += h;
            zm[k] -= h;
            j.set_column(k, &((field(s, &zp) - field(s, &zm)) / (2.0 * h)));
        }
        j
    };
    let mut defect = 0.0f64;
    for z in points {
        let xa = field(a, z);
        let xb = field(b, z);
        let lie = field_jac(b, z) * &xa - field_jac(a, z) * &xb;
        let pushed = level.anchor.eval(z) * bracket_value(level, a, b, z);
        defect = defect.max((lie - pushed).norm());
    }
    Ok(defect)
}

/// Max over sampled points and generator pairs of the residual of the Lie
/// bracket of two anchor-column fields against the anchor image. Zero for
/// involutive distributions; the magnitude witnesses non-involutivity.
pub fn involutivity_defect(level: &AnchoredLevel, samples: usize) -> f64 {
    let h = level.fd_step();
    let mut defect = 0.0f64;
    for z in level.sample_points(samples) {
        let rho = level.anchor.eval(&z);
        let span = linalg::column_space(&rho, 1e-10);
        for a in 0..level.fiber_dim {
            let mut ua = DVector::zeros(level.fiber_dim);
            ua[a] = 1.0;
            let ja = level.anchor.jacobian_times(&z, &ua, h);
            for b in (a + 1)..level.fiber_dim {
                let mut ub = DVector::zeros(level.fiber_dim);
                ub[b] = 1.0;
                let jb = level.anchor.jacobian_times(&z, &ub, h);
                let lie = &jb * (&rho * &ua) - &ja * (&rho * &ub);
                defect = defect.max(linalg::projection_residual(&span, &lie));
            }
        }
    }
    defect
}

/// Tower of anchored levels over a base tower and a fiber tower; the base
/// bondings play delta and the fiber bondings play ell.
#[derive(Debug, Clone)]
pub struct AlgebroidTower {
    pub base: Tower,
    pub fiber: Tower,
    pub levels: Vec<AnchoredLevel>,
}

impl AlgebroidTower {
    pub fn new(base: Tower, fiber: Tower, levels: Vec<AnchoredLevel>) -> Result<Self> {
        if levels.len() != base.levels().len() || levels.len() != fiber.levels().len() {
            return Err(Error::ShapeMismatch(
                "level count differs between towers and anchored levels".into(),
            ));
        }
        for (i, l) in levels.iter().enumerate() {
            if l.base_dim != base.dim(i) || l.fiber_dim != fiber.dim(i) {
                return Err(Error::ShapeMismatch(format!(
                    "level {} dims do not match the towers",
                    i
                )));
            }
        }
        Ok(AlgebroidTower {
            base,
            fiber,
            levels,
        })
    }

    pub fn depth(&self) -> usize {
        self.base.depth()
    }
}

/// Per-level report of the uniform-bound and kernel conditions.
#[derive(Debug, Clone)]
pub struct StarReport {
    /// Always true per level here: every subspace of a finite-dimensional
    /// space is complemented.
    pub kernel_complemented: Vec<bool>,
    /// Likewise automatic at finite dimension.
    pub closed_range: Vec<bool>,
    pub kernel_dims: Vec<usize>,
    /// Sup over levels and sample points of the (frame-weighted) anchor
    /// operator norm.
    pub uniform_c: f64,
    pub per_level_sup: Vec<f64>,
}

impl StarReport {
    pub fn passes(&self, c: f64) -> bool {
        self.uniform_c <= c + 1e-12
    }
}

/// Samples every chart, takes operator norms of the anchors (through the
/// frame weight when one is installed) and checks the kernel dimension does
/// not move across the chart.
pub fn check_star_assumptions(t: &AlgebroidTower, samples: usize) -> Result<StarReport> {
    let mut kernel_dims = Vec::with_capacity(t.levels.len());
    let mut per_level_sup = Vec::with_capacity(t.levels.len());
    let mut uniform_c = 0.0f64;
    for (i, level) in t.levels.iter().enumerate() {
        let fiber_norm = &t.fiber.level(i).norm;
        let base_norm = &t.base.level(i).norm;
        let mut sup = 0.0f64;
        let mut kdim: Option<usize> = None;
        for z in level.sample_points(samples) {
            let rho = level.anchor.eval(&z);
            let weighted = match &level.frame {
                Some(w) => w(&z) * &rho,
                None => rho.clone(),
            };
            sup = sup.max(linalg::operator_norm(&weighted, fiber_norm, base_norm));
            let k = level.fiber_dim - linalg::rank(&rho, 1e-9);
            match kdim {
                None => kdim = Some(k),
                Some(prev) if prev != k => return Err(Error::KernelDimJump(i)),
                _ => {}
            }
        }
        kernel_dims.push(kdim.unwrap_or(level.fiber_dim));
        per_level_sup.push(sup);
        uniform_c = uniform_c.max(sup);
    }
    let n = t.levels.len();
    Ok(StarReport {
        kernel_complemented: vec![true; n],
        closed_range: vec![true; n],
        kernel_dims,
        uniform_c,
        per_level_sup,
    })
}

/// Defects of the two bonding compatibility squares per consecutive pair.
#[derive(Debug, Clone)]
pub struct PsblaReport {
    /// `delta rho_{i+1} - rho_i(delta z) ell`, per pair, sup over samples.
    pub anchor_defects: Vec<f64>,
    /// `ell [a,b]_{i+1} - [ell a, ell b]_i`, per pair, sup over samples and
    /// test sections.
    pub bracket_defects: Vec<f64>,
}

impl PsblaReport {
    pub fn max_anchor_defect(&self) -> f64 {
        self.anchor_defects.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_bracket_defect(&self) -> f64 {
        self.bracket_defects.iter().copied().fold(0.0, f64::max)
    }

    pub fn passes(&self) -> bool {
        self.max_anchor_defect() <= PSBLA_TOL && self.max_bracket_defect() <= PSBLA_TOL
    }
}

/// Default test sections on a level: constant coordinate sections plus one
/// section with a nonzero linear part.
pub fn default_test_sections(level: &AnchoredLevel) -> Vec<PolySection> {
    let mut out = Vec::with_capacity(level.fiber_dim + 1);
    for k in 0..level.fiber_dim {
        let mut v = DVector::zeros(level.fiber_dim);
        v[k] = 1.0;
        out.push(PolySection::constant(v, level.base_dim));
    }
    let mut lin = DMatrix::zeros(level.fiber_dim, level.base_dim);
    for k in 0..level.fiber_dim.min(level.base_dim) {
        lin[(k, k)] = 0.5;
    }
    out.push(PolySection::affine(
        DVector::from_element(level.fiber_dim, 0.25),
        lin,
    ));
    out
}

/// Checks both bonding squares for every consecutive pair. The anchor square
/// is sampled over upper charts; the bracket square is sampled at points of
/// the form `sigma(z_i)` so the pushforward sections are honest sections.
pub fn check_psbla(
    t: &AlgebroidTower,
    samples: usize,
    test_sections: &[Vec<PolySection>],
) -> Result<PsblaReport> {
    if test_sections.len() != t.depth() {
        return Err(Error::ShapeMismatch(format!(
            "{} section lists for {} bonding pairs",
            test_sections.len(),
            t.depth()
        )));
    }
    let mut anchor_defects = Vec::with_capacity(t.depth());
    let mut bracket_defects = Vec::with_capacity(t.depth());
    for n in 0..t.depth() {
        let lower = &t.levels[n];
        let upper = &t.levels[n + 1];
        let delta = &t.base.bondings()[n].matrix;
        let ell = &t.fiber.bondings()[n].matrix;
        let sigma = t.base.section(n);

        let mut anchor_defect = 0.0f64;
        for z in upper.sample_points(samples) {
            let square = delta * upper.anchor.eval(&z) - lower.anchor.eval(&(delta * &z)) * ell;
            anchor_defect = anchor_defect.max(linalg::sigma_max(&square));
        }
        anchor_defects.push(anchor_defect);

        let sections = &test_sections[n];
        for s in sections {
            if s.constant.len() != upper.fiber_dim || s.linear.ncols() != upper.base_dim {
                return Err(Error::ShapeMismatch(format!(
                    "test section shape at pair {}",
                    n
                )));
            }
        }
        let mut bracket_defect = 0.0f64;
        for zl in lower.sample_points(samples) {
            let zu = sigma * &zl;
            if !upper.contains(&zu) {
                continue;
            }
            for (si, a) in sections.iter().enumerate() {
                for b in sections.iter().skip(si + 1) {
                    let upper_bracket = ell * bracket_value(upper, a, b, &zu);
                    let pa = ProjectedSection {
                        ell,
                        sigma,
                        inner: a,
                    };
                    let pb = ProjectedSection {
                        ell,
                        sigma,
                        inner: b,
                    };
                    let lower_bracket = bracket_value(lower, &pa, &pb, &zl);
                    bracket_defect = bracket_defect.max((upper_bracket - lower_bracket).norm());
                }
            }
        }
        bracket_defects.push(bracket_defect);
    }
    Ok(PsblaReport {
        anchor_defects,
        bracket_defects,
    })
}
