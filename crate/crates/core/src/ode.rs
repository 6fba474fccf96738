//! Level-coherent ODE solving: graded vector fields on pseudo-balls, sampled
//! Lipschitz certificates, the explicit step bound `alpha e^{2 alpha C1} <=
//! r/(2 C2)`, a Picard integrator faithful to the fixed-point construction,
//! and an RK4 workhorse. Flows of distinct levels are integrated
//! independently and assembled into threads.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::tower::{Thread, Tower};

/// Coherence tolerance for sampled graded fields.
pub const FIELD_COHERENCE_TOL: f64 = 1e-8;
/// Coherence tolerance certified for assembled flow states.
pub const FLOW_COHERENCE_TOL: f64 = 1e-7;
/// Sampled Lipschitz constants carry this safety factor.
pub const LIPSCHITZ_SAFETY: f64 = 1.25;
/// Picard stopping tolerance (sup-norm change between sweeps).
pub const PICARD_TOL: f64 = 1e-10;
/// Picard sweep cap.
pub const PICARD_MAX_ITERS: usize = 200;

/// A ball cut out by finitely many seminorms.
#[derive(Debug, Clone)]
pub struct PseudoBall {
    pub center: Thread,
    pub radius: f64,
    /// Active seminorm indices `n_1..n_k`.
    pub indices: Vec<usize>,
}

impl PseudoBall {
    pub fn all_levels(center: Thread, radius: f64, depth: usize) -> Self {
        PseudoBall {
            center,
            radius,
            indices: (0..=depth).collect(),
        }
    }

    /// Max over the active indices of the level norm of `x - center`.
    pub fn gauge(&self, tower: &Tower, x: &Thread) -> f64 {
        self.indices
            .iter()
            .map(|&i| tower.level_norm(i, &(x.level(i) - self.center.level(i))))
            .fold(0.0, f64::max)
    }

    pub fn contains(&self, tower: &Tower, x: &Thread, factor: f64) -> bool {
        self.gauge(tower, x) < factor * self.radius
    }
}

/// One level of a graded field.
#[derive(Clone)]
pub enum LevelField {
    /// `X(x) = linear x + constant`; Lipschitz constant exactly the operator
    /// norm of the linear part.
    Affine {
        linear: DMatrix<f64>,
        constant: DVector<f64>,
    },
    Smooth(Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>),
}

impl LevelField {
    pub fn eval(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            LevelField::Affine { linear, constant } => linear * x + constant,
            LevelField::Smooth(f) => f(x),
        }
    }

    pub fn zero(dim: usize) -> Self {
        LevelField::Affine {
            linear: DMatrix::zeros(dim, dim),
            constant: DVector::zeros(dim),
        }
    }
}

impl std::fmt::Debug for LevelField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LevelField::Affine { .. } => f.write_str("LevelField::Affine"),
            LevelField::Smooth(_) => f.write_str("LevelField::Smooth"),
        }
    }
}

/// A coherent sequence of level vector fields on a pseudo-ball.
#[derive(Debug, Clone)]
pub struct GradedField {
    pub tower: Tower,
    pub domain: PseudoBall,
    pub levels: Vec<LevelField>,
}

impl GradedField {
    pub fn new(tower: Tower, domain: PseudoBall, levels: Vec<LevelField>) -> Result<Self> {
        if levels.len() != tower.levels().len() {
            return Err(Error::ShapeMismatch(format!(
                "{} level fields for {} levels",
                levels.len(),
                tower.levels().len()
            )));
        }
        let field = GradedField {
            tower,
            domain,
            levels,
        };
        let defect = field.coherence_defect(256);
        if defect > FIELD_COHERENCE_TOL {
            return Err(Error::NotCoherent(defect));
        }
        Ok(field)
    }

    /// Max over a deterministic low-discrepancy sample of the defect
    /// `lambda_n(X_{n+1}(x)) - X_n(lambda_n(x))`.
    pub fn coherence_defect(&self, samples: usize) -> f64 {
        let mut max_defect = 0.0f64;
        for n in 0..self.tower.depth() {
            let bond = &self.tower.bondings()[n].matrix;
            let c = self.domain.center.level(n + 1);
            let pts = linalg::halton_box(c, self.domain.radius, samples);
            for p in &pts {
                let upper = self.levels[n + 1].eval(p);
                let lower = self.levels[n].eval(&(bond * p));
                let defect = self.tower.level_norm(n, &(bond * upper - lower));
                max_defect = max_defect.max(defect);
            }
        }
        max_defect
    }
}

/// Sampled (or, for affine fields, exact) level Lipschitz constant on the
/// ball.
pub fn estimate_lipschitz(field: &GradedField, ball: &PseudoBall, n: usize) -> Result<f64> {
    field.tower.check_index(n)?;
    match &field.levels[n] {
        LevelField::Affine { linear, .. } => {
            let norm = &field.tower.level(n).norm;
            Ok(linalg::operator_norm(linear, norm, norm))
        }
        LevelField::Smooth(f) => {
            let c = ball.center.level(n);
            let pts = linalg::halton_box(c, ball.radius, 257);
            let norm = &field.tower.level(n).norm;
            let mut k = 0.0f64;
            for pair in pts.windows(2) {
                let dx = &pair[1] - &pair[0];
                let ndx = norm.vector_norm(&dx);
                if ndx < 1e-12 {
                    continue;
                }
                let df = f(&pair[1]) - f(&pair[0]);
                k = k.max(norm.vector_norm(&df) / ndx);
            }
            // short secants tighten the estimate toward the derivative sup
            for p in pts.iter().take(64) {
                for j in 0..p.len() {
                    let mut q = p.clone();
                    q[j] += 1e-4 * ball.radius.max(1e-6);
                    let dx = &q - p;
                    let df = f(&q) - f(p);
                    k = k.max(norm.vector_norm(&df) / norm.vector_norm(&dx));
                }
            }
            Ok(k * LIPSCHITZ_SAFETY)
        }
    }
}

/// Largest `alpha > 0` with `alpha e^{2 alpha c1} <= r / (2 c2)`, by
/// bisection to relative tolerance 1e-12; exact `r / (2 c2)` when `c1 = 0`.
pub fn alpha_bound(c1: f64, c2: f64, r: f64) -> Result<f64> {
    if c2 <= 0.0 || r <= 0.0 {
        return Err(Error::NonPositiveInput("alpha_bound needs c2, r > 0".into()));
    }
    if c1 < 0.0 {
        return Err(Error::NonPositiveInput("c1 must be >= 0".into()));
    }
    let rhs = r / (2.0 * c2);
    if c1 == 0.0 {
        return Ok(rhs);
    }
    let g = |a: f64| a * (2.0 * a * c1).exp() - rhs;
    let mut lo = 0.0f64;
    let mut hi = rhs; // g(rhs) >= 0 since the exponential factor is >= 1
    debug_assert!(g(hi) >= 0.0);
    while hi - lo > 1e-12 * hi.max(1e-300) {
        let mid = 0.5 * (lo + hi);
        if g(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// The existence certificate attached to a flow.
#[derive(Debug, Clone)]
pub struct Certificate {
    /// Level Lipschitz constants over the active indices.
    pub lipschitz: Vec<f64>,
    pub c1: f64,
    pub c2: f64,
    pub alpha: f64,
    pub radius: f64,
}

/// `C1 = max K_{n_i}`, `C2 = sup over the half ball of the active seminorms
/// of X`, and the resulting time bound.
pub fn certify(field: &GradedField) -> Result<Certificate> {
    let ball = &field.domain;
    let mut lipschitz = Vec::with_capacity(ball.indices.len());
    for &n in &ball.indices {
        lipschitz.push(estimate_lipschitz(field, ball, n)?);
    }
    let c1 = lipschitz.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut c2 = 0.0f64;
    for &n in &ball.indices {
        let c = ball.center.level(n);
        for p in linalg::halton_box(c, ball.radius, 257) {
            c2 = c2.max(field.tower.level_norm(n, &field.levels[n].eval(&p)));
        }
    }
    let c2 = c2.max(1e-300);
    let alpha = alpha_bound(c1, c2, ball.radius)?;
    Ok(Certificate {
        lipschitz,
        c1,
        c2,
        alpha,
        radius: ball.radius,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Picard,
    Rk4,
}

#[derive(Debug, Clone)]
pub struct IntegrateOptions {
    pub method: Method,
    /// Grid steps; defaults derived from the certificate when `None`.
    pub steps: Option<usize>,
    /// Skip the `|t| <= alpha` precondition (rk4 only honors it as a warning
    /// anyway; picard refuses without the certificate unless overridden).
    pub alpha_override: bool,
}

impl IntegrateOptions {
    pub fn new(method: Method) -> Self {
        IntegrateOptions {
            method,
            steps: None,
            alpha_override: false,
        }
    }
}

/// Flow output: the time grid, assembled threads, per-level trajectories and
/// the certificate constants, plus Picard convergence data.
#[derive(Debug, Clone)]
pub struct FlowResult {
    pub times: Vec<f64>,
    pub states: Vec<Thread>,
    /// `per_level[n][j]` = level-n state at `times[j]`.
    pub per_level: Vec<Vec<DVector<f64>>>,
    pub certificate: Certificate,
    pub max_coherence_defect: f64,
    /// Observed Picard contraction ratio and sweep count (picard only).
    pub picard_ratio: Option<f64>,
    pub picard_iters: Option<usize>,
    /// Set when rk4 ran beyond the certified interval.
    pub beyond_alpha: bool,
}

/// Integrates `dx/dt = X(x)` from `x0` over `[0, t]` (t may be negative).
pub fn integrate(
    field: &GradedField,
    x0: &Thread,
    t: f64,
    opts: &IntegrateOptions,
) -> Result<FlowResult> {
    let tower = &field.tower;
    if !field.domain.contains(tower, x0, 2.0) {
        return Err(Error::DomainViolation(
            "initial condition outside the pseudo-ball".into(),
        ));
    }
    let certificate = certify(field)?;
    let beyond_alpha = t.abs() > certificate.alpha;
    if beyond_alpha && opts.method == Method::Picard && !opts.alpha_override {
        return Err(Error::DomainViolation(format!(
            "picard needs |t| <= alpha = {:.6e}",
            certificate.alpha
        )));
    }

    let steps = opts.steps.unwrap_or_else(|| match opts.method {
        Method::Rk4 => (64usize).max((t.abs() * certificate.c1 * 32.0).ceil() as usize),
        Method::Picard => 1024,
    });
    let h = t / steps as f64;
    let times: Vec<f64> = (0..=steps).map(|j| j as f64 * h).collect();

    let mut per_level: Vec<Vec<DVector<f64>>> = Vec::with_capacity(tower.levels().len());
    let mut picard_ratio: Option<f64> = None;
    let mut picard_iters: Option<usize> = None;
    for n in 0..=tower.depth() {
        let x0n = x0.level(n).clone();
        let traj = match opts.method {
            Method::Rk4 => rk4_level(&field.levels[n], &x0n, h, steps),
            Method::Picard => {
                let (traj, ratio, iters) =
                    picard_level(&field.levels[n], &x0n, h, steps)?;
                picard_ratio = Some(picard_ratio.unwrap_or(0.0).max(ratio));
                picard_iters = Some(picard_iters.unwrap_or(0).max(iters));
                traj
            }
        };
        per_level.push(traj);
    }

    let mut states = Vec::with_capacity(times.len());
    let mut max_defect = 0.0f64;
    for (j, &tj) in times.iter().enumerate() {
        let coords: Vec<DVector<f64>> = per_level.iter().map(|traj| traj[j].clone()).collect();
        let (_, defect) = tower.is_thread(&coords)?;
        max_defect = max_defect.max(defect);
        let state = Thread { coords };
        if !field.domain.contains(tower, &state, 2.0) {
            return Err(Error::DomainExit(tj));
        }
        states.push(state);
    }
    if max_defect > FLOW_COHERENCE_TOL {
        return Err(Error::NotCoherent(max_defect));
    }
    Ok(FlowResult {
        times,
        states,
        per_level,
        certificate,
        max_coherence_defect: max_defect,
        picard_ratio,
        picard_iters,
        beyond_alpha,
    })
}

fn rk4_level(field: &LevelField, x0: &DVector<f64>, h: f64, steps: usize) -> Vec<DVector<f64>> {
    let mut traj = Vec::with_capacity(steps + 1);
    traj.push(x0.clone());
    let mut x = x0.clone();
    for _ in 0..steps {
        let k1 = field.eval(&x);
        let k2 = field.eval(&(&x + &k1 * (h / 2.0)));
        let k3 = field.eval(&(&x + &k2 * (h / 2.0)));
        let k4 = field.eval(&(&x + &k3 * h));
        x += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (h / 6.0);
        traj.push(x.clone());
    }
    traj
}

/// Picard iteration of the integral operator on the time grid (cumulative
/// trapezoid quadrature) until the sup-norm change is below tolerance.
fn picard_level(
    field: &LevelField,
    x0: &DVector<f64>,
    h: f64,
    steps: usize,
) -> Result<(Vec<DVector<f64>>, f64, usize)> {
    let mut traj: Vec<DVector<f64>> = vec![x0.clone(); steps + 1];
    let mut prev_change = f64::INFINITY;
    let mut worst_ratio = 0.0f64;
    for iter in 0..PICARD_MAX_ITERS {
        let values: Vec<DVector<f64>> = traj.iter().map(|x| field.eval(x)).collect();
        let mut next = Vec::with_capacity(steps + 1);
        let mut acc = DVector::zeros(x0.len());
        next.push(x0.clone());
        for j in 0..steps {
            acc += (&values[j] + &values[j + 1]) * (h / 2.0);
            next.push(x0 + &acc);
        }
        let change = traj
            .iter()
            .zip(next.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        traj = next;
        if change <= PICARD_TOL {
            return Ok((traj, worst_ratio, iter + 1));
        }
        if prev_change.is_finite() && prev_change > PICARD_TOL {
            worst_ratio = worst_ratio.max(change / prev_change);
        }
        prev_change = change;
    }
    Err(Error::NoConvergence(PICARD_MAX_ITERS))
}

/// `nu-hat_N( Fl_t(Fl_s(x0)) - Fl_{s+t}(x0) )`.
pub fn flow_group_check(
    field: &GradedField,
    x0: &Thread,
    s: f64,
    t: f64,
    opts: &IntegrateOptions,
) -> Result<f64> {
    let tower = &field.tower;
    let first = integrate(field, x0, s, opts)?;
    let mid = first.states.last().unwrap().clone();
    let second = integrate(field, &mid, t, opts)?;
    let direct = integrate(field, x0, s + t, opts)?;
    let diff = tower.thread_sub(second.states.last().unwrap(), direct.states.last().unwrap());
    tower.hat_seminorm(&diff, tower.depth())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tower::projection_tower;
    use approx::assert_relative_eq;

    fn scalar_field(t: &Tower, a: f64) -> Vec<LevelField> {
        t.levels()
            .iter()
            .map(|l| LevelField::Affine {
                linear: DMatrix::identity(l.dim, l.dim) * a,
                constant: DVector::zeros(l.dim),
            })
            .collect()
    }

    #[test]
    fn alpha_bound_degenerate() {
        assert_relative_eq!(alpha_bound(0.0, 1.0, 1.0).unwrap(), 0.5);
    }

    #[test]
    fn alpha_bound_root_of_a_e2a() {
        // alpha e^{2 alpha} = 1/2 has root W(1)/2
        let expected = 0.567143290409783872999968662210355550 / 2.0;
        assert_relative_eq!(alpha_bound(1.0, 1.0, 1.0).unwrap(), expected, epsilon = 1e-10);
    }

    #[test]
    fn alpha_bound_monotone_in_r() {
        let a1 = alpha_bound(1.0, 1.0, 1.0).unwrap();
        let a2 = alpha_bound(1.0, 1.0, 2.0).unwrap();
        assert!(a2 > a1);
    }

    #[test]
    fn alpha_bound_rejects_bad_input() {
        assert!(alpha_bound(1.0, 0.0, 1.0).is_err());
        assert!(alpha_bound(1.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn lipschitz_affine_exact() {
        let t = projection_tower(&[1, 2]);
        let ball = PseudoBall::all_levels(t.zero_thread(), 1.0, t.depth());
        let f = GradedField::new(
            t.clone(),
            ball.clone(),
            vec![
                LevelField::Affine {
                    linear: DMatrix::from_row_slice(1, 1, &[3.0]),
                    constant: DVector::zeros(1),
                },
                LevelField::Affine {
                    linear: DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 3.0]),
                    constant: DVector::zeros(2),
                },
            ],
        )
        .unwrap();
        assert_relative_eq!(estimate_lipschitz(&f, &ball, 1).unwrap(), 3.0);
    }

    #[test]
    fn lipschitz_constant_field_is_zero() {
        let t = projection_tower(&[2]);
        let ball = PseudoBall::all_levels(t.zero_thread(), 1.0, 0);
        let f = GradedField::new(
            t,
            ball.clone(),
            vec![LevelField::Affine {
                linear: DMatrix::zeros(2, 2),
                constant: DVector::from_vec(vec![1.0, -2.0]),
            }],
        )
        .unwrap();
        assert_eq!(estimate_lipschitz(&f, &ball, 0).unwrap(), 0.0);
    }

    #[test]
    fn lipschitz_quadratic_sampled() {
        let t = projection_tower(&[1]);
        let ball = PseudoBall::all_levels(t.zero_thread(), 1.0, 0);
        let f = GradedField::new(
            t,
            ball.clone(),
            vec![LevelField::Smooth(Arc::new(|x: &DVector<f64>| {
                DVector::from_vec(vec![x[0] * x[0]])
            }))],
        )
        .unwrap();
        let k = estimate_lipschitz(&f, &ball, 0).unwrap();
        // sup |2x| on [-1,1] is 2; sampled bound carries the 1.25 factor
        assert!(k >= 1.9 && k <= 2.0 * LIPSCHITZ_SAFETY + 1e-6, "k = {k}");
    }

    #[test]
    fn zero_field_flows_nowhere() {
        let t = projection_tower(&[1, 2, 3]);
        let ball = PseudoBall::all_levels(t.zero_thread(), 1.0, t.depth());
        let f = GradedField::new(t.clone(), ball, scalar_field(&t, 0.0)).unwrap();
        let x0 = t.lift(2, &DVector::from_vec(vec![0.1, 0.2, 0.3])).unwrap();
        let res = integrate(&f, &x0, 0.4, &IntegrateOptions::new(Method::Rk4)).unwrap();
        let end = res.states.last().unwrap();
        let diff = t.thread_sub(end, &x0);
        assert_eq!(t.hat_seminorm(&diff, t.depth()).unwrap(), 0.0);
    }

    #[test]
    fn exponential_growth_rk4() {
        let t = projection_tower(&[1]);
        let ball = PseudoBall::all_levels(t.zero_thread(), 2.0, 0);
        let f = GradedField::new(t.clone(), ball, scalar_field(&t, 1.0)).unwrap();
        let x0 = t.lift(0, &DVector::from_vec(vec![1.0])).unwrap();
        let mut opts = IntegrateOptions::new(Method::Rk4);
        opts.steps = Some(256);
        opts.alpha_override = true;
        let res = integrate(&f, &x0, 1.0, &opts).unwrap();
        assert_relative_eq!(
            res.states.last().unwrap().level(0)[0],
            std::f64::consts::E,
            epsilon = 1e-8
        );
    }

    #[test]
    fn picard_converges_within_alpha() {
        let t = projection_tower(&[1, 2]);
        let ball = PseudoBall::all_levels(t.zero_thread(), 1.0, t.depth());
        let f = GradedField::new(t.clone(), ball, scalar_field(&t, 1.0)).unwrap();
        let x0 = t.lift(1, &DVector::from_vec(vec![0.3, -0.2])).unwrap();
        let cert = certify(&f).unwrap();
        let res = integrate(&f, &x0, 0.9 * cert.alpha, &IntegrateOptions::new(Method::Picard))
            .unwrap();
        let ratio = res.picard_ratio.unwrap();
        assert!(ratio < 1.0, "contraction ratio {ratio}");
        assert!(res.picard_iters.unwrap() <= 60);
    }

    #[test]
    fn picard_refuses_beyond_alpha() {
        let t = projection_tower(&[1]);
        let ball = PseudoBall::all_levels(t.zero_thread(), 1.0, 0);
        let f = GradedField::new(t.clone(), ball, scalar_field(&t, 1.0)).unwrap();
        let x0 = t.lift(0, &DVector::from_vec(vec![0.1])).unwrap();
        let cert = certify(&f).unwrap();
        assert!(matches!(
            integrate(&f, &x0, 2.0 * cert.alpha, &IntegrateOptions::new(Method::Picard)),
            Err(Error::DomainViolation(_))
        ));
    }

    #[test]
    fn picard_and_rk4_agree() {
        let t = projection_tower(&[1, 2]);
        let ball = PseudoBall::all_levels(t.zero_thread(), 1.0, t.depth());
        let f = GradedField::new(t.clone(), ball, scalar_field(&t, 1.0)).unwrap();
        let x0 = t.lift(1, &DVector::from_vec(vec![0.3, -0.2])).unwrap();
        let cert = certify(&f).unwrap();
        let tt = 0.9 * cert.alpha;
        let mut popts = IntegrateOptions::new(Method::Picard);
        popts.steps = Some(4096);
        let p = integrate(&f, &x0, tt, &popts).unwrap();
        let r = integrate(&f, &x0, tt, &IntegrateOptions::new(Method::Rk4)).unwrap();
        let diff = t.thread_sub(p.states.last().unwrap(), r.states.last().unwrap());
        assert!(t.hat_seminorm(&diff, t.depth()).unwrap() <= 1e-6);
    }

    #[test]
    fn flow_coherence_for_affine_field() {
        let t = projection_tower(&[1, 2, 3, 4, 5]);
        let ball = PseudoBall::all_levels(t.zero_thread(), 1.0, t.depth());
        let f = GradedField::new(t.clone(), ball, scalar_field(&t, 0.8)).unwrap();
        let x0 = t
            .lift(4, &DVector::from_vec(vec![0.1, 0.05, -0.1, 0.02, 0.03]))
            .unwrap();
        let res = integrate(&f, &x0, 0.3, &IntegrateOptions::new(Method::Rk4)).unwrap();
        assert!(res.max_coherence_defect <= 1e-9);
    }

    #[test]
    fn group_law_for_linear_flow() {
        let t = projection_tower(&[1, 2]);
        let ball = PseudoBall::all_levels(t.zero_thread(), 1.0, t.depth());
        let f = GradedField::new(t.clone(), ball, scalar_field(&t, 1.0)).unwrap();
        let x0 = t.lift(1, &DVector::from_vec(vec![0.1, -0.05])).unwrap();
        let defect = flow_group_check(&f, &x0, 0.1, 0.1, &IntegrateOptions::new(Method::Rk4))
            .unwrap();
        assert!(defect <= 1e-9, "defect {defect}");
    }

    #[test]
    fn inverse_law_returns_home() {
        let t = projection_tower(&[1, 2]);
        let ball = PseudoBall::all_levels(t.zero_thread(), 1.0, t.depth());
        let f = GradedField::new(t.clone(), ball, scalar_field(&t, 1.0)).unwrap();
        let x0 = t.lift(1, &DVector::from_vec(vec![0.1, -0.05])).unwrap();
        let opts = IntegrateOptions::new(Method::Rk4);
        let fwd = integrate(&f, &x0, 0.2, &opts).unwrap();
        let back = integrate(&f, fwd.states.last().unwrap(), -0.2, &opts).unwrap();
        let diff = t.thread_sub(back.states.last().unwrap(), &x0);
        assert!(t.hat_seminorm(&diff, t.depth()).unwrap() <= 1e-6);
    }

    #[test]
    fn domain_exit_detected() {
        let t = projection_tower(&[1]);
        let ball = PseudoBall::all_levels(t.zero_thread(), 0.05, 0);
        let f = GradedField::new(
            t.clone(),
            ball,
            vec![LevelField::Affine {
                linear: DMatrix::zeros(1, 1),
                constant: DVector::from_vec(vec![1.0]),
            }],
        )
        .unwrap();
        let x0 = t.zero_thread();
        let mut opts = IntegrateOptions::new(Method::Rk4);
        opts.alpha_override = true;
        assert!(matches!(
            integrate(&f, &x0, 1.0, &opts),
            Err(Error::DomainExit(_))
        ));
    }

    #[test]
    fn incoherent_field_rejected() {
        let t = projection_tower(&[1, 2]);
        let ball = PseudoBall::all_levels(t.zero_thread(), 1.0, t.depth());
        let levels = vec![
            LevelField::Affine {
                linear: DMatrix::from_row_slice(1, 1, &[1.0]),
                constant: DVector::zeros(1),
            },
            LevelField::Affine {
                linear: DMatrix::from_row_slice(2, 2, &[5.0, 0.0, 0.0, 1.0]),
                constant: DVector::zeros(2),
            },
        ];
        assert!(matches!(
            GradedField::new(t, ball, levels),
            Err(Error::NotCoherent(_))
        ));
    }
}
