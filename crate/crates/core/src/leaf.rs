//! Integral-leaf charts for anchored towers. The anchor kernels are split
//! off coherently, the restricted anchor gets a Lipschitz and sup
//! certificate, and the chart sends u to the time-1 flow of the frozen
//! field z -> rho(z) u applied to the base point. The differential comes
//! from the variational equations; tangency and injectivity are sampled
//! diagnostics.

use nalgebra::{DMatrix, DVector};

use crate::algebroid::{AlgebroidTower, AnchorMap};
use crate::error::{Error, Result};
use crate::linalg;
use crate::tower::{make_tower, BanachLevel, BondingMap, Thread, Tower};

/// Subspace coherence tolerance for the splitting.
pub const SPLIT_TOL: f64 = 1e-9;
/// Chart level-coherence budget.
pub const CHART_COHERENCE_TOL: f64 = 1e-7;
/// Default RK4 grid for the unit-time chart flows.
pub const DEFAULT_FLOW_STEPS: usize = 256;

/// Per-level kernel/complement decomposition of the anchor at a base point,
/// with the complements chosen top-down inside the bonding images.
#[derive(Debug, Clone)]
pub struct KernelSplit {
    /// Orthonormal kernel bases of the level anchors.
    pub kernel: Vec<DMatrix<f64>>,
    /// Orthonormal complement bases; level i columns lie in the image of the
    /// fiber bonding applied to level i+1 columns.
    pub complement: Vec<DMatrix<f64>>,
    /// Anchors restricted to the complements (injective).
    pub restricted: Vec<DMatrix<f64>>,
    /// Euclidean tower on the complement coordinates, bonded so that the
    /// flows of matched u are level-coherent.
    pub split_tower: Tower,
}

fn anchor_at(t: &AlgebroidTower, x: &Thread, i: usize) -> DMatrix<f64> {
    t.levels[i].anchor.eval(x.level(i))
}

/// Splits every fiber as ker r_i + F'_i. The top complement is the row
/// space of the top anchor; lower complements are carved out of the pushed
/// image by selecting the directions the lower anchor still sees.
pub fn kernel_split(t: &AlgebroidTower, x: &Thread) -> Result<KernelSplit> {
    let n_levels = t.levels.len();
    let top = n_levels - 1;
    let mut anchors = Vec::with_capacity(n_levels);
    for i in 0..n_levels {
        anchors.push(anchor_at(t, x, i));
    }

    let mut kernel = vec![DMatrix::zeros(0, 0); n_levels];
    let mut complement = vec![DMatrix::zeros(0, 0); n_levels];
    let mut restricted = vec![DMatrix::zeros(0, 0); n_levels];

    for i in 0..n_levels {
        kernel[i] = linalg::null_space(&anchors[i], 1e-10);
    }
    complement[top] = linalg::column_space(&anchors[top].transpose(), 1e-10);

    for i in (0..top).rev() {
        let ell = &t.fiber.bondings()[i].matrix;
        let pushed = ell * &complement[i + 1];
        let image = linalg::column_space(&pushed, 1e-10);
        // pick the combinations of the pushed image that the anchor maps
        // injectively; the rest of the image sits in the kernel
        let seen = &anchors[i] * &image;
        let svd = seen.clone().svd(false, true);
        let rank_needed = linalg::rank(&anchors[i], 1e-10);
        let sigma = &svd.singular_values;
        let cutoff = 1e-10 * sigma.max().max(1.0);
        let reach = sigma.iter().filter(|&&s| s > cutoff).count();
        if reach < rank_needed {
            return Err(Error::IncoherentSplit(i));
        }
        let vt = svd.v_t.unwrap();
        let mut coeffs = DMatrix::zeros(image.ncols(), rank_needed);
        for c in 0..rank_needed {
            coeffs.set_column(c, &vt.row(c).transpose());
        }
        complement[i] = &image * coeffs;
        // the new basis must stay inside the pushed subspace
        for c in 0..complement[i].ncols() {
            let col = complement[i].column(c).into_owned();
            if linalg::projection_residual(&image, &col) > SPLIT_TOL {
                return Err(Error::IncoherentSplit(i));
            }
        }
    }

    for i in 0..n_levels {
        restricted[i] = &anchors[i] * &complement[i];
        if restricted[i].ncols() > 0 && linalg::sigma_min(&restricted[i]) <= 1e-10 {
            return Err(Error::NotInjective);
        }
        // kernel + complement must exhaust the fiber
        let kdim = kernel[i].ncols();
        let cdim = complement[i].ncols();
        if kdim + cdim != t.fiber.dim(i) {
            return Err(Error::IncoherentSplit(i));
        }
        if kdim > 0 && cdim > 0 {
            let mut joint = DMatrix::zeros(t.fiber.dim(i), kdim + cdim);
            joint.view_mut((0, 0), (t.fiber.dim(i), kdim)).copy_from(&kernel[i]);
            joint
                .view_mut((0, kdim), (t.fiber.dim(i), cdim))
                .copy_from(&complement[i]);
            if linalg::rank(&joint, 1e-10) != kdim + cdim {
                return Err(Error::IncoherentSplit(i));
            }
        }
    }

    // bondings must carry kernels into kernels
    for i in 0..top {
        let ell = &t.fiber.bondings()[i].matrix;
        if kernel[i + 1].ncols() > 0 {
            let leak = &anchors[i] * (ell * &kernel[i + 1]);
            if linalg::sigma_max(&leak) > SPLIT_TOL {
                return Err(Error::IncoherentSplit(i));
            }
        }
    }

    // u_{i} = pinv(r'_i) delta r'_{i+1} u_{i+1} keeps the level flows matched
    let mut split_levels = Vec::with_capacity(n_levels);
    for (i, c) in complement.iter().enumerate() {
        split_levels.push(BanachLevel::euclidean(i, c.ncols()));
    }
    let mut split_bondings = Vec::with_capacity(top);
    for i in 0..top {
        let delta = &t.base.bondings()[i].matrix;
        let sb = linalg::pinv(&restricted[i], 1e-10) * delta * &restricted[i + 1];
        split_bondings.push(BondingMap::new(i, sb));
    }
    let split_tower = make_tower(split_levels, split_bondings)?;

    Ok(KernelSplit {
        kernel,
        complement,
        restricted,
        split_tower,
    })
}

/// Lipschitz and sup certificate for the restricted anchor over a ball
/// around the base point.
#[derive(Debug, Clone)]
pub struct RhoPrimeCertificate {
    pub k: f64,
    pub m: f64,
    /// m * exp(k), the differential bound constant.
    pub m1: f64,
    pub per_level_k: Vec<f64>,
    pub per_level_m: Vec<f64>,
    pub radius: f64,
}

/// Estimates K (graded Lipschitz constant of z -> rho'(z)) and M (graded sup
/// of the operator norms). Exact for constant and single-coordinate affine
/// anchors; sampled with a 1.25 safety factor otherwise.
pub fn certify_rho_prime(
    t: &AlgebroidTower,
    split: &KernelSplit,
    x: &Thread,
    radius: f64,
) -> Result<RhoPrimeCertificate> {
    if radius <= 0.0 {
        return Err(Error::NonPositiveInput("certificate radius".into()));
    }
    let n_levels = t.levels.len();
    let mut per_level_k = Vec::with_capacity(n_levels);
    let mut per_level_m = Vec::with_capacity(n_levels);
    for i in 0..n_levels {
        let level = &t.levels[i];
        let b = &split.complement[i];
        let base_norm = &t.base.level(i).norm;
        let split_norm = &split.split_tower.level(i).norm;
        let c = x.level(i);
        let ki = match &level.anchor {
            AnchorMap::Constant(_) => 0.0,
            AnchorMap::Affine { linear, .. } => {
                let mut k = 0.0f64;
                for lk in linear {
                    k = k.max(linalg::operator_norm(&(lk * b), split_norm, base_norm));
                }
                // mixed directions can exceed the coordinate axes
                for d in linalg::halton_box(&DVector::zeros(c.len()), 1.0, 64) {
                    let dn = base_norm.vector_norm(&d);
                    if dn < 1e-12 {
                        continue;
                    }
                    let mut m = DMatrix::zeros(level.base_dim, b.ncols());
                    for (kk, lk) in linear.iter().enumerate() {
                        m += lk * b * (d[kk] / dn);
                    }
                    k = k.max(linalg::operator_norm(&m, split_norm, base_norm));
                }
                k
            }
            AnchorMap::Smooth(_) => {
                let pts = linalg::halton_box(c, radius, 129);
                let mut k = 0.0f64;
                for pair in pts.windows(2) {
                    let dz = &pair[1] - &pair[0];
                    let dn = base_norm.vector_norm(&dz);
                    if dn < 1e-12 {
                        continue;
                    }
                    let diff = (level.anchor.eval(&pair[1]) - level.anchor.eval(&pair[0])) * b;
                    k = k.max(linalg::operator_norm(&diff, split_norm, base_norm) / dn);
                }
                k * 1.25
            }
        };
        let mut mi = 0.0f64;
        for z in linalg::halton_box(c, radius, 129) {
            let rp = level.anchor.eval(&z) * b;
            mi = mi.max(linalg::operator_norm(&rp, split_norm, base_norm));
        }
        per_level_k.push(ki);
        per_level_m.push(mi);
    }
    let k = per_level_k.iter().copied().fold(0.0, f64::max);
    let m = per_level_m.iter().copied().fold(0.0, f64::max);
    Ok(RhoPrimeCertificate {
        k,
        m,
        m1: m * k.exp(),
        per_level_k,
        per_level_m,
        radius,
    })
}

/// The chart around a base point: u flows the point for unit time along the
/// frozen restricted-anchor field.
#[derive(Debug, Clone)]
pub struct LeafChart {
    pub tower: AlgebroidTower,
    pub base_point: Thread,
    pub split: KernelSplit,
    pub eta: f64,
    pub certificate: RhoPrimeCertificate,
    pub flow_steps: usize,
}

/// Builds the chart. eta is capped so the certified speed bound keeps the
/// unit-time flow inside every chart box, and at 1 so the Lipschitz bound
/// of the frozen field stays below K.
pub fn build_chart(t: &AlgebroidTower, x: &Thread, eta_request: f64) -> Result<LeafChart> {
    if eta_request <= 0.0 {
        return Err(Error::NonPositiveInput("eta request".into()));
    }
    let split = kernel_split(t, x)?;
    let mut margin = f64::INFINITY;
    for (i, level) in t.levels.iter().enumerate() {
        let off = (x.level(i) - &level.chart_center).amax();
        margin = margin.min(level.chart_halfwidth - off);
    }
    if margin <= 0.0 {
        return Err(Error::DomainViolation(
            "base point outside a chart box".into(),
        ));
    }
    let certificate = certify_rho_prime(t, &split, x, margin)?;
    let eta_cert = if certificate.m > 0.0 {
        margin / (1.1 * certificate.m)
    } else {
        f64::INFINITY
    };
    let eta = eta_request.min(eta_cert).min(1.0);
    Ok(LeafChart {
        tower: t.clone(),
        base_point: x.clone(),
        split,
        eta,
        certificate,
        flow_steps: DEFAULT_FLOW_STEPS,
    })
}

impl LeafChart {
    fn check_u(&self, u: &Thread) -> Result<()> {
        let st = &self.split.split_tower;
        let gauge = st.hat_seminorm(u, st.depth())?;
        if gauge > self.eta + 1e-12 {
            return Err(Error::DomainViolation(format!(
                "u gauge {:.3e} exceeds eta {:.3e}",
                gauge, self.eta
            )));
        }
        Ok(())
    }

    /// Level-i flow of z' = rho_i(z) (B_i u_i) from the base point, time 1.
    pub fn phi_level(&self, i: usize, u_i: &DVector<f64>) -> Result<DVector<f64>> {
        let level = &self.tower.levels[i];
        let dir = &self.split.complement[i] * u_i;
        let h = 1.0 / self.flow_steps as f64;
        let mut z = self.base_point.level(i).clone();
        let f = |z: &DVector<f64>| level.anchor.eval(z) * &dir;
        for step in 0..self.flow_steps {
            let k1 = f(&z);
            let k2 = f(&(&z + &k1 * (h / 2.0)));
            let k3 = f(&(&z + &k2 * (h / 2.0)));
            let k4 = f(&(&z + &k3 * h));
            z += (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (h / 6.0);
            if !level.contains(&z) {
                return Err(Error::DomainExit((step + 1) as f64 * h));
            }
        }
        Ok(z)
    }

    /// The full chart value as a thread; the level flows are certified
    /// coherent before returning.
    pub fn phi(&self, u: &Thread) -> Result<Thread> {
        self.check_u(u)?;
        let mut coords = Vec::with_capacity(self.tower.levels.len());
        for i in 0..self.tower.levels.len() {
            coords.push(self.phi_level(i, u.level(i))?);
        }
        let (_, defect) = self.tower.base.is_thread(&coords)?;
        if defect > CHART_COHERENCE_TOL {
            return Err(Error::NotCoherent(defect));
        }
        Ok(Thread { coords })
    }

    /// Max level-coherence defect of the chart over low-discrepancy u.
    pub fn coherence_defect(&self, samples: usize) -> Result<f64> {
        let st = &self.split.split_tower;
        let top = st.depth();
        let mut max_defect = 0.0f64;
        let center = DVector::zeros(st.dim(top));
        for p in linalg::halton_box(&center, self.eta / (st.dim(top).max(1) as f64).sqrt(), samples)
        {
            let u = st.lift(top, &p)?;
            if st.hat_seminorm(&u, top)? > self.eta {
                continue;
            }
            let coords: Vec<DVector<f64>> = (0..=top)
                .map(|i| self.phi_level(i, u.level(i)))
                .collect::<Result<_>>()?;
            let (_, defect) = self.tower.base.is_thread(&coords)?;
            max_defect = max_defect.max(defect);
        }
        Ok(max_defect)
    }
}

/// The chart differential at u, one matrix per level, plus the observed
/// bounds from the variational integration.
#[derive(Debug, Clone)]
pub struct Differential {
    /// levels[i] maps split coordinates at level i to base tangents.
    pub levels: Vec<DMatrix<f64>>,
    /// Sup over the grid of the homogeneous solution norm; certified
    /// bound exp(K).
    pub g_sup: f64,
    /// Sup over the grid of the inhomogeneous solution norm; certified
    /// bound M exp(K).
    pub s_sup: f64,
    pub bounds_ok: bool,
}

impl Differential {
    pub fn apply(&self, v: &Thread) -> Vec<DVector<f64>> {
        self.levels
            .iter()
            .enumerate()
            .map(|(i, s)| s * v.level(i))
            .collect()
    }
}

/// Integrates G' = A G and S' = A S + B along the chart flow, where A is
/// the base derivative of the frozen field and B is the restricted anchor
/// along the trajectory. Returns S at time 1 per level.
pub fn variational_dphi(chart: &LeafChart, u: &Thread) -> Result<Differential> {
    chart.check_u(u)?;
    let mut levels = Vec::with_capacity(chart.tower.levels.len());
    let mut g_sup = 0.0f64;
    let mut s_sup = 0.0f64;
    for i in 0..chart.tower.levels.len() {
        let level = &chart.tower.levels[i];
        let bmat = &chart.split.complement[i];
        let dir = bmat * u.level(i);
        let bd = level.base_dim;
        let kd = bmat.ncols();
        let h = 1.0 / chart.flow_steps as f64;
        let fd = level.fd_step();

        let mut z = chart.base_point.level(i).clone();
        let mut g = DMatrix::identity(bd, bd);
        let mut s = DMatrix::zeros(bd, kd);
        let fz = |z: &DVector<f64>| level.anchor.eval(z) * &dir;
        let amat = |z: &DVector<f64>| level.anchor.jacobian_times(z, &dir, fd);
        let bmat_at = |z: &DVector<f64>| level.anchor.eval(z) * bmat;

        for step in 0..chart.flow_steps {
            g_sup = g_sup.max(linalg::sigma_max(&g));
            s_sup = s_sup.max(linalg::sigma_max(&s));
            // one RK4 step of the augmented system (z, G, S)
            let k1z = fz(&z);
            let a1 = amat(&z);
            let k1g = &a1 * &g;
            let k1s = &a1 * &s + bmat_at(&z);

            let z2 = &z + &k1z * (h / 2.0);
            let a2 = amat(&z2);
            let g2 = &g + &k1g * (h / 2.0);
            let s2 = &s + &k1s * (h / 2.0);
            let k2z = fz(&z2);
            let k2g = &a2 * &g2;
            let k2s = &a2 * &s2 + bmat_at(&z2);

            let z3 = &z + &k2z * (h / 2.0);
            let a3 = amat(&z3);
            let g3 = &g + &k2g * (h / 2.0);
            let s3 = &s + &k2s * (h / 2.0);
            let k3z = fz(&z3);
            let k3g = &a3 * &g3;
            let k3s = &a3 * &s3 + bmat_at(&z3);

            let z4 = &z + &k3z * h;
            let a4 = amat(&z4);
            let g4 = &g + &k3g * h;
            let s4 = &s + &k3s * h;
            let k4z = fz(&z4);
            let k4g = &a4 * &g4;
            let k4s = &a4 * &s4 + bmat_at(&z4);

            z += (k1z + k2z * 2.0 + k3z * 2.0 + k4z) * (h / 6.0);
            g = &g + (k1g + k2g * 2.0 + k3g * 2.0 + k4g) * (h / 6.0);
            s = &s + (k1s + k2s * 2.0 + k3s * 2.0 + k4s) * (h / 6.0);
            if !level.contains(&z) {
                return Err(Error::DomainExit((step + 1) as f64 * h));
            }
        }
        g_sup = g_sup.max(linalg::sigma_max(&g));
        s_sup = s_sup.max(linalg::sigma_max(&s));
        levels.push(s);
    }
    let cert = &chart.certificate;
    let slack = 1e-6;
    let bounds_ok = g_sup <= cert.k.exp() + slack && s_sup <= cert.m1 + slack;
    Ok(Differential {
        levels,
        g_sup,
        s_sup,
        bounds_ok,
    })
}

/// Max over sampled v and levels of the relative residual of the chart
/// differential against the anchor image at the chart point. Small residuals
/// witness tangency; large ones witness a non-involutive distribution.
pub fn tangency_check(chart: &LeafChart, u: &Thread, sample_v: usize) -> Result<f64> {
    let dphi = variational_dphi(chart, u)?;
    let point = chart.phi(u)?;
    let st = &chart.split.split_tower;
    let top = st.depth();
    let mut columns = Vec::with_capacity(chart.tower.levels.len());
    for (i, level) in chart.tower.levels.iter().enumerate() {
        columns.push(linalg::column_space(&level.anchor.eval(point.level(i)), 1e-10));
    }
    let mut residual = 0.0f64;
    let center = DVector::zeros(st.dim(top));
    for p in linalg::halton_box(&center, 1.0, sample_v) {
        let v = st.lift(top, &p)?;
        for (i, w) in dphi.apply(&v).iter().enumerate() {
            let wn = w.norm();
            if wn < 1e-12 {
                continue;
            }
            residual = residual.max(linalg::projection_residual(&columns[i], w) / wn);
        }
    }
    Ok(residual)
}

/// Pairwise separation and differential conditioning over a sampled ball.
#[derive(Debug, Clone)]
pub struct InjectivityReport {
    pub eta_prime: f64,
    /// Min over sampled pairs of hat-seminorm separation ratios.
    pub min_separation_ratio: Option<f64>,
    /// Min over sampled u and levels of the smallest singular value of the
    /// differential.
    pub min_dphi_singular: Option<f64>,
    pub m1: f64,
    pub threshold: f64,
    pub passes: bool,
    pub shrink_count: usize,
}

pub fn injectivity_probe(
    chart: &LeafChart,
    eta_prime: f64,
    trials: usize,
) -> Result<InjectivityReport> {
    let m1 = chart.certificate.m1;
    let threshold = 1.0 / (2.0 * m1.max(1e-300));
    let st = &chart.split.split_tower;
    let top = st.depth();
    if trials == 0 {
        return Ok(InjectivityReport {
            eta_prime,
            min_separation_ratio: None,
            min_dphi_singular: None,
            m1,
            threshold,
            passes: true,
            shrink_count: 0,
        });
    }
    let center = DVector::zeros(st.dim(top));
    let scale = eta_prime / (st.dim(top).max(1) as f64).sqrt();
    let pts = linalg::halton_box(&center, scale, 2 * trials);
    let mut min_ratio = f64::INFINITY;
    let mut min_sigma = f64::INFINITY;
    for (pi, pair) in pts.chunks_exact(2).enumerate() {
        let u = st.lift(top, &pair[0])?;
        let v = st.lift(top, &pair[1])?;
        let du = st.hat_seminorm(&st.thread_sub(&u, &v), top)?;
        if du < 1e-12 {
            continue;
        }
        let fu = chart.phi(&u)?;
        let fv = chart.phi(&v)?;
        let dphi_dist = chart
            .tower
            .base
            .hat_seminorm(&chart.tower.base.thread_sub(&fu, &fv), top)?;
        min_ratio = min_ratio.min(dphi_dist / du);
        if pi < 8 {
            let d = variational_dphi(chart, &u)?;
            for s in &d.levels {
                if s.ncols() > 0 {
                    min_sigma = min_sigma.min(linalg::sigma_min(s));
                }
            }
        }
    }
    let min_separation_ratio = min_ratio.is_finite().then_some(min_ratio);
    let min_dphi_singular = min_sigma.is_finite().then_some(min_sigma);
    let passes = min_separation_ratio.map_or(true, |r| r >= threshold)
        && min_dphi_singular.map_or(true, |s| s >= threshold);
    Ok(InjectivityReport {
        eta_prime,
        min_separation_ratio,
        min_dphi_singular,
        m1,
        threshold,
        passes,
        shrink_count: 0,
    })
}

/// Shrinks eta' geometrically (factor 1/2, at most 8 times) until the probe
/// passes; the last failing report is returned otherwise.
pub fn probe_with_shrinking(chart: &LeafChart, trials: usize) -> Result<InjectivityReport> {
    let mut eta_prime = chart.eta;
    let mut last = injectivity_probe(chart, eta_prime, trials)?;
    let mut shrinks = 0usize;
    while !last.passes && shrinks < 8 {
        eta_prime *= 0.5;
        shrinks += 1;
        last = injectivity_probe(chart, eta_prime, trials)?;
        last.shrink_count = shrinks;
    }
    Ok(last)
}
