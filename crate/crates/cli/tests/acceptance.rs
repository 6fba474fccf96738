//! End-to-end acceptance gate. Each criterion prints one pass/fail line;
//! run with `--nocapture` to see them on success.

use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use frechet_core::algebroid::{check_star_assumptions, involutivity_defect, AlgebroidTower};
use frechet_core::fixtures::group::{
    build_group_tower, coords_from_matrix, nilpotent_exp, SubalgebraSpec,
};
use frechet_core::fixtures::jet::{build_jet_tower, lift_projection_residual};
use frechet_core::fixtures::prolongation::{build_prolongation_tower, SeedAlgebroid};
use frechet_core::leaf::{build_chart, tangency_check, variational_dphi};
use frechet_core::linalg::sigma_max;
use frechet_core::ode::{
    alpha_bound, certify, integrate, GradedField, IntegrateOptions, LevelField, Method,
    PseudoBall,
};
use frechet_core::operators::{
    check_coherence, compose, exp_tower, injectivity_profile, openness_margin,
    operator_seminorms, random_coherent, GradedOperator,
};
use frechet_core::projection_tower;

fn verdict(line: &str, ok: bool) {
    println!("{line}: {}", if ok { "pass" } else { "fail" });
    assert!(ok, "{line} failed");
}

/// Diagonal affine field on the depth-4 projection tower; diagonal linear
/// parts commute with coordinate projections, so the field is coherent.
fn diagonal_field() -> GradedField {
    let tower = projection_tower(&[1, 2, 3, 4, 5]);
    let diag = [0.5, -0.3, 0.2, 0.1, -0.4];
    let shift = [0.05, -0.02, 0.03, 0.01, 0.02];
    let levels = (0..5)
        .map(|n| LevelField::Affine {
            linear: DMatrix::from_diagonal(&DVector::from_iterator(
                n + 1,
                diag.iter().copied().take(n + 1),
            )),
            constant: DVector::from_iterator(n + 1, shift.iter().copied().take(n + 1)),
        })
        .collect();
    let domain = PseudoBall::all_levels(tower.zero_thread(), 1.0, tower.depth());
    GradedField::new(tower, domain, levels).unwrap()
}

/// Field z -> rho_i(z) v_i for a fixed fiber thread v; coherent whenever the
/// anchor bonding squares commute.
fn frozen_anchor_field(t: &AlgebroidTower, scale: f64, radius: f64) -> GradedField {
    let top = t.fiber.depth();
    let v = t
        .fiber
        .lift(top, &DVector::from_element(t.fiber.dim(top), scale))
        .unwrap();
    let levels = (0..t.levels.len())
        .map(|i| {
            let anchor = t.levels[i].anchor.clone();
            let vi = v.level(i).clone_owned();
            LevelField::Smooth(Arc::new(move |z: &DVector<f64>| anchor.eval(z) * &vi))
        })
        .collect();
    let domain = PseudoBall::all_levels(t.base.zero_thread(), radius, t.base.depth());
    GradedField::new(t.base.clone(), domain, levels).unwrap()
}

#[test]
fn criterion_1_flow_coherence() {
    let start = Instant::now();
    let field = diagonal_field();
    let x0 = field
        .tower
        .lift(4, &DVector::from_element(5, 0.1))
        .unwrap();
    let cert = certify(&field).unwrap();
    let t = (0.9 * cert.alpha).min(0.5);
    let flow = integrate(&field, &x0, t, &IntegrateOptions::new(Method::Rk4)).unwrap();
    let elapsed = start.elapsed();
    verdict(
        "criterion 1 (depth-4 flow coherence <= 1e-7, < 1 s)",
        flow.max_coherence_defect <= 1e-7 && elapsed.as_secs_f64() < 1.0,
    );
}

#[test]
fn criterion_2_certified_step_bound() {
    let alpha = alpha_bound(1.0, 1.0, 1.0).unwrap();
    let mut ok = (alpha - 0.2835716452048919).abs() <= 1e-10;

    let (_, heis) = build_group_tower(1, &SubalgebraSpec::Full).unwrap();
    let prol = build_prolongation_tower(
        &SeedAlgebroid::constant(DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0])),
        3,
    )
    .unwrap();
    let fields = vec![
        diagonal_field(),
        frozen_anchor_field(&heis, 0.05, 0.5),
        frozen_anchor_field(&prol, 0.05, 0.5),
    ];
    for field in &fields {
        let cert = certify(field).unwrap();
        let x0 = field.tower.zero_thread();
        let flow = integrate(
            field,
            &x0,
            0.9 * cert.alpha,
            &IntegrateOptions::new(Method::Picard),
        )
        .unwrap();
        ok &= flow.picard_iters.unwrap() <= 60;
        ok &= flow.picard_ratio.unwrap() < 1.0;
    }
    verdict(
        "criterion 2 (alpha oracle to 1e-10; Picard <= 60 iters, ratio < 1)",
        ok,
    );
}

#[test]
fn criterion_3_variational_oracle() {
    let (_, heis) = build_group_tower(1, &SubalgebraSpec::Full).unwrap();
    let (_, full) = build_group_tower(2, &SubalgebraSpec::Full).unwrap();
    let prol = build_prolongation_tower(
        &SeedAlgebroid::constant(DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0])),
        2,
    )
    .unwrap();
    let mut ok = true;
    let mut worst = 0.0f64;
    for t in [&heis, &full, &prol] {
        let chart = build_chart(t, &t.base.zero_thread(), 0.3).unwrap();
        let st = chart.split.split_tower.clone();
        let top = st.depth();
        let dim = st.dim(top);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        // 20 base points x 5 directions = 100 (u, v) pairs per fixture.
        for _ in 0..20 {
            let mut u_top = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
            let u = st.lift(top, &u_top).unwrap();
            let gauge = st.hat_seminorm(&u, top).unwrap().max(1e-12);
            u_top *= 0.3 * chart.eta / gauge;
            let u = st.lift(top, &u_top).unwrap();
            let d = variational_dphi(&chart, &u).unwrap();
            ok &= d.bounds_ok;
            for _ in 0..5 {
                let mut v_top = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
                v_top /= v_top.norm();
                let v = st.lift(top, &v_top).unwrap();
                let h = 1e-5;
                let up = st.lift(top, &(&u_top + h * &v_top)).unwrap();
                let um = st.lift(top, &(&u_top - h * &v_top)).unwrap();
                let fp = chart.phi(&up).unwrap();
                let fm = chart.phi(&um).unwrap();
                let sv = d.apply(&v);
                for i in 0..t.levels.len() {
                    let fd = (fp.level(i) - fm.level(i)) / (2.0 * h);
                    let rel = (&fd - &sv[i]).norm() / sv[i].norm().max(1e-12);
                    worst = worst.max(rel);
                    ok &= rel <= 1e-4;
                }
            }
        }
    }
    verdict(
        &format!("criterion 3 (dPhi vs central differences <= 1e-4, worst {worst:.3e}; S-bound held)"),
        ok,
    );
}

#[test]
fn criterion_4_frobenius_fixture() {
    let start = Instant::now();
    let (gt, t) = build_group_tower(1, &SubalgebraSpec::Full).unwrap();
    let star = check_star_assumptions(&t, 64).unwrap();
    let mut ok = (star.uniform_c - 1.0).abs() <= 1e-12;

    let chart = build_chart(&t, &t.base.zero_thread(), 0.4).unwrap();
    ok &= chart.coherence_defect(33).unwrap() <= 1e-7;
    let st = chart.split.split_tower.clone();
    let top = st.depth();
    let u_top = DVector::from_fn(st.dim(top), |k, _| 0.02 * (k as f64 + 1.0));
    let u = st.lift(top, &u_top).unwrap();
    ok &= tangency_check(&chart, &st.zero_thread(), 16).unwrap() <= 1e-6;
    ok &= tangency_check(&chart, &u, 16).unwrap() <= 1e-6;

    let out = chart.phi(&u).unwrap();
    for i in 0..t.levels.len() {
        let s = gt.sizes[i];
        let alg = &chart.split.complement[i] * u.level(i);
        let mut h = DMatrix::zeros(s, s);
        for (a, hb) in gt.h_bases[i].iter().enumerate() {
            h += hb * alg[a];
        }
        let expected = coords_from_matrix(&nilpotent_exp(&h));
        ok &= (out.level(i) - &expected).amax() <= 1e-7;
    }
    let elapsed = start.elapsed();
    ok &= elapsed.as_secs_f64() < 10.0;
    verdict(
        "criterion 4 (Heisenberg: uniform_C = 1, tangency <= 1e-6, coherence <= 1e-7, Phi = exp to 1e-7, < 10 s)",
        ok,
    );
}

#[test]
fn criterion_5_cartan_structure() {
    let (jt, t) = build_jet_tower(1, 1, 2).unwrap();
    let defect = involutivity_defect(&t.levels[1], 128);
    let residual = lift_projection_residual(&jt, &t, 1, 256);
    verdict(
        &format!(
            "criterion 5 (Cartan order 1 non-involutive, defect {defect:.3e} >= 1e-2; order-2 lifts project with residual {residual:.3e} <= 1e-9)"
        ),
        defect >= 1e-2 && residual <= 1e-9,
    );
}

#[test]
fn criterion_6_prolongation_norms() {
    let t = build_prolongation_tower(
        &SeedAlgebroid::constant(DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0])),
        3,
    )
    .unwrap();
    let mut ok = (0..4).all(|i| t.fiber.dim(i) == 2 << i);
    let mut violations = 0usize;
    for level in &t.levels {
        for z in level.sample_points(1000) {
            if sigma_max(&level.anchor.eval(&z)) > 3.0 + 1e-9 {
                violations += 1;
            }
        }
    }
    ok &= violations == 0;
    verdict(
        "criterion 6 (prolongation dims (2,4,8,16); anchor norm <= 3 at 10^3 points/level)",
        ok,
    );
}

#[test]
fn criterion_7_operator_suite() {
    let t = projection_tower(&[1, 2, 3, 4, 5]);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut ok = true;

    for _ in 0..20 {
        let a = random_coherent(&t, &mut rng, 0.5);
        let e = exp_tower(&a).unwrap();
        let (_, defect) = check_coherence(&e);
        ok &= defect <= 1e-9;
    }

    for _ in 0..1000 {
        let l = random_coherent(&t, &mut rng, 1.0);
        let m = random_coherent(&t, &mut rng, 1.0);
        let lm = compose(&l, &m).unwrap();
        let nl = operator_seminorms(&l).unwrap().norm_inf;
        let nm = operator_seminorms(&m).unwrap().norm_inf;
        let nlm = operator_seminorms(&lm).unwrap().norm_inf;
        ok &= nlm <= nl * nm + 1e-9;
    }

    let id = GradedOperator::identity(&t);
    let margin = openness_margin(&id).unwrap();
    for _ in 0..1000 {
        let p = random_coherent(&t, &mut rng, 1.0);
        let np = operator_seminorms(&p).unwrap().norm_inf.max(1e-12);
        let scale = 0.9 * margin / np;
        let levels = id
            .levels
            .iter()
            .zip(p.levels.iter())
            .map(|(i, q)| i + q * scale)
            .collect();
        let perturbed = GradedOperator::new(t.clone(), t.clone(), levels).unwrap();
        ok &= injectivity_profile(&perturbed).unwrap().injective;
    }
    verdict(
        "criterion 7 (exp coherence <= 1e-9; submultiplicativity x1000; openness margin x1000)",
        ok,
    );
}

#[test]
fn criterion_8_report_determinism() {
    let bin = env!("CARGO_BIN_EXE_frechet");
    let dir = std::env::temp_dir().join("frechet-acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    let flow_input = dir.join("flow-input.json");
    std::fs::write(
        &flow_input,
        r#"{"levels":[{"dim":1,"norm":"euclidean"},{"dim":2,"norm":"euclidean"}],
"bondings":[[1.0,0.0]],
"operator":{"levels":[[0.5],[0.5,0.0,0.0,0.25]]}}"#,
    )
    .unwrap();
    let runs: Vec<Vec<String>> = vec![
        vec!["check".into(), "heisenberg".into(), "--seed".into(), "42".into()],
        vec![
            "leaf".into(),
            "heisenberg".into(),
            "--seed".into(),
            "42".into(),
            "--samples".into(),
            "4".into(),
        ],
        vec![
            "flow".into(),
            flow_input.to_string_lossy().into_owned(),
            "--t".into(),
            "0.1".into(),
            "--seed".into(),
            "42".into(),
        ],
    ];
    let mut ok = true;
    for args in &runs {
        let run = || {
            let out = Command::new(bin).args(args).output().unwrap();
            assert!(
                out.status.success(),
                "{args:?}: {}",
                String::from_utf8_lossy(&out.stderr)
            );
            out.stdout
        };
        ok &= run() == run();
    }
    verdict(
        "criterion 8 (reports byte-identical across two runs with the same seed)",
        ok,
    );
}
