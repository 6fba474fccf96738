//! `frechet`: verify anchored towers, build leaf charts, run certified flows.
//!
//! Reports are self-contained JSON with input hashes and the full tolerance
//! and certificate constants, so two runs with the same seed are
//! byte-identical and CI can diff them. Exit codes: 0 all checks passed,
//! 1 a verification failed (report still written), 2 input/usage error.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use frechet_core::algebroid::{
    check_psbla, check_star_assumptions, default_test_sections, involutivity_defect,
    AlgebroidTower,
};
use frechet_core::fixtures::group::{build_group_tower, SubalgebraSpec};
use frechet_core::fixtures::jet::build_jet_tower;
use frechet_core::fixtures::prolongation::{build_prolongation_tower, SeedAlgebroid};
use frechet_core::leaf::{build_chart, probe_with_shrinking, tangency_check, variational_dphi};
use frechet_core::ode::{
    certify, integrate, GradedField, IntegrateOptions, LevelField, Method, PseudoBall,
};
use frechet_core::schema::{parse_input, AlgebroidSchema, InputSchema};
use frechet_core::{Error, Tower};

#[derive(Parser)]
#[command(name = "frechet", version, about = "Tower verifier and leaf chart builder")]
struct Cli {
    /// Seed for all randomized sampling; FRECHET_FLOW_SEED overrides.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify an anchored tower: uniform bounds, bonding squares, involutivity.
    Check {
        /// Input file or fixture name (see `fixtures list`).
        input: String,
        /// Fail unless every level is involutive.
        #[arg(long)]
        expect_involutive: bool,
        /// Required uniform anchor bound; unset means report-only.
        #[arg(long)]
        uniform_c: Option<f64>,
        #[arg(long, default_value_t = 64)]
        samples: usize,
    },
    /// Build an integral-leaf chart and probe it.
    Leaf {
        input: String,
        /// Top-level base coordinates of the chart center, comma separated.
        #[arg(long)]
        point: Option<String>,
        #[arg(long, default_value_t = 0.25)]
        eta: f64,
        /// Chart sample count for the CSV point cloud.
        #[arg(long, default_value_t = 16)]
        samples: usize,
        /// Write sampled (u, phi(u)) rows here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Integrate the affine field of an operator-carrying tower.
    Flow {
        input: String,
        #[arg(long, default_value_t = 0.1)]
        t: f64,
        #[arg(long, value_parser = parse_method, default_value = "rk4")]
        method: Method,
        #[arg(long)]
        steps: Option<usize>,
        /// Integrate past the certified |t| <= alpha interval.
        #[arg(long)]
        alpha_override: bool,
        /// Top-level initial condition, comma separated; default 0.1 per axis.
        #[arg(long)]
        x0: Option<String>,
        /// Write the (time, level, coordinates) trajectory here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// List built-in fixtures or export one as schema JSON.
    Fixtures {
        #[command(subcommand)]
        action: Option<FixtureAction>,
    },
    /// Summarize a directory of report files.
    Report { dir: PathBuf },
}

#[derive(Subcommand)]
enum FixtureAction {
    List,
    Export { name: String },
}

fn parse_method(s: &str) -> Result<Method, String> {
    match s {
        "rk4" => Ok(Method::Rk4),
        "picard" => Ok(Method::Picard),
        other => Err(format!("unknown method '{other}' (rk4|picard)")),
    }
}

const FIXTURE_NAMES: &[&str] = &[
    "heisenberg",
    "group-full",
    "group-first-row",
    "prolongation",
    "cartan1",
    "cartan3",
];

fn build_fixture(name: &str) -> Result<AlgebroidTower, Error> {
    match name {
        "heisenberg" => Ok(build_group_tower(1, &SubalgebraSpec::Full)?.1),
        "group-full" => Ok(build_group_tower(2, &SubalgebraSpec::Full)?.1),
        "group-first-row" => Ok(build_group_tower(2, &SubalgebraSpec::FirstRow)?.1),
        "prolongation" => build_prolongation_tower(
            &SeedAlgebroid::constant(DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0])),
            3,
        ),
        "cartan1" => Ok(build_jet_tower(1, 1, 1)?.1),
        "cartan3" => Ok(build_jet_tower(1, 1, 3)?.1),
        _ => Err(Error::Schema(format!("unknown fixture '{name}'"))),
    }
}

/// A resolved input: parsed structure plus the hash of the bytes that
/// produced it (file contents, or the canonical JSON of a fixture).
struct ResolvedInput {
    name: String,
    sha256: String,
    schema: InputSchema,
    /// In-process fixture towers keep their frame weights; files cannot
    /// carry one, so prefer this when present.
    fixture: Option<AlgebroidTower>,
}

fn sha_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn resolve_input(input: &str) -> Result<ResolvedInput, Error> {
    let path = PathBuf::from(input);
    if path.is_file() {
        let bytes = fs::read(&path).map_err(|e| Error::Schema(format!("{input}: {e}")))?;
        let text = String::from_utf8_lossy(&bytes);
        return Ok(ResolvedInput {
            name: input.to_string(),
            sha256: sha_hex(&bytes),
            schema: parse_input(&text)?,
            fixture: None,
        });
    }
    if FIXTURE_NAMES.contains(&input) {
        let tower = build_fixture(input)?;
        let schema = AlgebroidSchema::from_algebroid(&tower)?;
        let text = serde_json::to_string(&schema).map_err(|e| Error::Schema(e.to_string()))?;
        return Ok(ResolvedInput {
            name: input.to_string(),
            sha256: sha_hex(text.as_bytes()),
            schema: InputSchema::Algebroid(schema),
            fixture: Some(tower),
        });
    }
    Err(Error::Schema(format!(
        "'{input}' is neither a readable file nor a fixture name"
    )))
}

impl ResolvedInput {
    fn algebroid(&self) -> Result<AlgebroidTower, Error> {
        if let Some(t) = &self.fixture {
            return Ok(t.clone());
        }
        match &self.schema {
            InputSchema::Algebroid(a) => a.to_algebroid(),
            InputSchema::Tower(_) => Err(Error::Schema(
                "input is a plain tower; this command needs anchors".into(),
            )),
        }
    }

    fn tower_with_operator(&self) -> Result<(Tower, Vec<DMatrix<f64>>), Error> {
        let InputSchema::Tower(ts) = &self.schema else {
            return Err(Error::Schema(
                "input must be a tower with an embedded operator".into(),
            ));
        };
        let tower = ts.to_tower()?;
        let op = ts
            .to_operator(&tower)?
            .ok_or_else(|| Error::Schema("tower has no operator block".into()))?;
        Ok((tower, op.levels))
    }
}

/// Every report embeds the tolerances the verdict was judged against.
#[derive(Serialize, Deserialize)]
struct Tolerances {
    psbla: f64,
    antisymmetry: f64,
    involutivity: f64,
    chart_coherence: f64,
    flow_coherence: f64,
    tangency: f64,
}

impl Tolerances {
    fn standard() -> Self {
        Tolerances {
            psbla: 1e-8,
            antisymmetry: 1e-10,
            involutivity: 1e-6,
            chart_coherence: 1e-7,
            flow_coherence: 1e-7,
            tangency: 1e-6,
        }
    }
}

#[derive(Serialize)]
struct Report<T: Serialize> {
    command: String,
    input: String,
    input_sha256: String,
    seed: u64,
    tolerances: Tolerances,
    body: T,
    pass: bool,
}

fn emit<T: Serialize>(out: &Option<PathBuf>, report: &Report<T>) -> Result<(), Error> {
    let mut text =
        serde_json::to_string_pretty(report).map_err(|e| Error::Schema(e.to_string()))?;
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::Schema(e.to_string()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn parse_vector(text: &str, dim: usize, what: &str) -> Result<DVector<f64>, Error> {
    let vals = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|e| Error::Schema(format!("{what}: {e}")))?;
    if vals.len() != dim {
        return Err(Error::Schema(format!(
            "{what} has {} entries, expected {dim}",
            vals.len()
        )));
    }
    Ok(DVector::from_vec(vals))
}

#[derive(Serialize)]
struct CheckBody {
    levels: usize,
    uniform_c: f64,
    per_level_sup: Vec<f64>,
    kernel_dims: Vec<usize>,
    kernel_complemented: Vec<bool>,
    closed_range: Vec<bool>,
    anchor_square_defects: Vec<f64>,
    bracket_square_defects: Vec<f64>,
    involutivity_defects: Vec<f64>,
    expect_involutive: bool,
    required_uniform_c: Option<f64>,
}

fn run_check(
    input: &ResolvedInput,
    expect_involutive: bool,
    uniform_c: Option<f64>,
    samples: usize,
    seed: u64,
    out: &Option<PathBuf>,
) -> Result<bool, Error> {
    let t = input.algebroid()?;
    let star = check_star_assumptions(&t, samples)?;
    // One section list per bonding pair, living on the upper level.
    let sections: Vec<_> = t.levels[1..].iter().map(default_test_sections).collect();
    let psbla = check_psbla(&t, samples, &sections)?;
    let inv: Vec<f64> = t
        .levels
        .iter()
        .map(|l| involutivity_defect(l, samples))
        .collect();

    let tol = Tolerances::standard();
    let mut pass = psbla.passes();
    if let Some(c) = uniform_c {
        pass &= star.passes(c);
    }
    if expect_involutive {
        pass &= inv.iter().all(|&d| d <= tol.involutivity);
    }
    let body = CheckBody {
        levels: t.levels.len(),
        uniform_c: star.uniform_c,
        per_level_sup: star.per_level_sup,
        kernel_dims: star.kernel_dims,
        kernel_complemented: star.kernel_complemented,
        closed_range: star.closed_range,
        anchor_square_defects: psbla.anchor_defects,
        bracket_square_defects: psbla.bracket_defects,
        involutivity_defects: inv,
        expect_involutive,
        required_uniform_c: uniform_c,
    };
    emit(
        out,
        &Report {
            command: "check".into(),
            input: input.name.clone(),
            input_sha256: input.sha256.clone(),
            seed,
            tolerances: tol,
            body,
            pass,
        },
    )?;
    Ok(pass)
}

#[derive(Serialize)]
struct LeafBody {
    eta_requested: f64,
    eta: f64,
    certificate_k: f64,
    certificate_m: f64,
    certificate_m1: f64,
    kernel_dims: Vec<usize>,
    chart_coherence_defect: f64,
    tangency_residual: f64,
    dphi_g_sup: f64,
    dphi_s_sup: f64,
    dphi_bounds_ok: bool,
    injectivity_eta_prime: f64,
    injectivity_min_separation: Option<f64>,
    injectivity_min_singular: Option<f64>,
    injectivity_threshold: f64,
    injectivity_shrinks: usize,
    injectivity_passes: bool,
    samples_written: usize,
}

fn run_leaf(
    input: &ResolvedInput,
    point: &Option<String>,
    eta: f64,
    samples: usize,
    csv: &Option<PathBuf>,
    seed: u64,
    out: &Option<PathBuf>,
) -> Result<bool, Error> {
    let t = input.algebroid()?;
    let top = t.base.depth();
    let x = match point {
        Some(text) => {
            let v = parse_vector(text, t.base.dim(top), "--point")?;
            t.base.lift(top, &v)?
        }
        None => t.base.zero_thread(),
    };
    let chart = build_chart(&t, &x, eta)?;
    let st = &chart.split.split_tower;
    let zero_u = st.zero_thread();
    let coherence = chart.coherence_defect(33)?;
    let tangency = tangency_check(&chart, &zero_u, 16)?;
    let diff = variational_dphi(&chart, &zero_u)?;
    let probe = probe_with_shrinking(&chart, 16)?;

    // Seeded point cloud inside the certified ball.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top_u = st.depth();
    let mut written = 0usize;
    let mut rows = String::from("sample,kind,level,coords\n");
    for s in 0..samples {
        let mut v = DVector::from_fn(st.dim(top_u), |_, _| rng.gen_range(-1.0..1.0));
        let u_raw = st.lift(top_u, &v)?;
        let gauge = st.hat_seminorm(&u_raw, top_u)?;
        if gauge > 0.0 {
            v *= 0.9 * probe.eta_prime / gauge;
        }
        let u = st.lift(top_u, &v)?;
        let y = chart.phi(&u)?;
        for i in 0..=top_u {
            let coords: Vec<String> = u.level(i).iter().map(|x| format!("{x:.17e}")).collect();
            rows.push_str(&format!("{s},u,{i},{}\n", coords.join(",")));
        }
        for i in 0..t.base.levels().len() {
            let coords: Vec<String> = y.level(i).iter().map(|x| format!("{x:.17e}")).collect();
            rows.push_str(&format!("{s},phi,{i},{}\n", coords.join(",")));
        }
        written += 1;
    }
    if let Some(path) = csv {
        fs::write(path, rows).map_err(|e| Error::Schema(e.to_string()))?;
    }

    let tol = Tolerances::standard();
    let pass = coherence <= tol.chart_coherence
        && tangency <= tol.tangency
        && diff.bounds_ok
        && probe.passes;
    let body = LeafBody {
        eta_requested: eta,
        eta: chart.eta,
        certificate_k: chart.certificate.k,
        certificate_m: chart.certificate.m,
        certificate_m1: chart.certificate.m1,
        kernel_dims: chart.split.kernel.iter().map(|k| k.ncols()).collect(),
        chart_coherence_defect: coherence,
        tangency_residual: tangency,
        dphi_g_sup: diff.g_sup,
        dphi_s_sup: diff.s_sup,
        dphi_bounds_ok: diff.bounds_ok,
        injectivity_eta_prime: probe.eta_prime,
        injectivity_min_separation: probe.min_separation_ratio,
        injectivity_min_singular: probe.min_dphi_singular,
        injectivity_threshold: probe.threshold,
        injectivity_shrinks: probe.shrink_count,
        injectivity_passes: probe.passes,
        samples_written: written,
    };
    emit(
        out,
        &Report {
            command: "leaf".into(),
            input: input.name.clone(),
            input_sha256: input.sha256.clone(),
            seed,
            tolerances: tol,
            body,
            pass,
        },
    )?;
    Ok(pass)
}

#[derive(Serialize)]
struct FlowBody {
    t: f64,
    method: String,
    steps: usize,
    certificate_c1: f64,
    certificate_c2: f64,
    certificate_alpha: f64,
    certificate_radius: f64,
    certificate_lipschitz: Vec<f64>,
    alpha_override: bool,
    beyond_alpha: bool,
    max_coherence_defect: f64,
    picard_ratio: Option<f64>,
    picard_iters: Option<usize>,
    final_state_top: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn run_flow(
    input: &ResolvedInput,
    t: f64,
    method: Method,
    steps: Option<usize>,
    alpha_override: bool,
    x0_text: &Option<String>,
    csv: &Option<PathBuf>,
    seed: u64,
    out: &Option<PathBuf>,
) -> Result<bool, Error> {
    let (tower, op_levels) = input.tower_with_operator()?;
    let top = tower.depth();
    let x0 = match x0_text {
        Some(text) => {
            let v = parse_vector(text, tower.dim(top), "--x0")?;
            tower.lift(top, &v)?
        }
        None => tower.lift(top, &DVector::from_element(tower.dim(top), 0.1))?,
    };
    let domain = PseudoBall::all_levels(tower.zero_thread(), 1.0, top);
    let fields = op_levels
        .iter()
        .map(|l| LevelField::Affine {
            linear: l.clone(),
            constant: DVector::zeros(l.nrows()),
        })
        .collect();
    let field = GradedField::new(tower.clone(), domain, fields)?;
    let cert = certify(&field)?;
    if alpha_override && t.abs() > cert.alpha {
        eprintln!(
            "WARNING: integrating to |t| = {} past the certified bound alpha = {:.6e}; \
             the contraction and domain guarantees no longer apply",
            t.abs(),
            cert.alpha
        );
    }
    let mut opts = IntegrateOptions::new(method);
    opts.steps = steps;
    opts.alpha_override = alpha_override;
    let flow = integrate(&field, &x0, t, &opts)?;

    if let Some(path) = csv {
        let mut rows = String::from("time,level,coords\n");
        for (j, &tj) in flow.times.iter().enumerate() {
            for (n, traj) in flow.per_level.iter().enumerate() {
                let coords: Vec<String> =
                    traj[j].iter().map(|x| format!("{x:.17e}")).collect();
                rows.push_str(&format!("{tj:.17e},{n},{}\n", coords.join(",")));
            }
        }
        fs::write(path, rows).map_err(|e| Error::Schema(e.to_string()))?;
    }

    let tol = Tolerances::standard();
    let pass = flow.max_coherence_defect <= tol.flow_coherence
        && flow.picard_ratio.map_or(true, |r| r < 1.0)
        && (!flow.beyond_alpha || alpha_override);
    let body = FlowBody {
        t,
        method: match method {
            Method::Rk4 => "rk4".into(),
            Method::Picard => "picard".into(),
        },
        steps: flow.times.len().saturating_sub(1),
        certificate_c1: cert.c1,
        certificate_c2: cert.c2,
        certificate_alpha: cert.alpha,
        certificate_radius: cert.radius,
        certificate_lipschitz: cert.lipschitz.clone(),
        alpha_override,
        beyond_alpha: flow.beyond_alpha,
        max_coherence_defect: flow.max_coherence_defect,
        picard_ratio: flow.picard_ratio,
        picard_iters: flow.picard_iters,
        final_state_top: flow
            .states
            .last()
            .map(|s| s.level(top).iter().copied().collect())
            .unwrap_or_default(),
    };
    emit(
        out,
        &Report {
            command: "flow".into(),
            input: input.name.clone(),
            input_sha256: input.sha256.clone(),
            seed,
            tolerances: tol,
            body,
            pass,
        },
    )?;
    Ok(pass)
}

fn run_fixtures(action: &Option<FixtureAction>, out: &Option<PathBuf>) -> Result<bool, Error> {
    match action {
        None | Some(FixtureAction::List) => {
            for name in FIXTURE_NAMES {
                println!("{name}");
            }
            Ok(true)
        }
        Some(FixtureAction::Export { name }) => {
            let t = build_fixture(name)?;
            let schema = AlgebroidSchema::from_algebroid(&t)?;
            let mut text = serde_json::to_string_pretty(&schema)
                .map_err(|e| Error::Schema(e.to_string()))?;
            text.push('\n');
            match out {
                Some(path) => {
                    fs::write(path, text).map_err(|e| Error::Schema(e.to_string()))?
                }
                None => print!("{text}"),
            }
            Ok(true)
        }
    }
}

#[derive(Deserialize)]
struct ReportHead {
    command: String,
    input: String,
    pass: bool,
}

fn run_report(dir: &PathBuf) -> Result<bool, Error> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Schema(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(Error::Schema("no .json reports in directory".into()));
    }
    let mut all_pass = true;
    let mut passed = 0usize;
    for path in &entries {
        let text = fs::read_to_string(path).map_err(|e| Error::Schema(e.to_string()))?;
        let head: ReportHead = serde_json::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        let verdict = if head.pass { "pass" } else { "fail" };
        println!(
            "{}: {} {} -> {verdict}",
            path.file_name().unwrap().to_string_lossy(),
            head.command,
            head.input
        );
        all_pass &= head.pass;
        passed += usize::from(head.pass);
    }
    println!("{passed}/{} reports passed", entries.len());
    Ok(all_pass)
}

fn run(cli: &Cli) -> Result<bool, Error> {
    let seed = match std::env::var("FRECHET_FLOW_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map_err(|e| Error::Schema(format!("FRECHET_FLOW_SEED: {e}")))?,
        Err(_) => cli.seed,
    };
    match &cli.command {
        Command::Check {
            input,
            expect_involutive,
            uniform_c,
            samples,
        } => run_check(
            &resolve_input(input)?,
            *expect_involutive,
            *uniform_c,
            *samples,
            seed,
            &cli.out,
        ),
        Command::Leaf {
            input,
            point,
            eta,
            samples,
            csv,
        } => run_leaf(
            &resolve_input(input)?,
            point,
            *eta,
            *samples,
            csv,
            seed,
            &cli.out,
        ),
        Command::Flow {
            input,
            t,
            method,
            steps,
            alpha_override,
            x0,
            csv,
        } => run_flow(
            &resolve_input(input)?,
            *t,
            *method,
            *steps,
            *alpha_override,
            x0,
            csv,
            seed,
            &cli.out,
        ),
        Command::Fixtures { action } => run_fixtures(action, &cli.out),
        Command::Report { dir } => run_report(dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::from(0),
        Ok(false) => ExitCode::from(1),
        Err(Error::Schema(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
