//! Acceptance gate: nine pinned criteria covering the metric, operator
//! norms, calculus, jets, connections, the linear-system correspondence,
//! the certified integrator, the expression DSL, and report determinism.
//!
//! Each test prints exactly one verdict line; tolerances are pinned here
//! rather than read from any config.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use frechet_cli::config::{parse_config, Experiment, Overrides};
use frechet_cli::report::CheckReport;
use frechet_cli::suites::{self, Selection, SuiteOutput};
use frechet_core::calculus::{Catalog, McMap};
use frechet_core::expr::{self, Var};
use frechet_core::picard::error_bound;
use frechet_core::sampling;

const SEED: u64 = 20_260_815;

fn verdict(n: u32, label: &str, pass: bool) {
    println!("acceptance criterion {n} ({label}): {}", if pass { "pass" } else { "fail" });
}

fn default_experiment(out: &Path) -> Experiment {
    let cfg = parse_config(&format!(r#"{{ "schema_version": 1, "seed": {SEED} }}"#)).unwrap();
    let over = Overrides { out_dir: Some(out.to_path_buf()), ..Overrides::default() };
    Experiment::resolve(&cfg, &over).unwrap()
}

fn check<'a>(out: &'a SuiteOutput, name: &str) -> &'a CheckReport {
    out.checks
        .iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("check `{name}` missing from suite output"))
}

#[test]
fn criterion_1_metric_axioms_convexity_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let exp = default_experiment(dir.path());
    let out = suites::metric::run(&exp, Selection::all()).unwrap();

    let mut pass = true;
    for name in ["identity", "symmetry", "triangle", "translation-invariance"] {
        let c = check(&out, name);
        pass &= c.pass && c.violations == 0 && c.samples >= 10_000 && c.tolerance <= 1e-12;
    }
    let convexity = check(&out, "convexity");
    pass &= convexity.pass && convexity.violations == 0 && convexity.samples >= 10_000;
    let oracle = check(&out, "oracle-agreement");
    pass &= oracle.pass && oracle.samples >= 1_000 && oracle.tolerance == 0.0;

    verdict(1, "metric axioms, convexity, brute-force oracle", pass);
    assert!(pass, "{out:#?}", out = out.checks);
}

#[test]
fn criterion_2_operator_norms_and_currying() {
    let dir = tempfile::tempdir().unwrap();
    let exp = default_experiment(dir.path());
    let out = suites::ops::run(&exp, Selection::all()).unwrap();

    let identity = check(&out, "identity-norm");
    let mut pass = identity.pass
        && identity.residual == 0.0
        && identity.detail["lower_bound"].as_f64() == Some(1.0);
    let scalar = check(&out, "scalar-two-norm");
    pass &= scalar.pass && scalar.detail["lower_bound"].as_f64().unwrap() >= 1.99;
    let sub = check(&out, "submultiplicativity");
    pass &= sub.pass && sub.samples >= 200 && sub.violations == 0;
    let curry = check(&out, "curry-roundtrip");
    pass &= curry.pass && curry.residual == 0.0;
    let transfer = check(&out, "witness-transfer");
    pass &= transfer.pass && transfer.tolerance <= 1e-12;

    verdict(2, "operator norms, submultiplicativity, currying", pass);
    assert!(pass, "{:#?}", out.checks);
}

#[test]
fn criterion_3_differentials_chain_rule_and_symmetry() {
    let dir = tempfile::tempdir().unwrap();
    let exp = default_experiment(dir.path());
    let space = &exp.space;
    let catalog = Catalog::standard(space).unwrap();
    let names: Vec<&str> = catalog.names().collect();

    let mut rng = sampling::rng_for(SEED, 0xACC3);
    let mut fd_gap: f64 = 0.0;
    for i in 0..100 {
        let map = catalog.get(names[i % names.len()]).unwrap();
        let p = sampling::dyadic_vector(space, 4, &mut rng);
        let h = sampling::dyadic_vector(space, 4, &mut rng);
        let fd = map.directional_derivative(&p, &h).unwrap().value;
        let analytic = map.jacobian(&p).unwrap().apply(&h).unwrap();
        fd_gap = fd_gap.max(fd.sub(&analytic).sup_coord());
    }
    let pass_fd = fd_gap <= 1e-8;

    let comp = McMap::compose(
        catalog.get("square_first").unwrap(),
        catalog.get("sin_first").unwrap(),
    )
    .unwrap();
    let mut chain_gap: f64 = 0.0;
    for _ in 0..100 {
        let p = sampling::dyadic_vector(space, 4, &mut rng);
        let analytic = comp.jacobian(&p).unwrap();
        let fd = comp.fd_jacobian(&p, 4).unwrap();
        for j in 1..=4usize {
            let e = space.basis(j, 1.0);
            let gap = analytic.apply(&e).unwrap().sub(&fd.apply(&e).unwrap()).sup_coord();
            chain_gap = chain_gap.max(gap);
        }
    }
    let pass_chain = chain_gap < 1e-7;

    let mut sym_gap: f64 = 0.0;
    for name in ["square_first", "sin_first", "cubic_plus_linear"] {
        let map = catalog.get(name).unwrap();
        for _ in 0..25 {
            let p = sampling::dyadic_vector(space, 4, &mut rng);
            let h = sampling::dyadic_vector(space, 4, &mut rng);
            let g = sampling::dyadic_vector(space, 4, &mut rng);
            let hg = map.fd_second_directional(&p, &h, &g).unwrap().value;
            let gh = map.fd_second_directional(&p, &g, &h).unwrap().value;
            sym_gap = sym_gap.max(hg.sub(&gh).sup_coord());
        }
    }
    let pass_sym = sym_gap < 1e-6;

    let pass = pass_fd && pass_chain && pass_sym;
    verdict(3, "differentials vs finite differences, chain rule, symmetry", pass);
    assert!(pass, "fd {fd_gap:e}, chain {chain_gap:e}, symmetry {sym_gap:e}");
}

#[test]
fn criterion_4_jet_transitions_and_obstruction() {
    let dir = tempfile::tempdir().unwrap();
    let exp = default_experiment(dir.path());
    let out = suites::atlas::run(&exp, Selection::all()).unwrap();

    let linear = check(&out, "jet-linearity");
    let mut pass = linear.pass && linear.violations == 0;
    let example = check(&out, "jet2-example");
    pass &= example.pass && example.tolerance <= 1e-8;
    let obstruction = check(&out, "additivity-obstruction");
    pass &= obstruction.pass && obstruction.residual > 0.1;
    let cocycle = check(&out, "cocycle");
    pass &= cocycle.pass && cocycle.tolerance <= 1e-9;
    pass &= cocycle.detail["triples_checked"].as_u64().unwrap_or(0) >= 1;

    verdict(4, "jet transitions, additivity obstruction, cocycle", pass);
    assert!(pass, "{:#?}", out.checks);
}

#[test]
fn criterion_5_connection_compatibility_and_splitting() {
    let dir = tempfile::tempdir().unwrap();
    let exp = default_experiment(dir.path());
    let compat = suites::geometry::run_compat(&exp, Selection::all()).unwrap();
    let split = suites::geometry::run_split(&exp, Selection::all()).unwrap();

    let law = check(&compat, "compatibility-law");
    let mut pass = law.pass && law.samples >= 100 && law.tolerance <= 1e-7;
    let id = check(&compat, "identity-transition");
    pass &= id.pass && id.tolerance <= 1e-12;
    let merge = check(&split, "merge-inverts-split");
    pass &= merge.pass && merge.residual == 0.0 && merge.samples >= 100;
    let correction = check(&split, "split-correction");
    pass &= correction.pass && correction.residual == 0.0;
    let polarization = check(&split, "polarization-diagonal");
    pass &= polarization.pass && polarization.residual == 0.0;

    verdict(5, "connection compatibility and exact splitting", pass);
    assert!(pass, "{:#?} {:#?}", compat.checks, split.checks);
}

#[test]
fn criterion_6_linear_system_correspondence_and_transfer() {
    let dir = tempfile::tempdir().unwrap();
    let exp = default_experiment(dir.path());
    assert_eq!(exp.ode.rescale, 0.5, "transfer probe must be t/2");
    let out = suites::geometry::run_ode(&exp, Selection::all()).unwrap();

    let provenance = check(&out, "provenance-roundtrip");
    let mut pass = provenance.pass && provenance.residual == 0.0;
    let assembled = check(&out, "assembled-roundtrip");
    pass &= assembled.pass && assembled.residual == 0.0;
    let transfer = check(&out, "transfer-law");
    pass &= transfer.pass && transfer.tolerance <= 1e-9;

    verdict(6, "connection/linear-system correspondence and transfer", pass);
    assert!(pass, "{:#?}", out.checks);
}

#[test]
fn criterion_7_certified_integration_flow_and_uniqueness() {
    let dir = tempfile::tempdir().unwrap();
    let exp = default_experiment(dir.path());

    // Pin the configured problem to the criterion's parameters.
    let field = exp.field("exp");
    assert_eq!((field.l_sup(), field.r_lip()), (2.0, 1.0));
    assert_eq!(exp.picard.start.coords_padded(1), vec![1.0]);
    assert_eq!((exp.picard.t0, exp.picard.radius), (0.0, 1.0));
    assert_eq!((exp.picard.grid_step, exp.picard.max_iters), (1e-3, 8));
    assert_eq!(exp.flow.time, 0.1);

    let started = Instant::now();
    let integrate = suites::dynamics::run_integrate(&exp, Selection::all()).unwrap();
    let flow = suites::dynamics::run_flow(&exp, Selection::all()).unwrap();
    let uniqueness = suites::dynamics::run_uniqueness(&exp, Selection::all()).unwrap();
    let elapsed = started.elapsed();

    let horizon = check(&integrate, "horizon-closed-form");
    let mut pass = horizon.pass && horizon.detail["horizon"].as_f64() == Some(0.5);

    let oracle = check(&integrate, "oracle-error");
    let tail = oracle.detail["certified_tail"].as_f64().unwrap();
    let quad = oracle.detail["quadrature_error_estimate"].as_f64().unwrap();
    pass &= tail >= error_bound(2.0, 1.0, 8, 0.5);
    pass &= oracle.pass && oracle.residual <= error_bound(2.0, 1.0, 8, 0.5) + quad;

    let soundness = check(&integrate, "bound-soundness");
    pass &= soundness.pass && soundness.samples == 8 && soundness.violations == 0;
    pass &= check(&integrate, "ball-containment").pass;

    let flow_oracle = check(&flow, "oracle-error");
    pass &= flow_oracle.pass;
    pass &= check(&flow, "composition").pass;

    let cap = check(&uniqueness, "deviation-cap");
    pass &= cap.pass && cap.tolerance == 1e-6;
    pass &= check(&uniqueness, "within-certificate").pass;

    pass &= elapsed.as_secs_f64() < 5.0;

    verdict(7, "certified integrator, flow, uniqueness, runtime", pass);
    assert!(
        pass,
        "elapsed {elapsed:?}\n{:#?}\n{:#?}\n{:#?}",
        integrate.checks, flow.checks, uniqueness.checks
    );
}

#[test]
fn criterion_8_expression_dsl_roundtrip_and_derivatives() {
    let mut rng = sampling::rng_for(SEED, 0xD51);
    let mut roundtrips = 0_u32;
    for _ in 0..1_000 {
        let ast = expr::sample_ast(&mut rng, 3, true, 4);
        match expr::parse(&ast.to_string()) {
            Ok(back) if back == ast => roundtrips += 1,
            _ => {}
        }
    }
    let pass_roundtrip = roundtrips == 1_000;

    let catalog = [
        "x1 + x1^3",
        "sin(x1) * cos(x2)",
        "exp(0.5 * x1) - x2 / (1 + x3^2)",
        "tanh(x1) + log(4 + x2)",
        "x1 * x2 - 0.25 * x3",
    ];
    let h = 2f64.powi(-20);
    let mut derivative_gap: f64 = 0.0;
    for src in catalog {
        let ast = expr::parse(src).unwrap();
        let d1 = expr::differentiate(&ast, Var::X(1));
        for _ in 0..100 {
            let xs: Vec<f64> = (0..3).map(|_| sampling::dyadic_unit(&mut rng)).collect();
            let mut lo = xs.clone();
            let mut hi = xs.clone();
            lo[0] -= h;
            hi[0] += h;
            let fd = (expr::eval(&ast, &expr::EvalEnv::coords(&hi)).unwrap()
                - expr::eval(&ast, &expr::EvalEnv::coords(&lo)).unwrap())
                / (2.0 * h);
            let symbolic = expr::eval(&d1, &expr::EvalEnv::coords(&xs)).unwrap();
            derivative_gap = derivative_gap.max((symbolic - fd).abs());
        }
    }
    let pass_derivative = derivative_gap <= 1e-7;

    let pass = pass_roundtrip && pass_derivative;
    verdict(8, "DSL roundtrip and symbolic derivatives", pass);
    assert!(pass, "roundtrips {roundtrips}/1000, derivative gap {derivative_gap:e}");
}

#[test]
fn criterion_9_byte_identical_reports() {
    let bin = env!("CARGO_BIN_EXE_frechet");
    let commands = [
        "verify-metric",
        "verify-ops",
        "verify-atlas",
        "compat-check",
        "split-roundtrip",
        "ode-roundtrip",
        "integrate",
        "flow",
        "uniqueness",
    ];
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();

    let mut pass = true;
    for dir in [dir_a.path(), dir_b.path()] {
        for cmd in commands {
            let output = Command::new(bin)
                .args([cmd, "--seed", "4242", "--out"])
                .arg(dir)
                .output()
                .unwrap();
            pass &= output.status.code() == Some(0);
        }
    }
    let mut artifacts: Vec<String> = commands.iter().map(|c| format!("{c}.json")).collect();
    artifacts.push("integrate_curve.csv".into());
    artifacts.push("integrate_certificate.json".into());
    for name in &artifacts {
        let a = std::fs::read(dir_a.path().join(name)).unwrap();
        let b = std::fs::read(dir_b.path().join(name)).unwrap();
        pass &= !a.is_empty() && a == b;
    }

    verdict(9, "byte-identical reports across reruns", pass);
    assert!(pass);
}
