//! `integrate`, `flow`, and `uniqueness`: certified Picard runs, the local
//! flow with its uniform horizon, and the two-chart uniqueness comparison.

use std::fmt::Write as _;
use std::path::Path;

use serde_json::json;

use frechet_core::picard::{
    picard_solve, uniqueness_overlap_check, CurveSolution, Flow, PicardProblem, SolverConfig,
    UniquenessParams, TRANSFORMATION_PROBE_TOLERANCE,
};
use frechet_core::{Error as CoreError, FrechetSpace, GradedVector};

use crate::config::{ConfigError, Experiment, OracleKind};
use crate::suites::{CheckOutcome, CheckResult, Selection, SuiteOutput, SuiteRun};

pub const INTEGRATE_CHECKS: [&str; 5] = [
    "ball-containment",
    "bound-soundness",
    "horizon-closed-form",
    "oracle-error",
    "residual-recorded",
];

pub const FLOW_CHECKS: [&str; 5] =
    ["ball-guard", "composition", "horizon-guard", "oracle-error", "time-zero"];

pub const UNIQUENESS_CHECKS: [&str; 3] =
    ["deviation-cap", "transformation-probe", "within-certificate"];

/// Absolute slack granted on top of solution-derived budgets, covering the
/// final float comparisons themselves.
const BUDGET_EPSILON: f64 = 1e-12;

/// Flow-composition amplification: a start-point error grows by at most
/// `e^(R_lip · t)` along the second leg, and `R_lip · t` stays below 1 on
/// the uniform horizon, so `1 + e` (rounded up) covers both legs.
const COMPOSITION_AMPLIFICATION: f64 = 4.0;

/// The closed-form curve a declared oracle pins down.
fn oracle_value(
    space: &FrechetSpace,
    oracle: OracleKind,
    start: &GradedVector,
    t0: f64,
    t: f64,
) -> GradedVector {
    match oracle {
        OracleKind::Exponential => start.scale((t - t0).exp()).retagged(space.id().clone()),
    }
}

fn distance(space: &FrechetSpace, a: &GradedVector, b: &GradedVector) -> f64 {
    space.distance(a, b).expect("suite vectors live in the model space")
}

/// Writes the solved curve as CSV and its certificate as JSON next to the
/// reports. File names are fixed so reruns overwrite in place.
fn write_artifacts(
    dir: &Path,
    space: &FrechetSpace,
    sol: &CurveSolution,
) -> Result<(), ConfigError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| ConfigError(format!("output_dir {}: {e}", dir.display())))?;
    let n = space.truncation();
    let mut csv = String::from("t");
    for i in 1..=n {
        let _ = write!(csv, ",x{i}");
    }
    csv.push('\n');
    for (k, &t) in sol.times().iter().enumerate() {
        let _ = write!(csv, "{t}");
        for c in sol.final_curve()[k].coords_padded(n) {
            let _ = write!(csv, ",{c}");
        }
        csv.push('\n');
    }
    let csv_path = dir.join("integrate_curve.csv");
    std::fs::write(&csv_path, csv)
        .map_err(|e| ConfigError(format!("{}: {e}", csv_path.display())))?;
    let cert = serde_json::to_string_pretty(&sol.certificate())
        .map_err(|e| ConfigError(format!("certificate serialization: {e}")))?;
    let cert_path = dir.join("integrate_certificate.json");
    std::fs::write(&cert_path, cert + "\n")
        .map_err(|e| ConfigError(format!("{}: {e}", cert_path.display())))?;
    Ok(())
}

pub fn run_integrate(exp: &Experiment, selection: Selection) -> Result<SuiteOutput, ConfigError> {
    let setup = &exp.picard;
    let field = exp.field(&setup.field);
    let space = &exp.space;

    let solved: Result<(PicardProblem, CurveSolution), String> = PicardProblem::new(
        field,
        setup.start.clone(),
        setup.t0,
        setup.radius,
        setup.grid_step,
        setup.tol,
    )
    .and_then(|prob| {
        picard_solve(&prob, setup.max_iters, exp.samples.spot_samples, exp.seed)
            .map(|sol| (prob, sol))
    })
    .map_err(|e| e.to_string());

    if let Ok((_, sol)) = &solved {
        write_artifacts(&exp.out_dir, space, sol)?;
    }

    let mut run = SuiteRun::new(exp, selection);
    run.parameter("field", json!(setup.field));
    run.parameter_num("t0", setup.t0);
    run.parameter_num("radius", setup.radius);
    run.parameter_num("grid_step", setup.grid_step);
    run.parameter("max_iters", json!(setup.max_iters));
    run.parameter_num("l_sup", field.l_sup());
    run.parameter_num("r_lip", field.r_lip());
    if let Ok((_, sol)) = &solved {
        run.parameter("n_iters", json!(sol.n_iters()));
        run.parameter("grid_points", json!(sol.times().len()));
        run.parameter(
            "artifacts",
            json!(["integrate_curve.csv", "integrate_certificate.json"]),
        );
    }

    run.check("horizon-closed-form", |_| {
        let prob = match &solved {
            Ok((p, _)) => p,
            Err(msg) => return CheckResult::Done(CheckOutcome::error(msg)),
        };
        let closed_form = (1.0 / field.r_lip()).min(setup.radius / field.l_sup());
        let mut out = CheckOutcome::exact();
        out.detail_num("horizon", prob.horizon());
        out.detail_num("closed_form", closed_form);
        out.observe((prob.horizon() - closed_form).abs(), || {
            json!({ "horizon": prob.horizon(), "closed_form": closed_form })
        });
        CheckResult::Done(out)
    });

    run.check("ball-containment", |_| {
        let (prob, sol) = match &solved {
            Ok(pair) => pair,
            Err(msg) => return CheckResult::Done(CheckOutcome::error(msg)),
        };
        let slack = sol.quadrature_error_estimate() + 1e-14;
        let mut out = CheckOutcome::with_tolerance(slack);
        out.detail_num("quadrature_slack", slack);
        for n in 0..=sol.n_iters() {
            let curve = sol.iterate(n).expect("iterates up to n_iters are stored");
            for (k, value) in curve.iter().enumerate() {
                let dist = distance(space, value, prob.start());
                out.observe((dist - setup.radius).max(0.0), || {
                    json!({ "iterate": n, "t": sol.times()[k], "distance": dist })
                });
            }
        }
        CheckResult::Done(out)
    });

    run.check("bound-soundness", |_| {
        let sol = match &solved {
            Ok((_, s)) => s,
            Err(msg) => return CheckResult::Done(CheckOutcome::error(msg)),
        };
        let slack = sol.quadrature_error_estimate() + 1e-14;
        let mut out = CheckOutcome::with_tolerance(slack);
        for (n, &measured) in sol.successive_sup_distances().iter().enumerate() {
            let certified = sol.certified_bounds()[n];
            out.observe((measured - certified).max(0.0), || {
                json!({ "step": n, "measured": measured, "certified": certified })
            });
        }
        CheckResult::Done(out)
    });

    run.check("oracle-error", |_| {
        let Some(oracle) = setup.oracle else {
            return CheckResult::Skip("no closed-form oracle declared".into());
        };
        let sol = match &solved {
            Ok((_, s)) => s,
            Err(msg) => return CheckResult::Done(CheckOutcome::error(msg)),
        };
        let budget = sol.certified_tail() + sol.quadrature_error_estimate() + 1e-14;
        let mut out = CheckOutcome::with_tolerance(budget);
        out.detail_num("certified_tail", sol.certified_tail());
        out.detail_num("quadrature_error_estimate", sol.quadrature_error_estimate());
        for (k, &t) in sol.times().iter().enumerate() {
            let truth = oracle_value(space, oracle, &setup.start, setup.t0, t);
            let gap = distance(space, &sol.final_curve()[k], &truth);
            out.observe(gap, || json!({ "t": t, "gap": gap }));
        }
        CheckResult::Done(out)
    });

    run.check("residual-recorded", |_| {
        let sol = match &solved {
            Ok((_, s)) => s,
            Err(msg) => return CheckResult::Done(CheckOutcome::error(msg)),
        };
        let mut out = CheckOutcome::exact();
        out.samples = 1;
        out.detail_num("residual_sup", sol.residual_sup());
        out.detail_num("residual_coefficient", sol.residual_coefficient());
        let recorded = sol.residual_sup().is_finite()
            && sol.residual_sup() >= 0.0
            && sol.residual_coefficient().is_finite();
        if !recorded {
            out.fail(json!({
                "message": "residual data is missing or non-finite",
                "residual_sup": sol.residual_sup().to_string(),
            }));
        }
        CheckResult::Done(out)
    });

    Ok(run.finish())
}

pub fn run_flow(exp: &Experiment, selection: Selection) -> Result<SuiteOutput, ConfigError> {
    let setup = &exp.flow;
    let field = exp.field(&setup.field);
    let space = &exp.space;

    let solver = SolverConfig {
        delta: setup.grid_step,
        tol: setup.tol,
        max_iters: setup.max_iters,
        spot_samples: exp.samples.spot_samples,
        seed: exp.seed,
    };
    let flow = Flow::new(field, setup.center.clone(), setup.radius, &solver)
        .map_err(|e| e.to_string());

    let mut run = SuiteRun::new(exp, selection);
    run.parameter("field", json!(setup.field));
    run.parameter_num("radius", setup.radius);
    run.parameter_num("time", setup.time);
    run.parameter_num("grid_step", setup.grid_step);
    if let Ok(f) = &flow {
        run.parameter_num("alpha", f.alpha());
    }

    run.check("time-zero", |_| {
        let flow = match &flow {
            Ok(f) => f,
            Err(msg) => return CheckResult::Done(CheckOutcome::error(msg)),
        };
        let back = match flow.at(&setup.start, 0.0) {
            Ok(b) => b,
            Err(e) => return CheckResult::Done(CheckOutcome::error(e)),
        };
        let mut out = CheckOutcome::exact();
        let gap = back.sub(&setup.start).sup_coord();
        out.observe(gap, || json!({ "start": setup.start.coords(), "gap": gap }));
        CheckResult::Done(out)
    });

    run.check("horizon-guard", |_| {
        let flow = match &flow {
            Ok(f) => f,
            Err(msg) => return CheckResult::Done(CheckOutcome::error(msg)),
        };
        let alpha = flow.alpha();
        let closed_form = (1.0 / field.r_lip()).min(setup.radius / (2.0 * field.l_sup()));
        let mut out = CheckOutcome::exact();
        out.detail_num("alpha", alpha);
        out.detail_num("closed_form", closed_form);
        out.observe((alpha - closed_form).abs(), || {
            json!({ "alpha": alpha, "closed_form": closed_form })
        });
        for t in [alpha, -alpha, 2.0 * alpha] {
            out.samples += 1;
            match flow.at(&setup.start, t) {
                Err(CoreError::OutsideDomain(_)) => {}
                Err(other) => out.fail(json!({
                    "message": "horizon rejection raised the wrong error",
                    "t": t,
                    "error": other.to_string(),
                })),
                Ok(_) => out.fail(json!({
                    "message": "a time at or beyond the uniform horizon was accepted",
                    "t": t,
                })),
            }
        }
        CheckResult::Done(out)
    });

    run.check("ball-guard", |_| {
        let flow = match &flow {
            Ok(f) => f,
            Err(msg) => return CheckResult::Done(CheckOutcome::error(msg)),
        };
        let half = setup.radius / 2.0;
        let far = setup.center.add(&space.basis(1, 2f64.powi(40)));
        let d_far = distance(space, &far, &setup.center);
        if d_far <= half + 1e-12 {
            return CheckResult::Skip(format!(
                "the metric is bounded by {} so every point lies within the admissible \
                 half-radius {half}; there is no outside point to reject",
                space.metric_bound()
            ));
        }
        let mut out = CheckOutcome::exact();
        out.samples = 2;
        match flow.curve(&far) {
            Err(CoreError::OutsideDomain(_)) => {}
            Err(other) => out.fail(json!({
                "message": "far start point raised the wrong error",
                "error": other.to_string(),
            })),
            Ok(_) => out.fail(json!({
                "message": "a start point outside the admissible ball was accepted",
                "distance": d_far,
            })),
        }
        if let Err(e) = flow.curve(&setup.start) {
            out.fail(json!({
                "message": "an admissible start point was rejected",
                "error": e.to_string(),
            }));
        }
        CheckResult::Done(out)
    });

    run.check("oracle-error", |_| {
        let Some(oracle) = setup.oracle else {
            return CheckResult::Skip("no closed-form oracle declared".into());
        };
        let flow = match &flow {
            Ok(f) => f,
            Err(msg) => return CheckResult::Done(CheckOutcome::error(msg)),
        };
        if !(setup.time.abs() < flow.alpha()) {
            return CheckResult::Done(CheckOutcome::error(format!(
                "probe time {} is outside the uniform horizon ±{}",
                setup.time,
                flow.alpha()
            )));
        }
        let sol = match flow.curve(&setup.start) {
            Ok(s) => s,
            Err(e) => return CheckResult::Done(CheckOutcome::error(e)),
        };
        let got = match sol.eval_at(setup.time) {
            Ok(g) => g,
            Err(e) => return CheckResult::Done(CheckOutcome::error(e)),
        };
        let budget = sol.certified_tail() + sol.quadrature_error_estimate() + BUDGET_EPSILON;
        let truth = oracle_value(space, oracle, &setup.start, 0.0, setup.time);
        let mut out = CheckOutcome::with_tolerance(budget);
        out.detail_num("certified_tail", sol.certified_tail());
        out.detail_num("quadrature_error_estimate", sol.quadrature_error_estimate());
        let gap = distance(space, &got, &truth);
        out.observe(gap, || json!({ "t": setup.time, "gap": gap }));
        CheckResult::Done(out)
    });

    run.check("composition", |_| {
        let flow = match &flow {
            Ok(f) => f,
            Err(msg) => return CheckResult::Done(CheckOutcome::error(msg)),
        };
        if !(setup.time.abs() < flow.alpha()) {
            return CheckResult::Done(CheckOutcome::error(format!(
                "probe time {} is outside the uniform horizon ±{}",
                setup.time,
                flow.alpha()
            )));
        }
        let direct_sol = match flow.curve(&setup.start) {
            Ok(s) => s,
            Err(e) => return CheckResult::Done(CheckOutcome::error(e)),
        };
        // Compose on grid-node times so both legs evaluate stored values
        // rather than interpolating.
        let times = direct_sol.times();
        let h = direct_sol.grid_step();
        let index_of = |t: f64| -> usize {
            ((t - times[0]) / h).round().clamp(0.0, (times.len() - 1) as f64) as usize
        };
        let j_half = index_of(setup.time / 2.0);
        let j_full = index_of(setup.time);
        let t_half = times[j_half];
        let t_full = times[j_full];
        let midpoint = direct_sol.final_curve()[j_half].clone();
        let second_sol = match flow.curve(&midpoint) {
            Ok(s) => s,
            Err(e) => return CheckResult::Done(CheckOutcome::error(e)),
        };
        let two_step = match second_sol.eval_at(t_full - t_half) {
            Ok(v) => v,
            Err(e) => return CheckResult::Done(CheckOutcome::error(e)),
        };
        let b_direct = direct_sol.certified_tail() + direct_sol.quadrature_error_estimate();
        let b_second = second_sol.certified_tail() + second_sol.quadrature_error_estimate();
        let budget = COMPOSITION_AMPLIFICATION * (b_direct + b_second) + BUDGET_EPSILON;
        let mut out = CheckOutcome::with_tolerance(budget);
        out.detail_num("first_leg", t_half);
        out.detail_num("total_time", t_full);
        let gap = distance(space, &two_step, &direct_sol.final_curve()[j_full]);
        out.observe(gap, || json!({ "t": t_full, "gap": gap }));
        CheckResult::Done(out)
    });

    Ok(run.finish())
}

pub fn run_uniqueness(exp: &Experiment, selection: Selection) -> Result<SuiteOutput, ConfigError> {
    let setup = &exp.uniqueness;
    let field_a = exp.field(&setup.field_a);
    let field_b = exp.field(&setup.field_b);

    let params = UniquenessParams {
        radius: setup.radius,
        delta: setup.grid_step,
        tol: setup.tol,
        max_iters: setup.max_iters,
        probe_samples: setup.probe_samples,
        seed: exp.seed,
    };
    let outcome = uniqueness_overlap_check(&exp.atlas, field_a, field_b, &setup.start, &params);

    let mut run = SuiteRun::new(exp, selection);
    run.parameter("field_a", json!(setup.field_a));
    run.parameter("field_b", json!(setup.field_b));
    run.parameter("chart_a", json!(field_a.chart()));
    run.parameter("chart_b", json!(field_b.chart()));
    run.parameter_num("radius", setup.radius);
    run.parameter_num("deviation_cap", setup.deviation_cap);

    run.check("transformation-probe", |_| {
        let mut out = CheckOutcome::with_tolerance(TRANSFORMATION_PROBE_TOLERANCE);
        match &outcome {
            Ok(report) => {
                out.observe(report.transformation_residual, || {
                    json!({ "residual": report.transformation_residual })
                });
                out.samples = setup.probe_samples as u64;
                out.detail_num("lipschitz_estimate", report.lipschitz_estimate);
            }
            Err(CoreError::Rejected(msg)) => {
                out.fail(json!({ "message": msg }));
            }
            Err(other) => return CheckResult::Done(CheckOutcome::error(other)),
        }
        CheckResult::Done(out)
    });

    run.check("within-certificate", |_| match &outcome {
        Ok(report) => {
            let mut out = CheckOutcome::with_tolerance(report.tolerance);
            out.observe(report.deviation, || {
                json!({ "deviation": report.deviation, "tolerance": report.tolerance })
            });
            out.samples = report.points_compared as u64;
            out.detail_value(
                "report",
                serde_json::to_value(report).unwrap_or_else(|_| json!("unserializable")),
            );
            CheckResult::Done(out)
        }
        Err(CoreError::Rejected(_)) => {
            CheckResult::Skip("the fields were rejected before integration".into())
        }
        Err(other) => CheckResult::Done(CheckOutcome::error(other)),
    });

    run.check("deviation-cap", |_| match &outcome {
        Ok(report) => {
            let mut out = CheckOutcome::with_tolerance(setup.deviation_cap);
            out.observe(report.deviation, || {
                json!({ "deviation": report.deviation, "cap": setup.deviation_cap })
            });
            out.samples = report.points_compared as u64;
            CheckResult::Done(out)
        }
        Err(CoreError::Rejected(_)) => {
            CheckResult::Skip("the fields were rejected before integration".into())
        }
        Err(other) => CheckResult::Done(CheckOutcome::error(other)),
    });

    Ok(run.finish())
}
