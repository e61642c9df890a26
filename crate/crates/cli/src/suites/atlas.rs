//! `verify-atlas`: transition roundtrips, the cocycle identity on chart
//! triples, linearity of 1-jet transport, the worked 2-jet transition
//! example, and the 2-jet additivity obstruction.

use rand_chacha::ChaCha8Rng;
use serde_json::json;

use frechet_core::calculus::{cubic_plus_linear, DomainSpec, McMap};
use frechet_core::charts::{cocycle_check, jet2_additivity_defect, jet2_transition, Jet2};
use frechet_core::sampling;
use frechet_core::{FrechetSpace, GradedVector};

use crate::config::{ConfigError, Experiment};
use crate::suites::{CheckOutcome, CheckResult, Selection, SuiteOutput, SuiteRun};
use crate::suites::EXACT_SUITE_TOLERANCE;

pub const CHECKS: [&str; 6] = [
    "additivity-obstruction",
    "cocycle",
    "jet-linearity",
    "jet2-example",
    "overlap-consistency",
    "transition-roundtrip",
];

/// Tolerance for transition and cocycle residuals (numeric inverses limit
/// how sharp these can be).
const TRANSITION_TOLERANCE: f64 = 1e-9;

/// Tolerance for the worked 2-jet transition values.
const JET2_EXAMPLE_TOLERANCE: f64 = 1e-8;

/// The additivity defect the obstruction witness must exceed.
const OBSTRUCTION_FLOOR: f64 = 0.1;

/// Draws a point of a declared region, mirroring how charts sample their
/// domains: unrestricted regions use damped dyadic vectors.
pub(crate) fn sample_region(
    space: &FrechetSpace,
    region: &DomainSpec,
    rng: &mut ChaCha8Rng,
) -> GradedVector {
    match region {
        DomainSpec::All => {
            sampling::dyadic_vector(space, space.truncation(), rng).scale(0.25)
        }
        DomainSpec::MetricBall { center, radius } => {
            sampling::vector_in_ball(space, center, *radius, space.truncation(), rng)
        }
    }
}

/// The fixed curved map `x1 + x1^3` used by the worked jet examples.
fn example_map(space: &FrechetSpace) -> McMap {
    cubic_plus_linear(space)
}

pub fn run(exp: &Experiment, selection: Selection) -> Result<SuiteOutput, ConfigError> {
    let mut run = SuiteRun::new(exp, selection);
    run.parameter("atlas_points", json!(exp.samples.atlas_points));
    run.parameter("jet_points", json!(exp.samples.jet_points));
    run.parameter(
        "charts",
        json!(exp.atlas.charts().iter().map(|c| c.label().to_owned()).collect::<Vec<_>>()),
    );

    run.check("transition-roundtrip", |exp| {
        let space = &exp.space;
        let mut rng = sampling::rng_for(exp.seed, 0x4154_4c01);
        let mut out = CheckOutcome::with_tolerance(TRANSITION_TOLERANCE);
        for o in exp.atlas.overlaps() {
            let fwd = exp.atlas.transition(&o.chart_b, &o.chart_a);
            let back = exp.atlas.transition(&o.chart_a, &o.chart_b);
            let (fwd, back) = match (fwd, back) {
                (Ok(f), Ok(b)) => (f, b),
                _ => return CheckResult::Done(CheckOutcome::error("transition construction")),
            };
            let mut done = 0;
            let mut attempts = 0;
            while done < exp.samples.atlas_points && attempts < exp.samples.atlas_points * 20 {
                attempts += 1;
                let x = sample_region(space, &o.region_a, &mut rng);
                let Ok(y) = fwd.eval(&x) else { continue };
                let Ok(returned) = back.eval(&y) else { continue };
                let gap = space.distance(&returned, &x).expect("members");
                out.observe(gap, || {
                    json!({
                        "chart_a": o.chart_a,
                        "chart_b": o.chart_b,
                        "point": x.coords(),
                    })
                });
                done += 1;
            }
            if done == 0 {
                out.fail(json!({
                    "message": "no sample point of the declared overlap survived both transitions",
                    "chart_a": o.chart_a,
                    "chart_b": o.chart_b,
                }));
            }
        }
        CheckResult::Done(out)
    });

    run.check("overlap-consistency", |exp| {
        let mut out = CheckOutcome::with_tolerance(TRANSITION_TOLERANCE);
        out.samples = exp.atlas.overlaps().len() as u64;
        if let Err(e) =
            exp.atlas.check_overlaps(exp.samples.atlas_points, exp.seed, TRANSITION_TOLERANCE)
        {
            out.fail(json!({ "error": e.to_string() }));
        }
        CheckResult::Done(out)
    });

    run.check("cocycle", |exp| {
        let report = match cocycle_check(
            &exp.atlas,
            exp.samples.atlas_points,
            exp.seed,
            TRANSITION_TOLERANCE,
        ) {
            Ok(r) => r,
            Err(e) => return CheckResult::Done(CheckOutcome::error(e)),
        };
        if report.triples_checked == 0 {
            return CheckResult::Skip(
                "the atlas declares no chart triple with pairwise overlaps".into(),
            );
        }
        let mut out = CheckOutcome::with_tolerance(TRANSITION_TOLERANCE);
        out.samples = report.points_checked as u64;
        out.residual = report.max_residual;
        out.violations = report.violations.len() as u64;
        out.pass = report.pass;
        out.detail_value("triples_checked", json!(report.triples_checked));
        out.detail_value("points_skipped", json!(report.points_skipped));
        out.detail_num("min_jacobian_pivot", report.min_jacobian_pivot);
        if !report.pass {
            out.witness = report.violations.first().map(|v| {
                serde_json::to_value(v).unwrap_or_else(|_| json!("unserializable witness"))
            });
        }
        CheckResult::Done(out)
    });

    run.check("jet-linearity", |exp| {
        let space = &exp.space;
        let mut rng = sampling::rng_for(exp.seed, 0x4154_4c02);
        let mut out = CheckOutcome::with_tolerance(EXACT_SUITE_TOLERANCE);
        for o in exp.atlas.overlaps() {
            let Ok(theta) = exp.atlas.transition(&o.chart_b, &o.chart_a) else {
                return CheckResult::Done(CheckOutcome::error("transition construction"));
            };
            let mut done = 0;
            let mut attempts = 0;
            while done < exp.samples.jet_points && attempts < exp.samples.jet_points * 20 {
                attempts += 1;
                let x = sample_region(space, &o.region_a, &mut rng);
                let Ok(d_theta) = theta.jacobian(&x) else { continue };
                let v = sampling::dyadic_vector(space, space.truncation(), &mut rng);
                let w = sampling::dyadic_vector(space, space.truncation(), &mut rng);
                let c = sampling::pow2_scale(&mut rng, -3, 3);
                let (tv, tw, t_scaled, t_sum) = match (
                    d_theta.apply(&v),
                    d_theta.apply(&w),
                    d_theta.apply(&v.scale(c)),
                    d_theta.apply(&v.add(&w)),
                ) {
                    (Ok(a), Ok(b), Ok(c2), Ok(d)) => (a, b, c2, d),
                    _ => continue,
                };
                // Homogeneity over power-of-two scalars holds bitwise.
                let hom_gap = t_scaled.sub(&tv.scale(c)).sup_coord();
                if hom_gap != 0.0 {
                    out.fail(json!({
                        "message": "transport is not exactly homogeneous",
                        "point": x.coords(),
                        "scale": c,
                        "gap": hom_gap,
                    }));
                }
                let add_gap = t_sum.sub(&tv.add(&tw)).sup_coord();
                out.observe(add_gap, || {
                    json!({
                        "chart_a": o.chart_a,
                        "chart_b": o.chart_b,
                        "point": x.coords(),
                    })
                });
                done += 1;
            }
        }
        CheckResult::Done(out)
    });

    run.check("jet2-example", |exp| {
        let space = &exp.space;
        let theta = example_map(space);
        let j = match Jet2::new("example", space.basis(1, 1.0), space.basis(1, 1.0), space.zero())
        {
            Ok(j) => j,
            Err(e) => return CheckResult::Done(CheckOutcome::error(e)),
        };
        let moved = match jet2_transition(&theta, &j) {
            Ok(m) => m,
            Err(e) => return CheckResult::Done(CheckOutcome::error(e)),
        };
        let expected = [2.0, 4.0, 6.0];
        let got = [moved.x.coord(1), moved.v.coord(1), moved.w.coord(1)];
        let mut out = CheckOutcome::with_tolerance(JET2_EXAMPLE_TOLERANCE);
        out.detail_value("expected", json!(expected));
        out.detail_value("got", json!(got));
        let gap = expected
            .iter()
            .zip(&got)
            .map(|(e, g)| (e - g).abs())
            .fold(0.0f64, f64::max);
        out.observe(gap, || json!({ "expected": expected, "got": got }));
        CheckResult::Done(out)
    });

    run.check("additivity-obstruction", |exp| {
        let space = &exp.space;
        let theta = example_map(space);
        let make = || Jet2::new("example", space.basis(1, 1.0), space.basis(1, 1.0), space.zero());
        let (a, b) = match (make(), make()) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return CheckResult::Done(CheckOutcome::error("jet construction")),
        };
        let defect = match jet2_additivity_defect(&theta, &a, &b) {
            Ok(d) => d,
            Err(e) => return CheckResult::Done(CheckOutcome::error(e)),
        };
        // Here a large residual is the theorem: 2-jet transport through a
        // curved map must fail to be additive, so the defect is required to
        // clear the floor.
        let mut out = CheckOutcome::with_tolerance(OBSTRUCTION_FLOOR);
        out.samples = 1;
        out.residual = defect;
        out.detail_num("defect", defect);
        if defect <= OBSTRUCTION_FLOOR {
            out.fail(json!({
                "message": "additivity defect did not clear the required floor",
                "defect": defect,
                "floor": OBSTRUCTION_FLOOR,
            }));
        }
        CheckResult::Done(out)
    });

    Ok(run.finish())
}
