//! `verify-metric`: the metric-space axioms on sampled vectors, the
//! absolute-convexity probe, and agreement with an independent
//! term-enumeration oracle.

use serde_json::json;

use frechet_core::rules::SequenceRule;
use frechet_core::sampling;
use frechet_core::space::SeminormFamily;
use frechet_core::{FrechetSpace, GradedVector};

use crate::config::{ConfigError, Experiment};
use crate::suites::{CheckOutcome, CheckResult, Selection, SuiteOutput, SuiteRun};
use crate::suites::EXACT_SUITE_TOLERANCE;

pub const CHECKS: [&str; 7] = [
    "convexity",
    "identity",
    "oracle-agreement",
    "scaling-monotonicity",
    "symmetry",
    "translation-invariance",
    "triangle",
];

/// Radius of the probed convexity ball; must be below the metric bound so
/// the ball has an exterior.
const CONVEXITY_RADIUS: f64 = 0.25;

/// Evaluates the metric by brute-force enumeration of the defining supremum:
/// every truncation index in turn, prefix maxima spelled out, weights from
/// their closed forms. Shares no code with the library's evaluator beyond
/// the arithmetic primitives, which is what makes exact agreement checkable.
fn oracle_distance(space: &FrechetSpace, e: &GradedVector, f: &GradedVector) -> f64 {
    let deg = e.deg().max(f.deg());
    let a = e.coords_padded(deg);
    let b = f.coords_padded(deg);
    let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let mut best = 0.0f64;
    for n in 1..=deg.max(1) + 4 {
        let mut rho = 0.0f64;
        for (i, d) in diff.iter().enumerate().take(n.min(deg)) {
            let w = match space.seminorms() {
                SeminormFamily::PrefixSup => 1.0,
                SeminormFamily::WeightedPrefixSup { weights } => rule_value(weights, i + 1),
            };
            rho = rho.max(w * d.abs());
        }
        let term = rule_value(space.alphas().rule(), n) * rho / (1.0 + rho);
        if term > best {
            best = term;
        }
    }
    best
}

fn rule_value(rule: &SequenceRule, n: usize) -> f64 {
    match rule {
        SequenceRule::Constant { value } => *value,
        SequenceRule::Geometric { coeff, ratio } => coeff * ratio.powi(n as i32 - 1),
        SequenceRule::Power { coeff, exponent } => coeff * (n as f64).powf(*exponent),
    }
}

fn coords(v: &GradedVector) -> serde_json::Value {
    json!(v.coords())
}

pub fn run(exp: &Experiment, selection: Selection) -> Result<SuiteOutput, ConfigError> {
    let mut run = SuiteRun::new(exp, selection);
    run.parameter("metric_triples", json!(exp.samples.metric_triples));
    run.parameter("convexity_samples", json!(exp.samples.convexity));
    run.parameter("oracle_pairs", json!(exp.samples.oracle_pairs));
    run.parameter_num("convexity_radius", CONVEXITY_RADIUS);

    run.check("identity", |exp| {
        let space = &exp.space;
        let mut rng = sampling::rng_for(exp.seed, 0x4d45_5401);
        let mut out = CheckOutcome::exact();
        for _ in 0..exp.samples.metric_triples {
            let e = sampling::dyadic_vector(space, space.truncation(), &mut rng);
            let f = sampling::dyadic_vector(space, space.truncation(), &mut rng);
            let self_distance = space.distance(&e, &e).expect("members");
            out.observe(self_distance, || json!({ "e": coords(&e) }));
            if e != f {
                let d = space.distance(&e, &f).expect("members");
                if d == 0.0 {
                    out.fail(json!({
                        "message": "distinct vectors at distance zero",
                        "e": coords(&e),
                        "f": coords(&f),
                    }));
                }
            }
        }
        CheckResult::Done(out)
    });

    run.check("symmetry", |exp| {
        let space = &exp.space;
        let mut rng = sampling::rng_for(exp.seed, 0x4d45_5402);
        let mut out = CheckOutcome::with_tolerance(EXACT_SUITE_TOLERANCE);
        for _ in 0..exp.samples.metric_triples {
            let e = sampling::dyadic_vector(space, space.truncation(), &mut rng);
            let f = sampling::dyadic_vector(space, space.truncation(), &mut rng);
            let gap = (space.distance(&e, &f).expect("members")
                - space.distance(&f, &e).expect("members"))
            .abs();
            out.observe(gap, || json!({ "e": coords(&e), "f": coords(&f) }));
        }
        CheckResult::Done(out)
    });

    run.check("triangle", |exp| {
        let space = &exp.space;
        let mut rng = sampling::rng_for(exp.seed, 0x4d45_5403);
        let mut out = CheckOutcome::with_tolerance(EXACT_SUITE_TOLERANCE);
        for _ in 0..exp.samples.metric_triples {
            let e = sampling::dyadic_vector(space, space.truncation(), &mut rng);
            let f = sampling::dyadic_vector(space, space.truncation(), &mut rng);
            let g = sampling::dyadic_vector(space, space.truncation(), &mut rng);
            let lhs = space.distance(&e, &g).expect("members");
            let rhs = space.distance(&e, &f).expect("members")
                + space.distance(&f, &g).expect("members");
            out.observe((lhs - rhs).max(0.0), || {
                json!({ "e": coords(&e), "f": coords(&f), "g": coords(&g) })
            });
        }
        CheckResult::Done(out)
    });

    run.check("translation-invariance", |exp| {
        let space = &exp.space;
        let mut rng = sampling::rng_for(exp.seed, 0x4d45_5404);
        let mut out = CheckOutcome::with_tolerance(EXACT_SUITE_TOLERANCE);
        for _ in 0..exp.samples.metric_triples {
            let e = sampling::dyadic_vector(space, space.truncation(), &mut rng);
            let f = sampling::dyadic_vector(space, space.truncation(), &mut rng);
            let h = sampling::dyadic_vector(space, space.truncation(), &mut rng);
            let base = space.distance(&e, &f).expect("members");
            let moved = space.distance(&e.add(&h), &f.add(&h)).expect("members");
            out.observe((moved - base).abs(), || {
                json!({ "e": coords(&e), "f": coords(&f), "h": coords(&h) })
            });
        }
        CheckResult::Done(out)
    });

    run.check("scaling-monotonicity", |exp| {
        let space = &exp.space;
        let mut rng = sampling::rng_for(exp.seed, 0x4d45_5405);
        let mut out = CheckOutcome::with_tolerance(EXACT_SUITE_TOLERANCE);
        for _ in 0..exp.samples.metric_triples {
            let f = sampling::dyadic_vector(space, space.truncation(), &mut rng);
            let c = sampling::dyadic_unit(&mut rng);
            let scaled = space.norm(&f.scale(c)).expect("member");
            let plain = space.norm(&f).expect("member");
            out.observe((scaled - plain).max(0.0), || json!({ "f": coords(&f), "c": c }));
        }
        CheckResult::Done(out)
    });

    run.check("convexity", |exp| {
        let report = match exp.space.check_absolutely_convex(
            CONVEXITY_RADIUS,
            exp.samples.convexity as u64,
            exp.seed,
        ) {
            Ok(r) => r,
            Err(e) => return CheckResult::Done(CheckOutcome::error(e)),
        };
        let mut out = CheckOutcome::with_tolerance(EXACT_SUITE_TOLERANCE);
        out.samples = report.samples;
        out.violations = report.violations;
        out.residual = (-report.worst_margin).max(0.0);
        out.detail_num("worst_margin", report.worst_margin);
        if report.violations > 0 {
            out.pass = false;
            out.witness = report.witness.as_ref().map(|w| {
                serde_json::to_value(w).unwrap_or_else(|_| json!("unserializable witness"))
            });
        }
        CheckResult::Done(out)
    });

    run.check("oracle-agreement", |exp| {
        let space = &exp.space;
        let mut rng = sampling::rng_for(exp.seed, 0x4d45_5406);
        let mut out = CheckOutcome::exact();
        for _ in 0..exp.samples.oracle_pairs {
            let e = sampling::dyadic_vector(space, space.truncation(), &mut rng);
            let f = sampling::dyadic_vector(space, space.truncation(), &mut rng);
            let library = space.distance(&e, &f).expect("members");
            let oracle = oracle_distance(space, &e, &f);
            out.observe((library - oracle).abs(), || {
                json!({
                    "e": coords(&e),
                    "f": coords(&f),
                    "library": library,
                    "oracle": oracle,
                })
            });
        }
        CheckResult::Done(out)
    });

    Ok(run.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_config, Overrides};

    fn experiment(samples: usize) -> Experiment {
        let text = format!(
            r#"{{
                "schema_version": 1,
                "seed": 11,
                "samples": {{
                    "metric_triples": {samples},
                    "convexity": {samples},
                    "oracle_pairs": {samples}
                }}
            }}"#
        );
        let cfg = parse_config(&text).unwrap();
        Experiment::resolve(&cfg, &Overrides::default()).unwrap()
    }

    #[test]
    fn all_metric_checks_pass_on_the_default_space() {
        let exp = experiment(300);
        let out = run(&exp, Selection::all()).unwrap();
        assert_eq!(out.checks.len(), CHECKS.len());
        for c in &out.checks {
            assert!(c.pass, "{}: residual {:e}", c.name, c.residual);
        }
    }

    #[test]
    fn oracle_matches_the_library_bitwise() {
        let exp = experiment(10);
        let space = &exp.space;
        let mut rng = sampling::rng_for(3, 99);
        for _ in 0..500 {
            let e = sampling::dyadic_vector(space, space.truncation(), &mut rng);
            let f = sampling::dyadic_vector(space, space.truncation(), &mut rng);
            let lib = space.distance(&e, &f).unwrap();
            let orc = oracle_distance(space, &e, &f);
            assert_eq!(lib.to_bits(), orc.to_bits(), "lib {lib:e} vs oracle {orc:e}");
        }
    }

    #[test]
    fn oracle_handles_weighted_seminorms() {
        let text = r#"{
            "schema_version": 1,
            "seed": 4,
            "space": {
                "id": "W",
                "seminorms": {
                    "kind": "weighted_prefix_sup",
                    "weights": { "kind": "power", "coeff": 1.0, "exponent": 0.5 }
                },
                "alphas": { "kind": "geometric", "coeff": 0.25, "ratio": 0.5 },
                "truncation": 6
            },
            "samples": { "metric_triples": 50, "convexity": 50, "oracle_pairs": 200 }
        }"#;
        let cfg = parse_config(text).unwrap();
        let exp = Experiment::resolve(&cfg, &Overrides::default()).unwrap();
        let out = run(&exp, Selection::all()).unwrap();
        let oracle = out.checks.iter().find(|c| c.name == "oracle-agreement").unwrap();
        assert!(oracle.pass, "residual {:e}", oracle.residual);
        assert_eq!(oracle.residual, 0.0);
    }

    #[test]
    fn selection_narrows_the_run() {
        let exp = experiment(20);
        let sel =
            Selection::build(&["triangle".into()], None, &CHECKS, "verify-metric").unwrap();
        let out = run(&exp, sel).unwrap();
        assert_eq!(out.checks.len(), 1);
        assert_eq!(out.checks[0].name, "triangle");
        assert_eq!(out.skips.len(), CHECKS.len() - 1);
    }
}
