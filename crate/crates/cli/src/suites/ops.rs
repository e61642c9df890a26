//! `verify-ops`: operator-norm lower bounds on the structured catalog,
//! submultiplicativity of the composition, and the curry/uncurry
//! correspondence for bilinear maps.

use rand::Rng;
use serde_json::json;

use frechet_core::operators::{
    lip_norm_estimate, multi_probe_ratio, multilinear_norm_estimate, BilinearTensor, Grouping,
    LinearMapRep, MultilinearMapRep,
};
use frechet_core::sampling;
use frechet_core::FrechetSpace;

use crate::config::{ConfigError, Experiment};
use crate::suites::{CheckOutcome, CheckResult, Selection, SuiteOutput, SuiteRun};
use crate::suites::EXACT_SUITE_TOLERANCE;

pub const CHECKS: [&str; 5] = [
    "curry-roundtrip",
    "identity-norm",
    "scalar-two-norm",
    "submultiplicativity",
    "witness-transfer",
];

/// Slack granted to products of two certified lower bounds.
const SUBMULTIPLICATIVITY_TOLERANCE: f64 = 1e-9;

/// A dense bilinear map with seeded dyadic coefficients on the leading
/// three-coordinate block.
fn sample_bilinear(space: &FrechetSpace, seed: u64) -> MultilinearMapRep {
    let dim = space.truncation().min(3).max(1);
    let mut rng = sampling::rng_for(seed, 0x4f50_5342);
    let coeffs: Vec<f64> =
        (0..dim * dim * dim).map(|_| sampling::dyadic_unit(&mut rng)).collect();
    let tensor = BilinearTensor::new(dim, dim, coeffs).expect("sized coefficient block");
    MultilinearMapRep::bilinear(space.id().clone(), space.id().clone(), tensor)
}

pub fn run(exp: &Experiment, selection: Selection) -> Result<SuiteOutput, ConfigError> {
    let mut run = SuiteRun::new(exp, selection);
    run.parameter("probe_budget", json!(exp.samples.probe_budget));
    run.parameter("operator_pairs", json!(exp.samples.operator_pairs));
    run.parameter(
        "operator_pool",
        json!(exp.operator_pool.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>()),
    );

    run.check("identity-norm", |exp| {
        let space = &exp.space;
        let ident = LinearMapRep::identity(space.id().clone());
        let est = match lip_norm_estimate(&ident, space, space, exp.samples.probe_budget, exp.seed)
        {
            Ok(e) => e,
            Err(e) => return CheckResult::Done(CheckOutcome::error(e)),
        };
        let mut out = CheckOutcome::exact();
        out.detail_num("lower_bound", est.lower_bound);
        out.detail_value("probes_used", json!(est.probes_used));
        out.observe((est.lower_bound - 1.0).abs(), || json!({ "lower_bound": est.lower_bound }));
        CheckResult::Done(out)
    });

    run.check("scalar-two-norm", |exp| {
        let space = &exp.space;
        let map = LinearMapRep::scalar(space.id().clone(), 2.0);
        let est = match lip_norm_estimate(&map, space, space, exp.samples.probe_budget, exp.seed) {
            Ok(e) => e,
            Err(e) => return CheckResult::Done(CheckOutcome::error(e)),
        };
        let mut out = CheckOutcome::exact();
        out.detail_num("lower_bound", est.lower_bound);
        out.detail_num("closed_form_sup", 2.0);
        out.observe((1.99 - est.lower_bound).max(0.0), || {
            json!({ "lower_bound": est.lower_bound, "required": 1.99 })
        });
        CheckResult::Done(out)
    });

    run.check("submultiplicativity", |exp| {
        let space = &exp.space;
        let pool = &exp.operator_pool;
        let budget = exp.samples.probe_budget;
        let mut rng = sampling::rng_for(exp.seed, 0x4f50_5355);
        let mut out = CheckOutcome::with_tolerance(SUBMULTIPLICATIVITY_TOLERANCE);
        for _ in 0..exp.samples.operator_pairs {
            let (name_l, l) = &pool[rng.random_range(0..pool.len())];
            let (name_h, h) = &pool[rng.random_range(0..pool.len())];
            let composed = match LinearMapRep::compose(l.clone(), h.clone()) {
                Ok(c) => c,
                Err(e) => return CheckResult::Done(CheckOutcome::error(e)),
            };
            let seed = exp.seed;
            let estimate = |m: &LinearMapRep| lip_norm_estimate(m, space, space, budget, seed);
            let (el, eh, ec) = match (estimate(l), estimate(h), estimate(&composed)) {
                (Ok(a), Ok(b), Ok(c)) => (a, b, c),
                _ => return CheckResult::Done(CheckOutcome::error("norm estimation failed")),
            };
            let excess = ec.lower_bound - el.lower_bound * eh.lower_bound;
            out.observe(excess.max(0.0), || {
                json!({
                    "l": name_l,
                    "h": name_h,
                    "lower_bound_composed": ec.lower_bound,
                    "lower_bound_l": el.lower_bound,
                    "lower_bound_h": eh.lower_bound,
                })
            });
        }
        CheckResult::Done(out)
    });

    run.check("curry-roundtrip", |exp| {
        let space = &exp.space;
        let b = sample_bilinear(space, exp.seed);
        let curried = match b.curry() {
            Ok(c) => c,
            Err(e) => return CheckResult::Done(CheckOutcome::error(e)),
        };
        let restored = curried.uncurry();
        let mut out = CheckOutcome::exact();
        if curried.grouping() != Grouping::Curried || restored.grouping() != Grouping::Flat {
            out.fail(json!({ "message": "grouping did not roundtrip" }));
        }
        let mut rng = sampling::rng_for(exp.seed, 0x4f50_5343);
        for _ in 0..50 {
            let u = sampling::dyadic_vector(space, space.truncation(), &mut rng);
            let v = sampling::dyadic_vector(space, space.truncation(), &mut rng);
            let args = [u.clone(), v.clone()];
            let (flat, through) = match (b.eval(&args), restored.eval(&args)) {
                (Ok(a), Ok(b)) => (a, b),
                _ => return CheckResult::Done(CheckOutcome::error("bilinear evaluation failed")),
            };
            out.observe(flat.sub(&through).sup_coord(), || {
                json!({ "u": u.coords(), "v": v.coords() })
            });
        }
        CheckResult::Done(out)
    });

    run.check("witness-transfer", |exp| {
        let space = &exp.space;
        let b = sample_bilinear(space, exp.seed);
        let curried = match b.curry() {
            Ok(c) => c,
            Err(e) => return CheckResult::Done(CheckOutcome::error(e)),
        };
        let domains = [space, space];
        let budget = exp.samples.probe_budget;
        let flat_est = multilinear_norm_estimate(&b, &domains, space, budget, exp.seed);
        let curried_est = multilinear_norm_estimate(&curried, &domains, space, budget, exp.seed);
        let (flat_est, curried_est) = match (flat_est, curried_est) {
            (Ok(a), Ok(b)) => (a, b),
            _ => return CheckResult::Done(CheckOutcome::error("norm estimation failed")),
        };
        let mut out = CheckOutcome::with_tolerance(EXACT_SUITE_TOLERANCE);
        out.detail_num("lower_bound", flat_est.lower_bound);
        out.observe((flat_est.lower_bound - curried_est.lower_bound).abs(), || {
            json!({
                "flat": flat_est.lower_bound,
                "curried": curried_est.lower_bound,
            })
        });
        // The stored witness must reproduce the certified bound when its
        // ratio is recomputed from scratch.
        match &flat_est.witness {
            None => out.fail(json!({ "message": "estimate reported no witness" })),
            Some(args) => match multi_probe_ratio(&b, &domains, space, args) {
                Ok(Some(r)) => out.observe((r - flat_est.lower_bound).abs(), || {
                    json!({ "recomputed": r, "reported": flat_est.lower_bound })
                }),
                Ok(None) => out.fail(json!({ "message": "witness has a zero-norm factor" })),
                Err(e) => out.fail(json!({ "error": e.to_string() })),
            },
        }
        CheckResult::Done(out)
    });

    Ok(run.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_config, Overrides};

    fn experiment() -> Experiment {
        let text = r#"{
            "schema_version": 1,
            "seed": 23,
            "samples": { "operator_pairs": 60, "probe_budget": 120 }
        }"#;
        let cfg = parse_config(text).unwrap();
        Experiment::resolve(&cfg, &Overrides::default()).unwrap()
    }

    #[test]
    fn all_operator_checks_pass_on_the_default_pool() {
        let out = run(&experiment(), Selection::all()).unwrap();
        assert_eq!(out.checks.len(), CHECKS.len());
        for c in &out.checks {
            assert!(c.pass, "{}: residual {:e} witness {:?}", c.name, c.residual, c.witness);
        }
    }

    #[test]
    fn identity_norm_is_exactly_one() {
        let out = run(&experiment(), Selection::all()).unwrap();
        let c = out.checks.iter().find(|c| c.name == "identity-norm").unwrap();
        assert_eq!(c.residual, 0.0);
        assert_eq!(c.detail["lower_bound"], json!(1.0));
    }

    #[test]
    fn config_operators_join_the_pool() {
        let text = r#"{
            "schema_version": 1,
            "seed": 23,
            "samples": { "operator_pairs": 40, "probe_budget": 100 },
            "operators": [
                { "name": "third", "op": { "kind": "scalar", "c": 0.3333333333333333 } },
                { "name": "steep_decay",
                  "op": { "kind": "diagonal",
                          "rule": { "kind": "geometric", "coeff": 1.0, "ratio": 0.25 } } }
            ]
        }"#;
        let cfg = parse_config(text).unwrap();
        let exp = Experiment::resolve(&cfg, &Overrides::default()).unwrap();
        assert!(exp.operator_pool.iter().any(|(n, _)| n == "third"));
        let out = run(&exp, Selection::all()).unwrap();
        let sub = out.checks.iter().find(|c| c.name == "submultiplicativity").unwrap();
        assert!(sub.pass, "residual {:e} witness {:?}", sub.residual, sub.witness);
    }
}
