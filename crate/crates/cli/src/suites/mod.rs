//! The invariant suites behind each subcommand.
//!
//! Every suite declares its check names up front, runs the selected subset,
//! and reports the rest as skipped, so a report always accounts for the full
//! set. Checks fill in a [`CheckOutcome`] with the worst residual, the
//! tolerance it was judged against, and a witness for the first violation.

pub mod atlas;
pub mod dynamics;
pub mod geometry;
pub mod metric;
pub mod ops;

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;

use crate::config::{ConfigError, Experiment};
use crate::report::{num, CheckReport, SkipReport};

/// Absolute tolerance for invariant comparisons that are not declared exact.
pub const EXACT_SUITE_TOLERANCE: f64 = 1e-12;

/// What a check produced: a verdict, or a reason it could not apply.
pub enum CheckResult {
    Done(CheckOutcome),
    Skip(String),
}

/// Accumulated evidence for one check.
pub struct CheckOutcome {
    pub pass: bool,
    pub residual: f64,
    pub tolerance: f64,
    pub samples: u64,
    pub violations: u64,
    pub witness: Option<Value>,
    pub detail: BTreeMap<String, Value>,
}

impl CheckOutcome {
    /// A check judged at an explicit tolerance.
    pub fn with_tolerance(tolerance: f64) -> CheckOutcome {
        CheckOutcome {
            pass: true,
            residual: 0.0,
            tolerance,
            samples: 0,
            violations: 0,
            witness: None,
            detail: BTreeMap::new(),
        }
    }

    /// A check where the comparison must hold exactly.
    pub fn exact() -> CheckOutcome {
        CheckOutcome::with_tolerance(0.0)
    }

    /// Records one sampled residual; residuals above the tolerance count as
    /// violations and capture the first witness.
    pub fn observe(&mut self, residual: f64, witness: impl FnOnce() -> Value) {
        self.samples += 1;
        if residual > self.residual {
            self.residual = residual;
        }
        if residual > self.tolerance {
            self.violations += 1;
            self.pass = false;
            if self.witness.is_none() {
                self.witness = Some(witness());
            }
        }
    }

    /// Marks the check failed outright (beyond per-sample bookkeeping).
    pub fn fail(&mut self, witness: Value) {
        self.pass = false;
        self.violations += 1;
        if self.witness.is_none() {
            self.witness = Some(witness);
        }
    }

    /// A check that failed to evaluate at all.
    pub fn error(message: impl std::fmt::Display) -> CheckOutcome {
        let mut out = CheckOutcome::exact();
        out.fail(serde_json::json!({ "error": message.to_string() }));
        out
    }

    pub fn detail_num(&mut self, key: &str, value: f64) {
        self.detail.insert(key.to_owned(), num(value));
    }

    pub fn detail_value(&mut self, key: &str, value: Value) {
        self.detail.insert(key.to_owned(), value);
    }
}

/// Which checks of a suite the invocation asked for.
#[derive(Clone, Debug)]
pub struct Selection(Option<BTreeSet<String>>);

impl Selection {
    /// Builds a selection, validating requested names against the suite's
    /// declared checks. Flag-level names win over the config's selection.
    pub fn build(
        flag_names: &[String],
        config_names: Option<&Vec<String>>,
        known: &[&str],
        suite: &str,
    ) -> Result<Selection, ConfigError> {
        let requested: Option<Vec<String>> = if !flag_names.is_empty() {
            Some(flag_names.to_vec())
        } else {
            config_names.cloned()
        };
        match requested {
            None => Ok(Selection(None)),
            Some(names) => {
                let mut set = BTreeSet::new();
                for n in names {
                    if !known.contains(&n.as_str()) {
                        return Err(ConfigError(format!(
                            "suite `{suite}` has no check named `{n}` (checks: {})",
                            known.join(", ")
                        )));
                    }
                    set.insert(n);
                }
                Ok(Selection(Some(set)))
            }
        }
    }

    pub fn all() -> Selection {
        Selection(None)
    }

    pub fn wants(&self, name: &str) -> bool {
        match &self.0 {
            None => true,
            Some(set) => set.contains(name),
        }
    }
}

/// What a suite hands back to the driver.
pub struct SuiteOutput {
    pub parameters: BTreeMap<String, Value>,
    pub checks: Vec<CheckReport>,
    pub skips: Vec<SkipReport>,
}

/// Shared bookkeeping for a suite in progress.
pub struct SuiteRun<'a> {
    pub exp: &'a Experiment,
    selection: Selection,
    parameters: BTreeMap<String, Value>,
    checks: Vec<CheckReport>,
    skips: Vec<SkipReport>,
}

impl<'a> SuiteRun<'a> {
    pub fn new(exp: &'a Experiment, selection: Selection) -> SuiteRun<'a> {
        SuiteRun {
            exp,
            selection,
            parameters: BTreeMap::new(),
            checks: Vec::new(),
            skips: Vec::new(),
        }
    }

    pub fn parameter(&mut self, key: &str, value: Value) {
        self.parameters.insert(key.to_owned(), value);
    }

    pub fn parameter_num(&mut self, key: &str, value: f64) {
        self.parameter(key, num(value));
    }

    /// Runs one named check if selected; otherwise records the skip.
    pub fn check(&mut self, name: &str, f: impl FnOnce(&Experiment) -> CheckResult) {
        if !self.selection.wants(name) {
            self.skips.push(SkipReport { name: name.to_owned(), reason: "not selected".into() });
            return;
        }
        match f(self.exp) {
            CheckResult::Done(out) => self.checks.push(CheckReport {
                name: name.to_owned(),
                pass: out.pass,
                residual: out.residual,
                tolerance: out.tolerance,
                samples: out.samples,
                violations: out.violations,
                witness: out.witness,
                detail: out.detail,
            }),
            CheckResult::Skip(reason) => {
                self.skips.push(SkipReport { name: name.to_owned(), reason })
            }
        }
    }

    pub fn finish(self) -> SuiteOutput {
        SuiteOutput { parameters: self.parameters, checks: self.checks, skips: self.skips }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_config, Overrides};

    fn experiment() -> Experiment {
        let cfg = parse_config(r#"{ "schema_version": 1, "seed": 5 }"#).unwrap();
        Experiment::resolve(&cfg, &Overrides::default()).unwrap()
    }

    #[test]
    fn selection_validates_check_names() {
        let known = ["alpha", "beta"];
        let sel = Selection::build(&["beta".into()], None, &known, "demo").unwrap();
        assert!(sel.wants("beta"));
        assert!(!sel.wants("alpha"));
        let err = Selection::build(&["gamma".into()], None, &known, "demo").unwrap_err();
        assert!(err.0.contains("gamma") && err.0.contains("demo"), "{}", err.0);
    }

    #[test]
    fn config_selection_applies_when_flags_are_absent() {
        let known = ["alpha", "beta"];
        let from_cfg = vec!["alpha".to_owned()];
        let sel = Selection::build(&[], Some(&from_cfg), &known, "demo").unwrap();
        assert!(sel.wants("alpha") && !sel.wants("beta"));
        let flags = ["beta".to_owned()];
        let sel = Selection::build(&flags, Some(&from_cfg), &known, "demo").unwrap();
        assert!(sel.wants("beta") && !sel.wants("alpha"));
    }

    #[test]
    fn unselected_checks_are_reported_as_skips() {
        let exp = experiment();
        let sel = Selection::build(&["kept".into()], None, &["kept", "dropped"], "demo").unwrap();
        let mut run = SuiteRun::new(&exp, sel);
        run.check("kept", |_| CheckResult::Done(CheckOutcome::exact()));
        run.check("dropped", |_| panic!("must not run"));
        let out = run.finish();
        assert_eq!(out.checks.len(), 1);
        assert_eq!(out.skips.len(), 1);
        assert_eq!(out.skips[0].reason, "not selected");
    }

    #[test]
    fn outcome_tracks_worst_residual_and_first_witness() {
        let mut out = CheckOutcome::with_tolerance(1e-3);
        out.observe(1e-5, || panic!("within tolerance"));
        out.observe(2e-3, || serde_json::json!("first"));
        out.observe(5e-3, || serde_json::json!("second"));
        assert!(!out.pass);
        assert_eq!(out.samples, 3);
        assert_eq!(out.violations, 2);
        assert_eq!(out.residual, 5e-3);
        assert_eq!(out.witness, Some(serde_json::json!("first")));
    }
}
