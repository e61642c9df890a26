//! Machine-readable suite reports.
//!
//! A report records every invariant the suite looked at: checks that ran
//! carry a pass/fail verdict, the worst observed residual, the tolerance it
//! was compared against, and a witness for failures; checks that did not run
//! are listed under `skipped` with the reason, so nothing disappears
//! silently. Reports contain no timestamps, hostnames, or absolute paths,
//! and all collections are sorted, so a given (config, seed) pair always
//! produces byte-identical output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

/// Version of the report layout itself.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One invariant that was actually evaluated.
#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub pass: bool,
    /// Worst observed deviation; `0.0` for exact checks that held exactly.
    pub residual: f64,
    /// Threshold the residual was compared against (`0.0` means bitwise).
    pub tolerance: f64,
    /// How many sampled instances the check covered.
    pub samples: u64,
    pub violations: u64,
    /// Concrete offending input, present when the check failed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Value>,
    /// Additional measured quantities, for downstream tooling.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub detail: BTreeMap<String, Value>,
}

/// One invariant that was not evaluated, and why.
#[derive(Clone, Debug, Serialize)]
pub struct SkipReport {
    pub name: String,
    pub reason: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Counts {
    pub selected: usize,
    pub passed: usize,
    pub failed: usize,
    pub skipped: usize,
}

/// The full outcome of one subcommand run.
#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub command: String,
    pub seed: u64,
    pub space: String,
    /// Effective run parameters after flag overrides.
    pub parameters: BTreeMap<String, Value>,
    pub checks: Vec<CheckReport>,
    pub skipped: Vec<SkipReport>,
    pub counts: Counts,
    pub pass: bool,
}

impl Report {
    pub fn new(
        command: &str,
        seed: u64,
        space: &str,
        parameters: BTreeMap<String, Value>,
        mut checks: Vec<CheckReport>,
        mut skipped: Vec<SkipReport>,
    ) -> Report {
        checks.sort_by(|a, b| a.name.cmp(&b.name));
        skipped.sort_by(|a, b| a.name.cmp(&b.name));
        let counts = Counts {
            selected: checks.len(),
            passed: checks.iter().filter(|c| c.pass).count(),
            failed: checks.iter().filter(|c| !c.pass).count(),
            skipped: skipped.len(),
        };
        let pass = counts.failed == 0;
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            command: command.to_owned(),
            seed,
            space: space.to_owned(),
            parameters,
            checks,
            skipped,
            counts,
            pass,
        }
    }

    /// Serializes with a trailing newline; key order is fixed by the struct
    /// layout and the sorted collections.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }

    /// Writes `<dir>/<command>.json` and returns the path.
    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}.json", self.command));
        std::fs::write(&path, self.to_json())?;
        Ok(path)
    }

    /// One summary line per check plus a verdict, for the terminal.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let verdict = if c.pass { "pass" } else { "FAIL" };
            out.push_str(&format!(
                "  {}: {} (residual {:e} vs tolerance {:e}, {} samples, {} violations)\n",
                c.name, verdict, c.residual, c.tolerance, c.samples, c.violations
            ));
        }
        for s in &self.skipped {
            out.push_str(&format!("  {}: skipped ({})\n", s.name, s.reason));
        }
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        out.push_str(&format!(
            "{}: {} ({}/{} checks passed, {} skipped)\n",
            self.command, verdict, self.counts.passed, self.counts.selected, self.counts.skipped
        ));
        out
    }
}

/// A finite float as a JSON number; non-finite values become strings so the
/// report never fails to serialize.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        serde_json::json!(x)
    } else {
        Value::String(format!("{x}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check(name: &str, pass: bool) -> CheckReport {
        CheckReport {
            name: name.to_owned(),
            pass,
            residual: 0.0,
            tolerance: 1e-12,
            samples: 10,
            violations: if pass { 0 } else { 1 },
            witness: None,
            detail: BTreeMap::new(),
        }
    }

    #[test]
    fn checks_and_skips_are_sorted_by_name() {
        let r = Report::new(
            "demo",
            7,
            "E",
            BTreeMap::new(),
            vec![check("zeta", true), check("alpha", true)],
            vec![
                SkipReport { name: "mid".into(), reason: "not selected".into() },
                SkipReport { name: "aaa".into(), reason: "not selected".into() },
            ],
        );
        let names: Vec<&str> = r.checks.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, ["alpha", "zeta"]);
        let skips: Vec<&str> = r.skipped.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(skips, ["aaa", "mid"]);
    }

    #[test]
    fn verdict_follows_failed_count() {
        let good = Report::new("demo", 7, "E", BTreeMap::new(), vec![check("a", true)], vec![]);
        assert!(good.pass);
        assert_eq!(good.counts.passed, 1);
        let bad = Report::new(
            "demo",
            7,
            "E",
            BTreeMap::new(),
            vec![check("a", true), check("b", false)],
            vec![],
        );
        assert!(!bad.pass);
        assert_eq!(bad.counts.failed, 1);
    }

    #[test]
    fn serialization_is_stable_and_newline_terminated() {
        let r = Report::new("demo", 7, "E", BTreeMap::new(), vec![check("a", true)], vec![]);
        let a = r.to_json();
        let b = r.to_json();
        assert_eq!(a, b);
        assert!(a.ends_with('\n'));
        assert!(a.contains("\"schema_version\": 1"));
    }

    #[test]
    fn non_finite_floats_become_strings() {
        assert_eq!(num(1.5), serde_json::json!(1.5));
        assert_eq!(num(f64::INFINITY), Value::String("inf".into()));
    }
}
