//! Batch driver for the certified-geometry suites.
//!
//! Each subcommand runs one suite of named checks against a configured
//! experiment, prints a per-check summary, and writes a deterministic JSON
//! report into the output directory. Exit codes: `0` when every selected
//! check passes, `1` when any check fails (the report is still written),
//! `2` for config, selection, or I/O problems diagnosed before checks run.

pub mod config;
pub mod report;
pub mod suites;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{parse_config, ConfigError, ConfigFile, Experiment, Overrides};
use crate::report::Report;
use crate::suites::{atlas, dynamics, geometry, metric, ops, Selection, SuiteOutput};

#[derive(Parser, Debug)]
#[command(
    name = "frechet",
    version,
    about = "Certified checks and integrators for bounded graded-sequence geometry"
)]
pub struct Cli {
    /// JSON config file; built-in defaults are used when absent.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Output directory for reports and artifacts (overrides the config).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// RNG seed (overrides the config; required when the config has none).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Run only this named check of the invoked suite; repeatable.
    #[arg(long = "suite", global = true, value_name = "CHECK")]
    pub suite: Vec<String>,

    /// Integrator grid step override.
    #[arg(long = "grid-step", global = true)]
    pub grid_step: Option<f64>,

    /// Integrator stopping tolerance override.
    #[arg(long, global = true)]
    pub tol: Option<f64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Clone, Copy, Debug)]
pub enum Command {
    /// Verify the metric axioms and closed forms of the standard metric.
    VerifyMetric,
    /// Verify operator norms: identity, scalings, products, currying.
    VerifyOps,
    /// Verify chart transitions, jets, and the cocycle identity.
    VerifyAtlas,
    /// Check that the configured connection obeys the change-of-chart law.
    CompatCheck,
    /// Check the second-tangent split and its exact inverse.
    SplitRoundtrip,
    /// Check the connection/linear-system correspondence and transfer law.
    OdeRoundtrip,
    /// Integrate the configured initial-value problem with certified bounds.
    Integrate,
    /// Exercise the local flow around the configured center point.
    Flow,
    /// Compare the two configured field presentations on their overlap.
    Uniqueness,
}

impl Command {
    /// The subcommand name as spelled on the command line and in reports.
    pub fn name(self) -> &'static str {
        match self {
            Command::VerifyMetric => "verify-metric",
            Command::VerifyOps => "verify-ops",
            Command::VerifyAtlas => "verify-atlas",
            Command::CompatCheck => "compat-check",
            Command::SplitRoundtrip => "split-roundtrip",
            Command::OdeRoundtrip => "ode-roundtrip",
            Command::Integrate => "integrate",
            Command::Flow => "flow",
            Command::Uniqueness => "uniqueness",
        }
    }

    /// Check names this suite knows, in report order.
    pub fn checks(self) -> &'static [&'static str] {
        match self {
            Command::VerifyMetric => &metric::CHECKS,
            Command::VerifyOps => &ops::CHECKS,
            Command::VerifyAtlas => &atlas::CHECKS,
            Command::CompatCheck => &geometry::COMPAT_CHECKS,
            Command::SplitRoundtrip => &geometry::SPLIT_CHECKS,
            Command::OdeRoundtrip => &geometry::ODE_CHECKS,
            Command::Integrate => &dynamics::INTEGRATE_CHECKS,
            Command::Flow => &dynamics::FLOW_CHECKS,
            Command::Uniqueness => &dynamics::UNIQUENESS_CHECKS,
        }
    }
}

fn dispatch(cmd: Command, exp: &Experiment, sel: Selection) -> Result<SuiteOutput, ConfigError> {
    match cmd {
        Command::VerifyMetric => metric::run(exp, sel),
        Command::VerifyOps => ops::run(exp, sel),
        Command::VerifyAtlas => atlas::run(exp, sel),
        Command::CompatCheck => geometry::run_compat(exp, sel),
        Command::SplitRoundtrip => geometry::run_split(exp, sel),
        Command::OdeRoundtrip => geometry::run_ode(exp, sel),
        Command::Integrate => dynamics::run_integrate(exp, sel),
        Command::Flow => dynamics::run_flow(exp, sel),
        Command::Uniqueness => dynamics::run_uniqueness(exp, sel),
    }
}

fn try_run(cli: &Cli) -> Result<bool, ConfigError> {
    let cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
            parse_config(&text)?
        }
        None => ConfigFile::default(),
    };
    let over = Overrides {
        seed: cli.seed,
        out_dir: cli.out.clone(),
        grid_step: cli.grid_step,
        tol: cli.tol,
    };
    let exp = Experiment::resolve(&cfg, &over)?;

    let name = cli.command.name();
    let selection =
        Selection::build(&cli.suite, exp.suite_selection.get(name), cli.command.checks(), name)?;
    let output = dispatch(cli.command, &exp, selection)?;

    let report = Report::new(
        name,
        exp.seed,
        exp.space.id().as_str(),
        output.parameters,
        output.checks,
        output.skips,
    );
    let path = report
        .write(&exp.out_dir)
        .map_err(|e| ConfigError(format!("writing report: {e}")))?;
    print!("{}", report.render_text());
    println!("report: {}", path.display());
    Ok(report.pass)
}

/// Runs one parsed invocation and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match try_run(cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("{e}");
            2
        }
    }
}
