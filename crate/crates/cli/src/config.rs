//! Experiment configuration: JSON schema and resolution into core objects.
//!
//! A config file describes the space, an atlas of charts, structured
//! operators, a Christoffel field, a linear ODE system, vector fields, and
//! the parameters of the integration suites. Every section is optional;
//! missing sections fall back to a built-in default experiment, so a minimal
//! file needs only `schema_version` and `seed`. Sections that are present
//! must be complete: unknown keys, missing required fields (for example
//! `space.alphas`), dangling cross-references, and invalid values are all
//! reported as configuration errors that exit with code 2 before any suite
//! runs.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::Deserialize;

use frechet_core::calculus::{DomainSpec, McMap};
use frechet_core::charts::{Atlas, Chart, OverlapDecl};
use frechet_core::connection::{christoffel_from_exprs, ChristoffelField, OdeSystem, OperatorFn};
use frechet_core::expr::{self, Expr, Extension};
use frechet_core::operators::{LinearMapRep, ShiftDirection};
use frechet_core::picard::VectorFieldLocal;
use frechet_core::rules::SequenceRule;
use frechet_core::space::{AlphaSequence, SeminormFamily};
use frechet_core::{FrechetSpace, GradedVector, SpaceId};

/// Version of the config layout accepted by this binary.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// A configuration problem; the message names the offending field.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

type Resolved<T> = std::result::Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> Resolved<T> {
    Err(ConfigError(msg.into()))
}

// ---------------------------------------------------------------------------
// Raw serde layer.

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub space: Option<SpaceConfig>,
    #[serde(default)]
    pub samples: SamplesConfig,
    #[serde(default)]
    pub operators: Option<Vec<OperatorConfig>>,
    #[serde(default)]
    pub atlas: Option<AtlasConfig>,
    #[serde(default)]
    pub connection: Option<ConnectionConfig>,
    #[serde(default)]
    pub ode: Option<OdeConfig>,
    #[serde(default)]
    pub fields: Option<Vec<FieldConfig>>,
    #[serde(default)]
    pub picard: Option<PicardConfig>,
    #[serde(default)]
    pub flow: Option<FlowConfig>,
    #[serde(default)]
    pub uniqueness: Option<UniquenessConfig>,
    /// Default check selection per subcommand; `--suite` overrides.
    #[serde(default)]
    pub suites: BTreeMap<String, Vec<String>>,
}

impl Default for ConfigFile {
    fn default() -> Self {
        ConfigFile {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: None,
            output_dir: None,
            space: None,
            samples: SamplesConfig::default(),
            operators: None,
            atlas: None,
            connection: None,
            ode: None,
            fields: None,
            picard: None,
            flow: None,
            uniqueness: None,
            suites: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceConfig {
    #[serde(default = "default_space_id")]
    pub id: String,
    pub seminorms: SeminormFamily,
    pub alphas: SequenceRule,
    #[serde(default)]
    pub truncation: Option<usize>,
}

fn default_space_id() -> String {
    "E".to_owned()
}

/// Sample counts for the randomized suites.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplesConfig {
    pub metric_triples: usize,
    pub convexity: usize,
    pub oracle_pairs: usize,
    pub operator_pairs: usize,
    pub probe_budget: u64,
    pub atlas_points: usize,
    pub jet_points: usize,
    pub compat_points: usize,
    pub jets: usize,
    pub ode_points: usize,
    pub spot_samples: usize,
}

impl Default for SamplesConfig {
    fn default() -> Self {
        SamplesConfig {
            metric_triples: 10_000,
            convexity: 10_000,
            oracle_pairs: 1_000,
            operator_pairs: 200,
            probe_budget: 160,
            atlas_points: 25,
            jet_points: 50,
            compat_points: 100,
            jets: 100,
            ode_points: 50,
            spot_samples: 32,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorConfig {
    pub name: String,
    pub op: OperatorKind,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorKind {
    Scalar { c: f64 },
    Diagonal { rule: SequenceRule },
    ShiftLeft,
    ShiftRight,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegionConfig {
    All,
    Ball { center: Vec<f64>, radius: f64 },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtlasConfig {
    pub charts: Vec<ChartConfig>,
    #[serde(default)]
    pub overlaps: Vec<OverlapConfig>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartConfig {
    pub label: String,
    /// Coordinate expressions of the forward map in `x1..xN`.
    pub forward: Vec<String>,
    pub inverse: InverseConfig,
    #[serde(default)]
    pub domain: Option<RegionConfig>,
    /// Spot-check budget for `inverse(forward(p)) = p` at build time.
    #[serde(default = "default_roundtrip_samples")]
    pub roundtrip_samples: usize,
}

fn default_roundtrip_samples() -> usize {
    25
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InverseConfig {
    /// Inverse given in closed form.
    Exprs { exprs: Vec<String> },
    /// Inverse found by bisection on a bracket; single-expression maps only.
    Numeric { lo: f64, hi: f64 },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlapConfig {
    pub chart_a: String,
    pub chart_b: String,
    pub region_a: RegionConfig,
    pub region_b: RegionConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionConfig {
    /// Chart label the field lives in.
    pub chart: String,
    /// Leading block dimension of the coefficient tensor.
    pub dim: usize,
    /// `dim^3` expressions, `gamma[i][j][k]` flattened with `k` fastest.
    pub coefficients: Vec<String>,
    #[serde(default = "default_true")]
    pub symmetric: bool,
    /// Chart label the pushforward check maps into.
    pub pushforward_to: String,
    /// Region the compatibility residual samples from, in source coordinates.
    pub region: RegionConfig,
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeConfig {
    /// Scalar coefficient expression in `t`; the operator is `c(t)·Id`.
    pub scalar: String,
    pub t_lo: f64,
    pub t_hi: f64,
    /// Base chart change `φ(t) = rescale·t` for the transfer-law check.
    #[serde(default = "default_rescale")]
    pub rescale: f64,
}

fn default_rescale() -> f64 {
    0.5
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub name: String,
    pub chart: String,
    /// Coordinate expressions of the field; untouched coordinates are zero.
    pub components: Vec<String>,
    pub bounds: BoundsConfig,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundsConfig {
    /// User-certified sup and Lipschitz bounds (spot-checked at run time).
    Declared { l_sup: f64, r_lip: f64 },
    /// Bounds measured by sampling; runs are labeled heuristic.
    Estimated { center: Vec<f64>, radius: f64, samples: usize },
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    /// Closed-form solution `p(t) = p0 · e^(t - t0)`, valid for `ξ(x) = x`.
    Exponential,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PicardConfig {
    pub field: String,
    pub start: Vec<f64>,
    #[serde(default)]
    pub t0: f64,
    pub radius: f64,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    #[serde(default)]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub oracle: Option<OracleKind>,
}

fn default_grid_step() -> f64 {
    1e-3
}

fn default_max_iters() -> usize {
    8
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub field: String,
    pub center: Vec<f64>,
    pub radius: f64,
    /// Start point; must lie in the half-radius ball around the center.
    pub start: Vec<f64>,
    pub time: f64,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    #[serde(default = "default_flow_tol")]
    pub tol: f64,
    #[serde(default = "default_flow_iters")]
    pub max_iters: usize,
    #[serde(default)]
    pub oracle: Option<OracleKind>,
}

fn default_flow_tol() -> f64 {
    1e-12
}

fn default_flow_iters() -> usize {
    20
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniquenessConfig {
    pub field_a: String,
    pub field_b: String,
    /// Start point in chart-b coordinates.
    pub start: Vec<f64>,
    pub radius: f64,
    #[serde(default = "default_grid_step")]
    pub grid_step: f64,
    #[serde(default)]
    pub tol: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_probe_samples")]
    pub probe_samples: usize,
    /// Absolute ceiling on the curve deviation, on top of the certificate.
    #[serde(default = "default_deviation_cap")]
    pub deviation_cap: f64,
}

fn default_probe_samples() -> usize {
    24
}

fn default_deviation_cap() -> f64 {
    1e-6
}

// ---------------------------------------------------------------------------
// Built-in default sections.

fn default_atlas_config() -> AtlasConfig {
    let ball = |radius: f64| RegionConfig::Ball { center: vec![0.0], radius };
    AtlasConfig {
        charts: vec![
            ChartConfig {
                label: "id".into(),
                forward: vec!["x1".into()],
                inverse: InverseConfig::Exprs { exprs: vec!["x1".into()] },
                domain: None,
                roundtrip_samples: 25,
            },
            ChartConfig {
                label: "double".into(),
                forward: vec!["2 * x1".into()],
                inverse: InverseConfig::Exprs { exprs: vec!["0.5 * x1".into()] },
                domain: None,
                roundtrip_samples: 25,
            },
            ChartConfig {
                label: "cubic".into(),
                forward: vec!["x1 + x1^3".into()],
                inverse: InverseConfig::Numeric { lo: -4.0, hi: 4.0 },
                domain: None,
                roundtrip_samples: 25,
            },
            ChartConfig {
                label: "quintic".into(),
                forward: vec!["x1 + x1^3 + 0.0009765625 * x1^5".into()],
                inverse: InverseConfig::Numeric { lo: -4.0, hi: 4.0 },
                domain: None,
                roundtrip_samples: 25,
            },
        ],
        // Curved-chart regions are declared wider than the identity-side
        // ball's image so transitions never clip at the rim.
        overlaps: vec![
            OverlapConfig {
                chart_a: "id".into(),
                chart_b: "cubic".into(),
                region_a: ball(0.1),
                region_b: ball(0.12),
            },
            OverlapConfig {
                chart_a: "id".into(),
                chart_b: "quintic".into(),
                region_a: ball(0.1),
                region_b: ball(0.12),
            },
            OverlapConfig {
                chart_a: "cubic".into(),
                chart_b: "quintic".into(),
                region_a: ball(0.12),
                region_b: ball(0.12),
            },
            OverlapConfig {
                chart_a: "id".into(),
                chart_b: "double".into(),
                region_a: RegionConfig::All,
                region_b: RegionConfig::All,
            },
        ],
    }
}

fn default_connection_config() -> ConnectionConfig {
    ConnectionConfig {
        chart: "id".into(),
        dim: 1,
        coefficients: vec!["x1".into()],
        symmetric: true,
        pushforward_to: "cubic".into(),
        region: RegionConfig::Ball { center: vec![0.0], radius: 0.1 },
    }
}

fn default_ode_config() -> OdeConfig {
    OdeConfig { scalar: "0.75 + 0.5 * t".into(), t_lo: 0.0, t_hi: 1.0, rescale: 0.5 }
}

fn default_fields_config() -> Vec<FieldConfig> {
    vec![
        FieldConfig {
            name: "exp".into(),
            chart: "id".into(),
            components: vec!["x1".into()],
            bounds: BoundsConfig::Declared { l_sup: 2.0, r_lip: 1.0 },
        },
        FieldConfig {
            name: "exp_double".into(),
            chart: "double".into(),
            components: vec!["x1".into()],
            bounds: BoundsConfig::Declared { l_sup: 2.0, r_lip: 1.0 },
        },
    ]
}

fn default_picard_config() -> PicardConfig {
    PicardConfig {
        field: "exp".into(),
        start: vec![1.0],
        t0: 0.0,
        radius: 1.0,
        grid_step: 1e-3,
        tol: 0.0,
        max_iters: 8,
        oracle: Some(OracleKind::Exponential),
    }
}

fn default_flow_config() -> FlowConfig {
    FlowConfig {
        field: "exp".into(),
        center: vec![1.0],
        radius: 1.0,
        start: vec![1.0],
        time: 0.1,
        grid_step: 1e-3,
        tol: 1e-12,
        max_iters: 20,
        oracle: Some(OracleKind::Exponential),
    }
}

fn default_uniqueness_config() -> UniquenessConfig {
    UniquenessConfig {
        field_a: "exp".into(),
        field_b: "exp_double".into(),
        start: vec![0.125],
        radius: 1.0,
        grid_step: 1e-3,
        tol: 0.0,
        max_iters: 8,
        probe_samples: 24,
        deviation_cap: 1e-6,
    }
}

// ---------------------------------------------------------------------------
// Resolved experiment.

/// Flag-level overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub grid_step: Option<f64>,
    pub tol: Option<f64>,
}

pub struct ConnectionSetup {
    pub beta: ChristoffelField,
    pub chart_from: String,
    pub chart_to: String,
    pub region: DomainSpec,
    pub dim: usize,
}

pub struct OdeSetup {
    pub system: OdeSystem,
    /// One-coordinate base space for chart changes in `t`.
    pub base: FrechetSpace,
    pub scalar: Expr,
    pub rescale: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

pub struct PicardSetup {
    pub field: String,
    pub start: GradedVector,
    pub t0: f64,
    pub radius: f64,
    pub grid_step: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub oracle: Option<OracleKind>,
}

pub struct FlowSetup {
    pub field: String,
    pub center: GradedVector,
    pub radius: f64,
    pub start: GradedVector,
    pub time: f64,
    pub grid_step: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub oracle: Option<OracleKind>,
}

pub struct UniquenessSetup {
    pub field_a: String,
    pub field_b: String,
    pub start: GradedVector,
    pub radius: f64,
    pub grid_step: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub probe_samples: usize,
    pub deviation_cap: f64,
}

/// A fully resolved experiment: every cross-reference checked, every core
/// object built. Suites only read from this.
pub struct Experiment {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub space: FrechetSpace,
    pub samples: SamplesConfig,
    pub operator_pool: Vec<(String, LinearMapRep)>,
    pub atlas: Atlas,
    pub connection: ConnectionSetup,
    pub ode: OdeSetup,
    pub fields: BTreeMap<String, VectorFieldLocal>,
    pub picard: PicardSetup,
    pub flow: FlowSetup,
    pub uniqueness: UniquenessSetup,
    pub suite_selection: BTreeMap<String, Vec<String>>,
}

/// Parses the JSON text of a config file; diagnostics point at the missing
/// or malformed field.
pub fn parse_config(text: &str) -> Resolved<ConfigFile> {
    let cfg: ConfigFile =
        serde_json::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
    if cfg.schema_version != CONFIG_SCHEMA_VERSION {
        return err(format!(
            "schema_version: expected {CONFIG_SCHEMA_VERSION}, got {}",
            cfg.schema_version
        ));
    }
    Ok(cfg)
}

fn parse_expr(src: &str, path: &str) -> Resolved<Expr> {
    expr::parse(src).map_err(|e| ConfigError(format!("{path}: {e}")))
}

fn resolve_space(cfg: Option<&SpaceConfig>) -> Resolved<FrechetSpace> {
    let Some(sc) = cfg else {
        return Ok(FrechetSpace::standard("E"));
    };
    let alphas = AlphaSequence::new(sc.alphas.clone())
        .map_err(|e| ConfigError(format!("space.alphas: {e}")))?;
    let truncation = sc.truncation.unwrap_or(frechet_core::space::DEFAULT_TRUNCATION);
    FrechetSpace::new(SpaceId::new(&sc.id), sc.seminorms.clone(), alphas, truncation)
        .map_err(|e| ConfigError(format!("space: {e}")))
}

fn resolve_region(
    rc: &RegionConfig,
    space: &FrechetSpace,
    path: &str,
) -> Resolved<DomainSpec> {
    match rc {
        RegionConfig::All => Ok(DomainSpec::All),
        RegionConfig::Ball { center, radius } => {
            let c = resolve_point(center, space, &format!("{path}.center"))?;
            if !radius.is_finite() || *radius <= 0.0 {
                return err(format!("{path}.radius: must be positive and finite"));
            }
            Ok(DomainSpec::MetricBall { center: c, radius: *radius })
        }
    }
}

fn resolve_point(coords: &[f64], space: &FrechetSpace, path: &str) -> Resolved<GradedVector> {
    if coords.is_empty() {
        return err(format!("{path}: needs at least one coordinate"));
    }
    if coords.len() > space.truncation() {
        return err(format!(
            "{path}: {} coordinates exceed the working truncation degree {}",
            coords.len(),
            space.truncation()
        ));
    }
    if coords.iter().any(|c| !c.is_finite()) {
        return err(format!("{path}: coordinates must be finite"));
    }
    Ok(space.vector(coords.to_vec()))
}

fn resolve_exprs(srcs: &[String], path: &str) -> Resolved<Vec<Expr>> {
    srcs.iter()
        .enumerate()
        .map(|(i, s)| parse_expr(s, &format!("{path}[{i}]")))
        .collect()
}

fn expr_map(
    space: &FrechetSpace,
    exprs: &[Expr],
    extension: Extension,
    domain: DomainSpec,
    path: &str,
) -> Resolved<McMap> {
    let dim = exprs
        .iter()
        .map(expr::max_var_index)
        .max()
        .unwrap_or(0)
        .max(exprs.len())
        .max(1);
    expr::mc_map_from_exprs(space, space, exprs, dim, extension, domain, u32::MAX)
        .map_err(|e| ConfigError(format!("{path}: {e}")))
}

fn resolve_chart(cc: &ChartConfig, space: &FrechetSpace, seed: u64, path: &str) -> Resolved<Chart> {
    let forward_exprs = resolve_exprs(&cc.forward, &format!("{path}.forward"))?;
    let domain = match &cc.domain {
        Some(rc) => resolve_region(rc, space, &format!("{path}.domain"))?,
        None => DomainSpec::All,
    };
    let forward = expr_map(
        space,
        &forward_exprs,
        Extension::Identity,
        domain,
        &format!("{path}.forward"),
    )?;
    let inverse = match &cc.inverse {
        InverseConfig::Exprs { exprs } => {
            let inv_exprs = resolve_exprs(exprs, &format!("{path}.inverse.exprs"))?;
            expr_map(
                space,
                &inv_exprs,
                Extension::Identity,
                DomainSpec::All,
                &format!("{path}.inverse.exprs"),
            )?
        }
        InverseConfig::Numeric { lo, hi } => McMap::numeric_inverse_1d(&forward, *lo, *hi)
            .map_err(|e| ConfigError(format!("{path}.inverse: {e}")))?,
    };
    Chart::new(&cc.label, space, forward, inverse, cc.roundtrip_samples, seed)
        .map_err(|e| ConfigError(format!("{path}: {e}")))
}

fn resolve_atlas(ac: &AtlasConfig, space: &FrechetSpace, seed: u64) -> Resolved<Atlas> {
    if ac.charts.is_empty() {
        return err("atlas.charts: needs at least one chart");
    }
    let mut charts = Vec::with_capacity(ac.charts.len());
    for (i, cc) in ac.charts.iter().enumerate() {
        charts.push(resolve_chart(cc, space, seed, &format!("atlas.charts[{i}]"))?);
    }
    let labels: Vec<&str> = ac.charts.iter().map(|c| c.label.as_str()).collect();
    let mut overlaps = Vec::with_capacity(ac.overlaps.len());
    for (i, oc) in ac.overlaps.iter().enumerate() {
        for (side, label) in [("chart_a", &oc.chart_a), ("chart_b", &oc.chart_b)] {
            if !labels.contains(&label.as_str()) {
                return err(format!(
                    "atlas.overlaps[{i}].{side}: unknown chart `{label}` (declared: {})",
                    labels.join(", ")
                ));
            }
        }
        overlaps.push(OverlapDecl {
            chart_a: oc.chart_a.clone(),
            chart_b: oc.chart_b.clone(),
            region_a: resolve_region(&oc.region_a, space, &format!("atlas.overlaps[{i}].region_a"))?,
            region_b: resolve_region(&oc.region_b, space, &format!("atlas.overlaps[{i}].region_b"))?,
        });
    }
    Atlas::new(charts, overlaps).map_err(|e| ConfigError(format!("atlas: {e}")))
}

fn resolve_operators(
    ops: Option<&[OperatorConfig]>,
    space: &FrechetSpace,
) -> Resolved<Vec<(String, LinearMapRep)>> {
    let id = space.id().clone();
    let mut pool: Vec<(String, LinearMapRep)> = vec![
        ("identity".into(), LinearMapRep::identity(id.clone())),
        ("double".into(), LinearMapRep::scalar(id.clone(), 2.0)),
        ("halve".into(), LinearMapRep::scalar(id.clone(), 0.5)),
        ("negate".into(), LinearMapRep::scalar(id.clone(), -1.0)),
        ("quadruple".into(), LinearMapRep::scalar(id.clone(), 4.0)),
        (
            "geometric_decay".into(),
            LinearMapRep::diagonal(id.clone(), SequenceRule::Geometric { coeff: 1.0, ratio: 0.5 })
                .expect("positive rule"),
        ),
        (
            "harmonic_decay".into(),
            LinearMapRep::diagonal(id.clone(), SequenceRule::Power { coeff: 1.0, exponent: -1.0 })
                .expect("positive rule"),
        ),
        ("shift_left".into(), LinearMapRep::shift(id.clone(), ShiftDirection::Left)),
        ("shift_right".into(), LinearMapRep::shift(id.clone(), ShiftDirection::Right)),
    ];
    for (i, oc) in ops.unwrap_or(&[]).iter().enumerate() {
        if pool.iter().any(|(n, _)| n == &oc.name) {
            return err(format!("operators[{i}].name: duplicate operator name `{}`", oc.name));
        }
        let rep = match &oc.op {
            OperatorKind::Scalar { c } => {
                if !c.is_finite() {
                    return err(format!("operators[{i}].c: must be finite"));
                }
                LinearMapRep::scalar(id.clone(), *c)
            }
            OperatorKind::Diagonal { rule } => LinearMapRep::diagonal(id.clone(), rule.clone())
                .map_err(|e| ConfigError(format!("operators[{i}].rule: {e}")))?,
            OperatorKind::ShiftLeft => LinearMapRep::shift(id.clone(), ShiftDirection::Left),
            OperatorKind::ShiftRight => LinearMapRep::shift(id.clone(), ShiftDirection::Right),
        };
        pool.push((oc.name.clone(), rep));
    }
    Ok(pool)
}

fn resolve_connection(
    cc: &ConnectionConfig,
    space: &FrechetSpace,
    atlas: &Atlas,
    seed: u64,
) -> Resolved<ConnectionSetup> {
    for (fieldname, label) in [("chart", &cc.chart), ("pushforward_to", &cc.pushforward_to)] {
        if atlas.chart(label).is_err() {
            return err(format!("connection.{fieldname}: unknown chart `{label}`"));
        }
    }
    if cc.dim == 0 || cc.dim > space.truncation() {
        return err(format!(
            "connection.dim: must be between 1 and the truncation degree {}",
            space.truncation()
        ));
    }
    let coeffs = resolve_exprs(&cc.coefficients, "connection.coefficients")?;
    let beta = christoffel_from_exprs(&cc.chart, space, cc.dim, &coeffs, cc.symmetric, seed)
        .map_err(|e| ConfigError(format!("connection.coefficients: {e}")))?;
    let region = resolve_region(&cc.region, space, "connection.region")?;
    Ok(ConnectionSetup {
        beta,
        chart_from: cc.chart.clone(),
        chart_to: cc.pushforward_to.clone(),
        region,
        dim: cc.dim,
    })
}

fn resolve_ode(oc: &OdeConfig, space: &FrechetSpace) -> Resolved<OdeSetup> {
    let scalar = parse_expr(&oc.scalar, "ode.scalar")?;
    if expr::max_var_index(&scalar) > 0 {
        return err("ode.scalar: may only use the time variable t".to_owned());
    }
    if !oc.rescale.is_finite() || oc.rescale == 0.0 {
        return err("ode.rescale: must be finite and nonzero".to_owned());
    }
    let id = space.id().clone();
    let coeff = scalar.clone();
    let a: OperatorFn = Arc::new(move |t| {
        let c = expr::eval(&coeff, &expr::EvalEnv::with_time(t, &[]))?;
        Ok(LinearMapRep::scalar(id.clone(), c))
    });
    let system = OdeSystem::new(space, a, oc.t_lo, oc.t_hi)
        .map_err(|e| ConfigError(format!("ode: {e}")))?;
    let base = FrechetSpace::new(
        SpaceId::new("OdeBase"),
        SeminormFamily::PrefixSup,
        AlphaSequence::halving(),
        1,
    )
    .expect("one-coordinate base space");
    Ok(OdeSetup {
        system,
        base,
        scalar,
        rescale: oc.rescale,
        t_lo: oc.t_lo,
        t_hi: oc.t_hi,
    })
}

fn resolve_fields(
    fcs: &[FieldConfig],
    space: &FrechetSpace,
    atlas: &Atlas,
    seed: u64,
) -> Resolved<BTreeMap<String, VectorFieldLocal>> {
    let mut fields = BTreeMap::new();
    for (i, fc) in fcs.iter().enumerate() {
        let path = format!("fields[{i}]");
        if fields.contains_key(&fc.name) {
            return err(format!("{path}.name: duplicate field name `{}`", fc.name));
        }
        if atlas.chart(&fc.chart).is_err() {
            return err(format!("{path}.chart: unknown chart `{}`", fc.chart));
        }
        let exprs = resolve_exprs(&fc.components, &format!("{path}.components"))?;
        let map = expr_map(
            space,
            &exprs,
            Extension::Zero,
            DomainSpec::All,
            &format!("{path}.components"),
        )?;
        let field = match &fc.bounds {
            BoundsConfig::Declared { l_sup, r_lip } => {
                VectorFieldLocal::from_map(&fc.chart, &map, *l_sup, *r_lip)
                    .map_err(|e| ConfigError(format!("{path}.bounds: {e}")))?
            }
            BoundsConfig::Estimated { center, radius, samples } => {
                let c = resolve_point(center, space, &format!("{path}.bounds.center"))?;
                let m = map.clone();
                VectorFieldLocal::with_estimated_bounds(
                    &fc.chart,
                    space,
                    Arc::new(move |p| m.eval(p)),
                    &c,
                    *radius,
                    *samples,
                    seed,
                )
                .map_err(|e| ConfigError(format!("{path}.bounds: {e}")))?
            }
        };
        fields.insert(fc.name.clone(), field);
    }
    Ok(fields)
}

fn require_field<'a>(
    fields: &'a BTreeMap<String, VectorFieldLocal>,
    name: &str,
    path: &str,
) -> Resolved<&'a VectorFieldLocal> {
    fields.get(name).ok_or_else(|| {
        let known: Vec<&str> = fields.keys().map(String::as_str).collect();
        ConfigError(format!("{path}: unknown field `{name}` (declared: {})", known.join(", ")))
    })
}

const KNOWN_SUITES: [&str; 9] = [
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

impl Experiment {
    /// Resolves a parsed config plus flag overrides into runnable form.
    pub fn resolve(cfg: &ConfigFile, over: &Overrides) -> Resolved<Experiment> {
        let seed = match over.seed.or(cfg.seed) {
            Some(s) => s,
            None => {
                return err(
                    "seed: missing field; randomized suites need an explicit seed \
                     (set \"seed\" in the config or pass --seed)",
                )
            }
        };
        let out_dir = over
            .out_dir
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));

        let space = resolve_space(cfg.space.as_ref())?;
        let atlas_cfg = cfg.atlas.clone().unwrap_or_else(default_atlas_config);
        let atlas = resolve_atlas(&atlas_cfg, &space, seed)?;
        let operator_pool = resolve_operators(cfg.operators.as_deref(), &space)?;
        let connection_cfg = cfg.connection.clone().unwrap_or_else(default_connection_config);
        let connection = resolve_connection(&connection_cfg, &space, &atlas, seed)?;
        let ode_cfg = cfg.ode.clone().unwrap_or_else(default_ode_config);
        let ode = resolve_ode(&ode_cfg, &space)?;
        let fields_cfg = cfg.fields.clone().unwrap_or_else(default_fields_config);
        let fields = resolve_fields(&fields_cfg, &space, &atlas, seed)?;

        let pc = cfg.picard.clone().unwrap_or_else(default_picard_config);
        require_field(&fields, &pc.field, "picard.field")?;
        let picard = PicardSetup {
            field: pc.field,
            start: resolve_point(&pc.start, &space, "picard.start")?,
            t0: pc.t0,
            radius: pc.radius,
            grid_step: over.grid_step.unwrap_or(pc.grid_step),
            tol: over.tol.unwrap_or(pc.tol),
            max_iters: pc.max_iters,
            oracle: pc.oracle,
        };

        let fc = cfg.flow.clone().unwrap_or_else(default_flow_config);
        require_field(&fields, &fc.field, "flow.field")?;
        let flow = FlowSetup {
            field: fc.field,
            center: resolve_point(&fc.center, &space, "flow.center")?,
            radius: fc.radius,
            start: resolve_point(&fc.start, &space, "flow.start")?,
            time: fc.time,
            grid_step: over.grid_step.unwrap_or(fc.grid_step),
            tol: over.tol.unwrap_or(fc.tol),
            max_iters: fc.max_iters,
            oracle: fc.oracle,
        };

        let uc = cfg.uniqueness.clone().unwrap_or_else(default_uniqueness_config);
        let fa = require_field(&fields, &uc.field_a, "uniqueness.field_a")?;
        let fb = require_field(&fields, &uc.field_b, "uniqueness.field_b")?;
        for (side, f) in [("field_a", fa), ("field_b", fb)] {
            if atlas.chart(f.chart()).is_err() {
                return err(format!(
                    "uniqueness.{side}: field `{}` lives in chart `{}`, absent from the atlas",
                    side,
                    f.chart()
                ));
            }
        }
        if fa.chart() != fb.chart() && atlas.overlap_region(fa.chart(), fb.chart()).is_none() {
            return err(format!(
                "uniqueness: charts `{}` and `{}` declare no overlap in the atlas",
                fa.chart(),
                fb.chart()
            ));
        }
        let uniqueness = UniquenessSetup {
            field_a: uc.field_a,
            field_b: uc.field_b,
            start: resolve_point(&uc.start, &space, "uniqueness.start")?,
            radius: uc.radius,
            grid_step: over.grid_step.unwrap_or(uc.grid_step),
            tol: over.tol.unwrap_or(uc.tol),
            max_iters: uc.max_iters,
            probe_samples: uc.probe_samples,
            deviation_cap: uc.deviation_cap,
        };

        for (suite, checks) in &cfg.suites {
            if !KNOWN_SUITES.contains(&suite.as_str()) {
                return err(format!(
                    "suites.{suite}: unknown suite (known: {})",
                    KNOWN_SUITES.join(", ")
                ));
            }
            if checks.is_empty() {
                return err(format!("suites.{suite}: empty check selection"));
            }
        }

        Ok(Experiment {
            seed,
            out_dir,
            space,
            samples: cfg.samples.clone(),
            operator_pool,
            atlas,
            connection,
            ode,
            fields,
            picard,
            flow,
            uniqueness,
            suite_selection: cfg.suites.clone(),
        })
    }

    pub fn field(&self, name: &str) -> &VectorFieldLocal {
        &self.fields[name]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ConfigFile {
        parse_config(r#"{ "schema_version": 1, "seed": 7 }"#).unwrap()
    }

    fn resolve_err(cfg: &ConfigFile) -> ConfigError {
        match Experiment::resolve(cfg, &Overrides::default()) {
            Ok(_) => panic!("expected resolve to fail"),
            Err(e) => e,
        }
    }

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let exp = Experiment::resolve(&minimal(), &Overrides::default()).unwrap();
        assert_eq!(exp.seed, 7);
        assert_eq!(exp.space.truncation(), 8);
        assert_eq!(exp.atlas.charts().len(), 4);
        assert!(exp.fields.contains_key("exp"));
        assert!(exp.fields.contains_key("exp_double"));
        assert_eq!(exp.picard.grid_step, 1e-3);
    }

    #[test]
    fn missing_alphas_is_reported_by_name() {
        let text = r#"{
            "schema_version": 1,
            "seed": 7,
            "space": { "id": "E", "seminorms": { "kind": "prefix_sup" } }
        }"#;
        let e = parse_config(text).unwrap_err();
        assert!(e.0.contains("alphas"), "{}", e.0);
    }

    #[test]
    fn missing_seed_is_a_config_error() {
        let cfg = parse_config(r#"{ "schema_version": 1 }"#).unwrap();
        let e = resolve_err(&cfg);
        assert!(e.0.contains("seed"), "{}", e.0);
        let ok = Experiment::resolve(
            &cfg,
            &Overrides { seed: Some(3), ..Overrides::default() },
        );
        assert!(ok.is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = parse_config(r#"{ "schema_version": 1, "seed": 7, "extra": 1 }"#).unwrap_err();
        assert!(e.0.contains("extra"), "{}", e.0);
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let e = parse_config(r#"{ "schema_version": 99, "seed": 7 }"#).unwrap_err();
        assert!(e.0.contains("schema_version"), "{}", e.0);
    }

    #[test]
    fn dangling_field_reference_is_rejected() {
        let text = r#"{
            "schema_version": 1,
            "seed": 7,
            "picard": { "field": "ghost", "start": [1.0], "radius": 1.0 }
        }"#;
        let cfg = parse_config(text).unwrap();
        let e = resolve_err(&cfg);
        assert!(e.0.contains("picard.field") && e.0.contains("ghost"), "{}", e.0);
    }

    #[test]
    fn dangling_chart_reference_is_rejected() {
        let text = r#"{
            "schema_version": 1,
            "seed": 7,
            "connection": {
                "chart": "id", "dim": 1, "coefficients": ["x1"],
                "pushforward_to": "nowhere",
                "region": { "kind": "ball", "center": [0.0], "radius": 0.1 }
            }
        }"#;
        let cfg = parse_config(text).unwrap();
        let e = resolve_err(&cfg);
        assert!(e.0.contains("pushforward_to") && e.0.contains("nowhere"), "{}", e.0);
    }

    #[test]
    fn bad_expression_is_reported_with_its_path() {
        let text = r#"{
            "schema_version": 1,
            "seed": 7,
            "fields": [
                { "name": "bad", "chart": "id", "components": ["sin("],
                  "bounds": { "kind": "declared", "l_sup": 1.0, "r_lip": 1.0 } }
            ]
        }"#;
        let cfg = parse_config(text).unwrap();
        let e = resolve_err(&cfg);
        assert!(e.0.contains("fields[0].components[0]"), "{}", e.0);
    }

    #[test]
    fn flag_overrides_take_precedence() {
        let over = Overrides {
            seed: Some(99),
            out_dir: Some(PathBuf::from("elsewhere")),
            grid_step: Some(0.5),
            tol: Some(0.25),
        };
        let exp = Experiment::resolve(&minimal(), &over).unwrap();
        assert_eq!(exp.seed, 99);
        assert_eq!(exp.out_dir, PathBuf::from("elsewhere"));
        assert_eq!(exp.picard.grid_step, 0.5);
        assert_eq!(exp.flow.tol, 0.25);
        assert_eq!(exp.uniqueness.grid_step, 0.5);
    }

    #[test]
    fn unknown_suite_selection_is_rejected() {
        let text = r#"{ "schema_version": 1, "seed": 7, "suites": { "verify-nothing": ["x"] } }"#;
        let cfg = parse_config(text).unwrap();
        let e = resolve_err(&cfg);
        assert!(e.0.contains("verify-nothing"), "{}", e.0);
    }

    #[test]
    fn uniqueness_without_overlap_is_rejected() {
        let text = r#"{
            "schema_version": 1,
            "seed": 7,
            "fields": [
                { "name": "exp", "chart": "id", "components": ["x1"],
                  "bounds": { "kind": "declared", "l_sup": 2.0, "r_lip": 1.0 } },
                { "name": "a", "chart": "cubic", "components": ["x1"],
                  "bounds": { "kind": "declared", "l_sup": 2.0, "r_lip": 1.0 } },
                { "name": "b", "chart": "double", "components": ["x1"],
                  "bounds": { "kind": "declared", "l_sup": 2.0, "r_lip": 1.0 } }
            ],
            "uniqueness": { "field_a": "a", "field_b": "b", "start": [0.125], "radius": 1.0 }
        }"#;
        let cfg = parse_config(text).unwrap();
        let e = resolve_err(&cfg);
        assert!(e.0.contains("overlap"), "{}", e.0);
    }
}
