//! Christoffel fields, connection maps, the second-tangent splitting, and
//! the correspondence between linear connections over a one-coordinate base
//! and linear ordinary differential equations.
//!
//! A Christoffel field assigns to each chart point `x` a bilinear map
//! `Γ(x)` on the fiber. The induced connection map acts on local
//! quadruples by `K(f, g, h, k) = (f, k + τ(f, g)·h)` with
//! `Γ(f)(g, h) = τ(f, g)·h`, and the splitting
//!
//! ```text
//! (x, v, w)  <->  ((x, v), (x, w + Γ(x)(v, v)))
//! ```
//!
//! identifies second-order jets with pairs of first-order ones. Under a
//! chart change `Θ`, two fields are compatible when
//!
//! ```text
//! Γ_α(Θf)(DΘ g, DΘ h) + D²Θ(f)(h)(g) = DΘ(Γ_β(f)(g, h))
//! ```
//!
//! [`pushforward_christoffel`] constructs `Γ_α` from `Γ_β` so that this
//! holds by design, and [`compatibility_residual`] measures the violation
//! for any candidate pair.

use std::sync::Arc;

use crate::calculus::{DomainSpec, McMap};
use crate::charts::{Jet1, Jet2};
use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::matrix::DenseMatrix;
use crate::operators::{BilinearTensor, LinearMapRep, MultilinearMapRep};
use crate::sampling;
use crate::space::{FrechetSpace, GradedVector};

/// Point-indexed bilinear fiber map.
pub type GammaFn = Arc<dyn Fn(&GradedVector) -> Result<MultilinearMapRep> + Send + Sync>;

/// Point- and direction-indexed fiber operator, `τ(f, g)`.
pub type TauFn =
    Arc<dyn Fn(&GradedVector, &GradedVector) -> Result<LinearMapRep> + Send + Sync>;

/// Time-indexed fiber operator, `t -> A(t)`.
pub type OperatorFn = Arc<dyn Fn(f64) -> Result<LinearMapRep> + Send + Sync>;

/// Point-indexed quadratic form `(x, u) -> Q(x)(u)`, the prescribed
/// diagonal of a symmetric Christoffel field.
pub type DiagonalFn =
    Arc<dyn Fn(&GradedVector, &GradedVector) -> Result<GradedVector> + Send + Sync>;

/// Tolerance for the quadratic-homogeneity probe in
/// [`christoffel_from_diagonal`].
pub const QUADRATIC_PROBE_TOLERANCE: f64 = 1e-9;

/// A chart-local Christoffel field `x -> Γ(x)`.
#[derive(Clone)]
pub struct ChristoffelField {
    chart: String,
    space: FrechetSpace,
    /// Leading base coordinates the field actually depends on (1 for the
    /// curve-parameter base of the ODE correspondence).
    base_dim: usize,
    gamma: GammaFn,
    symmetric: bool,
    /// Set when the field came from an ODE system, so converting back
    /// returns the original operator function unchanged.
    ode_kernel: Option<OperatorFn>,
}

impl std::fmt::Debug for ChristoffelField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChristoffelField")
            .field("chart", &self.chart)
            .field("space", self.space.id())
            .field("base_dim", &self.base_dim)
            .field("symmetric", &self.symmetric)
            .field("from_ode", &self.ode_kernel.is_some())
            .finish_non_exhaustive()
    }
}

impl ChristoffelField {
    pub fn new(
        chart: impl Into<String>,
        space: &FrechetSpace,
        base_dim: usize,
        gamma: GammaFn,
        symmetric: bool,
    ) -> Self {
        ChristoffelField {
            chart: chart.into(),
            space: space.clone(),
            base_dim: base_dim.max(1),
            gamma,
            symmetric,
            ode_kernel: None,
        }
    }

    /// The identically vanishing field.
    pub fn zero(chart: impl Into<String>, space: &FrechetSpace) -> Self {
        let id = space.id().clone();
        ChristoffelField::new(
            chart,
            space,
            space.truncation(),
            Arc::new(move |_x| {
                let out = id.clone();
                MultilinearMapRep::from_fn(
                    vec![id.clone(), id.clone()],
                    id.clone(),
                    Arc::new(move |_args| Ok(GradedVector::zero(out.clone()))),
                )
            }),
            true,
        )
    }

    pub fn chart(&self) -> &str {
        &self.chart
    }

    pub fn space(&self) -> &FrechetSpace {
        &self.space
    }

    pub fn base_dim(&self) -> usize {
        self.base_dim
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    /// The bilinear map at a point.
    pub fn gamma_at(&self, x: &GradedVector) -> Result<MultilinearMapRep> {
        self.space.check_member(x)?;
        (self.gamma)(x)
    }

    /// `Γ(x)(u, v)`.
    pub fn eval(&self, x: &GradedVector, u: &GradedVector, v: &GradedVector) -> Result<GradedVector> {
        self.gamma_at(x)?.eval(&[u.clone(), v.clone()])
    }
}

/// A family of chart-local connection actions `τ_α`.
pub struct ConnectionMap {
    charts: Vec<(String, ChartAction)>,
    linear_in_direction: bool,
}

struct ChartAction {
    space: FrechetSpace,
    domain: DomainSpec,
    tau: TauFn,
}

impl ConnectionMap {
    pub fn new(linear_in_direction: bool) -> Self {
        ConnectionMap { charts: Vec::new(), linear_in_direction }
    }

    pub fn with_chart(
        mut self,
        label: impl Into<String>,
        space: &FrechetSpace,
        domain: DomainSpec,
        tau: TauFn,
    ) -> Result<Self> {
        let label = label.into();
        if self.charts.iter().any(|(l, _)| *l == label) {
            return Err(Error::InvalidInput(format!("duplicate chart label `{label}`")));
        }
        self.charts.push((
            label,
            ChartAction { space: space.clone(), domain, tau },
        ));
        Ok(self)
    }

    pub fn is_linear_in_direction(&self) -> bool {
        self.linear_in_direction
    }

    fn action(&self, chart: &str) -> Result<&ChartAction> {
        self.charts
            .iter()
            .find(|(l, _)| l == chart)
            .map(|(_, a)| a)
            .ok_or_else(|| Error::InvalidInput(format!("no chart labeled `{chart}`")))
    }

    /// The operator `τ_α(f, g)` in the given chart.
    pub fn tau(&self, chart: &str, f: &GradedVector, g: &GradedVector) -> Result<LinearMapRep> {
        let action = self.action(chart)?;
        if !action.domain.contains(&action.space, f)? {
            return Err(Error::OutsideDomain(format!(
                "base point {:?} is outside chart `{chart}`",
                f.coords()
            )));
        }
        (action.tau)(f, g)
    }

    /// The Christoffel field induced in one chart:
    /// `Γ(f)(g, h) = τ(f, g)·h`.
    pub fn christoffel(&self, chart: &str) -> Result<ChristoffelField> {
        let action = self.action(chart)?;
        let space = action.space.clone();
        let tau = action.tau.clone();
        let id = space.id().clone();
        Ok(ChristoffelField::new(
            chart,
            &space,
            space.truncation(),
            Arc::new(move |x: &GradedVector| {
                let tau = tau.clone();
                let x = x.clone();
                MultilinearMapRep::from_fn(
                    vec![id.clone(), id.clone()],
                    id.clone(),
                    Arc::new(move |args: &[GradedVector]| tau(&x, &args[0])?.apply(&args[1])),
                )
            }),
            false,
        ))
    }
}

/// The local connection action `K(f, g, h, k) = (f, k + τ(f, g)·h)`.
pub fn connection_apply(
    conn: &ConnectionMap,
    chart: &str,
    f: &GradedVector,
    g: &GradedVector,
    h: &GradedVector,
    k: &GradedVector,
) -> Result<(GradedVector, GradedVector)> {
    let corrected = k.add(&conn.tau(chart, f, g)?.apply(h)?);
    Ok((f.clone(), corrected))
}

/// Builds the symmetric field with prescribed diagonal `Γ(x)(u,u) = Q(x)(u)`
/// by polarization, after probing that `Q(x)` is quadratically homogeneous.
pub fn christoffel_from_diagonal(
    chart: impl Into<String>,
    space: &FrechetSpace,
    base_dim: usize,
    q: DiagonalFn,
    probe_samples: usize,
    seed: u64,
) -> Result<ChristoffelField> {
    let mut rng = sampling::rng_for(seed, 0x9A7A);
    for _ in 0..probe_samples {
        let x = sampling::dyadic_vector(space, space.truncation(), &mut rng);
        let u = sampling::dyadic_vector(space, space.truncation(), &mut rng);
        let c = sampling::pow2_scale(&mut rng, -3, 3);
        let scaled = q(&x, &u.scale(c))?;
        let base = q(&x, &u)?.scale(c * c);
        let gap = scaled.sub(&base).sup_coord();
        let size = 1.0 + base.sup_coord();
        if gap > QUADRATIC_PROBE_TOLERANCE * size {
            return Err(Error::Rejected(format!(
                "diagonal map is not quadratic: Q(x)({c}·u) differs from {c}²·Q(x)(u) \
                 by {gap:.3e} at x = {:?}, u = {:?}",
                x.coords(),
                u.coords()
            )));
        }
    }
    let id = space.id().clone();
    let gamma: GammaFn = Arc::new(move |x: &GradedVector| {
        let q = q.clone();
        let x = x.clone();
        MultilinearMapRep::from_fn(
            vec![id.clone(), id.clone()],
            id.clone(),
            Arc::new(move |args: &[GradedVector]| {
                let sum = q(&x, &args[0].add(&args[1]))?;
                let qu = q(&x, &args[0])?;
                let qv = q(&x, &args[1])?;
                Ok(sum.sub(&qu).sub(&qv).scale(0.5))
            }),
        )
    });
    Ok(ChristoffelField::new(chart, space, base_dim, gamma, true))
}

/// Builds a field whose coefficients `Γ^i_{jk}(x)` are expressions in the
/// base coordinates, flattened as `coeffs[(i·dim + j)·dim + k]`. When
/// `symmetric` is claimed, the coefficients are spot-checked for `j <-> k`
/// symmetry on sampled points.
pub fn christoffel_from_exprs(
    chart: impl Into<String>,
    space: &FrechetSpace,
    dim: usize,
    coeffs: &[Expr],
    symmetric: bool,
    seed: u64,
) -> Result<ChristoffelField> {
    if dim == 0 || coeffs.len() != dim * dim * dim {
        return Err(Error::InvalidInput(format!(
            "need dim³ = {} coefficient expressions, got {}",
            dim * dim * dim,
            coeffs.len()
        )));
    }
    for (n, e) in coeffs.iter().enumerate() {
        if expr::uses_time(e) {
            return Err(Error::InvalidInput(format!(
                "coefficient {n} uses the time variable t"
            )));
        }
        let used = expr::max_var_index(e);
        if used > space.truncation() {
            return Err(Error::InvalidInput(format!(
                "coefficient {n} reads x{used} beyond the truncation degree {}",
                space.truncation()
            )));
        }
    }
    if symmetric {
        let mut rng = sampling::rng_for(seed, 0x535D);
        for _ in 0..8 {
            let x = sampling::dyadic_vector(space, space.truncation(), &mut rng);
            let xs = x.coords_padded(space.truncation());
            for i in 0..dim {
                for j in 0..dim {
                    for k in 0..j {
                        let a =
                            expr::eval(&coeffs[(i * dim + j) * dim + k], &expr::EvalEnv::coords(&xs))?;
                        let b =
                            expr::eval(&coeffs[(i * dim + k) * dim + j], &expr::EvalEnv::coords(&xs))?;
                        if a != b {
                            return Err(Error::Rejected(format!(
                                "claimed symmetric but Γ^{}_{{{},{}}} = {a} differs from \
                                 Γ^{}_{{{},{}}} = {b} at {:?}",
                                i + 1,
                                j + 1,
                                k + 1,
                                i + 1,
                                k + 1,
                                j + 1,
                                x.coords()
                            )));
                        }
                    }
                }
            }
        }
    }
    let id = space.id().clone();
    let coeffs: Arc<[Expr]> = coeffs.to_vec().into();
    let trunc = space.truncation();
    let gamma: GammaFn = Arc::new(move |x: &GradedVector| {
        let xs = x.coords_padded(trunc);
        let mut vals = Vec::with_capacity(coeffs.len());
        for e in coeffs.iter() {
            vals.push(expr::eval(e, &expr::EvalEnv::coords(&xs))?);
        }
        let tensor = BilinearTensor::new(dim, dim, vals)?;
        Ok(MultilinearMapRep::bilinear(id.clone(), id.clone(), tensor))
    });
    Ok(ChristoffelField::new(chart, space, space.truncation(), gamma, symmetric))
}

/// Applies `DΘ(f)⁻¹` to `v` by solving on the truncation degree.
fn solve_truncated(
    d_theta: &LinearMapRep,
    v: &GradedVector,
    space: &FrechetSpace,
    at: &GradedVector,
) -> Result<GradedVector> {
    let deg = space.truncation().max(v.deg());
    let m = d_theta.to_matrix(deg);
    let sol = m.solve(&v.coords_padded(deg)).map_err(|_| {
        Error::OutsideDomain(format!(
            "chart-change derivative is singular on the truncation at {:?}",
            at.coords()
        ))
    })?;
    Ok(GradedVector::new(space.id().clone(), sol))
}

/// Pushes a Christoffel field through a chart change so that the pair
/// satisfies the compatibility law:
///
/// `Γ_α(Θf)(g', h') = DΘ(f)(Γ_β(f)(DΘ⁻¹g', DΘ⁻¹h')) − D²Θ(f)(DΘ⁻¹h')(DΘ⁻¹g')`.
///
/// `theta_inverse` recovers the source point `f` from the target-side
/// argument; `DΘ⁻¹` itself is applied by solving on the truncation degree.
pub fn pushforward_christoffel(
    gamma_beta: &ChristoffelField,
    theta: &McMap,
    theta_inverse: &McMap,
    target_chart: impl Into<String>,
) -> Result<ChristoffelField> {
    if theta.space_in().id() != gamma_beta.space().id() {
        return Err(Error::SpaceMismatch {
            expected: gamma_beta.space().id().clone(),
            got: theta.space_in().id().clone(),
        });
    }
    let space = theta.space_out().clone();
    let beta = gamma_beta.clone();
    let theta = theta.clone();
    let theta_inv = theta_inverse.clone();
    let out_space = space.clone();
    let gamma: GammaFn = Arc::new(move |y: &GradedVector| {
        let f = theta_inv.eval(y)?;
        let d = theta.jacobian(&f)?;
        let d2 = theta.second_at(&f)?;
        let gamma_b = beta.gamma_at(&f)?;
        let src = theta.space_in().clone();
        let d_for_solve = d.clone();
        let f_for_err = f.clone();
        let out = out_space.id().clone();
        MultilinearMapRep::from_fn(
            vec![out.clone(), out.clone()],
            out.clone(),
            Arc::new(move |args: &[GradedVector]| {
                let g = solve_truncated(&d_for_solve, &args[0], &src, &f_for_err)?;
                let h = solve_truncated(&d_for_solve, &args[1], &src, &f_for_err)?;
                let carried = d_for_solve.apply(&gamma_b.eval(&[g.clone(), h.clone()])?)?;
                let quad = d2.eval(&[h, g])?;
                Ok(carried.sub(&quad).retagged(out.clone()))
            }),
        )
    });
    Ok(ChristoffelField::new(
        target_chart,
        &space,
        gamma_beta.base_dim,
        gamma,
        gamma_beta.symmetric,
    ))
}

/// Maximum violation of the compatibility law over sampled
/// `(f, g, h)` triples, measured in the metric of the target space:
///
/// `‖Γ_α(Θf)(DΘ g, DΘ h) + D²Θ(f)(h)(g) − DΘ(Γ_β(f)(g, h))‖_d`.
pub fn compatibility_residual(
    gamma_alpha: &ChristoffelField,
    gamma_beta: &ChristoffelField,
    theta: &McMap,
    region: &DomainSpec,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = sampling::rng_for(seed, 0xEC04);
    let src = gamma_beta.space();
    let dst = gamma_alpha.space();
    let mut worst: f64 = 0.0;
    let mut used = 0;
    let mut attempts = 0;
    while used < samples && attempts < samples * 20 {
        attempts += 1;
        let f = match region {
            DomainSpec::All => sampling::dyadic_vector(src, src.truncation(), &mut rng).scale(0.25),
            DomainSpec::MetricBall { center, radius } => {
                sampling::vector_in_ball(src, center, *radius, src.truncation(), &mut rng)
            }
        };
        let g = sampling::dyadic_vector(src, src.truncation(), &mut rng);
        let h = sampling::dyadic_vector(src, src.truncation(), &mut rng);
        let Ok(y) = theta.eval(&f) else { continue };
        let d = theta.jacobian(&f)?;
        let lhs = gamma_alpha
            .eval(&y, &d.apply(&g)?.retagged(dst.id().clone()), &d.apply(&h)?.retagged(dst.id().clone()))?
            .add(&theta.second_at(&f)?.eval(&[h.clone(), g.clone()])?.retagged(dst.id().clone()));
        let rhs = d.apply(&gamma_beta.eval(&f, &g, &h)?)?.retagged(dst.id().clone());
        worst = worst.max(dst.distance(&lhs, &rhs)?);
        used += 1;
    }
    if used == 0 && samples > 0 {
        return Err(Error::InvalidInput(
            "no sample point survived the chart change".into(),
        ));
    }
    Ok(worst)
}

/// Splits a second-order jet into two first-order ones:
/// `(x, v, w) -> ((x, v), (x, w + Γ(x)(v, v)))`.
pub fn split_second_tangent(gamma: &ChristoffelField, j: &Jet2) -> Result<(Jet1, Jet1)> {
    if j.chart != gamma.chart {
        return Err(Error::InvalidInput(format!(
            "jet lives in chart `{}` but the field is on `{}`",
            j.chart, gamma.chart
        )));
    }
    let correction = gamma.eval(&j.x, &j.v, &j.v)?;
    let first = Jet1::new(j.chart.clone(), j.x.clone(), j.v.clone())?;
    let second = Jet1::new(j.chart.clone(), j.x.clone(), j.w.add(&correction))?;
    Ok((first, second))
}

/// Inverse of [`split_second_tangent`]:
/// `((x, v), (x, u)) -> (x, v, u − Γ(x)(v, v))`. Exact two-sided inverse
/// since the same correction value is added and subtracted.
pub fn merge_second_tangent(gamma: &ChristoffelField, a: &Jet1, b: &Jet1) -> Result<Jet2> {
    if a.chart != b.chart || a.chart != gamma.chart {
        return Err(Error::InvalidInput(format!(
            "merge needs both jets and the field in one chart, got `{}`, `{}`, `{}`",
            a.chart, b.chart, gamma.chart
        )));
    }
    if a.x != b.x {
        return Err(Error::OutsideDomain(
            "merge needs two jets over the same base point".into(),
        ));
    }
    let correction = gamma.eval(&a.x, &a.v, &a.v)?;
    Jet2::new(a.chart.clone(), a.x.clone(), a.v.clone(), b.v.sub(&correction))
}

/// A linear time-dependent system `dx/dt = A(t)·x` on a fiber space.
#[derive(Clone)]
pub struct OdeSystem {
    fiber: FrechetSpace,
    a: OperatorFn,
    t_lo: f64,
    t_hi: f64,
}

impl std::fmt::Debug for OdeSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OdeSystem")
            .field("fiber", self.fiber.id())
            .field("interval", &(self.t_lo, self.t_hi))
            .finish_non_exhaustive()
    }
}

impl OdeSystem {
    pub fn new(fiber: &FrechetSpace, a: OperatorFn, t_lo: f64, t_hi: f64) -> Result<Self> {
        if !t_lo.is_finite() || !t_hi.is_finite() || t_lo >= t_hi {
            return Err(Error::InvalidInput(format!(
                "need a finite interval with t_lo < t_hi, got [{t_lo}, {t_hi}]"
            )));
        }
        Ok(OdeSystem { fiber: fiber.clone(), a, t_lo, t_hi })
    }

    pub fn fiber(&self) -> &FrechetSpace {
        &self.fiber
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.t_lo, self.t_hi)
    }

    /// The operator at time `t`.
    pub fn operator(&self, t: f64) -> Result<LinearMapRep> {
        if !(self.t_lo..=self.t_hi).contains(&t) {
            return Err(Error::OutsideDomain(format!(
                "t = {t} is outside [{}, {}]",
                self.t_lo, self.t_hi
            )));
        }
        (self.a)(t)
    }

    /// `A(t)·u`.
    pub fn apply(&self, t: f64, u: &GradedVector) -> Result<GradedVector> {
        self.operator(t)?.apply(u)
    }
}

/// Reads a linear connection over a one-coordinate base as the linear
/// system `[A(t)](u) = Γ(t·e₁)(u, e₁)`. A field that was built by
/// [`ode_to_connection`] hands back its original operator function, making
/// the correspondence exact.
pub fn connection_to_ode(gamma: &ChristoffelField, t_lo: f64, t_hi: f64) -> Result<OdeSystem> {
    if gamma.base_dim != 1 {
        return Err(Error::Unsupported(format!(
            "the ODE correspondence needs a one-coordinate base, this field uses {}",
            gamma.base_dim
        )));
    }
    if let Some(kernel) = &gamma.ode_kernel {
        return OdeSystem::new(&gamma.space, kernel.clone(), t_lo, t_hi);
    }
    let field = gamma.clone();
    let space = gamma.space.clone();
    let a: OperatorFn = Arc::new(move |t| {
        let base = field.space.basis(1, t);
        let g = field.gamma_at(&base)?;
        let e1 = field.space.basis(1, 1.0);
        let deg = field.space.truncation();
        let mut m = DenseMatrix::zero(deg);
        for j in 1..=deg {
            let col = g.eval(&[field.space.basis(j, 1.0), e1.clone()])?;
            for i in 1..=deg {
                m.set(i - 1, j - 1, col.coord(i));
            }
        }
        Ok(LinearMapRep::finite_matrix(
            field.space.id().clone(),
            field.space.id().clone(),
            m,
        ))
    });
    OdeSystem::new(&space, a, t_lo, t_hi)
}

/// Reads a linear system as a connection over a one-coordinate base:
/// `Γ(t·e₁)(u, h) = h₁·[A(t)](u)`. The operator function is retained so
/// [`connection_to_ode`] inverts this exactly.
pub fn ode_to_connection(ode: &OdeSystem, chart: impl Into<String>) -> ChristoffelField {
    let a = ode.a.clone();
    let id = ode.fiber.id().clone();
    let gamma: GammaFn = {
        let a = a.clone();
        Arc::new(move |x: &GradedVector| {
            let t = x.coord(1);
            let op = a(t)?;
            let out = id.clone();
            MultilinearMapRep::from_fn(
                vec![id.clone(), id.clone()],
                id.clone(),
                Arc::new(move |args: &[GradedVector]| {
                    let s = args[1].coord(1);
                    Ok(op.apply(&args[0])?.scale(s).retagged(out.clone()))
                }),
            )
        })
    };
    let mut field = ChristoffelField::new(chart, &ode.fiber, 1, gamma, false);
    field.ode_kernel = Some(a);
    field
}

/// Transfers a one-coordinate-base system along a base chart change
/// `φ_β`: `A_β(t) = (φ_β⁻¹)'(t) · A(φ_β⁻¹(t))`, with `φ_β⁻¹` supplied as a
/// differentiable map. The target interval `[t_lo, t_hi]` must map into the
/// source interval under `φ_β⁻¹`; the endpoints and midpoint are checked up
/// front, interior points lazily at evaluation time.
pub fn transfer_ode(ode: &OdeSystem, phi_inv: &McMap, t_lo: f64, t_hi: f64) -> Result<OdeSystem> {
    if phi_inv.dim_in() != 1 || phi_inv.dim_out() != 1 {
        return Err(Error::Unsupported(
            "base chart changes must act on the single base coordinate".into(),
        ));
    }
    let (lo, hi) = ode.interval();
    let base = phi_inv.space_in();
    for t in [t_lo, 0.5 * (t_lo + t_hi), t_hi] {
        let s = phi_inv.eval(&base.basis(1, t))?.coord(1);
        if !(lo..=hi).contains(&s) {
            return Err(Error::OutsideDomain(format!(
                "base chart change sends t = {t} to {s}, outside the source interval [{lo}, {hi}]"
            )));
        }
    }
    let a = ode.a.clone();
    let phi = phi_inv.clone();
    let fiber = ode.fiber.clone();
    let fiber_id = fiber.id().clone();
    let transferred: OperatorFn = Arc::new(move |t| {
        let base = phi.space_in().basis(1, t);
        let s = phi.eval(&base)?.coord(1);
        if !(lo..=hi).contains(&s) {
            return Err(Error::OutsideDomain(format!(
                "base chart change sends t = {t} to {s}, outside the source interval [{lo}, {hi}]"
            )));
        }
        let slope = phi
            .jacobian(&base)?
            .apply(&phi.space_in().basis(1, 1.0))?
            .coord(1);
        let inner = a(s)?;
        LinearMapRep::compose(LinearMapRep::scalar(fiber_id.clone(), slope), inner)
    });
    OdeSystem::new(&fiber, transferred, t_lo, t_hi)
}
