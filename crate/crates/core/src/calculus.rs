//! Differentiable maps between graded sequence spaces.
//!
//! An [`McMap`] bundles an evaluation closure with optional analytic
//! derivative data (a jacobian closure returning a structured linear map and
//! a second-derivative closure returning a multilinear map) plus a declared
//! smoothness order and domain. Finite-difference fallbacks with Richardson
//! extrapolation cover maps that carry no analytic data, and the analytic and
//! extrapolated paths are required by the test suites to agree tightly.
//!
//! A [`Catalog`] is a registry of named maps; registration of a map that
//! declares second-order smoothness runs a difference-quotient spot check and
//! rejects entries whose second differences fail to settle.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::operators::{LinearMapRep, MultilinearMapRep};
use crate::space::{FrechetSpace, GradedVector};

/// Declared smoothness order for maps that are smooth of every order.
pub const SMOOTH_INF: u32 = u32::MAX;

/// Base relative step for first-order finite differences.
const FD_BASE_STEP: f64 = 1e-3;
/// Base relative step for the outer difference of nested second differences.
const FD_SECOND_BASE_STEP: f64 = 1e-2;

/// Where a map is defined.
#[derive(Clone, Debug, Serialize)]
pub enum DomainSpec {
    /// The whole space.
    All,
    /// The closed metric ball around `center`.
    MetricBall { center: GradedVector, radius: f64 },
}

impl DomainSpec {
    pub fn contains(&self, space: &FrechetSpace, p: &GradedVector) -> Result<bool> {
        match self {
            DomainSpec::All => Ok(true),
            DomainSpec::MetricBall { center, radius } => {
                Ok(space.distance(center, p)? <= *radius)
            }
        }
    }
}

type EvalFn = Arc<dyn Fn(&GradedVector) -> Result<GradedVector> + Send + Sync>;
type JacFn = Arc<dyn Fn(&GradedVector) -> Result<LinearMapRep> + Send + Sync>;
type SecondFn = Arc<dyn Fn(&GradedVector) -> Result<MultilinearMapRep> + Send + Sync>;

/// A map between graded sequence spaces with derivative bookkeeping.
#[derive(Clone)]
pub struct McMap {
    space_in: FrechetSpace,
    space_out: FrechetSpace,
    /// Number of leading coordinates the map actively reads/writes.
    dim_in: usize,
    dim_out: usize,
    domain: DomainSpec,
    smoothness: u32,
    eval_fn: EvalFn,
    jac_fn: Option<JacFn>,
    second_fn: Option<SecondFn>,
}

impl std::fmt::Debug for McMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("McMap")
            .field("space_in", self.space_in.id())
            .field("space_out", self.space_out.id())
            .field("dim_in", &self.dim_in)
            .field("dim_out", &self.dim_out)
            .field("smoothness", &self.smoothness)
            .field("analytic_jacobian", &self.jac_fn.is_some())
            .field("analytic_second", &self.second_fn.is_some())
            .finish_non_exhaustive()
    }
}

/// A finite-difference directional derivative after Richardson
/// extrapolation, with the step used and a self-consistency indicator
/// (distance between the last two extrapolation levels).
#[derive(Clone, Debug)]
pub struct FdDerivative {
    pub value: GradedVector,
    pub error_indicator: f64,
    pub step: f64,
}

impl McMap {
    /// Full-control constructor.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        space_in: FrechetSpace,
        space_out: FrechetSpace,
        dim_in: usize,
        dim_out: usize,
        domain: DomainSpec,
        smoothness: u32,
        eval_fn: EvalFn,
        jac_fn: Option<JacFn>,
        second_fn: Option<SecondFn>,
    ) -> Self {
        McMap {
            space_in,
            space_out,
            dim_in,
            dim_out,
            domain,
            smoothness,
            eval_fn,
            jac_fn,
            second_fn,
        }
    }

    /// The identity map of a space.
    pub fn identity(space: FrechetSpace) -> Self {
        let dim = space.truncation();
        let id_rep = LinearMapRep::identity(space.id().clone());
        let out_id = space.id().clone();
        McMap {
            space_in: space.clone(),
            space_out: space.clone(),
            dim_in: dim,
            dim_out: dim,
            domain: DomainSpec::All,
            smoothness: SMOOTH_INF,
            eval_fn: Arc::new(move |p| Ok(p.clone())),
            jac_fn: Some(Arc::new(move |_| Ok(id_rep.clone()))),
            second_fn: Some(Arc::new(move |_| Ok(zero_bilinear(out_id.clone())))),
        }
    }

    /// Wraps a structured linear map.
    pub fn linear(space_in: FrechetSpace, space_out: FrechetSpace, rep: LinearMapRep) -> Self {
        McMap::affine(space_in, space_out.clone(), rep, GradedVector::zero(space_out.id().clone()))
    }

    /// `p -> rep(p) + offset`.
    pub fn affine(
        space_in: FrechetSpace,
        space_out: FrechetSpace,
        rep: LinearMapRep,
        offset: GradedVector,
    ) -> Self {
        let dim_in = space_in.truncation();
        let dim_out = space_out.truncation();
        let rep_eval = rep.clone();
        let out_id = space_out.id().clone();
        McMap {
            space_in,
            space_out,
            dim_in,
            dim_out,
            domain: DomainSpec::All,
            smoothness: SMOOTH_INF,
            eval_fn: Arc::new(move |p| Ok(rep_eval.apply(p)?.add(&offset))),
            jac_fn: Some(Arc::new(move |_| Ok(rep.clone()))),
            second_fn: Some(Arc::new(move |_| Ok(zero_bilinear(out_id.clone())))),
        }
    }

    pub fn space_in(&self) -> &FrechetSpace {
        &self.space_in
    }

    pub fn space_out(&self) -> &FrechetSpace {
        &self.space_out
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn smoothness(&self) -> u32 {
        self.smoothness
    }

    pub fn has_analytic_jacobian(&self) -> bool {
        self.jac_fn.is_some()
    }

    pub fn has_analytic_second(&self) -> bool {
        self.second_fn.is_some()
    }

    /// Replaces the domain restriction.
    pub fn restricted(mut self, domain: DomainSpec) -> Self {
        self.domain = domain;
        self
    }

    /// Lowers (never raises) the declared smoothness.
    pub fn with_smoothness(mut self, k: u32) -> Self {
        self.smoothness = k;
        self
    }

    fn check_in_domain(&self, p: &GradedVector) -> Result<()> {
        self.space_in.check_member(p)?;
        if self.domain.contains(&self.space_in, p)? {
            Ok(())
        } else {
            Err(Error::OutsideDomain(format!(
                "point {:?} is outside the declared domain",
                p.coords()
            )))
        }
    }

    /// Evaluates the map; the point must lie in the declared domain.
    pub fn eval(&self, p: &GradedVector) -> Result<GradedVector> {
        self.check_in_domain(p)?;
        let out = (self.eval_fn)(p)?;
        self.space_out.check_member(&out)?;
        Ok(out)
    }

    /// Largest `t <= t0` such that the whole central stencil `p +- t h`
    /// stays inside the domain (scaling down a metric-ball offset only
    /// shrinks its norm, so smaller steps remain inside).
    fn fit_step(&self, p: &GradedVector, h: &GradedVector, t0: f64) -> Result<f64> {
        let mut t = t0;
        for _ in 0..60 {
            let hi = p.add(&h.scale(t));
            let lo = p.sub(&h.scale(t));
            if self.domain.contains(&self.space_in, &hi)?
                && self.domain.contains(&self.space_in, &lo)?
            {
                return Ok(t);
            }
            t *= 0.5;
        }
        Err(Error::OutsideDomain(
            "finite-difference stencil cannot fit inside the declared domain".into(),
        ))
    }

    /// Central-difference directional derivative with two levels of
    /// Richardson extrapolation.
    pub fn directional_derivative(
        &self,
        p: &GradedVector,
        h: &GradedVector,
    ) -> Result<FdDerivative> {
        self.check_in_domain(p)?;
        self.space_in.check_member(h)?;
        if h.is_zero() {
            return Ok(FdDerivative {
                value: GradedVector::zero(self.space_out.id().clone()),
                error_indicator: 0.0,
                step: 0.0,
            });
        }
        let t0 = FD_BASE_STEP * (1.0 + p.sup_coord()) / (1.0 + h.sup_coord());
        let t = self.fit_step(p, h, t0)?;
        let quot = |t: f64| -> Result<GradedVector> {
            let a = self.eval(&p.add(&h.scale(t)))?;
            let b = self.eval(&p.sub(&h.scale(t)))?;
            Ok(a.sub(&b).scale(0.5 / t))
        };
        let d0 = quot(t)?;
        let d1 = quot(t * 0.5)?;
        let d2 = quot(t * 0.25)?;
        let r1a = d1.scale(4.0).sub(&d0).scale(1.0 / 3.0);
        let r1b = d2.scale(4.0).sub(&d1).scale(1.0 / 3.0);
        let r2 = r1b.scale(16.0).sub(&r1a).scale(1.0 / 15.0);
        let error_indicator = r2.sub(&r1b).sup_coord();
        Ok(FdDerivative { value: r2, error_indicator, step: t })
    }

    /// The derivative at `p` as a structured linear map: analytic data when
    /// the map carries it, otherwise a finite-difference assembly on the
    /// leading `truncation` coordinates.
    pub fn jacobian(&self, p: &GradedVector) -> Result<LinearMapRep> {
        self.check_in_domain(p)?;
        match &self.jac_fn {
            Some(j) => j(p),
            None => self.fd_jacobian(p, self.space_in.truncation()),
        }
    }

    /// Finite-difference jacobian on the leading `deg` coordinates,
    /// regardless of any analytic data.
    pub fn fd_jacobian(&self, p: &GradedVector, deg: usize) -> Result<LinearMapRep> {
        self.check_in_domain(p)?;
        let mut m = DenseMatrix::zero(deg);
        for j in 1..=deg {
            let h = self.space_in.basis(j, 1.0);
            let col = self.directional_derivative(p, &h)?.value;
            for i in 1..=deg {
                m.set(i - 1, j - 1, col.coord(i));
            }
        }
        Ok(LinearMapRep::finite_matrix(
            self.space_in.id().clone(),
            self.space_out.id().clone(),
            m,
        ))
    }

    /// The second derivative at `p` as a symmetric bilinear map: analytic
    /// when available, otherwise nested finite differences.
    pub fn second_at(&self, p: &GradedVector) -> Result<MultilinearMapRep> {
        self.check_in_domain(p)?;
        if let Some(s) = &self.second_fn {
            return s(p);
        }
        let me = self.clone();
        let pt = p.clone();
        MultilinearMapRep::from_fn(
            vec![self.space_in.id().clone(), self.space_in.id().clone()],
            self.space_out.id().clone(),
            Arc::new(move |args| Ok(me.fd_second_directional(&pt, &args[0], &args[1])?.value)),
        )
    }

    /// Nested central differences for `D^2 P(p)(h, g)` with one Richardson
    /// level on the outer step.
    pub fn fd_second_directional(
        &self,
        p: &GradedVector,
        h: &GradedVector,
        g: &GradedVector,
    ) -> Result<FdDerivative> {
        self.check_in_domain(p)?;
        self.space_in.check_member(h)?;
        self.space_in.check_member(g)?;
        if h.is_zero() || g.is_zero() {
            return Ok(FdDerivative {
                value: GradedVector::zero(self.space_out.id().clone()),
                error_indicator: 0.0,
                step: 0.0,
            });
        }
        let s0 = FD_SECOND_BASE_STEP * (1.0 + p.sup_coord()) / (1.0 + g.sup_coord());
        let s = self.fit_step(p, g, s0)? * 0.5;
        let outer = |s: f64| -> Result<GradedVector> {
            let a = self
                .directional_derivative(&p.add(&g.scale(s)), h)?
                .value;
            let b = self
                .directional_derivative(&p.sub(&g.scale(s)), h)?
                .value;
            Ok(a.sub(&b).scale(0.5 / s))
        };
        let s_full = outer(s)?;
        let s_half = outer(s * 0.5)?;
        let value = s_half.scale(4.0).sub(&s_full).scale(1.0 / 3.0);
        let error_indicator = s_half.sub(&s_full).sup_coord();
        Ok(FdDerivative { value, error_indicator, step: s })
    }

    /// `outer . inner` with chain-rule propagation of analytic data.
    pub fn compose(outer: &McMap, inner: &McMap) -> Result<McMap> {
        if inner.space_out.id() != outer.space_in.id() {
            return Err(Error::SpaceMismatch {
                expected: outer.space_in.id().clone(),
                got: inner.space_out.id().clone(),
            });
        }
        let eval = {
            let (o, i) = (outer.clone(), inner.clone());
            Arc::new(move |p: &GradedVector| o.eval(&i.eval(p)?))
        };
        let jac: Option<JacFn> =
            if inner.jac_fn.is_some() && outer.jac_fn.is_some() {
                let (o, i) = (outer.clone(), inner.clone());
                Some(Arc::new(move |p: &GradedVector| {
                    let q = i.eval(p)?;
                    LinearMapRep::compose(o.jacobian(&q)?, i.jacobian(p)?)
                }))
            } else {
                None
            };
        // D^2(o.i)(p)(u,v) = D^2 o(q)(Di u, Di v) + Do(q) . D^2 i(p)(u,v).
        let second: Option<SecondFn> = if inner.jac_fn.is_some()
            && outer.jac_fn.is_some()
            && inner.second_fn.is_some()
            && outer.second_fn.is_some()
        {
            let (o, i) = (outer.clone(), inner.clone());
            let in_id = inner.space_in.id().clone();
            let out_id = outer.space_out.id().clone();
            Some(Arc::new(move |p: &GradedVector| {
                let (o, i) = (o.clone(), i.clone());
                let p = p.clone();
                MultilinearMapRep::from_fn(
                    vec![in_id.clone(), in_id.clone()],
                    out_id.clone(),
                    Arc::new(move |args: &[GradedVector]| {
                        let q = i.eval(&p)?;
                        let di = i.jacobian(&p)?;
                        let du = di.apply(&args[0])?;
                        let dv = di.apply(&args[1])?;
                        let term1 = o.second_at(&q)?.eval(&[du, dv])?;
                        let inner_second = i.second_at(&p)?.eval(&[args[0].clone(), args[1].clone()])?;
                        let term2 = o.jacobian(&q)?.apply(&inner_second)?;
                        Ok(term1.add(&term2))
                    }),
                )
            }))
        } else {
            None
        };
        Ok(McMap {
            space_in: inner.space_in.clone(),
            space_out: outer.space_out.clone(),
            dim_in: inner.dim_in,
            dim_out: outer.dim_out,
            domain: inner.domain.clone(),
            smoothness: outer.smoothness.min(inner.smoothness),
            eval_fn: eval,
            jac_fn: jac,
            second_fn: second,
        })
    }

    /// Inverse of a strictly monotone single-coordinate map on `[lo, hi]`,
    /// solved by bisection with a Newton polish; derivative data comes from
    /// the implicit function theorem.
    pub fn numeric_inverse_1d(fwd: &McMap, lo: f64, hi: f64) -> Result<McMap> {
        if fwd.dim_in != 1 || fwd.dim_out != 1 {
            return Err(Error::Unsupported(
                "numeric inversion is implemented for single-coordinate maps only".into(),
            ));
        }
        if fwd.space_in.id() != fwd.space_out.id() {
            return Err(Error::Unsupported(
                "single-coordinate inversion passes tail coordinates through and so \
                 needs matching input and output spaces"
                    .into(),
            ));
        }
        if !lo.is_finite() || !hi.is_finite() || lo >= hi {
            return Err(Error::InvalidInput("need lo < hi for the inversion bracket".into()));
        }
        let f_lo = fwd.eval(&fwd.space_in.basis(1, lo))?.coord(1);
        let f_hi = fwd.eval(&fwd.space_in.basis(1, hi))?.coord(1);
        if f_lo == f_hi {
            return Err(Error::Rejected(format!(
                "map is not strictly monotone on [{lo}, {hi}]: f(lo) = f(hi) = {f_lo}"
            )));
        }
        let increasing = f_lo < f_hi;

        let solve = {
            let fwd = fwd.clone();
            move |y1: f64| -> Result<f64> {
                let (mut a, mut b) = (lo, hi);
                let (ya, yb) = if increasing { (f_lo, f_hi) } else { (f_hi, f_lo) };
                if y1 < ya - 1e-12 || y1 > yb + 1e-12 {
                    return Err(Error::OutsideDomain(format!(
                        "target {y1} is outside the image [{ya}, {yb}] of the bracket"
                    )));
                }
                for _ in 0..200 {
                    let mid = 0.5 * (a + b);
                    if mid <= a || mid >= b {
                        break;
                    }
                    let fm = fwd.eval(&fwd.space_in.basis(1, mid))?.coord(1);
                    if (fm < y1) == increasing {
                        a = mid;
                    } else {
                        b = mid;
                    }
                }
                let mut x = 0.5 * (a + b);
                if fwd.has_analytic_jacobian() {
                    for _ in 0..3 {
                        let px = fwd.space_in.basis(1, x);
                        let fx = fwd.eval(&px)?.coord(1);
                        let dfx = fwd
                            .jacobian(&px)?
                            .apply(&fwd.space_in.basis(1, 1.0))?
                            .coord(1);
                        if dfx.abs() < 1e-300 {
                            break;
                        }
                        let next = x - (fx - y1) / dfx;
                        if next.is_finite() && next >= lo && next <= hi {
                            x = next;
                        }
                    }
                }
                Ok(x)
            }
        };

        let in_space = fwd.space_out.clone();
        let out_space = fwd.space_in.clone();
        // The inverse mirrors the forward's convention: coordinate 1 is
        // solved for, every higher coordinate passes through unchanged.
        let eval = {
            let solve = solve.clone();
            let out_id = out_space.id().clone();
            Arc::new(move |y: &GradedVector| {
                let mut coords = y.coords_padded(y.deg().max(1));
                coords[0] = solve(coords[0])?;
                Ok(GradedVector::new(out_id.clone(), coords))
            })
        };
        let first_derivative_at = {
            let solve = solve.clone();
            let fwd_c = fwd.clone();
            let out_space = out_space.clone();
            move |y1: f64| -> Result<(f64, f64)> {
                let x1 = solve(y1)?;
                let x = out_space.basis(1, x1);
                let dfx = fwd_c
                    .jacobian(&x)?
                    .apply(&out_space.basis(1, 1.0))?
                    .coord(1);
                if dfx.abs() < 1e-300 {
                    return Err(Error::Singular(
                        "forward derivative vanishes at the preimage".into(),
                    ));
                }
                Ok((x1, dfx))
            }
        };
        let jac: Option<JacFn> = if fwd.has_analytic_jacobian() {
            let first = first_derivative_at.clone();
            let out_id = out_space.id().clone();
            Some(Arc::new(move |y: &GradedVector| {
                let (_, dfx) = first(y.coord(1))?;
                let mut delta = DenseMatrix::zero(1);
                delta.set(0, 0, 1.0 / dfx - 1.0);
                LinearMapRep::sum(vec![
                    LinearMapRep::identity(out_id.clone()),
                    LinearMapRep::finite_matrix(out_id.clone(), out_id.clone(), delta),
                ])
            }))
        } else {
            None
        };
        // D^2 g(y)(u, v) = -Dg(y) . D^2 f(g y)(Dg u, Dg v); the forward's
        // second derivative has no content on the pass-through coordinates,
        // so only the first components of Dg u, Dg v matter.
        let second: Option<SecondFn> = if fwd.has_analytic_jacobian()
            && fwd.has_analytic_second()
        {
            let first = first_derivative_at.clone();
            let fwd_c = fwd.clone();
            let out_space = out_space.clone();
            let in_id = in_space.id().clone();
            Some(Arc::new(move |y: &GradedVector| {
                let (x1, dfx) = first(y.coord(1))?;
                let dg = 1.0 / dfx;
                let d2f = fwd_c.second_at(&out_space.basis(1, x1))?;
                let out_space = out_space.clone();
                MultilinearMapRep::from_fn(
                    vec![in_id.clone(), in_id.clone()],
                    out_space.id().clone(),
                    Arc::new(move |args: &[GradedVector]| {
                        let du = out_space.basis(1, dg * args[0].coord(1));
                        let dv = out_space.basis(1, dg * args[1].coord(1));
                        Ok(d2f.eval(&[du, dv])?.scale(-dg).retagged(out_space.id().clone()))
                    }),
                )
            }))
        } else {
            None
        };
        Ok(McMap {
            space_in: in_space,
            space_out: out_space,
            dim_in: 1,
            dim_out: 1,
            domain: DomainSpec::All,
            smoothness: fwd.smoothness,
            eval_fn: eval,
            jac_fn: jac,
            second_fn: second,
        })
    }
}

/// The zero bilinear map of a space (second derivative of linear maps).
fn zero_bilinear(space: crate::space::SpaceId) -> MultilinearMapRep {
    let out = space.clone();
    MultilinearMapRep::from_fn(
        vec![space.clone(), space],
        out.clone(),
        Arc::new(move |_args| Ok(GradedVector::zero(out.clone()))),
    )
    .expect("arity 2 is valid")
}

/// One probed derivative order of a smoothness report.
#[derive(Clone, Debug, Serialize)]
pub struct OrderProbe {
    pub order: u32,
    /// `(step, indicator)` pairs, largest step first; the indicator is the
    /// disagreement between two stencil geometries at that step.
    pub indicators: Vec<(f64, f64)>,
    /// Whether the tail indicators settled relative to the head.
    pub settled: bool,
}

/// Report of a difference-quotient smoothness probe.
#[derive(Clone, Debug, Serialize)]
pub struct SmoothnessReport {
    pub claimed: u32,
    pub probed_orders: Vec<OrderProbe>,
    /// True when every probed order settled.
    pub consistent: bool,
}

/// Symmetric difference quotient of the given order along `h`.
fn difference_quotient(
    map: &McMap,
    p: &GradedVector,
    h: &GradedVector,
    order: u32,
    s: f64,
) -> Result<GradedVector> {
    let mut acc = GradedVector::zero(map.space_out.id().clone());
    let r = order as i64;
    let mut binom = 1.0f64;
    for i in 0..=r {
        let offset = (r as f64) / 2.0 - i as f64;
        let point = p.add(&h.scale(offset * s));
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        acc = acc.add(&map.eval(&point)?.scale(sign * binom));
        binom = binom * (r - i) as f64 / (i + 1) as f64;
    }
    Ok(acc.scale(s.powi(-(order as i32))))
}

/// Probes the declared smoothness of a map by comparing difference
/// quotients from two stencil geometries as the step shrinks.
///
/// At step `s` the order-`r` quotient is taken once anchored at
/// `p + (s/4) h` (its stencil straddles `p`) and once anchored at
/// `p + (r/2 + 1) s h` (its stencil stays clear of `p`). If the map has `r`
/// continuous derivatives both converge to the same value and the
/// disagreement decays; a derivative jump at `p` keeps it bounded away
/// from zero. A quotient at a fixed anchor alone would settle even across a
/// kink, because for small steps its stencil no longer straddles it.
///
/// This is diagnostic: a settled probe is evidence, not proof. The catalog
/// uses the order-2 version with fixed thresholds as its registration gate.
pub fn mc_smoothness_probe(
    map: &McMap,
    points: &[GradedVector],
    direction: &GradedVector,
    max_order: u32,
) -> Result<SmoothnessReport> {
    let mut probed_orders = Vec::new();
    let top = max_order.min(map.smoothness).max(1);
    for order in 1..=top {
        let r = order as f64;
        let mut worst: Vec<(f64, f64)> = Vec::new();
        for p in points {
            let mut s0 = 0.125 * (1.0 + p.sup_coord()) / (1.0 + direction.sup_coord());
            let reach = direction.scale(s0 * (r + 1.0));
            s0 *= map.fit_step(p, &reach, 1.0)?;
            let mut s = s0;
            for level in 0..8 {
                let near = p.add(&direction.scale(0.25 * s));
                let clear = p.add(&direction.scale((r / 2.0 + 1.0) * s));
                let qa = difference_quotient(map, &near, direction, order, s)?;
                let qb = difference_quotient(map, &clear, direction, order, s)?;
                let ind = qa.sub(&qb).sup_coord();
                match worst.get_mut(level) {
                    Some(slot) => slot.1 = slot.1.max(ind),
                    None => worst.push((s, ind)),
                }
                s *= 0.5;
            }
        }
        let head = worst.iter().take(3).map(|p| p.1).fold(0.0f64, f64::max);
        let tail = worst.iter().rev().take(2).map(|p| p.1).fold(0.0f64, f64::max);
        let settled = tail <= (0.25 * head).max(1e-4);
        probed_orders.push(OrderProbe { order, indicators: worst, settled });
    }
    let consistent = probed_orders.iter().all(|o| o.settled);
    Ok(SmoothnessReport { claimed: map.smoothness, probed_orders, consistent })
}

/// Registration-time spot check for maps declaring second-order smoothness:
/// second difference quotients at a handful of deterministic points must
/// settle as the step shrinks.
fn c2_spot_check(map: &McMap) -> Result<()> {
    let space = &map.space_in;
    let center = match map.domain() {
        DomainSpec::All => space.zero(),
        DomainSpec::MetricBall { center, .. } => center.clone(),
    };
    let mut points = vec![center.clone()];
    for n in 1..=map.dim_in.min(2) {
        points.push(center.add(&space.basis(n, 0.25)));
        points.push(center.sub(&space.basis(n, 0.015625)));
    }
    for n in 1..=map.dim_in.clamp(1, 2) {
        let direction = space.basis(n, 1.0);
        let report = mc_smoothness_probe(map, &points, &direction, 2)?;
        if let Some(bad) = report.probed_orders.iter().find(|o| !o.settled) {
            return Err(Error::Rejected(format!(
                "second differences along e{n} do not settle (order {}, indicators {:?})",
                bad.order,
                bad.indicators
                    .iter()
                    .map(|(s, i)| format!("step {s:.3e}: {i:.3e}"))
                    .collect::<Vec<_>>()
            )));
        }
    }
    Ok(())
}

/// A registry of named differentiable maps, gated by smoothness spot checks.
pub struct Catalog {
    entries: BTreeMap<String, McMap>,
}

impl Catalog {
    pub fn new() -> Self {
        Catalog { entries: BTreeMap::new() }
    }

    /// Registers a map. Maps declaring smoothness of order 2 or higher must
    /// pass the second-difference spot check.
    pub fn insert(&mut self, name: impl Into<String>, map: McMap) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidInput(format!(
                "catalog already contains an entry named `{name}`"
            )));
        }
        if map.smoothness >= 2 {
            c2_spot_check(&map).map_err(|e| match e {
                Error::Rejected(msg) => Error::Rejected(format!("entry `{name}`: {msg}")),
                other => other,
            })?;
        }
        self.entries.insert(name, map);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&McMap> {
        self.entries.get(name).ok_or_else(|| {
            Error::InvalidInput(format!("catalog has no entry named `{name}`"))
        })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// The standard catalog over a space: a mix of linear and smooth
    /// nonlinear coordinate maps with full analytic derivative data.
    pub fn standard(space: &FrechetSpace) -> Result<Catalog> {
        let mut cat = Catalog::new();
        cat.insert("identity", McMap::identity(space.clone()))?;
        cat.insert(
            "double",
            McMap::linear(
                space.clone(),
                space.clone(),
                LinearMapRep::scalar(space.id().clone(), 2.0),
            ),
        )?;
        cat.insert("square_first", square_first(space))?;
        cat.insert("sin_first", sin_first(space))?;
        cat.insert("cubic_plus_linear", cubic_plus_linear(space))?;
        Ok(cat)
    }
}

impl Default for Catalog {
    fn default() -> Self {
        Catalog::new()
    }
}

/// `(x1, x2, ...) -> (x1^2, x2, x3, ...)` with analytic derivatives.
pub fn square_first(space: &FrechetSpace) -> McMap {
    let id = space.id().clone();
    let eval_id = id.clone();
    let jac_id = id.clone();
    let second_id = id.clone();
    McMap::from_parts(
        space.clone(),
        space.clone(),
        space.truncation(),
        space.truncation(),
        DomainSpec::All,
        SMOOTH_INF,
        Arc::new(move |p| {
            let mut coords = p.coords().to_vec();
            if let Some(first) = coords.first_mut() {
                *first = *first * *first;
            }
            Ok(GradedVector::new(eval_id.clone(), coords))
        }),
        Some(Arc::new(move |p| {
            // J = Identity + (2 x1 - 1) on the (1,1) entry.
            let block = DenseMatrix::from_rows(vec![vec![2.0 * p.coord(1) - 1.0]])?;
            LinearMapRep::sum(vec![
                LinearMapRep::identity(jac_id.clone()),
                LinearMapRep::finite_matrix(jac_id.clone(), jac_id.clone(), block),
            ])
        })),
        Some(Arc::new(move |_p| {
            let out = second_id.clone();
            MultilinearMapRep::from_fn(
                vec![second_id.clone(), second_id.clone()],
                second_id.clone(),
                Arc::new(move |args: &[GradedVector]| {
                    let v = 2.0 * args[0].coord(1) * args[1].coord(1);
                    Ok(GradedVector::basis(out.clone(), 1, v))
                }),
            )
        })),
    )
}

/// `(x1, x2, ...) -> (sin x1, x2, x3, ...)` with analytic derivatives.
pub fn sin_first(space: &FrechetSpace) -> McMap {
    let id = space.id().clone();
    let eval_id = id.clone();
    let jac_id = id.clone();
    let second_id = id.clone();
    McMap::from_parts(
        space.clone(),
        space.clone(),
        space.truncation(),
        space.truncation(),
        DomainSpec::All,
        SMOOTH_INF,
        Arc::new(move |p| {
            let mut coords = p.coords().to_vec();
            if let Some(first) = coords.first_mut() {
                *first = first.sin();
            }
            Ok(GradedVector::new(eval_id.clone(), coords))
        }),
        Some(Arc::new(move |p| {
            let block = DenseMatrix::from_rows(vec![vec![p.coord(1).cos() - 1.0]])?;
            LinearMapRep::sum(vec![
                LinearMapRep::identity(jac_id.clone()),
                LinearMapRep::finite_matrix(jac_id.clone(), jac_id.clone(), block),
            ])
        })),
        Some(Arc::new(move |p| {
            let out = second_id.clone();
            let x1 = p.coord(1);
            MultilinearMapRep::from_fn(
                vec![second_id.clone(), second_id.clone()],
                second_id.clone(),
                Arc::new(move |args: &[GradedVector]| {
                    let v = -x1.sin() * args[0].coord(1) * args[1].coord(1);
                    Ok(GradedVector::basis(out.clone(), 1, v))
                }),
            )
        })),
    )
}

/// Single-coordinate map `(x1, ...) -> (x1^3 + x1, x2, ...)` (strictly
/// increasing in its active coordinate) with analytic derivatives; higher
/// coordinates pass through untouched, so the map is invertible on the
/// whole space.
pub fn cubic_plus_linear(space: &FrechetSpace) -> McMap {
    let id = space.id().clone();
    let eval_id = id.clone();
    let jac_id = id.clone();
    let second_id = id.clone();
    McMap::from_parts(
        space.clone(),
        space.clone(),
        1,
        1,
        DomainSpec::All,
        SMOOTH_INF,
        Arc::new(move |p| {
            let mut coords = p.coords_padded(p.deg().max(1));
            let x = coords[0];
            coords[0] = x * x * x + x;
            Ok(GradedVector::new(eval_id.clone(), coords))
        }),
        Some(Arc::new(move |p| {
            let x = p.coord(1);
            let mut delta = DenseMatrix::zero(1);
            delta.set(0, 0, 3.0 * x * x);
            LinearMapRep::sum(vec![
                LinearMapRep::identity(jac_id.clone()),
                LinearMapRep::finite_matrix(jac_id.clone(), jac_id.clone(), delta),
            ])
        })),
        Some(Arc::new(move |p| {
            let out = second_id.clone();
            let x1 = p.coord(1);
            MultilinearMapRep::from_fn(
                vec![second_id.clone(), second_id.clone()],
                second_id.clone(),
                Arc::new(move |args: &[GradedVector]| {
                    let v = 6.0 * x1 * args[0].coord(1) * args[1].coord(1);
                    Ok(GradedVector::basis(out.clone(), 1, v))
                }),
            )
        })),
    )
}

/// `(x1, ...) -> (|x1| x1, x2, ...)`: differentiable once, not twice at 0.
/// Used to exercise the catalog's rejection path.
pub fn abs_square_first(space: &FrechetSpace) -> McMap {
    let eval_id = space.id().clone();
    McMap::from_parts(
        space.clone(),
        space.clone(),
        space.truncation(),
        space.truncation(),
        DomainSpec::All,
        1,
        Arc::new(move |p| {
            let mut coords = p.coords().to_vec();
            if let Some(first) = coords.first_mut() {
                *first *= first.abs();
            }
            Ok(GradedVector::new(eval_id.clone(), coords))
        }),
        None,
        None,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> FrechetSpace {
        FrechetSpace::standard("F")
    }

    #[test]
    fn identity_directional_derivative_is_direction() {
        let s = space();
        let m = McMap::identity(s.clone());
        let p = s.vector(vec![0.5, -0.25]);
        let h = s.vector(vec![1.0, 2.0, -0.5]);
        let d = m.directional_derivative(&p, &h).unwrap();
        assert!(d.value.sub(&h).sup_coord() < 1e-10);
        assert!(d.error_indicator < 1e-10);
    }

    #[test]
    fn zero_direction_gives_zero() {
        let s = space();
        let m = McMap::identity(s.clone());
        let d = m.directional_derivative(&s.zero(), &s.zero()).unwrap();
        assert!(d.value.is_zero());
        assert_eq!(d.error_indicator, 0.0);
    }

    #[test]
    fn square_first_directional_derivative_frozen() {
        let s = space();
        let m = square_first(&s);
        // D at p = (1,1) along e1 is (2 x1 h1, 0) = (2, 0).
        let d = m
            .directional_derivative(&s.vector(vec![1.0, 1.0]), &s.basis(1, 1.0))
            .unwrap();
        assert!((d.value.coord(1) - 2.0).abs() < 1e-8);
        assert!(d.value.coord(2).abs() < 1e-10);
    }

    #[test]
    fn fd_jacobian_matches_analytic() {
        let s = space();
        let mut rng = crate::sampling::rng_for(31, 0);
        for m in [square_first(&s), sin_first(&s)] {
            for _ in 0..25 {
                let p = crate::sampling::dyadic_vector(&s, 4, &mut rng);
                let fd = m.fd_jacobian(&p, 4).unwrap();
                let an = m.jacobian(&p).unwrap();
                for j in 1..=4usize {
                    let e = s.basis(j, 1.0);
                    let diff = fd.apply(&e).unwrap().sub(&an.apply(&e).unwrap());
                    assert!(diff.sup_coord() < 1e-8, "column {j}: {:?}", diff.coords());
                }
            }
        }
    }

    #[test]
    fn composition_chain_rule_agrees_with_fd() {
        let s = space();
        let comp = McMap::compose(&square_first(&s), &sin_first(&s)).unwrap();
        assert!(comp.has_analytic_jacobian());
        let mut rng = crate::sampling::rng_for(32, 0);
        for _ in 0..20 {
            let p = crate::sampling::dyadic_vector(&s, 4, &mut rng);
            let analytic = comp.jacobian(&p).unwrap();
            let fd = comp.fd_jacobian(&p, 4).unwrap();
            for j in 1..=4usize {
                let e = s.basis(j, 1.0);
                let diff = analytic.apply(&e).unwrap().sub(&fd.apply(&e).unwrap());
                assert!(diff.sup_coord() < 1e-7);
            }
        }
    }

    #[test]
    fn second_derivative_symmetry_and_values() {
        let s = space();
        let m = square_first(&s);
        let p = s.vector(vec![1.0]);
        let e1 = s.basis(1, 1.0);
        // Analytic: D^2(e1, e1) = (2, 0, ...).
        let analytic = m.second_at(&p).unwrap().eval(&[e1.clone(), e1.clone()]).unwrap();
        assert_eq!(analytic, s.vector(vec![2.0]));
        // Nested FD agrees and is symmetric.
        let fd = m.fd_second_directional(&p, &e1, &e1).unwrap();
        assert!((fd.value.coord(1) - 2.0).abs() < 1e-6);
        let h = s.vector(vec![0.5, 1.0]);
        let g = s.vector(vec![-0.25, 2.0]);
        let hg = m.fd_second_directional(&p, &h, &g).unwrap().value;
        let gh = m.fd_second_directional(&p, &g, &h).unwrap().value;
        assert!(hg.sub(&gh).sup_coord() < 1e-6);
    }

    #[test]
    fn composition_second_derivative_matches_fd() {
        let s = space();
        let comp = McMap::compose(&square_first(&s), &sin_first(&s)).unwrap();
        assert!(comp.has_analytic_second());
        let p = s.vector(vec![0.5, 0.25]);
        let h = s.basis(1, 1.0);
        let analytic = comp.second_at(&p).unwrap().eval(&[h.clone(), h.clone()]).unwrap();
        let fd = comp.fd_second_directional(&p, &h, &h).unwrap().value;
        assert!(analytic.sub(&fd).sup_coord() < 1e-5, "{analytic:?} vs {fd:?}");
    }

    #[test]
    fn affine_map_has_exact_jacobian() {
        let s = space();
        let rep = LinearMapRep::scalar(s.id().clone(), 2.0);
        let m = McMap::affine(s.clone(), s.clone(), rep, s.basis(2, 1.0));
        let p = s.vector(vec![0.5]);
        assert_eq!(m.eval(&p).unwrap(), s.vector(vec![1.0, 1.0]));
        let d = m.directional_derivative(&p, &s.basis(1, 1.0)).unwrap();
        assert!((d.value.coord(1) - 2.0).abs() < 1e-10);
    }

    #[test]
    fn metric_ball_domain_is_enforced() {
        let s = space();
        let dom = DomainSpec::MetricBall { center: s.zero(), radius: 0.1 };
        let m = McMap::identity(s.clone()).restricted(dom);
        assert!(m.eval(&s.vector(vec![0.125])).is_ok());
        assert!(matches!(
            m.eval(&s.vector(vec![5.0])),
            Err(Error::OutsideDomain(_))
        ));
    }

    #[test]
    fn numeric_inverse_roundtrips_cubic() {
        let s = space();
        let fwd = cubic_plus_linear(&s);
        let inv = McMap::numeric_inverse_1d(&fwd, -4.0, 4.0).unwrap();
        for y1 in [-10.0, -1.0, 0.0, 0.5, 2.0, 10.0] {
            let y = s.basis(1, y1);
            let x = inv.eval(&y).unwrap();
            let back = fwd.eval(&x).unwrap();
            assert!((back.coord(1) - y1).abs() < 1e-11, "y1 = {y1}");
        }
    }

    #[test]
    fn numeric_inverse_derivatives_from_implicit_function_theorem() {
        let s = space();
        let fwd = cubic_plus_linear(&s);
        let inv = McMap::numeric_inverse_1d(&fwd, -4.0, 4.0).unwrap();
        let y = s.basis(1, 2.0);
        // Analytic inverse jacobian vs its own finite differences.
        let an = inv.jacobian(&y).unwrap().apply(&s.basis(1, 1.0)).unwrap();
        let fd = inv.directional_derivative(&y, &s.basis(1, 1.0)).unwrap();
        assert!((an.coord(1) - fd.value.coord(1)).abs() < 1e-8);
        let an2 = inv
            .second_at(&y)
            .unwrap()
            .eval(&[s.basis(1, 1.0), s.basis(1, 1.0)])
            .unwrap();
        let fd2 = inv
            .fd_second_directional(&y, &s.basis(1, 1.0), &s.basis(1, 1.0))
            .unwrap();
        assert!((an2.coord(1) - fd2.value.coord(1)).abs() < 1e-5);
    }

    #[test]
    fn numeric_inverse_rejects_out_of_range_targets() {
        let s = space();
        let fwd = cubic_plus_linear(&s);
        let inv = McMap::numeric_inverse_1d(&fwd, -1.0, 1.0).unwrap();
        assert!(matches!(
            inv.eval(&s.basis(1, 100.0)),
            Err(Error::OutsideDomain(_))
        ));
    }

    #[test]
    fn smoothness_probe_settles_for_smooth_maps() {
        let s = space();
        let m = sin_first(&s);
        let points = vec![s.zero(), s.vector(vec![0.25]), s.vector(vec![-0.5, 1.0])];
        let report = mc_smoothness_probe(&m, &points, &s.basis(1, 1.0), 2).unwrap();
        assert!(report.consistent, "{report:?}");
    }

    #[test]
    fn smoothness_probe_flags_kink_at_second_order() {
        let s = space();
        let m = abs_square_first(&s).with_smoothness(2);
        let report = mc_smoothness_probe(&m, &[s.zero()], &s.basis(1, 1.0), 2).unwrap();
        let order1 = report.probed_orders.iter().find(|o| o.order == 1).unwrap();
        assert!(order1.settled, "|x|x is continuously differentiable: {order1:?}");
        let order2 = report.probed_orders.iter().find(|o| o.order == 2).unwrap();
        assert!(!order2.settled, "{order2:?}");
    }

    #[test]
    fn catalog_standard_registers_and_serves() {
        let s = space();
        let cat = Catalog::standard(&s).unwrap();
        assert!(cat.get("square_first").is_ok());
        assert!(cat.get("missing").is_err());
        let names: Vec<_> = cat.names().collect();
        assert!(names.contains(&"cubic_plus_linear"));
    }

    #[test]
    fn catalog_rejects_kinked_second_order_claim() {
        let s = space();
        let mut cat = Catalog::new();
        let err = cat.insert("kink", abs_square_first(&s).with_smoothness(2));
        assert!(matches!(err, Err(Error::Rejected(_))), "{err:?}");
        // The same map declared with its honest order registers fine.
        cat.insert("kink", abs_square_first(&s)).unwrap();
    }

    #[test]
    fn catalog_rejects_duplicate_names() {
        let s = space();
        let mut cat = Catalog::new();
        cat.insert("m", McMap::identity(s.clone())).unwrap();
        assert!(cat.insert("m", McMap::identity(s)).is_err());
    }
}
