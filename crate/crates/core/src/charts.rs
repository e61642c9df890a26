//! Charts, atlases, transition maps, and first/second order jets.
//!
//! A chart carries a forward/inverse map pair on the model space; an atlas
//! collects charts plus declared overlap regions. Jets are stored in
//! chart-local coordinates: a 1-jet is `(x, v)`, a 2-jet `(x, v, w)`,
//! transforming under a chart change `Θ` by
//!
//! ```text
//! (x, v)    ->  (Θx, DΘ·v)
//! (x, v, w) ->  (Θx, DΘ·v, D²Θ(v,v) + DΘ·w)
//! ```
//!
//! The quadratic term is the reason second-order data does not form a vector
//! bundle without extra structure; [`jet2_additivity_defect`] exhibits the
//! failure concretely, and the connections module removes it.

use serde::Serialize;

use crate::calculus::{DomainSpec, McMap};
use crate::error::{Error, Result};
use crate::sampling;
use crate::space::{FrechetSpace, GradedVector};

/// Tolerance for the chart roundtrip check `inverse(forward(p)) = p`.
pub const CHART_ROUNDTRIP_TOLERANCE: f64 = 1e-10;

/// Default target for transition-cocycle residuals.
pub const COCYCLE_TOLERANCE: f64 = 1e-9;

/// A coordinate chart: a forward/inverse pair of maps on the model space.
#[derive(Clone, Debug)]
pub struct Chart {
    label: String,
    space: FrechetSpace,
    forward: McMap,
    inverse: McMap,
}

impl Chart {
    /// Builds a chart, spot-checking `inverse∘forward = id` on `samples`
    /// points of the forward domain (0 samples trusts the caller).
    pub fn new(
        label: impl Into<String>,
        space: &FrechetSpace,
        forward: McMap,
        inverse: McMap,
        samples: usize,
        seed: u64,
    ) -> Result<Self> {
        let label = label.into();
        for (role, map) in [("forward", &forward), ("inverse", &inverse)] {
            for side in [map.space_in(), map.space_out()] {
                if side.id() != space.id() {
                    return Err(Error::SpaceMismatch {
                        expected: space.id().clone(),
                        got: side.id().clone(),
                    });
                }
            }
            let _ = role;
        }
        let chart = Chart { label, space: space.clone(), forward, inverse };
        let mut rng = sampling::rng_for(seed, 0xC4A7);
        let mut checked = 0;
        let mut attempts = 0;
        while checked < samples && attempts < samples * 20 {
            attempts += 1;
            let p = chart.sample_domain_point(&mut rng);
            let Ok(x) = chart.forward.eval(&p) else { continue };
            let Ok(back) = chart.inverse.eval(&x) else { continue };
            let err = chart.space.distance(&back, &p)?;
            if err > CHART_ROUNDTRIP_TOLERANCE {
                return Err(Error::Rejected(format!(
                    "chart `{}`: inverse(forward(p)) differs from p by {err:.3e} at {:?}",
                    chart.label,
                    p.coords()
                )));
            }
            checked += 1;
        }
        if samples > 0 && checked == 0 {
            return Err(Error::InvalidInput(format!(
                "chart `{}`: could not sample any point of the forward domain",
                chart.label
            )));
        }
        Ok(chart)
    }

    fn sample_domain_point(&self, rng: &mut rand_chacha::ChaCha8Rng) -> GradedVector {
        let dim = self.forward.dim_in().max(1);
        match self.forward.domain() {
            DomainSpec::All => {
                let v = sampling::dyadic_vector(&self.space, dim, rng);
                v.scale(0.25)
            }
            DomainSpec::MetricBall { center, radius } => {
                sampling::vector_in_ball(&self.space, center, *radius, dim, rng)
            }
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn space(&self) -> &FrechetSpace {
        &self.space
    }

    pub fn forward(&self) -> &McMap {
        &self.forward
    }

    pub fn inverse(&self) -> &McMap {
        &self.inverse
    }
}

/// A declared overlap between two charts, one region per coordinate system.
#[derive(Clone, Debug)]
pub struct OverlapDecl {
    pub chart_a: String,
    pub chart_b: String,
    /// Overlap region in chart-a coordinates.
    pub region_a: DomainSpec,
    /// The same overlap in chart-b coordinates.
    pub region_b: DomainSpec,
}

/// An immutable collection of charts with declared overlaps.
#[derive(Clone, Debug)]
pub struct Atlas {
    charts: Vec<Chart>,
    overlaps: Vec<OverlapDecl>,
}

impl Atlas {
    pub fn new(charts: Vec<Chart>, overlaps: Vec<OverlapDecl>) -> Result<Self> {
        if charts.is_empty() {
            return Err(Error::InvalidInput("an atlas needs at least one chart".into()));
        }
        for (i, c) in charts.iter().enumerate() {
            if charts[..i].iter().any(|d| d.label == c.label) {
                return Err(Error::InvalidInput(format!(
                    "duplicate chart label `{}`",
                    c.label
                )));
            }
            if c.space.id() != charts[0].space.id() {
                return Err(Error::SpaceMismatch {
                    expected: charts[0].space.id().clone(),
                    got: c.space.id().clone(),
                });
            }
        }
        let atlas = Atlas { charts, overlaps };
        for o in &atlas.overlaps {
            atlas.chart(&o.chart_a)?;
            atlas.chart(&o.chart_b)?;
        }
        Ok(atlas)
    }

    pub fn chart(&self, label: &str) -> Result<&Chart> {
        self.charts
            .iter()
            .find(|c| c.label == label)
            .ok_or_else(|| Error::InvalidInput(format!("no chart labeled `{label}`")))
    }

    pub fn charts(&self) -> &[Chart] {
        &self.charts
    }

    pub fn overlaps(&self) -> &[OverlapDecl] {
        &self.overlaps
    }

    /// The declared overlap region expressed in `label`'s coordinates, for
    /// the overlap between `label` and `other`.
    pub fn overlap_region(&self, label: &str, other: &str) -> Option<&DomainSpec> {
        self.overlaps.iter().find_map(|o| {
            if o.chart_a == label && o.chart_b == other {
                Some(&o.region_a)
            } else if o.chart_b == label && o.chart_a == other {
                Some(&o.region_b)
            } else {
                None
            }
        })
    }

    /// The transition map taking `from`-coordinates to `to`-coordinates,
    /// `Θ = φ_to ∘ φ_from⁻¹`, restricted to the declared overlap.
    pub fn transition(&self, to: &str, from: &str) -> Result<McMap> {
        let chart_from = self.chart(from)?;
        if to == from {
            return Ok(McMap::identity(chart_from.space.clone())
                .restricted(chart_from.forward.domain().clone()));
        }
        let chart_to = self.chart(to)?;
        let region = self.overlap_region(from, to).ok_or_else(|| {
            Error::OutsideDomain(format!("charts `{to}` and `{from}` have no declared overlap"))
        })?;
        let composed = McMap::compose(&chart_to.forward, &chart_from.inverse)?;
        Ok(composed.restricted(region.clone()))
    }

    /// Samples a point of the overlap region of `label` (the side shared
    /// with `other`).
    fn sample_overlap_point(
        &self,
        label: &str,
        other: &str,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Result<GradedVector> {
        let region = self.overlap_region(label, other).ok_or_else(|| {
            Error::OutsideDomain(format!(
                "charts `{label}` and `{other}` have no declared overlap"
            ))
        })?;
        let space = &self.chart(label)?.space;
        Ok(match region {
            DomainSpec::All => sampling::dyadic_vector(space, 1, rng).scale(0.25),
            DomainSpec::MetricBall { center, radius } => {
                sampling::vector_in_ball(space, center, *radius, 1, rng)
            }
        })
    }

    /// Transports a 1-jet into the coordinates of chart `to`.
    pub fn transport_jet1(&self, j: &Jet1, to: &str) -> Result<Jet1> {
        let theta = self.transition(to, &j.chart)?;
        let mut out = tangent_map(&theta, j)?;
        out.chart = to.to_owned();
        Ok(out)
    }

    /// Transports a 2-jet into the coordinates of chart `to`.
    pub fn transport_jet2(&self, j: &Jet2, to: &str) -> Result<Jet2> {
        let theta = self.transition(to, &j.chart)?;
        let mut out = jet2_transition(&theta, j)?;
        out.chart = to.to_owned();
        Ok(out)
    }

    /// Checks that each declared overlap's transitions are mutually inverse
    /// on sampled points.
    pub fn check_overlaps(&self, samples: usize, seed: u64, tol: f64) -> Result<()> {
        let mut rng = sampling::rng_for(seed, 0x07E1);
        for o in &self.overlaps {
            let fwd = self.transition(&o.chart_b, &o.chart_a)?;
            let back = self.transition(&o.chart_a, &o.chart_b)?;
            let space = &self.chart(&o.chart_a)?.space;
            let mut checked = 0;
            let mut attempts = 0;
            while checked < samples && attempts < samples * 20 {
                attempts += 1;
                let x = self.sample_overlap_point(&o.chart_a, &o.chart_b, &mut rng)?;
                let Ok(y) = fwd.eval(&x) else { continue };
                let Ok(x2) = back.eval(&y) else { continue };
                let err = space.distance(&x2, &x)?;
                if err > tol {
                    return Err(Error::Rejected(format!(
                        "overlap `{}`/`{}`: transitions are not mutually inverse \
                         (residual {err:.3e} at {:?})",
                        o.chart_a,
                        o.chart_b,
                        x.coords()
                    )));
                }
                checked += 1;
            }
            if samples > 0 && checked == 0 {
                return Err(Error::InvalidInput(format!(
                    "overlap `{}`/`{}`: no sample survived both transitions",
                    o.chart_a, o.chart_b
                )));
            }
        }
        Ok(())
    }
}

/// A first-order jet in chart-local coordinates: base point and velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet1 {
    pub chart: String,
    pub x: GradedVector,
    pub v: GradedVector,
}

impl Jet1 {
    pub fn new(chart: impl Into<String>, x: GradedVector, v: GradedVector) -> Result<Self> {
        if x.space() != v.space() {
            return Err(Error::SpaceMismatch {
                expected: x.space().clone(),
                got: v.space().clone(),
            });
        }
        Ok(Jet1 { chart: chart.into(), x, v })
    }
}

/// A second-order jet: base point, velocity, and acceleration coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet2 {
    pub chart: String,
    pub x: GradedVector,
    pub v: GradedVector,
    pub w: GradedVector,
}

/// A point of the double tangent space in chart coordinates
/// `(x, v_base, v_fiber, w)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SecondTangentPoint {
    pub chart: String,
    pub x: GradedVector,
    pub v_base: GradedVector,
    pub v_fiber: GradedVector,
    pub w: GradedVector,
}

impl SecondTangentPoint {
    /// Whether the two middle components agree, i.e. the point lies on the
    /// image of second-order jets inside the double tangent space (the
    /// condition that projecting the fiber equals the tangent of the base
    /// projection).
    pub fn is_holonomic(&self) -> bool {
        self.v_base == self.v_fiber
    }
}

impl Jet2 {
    pub fn new(
        chart: impl Into<String>,
        x: GradedVector,
        v: GradedVector,
        w: GradedVector,
    ) -> Result<Self> {
        for part in [&v, &w] {
            if x.space() != part.space() {
                return Err(Error::SpaceMismatch {
                    expected: x.space().clone(),
                    got: part.space().clone(),
                });
            }
        }
        Ok(Jet2 { chart: chart.into(), x, v, w })
    }

    /// Drops the acceleration: the underlying 1-jet `(x, v)`.
    pub fn to_jet1(&self) -> Jet1 {
        Jet1 { chart: self.chart.clone(), x: self.x.clone(), v: self.v.clone() }
    }

    /// Drops everything but the base point.
    pub fn base(&self) -> &GradedVector {
        &self.x
    }

    /// Embeds the jet into double tangent coordinates `(x, v, v, w)`.
    pub fn embed(&self) -> SecondTangentPoint {
        SecondTangentPoint {
            chart: self.chart.clone(),
            x: self.x.clone(),
            v_base: self.v.clone(),
            v_fiber: self.v.clone(),
            w: self.w.clone(),
        }
    }
}

/// Pushes a 1-jet through a differentiable map: `(x, v) -> (h(x), Dh(x)·v)`.
/// The chart label is preserved; use [`Atlas::transport_jet1`] to relabel
/// across charts.
pub fn tangent_map(h: &McMap, j: &Jet1) -> Result<Jet1> {
    let x = h.eval(&j.x)?;
    let v = h.jacobian(&j.x)?.apply(&j.v)?;
    Ok(Jet1 { chart: j.chart.clone(), x, v })
}

/// Pushes a 2-jet through a chart change:
/// `(x, v, w) -> (Θx, DΘ·v, D²Θ(v,v) + DΘ·w)`.
pub fn jet2_transition(theta: &McMap, j: &Jet2) -> Result<Jet2> {
    let x = theta.eval(&j.x)?;
    let d = theta.jacobian(&j.x)?;
    let v = d.apply(&j.v)?;
    let quad = theta.second_at(&j.x)?.eval(&[j.v.clone(), j.v.clone()])?;
    let w = quad.add(&d.apply(&j.w)?);
    Ok(Jet2 { chart: j.chart.clone(), x, v, w })
}

/// How far the 2-jet transformation is from being fiberwise additive at the
/// shared base point of `a` and `b`: the sup-coordinate gap between
/// transforming `a + b` and summing the transforms. Nonzero whenever
/// `D²Θ(x) ≠ 0`, which is the obstruction to second-order data forming a
/// vector bundle on its own.
pub fn jet2_additivity_defect(theta: &McMap, a: &Jet2, b: &Jet2) -> Result<f64> {
    if a.x != b.x {
        return Err(Error::InvalidInput(
            "additivity defect needs two jets at the same base point".into(),
        ));
    }
    let sum = Jet2 {
        chart: a.chart.clone(),
        x: a.x.clone(),
        v: a.v.add(&b.v),
        w: a.w.add(&b.w),
    };
    let t_sum = jet2_transition(theta, &sum)?;
    let ta = jet2_transition(theta, a)?;
    let tb = jet2_transition(theta, b)?;
    let dv = t_sum.v.sub(&ta.v.add(&tb.v)).sup_coord();
    let dw = t_sum.w.sub(&ta.w.add(&tb.w)).sup_coord();
    Ok(dv.max(dw))
}

/// Result of a transition-cocycle verification over an atlas.
#[derive(Clone, Debug, Serialize)]
pub struct CocycleReport {
    pub triples_checked: usize,
    pub points_checked: usize,
    pub points_skipped: usize,
    pub max_residual: f64,
    pub min_jacobian_pivot: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub violations: Vec<CocycleViolation>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CocycleViolation {
    pub charts: (String, String, String),
    pub point: Vec<f64>,
    pub residual: f64,
}

/// Verifies `Θ_{αγ} = Θ_{αβ} ∘ Θ_{βγ}` on sampled points of every declared
/// triple overlap, and witnesses invertibility of `DΘ_{αγ}` by inverting its
/// truncation-degree matrix at each sample.
pub fn cocycle_check(atlas: &Atlas, samples: usize, seed: u64, tol: f64) -> Result<CocycleReport> {
    let mut report = CocycleReport {
        triples_checked: 0,
        points_checked: 0,
        points_skipped: 0,
        max_residual: 0.0,
        min_jacobian_pivot: f64::INFINITY,
        tolerance: tol,
        pass: true,
        violations: Vec::new(),
    };
    let labels: Vec<String> = atlas.charts().iter().map(|c| c.label.clone()).collect();
    let mut rng = sampling::rng_for(seed, 0xC0C1);

    for a in &labels {
        for b in &labels {
            for g in &labels {
                if a == b || b == g || a == g {
                    continue;
                }
                if atlas.overlap_region(g, a).is_none()
                    || atlas.overlap_region(g, b).is_none()
                    || atlas.overlap_region(b, a).is_none()
                {
                    continue;
                }
                report.triples_checked += 1;
                let t_ag = atlas.transition(a, g)?;
                let t_bg = atlas.transition(b, g)?;
                let t_ab = atlas.transition(a, b)?;
                let space = &atlas.chart(g)?.space;
                let other_region = atlas.overlap_region(g, b).expect("checked above");
                let mut done = 0;
                let mut attempts = 0;
                while done < samples && attempts < samples * 20 {
                    attempts += 1;
                    let x = atlas.sample_overlap_point(g, a, &mut rng)?;
                    if !other_region.contains(space, &x)? {
                        report.points_skipped += 1;
                        continue;
                    }
                    let Ok(direct) = t_ag.eval(&x) else {
                        report.points_skipped += 1;
                        continue;
                    };
                    let Ok(mid) = t_bg.eval(&x) else {
                        report.points_skipped += 1;
                        continue;
                    };
                    let Ok(via) = t_ab.eval(&mid) else {
                        report.points_skipped += 1;
                        continue;
                    };
                    let residual = space.distance(&direct, &via)?;
                    report.max_residual = report.max_residual.max(residual);
                    if residual > tol {
                        report.pass = false;
                        report.violations.push(CocycleViolation {
                            charts: (a.clone(), b.clone(), g.clone()),
                            point: x.coords().to_vec(),
                            residual,
                        });
                    }
                    let m = t_ag.jacobian(&x)?.to_matrix(space.truncation());
                    match m.inverse() {
                        Ok(_) => {
                            report.min_jacobian_pivot =
                                report.min_jacobian_pivot.min(m.min_pivot());
                        }
                        Err(_) => {
                            report.pass = false;
                            report.min_jacobian_pivot = 0.0;
                            report.violations.push(CocycleViolation {
                                charts: (a.clone(), b.clone(), g.clone()),
                                point: x.coords().to_vec(),
                                residual: f64::INFINITY,
                            });
                        }
                    }
                    done += 1;
                }
                report.points_checked += done;
            }
        }
    }
    if report.min_jacobian_pivot == f64::INFINITY {
        report.min_jacobian_pivot = 0.0;
    }
    Ok(report)
}
