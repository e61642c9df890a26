//! Structured linear and multilinear maps with certified norm estimation.
//!
//! Maps are represented structurally ([`LinearMapRep`]) rather than as bare
//! closures so they can be composed, differenced, assembled into matrices,
//! and reported on. The Lipschitz-type operator quantity
//!
//! ```text
//! ||L|| = sup_{x != 0} d(L x, 0) / d(x, 0)
//! ```
//!
//! is generally not computable in closed form because the metric is not
//! homogeneous, so [`lip_norm_estimate`] reports a certified lower bound: the
//! running maximum of probe ratios along a deterministic evaluation sequence.
//! The sequence is a pure function of (seed, probe index) plus the running
//! best witness, which makes the lower bound monotone in the probe budget and
//! exactly reproducible.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::rules::SequenceRule;
use crate::sampling;
use crate::space::{FrechetSpace, GradedVector, SpaceId};

/// Direction of a coordinate shift.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ShiftDirection {
    /// `(x1, x2, ...) -> (x2, x3, ...)`; drops the first coordinate.
    Left,
    /// `(x1, x2, ...) -> (0, x1, x2, ...)`.
    Right,
}

/// A linear map between graded sequence spaces, stored structurally.
#[derive(Clone, Debug)]
pub struct LinearMapRep {
    domain: SpaceId,
    codomain: SpaceId,
    kind: LinearKind,
}

#[derive(Clone, Debug)]
enum LinearKind {
    Zero,
    Identity,
    Scalar(f64),
    /// Coordinate-wise multiplication by a closed-form sequence.
    Diagonal(SequenceRule),
    /// Dense action on the leading `dim` coordinates, zero beyond.
    FiniteMatrix(DenseMatrix),
    Shift(ShiftDirection),
    /// Pointwise sum of maps with identical domain and codomain.
    Sum(Vec<LinearMapRep>),
    /// Composition; `factors[0]` is applied last.
    Composition(Vec<LinearMapRep>),
}

impl LinearMapRep {
    pub fn zero(domain: SpaceId, codomain: SpaceId) -> Self {
        LinearMapRep { domain, codomain, kind: LinearKind::Zero }
    }

    pub fn identity(space: SpaceId) -> Self {
        LinearMapRep { domain: space.clone(), codomain: space, kind: LinearKind::Identity }
    }

    pub fn scalar(space: SpaceId, c: f64) -> Self {
        LinearMapRep { domain: space.clone(), codomain: space, kind: LinearKind::Scalar(c) }
    }

    pub fn diagonal(space: SpaceId, rule: SequenceRule) -> Result<Self> {
        rule.require_finite()?;
        LinearMapRep { domain: space.clone(), codomain: space, kind: LinearKind::Diagonal(rule) }
            .pipe_ok()
    }

    pub fn finite_matrix(domain: SpaceId, codomain: SpaceId, m: DenseMatrix) -> Self {
        LinearMapRep { domain, codomain, kind: LinearKind::FiniteMatrix(m) }
    }

    pub fn shift(space: SpaceId, direction: ShiftDirection) -> Self {
        LinearMapRep { domain: space.clone(), codomain: space, kind: LinearKind::Shift(direction) }
    }

    fn pipe_ok(self) -> Result<Self> {
        Ok(self)
    }

    /// Pointwise sum; all terms must share domain and codomain.
    pub fn sum(terms: Vec<LinearMapRep>) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidInput("sum of zero linear maps".into()))?;
        let (domain, codomain) = (first.domain.clone(), first.codomain.clone());
        for t in &terms {
            if t.domain != domain || t.codomain != codomain {
                return Err(Error::InvalidInput(format!(
                    "sum terms must share spaces; found {} -> {} next to {} -> {}",
                    t.domain, t.codomain, domain, codomain
                )));
            }
        }
        Ok(LinearMapRep { domain, codomain, kind: LinearKind::Sum(terms) })
    }

    /// `outer . inner`: apply `inner` first.
    pub fn compose(outer: LinearMapRep, inner: LinearMapRep) -> Result<Self> {
        if inner.codomain != outer.domain {
            return Err(Error::SpaceMismatch {
                expected: outer.domain.clone(),
                got: inner.codomain.clone(),
            });
        }
        Ok(LinearMapRep {
            domain: inner.domain.clone(),
            codomain: outer.codomain.clone(),
            kind: LinearKind::Composition(vec![outer, inner]),
        })
    }

    /// `-L`, represented as `scalar(-1) . L`.
    pub fn negated(&self) -> Self {
        LinearMapRep {
            domain: self.domain.clone(),
            codomain: self.codomain.clone(),
            kind: LinearKind::Composition(vec![
                LinearMapRep::scalar(self.codomain.clone(), -1.0),
                self.clone(),
            ]),
        }
    }

    /// `L - H`; both maps must share domain and codomain.
    pub fn difference(l: &LinearMapRep, h: &LinearMapRep) -> Result<Self> {
        LinearMapRep::sum(vec![l.clone(), h.negated()])
    }

    pub fn domain(&self) -> &SpaceId {
        &self.domain
    }

    pub fn codomain(&self) -> &SpaceId {
        &self.codomain
    }

    /// Applies the map. The argument must be tagged with the domain space.
    pub fn apply(&self, x: &GradedVector) -> Result<GradedVector> {
        if x.space() != &self.domain {
            return Err(Error::SpaceMismatch {
                expected: self.domain.clone(),
                got: x.space().clone(),
            });
        }
        Ok(self.apply_raw(x))
    }

    fn apply_raw(&self, x: &GradedVector) -> GradedVector {
        match &self.kind {
            LinearKind::Zero => GradedVector::zero(self.codomain.clone()),
            LinearKind::Identity => x.retagged(self.codomain.clone()),
            LinearKind::Scalar(c) => x.scale(*c).retagged(self.codomain.clone()),
            LinearKind::Diagonal(rule) => {
                let coords = (1..=x.deg()).map(|i| rule.eval(i) * x.coord(i)).collect();
                GradedVector::new(self.codomain.clone(), coords)
            }
            LinearKind::FiniteMatrix(m) => {
                let input = x.coords_padded(m.dim());
                GradedVector::new(self.codomain.clone(), m.mul_vec(&input))
            }
            LinearKind::Shift(ShiftDirection::Left) => {
                let coords = x.coords().iter().skip(1).copied().collect();
                GradedVector::new(self.codomain.clone(), coords)
            }
            LinearKind::Shift(ShiftDirection::Right) => {
                let mut coords = Vec::with_capacity(x.deg() + 1);
                coords.push(0.0);
                coords.extend_from_slice(x.coords());
                GradedVector::new(self.codomain.clone(), coords)
            }
            LinearKind::Sum(terms) => {
                let mut acc = GradedVector::zero(self.codomain.clone());
                for t in terms {
                    acc = acc.add(&t.apply_raw(x));
                }
                acc
            }
            LinearKind::Composition(factors) => {
                let mut v = x.clone();
                for f in factors.iter().rev() {
                    v = f.apply_raw(&v);
                }
                v
            }
        }
    }

    /// Assembles the action on the leading `deg` coordinates into a dense
    /// matrix by applying the map to basis vectors. Components the map sends
    /// past index `deg` are truncated away.
    pub fn to_matrix(&self, deg: usize) -> DenseMatrix {
        let mut m = DenseMatrix::zero(deg);
        for j in 1..=deg {
            let col = self.apply_raw(&GradedVector::basis(self.domain.clone(), j, 1.0));
            for i in 1..=deg {
                m.set(i - 1, j - 1, col.coord(i));
            }
        }
        m
    }
}

/// Result of a probe-based operator norm estimation.
///
/// `lower_bound` is certified: it is a ratio actually attained by `witness`.
/// `estimate` adds a small-scale extrapolation and may exceed the true
/// supremum slightly; it is always `>= lower_bound`.
#[derive(Clone, Debug, Serialize)]
pub struct LipNormEstimate {
    pub lower_bound: f64,
    pub estimate: f64,
    pub probes_used: u64,
    pub seed: u64,
    pub witness: Option<GradedVector>,
}

/// Ratio `d(L x, 0) / d(x, 0)` for a single probe; `None` when `x` has norm
/// zero. Recomputing this on a stored witness reproduces the reported lower
/// bound bitwise.
pub fn probe_ratio(
    map: &LinearMapRep,
    domain: &FrechetSpace,
    codomain: &FrechetSpace,
    x: &GradedVector,
) -> Result<Option<f64>> {
    domain.check_member(x)?;
    let den = domain.norm(x)?;
    if den == 0.0 {
        return Ok(None);
    }
    let num = codomain.norm(&map.apply(x)?)?;
    Ok(Some(num / den))
}

/// Basis scales probed first: suprema of the structured map catalog are
/// attained in small- or large-scale limits along basis directions.
const BASIS_SCALE_EXPS: [i32; 15] =
    [-20, -16, -12, -8, -4, -2, -1, 0, 1, 2, 4, 8, 12, 16, 20];

/// Multipliers cycled through when refining around the best witness; all are
/// dyadic so refined probes stay on an exact grid.
const REFINE_MULTIPLIERS: [f64; 6] = [0.5, 2.0, 0.25, 4.0, 0.9375, 1.0625];

fn check_spaces(
    map_domain: &SpaceId,
    map_codomain: &SpaceId,
    domain: &FrechetSpace,
    codomain: &FrechetSpace,
) -> Result<()> {
    if map_domain != domain.id() {
        return Err(Error::SpaceMismatch {
            expected: map_domain.clone(),
            got: domain.id().clone(),
        });
    }
    if map_codomain != codomain.id() {
        return Err(Error::SpaceMismatch {
            expected: map_codomain.clone(),
            got: codomain.id().clone(),
        });
    }
    Ok(())
}

/// Estimates the Lipschitz operator quantity of a linear map by a
/// deterministic probe sequence.
///
/// The sequence first scans basis directions across power-of-two scales
/// (where the suprema of shift, scalar, and diagonal maps live), then
/// alternates seeded random dyadic probes with refinements of the current
/// best witness. Because each probe depends only on the seed and the history,
/// the reported `lower_bound` is non-decreasing in `probe_budget`.
pub fn lip_norm_estimate(
    map: &LinearMapRep,
    domain: &FrechetSpace,
    codomain: &FrechetSpace,
    probe_budget: u64,
    seed: u64,
) -> Result<LipNormEstimate> {
    check_spaces(&map.domain, &map.codomain, domain, codomain)?;
    let mut rng = sampling::rng_for(seed, 0x6c69706e);
    let max_basis = domain.truncation().max(1);

    let mut best = 0.0f64;
    let mut witness: Option<GradedVector> = None;
    let mut probes_used = 0u64;
    let mut extrapolated = 0.0f64;
    // Ratios at the two smallest scales per basis direction, for the
    // small-scale extrapolation refinement of `estimate`.
    let mut small_pair: Vec<(Option<f64>, Option<f64>)> = vec![(None, None); max_basis];

    let consider = |x: GradedVector,
                        best: &mut f64,
                        witness: &mut Option<GradedVector>|
     -> Result<Option<f64>> {
        let r = probe_ratio(map, domain, codomain, &x)?;
        if let Some(r) = r {
            if r > *best {
                *best = r;
                *witness = Some(x);
            }
        }
        Ok(r)
    };

    let phase_a = (max_basis as u64) * (BASIS_SCALE_EXPS.len() as u64);
    let mut refine_cycle = 0usize;
    let mut step = 0u64;
    while probes_used < probe_budget {
        let probe = if step < phase_a {
            let n = (step / BASIS_SCALE_EXPS.len() as u64) as usize + 1;
            let exp = BASIS_SCALE_EXPS[(step % BASIS_SCALE_EXPS.len() as u64) as usize];
            let x = domain.basis(n, (exp as f64).exp2());
            let r = consider(x, &mut best, &mut witness)?;
            if exp == BASIS_SCALE_EXPS[0] {
                small_pair[n - 1].0 = r;
            } else if exp == BASIS_SCALE_EXPS[1] {
                small_pair[n - 1].1 = r;
            }
            probes_used += 1;
            step += 1;
            continue;
        } else if step.is_multiple_of(2) || witness.is_none() {
            let v = sampling::dyadic_vector(domain, max_basis, &mut rng);
            v.scale(sampling::pow2_scale(&mut rng, -20, 20))
        } else {
            let w = witness.clone().expect("witness exists in refine branch");
            let probe = if refine_cycle < REFINE_MULTIPLIERS.len() {
                w.scale(REFINE_MULTIPLIERS[refine_cycle])
            } else {
                let jitter = sampling::dyadic_vector(domain, max_basis, &mut rng)
                    .scale(w.sup_coord() * (2.0f64).powi(-8));
                w.add(&jitter)
            };
            refine_cycle = (refine_cycle + 1) % (REFINE_MULTIPLIERS.len() + 2);
            probe
        };
        consider(probe, &mut best, &mut witness)?;
        probes_used += 1;
        step += 1;
    }

    for (r_small, r_next) in small_pair {
        if let (Some(a), Some(b)) = (r_small, r_next) {
            if a > b {
                extrapolated = extrapolated.max(a + (a - b));
            }
        }
    }

    Ok(LipNormEstimate {
        lower_bound: best,
        estimate: best.max(extrapolated),
        probes_used,
        seed,
        witness,
    })
}

/// Probe-based distance between linear maps:
/// the operator quantity of `L - H`.
///
/// Translation by a common third map leaves the difference unchanged, so
/// this quantity is invariant under `(L, H) -> (L + G, H + G)`.
pub fn op_metric(
    l: &LinearMapRep,
    h: &LinearMapRep,
    domain: &FrechetSpace,
    codomain: &FrechetSpace,
    probe_budget: u64,
    seed: u64,
) -> Result<LipNormEstimate> {
    let diff = LinearMapRep::difference(l, h)?;
    lip_norm_estimate(&diff, domain, codomain, probe_budget, seed)
}

/// How the arguments of a multilinear map are grouped for bookkeeping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Grouping {
    /// All arguments at once: `B(f1, ..., fk)`.
    Flat,
    /// Leading argument split off: `f1 -> B(f1)(f2, ..., fk)`.
    Curried,
}

/// Evaluation kernel of a multilinear map.
/// Evaluation closure backing a [`MultilinearMapRep`].
pub type MultiFn = Arc<dyn Fn(&[GradedVector]) -> Result<GradedVector> + Send + Sync>;

#[derive(Clone)]
enum MultiKernel {
    /// Dense order-3 coefficient array for arity 2:
    /// `out_m = sum_{i,j} c[m][i][j] u_i v_j`.
    Bilinear(Arc<BilinearTensor>),
    /// Arbitrary evaluation closure (must be multilinear; probed by tests).
    Func(MultiFn),
}

/// Coefficients of a truncated bilinear map.
#[derive(Clone, Debug)]
pub struct BilinearTensor {
    in_dim: usize,
    out_dim: usize,
    /// `coeffs[m][i][j]` flattened row-major: index `((m * in_dim) + i) * in_dim + j`.
    coeffs: Vec<f64>,
}

impl BilinearTensor {
    pub fn new(in_dim: usize, out_dim: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != in_dim * in_dim * out_dim {
            return Err(Error::InvalidInput(format!(
                "bilinear tensor needs {} coefficients, got {}",
                in_dim * in_dim * out_dim,
                coeffs.len()
            )));
        }
        Ok(BilinearTensor { in_dim, out_dim, coeffs })
    }

    pub fn coeff(&self, m: usize, i: usize, j: usize) -> f64 {
        self.coeffs[(m * self.in_dim + i) * self.in_dim + j]
    }

    fn eval(&self, u: &GradedVector, v: &GradedVector, codomain: SpaceId) -> GradedVector {
        let mut out = vec![0.0; self.out_dim];
        for (m, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in 0..self.in_dim {
                let ui = u.coord(i + 1);
                if ui == 0.0 {
                    continue;
                }
                for j in 0..self.in_dim {
                    acc += self.coeff(m, i, j) * ui * v.coord(j + 1);
                }
            }
            *slot = acc;
        }
        GradedVector::new(codomain, out)
    }
}

/// A multilinear map with slot-permutation and currying bookkeeping.
///
/// Permutation and grouping only relabel how arguments are fed to the
/// kernel; evaluation takes the identical floating-point path, so norm
/// witnesses and probe ratios transfer bitwise between a map, its curried
/// form, and its slot permutations.
#[derive(Clone)]
pub struct MultilinearMapRep {
    arity: usize,
    domains: Vec<SpaceId>,
    codomain: SpaceId,
    kernel: MultiKernel,
    /// Kernel argument `j` reads public slot `slot_of_kernel[j]`.
    slot_of_kernel: Vec<usize>,
    grouping: Grouping,
}

impl std::fmt::Debug for MultilinearMapRep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MultilinearMapRep")
            .field("arity", &self.arity)
            .field("domains", &self.domains)
            .field("codomain", &self.codomain)
            .field("slot_of_kernel", &self.slot_of_kernel)
            .field("grouping", &self.grouping)
            .finish_non_exhaustive()
    }
}

impl MultilinearMapRep {
    /// Wraps an evaluation closure. The closure must be linear in each slot;
    /// this is not checked here (construction-time probes live with the
    /// callers that build these from user input).
    pub fn from_fn(
        domains: Vec<SpaceId>,
        codomain: SpaceId,
        f: MultiFn,
    ) -> Result<Self> {
        let arity = domains.len();
        if arity == 0 {
            return Err(Error::InvalidInput("multilinear maps need arity >= 1".into()));
        }
        Ok(MultilinearMapRep {
            arity,
            domains,
            codomain,
            kernel: MultiKernel::Func(f),
            slot_of_kernel: (0..arity).collect(),
            grouping: Grouping::Flat,
        })
    }

    /// A bilinear map given by a dense coefficient tensor.
    pub fn bilinear(domain: SpaceId, codomain: SpaceId, tensor: BilinearTensor) -> Self {
        MultilinearMapRep {
            arity: 2,
            domains: vec![domain.clone(), domain],
            codomain,
            kernel: MultiKernel::Bilinear(Arc::new(tensor)),
            slot_of_kernel: vec![0, 1],
            grouping: Grouping::Flat,
        }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn domains(&self) -> &[SpaceId] {
        &self.domains
    }

    pub fn codomain(&self) -> &SpaceId {
        &self.codomain
    }

    pub fn grouping(&self) -> Grouping {
        self.grouping
    }

    /// Evaluates on a full argument tuple.
    pub fn eval(&self, args: &[GradedVector]) -> Result<GradedVector> {
        if args.len() != self.arity {
            return Err(Error::InvalidInput(format!(
                "arity mismatch: map takes {} arguments, got {}",
                self.arity,
                args.len()
            )));
        }
        for (i, arg) in args.iter().enumerate() {
            if arg.space() != &self.domains[i] {
                return Err(Error::SpaceMismatch {
                    expected: self.domains[i].clone(),
                    got: arg.space().clone(),
                });
            }
        }
        let kernel_args: Vec<GradedVector> =
            self.slot_of_kernel.iter().map(|&s| args[s].clone()).collect();
        match &self.kernel {
            MultiKernel::Bilinear(t) => {
                Ok(t.eval(&kernel_args[0], &kernel_args[1], self.codomain.clone()))
            }
            MultiKernel::Func(f) => {
                let out = f(&kernel_args)?;
                if out.space() != &self.codomain {
                    return Err(Error::SpaceMismatch {
                        expected: self.codomain.clone(),
                        got: out.space().clone(),
                    });
                }
                Ok(out)
            }
        }
    }

    /// Marks the leading slot as split off: `f1 -> B(f1)(rest)`.
    /// Purely bookkeeping; evaluation is unchanged.
    pub fn curry(&self) -> Result<Self> {
        if self.arity < 2 {
            return Err(Error::InvalidInput(
                "currying needs arity >= 2; arity-1 maps have no remaining slots".into(),
            ));
        }
        let mut out = self.clone();
        out.grouping = Grouping::Curried;
        Ok(out)
    }

    /// Restores flat grouping.
    pub fn uncurry(&self) -> Self {
        let mut out = self.clone();
        out.grouping = Grouping::Flat;
        out
    }

    /// Reorders public slots: new slot `i` is old slot `perm[i]`.
    pub fn permute_slots(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.arity {
            return Err(Error::InvalidInput(format!(
                "permutation length {} does not match arity {}",
                perm.len(),
                self.arity
            )));
        }
        let mut seen = vec![false; self.arity];
        for &p in perm {
            if p >= self.arity || seen[p] {
                return Err(Error::InvalidInput(format!(
                    "invalid slot permutation {perm:?}"
                )));
            }
            seen[p] = true;
        }
        // inverse[old_slot] = new_slot
        let mut inverse = vec![0usize; self.arity];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let mut out = self.clone();
        out.domains = perm.iter().map(|&p| self.domains[p].clone()).collect();
        out.slot_of_kernel = self.slot_of_kernel.iter().map(|&s| inverse[s]).collect();
        Ok(out)
    }
}

/// Result of a multilinear norm probe.
#[derive(Clone, Debug, Serialize)]
pub struct MultiNormEstimate {
    pub lower_bound: f64,
    pub probes_used: u64,
    pub seed: u64,
    pub witness: Option<Vec<GradedVector>>,
}

/// Ratio `d(B(args), 0) / prod_i d(args_i, 0)`; `None` if any factor has
/// norm zero.
pub fn multi_probe_ratio(
    map: &MultilinearMapRep,
    domains: &[&FrechetSpace],
    codomain: &FrechetSpace,
    args: &[GradedVector],
) -> Result<Option<f64>> {
    let mut den = 1.0f64;
    for (space, arg) in domains.iter().zip(args) {
        let n = space.norm(arg)?;
        if n == 0.0 {
            return Ok(None);
        }
        den *= n;
    }
    let num = codomain.norm(&map.eval(args)?)?;
    Ok(Some(num / den))
}

/// Deterministic probe-based lower bound for the multilinear Lipschitz-type
/// norm; same monotone prefix structure as [`lip_norm_estimate`].
pub fn multilinear_norm_estimate(
    map: &MultilinearMapRep,
    domains: &[&FrechetSpace],
    codomain: &FrechetSpace,
    probe_budget: u64,
    seed: u64,
) -> Result<MultiNormEstimate> {
    if domains.len() != map.arity {
        return Err(Error::InvalidInput(format!(
            "need {} domain spaces, got {}",
            map.arity,
            domains.len()
        )));
    }
    for (space, id) in domains.iter().zip(&map.domains) {
        if space.id() != id {
            return Err(Error::SpaceMismatch { expected: id.clone(), got: space.id().clone() });
        }
    }
    if codomain.id() != &map.codomain {
        return Err(Error::SpaceMismatch {
            expected: map.codomain.clone(),
            got: codomain.id().clone(),
        });
    }

    let mut rng = sampling::rng_for(seed, 0x6d756c74);
    let arity = map.arity;
    let basis = domains
        .iter()
        .map(|s| s.truncation().clamp(1, 6))
        .collect::<Vec<_>>();
    let tuple_count: u64 = basis.iter().map(|&b| b as u64).product();
    let scales: [i32; 7] = [-12, -8, -4, 0, 4, 8, 12];
    let phase_a = tuple_count * scales.len() as u64;

    let mut best = 0.0f64;
    let mut witness: Option<Vec<GradedVector>> = None;
    let mut probes_used = 0u64;
    let mut refine_cycle = 0usize;
    let mut step = 0u64;

    while probes_used < probe_budget {
        let args: Vec<GradedVector> = if step < phase_a {
            let scale_idx = (step % scales.len() as u64) as usize;
            let mut t = step / scales.len() as u64;
            let s = (scales[scale_idx] as f64).exp2();
            let mut tuple = Vec::with_capacity(arity);
            for (slot, &b) in basis.iter().enumerate() {
                let idx = (t % b as u64) as usize + 1;
                t /= b as u64;
                tuple.push(domains[slot].basis(idx, s));
            }
            tuple
        } else if step.is_multiple_of(2) || witness.is_none() {
            domains
                .iter()
                .map(|space| {
                    sampling::dyadic_vector(space, space.truncation(), &mut rng)
                        .scale(sampling::pow2_scale(&mut rng, -12, 12))
                })
                .collect()
        } else {
            let w = witness.clone().expect("witness exists in refine branch");
            let slot = refine_cycle % arity;
            let mult = REFINE_MULTIPLIERS[(refine_cycle / arity) % REFINE_MULTIPLIERS.len()];
            refine_cycle += 1;
            let mut tuple = w;
            tuple[slot] = tuple[slot].scale(mult);
            tuple
        };
        if let Some(r) = multi_probe_ratio(map, domains, codomain, &args)? {
            if r > best {
                best = r;
                witness = Some(args);
            }
        }
        probes_used += 1;
        step += 1;
    }

    Ok(MultiNormEstimate { lower_bound: best, probes_used, seed, witness })
}
