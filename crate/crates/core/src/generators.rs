//! Constraint-sequence generators and condition checkers.
//!
//! Streams are generated counter-style: the function emitted at round τ is a
//! pure hash of `(seed, τ, stream, channel)`, so rounds can be regenerated
//! out of order and runs are reproducible bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BoxDomain, ScalarFunc};
use crate::penalty::{GridPoints, PenaltyState};

// ---------------------------------------------------------------------------
// Seeded hashing
// ---------------------------------------------------------------------------

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based stream value for `(seed, tau, stream, channel)`.
pub fn stream_u64(seed: u64, tau: u64, stream: u64, channel: u64) -> u64 {
    let mut h = splitmix64(seed ^ 0x243f_6a88_85a3_08d3);
    h = splitmix64(h ^ tau);
    h = splitmix64(h ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    splitmix64(h ^ channel)
}

/// Uniform draw in `[0, 1)` from the counter stream.
pub fn stream_unit(seed: u64, tau: u64, stream: u64, channel: u64) -> f64 {
    (stream_u64(seed, tau, stream, channel) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

// ---------------------------------------------------------------------------
// Stream specifications
// ---------------------------------------------------------------------------

fn default_scale() -> f64 {
    0.1
}

/// How a family member is selected each round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyLaw {
    /// Independent draw with fixed probabilities per member.
    Iid { probs: Vec<f64> },
    /// Member `k ≥ 1` is emitted at multiples of `periods[k-1]` (smallest k
    /// wins a conflict); member 0 fills every other round.
    Periodic { periods: Vec<u64> },
    /// Two-member family; the second member is drawn with probability
    /// `min{1, scale·c/τ^(1-c)}`.
    ActivationRate {
        c: f64,
        #[serde(default = "default_scale")]
        scale: f64,
    },
}

/// Offset sequence for perturbed streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OffsetLaw {
    Zero,
    Constant {
        value: f64,
    },
    /// Independent uniform draws on `[lo, hi]`.
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// `b_τ = scale/√τ`.
    InverseSqrt {
        scale: f64,
    },
}

impl OffsetLaw {
    pub fn offset(&self, tau: u64, seed: u64, stream: u64) -> f64 {
        match self {
            OffsetLaw::Zero => 0.0,
            OffsetLaw::Constant { value } => *value,
            OffsetLaw::Uniform { lo, hi } => lo + (hi - lo) * stream_unit(seed, tau, stream, 1),
            OffsetLaw::InverseSqrt { scale } => scale / (tau as f64).sqrt(),
        }
    }
}

/// One constraint stream: g_τ^{(j)} for a fixed j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum StreamSpec {
    /// Constraints chosen from a finite family.
    Family {
        members: Vec<ScalarFunc>,
        law: FamilyLaw,
        /// Declared limit frequencies (used by the condition checker when
        /// present).
        #[serde(default)]
        limit_probs: Option<Vec<f64>>,
    },
    /// `g_τ = base + b_τ` with offsets bounded above by `upper_bound`.
    Perturbed {
        base: ScalarFunc,
        offsets: OffsetLaw,
        upper_bound: f64,
    },
}

impl StreamSpec {
    /// Single time-invariant constraint.
    pub fn time_invariant(g: ScalarFunc) -> Self {
        StreamSpec::Family {
            members: vec![g],
            law: FamilyLaw::Iid { probs: vec![1.0] },
            limit_probs: None,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            StreamSpec::Family {
                members,
                law,
                limit_probs,
            } => {
                if members.is_empty() {
                    return Err(Error::InvalidSpec("family has no members".into()));
                }
                members.iter().try_for_each(|f| f.validate(dim))?;
                match law {
                    FamilyLaw::Iid { probs } => {
                        if probs.len() != members.len() {
                            return Err(Error::InvalidSpec(
                                "iid probabilities must match member count".into(),
                            ));
                        }
                        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                            return Err(Error::InvalidSpec(
                                "iid probabilities out of range".into(),
                            ));
                        }
                        let sum: f64 = probs.iter().sum();
                        if (sum - 1.0).abs() > 1e-9 {
                            return Err(Error::InvalidSpec(format!(
                                "iid probabilities sum to {sum}, expected 1"
                            )));
                        }
                    }
                    FamilyLaw::Periodic { periods } => {
                        if periods.len() + 1 != members.len() {
                            return Err(Error::InvalidSpec(
                                "periodic law needs one period per non-default member".into(),
                            ));
                        }
                        if periods.iter().any(|t| *t < 1) {
                            return Err(Error::InvalidSpec("periods must be at least 1".into()));
                        }
                    }
                    FamilyLaw::ActivationRate { c, scale } => {
                        if members.len() != 2 {
                            return Err(Error::InvalidSpec(
                                "activation-rate law needs exactly two members".into(),
                            ));
                        }
                        if !(*c > 0.0 && *c <= 1.0) {
                            return Err(Error::InvalidSpec(format!(
                                "activation exponent must lie in (0, 1], got {c}"
                            )));
                        }
                        if !(*scale > 0.0 && *scale <= 1.0) {
                            return Err(Error::InvalidSpec(format!(
                                "activation scale must lie in (0, 1], got {scale}"
                            )));
                        }
                    }
                }
                if let Some(p) = limit_probs {
                    if p.len() != members.len() {
                        return Err(Error::InvalidSpec(
                            "limit frequencies must match member count".into(),
                        ));
                    }
                    let sum: f64 = p.iter().sum();
                    if (sum - 1.0).abs() > 1e-9 {
                        return Err(Error::InvalidSpec(format!(
                            "limit frequencies sum to {sum}, expected 1"
                        )));
                    }
                }
                Ok(())
            }
            StreamSpec::Perturbed {
                base,
                offsets,
                upper_bound,
            } => {
                base.validate(dim)?;
                if !upper_bound.is_finite() {
                    return Err(Error::InvalidSpec("offset bound must be finite".into()));
                }
                match offsets {
                    OffsetLaw::Uniform { lo, hi } => {
                        if lo > hi {
                            return Err(Error::InvalidSpec("uniform offsets need lo <= hi".into()));
                        }
                        if *hi > upper_bound + 1e-12 {
                            return Err(Error::InvalidSpec(
                                "uniform offsets exceed the declared upper bound".into(),
                            ));
                        }
                    }
                    OffsetLaw::Constant { value } => {
                        if *value > upper_bound + 1e-12 {
                            return Err(Error::InvalidSpec(
                                "constant offset exceeds the declared upper bound".into(),
                            ));
                        }
                    }
                    OffsetLaw::Zero | OffsetLaw::InverseSqrt { .. } => {}
                }
                Ok(())
            }
        }
    }

    /// Index of the member emitted at round τ, for family streams.
    pub fn member_index(&self, tau: u64, seed: u64, stream: u64) -> Option<usize> {
        match self {
            StreamSpec::Family { members, law, .. } => Some(match law {
                FamilyLaw::Iid { probs } => {
                    let u = stream_unit(seed, tau, stream, 0);
                    let mut acc = 0.0;
                    let mut pick = members.len() - 1;
                    for (k, p) in probs.iter().enumerate() {
                        acc += p;
                        if u < acc {
                            pick = k;
                            break;
                        }
                    }
                    pick
                }
                FamilyLaw::Periodic { periods } => periods
                    .iter()
                    .position(|t| tau.is_multiple_of(*t))
                    .map(|k| k + 1)
                    .unwrap_or(0),
                FamilyLaw::ActivationRate { c, scale } => {
                    let p = (scale * c / (tau as f64).powf(1.0 - c)).min(1.0);
                    if stream_unit(seed, tau, stream, 0) < p {
                        1
                    } else {
                        0
                    }
                }
            }),
            StreamSpec::Perturbed { .. } => None,
        }
    }

    /// The constraint revealed at round τ.
    pub fn at(&self, tau: u64, seed: u64, stream: u64) -> ScalarFunc {
        match self {
            StreamSpec::Family { members, .. } => {
                let k = self.member_index(tau, seed, stream).unwrap();
                members[k].clone()
            }
            StreamSpec::Perturbed { base, offsets, .. } => {
                base.shift_intercept(offsets.offset(tau, seed, stream))
            }
        }
    }

    /// Limit frequencies and where they came from.
    pub fn limit_probabilities(&self) -> Option<(Vec<f64>, LimitSource)> {
        match self {
            StreamSpec::Family {
                members,
                law,
                limit_probs,
            } => {
                if let Some(p) = limit_probs {
                    return Some((p.clone(), LimitSource::Declared));
                }
                match law {
                    FamilyLaw::Iid { probs } => Some((probs.clone(), LimitSource::Law)),
                    FamilyLaw::Periodic { periods } => {
                        Some((periodic_densities(members.len(), periods), LimitSource::Law))
                    }
                    FamilyLaw::ActivationRate { c, scale } => {
                        if (*c - 1.0).abs() < 1e-12 {
                            Some((vec![1.0 - scale, *scale], LimitSource::Law))
                        } else {
                            // p_{2,τ} → 0 for c < 1.
                            Some((vec![1.0, 0.0], LimitSource::Law))
                        }
                    }
                }
            }
            StreamSpec::Perturbed { .. } => None,
        }
    }

    pub fn member_count(&self) -> Option<usize> {
        match self {
            StreamSpec::Family { members, .. } => Some(members.len()),
            StreamSpec::Perturbed { .. } => None,
        }
    }

    pub fn lipschitz_bound(&self, domain: &BoxDomain) -> f64 {
        match self {
            StreamSpec::Family { members, .. } => members
                .iter()
                .map(|f| f.lipschitz_on_box(domain))
                .fold(0.0, f64::max),
            StreamSpec::Perturbed { base, .. } => base.lipschitz_on_box(domain),
        }
    }

    /// Bound on `|a_k(x)|` over the box across the family; for perturbed
    /// streams, over the base shifted by the offset bound.
    pub fn value_bound(&self, domain: &BoxDomain) -> f64 {
        match self {
            StreamSpec::Family { members, .. } => members
                .iter()
                .map(|f| sup_abs_on_box(f, domain))
                .fold(0.0, f64::max),
            StreamSpec::Perturbed {
                base, upper_bound, ..
            } => sup_abs_on_box(base, domain) + upper_bound.abs(),
        }
    }
}

/// Largest `|f(x)|` over the box. The maximum of a convex function sits at a
/// corner; the minimum of the diagonal-quadratic variants has a closed
/// per-coordinate form.
fn sup_abs_on_box(f: &ScalarFunc, domain: &BoxDomain) -> f64 {
    let n = domain.dim();
    let mut max_at_corner = f64::NEG_INFINITY;
    for mask in 0..(1usize << n) {
        let corner: Vec<f64> = (0..n)
            .map(|d| {
                if mask & (1 << d) != 0 {
                    domain.upper[d]
                } else {
                    domain.lower[d]
                }
            })
            .collect();
        max_at_corner = max_at_corner.max(f.eval(&corner).expect("corner in domain"));
    }
    let min_val = match f {
        ScalarFunc::Constant { value } => *value,
        ScalarFunc::Affine { .. } => {
            let mut min_at_corner = f64::INFINITY;
            for mask in 0..(1usize << n) {
                let corner: Vec<f64> = (0..n)
                    .map(|d| {
                        if mask & (1 << d) != 0 {
                            domain.upper[d]
                        } else {
                            domain.lower[d]
                        }
                    })
                    .collect();
                min_at_corner = min_at_corner.min(f.eval(&corner).expect("corner in domain"));
            }
            min_at_corner
        }
        ScalarFunc::QuadraticDiag { diag, linear, .. } => {
            let argmin: Vec<f64> = (0..n)
                .map(|d| {
                    let free = if diag[d] > 0.0 {
                        -linear[d] / (2.0 * diag[d])
                    } else if linear[d] > 0.0 {
                        domain.lower[d]
                    } else {
                        domain.upper[d]
                    };
                    free.clamp(domain.lower[d], domain.upper[d])
                })
                .collect();
            f.eval(&argmin).expect("argmin in domain")
        }
    };
    max_at_corner.abs().max(min_val.abs())
}

/// Exact visit densities for the periodic law with smallest-index conflict
/// resolution, by inclusion–exclusion over earlier periods.
fn periodic_densities(member_count: usize, periods: &[u64]) -> Vec<f64> {
    let mut dens = vec![0.0; member_count];
    for (idx, t_k) in periods.iter().enumerate() {
        // Density of multiples of t_k not divisible by any earlier period.
        let earlier = &periods[..idx];
        let subsets = 1u32 << earlier.len();
        let mut d = 0.0;
        for mask in 0..subsets {
            let mut l = *t_k as u128;
            let mut sign = 1.0;
            for (b, t) in earlier.iter().enumerate() {
                if mask & (1 << b) != 0 {
                    l = lcm_u128(l, *t as u128);
                    sign = -sign;
                }
            }
            d += sign / l as f64;
        }
        dens[idx + 1] = d;
    }
    dens[0] = 1.0 - dens[1..].iter().sum::<f64>();
    dens
}

fn gcd_u128(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd_u128(b, a % b)
    }
}

fn lcm_u128(a: u128, b: u128) -> u128 {
    a / gcd_u128(a, b) * b
}

/// All constraint streams of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub streams: Vec<StreamSpec>,
}

impl FamilySpec {
    pub fn new(streams: Vec<StreamSpec>) -> Self {
        FamilySpec { streams }
    }

    /// One stream that repeats the same constraint forever.
    pub fn single_time_invariant(g: ScalarFunc) -> Self {
        FamilySpec {
            streams: vec![StreamSpec::time_invariant(g)],
        }
    }

    /// The two-member alternating family from the running example:
    /// `a₁(x) = -0.01` and `a₂(x) = x`, with the second drawn at rate
    /// `0.1·c/τ^(1-c)`.
    pub fn activation_example(c: f64) -> Self {
        FamilySpec {
            streams: vec![StreamSpec::Family {
                members: vec![ScalarFunc::constant(-0.01), ScalarFunc::affine_1d(1.0, 0.0)],
                law: FamilyLaw::ActivationRate { c, scale: 0.1 },
                limit_probs: None,
            }],
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.streams.is_empty() {
            return Err(Error::InvalidSpec("no constraint streams".into()));
        }
        self.streams.iter().try_for_each(|s| s.validate(dim))
    }

    pub fn m(&self) -> usize {
        self.streams.len()
    }

    pub fn lipschitz_bound(&self, domain: &BoxDomain) -> f64 {
        self.streams
            .iter()
            .map(|s| s.lipschitz_bound(domain))
            .fold(0.0, f64::max)
    }

    /// `a_max`: bound on constraint magnitudes over the box.
    pub fn value_bound(&self, domain: &BoxDomain) -> f64 {
        self.streams
            .iter()
            .map(|s| s.value_bound(domain))
            .fold(0.0, f64::max)
    }

    /// `n̄`: largest family size across streams (perturbed streams have no
    /// finite family).
    pub fn max_family_size(&self) -> Option<usize> {
        self.streams
            .iter()
            .map(|s| s.member_count())
            .collect::<Option<Vec<_>>>()
            .map(|sizes| sizes.into_iter().max().unwrap_or(0))
    }
}

/// Constraints revealed at round τ, one per stream. Pure in `(spec, τ, seed)`.
pub fn generate_round(spec: &FamilySpec, tau: u64, seed: u64) -> Vec<ScalarFunc> {
    debug_assert!(tau >= 1);
    spec.streams
        .iter()
        .enumerate()
        .map(|(j, s)| s.at(tau, seed, j as u64))
        .collect()
}

// ---------------------------------------------------------------------------
// Visit counts and Condition 3
// ---------------------------------------------------------------------------

/// Where the limit frequencies used by a verdict came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitSource {
    Declared,
    Law,
    /// Estimated as the final empirical frequency; flagged as a warning.
    Estimated,
}

/// Per-round member counts for one family stream.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamCounts {
    /// `counts[k][τ-1]` = visits of member k among rounds 1..=τ.
    pub counts: Vec<Vec<u64>>,
    pub horizon: usize,
}

impl StreamCounts {
    /// Replay a family stream and accumulate per-round visit counts.
    pub fn collect(spec: &StreamSpec, stream: u64, horizon: usize, seed: u64) -> Option<Self> {
        let members = spec.member_count()?;
        let mut counts = vec![vec![0u64; horizon]; members];
        let mut running = vec![0u64; members];
        for tau in 1..=horizon {
            let k = spec.member_index(tau as u64, seed, stream)?;
            running[k] += 1;
            for (m, r) in running.iter().enumerate() {
                counts[m][tau - 1] = *r;
            }
        }
        Some(StreamCounts { counts, horizon })
    }

    pub fn final_frequencies(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|c| c[self.horizon - 1] as f64 / self.horizon as f64)
            .collect()
    }
}

/// Outcome of the √τ-convergence check for one stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition3Report {
    /// Final empirical frequencies `p_{k,t}`.
    pub empirical: Vec<f64>,
    /// Final visit counts `n_{k,t}`.
    pub counts: Vec<u64>,
    /// Limit frequencies the margin was computed against.
    pub limits: Vec<f64>,
    pub limit_source: LimitSource,
    /// `sup_{τ>t₀} √τ·max_k |p_{k,τ} − p_k|`.
    pub margin: f64,
    pub epsilon: f64,
    pub t0: usize,
    pub verdict: bool,
    /// Set when limits had to be estimated from the sample itself.
    pub estimated_limits_warning: bool,
}

/// Check `|p_{k,τ} − p_k| ≤ ε/√τ` for all `τ ∈ (t₀, t]` and members k.
pub fn check_condition3(
    counts: &StreamCounts,
    limits: Option<&[f64]>,
    source: LimitSource,
    epsilon: f64,
    t0: usize,
) -> Condition3Report {
    let t = counts.horizon;
    let (limits, source, warning) = match limits {
        Some(l) => (l.to_vec(), source, false),
        None => (counts.final_frequencies(), LimitSource::Estimated, true),
    };
    let mut margin: f64 = 0.0;
    for (k, per_round) in counts.counts.iter().enumerate() {
        let p_k = limits[k];
        for tau in (t0 + 1)..=t {
            let p = per_round[tau - 1] as f64 / tau as f64;
            margin = margin.max((tau as f64).sqrt() * (p - p_k).abs());
        }
    }
    Condition3Report {
        empirical: counts.final_frequencies(),
        counts: counts.counts.iter().map(|c| c[t - 1]).collect(),
        limits,
        limit_source: source,
        margin,
        epsilon,
        t0,
        verdict: margin <= epsilon,
        estimated_limits_warning: warning,
    }
}

// ---------------------------------------------------------------------------
// Condition 2 (penalty growth)
// ---------------------------------------------------------------------------

/// Outcome of the penalty-growth check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Condition2Report {
    /// Best common Slater margin found on the candidate grid.
    pub eta: f64,
    /// The maximizing candidate point.
    pub z_star: Vec<f64>,
    /// `β = η · min_τ (k_τ/τ)` over the sampled schedule.
    pub beta: f64,
    /// Sampled `(τ, k_τ)` pairs; `k_τ = 0` encodes "no boundary" samples.
    pub k_schedule: Vec<(usize, usize)>,
    pub verdict: bool,
}

/// Search a grid of candidate Slater points and estimate `β` from sampled
/// boundary activity. The schedule doubles: τ ∈ {1, 2, 4, ...} ∪ {t}.
pub fn check_condition2(
    state: &PenaltyState,
    domain: &BoxDomain,
    z_points: usize,
    k_points: usize,
) -> Result<Condition2Report> {
    if state.tau() == 0 {
        return Err(Error::EmptyPenalty);
    }
    let grid = GridPoints::new(domain, z_points)?;
    let mut eta = f64::NEG_INFINITY;
    let mut z_star = domain.center();
    for idx in 0..grid.len() {
        let z = grid.point(idx);
        let m = state.slater_margin(&z);
        if m > eta {
            eta = m;
            z_star = z;
        }
    }
    let mut k_schedule = Vec::new();
    let mut min_ratio = f64::INFINITY;
    let mut tau = 1usize;
    let mut taus = Vec::new();
    while tau < state.tau() {
        taus.push(tau);
        tau *= 2;
    }
    taus.push(state.tau());
    for tau in taus {
        match state.estimate_k_tau_at(tau, domain, k_points) {
            Ok(k) => {
                k_schedule.push((tau, k));
                min_ratio = min_ratio.min(k as f64 / tau as f64);
            }
            Err(Error::NoBoundary(_)) => k_schedule.push((tau, 0)),
            Err(e) => return Err(e),
        }
    }
    let beta = if eta > 0.0 && min_ratio.is_finite() {
        eta * min_ratio
    } else {
        0.0
    };
    let verdict = eta > 0.0 && beta >= 1e-6;
    Ok(Condition2Report {
        eta,
        z_star,
        beta,
        k_schedule,
        verdict,
    })
}

// ---------------------------------------------------------------------------
// Constraint partition (P₊ / P₋)
// ---------------------------------------------------------------------------

/// Classification of streams by sub-√t prefix-penalty growth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionReport {
    /// Streams whose worst-point prefix-penalty curve exceeds `κ√t`.
    pub p_plus: Vec<usize>,
    /// Streams with `max_x Σ_i max{0, avg_i(x)} ≤ κ√t`.
    pub p_minus: Vec<usize>,
    /// Per-stream κ used for the test.
    pub kappa: Vec<f64>,
    /// Per-stream curve value at the horizon (at the worst grid point).
    pub curve_final: Vec<f64>,
    /// Per-stream curve value at the reference step.
    pub curve_reference: Vec<f64>,
    pub reference_step: usize,
}

/// Classify each stream by the growth of its own prefix-penalty curve at the
/// per-stream worst grid point. With no override, `κ` is the curve value at
/// the reference step divided by 50.
pub fn partition_constraints(
    state: &PenaltyState,
    domain: &BoxDomain,
    points_per_axis: usize,
    reference_step: usize,
    kappa_override: Option<f64>,
) -> Result<PartitionReport> {
    let t = state.tau();
    if t == 0 {
        return Err(Error::EmptyPenalty);
    }
    let reference_step = reference_step.min(t);
    let grid = GridPoints::new(domain, points_per_axis)?;
    let m = state.m();
    let mut curve_final = vec![0.0; m];
    let mut curve_reference = vec![0.0; m];
    for idx in 0..grid.len() {
        let x = grid.point(idx);
        for j in 0..m {
            let mut acc = 0.0;
            let mut at_ref = 0.0;
            for i in 1..=t {
                acc += state.average_spec(i, j).eval(&x).max(0.0);
                if i == reference_step {
                    at_ref = acc;
                }
            }
            if acc > curve_final[j] {
                curve_final[j] = acc;
                curve_reference[j] = at_ref;
            }
        }
    }
    let mut p_plus = Vec::new();
    let mut p_minus = Vec::new();
    let mut kappa = Vec::new();
    for j in 0..m {
        let k = kappa_override.unwrap_or(curve_reference[j] / 50.0);
        kappa.push(k);
        if curve_final[j] <= k * (t as f64).sqrt() {
            p_minus.push(j);
        } else {
            p_plus.push(j);
        }
    }
    Ok(PartitionReport {
        p_plus,
        p_minus,
        kappa,
        curve_final,
        curve_reference,
        reference_step,
    })
}

// ---------------------------------------------------------------------------
// Perturbed-stream decomposition
// ---------------------------------------------------------------------------

/// Deviation bounds for a perturbed stream under mean and upper-bound
/// centerings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbedReport {
    /// `Δ_i = (1/i) Σ_{k≤i} (b_k − mean)` per prefix.
    pub delta_mean: Vec<f64>,
    /// `Δ_i = (1/i) Σ_{k≤i} (b_k − upper)` per prefix; never positive.
    pub delta_upper: Vec<f64>,
    /// `sup_i √i·|Δ_i|` under the mean centering.
    pub sqrt_scaled_mean_margin: f64,
    /// Largest violation of `|δ_i(x)| ≤ |Δ_i|` observed on the grid.
    pub hinge_contraction_excess: f64,
    /// Largest `δ_i(x)` under the upper-bound centering (should be ≤ 0).
    pub delta_upper_max: f64,
    pub mean_offset: f64,
    pub upper_bound: f64,
}

/// Decompose a perturbed stream around both centerings and verify the
/// hinge-contraction bounds pointwise on a grid.
pub fn perturbed_decomposition(
    spec: &StreamSpec,
    stream: u64,
    horizon: usize,
    seed: u64,
    domain: &BoxDomain,
    points_per_axis: usize,
) -> Result<PerturbedReport> {
    let (base, offsets, upper_bound) = match spec {
        StreamSpec::Perturbed {
            base,
            offsets,
            upper_bound,
        } => (base, offsets, *upper_bound),
        _ => {
            return Err(Error::InvalidSpec(
                "perturbed decomposition needs a perturbed stream".into(),
            ))
        }
    };
    if horizon == 0 {
        return Err(Error::InvalidSpec("horizon must be positive".into()));
    }
    let b: Vec<f64> = (1..=horizon)
        .map(|tau| offsets.offset(tau as u64, seed, stream))
        .collect();
    let mean = b.iter().sum::<f64>() / horizon as f64;

    let mut delta_mean = Vec::with_capacity(horizon);
    let mut delta_upper = Vec::with_capacity(horizon);
    let mut acc_mean = 0.0;
    let mut acc_upper = 0.0;
    let mut sqrt_margin: f64 = 0.0;
    for (i, bi) in b.iter().enumerate() {
        acc_mean += bi - mean;
        acc_upper += bi - upper_bound;
        let dm = acc_mean / (i + 1) as f64;
        let du = acc_upper / (i + 1) as f64;
        delta_mean.push(dm);
        delta_upper.push(du);
        sqrt_margin = sqrt_margin.max(((i + 1) as f64).sqrt() * dm.abs());
    }

    let grid = GridPoints::new(domain, points_per_axis)?;
    let mut hinge_contraction_excess: f64 = 0.0;
    let mut delta_upper_max = f64::NEG_INFINITY;
    for idx in 0..grid.len() {
        let x = grid.point(idx);
        let g = base.eval(&x)?;
        for i in 0..horizon {
            let centered = g + mean;
            let delta = (centered + delta_mean[i]).max(0.0) - centered.max(0.0);
            hinge_contraction_excess =
                hinge_contraction_excess.max(delta.abs() - delta_mean[i].abs());
            let centered_up = g + upper_bound;
            let delta_up = (centered_up + delta_upper[i]).max(0.0) - centered_up.max(0.0);
            delta_upper_max = delta_upper_max.max(delta_up);
        }
    }

    Ok(PerturbedReport {
        delta_mean,
        delta_upper,
        sqrt_scaled_mean_margin: sqrt_margin,
        hinge_contraction_excess,
        delta_upper_max,
        mean_offset: mean,
        upper_bound,
    })
}

// ---------------------------------------------------------------------------
// Aggregate report
// ---------------------------------------------------------------------------

/// Everything the checkers can say about one instance's constraint streams.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    /// Condition 3 per family stream (index aligned with streams; `None`
    /// entries are perturbed streams).
    pub condition3: Vec<Option<Condition3Report>>,
    pub condition2: Condition2Report,
    pub partition: PartitionReport,
    /// Per-stream perturbed decompositions where applicable.
    pub perturbed: Vec<Option<PerturbedReport>>,
}

/// Parameters for [`analyze_streams`].
#[derive(Debug, Clone, Copy)]
pub struct AnalysisParams {
    pub horizon: usize,
    pub seed: u64,
    pub grid_points: usize,
    pub epsilon: f64,
    pub t0: usize,
    pub kappa_override: Option<f64>,
    pub partition_reference: usize,
}

/// Replay the streams and run every checker.
pub fn analyze_streams(
    spec: &FamilySpec,
    domain: &BoxDomain,
    params: &AnalysisParams,
) -> Result<ConditionReport> {
    let mut state = PenaltyState::new(domain.dim(), spec.m());
    for tau in 1..=params.horizon {
        state.push_constraints(&generate_round(spec, tau as u64, params.seed))?;
    }

    let mut condition3 = Vec::with_capacity(spec.m());
    let mut perturbed = Vec::with_capacity(spec.m());
    for (j, stream) in spec.streams.iter().enumerate() {
        match StreamCounts::collect(stream, j as u64, params.horizon, params.seed) {
            Some(counts) => {
                let limits = stream.limit_probabilities();
                let report = match &limits {
                    Some((l, src)) => {
                        check_condition3(&counts, Some(l), *src, params.epsilon, params.t0)
                    }
                    None => check_condition3(
                        &counts,
                        None,
                        LimitSource::Estimated,
                        params.epsilon,
                        params.t0,
                    ),
                };
                condition3.push(Some(report));
            }
            None => condition3.push(None),
        }
        match stream {
            StreamSpec::Perturbed { .. } => perturbed.push(Some(perturbed_decomposition(
                stream,
                j as u64,
                params.horizon,
                params.seed,
                domain,
                params.grid_points,
            )?)),
            _ => perturbed.push(None),
        }
    }

    let condition2 = check_condition2(&state, domain, params.grid_points, params.grid_points)?;
    let partition = partition_constraints(
        &state,
        domain,
        params.grid_points,
        params.partition_reference,
        params.kappa_override,
    )?;

    Ok(ConditionReport {
        condition3,
        condition2,
        partition,
        perturbed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box10() -> BoxDomain {
        BoxDomain::symmetric_1d(10.0)
    }

    #[test]
    fn generation_is_counter_deterministic() {
        let spec = FamilySpec::activation_example(0.75);
        for tau in [1u64, 2, 17, 999] {
            let a = generate_round(&spec, tau, 42);
            let b = generate_round(&spec, tau, 42);
            assert_eq!(a, b);
        }
        // Different seeds disagree somewhere.
        let mut differs = false;
        for tau in 1..=200u64 {
            if generate_round(&spec, tau, 1) != generate_round(&spec, tau, 2) {
                differs = true;
                break;
            }
        }
        assert!(differs);
    }

    #[test]
    fn activation_rate_c1_is_constant_probability() {
        // With c = 1 the draw probability is 0.1 at every τ; check the
        // long-run frequency on one seed.
        let spec = FamilySpec::activation_example(1.0);
        let stream = &spec.streams[0];
        let t = 20_000;
        let counts = StreamCounts::collect(stream, 0, t, 7).unwrap();
        let p2 = counts.final_frequencies()[1];
        assert!((p2 - 0.1).abs() < 0.01, "p2 = {p2}");
    }

    #[test]
    fn periodic_pattern_and_counts() {
        let spec = StreamSpec::Family {
            members: vec![ScalarFunc::constant(-1.0), ScalarFunc::constant(1.0)],
            law: FamilyLaw::Periodic { periods: vec![3] },
            limit_probs: None,
        };
        let pattern: Vec<usize> = (1..=9u64)
            .map(|tau| spec.member_index(tau, 0, 0).unwrap())
            .collect();
        assert_eq!(pattern, vec![0, 0, 1, 0, 0, 1, 0, 0, 1]);

        // Counts sum to τ at every step.
        let counts = StreamCounts::collect(&spec, 0, 100, 0).unwrap();
        for tau in 1..=100 {
            let total: u64 = counts.counts.iter().map(|c| c[tau - 1]).sum();
            assert_eq!(total, tau as u64);
        }
    }

    #[test]
    fn periodic_densities_with_conflicts() {
        // Members 1 and 2 with periods 2 and 3: member 2 gets multiples of 3
        // not divisible by 2, density 1/3 − 1/6 = 1/6.
        let d = periodic_densities(3, &[2, 3]);
        assert!((d[1] - 0.5).abs() < 1e-12);
        assert!((d[2] - (1.0 / 3.0 - 1.0 / 6.0)).abs() < 1e-12);
        assert!((d[0] - (1.0 - 0.5 - 1.0 / 6.0)).abs() < 1e-12);
    }

    #[test]
    fn perturbed_zero_offsets_reduce_to_base() {
        let spec = StreamSpec::Perturbed {
            base: ScalarFunc::affine_1d(1.0, 0.0),
            offsets: OffsetLaw::Zero,
            upper_bound: 0.0,
        };
        for tau in [1u64, 5, 50] {
            assert_eq!(spec.at(tau, 3, 0), ScalarFunc::affine_1d(1.0, 0.0));
        }
    }

    #[test]
    fn condition3_periodic_passes_with_unit_epsilon() {
        let spec = StreamSpec::Family {
            members: vec![ScalarFunc::constant(-1.0), ScalarFunc::constant(1.0)],
            law: FamilyLaw::Periodic { periods: vec![3] },
            limit_probs: None,
        };
        let counts = StreamCounts::collect(&spec, 0, 10_000, 0).unwrap();
        let (limits, src) = spec.limit_probabilities().unwrap();
        let report = check_condition3(&counts, Some(&limits), src, 1.0, 0);
        assert!(report.verdict, "margin = {}", report.margin);
        assert!(report.margin <= 1.0);
    }

    #[test]
    fn condition3_single_member_margin_zero() {
        let spec = StreamSpec::time_invariant(ScalarFunc::constant(-1.0));
        let counts = StreamCounts::collect(&spec, 0, 1000, 0).unwrap();
        let (limits, src) = spec.limit_probabilities().unwrap();
        let report = check_condition3(&counts, Some(&limits), src, 1.0, 0);
        assert_eq!(report.margin, 0.0);
        assert!(report.verdict);
    }

    #[test]
    fn condition3_activation_rate_against_nominal_targets() {
        // Against the nominal (c = 1) frequencies, the c = 0.75 stream drifts
        // at rate √τ·|p_{2,τ} − 0.1| ≈ 0.1√τ and must fail.
        let spec = StreamSpec::Family {
            members: vec![ScalarFunc::constant(-0.01), ScalarFunc::affine_1d(1.0, 0.0)],
            law: FamilyLaw::ActivationRate {
                c: 0.75,
                scale: 0.1,
            },
            limit_probs: Some(vec![0.9, 0.1]),
        };
        let counts = StreamCounts::collect(&spec, 0, 10_000, 11).unwrap();
        let (limits, src) = spec.limit_probabilities().unwrap();
        assert_eq!(src, LimitSource::Declared);
        let report = check_condition3(&counts, Some(&limits), src, 4.0, 0);
        assert!(!report.verdict);
        assert!(report.margin > 5.0, "margin = {}", report.margin);
    }

    #[test]
    fn condition2_time_invariant_passes() {
        let mut state = PenaltyState::new(1, 1);
        for _ in 0..64 {
            state
                .push_constraints(&[ScalarFunc::affine_1d(1.0, 0.0)])
                .unwrap();
        }
        let report = check_condition2(&state, &box10(), 201, 201).unwrap();
        assert!(report.verdict);
        assert!((report.eta - 10.0).abs() < 1e-9);
        assert!((report.beta - 10.0).abs() < 1e-9);
        assert_eq!(report.z_star, vec![-10.0]);
    }

    #[test]
    fn condition2_infeasible_stream_fails() {
        let mut state = PenaltyState::new(1, 1);
        for _ in 0..8 {
            state
                .push_constraints(&[ScalarFunc::constant(1.0)])
                .unwrap();
        }
        let report = check_condition2(&state, &box10(), 101, 101).unwrap();
        assert!(!report.verdict);
        assert!(report.eta <= 0.0);
    }

    #[test]
    fn partition_classifies_growth() {
        // Always-feasible stream → P₋; time-invariant active stream → P₊.
        let mut state = PenaltyState::new(1, 2);
        for _ in 0..2000 {
            state
                .push_constraints(&[ScalarFunc::constant(-0.01), ScalarFunc::affine_1d(1.0, 0.0)])
                .unwrap();
        }
        let report = partition_constraints(&state, &box10(), 101, 500, None).unwrap();
        assert_eq!(report.p_minus, vec![0]);
        assert_eq!(report.p_plus, vec![1]);
        assert_eq!(report.curve_final[0], 0.0);
    }

    #[test]
    fn perturbed_decomposition_bounds() {
        let spec = StreamSpec::Perturbed {
            base: ScalarFunc::affine_1d(1.0, 0.0),
            offsets: OffsetLaw::Uniform { lo: -1.0, hi: 1.0 },
            upper_bound: 1.0,
        };
        let report = perturbed_decomposition(&spec, 0, 2000, 5, &box10(), 101).unwrap();
        assert!(report.hinge_contraction_excess <= 1e-12);
        assert!(report.delta_upper_max <= 1e-12);
        assert!(report.delta_upper.iter().all(|d| *d <= 1e-12));

        // Constant offsets at the bound: both deltas vanish.
        let spec = StreamSpec::Perturbed {
            base: ScalarFunc::affine_1d(1.0, 0.0),
            offsets: OffsetLaw::Constant { value: 0.5 },
            upper_bound: 0.5,
        };
        let report = perturbed_decomposition(&spec, 0, 100, 5, &box10(), 51).unwrap();
        assert!(report.delta_mean.iter().all(|d| d.abs() < 1e-12));
        assert!(report.delta_upper.iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn value_bound_and_family_size() {
        let spec = FamilySpec::activation_example(1.0);
        // max over {|-0.01|, |x| on [-10,10]} = 10.
        assert_eq!(spec.value_bound(&box10()), 10.0);
        assert_eq!(spec.max_family_size(), Some(2));

        let quad = FamilySpec::single_time_invariant(ScalarFunc::QuadraticDiag {
            diag: vec![1.0],
            linear: vec![0.0],
            intercept: -2.0,
        });
        // max |x² − 2| over [−10,10]: 98 at corners, 2 at the vertex.
        assert_eq!(quad.value_bound(&box10()), 98.0);

        let perturbed = FamilySpec::new(vec![StreamSpec::Perturbed {
            base: ScalarFunc::affine_1d(1.0, 0.0),
            offsets: OffsetLaw::Uniform { lo: -1.0, hi: 1.0 },
            upper_bound: 1.0,
        }]);
        assert_eq!(perturbed.value_bound(&box10()), 11.0);
        assert_eq!(perturbed.max_family_size(), None);
    }

    #[test]
    fn validation_rejects_bad_specs() {
        let bad = StreamSpec::Family {
            members: vec![ScalarFunc::constant(0.0)],
            law: FamilyLaw::Iid { probs: vec![0.5] },
            limit_probs: None,
        };
        assert!(bad.validate(1).is_err());
        let bad = StreamSpec::Family {
            members: vec![ScalarFunc::constant(0.0), ScalarFunc::constant(1.0)],
            law: FamilyLaw::ActivationRate { c: 1.5, scale: 0.1 },
            limit_probs: None,
        };
        assert!(bad.validate(1).is_err());
    }
}
