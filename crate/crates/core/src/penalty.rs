//! Running-average hinge penalties.
//!
//! At step τ the penalty is `h_τ(x) = Σ_j max{0, (1/τ) Σ_{i≤τ} g_i^{(j)}(x)}`
//! and the FTRL objective carries the prefix sum `Σ_{i≤τ} h_i(x)`. The state
//! keeps symbolic running sums per stream (O(1) evaluation of `h_τ`) plus the
//! averaged spec of every prefix, and — for one-dimensional affine streams —
//! a sorted kink structure that evaluates the prefix penalty and its
//! one-sided derivatives in O(log τ).

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BoxDomain, FuncSum, ProblemInstance, ScalarFunc};

/// Tolerance used when deciding whether a prefix-average constraint is
/// active on the boundary. The exact `≥ 0` test is measure-zero on a grid.
pub const ACTIVE_TOL: f64 = 1e-9;

/// Membership tolerance for "prefix penalty is zero".
pub const MEMBER_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Fast 1-D prefix-penalty evaluation
// ---------------------------------------------------------------------------

/// Hinge terms `max{0, s·x + c}` with positive slope, sorted by kink
/// `k = -c/s`, with prefix sums of slopes and intercepts in sorted order.
#[derive(Debug, Clone, Default, PartialEq)]
struct KinkList {
    kinks: Vec<f64>,
    slopes: Vec<f64>,
    icepts: Vec<f64>,
    // prefix[i] = sum of the first i entries in sorted order; len = n + 1.
    slope_prefix: Vec<f64>,
    icept_prefix: Vec<f64>,
}

impl KinkList {
    fn new() -> Self {
        KinkList {
            kinks: Vec::new(),
            slopes: Vec::new(),
            icepts: Vec::new(),
            slope_prefix: vec![0.0],
            icept_prefix: vec![0.0],
        }
    }

    fn insert(&mut self, kink: f64, slope: f64, icept: f64) {
        let idx = self.kinks.partition_point(|k| *k <= kink);
        self.kinks.insert(idx, kink);
        self.slopes.insert(idx, slope);
        self.icepts.insert(idx, icept);
        // Rebuild the prefix sums from the insertion point.
        self.slope_prefix.push(0.0);
        self.icept_prefix.push(0.0);
        for i in idx..self.kinks.len() {
            self.slope_prefix[i + 1] = self.slope_prefix[i] + self.slopes[i];
            self.icept_prefix[i + 1] = self.icept_prefix[i] + self.icepts[i];
        }
    }

    fn len(&self) -> usize {
        self.kinks.len()
    }

    /// Sums of (slope, intercept) over entries with kink ≤ x.
    fn sums_le(&self, x: f64) -> (f64, f64) {
        let idx = self.kinks.partition_point(|k| *k <= x);
        (self.slope_prefix[idx], self.icept_prefix[idx])
    }

    /// Sums of (slope, intercept) over entries with kink < x.
    fn sums_lt(&self, x: f64) -> (f64, f64) {
        let idx = self.kinks.partition_point(|k| *k < x);
        (self.slope_prefix[idx], self.icept_prefix[idx])
    }

    fn totals(&self) -> (f64, f64) {
        let n = self.len();
        (self.slope_prefix[n], self.icept_prefix[n])
    }
}

/// Incremental evaluator for `Σ_i Σ_j max{0, s_{ij}·x + c_{ij}}` in one
/// dimension. Positive-slope terms activate for `x ≥ -c/s`, negative-slope
/// terms for `x ≤ -c/s`; zero-slope terms contribute a constant.
#[derive(Debug, Clone, PartialEq)]
struct Prefix1d {
    const_part: f64,
    pos: KinkList,
    neg: KinkList,
}

impl Prefix1d {
    fn new() -> Self {
        Prefix1d {
            const_part: 0.0,
            pos: KinkList::new(),
            neg: KinkList::new(),
        }
    }

    fn insert(&mut self, slope: f64, icept: f64) {
        if slope == 0.0 {
            self.const_part += icept.max(0.0);
        } else {
            let kink = -icept / slope;
            if slope > 0.0 {
                self.pos.insert(kink, slope, icept);
            } else {
                self.neg.insert(kink, slope, icept);
            }
        }
    }

    fn value(&self, x: f64) -> f64 {
        let (sp, cp) = self.pos.sums_le(x);
        let (snt, cnt) = self.neg.totals();
        let (snl, cnl) = self.neg.sums_lt(x);
        // Negative-slope terms are active for kink ≥ x.
        let sn = snt - snl;
        let cn = cnt - cnl;
        self.const_part + sp * x + cp + sn * x + cn
    }

    /// Right derivative: positive-slope terms active for kink ≤ x,
    /// negative-slope terms strictly beyond x.
    fn deriv_plus(&self, x: f64) -> f64 {
        let (sp, _) = self.pos.sums_le(x);
        let (snt, _) = self.neg.totals();
        let (snl, _) = self.neg.sums_le(x);
        sp + (snt - snl)
    }

    /// Left derivative: positive-slope terms strictly below x,
    /// negative-slope terms with kink ≥ x.
    fn deriv_minus(&self, x: f64) -> f64 {
        let (sp, _) = self.pos.sums_lt(x);
        let (snt, _) = self.neg.totals();
        let (snl, _) = self.neg.sums_lt(x);
        sp + (snt - snl)
    }
}

// ---------------------------------------------------------------------------
// Penalty state
// ---------------------------------------------------------------------------

/// Running-average penalty state over `m` constraint streams.
///
/// A value type: clone to snapshot, reads are pure.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyState {
    dim: usize,
    m: usize,
    tau: usize,
    /// Symbolic sum over rounds per stream.
    cum: Vec<FuncSum>,
    /// Averaged spec per prefix (outer index i-1) per stream.
    history: Vec<Vec<FuncSum>>,
    /// Fast path for 1-D affine streams; dropped as soon as a quadratic
    /// term shows up.
    fast: Option<Prefix1d>,
}

impl PenaltyState {
    pub fn new(dim: usize, m: usize) -> Self {
        PenaltyState {
            dim,
            m,
            tau: 0,
            cum: vec![FuncSum::zeros(dim); m],
            history: Vec::new(),
            fast: if dim == 1 {
                Some(Prefix1d::new())
            } else {
                None
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    /// Append the round-τ constraint list (one function per stream).
    pub fn push_constraints(&mut self, g_tau: &[ScalarFunc]) -> Result<()> {
        if g_tau.len() != self.m {
            return Err(Error::ConstraintCount {
                expected: self.m,
                got: g_tau.len(),
            });
        }
        for g in g_tau {
            g.validate(self.dim)?;
        }
        for (acc, g) in self.cum.iter_mut().zip(g_tau) {
            acc.add_func(g);
        }
        self.tau += 1;
        let denom = self.tau as f64;
        let averaged: Vec<FuncSum> = self.cum.iter().map(|c| c.divided(denom)).collect();
        if let Some(fast) = self.fast.as_mut() {
            if averaged.iter().all(|a| a.is_affine()) {
                for a in &averaged {
                    fast.insert(a.linear[0], a.intercept);
                }
            } else {
                self.fast = None;
            }
        }
        self.history.push(averaged);
        Ok(())
    }

    /// Averaged spec `(1/i) Σ_{k≤i} g_k^{(j)}` for prefix `i` (1-based).
    pub fn average_spec(&self, i: usize, j: usize) -> &FuncSum {
        &self.history[i - 1][j]
    }

    /// Current averaged spec for stream `j`.
    pub fn current_average(&self, j: usize) -> Result<FuncSum> {
        if self.tau == 0 {
            return Err(Error::EmptyPenalty);
        }
        Ok(self.cum[j].divided(self.tau as f64))
    }

    /// `h_τ(x) = Σ_j max{0, (1/τ) Σ_{i≤τ} g_i^{(j)}(x)}`.
    pub fn eval_h(&self, x: &[f64]) -> Result<f64> {
        if self.tau == 0 {
            return Err(Error::EmptyPenalty);
        }
        let denom = self.tau as f64;
        Ok(self.cum.iter().map(|c| (c.eval(x) / denom).max(0.0)).sum())
    }

    /// A subgradient of `h_τ` at `x`.
    pub fn h_subgrad(&self, x: &[f64]) -> Result<Vec<f64>> {
        if self.tau == 0 {
            return Err(Error::EmptyPenalty);
        }
        let denom = self.tau as f64;
        let mut g = vec![0.0; self.dim];
        for c in &self.cum {
            if c.eval(x) / denom > 0.0 {
                let cg = c.grad(x);
                for (a, b) in g.iter_mut().zip(cg) {
                    *a += b / denom;
                }
            }
        }
        Ok(g)
    }

    /// `h_i(x)` for an arbitrary stored prefix `i ≤ τ`.
    pub fn prefix_h(&self, i: usize, x: &[f64]) -> f64 {
        self.history[i - 1].iter().map(|a| a.eval(x).max(0.0)).sum()
    }

    /// Prefix penalty `Σ_{i≤τ} h_i(x)`; zero exactly on the prefix-feasible
    /// set. Returns 0 for an empty state.
    pub fn eval_prefix_penalty(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        if let Some(fast) = &self.fast {
            return fast.value(x[0]);
        }
        self.history
            .iter()
            .map(|specs| specs.iter().map(|a| a.eval(x).max(0.0)).sum::<f64>())
            .sum()
    }

    /// Right derivative of the prefix penalty (1-D only).
    pub fn prefix_penalty_dplus(&self, x: f64) -> f64 {
        assert_eq!(self.dim, 1, "one-sided derivatives are one-dimensional");
        if let Some(fast) = &self.fast {
            return fast.deriv_plus(x);
        }
        self.generic_one_sided(x, true)
    }

    /// Left derivative of the prefix penalty (1-D only).
    pub fn prefix_penalty_dminus(&self, x: f64) -> f64 {
        assert_eq!(self.dim, 1, "one-sided derivatives are one-dimensional");
        if let Some(fast) = &self.fast {
            return fast.deriv_minus(x);
        }
        self.generic_one_sided(x, false)
    }

    fn generic_one_sided(&self, x: f64, plus: bool) -> f64 {
        let pt = [x];
        let mut acc = 0.0;
        for specs in &self.history {
            for a in specs {
                let v = a.eval(&pt);
                let d = a.deriv_1d(x);
                acc += one_sided_hinge(v, d, plus);
            }
        }
        acc
    }

    /// Value and a subgradient of the prefix penalty.
    pub fn prefix_penalty_with_subgrad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut value = 0.0;
        let mut grad = vec![0.0; self.dim];
        for specs in &self.history {
            for a in specs {
                let v = a.eval(x);
                if v > 0.0 {
                    value += v;
                    for (gd, ad) in grad.iter_mut().zip(a.grad(x)) {
                        *gd += ad;
                    }
                }
            }
        }
        (value, grad)
    }

    /// Largest prefix average over all stored prefixes and streams.
    pub fn max_prefix_average(&self, x: &[f64]) -> f64 {
        self.max_prefix_average_at(self.tau, x)
    }

    fn max_prefix_average_at(&self, prefix: usize, x: &[f64]) -> f64 {
        self.history[..prefix]
            .iter()
            .flat_map(|specs| specs.iter().map(|a| a.eval(x)))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Slater margin `η = -max_{i≤τ, j} (1/i) Σ_k g_k^{(j)}(z)`. Positive iff
    /// `z` is strictly feasible for every stored prefix average; +∞ for an
    /// empty state.
    pub fn slater_margin(&self, z: &[f64]) -> f64 {
        if self.tau == 0 {
            return f64::INFINITY;
        }
        -self.max_prefix_average(z)
    }

    /// Minimum number of active prefix-average constraints on the boundary
    /// of the prefix-feasible set, estimated on a uniform grid.
    pub fn estimate_k_tau(&self, domain: &BoxDomain, points_per_axis: usize) -> Result<usize> {
        self.estimate_k_tau_at(self.tau, domain, points_per_axis)
    }

    /// Same as [`estimate_k_tau`](Self::estimate_k_tau) for the state as it
    /// was after `prefix` rounds.
    pub fn estimate_k_tau_at(
        &self,
        prefix: usize,
        domain: &BoxDomain,
        points_per_axis: usize,
    ) -> Result<usize> {
        if prefix == 0 || prefix > self.tau {
            return Err(Error::InvalidSpec(format!(
                "prefix {prefix} outside stored range 1..={}",
                self.tau
            )));
        }
        if domain.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: domain.dim(),
            });
        }
        if self.dim > 2 {
            return Err(Error::GridDimension(self.dim));
        }
        let grid = GridPoints::new(domain, points_per_axis)?;
        let members: Vec<bool> = (0..grid.len())
            .map(|idx| self.max_prefix_average_at(prefix, &grid.point(idx)) <= MEMBER_TOL)
            .collect();
        let member_count = members.iter().filter(|b| **b).count();
        if member_count == 0 {
            return Err(Error::NoBoundary(
                "prefix-feasible set is empty on the grid".into(),
            ));
        }
        if member_count == grid.len() {
            return Err(Error::NoBoundary(
                "prefix-feasible set covers the whole box".into(),
            ));
        }
        // Boundary cells: a member point next to a non-member. The true
        // boundary lies inside the cell, so a constraint counts as active if
        // it is nonnegative (within tolerance) at either end of the cell.
        let mut k_min = usize::MAX;
        for idx in 0..grid.len() {
            if !members[idx] {
                continue;
            }
            let outside: Vec<usize> = grid
                .neighbors(idx)
                .into_iter()
                .filter(|n| !members[*n])
                .collect();
            if outside.is_empty() {
                continue;
            }
            let x = grid.point(idx);
            let neighbors: Vec<Vec<f64>> = outside.iter().map(|n| grid.point(*n)).collect();
            let mut active = 0usize;
            for specs in &self.history[..prefix] {
                for a in specs {
                    if a.eval(&x) >= -ACTIVE_TOL
                        || neighbors.iter().any(|nb| a.eval(nb) >= -ACTIVE_TOL)
                    {
                        active += 1;
                    }
                }
            }
            k_min = k_min.min(active);
        }
        debug_assert!(k_min >= 1 && k_min <= prefix * self.m);
        Ok(k_min)
    }
}

/// One-sided derivative of `x ↦ max{0, f(x)}` given the value and the
/// (one-sided) derivative of `f`.
pub fn one_sided_hinge(value: f64, deriv: f64, plus: bool) -> f64 {
    if value > 0.0 {
        deriv
    } else if value == 0.0 {
        if plus {
            deriv.max(0.0)
        } else {
            deriv.min(0.0)
        }
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Grid helper (1-D and 2-D, row-major)
// ---------------------------------------------------------------------------

/// Uniform lattice over a 1-D or 2-D box, row-major indexing.
pub struct GridPoints {
    axes: Vec<Vec<f64>>,
}

impl GridPoints {
    pub fn new(domain: &BoxDomain, points_per_axis: usize) -> Result<Self> {
        if domain.dim() > 2 {
            return Err(Error::GridDimension(domain.dim()));
        }
        if points_per_axis < 2 {
            return Err(Error::InvalidSpec(
                "grid needs at least two points per axis".into(),
            ));
        }
        let axes = domain
            .lower
            .iter()
            .zip(&domain.upper)
            .map(|(lo, up)| crate::model::linspace(*lo, *up, points_per_axis))
            .collect();
        Ok(GridPoints { axes })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points_per_axis(&self) -> usize {
        self.axes[0].len()
    }

    /// Point for a row-major index; lexicographic order in the coordinates.
    pub fn point(&self, idx: usize) -> Vec<f64> {
        match self.axes.len() {
            1 => vec![self.axes[0][idx]],
            2 => {
                let cols = self.axes[1].len();
                vec![self.axes[0][idx / cols], self.axes[1][idx % cols]]
            }
            _ => unreachable!(),
        }
    }

    /// Axis-adjacent neighbor indices.
    pub fn neighbors(&self, idx: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(4);
        match self.axes.len() {
            1 => {
                if idx > 0 {
                    out.push(idx - 1);
                }
                if idx + 1 < self.axes[0].len() {
                    out.push(idx + 1);
                }
            }
            2 => {
                let cols = self.axes[1].len();
                let (r, c) = (idx / cols, idx % cols);
                if r > 0 {
                    out.push(idx - cols);
                }
                if r + 1 < self.axes[0].len() {
                    out.push(idx + cols);
                }
                if c > 0 {
                    out.push(idx - 1);
                }
                if c + 1 < cols {
                    out.push(idx + 1);
                }
            }
            _ => unreachable!(),
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Certificates
// ---------------------------------------------------------------------------

/// Constants certifying the penalty-weight threshold `γ₀ = (E + L + 1)/β`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaCertificate {
    /// Regularizer gap constant.
    pub e: f64,
    /// Loss gap constant.
    pub l: f64,
    /// Slater margin at the certifying point.
    pub eta: f64,
    /// Penalty growth rate.
    pub beta: f64,
    /// Sampled `(τ, k_τ)` schedule used for `β`.
    pub k_schedule: Vec<(usize, usize)>,
    /// Settling time; taken as 0 in certificates.
    pub t_eps: usize,
    /// The threshold `(E + L + 1)/β`.
    pub gamma0: f64,
}

impl GammaCertificate {
    pub fn validate(&self) -> Result<()> {
        if self.beta <= 0.0 {
            return Err(Error::NonPositiveBeta(self.beta));
        }
        if self.eta <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "Slater margin must be positive, got {}",
                self.eta
            )));
        }
        let expect = (self.e + self.l + 1.0) / self.beta;
        if (self.gamma0 - expect).abs() > 1e-9 * expect.abs().max(1.0) {
            return Err(Error::InvalidSpec(
                "certificate threshold inconsistent".into(),
            ));
        }
        Ok(())
    }
}

/// Sufficient penalty weight `(E + L + 1)/β`; strictly decreasing in β and
/// increasing in E + L.
pub fn gamma_threshold(e: f64, l: f64, beta: f64) -> Result<f64> {
    if beta <= 0.0 {
        return Err(Error::NonPositiveBeta(beta));
    }
    Ok((e + l + 1.0) / beta)
}

/// Constants `E` and `L` for the threshold, anchored at a Slater point `z`:
/// `E = max_y ‖y‖² - ‖z‖²` (exact for the scaled square norm) and
/// `L = L_f · diam(D)`.
pub fn compute_e_l(instance: &ProblemInstance, z: &[f64]) -> Result<(f64, f64)> {
    if !instance.domain.contains(z, 1e-9) {
        return Err(Error::PointOutsideDomain);
    }
    let e = instance.regularizer.gap_constant(&instance.domain, z);
    let l = instance.loss_lipschitz() * instance.domain.diameter();
    Ok((e, l))
}
