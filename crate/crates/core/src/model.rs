//! Problem data: box domains, symbolic scalar functions, regularizers,
//! problem instances and run traces.
//!
//! Functions are kept symbolic (a small tagged union) rather than as opaque
//! callables so that values, subgradients and Lipschitz constants on a box
//! are exact, and so that sums of revealed functions stay closed under
//! addition.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::FamilySpec;

/// Axis-aligned box `{x : lower[d] <= x[d] <= upper[d]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = BoxDomain { lower, upper };
        b.validate()?;
        Ok(b)
    }

    /// Symmetric 1-D box `[-r, r]`.
    pub fn symmetric_1d(r: f64) -> Self {
        BoxDomain {
            lower: vec![-r],
            upper: vec![r],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(Error::InvalidDomain(format!(
                "bound lengths {} and {} must match and be positive",
                self.lower.len(),
                self.upper.len()
            )));
        }
        for (d, (lo, up)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !lo.is_finite() || !up.is_finite() {
                return Err(Error::InvalidDomain(format!(
                    "non-finite bound at axis {d}"
                )));
            }
            if lo >= up {
                return Err(Error::InvalidDomain(format!(
                    "lower[{d}] = {lo} must be strictly below upper[{d}] = {up}"
                )));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Euclidean length of the diagonal.
    pub fn diameter(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, up)| (up - lo) * (up - lo))
            .sum::<f64>()
            .sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, up)| 0.5 * (lo + up))
            .collect()
    }

    /// Euclidean projection (per-coordinate clamp).
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (lo, up))| v.clamp(*lo, *up))
            .collect()
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, up))| *v >= lo - tol && *v <= up + tol)
    }

    /// Largest squared Euclidean norm over the box (attained at a corner,
    /// computed coordinate-wise).
    pub fn max_sq_norm(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, up)| lo.abs().max(up.abs()).powi(2))
            .sum()
    }
}

/// Uniformly spaced grid over `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2, "need at least two grid points");
    let step = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|i| {
            if i + 1 == points {
                hi
            } else {
                lo + step * i as f64
            }
        })
        .collect()
}

/// Convex scalar function with exact evaluation, subgradients and box
/// Lipschitz constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScalarFunc {
    Affine {
        slope: Vec<f64>,
        intercept: f64,
    },
    Constant {
        value: f64,
    },
    QuadraticDiag {
        diag: Vec<f64>,
        linear: Vec<f64>,
        intercept: f64,
    },
}

impl ScalarFunc {
    pub fn affine_1d(slope: f64, intercept: f64) -> Self {
        ScalarFunc::Affine {
            slope: vec![slope],
            intercept,
        }
    }

    pub fn constant(value: f64) -> Self {
        ScalarFunc::Constant { value }
    }

    /// Dimension of the argument, if the variant pins one down.
    pub fn dim(&self) -> Option<usize> {
        match self {
            ScalarFunc::Affine { slope, .. } => Some(slope.len()),
            ScalarFunc::Constant { .. } => None,
            ScalarFunc::QuadraticDiag { diag, .. } => Some(diag.len()),
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            ScalarFunc::Affine { slope, intercept } => {
                if slope.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: slope.len(),
                    });
                }
                if slope.iter().any(|s| !s.is_finite()) || !intercept.is_finite() {
                    return Err(Error::InvalidSpec("non-finite affine coefficients".into()));
                }
            }
            ScalarFunc::Constant { value } => {
                if !value.is_finite() {
                    return Err(Error::InvalidSpec("non-finite constant".into()));
                }
            }
            ScalarFunc::QuadraticDiag {
                diag,
                linear,
                intercept,
            } => {
                if diag.len() != dim || linear.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        got: diag.len().max(linear.len()),
                    });
                }
                if diag.iter().any(|d| !d.is_finite() || *d < 0.0)
                    || linear.iter().any(|l| !l.is_finite())
                    || !intercept.is_finite()
                {
                    return Err(Error::InvalidSpec(
                        "quadratic diagonal must be finite and nonnegative".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self {
            ScalarFunc::Affine { slope, intercept } => {
                if slope.len() != x.len() {
                    return Err(Error::DimensionMismatch {
                        expected: slope.len(),
                        got: x.len(),
                    });
                }
                Ok(slope.iter().zip(x).map(|(s, v)| s * v).sum::<f64>() + intercept)
            }
            ScalarFunc::Constant { value } => Ok(*value),
            ScalarFunc::QuadraticDiag {
                diag,
                linear,
                intercept,
            } => {
                if diag.len() != x.len() {
                    return Err(Error::DimensionMismatch {
                        expected: diag.len(),
                        got: x.len(),
                    });
                }
                Ok(x.iter()
                    .zip(diag.iter().zip(linear))
                    .map(|(v, (d, l))| d * v * v + l * v)
                    .sum::<f64>()
                    + intercept)
            }
        }
    }

    /// A valid subgradient; the gradient wherever the variant is smooth.
    pub fn subgrad(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            ScalarFunc::Affine { slope, .. } => {
                if slope.len() != x.len() {
                    return Err(Error::DimensionMismatch {
                        expected: slope.len(),
                        got: x.len(),
                    });
                }
                Ok(slope.clone())
            }
            ScalarFunc::Constant { .. } => Ok(vec![0.0; x.len()]),
            ScalarFunc::QuadraticDiag { diag, linear, .. } => {
                if diag.len() != x.len() {
                    return Err(Error::DimensionMismatch {
                        expected: diag.len(),
                        got: x.len(),
                    });
                }
                Ok(x.iter()
                    .zip(diag.iter().zip(linear))
                    .map(|(v, (d, l))| 2.0 * d * v + l)
                    .collect())
            }
        }
    }

    /// Smallest Lipschitz constant on the box: the slope norm for affine
    /// variants, the largest gradient norm over the box for quadratics
    /// (exact because the gradient is separable per coordinate).
    pub fn lipschitz_on_box(&self, domain: &BoxDomain) -> f64 {
        match self {
            ScalarFunc::Affine { slope, .. } => norm(slope),
            ScalarFunc::Constant { .. } => 0.0,
            ScalarFunc::QuadraticDiag { diag, linear, .. } => diag
                .iter()
                .zip(linear)
                .zip(domain.lower.iter().zip(&domain.upper))
                .map(|((d, l), (lo, up))| {
                    let a = (2.0 * d * lo + l).abs();
                    let b = (2.0 * d * up + l).abs();
                    a.max(b).powi(2)
                })
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Same function with the intercept shifted by `delta`.
    pub fn shift_intercept(&self, delta: f64) -> ScalarFunc {
        match self {
            ScalarFunc::Affine { slope, intercept } => ScalarFunc::Affine {
                slope: slope.clone(),
                intercept: intercept + delta,
            },
            ScalarFunc::Constant { value } => ScalarFunc::Constant {
                value: value + delta,
            },
            ScalarFunc::QuadraticDiag {
                diag,
                linear,
                intercept,
            } => ScalarFunc::QuadraticDiag {
                diag: diag.clone(),
                linear: linear.clone(),
                intercept: intercept + delta,
            },
        }
    }
}

/// Closed-form sum of [`ScalarFunc`]s: `x ↦ Σ_d diag[d]·x[d]² + Σ_d linear[d]·x[d] + intercept`.
///
/// Sums of the three variants stay in this family, which is what makes
/// running constraint averages and summed losses O(1) to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuncSum {
    pub diag: Vec<f64>,
    pub linear: Vec<f64>,
    pub intercept: f64,
}

impl FuncSum {
    pub fn zeros(dim: usize) -> Self {
        FuncSum {
            diag: vec![0.0; dim],
            linear: vec![0.0; dim],
            intercept: 0.0,
        }
    }

    pub fn from_func(f: &ScalarFunc, dim: usize) -> Self {
        let mut s = FuncSum::zeros(dim);
        s.add_func(f);
        s
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn add_func(&mut self, f: &ScalarFunc) {
        match f {
            ScalarFunc::Affine { slope, intercept } => {
                for (l, s) in self.linear.iter_mut().zip(slope) {
                    *l += s;
                }
                self.intercept += intercept;
            }
            ScalarFunc::Constant { value } => self.intercept += value,
            ScalarFunc::QuadraticDiag {
                diag,
                linear,
                intercept,
            } => {
                for (a, b) in self.diag.iter_mut().zip(diag) {
                    *a += b;
                }
                for (a, b) in self.linear.iter_mut().zip(linear) {
                    *a += b;
                }
                self.intercept += intercept;
            }
        }
    }

    pub fn scaled(&self, factor: f64) -> FuncSum {
        FuncSum {
            diag: self.diag.iter().map(|d| d * factor).collect(),
            linear: self.linear.iter().map(|l| l * factor).collect(),
            intercept: self.intercept * factor,
        }
    }

    /// Coefficient-wise division. Preferred over `scaled(1/denom)` for
    /// running averages: `(τ·a)/τ` is exact where `τ·(1/τ)·a` is not.
    pub fn divided(&self, denom: f64) -> FuncSum {
        FuncSum {
            diag: self.diag.iter().map(|d| d / denom).collect(),
            linear: self.linear.iter().map(|l| l / denom).collect(),
            intercept: self.intercept / denom,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        x.iter()
            .zip(self.diag.iter().zip(&self.linear))
            .map(|(v, (d, l))| d * v * v + l * v)
            .sum::<f64>()
            + self.intercept
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim());
        x.iter()
            .zip(self.diag.iter().zip(&self.linear))
            .map(|(v, (d, l))| 2.0 * d * v + l)
            .collect()
    }

    /// Derivative for one-dimensional sums.
    pub fn deriv_1d(&self, x: f64) -> f64 {
        debug_assert_eq!(self.dim(), 1);
        2.0 * self.diag[0] * x + self.linear[0]
    }

    /// True when every quadratic coefficient is exactly zero.
    pub fn is_affine(&self) -> bool {
        self.diag.iter().all(|d| *d == 0.0)
    }

    pub fn lipschitz_on_box(&self, domain: &BoxDomain) -> f64 {
        self.diag
            .iter()
            .zip(&self.linear)
            .zip(domain.lower.iter().zip(&domain.upper))
            .map(|((d, l), (lo, up))| {
                let a = (2.0 * d * lo + l).abs();
                let b = (2.0 * d * up + l).abs();
                a.max(b).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Regularizer family. `ScaledSqNorm` is `R_τ(x) = √τ·‖x‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    #[default]
    ScaledSqNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerSpec {
    #[serde(default)]
    pub kind: RegularizerKind,
}

impl RegularizerSpec {
    pub fn scaled_sq_norm() -> Self {
        RegularizerSpec {
            kind: RegularizerKind::ScaledSqNorm,
        }
    }

    pub fn eval(&self, tau: usize, x: &[f64]) -> f64 {
        let sq: f64 = x.iter().map(|v| v * v).sum();
        (tau as f64).sqrt() * sq
    }

    pub fn grad(&self, tau: usize, x: &[f64]) -> Vec<f64> {
        let s = 2.0 * (tau as f64).sqrt();
        x.iter().map(|v| s * v).collect()
    }

    /// Strong-convexity modulus `σ_τ = 2√τ` of `R_τ`.
    pub fn strong_convexity(&self, tau: usize) -> f64 {
        2.0 * (tau as f64).sqrt()
    }

    /// Constant `E = max_y ‖y‖² − ‖z‖²` over the box. For the scaled square
    /// norm the per-step gap `(R_i(y) − R_i(z))/i = (1/√i)(‖y‖² − ‖z‖²)` is
    /// largest at `i = 1`, so this dominates every step.
    pub fn gap_constant(&self, domain: &BoxDomain, z: &[f64]) -> f64 {
        let zsq: f64 = z.iter().map(|v| v * v).sum();
        domain.max_sq_norm() - zsq
    }
}

/// Loss sequence specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LossSpec {
    /// Same loss every round.
    TimeInvariant(ScalarFunc),
    /// Cycles through the list: `f_τ = seq[(τ-1) mod len]`.
    Cycle(Vec<ScalarFunc>),
}

impl LossSpec {
    pub fn at(&self, tau: usize) -> &ScalarFunc {
        debug_assert!(tau >= 1);
        match self {
            LossSpec::TimeInvariant(f) => f,
            LossSpec::Cycle(seq) => &seq[(tau - 1) % seq.len()],
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            LossSpec::TimeInvariant(f) => f.validate(dim),
            LossSpec::Cycle(seq) => {
                if seq.is_empty() {
                    return Err(Error::InvalidSpec("empty loss cycle".into()));
                }
                seq.iter().try_for_each(|f| f.validate(dim))
            }
        }
    }

    /// Uniform Lipschitz bound over every loss in the sequence.
    pub fn lipschitz_bound(&self, domain: &BoxDomain) -> f64 {
        match self {
            LossSpec::TimeInvariant(f) => f.lipschitz_on_box(domain),
            LossSpec::Cycle(seq) => seq
                .iter()
                .map(|f| f.lipschitz_on_box(domain))
                .fold(0.0, f64::max),
        }
    }
}

/// A full problem instance: domain, loss sequence, constraint generator,
/// regularizer and default penalty weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemInstance {
    pub domain: BoxDomain,
    pub losses: LossSpec,
    pub constraints: FamilySpec,
    #[serde(default)]
    pub regularizer: RegularizerSpec,
    /// Default penalty weight; an algorithm config may override it.
    pub gamma: f64,
}

impl ProblemInstance {
    pub fn new(
        domain: BoxDomain,
        losses: LossSpec,
        constraints: FamilySpec,
        regularizer: RegularizerSpec,
        gamma: f64,
    ) -> Result<Self> {
        let inst = ProblemInstance {
            domain,
            losses,
            constraints,
            regularizer,
            gamma,
        };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        let n = self.domain.dim();
        self.losses.validate(n)?;
        self.constraints.validate(n)?;
        if self.constraints.streams.is_empty() {
            return Err(Error::InvalidSpec(
                "need at least one constraint stream".into(),
            ));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "penalty weight must be finite and nonnegative, got {}",
                self.gamma
            )));
        }
        Ok(())
    }

    /// Number of constraint streams (`m`).
    pub fn m(&self) -> usize {
        self.constraints.streams.len()
    }

    /// Uniform Lipschitz bound `L_f` over the loss sequence.
    pub fn loss_lipschitz(&self) -> f64 {
        self.losses.lipschitz_bound(&self.domain)
    }

    /// Uniform Lipschitz bound `L_g` over every constraint any stream can emit.
    pub fn constraint_lipschitz(&self) -> f64 {
        self.constraints.lipschitz_bound(&self.domain)
    }
}

/// Record of one run: per-step actions, losses, penalties, raw constraint
/// values, duals and cumulative metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub algorithm: String,
    pub seed: u64,
    pub config_digest: String,
    /// Set on algorithm variants that are conjectural rather than analyzed.
    pub experimental: bool,
    /// Final penalty weight in effect (adaptive schedules may grow it).
    pub gamma_used: f64,
    pub actions: Vec<Vec<f64>>,
    /// `f_i(x_i)` per round.
    pub loss_values: Vec<f64>,
    /// `h_i(x_i)` per round (running-average hinge penalty).
    pub penalty_values: Vec<f64>,
    /// `g_i^{(j)}(x_i)` per round, inner index over streams.
    pub constraint_values: Vec<Vec<f64>>,
    /// Dual variables per round; empty for penalty-based algorithms.
    pub duals: Vec<Vec<f64>>,
    /// Cumulative `Σ_{i≤τ} h_i(x_i)`.
    pub violation_h: Vec<f64>,
    /// Cumulative `Σ_j max{0, Σ_{i≤τ} g_i^{(j)}(x_i)}`.
    pub violation_sum: Vec<f64>,
    /// Cumulative regret against a benchmark point, attached once the
    /// benchmark is known.
    pub regret: Option<Vec<f64>>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Check the trace invariants: equal series lengths, nonnegative
    /// penalties, actions inside the box (1e-9 projection tolerance).
    pub fn validate(&self, domain: &BoxDomain) -> Result<()> {
        let t = self.len();
        let same = self.loss_values.len() == t
            && self.penalty_values.len() == t
            && self.constraint_values.len() == t
            && self.violation_h.len() == t
            && self.violation_sum.len() == t
            && (self.duals.is_empty() || self.duals.len() == t)
            && self.regret.as_ref().is_none_or(|r| r.len() == t);
        if !same {
            return Err(Error::InvalidSpec("trace series lengths differ".into()));
        }
        for (i, h) in self.penalty_values.iter().enumerate() {
            if !h.is_finite() || *h < 0.0 {
                return Err(Error::NonFinite { round: i + 1 });
            }
        }
        for (i, x) in self.actions.iter().enumerate() {
            if !domain.contains(x, 1e-9) {
                return Err(Error::AtRound {
                    round: i + 1,
                    source: Box::new(Error::PointOutsideDomain),
                });
            }
        }
        Ok(())
    }
}
