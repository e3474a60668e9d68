//! Online algorithms: the penalized FTRL loop, primal-dual baselines, the
//! follow-the-leader reference on the penalty alone, and the static
//! exact-penalty solver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::generate_round;
use crate::model::{BoxDomain, FuncSum, ProblemInstance, RunTrace, ScalarFunc};
use crate::penalty::PenaltyState;
use crate::solver::{
    grid_minimize, minimize_1d, minimize_penalized, solve_ftrl_round, Convex1d, FtrlObjective,
    PenalizedObjective,
};

/// Which update rule a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmKind {
    PenalizedFtrl,
    PrimalDual,
    PrimalDualAveraged,
    FtlPenaltyOnly,
}

impl AlgorithmKind {
    pub fn slug(&self) -> &'static str {
        match self {
            AlgorithmKind::PenalizedFtrl => "penalized_ftrl",
            AlgorithmKind::PrimalDual => "primal_dual",
            AlgorithmKind::PrimalDualAveraged => "primal_dual_averaged",
            AlgorithmKind::FtlPenaltyOnly => "ftl_penalty_only",
        }
    }
}

/// Grow-then-freeze schedule for the penalty weight: double on every round
/// whose new iterate carries prefix penalty above the tolerance, freeze after
/// 100 consecutive clean rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveGamma {
    pub cap: f64,
}

/// Per-run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    pub kind: AlgorithmKind,
    /// Penalty weight; falls back to the instance default when absent.
    pub gamma: Option<f64>,
    /// Step-size scale `a` in `α_t = a/√t` for the primal-dual updates.
    pub step_scale: f64,
    pub horizon: usize,
    pub seed: u64,
    pub solver_tol: f64,
    pub adaptive_gamma: Option<AdaptiveGamma>,
}

impl AlgorithmConfig {
    pub fn new(kind: AlgorithmKind, horizon: usize, seed: u64) -> Self {
        AlgorithmConfig {
            kind,
            gamma: None,
            step_scale: 5.0,
            horizon,
            seed,
            solver_tol: 1e-9,
            adaptive_gamma: None,
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::InvalidSpec("horizon must be at least 1".into()));
        }
        if let Some(g) = self.gamma {
            if !g.is_finite() || g < 0.0 {
                return Err(Error::InvalidSpec(format!("penalty weight {g} invalid")));
            }
        }
        if !self.step_scale.is_finite() || self.step_scale <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "step scale must be positive, got {}",
                self.step_scale
            )));
        }
        if !self.solver_tol.is_finite() || self.solver_tol < 1e-12 {
            return Err(Error::InvalidSpec(format!(
                "solver tolerance must be at least 1e-12, got {}",
                self.solver_tol
            )));
        }
        Ok(())
    }
}

fn config_digest(instance: &ProblemInstance, config: &AlgorithmConfig) -> String {
    format!(
        "{:016x}",
        fnv1a64(format!("{instance:?}|{config:?}").as_bytes())
    )
}

/// FNV-1a, 64-bit. Used for cheap content digests.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Per-round bookkeeping shared by the run loops.
struct TraceBuilder {
    trace: RunTrace,
    cum_h: f64,
    cum_g: Vec<f64>,
}

impl TraceBuilder {
    fn new(kind: AlgorithmKind, config: &AlgorithmConfig, digest: String, m: usize) -> Self {
        let t = config.horizon;
        TraceBuilder {
            trace: RunTrace {
                algorithm: kind.slug().to_string(),
                seed: config.seed,
                config_digest: digest,
                experimental: kind == AlgorithmKind::PrimalDualAveraged,
                gamma_used: 0.0,
                actions: Vec::with_capacity(t),
                loss_values: Vec::with_capacity(t),
                penalty_values: Vec::with_capacity(t),
                constraint_values: Vec::with_capacity(t),
                duals: Vec::new(),
                violation_h: Vec::with_capacity(t),
                violation_sum: Vec::with_capacity(t),
                regret: None,
            },
            cum_h: 0.0,
            cum_g: vec![0.0; m],
        }
    }

    fn record(&mut self, x: &[f64], loss: f64, h: f64, g_vals: Vec<f64>, lambda: Option<&[f64]>) {
        self.cum_h += h;
        for (acc, g) in self.cum_g.iter_mut().zip(&g_vals) {
            *acc += g;
        }
        let v_sum: f64 = self.cum_g.iter().map(|c| c.max(0.0)).sum();
        self.trace.actions.push(x.to_vec());
        self.trace.loss_values.push(loss);
        self.trace.penalty_values.push(h);
        self.trace.constraint_values.push(g_vals);
        self.trace.violation_h.push(self.cum_h);
        self.trace.violation_sum.push(v_sum);
        if let Some(l) = lambda {
            self.trace.duals.push(l.to_vec());
        }
    }
}

// ---------------------------------------------------------------------------
// Penalized FTRL
// ---------------------------------------------------------------------------

/// Run the penalized FTRL loop: commit the action, reveal the round's loss
/// and constraints, then pick the next action as the minimizer of
/// `R_τ(x) + Σ_{i≤τ}(f_i(x) + γ h_i(x))` over the box. The first action is
/// the box center.
pub fn run_penalized_ftrl(
    instance: &ProblemInstance,
    config: &AlgorithmConfig,
) -> Result<RunTrace> {
    config.validate()?;
    instance.validate()?;
    let domain = &instance.domain;
    let m = instance.m();
    let mut gamma = config.gamma.unwrap_or(instance.gamma);
    let mut builder = TraceBuilder::new(
        AlgorithmKind::PenalizedFtrl,
        config,
        config_digest(instance, config),
        m,
    );

    let mut x = domain.center();
    let mut penalty = PenaltyState::new(domain.dim(), m);
    let mut loss_sum = FuncSum::zeros(domain.dim());
    let mut clean_streak = 0usize;
    let mut frozen = config.adaptive_gamma.is_none();

    for tau in 1..=config.horizon {
        let f_tau = instance.losses.at(tau);
        let g_tau = generate_round(&instance.constraints, tau as u64, config.seed);

        let loss = f_tau.eval(&x).map_err(|e| e.at_round(tau))?;
        let g_vals = g_tau
            .iter()
            .map(|g| g.eval(&x))
            .collect::<Result<Vec<f64>>>()
            .map_err(|e| e.at_round(tau))?;
        penalty
            .push_constraints(&g_tau)
            .map_err(|e| e.at_round(tau))?;
        let h = penalty.eval_h(&x).map_err(|e| e.at_round(tau))?;
        builder.record(&x, loss, h, g_vals, None);

        loss_sum.add_func(f_tau);
        let objective = FtrlObjective {
            tau,
            regularizer: &instance.regularizer,
            loss_sum: &loss_sum,
            gamma,
            penalty: &penalty,
        };
        let report = solve_ftrl_round(&objective, domain, config.solver_tol, Some(&x))
            .map_err(|e| e.at_round(tau))?;
        let next = domain.project(&report.minimizer);

        if let Some(adaptive) = config.adaptive_gamma {
            if !frozen {
                if penalty.eval_prefix_penalty(&next) > 1e-6 {
                    gamma = (gamma * 2.0).min(adaptive.cap).max(1.0);
                    clean_streak = 0;
                } else {
                    clean_streak += 1;
                    if clean_streak >= 100 {
                        frozen = true;
                    }
                }
            }
        }
        x = next;
    }

    builder.trace.gamma_used = gamma;
    Ok(builder.trace)
}

// ---------------------------------------------------------------------------
// Primal-dual baselines
// ---------------------------------------------------------------------------

fn run_primal_dual_impl(
    instance: &ProblemInstance,
    config: &AlgorithmConfig,
    averaged: bool,
) -> Result<RunTrace> {
    config.validate()?;
    instance.validate()?;
    let domain = &instance.domain;
    let n = domain.dim();
    let m = instance.m();
    let kind = if averaged {
        AlgorithmKind::PrimalDualAveraged
    } else {
        AlgorithmKind::PrimalDual
    };
    let mut builder = TraceBuilder::new(kind, config, config_digest(instance, config), m);

    let mut x = domain.center();
    let mut lambda = vec![0.0; m];
    let mut penalty = PenaltyState::new(n, m);

    for t in 1..=config.horizon {
        let f_t = instance.losses.at(t);
        let g_t = generate_round(&instance.constraints, t as u64, config.seed);

        let loss = f_t.eval(&x).map_err(|e| e.at_round(t))?;
        let g_vals = g_t
            .iter()
            .map(|g| g.eval(&x))
            .collect::<Result<Vec<f64>>>()
            .map_err(|e| e.at_round(t))?;
        penalty.push_constraints(&g_t).map_err(|e| e.at_round(t))?;
        let h = penalty.eval_h(&x).map_err(|e| e.at_round(t))?;
        builder.record(&x, loss, h, g_vals, Some(&lambda));

        // Constraint surrogates for this round: the revealed functions, or
        // their running averages for the conjectured variant.
        let surrogates: Vec<FuncSum> = if averaged {
            (0..m)
                .map(|j| penalty.current_average(j))
                .collect::<Result<_>>()
                .map_err(|e| e.at_round(t))?
        } else {
            g_t.iter().map(|g| FuncSum::from_func(g, n)).collect()
        };

        let alpha = config.step_scale / (t as f64).sqrt();
        let mut step_dir = f_t.subgrad(&x).map_err(|e| e.at_round(t))?;
        for (j, s) in surrogates.iter().enumerate() {
            for (d, sg) in step_dir.iter_mut().zip(s.grad(&x)) {
                *d += lambda[j] * sg;
            }
        }
        let moved: Vec<f64> = x
            .iter()
            .zip(&step_dir)
            .map(|(v, d)| v - alpha * d)
            .collect();
        let x_next = domain.project(&moved);
        for (j, s) in surrogates.iter().enumerate() {
            lambda[j] = (lambda[j] + alpha * s.eval(&x_next)).max(0.0);
            if !lambda[j].is_finite() {
                return Err(Error::NonFinite { round: t });
            }
        }
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { round: t });
        }
        x = x_next;
    }

    Ok(builder.trace)
}

/// Canonical projected primal-dual iteration with step `α_t = a/√t`:
/// `x_{t+1} = Π_D(x_t − α_t(∂f_t + Σ_j λ_t^j ∂g_t^j))`,
/// `λ_{t+1}^j = [λ_t^j + α_t g_t^j(x_{t+1})]⁺`, starting from the box center
/// and zero duals.
pub fn run_primal_dual(instance: &ProblemInstance, config: &AlgorithmConfig) -> Result<RunTrace> {
    run_primal_dual_impl(instance, config, false)
}

/// Experimental variant: the instantaneous constraints are replaced by their
/// running averages in both the primal and dual steps.
pub fn run_primal_dual_averaged(
    instance: &ProblemInstance,
    config: &AlgorithmConfig,
) -> Result<RunTrace> {
    run_primal_dual_impl(instance, config, true)
}

// ---------------------------------------------------------------------------
// Follow-the-leader on the penalty alone
// ---------------------------------------------------------------------------

struct PrefixPenaltyObjective<'a> {
    penalty: &'a PenaltyState,
}

impl Convex1d for PrefixPenaltyObjective<'_> {
    fn value(&self, x: f64) -> f64 {
        self.penalty.eval_prefix_penalty(&[x])
    }
    fn deriv_plus(&self, x: f64) -> f64 {
        self.penalty.prefix_penalty_dplus(x)
    }
    fn deriv_minus(&self, x: f64) -> f64 {
        self.penalty.prefix_penalty_dminus(x)
    }
}

/// Follow-the-leader on the prefix penalty: after round τ is revealed,
/// `w_{τ+1} ∈ argmin_D Σ_{i≤τ} h_i(x)`. The trace stores `w_{i+1}` as the
/// round-i action and `h_i(w_{i+1})` as its penalty, so the cumulative
/// penalty series is the be-the-leader sum.
pub fn ftl_penalty_only(
    instance: &ProblemInstance,
    config: &AlgorithmConfig,
    grid_points: usize,
) -> Result<RunTrace> {
    config.validate()?;
    instance.validate()?;
    let domain = &instance.domain;
    let n = domain.dim();
    let m = instance.m();
    let mut builder = TraceBuilder::new(
        AlgorithmKind::FtlPenaltyOnly,
        config,
        config_digest(instance, config),
        m,
    );
    let mut penalty = PenaltyState::new(n, m);

    for tau in 1..=config.horizon {
        let g_tau = generate_round(&instance.constraints, tau as u64, config.seed);
        penalty
            .push_constraints(&g_tau)
            .map_err(|e| e.at_round(tau))?;
        let w = if n == 1 {
            let obj = PrefixPenaltyObjective { penalty: &penalty };
            minimize_1d(
                &obj,
                domain.lower[0],
                domain.upper[0],
                config.solver_tol,
                1_000_000,
            )
            .map_err(|e| e.at_round(tau))?
            .minimizer
        } else if n == 2 {
            grid_minimize(|x| penalty.eval_prefix_penalty(x), domain, grid_points)
                .map_err(|e| e.at_round(tau))?
                .0
        } else {
            return Err(Error::Unsupported(format!(
                "follow-the-leader supports 1-D and 2-D, got {n}-D"
            )));
        };

        let loss = instance
            .losses
            .at(tau)
            .eval(&w)
            .map_err(|e| e.at_round(tau))?;
        let g_vals = g_tau
            .iter()
            .map(|g| g.eval(&w))
            .collect::<Result<Vec<f64>>>()
            .map_err(|e| e.at_round(tau))?;
        let h = penalty.eval_h(&w).map_err(|e| e.at_round(tau))?;
        builder.record(&w, loss, h, g_vals, None);
    }
    Ok(builder.trace)
}

// ---------------------------------------------------------------------------
// Static exact penalty
// ---------------------------------------------------------------------------

/// Solve `min f(x) s.t. g_j(x) ≤ 0` over the box by exact penalization.
///
/// The weight starts from an empirically clamped version of the finite
/// threshold (the optimal value is approximated on a coarse grid) and is
/// doubled, at most 20 times, until the penalized minimizer is feasible to
/// `1e-6`. Returns the minimizer and the weight that produced it.
pub fn exact_penalty_static_solve(
    f: &ScalarFunc,
    constraints: &[ScalarFunc],
    domain: &BoxDomain,
    z: &[f64],
) -> Result<(Vec<f64>, f64)> {
    f.validate(domain.dim())?;
    for g in constraints {
        g.validate(domain.dim())?;
    }
    if !domain.contains(z, 1e-9) {
        return Err(Error::PointOutsideDomain);
    }
    let mut worst = f64::NEG_INFINITY;
    for (j, g) in constraints.iter().enumerate() {
        let v = g.eval(z)?;
        if v >= 0.0 {
            return Err(Error::NotSlater { index: j, value: v });
        }
        worst = worst.max(v);
    }
    let f_z = f.eval(z)?;

    // Coarse estimate of the constrained optimum for the threshold.
    let coarse = 201;
    let mut f_star = f_z;
    {
        let grid = crate::penalty::GridPoints::new(domain, coarse)?;
        for idx in 0..grid.len() {
            let x = grid.point(idx);
            if constraints
                .iter()
                .all(|g| g.eval(&x).map(|v| v <= 0.0).unwrap_or(false))
            {
                f_star = f_star.min(f.eval(&x)?);
            }
        }
    }

    let margin = worst.abs();
    let mut gamma = (1.1 * (f_star - f_z - 1.0).abs() / margin).max(1.0);
    for _ in 0..=20 {
        let obj = PenalizedObjective {
            f,
            constraints,
            gamma,
        };
        let report = minimize_penalized(&obj, domain, 1e-9)?;
        let x = domain.project(&report.minimizer);
        let violation = constraints
            .iter()
            .map(|g| g.eval(&x).unwrap_or(f64::INFINITY).max(0.0))
            .fold(0.0, f64::max);
        if violation <= 1e-6 {
            return Ok((x, gamma));
        }
        gamma *= 2.0;
    }
    Err(Error::PenaltyNotExact { gamma })
}
