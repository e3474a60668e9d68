//! Inner minimization of the per-round objective.
//!
//! The per-round objective `R_τ(x) + Σ_i f_i(x) + γ Σ_i h_i(x)` is convex,
//! strongly convex through the regularizer, and nonsmooth through the hinge
//! terms. In one dimension we bisect on the subdifferential, which handles
//! kinks exactly and certifies the gap from one-sided derivatives at the
//! bracket ends. In higher dimensions we run a projected subgradient method
//! with averaging and certify through strong convexity.

use crate::error::{Error, Result};
use crate::model::{BoxDomain, FuncSum, RegularizerSpec, ScalarFunc};
use crate::penalty::{one_sided_hinge, PenaltyState};

/// Outcome of a certified minimization.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub minimizer: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Upper bound on `objective(minimizer) − min`.
    pub certified_gap: f64,
}

/// One-dimensional convex function with exact one-sided derivatives.
pub trait Convex1d {
    fn value(&self, x: f64) -> f64;
    fn deriv_plus(&self, x: f64) -> f64;
    fn deriv_minus(&self, x: f64) -> f64;
}

/// Convex function with a subgradient oracle.
pub trait ConvexNd {
    fn value(&self, x: &[f64]) -> f64;
    fn subgrad(&self, x: &[f64]) -> Vec<f64>;
}

// ---------------------------------------------------------------------------
// 1-D: bisection on the subdifferential
// ---------------------------------------------------------------------------

/// Minimize a convex function on `[lo, hi]` by bisecting on the sign of the
/// subdifferential. Terminates early when a point with `0 ∈ ∂f` is hit, and
/// otherwise certifies `f(x̂) − min ≤ min(|d⁺(a)|, |d⁻(b)|)·(b − a)` from the
/// current bracket.
pub fn minimize_1d<F: Convex1d>(
    f: &F,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iters: usize,
) -> Result<SolveReport> {
    assert!(lo < hi, "empty interval");
    let d_lo = f.deriv_plus(lo);
    if d_lo >= 0.0 {
        return Ok(SolveReport {
            minimizer: vec![lo],
            value: f.value(lo),
            iterations: 0,
            certified_gap: 0.0,
        });
    }
    let d_hi = f.deriv_minus(hi);
    if d_hi <= 0.0 {
        return Ok(SolveReport {
            minimizer: vec![hi],
            value: f.value(hi),
            iterations: 0,
            certified_gap: 0.0,
        });
    }

    let mut a = lo;
    let mut b = hi;
    let mut da = d_lo; // d⁺(a) < 0
    let mut db = d_hi; // d⁻(b) > 0
    let mut iters = 0usize;
    loop {
        let width = b - a;
        let cert = (-da).min(db) * width;
        if cert <= tol {
            break;
        }
        // Bracket has collapsed to float resolution without certifying.
        let wmin = 4.0 * f64::EPSILON * a.abs().max(b.abs()).max(1.0);
        if width <= wmin || iters >= max_iters {
            let (x, _) = better_end(f, a, b);
            return Err(Error::SolverStalled {
                tol,
                gap: cert,
                iterations: iters,
                best: vec![x],
            });
        }
        let mid = 0.5 * (a + b);
        let dm_minus = f.deriv_minus(mid);
        let dm_plus = f.deriv_plus(mid);
        iters += 1;
        if dm_minus <= 0.0 && dm_plus >= 0.0 {
            return Ok(SolveReport {
                minimizer: vec![mid],
                value: f.value(mid),
                iterations: iters,
                certified_gap: 0.0,
            });
        }
        if dm_plus < 0.0 {
            a = mid;
            da = dm_plus;
        } else {
            b = mid;
            db = dm_minus;
        }
    }
    let cert = (-da).min(db) * (b - a);
    let (x, value) = better_end(f, a, b);
    Ok(SolveReport {
        minimizer: vec![x],
        value,
        iterations: iters,
        certified_gap: cert,
    })
}

fn better_end<F: Convex1d>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let va = f.value(a);
    let vb = f.value(b);
    if va <= vb {
        (a, va)
    } else {
        (b, vb)
    }
}

// ---------------------------------------------------------------------------
// n-D: projected subgradient with averaging
// ---------------------------------------------------------------------------

/// Certified gap from strong convexity: for any subgradient `g` at `x`,
/// `f(x) − min ≤ −min_{x+d ∈ D} (⟨g, d⟩ + σ/2·‖d‖²)`, and the inner
/// minimization separates per coordinate on a box.
pub fn strong_convexity_gap(g: &[f64], x: &[f64], domain: &BoxDomain, sigma: f64) -> f64 {
    debug_assert!(sigma > 0.0);
    let mut bound = 0.0;
    for d in 0..x.len() {
        let lo = domain.lower[d] - x[d];
        let hi = domain.upper[d] - x[d];
        let free = -g[d] / sigma;
        let step = free.clamp(lo, hi);
        bound -= g[d] * step + 0.5 * sigma * step * step;
    }
    bound.max(0.0)
}

/// Projected subgradient descent with step `2/(σ(k+1))` and weighted
/// averaging, for σ-strongly convex objectives over a box.
pub fn minimize_nd<F: ConvexNd>(
    f: &F,
    domain: &BoxDomain,
    sigma: f64,
    tol: f64,
    max_iters: usize,
    warm_start: Option<&[f64]>,
) -> Result<SolveReport> {
    if sigma <= 0.0 {
        return Err(Error::InvalidSpec(
            "subgradient solver needs a strongly convex objective".into(),
        ));
    }
    let mut x = match warm_start {
        Some(w) => domain.project(w),
        None => domain.center(),
    };
    let mut avg = x.clone();
    let mut best = SolveReport {
        minimizer: x.clone(),
        value: f.value(&x),
        iterations: 0,
        certified_gap: f64::INFINITY,
    };
    for k in 1..=max_iters {
        for (point, label) in [(&x, 0u8), (&avg, 1u8)] {
            let g = f.subgrad(point);
            let cert = strong_convexity_gap(&g, point, domain, sigma);
            if cert < best.certified_gap {
                best = SolveReport {
                    minimizer: point.clone(),
                    value: f.value(point),
                    iterations: k,
                    certified_gap: cert,
                };
            }
            let _ = label;
        }
        if best.certified_gap <= tol {
            return Ok(best);
        }
        let g = f.subgrad(&x);
        let step = 2.0 / (sigma * (k + 1) as f64);
        for d in 0..x.len() {
            x[d] -= step * g[d];
        }
        x = domain.project(&x);
        // Weighted average with weights ∝ k.
        let w = 2.0 / (k + 2) as f64;
        for d in 0..avg.len() {
            avg[d] = (1.0 - w) * avg[d] + w * x[d];
        }
    }
    if best.certified_gap <= tol {
        Ok(best)
    } else {
        Err(Error::SolverStalled {
            tol,
            gap: best.certified_gap,
            iterations: max_iters,
            best: best.minimizer,
        })
    }
}

// ---------------------------------------------------------------------------
// Grid oracle
// ---------------------------------------------------------------------------

/// Exhaustive minimum over a uniform lattice; ties break to the
/// lexicographically smallest point. Verification oracle for 1-D and 2-D.
pub fn grid_minimize<F: Fn(&[f64]) -> f64>(
    f: F,
    domain: &BoxDomain,
    points_per_axis: usize,
) -> Result<(Vec<f64>, f64)> {
    if domain.dim() > 2 {
        return Err(Error::GridDimension(domain.dim()));
    }
    let grid = crate::penalty::GridPoints::new(domain, points_per_axis)?;
    let mut best_idx = 0usize;
    let mut best_val = f64::INFINITY;
    for idx in 0..grid.len() {
        let v = f(&grid.point(idx));
        if v < best_val {
            best_val = v;
            best_idx = idx;
        }
    }
    Ok((grid.point(best_idx), best_val))
}

// ---------------------------------------------------------------------------
// FTRL round objective
// ---------------------------------------------------------------------------

/// `R_τ(x) + Σ_{i≤τ} f_i(x) + γ·Σ_{i≤τ} h_i(x)`.
pub struct FtrlObjective<'a> {
    pub tau: usize,
    pub regularizer: &'a RegularizerSpec,
    pub loss_sum: &'a FuncSum,
    pub gamma: f64,
    pub penalty: &'a PenaltyState,
}

impl FtrlObjective<'_> {
    pub fn sigma(&self) -> f64 {
        self.regularizer.strong_convexity(self.tau)
    }
}

impl Convex1d for FtrlObjective<'_> {
    fn value(&self, x: f64) -> f64 {
        let pt = [x];
        self.regularizer.eval(self.tau, &pt)
            + self.loss_sum.eval(&pt)
            + self.gamma * self.penalty.eval_prefix_penalty(&pt)
    }

    fn deriv_plus(&self, x: f64) -> f64 {
        2.0 * (self.tau as f64).sqrt() * x
            + self.loss_sum.deriv_1d(x)
            + self.gamma * self.penalty.prefix_penalty_dplus(x)
    }

    fn deriv_minus(&self, x: f64) -> f64 {
        2.0 * (self.tau as f64).sqrt() * x
            + self.loss_sum.deriv_1d(x)
            + self.gamma * self.penalty.prefix_penalty_dminus(x)
    }
}

impl ConvexNd for FtrlObjective<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        self.regularizer.eval(self.tau, x)
            + self.loss_sum.eval(x)
            + self.gamma * self.penalty.eval_prefix_penalty(x)
    }

    fn subgrad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.regularizer.grad(self.tau, x);
        for (gd, ld) in g.iter_mut().zip(self.loss_sum.grad(x)) {
            *gd += ld;
        }
        let (_, pg) = self.penalty.prefix_penalty_with_subgrad(x);
        for (gd, pd) in g.iter_mut().zip(pg) {
            *gd += self.gamma * pd;
        }
        g
    }
}

/// Solve one FTRL round to tolerance. One dimension bisects on the
/// subdifferential; higher dimensions run the projected subgradient method.
pub fn solve_ftrl_round(
    objective: &FtrlObjective<'_>,
    domain: &BoxDomain,
    tol: f64,
    warm_start: Option<&[f64]>,
) -> Result<SolveReport> {
    if domain.dim() == 1 {
        minimize_1d(objective, domain.lower[0], domain.upper[0], tol, 1_000_000)
    } else {
        minimize_nd(
            objective,
            domain,
            objective.sigma(),
            tol,
            1_000_000,
            warm_start,
        )
    }
}

// ---------------------------------------------------------------------------
// Static penalized objective: f(x) + γ Σ_j max{0, g_j(x)}
// ---------------------------------------------------------------------------

/// Penalized form of a static constrained problem.
pub struct PenalizedObjective<'a> {
    pub f: &'a ScalarFunc,
    pub constraints: &'a [ScalarFunc],
    pub gamma: f64,
}

impl PenalizedObjective<'_> {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut v = self.f.eval(x).expect("dimension checked by caller");
        for g in self.constraints {
            v += self.gamma * g.eval(x).expect("dimension checked by caller").max(0.0);
        }
        v
    }

    /// One-sided directional derivative along `v` at `x`.
    fn dir_deriv(&self, x: &[f64], v: &[f64], plus: bool) -> f64 {
        let dot = |grad: &[f64]| grad.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        let mut d = dot(&self.f.subgrad(x).expect("dimension checked"));
        for g in self.constraints {
            let gv = g.eval(x).expect("dimension checked");
            let gd = dot(&g.subgrad(x).expect("dimension checked"));
            d += self.gamma * one_sided_hinge(gv, gd, plus);
        }
        d
    }
}

impl Convex1d for PenalizedObjective<'_> {
    fn value(&self, x: f64) -> f64 {
        self.eval(&[x])
    }

    fn deriv_plus(&self, x: f64) -> f64 {
        self.dir_deriv(&[x], &[1.0], true)
    }

    fn deriv_minus(&self, x: f64) -> f64 {
        // Left derivative equals the right directional derivative along -1,
        // negated.
        -self.dir_deriv(&[x], &[-1.0], true)
    }
}

/// Restriction of a penalized objective to the segment `p + t·v`, `t ∈ [0, span]`.
struct SegmentObjective<'a> {
    obj: &'a PenalizedObjective<'a>,
    p: Vec<f64>,
    v: Vec<f64>,
}

impl SegmentObjective<'_> {
    fn point(&self, t: f64) -> Vec<f64> {
        self.p.iter().zip(&self.v).map(|(p, v)| p + t * v).collect()
    }
}

impl Convex1d for SegmentObjective<'_> {
    fn value(&self, t: f64) -> f64 {
        self.obj.eval(&self.point(t))
    }

    fn deriv_plus(&self, t: f64) -> f64 {
        self.obj.dir_deriv(&self.point(t), &self.v, true)
    }

    fn deriv_minus(&self, t: f64) -> f64 {
        -self.obj.dir_deriv(
            &self.point(t),
            &self.v.iter().map(|v| -v).collect::<Vec<_>>(),
            true,
        )
    }
}

/// Minimize `f + γ Σ_j max{0, g_j}` over the box.
///
/// One dimension bisects directly. Two dimensions enumerate the candidate
/// set on which a convex piecewise objective attains its box minimum: the
/// clamped stationary point of every hinge-sign region, the restriction to
/// every kink line `g_j = 0`, pairwise kink intersections, box edges and box
/// corners. Two-dimensional constraints must be affine (or constant) so kink
/// sets are lines.
pub fn minimize_penalized(
    obj: &PenalizedObjective<'_>,
    domain: &BoxDomain,
    tol: f64,
) -> Result<SolveReport> {
    match domain.dim() {
        1 => minimize_1d(obj, domain.lower[0], domain.upper[0], tol, 1_000_000),
        2 => minimize_penalized_2d(obj, domain, tol),
        n => Err(Error::Unsupported(format!(
            "static penalized solve supports 1-D and 2-D boxes, got {n}-D"
        ))),
    }
}

fn affine_parts(g: &ScalarFunc) -> Result<(Vec<f64>, f64)> {
    match g {
        ScalarFunc::Affine { slope, intercept } => Ok((slope.clone(), *intercept)),
        ScalarFunc::Constant { value } => Ok((vec![0.0, 0.0], *value)),
        ScalarFunc::QuadraticDiag { .. } => Err(Error::Unsupported(
            "two-dimensional penalized solve needs affine constraints".into(),
        )),
    }
}

fn minimize_penalized_2d(
    obj: &PenalizedObjective<'_>,
    domain: &BoxDomain,
    tol: f64,
) -> Result<SolveReport> {
    let lines: Vec<(Vec<f64>, f64)> = obj
        .constraints
        .iter()
        .map(affine_parts)
        .collect::<Result<_>>()?;

    let mut candidates: Vec<Vec<f64>> = Vec::new();
    let mut max_cert: f64 = 0.0;
    let mut iterations = 0usize;

    // Box corners.
    for &x0 in &[domain.lower[0], domain.upper[0]] {
        for &x1 in &[domain.lower[1], domain.upper[1]] {
            candidates.push(vec![x0, x1]);
        }
    }

    // Region-wise clamped stationary points: within a fixed sign pattern the
    // objective is a diagonal quadratic plus affine terms, separable per
    // coordinate.
    let m = obj.constraints.len();
    for mask in 0..(1u32 << m) {
        let mut sum = FuncSum::from_func(obj.f, 2);
        for (j, line) in lines.iter().enumerate() {
            if mask & (1 << j) != 0 {
                sum.add_func(&ScalarFunc::Affine {
                    slope: line.0.iter().map(|s| s * obj.gamma).collect(),
                    intercept: line.1 * obj.gamma,
                });
            }
        }
        let mut point = Vec::with_capacity(2);
        for d in 0..2 {
            let (lo, hi) = (domain.lower[d], domain.upper[d]);
            let x = if sum.diag[d] > 0.0 {
                (-sum.linear[d] / (2.0 * sum.diag[d])).clamp(lo, hi)
            } else if sum.linear[d] > 0.0 {
                lo
            } else if sum.linear[d] < 0.0 {
                hi
            } else {
                lo
            };
            point.push(x);
        }
        candidates.push(point);
    }

    // Pairwise kink intersections.
    for j in 0..m {
        for k in (j + 1)..m {
            let (a, b) = (&lines[j], &lines[k]);
            let det = a.0[0] * b.0[1] - a.0[1] * b.0[0];
            if det.abs() > 1e-12 {
                let x0 = (-a.1 * b.0[1] + b.1 * a.0[1]) / det;
                let x1 = (-b.1 * a.0[0] + a.1 * b.0[0]) / det;
                if domain.contains(&[x0, x1], 1e-9) {
                    candidates.push(vec![x0, x1]);
                }
            }
        }
    }

    // 1-D restrictions: kink lines clipped to the box, and the four edges.
    let mut segments: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new(); // (p, v, span)
    for line in &lines {
        if let Some(seg) = clip_line_to_box(&line.0, line.1, domain) {
            segments.push(seg);
        }
    }
    for d in 0..2 {
        let o = 1 - d;
        for &fixed in &[domain.lower[d], domain.upper[d]] {
            let mut p = vec![0.0, 0.0];
            p[d] = fixed;
            p[o] = domain.lower[o];
            let mut v = vec![0.0, 0.0];
            v[o] = 1.0;
            segments.push((p, v, domain.upper[o] - domain.lower[o]));
        }
    }
    for (p, v, span) in segments {
        if span <= 0.0 {
            continue;
        }
        let seg = SegmentObjective {
            obj,
            p: p.clone(),
            v: v.clone(),
        };
        let report = minimize_1d(&seg, 0.0, span, tol, 1_000_000)?;
        iterations += report.iterations;
        max_cert = max_cert.max(report.certified_gap);
        candidates.push(seg.point(report.minimizer[0]));
    }

    // Evaluate all candidates; lexicographic tie-break.
    let mut best: Option<(Vec<f64>, f64)> = None;
    for c in candidates {
        let c = domain.project(&c);
        let v = obj.eval(&c);
        best = match best {
            None => Some((c, v)),
            Some((bx, bv)) => {
                if v < bv - 1e-15 || ((v - bv).abs() <= 1e-15 && lex_less(&c, &bx)) {
                    Some((c, v))
                } else {
                    Some((bx, bv))
                }
            }
        };
    }
    let (minimizer, value) = best.expect("candidate set is never empty");
    Ok(SolveReport {
        minimizer,
        value,
        iterations,
        certified_gap: max_cert,
    })
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Clip the line `⟨s, x⟩ + c = 0` to the box; returns `(p, v, span)` with the
/// segment `p + t·v`, `t ∈ [0, span]`, `‖v‖ = 1`.
fn clip_line_to_box(s: &[f64], c: f64, domain: &BoxDomain) -> Option<(Vec<f64>, Vec<f64>, f64)> {
    let norm = (s[0] * s[0] + s[1] * s[1]).sqrt();
    if norm <= 1e-12 {
        return None;
    }
    // Direction along the line, point closest to origin on it.
    let v = vec![-s[1] / norm, s[0] / norm];
    let p0 = [-c * s[0] / (norm * norm), -c * s[1] / (norm * norm)];
    // Intersect p0 + t·v with the box: per-axis t-interval.
    let mut t_lo = f64::NEG_INFINITY;
    let mut t_hi = f64::INFINITY;
    for d in 0..2 {
        if v[d].abs() > 1e-15 {
            let a = (domain.lower[d] - p0[d]) / v[d];
            let b = (domain.upper[d] - p0[d]) / v[d];
            t_lo = t_lo.max(a.min(b));
            t_hi = t_hi.min(a.max(b));
        } else if p0[d] < domain.lower[d] || p0[d] > domain.upper[d] {
            return None;
        }
    }
    if t_lo >= t_hi {
        return None;
    }
    let p = vec![p0[0] + t_lo * v[0], p0[1] + t_lo * v[1]];
    Some((p, v, t_hi - t_lo))
}
