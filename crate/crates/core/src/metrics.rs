//! Regret, violation and benchmark-set geometry, plus the CSV trace format.
//!
//! Three nested benchmark sets are computed on a shared lattice, so the
//! containment `X_min ⊆ X̂_max ⊆ X_max` is exact per grid point:
//!   - `X_min`: feasible for every revealed constraint at every step,
//!   - `X̂_max`: feasible for every prefix average,
//!   - `X_max`: feasible for the horizon average.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::generators::generate_round;
use crate::model::{FuncSum, LossSpec, ProblemInstance, RunTrace};
use crate::penalty::GridPoints;

/// Feasibility tolerance on the `≤ 0` tests.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Benchmark-set membership masks on a shared lattice.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkSets {
    pub points_per_axis: usize,
    pub horizon: usize,
    /// Mask over the row-major lattice: feasible at every step.
    pub x_min: Vec<bool>,
    /// Feasible for every prefix average.
    pub x_hat_max: Vec<bool>,
    /// Feasible for the horizon average.
    pub x_max: Vec<bool>,
    /// Loss-minimizing point of the middle set (lexicographic tie-break).
    pub best_point: Vec<f64>,
    /// Cumulative loss of the best point over the horizon.
    pub best_value: f64,
}

/// Compute the three benchmark masks and the best benchmark point for the
/// constraint stream that `(instance, seed)` generates.
pub fn compute_benchmarks(
    instance: &ProblemInstance,
    seed: u64,
    horizon: usize,
    points_per_axis: usize,
) -> Result<BenchmarkSets> {
    let domain = &instance.domain;
    let grid = GridPoints::new(domain, points_per_axis)?;
    let m = instance.m();

    // Materialize the stream once.
    let mut rounds = Vec::with_capacity(horizon);
    for tau in 1..=horizon {
        rounds.push(generate_round(&instance.constraints, tau as u64, seed));
    }
    let mut loss_sum = FuncSum::zeros(domain.dim());
    for tau in 1..=horizon {
        loss_sum.add_func(instance.losses.at(tau));
    }

    let p = grid.len();
    let mut x_min = vec![false; p];
    let mut x_hat = vec![false; p];
    let mut x_max = vec![false; p];
    // First prefix at which each point leaves the prefix-feasible set.
    let mut first_violation = vec![usize::MAX; p];

    for idx in 0..p {
        let x = grid.point(idx);
        let mut cum = vec![0.0f64; m];
        let mut worst_single = f64::NEG_INFINITY;
        let mut worst_avg = f64::NEG_INFINITY;
        for (i, g_round) in rounds.iter().enumerate() {
            let step = i + 1;
            let mut avg_here = f64::NEG_INFINITY;
            for (j, g) in g_round.iter().enumerate() {
                let v = g.eval(&x)?;
                worst_single = worst_single.max(v);
                cum[j] += v;
                avg_here = avg_here.max(cum[j] / step as f64);
            }
            if avg_here > FEASIBILITY_TOL && first_violation[idx] == usize::MAX {
                first_violation[idx] = step;
            }
            worst_avg = worst_avg.max(avg_here);
        }
        let final_avg = cum
            .iter()
            .map(|c| c / horizon as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        x_min[idx] = worst_single <= FEASIBILITY_TOL;
        x_hat[idx] = worst_avg <= FEASIBILITY_TOL;
        x_max[idx] = final_avg <= FEASIBILITY_TOL;
    }

    if !x_hat.iter().any(|b| *b) {
        let first_infeasible = first_violation.iter().copied().max().unwrap_or(1);
        return Err(Error::EmptyBenchmark { first_infeasible });
    }

    let mut best_idx = usize::MAX;
    let mut best_value = f64::INFINITY;
    for (idx, feasible) in x_hat.iter().enumerate() {
        if !feasible {
            continue;
        }
        let v = loss_sum.eval(&grid.point(idx));
        if v < best_value {
            best_value = v;
            best_idx = idx;
        }
    }

    Ok(BenchmarkSets {
        points_per_axis,
        horizon,
        x_min,
        x_hat_max: x_hat,
        x_max,
        best_point: grid.point(best_idx),
        best_value,
    })
}

impl BenchmarkSets {
    /// Exact mask containment `X_min ⊆ X̂_max ⊆ X_max`.
    pub fn containment_holds(&self) -> bool {
        self.x_min
            .iter()
            .zip(&self.x_hat_max)
            .zip(&self.x_max)
            .all(|((a, b), c)| (!a || *b) && (!b || *c))
    }
}

/// Cumulative regret series `R_τ = Σ_{i≤τ} (f_i(x_i) − f_i(y))`.
pub fn regret(trace: &RunTrace, losses: &LossSpec, y: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(trace.len());
    let mut acc = 0.0;
    for (i, loss_at_action) in trace.loss_values.iter().enumerate() {
        acc += loss_at_action - losses.at(i + 1).eval(y)?;
        out.push(acc);
    }
    Ok(out)
}

/// Both violation series, recomputed from the stored per-round values:
/// `V_h(τ) = Σ_{i≤τ} h_i(x_i)` and
/// `V_sum(τ) = Σ_j max{0, Σ_{i≤τ} g_i^{(j)}(x_i)}`.
pub fn violation(trace: &RunTrace) -> (Vec<f64>, Vec<f64>) {
    let t = trace.len();
    let mut v_h = Vec::with_capacity(t);
    let mut v_sum = Vec::with_capacity(t);
    let m = trace.constraint_values.first().map_or(0, |g| g.len());
    let mut acc_h = 0.0;
    let mut cum = vec![0.0f64; m];
    for i in 0..t {
        acc_h += trace.penalty_values[i];
        v_h.push(acc_h);
        for (c, g) in cum.iter_mut().zip(&trace.constraint_values[i]) {
            *c += g;
        }
        v_sum.push(cum.iter().map(|c| c.max(0.0)).sum());
    }
    (v_h, v_sum)
}

/// 17-significant-digit float formatting; parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serialize a trace to the CSV layout `t,x,f,lambda,h_inst,V_h,V_sum,R`.
/// Vector-valued columns join coordinates with `;`; the dual and regret
/// columns are empty when the trace carries none.
pub fn trace_to_csv(trace: &RunTrace) -> String {
    let mut out = String::with_capacity(64 * (trace.len() + 1));
    out.push_str("t,x,f,lambda,h_inst,V_h,V_sum,R\n");
    for i in 0..trace.len() {
        let x = trace.actions[i]
            .iter()
            .map(|v| fmt_f64(*v))
            .collect::<Vec<_>>()
            .join(";");
        let lambda = if trace.duals.is_empty() {
            String::new()
        } else {
            trace.duals[i]
                .iter()
                .map(|v| fmt_f64(*v))
                .collect::<Vec<_>>()
                .join(";")
        };
        let r = trace
            .regret
            .as_ref()
            .map_or(String::new(), |r| fmt_f64(r[i]));
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            i + 1,
            x,
            fmt_f64(trace.loss_values[i]),
            lambda,
            fmt_f64(trace.penalty_values[i]),
            fmt_f64(trace.violation_h[i]),
            fmt_f64(trace.violation_sum[i]),
            r
        ));
    }
    out
}

/// Write the CSV trace to disk; byte output is deterministic for fixed
/// inputs.
pub fn emit_csv(trace: &RunTrace, path: &Path) -> Result<()> {
    fs::write(path, trace_to_csv(trace)).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{FamilySpec, OffsetLaw, StreamSpec};
    use crate::model::{BoxDomain, RegularizerSpec, ScalarFunc};

    fn toy_trace() -> RunTrace {
        RunTrace {
            algorithm: "penalized_ftrl".into(),
            seed: 1,
            config_digest: "deadbeef".into(),
            experimental: false,
            gamma_used: 25.0,
            actions: vec![vec![0.0], vec![1.0], vec![2.0]],
            loss_values: vec![0.0, -2.0, -4.0],
            penalty_values: vec![0.0, 1.0, 2.0],
            constraint_values: vec![vec![0.0], vec![1.0], vec![2.0]],
            duals: vec![],
            violation_h: vec![0.0, 1.0, 3.0],
            violation_sum: vec![0.0, 1.0, 3.0],
            regret: None,
        }
    }

    #[test]
    fn csv_row_count_and_empty_lambda() {
        let csv = trace_to_csv(&toy_trace());
        let lines: Vec<&str> = csv.trim_end().split('\n').collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("t,x,"));
        // λ and R columns are empty strings for this trace.
        let fields: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(fields.len(), 8);
        assert_eq!(fields[3], "");
        assert_eq!(fields[7], "");
    }

    #[test]
    fn csv_round_trips_exactly() {
        let mut trace = toy_trace();
        trace.regret = Some(vec![0.25, -1.5, 3.0e-17]);
        let csv = trace_to_csv(&trace);
        for (i, line) in csv.trim_end().split('\n').skip(1).enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            assert_eq!(fields[0].parse::<usize>().unwrap(), i + 1);
            assert_eq!(fields[1].parse::<f64>().unwrap(), trace.actions[i][0]);
            assert_eq!(fields[2].parse::<f64>().unwrap(), trace.loss_values[i]);
            assert_eq!(
                fields[7].parse::<f64>().unwrap(),
                trace.regret.as_ref().unwrap()[i]
            );
        }
    }

    #[test]
    fn regret_arithmetic() {
        let losses = LossSpec::TimeInvariant(ScalarFunc::affine_1d(-2.0, 0.0));
        let mut trace = toy_trace();
        trace.actions = vec![vec![0.0]; 10];
        trace.loss_values = vec![0.0; 10];
        trace.penalty_values = vec![0.0; 10];
        trace.constraint_values = vec![vec![0.0]; 10];
        trace.violation_h = vec![0.0; 10];
        trace.violation_sum = vec![0.0; 10];
        let r = regret(&trace, &losses, &[1.0]).unwrap();
        assert!((r[9] - 20.0).abs() < 1e-12);

        // Negative regret when the actions beat the benchmark.
        let mut trace10 = trace.clone();
        trace10.loss_values = vec![-20.0; 10];
        let r = regret(&trace10, &losses, &[0.0]).unwrap();
        assert!((r[9] + 200.0).abs() < 1e-12);

        // Actions equal to the benchmark give identically zero regret.
        let r = regret(&trace, &losses, &[0.0]).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn violation_series_from_stored_values() {
        let trace = toy_trace();
        let (v_h, v_sum) = violation(&trace);
        assert_eq!(v_h, vec![0.0, 1.0, 3.0]);
        assert_eq!(v_sum, vec![0.0, 1.0, 3.0]);

        // A round of g = -5 pulls the sum definition down but not V_h.
        let mut t = toy_trace();
        t.constraint_values = vec![vec![1.0], vec![-5.0], vec![1.0]];
        let (v_h, v_sum) = violation(&t);
        assert_eq!(v_h, vec![0.0, 1.0, 3.0]);
        assert_eq!(v_sum[1], 0.0);
        assert_eq!(v_sum[2], 0.0);

        // Constant unit violation: g(x) = x with actions pinned at 1 makes
        // both definitions count t.
        let rounds = 10;
        let mut pinned = toy_trace();
        pinned.actions = vec![vec![1.0]; rounds];
        pinned.loss_values = vec![0.0; rounds];
        pinned.penalty_values = vec![1.0; rounds];
        pinned.constraint_values = vec![vec![1.0]; rounds];
        pinned.violation_h = (1..=rounds).map(|i| i as f64).collect();
        pinned.violation_sum = pinned.violation_h.clone();
        let (v_h, v_sum) = violation(&pinned);
        for i in 0..rounds {
            assert_eq!(v_h[i], (i + 1) as f64);
            assert_eq!(v_sum[i], (i + 1) as f64);
        }
    }

    #[test]
    fn emit_surfaces_io_errors_with_path() {
        let trace = toy_trace();
        let bad = Path::new("/definitely/not/a/dir/trace.csv");
        match emit_csv(&trace, bad) {
            Err(Error::Io { path, .. }) => assert!(path.contains("not/a/dir")),
            other => panic!("expected io error, got {other:?}"),
        }
    }

    fn instance_with(constraints: FamilySpec) -> ProblemInstance {
        ProblemInstance::new(
            BoxDomain::symmetric_1d(10.0),
            LossSpec::TimeInvariant(ScalarFunc::affine_1d(-2.0, 0.0)),
            constraints,
            RegularizerSpec::scaled_sq_norm(),
            25.0,
        )
        .unwrap()
    }

    #[test]
    fn time_invariant_benchmarks_coincide() {
        let instance = instance_with(FamilySpec::single_time_invariant(ScalarFunc::affine_1d(
            1.0, 0.0,
        )));
        let b = compute_benchmarks(&instance, 1, 50, 201).unwrap();
        assert!(b.containment_holds());
        assert_eq!(b.x_min, b.x_hat_max);
        assert_eq!(b.x_hat_max, b.x_max);
        // Best point of −2x over x ≤ 0 is x = 0.
        assert_eq!(b.best_point, vec![0.0]);
    }

    #[test]
    fn shrinking_threshold_stream_separates_the_sets() {
        // g_i(x) = x − 1/√i: the pointwise set shrinks like 1/√t while the
        // prefix-average set stays strictly larger.
        let stream = StreamSpec::Perturbed {
            base: ScalarFunc::affine_1d(1.0, 0.0),
            offsets: OffsetLaw::InverseSqrt { scale: -1.0 },
            upper_bound: 0.0,
        };
        let instance = instance_with(FamilySpec::new(vec![stream]));
        let t = 400;
        let b = compute_benchmarks(&instance, 1, t, 2001).unwrap();
        assert!(b.containment_holds());
        let grid = GridPoints::new(&instance.domain, 2001).unwrap();
        let edge = 1.0 / (t as f64).sqrt();
        for idx in 0..grid.len() {
            let x = grid.point(idx)[0];
            let expect = x <= edge + FEASIBILITY_TOL;
            assert_eq!(b.x_min[idx], expect, "x = {x}");
        }
        let hat_count = b.x_hat_max.iter().filter(|m| **m).count();
        let min_count = b.x_min.iter().filter(|m| **m).count();
        assert!(hat_count > min_count);
    }

    #[test]
    fn infeasible_stream_reports_first_bad_prefix() {
        let instance = instance_with(FamilySpec::single_time_invariant(ScalarFunc::constant(1.0)));
        match compute_benchmarks(&instance, 1, 10, 101) {
            Err(Error::EmptyBenchmark { first_infeasible }) => assert_eq!(first_infeasible, 1),
            other => panic!("expected empty benchmark error, got {other:?}"),
        }
    }
}
