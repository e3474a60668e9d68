//! Run-matrix execution: seeded runs across algorithms, sweep variants,
//! seeds and horizons, with CSV traces and a structured JSON report.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use pftrl_core::algorithms::{
    fnv1a64, ftl_penalty_only, run_penalized_ftrl, run_primal_dual, run_primal_dual_averaged,
    AlgorithmKind,
};
use pftrl_core::generators::{
    analyze_streams, check_condition2, generate_round, AnalysisParams, ConditionReport, FamilySpec,
};
use pftrl_core::metrics::{compute_benchmarks, emit_csv, regret, trace_to_csv};
use pftrl_core::penalty::{compute_e_l, gamma_threshold, GammaCertificate, PenaltyState};
use pftrl_core::Error as CoreError;

use crate::config::{AlgorithmSettings, ExperimentConfig, GammaMode};

/// One cell of the run matrix.
#[derive(Debug, Clone)]
pub struct RunJob {
    pub algorithm: AlgorithmSettings,
    pub c_label: String,
    pub streams: FamilySpec,
    pub seed: u64,
    pub horizon: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub c_label: String,
    pub seed: u64,
    pub horizon: usize,
    pub gamma_used: f64,
    pub gamma_source: String,
    pub csv_file: String,
    pub csv_digest: String,
    pub run_digest: String,
    pub final_regret: f64,
    pub final_violation_h: f64,
    pub final_violation_sum: f64,
    pub benchmark_best_point: Vec<f64>,
    pub benchmark_best_value: f64,
    pub containment_ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateSummary {
    pub c_label: String,
    pub seed: u64,
    pub valid: bool,
    pub certificate: Option<GammaCertificate>,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionSummary {
    pub c_label: String,
    pub seed: u64,
    pub horizon: usize,
    pub report: ConditionReport,
}

#[derive(Debug, Serialize)]
pub struct ExperimentReport {
    pub experiment: String,
    pub config_digest: String,
    pub grid_points: usize,
    pub runs: Vec<RunSummary>,
    pub certificates: Vec<CertificateSummary>,
    pub conditions: Vec<ConditionSummary>,
}

pub struct RunnerOptions {
    pub output_dir: PathBuf,
    pub grid_points: usize,
    pub dry_run: bool,
    pub threads: usize,
}

pub fn digest_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

/// Assemble the full run matrix in deterministic order.
pub fn build_jobs(config: &ExperimentConfig) -> Vec<RunJob> {
    let mut jobs = Vec::new();
    for algorithm in &config.algorithms {
        for (c_label, streams) in config.stream_variants() {
            for &seed in &config.seeds {
                for &horizon in &config.horizons {
                    jobs.push(RunJob {
                        algorithm: algorithm.clone(),
                        c_label: c_label.clone(),
                        streams: streams.clone(),
                        seed,
                        horizon,
                    });
                }
            }
        }
    }
    jobs
}

pub fn csv_file_name(
    experiment: &str,
    algo: AlgorithmKind,
    c_label: &str,
    seed: u64,
    horizon: usize,
    multiple_horizons: bool,
) -> String {
    let base = format!("{experiment}_{}_c{c_label}_seed{seed}", algo.slug());
    if multiple_horizons {
        format!("{base}_t{horizon}.csv")
    } else {
        format!("{base}.csv")
    }
}

/// Compute the certificate-backed penalty weight for a stream variant, by
/// replaying a probe prefix and searching the candidate grid.
fn certificate_for(
    config: &ExperimentConfig,
    streams: &FamilySpec,
    seed: u64,
) -> CertificateSummary {
    let probe_horizon = 512.min(*config.horizons.iter().max().unwrap());
    let mut state = PenaltyState::new(config.domain.dim(), streams.m());
    for tau in 1..=probe_horizon {
        if state
            .push_constraints(&generate_round(streams, tau as u64, seed))
            .is_err()
        {
            break;
        }
    }
    let grid = config.grid_points.min(201);
    let c_label = String::new();
    match check_condition2(&state, &config.domain, grid, grid) {
        Ok(cond2) if cond2.verdict => {
            let instance = config.instance(streams.clone(), 0.0);
            match compute_e_l(&instance, &cond2.z_star)
                .and_then(|(e, l)| gamma_threshold(e, l, cond2.beta).map(|g| (e, l, g)))
            {
                Ok((e, l, gamma0)) => CertificateSummary {
                    c_label,
                    seed,
                    valid: true,
                    certificate: Some(GammaCertificate {
                        e,
                        l,
                        eta: cond2.eta,
                        beta: cond2.beta,
                        k_schedule: cond2.k_schedule,
                        t_eps: 0,
                        gamma0,
                    }),
                    note: format!("probe horizon {probe_horizon}"),
                },
                Err(e) => CertificateSummary {
                    c_label,
                    seed,
                    valid: false,
                    certificate: None,
                    note: format!("threshold failed: {e}"),
                },
            }
        }
        Ok(cond2) => CertificateSummary {
            c_label,
            seed,
            valid: false,
            certificate: None,
            note: format!(
                "growth condition failed (eta {:.4}, beta {:.4})",
                cond2.eta, cond2.beta
            ),
        },
        Err(e) => CertificateSummary {
            c_label,
            seed,
            valid: false,
            certificate: None,
            note: format!("check failed: {e}"),
        },
    }
}

fn execute_job(
    config: &ExperimentConfig,
    job: &RunJob,
    options: &RunnerOptions,
    certificate: &CertificateSummary,
) -> Result<RunSummary, String> {
    let fail = |stage: &str, e: CoreError| {
        format!(
            "{} c={} seed={} t={}: {stage}: {e}",
            job.algorithm.kind.slug(),
            job.c_label,
            job.seed,
            job.horizon
        )
    };

    // Resolve the penalty weight.
    let (gamma, gamma_source) = match config.gamma_mode {
        GammaMode::Fixed | GammaMode::Adaptive => (
            job.algorithm.gamma.unwrap_or(0.0),
            format!("{:?}", config.gamma_mode).to_lowercase(),
        ),
        GammaMode::Certificate => match &certificate.certificate {
            Some(cert) => (1.1 * cert.gamma0, "certificate".to_string()),
            None => (
                job.algorithm.gamma.unwrap_or(0.0),
                "fallback_fixed".to_string(),
            ),
        },
    };

    let instance = config.instance(job.streams.clone(), gamma);
    let algo_config = config.algorithm_config(&job.algorithm, job.horizon, job.seed, gamma);
    let mut trace = match job.algorithm.kind {
        AlgorithmKind::PenalizedFtrl => run_penalized_ftrl(&instance, &algo_config),
        AlgorithmKind::PrimalDual => run_primal_dual(&instance, &algo_config),
        AlgorithmKind::PrimalDualAveraged => run_primal_dual_averaged(&instance, &algo_config),
        AlgorithmKind::FtlPenaltyOnly => {
            ftl_penalty_only(&instance, &algo_config, options.grid_points)
        }
    }
    .map_err(|e| fail("run", e))?;
    trace
        .validate(&instance.domain)
        .map_err(|e| fail("trace invariants", e))?;

    let bench = compute_benchmarks(&instance, job.seed, job.horizon, options.grid_points)
        .map_err(|e| fail("benchmarks", e))?;
    let r = regret(&trace, &instance.losses, &bench.best_point).map_err(|e| fail("regret", e))?;
    trace.regret = Some(r);

    let multiple = config.horizons.len() > 1;
    let file = csv_file_name(
        &config.experiment,
        job.algorithm.kind,
        &job.c_label,
        job.seed,
        job.horizon,
        multiple,
    );
    let csv = trace_to_csv(&trace);
    let path = options.output_dir.join(&file);
    emit_csv(&trace, &path).map_err(|e| fail("write", e))?;

    Ok(RunSummary {
        algorithm: job.algorithm.kind.slug().to_string(),
        c_label: job.c_label.clone(),
        seed: job.seed,
        horizon: job.horizon,
        gamma_used: trace.gamma_used.max(gamma),
        gamma_source,
        csv_file: file,
        csv_digest: digest_hex(csv.as_bytes()),
        run_digest: trace.config_digest.clone(),
        final_regret: trace
            .regret
            .as_ref()
            .unwrap()
            .last()
            .copied()
            .unwrap_or(0.0),
        final_violation_h: trace.violation_h.last().copied().unwrap_or(0.0),
        final_violation_sum: trace.violation_sum.last().copied().unwrap_or(0.0),
        benchmark_best_point: bench.best_point.clone(),
        benchmark_best_value: bench.best_value,
        containment_ok: bench.containment_holds(),
    })
}

/// Execute every job on a bounded worker pool; results keep matrix order.
pub fn run_experiment(
    config: &ExperimentConfig,
    raw_config: &str,
    options: &RunnerOptions,
) -> Result<ExperimentReport, Vec<String>> {
    let jobs = build_jobs(config);
    let config_digest = digest_hex(raw_config.as_bytes());

    if options.dry_run {
        println!(
            "dry run: {} jobs for experiment `{}` (digest {config_digest})",
            jobs.len(),
            config.experiment
        );
        for job in &jobs {
            println!(
                "  {} c={} seed={} t={}",
                job.algorithm.kind.slug(),
                job.c_label,
                job.seed,
                job.horizon
            );
        }
        return Ok(ExperimentReport {
            experiment: config.experiment.clone(),
            config_digest,
            grid_points: options.grid_points,
            runs: Vec::new(),
            certificates: Vec::new(),
            conditions: Vec::new(),
        });
    }

    fs::create_dir_all(&options.output_dir).map_err(|e| {
        vec![format!(
            "cannot create {}: {e}",
            options.output_dir.display()
        )]
    })?;

    // Certificates per stream variant (first seed as the probe stream).
    let probe_seed = config.seeds[0];
    let mut certificates = Vec::new();
    for (c_label, streams) in config.stream_variants() {
        let mut cert = certificate_for(config, &streams, probe_seed);
        cert.c_label = c_label;
        certificates.push(cert);
    }

    let results: Mutex<Vec<Option<Result<RunSummary, String>>>> =
        Mutex::new(vec![None; jobs.len()]);
    let cursor = AtomicUsize::new(0);
    let workers = options.threads.clamp(1, jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = cursor.fetch_add(1, Ordering::Relaxed);
                if idx >= jobs.len() {
                    break;
                }
                let job = &jobs[idx];
                let cert = certificates
                    .iter()
                    .find(|c| c.c_label == job.c_label)
                    .expect("certificate per variant");
                let outcome = execute_job(config, job, options, cert);
                results.lock().unwrap()[idx] = Some(outcome);
            });
        }
    });

    let mut runs = Vec::with_capacity(jobs.len());
    let mut errors = Vec::new();
    for outcome in results.into_inner().unwrap() {
        match outcome.expect("every job executed") {
            Ok(summary) => runs.push(summary),
            Err(e) => errors.push(e),
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }

    let conditions = condition_reports(config, options)?;

    Ok(ExperimentReport {
        experiment: config.experiment.clone(),
        config_digest,
        grid_points: options.grid_points,
        runs,
        certificates,
        conditions,
    })
}

/// Condition reports per (variant, seed) at the largest horizon; used by
/// both `run` and `verify`.
pub fn condition_reports(
    config: &ExperimentConfig,
    options: &RunnerOptions,
) -> Result<Vec<ConditionSummary>, Vec<String>> {
    let horizon = *config.horizons.iter().max().unwrap();
    let params_for = |seed: u64| AnalysisParams {
        horizon,
        seed,
        grid_points: options.grid_points.min(401),
        epsilon: config.condition_epsilon,
        t0: config.condition_t0,
        kappa_override: config.kappa,
        partition_reference: (horizon / 4).max(1),
    };
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (c_label, streams) in config.stream_variants() {
        for &seed in &config.seeds {
            match analyze_streams(&streams, &config.domain, &params_for(seed)) {
                Ok(report) => out.push(ConditionSummary {
                    c_label: c_label.clone(),
                    seed,
                    horizon,
                    report,
                }),
                Err(e) => errors.push(format!("conditions c={c_label} seed={seed}: {e}")),
            }
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(errors)
    }
}

pub fn write_report(report: &ExperimentReport, path: &Path) -> Result<(), String> {
    let body =
        serde_json::to_string_pretty(report).map_err(|e| format!("serialize report: {e}"))?;
    fs::write(path, body).map_err(|e| format!("write {}: {e}", path.display()))
}
