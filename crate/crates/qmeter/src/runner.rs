//! Scenario orchestration: config in, artifacts plus report out.
//!
//! Every scenario follows the same shape: build objects from the
//! config (failures here are config errors), run the numerics
//! (failures here are numerical), push named checks into the report,
//! and write byte-deterministic artifacts. Thread count changes wall
//! time only; all parallel reductions inside the library are
//! order-fixed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, KernelConfig, Scenario};
use crate::dynamics::{InitialState, ObjectModel};
use crate::kernels::ReductionKernel;
use crate::linalg::symmetric_eigen;
use crate::report::{CheckResult, Exclusion, RunReport};
use crate::sequence::{MeasurementSchedule, MomentReport};
use crate::sme::{SmeEngine, PURITY_CEILING};
use crate::spectra::{
    analytic_spectrum, periodogram, quantum_limit_scan, relative_band_rms, simulate_record,
    SpectrumTable, StationaryBudget, WelchConfig,
};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    /// Bad experiment description discovered after parsing (model or
    /// kernel unusable for the scenario). Exits like a config error.
    #[error("setup: {0}")]
    Setup(String),
    /// The numerics themselves failed (invariant violation, truncation
    /// overflow). Exits like a failing check.
    #[error("numerical: {0}")]
    Numeric(String),
}

impl RunnerError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) | RunnerError::Setup(_) => 2,
            RunnerError::Numeric(_) => 1,
        }
    }
}

fn setup<E: std::fmt::Display>(e: E) -> RunnerError {
    RunnerError::Setup(e.to_string())
}

fn numeric<E: std::fmt::Display>(e: E) -> RunnerError {
    RunnerError::Numeric(e.to_string())
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the config's output directory.
    pub out_dir: Option<PathBuf>,
    /// Rayon worker count; `None` keeps the global default.
    pub threads: Option<usize>,
}

/// Load, validate, dispatch, write artifacts, and report.
pub fn run_experiment(config_path: &Path, opts: &RunOptions) -> Result<RunReport, RunnerError> {
    let bytes = std::fs::read(config_path).map_err(ConfigError::Io)?;
    let cfg = ExperimentConfig::from_json_bytes(&bytes)?;
    let out_dir = opts
        .out_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir).map_err(|e| {
        RunnerError::Setup(format!("cannot create output directory {}: {e}", out_dir.display()))
    })?;
    let start = Instant::now();
    let run = || -> Result<RunReport, RunnerError> {
        match cfg.scenario {
            Scenario::KernelAudit => run_kernel_audit(&cfg, &bytes, &out_dir),
            Scenario::Sequence => run_sequence(&cfg, &bytes, &out_dir),
            Scenario::Sme => run_sme(&cfg, &bytes, &out_dir),
            Scenario::Spectrum => run_spectrum(&cfg, &bytes, &out_dir),
            Scenario::QuantumLimit => run_quantum_limit(&cfg, &bytes, &out_dir),
        }
    };
    let mut report = match opts.threads {
        None => run()?,
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| RunnerError::Setup(format!("thread pool: {e}")))?;
            pool.install(run)?
        }
    };
    let report_path = out_dir.join("report.json");
    std::fs::write(&report_path, report.artifact_json())
        .map_err(|e| RunnerError::Setup(format!("cannot write report: {e}")))?;
    report.artifacts.push("report.json".to_string());
    report.wall_time_s = Some(start.elapsed().as_secs_f64());
    Ok(report)
}

/// Kernel from its config section; quantum-limited kernels take their
/// phase from the model's response at the requested frequency.
fn build_kernel(
    cfg: &ExperimentConfig,
    dt: f64,
) -> Result<ReductionKernel, RunnerError> {
    let spec = cfg
        .kernel
        .as_ref()
        .ok_or_else(|| RunnerError::Setup("kernel section missing".into()))?;
    match spec {
        KernelConfig::Gaussian { s_q, s_qf, f_bar } => {
            ReductionKernel::gaussian_with_hbar(*s_q, *s_qf, *f_bar, dt, cfg.hbar).map_err(setup)
        }
        KernelConfig::QuantumLimited { omega, s_q, f_bar } => {
            let model = cfg
                .model
                .as_ref()
                .ok_or_else(|| RunnerError::Setup("quantum-limited kernel needs a model section".into()))?;
            let chi = model.susceptibility_freq(*omega).map_err(setup)?;
            let phi = chi.arg();
            let s_qq = match s_q {
                Some(s) => *s,
                None => {
                    let sin_phi = phi.sin().abs();
                    if sin_phi <= crate::kernels::SIN_PHI_MIN {
                        return Err(RunnerError::Setup(format!(
                            "kernel.omega {omega}: response phase too close to real \
                             (|sin phi| = {sin_phi:.3e}), specify kernel.s_q"
                        )));
                    }
                    cfg.hbar * chi.norm() / (2.0 * sin_phi)
                }
            };
            ReductionKernel::quantum_limited_with_hbar(phi, s_qq, dt, *f_bar, cfg.hbar)
                .map_err(setup)
        }
        KernelConfig::Hermite { scale, coeffs } => {
            let cs: Vec<num_complex::Complex64> = coeffs
                .iter()
                .map(|(re, im)| num_complex::Complex64::new(*re, *im))
                .collect();
            ReductionKernel::hermite_superposition_with_hbar(*scale, &cs, dt, cfg.hbar)
                .map_err(setup)
        }
        KernelConfig::GridCsv { path } => {
            let k = ReductionKernel::read_grid_csv(path).map_err(setup)?;
            if (k.dt() - dt).abs() > 1e-12 * dt.max(1.0) {
                return Err(RunnerError::Setup(format!(
                    "kernel sidecar dt {} disagrees with config dt {dt}",
                    k.dt()
                )));
            }
            if (k.hbar() - cfg.hbar).abs() > 1e-12 * cfg.hbar {
                return Err(RunnerError::Setup(format!(
                    "kernel sidecar hbar {} disagrees with config hbar {}",
                    k.hbar(),
                    cfg.hbar
                )));
            }
            Ok(k)
        }
    }
}

fn write_artifact(
    report: &mut RunReport,
    out_dir: &Path,
    name: &str,
    content: &str,
) -> Result<(), RunnerError> {
    std::fs::write(out_dir.join(name), content)
        .map_err(|e| RunnerError::Setup(format!("cannot write {name}: {e}")))?;
    report.artifacts.push(name.to_string());
    Ok(())
}

fn run_kernel_audit(
    cfg: &ExperimentConfig,
    config_bytes: &[u8],
    out_dir: &Path,
) -> Result<RunReport, RunnerError> {
    let dt = cfg.dt.expect("validated");
    let kernel = build_kernel(cfg, dt)?;
    let mut report = RunReport::new(cfg.scenario.name(), config_bytes, cfg.seed);
    let budget = kernel.noise_budget().map_err(numeric)?;
    let diag = kernel.diagnostics().map_err(numeric)?;
    report.push_check(CheckResult::at_least(
        "uncertainty_product_margin",
        budget.product_margin(),
        -1e-9,
    ));
    report.push_check(CheckResult::at_most(
        "norm_residual",
        diag.norm_residual,
        1e-6,
    ));
    report.push_check(CheckResult::at_most(
        "linearity_residual",
        diag.linearity_residual,
        1e-6,
    ));
    // quadrature cross-check for analytically defined kernels: resample
    // on a wide grid and recompute every functional from the samples
    let sampled = kernel
        .sample_on_grid(
            diag.half_width.max(8.5 * kernel.delta_q()),
            8193,
        )
        .map_err(numeric)?;
    let grid_budget = sampled.noise_budget().map_err(numeric)?;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    report.push_check(CheckResult::at_most(
        "grid_vs_analytic_s_q",
        rel(grid_budget.s_q, budget.s_q),
        1e-6,
    ));
    report.push_check(CheckResult::at_most(
        "grid_vs_analytic_s_f",
        rel(grid_budget.s_f, budget.s_f),
        1e-6,
    ));
    report.push_check(CheckResult::at_most(
        "grid_vs_analytic_s_qf",
        rel(grid_budget.s_qf, budget.s_qf),
        1e-6,
    ));
    report.push_check(CheckResult::at_most(
        "grid_vs_analytic_f_bar",
        rel(grid_budget.f_bar, budget.f_bar),
        1e-6,
    ));
    let mut summary = String::from("s_q,s_f,s_qf,f_bar,product,margin\n");
    let _ = writeln!(
        summary,
        "{},{},{},{},{},{}",
        budget.s_q,
        budget.s_f,
        budget.s_qf,
        budget.f_bar,
        budget.uncertainty_product(),
        budget.product_margin()
    );
    write_artifact(&mut report, out_dir, "kernel_budget.csv", &summary)?;
    sampled
        .write_grid_csv(&out_dir.join("kernel_grid.csv"))
        .map_err(numeric)?;
    report.artifacts.push("kernel_grid.csv".to_string());
    report.artifacts.push("kernel_grid.json".to_string());
    Ok(report)
}

fn moment_deviation(mc: &MomentReport, analytic: &MomentReport) -> (f64, f64) {
    let se_mean = mc.mean_errors.as_ref().expect("monte carlo report");
    let se_cov = mc.covariance_errors.as_ref().expect("monte carlo report");
    let n = mc.means.len();
    let mut worst_mean = 0.0f64;
    for j in 0..n {
        let se = se_mean[j].max(1e-300);
        worst_mean = worst_mean.max((mc.means[j] - analytic.means[j]).abs() / se);
    }
    let mut worst_cov = 0.0f64;
    for j in 0..n {
        for l in 0..=j {
            let se = se_cov[[j, l]].max(1e-300);
            worst_cov =
                worst_cov.max((mc.covariance[[j, l]] - analytic.covariance[[j, l]]).abs() / se);
        }
    }
    (worst_mean, worst_cov)
}

fn run_sequence(
    cfg: &ExperimentConfig,
    config_bytes: &[u8],
    out_dir: &Path,
) -> Result<RunReport, RunnerError> {
    let dt = cfg.dt.expect("validated");
    let kernel = build_kernel(cfg, dt)?;
    let model = cfg.model.clone().expect("validated");
    let init = cfg.init.clone().unwrap_or(InitialState::Ground);
    let n = cfg.n_measurements.expect("validated");
    let n_traj = cfg.n_traj.expect("validated");
    let schedule =
        MeasurementSchedule::uniform(model, init, kernel, n).map_err(setup)?;
    let mut report = RunReport::new(cfg.scenario.name(), config_bytes, cfg.seed);
    let analytic = schedule.analytic_moments().map_err(numeric)?;
    let mc = schedule
        .monte_carlo_moments(n_traj, cfg.seed)
        .map_err(numeric)?;
    let (worst_mean, worst_cov) = moment_deviation(&mc, &analytic);
    report.push_check(CheckResult::at_most("mean_deviation_se", worst_mean, 4.0));
    report.push_check(CheckResult::at_most("covariance_deviation_se", worst_cov, 4.0));
    let (eigs, _) = symmetric_eigen(&analytic.covariance);
    report.push_check(CheckResult::at_least(
        "covariance_min_eigenvalue",
        eigs[0],
        -1e-10,
    ));
    let times = schedule.times();
    let mut means_csv = String::from("j,t,analytic,mc,se\n");
    let se_mean = mc.mean_errors.as_ref().expect("monte carlo report");
    for j in 0..times.len() {
        let _ = writeln!(
            means_csv,
            "{},{},{},{},{}",
            j, times[j], analytic.means[j], mc.means[j], se_mean[j]
        );
    }
    write_artifact(&mut report, out_dir, "means.csv", &means_csv)?;
    let se_cov = mc.covariance_errors.as_ref().expect("monte carlo report");
    let mut cov_csv = String::from("j,l,analytic,mc,se\n");
    for j in 0..times.len() {
        for l in 0..=j {
            let _ = writeln!(
                cov_csv,
                "{},{},{},{},{}",
                j,
                l,
                analytic.covariance[[j, l]],
                mc.covariance[[j, l]],
                se_cov[[j, l]]
            );
        }
    }
    write_artifact(&mut report, out_dir, "covariance.csv", &cov_csv)?;
    // first few trajectories, drawn exactly as the ensemble draws them
    let export = n_traj.min(10);
    let mut records_csv = String::from("traj,t,outcome\n");
    for traj in 0..export {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(traj as u64);
        let outcomes = schedule.sample_with_rng(&mut rng).map_err(numeric)?;
        for (j, y) in outcomes.iter().enumerate() {
            let _ = writeln!(records_csv, "{},{},{}", traj, times[j], y);
        }
    }
    write_artifact(&mut report, out_dir, "records.csv", &records_csv)?;
    Ok(report)
}

#[derive(Serialize)]
struct EnsembleSummary {
    n_traj: usize,
    s_f: f64,
    dt: f64,
    duration: f64,
    frobenius_distance: f64,
    tolerance: f64,
    max_trace_deviation: f64,
    max_purity: f64,
    max_hermiticity_drift: f64,
}

fn run_sme(
    cfg: &ExperimentConfig,
    config_bytes: &[u8],
    out_dir: &Path,
) -> Result<RunReport, RunnerError> {
    let dt = cfg.dt.expect("validated");
    let duration = cfg.duration.expect("validated");
    let n_traj = cfg.n_traj.expect("validated");
    let kernel = build_kernel(cfg, dt)?;
    let model = cfg.model.clone().expect("validated");
    let engine = SmeEngine::for_model(&model, cfg.fock_dim, cfg.hbar).map_err(setup)?;
    let s_f = crate::sme::diffusive_strength(&kernel).map_err(setup)?;
    let init = cfg.init.clone().unwrap_or(InitialState::Ground);
    let rho0 = engine.initial_density(&init).map_err(setup)?;
    let mut report = RunReport::new(cfg.scenario.name(), config_bytes, cfg.seed);
    let (mean, diag) = engine
        .run_ito_ensemble(&rho0, s_f, duration, dt, n_traj, cfg.seed)
        .map_err(numeric)?;
    let steps = (duration / dt).round() as usize;
    let mut lind = rho0.clone();
    for _ in 0..steps {
        lind = engine.lindblad_step(&lind, s_f, dt).map_err(numeric)?;
    }
    let distance = mean.distance(&lind);
    let tolerance = 5.0 / (n_traj as f64).sqrt();
    report.push_check(CheckResult::at_most(
        "ito_vs_lindblad_frobenius",
        distance,
        tolerance,
    ));
    report.push_check(CheckResult::at_most(
        "max_trace_deviation",
        diag.max_trace_deviation,
        1e-9,
    ));
    let (_, _, log) = engine
        .run_trajectory_logged(&rho0, &kernel, duration, cfg.seed)
        .map_err(numeric)?;
    let max_purity = log.iter().map(|r| r.purity).fold(0.0f64, f64::max);
    report.push_check(CheckResult::at_most(
        "kraus_max_purity",
        max_purity,
        PURITY_CEILING,
    ));
    let mut traj_csv = String::from("step,t,outcome,trace,purity\n");
    for row in &log {
        let _ = writeln!(
            traj_csv,
            "{},{},{},{},{}",
            row.step, row.time, row.outcome, row.trace, row.purity
        );
    }
    write_artifact(&mut report, out_dir, "trajectory.csv", &traj_csv)?;
    let summary = EnsembleSummary {
        n_traj,
        s_f,
        dt,
        duration,
        frobenius_distance: distance,
        tolerance,
        max_trace_deviation: diag.max_trace_deviation,
        max_purity: diag.max_purity,
        max_hermiticity_drift: diag.max_hermiticity_drift,
    };
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    write_artifact(&mut report, out_dir, "ensemble.json", &json)?;
    Ok(report)
}

fn run_spectrum(
    cfg: &ExperimentConfig,
    config_bytes: &[u8],
    out_dir: &Path,
) -> Result<RunReport, RunnerError> {
    let dt = cfg.dt.expect("validated");
    let n_samples = cfg.n_samples.expect("validated");
    let kernel = build_kernel(cfg, dt)?;
    let model = cfg.model.clone().expect("validated");
    let omega0 = match model {
        ObjectModel::DampedOscillator { omega0, .. } => omega0,
        ref other => {
            return Err(RunnerError::Setup(format!(
                "spectrum scenario needs a damped model, got {other:?}"
            )))
        }
    };
    let temperature = cfg.temperature.unwrap_or(0.0);
    let budget = StationaryBudget::from_kernel(&kernel).map_err(setup)?;
    let mut report = RunReport::new(cfg.scenario.name(), config_bytes, cfg.seed);
    let record =
        simulate_record(&model, &budget, temperature, n_samples, dt, cfg.seed).map_err(numeric)?;
    let variance = {
        let xs = &record.outcomes;
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64
    };
    let est = periodogram(&[record], dt, &WelchConfig::default()).map_err(numeric)?;
    let reference =
        analytic_spectrum(&model, &budget, temperature, &est.omega[1..]).map_err(numeric)?;
    let est_cut = SpectrumTable {
        omega: est.omega[1..].to_vec(),
        total: est.total[1..].to_vec(),
        channels: None,
    };
    let rms = relative_band_rms(&est_cut, &reference, 0.5 * omega0, 1.5 * omega0)
        .map_err(numeric)?;
    report.push_check(CheckResult::at_most("band_rms_relative", rms, 0.10));
    let parseval = (est.integrated_power() - variance).abs() / variance;
    report.push_check(CheckResult::at_most("parseval_relative", parseval, 0.01));
    write_artifact(
        &mut report,
        out_dir,
        "spectrum_estimate.csv",
        &est.to_csv_string(),
    )?;
    write_artifact(
        &mut report,
        out_dir,
        "spectrum_analytic.csv",
        &reference.to_csv_string(),
    )?;
    Ok(report)
}

fn run_quantum_limit(
    cfg: &ExperimentConfig,
    config_bytes: &[u8],
    out_dir: &Path,
) -> Result<RunReport, RunnerError> {
    let model = cfg.model.clone().expect("validated");
    let grid = cfg.omega_grid.expect("validated").points();
    let mut report = RunReport::new(cfg.scenario.name(), config_bytes, cfg.seed);
    let scan = quantum_limit_scan(&model, cfg.hbar, &grid).map_err(numeric)?;
    for &omega in &scan.excluded {
        report.exclusions.push(Exclusion {
            omega,
            reason: "sin(phi) below threshold".to_string(),
        });
    }
    report.push_check(CheckResult::at_least(
        "included_frequencies",
        scan.optima.len() as f64,
        1.0,
    ));
    if !scan.optima.is_empty() {
        let worst_margin = scan
            .optima
            .iter()
            .map(|p| {
                crate::spectra::verify_noise_inequality(p.s_qq, p.s_ff, p.s_qf, cfg.hbar).abs()
            })
            .fold(0.0f64, f64::max);
        report.push_check(CheckResult::at_most(
            "inequality_saturation_max_abs",
            worst_margin,
            1e-9,
        ));
        let worst_identity = scan
            .optima
            .iter()
            .map(|p| (p.added - p.intrinsic).abs())
            .fold(0.0f64, f64::max);
        report.push_check(CheckResult::at_most(
            "added_vs_intrinsic_max_abs",
            worst_identity,
            1e-9,
        ));
        if let ObjectModel::DampedOscillator { mass, omega0, gamma } = model {
            if let Some(p) = scan
                .optima
                .iter()
                .find(|p| (p.omega - omega0).abs() <= 1e-12 * omega0)
            {
                // at resonance chi = -i/(m gamma omega0), so the floor is
                // hbar/(m gamma omega0)
                let reference = cfg.hbar / (mass * gamma * omega0);
                report.push_check(CheckResult::within(
                    "min_added_at_omega0",
                    p.added,
                    reference,
                    1e-10 * reference,
                ));
            }
        }
    }
    write_artifact(
        &mut report,
        out_dir,
        "quantum_limit.csv",
        &scan.table.to_csv_string(),
    )?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::ReportFormat;

    fn run_config(json: &str, dir: &Path) -> Result<RunReport, RunnerError> {
        let path = dir.join("config.json");
        std::fs::write(&path, json).unwrap();
        run_experiment(
            &path,
            &RunOptions {
                out_dir: Some(dir.join("out")),
                threads: None,
            },
        )
    }

    #[test]
    fn quantum_limit_scenario_reports_resonance_floor() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_config(
            r#"{
                "scenario": "quantum-limit",
                "seed": 42,
                "model": {"type": "damped_oscillator", "mass": 1.0, "omega0": 1.0, "gamma": 0.1},
                "omega_grid": {"start": 0.2, "stop": 2.0, "count": 181}
            }"#,
            dir.path(),
        )
        .unwrap();
        assert!(report.pass);
        let res = report
            .checks
            .iter()
            .find(|c| c.name == "min_added_at_omega0")
            .expect("resonance check present");
        assert!((res.value - 10.0).abs() < 1e-9);
        assert!(dir.path().join("out/quantum_limit.csv").exists());
        assert!(dir.path().join("out/report.json").exists());
        let text = report.render(ReportFormat::Text);
        assert!(text.contains("overall: pass"));
    }

    #[test]
    fn kernel_audit_scenario_cross_checks_quadrature() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_config(
            r#"{
                "scenario": "kernel-audit",
                "seed": 1,
                "dt": 0.01,
                "kernel": {"type": "gaussian", "s_q": 0.04, "s_qf": -0.3}
            }"#,
            dir.path(),
        )
        .unwrap();
        assert!(report.pass, "{:#?}", report.checks);
        assert!(dir.path().join("out/kernel_grid.csv").exists());
        assert!(dir.path().join("out/kernel_grid.json").exists());
    }

    #[test]
    fn sequence_scenario_matches_its_own_law() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_config(
            r#"{
                "scenario": "sequence",
                "seed": 11,
                "dt": 0.5,
                "n_measurements": 2,
                "n_traj": 2000,
                "model": {"type": "oscillator", "mass": 1.0, "omega0": 1.0},
                "kernel": {"type": "gaussian", "s_q": 0.5}
            }"#,
            dir.path(),
        )
        .unwrap();
        assert!(report.pass, "{:#?}", report.checks);
        let csv = std::fs::read_to_string(dir.path().join("out/records.csv")).unwrap();
        assert!(csv.starts_with("traj,t,outcome\n"));
        assert_eq!(csv.lines().count(), 1 + 10 * 2);
    }

    #[test]
    fn sme_scenario_runs_and_is_thread_invariant() {
        let dir = tempfile::tempdir().unwrap();
        let json = r#"{
            "scenario": "sme",
            "seed": 3,
            "dt": 0.01,
            "duration": 0.1,
            "n_traj": 64,
            "fock_dim": 24,
            "model": {"type": "oscillator", "mass": 1.0, "omega0": 1.0},
            "kernel": {"type": "gaussian", "s_q": 0.1}
        }"#;
        let path = dir.path().join("config.json");
        std::fs::write(&path, json).unwrap();
        let a = run_experiment(
            &path,
            &RunOptions {
                out_dir: Some(dir.path().join("a")),
                threads: Some(1),
            },
        )
        .unwrap();
        let b = run_experiment(
            &path,
            &RunOptions {
                out_dir: Some(dir.path().join("b")),
                threads: Some(4),
            },
        )
        .unwrap();
        assert!(a.pass, "{:#?}", a.checks);
        let ta = std::fs::read(dir.path().join("a/trajectory.csv")).unwrap();
        let tb = std::fs::read(dir.path().join("b/trajectory.csv")).unwrap();
        assert_eq!(ta, tb);
        let ea = std::fs::read(dir.path().join("a/ensemble.json")).unwrap();
        let eb = std::fs::read(dir.path().join("b/ensemble.json")).unwrap();
        assert_eq!(ea, eb);
        let ra = std::fs::read(dir.path().join("a/report.json")).unwrap();
        let rb = std::fs::read(dir.path().join("b/report.json")).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn spectrum_scenario_small_run_passes_parseval() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_config(
            r#"{
                "scenario": "spectrum",
                "seed": 21,
                "dt": 0.01,
                "n_samples": 131072,
                "model": {"type": "damped_oscillator", "mass": 1.0, "omega0": 1.0, "gamma": 0.1},
                "kernel": {"type": "quantum_limited", "omega": 1.0}
            }"#,
            dir.path(),
        )
        .unwrap();
        let parseval = report
            .checks
            .iter()
            .find(|c| c.name == "parseval_relative")
            .unwrap();
        assert!(parseval.pass);
        assert!(dir.path().join("out/spectrum_estimate.csv").exists());
    }

    #[test]
    fn complex_kernel_on_sme_is_a_setup_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_config(
            r#"{
                "scenario": "sme",
                "seed": 3,
                "dt": 0.01,
                "duration": 0.1,
                "n_traj": 8,
                "model": {"type": "oscillator", "mass": 1.0, "omega0": 1.0},
                "kernel": {"type": "gaussian", "s_q": 0.1, "s_qf": -0.4}
            }"#,
            dir.path(),
        )
        .unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
