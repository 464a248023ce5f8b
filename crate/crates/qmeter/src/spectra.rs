//! Frequency-domain analysis of measurement records.
//!
//! Everything here is two-sided and angular: `int S(omega) domega / 2pi`
//! equals the signal variance. The output spectrum of a stationary
//! record splits as
//!
//! `S_total = S_init + S_qq + |chi|^2 S_FF + 2 Re[chi] S_qF`
//!
//! where the last three terms are the detector's added noise. Gaussian
//! detector budgets obey `S_qq S_FF - S_qF^2 >= hbar^2/4`, which bounds
//! the added noise from below by `hbar |Im chi|`; the closed-form
//! optimum that reaches the bound is computed per frequency and cross
//! checked against an independent grid search in the test suite.
//!
//! The Welch estimator is part of the contract, not a tunable: Hann
//! window, 4096 samples, 50% overlap, record mean subtracted. Accuracy
//! statements elsewhere in the crate assume exactly this estimator.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::FftPlanner;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

use crate::dynamics::{DynamicsError, ObjectModel};
use crate::kernels::{KernelError, NoiseBudget, ReductionKernel, SIN_PHI_MIN};
use crate::sequence::MeasurementRecord;

/// Welch defaults; fixed so that accuracy bands quoted against the
/// estimator stay meaningful.
pub const WELCH_WINDOW_LEN: usize = 4096;

#[derive(Debug, Error)]
pub enum SpectraError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("unphysical detector budget: S_qq S_FF - S_qF^2 - hbar^2/4 = {margin:.6e} < 0")]
    Unphysical { margin: f64 },
    #[error("record too short: {len} samples, need at least {needed}")]
    RecordTooShort { len: usize, needed: usize },
    #[error("frequency {omega} excluded: |sin phi| = {sin_phi:.3e} under threshold")]
    Excluded { omega: f64, sin_phi: f64 },
    #[error("invariant violated: {name} = {value:.6e} outside {limit:.3e}")]
    InvariantViolated {
        name: &'static str,
        value: f64,
        limit: f64,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("spectrum grids do not match")]
    GridMismatch,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Stationary detector budget: spectral densities of imprecision noise,
/// back-action force, and their cross correlation.
///
/// A constant-rate schedule of identical kernels maps onto this directly:
/// `S_qq = S_q`, `S_FF = S_F`, `S_qF = S_qF`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryBudget {
    pub s_qq: f64,
    pub s_ff: f64,
    pub s_qf: f64,
    pub hbar: f64,
}

impl StationaryBudget {
    pub fn new(s_qq: f64, s_ff: f64, s_qf: f64, hbar: f64) -> Result<Self, SpectraError> {
        if !(s_qq.is_finite() && s_qq >= 0.0 && s_ff.is_finite() && s_ff >= 0.0) {
            return Err(SpectraError::InvalidParameter(format!(
                "spectral densities must be finite and nonnegative, got S_qq = {s_qq}, S_FF = {s_ff}"
            )));
        }
        if !s_qf.is_finite() || !(hbar.is_finite() && hbar > 0.0) {
            return Err(SpectraError::InvalidParameter(format!(
                "S_qF and hbar must be finite (hbar positive), got {s_qf} and {hbar}"
            )));
        }
        Ok(StationaryBudget { s_qq, s_ff, s_qf, hbar })
    }

    /// Stationary reading of a per-step kernel budget.
    pub fn from_kernel(kernel: &ReductionKernel) -> Result<Self, SpectraError> {
        let b = kernel.noise_budget()?;
        Self::from_noise_budget(&b)
    }

    pub fn from_noise_budget(b: &NoiseBudget) -> Result<Self, SpectraError> {
        Self::new(b.s_q, b.s_f, b.s_qf, b.hbar)
    }

    /// `S_qq S_FF - S_qF^2 - hbar^2/4`; negative means no reduction
    /// kernel can realize this budget.
    pub fn inequality_margin(&self) -> f64 {
        verify_noise_inequality(self.s_qq, self.s_ff, self.s_qf, self.hbar)
    }
}

/// Margin of the detector noise inequality,
/// `S_qq S_FF - S_qF^2 - hbar^2/4`. The sign is the verdict; no error
/// path.
pub fn verify_noise_inequality(s_qq: f64, s_ff: f64, s_qf: f64, hbar: f64) -> f64 {
    s_qq * s_ff - s_qf * s_qf - 0.25 * hbar * hbar
}

/// Channel-resolved spectrum on a uniform frequency grid.
///
/// `total` is always present; the analytic decomposition is attached
/// when the table came from a model rather than from data.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumTable {
    pub omega: Vec<f64>,
    pub total: Vec<f64>,
    pub channels: Option<AnalyticChannels>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticChannels {
    pub intrinsic: Vec<f64>,
    pub imprecision: Vec<f64>,
    pub backaction: Vec<f64>,
    pub cross: Vec<f64>,
    pub added: Vec<f64>,
    pub bound: Vec<f64>,
    pub margin: Vec<f64>,
}

impl SpectrumTable {
    /// Two-sided integral `int S domega / 2pi` for a folded table
    /// (omega from 0 to Nyquist): interior bins count twice.
    pub fn integrated_power(&self) -> f64 {
        let n = self.omega.len();
        if n < 2 {
            return 0.0;
        }
        let domega = self.omega[1] - self.omega[0];
        let mut acc = self.total[0] + self.total[n - 1];
        for k in 1..n - 1 {
            acc += 2.0 * self.total[k];
        }
        acc * domega / (2.0 * std::f64::consts::PI)
    }

    /// CSV with the sign convention spelled out in a comment line.
    /// Data-only tables leave the analytic columns empty.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str(
            "# two-sided PSD, angular frequency; int S(omega) domega / 2pi = variance\n",
        );
        out.push_str("omega,total,intrinsic,imprecision,backaction,cross,added,bound,margin\n");
        for (k, &w) in self.omega.iter().enumerate() {
            let _ = write!(out, "{},{}", w, self.total[k]);
            match &self.channels {
                Some(c) => {
                    let _ = writeln!(
                        out,
                        ",{},{},{},{},{},{},{}",
                        c.intrinsic[k],
                        c.imprecision[k],
                        c.backaction[k],
                        c.cross[k],
                        c.added[k],
                        c.bound[k],
                        c.margin[k]
                    );
                }
                None => out.push_str(",,,,,,,\n"),
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), SpectraError> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

/// RMS of the per-bin relative deviation between two tables over
/// `[omega_lo, omega_hi]`, reference in the denominator.
pub fn relative_band_rms(
    estimate: &SpectrumTable,
    reference: &SpectrumTable,
    omega_lo: f64,
    omega_hi: f64,
) -> Result<f64, SpectraError> {
    if estimate.omega.len() != reference.omega.len() {
        return Err(SpectraError::GridMismatch);
    }
    let mut acc = 0.0;
    let mut n = 0usize;
    for k in 0..estimate.omega.len() {
        let w = estimate.omega[k];
        if (w - reference.omega[k]).abs() > 1e-9 * w.abs().max(1.0) {
            return Err(SpectraError::GridMismatch);
        }
        if w < omega_lo || w > omega_hi {
            continue;
        }
        let r = reference.total[k];
        if r == 0.0 {
            return Err(SpectraError::InvalidParameter(format!(
                "reference spectrum vanishes at omega = {w}"
            )));
        }
        let rel = (estimate.total[k] - r) / r;
        acc += rel * rel;
        n += 1;
    }
    if n == 0 {
        return Err(SpectraError::InvalidParameter(format!(
            "no spectrum bins inside [{omega_lo}, {omega_hi}]"
        )));
    }
    Ok((acc / n as f64).sqrt())
}

/// Welch estimator configuration. Only the window length moves; the
/// window shape (Hann) and 50% overlap are fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchConfig {
    pub window_len: usize,
}

impl Default for WelchConfig {
    fn default() -> Self {
        WelchConfig {
            window_len: WELCH_WINDOW_LEN,
        }
    }
}

/// Welch-averaged two-sided PSD of one or more records.
///
/// Each record's mean is subtracted before windowing. Records are
/// processed in parallel; segment sums are merged in record order, so
/// the result does not depend on the worker count.
pub fn periodogram(
    records: &[MeasurementRecord],
    dt: f64,
    cfg: &WelchConfig,
) -> Result<SpectrumTable, SpectraError> {
    let win = cfg.window_len;
    if records.is_empty() {
        return Err(SpectraError::InvalidParameter("no records".into()));
    }
    if win < 8 || win % 2 != 0 {
        return Err(SpectraError::InvalidParameter(format!(
            "window length must be even and at least 8, got {win}"
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SpectraError::InvalidParameter(format!(
            "dt must be finite and positive, got {dt}"
        )));
    }
    for r in records {
        if r.outcomes.len() < 2 * win {
            return Err(SpectraError::RecordTooShort {
                len: r.outcomes.len(),
                needed: 2 * win,
            });
        }
    }
    // periodic Hann; energy normalization makes white noise come out at
    // sigma^2 dt independent of the window
    let window: Vec<f64> = (0..win)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / win as f64).cos()))
        .collect();
    let w2: f64 = window.iter().map(|w| w * w).sum();
    let scale = dt / w2;
    let hop = win / 2;
    let per_record: Vec<(Vec<f64>, usize)> = records
        .par_iter()
        .map(|rec| {
            let mut planner = FftPlanner::<f64>::new();
            let fft = planner.plan_fft_forward(win);
            let xs = &rec.outcomes;
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            let mut power = vec![0.0f64; win / 2 + 1];
            let mut buf = vec![Complex64::new(0.0, 0.0); win];
            let mut segments = 0usize;
            let mut start = 0usize;
            while start + win <= xs.len() {
                for n in 0..win {
                    buf[n] = Complex64::new((xs[start + n] - mean) * window[n], 0.0);
                }
                fft.process(&mut buf);
                for (k, p) in power.iter_mut().enumerate() {
                    *p += buf[k].norm_sqr() * scale;
                }
                segments += 1;
                start += hop;
            }
            (power, segments)
        })
        .collect();
    let mut power = vec![0.0f64; win / 2 + 1];
    let mut segments = 0usize;
    for (p, s) in &per_record {
        for (acc, v) in power.iter_mut().zip(p) {
            *acc += v;
        }
        segments += s;
    }
    let inv = 1.0 / segments as f64;
    for p in power.iter_mut() {
        *p *= inv;
    }
    let domega = 2.0 * std::f64::consts::PI / (win as f64 * dt);
    let omega: Vec<f64> = (0..=win / 2).map(|k| k as f64 * domega).collect();
    Ok(SpectrumTable {
        omega,
        total: power,
        channels: None,
    })
}

fn added_and_bound(chi: Complex64, b: &StationaryBudget) -> (f64, f64) {
    let abs_chi = chi.norm();
    let cos_phi = if abs_chi > 0.0 { chi.re / abs_chi } else { 1.0 };
    let added = b.s_qq + abs_chi * abs_chi * b.s_ff + 2.0 * chi.re * b.s_qf;
    let bound = 2.0 * abs_chi * ((b.s_qq * b.s_ff).sqrt() + cos_phi * b.s_qf);
    (added, bound)
}

/// Channel-resolved analytic output spectrum for a stationary budget.
///
/// Unphysical budgets are allowed here (the margin column flags them);
/// only [`added_noise_budget`] rejects them.
pub fn analytic_spectrum(
    model: &ObjectModel,
    budget: &StationaryBudget,
    temperature: f64,
    omega_grid: &[f64],
) -> Result<SpectrumTable, SpectraError> {
    if omega_grid.is_empty() {
        return Err(SpectraError::InvalidParameter("empty frequency grid".into()));
    }
    let n = omega_grid.len();
    let margin = budget.inequality_margin();
    let mut table = SpectrumTable {
        omega: omega_grid.to_vec(),
        total: Vec::with_capacity(n),
        channels: Some(AnalyticChannels {
            intrinsic: Vec::with_capacity(n),
            imprecision: Vec::with_capacity(n),
            backaction: Vec::with_capacity(n),
            cross: Vec::with_capacity(n),
            added: Vec::with_capacity(n),
            bound: Vec::with_capacity(n),
            margin: Vec::with_capacity(n),
        }),
    };
    let channels = table.channels.as_mut().expect("just built");
    for &omega in omega_grid {
        let chi = model.susceptibility_freq(omega)?;
        let intrinsic = model.initial_spectrum(omega, temperature, budget.hbar)?;
        let (added, bound) = added_and_bound(chi, budget);
        if added < bound - 1e-10 {
            return Err(SpectraError::InvariantViolated {
                name: "added noise under its bound",
                value: added - bound,
                limit: 1e-10,
            });
        }
        channels.intrinsic.push(intrinsic);
        channels.imprecision.push(budget.s_qq);
        channels
            .backaction
            .push(chi.norm_sqr() * budget.s_ff);
        channels.cross.push(2.0 * chi.re * budget.s_qf);
        channels.added.push(added);
        channels.bound.push(bound);
        channels.margin.push(margin);
        table.total.push(intrinsic + added);
    }
    Ok(table)
}

/// Detector contribution at one frequency and its correlation bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AddedNoise {
    pub added: f64,
    pub bound: f64,
}

/// Added noise `S_qq + |chi|^2 S_FF + 2 Re[chi] S_qF` and the bound
/// `2|chi| (sqrt(S_qq S_FF) + cos phi S_qF)`. Budgets violating the
/// noise inequality are rejected.
pub fn added_noise_budget(
    model: &ObjectModel,
    budget: &StationaryBudget,
    omega: f64,
) -> Result<AddedNoise, SpectraError> {
    let margin = budget.inequality_margin();
    let tol = 1e-10 * (budget.s_qq * budget.s_ff).max(1.0);
    if margin < -tol {
        return Err(SpectraError::Unphysical { margin });
    }
    let chi = model.susceptibility_freq(omega)?;
    let (added, bound) = added_and_bound(chi, budget);
    if added < bound - 1e-10 {
        return Err(SpectraError::InvariantViolated {
            name: "added noise under its bound",
            value: added - bound,
            limit: 1e-10,
        });
    }
    Ok(AddedNoise { added, bound })
}

/// Optimal detector budget at one frequency and the resulting minimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantumLimitPoint {
    pub omega: f64,
    pub s_qq: f64,
    pub s_ff: f64,
    pub s_qf: f64,
    /// Minimum added noise, `hbar |Im chi|`.
    pub added: f64,
    /// Zero-temperature intrinsic spectrum; equals `added`.
    pub intrinsic: f64,
}

/// Closed-form optimal budget at `omega`:
///
/// `S_qq = hbar |chi| / (2 |sin phi|)`, `S_qF = -(hbar/2) cot phi`,
/// `S_FF = (hbar^2/4 + S_qF^2) / S_qq`,
///
/// saturating the noise inequality and matching imprecision to
/// back-action, `S_qq = |chi|^2 S_FF`. Frequencies with nearly real
/// `chi` have no finite optimum and come back as `Excluded`.
pub fn quantum_limit_at(
    model: &ObjectModel,
    hbar: f64,
    omega: f64,
) -> Result<QuantumLimitPoint, SpectraError> {
    let chi = model.susceptibility_freq(omega)?;
    let phi = chi.arg();
    let sin_phi = phi.sin();
    if sin_phi.abs() <= SIN_PHI_MIN {
        return Err(SpectraError::Excluded {
            omega,
            sin_phi: sin_phi.abs(),
        });
    }
    let s_qq = hbar * chi.norm() / (2.0 * sin_phi.abs());
    let s_qf = -0.5 * hbar * phi.cos() / sin_phi;
    let s_ff = (0.25 * hbar * hbar + s_qf * s_qf) / s_qq;
    let matching = (s_qq - chi.norm_sqr() * s_ff).abs();
    if matching > 1e-8 * s_qq {
        return Err(SpectraError::InvariantViolated {
            name: "imprecision/back-action matching",
            value: matching,
            limit: 1e-8 * s_qq,
        });
    }
    let budget = StationaryBudget { s_qq, s_ff, s_qf, hbar };
    let an = added_noise_budget(model, &budget, omega)?;
    let floor = hbar * chi.im.abs();
    let scale = floor.max(1.0);
    if (an.added - floor).abs() > 1e-10 * scale {
        return Err(SpectraError::InvariantViolated {
            name: "minimum added noise vs hbar |Im chi|",
            value: (an.added - floor).abs(),
            limit: 1e-10 * scale,
        });
    }
    let intrinsic = model.initial_spectrum(omega, 0.0, hbar)?;
    if (intrinsic - floor).abs() > 1e-10 * scale {
        return Err(SpectraError::InvariantViolated {
            name: "zero-temperature intrinsic vs hbar |Im chi|",
            value: (intrinsic - floor).abs(),
            limit: 1e-10 * scale,
        });
    }
    Ok(QuantumLimitPoint {
        omega,
        s_qq,
        s_ff,
        s_qf,
        added: an.added,
        intrinsic,
    })
}

/// Scan result: optima where the limit is reachable, exclusions where
/// `chi` is too close to real.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumLimitScan {
    pub table: SpectrumTable,
    pub optima: Vec<QuantumLimitPoint>,
    pub excluded: Vec<f64>,
}

/// Closed-form quantum limit over a frequency grid. Excluded
/// frequencies are reported, not silently dropped.
pub fn quantum_limit_scan(
    model: &ObjectModel,
    hbar: f64,
    omega_grid: &[f64],
) -> Result<QuantumLimitScan, SpectraError> {
    if omega_grid.is_empty() {
        return Err(SpectraError::InvalidParameter("empty frequency grid".into()));
    }
    let mut optima = Vec::new();
    let mut excluded = Vec::new();
    for &omega in omega_grid {
        match quantum_limit_at(model, hbar, omega) {
            Ok(p) => optima.push(p),
            Err(SpectraError::Excluded { omega, .. }) => excluded.push(omega),
            Err(e) => return Err(e),
        }
    }
    let n = optima.len();
    let mut table = SpectrumTable {
        omega: Vec::with_capacity(n),
        total: Vec::with_capacity(n),
        channels: Some(AnalyticChannels {
            intrinsic: Vec::with_capacity(n),
            imprecision: Vec::with_capacity(n),
            backaction: Vec::with_capacity(n),
            cross: Vec::with_capacity(n),
            added: Vec::with_capacity(n),
            bound: Vec::with_capacity(n),
            margin: Vec::with_capacity(n),
        }),
    };
    let channels = table.channels.as_mut().expect("just built");
    for p in &optima {
        let chi = model.susceptibility_freq(p.omega)?;
        table.omega.push(p.omega);
        table.total.push(p.intrinsic + p.added);
        channels.intrinsic.push(p.intrinsic);
        channels.imprecision.push(p.s_qq);
        channels.backaction.push(chi.norm_sqr() * p.s_ff);
        channels.cross.push(2.0 * chi.re * p.s_qf);
        channels.added.push(p.added);
        channels.bound.push(p.added);
        channels
            .margin
            .push(verify_noise_inequality(p.s_qq, p.s_ff, p.s_qf, hbar));
    }
    Ok(QuantumLimitScan {
        table,
        optima,
        excluded,
    })
}

/// Synthesize a stationary measurement record of a damped oscillator
/// read out by a detector with the given budget.
///
/// All three noise sources are drawn in the frequency domain with the
/// exact target (cross-)spectra: the intrinsic motion at the thermal
/// spectrum, the imprecision/back-action pair with cross correlation
/// `S_qF` (Cholesky of the 2x2 budget matrix), the force then pushed
/// through `chi(omega)`. One inverse FFT yields the record, so its
/// population spectrum equals the analytic table bin for bin and the
/// only estimator-facing deviations are statistical.
///
/// Gaussian draws are consumed in a fixed per-bin order from a
/// `ChaCha8` stream, so a seed pins the record exactly.
pub fn simulate_record(
    model: &ObjectModel,
    budget: &StationaryBudget,
    temperature: f64,
    n_samples: usize,
    dt: f64,
    seed: u64,
) -> Result<MeasurementRecord, SpectraError> {
    match model {
        ObjectModel::DampedOscillator { .. } => {}
        other => {
            return Err(SpectraError::InvalidParameter(format!(
                "record synthesis needs a damped model (finite susceptibility on the \
                 whole grid), got {other:?}"
            )))
        }
    }
    if n_samples < 16 || n_samples % 2 != 0 {
        return Err(SpectraError::InvalidParameter(format!(
            "sample count must be even and at least 16, got {n_samples}"
        )));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(SpectraError::InvalidParameter(format!(
            "dt must be finite and positive, got {dt}"
        )));
    }
    let margin = budget.inequality_margin();
    let tol = 1e-10 * (budget.s_qq * budget.s_ff).max(1.0);
    if margin < -tol {
        return Err(SpectraError::Unphysical { margin });
    }
    // Cholesky of [[S_qq, S_qF], [S_qF, S_FF]]
    let l11 = budget.s_qq.sqrt();
    let (l21, l22) = if l11 > 0.0 {
        let l21 = budget.s_qf / l11;
        (l21, (budget.s_ff - l21 * l21).max(0.0).sqrt())
    } else {
        (0.0, budget.s_ff.sqrt())
    };
    let n = n_samples;
    let domega = 2.0 * std::f64::consts::PI / (n as f64 * dt);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec = vec![Complex64::new(0.0, 0.0); n];
    // interior bins: complex amplitudes with E|Y_k|^2 = N S_tot(omega_k)/dt
    let amp = (n as f64 / (2.0 * dt)).sqrt();
    for k in 1..n / 2 {
        let omega = k as f64 * domega;
        let chi = model.susceptibility_freq(omega)?;
        let s_init = model.initial_spectrum(omega, temperature, budget.hbar)?;
        let g = |rng: &mut ChaCha8Rng| {
            Complex64::new(
                rng.sample::<f64, _>(StandardNormal),
                rng.sample::<f64, _>(StandardNormal),
            )
        };
        let xi_init = g(&mut rng);
        let xi_n = g(&mut rng);
        let xi_f = g(&mut rng);
        let noise = l11 * xi_n;
        let force = l21 * xi_n + l22 * xi_f;
        let y = amp * (s_init.sqrt() * xi_init + noise + chi * force);
        spec[k] = y;
        spec[n - k] = y.conj();
    }
    // Nyquist bin must stay real; cross structure there is irrelevant,
    // only the marginal power matters
    {
        let omega = (n / 2) as f64 * domega;
        let chi = model.susceptibility_freq(omega)?;
        let s_init = model.initial_spectrum(omega, temperature, budget.hbar)?;
        let (tot_added, _) = added_and_bound(chi, budget);
        let s_tot = (s_init + tot_added).max(0.0);
        let a: f64 = rng.sample(StandardNormal);
        spec[n / 2] = Complex64::new((n as f64 * s_tot / dt).sqrt() * a, 0.0);
    }
    let mut planner = FftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(n);
    ifft.process(&mut spec);
    let inv = 1.0 / n as f64;
    let outcomes: Vec<f64> = spec.iter().map(|v| v.re * inv).collect();
    Ok(MeasurementRecord { outcomes, seed })
}
