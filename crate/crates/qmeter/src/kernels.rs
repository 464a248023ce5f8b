//! Reduction kernels for imprecise position measurement.
//!
//! A single measurement with outcome `y` acts on the wavefunction as
//! `psi(q) -> Omega(y - q) psi(q)` up to normalization. The kernel is
//! normalized, `int |Omega|^2 = 1`, and centred, `int dq |Omega(dq)|^2 dq = 0`,
//! so outcomes are unbiased estimates of position.
//!
//! With `dt` the interval between successive measurements, four functionals
//! of the kernel fix the noise budget of a continuous record:
//!
//! * imprecision        `S_q  = dt * int dq^2 |Omega|^2`
//! * back-action        `S_F  = (hbar^2/dt) * [ int |Omega'|^2 + (int Omega* Omega')^2 ]`
//! * cross-correlation  `S_qF = -(i hbar/2) * int (Omega* Omega' - Omega'* Omega) dq d(dq)`
//! * mean force         `F_bar = (i hbar/dt) * int Omega* Omega'`
//!
//! They obey `S_q * S_F - S_qF^2 >= hbar^2/4`, with equality exactly for
//! the complex Gaussian family produced by [`ReductionKernel::gaussian`].
//!
//! Kernels come in three shapes: the parametric Gaussian (closed-form
//! budgets), finite Hermite-function superpositions (smooth non-Gaussian
//! test family, analytic derivatives), and grid-sampled tables (the format
//! persisted to CSV). Grid budgets use composite Simpson quadrature and
//! fourth-order finite differences on a declared uniform grid covering at
//! least `[-8 delta_q, 8 delta_q]` with at least 1025 points.

use std::f64::consts::PI;
use std::io::Write as IoWrite;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{derivative4, simpson, simpson_c, UniformGrid};

/// Minimum number of points for a declared kernel grid.
pub const GRID_MIN_POINTS: usize = 1025;
/// Declared grids must cover at least this many rms widths on each side.
pub const GRID_SPAN_FACTOR: f64 = 8.0;
/// Relative guard on integrals that must vanish by symmetry.
pub const RESIDUE_GUARD: f64 = 1e-9;
/// Below this |sin phi| the quantum-limited construction is rejected.
pub const SIN_PHI_MIN: f64 = 1e-3;

const AUTO_GRID_POINTS: usize = 8193;
const AUTO_GRID_SPAN: f64 = 8.5;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("invalid kernel parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("kernel grid violates the declared rule: {0}")]
    GridRule(String),
    #[error("kernel normalization residual {residual:.3e} exceeds {limit:.3e}")]
    Normalization { residual: f64, limit: f64 },
    #[error("kernel linearity residual {residual:.3e} exceeds {limit:.3e}")]
    Linearity { residual: f64, limit: f64 },
    #[error("residue guard tripped for {quantity}: |{residual:.3e}| exceeds {limit:.3e}")]
    ResidueGuard {
        quantity: &'static str,
        residual: f64,
        limit: f64,
    },
    #[error("phase too close to a multiple of pi: |sin phi| = {sin_phi:.3e} <= {limit:.3e}")]
    PhaseSingular { sin_phi: f64, limit: f64 },
    #[error("operation requires a grid-sampled kernel; call sample_on_grid first")]
    NotSampled,
    #[error("kernel I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("kernel CSV malformed: {0}")]
    Csv(String),
    #[error("kernel sidecar malformed: {0}")]
    Sidecar(String),
}

/// Functional form of a reduction kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelShape {
    /// `(2 pi delta_q^2)^(-1/4) exp(-(alpha - i beta) dq^2 - i b dq)` with
    /// `alpha = 1/(4 delta_q^2)`, `beta = s_qf/(2 hbar delta_q^2)`,
    /// `b = dt f_bar / hbar`.
    Gaussian,
    /// Normalized superposition of Hermite functions at length scale
    /// `scale`, translated by `shift` so the linearity condition holds.
    Hermite {
        scale: f64,
        shift: f64,
        coeffs: Vec<Complex64>,
    },
    /// Uniform table of complex samples, renormalized on its own grid.
    Sampled {
        x0: f64,
        step: f64,
        values: Vec<Complex64>,
    },
}

/// A normalized reduction kernel together with its measurement interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionKernel {
    shape: KernelShape,
    dt: f64,
    hbar: f64,
    delta_q: f64,
    s_qf: f64,
    f_bar: f64,
}

/// Noise budget of one kernel, all entries per the two-sided convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseBudget {
    pub s_q: f64,
    pub s_f: f64,
    pub s_qf: f64,
    pub f_bar: f64,
    pub hbar: f64,
}

impl NoiseBudget {
    /// `S_q * S_F - S_qF^2`, bounded below by `hbar^2/4`.
    pub fn uncertainty_product(&self) -> f64 {
        self.s_q * self.s_f - self.s_qf * self.s_qf
    }

    /// Margin above the quantum bound; zero only for Gaussian kernels.
    pub fn product_margin(&self) -> f64 {
        self.uncertainty_product() - 0.25 * self.hbar * self.hbar
    }
}

/// Verification report produced by quadrature over the kernel.
#[derive(Debug, Clone, Serialize)]
pub struct KernelDiagnostics {
    pub norm_residual: f64,
    pub linearity_residual: f64,
    pub delta_q: f64,
    pub s_qf: f64,
    pub f_bar: f64,
    pub grid_points: usize,
    pub half_width: f64,
}

/// Raw kernel integrals shared by diagnostics and budget evaluation.
struct RawFunctionals {
    norm: f64,
    mean: f64,
    var: f64,
    grad2: f64,
    overlap: Complex64,
    cross_im: f64,
}

fn require_finite_positive(name: &'static str, v: f64) -> Result<(), KernelError> {
    if !v.is_finite() || v <= 0.0 {
        return Err(KernelError::InvalidParameter {
            name,
            reason: format!("must be finite and positive, got {v}"),
        });
    }
    Ok(())
}

fn require_finite(name: &'static str, v: f64) -> Result<(), KernelError> {
    if !v.is_finite() {
        return Err(KernelError::InvalidParameter {
            name,
            reason: format!("must be finite, got {v}"),
        });
    }
    Ok(())
}

impl ReductionKernel {
    /// Complex Gaussian kernel with the given budget entries, `hbar = 1`.
    ///
    /// The product bound is saturated: `S_q * S_F - S_qF^2 = hbar^2/4`
    /// with `S_F` fixed by the other entries.
    pub fn gaussian(s_q: f64, s_qf: f64, f_bar: f64, dt: f64) -> Result<Self, KernelError> {
        Self::gaussian_with_hbar(s_q, s_qf, f_bar, dt, 1.0)
    }

    pub fn gaussian_with_hbar(
        s_q: f64,
        s_qf: f64,
        f_bar: f64,
        dt: f64,
        hbar: f64,
    ) -> Result<Self, KernelError> {
        require_finite_positive("s_q", s_q)?;
        require_finite_positive("dt", dt)?;
        require_finite_positive("hbar", hbar)?;
        require_finite("s_qf", s_qf)?;
        require_finite("f_bar", f_bar)?;
        Ok(ReductionKernel {
            shape: KernelShape::Gaussian,
            dt,
            hbar,
            delta_q: (s_q / dt).sqrt(),
            s_qf,
            f_bar,
        })
    }

    /// Gaussian kernel saturating the added-noise bound at phase `phi`.
    ///
    /// Sets `s_qf = -(hbar/2) cot(phi)` and `S_q = s_qq`; rejected when
    /// `|sin phi|` falls under [`SIN_PHI_MIN`].
    pub fn quantum_limited(
        phi: f64,
        s_qq: f64,
        dt: f64,
        f_bar: f64,
    ) -> Result<Self, KernelError> {
        Self::quantum_limited_with_hbar(phi, s_qq, dt, f_bar, 1.0)
    }

    pub fn quantum_limited_with_hbar(
        phi: f64,
        s_qq: f64,
        dt: f64,
        f_bar: f64,
        hbar: f64,
    ) -> Result<Self, KernelError> {
        require_finite("phi", phi)?;
        let sin_phi = phi.sin();
        if sin_phi.abs() <= SIN_PHI_MIN {
            return Err(KernelError::PhaseSingular {
                sin_phi: sin_phi.abs(),
                limit: SIN_PHI_MIN,
            });
        }
        let s_qf = -0.5 * hbar * phi.cos() / sin_phi;
        Self::gaussian_with_hbar(s_qq, s_qf, f_bar, dt, hbar)
    }

    /// Normalized Hermite-function superposition at length `scale`.
    ///
    /// Coefficients are renormalized to unit weight and the kernel is
    /// translated so the linearity condition holds exactly; the shift is
    /// analytic in the ladder matrix elements of position.
    pub fn hermite_superposition(
        scale: f64,
        coeffs: &[Complex64],
        dt: f64,
    ) -> Result<Self, KernelError> {
        Self::hermite_superposition_with_hbar(scale, coeffs, dt, 1.0)
    }

    pub fn hermite_superposition_with_hbar(
        scale: f64,
        coeffs: &[Complex64],
        dt: f64,
        hbar: f64,
    ) -> Result<Self, KernelError> {
        require_finite_positive("scale", scale)?;
        require_finite_positive("dt", dt)?;
        require_finite_positive("hbar", hbar)?;
        if coeffs.is_empty() {
            return Err(KernelError::InvalidParameter {
                name: "coeffs",
                reason: "at least one coefficient required".into(),
            });
        }
        let weight: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
        if !(weight.is_finite() && weight > 0.0) {
            return Err(KernelError::InvalidParameter {
                name: "coeffs",
                reason: "coefficients must have finite nonzero weight".into(),
            });
        }
        let coeffs: Vec<Complex64> = coeffs.iter().map(|c| c / weight.sqrt()).collect();
        // <x> in oscillator units: sum 2 Re[c_n* c_{n+1}] sqrt((n+1)/2)
        let mut xbar = 0.0;
        for n in 0..coeffs.len() - 1 {
            xbar += 2.0 * (coeffs[n].conj() * coeffs[n + 1]).re * ((n as f64 + 1.0) / 2.0).sqrt();
        }
        let shift = scale * xbar;
        let mut kernel = ReductionKernel {
            shape: KernelShape::Hermite {
                scale,
                shift,
                coeffs,
            },
            dt,
            hbar,
            delta_q: 0.0,
            s_qf: 0.0,
            f_bar: 0.0,
        };
        let raw = kernel.auto_functionals()?;
        kernel.adopt_measured(&raw)?;
        Ok(kernel)
    }

    /// Kernel from a declared uniform sample table.
    ///
    /// Enforces the grid rule (odd count >= 1025, coverage of
    /// `[-8 delta_q, 8 delta_q]`), renormalizes on the grid, and measures
    /// the budget scalars with finite differences.
    pub fn from_grid_samples(
        x0: f64,
        step: f64,
        values: Vec<Complex64>,
        dt: f64,
        hbar: f64,
    ) -> Result<Self, KernelError> {
        require_finite_positive("dt", dt)?;
        require_finite_positive("hbar", hbar)?;
        require_finite("x0", x0)?;
        require_finite_positive("step", step)?;
        let n = values.len();
        if n < GRID_MIN_POINTS || n % 2 == 0 {
            return Err(KernelError::GridRule(format!(
                "need an odd point count >= {GRID_MIN_POINTS}, got {n}"
            )));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(KernelError::InvalidParameter {
                name: "values",
                reason: "samples must be finite".into(),
            });
        }
        let dens: Vec<f64> = values.iter().map(|v| v.norm_sqr()).collect();
        let norm = simpson(step, &dens);
        if !norm.is_finite() || (norm - 1.0).abs() > 0.05 {
            return Err(KernelError::Normalization {
                residual: norm - 1.0,
                limit: 0.05,
            });
        }
        let scale = norm.sqrt();
        let values: Vec<Complex64> = values.into_iter().map(|v| v / scale).collect();
        let mut kernel = ReductionKernel {
            shape: KernelShape::Sampled { x0, step, values },
            dt,
            hbar,
            delta_q: 0.0,
            s_qf: 0.0,
            f_bar: 0.0,
        };
        let raw = kernel.sampled_functionals()?;
        // coverage check against the measured width
        let dq = raw.var.max(0.0).sqrt();
        let xmax = x0 + step * (n - 1) as f64;
        if x0 > -GRID_SPAN_FACTOR * dq || xmax < GRID_SPAN_FACTOR * dq {
            return Err(KernelError::GridRule(format!(
                "grid [{x0:.4}, {xmax:.4}] must cover [-{0:.4}, {0:.4}]",
                GRID_SPAN_FACTOR * dq
            )));
        }
        kernel.adopt_measured(&raw)?;
        Ok(kernel)
    }

    /// Grid-sampled variant of this kernel on a declared grid.
    ///
    /// `half_width` must reach [`GRID_SPAN_FACTOR`] times the rms width and
    /// `n_points` must be odd and at least [`GRID_MIN_POINTS`].
    pub fn sample_on_grid(&self, half_width: f64, n_points: usize) -> Result<Self, KernelError> {
        if half_width < GRID_SPAN_FACTOR * self.delta_q {
            return Err(KernelError::GridRule(format!(
                "half width {half_width:.4} under {:.4}",
                GRID_SPAN_FACTOR * self.delta_q
            )));
        }
        if n_points < GRID_MIN_POINTS || n_points % 2 == 0 {
            return Err(KernelError::GridRule(format!(
                "need an odd point count >= {GRID_MIN_POINTS}, got {n_points}"
            )));
        }
        let grid = UniformGrid::centered(0.0, half_width, n_points);
        let values: Vec<Complex64> = grid.points().iter().map(|&x| self.evaluate(x)).collect();
        Self::from_grid_samples(grid.x0, grid.step, values, self.dt, self.hbar)
    }

    /// Second moment of the single-shot momentum transfer.
    ///
    /// `hbar^2` times the derivative overlap, always measured by
    /// quadrature; the Gaussian closed form is deliberately not
    /// substituted so the value stays an independent route against the
    /// budget's `S_F`.
    pub fn kick_second_moment(&self) -> Result<f64, KernelError> {
        let raw = match &self.shape {
            KernelShape::Sampled { .. } => self.sampled_functionals()?,
            _ => self.auto_functionals()?,
        };
        Ok(self.hbar * self.hbar * raw.grad2)
    }

    /// Kernel value at `dq`; zero outside a sampled table.
    pub fn evaluate(&self, x: f64) -> Complex64 {
        match &self.shape {
            KernelShape::Gaussian => {
                let (n0, a, b) = self.gaussian_parameters();
                n0 * (-a * x * x - Complex64::i() * b * x).exp()
            }
            KernelShape::Hermite {
                scale,
                shift,
                coeffs,
            } => {
                let u = (x + shift) / scale;
                let phis = hermite_functions(coeffs.len(), u);
                let mut acc = Complex64::new(0.0, 0.0);
                for (c, p) in coeffs.iter().zip(&phis) {
                    acc += c * p;
                }
                acc / scale.sqrt()
            }
            KernelShape::Sampled { x0, step, values } => {
                let t = (x - x0) / step;
                if t < 0.0 || t > (values.len() - 1) as f64 {
                    return Complex64::new(0.0, 0.0);
                }
                let i = (t.floor() as usize).min(values.len() - 2);
                let f = t - i as f64;
                values[i] * (1.0 - f) + values[i + 1] * f
            }
        }
    }

    /// Complex Gaussian parameters `(normalization, a, b)` with
    /// `Omega = n0 exp(-a dq^2 - i b dq)`.
    fn gaussian_parameters(&self) -> (f64, Complex64, f64) {
        let dq2 = self.delta_q * self.delta_q;
        let alpha = 1.0 / (4.0 * dq2);
        let beta = self.s_qf / (2.0 * self.hbar * dq2);
        let b = self.dt * self.f_bar / self.hbar;
        let n0 = (2.0 * PI * dq2).powf(-0.25);
        (n0, Complex64::new(alpha, -beta), b)
    }

    /// Quadrature over the kernel's own representation.
    fn sampled_functionals(&self) -> Result<RawFunctionals, KernelError> {
        match &self.shape {
            KernelShape::Sampled { x0, step, values } => {
                let derivs = derivative4(*step, values);
                Ok(raw_functionals(*x0, *step, values, &derivs))
            }
            _ => Err(KernelError::NotSampled),
        }
    }

    /// Quadrature on an internally chosen grid with analytic derivatives.
    fn auto_functionals(&self) -> Result<RawFunctionals, KernelError> {
        let mut half = match &self.shape {
            KernelShape::Hermite { scale, shift, coeffs } => {
                scale * (2.0 * (2.0 * coeffs.len() as f64 + 3.0).sqrt() + 8.0) + shift.abs()
            }
            KernelShape::Gaussian => AUTO_GRID_SPAN * self.delta_q,
            KernelShape::Sampled { .. } => return self.sampled_functionals(),
        };
        for _ in 0..3 {
            let grid = UniformGrid::centered(0.0, half, AUTO_GRID_POINTS);
            let xs = grid.points();
            let (values, derivs) = self.samples_with_derivatives(&xs);
            let raw = raw_functionals(grid.x0, grid.step, &values, &derivs);
            let dq = raw.var.max(0.0).sqrt();
            if half >= AUTO_GRID_SPAN * dq {
                return Ok(raw);
            }
            // 10% headroom: the remeasured width moves by ulps between
            // grids, so growing to the exact bound can ratchet forever
            half = 1.1 * AUTO_GRID_SPAN * dq;
        }
        Err(KernelError::GridRule(
            "auto grid failed to cover the kernel width".into(),
        ))
    }

    /// Analytic samples and derivatives for smooth shapes.
    fn samples_with_derivatives(&self, xs: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
        match &self.shape {
            KernelShape::Gaussian => {
                let (n0, a, b) = self.gaussian_parameters();
                let mut vals = Vec::with_capacity(xs.len());
                let mut ders = Vec::with_capacity(xs.len());
                for &x in xs {
                    let v = n0 * (-a * x * x - Complex64::i() * b * x).exp();
                    vals.push(v);
                    ders.push((-2.0 * a * x - Complex64::i() * b) * v);
                }
                (vals, ders)
            }
            KernelShape::Hermite {
                scale,
                shift,
                coeffs,
            } => {
                let nmax = coeffs.len();
                let mut vals = Vec::with_capacity(xs.len());
                let mut ders = Vec::with_capacity(xs.len());
                for &x in xs {
                    let u = (x + shift) / scale;
                    let phis = hermite_functions(nmax + 1, u);
                    let mut v = Complex64::new(0.0, 0.0);
                    let mut d = Complex64::new(0.0, 0.0);
                    for (n, c) in coeffs.iter().enumerate() {
                        v += c * phis[n];
                        let lower = if n > 0 {
                            (n as f64 / 2.0).sqrt() * phis[n - 1]
                        } else {
                            0.0
                        };
                        let upper = ((n as f64 + 1.0) / 2.0).sqrt() * phis[n + 1];
                        d += c * (lower - upper);
                    }
                    vals.push(v / scale.sqrt());
                    ders.push(d / scale.powf(1.5));
                }
                (vals, ders)
            }
            KernelShape::Sampled { .. } => unreachable!("sampled shapes use their own grid"),
        }
    }

    /// Store measured scalars, enforcing the symmetry guards.
    fn adopt_measured(&mut self, raw: &RawFunctionals) -> Result<(), KernelError> {
        let dq = raw.var.max(0.0).sqrt();
        let lin_limit = 1e-6 * dq.max(1e-12);
        if raw.mean.abs() > lin_limit {
            return Err(KernelError::Linearity {
                residual: raw.mean,
                limit: lin_limit,
            });
        }
        let overlap_scale = raw.grad2.sqrt().max(1.0);
        if raw.overlap.re.abs() > RESIDUE_GUARD * overlap_scale {
            return Err(KernelError::ResidueGuard {
                quantity: "Re int Omega* Omega'",
                residual: raw.overlap.re,
                limit: RESIDUE_GUARD * overlap_scale,
            });
        }
        self.delta_q = dq;
        self.s_qf = self.hbar * raw.cross_im;
        self.f_bar = -self.hbar * raw.overlap.im / self.dt;
        Ok(())
    }

    /// Verification report from quadrature (all shapes).
    pub fn diagnostics(&self) -> Result<KernelDiagnostics, KernelError> {
        let (raw, points, half_width) = match &self.shape {
            KernelShape::Sampled { x0, step, values } => {
                let raw = self.sampled_functionals()?;
                (raw, values.len(), (-x0).max(x0 + step * (values.len() - 1) as f64))
            }
            _ => {
                let raw = self.auto_functionals()?;
                (raw, AUTO_GRID_POINTS, AUTO_GRID_SPAN * self.delta_q)
            }
        };
        Ok(KernelDiagnostics {
            norm_residual: raw.norm - 1.0,
            linearity_residual: raw.mean,
            delta_q: raw.var.max(0.0).sqrt(),
            s_qf: self.hbar * raw.cross_im,
            f_bar: -self.hbar * raw.overlap.im / self.dt,
            grid_points: points,
            half_width,
        })
    }

    /// Noise budget; closed forms for the Gaussian shape, quadrature
    /// otherwise.
    pub fn noise_budget(&self) -> Result<NoiseBudget, KernelError> {
        match &self.shape {
            KernelShape::Gaussian => {
                let s_q = self.dt * self.delta_q * self.delta_q;
                let s_f = (0.25 * self.hbar * self.hbar + self.s_qf * self.s_qf) / s_q;
                Ok(NoiseBudget {
                    s_q,
                    s_f,
                    s_qf: self.s_qf,
                    f_bar: self.f_bar,
                    hbar: self.hbar,
                })
            }
            _ => {
                let raw = match &self.shape {
                    KernelShape::Sampled { .. } => self.sampled_functionals()?,
                    _ => self.auto_functionals()?,
                };
                let y = raw.overlap.im;
                Ok(NoiseBudget {
                    s_q: self.dt * raw.var,
                    s_f: self.hbar * self.hbar / self.dt * (raw.grad2 - y * y),
                    s_qf: self.hbar * raw.cross_im,
                    f_bar: -self.hbar * y / self.dt,
                    hbar: self.hbar,
                })
            }
        }
    }

    pub fn shape(&self) -> &KernelShape {
        &self.shape
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.shape, KernelShape::Gaussian)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    /// Rms measurement error of a single outcome.
    pub fn delta_q(&self) -> f64 {
        self.delta_q
    }

    pub fn s_qf(&self) -> f64 {
        self.s_qf
    }

    pub fn f_bar(&self) -> f64 {
        self.f_bar
    }

    /// Write a sampled kernel as `delta_q,re_omega,im_omega` CSV with a
    /// `.json` sidecar holding `dt` and `hbar` next to it.
    pub fn write_grid_csv(&self, path: &Path) -> Result<(), KernelError> {
        let KernelShape::Sampled { x0, step, values } = &self.shape else {
            return Err(KernelError::NotSampled);
        };
        let mut out = String::from("delta_q,re_omega,im_omega\n");
        for (i, v) in values.iter().enumerate() {
            let x = x0 + step * i as f64;
            out.push_str(&format!("{},{},{}\n", x, v.re, v.im));
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        let sidecar = serde_json::to_string_pretty(&KernelSidecar {
            dt: self.dt,
            hbar: self.hbar,
        })
        .expect("sidecar serializes");
        std::fs::write(path.with_extension("json"), sidecar)?;
        Ok(())
    }

    /// Load a sampled kernel from CSV plus its `.json` sidecar.
    pub fn read_grid_csv(path: &Path) -> Result<Self, KernelError> {
        let csv_bytes = std::fs::read(path)?;
        let sidecar_bytes = std::fs::read(path.with_extension("json"))?;
        Self::from_csv_bytes(&csv_bytes, &sidecar_bytes)
    }

    /// Parse kernel CSV and sidecar content; the entry point behind
    /// [`ReductionKernel::read_grid_csv`] and the fuzz harness.
    pub fn from_csv_bytes(csv_bytes: &[u8], sidecar_bytes: &[u8]) -> Result<Self, KernelError> {
        let sidecar: KernelSidecar = serde_json::from_slice(sidecar_bytes)
            .map_err(|e| KernelError::Sidecar(e.to_string()))?;
        if !sidecar.dt.is_finite()
            || sidecar.dt <= 0.0
            || !sidecar.hbar.is_finite()
            || sidecar.hbar <= 0.0
        {
            return Err(KernelError::Sidecar(
                "dt and hbar must be finite and positive".into(),
            ));
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(csv_bytes);
        {
            let headers = reader
                .headers()
                .map_err(|e| KernelError::Csv(e.to_string()))?;
            let expected = ["delta_q", "re_omega", "im_omega"];
            if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
                return Err(KernelError::Csv(format!(
                    "expected header delta_q,re_omega,im_omega, got {}",
                    headers.iter().collect::<Vec<_>>().join(",")
                )));
            }
        }
        let mut xs = Vec::new();
        let mut values = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| KernelError::Csv(e.to_string()))?;
            if rec.len() != 3 {
                return Err(KernelError::Csv(format!(
                    "expected 3 columns, got {}",
                    rec.len()
                )));
            }
            let parse = |s: &str, col: &str| -> Result<f64, KernelError> {
                s.parse::<f64>()
                    .map_err(|_| KernelError::Csv(format!("bad {col} value {s:?}")))
            };
            xs.push(parse(&rec[0], "delta_q")?);
            values.push(Complex64::new(
                parse(&rec[1], "re_omega")?,
                parse(&rec[2], "im_omega")?,
            ));
        }
        if xs.len() < 2 {
            return Err(KernelError::Csv("fewer than two samples".into()));
        }
        let step = xs[1] - xs[0];
        if !(step.is_finite() && step > 0.0) {
            return Err(KernelError::Csv("grid must be strictly increasing".into()));
        }
        let tol = 1e-9 * step.abs().max(xs[0].abs());
        for i in 1..xs.len() {
            let expect = xs[0] + step * i as f64;
            if (xs[i] - expect).abs() > tol {
                return Err(KernelError::Csv(format!(
                    "grid not uniform at row {i}: {} vs {expect}",
                    xs[i]
                )));
            }
        }
        Self::from_grid_samples(xs[0], step, values, sidecar.dt, sidecar.hbar)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct KernelSidecar {
    dt: f64,
    hbar: f64,
}

/// Shared quadrature of the kernel integrals on a uniform grid.
fn raw_functionals(
    x0: f64,
    step: f64,
    values: &[Complex64],
    derivs: &[Complex64],
) -> RawFunctionals {
    let n = values.len();
    let mut dens = vec![0.0; n];
    let mut qdens = vec![0.0; n];
    let mut q2dens = vec![0.0; n];
    let mut g2 = vec![0.0; n];
    let mut ov = vec![Complex64::new(0.0, 0.0); n];
    let mut qov = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..n {
        let x = x0 + step * i as f64;
        let d = values[i].norm_sqr();
        dens[i] = d;
        qdens[i] = x * d;
        q2dens[i] = x * x * d;
        g2[i] = derivs[i].norm_sqr();
        let o = values[i].conj() * derivs[i];
        ov[i] = o;
        qov[i] = x * o;
    }
    RawFunctionals {
        norm: simpson(step, &dens),
        mean: simpson(step, &qdens),
        var: simpson(step, &q2dens),
        grad2: simpson(step, &g2),
        overlap: simpson_c(step, &ov),
        cross_im: simpson_c(step, &qov).im,
    }
}

/// Hermite functions `phi_0..phi_{nmax-1}` at `x`, orthonormal on the line.
fn hermite_functions(nmax: usize, x: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(nmax);
    let phi0 = PI.powf(-0.25) * (-0.5 * x * x).exp();
    out.push(phi0);
    if nmax == 1 {
        return out;
    }
    out.push(std::f64::consts::SQRT_2 * x * phi0);
    for n in 1..nmax - 1 {
        let next = x * (2.0 / (n as f64 + 1.0)).sqrt() * out[n]
            - (n as f64 / (n as f64 + 1.0)).sqrt() * out[n - 1];
        out.push(next);
    }
    out
}
