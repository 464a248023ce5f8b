//! Conditional density-matrix evolution under a continuous record.
//!
//! The integrators share one truncated number basis and one splitting:
//! the basis Hamiltonian is applied exactly (diagonal phases), the
//! measurement acts in the position eigenframe of the truncated `q`,
//! where every measurement map in this module is diagonal.
//!
//! * exact Kraus stepping on density matrices: free evolution, an
//!   outcome sampled from the gridded marginal
//!   `w(y) = Tr[Omega^dag Omega rho]`, then the update
//!   `rho -> Omega rho Omega^dag / w`, valid for any kernel;
//! * diffusive trajectories for real kernels of strength `S_F`, solving
//!   `drho = -(S_F/2 hbar^2) [q,[q,rho]] dt + (sqrt(S_F)/hbar) {q - <q>, rho} dW`:
//!   state vectors are multiplied by the per-step Gaussian reduction
//!   factor at an exactly sampled outcome, which integrates the
//!   measurement part of the equation in closed form, so the ensemble
//!   mean reproduces the Lindblad flow with no discretization bias;
//! * the Lindblad reference, whose double-commutator dissipator is the
//!   exact decay `rho_kl *= exp(-(S_F dt / 2 hbar^2) (x_k - x_l)^2)` in
//!   the position frame;
//! * [`SmeEngine::euler_step`], the textbook Euler-Maruyama update,
//!   kept for order analysis. Its stability region is bounded: the
//!   linearized decay factor `1 - (S_F dt / 2 hbar^2) (x_k - x_l)^2`
//!   must stay inside the unit circle for the extreme position
//!   eigenvalues, which fails for large bases at fixed `S_F dt` (the
//!   production paths above have no such limit).
//!
//! Trace is renormalized exactly each step and density matrices are
//! re-Hermitized; the drift removed that way is tracked, not hidden.
//! Purity may not exceed `1 + 1e-9` on the density-matrix paths; the
//! trajectory path evolves state vectors, so its purity is pinned at 1
//! by construction.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{InitialState, ObjectModel};
use crate::fock::{FockError, FockSpace};
use crate::grid::UniformGrid;
use crate::kernels::{KernelError, ReductionKernel};
use crate::sequence::MeasurementRecord;

/// Population allowed in the top two basis levels before aborting.
pub const TRUNCATION_GUARD: f64 = 1e-6;
/// Purity ceiling on the exact (Kraus, Lindblad) paths.
pub const PURITY_CEILING: f64 = 1.0 + 1e-9;

const OUTCOME_POINTS: usize = 257;
const OUTCOME_SPAN: f64 = 8.0;

#[derive(Debug, Error)]
pub enum SmeError {
    #[error(transparent)]
    Fock(#[from] FockError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("the number-basis integrator needs an undamped oscillator model, got {0}")]
    UnsupportedModel(String),
    #[error("unsupported on this path: {0}")]
    Unsupported(String),
    #[error("truncation overflow: top-level population {occupancy:.3e} exceeds {limit:.3e}; enlarge the basis")]
    Truncation { occupancy: f64, limit: f64 },
    #[error("state invariant violated: {name} = {value:.6e} outside {limit:.3e}")]
    InvariantViolated {
        name: &'static str,
        value: f64,
        limit: f64,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Density matrix in the truncated number basis, tagged with its time.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityState {
    rho: Array2<Complex64>,
    time: f64,
}

impl DensityState {
    /// Validating constructor: unit trace within 1e-9, Hermitian within
    /// 1e-12, square.
    pub fn new(rho: Array2<Complex64>, time: f64) -> Result<Self, SmeError> {
        if rho.nrows() != rho.ncols() {
            return Err(SmeError::InvalidParameter(format!(
                "density matrix must be square, got {}x{}",
                rho.nrows(),
                rho.ncols()
            )));
        }
        let state = DensityState { rho, time };
        let tr = state.trace();
        if (tr - 1.0).abs() > 1e-9 {
            return Err(SmeError::InvariantViolated {
                name: "trace",
                value: tr,
                limit: 1e-9,
            });
        }
        let herm = state.hermiticity_residual();
        if herm > 1e-12 {
            return Err(SmeError::InvariantViolated {
                name: "hermiticity",
                value: herm,
                limit: 1e-12,
            });
        }
        Ok(state)
    }

    pub fn rho(&self) -> &Array2<Complex64> {
        &self.rho
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.rho[[i, i]].re).sum()
    }

    /// `Tr rho^2` by the Frobenius norm of the Hermitian matrix.
    pub fn purity(&self) -> f64 {
        self.rho.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn hermiticity_residual(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for i in 0..d {
            for j in 0..=i {
                worst = worst.max((self.rho[[i, j]] - self.rho[[j, i]].conj()).norm());
            }
        }
        worst
    }

    /// `Tr[A rho]` for a Hermitian observable given as a complex matrix.
    pub fn expectation(&self, op: &Array2<Complex64>) -> f64 {
        let d = self.dim();
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..d {
            for j in 0..d {
                acc += op[[i, j]] * self.rho[[j, i]];
            }
        }
        acc.re
    }

    /// Frobenius distance to another state.
    pub fn distance(&self, other: &DensityState) -> f64 {
        let mut acc = 0.0;
        for (a, b) in self.rho.iter().zip(other.rho.iter()) {
            acc += (a - b).norm_sqr();
        }
        acc.sqrt()
    }
}

/// Back-action force statistics of one kernel over its interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ForceStatistics {
    pub mean: f64,
    pub second_moment: f64,
    pub variance: f64,
    pub dt: f64,
}

/// Source of `q_bar` in the diffusive update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QBarMode {
    /// `Tr[q rho]`, recomputed from the incoming state.
    Conditional,
    /// Externally fixed reference.
    Fixed(f64),
}

/// Mean, second moment, and variance of the back-action force.
///
/// The second moment is the kernel's momentum-transfer moment over
/// `dt^2`, measured by quadrature; the variance subtracts the squared
/// mean. `variance * dt` landing on the budget's `S_F` is therefore a
/// consistency statement between two routes, not a definition.
pub fn force_statistics(kernel: &ReductionKernel) -> Result<ForceStatistics, SmeError> {
    let dt = kernel.dt();
    let second_moment = kernel.kick_second_moment()? / (dt * dt);
    let mean = kernel.f_bar();
    Ok(ForceStatistics {
        mean,
        second_moment,
        variance: second_moment - mean * mean,
        dt,
    })
}

/// `S_F` of a kernel admissible on the diffusive path (real kernels only).
pub fn diffusive_strength(kernel: &ReductionKernel) -> Result<f64, SmeError> {
    let budget = kernel.noise_budget()?;
    let scale = kernel.hbar().max(budget.s_qf.abs());
    if budget.s_qf.abs() > 1e-12 * scale {
        return Err(SmeError::Unsupported(format!(
            "the diffusive limit holds for real kernels only; S_qF = {} != 0 \
             (use the exact Kraus path)",
            budget.s_qf
        )));
    }
    Ok(budget.s_f)
}

/// Per-step trajectory observables, one row per measurement.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepSample {
    pub step: usize,
    pub time: f64,
    pub outcome: f64,
    pub trace: f64,
    pub purity: f64,
}

/// Number-basis integrator bound to one oscillator model.
pub struct SmeEngine {
    space: FockSpace,
}

impl SmeEngine {
    /// Basis matched to the model's oscillator; free and damped models are
    /// rejected because the basis Hamiltonian would not be diagonal.
    pub fn for_model(model: &ObjectModel, dim: usize, hbar: f64) -> Result<Self, SmeError> {
        let (mass, omega0) = match *model {
            ObjectModel::Oscillator { mass, omega0 } => (mass, omega0),
            ref other => return Err(SmeError::UnsupportedModel(format!("{other:?}"))),
        };
        Ok(SmeEngine {
            space: FockSpace::oscillator(dim, mass, omega0, hbar)?,
        })
    }

    pub fn space(&self) -> &FockSpace {
        &self.space
    }

    /// Density matrix for a supported initial state: ground, thermal, or
    /// a coherent displacement of the ground state. Squeezed covariances
    /// have no finite-ladder representation here and are rejected.
    pub fn initial_density(&self, init: &InitialState) -> Result<DensityState, SmeError> {
        let hbar = self.space.hbar();
        let model = ObjectModel::Oscillator {
            mass: self.space.mass(),
            omega0: self.space.omega0(),
        };
        let rho = match init {
            InitialState::Ground => self.space.ground_density(),
            InitialState::Thermal { temperature } => {
                if !(temperature.is_finite() && *temperature >= 0.0) {
                    return Err(SmeError::InvalidParameter(format!(
                        "temperature must be finite and nonnegative, got {temperature}"
                    )));
                }
                if *temperature == 0.0 {
                    self.space.ground_density()
                } else {
                    let d = self.space.dim();
                    let x = hbar * self.space.omega0() / temperature;
                    let mut rho = Array2::<Complex64>::zeros((d, d));
                    let z: f64 = (0..d).map(|n| (-(n as f64) * x).exp()).sum();
                    for n in 0..d {
                        rho[[n, n]] = Complex64::new((-(n as f64) * x).exp() / z, 0.0);
                    }
                    rho
                }
            }
            InitialState::Gaussian { state } => {
                let ground = InitialState::Ground
                    .resolve(&model, hbar)
                    .expect("oscillator ground state");
                let matches_ground = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1e-300);
                if !(matches_ground(state.cov_qq, ground.cov_qq)
                    && matches_ground(state.cov_pp, ground.cov_pp)
                    && state.cov_qp.abs() <= 1e-9 * (ground.cov_qq * ground.cov_pp).sqrt())
                {
                    return Err(SmeError::Unsupported(
                        "only ground-covariance (coherent) Gaussian initial states map onto \
                         the number basis; squeezed or mixed covariances are not representable"
                            .into(),
                    ));
                }
                let re = state.mean_q * (self.space.mass() * self.space.omega0() / (2.0 * hbar)).sqrt();
                let im = state.mean_p / (2.0 * hbar * self.space.mass() * self.space.omega0()).sqrt();
                self.space.coherent_density(Complex64::new(re, im))
            }
        };
        let state = DensityState::new(rho, 0.0)?;
        self.check_truncation(&state)?;
        Ok(state)
    }

    fn check_truncation(&self, state: &DensityState) -> Result<(), SmeError> {
        let occ = self.space.top_occupancy(state.rho(), 2);
        if occ > TRUNCATION_GUARD {
            return Err(SmeError::Truncation {
                occupancy: occ,
                limit: TRUNCATION_GUARD,
            });
        }
        Ok(())
    }

    /// Exact basis unitary over `dt` applied in place.
    fn rotate(&self, rho: &mut Array2<Complex64>, dt: f64) {
        let phases = self.space.evolution_phases(dt);
        let d = self.space.dim();
        for i in 0..d {
            for j in 0..d {
                rho[[i, j]] = phases[i] * rho[[i, j]] * phases[j].conj();
            }
        }
    }

    /// One exact measurement step: evolve by `dt`, sample an outcome from
    /// the gridded marginal by inverse CDF, reduce, renormalize.
    pub fn kraus_step(
        &self,
        state: &DensityState,
        kernel: &ReductionKernel,
        dt: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(DensityState, f64), SmeError> {
        self.check_truncation(state)?;
        let mut rho = state.rho().clone();
        self.rotate(&mut rho, dt);
        // DVR frame: rho_tilde = V^T rho V, diagonal weights carry the
        // position distribution
        let v = self.space.dvr_transform();
        let rho_tilde = conjugate_by_transpose(v, &rho);
        let xs = self.space.dvr_points();
        let d = self.space.dim();
        let mut mean = 0.0;
        let mut second = 0.0;
        for k in 0..d {
            let w = rho_tilde[[k, k]].re.max(0.0);
            mean += xs[k] * w;
            second += xs[k] * xs[k] * w;
        }
        let var = (second - mean * mean).max(0.0);
        let sigma_tot = (var + kernel.delta_q() * kernel.delta_q()).sqrt();
        let grid = UniformGrid::centered(mean, OUTCOME_SPAN * sigma_tot, OUTCOME_POINTS);
        let weights: Vec<f64> = grid
            .points()
            .iter()
            .map(|&y| {
                (0..d)
                    .map(|k| kernel.evaluate(y - xs[k]).norm_sqr() * rho_tilde[[k, k]].re.max(0.0))
                    .sum()
            })
            .collect();
        let outcome = inverse_cdf_sample(&grid, &weights, rng)?;
        // reduce in the DVR frame, then return to the number basis
        let mut reduced = rho_tilde;
        let omega: Vec<Complex64> = xs.iter().map(|&x| kernel.evaluate(outcome - x)).collect();
        for i in 0..d {
            for j in 0..d {
                reduced[[i, j]] = omega[i] * reduced[[i, j]] * omega[j].conj();
            }
        }
        let mut rho_new = conjugate_by(v, &reduced);
        renormalize(&mut rho_new)?;
        let out = DensityState {
            rho: rho_new,
            time: state.time() + dt,
        };
        self.check_truncation(&out)?;
        let purity = out.purity();
        if purity > PURITY_CEILING {
            return Err(SmeError::InvariantViolated {
                name: "purity",
                value: purity,
                limit: PURITY_CEILING,
            });
        }
        Ok((out, outcome))
    }

    /// One Euler-Maruyama step for a real kernel of strength `s_f`:
    /// exact unitary, first-order expansion of both measurement terms,
    /// exact trace renormalization.
    ///
    /// Analysis path, not production. The expansion is only stable
    /// while `(s_f dt / 2 hbar^2) (x_max - x_min)^2 < 2` for the
    /// extreme position eigenvalues of the truncated basis and while
    /// `sqrt(s_f) |x_max| sqrt(dt) / hbar` is small; outside that
    /// region corner coherences are amplified every step. Purity is
    /// not policed here: the `dW^2 - dt` fluctuation moves it at
    /// O(sqrt(dt)) per step.
    pub fn euler_step(
        &self,
        state: &DensityState,
        s_f: f64,
        dt: f64,
        dw: f64,
        q_bar: QBarMode,
    ) -> Result<DensityState, SmeError> {
        if !(s_f.is_finite() && s_f >= 0.0) {
            return Err(SmeError::InvalidParameter(format!(
                "s_f must be finite and nonnegative, got {s_f}"
            )));
        }
        let hbar = self.space.hbar();
        let d = self.space.dim();
        let mut rho = state.rho().clone();
        self.rotate(&mut rho, dt);
        let t = self.ladder_couplings();
        let r = rho.as_slice().expect("contiguous");
        let mut c = vec![Complex64::new(0.0, 0.0); d * d];
        let mut qc = vec![Complex64::new(0.0, 0.0); d * d];
        let mut cq = vec![Complex64::new(0.0, 0.0); d * d];
        tridiag_left(&t, r, d, &mut c);
        tridiag_left(&t, &c, d, &mut qc);
        tridiag_right(&t, &c, d, &mut cq);
        let q_ref = match q_bar {
            QBarMode::Conditional => {
                let mut acc = 0.0;
                // Tr[q rho] = sum_i t_i * 2 Re rho[i+1, i]
                for i in 0..d - 1 {
                    acc += t[i] * 2.0 * r[(i + 1) * d + i].re;
                }
                acc
            }
            QBarMode::Fixed(v) => v,
        };
        let lam = 0.5 * s_f * dt / (hbar * hbar);
        let mu = s_f.sqrt() * dw / hbar;
        let mut out = vec![Complex64::new(0.0, 0.0); d * d];
        for i in 0..d {
            for j in 0..d {
                let ij = i * d + j;
                let ji = j * d + i;
                // [q,[q,rho]] = q^2 rho - 2 q rho q + (q^2 rho)^dag
                let dd = qc[ij] - 2.0 * cq[ij] + qc[ji].conj();
                // {q - q_bar, rho} = q rho + (q rho)^dag - 2 q_bar rho
                let h = c[ij] + c[ji].conj() - 2.0 * q_ref * r[ij];
                out[ij] = r[ij] - lam * dd + mu * h;
            }
        }
        let mut rho_new =
            Array2::from_shape_vec((d, d), out).expect("dimensions preserved");
        renormalize(&mut rho_new)?;
        Ok(DensityState {
            rho: rho_new,
            time: state.time() + dt,
        })
    }

    /// One step of the unconditional flow: exact unitary, then the
    /// double-commutator dissipator applied as its exact decay in the
    /// position frame, `rho_kl *= exp(-(s_f dt / 2 hbar^2)(x_k - x_l)^2)`.
    ///
    /// The decay is completely positive and trace preserving at any
    /// step size, and it is the exact noise average of the trajectory
    /// path, so ensemble comparisons against it carry no integrator
    /// bias.
    pub fn lindblad_step(
        &self,
        state: &DensityState,
        s_f: f64,
        dt: f64,
    ) -> Result<DensityState, SmeError> {
        if !(s_f.is_finite() && s_f >= 0.0) {
            return Err(SmeError::InvalidParameter(format!(
                "s_f must be finite and nonnegative, got {s_f}"
            )));
        }
        let hbar = self.space.hbar();
        let mut rho = state.rho().clone();
        self.rotate(&mut rho, dt);
        let v = self.space.dvr_transform();
        let mut rho_tilde = conjugate_by_transpose(v, &rho);
        let xs = self.space.dvr_points();
        let d = self.space.dim();
        let lam = 0.5 * s_f * dt / (hbar * hbar);
        for k in 0..d {
            for l in 0..d {
                let dx = xs[k] - xs[l];
                rho_tilde[[k, l]] *= (-lam * dx * dx).exp();
            }
        }
        let mut rho_new = conjugate_by(v, &rho_tilde);
        renormalize(&mut rho_new)?;
        let out = DensityState {
            rho: rho_new,
            time: state.time() + dt,
        };
        let purity = out.purity();
        if purity > PURITY_CEILING {
            return Err(SmeError::InvariantViolated {
                name: "purity",
                value: purity,
                limit: PURITY_CEILING,
            });
        }
        Ok(out)
    }

    /// Noise-averaged Kraus step: `int dy Omega rho Omega^dag`, evaluated
    /// by quadrature over the outcome grid. Deterministic; used to pin
    /// the Kraus-vs-diffusive step agreement order.
    pub fn averaged_kraus_step(
        &self,
        state: &DensityState,
        kernel: &ReductionKernel,
        dt: f64,
    ) -> Result<DensityState, SmeError> {
        self.check_truncation(state)?;
        let mut rho = state.rho().clone();
        self.rotate(&mut rho, dt);
        let v = self.space.dvr_transform();
        let rho_tilde = conjugate_by_transpose(v, &rho);
        let xs = self.space.dvr_points();
        let d = self.space.dim();
        // ensemble map in the DVR frame is a pointwise kernel overlap:
        // rho'_{kl} = rho_{kl} * int Omega(y - x_k) Omega*(y - x_l) dy
        let mut mean = 0.0;
        let mut second = 0.0;
        for k in 0..d {
            let w = rho_tilde[[k, k]].re.max(0.0);
            mean += xs[k] * w;
            second += xs[k] * xs[k] * w;
        }
        let var = (second - mean * mean).max(0.0);
        let sigma_tot = (var + kernel.delta_q() * kernel.delta_q()).sqrt();
        let grid = UniformGrid::centered(mean, OUTCOME_SPAN * sigma_tot, OUTCOME_POINTS);
        let ys = grid.points();
        let mut overlap = Array2::<Complex64>::zeros((d, d));
        for k in 0..d {
            for l in 0..=k {
                let vals: Vec<Complex64> = ys
                    .iter()
                    .map(|&y| kernel.evaluate(y - xs[k]) * kernel.evaluate(y - xs[l]).conj())
                    .collect();
                let o = crate::grid::simpson_c(grid.step, &vals);
                overlap[[k, l]] = o;
                overlap[[l, k]] = o.conj();
            }
        }
        let mut reduced = rho_tilde;
        for k in 0..d {
            for l in 0..d {
                reduced[[k, l] ] *= overlap[[k, l]];
            }
        }
        let mut rho_new = conjugate_by(v, &reduced);
        renormalize(&mut rho_new)?;
        Ok(DensityState {
            rho: rho_new,
            time: state.time() + dt,
        })
    }

    fn ladder_couplings(&self) -> Vec<f64> {
        let d = self.space.dim();
        let x_zp = (0.5 * self.space.hbar() / (self.space.mass() * self.space.omega0())).sqrt();
        (0..d - 1).map(|n| x_zp * ((n + 1) as f64).sqrt()).collect()
    }

    /// Full Kraus trajectory at the kernel's own rate.
    pub fn run_trajectory(
        &self,
        init: &DensityState,
        kernel: &ReductionKernel,
        duration: f64,
        seed: u64,
    ) -> Result<(MeasurementRecord, DensityState), SmeError> {
        let (record, state, _) = self.run_trajectory_logged(init, kernel, duration, seed)?;
        Ok((record, state))
    }

    pub fn run_trajectory_logged(
        &self,
        init: &DensityState,
        kernel: &ReductionKernel,
        duration: f64,
        seed: u64,
    ) -> Result<(MeasurementRecord, DensityState, Vec<StepSample>), SmeError> {
        let dt = kernel.dt();
        let steps = integral_steps(duration, dt)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = init.clone();
        let mut outcomes = Vec::with_capacity(steps);
        let mut log = Vec::with_capacity(steps);
        for step in 0..steps {
            let (next, outcome) = self.kraus_step(&state, kernel, dt, &mut rng)?;
            state = next;
            outcomes.push(outcome);
            log.push(StepSample {
                step,
                time: state.time(),
                outcome,
                trace: state.trace(),
                purity: state.purity(),
            });
        }
        Ok((MeasurementRecord { outcomes, seed }, state, log))
    }

    /// One state-vector trajectory of the diffusive equation.
    ///
    /// Each step applies the exact unitary, then one Gaussian reduction
    /// of width `Delta q^2 = hbar^2 / (4 s_f dt)` at an outcome drawn
    /// from the exact marginal (position component, then Gaussian
    /// offset). That pair is the closed-form solution of the
    /// measurement terms over `dt`, so the scheme is stable at any
    /// basis size and its outcome average is exactly the
    /// [`SmeEngine::lindblad_step`] decay.
    fn pure_traj(
        &self,
        psi0: &[Complex64],
        s_f: f64,
        steps: usize,
        dt: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<Complex64>, TrajectoryDiagnostics), SmeError> {
        let d = self.space.dim();
        let hbar = self.space.hbar();
        let v = self
            .space
            .dvr_transform()
            .as_slice()
            .expect("row-major transform");
        let xs = self.space.dvr_points();
        let phases = self.space.evolution_phases(dt);
        let measure = s_f > 0.0;
        let delta_q2 = hbar * hbar / (4.0 * s_f * dt);
        let delta_q = delta_q2.sqrt();
        let mut psi = psi0.to_vec();
        let mut tilde = vec![Complex64::new(0.0, 0.0); d];
        let mut diag = TrajectoryDiagnostics {
            max_purity: 1.0,
            ..Default::default()
        };
        for _ in 0..steps {
            for (c, phase) in psi.iter_mut().zip(&phases) {
                *c *= phase;
            }
            if measure {
                tmatvec(v, d, &psi, &mut tilde);
                let total: f64 = tilde.iter().map(|c| c.norm_sqr()).sum();
                if !(total.is_finite() && total > 0.0) {
                    return Err(SmeError::InvariantViolated {
                        name: "trace",
                        value: total,
                        limit: 0.0,
                    });
                }
                let target = rng.gen::<f64>() * total;
                let mut acc = 0.0;
                let mut pick = d - 1;
                for (k, t) in tilde.iter().enumerate() {
                    acc += t.norm_sqr();
                    if target <= acc {
                        pick = k;
                        break;
                    }
                }
                let y = xs[pick] + delta_q * rng.sample::<f64, _>(StandardNormal);
                for (k, t) in tilde.iter_mut().enumerate() {
                    let dy = y - xs[k];
                    *t *= (-dy * dy / (4.0 * delta_q2)).exp();
                }
                matvec(v, d, &tilde, &mut psi);
            }
            let norm2: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
            if !(norm2.is_finite() && norm2 > 0.0) {
                return Err(SmeError::InvariantViolated {
                    name: "trace",
                    value: norm2,
                    limit: 0.0,
                });
            }
            let inv = 1.0 / norm2.sqrt();
            for c in psi.iter_mut() {
                *c *= inv;
            }
            let residual = psi.iter().map(|c| c.norm_sqr()).sum::<f64>() - 1.0;
            diag.max_trace_deviation = diag.max_trace_deviation.max(residual.abs());
        }
        Ok((psi, diag))
    }

    /// One diffusive trajectory; returns the final state as a density
    /// matrix and the largest per-step deviations seen along the way.
    ///
    /// A mixed initial state is unraveled stochastically: the starting
    /// vector is drawn from its spectral decomposition with the
    /// trajectory's own generator, so an ensemble over seeds stays
    /// unbiased for the mixed mean.
    pub fn run_ito_trajectory(
        &self,
        init: &DensityState,
        s_f: f64,
        duration: f64,
        dt: f64,
        seed: u64,
    ) -> Result<(DensityState, TrajectoryDiagnostics), SmeError> {
        let steps = integral_steps(duration, dt)?;
        let comps = spectral_components(init.rho())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi0 = draw_component(&comps, &mut rng);
        let (psi, diag) = self.pure_traj(psi0, s_f, steps, dt, &mut rng)?;
        Ok((
            DensityState {
                rho: outer(&psi),
                time: init.time() + duration,
            },
            diag,
        ))
    }

    /// Ensemble of diffusive trajectories with a deterministic mean.
    ///
    /// Per-trajectory RNG streams are indexed off `seed`; final vectors
    /// are collected in trajectory order and their projectors averaged
    /// in a fixed pairwise tree, so the result is byte-stable under any
    /// worker count.
    ///
    /// Both this ensemble and [`SmeEngine::lindblad_step`] integrate
    /// the model as truncated at the engine's dimension; whether that
    /// truncation represents the physical system is the caller's
    /// concern (the Kraus path, which samples outcomes from a gridded
    /// marginal, refuses to run once the top of the basis is populated;
    /// this path has no such grid and no such guard).
    pub fn run_ito_ensemble(
        &self,
        init: &DensityState,
        s_f: f64,
        duration: f64,
        dt: f64,
        n_traj: usize,
        seed: u64,
    ) -> Result<(DensityState, TrajectoryDiagnostics), SmeError> {
        if n_traj == 0 {
            return Err(SmeError::InvalidParameter("need at least one trajectory".into()));
        }
        let steps = integral_steps(duration, dt)?;
        let comps = spectral_components(init.rho())?;
        let results: Vec<Result<(Vec<Complex64>, TrajectoryDiagnostics), SmeError>> = (0..n_traj)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let psi0 = draw_component(&comps, &mut rng);
                self.pure_traj(psi0, s_f, steps, dt, &mut rng)
            })
            .collect();
        let mut psis = Vec::with_capacity(n_traj);
        let mut diag = TrajectoryDiagnostics::default();
        for r in results {
            let (psi, d) = r?;
            diag.merge(&d);
            psis.push(psi);
        }
        let time = init.time() + duration;
        let n = psis.len() as f64;
        let mean = pairwise_outer_sum(&psis).mapv_into(|v| v / n);
        Ok((DensityState { rho: mean, time }, diag))
    }
}

/// Worst observed per-step deviations along a trajectory.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct TrajectoryDiagnostics {
    pub max_trace_deviation: f64,
    pub max_purity: f64,
    pub max_hermiticity_drift: f64,
}

impl TrajectoryDiagnostics {
    fn merge(&mut self, other: &TrajectoryDiagnostics) {
        self.max_trace_deviation = self.max_trace_deviation.max(other.max_trace_deviation);
        self.max_purity = self.max_purity.max(other.max_purity);
        self.max_hermiticity_drift = self
            .max_hermiticity_drift
            .max(other.max_hermiticity_drift);
    }
}

fn integral_steps(duration: f64, dt: f64) -> Result<usize, SmeError> {
    if !(duration.is_finite() && duration > 0.0 && dt.is_finite() && dt > 0.0) {
        return Err(SmeError::InvalidParameter(format!(
            "duration and dt must be finite and positive, got {duration} and {dt}"
        )));
    }
    let steps = (duration / dt).round();
    if steps < 1.0 || (steps * dt - duration).abs() > 1e-9 * duration.max(1.0) {
        return Err(SmeError::InvalidParameter(format!(
            "duration {duration} is not an integral number of steps of {dt}"
        )));
    }
    Ok(steps as usize)
}

/// Exact trace renormalization plus re-Hermitization; returns the
/// Hermiticity drift that was removed.
fn renormalize(rho: &mut Array2<Complex64>) -> Result<f64, SmeError> {
    let d = rho.nrows();
    let tr: f64 = (0..d).map(|i| rho[[i, i]].re).sum();
    if !(tr.is_finite() && tr > 0.0) {
        return Err(SmeError::InvariantViolated {
            name: "trace",
            value: tr,
            limit: 0.0,
        });
    }
    let inv = 1.0 / tr;
    let mut drift = 0.0f64;
    for i in 0..d {
        for j in 0..=i {
            let a = rho[[i, j]];
            let b = rho[[j, i]];
            drift = drift.max((a - b.conj()).norm());
            let sym = 0.5 * (a + b.conj()) * inv;
            rho[[i, j]] = sym;
            rho[[j, i]] = sym.conj();
        }
    }
    Ok(drift)
}

/// `V^T A V` for real orthogonal `V`.
fn conjugate_by_transpose(v: &Array2<f64>, a: &Array2<Complex64>) -> Array2<Complex64> {
    let d = v.nrows();
    let mut tmp = Array2::<Complex64>::zeros((d, d));
    for i in 0..d {
        for k in 0..d {
            let vki = v[[k, i]];
            if vki == 0.0 {
                continue;
            }
            for j in 0..d {
                tmp[[i, j]] += vki * a[[k, j]];
            }
        }
    }
    let mut out = Array2::<Complex64>::zeros((d, d));
    for i in 0..d {
        for k in 0..d {
            let t = tmp[[i, k]];
            for j in 0..d {
                out[[i, j]] += t * v[[k, j]];
            }
        }
    }
    out
}

/// `V A V^T` for real orthogonal `V`.
fn conjugate_by(v: &Array2<f64>, a: &Array2<Complex64>) -> Array2<Complex64> {
    let d = v.nrows();
    let mut tmp = Array2::<Complex64>::zeros((d, d));
    for i in 0..d {
        for k in 0..d {
            let vik = v[[i, k]];
            if vik == 0.0 {
                continue;
            }
            for j in 0..d {
                tmp[[i, j]] += vik * a[[k, j]];
            }
        }
    }
    let mut out = Array2::<Complex64>::zeros((d, d));
    for i in 0..d {
        for k in 0..d {
            let t = tmp[[i, k]];
            for j in 0..d {
                out[[i, j]] += t * v[[j, k]];
            }
        }
    }
    out
}

/// `out = q A` for tridiagonal `q` with couplings `t`.
fn tridiag_left(t: &[f64], a: &[Complex64], d: usize, out: &mut [Complex64]) {
    for i in 0..d {
        let lower = if i > 0 { Some(t[i - 1]) } else { None };
        let upper = if i + 1 < d { Some(t[i]) } else { None };
        for j in 0..d {
            let mut acc = Complex64::new(0.0, 0.0);
            if let Some(tl) = lower {
                acc += tl * a[(i - 1) * d + j];
            }
            if let Some(tu) = upper {
                acc += tu * a[(i + 1) * d + j];
            }
            out[i * d + j] = acc;
        }
    }
}

/// `out = A q` for tridiagonal `q` with couplings `t`.
fn tridiag_right(t: &[f64], a: &[Complex64], d: usize, out: &mut [Complex64]) {
    for i in 0..d {
        let row = &a[i * d..(i + 1) * d];
        for j in 0..d {
            let mut acc = Complex64::new(0.0, 0.0);
            if j > 0 {
                acc += row[j - 1] * t[j - 1];
            }
            if j + 1 < d {
                acc += row[j + 1] * t[j];
            }
            out[i * d + j] = acc;
        }
    }
}

/// Inverse-CDF draw from a tabulated density via its piecewise-linear
/// cumulative sum.
fn inverse_cdf_sample(
    grid: &UniformGrid,
    weights: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<f64, SmeError> {
    let n = weights.len();
    let mut cdf = Vec::with_capacity(n);
    let mut acc = 0.0;
    cdf.push(0.0);
    for i in 1..n {
        acc += 0.5 * (weights[i - 1] + weights[i]) * grid.step;
        cdf.push(acc);
    }
    if !(acc.is_finite() && acc > 0.0) {
        return Err(SmeError::InvalidParameter(
            "outcome density vanished on its grid".into(),
        ));
    }
    let target = rng.gen::<f64>() * acc;
    let idx = match cdf.binary_search_by(|c| c.partial_cmp(&target).expect("finite cdf")) {
        Ok(i) => i,
        Err(i) => i.saturating_sub(1).min(n - 2),
    };
    let seg = (cdf[idx + 1] - cdf[idx]).max(f64::MIN_POSITIVE);
    let frac = ((target - cdf[idx]) / seg).clamp(0.0, 1.0);
    Ok(grid.point(idx) + frac * grid.step)
}

/// `out = V^T x` for row-major real `V` against a complex vector.
fn tmatvec(v: &[f64], d: usize, x: &[Complex64], out: &mut [Complex64]) {
    out.fill(Complex64::new(0.0, 0.0));
    for k in 0..d {
        let xk = x[k];
        let row = &v[k * d..(k + 1) * d];
        for (o, &vki) in out.iter_mut().zip(row) {
            *o += vki * xk;
        }
    }
}

/// `out = V x` for row-major real `V` against a complex vector.
fn matvec(v: &[f64], d: usize, x: &[Complex64], out: &mut [Complex64]) {
    for (k, o) in out.iter_mut().enumerate() {
        let row = &v[k * d..(k + 1) * d];
        let mut acc = Complex64::new(0.0, 0.0);
        for (&vki, &xi) in row.iter().zip(x) {
            acc += vki * xi;
        }
        *o = acc;
    }
}

/// Projector `psi psi^dag`.
fn outer(psi: &[Complex64]) -> Array2<Complex64> {
    let d = psi.len();
    Array2::from_shape_fn((d, d), |(i, j)| psi[i] * psi[j].conj())
}

/// Fixed-order pairwise tree sum of the projectors of `psis`.
fn pairwise_outer_sum(psis: &[Vec<Complex64>]) -> Array2<Complex64> {
    match psis.len() {
        0 => unreachable!("callers guard against empty ensembles"),
        1 => outer(&psis[0]),
        n => {
            let mut left = pairwise_outer_sum(&psis[..n / 2]);
            let right = pairwise_outer_sum(&psis[n / 2..]);
            left += &right;
            left
        }
    }
}

/// Spectral decomposition of a density matrix into pure components,
/// dropping weights below 1e-12 and renormalizing the rest. Components
/// come back ordered by descending weight.
fn spectral_components(
    rho: &Array2<Complex64>,
) -> Result<Vec<(f64, Vec<Complex64>)>, SmeError> {
    let d = rho.nrows();
    let m = nalgebra::DMatrix::<Complex64>::from_fn(d, d, |i, j| rho[[i, j]]);
    let se = m.symmetric_eigen();
    let mut comps: Vec<(f64, Vec<Complex64>)> = (0..d)
        .filter(|&c| se.eigenvalues[c] > 1e-12)
        .map(|c| {
            let vec: Vec<Complex64> = (0..d).map(|r| se.eigenvectors[(r, c)]).collect();
            (se.eigenvalues[c], vec)
        })
        .collect();
    if comps.is_empty() {
        return Err(SmeError::InvalidParameter(
            "density matrix has no positive spectral weight".into(),
        ));
    }
    comps.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite weights"));
    let total: f64 = comps.iter().map(|(p, _)| p).sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(SmeError::InvariantViolated {
            name: "spectral weight",
            value: total,
            limit: 1e-6,
        });
    }
    for (p, _) in comps.iter_mut() {
        *p /= total;
    }
    Ok(comps)
}

/// Draw one pure component with probability proportional to its weight.
fn draw_component<'a>(
    comps: &'a [(f64, Vec<Complex64>)],
    rng: &mut ChaCha8Rng,
) -> &'a [Complex64] {
    let target: f64 = rng.gen::<f64>();
    let mut acc = 0.0;
    for (p, v) in comps {
        acc += p;
        if target <= acc {
            return v;
        }
    }
    &comps.last().expect("nonempty decomposition").1
}
