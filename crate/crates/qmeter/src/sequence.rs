//! Finite sequences of imprecise position measurements.
//!
//! A schedule fixes the object model, the initial state, and an ordered
//! list of `(time, kernel)` entries. Because the Hamiltonians here are
//! quadratic, the Heisenberg positions commute to c-numbers and the full
//! outcome statistics close on means plus a covariance matrix:
//!
//! * `E[y_j] = <q_j>_init + sum_{l<j} chi_jl * (F_bar_l dt_l)`
//! * `B_jl  = B_init_jl + delta_q_j^2 d_jl
//!            + sum_{m<min(j,l)} chi_jm chi_lm (S_F,m dt_m)
//!            - chi_jl S_qF,l`            (j > l)
//!
//! with `chi_jl = -k(t_j, t_l)/hbar` the response of measurement `j` to a
//! kick at measurement `l`. Three independent routes to those moments are
//! kept deliberately separate: the closed-form law above, Monte Carlo
//! over sampled records, and a brute-force nested quadrature over the
//! joint outcome density carried by grid wavefunctions. Tests hold them
//! against each other; none of them shares state-update code.
//!
//! Sampling draws outcomes by inverse CDF of the analytic Gaussian
//! marginal on the fast path and by rejection against the gridded
//! marginal on the wavefunction path.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::dynamics::{DynamicsError, GaussianState, InitialState, ObjectModel};
use crate::grid::{SplitStepPropagator, UniformGrid};
use crate::kernels::{KernelError, ReductionKernel};

/// Measurements supported on the brute-force and wavefunction paths.
pub const ORACLE_MAX_MEASUREMENTS: usize = 3;
/// Contiguous jackknife blocks for Monte Carlo standard errors.
pub const JACKKNIFE_BLOCKS: usize = 100;

const ORACLE_POSITION_POINTS: usize = 2048;
const ORACLE_POSITION_SPAN: f64 = 12.0;
const ORACLE_OUTCOME_POINTS: usize = 257;
const ORACLE_OUTCOME_SPAN: f64 = 8.0;
const ORACLE_MAX_EVOLVE_STEP: f64 = 0.01;

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("the wavefunction path supports at most {max} measurements, got {n}")]
    OracleTooLong { n: usize, max: usize },
    #[error("the wavefunction path needs a pure initial state: {0}")]
    NotPure(String),
    #[error("need at least {min} trajectories, got {n}")]
    TooFewTrajectories { n: usize, min: usize },
    #[error("outcome sampling failed: {0}")]
    SamplingFailed(String),
}

/// Ordered measurement plan over one object.
#[derive(Debug, Clone)]
pub struct MeasurementSchedule {
    model: ObjectModel,
    init: InitialState,
    hbar: f64,
    entries: Vec<(f64, ReductionKernel)>,
}

/// One sampled trajectory of outcomes, aligned with the schedule.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasurementRecord {
    pub outcomes: Vec<f64>,
    pub seed: u64,
}

/// Means and covariance of the outcome vector.
#[derive(Debug, Clone)]
pub struct MomentReport {
    pub times: Vec<f64>,
    pub means: Vec<f64>,
    /// Symmetric N x N outcome covariance.
    pub covariance: Array2<f64>,
    /// Commutator matrix `k_jl` entering the law.
    pub k_matrix: Array2<f64>,
    /// Jackknife standard errors; Monte Carlo reports only.
    pub mean_errors: Option<Vec<f64>>,
    pub covariance_errors: Option<Array2<f64>>,
}

/// Covariance split by physical channel; the four terms sum to the total.
#[derive(Debug, Clone)]
pub struct CovarianceTerms {
    pub init: Array2<f64>,
    pub imprecision: Array2<f64>,
    pub backaction: Array2<f64>,
    pub cross: Array2<f64>,
}

impl MeasurementSchedule {
    pub fn new(
        model: ObjectModel,
        init: InitialState,
        entries: Vec<(f64, ReductionKernel)>,
    ) -> Result<Self, SequenceError> {
        model.validate()?;
        if matches!(model, ObjectModel::DampedOscillator { .. }) {
            return Err(SequenceError::InvalidSchedule(
                "sequence simulation needs a unitary model; the damped model \
                 is frequency-domain only"
                    .into(),
            ));
        }
        if entries.is_empty() {
            return Err(SequenceError::InvalidSchedule(
                "schedule has no measurements".into(),
            ));
        }
        for w in entries.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(SequenceError::InvalidSchedule(format!(
                    "times must be strictly increasing, got {} then {}",
                    w[0].0, w[1].0
                )));
            }
        }
        if entries[0].0 < 0.0 || !entries[0].0.is_finite() {
            return Err(SequenceError::InvalidSchedule(format!(
                "first measurement time must be finite and nonnegative, got {}",
                entries[0].0
            )));
        }
        let hbar = entries[0].1.hbar();
        for (_, k) in &entries {
            if (k.hbar() - hbar).abs() > 1e-12 * hbar {
                return Err(SequenceError::InvalidSchedule(
                    "all kernels in a schedule must share hbar".into(),
                ));
            }
        }
        // initial state must resolve against this model
        init.resolve(&model, hbar)?;
        Ok(MeasurementSchedule {
            model,
            init,
            hbar,
            entries,
        })
    }

    /// Constant-rate schedule: `n` copies of `kernel` at times
    /// `0, dt, 2 dt, ...` with the kernel's own interval.
    pub fn uniform(
        model: ObjectModel,
        init: InitialState,
        kernel: ReductionKernel,
        n: usize,
    ) -> Result<Self, SequenceError> {
        let dt = kernel.dt();
        let entries = (0..n).map(|j| (j as f64 * dt, kernel.clone())).collect();
        Self::new(model, init, entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.entries.iter().map(|(t, _)| *t).collect()
    }

    pub fn kernel(&self, j: usize) -> &ReductionKernel {
        &self.entries[j].1
    }

    pub fn model(&self) -> &ObjectModel {
        self.model_ref()
    }

    fn model_ref(&self) -> &ObjectModel {
        &self.model
    }

    pub fn init(&self) -> &InitialState {
        &self.init
    }

    pub fn hbar(&self) -> f64 {
        self.hbar
    }

    /// Truncated schedule keeping the first `n` measurements.
    pub fn prefix(&self, n: usize) -> Result<Self, SequenceError> {
        Self::new(
            self.model,
            self.init,
            self.entries[..n.min(self.entries.len())].to_vec(),
        )
    }

    /// Commutator matrix `k_jl = -i [q_j, q_l]`; antisymmetric.
    pub fn commutator_matrix(&self) -> Result<Array2<f64>, SequenceError> {
        let n = self.len();
        let mut k = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            for l in 0..n {
                k[[j, l]] =
                    self.model
                        .commutator_kernel(self.hbar, self.entries[j].0, self.entries[l].0)?;
            }
        }
        Ok(k)
    }

    /// Response coefficients `chi_jl = -k_jl / hbar` for `j > l`, else 0.
    fn response_matrix(&self) -> Result<Array2<f64>, SequenceError> {
        let n = self.len();
        let mut chi = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            for l in 0..j {
                chi[[j, l]] = -self
                    .model
                    .commutator_kernel(self.hbar, self.entries[j].0, self.entries[l].0)?
                    / self.hbar;
            }
        }
        Ok(chi)
    }

    /// Per-kernel scalars entering the moment law.
    fn kernel_scalars(&self) -> Result<Vec<KernelScalars>, SequenceError> {
        self.entries
            .iter()
            .map(|(_, k)| {
                let b = k.noise_budget()?;
                Ok(KernelScalars {
                    dq2: k.delta_q() * k.delta_q(),
                    kick_var: b.s_f * k.dt(),
                    impulse: b.f_bar * k.dt(),
                    s_qf: b.s_qf,
                })
            })
            .collect()
    }

    /// Closed-form outcome moments.
    pub fn analytic_moments(&self) -> Result<MomentReport, SequenceError> {
        let terms = self.covariance_terms()?;
        let n = self.len();
        let state = self.init.resolve(&self.model, self.hbar)?;
        let chi = self.response_matrix()?;
        let scalars = self.kernel_scalars()?;
        let mut means = vec![0.0; n];
        for j in 0..n {
            let (a, b) = self.model.ab_coefficients(self.entries[j].0)?;
            means[j] = a * state.mean_q + b * state.mean_p;
            for l in 0..j {
                means[j] += chi[[j, l]] * scalars[l].impulse;
            }
        }
        let covariance = &terms.init + &terms.imprecision + &terms.backaction + &terms.cross;
        Ok(MomentReport {
            times: self.times(),
            means,
            covariance,
            k_matrix: self.commutator_matrix()?,
            mean_errors: None,
            covariance_errors: None,
        })
    }

    /// The covariance law split into its four channels.
    pub fn covariance_terms(&self) -> Result<CovarianceTerms, SequenceError> {
        let n = self.len();
        let state = self.init.resolve(&self.model, self.hbar)?;
        let chi = self.response_matrix()?;
        let scalars = self.kernel_scalars()?;
        let mut init = Array2::<f64>::zeros((n, n));
        let mut imprecision = Array2::<f64>::zeros((n, n));
        let mut backaction = Array2::<f64>::zeros((n, n));
        let mut cross = Array2::<f64>::zeros((n, n));
        let ab: Vec<(f64, f64)> = self
            .entries
            .iter()
            .map(|(t, _)| self.model.ab_coefficients(*t))
            .collect::<Result<_, _>>()?;
        for j in 0..n {
            for l in 0..=j {
                let (aj, bj) = ab[j];
                let (al, bl) = ab[l];
                let v = aj * al * state.cov_qq
                    + (aj * bl + al * bj) * state.cov_qp
                    + bj * bl * state.cov_pp;
                init[[j, l]] = v;
                init[[l, j]] = v;
                let mut ba = 0.0;
                for m in 0..l {
                    ba += chi[[j, m]] * chi[[l, m]] * scalars[m].kick_var;
                }
                backaction[[j, l]] = ba;
                backaction[[l, j]] = ba;
                if j == l {
                    imprecision[[j, j]] = scalars[j].dq2;
                } else {
                    let c = -chi[[j, l]] * scalars[l].s_qf;
                    cross[[j, l]] = c;
                    cross[[l, j]] = c;
                }
            }
        }
        Ok(CovarianceTerms {
            init,
            imprecision,
            backaction,
            cross,
        })
    }

    /// Draw one record; routes to the Gaussian fast path when every kernel
    /// is Gaussian, otherwise to the wavefunction path.
    pub fn sample_sequence(&self, seed: u64) -> Result<MeasurementRecord, SequenceError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let outcomes = self.sample_with_rng(&mut rng)?;
        Ok(MeasurementRecord { outcomes, seed })
    }

    fn all_gaussian(&self) -> bool {
        self.entries.iter().all(|(_, k)| k.is_gaussian())
    }

    pub(crate) fn sample_with_rng(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, SequenceError> {
        if self.all_gaussian() {
            self.sample_gaussian(rng)
        } else {
            self.sample_wavefunction(rng)
        }
    }

    /// Gaussian fast path: the conditional state stays Gaussian, so each
    /// step is a symplectic drift plus a closed-form conditional update.
    fn sample_gaussian(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, SequenceError> {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut state = self.init.resolve(&self.model, self.hbar)?;
        let mut now = 0.0;
        let mut outcomes = Vec::with_capacity(self.len());
        for (t, kernel) in &self.entries {
            state = state.propagate(&self.model, t - now)?;
            now = *t;
            let y = {
                let sigma = (state.cov_qq + kernel.delta_q() * kernel.delta_q()).sqrt();
                let mut u: f64 = rng.gen();
                if u <= 0.0 {
                    u = f64::MIN_POSITIVE;
                }
                state.mean_q + sigma * normal.inverse_cdf(u)
            };
            state = conditional_update(&state, kernel, y, self.hbar);
            outcomes.push(y);
        }
        Ok(outcomes)
    }

    /// Wavefunction path: grid state, split-step drift, rejection-sampled
    /// outcomes against the gridded marginal.
    fn sample_wavefunction(&self, rng: &mut ChaCha8Rng) -> Result<Vec<f64>, SequenceError> {
        if self.len() > ORACLE_MAX_MEASUREMENTS {
            return Err(SequenceError::OracleTooLong {
                n: self.len(),
                max: ORACLE_MAX_MEASUREMENTS,
            });
        }
        let mut wave = GridWave::for_schedule(self)?;
        let mut now = 0.0;
        let mut outcomes = Vec::with_capacity(self.len());
        for (t, kernel) in &self.entries {
            wave.evolve(&self.model, self.hbar, t - now)?;
            now = *t;
            let (grid, w) = wave.outcome_density(kernel);
            let y = rejection_sample(&grid, &w, rng)?;
            wave.reduce(kernel, y);
            outcomes.push(y);
        }
        Ok(outcomes)
    }

    /// Sample moments over `n_traj` records with jackknife errors.
    ///
    /// Deterministic for a fixed `(seed, n_traj)` pair regardless of the
    /// worker count: trajectory RNG streams are indexed, results are
    /// collected in trajectory order, and accumulators merge in a fixed
    /// pairwise tree.
    pub fn monte_carlo_moments(
        &self,
        n_traj: usize,
        seed: u64,
    ) -> Result<MomentReport, SequenceError> {
        if n_traj < JACKKNIFE_BLOCKS {
            return Err(SequenceError::TooFewTrajectories {
                n: n_traj,
                min: JACKKNIFE_BLOCKS,
            });
        }
        let records: Vec<Result<Vec<f64>, SequenceError>> = (0..n_traj)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                self.sample_with_rng(&mut rng)
            })
            .collect();
        let mut outcomes = Vec::with_capacity(n_traj);
        for r in records {
            outcomes.push(r?);
        }
        let n = self.len();
        // per-block sums, merged pairwise; leave-one-out via subtraction
        let mut blocks: Vec<MomentAccumulator> = Vec::with_capacity(JACKKNIFE_BLOCKS);
        for b in 0..JACKKNIFE_BLOCKS {
            let lo = b * n_traj / JACKKNIFE_BLOCKS;
            let hi = (b + 1) * n_traj / JACKKNIFE_BLOCKS;
            let mut acc = MomentAccumulator::new(n);
            for rec in &outcomes[lo..hi] {
                acc.push(rec);
            }
            blocks.push(acc);
        }
        let total = pairwise_merge(blocks.clone()).expect("at least one block");
        let (means, covariance) = total.estimate();
        let mut mean_err = vec![0.0; n];
        let mut cov_err = Array2::<f64>::zeros((n, n));
        let nb = JACKKNIFE_BLOCKS as f64;
        let mut mean_jack = vec![vec![0.0; n]; JACKKNIFE_BLOCKS];
        let mut cov_jack = vec![Array2::<f64>::zeros((n, n)); JACKKNIFE_BLOCKS];
        for (b, block) in blocks.iter().enumerate() {
            let rest = total.minus(block);
            let (m, c) = rest.estimate();
            mean_jack[b] = m;
            cov_jack[b] = c;
        }
        for j in 0..n {
            let avg: f64 = mean_jack.iter().map(|m| m[j]).sum::<f64>() / nb;
            let ss: f64 = mean_jack.iter().map(|m| (m[j] - avg).powi(2)).sum();
            mean_err[j] = ((nb - 1.0) / nb * ss).sqrt();
            for l in 0..n {
                let avg: f64 = cov_jack.iter().map(|c| c[[j, l]]).sum::<f64>() / nb;
                let ss: f64 = cov_jack.iter().map(|c| (c[[j, l]] - avg).powi(2)).sum();
                cov_err[[j, l]] = ((nb - 1.0) / nb * ss).sqrt();
            }
        }
        Ok(MomentReport {
            times: self.times(),
            means,
            covariance,
            k_matrix: self.commutator_matrix()?,
            mean_errors: Some(mean_err),
            covariance_errors: Some(cov_err),
        })
    }

    /// Moments by nested quadrature over the joint outcome density.
    ///
    /// Exponential in the schedule length; capped at
    /// [`ORACLE_MAX_MEASUREMENTS`]. The last level integrates in closed
    /// form over the branch density, inner levels walk the outcome grid.
    pub fn brute_force_joint_moments(&self) -> Result<MomentReport, SequenceError> {
        let n = self.len();
        if n > ORACLE_MAX_MEASUREMENTS {
            return Err(SequenceError::OracleTooLong {
                n,
                max: ORACLE_MAX_MEASUREMENTS,
            });
        }
        let wave = GridWave::for_schedule(self)?;
        let mut acc = JointAccumulator::new(n);
        self.brute_force_descend(wave, 0, 0.0, 1.0, &mut Vec::new(), &mut acc)?;
        acc.finish(self)
    }

    fn brute_force_descend(
        &self,
        mut wave: GridWave,
        level: usize,
        now: f64,
        weight: f64,
        prefix: &mut Vec<f64>,
        acc: &mut JointAccumulator,
    ) -> Result<(), SequenceError> {
        let (t, kernel) = &self.entries[level];
        wave.evolve(&self.model, self.hbar, t - now)?;
        if level == self.len() - 1 {
            // closed form: E[y | branch] = <q>, E[y^2 | branch] = <q^2> + dq_eff^2
            let (norm, m1, m2) = wave.moments();
            let dq2 = kernel.delta_q() * kernel.delta_q();
            acc.push_leaf(weight, norm, m1, m2 + norm * dq2, prefix);
            return Ok(());
        }
        let (grid, w) = wave.outcome_density(kernel);
        let simpson_w = simpson_weights(grid.n, grid.step);
        for i in 0..grid.n {
            if w[i] * simpson_w[i] == 0.0 {
                continue;
            }
            let y = grid.point(i);
            let mut branch = wave.clone();
            branch.reduce_unnormalized(kernel, y);
            prefix.push(y);
            self.brute_force_descend(
                branch,
                level + 1,
                *t,
                weight * simpson_w[i],
                prefix,
                acc,
            )?;
            prefix.pop();
        }
        Ok(())
    }
}

struct KernelScalars {
    dq2: f64,
    kick_var: f64,
    impulse: f64,
    s_qf: f64,
}

/// Conditional Gaussian update for one outcome `y`; exact for complex
/// Gaussian kernels. Validated against the nested-quadrature oracle.
pub(crate) fn conditional_update(
    state: &GaussianState,
    kernel: &ReductionKernel,
    y: f64,
    hbar: f64,
) -> GaussianState {
    let dq2 = kernel.delta_q() * kernel.delta_q();
    let two_hbar_beta = kernel.s_qf() / dq2;
    let impulse = kernel.f_bar() * kernel.dt();
    let cov_qq = 1.0 / (1.0 / state.cov_qq + 1.0 / dq2);
    let mean_q = cov_qq * (state.mean_q / state.cov_qq + y / dq2);
    let slope = state.cov_qp / state.cov_qq;
    let slope_new = slope + two_hbar_beta;
    let cov_qp = cov_qq * slope_new;
    let p_given_q = state.cov_pp - state.cov_qp * state.cov_qp / state.cov_qq;
    let p_given_q_new = p_given_q + hbar * hbar / (4.0 * dq2);
    GaussianState {
        mean_q,
        mean_p: state.mean_p + slope * (mean_q - state.mean_q) + impulse
            - two_hbar_beta * (y - mean_q),
        cov_qq,
        cov_qp,
        cov_pp: p_given_q_new + cov_qp * cov_qp / cov_qq,
    }
}

/// Pure state on a position grid for the oracle paths.
#[derive(Clone)]
struct GridWave {
    grid: UniformGrid,
    psi: Vec<Complex64>,
}

impl GridWave {
    fn for_schedule(schedule: &MeasurementSchedule) -> Result<Self, SequenceError> {
        let hbar = schedule.hbar;
        let state = schedule.init.resolve(&schedule.model, hbar)?;
        let det = state.det_cov();
        let bound = 0.25 * hbar * hbar;
        if det > bound * (1.0 + 1e-6) {
            return Err(SequenceError::NotPure(format!(
                "det Sigma = {det} exceeds hbar^2/4 = {bound}"
            )));
        }
        let width_ref = match *schedule.model_ref() {
            ObjectModel::Oscillator { mass, omega0 } => (0.5 * hbar / (mass * omega0)).sqrt(),
            _ => state.cov_qq.sqrt(),
        };
        let half = ORACLE_POSITION_SPAN * width_ref.max(state.cov_qq.sqrt());
        let grid = UniformGrid::centered(state.mean_q, half, ORACLE_POSITION_POINTS);
        // pure Gaussian wavefunction with the prescribed (mu, Sigma)
        let a = Complex64::new(
            1.0 / (4.0 * state.cov_qq),
            -0.5 * state.cov_qp / (hbar * state.cov_qq),
        );
        let norm = (2.0 * std::f64::consts::PI * state.cov_qq).powf(-0.25);
        let psi = grid
            .points()
            .iter()
            .map(|&x| {
                let d = x - state.mean_q;
                norm * (-a * d * d + Complex64::i() * state.mean_p * d / hbar).exp()
            })
            .collect();
        Ok(GridWave { grid, psi })
    }

    fn evolve(
        &mut self,
        model: &ObjectModel,
        hbar: f64,
        duration: f64,
    ) -> Result<(), SequenceError> {
        if duration == 0.0 {
            return Ok(());
        }
        let xs = self.grid.points();
        let (potential, max_step): (Vec<f64>, f64) = match *model {
            ObjectModel::FreeMass { .. } => (vec![0.0; xs.len()], duration),
            ObjectModel::Oscillator { mass, omega0 } => (
                xs.iter().map(|&x| 0.5 * mass * omega0 * omega0 * x * x).collect(),
                ORACLE_MAX_EVOLVE_STEP / omega0,
            ),
            ObjectModel::DampedOscillator { .. } => {
                return Err(SequenceError::InvalidSchedule(
                    "damped model on the wavefunction path".into(),
                ))
            }
        };
        let steps = (duration / max_step).ceil().max(1.0) as usize;
        let dt = duration / steps as f64;
        let prop =
            SplitStepPropagator::new(xs.len(), self.grid.step, &potential, model.mass(), hbar, dt);
        prop.evolve(&mut self.psi, steps);
        Ok(())
    }

    /// Riemann moments `(norm, <q>, <q^2>)` of the current density.
    fn moments(&self) -> (f64, f64, f64) {
        crate::grid::wavefunction_moments(self.grid.x0, self.grid.step, &self.psi)
    }

    /// Marginal outcome density on its own grid, `w(y) = int |Omega(y-q)|^2 |psi|^2`.
    fn outcome_density(&self, kernel: &ReductionKernel) -> (UniformGrid, Vec<f64>) {
        let (norm, m1, m2) = self.moments();
        let mean = m1 / norm;
        let var = (m2 / norm - mean * mean).max(0.0);
        let sigma_tot = (var + kernel.delta_q() * kernel.delta_q()).sqrt();
        let out = UniformGrid::centered(mean, ORACLE_OUTCOME_SPAN * sigma_tot, ORACLE_OUTCOME_POINTS);
        let xs = self.grid.points();
        let dens: Vec<f64> = self.psi.iter().map(|p| p.norm_sqr()).collect();
        let w = out
            .points()
            .iter()
            .map(|&y| {
                let mut acc = 0.0;
                for (i, &x) in xs.iter().enumerate() {
                    acc += kernel.evaluate(y - x).norm_sqr() * dens[i];
                }
                acc * self.grid.step
            })
            .collect();
        (out, w)
    }

    /// Apply the kernel for outcome `y` and renormalize.
    fn reduce(&mut self, kernel: &ReductionKernel, y: f64) {
        self.reduce_unnormalized(kernel, y);
        let norm = crate::grid::wavefunction_norm(self.grid.step, &self.psi);
        let scale = 1.0 / norm.sqrt();
        for p in &mut self.psi {
            *p *= scale;
        }
    }

    fn reduce_unnormalized(&mut self, kernel: &ReductionKernel, y: f64) {
        let xs = self.grid.points();
        for (i, p) in self.psi.iter_mut().enumerate() {
            *p *= kernel.evaluate(y - xs[i]);
        }
    }
}

/// Rejection sampling against a tabulated density with linear
/// interpolation; the envelope is uniform over the grid span.
fn rejection_sample(
    grid: &UniformGrid,
    w: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<f64, SequenceError> {
    let peak = w.iter().cloned().fold(0.0, f64::max);
    if !(peak.is_finite() && peak > 0.0) {
        return Err(SequenceError::SamplingFailed(
            "outcome density vanished on its grid".into(),
        ));
    }
    let bound = 1.05 * peak;
    let span = grid.max() - grid.x0;
    for _ in 0..100_000 {
        let y = grid.x0 + span * rng.gen::<f64>();
        let u: f64 = rng.gen();
        let t = (y - grid.x0) / grid.step;
        let i = (t.floor() as usize).min(w.len() - 2);
        let f = t - i as f64;
        let wy = w[i] * (1.0 - f) + w[i + 1] * f;
        if u * bound <= wy {
            return Ok(y);
        }
    }
    Err(SequenceError::SamplingFailed(
        "rejection sampler exhausted its iteration budget".into(),
    ))
}

/// Composite Simpson weights on an odd-length grid.
fn simpson_weights(n: usize, step: f64) -> Vec<f64> {
    assert!(n >= 3 && n % 2 == 1);
    let mut w = vec![0.0; n];
    let h3 = step / 3.0;
    w[0] = h3;
    w[n - 1] = h3;
    for (i, wi) in w.iter_mut().enumerate().skip(1).take(n - 2) {
        *wi = if i % 2 == 1 { 4.0 * h3 } else { 2.0 * h3 };
    }
    w
}

/// First and second moment sums over sampled records.
#[derive(Clone)]
struct MomentAccumulator {
    count: f64,
    sum: Vec<f64>,
    prod: Array2<f64>,
}

impl MomentAccumulator {
    fn new(n: usize) -> Self {
        MomentAccumulator {
            count: 0.0,
            sum: vec![0.0; n],
            prod: Array2::zeros((n, n)),
        }
    }

    fn push(&mut self, rec: &[f64]) {
        self.count += 1.0;
        for j in 0..rec.len() {
            self.sum[j] += rec[j];
            for l in 0..=j {
                self.prod[[j, l]] += rec[j] * rec[l];
            }
        }
    }

    fn merge(mut self, other: &MomentAccumulator) -> Self {
        self.count += other.count;
        for j in 0..self.sum.len() {
            self.sum[j] += other.sum[j];
        }
        self.prod = &self.prod + &other.prod;
        self
    }

    fn minus(&self, other: &MomentAccumulator) -> Self {
        let mut out = self.clone();
        out.count -= other.count;
        for j in 0..out.sum.len() {
            out.sum[j] -= other.sum[j];
        }
        out.prod = &out.prod - &other.prod;
        out
    }

    /// Sample means and the unbiased covariance estimate.
    fn estimate(&self) -> (Vec<f64>, Array2<f64>) {
        let n = self.sum.len();
        let c = self.count;
        let means: Vec<f64> = self.sum.iter().map(|s| s / c).collect();
        let mut cov = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            for l in 0..=j {
                let v = (self.prod[[j, l]] - c * means[j] * means[l]) / (c - 1.0);
                cov[[j, l]] = v;
                cov[[l, j]] = v;
            }
        }
        (means, cov)
    }
}

/// Fixed-order pairwise tree merge; deterministic for a fixed input order.
fn pairwise_merge(mut items: Vec<MomentAccumulator>) -> Option<MomentAccumulator> {
    if items.is_empty() {
        return None;
    }
    while items.len() > 1 {
        let mut next = Vec::with_capacity(items.len().div_ceil(2));
        let mut it = items.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(a.merge(&b)),
                None => next.push(a),
            }
        }
        items = next;
    }
    items.pop()
}

/// Weighted joint moments accumulated over quadrature branches.
struct JointAccumulator {
    n: usize,
    weight: f64,
    first: Vec<f64>,
    second: Array2<f64>,
}

impl JointAccumulator {
    fn new(n: usize) -> Self {
        JointAccumulator {
            n,
            weight: 0.0,
            first: vec![0.0; n],
            second: Array2::zeros((n, n)),
        }
    }

    /// Leaf contribution: `prefix` holds the fixed earlier outcomes, the
    /// last outcome enters through its branch moments
    /// `(sum w, sum w y, sum w y^2)`.
    fn push_leaf(&mut self, weight: f64, w0: f64, w1: f64, w2: f64, prefix: &[f64]) {
        let last = self.n - 1;
        self.weight += weight * w0;
        for (j, &y) in prefix.iter().enumerate() {
            self.first[j] += weight * w0 * y;
            for (l, &z) in prefix.iter().enumerate().take(j + 1) {
                self.second[[j, l]] += weight * w0 * y * z;
            }
            self.second[[last, j]] += weight * w1 * y;
        }
        self.first[last] += weight * w1;
        self.second[[last, last]] += weight * w2;
    }

    fn finish(self, schedule: &MeasurementSchedule) -> Result<MomentReport, SequenceError> {
        let n = self.n;
        if !(self.weight.is_finite() && self.weight > 0.0) {
            return Err(SequenceError::SamplingFailed(
                "joint density integrated to zero".into(),
            ));
        }
        let means: Vec<f64> = self.first.iter().map(|f| f / self.weight).collect();
        let mut cov = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            for l in 0..=j {
                let v = self.second[[j, l]] / self.weight - means[j] * means[l];
                cov[[j, l]] = v;
                cov[[l, j]] = v;
            }
        }
        Ok(MomentReport {
            times: schedule.times(),
            means,
            covariance: cov,
            k_matrix: schedule.commutator_matrix()?,
            mean_errors: None,
            covariance_errors: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{InitialState, ObjectModel};
    use approx::assert_relative_eq;

    fn two_step_schedule(s_qf_second: f64) -> MeasurementSchedule {
        let model = ObjectModel::Oscillator { mass: 1.0, omega0: 1.0 };
        let k1 = ReductionKernel::gaussian(0.01, s_qf_second, 0.0, 0.01).unwrap();
        let k2 = ReductionKernel::gaussian(0.01, 0.0, 0.0, 0.01).unwrap();
        MeasurementSchedule::new(
            model,
            InitialState::Ground,
            vec![(0.0, k1), (std::f64::consts::FRAC_PI_3, k2)],
        )
        .unwrap()
    }

    #[test]
    fn real_two_step_covariance_goldens() {
        let report = two_step_schedule(0.0).analytic_moments().unwrap();
        assert_relative_eq!(report.covariance[[0, 0]], 1.5, max_relative = 1e-12);
        assert_relative_eq!(report.covariance[[1, 0]], 0.25, max_relative = 1e-12);
        assert_relative_eq!(report.covariance[[1, 1]], 1.6875, max_relative = 1e-12);
        assert_eq!(report.means, vec![0.0, 0.0]);
    }

    #[test]
    fn complex_two_step_covariance_goldens() {
        let report = two_step_schedule(-0.5).analytic_moments().unwrap();
        assert_relative_eq!(report.covariance[[0, 0]], 1.5, max_relative = 1e-12);
        assert_relative_eq!(
            report.covariance[[1, 0]],
            0.25 + 3f64.sqrt() / 4.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(report.covariance[[1, 1]], 1.875, max_relative = 1e-12);
    }

    #[test]
    fn stroboscopic_schedule_has_no_back_action_or_cross() {
        let model = ObjectModel::Oscillator { mass: 1.0, omega0: 1.0 };
        let k = ReductionKernel::gaussian(0.01, -0.7, 0.0, 0.01).unwrap();
        let schedule = MeasurementSchedule::new(
            model,
            InitialState::Ground,
            vec![(0.0, k.clone()), (std::f64::consts::PI, k)],
        )
        .unwrap();
        let terms = schedule.covariance_terms().unwrap();
        assert!(terms.backaction[[1, 1]].abs() < 1e-30);
        assert!(terms.cross[[1, 0]].abs() < 1e-15);
        let report = schedule.analytic_moments().unwrap();
        // B_21 = B_init(pi) = -0.5 despite the complex kernel
        assert_relative_eq!(report.covariance[[1, 0]], -0.5, max_relative = 1e-12);
    }

    #[test]
    fn mean_force_pushes_later_outcomes_along_the_response() {
        let model = ObjectModel::FreeMass { mass: 2.0 };
        let k1 = ReductionKernel::gaussian(0.01, 0.0, 5.0, 0.01).unwrap();
        let k2 = ReductionKernel::gaussian(0.01, 0.0, 0.0, 0.01).unwrap();
        let state = InitialState::Gaussian {
            state: crate::dynamics::GaussianState {
                mean_q: 0.0,
                mean_p: 0.0,
                cov_qq: 1.0,
                cov_qp: 0.0,
                cov_pp: 0.25,
            },
        };
        let schedule =
            MeasurementSchedule::new(model, state, vec![(0.0, k1), (1.0, k2)]).unwrap();
        let report = schedule.analytic_moments().unwrap();
        // impulse F dt = 0.05 at t=0, response chi = t/m = 0.5
        assert_relative_eq!(report.means[0], 0.0);
        assert_relative_eq!(report.means[1], 0.5 * 0.05, max_relative = 1e-12);
    }

    #[test]
    fn dropping_the_last_measurement_leaves_earlier_moments_alone() {
        let schedule = two_step_schedule(-0.5);
        let full = schedule.analytic_moments().unwrap();
        let short = schedule.prefix(1).unwrap().analytic_moments().unwrap();
        assert_eq!(full.covariance[[0, 0]], short.covariance[[0, 0]]);
        assert_eq!(full.means[0], short.means[0]);
    }

    #[test]
    fn commutator_matrix_is_antisymmetric_with_free_mass_golden() {
        let model = ObjectModel::FreeMass { mass: 1.0 };
        let k = ReductionKernel::gaussian(0.01, 0.0, 0.0, 0.01).unwrap();
        let schedule = MeasurementSchedule::new(
            model,
            InitialState::Gaussian {
                state: crate::dynamics::GaussianState {
                    mean_q: 0.0,
                    mean_p: 0.0,
                    cov_qq: 1.0,
                    cov_qp: 0.0,
                    cov_pp: 0.25,
                },
            },
            vec![(0.0, k.clone()), (1.0, k)],
        )
        .unwrap();
        let kmat = schedule.commutator_matrix().unwrap();
        assert_relative_eq!(kmat[[0, 1]], 1.0);
        assert_relative_eq!(kmat[[1, 0]], -1.0);
        assert_eq!(kmat[[0, 0]], 0.0);
    }

    #[test]
    fn conditional_update_keeps_pure_states_pure() {
        let k = ReductionKernel::gaussian(0.02, -0.4, 1.0, 0.01).unwrap();
        let state = GaussianState {
            mean_q: 0.3,
            mean_p: -0.2,
            cov_qq: 0.5,
            cov_qp: 0.1,
            cov_pp: 0.52,
        };
        let hbar = 1.0;
        let out = conditional_update(&state, &k, 0.7, hbar);
        // det grows from the momentum diffusion but stays >= hbar^2/4
        assert!(out.det_cov() >= 0.25 * hbar * hbar - 1e-12);
        // purity check for an initially pure state
        let pure = GaussianState {
            mean_q: 0.0,
            mean_p: 0.0,
            cov_qq: 0.5,
            cov_qp: 0.0,
            cov_pp: 0.5,
        };
        let out = conditional_update(&pure, &k, -0.4, hbar);
        assert_relative_eq!(out.det_cov(), 0.25, max_relative = 1e-12);
    }

    #[test]
    fn monte_carlo_is_deterministic_and_matches_analytic_loosely() {
        let schedule = two_step_schedule(0.0);
        let a = schedule.monte_carlo_moments(2000, 42).unwrap();
        let b = schedule.monte_carlo_moments(2000, 42).unwrap();
        assert_eq!(a.covariance, b.covariance);
        assert_eq!(a.means, b.means);
        let exact = schedule.analytic_moments().unwrap();
        let se = a.covariance_errors.as_ref().unwrap();
        for j in 0..2 {
            for l in 0..2 {
                let err = (a.covariance[[j, l]] - exact.covariance[[j, l]]).abs();
                assert!(
                    err < 6.0 * se[[j, l]].max(1e-3),
                    "({j},{l}): {err} vs se {}",
                    se[[j, l]]
                );
            }
        }
    }

    #[test]
    fn standard_errors_shrink_with_sample_size() {
        let schedule = two_step_schedule(0.0);
        let small = schedule.monte_carlo_moments(400, 7).unwrap();
        let large = schedule.monte_carlo_moments(40000, 7).unwrap();
        let ratio = small.covariance_errors.as_ref().unwrap()[[0, 0]]
            / large.covariance_errors.as_ref().unwrap()[[0, 0]];
        assert!(ratio > 5.0 && ratio < 20.0, "ratio {ratio}");
    }

    #[test]
    fn single_measurement_brute_force_matches_analytic() {
        let model = ObjectModel::Oscillator { mass: 1.0, omega0: 1.0 };
        let k = ReductionKernel::gaussian(0.01, 0.0, 0.0, 0.01).unwrap();
        let schedule =
            MeasurementSchedule::new(model, InitialState::Ground, vec![(0.0, k)]).unwrap();
        let oracle = schedule.brute_force_joint_moments().unwrap();
        assert_relative_eq!(oracle.covariance[[0, 0]], 1.5, max_relative = 1e-6);
        assert!(oracle.means[0].abs() < 1e-8);
    }

    #[test]
    fn sampling_rejects_overlong_wavefunction_schedules() {
        let model = ObjectModel::Oscillator { mass: 1.0, omega0: 1.0 };
        let hermite = ReductionKernel::hermite_superposition(
            1.0,
            &[Complex64::new(0.8, 0.0), Complex64::new(0.0, 0.6)],
            0.01,
        )
        .unwrap();
        let entries: Vec<_> = (0..4).map(|j| (j as f64, hermite.clone())).collect();
        let schedule = MeasurementSchedule::new(model, InitialState::Ground, entries).unwrap();
        assert!(matches!(
            schedule.sample_sequence(1),
            Err(SequenceError::OracleTooLong { .. })
        ));
        assert!(matches!(
            schedule.brute_force_joint_moments(),
            Err(SequenceError::OracleTooLong { .. })
        ));
    }

    #[test]
    fn schedule_validation_catches_bad_input() {
        let model = ObjectModel::Oscillator { mass: 1.0, omega0: 1.0 };
        let k = ReductionKernel::gaussian(0.01, 0.0, 0.0, 0.01).unwrap();
        assert!(MeasurementSchedule::new(model, InitialState::Ground, vec![]).is_err());
        assert!(MeasurementSchedule::new(
            model,
            InitialState::Ground,
            vec![(1.0, k.clone()), (1.0, k.clone())]
        )
        .is_err());
        let damped = ObjectModel::DampedOscillator { mass: 1.0, omega0: 1.0, gamma: 0.1 };
        assert!(MeasurementSchedule::new(damped, InitialState::Ground, vec![(0.0, k)]).is_err());
    }
}
