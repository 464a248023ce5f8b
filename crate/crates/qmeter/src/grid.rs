//! Uniform grids, quadrature rules, and split-step wavefunction propagation.
//!
//! Two quadrature conventions are used deliberately. Declared kernel and
//! outcome grids carry an odd number of points and are integrated with
//! composite Simpson weights. Wavefunctions live on power-of-two FFT grids
//! where the integrand decays to zero at both ends, so a plain Riemann sum
//! (the trapezoid rule for decaying data) is spectrally accurate and keeps
//! the FFT layout untouched.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Uniform grid `x_i = x0 + i * step`, `i = 0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformGrid {
    pub x0: f64,
    pub step: f64,
    pub n: usize,
}

impl UniformGrid {
    /// Grid of `n` points centred on `center`, spanning `center ± half_width`.
    pub fn centered(center: f64, half_width: f64, n: usize) -> Self {
        assert!(n > 1 && half_width > 0.0);
        let step = 2.0 * half_width / (n - 1) as f64;
        UniformGrid {
            x0: center - half_width,
            step,
            n,
        }
    }

    pub fn point(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.step
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.point(i)).collect()
    }

    pub fn max(&self) -> f64 {
        self.point(self.n - 1)
    }
}

/// Composite Simpson integral of real samples on a uniform grid.
///
/// Requires an odd number of points (an even number of intervals).
pub fn simpson(step: f64, values: &[f64]) -> f64 {
    assert!(values.len() >= 3 && values.len() % 2 == 1, "Simpson rule needs an odd point count");
    let mut acc = values[0] + values[values.len() - 1];
    for (i, v) in values.iter().enumerate().skip(1).take(values.len() - 2) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * step / 3.0
}

/// Composite Simpson integral of complex samples.
pub fn simpson_c(step: f64, values: &[Complex64]) -> Complex64 {
    assert!(values.len() >= 3 && values.len() % 2 == 1, "Simpson rule needs an odd point count");
    let mut acc = values[0] + values[values.len() - 1];
    for (i, v) in values.iter().enumerate().skip(1).take(values.len() - 2) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * step / 3.0
}

/// Fourth-order finite-difference derivative on a uniform grid.
///
/// Central five-point stencil in the interior, one-sided fourth-order
/// stencils at the two points on each edge.
pub fn derivative4(step: f64, values: &[Complex64]) -> Vec<Complex64> {
    let n = values.len();
    assert!(n >= 5, "fourth-order stencil needs at least five points");
    let h = step;
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for i in 2..n - 2 {
        out[i] = (-values[i + 2] + 8.0 * values[i + 1] - 8.0 * values[i - 1] + values[i - 2])
            / (12.0 * h);
    }
    // one-sided stencils, coefficients for f'(x0) and f'(x1) on {x0..x4}
    let fwd = |v: &[Complex64], o: usize, s: f64| {
        (-25.0 * v[o] + 48.0 * v[o + 1] - 36.0 * v[o + 2] + 16.0 * v[o + 3] - 3.0 * v[o + 4])
            / (12.0 * s)
    };
    let fwd1 = |v: &[Complex64], o: usize, s: f64| {
        (-3.0 * v[o] - 10.0 * v[o + 1] + 18.0 * v[o + 2] - 6.0 * v[o + 3] + v[o + 4])
            / (12.0 * s)
    };
    out[0] = fwd(values, 0, h);
    out[1] = fwd1(values.get(0..5).unwrap(), 0, h);
    let rev: Vec<Complex64> = values.iter().rev().cloned().collect();
    out[n - 1] = fwd(&rev, 0, -h);
    out[n - 2] = fwd1(rev.get(0..5).unwrap(), 0, -h);
    out
}

/// Angular momentum-space frequencies `k_j` matching the FFT bin layout.
pub fn fft_wavenumbers(n: usize, dx: f64) -> Vec<f64> {
    let dk = 2.0 * std::f64::consts::PI / (n as f64 * dx);
    (0..n)
        .map(|j| {
            let j = if j <= n / 2 { j as isize } else { j as isize - n as isize };
            j as f64 * dk
        })
        .collect()
}

/// Strang split-step propagator for a quadratic potential on an FFT grid.
///
/// One step advances by `dt_step` as half potential kick, full kinetic
/// propagation in momentum space, half potential kick. For a vanishing
/// potential (free mass) the kinetic factor alone is exact for any step.
pub struct SplitStepPropagator {
    half_potential: Vec<Complex64>,
    kinetic: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    inv_n: f64,
}

impl SplitStepPropagator {
    /// `potential` samples `V(x_i)` on the grid; `m` the mass, `hbar` the
    /// quantum of action, `dt_step` the sub-step.
    pub fn new(grid_n: usize, dx: f64, potential: &[f64], m: f64, hbar: f64, dt_step: f64) -> Self {
        assert_eq!(potential.len(), grid_n);
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(grid_n);
        let ifft = planner.plan_fft_inverse(grid_n);
        let half_potential = potential
            .iter()
            .map(|&v| (Complex64::new(0.0, -0.5 * v * dt_step / hbar)).exp())
            .collect();
        let kinetic = fft_wavenumbers(grid_n, dx)
            .iter()
            .map(|&k| (Complex64::new(0.0, -0.5 * hbar * k * k * dt_step / m)).exp())
            .collect();
        SplitStepPropagator {
            half_potential,
            kinetic,
            fft,
            ifft,
            inv_n: 1.0 / grid_n as f64,
        }
    }

    /// Advance `psi` in place by `n_steps` sub-steps.
    pub fn evolve(&self, psi: &mut [Complex64], n_steps: usize) {
        for _ in 0..n_steps {
            for (p, hv) in psi.iter_mut().zip(&self.half_potential) {
                *p *= hv;
            }
            self.fft.process(psi);
            for (p, kin) in psi.iter_mut().zip(&self.kinetic) {
                *p *= kin;
            }
            self.ifft.process(psi);
            for (p, hv) in psi.iter_mut().zip(&self.half_potential) {
                *p *= *hv * self.inv_n;
            }
        }
    }
}

/// Riemann norm `int |psi|^2 dx` on an FFT grid with decaying tails.
pub fn wavefunction_norm(dx: f64, psi: &[Complex64]) -> f64 {
    psi.iter().map(|p| p.norm_sqr()).sum::<f64>() * dx
}

/// First and second position moments of `|psi|^2` (unnormalized weights).
pub fn wavefunction_moments(x0: f64, dx: f64, psi: &[Complex64]) -> (f64, f64, f64) {
    let mut w = 0.0;
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for (i, p) in psi.iter().enumerate() {
        let x = x0 + i as f64 * dx;
        let dens = p.norm_sqr();
        w += dens;
        m1 += x * dens;
        m2 += x * x * dens;
    }
    (w * dx, m1 * dx, m2 * dx)
}
