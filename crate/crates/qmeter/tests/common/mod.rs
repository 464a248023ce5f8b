//! Shared oracles for the integration suites.
//!
//! Everything here recomputes library quantities through a different
//! numerical route: Gauss-Legendre instead of Simpson, finite
//! differences instead of analytic derivatives, eigenbasis propagation
//! instead of split-step FFT, and direct minimization instead of closed
//! forms. Agreement is then evidence, not circularity.
#![allow(dead_code)]

use num_complex::Complex64;

/// Gauss-Legendre rule of fixed order, nodes found by Newton iteration
/// on the Legendre recurrence.
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

fn legendre_p_dp(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let pk = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = pk;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 2);
        let mut nodes = vec![0.0; order];
        let mut weights = vec![0.0; order];
        for i in 0..order {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (order as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre_p_dp(order, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (_, dp) = legendre_p_dp(order, x);
            nodes[i] = x;
            weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        GaussLegendre { nodes, weights }
    }

    pub fn nodes_on(&self, a: f64, b: f64, panels: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(panels * self.nodes.len());
        let width = (b - a) / panels as f64;
        for p in 0..panels {
            let lo = a + width * p as f64;
            let mid = lo + 0.5 * width;
            let half = 0.5 * width;
            for (x, w) in self.nodes.iter().zip(&self.weights) {
                out.push((mid + half * x, half * w));
            }
        }
        out
    }

    pub fn integrate(&self, a: f64, b: f64, panels: usize, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes_on(a, b, panels)
            .into_iter()
            .map(|(x, w)| w * f(x))
            .sum()
    }

    pub fn integrate_c(
        &self,
        a: f64,
        b: f64,
        panels: usize,
        f: impl Fn(f64) -> Complex64,
    ) -> Complex64 {
        self.nodes_on(a, b, panels)
            .into_iter()
            .map(|(x, w)| f(x) * w)
            .fold(Complex64::new(0.0, 0.0), |acc, v| acc + v)
    }
}

/// Noise functionals recomputed from an arbitrary kernel evaluator with
/// Richardson-extrapolated central differences for the derivative.
pub struct OracleBudget {
    pub norm: f64,
    pub mean: f64,
    pub s_q: f64,
    pub s_f: f64,
    pub s_qf: f64,
    pub f_bar: f64,
}

pub fn kernel_functionals(
    eval: &dyn Fn(f64) -> Complex64,
    half_width: f64,
    fd_step: f64,
    dt: f64,
    hbar: f64,
) -> OracleBudget {
    let gl = GaussLegendre::new(20);
    let deriv = |x: f64| {
        let h = fd_step;
        let d1 = (eval(x + h) - eval(x - h)) / (2.0 * h);
        let h2 = 0.5 * h;
        let d2 = (eval(x + h2) - eval(x - h2)) / (2.0 * h2);
        (d2 * 4.0 - d1) / 3.0
    };
    let panels = 48;
    let norm = gl.integrate(-half_width, half_width, panels, |x| eval(x).norm_sqr());
    let mean = gl.integrate(-half_width, half_width, panels, |x| x * eval(x).norm_sqr());
    let var = gl.integrate(-half_width, half_width, panels, |x| {
        x * x * eval(x).norm_sqr()
    });
    let grad2 = gl.integrate(-half_width, half_width, panels, |x| deriv(x).norm_sqr());
    let overlap = gl.integrate_c(-half_width, half_width, panels, |x| {
        eval(x).conj() * deriv(x)
    });
    let cross = gl.integrate_c(-half_width, half_width, panels, |x| {
        eval(x).conj() * deriv(x) * x
    });
    let y = overlap.im;
    OracleBudget {
        norm,
        mean,
        s_q: dt * var,
        s_f: hbar * hbar / dt * (grad2 - y * y),
        s_qf: hbar * cross.im,
        f_bar: -hbar * y / dt,
    }
}

/// Self-contained complex Gaussian kernel: normalization, curvature,
/// chirp, and tilt written out directly from the budget entries.
#[derive(Debug, Clone, Copy)]
pub struct GaussianKernelSpec {
    pub s_q: f64,
    pub s_qf: f64,
    pub f_bar: f64,
    pub dt: f64,
    pub hbar: f64,
}

impl GaussianKernelSpec {
    pub fn delta_q(&self) -> f64 {
        (self.s_q / self.dt).sqrt()
    }

    pub fn eval(&self, u: f64) -> Complex64 {
        let dq2 = self.s_q / self.dt;
        let norm = (2.0 * std::f64::consts::PI * dq2).powf(-0.25);
        let alpha = 1.0 / (4.0 * dq2);
        let beta = self.s_qf / (2.0 * self.hbar * dq2);
        let b = self.dt * self.f_bar / self.hbar;
        let a = Complex64::new(alpha, -beta);
        norm * (-a * u * u - Complex64::i() * b * u).exp()
    }
}

/// Kolmogorov asymptotic tail `P(sqrt(n) D > lambda)`.
pub fn kolmogorov_p(lambda: f64) -> f64 {
    if lambda < 1e-8 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100u32 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov statistic and approximate p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.total_cmp(q));
    ys.sort_by(|p, q| p.total_cmp(q));
    let (na, nb) = (xs.len(), ys.len());
    let mut i = 0;
    let mut j = 0;
    let mut d = 0.0f64;
    while i < na && j < nb {
        if xs[i] <= ys[j] {
            i += 1;
        } else {
            j += 1;
        }
        let gap = (i as f64 / na as f64 - j as f64 / nb as f64).abs();
        d = d.max(gap);
    }
    let ne = (na as f64 * nb as f64) / (na as f64 + nb as f64);
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_p(lambda))
}

/// One-sample Kolmogorov-Smirnov against an explicit CDF.
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut xs = sample.to_vec();
    xs.sort_by(|p, q| p.total_cmp(q));
    let n = xs.len();
    let mut d = 0.0f64;
    for (i, x) in xs.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((f - i as f64 / n as f64).abs());
        d = d.max((f - (i as f64 + 1.0) / n as f64).abs());
    }
    let ne = n as f64;
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    (d, kolmogorov_p(lambda))
}

/// Two measurements of an oscillator coordinate, evaluated by brute
/// force: position-grid reduction, eigenbasis phase evolution between
/// the measurements, and Gauss-Legendre quadrature over both outcomes.
pub struct TwoStepProblem<'a> {
    pub mass: f64,
    pub omega0: f64,
    pub hbar: f64,
    pub t_gap: f64,
    pub kernel1: &'a dyn Fn(f64) -> Complex64,
    pub kernel2: &'a dyn Fn(f64) -> Complex64,
    /// Outcome quadrature half-range; must cover the joint density.
    pub outcome_span: f64,
}

pub struct TwoStepMoments {
    pub means: [f64; 2],
    pub covariance: [[f64; 2]; 2],
    /// Total probability mass; a self check, 1 up to quadrature error.
    pub norm: f64,
    /// Worst relative norm loss when projecting onto the eigenbasis.
    pub basis_residual: f64,
}

fn hermite_row(nmax: usize, xi: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(nmax);
    out.push(std::f64::consts::PI.powf(-0.25) * (-0.5 * xi * xi).exp());
    if nmax == 1 {
        return out;
    }
    out.push(std::f64::consts::SQRT_2 * xi * out[0]);
    for n in 1..nmax - 1 {
        let nf = n as f64;
        let next =
            xi * (2.0 / (nf + 1.0)).sqrt() * out[n] - (nf / (nf + 1.0)).sqrt() * out[n - 1];
        out.push(next);
    }
    out
}

pub fn two_step_moments(p: &TwoStepProblem) -> TwoStepMoments {
    let x_span = 10.0f64.max(1.5 * p.outcome_span);
    let nx = 4001usize;
    let dx = 2.0 * x_span / (nx - 1) as f64;
    let xs: Vec<f64> = (0..nx).map(|i| -x_span + dx * i as f64).collect();
    let x0 = (p.hbar / (p.mass * p.omega0)).sqrt();
    let n_basis = 80usize;
    // orthonormal oscillator eigenfunctions on the grid
    let basis: Vec<Vec<f64>> = {
        let mut rows = vec![Vec::with_capacity(nx); n_basis];
        for &x in &xs {
            let row = hermite_row(n_basis, x / x0);
            for (n, v) in row.into_iter().enumerate() {
                rows[n].push(v / x0.sqrt());
            }
        }
        rows
    };
    let phases: Vec<Complex64> = (0..n_basis)
        .map(|n| {
            let angle = -(n as f64 + 0.5) * p.omega0 * p.t_gap;
            Complex64::from_polar(1.0, angle)
        })
        .collect();
    let psi0: Vec<f64> = xs
        .iter()
        .map(|&x| {
            (std::f64::consts::PI * x0 * x0).powf(-0.25) * (-0.5 * (x / x0).powi(2)).exp()
        })
        .collect();

    let gl = GaussLegendre::new(16);
    let y_nodes = gl.nodes_on(-p.outcome_span, p.outcome_span, 15);
    // second-kernel densities, one row per outcome node
    let dens2: Vec<Vec<f64>> = y_nodes
        .iter()
        .map(|&(y2, _)| xs.iter().map(|&x| (p.kernel2)(y2 - x).norm_sqr()).collect())
        .collect();

    let mut z = 0.0;
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    let mut m11 = 0.0;
    let mut m22 = 0.0;
    let mut m12 = 0.0;
    let mut basis_residual = 0.0f64;
    for &(y1, w1) in &y_nodes {
        let psi1: Vec<Complex64> = xs
            .iter()
            .zip(&psi0)
            .map(|(&x, &g)| (p.kernel1)(y1 - x) * g)
            .collect();
        let mass1: f64 = psi1.iter().map(|v| v.norm_sqr()).sum::<f64>() * dx;
        if mass1 < 1e-300 {
            continue;
        }
        let coeffs: Vec<Complex64> = basis
            .iter()
            .map(|row| {
                row.iter()
                    .zip(&psi1)
                    .map(|(&b, v)| v * b)
                    .fold(Complex64::new(0.0, 0.0), |acc, v| acc + v)
                    * dx
            })
            .collect();
        let recon: f64 = coeffs.iter().map(|c| c.norm_sqr()).sum();
        basis_residual = basis_residual.max((recon - mass1).abs() / mass1);
        // evolve and take the position density
        let mut dens1t = vec![0.0f64; nx];
        for (i, d) in dens1t.iter_mut().enumerate() {
            let mut v = Complex64::new(0.0, 0.0);
            for n in 0..n_basis {
                v += coeffs[n] * phases[n] * basis[n][i];
            }
            *d = v.norm_sqr();
        }
        for (row, &(y2, w2)) in dens2.iter().zip(&y_nodes) {
            let w12: f64 = row
                .iter()
                .zip(&dens1t)
                .map(|(&a, &b)| a * b)
                .sum::<f64>()
                * dx;
            let mass = w1 * w2 * w12;
            z += mass;
            m1 += mass * y1;
            m2 += mass * y2;
            m11 += mass * y1 * y1;
            m22 += mass * y2 * y2;
            m12 += mass * y1 * y2;
        }
    }
    let mu1 = m1 / z;
    let mu2 = m2 / z;
    TwoStepMoments {
        means: [mu1, mu2],
        covariance: [
            [m11 / z - mu1 * mu1, m12 / z - mu1 * mu2],
            [m12 / z - mu1 * mu2, m22 / z - mu2 * mu2],
        ],
        norm: z,
        basis_residual,
    }
}

/// Added-noise minimum by direct search over detector budgets.
///
/// The added noise grows monotonically with `S_FF` at fixed
/// `(S_qq, S_qF)`, so the optimum sits on the uncertainty boundary
/// `S_FF = (hbar^2/4 + S_qF^2) / S_qq`; on that boundary the objective
/// is jointly convex in `(S_qq, S_qF)` (its Hessian determinant is
/// `k^2 hbar^2 / S_qq^4 > 0`), so a coarse bracket plus coordinate
/// golden-section descent finds the global minimum.
pub struct SearchOptimum {
    pub added: f64,
    pub s_qq: f64,
    pub s_ff: f64,
    pub s_qf: f64,
}

fn golden_min(mut a: f64, mut b: f64, f: &dyn Fn(f64) -> f64) -> f64 {
    const R: f64 = 0.618_033_988_749_894_9;
    let mut c = b - R * (b - a);
    let mut d = a + R * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..300 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - R * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + R * (b - a);
            fd = f(d);
        }
        if (b - a).abs() <= 1e-15 * (a.abs() + b.abs()).max(1e-300) {
            break;
        }
    }
    0.5 * (a + b)
}

/// Minimize over one coordinate with an expanding bracket so a bad
/// initial range cannot trap the search at an edge.
fn line_min(center: f64, mut half: f64, f: &dyn Fn(f64) -> f64) -> f64 {
    let mut c = center;
    for _ in 0..60 {
        let m = golden_min(c - half, c + half, f);
        if (m - (c - half)).abs() < 0.02 * half || (m - (c + half)).abs() < 0.02 * half {
            c = m;
            half *= 2.0;
        } else {
            return m;
        }
    }
    c
}

pub fn min_added_search(chi: Complex64, hbar: f64) -> SearchOptimum {
    let mag2 = chi.norm_sqr();
    let mag = chi.norm();
    let q = 0.25 * hbar * hbar;
    let added = |s_qq: f64, s_qf: f64| -> f64 {
        let s_ff = (q + s_qf * s_qf) / s_qq;
        s_qq + mag2 * s_ff + 2.0 * chi.re * s_qf
    };
    // coarse grid: log in s_qq around hbar |chi|, linear in s_qf
    let scale = hbar * mag;
    let qf_span = hbar * (1.0 + 2.0 * (chi.re / chi.im).abs());
    let mut best = (f64::INFINITY, scale, 0.0f64);
    let n = 400;
    for i in 0..n {
        let lg = -3.0 + 6.0 * i as f64 / (n - 1) as f64;
        let s_qq = scale * 10f64.powf(lg);
        for j in 0..n {
            let s_qf = -qf_span + 2.0 * qf_span * j as f64 / (n - 1) as f64;
            let v = added(s_qq, s_qf);
            if v < best.0 {
                best = (v, s_qq, s_qf);
            }
        }
    }
    // the s_qq direction is elementary: x + c/x has its minimum at
    // sqrt(c), so s_qq drops out and one golden-section search over
    // s_qf finishes the job; the coarse grid supplies the bracket
    let eliminated = |s_qf: f64| 2.0 * mag * (q + s_qf * s_qf).sqrt() + 2.0 * chi.re * s_qf;
    let s_qf = line_min(best.2, hbar.max(0.5 * best.2.abs()), &eliminated);
    let s_qq = mag * (q + s_qf * s_qf).sqrt();
    let value = added(s_qq, s_qf);
    assert!(
        value <= best.0 + 1e-12 * best.0.abs().max(1e-300),
        "refinement went uphill: {value} vs coarse {}",
        best.0
    );
    SearchOptimum {
        added: value,
        s_qq,
        s_ff: (q + s_qf * s_qf) / s_qq,
        s_qf,
    }
}
