//! Stochastic 1-D center-of-mass dynamics: free Schrödinger evolution plus
//! quadratic-coupling localization.
//!
//! The unraveling is the norm-preserving diffusive form
//! dpsi = [-(i/hbar) H dt + sqrt(2 lambda) (x - <x>) dW
//!         - lambda (x - <x>)^2 dt] psi,
//! whose ensemble average obeys drho/dt = -(i/hbar)[H, rho]
//! - lambda [x, [x, rho]]: position-basis coherence at separation d decays at
//! exactly lambda d^2, matching the quadratic collapse-rate law.  Its
//! deterministic variance flow reproduces the kinetic-spreading vs
//! collapse-shrinking competition; jump unravelings would be an alternative
//! concretization and are not implemented.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::constants::PhysicalConstants;
use crate::equilibrium;
use crate::error::{Error, Result};

/// Gaussian moment set of a 1-D state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMoments {
    pub mean_x: f64,
    pub mean_p: f64,
    pub var_x: f64,
    pub var_p: f64,
    pub cov: f64,
}

impl GaussianMoments {
    /// Minimum-uncertainty packet with position variance `var_x`.
    pub fn pure_packet(var_x: f64, consts: &PhysicalConstants) -> Self {
        GaussianMoments {
            mean_x: 0.0,
            mean_p: 0.0,
            var_x,
            var_p: consts.hbar * consts.hbar / (4.0 * var_x),
            cov: 0.0,
        }
    }

    pub fn validate(&self, consts: &PhysicalConstants) -> Result<()> {
        if !(self.var_x > 0.0 && self.var_p > 0.0) {
            return Err(Error::InvalidParameter("variances must be strictly positive".into()));
        }
        let det = self.var_x * self.var_p - self.cov * self.cov;
        let bound = consts.hbar * consts.hbar / 4.0;
        if det < bound * (1.0 - 1e-9) {
            return Err(Error::InvalidParameter(format!(
                "uncertainty product {det} violates the hbar^2/4 bound {bound}"
            )));
        }
        Ok(())
    }
}

/// Localization strength and integration controls.  `lambda` is the
/// quadratic rate coefficient: rate(dx) = lambda dx^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseModelParams {
    /// [1/(s m^2)]
    pub lambda: f64,
    /// [kg]
    pub mass: f64,
    pub seed: u64,
    /// [s]
    pub dt: f64,
}

impl CollapseModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(Error::InvalidParameter(format!("mass must be positive, got {}", self.mass)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }

    /// Kinetic and collapse rates of a state of position variance `var`.
    /// The collapse rate uses 4 lambda var, which equals lambda d^2 for a
    /// two-packet state of separation d.
    fn state_rates(&self, var: f64, consts: &PhysicalConstants) -> (f64, f64) {
        (consts.hbar / (self.mass * var), 4.0 * self.lambda * var)
    }

    fn check_dt(&self, var0: f64, consts: &PhysicalConstants) -> Result<()> {
        let (k, c) = self.state_rates(var0, consts);
        let max_dt = 0.01 / k.max(c);
        if self.dt > max_dt {
            return Err(Error::TimestepTooCoarse { dt: self.dt, max_dt });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentTrajectory {
    pub times: Vec<f64>,
    pub moments: Vec<GaussianMoments>,
}

/// Deterministic part of the moment flow: free drift for the means, the
/// closed nonlinear system for the covariances (the variance flow carries no
/// noise in this model class).
fn moment_rhs(m: &GaussianMoments, lambda: f64, mass: f64, hbar: f64) -> GaussianMoments {
    let l8 = 8.0 * lambda;
    GaussianMoments {
        mean_x: m.mean_p / mass,
        mean_p: 0.0,
        var_x: 2.0 * m.cov / mass - l8 * m.var_x * m.var_x,
        cov: m.var_p / mass - l8 * m.var_x * m.cov,
        var_p: 2.0 * lambda * hbar * hbar - l8 * m.cov * m.cov,
    }
}

fn moments_axpy(a: &GaussianMoments, b: &GaussianMoments, s: f64) -> GaussianMoments {
    GaussianMoments {
        mean_x: a.mean_x + s * b.mean_x,
        mean_p: a.mean_p + s * b.mean_p,
        var_x: a.var_x + s * b.var_x,
        cov: a.cov + s * b.cov,
        var_p: a.var_p + s * b.var_p,
    }
}

/// RK4 integration of the moment ODEs over `duration`.
pub fn evolve_moments(
    params: &CollapseModelParams,
    state: &GaussianMoments,
    duration: f64,
    consts: &PhysicalConstants,
) -> Result<MomentTrajectory> {
    params.validate()?;
    consts.validate()?;
    state.validate(consts)?;
    if !(duration > 0.0) {
        return Err(Error::InvalidParameter("duration must be positive".into()));
    }
    // the fastest rate occurs at the initial state or at the stationary point
    params.check_dt(state.var_x, consts)?;
    if params.lambda > 0.0 {
        let st = stationary_moments(params.lambda, params.mass, consts);
        params.check_dt(st.var_x, consts)?;
    }
    let steps = (duration / params.dt).ceil() as usize;
    let dt = params.dt;
    let mut times = Vec::with_capacity(steps + 1);
    let mut moments = Vec::with_capacity(steps + 1);
    let mut m = *state;
    times.push(0.0);
    moments.push(m);
    for step in 0..steps {
        let k1 = moment_rhs(&m, params.lambda, params.mass, consts.hbar);
        let k2 = moment_rhs(&moments_axpy(&m, &k1, dt / 2.0), params.lambda, params.mass, consts.hbar);
        let k3 = moment_rhs(&moments_axpy(&m, &k2, dt / 2.0), params.lambda, params.mass, consts.hbar);
        let k4 = moment_rhs(&moments_axpy(&m, &k3, dt), params.lambda, params.mass, consts.hbar);
        let mut next = m;
        for (k, w) in [(&k1, 1.0), (&k2, 2.0), (&k3, 2.0), (&k4, 1.0)] {
            next = moments_axpy(&next, k, w * dt / 6.0);
        }
        m = next;
        times.push((step + 1) as f64 * dt);
        moments.push(m);
    }
    Ok(MomentTrajectory { times, moments })
}

/// Closed-form fixed point of the variance flow: cov = hbar/2,
/// var_x = sqrt(hbar / (8 lambda M)), var_p from the cov equation.  The
/// stationary state is minimum-uncertainty: var_x var_p - cov^2 = hbar^2/4.
pub fn stationary_moments(lambda: f64, mass: f64, consts: &PhysicalConstants) -> GaussianMoments {
    let var_x = (consts.hbar / (8.0 * lambda * mass)).sqrt();
    let cov = consts.hbar / 2.0;
    GaussianMoments { mean_x: 0.0, mean_p: 0.0, var_x, var_p: 8.0 * lambda * mass * var_x * cov, cov }
}

/// Linearized relaxation rate of the variance flow at its fixed point; all
/// three eigenvalues share the real part 2 sqrt(2) omega_eff with
/// omega_eff = sqrt(lambda hbar / M).
pub fn moment_relaxation_rate(lambda: f64, mass: f64, consts: &PhysicalConstants) -> f64 {
    2.0 * std::f64::consts::SQRT_2 * (lambda * consts.hbar / mass).sqrt()
}

/// 1-D wave function on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridState {
    /// left edge coordinate of the first sample
    pub x0: f64,
    pub dx: f64,
    pub psi: Vec<Complex64>,
}

impl GridState {
    pub fn position(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn norm2(&self) -> f64 {
        self.psi.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.dx
    }

    pub fn renormalize(&mut self) -> f64 {
        let n = self.norm2().sqrt();
        if n > 0.0 {
            let inv = 1.0 / n;
            for c in &mut self.psi {
                *c *= inv;
            }
        }
        n
    }

    pub fn mean_and_var(&self) -> (f64, f64) {
        let mut m0 = 0.0;
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for (i, c) in self.psi.iter().enumerate() {
            let w = c.norm_sqr();
            let x = self.position(i);
            m0 += w;
            m1 += w * x;
            m2 += w * x * x;
        }
        let mean = m1 / m0;
        (mean, (m2 / m0 - mean * mean).max(0.0))
    }

    /// Mass fraction strictly left of `x`.
    pub fn mass_left_of(&self, x: f64) -> f64 {
        let mut left = 0.0;
        let mut total = 0.0;
        for (i, c) in self.psi.iter().enumerate() {
            let w = c.norm_sqr();
            total += w;
            if self.position(i) < x {
                left += w;
            }
        }
        left / total
    }

    /// Normalized Gaussian packet with position standard deviation `sigma`
    /// and mean momentum `p0`.
    pub fn gaussian_packet(
        n: usize,
        x0: f64,
        dx: f64,
        center: f64,
        sigma: f64,
        p0: f64,
        consts: &PhysicalConstants,
    ) -> Result<GridState> {
        if sigma / dx < 8.0 {
            return Err(Error::GridUnderResolved(format!(
                "packet sigma {sigma} spans fewer than 8 cells of {dx}"
            )));
        }
        let mut psi = Vec::with_capacity(n);
        for i in 0..n {
            let x = x0 + i as f64 * dx;
            let arg = -((x - center) * (x - center)) / (4.0 * sigma * sigma);
            let phase = p0 * x / consts.hbar;
            psi.push(Complex64::from_polar(arg.exp(), phase));
        }
        let mut state = GridState { x0, dx, psi };
        state.renormalize();
        Ok(state)
    }

    /// Symmetric two-packet superposition centered on `centers`.
    pub fn two_packet_cat(
        n: usize,
        x0: f64,
        dx: f64,
        centers: (f64, f64),
        sigma: f64,
        consts: &PhysicalConstants,
    ) -> Result<GridState> {
        let d = (centers.1 - centers.0).abs();
        if d / dx < 16.0 {
            return Err(Error::GridUnderResolved(format!(
                "packet separation {d} spans fewer than 16 cells of {dx}"
            )));
        }
        let left = GridState::gaussian_packet(n, x0, dx, centers.0, sigma, 0.0, consts)?;
        let right = GridState::gaussian_packet(n, x0, dx, centers.1, sigma, 0.0, consts)?;
        let psi: Vec<Complex64> =
            left.psi.iter().zip(&right.psi).map(|(a, b)| a + b).collect();
        let mut state = GridState { x0, dx, psi };
        state.renormalize();
        Ok(state)
    }
}

/// Controls for the stochastic grid ensemble.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridEvolveOptions {
    pub realizations: usize,
    /// record every `stride` steps
    pub record_stride: usize,
    /// off-diagonal coherence probes (left, right packet centers)
    pub coherence_probes: Option<(f64, f64)>,
    /// shift the grid by whole cells to keep <x> centered (incompatible with
    /// coherence probes)
    pub recenter: bool,
}

impl Default for GridEvolveOptions {
    fn default() -> Self {
        GridEvolveOptions { realizations: 1, record_stride: 1, coherence_probes: None, recenter: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    /// ensemble mean of Var(x)
    pub mean_var_x: Vec<f64>,
    /// normalized off-diagonal coherence |rho(xL,xR)| / sqrt(rho_LL rho_RR)
    pub coherence: Vec<f64>,
    /// per-realization final mass fraction left of the probe midpoint
    pub left_fraction_final: Vec<f64>,
    /// worst post-renormalization |norm - 1| seen in any step
    pub max_norm_deviation: f64,
}

struct RealizationSeries {
    var_x: Vec<f64>,
    coh_num: Vec<Complex64>,
    coh_ll: Vec<f64>,
    coh_rr: Vec<f64>,
    left_fraction: f64,
    max_norm_dev: f64,
}

/// Split-step ensemble integration: exact spectral kinetic half-steps around
/// an Euler-Maruyama localization step with per-step renormalization.
/// Realizations use independent counter-seeded streams and reduce in index
/// order, so results are reproducible for any thread count.
pub fn evolve_grid_stochastic(
    params: &CollapseModelParams,
    state: &GridState,
    duration: f64,
    opts: &GridEvolveOptions,
    consts: &PhysicalConstants,
) -> Result<EnsembleStats> {
    params.validate()?;
    consts.validate()?;
    if opts.realizations == 0 {
        return Err(Error::InvalidParameter("need at least one realization".into()));
    }
    if opts.recenter && opts.coherence_probes.is_some() {
        return Err(Error::InvalidParameter(
            "recentering would invalidate fixed coherence probes".into(),
        ));
    }
    let (_, var0) = state.mean_and_var();
    params.check_dt(var0, consts)?;
    let n = state.psi.len();
    let steps = (duration / params.dt).ceil() as usize;
    let stride = opts.record_stride.max(1);

    let mut planner = FftPlanner::<f64>::new();
    let forward: Arc<dyn Fft<f64>> = planner.plan_fft_forward(n);
    let inverse: Arc<dyn Fft<f64>> = planner.plan_fft_inverse(n);
    // kinetic phases for a half and a full step
    let half_phase = kinetic_phases(n, state.dx, params.dt / 2.0, params.mass, consts);
    let full_phase = kinetic_phases(n, state.dx, params.dt, params.mass, consts);

    let probes = opts.coherence_probes.map(|(xl, xr)| {
        let il = ((xl - state.x0) / state.dx).round().clamp(0.0, (n - 1) as f64) as usize;
        let ir = ((xr - state.x0) / state.dx).round().clamp(0.0, (n - 1) as f64) as usize;
        (il, ir, (xl + xr) / 2.0)
    });
    let record_count = steps / stride + 1;

    let series: Vec<RealizationSeries> = (0..opts.realizations)
        .into_par_iter()
        .map(|real| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(real as u64 + 1);
            run_realization(
                params,
                state.clone(),
                steps,
                stride,
                record_count,
                &forward,
                &inverse,
                &half_phase,
                &full_phase,
                probes,
                opts.recenter,
                &mut rng,
            )
        })
        .collect();

    let times: Vec<f64> = (0..record_count).map(|r| (r * stride) as f64 * params.dt).collect();
    let mut mean_var = vec![0.0f64; record_count];
    let mut coh_num = vec![Complex64::default(); record_count];
    let mut coh_ll = vec![0.0f64; record_count];
    let mut coh_rr = vec![0.0f64; record_count];
    let mut left_fractions = Vec::with_capacity(series.len());
    let mut max_norm_dev = 0.0f64;
    for s in &series {
        for r in 0..record_count {
            mean_var[r] += s.var_x[r];
            coh_num[r] += s.coh_num[r];
            coh_ll[r] += s.coh_ll[r];
            coh_rr[r] += s.coh_rr[r];
        }
        left_fractions.push(s.left_fraction);
        max_norm_dev = max_norm_dev.max(s.max_norm_dev);
    }
    let nreal = series.len() as f64;
    for v in &mut mean_var {
        *v /= nreal;
    }
    let coherence: Vec<f64> = if probes.is_some() {
        (0..record_count)
            .map(|r| {
                let den = (coh_ll[r] * coh_rr[r]).sqrt();
                if den > 0.0 {
                    coh_num[r].norm() / den
                } else {
                    0.0
                }
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(EnsembleStats {
        times,
        mean_var_x: mean_var,
        coherence,
        left_fraction_final: left_fractions,
        max_norm_deviation: max_norm_dev,
    })
}

fn kinetic_phases(
    n: usize,
    dx: f64,
    dt: f64,
    mass: f64,
    consts: &PhysicalConstants,
) -> Vec<Complex64> {
    let two_pi = 2.0 * std::f64::consts::PI;
    (0..n)
        .map(|j| {
            let jj = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
            let k = two_pi * jj / (n as f64 * dx);
            Complex64::from_polar(1.0, -consts.hbar * k * k * dt / (2.0 * mass))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn run_realization(
    params: &CollapseModelParams,
    mut state: GridState,
    steps: usize,
    stride: usize,
    record_count: usize,
    forward: &Arc<dyn Fft<f64>>,
    inverse: &Arc<dyn Fft<f64>>,
    half_phase: &[Complex64],
    full_phase: &[Complex64],
    probes: Option<(usize, usize, f64)>,
    recenter: bool,
    rng: &mut ChaCha8Rng,
) -> RealizationSeries {
    let n = state.psi.len();
    let dt = params.dt;
    let amp = (2.0 * params.lambda).sqrt();
    let sqrt_dt = dt.sqrt();
    let inv_n = 1.0 / n as f64;
    let mut scratch = vec![Complex64::default(); forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len())];
    let final_midpoint = state.x0 + 0.5 * (n as f64 - 1.0) * state.dx;
    let recenter_threshold = 0.05 * n as f64 * state.dx;

    let mut out = RealizationSeries {
        var_x: Vec::with_capacity(record_count),
        coh_num: vec![Complex64::default(); record_count],
        coh_ll: vec![0.0; record_count],
        coh_rr: vec![0.0; record_count],
        left_fraction: 0.0,
        max_norm_dev: 0.0,
    };
    let record = |state: &GridState, idx: usize, out: &mut RealizationSeries| {
        let (_, var) = state.mean_and_var();
        out.var_x.push(var);
        if let Some((il, ir, _)) = probes {
            let a = state.psi[il];
            let b = state.psi[ir];
            out.coh_num[idx] += a * b.conj();
            out.coh_ll[idx] += a.norm_sqr();
            out.coh_rr[idx] += b.norm_sqr();
        }
    };
    record(&state, 0, &mut out);

    let kinetic = |state: &mut GridState, phases: &[Complex64], scratch: &mut Vec<Complex64>| {
        forward.process_with_scratch(&mut state.psi, scratch);
        for (c, ph) in state.psi.iter_mut().zip(phases) {
            *c *= ph;
        }
        inverse.process_with_scratch(&mut state.psi, scratch);
        for c in &mut state.psi {
            *c *= inv_n;
        }
    };

    // merged Strang splitting: half kinetic, [collapse, full kinetic]*, half
    kinetic(&mut state, half_phase, &mut scratch);
    for step in 0..steps {
        // Euler-Maruyama localization step around the instantaneous mean
        let (mean, _) = state.mean_and_var();
        let dw: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng) * sqrt_dt;
        for (i, c) in state.psi.iter_mut().enumerate() {
            let q = state.x0 + i as f64 * state.dx - mean;
            let factor = 1.0 + amp * q * dw - params.lambda * q * q * dt;
            *c *= factor;
        }
        let _ = state.renormalize();
        out.max_norm_dev = out.max_norm_dev.max((state.norm2() - 1.0).abs());

        if recenter {
            let (m, _) = state.mean_and_var();
            // keep the mean near the center of the current window
            let window_center = state.x0 + 0.5 * (n as f64 - 1.0) * state.dx;
            let off = m - window_center;
            if off.abs() > recenter_threshold {
                let cells = (off / state.dx).round() as i64;
                shift_cells(&mut state, cells);
            }
        }

        let last = step + 1 == steps;
        if (step + 1) % stride == 0 || last {
            // finish the step with a half kick before sampling
            kinetic(&mut state, half_phase, &mut scratch);
            let idx = (step + 1) / stride;
            if idx < record_count {
                record(&state, idx, &mut out);
            }
            if !last {
                kinetic(&mut state, half_phase, &mut scratch);
            }
        } else {
            kinetic(&mut state, full_phase, &mut scratch);
        }
    }
    if let Some((_, _, mid)) = probes {
        out.left_fraction = state.mass_left_of(mid);
    } else {
        out.left_fraction = state.mass_left_of(final_midpoint);
    }
    out
}

/// Shift the grid window by `cells`, keeping the wave function fixed in
/// space; amplitudes scrolled past the edge are dropped (they are negligible
/// when the recenter margin is respected).
fn shift_cells(state: &mut GridState, cells: i64) {
    if cells == 0 {
        return;
    }
    let n = state.psi.len() as i64;
    let mut new_psi = vec![Complex64::default(); state.psi.len()];
    for i in 0..n {
        let src = i + cells;
        if src >= 0 && src < n {
            new_psi[i as usize] = state.psi[src as usize];
        }
    }
    state.psi = new_psi;
    state.x0 += cells as f64 * state.dx;
    state.renormalize();
}

/// Fit ln y = ln A - rate * t by least squares over points with y above
/// `floor`; returns (rate, max relative residual of the fit window).
pub fn fit_exponential_decay(times: &[f64], values: &[f64], floor: f64) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(_, v)| **v > floor)
        .map(|(t, v)| (*t, v.ln()))
        .collect();
    if pts.len() < 2 {
        return (0.0, f64::INFINITY);
    }
    let n = pts.len() as f64;
    let st: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let stt: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sty: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let slope = (n * sty - st * sy) / (n * stt - st * st);
    let intercept = (sy - slope * st) / n;
    let mut residual = 0.0f64;
    for (t, y) in &pts {
        residual = residual.max((y - (intercept + slope * t)).abs());
    }
    (-slope, residual)
}

/// Effective relaxation rate of a trajectory toward its tail value:
/// (y0 - y_inf) / integral (y - y_inf) dt, exact for pure exponentials and
/// robust for oscillatory decays.
pub fn integral_relaxation_rate(times: &[f64], values: &[f64]) -> f64 {
    let n = values.len();
    if n < 4 {
        return 0.0;
    }
    let tail_start = n - n / 4;
    let y_inf = values[tail_start..].iter().sum::<f64>() / (n - tail_start) as f64;
    let y0 = values[0] - y_inf;
    let mut integral = 0.0;
    for i in 1..n {
        let a = values[i - 1] - y_inf;
        let b = values[i] - y_inf;
        integral += 0.5 * (a + b) * (times[i] - times[i - 1]);
    }
    if integral == 0.0 {
        0.0
    } else {
        y0 / integral
    }
}

/// Scenario for the desk-scale equilibrium verification: G is rescaled so
/// the Newton frequency is tractable, then the stochastic stationary state is
/// compared against the closed-form balance prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaledUniverseSpec {
    /// multiplies the Newton constant
    pub g_scale: f64,
    /// matter density defining omega [kg/m^3]
    pub density: f64,
    /// base mass [kg]
    pub mass: f64,
    /// extra Planck-constant factors to sweep (1.0 is always run first)
    pub hbar_factors: Vec<f64>,
    /// extra mass factors for the rate-independence check
    pub mass_factors: Vec<f64>,
    /// initial Var(x) in units of the balance variance hbar/(M omega)
    pub wide_var_factor: f64,
    pub narrow_var_factor: f64,
    /// simulated duration in units of 1/omega
    pub duration_omega: f64,
    pub realizations: usize,
    pub grid_points: usize,
    pub seed: u64,
}

impl Default for ScaledUniverseSpec {
    fn default() -> Self {
        ScaledUniverseSpec {
            g_scale: 1.0,
            density: 1000.0,
            mass: 1.0,
            hbar_factors: vec![4.0],
            mass_factors: vec![10.0, 100.0],
            wide_var_factor: 1.414,
            narrow_var_factor: 0.0884,
            duration_omega: 8.0,
            realizations: 200,
            grid_points: 1024,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaledCase {
    pub hbar_factor: f64,
    pub omega: f64,
    pub lambda: f64,
    /// hbar/(M omega)
    pub balance_var: f64,
    pub stationary_var_ode: f64,
    pub stationary_var_sim_wide: f64,
    pub stationary_var_sim_narrow: f64,
    /// integral-estimator relaxation rate of the simulated wide run
    pub relaxation_rate_sim: f64,
    pub relaxation_rate_ode: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaledUniverseRun {
    pub cases: Vec<ScaledCase>,
    /// (mass, ODE relaxation rate) across the mass sweep at base hbar
    pub mass_sweep_rates: Vec<(f64, f64)>,
    /// measured stationary width over the balance width sqrt(hbar/(M omega))
    pub width_factor: f64,
    /// measured relaxation rate over omega
    pub rate_factor: f64,
}

pub fn scaled_universe_run(
    spec: &ScaledUniverseSpec,
    consts: &PhysicalConstants,
) -> Result<ScaledUniverseRun> {
    if !(spec.g_scale > 0.0) {
        return Err(Error::InvalidParameter("g_scale must be positive".into()));
    }
    let base = consts.with_g_scaled(spec.g_scale);
    let mut cases = Vec::new();
    let mut factors = vec![1.0];
    factors.extend(spec.hbar_factors.iter().copied());
    for (ci, &hf) in factors.iter().enumerate() {
        let c = base.with_hbar_scaled(hf);
        let omega = equilibrium::newton_frequency(spec.density, &c)?;
        let lambda = spec.mass * omega * omega / c.hbar;
        let balance_var = c.hbar / (spec.mass * omega);
        let st = stationary_moments(lambda, spec.mass, &c);
        let run_one = |var_factor: f64, stream: u64| -> Result<(f64, Vec<f64>, Vec<f64>)> {
            let var0 = var_factor * balance_var;
            let sigma0 = var0.sqrt();
            let sigma_wide = (spec.wide_var_factor * balance_var).sqrt();
            let half = 8.0 * sigma_wide + 3.0 * balance_var.sqrt();
            let n = spec.grid_points;
            let dx = 2.0 * half / n as f64;
            let state = GridState::gaussian_packet(n, -half, dx, 0.0, sigma0, 0.0, &c)?;
            // resolve the fastest of the initial and stationary rates
            let p_probe = CollapseModelParams { lambda, mass: spec.mass, seed: 0, dt: 1.0 };
            let (k0, c0) = p_probe.state_rates(var0, &c);
            let (ks, cs) = p_probe.state_rates(st.var_x, &c);
            let dt = 0.009 / k0.max(c0).max(ks).max(cs);
            let params = CollapseModelParams {
                lambda,
                mass: spec.mass,
                seed: spec.seed + stream,
                dt,
            };
            let duration = spec.duration_omega / omega;
            let opts = GridEvolveOptions {
                realizations: spec.realizations,
                record_stride: ((duration / dt) as usize / 400).max(1),
                coherence_probes: None,
                recenter: true,
            };
            let stats = evolve_grid_stochastic(&params, &state, duration, &opts, &c)?;
            let tail_start = stats.mean_var_x.len() - stats.mean_var_x.len() / 3;
            let tail = stats.mean_var_x[tail_start..].iter().sum::<f64>()
                / (stats.mean_var_x.len() - tail_start) as f64;
            Ok((tail, stats.times, stats.mean_var_x))
        };
        let (wide_tail, wt, wv) = run_one(spec.wide_var_factor, 1000 * (ci as u64 + 1))?;
        let (narrow_tail, _, _) = run_one(spec.narrow_var_factor, 2000 * (ci as u64 + 1))?;
        let relax_sim = integral_relaxation_rate(&wt, &wv);
        // deterministic reference on the same initial condition
        let m0 = GaussianMoments::pure_packet(spec.wide_var_factor * balance_var, &c);
        let pm = CollapseModelParams {
            lambda,
            mass: spec.mass,
            seed: 0,
            dt: 0.009
                / (c.hbar / (spec.mass * st.var_x)).max(4.0 * lambda * spec.wide_var_factor * balance_var),
        };
        let traj = evolve_moments(&pm, &m0, spec.duration_omega / omega, &c)?;
        let ode_vars: Vec<f64> = traj.moments.iter().map(|m| m.var_x).collect();
        let relax_ode = integral_relaxation_rate(&traj.times, &ode_vars);
        cases.push(ScaledCase {
            hbar_factor: hf,
            omega,
            lambda,
            balance_var,
            stationary_var_ode: st.var_x,
            stationary_var_sim_wide: wide_tail,
            stationary_var_sim_narrow: narrow_tail,
            relaxation_rate_sim: relax_sim,
            relaxation_rate_ode: relax_ode,
        });
    }
    // mass sweep on the deterministic flow: the relaxation rate must not
    // depend on the mass
    let mut mass_sweep = Vec::new();
    let mut masses = vec![spec.mass];
    masses.extend(spec.mass_factors.iter().map(|f| f * spec.mass));
    for m in masses {
        let omega = equilibrium::newton_frequency(spec.density, &base)?;
        let lambda = m * omega * omega / base.hbar;
        let balance_var = base.hbar / (m * omega);
        let st = stationary_moments(lambda, m, &base);
        let m0 = GaussianMoments::pure_packet(spec.wide_var_factor * balance_var, &base);
        let pm = CollapseModelParams {
            lambda,
            mass: m,
            seed: 0,
            dt: 0.009 / (base.hbar / (m * st.var_x)).max(4.0 * lambda * spec.wide_var_factor * balance_var),
        };
        let traj = evolve_moments(&pm, &m0, spec.duration_omega / omega, &base)?;
        let vars: Vec<f64> = traj.moments.iter().map(|mm| mm.var_x).collect();
        mass_sweep.push((m, integral_relaxation_rate(&traj.times, &vars)));
    }
    let first = &cases[0];
    let width_factor = (first.stationary_var_sim_wide / first.balance_var).sqrt();
    let rate_factor = first.relaxation_rate_sim / first.omega;
    Ok(ScaledUniverseRun { cases, mass_sweep_rates: mass_sweep, width_factor, rate_factor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn consts() -> PhysicalConstants {
        PhysicalConstants::default()
    }

    /// test-friendly unit system: hbar = 1, M = 1
    fn unit_consts() -> PhysicalConstants {
        PhysicalConstants { newton_g: 1.0, hbar: 1.0 }
    }

    #[test]
    fn free_spreading_is_exact() {
        let c = unit_consts();
        let m0 = GaussianMoments::pure_packet(1.0, &c);
        let params = CollapseModelParams { lambda: 0.0, mass: 1.0, seed: 0, dt: 1e-3 };
        let traj = evolve_moments(&params, &m0, 2.0, &c).unwrap();
        for (t, m) in traj.times.iter().zip(&traj.moments) {
            // Var(x,t) = Var0 + 2 Cov0 t / M + Var(p,0) t^2 / M^2
            let want = 1.0 + 0.25 * t * t;
            assert_relative_eq!(m.var_x, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn stationary_point_is_fixed_and_minimum_uncertainty() {
        let c = unit_consts();
        let st = stationary_moments(1.0, 1.0, &c);
        let det = st.var_x * st.var_p - st.cov * st.cov;
        assert_relative_eq!(det, 0.25, max_relative = 1e-12);
        let params = CollapseModelParams { lambda: 1.0, mass: 1.0, seed: 0, dt: 1e-3 };
        let traj = evolve_moments(&params, &st, 10.0, &c).unwrap();
        let last = traj.moments.last().unwrap();
        assert_relative_eq!(last.var_x, st.var_x, max_relative = 0.01);
        assert_relative_eq!(last.var_p, st.var_p, max_relative = 0.01);
        assert_relative_eq!(last.cov, st.cov, max_relative = 0.01);
    }

    #[test]
    fn attractor_from_both_sides() {
        let c = unit_consts();
        let params = CollapseModelParams { lambda: 1.0, mass: 1.0, seed: 0, dt: 2e-4 };
        let st = stationary_moments(1.0, 1.0, &c);
        let wide = GaussianMoments::pure_packet(4.0 * st.var_x, &c);
        let narrow = GaussianMoments::pure_packet(st.var_x / 4.0, &c);
        let t_wide = evolve_moments(&params, &wide, 12.0, &c).unwrap();
        let t_narrow = evolve_moments(&params, &narrow, 12.0, &c).unwrap();
        let vw = t_wide.moments.last().unwrap().var_x;
        let vn = t_narrow.moments.last().unwrap().var_x;
        assert_relative_eq!(vw, vn, max_relative = 0.05);
        assert_relative_eq!(vw, st.var_x, max_relative = 0.05);
    }

    #[test]
    fn timestep_too_coarse_rejected() {
        let c = unit_consts();
        let m0 = GaussianMoments::pure_packet(1.0, &c);
        let params = CollapseModelParams { lambda: 1.0, mass: 1.0, seed: 0, dt: 1.0 };
        assert!(matches!(
            evolve_moments(&params, &m0, 2.0, &c),
            Err(Error::TimestepTooCoarse { .. })
        ));
    }

    #[test]
    fn timestep_convergence_on_moments() {
        let c = unit_consts();
        let m0 = GaussianMoments::pure_packet(2.0, &c);
        let run = |dt: f64| {
            let params = CollapseModelParams { lambda: 1.0, mass: 1.0, seed: 0, dt };
            evolve_moments(&params, &m0, 5.0, &c).unwrap().moments.last().unwrap().var_x
        };
        let a = run(1e-3);
        let b = run(5e-4);
        assert!((a - b).abs() / b < 0.01, "dt halving changed Var by {}", (a - b).abs() / b);
    }

    #[test]
    fn uncertainty_validation() {
        let c = consts();
        let bad = GaussianMoments { mean_x: 0.0, mean_p: 0.0, var_x: 1e-40, var_p: 1e-40, cov: 0.0 };
        assert!(bad.validate(&c).is_err());
    }

    #[test]
    fn grid_free_packet_matches_moments() {
        let c = unit_consts();
        let sigma = 1.0;
        let n = 512;
        let half = 12.0;
        let state =
            GridState::gaussian_packet(n, -half, 2.0 * half / n as f64, 0.0, sigma, 0.0, &c).unwrap();
        let (_, v0) = state.mean_and_var();
        assert_relative_eq!(v0, sigma * sigma, max_relative = 1e-6);
        let params = CollapseModelParams { lambda: 0.0, mass: 1.0, seed: 1, dt: 5e-3 };
        let opts = GridEvolveOptions { realizations: 1, record_stride: 40, ..Default::default() };
        let stats = evolve_grid_stochastic(&params, &state, 2.0, &opts, &c).unwrap();
        for (t, v) in stats.times.iter().zip(&stats.mean_var_x) {
            let want = sigma * sigma + 0.25 * t * t / (sigma * sigma);
            assert_relative_eq!(*v, want, max_relative = 0.02);
        }
        assert!(stats.max_norm_deviation < 1e-9);
    }

    #[test]
    fn grid_ensemble_tracks_moment_ode() {
        let c = unit_consts();
        let lambda = 1.0;
        let st = stationary_moments(lambda, 1.0, &c);
        let var0 = 4.0 * st.var_x;
        let n = 512;
        let half = 10.0 * var0.sqrt();
        let state = GridState::gaussian_packet(n, -half, 2.0 * half / n as f64, 0.0, var0.sqrt(), 0.0, &c)
            .unwrap();
        let params = CollapseModelParams { lambda, mass: 1.0, seed: 3, dt: 1e-3 };
        let opts = GridEvolveOptions {
            realizations: 48,
            record_stride: 100,
            coherence_probes: None,
            recenter: true,
        };
        let stats = evolve_grid_stochastic(&params, &state, 2.0, &opts, &c).unwrap();
        let m0 = GaussianMoments::pure_packet(var0, &c);
        let traj = evolve_moments(&params, &m0, 2.0, &c).unwrap();
        // compare at a few shared times within Monte-Carlo error bars
        for idx in [2usize, 6, 10, stats.times.len() - 1] {
            let t = stats.times[idx];
            let ode_idx = (t / params.dt).round() as usize;
            let want = traj.moments[ode_idx.min(traj.moments.len() - 1)].var_x;
            let got = stats.mean_var_x[idx];
            let tol = 2.5 * want * (2.0 / opts.realizations as f64).sqrt();
            assert!(
                (got - want).abs() < tol,
                "t = {t}: ensemble {got} vs ODE {want}, tol {tol}"
            );
        }
    }

    #[test]
    fn cat_coherence_decays_at_lambda_d_squared() {
        let c = unit_consts();
        let lambda = 1.0;
        let d = 4.0;
        let sigma = d / 16.0;
        let n = 512;
        let half = d;
        let dxg = 2.0 * half / n as f64;
        let state =
            GridState::two_packet_cat(n, -half, dxg, (-d / 2.0, d / 2.0), sigma, &c).unwrap();
        let gamma = lambda * d * d;
        // heavy mass freezes the kinetic term
        let mass = 1e6;
        let dt = 5e-3 / gamma;
        let params = CollapseModelParams { lambda, mass, seed: 11, dt };
        let opts = GridEvolveOptions {
            realizations: 768,
            record_stride: 20,
            coherence_probes: Some((-d / 2.0, d / 2.0)),
            recenter: false,
        };
        let stats = evolve_grid_stochastic(&params, &state, 1.2 / gamma, &opts, &c).unwrap();
        let (rate, _) = fit_exponential_decay(&stats.times, &stats.coherence, 0.35);
        assert_relative_eq!(rate, gamma, max_relative = 0.05);
        assert!(stats.max_norm_deviation < 1e-9);
    }

    #[test]
    fn cat_collapses_to_single_packet_with_even_branches() {
        let c = unit_consts();
        let lambda = 1.0;
        let d = 4.0;
        let sigma = d / 16.0;
        let n = 512;
        let dxg = 2.0 * d / n as f64;
        let state =
            GridState::two_packet_cat(n, -d, dxg, (-d / 2.0, d / 2.0), sigma, &c).unwrap();
        let gamma = lambda * d * d;
        let params = CollapseModelParams { lambda, mass: 1e6, seed: 5, dt: 5e-3 / gamma };
        let opts = GridEvolveOptions {
            realizations: 200,
            record_stride: 1000,
            coherence_probes: Some((-d / 2.0, d / 2.0)),
            recenter: false,
        };
        let stats = evolve_grid_stochastic(&params, &state, 40.0 / gamma, &opts, &c).unwrap();
        let mut left = 0usize;
        for frac in &stats.left_fraction_final {
            let winner = frac.max(1.0 - frac);
            assert!(winner > 0.99, "a realization ended undecided: left fraction {frac}");
            if *frac > 0.5 {
                left += 1;
            }
        }
        // 50/50 within 3 sigma binomial
        let nreal = stats.left_fraction_final.len() as f64;
        let dev = (left as f64 - nreal / 2.0).abs();
        assert!(dev <= 3.0 * (nreal * 0.25).sqrt(), "branch asymmetry {left} of {nreal}");
    }

    #[test]
    fn ensemble_is_reproducible_for_fixed_seed() {
        let c = unit_consts();
        let n = 256;
        let state = GridState::gaussian_packet(n, -8.0, 16.0 / n as f64, 0.0, 1.0, 0.0, &c).unwrap();
        let params = CollapseModelParams { lambda: 0.5, mass: 1.0, seed: 42, dt: 2e-3 };
        let opts = GridEvolveOptions { realizations: 8, record_stride: 50, ..Default::default() };
        let a = evolve_grid_stochastic(&params, &state, 1.0, &opts, &c).unwrap();
        let b = evolve_grid_stochastic(&params, &state, 1.0, &opts, &c).unwrap();
        assert_eq!(a.mean_var_x, b.mean_var_x);
        assert_eq!(a.left_fraction_final, b.left_fraction_final);
    }

    #[test]
    fn under_resolved_grid_rejected() {
        let c = unit_consts();
        assert!(matches!(
            GridState::gaussian_packet(64, -8.0, 0.25, 0.0, 0.5, 0.0, &c),
            Err(Error::GridUnderResolved(_))
        ));
    }

    #[test]
    fn relaxation_rate_matches_linearization() {
        let c = unit_consts();
        // all three Jacobian eigenvalues at the fixed point share the real
        // part -2 sqrt(2); the real mode has eigenvector (1, sqrt(2), 4)
        let want = moment_relaxation_rate(1.0, 1.0, &c);
        assert_relative_eq!(want, 2.0 * std::f64::consts::SQRT_2, max_relative = 1e-12);
        let st = stationary_moments(1.0, 1.0, &c);
        let eps = 1e-3 * st.var_x;
        let perturbed = GaussianMoments {
            var_x: st.var_x + eps,
            cov: st.cov + std::f64::consts::SQRT_2 * eps,
            var_p: st.var_p + 4.0 * eps,
            ..st
        };
        let params = CollapseModelParams { lambda: 1.0, mass: 1.0, seed: 0, dt: 1e-4 };
        let traj = evolve_moments(&params, &perturbed, 2.0, &c).unwrap();
        let devs: Vec<f64> = traj.moments.iter().map(|m| (m.var_x - st.var_x).abs()).collect();
        let (rate, _) = fit_exponential_decay(&traj.times, &devs, eps * 1e-2);
        assert_relative_eq!(rate, want, max_relative = 0.02);
    }
}
