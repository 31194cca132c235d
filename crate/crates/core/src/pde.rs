//! Mean-field PDE on a uniform periodic grid.
//!
//! The density is stored as cell averages. The interaction potential enters
//! through two periodic convolution kernels built from the exact cell
//! averages of `W`, so that the interface drift is the exact difference
//! quotient of the cell potential. With that pairing the discrete free
//! energy decreases along the semi-discrete Scharfetter–Gummel flow and its
//! fixed points are exactly the discrete Kirkwood–Monroe fixed points.

use std::f64::consts::TAU;
use std::io::{Read, Write};
use std::str::FromStr;
use std::sync::Arc;

use realfft::num_complex::Complex;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use libm::erfc;

use crate::cluster::ClusterConfiguration;
use crate::error::{Error, Result};
use crate::potentials::PotentialSpec;
use crate::torus;

/// Probability density on the torus as `M` cell averages.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    values: Vec<f64>,
}

const MASS_CHECK: f64 = 1e-9;

impl DensityField {
    pub fn uniform(m_cells: usize) -> Self {
        Self { values: vec![1.0; m_cells] }
    }

    /// Validates nonnegativity and unit mass (within `1e-9`), then renormalizes exactly.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        Self::check(&values)?;
        Ok(Self::normalized_unchecked(values))
    }

    fn check(values: &[f64]) -> Result<()> {
        if values.is_empty() {
            return Err(Error::InvalidDensity("empty density".into()));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidDensity(format!("cell value {v} is negative or not finite")));
        }
        let h = 1.0 / values.len() as f64;
        let mass: f64 = h * values.iter().sum::<f64>();
        if (mass - 1.0).abs() > MASS_CHECK {
            return Err(Error::InvalidDensity(format!("mass {mass} differs from 1")));
        }
        Ok(())
    }

    /// Rescales arbitrary nonnegative weights to unit mass.
    pub fn normalized(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidDensity("weights must be finite and nonnegative".into()));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(Error::InvalidDensity("all weights vanish".into()));
        }
        Ok(Self::normalized_unchecked(values))
    }

    fn normalized_unchecked(mut values: Vec<f64>) -> Self {
        let h = 1.0 / values.len() as f64;
        let mass: f64 = h * values.iter().sum::<f64>();
        values.iter_mut().for_each(|v| *v /= mass);
        Self { values }
    }

    /// Normalized indicator of the arc `[a, b]` (`0 <= a < b <= 1`), as exact cell averages.
    pub fn indicator(a: f64, b: f64, m_cells: usize) -> Result<Self> {
        if !(0.0 <= a && a < b && b <= 1.0) {
            return Err(Error::InvalidParameter(format!("need 0 <= a < b <= 1, got [{a}, {b}]")));
        }
        let h = 1.0 / m_cells as f64;
        let values = (0..m_cells)
            .map(|i| {
                let lo = (i as f64 * h).max(a);
                let hi = ((i + 1) as f64 * h).min(b);
                (hi - lo).max(0.0) / h
            })
            .collect();
        Self::normalized(values)
    }

    /// Samples `f` at cell centers and renormalizes.
    pub fn from_fn(m_cells: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let h = 1.0 / m_cells as f64;
        Self::normalized((0..m_cells).map(|i| f((i as f64 + 0.5) * h)).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn m_cells(&self) -> usize {
        self.values.len()
    }

    pub fn h(&self) -> f64 {
        1.0 / self.values.len() as f64
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h()
    }

    pub fn mass(&self) -> f64 {
        self.h() * self.values.iter().sum::<f64>()
    }

    /// `h * sum |rho_i - sigma_i|`.
    pub fn l1_distance(&self, other: &DensityField) -> f64 {
        assert_eq!(self.m_cells(), other.m_cells());
        self.h() * self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    /// `|h * sum rho_i exp(-2 pi i n x_i)|` at cell centers.
    pub fn fourier_amplitude(&self, n: usize) -> f64 {
        let h = self.h();
        let k = TAU * n as f64;
        let (mut re, mut im) = (0.0, 0.0);
        for (i, v) in self.values.iter().enumerate() {
            let x = (i as f64 + 0.5) * h;
            re += v * (k * x).cos();
            im -= v * (k * x).sin();
        }
        h * re.hypot(im)
    }

    /// Cyclic shift by `s` cells: `out[i] = rho[i - s]`.
    pub fn shifted(&self, s: isize) -> DensityField {
        let m = self.m_cells() as isize;
        let values = (0..m).map(|i| self.values[(i - s).rem_euclid(m) as usize]).collect();
        Self { values }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ConvolutionMethod {
    Direct,
    #[default]
    Fft,
}

impl FromStr for ConvolutionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(Self::Direct),
            "fft" => Ok(Self::Fft),
            other => Err(Error::InvalidParameter(format!("unknown convolution method '{other}'"))),
        }
    }
}

/// Discrete interaction operator for a fixed spec and grid.
///
/// `cell[n]` is the average of `W` over the cell centred at `n h`; the cell
/// potential is `V_i = h sum_j cell[i - j] rho_j` and the interface drift
/// `dV_{i+1/2} = h sum_j iface[i - j] rho_j` with `iface[n] = (cell[n+1] - cell[n]) / h`.
#[derive(Clone)]
pub struct InteractionKernel {
    spec: PotentialSpec,
    m: usize,
    method: ConvolutionMethod,
    cell: Vec<f64>,
    iface: Vec<f64>,
    /// Offsets `n` in `-reach..=reach` carry every nonzero kernel entry.
    reach: usize,
    fft: Option<FftParts>,
}

#[derive(Clone)]
struct FftParts {
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
    cell_hat: Vec<Complex<f64>>,
    iface_hat: Vec<Complex<f64>>,
}

impl InteractionKernel {
    pub fn new(spec: &PotentialSpec, m_cells: usize, method: ConvolutionMethod) -> Result<Self> {
        if m_cells < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 cells, got {m_cells}")));
        }
        let m = m_cells;
        let h = 1.0 / m as f64;
        let cell: Vec<f64> = (0..m)
            .map(|n| {
                let c = n as f64 * h;
                spec.integral(c - 0.5 * h, c + 0.5 * h) / h
            })
            .collect();
        let iface: Vec<f64> = (0..m).map(|n| (cell[(n + 1) % m] - cell[n]) / h).collect();
        let reach = ((spec.interaction_radius() / h).ceil() as usize + 2).min(m / 2);
        let fft = match method {
            ConvolutionMethod::Direct => None,
            ConvolutionMethod::Fft => {
                let mut planner = RealFftPlanner::new();
                let forward = planner.plan_fft_forward(m);
                let inverse = planner.plan_fft_inverse(m);
                let transform = |k: &[f64]| {
                    let mut input = k.to_vec();
                    let mut out = forward.make_output_vec();
                    forward.process(&mut input, &mut out).expect("buffer sizes match the plan");
                    out
                };
                let cell_hat = transform(&cell);
                let iface_hat = transform(&iface);
                Some(FftParts { forward: forward.clone(), inverse, cell_hat, iface_hat })
            }
        };
        Ok(Self { spec: spec.clone(), m, method, cell, iface, reach, fft })
    }

    pub fn spec(&self) -> &PotentialSpec {
        &self.spec
    }

    pub fn m_cells(&self) -> usize {
        self.m
    }

    pub fn method(&self) -> ConvolutionMethod {
        self.method
    }

    /// Cell-averaged kernel, indexed by offset modulo `M`.
    pub fn cell_kernel(&self) -> &[f64] {
        &self.cell
    }

    /// Cell potential `V` and interface drift `dV` (entry `i` sits at `x_{i+1/2}`).
    pub fn convolve(&self, rho: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(rho.len(), self.m, "density and kernel grids differ");
        match &self.fft {
            Some(parts) => self.convolve_fft(parts, rho),
            None => (self.direct(&self.cell, rho), self.direct(&self.iface, rho)),
        }
    }

    /// Interface drift only.
    pub fn drift(&self, rho: &[f64]) -> Vec<f64> {
        assert_eq!(rho.len(), self.m, "density and kernel grids differ");
        match &self.fft {
            Some(parts) => {
                let rho_hat = self.forward(parts, rho);
                self.apply(parts, &rho_hat, &parts.iface_hat)
            }
            None => self.direct(&self.iface, rho),
        }
    }

    /// Cell potential only.
    pub fn potential(&self, rho: &[f64]) -> Vec<f64> {
        match &self.fft {
            Some(parts) => {
                let rho_hat = self.forward(parts, rho);
                self.apply(parts, &rho_hat, &parts.cell_hat)
            }
            None => self.direct(&self.cell, rho),
        }
    }

    fn direct(&self, kernel: &[f64], rho: &[f64]) -> Vec<f64> {
        let m = self.m;
        let h = 1.0 / m as f64;
        let reach = self.reach;
        // With reach == M/2 and M even the offset M/2 would be visited twice.
        let upper = if 2 * reach >= m { m - 1 - reach } else { reach };
        // Nonzero taps as (offset mod M, weight).
        let taps: Vec<(usize, f64)> = (0..=upper)
            .map(|n| (n, kernel[n]))
            .chain((1..=reach).map(|n| (m - n, kernel[m - n])))
            .filter(|&(_, k)| k != 0.0)
            .collect();
        (0..m)
            .map(|i| {
                let acc: f64 = taps
                    .iter()
                    .map(|&(n, k)| {
                        let j = if i >= n { i - n } else { i + m - n };
                        k * rho[j]
                    })
                    .sum();
                h * acc
            })
            .collect()
    }

    fn forward(&self, parts: &FftParts, rho: &[f64]) -> Vec<Complex<f64>> {
        let mut input = rho.to_vec();
        let mut out = parts.forward.make_output_vec();
        parts.forward.process(&mut input, &mut out).expect("buffer sizes match the plan");
        out
    }

    fn apply(&self, parts: &FftParts, rho_hat: &[Complex<f64>], kernel_hat: &[Complex<f64>]) -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = rho_hat.iter().zip(kernel_hat).map(|(a, b)| a * b).collect();
        // The zero and Nyquist bins of a real signal's product are real up to roundoff.
        buf[0].im = 0.0;
        if self.m.is_multiple_of(2) {
            buf[self.m / 2].im = 0.0;
        }
        let mut out = parts.inverse.make_output_vec();
        parts.inverse.process(&mut buf, &mut out).expect("buffer sizes match the plan");
        let scale = 1.0 / (self.m as f64 * self.m as f64);
        out.iter().map(|v| v * scale).collect()
    }

    fn convolve_fft(&self, parts: &FftParts, rho: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let rho_hat = self.forward(parts, rho);
        (self.apply(parts, &rho_hat, &parts.cell_hat), self.apply(parts, &rho_hat, &parts.iface_hat))
    }
}

/// One-shot convolution: `(V, dV)` for `rho` under `spec`.
pub fn convolve_kernel(rho: &DensityField, spec: &PotentialSpec, method: ConvolutionMethod) -> Result<(Vec<f64>, Vec<f64>)> {
    Ok(InteractionKernel::new(spec, rho.m_cells(), method)?.convolve(rho.values()))
}

/// Bernoulli function `x / (e^x - 1)`.
#[inline]
pub fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-5 {
        1.0 - 0.5 * x + x * x / 12.0
    } else if x.abs() < 0.05 {
        // Taylor series through x^8; the remainder is below 1e-20.
        let y = x * x;
        1.0 - 0.5 * x + y * (1.0 / 12.0 + y * (-1.0 / 720.0 + y * (1.0 / 30240.0 - y / 1209600.0)))
    } else {
        x / x.exp_m1()
    }
}

/// Largest admissible step for interface velocities bounded by `v_max`.
pub fn cfl_bound(h: f64, v_max: f64) -> f64 {
    0.45 * h * h / (1.0 + h * v_max)
}

/// Time step that satisfies the CFL bound for every density, using `|dV| <= max |W'|`.
pub fn safe_dt(spec: &PotentialSpec, m_cells: usize) -> f64 {
    let h = 1.0 / m_cells as f64;
    let n = 2000;
    let r = spec.interaction_radius();
    let w_prime_max = (0..=n)
        .map(|i| spec.derivative(r * i as f64 / n as f64).abs())
        .fold(0.0, f64::max);
    // The sampled maximum of a piecewise-linear derivative is attained on the grid up to 1/n.
    cfl_bound(h, w_prime_max * (1.0 + 2.0 / n as f64))
}

/// One explicit Scharfetter–Gummel step with the velocity frozen at the start.
pub fn sg_step(rho: &DensityField, kernel: &InteractionKernel, dt: f64) -> Result<DensityField> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let (_, dv) = kernel.convolve(rho.values());
    Ok(DensityField { values: sg_update(rho.values(), &dv, dt)? })
}

fn sg_update(rho: &[f64], dv: &[f64], dt: f64) -> Result<Vec<f64>> {
    let m = rho.len();
    let h = 1.0 / m as f64;
    let v_max = dv.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let bound = cfl_bound(h, v_max);
    if dt > bound {
        return Err(Error::CflViolation { dt, bound });
    }
    let c = dt / h;
    let flux = |i: usize, next: f64| {
        let q = -h * dv[i];
        // B(-q) = B(q) + q saves one exponential.
        let b = bernoulli(q);
        ((b + q) * rho[i] - b * next) / h
    };
    let last = flux(m - 1, rho[0]);
    let mut out = Vec::with_capacity(m);
    let mut left = last;
    for i in 0..m {
        let right = if i + 1 < m { flux(i, rho[i + 1]) } else { last };
        // Exact arithmetic keeps this nonnegative under the CFL bound; clip roundoff.
        out.push((rho[i] - c * (right - left)).max(0.0));
        left = right;
    }
    Ok(out)
}

/// Free energy split into entropy and interaction parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FreeEnergy {
    pub total: f64,
    pub entropy: f64,
    pub interaction: f64,
}

pub fn free_energy(rho: &DensityField, kernel: &InteractionKernel) -> FreeEnergy {
    let v = kernel.potential(rho.values());
    free_energy_with_potential(rho, &v)
}

fn free_energy_with_potential(rho: &DensityField, v: &[f64]) -> FreeEnergy {
    let h = rho.h();
    let entropy = h * rho.values().iter().map(|&r| if r > 0.0 { r * r.ln() } else { 0.0 }).sum::<f64>();
    let interaction = 0.5 * h * rho.values().iter().zip(v).map(|(r, v)| r * v).sum::<f64>();
    FreeEnergy { total: entropy + interaction, entropy, interaction }
}

#[derive(Clone, Debug)]
pub struct PdeRunConfig {
    pub spec: PotentialSpec,
    pub m_cells: usize,
    /// Fixed step; `None` adapts every step to the CFL bound of the current velocities.
    pub dt: Option<f64>,
    pub t_start: f64,
    pub t_end: f64,
    /// Time between snapshots; the steady-state test runs at the same cadence.
    pub output_interval: f64,
    pub method: ConvolutionMethod,
    /// Stop once `||rho(t) - rho(t - output_interval)||_1 / output_interval` drops below this.
    pub steady_tol: Option<f64>,
}

impl PdeRunConfig {
    pub fn new(spec: PotentialSpec, m_cells: usize, t_end: f64) -> Self {
        Self {
            spec,
            m_cells,
            dt: None,
            t_start: 0.0,
            t_end,
            output_interval: t_end / 100.0,
            method: ConvolutionMethod::Fft,
            steady_tol: Some(1e-10),
        }
    }

    /// Grid resolution is below a quarter of the interaction radius.
    pub fn resolves_kernel(&self) -> bool {
        1.0 / (self.m_cells as f64) < self.spec.interaction_radius() / 4.0
    }
}

#[derive(Clone, Debug)]
pub struct PdeSnapshot {
    pub t: f64,
    pub rho: DensityField,
    pub energy: FreeEnergy,
}

#[derive(Clone, Debug)]
pub struct PdeRun {
    pub snapshots: Vec<PdeSnapshot>,
    pub steps: u64,
    pub dt: f64,
    pub reached_steady_state: bool,
}

impl PdeRun {
    pub fn last(&self) -> &PdeSnapshot {
        self.snapshots.last().expect("a run holds at least the initial snapshot")
    }
}

/// Runs the scheme and keeps every snapshot.
pub fn run_pde(rho0: &DensityField, config: &PdeRunConfig) -> Result<PdeRun> {
    let mut snapshots = Vec::new();
    let (steps, dt, steady) = run_pde_with(rho0, config, |s| {
        snapshots.push(s.clone());
        true
    })?;
    Ok(PdeRun { snapshots, steps, dt, reached_steady_state: steady })
}

/// Runs the scheme, handing each snapshot to `observer`; returning `false` stops the run.
///
/// Returns `(steps, dt, reached_steady_state)`, where `dt` is the smallest step taken.
pub fn run_pde_with(
    rho0: &DensityField,
    config: &PdeRunConfig,
    observer: impl FnMut(&PdeSnapshot) -> bool,
) -> Result<(u64, f64, bool)> {
    run_pde_resume(rho0, 0, config, observer)
}

/// Continues a run whose first `completed_outputs` output intervals are done; `rho` is the
/// state at the end of the last of them. Output times, and therefore the whole trajectory,
/// coincide bit for bit with an uninterrupted run. The initial snapshot is reported again.
pub fn run_pde_resume(
    rho: &DensityField,
    completed_outputs: u64,
    config: &PdeRunConfig,
    observer: impl FnMut(&PdeSnapshot) -> bool,
) -> Result<(u64, f64, bool)> {
    run_pde_stepwise(rho, completed_outputs, config, |_, _, _| {}, observer)
}

/// [`run_pde_resume`] that also calls `on_step(kernel, rho, dt)` after every time step.
pub fn run_pde_stepwise(
    rho: &DensityField,
    completed_outputs: u64,
    config: &PdeRunConfig,
    mut on_step: impl FnMut(&InteractionKernel, &DensityField, f64),
    mut observer: impl FnMut(&PdeSnapshot) -> bool,
) -> Result<(u64, f64, bool)> {
    if rho.m_cells() != config.m_cells {
        return Err(Error::InvalidParameter(format!(
            "initial density has {} cells, config expects {}",
            rho.m_cells(),
            config.m_cells
        )));
    }
    if !(config.t_end >= config.t_start && config.output_interval > 0.0) {
        return Err(Error::InvalidParameter("need t_end >= t_start and output_interval > 0".into()));
    }
    if let Some(dt) = config.dt {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
    }
    let kernel = InteractionKernel::new(&config.spec, config.m_cells, config.method)?;
    let h = 1.0 / config.m_cells as f64;
    let output_time = |k: u64| (config.t_start + k as f64 * config.output_interval).min(config.t_end);

    let mut rho = rho.clone();
    let mut t = output_time(completed_outputs);
    let mut steps = 0u64;
    let mut dt_min = f64::INFINITY;
    let snapshot = |t: f64, rho: &DensityField| PdeSnapshot { t, rho: rho.clone(), energy: free_energy(rho, &kernel) };
    if !observer(&snapshot(t, &rho)) {
        return Ok((0, dt_min, false));
    }
    let span = config.t_end - config.t_start;
    let n_outputs = (span / config.output_interval - 1e-9).ceil().max(0.0) as u64;
    for chunk in completed_outputs..n_outputs {
        let chunk_end = output_time(chunk + 1);
        let before = rho.clone();
        match config.dt {
            Some(dt) => {
                let n_steps = (((chunk_end - t) / dt) - 1e-9).ceil().max(1.0) as u64;
                let dt_chunk = (chunk_end - t) / n_steps as f64;
                for _ in 0..n_steps {
                    let dv = kernel.drift(rho.values());
                    rho = DensityField { values: sg_update(rho.values(), &dv, dt_chunk)? };
                    on_step(&kernel, &rho, dt_chunk);
                }
                steps += n_steps;
                dt_min = dt_min.min(dt_chunk);
            }
            None => {
                // Each step uses the CFL bound of the current velocity field.
                let mut now = t;
                while now < chunk_end {
                    let dv = kernel.drift(rho.values());
                    let v_max = dv.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                    let bound = cfl_bound(h, v_max);
                    let left = chunk_end - now;
                    let dt = if left <= bound { left } else { left / (left / bound).ceil() };
                    rho = DensityField { values: sg_update(rho.values(), &dv, dt)? };
                    on_step(&kernel, &rho, dt);
                    now = if dt == left { chunk_end } else { now + dt };
                    steps += 1;
                    dt_min = dt_min.min(dt);
                }
            }
        }
        let elapsed = chunk_end - t;
        t = chunk_end;
        if !observer(&snapshot(t, &rho)) {
            return Ok((steps, dt_min, false));
        }
        if let Some(tol) = config.steady_tol {
            if rho.l1_distance(&before) / elapsed < tol {
                return Ok((steps, dt_min, true));
            }
        }
    }
    Ok((steps, dt_min, false))
}

/// Periodized Gaussian mixture with variances `ell / (gamma w''(0) m_k)`, as cell averages.
pub fn gaussian_mixture_init(clusters: &ClusterConfiguration, spec: &PotentialSpec, m_cells: usize) -> Result<DensityField> {
    if !(spec.gamma > 0.0) {
        return Err(Error::InvalidParameter("cluster widths need gamma > 0".into()));
    }
    let sigmas: Vec<f64> = clusters
        .masses
        .iter()
        .map(|&m| (spec.ell / (spec.gamma * spec.wpp0() * m)).sqrt())
        .collect();
    gaussian_mixture_with_widths(&clusters.centers, &clusters.masses, &sigmas, m_cells)
}

/// Periodized Gaussian mixture with explicit standard deviations.
pub fn gaussian_mixture_with_widths(centers: &[f64], masses: &[f64], sigmas: &[f64], m_cells: usize) -> Result<DensityField> {
    if sigmas.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidParameter("Gaussian widths must be positive".into()));
    }
    let h = 1.0 / m_cells as f64;
    let mut values = vec![0.0; m_cells];
    for ((&c, &m), &s) in centers.iter().zip(masses).zip(sigmas) {
        let images = (8.0 * s).ceil() as i64 + 1;
        let scale = std::f64::consts::SQRT_2 * s;
        for (i, v) in values.iter_mut().enumerate() {
            let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
            for n in -images..=images {
                let shift = c + n as f64;
                *v += m * normal_interval((a - shift) / scale, (b - shift) / scale) / h;
            }
        }
    }
    DensityField::normalized(values)
}

/// `P(a < Z/sqrt2 < b)`-style interval mass, `0.5 (erf b - erf a)`, accurate in both tails.
fn normal_interval(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        0.5 * (erfc(a) - erfc(b))
    } else if b <= 0.0 {
        0.5 * (erfc(-b) - erfc(-a))
    } else {
        1.0 - 0.5 * (erfc(-a) + erfc(b))
    }
}

/// Region boundaries at the deepest point between well-separated peaks.
///
/// A local maximum counts as a peak when its value exceeds `1e-12 * max rho`
/// and it rises above the higher of its two flanking saddles by at least
/// `prominence` times its own height. Boundaries are the left edges of the
/// minimal cells between consecutive peaks; an empty result means one region.
pub fn density_boundaries(rho: &DensityField, prominence: f64) -> Vec<f64> {
    let v = rho.values();
    let m = v.len();
    let top = v.iter().cloned().fold(0.0, f64::max);
    let candidates: Vec<usize> = (0..m)
        .filter(|&i| {
            let (l, r) = (v[(i + m - 1) % m], v[(i + 1) % m]);
            v[i] > l && v[i] >= r && v[i] > 1e-12 * top
        })
        .collect();
    if candidates.len() < 2 {
        return Vec::new();
    }
    // Walk each direction until a higher point; the saddle is the minimum passed.
    let saddle = |i: usize, step: isize| -> f64 {
        let mut low = v[i];
        let mut j = i as isize;
        for _ in 0..m {
            j = (j + step).rem_euclid(m as isize);
            let x = v[j as usize];
            if x > v[i] {
                return low;
            }
            low = low.min(x);
        }
        0.0
    };
    let peaks: Vec<usize> = candidates
        .into_iter()
        .filter(|&i| {
            let floor = saddle(i, -1).max(saddle(i, 1));
            v[i] - floor >= prominence * v[i]
        })
        .collect();
    if peaks.len() < 2 {
        return Vec::new();
    }
    let h = rho.h();
    (0..peaks.len())
        .map(|k| {
            let (a, b) = (peaks[k], peaks[(k + 1) % peaks.len()]);
            let len = (b + m - a) % m;
            let arg = (1..len).map(|d| (a + d) % m).min_by(|&x, &y| v[x].total_cmp(&v[y])).unwrap_or(a);
            arg as f64 * h
        })
        .collect()
}

/// Default relative prominence for [`density_boundaries`].
pub const DEFAULT_PROMINENCE: f64 = 0.5;

/// Per-region `(center, mass)`, regions cut at `boundaries` or at density minima.
///
/// A cell belongs to the region whose left boundary precedes its center.
/// Regions are sorted by center.
pub fn cluster_masses_from_density(rho: &DensityField, boundaries: Option<&[f64]>) -> Vec<(f64, f64)> {
    let owned;
    let mut cuts: Vec<f64> = match boundaries {
        Some(b) => b.iter().map(|&x| torus::wrap(x)).collect(),
        None => {
            owned = density_boundaries(rho, DEFAULT_PROMINENCE);
            owned
        }
    };
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let h = rho.h();
    let v = rho.values();
    let whole = |cells: &mut dyn Iterator<Item = usize>| -> (f64, f64) {
        let pts: Vec<(f64, f64)> = cells.map(|i| ((i as f64 + 0.5) * h, v[i])).collect();
        let mass = h * pts.iter().map(|p| p.1).sum::<f64>();
        let center = torus::circular_mean(pts.iter().copied()).unwrap_or_else(|| {
            pts.iter().max_by(|a, b| a.1.total_cmp(&b.1)).map(|p| p.0).unwrap_or(0.0)
        });
        (center, mass)
    };
    if cuts.len() < 2 {
        return vec![whole(&mut (0..v.len()))];
    }
    let region_of = |x: f64| -> usize {
        // Index of the last cut <= x, cyclically.
        match cuts.iter().rposition(|&c| c <= x) {
            Some(k) => k,
            None => cuts.len() - 1,
        }
    };
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cuts.len()];
    for i in 0..v.len() {
        members[region_of((i as f64 + 0.5) * h)].push(i);
    }
    let mut out: Vec<(f64, f64)> = members.into_iter().map(|cells| whole(&mut cells.into_iter())).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Writes `(t, cell_index, rho)` rows (no header).
pub fn write_snapshot_csv<W: Write>(out: &mut W, t: f64, rho: &DensityField) -> std::io::Result<()> {
    for (i, v) in rho.values().iter().enumerate() {
        writeln!(out, "{t},{i},{v}")?;
    }
    Ok(())
}

/// Writes a `(t, F, entropy_part, interaction_part)` row (no header).
pub fn write_energy_csv<W: Write>(out: &mut W, t: f64, e: &FreeEnergy) -> std::io::Result<()> {
    writeln!(out, "{t},{},{},{}", e.total, e.entropy, e.interaction)
}

const MAGIC: &[u8; 4] = b"MVPD";

/// Binary snapshot: magic, `u64` M, `f64` dt, `f64` t, then M `f64`, all little-endian.
pub fn write_binary<W: Write>(out: &mut W, rho: &DensityField, dt: f64, t: f64) -> std::io::Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&(rho.m_cells() as u64).to_le_bytes())?;
    out.write_all(&dt.to_le_bytes())?;
    out.write_all(&t.to_le_bytes())?;
    for v in rho.values() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads a block written by [`write_binary`]; returns `(rho, dt, t)`.
pub fn read_binary<R: Read>(input: &mut R) -> Result<(DensityField, f64, f64)> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::InvalidDensity("not an MVPD block".into()));
    }
    let mut word = [0u8; 8];
    input.read_exact(&mut word)?;
    let m = u64::from_le_bytes(word) as usize;
    input.read_exact(&mut word)?;
    let dt = f64::from_le_bytes(word);
    input.read_exact(&mut word)?;
    let t = f64::from_le_bytes(word);
    let mut values = Vec::with_capacity(m);
    for _ in 0..m {
        input.read_exact(&mut word)?;
        values.push(f64::from_le_bytes(word));
    }
    // Stored values are restored bit for bit; renormalizing would perturb a resumed run.
    DensityField::check(&values)?;
    Ok((DensityField { values }, dt, t))
}
