//! Stationary states as fixed points of the Kirkwood–Monroe map
//! `rho -> exp(-W * rho) / Z`, their continuation in `gamma`, and related
//! diagnostics.

use std::f64::consts::TAU;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::cluster::ClusterConfiguration;
use crate::error::{Error, Result};
use crate::pde::{self, ConvolutionMethod, DensityField, InteractionKernel};
use crate::potentials::PotentialSpec;

#[derive(Clone, Debug)]
pub struct StationaryState {
    pub rho: DensityField,
    /// `max_i |rho_i - KM(rho)_i|`.
    pub residual: f64,
    pub free_energy: f64,
    pub spec: PotentialSpec,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SolverMethod {
    /// Damped iteration `rho <- (1 - theta) rho + theta KM(rho)`.
    Picard { damping: f64 },
    Newton,
}

#[derive(Clone, Copy, Debug)]
pub struct SolverOptions {
    pub tol: f64,
    /// Defaults to `1e5` for Picard and `100` for Newton.
    pub max_iterations: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-11, max_iterations: None }
    }
}

fn km_values(rho: &[f64], kernel: &InteractionKernel) -> Vec<f64> {
    let v = kernel.potential(rho);
    let v_min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut q: Vec<f64> = v.iter().map(|x| (v_min - x).exp()).collect();
    let h = 1.0 / rho.len() as f64;
    let z = h * q.iter().sum::<f64>();
    q.iter_mut().for_each(|x| *x /= z);
    q
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// `exp(-V) / Z` with `V` the discrete convolution of `rho` with `W`.
pub fn km_map(rho: &DensityField, kernel: &InteractionKernel) -> DensityField {
    DensityField::normalized(km_values(rho.values(), kernel)).expect("exponentials are positive")
}

pub fn km_residual(rho: &DensityField, kernel: &InteractionKernel) -> f64 {
    max_abs_diff(rho.values(), &km_values(rho.values(), kernel))
}

fn kernel_for(spec: &PotentialSpec, m: usize) -> Result<InteractionKernel> {
    InteractionKernel::new(spec, m, ConvolutionMethod::Fft)
}

pub fn solve_fixed_point(
    rho0: &DensityField,
    spec: &PotentialSpec,
    method: SolverMethod,
    options: SolverOptions,
) -> Result<StationaryState> {
    let kernel = kernel_for(spec, rho0.m_cells())?;
    solve_with_kernel(rho0, &kernel, method, options)
}

pub fn solve_with_kernel(
    rho0: &DensityField,
    kernel: &InteractionKernel,
    method: SolverMethod,
    options: SolverOptions,
) -> Result<StationaryState> {
    let (rho, residual, iterations) = match method {
        SolverMethod::Picard { damping } => {
            if !(damping > 0.0 && damping <= 1.0) {
                return Err(Error::InvalidParameter(format!("damping must lie in (0, 1], got {damping}")));
            }
            picard(rho0.values().to_vec(), kernel, damping, options.tol, options.max_iterations.unwrap_or(100_000))?
        }
        SolverMethod::Newton => newton(rho0.values().to_vec(), kernel, options.tol, options.max_iterations.unwrap_or(100))?,
    };
    // Report the map image: strictly positive and equal to rho up to the residual.
    let rho = DensityField::normalized(if iterations == 0 { rho } else { km_values(&rho, kernel) })?;
    let free_energy = pde::free_energy(&rho, kernel).total;
    Ok(StationaryState { residual: residual.max(km_residual(&rho, kernel)), rho, free_energy, spec: kernel.spec().clone(), iterations })
}

fn picard(mut rho: Vec<f64>, kernel: &InteractionKernel, theta: f64, tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64, usize)> {
    let mut best = f64::INFINITY;
    for it in 0..=max_iter {
        let q = km_values(&rho, kernel);
        let res = max_abs_diff(&rho, &q);
        best = best.min(res);
        if res < tol {
            return Ok((rho, res, it));
        }
        if !res.is_finite() {
            break;
        }
        rho.iter_mut().zip(&q).for_each(|(r, q)| *r = (1.0 - theta) * *r + theta * q);
    }
    Err(Error::NoConvergence { iterations: max_iter, best_residual: best })
}

/// Jacobian of the map at `rho` (`q = KM(rho)`):
/// `D_ij = -h q_i K_{i-j} + h^2 q_i sum_k q_k K_{k-j}`.
fn km_jacobian(q: &[f64], kernel: &InteractionKernel) -> DMatrix<f64> {
    let m = q.len();
    let h = 1.0 / m as f64;
    let k = kernel.cell_kernel();
    let s: Vec<f64> = (0..m).map(|j| (0..m).map(|l| q[l] * k[(l + m - j) % m]).sum()).collect();
    DMatrix::from_fn(m, m, |i, j| q[i] * h * (-k[(i + m - j) % m] + h * s[j]))
}

fn newton(mut rho: Vec<f64>, kernel: &InteractionKernel, tol: f64, max_iter: usize) -> Result<(Vec<f64>, f64, usize)> {
    let m = rho.len();
    let mut q = km_values(&rho, kernel);
    let mut res = max_abs_diff(&rho, &q);
    let mut best = res;
    for it in 0..max_iter {
        if res < tol {
            return Ok((rho, res, it));
        }
        let g: Vec<f64> = rho.iter().zip(&q).map(|(r, q)| r - q).collect();
        let d = km_jacobian(&q, kernel);
        let mut delta = newton_direction(&rho, &d, &g).ok_or(Error::NoConvergence { iterations: it, best_residual: best })?;
        let mean = delta.iter().sum::<f64>() / m as f64;
        delta.iter_mut().for_each(|x| *x -= mean);

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..6 {
            let trial: Vec<f64> = rho.iter().zip(&delta).map(|(r, d)| r + step * d).collect();
            let tq = km_values(&trial, kernel);
            let tres = max_abs_diff(&trial, &tq);
            if tres < res {
                rho = trial;
                q = tq;
                res = tres;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // Damped map iterations to get back into the basin.
            for _ in 0..50 {
                rho.iter_mut().zip(&q).for_each(|(r, q)| *r = 0.5 * *r + 0.5 * q);
                q = km_values(&rho, kernel);
            }
            res = max_abs_diff(&rho, &q);
        }
        best = best.min(res);
    }
    if res < tol {
        return Ok((rho, res, max_iter));
    }
    Err(Error::NoConvergence { iterations: max_iter, best_residual: best })
}

/// Solves `(I - D) delta = -g`. For non-flat states the near-null translation
/// direction `t = rho'` is removed by the bordered system `[J t; t^T 0]`.
fn newton_direction(rho: &[f64], d: &DMatrix<f64>, g: &[f64]) -> Option<Vec<f64>> {
    let m = rho.len();
    let mean = rho.iter().sum::<f64>() / m as f64;
    let spread = rho.iter().map(|r| (r - mean).abs()).fold(0.0, f64::max);
    let rhs_inner = |i: usize| -g[i];
    if spread < 1e-6 {
        let j = DMatrix::identity(m, m) - d;
        let sol = j.lu().solve(&DVector::from_fn(m, |i, _| rhs_inner(i)))?;
        return Some(sol.iter().copied().collect());
    }
    let mut t: Vec<f64> = (0..m).map(|i| 0.5 * (rho[(i + 1) % m] - rho[(i + m - 1) % m])).collect();
    let norm = t.iter().map(|x| x * x).sum::<f64>().sqrt();
    t.iter_mut().for_each(|x| *x /= norm);
    let big = DMatrix::from_fn(m + 1, m + 1, |i, j| match (i < m, j < m) {
        (true, true) => f64::from(u8::from(i == j)) - d[(i, j)],
        (true, false) => t[i],
        (false, true) => t[j],
        (false, false) => 0.0,
    });
    let rhs = DVector::from_fn(m + 1, |i, _| if i < m { rhs_inner(i) } else { 0.0 });
    let sol = big.lu().solve(&rhs)?;
    Some(sol.iter().take(m).copied().collect())
}

#[derive(Clone, Debug)]
pub struct BranchPoint {
    pub gamma: f64,
    pub state: StationaryState,
    /// `F(rho_gamma) - F(uniform)`.
    pub gap: f64,
    pub l1_to_uniform: f64,
}

#[derive(Clone, Debug)]
pub struct BifurcationBranch {
    pub points: Vec<BranchPoint>,
    pub gamma_c: Option<f64>,
}

/// Distance below which a state counts as collapsed to uniform.
const COLLAPSE_L1: f64 = 1e-6;

fn branch_point(state: StationaryState) -> BranchPoint {
    let m = state.rho.m_cells();
    let uniform_energy = 0.5 * state.spec.integral(-0.5, 0.5);
    BranchPoint {
        gamma: state.spec.gamma,
        gap: state.free_energy - uniform_energy,
        l1_to_uniform: state.rho.l1_distance(&DensityField::uniform(m)),
        state,
    }
}

/// Warm-started Newton continuation along `gamma_grid` (strictly monotone).
///
/// The branch stops at the first failed solve or collapse to uniform. The
/// transition point is the first sign change of the free-energy gap, refined
/// by bisection in `gamma` to relative width `1e-4`.
pub fn continue_branch(spec: &PotentialSpec, gamma_grid: &[f64], rho0: &DensityField) -> Result<BifurcationBranch> {
    if gamma_grid.is_empty() {
        return Err(Error::EmptyBranch("empty gamma grid".into()));
    }
    let increasing = gamma_grid.windows(2).all(|w| w[1] > w[0]);
    let decreasing = gamma_grid.windows(2).all(|w| w[1] < w[0]);
    if !(increasing || decreasing) {
        return Err(Error::InvalidParameter("gamma grid must be strictly monotone".into()));
    }
    let solve = |gamma: f64, start: &DensityField| -> Result<StationaryState> {
        let s = spec.with_gamma(gamma)?;
        solve_fixed_point(start, &s, SolverMethod::Newton, SolverOptions::default())
    };
    let first = solve(gamma_grid[0], rho0).map_err(|e| Error::EmptyBranch(format!("first solve failed: {e}")))?;
    let first = branch_point(first);
    if first.l1_to_uniform < COLLAPSE_L1 {
        return Err(Error::EmptyBranch("the first state is uniform".into()));
    }
    let mut points = vec![first];
    for &gamma in &gamma_grid[1..] {
        let start = &points.last().expect("nonempty").state.rho;
        match solve(gamma, start) {
            Ok(state) => {
                let p = branch_point(state);
                if p.l1_to_uniform < COLLAPSE_L1 {
                    break;
                }
                points.push(p);
            }
            Err(_) => break,
        }
    }
    let mut gamma_c = None;
    if let Some(k) = points.windows(2).position(|w| w[0].gap.signum() != w[1].gap.signum()) {
        let (mut a, mut b) = (points[k].clone(), points[k + 1].clone());
        while (a.gamma - b.gamma).abs() > 1e-4 * a.gamma.abs().max(b.gamma.abs()) {
            let mid = 0.5 * (a.gamma + b.gamma);
            let p = match solve(mid, &a.state.rho) {
                Ok(state) => branch_point(state),
                Err(_) => break,
            };
            if p.l1_to_uniform < COLLAPSE_L1 {
                break;
            }
            if p.gap.signum() == a.gap.signum() {
                a = p;
            } else {
                b = p;
            }
        }
        // Linear interpolation of the gap inside the final bracket.
        let w = a.gap / (a.gap - b.gap);
        gamma_c = Some(a.gamma + w * (b.gamma - a.gamma));
    }
    Ok(BifurcationBranch { points, gamma_c })
}

/// Tiles a stationary state `k` times and pairs it with the spec `(k^2 gamma, ell / k)`.
///
/// On the `k`-fold grid the discrete potential of the tiled state is the
/// tiled potential, so the tiled state is again a discrete fixed point.
pub fn multi_cluster_scale(state: &StationaryState, k: usize) -> Result<StationaryState> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    if k == 1 {
        return Ok(state.clone());
    }
    let kf = k as f64;
    let spec = PotentialSpec::new(state.spec.family.clone(), kf * kf * state.spec.gamma, state.spec.ell / kf)?;
    let base = state.rho.values();
    let tiled: Vec<f64> = (0..base.len() * k).map(|i| base[i % base.len()]).collect();
    let rho = DensityField::normalized(tiled)?;
    let kernel = kernel_for(&spec, rho.m_cells())?;
    let residual = km_residual(&rho, &kernel);
    if residual > 1e-8 {
        return Err(Error::Residual { residual });
    }
    let free_energy = pde::free_energy(&rho, &kernel).total;
    Ok(StationaryState { rho, residual, free_energy, spec, iterations: 0 })
}

/// Outcome of [`symmetric_decreasing_check`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymmetryReport {
    pub is_single_cluster: bool,
    pub max_deviation: f64,
}

/// Compares `rho` with its symmetric decreasing rearrangement.
///
/// The rearrangement lays the sorted values alternately around one cell. The
/// state is first moved by a sub-cell amount (spectral interpolation) so
/// that the phase of its first Fourier mode points at a cell center; states
/// without a first mode are aligned at their argmax. The deviation is the
/// smallest sup-distance over both layout orientations and integer shifts
/// near the argmax.
pub fn symmetric_decreasing_check(rho: &DensityField) -> SymmetryReport {
    let m = rho.m_cells();
    let values = rho.values();
    let top = values.iter().cloned().fold(0.0, f64::max);
    let aligned = align_to_cell(values);
    let argmax = aligned
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut sorted = aligned.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut best = f64::INFINITY;
    for first_right in [true, false] {
        let mut layout = vec![0.0; m];
        for (r, v) in sorted.iter().enumerate() {
            let off = r.div_ceil(2) as isize;
            let sign = if (r % 2 == 1) == first_right { 1 } else { -1 };
            let pos = (argmax as isize + sign * off).rem_euclid(m as isize) as usize;
            layout[pos] = *v;
        }
        for shift in -2isize..=2 {
            let dev = (0..m)
                .map(|i| (aligned[i] - layout[(i as isize + shift).rem_euclid(m as isize) as usize]).abs())
                .fold(0.0, f64::max);
            best = best.min(dev);
        }
    }
    SymmetryReport { is_single_cluster: best < 1e-6 * top, max_deviation: best }
}

/// Spectral sub-cell translation putting the first-mode phase on a cell center.
fn align_to_cell(values: &[f64]) -> Vec<f64> {
    let m = values.len();
    let h = 1.0 / m as f64;
    let mut spectrum: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut spectrum);
    let first = spectrum.get(1).copied().unwrap_or_default();
    let scale = values.iter().map(|v| v.abs()).sum::<f64>();
    if first.norm() <= 1e-8 * scale || m < 4 {
        return values.to_vec();
    }
    // Cell j sits at j h; the first mode peaks at -arg / (2 pi).
    let center = (-first.arg() / TAU).rem_euclid(1.0);
    let target = (center / h).round() * h;
    let shift = target - center;
    for (n, c) in spectrum.iter_mut().enumerate() {
        let freq = if n <= m / 2 { n as f64 } else { n as f64 - m as f64 };
        if m.is_multiple_of(2) && n == m / 2 {
            *c *= (TAU * freq * shift).cos();
        } else {
            *c *= Complex::from_polar(1.0, -TAU * freq * shift);
        }
    }
    planner.plan_fft_inverse(m).process(&mut spectrum);
    spectrum.iter().map(|c| c.re / m as f64).collect()
}

/// Free energy of the two-cluster Gaussian mixture over a grid of masses and separations.
///
/// Entry `[a][b]` belongs to `m1_grid[a]`, `d_grid[b]`; the clusters sit at
/// `1/2 -+ d/2`, symmetric about the grid.
pub fn two_cluster_landscape(spec: &PotentialSpec, m1_grid: &[f64], d_grid: &[f64], m_cells: usize) -> Result<Vec<Vec<f64>>> {
    if m1_grid.iter().any(|m| !(*m > 0.0 && *m < 1.0)) || d_grid.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
        return Err(Error::InvalidParameter("need m1 and d in (0, 1)".into()));
    }
    let kernel = kernel_for(spec, m_cells)?;
    m1_grid
        .iter()
        .map(|&m1| {
            d_grid
                .iter()
                .map(|&d| {
                    let clusters = ClusterConfiguration::new(vec![0.5 - 0.5 * d, 0.5 + 0.5 * d], vec![m1, 1.0 - m1])?;
                    let rho = pde::gaussian_mixture_init(&clusters, spec, m_cells)?;
                    Ok(pde::free_energy(&rho, &kernel).total)
                })
                .collect()
        })
        .collect()
}

/// Smallest mass of a stable cluster, `gamma_c / gamma`.
pub fn critical_mass(spec: &PotentialSpec, gamma_c: f64) -> Result<f64> {
    if spec.gamma <= gamma_c {
        return Err(Error::Subcritical { gamma: spec.gamma, gamma_c });
    }
    Ok(gamma_c / spec.gamma)
}

/// Least-squares Gaussian fitted to `log rho` on cells above `rel_floor * max rho`.
#[derive(Clone, Copy, Debug)]
pub struct GaussianFit {
    pub center: f64,
    pub variance: f64,
    pub peak: f64,
}

pub fn gaussian_fit(rho: &DensityField, rel_floor: f64) -> Option<GaussianFit> {
    let v = rho.values();
    let m = v.len();
    let h = rho.h();
    let (imax, &top) = v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
    let mut a = nalgebra::Matrix3::<f64>::zeros();
    let mut b = nalgebra::Vector3::<f64>::zeros();
    let mut used = 0;
    for (i, &r) in v.iter().enumerate() {
        if r < rel_floor * top || r <= 0.0 {
            continue;
        }
        let off = ((i as isize - imax as isize + m as isize / 2).rem_euclid(m as isize) - m as isize / 2) as f64;
        let u = off * h;
        let basis = nalgebra::Vector3::new(1.0, u, u * u);
        a += basis * basis.transpose();
        b += basis * r.ln();
        used += 1;
    }
    if used < 3 {
        return None;
    }
    let c = a.lu().solve(&b)?;
    if !(c[2] < 0.0) {
        return None;
    }
    let variance = -1.0 / (2.0 * c[2]);
    let shift = c[1] * variance;
    Some(GaussianFit {
        center: ((imax as f64 + 0.5) * h + shift).rem_euclid(1.0),
        variance,
        peak: (c[0] + shift * shift / (2.0 * variance)).exp(),
    })
}

/// `(gamma, gap, l1_dist, residual, n_iter)` rows.
pub fn write_branch_csv<W: Write>(out: &mut W, branch: &BifurcationBranch) -> std::io::Result<()> {
    for p in &branch.points {
        writeln!(out, "{},{},{},{},{}", p.gamma, p.gap, p.l1_to_uniform, p.state.residual, p.state.iterations)?;
    }
    Ok(())
}

/// `(m1, d, F)` rows.
pub fn write_landscape_csv<W: Write>(out: &mut W, m1_grid: &[f64], d_grid: &[f64], values: &[Vec<f64>]) -> std::io::Result<()> {
    for (m1, row) in m1_grid.iter().zip(values) {
        for (d, f) in d_grid.iter().zip(row) {
            writeln!(out, "{m1},{d},{f}")?;
        }
    }
    Ok(())
}
