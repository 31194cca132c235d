//! Effective potential seen by a single particle, Eyring–Kramers exit times and their quadrature oracles.

use std::f64::consts::{E, PI, SQRT_2};

use libm::erfc;

use crate::cluster::ClusterConfiguration;
use crate::error::{Error, Result};
use crate::potentials::PotentialSpec;
use crate::quad::{self, QuadOptions};
use crate::torus::{d_dir, signed};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VeffMode {
    /// Sum of `m_k (W * g_k)` with Gaussian cluster profiles.
    Full,
    /// Parabola around the nearest cluster.
    Quadratic,
}

/// Variance `ell / (gamma w''(0) m)` of a cluster of mass `m`.
fn cluster_variance(m: f64, spec: &PotentialSpec) -> f64 {
    spec.ell / (spec.gamma * spec.wpp0() * m)
}

/// Upper standard normal tail.
fn upper_tail(z: f64) -> f64 {
    0.5 * erfc(z / SQRT_2)
}

/// `P(alpha < Z < beta)` without cancellation in either tail.
fn normal_mass(alpha: f64, beta: f64) -> f64 {
    if alpha >= 0.0 {
        upper_tail(alpha) - upper_tail(beta)
    } else if beta <= 0.0 {
        upper_tail(-beta) - upper_tail(-alpha)
    } else {
        1.0 - upper_tail(-alpha) - upper_tail(beta)
    }
}

fn normal_density(z: f64) -> f64 {
    if z.is_infinite() {
        0.0
    } else {
        (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
    }
}

/// `E[(c0 + c1 |U| / ell + c2 U^2 / ell^2) 1{p < U < q}]` for `U ~ N(nu, sigma^2)` and `0 <= p` or `q <= 0`.
fn piece_moment(nu: f64, sigma: f64, p: f64, q: f64, coeffs: (f64, f64, f64), ell: f64, negative: bool) -> f64 {
    let (alpha, beta) = ((p - nu) / sigma, (q - nu) / sigma);
    let m0 = normal_mass(alpha, beta);
    let (fa, fb) = (normal_density(alpha), normal_density(beta));
    let m1 = nu * m0 + sigma * (fa - fb);
    let m2 = nu * nu * m0 + 2.0 * nu * sigma * (fa - fb) + sigma * sigma * (m0 + alpha * fa - beta * fb);
    let abs1 = if negative { -m1 } else { m1 };
    coeffs.0 * m0 + coeffs.1 * abs1 / ell + coeffs.2 * m2 / (ell * ell)
}

/// `E[W(x - Y)]` for `Y ~ N(mu, sigma^2)` on the line (no periodization).
fn smoothed_w(x: f64, mu: f64, sigma: f64, spec: &PotentialSpec) -> f64 {
    let nu = x - mu;
    let ell = spec.ell;
    let mut acc = 0.0;
    for piece in spec.family.pieces() {
        let (lo, hi) = (piece.lo * ell, piece.hi.min(spec.s_w()) * ell);
        if hi <= lo {
            continue;
        }
        let c = (piece.c0, piece.c1, piece.c2);
        acc += piece_moment(nu, sigma, lo, hi, c, ell, false);
        acc += piece_moment(nu, sigma, -hi, -lo, c, ell, true);
    }
    spec.gamma * ell * acc
}

/// Images `X + n` whose Gaussian-smoothed support reaches `x`.
fn images(x: f64, center: f64, reach: f64) -> impl Iterator<Item = f64> {
    (-3..=3).map(move |n| center + n as f64).filter(move |&c| (x - c).abs() <= reach)
}

/// Effective potential at `x` created by the clusters of `config`.
pub fn v_eff(x: f64, config: &ClusterConfiguration, spec: &PotentialSpec, mode: VeffMode) -> f64 {
    if spec.gamma == 0.0 {
        return 0.0;
    }
    match mode {
        VeffMode::Full => config
            .centers
            .iter()
            .zip(&config.masses)
            .map(|(&c, &m)| {
                let sigma = cluster_variance(m, spec).sqrt();
                let reach = spec.interaction_radius() + 40.0 * sigma;
                m * images(x, c, reach).map(|ci| smoothed_w(x, ci, sigma, spec)).sum::<f64>()
            })
            .sum(),
        VeffMode::Quadratic => {
            let k = (0..config.len())
                .min_by(|&a, &b| signed(x - config.centers[a]).abs().total_cmp(&signed(x - config.centers[b]).abs()))
                .expect("nonempty configuration");
            let m = config.masses[k];
            let dx = signed(x - config.centers[k]);
            -spec.gamma * spec.ell * spec.delta() * m + dx * dx / (2.0 * cluster_variance(m, spec)) + 0.5
        }
    }
}

/// Full effective potential by direct adaptive quadrature of the convolution.
pub fn v_eff_quadrature(x: f64, config: &ClusterConfiguration, spec: &PotentialSpec) -> Result<f64> {
    if spec.gamma == 0.0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (&c, &m) in config.centers.iter().zip(&config.masses) {
        let sigma = cluster_variance(m, spec).sqrt();
        let r = spec.interaction_radius();
        for ci in images(x, c, r + 12.0 * sigma) {
            let (lo, hi) = (ci - 12.0 * sigma, ci + 12.0 * sigma);
            let mut breaks: Vec<f64> = vec![lo, hi, ci, x - r, x, x + r];
            breaks.retain(|&b| b >= lo && b <= hi);
            breaks.sort_by(f64::total_cmp);
            let mut f = |y: f64| {
                let z = (y - ci) / sigma;
                let u = x - y;
                let w = if u.abs() < r { spec.gamma * spec.ell * spec.family.eval(u / spec.ell) } else { 0.0 };
                w * normal_density(z) / sigma
            };
            total += m * quad::integrate_with_breaks(&mut f, &breaks, QuadOptions::with_tol(1e-13, 1e-11))?;
        }
    }
    Ok(total)
}

/// Directed gaps `(d_right, d_left)` of cluster `j`, checked against `2 s_w ell`.
fn gaps(j: usize, config: &ClusterConfiguration, spec: &PotentialSpec) -> Result<(f64, f64)> {
    if config.len() < 2 || j >= config.len() {
        return Err(Error::Geometry(format!("cluster {j} needs two neighbors in a configuration of {}", config.len())));
    }
    let x = config.centers[j];
    let dr = d_dir(x, config.centers[config.right(j)]);
    let dl = d_dir(config.centers[config.left(j)], x);
    let excl = 2.0 * spec.interaction_radius();
    if !(dr > excl && dl > excl) {
        return Err(Error::Geometry(format!("gaps ({dl}, {dr}) must exceed {excl}")));
    }
    Ok((dr, dl))
}

/// Eyring–Kramers mean exit time of one particle from cluster `j`.
pub fn mfpt_eyring_kramers(j: usize, config: &ClusterConfiguration, spec: &PotentialSpec) -> Result<f64> {
    let (dr, dl) = gaps(j, config, spec)?;
    let excl = 2.0 * spec.interaction_radius();
    let m = config.masses[j];
    // The well around X_j is excluded from both gaps, as in the exit probability.
    let geometric = (dr - excl) * (dl - excl) / (dr + dl - 2.0 * excl);
    let attempt = (2.0 * PI * spec.ell / (E * spec.gamma * spec.wpp0() * m)).sqrt();
    Ok(geometric * attempt * (spec.gamma * spec.ell * spec.delta() * m).exp())
}

/// Probability that a particle leaving cluster `j` exits through the left.
pub fn exit_probability(j: usize, config: &ClusterConfiguration, spec: &PotentialSpec) -> Result<f64> {
    let (dr, dl) = gaps(j, config, spec)?;
    let excl = 2.0 * spec.interaction_radius();
    Ok((dr - excl) / (dr + dl - 2.0 * excl))
}

/// Default oracle interval around `X_j`, two standard deviations inside the neighboring wells.
///
/// Returned in unwrapped coordinates, so `a < X_j < b`.
pub fn oracle_endpoints(j: usize, config: &ClusterConfiguration, spec: &PotentialSpec) -> Result<(f64, f64)> {
    let (dr, dl) = gaps(j, config, spec)?;
    let x = config.centers[j];
    let sl = cluster_variance(config.masses[config.left(j)], spec).sqrt();
    let sr = cluster_variance(config.masses[config.right(j)], spec).sqrt();
    Ok((x - dl + 2.0 * sl, x + dr - 2.0 * sr))
}

/// Effective potential sampled on `[a, b]` with the breakpoints that resolve it.
struct Landscape<'a> {
    config: &'a ClusterConfiguration,
    spec: &'a PotentialSpec,
    breaks: Vec<f64>,
    v_min: f64,
    v_max: f64,
}

impl<'a> Landscape<'a> {
    fn new(config: &'a ClusterConfiguration, spec: &'a PotentialSpec, a: f64, b: f64) -> Self {
        let mut breaks = vec![a, b];
        let r = spec.interaction_radius();
        for (&c, &m) in config.centers.iter().zip(&config.masses) {
            let sigma = cluster_variance(m, spec).sqrt();
            if !sigma.is_finite() {
                continue;
            }
            for n in -2..=2 {
                let ci = c + n as f64;
                for off in [0.0, sigma, 2.0 * sigma, 4.0 * sigma, r, r - 2.0 * sigma, r + 2.0 * sigma] {
                    breaks.push(ci - off);
                    breaks.push(ci + off);
                }
            }
        }
        breaks.retain(|&x| x >= a && x <= b);
        breaks.sort_by(f64::total_cmp);
        breaks.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
        // Refine so that no panel exceeds a fiftieth of the interval.
        let max_len = (b - a) / 50.0;
        let mut fine = vec![breaks[0]];
        for w in breaks.windows(2) {
            let pieces = ((w[1] - w[0]) / max_len).ceil().max(1.0) as usize;
            for i in 1..=pieces {
                fine.push(w[0] + (w[1] - w[0]) * i as f64 / pieces as f64);
            }
        }
        let mut v_min = f64::INFINITY;
        let mut v_max = f64::NEG_INFINITY;
        for w in fine.windows(2) {
            for i in 0..=8 {
                let v = v_eff(w[0] + (w[1] - w[0]) * i as f64 / 8.0, config, spec, VeffMode::Full);
                v_min = v_min.min(v);
                v_max = v_max.max(v);
            }
        }
        Self { config, spec, breaks: fine, v_min, v_max }
    }

    fn v(&self, x: f64) -> f64 {
        v_eff(x, self.config, self.spec, VeffMode::Full)
    }

    /// `exp(V - V_max)`.
    fn up(&self, x: f64) -> f64 {
        (self.v(x) - self.v_max).exp()
    }

    /// `exp(-(V - V_min))`.
    fn down(&self, x: f64) -> f64 {
        (-(self.v(x) - self.v_min)).exp()
    }

    fn breaks_between(&self, a: f64, b: f64) -> Vec<f64> {
        let mut out = vec![a];
        out.extend(self.breaks.iter().copied().filter(|&x| x > a && x < b));
        out.push(b);
        out
    }
}

fn oracle_options() -> QuadOptions {
    QuadOptions { abs_tol: 0.0, rel_tol: 1e-9, max_intervals: 50_000 }
}

/// Mean exit time from `(a, b)` started at `X_j`, by nested quadrature of the exact solution
/// of `u'' - V' u' = -1`, `u(a) = u(b) = 0` in the full effective potential.
pub fn mfpt_quadrature_oracle(j: usize, config: &ClusterConfiguration, spec: &PotentialSpec, a: f64, b: f64) -> Result<f64> {
    if j >= config.len() {
        return Err(Error::Geometry(format!("no cluster {j}")));
    }
    let x = a + (config.centers[j] - a).rem_euclid(1.0);
    if !(a < x && x < b) || b - a > 1.0 {
        return Err(Error::Geometry(format!("X_j = {x} must lie inside ({a}, {b})")));
    }
    let land = Landscape::new(config, spec, a, b);
    let nodes = land.breaks.clone();
    // Cumulative inner integral of exp(-V) at every node.
    let mut cumulative = vec![0.0; nodes.len()];
    for i in 1..nodes.len() {
        let piece = quad::integrate(|z| land.down(z), nodes[i - 1], nodes[i], QuadOptions::with_tol(0.0, 1e-12))?;
        cumulative[i] = cumulative[i - 1] + piece;
    }
    let inner = |y: f64| {
        let i = nodes.partition_point(|&n| n <= y).saturating_sub(1).min(nodes.len() - 2);
        let rest = if y > nodes[i] {
            quad::integrate(|z| land.down(z), nodes[i], y, QuadOptions::with_tol(0.0, 1e-12)).unwrap_or(f64::NAN)
        } else {
            0.0
        };
        cumulative[i] + rest
    };
    let mut weighted = |y: f64| land.up(y) * inner(y);
    let mut plain = |y: f64| land.up(y);
    let to_x = land.breaks_between(a, x);
    let whole = land.breaks_between(a, b);
    let a_int = quad::integrate_with_breaks(&mut weighted, &to_x, oracle_options())?;
    let c_int = quad::integrate_with_breaks(&mut weighted, &whole, oracle_options())?;
    let b_int = quad::integrate_with_breaks(&mut plain, &to_x, oracle_options())?;
    let d_int = quad::integrate_with_breaks(&mut plain, &whole, oracle_options())?;
    let scaled = -a_int + b_int * c_int / d_int;
    if !(scaled.is_finite() && scaled > 0.0) {
        return Err(Error::Quadrature { error: scaled });
    }
    Ok(scaled * (land.v_max - land.v_min).exp())
}

/// Quadrature version of the left-exit probability: `int_x^b e^V / int_a^b e^V` at `x = X_j`.
pub fn exit_probability_oracle(j: usize, config: &ClusterConfiguration, spec: &PotentialSpec, a: f64, b: f64) -> Result<f64> {
    if j >= config.len() {
        return Err(Error::Geometry(format!("no cluster {j}")));
    }
    let x = a + (config.centers[j] - a).rem_euclid(1.0);
    if !(a < x && x < b) || b - a > 1.0 {
        return Err(Error::Geometry(format!("X_j = {x} must lie inside ({a}, {b})")));
    }
    let land = Landscape::new(config, spec, a, b);
    let mut up = |y: f64| land.up(y);
    let right = quad::integrate_with_breaks(&mut up, &land.breaks_between(x, b), oracle_options())?;
    let whole = quad::integrate_with_breaks(&mut up, &land.breaks_between(a, b), oracle_options())?;
    Ok(right / whole)
}
