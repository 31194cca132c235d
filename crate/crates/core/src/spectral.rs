//! Linear stability of the uniform state.
//!
//! A Fourier mode `k` of a small perturbation of the uniform density grows at
//! rate `psi(k) = -k^2 (W^(k) + 1)`. The uniform state loses stability at
//! `gamma_sharp = -1 / min_{k != 0} W^_{1,ell}(k)`.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};
use crate::potentials::{PotentialFamily, PotentialSpec};

/// Largest mode index ever searched before giving up on boundary extension.
const MAX_MODE_INDEX: usize = 1 << 22;

pub fn growth_rate(spec: &PotentialSpec, k: f64) -> f64 {
    -k * k * (spec.fourier(k) + 1.0)
}

fn initial_cutoff(ell: f64) -> usize {
    ((4.0 / ell).ceil() as usize).max(1)
}

/// Index in `1..=n` maximizing `score(n)`, doubling `n` while the maximum sits at the cutoff.
/// Ties go to the smaller index.
fn argmax_modes(mut cutoff: usize, score: impl Fn(usize) -> f64) -> (usize, f64) {
    let mut best = (1, score(1));
    let mut start = 2;
    loop {
        for n in start..=cutoff {
            let s = score(n);
            if s > best.1 {
                best = (n, s);
            }
        }
        if best.0 < cutoff || cutoff >= MAX_MODE_INDEX {
            return best;
        }
        start = cutoff + 1;
        cutoff *= 2;
    }
}

/// Point of linear stability for `family` at range `ell`.
pub fn gamma_sharp(family: &PotentialFamily, ell: f64) -> Result<f64> {
    let unit = PotentialSpec::new(family.clone(), 1.0, ell)?;
    let (n, neg_min) = argmax_modes(initial_cutoff(ell), |n| -unit.fourier(TAU * n as f64));
    if neg_min <= 0.0 {
        return Err(Error::NoInstability { k_max: TAU * n as f64 });
    }
    Ok(1.0 / neg_min)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DominantMode {
    pub k_max: f64,
    pub psi_max: f64,
    pub n_clusters: usize,
}

/// Fastest-growing mode over `k in 2 pi {1, 2, ...}`.
pub fn dominant_mode(spec: &PotentialSpec) -> Result<DominantMode> {
    let (n, psi_max) = argmax_modes(initial_cutoff(spec.ell), |n| growth_rate(spec, TAU * n as f64));
    if psi_max <= 0.0 {
        return Err(Error::StableSystem { psi_max });
    }
    Ok(DominantMode { k_max: TAU * n as f64, psi_max, n_clusters: n })
}

fn hk_root_residual(y: f64) -> f64 {
    y * y.cos() - y.sin() + y * y * y.sin()
}

/// Smallest positive root of `y cos y - sin y + y^2 sin y = 0`, the large-`gamma`
/// limit of `ell * k_max` for the Hegselmann–Krause profile.
pub fn hk_transcendental_root() -> f64 {
    let (mut lo, mut hi) = (FRAC_PI_2, PI);
    // residual > 0 at pi/2 and < 0 at pi
    while hi - lo > 1e-14 {
        let mid = 0.5 * (lo + hi);
        if hk_root_residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Order-of-magnitude time for the dominant mode to reach unit amplitude.
///
/// `amplitude` is `|rho^_0(k_max)|`. With `n_particles`, the sampling
/// fluctuation `N^{-1/2}` is added to it.
pub fn clustering_time(spec: &PotentialSpec, amplitude: f64, n_particles: Option<usize>) -> Result<f64> {
    if !(amplitude >= 0.0) {
        return Err(Error::InvalidParameter(format!("amplitude must be >= 0, got {amplitude}")));
    }
    let mode = dominant_mode(spec)?;
    let a = match n_particles {
        Some(n) if n > 0 => amplitude + 1.0 / (n as f64).sqrt(),
        _ => amplitude,
    };
    if a == 0.0 {
        return Err(Error::DegenerateInit);
    }
    Ok(-a.ln() / mode.psi_max)
}

/// Summary of the linear-stability analysis of one spec.
#[derive(Clone, Debug)]
pub struct SpectralReport {
    pub modes: Vec<(f64, f64)>,
    pub k_max: Option<f64>,
    pub psi_max: Option<f64>,
    pub gamma_sharp: Option<f64>,
    pub n_clusters: Option<usize>,
    pub t_clustering: Option<f64>,
}

impl SpectralReport {
    /// Tabulates `psi` on `2 pi {1..=n_modes}` (default cutoff when `None`).
    pub fn compute(
        spec: &PotentialSpec,
        n_modes: Option<usize>,
        amplitude: f64,
        n_particles: Option<usize>,
    ) -> Self {
        let n_modes = n_modes.unwrap_or_else(|| initial_cutoff(spec.ell));
        let modes = (1..=n_modes)
            .map(|n| {
                let k = TAU * n as f64;
                (k, growth_rate(spec, k))
            })
            .collect();
        let dominant = dominant_mode(spec).ok();
        Self {
            modes,
            k_max: dominant.map(|d| d.k_max),
            psi_max: dominant.map(|d| d.psi_max),
            gamma_sharp: gamma_sharp(&spec.family, spec.ell).ok(),
            n_clusters: dominant.map(|d| d.n_clusters),
            t_clustering: clustering_time(spec, amplitude, n_particles).ok(),
        }
    }
}
