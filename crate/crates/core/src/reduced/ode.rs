//! Mean-field mass dynamics with frozen centers, integrated by Dormand–Prince 5(4).

use super::{dissolve, mass_rhs_with, ClusterEvent, EventKind, RateParams, ReducedTrajectory};
use crate::cluster::ClusterConfiguration;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct OdeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Upper bound on accepted steps; every accepted step is recorded.
    pub max_step: Option<f64>,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-8, abs_tol: 1e-12, max_step: None }
    }
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Difference between the fifth- and fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// One Dormand–Prince step: fifth-order solution and error estimate.
fn dopri_step(y: &[f64], h: f64, f: &mut impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = y.len();
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
    for s in 0..7 {
        let _ = C[s];
        let stage: Vec<f64> = (0..n).map(|i| y[i] + h * (0..s).map(|r| A[s][r] * k[r][i]).sum::<f64>()).collect();
        k.push(f(&stage)?);
    }
    // The last stage is evaluated at the fifth-order solution.
    let y5: Vec<f64> = (0..n).map(|i| y[i] + h * (0..6).map(|r| A[6][r] * k[r][i]).sum::<f64>()).collect();
    let err: Vec<f64> = (0..n).map(|i| h * (0..7).map(|r| E[r] * k[r][i]).sum::<f64>()).collect();
    Ok((y5, err))
}

fn error_norm(y: &[f64], y_new: &[f64], err: &[f64], opts: &OdeOptions) -> f64 {
    let n = y.len() as f64;
    let sum: f64 = (0..y.len())
        .map(|i| {
            let scale = opts.abs_tol + opts.rel_tol * y[i].abs().max(y_new[i].abs());
            (err[i] / scale).powi(2)
        })
        .sum();
    (sum / n).sqrt()
}

/// Dissolves every cluster at or below the threshold, lightest first.
fn dissolve_small(config: &mut ClusterConfiguration, params: &RateParams, traj: &mut ReducedTrajectory) {
    while config.len() > 1 {
        let (j, &m) = config
            .masses
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty configuration");
        if m > params.dissolve_mass {
            break;
        }
        let event = dissolve(config, j, params);
        traj.events.push(event);
        traj.records.push((config.clone(), Some(EventKind::Dissolve)));
    }
}

/// Integrates the mass ODE with frozen centers up to `t_end`.
///
/// Dissolution events are located by bisection on the step size; merging
/// can only happen at the start since centers do not move.
pub fn integrate_mass_ode(
    config0: &ClusterConfiguration,
    params: &RateParams,
    t_end: f64,
    options: OdeOptions,
) -> Result<ReducedTrajectory> {
    let mut traj = ReducedTrajectory::default();
    let mut config = config0.clone();
    traj.records.push((config.clone(), None));
    let mut merges: Vec<ClusterEvent> = Vec::new();
    super::stochastic::merge_close(&mut config, None, params, &mut merges);
    for e in merges {
        traj.events.push(e);
        traj.records.push((config.clone(), Some(EventKind::Merge)));
    }
    dissolve_small(&mut config, params, &mut traj);
    run_segment(&mut config, params, t_end, options, &mut traj)?;
    Ok(traj)
}

/// Advances `config` to `t_end` (or until one cluster is left), appending to `traj`.
pub(crate) fn run_segment(
    config: &mut ClusterConfiguration,
    params: &RateParams,
    t_end: f64,
    options: OdeOptions,
    traj: &mut ReducedTrajectory,
) -> Result<()> {
    let span = t_end - config.time;
    if span <= 0.0 {
        return Ok(());
    }
    let max_step = options.max_step.unwrap_or(f64::INFINITY);
    let mut h = (1e-3 * span).min(max_step).min(1e-2);
    while config.len() > 1 && config.time < t_end {
        let frozen = config.clone();
        let mut f = |m: &[f64]| mass_rhs_with(&frozen, m, params);
        h = h.min(t_end - config.time).min(max_step);
        let (y_new, err) = dopri_step(&config.masses, h, &mut f)?;
        let norm = error_norm(&config.masses, &y_new, &err, &options);
        if !norm.is_finite() {
            return Err(Error::StepFailure { t: config.time });
        }
        if norm > 1.0 {
            h *= (0.9 * norm.powf(-0.2)).max(0.2);
            if h < 1e-14 * config.time.abs().max(1.0) {
                return Err(Error::StepFailure { t: config.time });
            }
            continue;
        }
        let crossed = y_new.iter().any(|&m| m <= params.dissolve_mass);
        let (step, masses) = if crossed {
            let (mut lo, mut hi) = (0.0, h);
            let mut at_hi = y_new.clone();
            while hi - lo > 1e-13 * config.time.abs().max(1.0) && hi - lo > 1e-15 {
                let mid = 0.5 * (lo + hi);
                let (y_mid, _) = dopri_step(&config.masses, mid, &mut f)?;
                if y_mid.iter().any(|&m| m <= params.dissolve_mass) {
                    hi = mid;
                    at_hi = y_mid;
                } else {
                    lo = mid;
                }
            }
            (hi, at_hi)
        } else {
            (h, y_new)
        };
        config.time += step;
        config.masses = masses;
        traj.records.push((config.clone(), None));
        if crossed {
            dissolve_small(config, params, traj);
        }
        let grow = if norm > 0.0 { (0.9 * norm.powf(-0.2)).min(5.0) } else { 5.0 };
        h *= grow;
    }
    Ok(())
}
