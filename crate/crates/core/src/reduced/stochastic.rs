//! Heavy Brownian motion of cluster centers, the particle jump chain and the coupled runner.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use super::ode::{integrate_mass_ode, run_segment, OdeOptions};
use super::{all_rates, ClusterEvent, EventKind, RateParams, ReducedTrajectory};
use crate::cluster::ClusterConfiguration;
use crate::error::{Error, Result};
use crate::torus::{d_dir, wrap};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReducedMode {
    /// Mass ODE with frozen centers.
    Ode,
    /// Mass ODE with heavy Brownian centers.
    OdeBm,
    /// Particle jump chain with frozen centers.
    Gillespie,
    /// Particle jump chain with heavy Brownian centers.
    GillespieBm,
}

impl ReducedMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReducedMode::Ode => "ode",
            ReducedMode::OdeBm => "ode+bm",
            ReducedMode::Gillespie => "gillespie",
            ReducedMode::GillespieBm => "gillespie+bm",
        }
    }

    fn moves_centers(self) -> bool {
        matches!(self, ReducedMode::OdeBm | ReducedMode::GillespieBm)
    }
}

impl std::str::FromStr for ReducedMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ode" => Ok(ReducedMode::Ode),
            "ode+bm" => Ok(ReducedMode::OdeBm),
            "gillespie" => Ok(ReducedMode::Gillespie),
            "gillespie+bm" => Ok(ReducedMode::GillespieBm),
            other => Err(Error::InvalidParameter(format!("unknown reduced mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ReducedOptions {
    /// Time step of the center motion.
    pub dt_bm: f64,
    /// Spacing of recorded snapshots in the coupled and jump modes; `None` records every step.
    pub record_interval: Option<f64>,
    pub ode: OdeOptions,
}

impl Default for ReducedOptions {
    fn default() -> Self {
        Self { dt_bm: 1e-3, record_interval: None, ode: OdeOptions::default() }
    }
}

/// Merges neighbors whose gap is at most the merge distance, closest pair first.
///
/// `gaps[j]` is the unwrapped distance from cluster `j` to its right neighbor;
/// it may be negative when centers crossed during a step.
pub(crate) fn merge_close(
    config: &mut ClusterConfiguration,
    gaps: Option<Vec<f64>>,
    params: &RateParams,
    events: &mut Vec<ClusterEvent>,
) {
    let mut gaps = gaps.unwrap_or_else(|| (0..config.len()).map(|j| d_dir(config.centers[j], config.centers[config.right(j)])).collect());
    while config.len() > 1 {
        let (j, &g) = gaps.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty");
        if g > params.merge_distance {
            break;
        }
        let k = config.right(j);
        let before = config.masses.clone();
        let participants = vec![config.labels[j], config.labels[k]];
        let (mj, mk) = (config.masses[j], config.masses[k]);
        let total = mj + mk;
        let shift = mk * g / total;
        config.centers[j] = wrap(config.centers[j] + shift);
        config.masses[j] = total;
        if mk > mj {
            config.labels[j] = config.labels[k];
        }
        if config.len() == 2 {
            gaps = vec![1.0];
        } else {
            let l = config.left(j);
            gaps[l] += shift;
            gaps[j] = gaps[k] + mj * g / total;
        }
        config.remove(k);
        if config.len() > 1 {
            gaps.remove(k);
        }
        // Restore ascending order; the cyclic order is unchanged, so this is a rotation.
        let start = (0..config.len()).min_by(|&a, &b| config.centers[a].total_cmp(&config.centers[b])).expect("nonempty");
        config.centers.rotate_left(start);
        config.masses.rotate_left(start);
        config.labels.rotate_left(start);
        if gaps.len() == config.len() {
            gaps.rotate_left(start);
        }
        events.push(ClusterEvent {
            t: config.time,
            kind: EventKind::Merge,
            participants,
            masses_before: before,
            masses_after: config.masses.clone(),
        });
    }
}

fn particle_count(config: &ClusterConfiguration) -> Result<usize> {
    config
        .n_particles
        .ok_or_else(|| Error::InvalidParameter("the particle count must be set for stochastic modes".into()))
}

/// Moves every center by an independent Gaussian of variance `2 dt / (N m)`, then merges close pairs.
pub fn heavy_bm_step<R: Rng + ?Sized>(
    config: &ClusterConfiguration,
    params: &RateParams,
    dt: f64,
    rng: &mut R,
) -> Result<(ClusterConfiguration, Vec<ClusterEvent>)> {
    let n = particle_count(config)? as f64;
    if !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
    }
    let k = config.len();
    let steps: Vec<f64> = config
        .masses
        .iter()
        .map(|&m| {
            let z: f64 = StandardNormal.sample(rng);
            (2.0 * dt / (n * m)).sqrt() * z
        })
        .collect();
    let gaps: Vec<f64> = (0..k)
        .map(|j| {
            let r = config.right(j);
            if k == 1 {
                1.0
            } else {
                d_dir(config.centers[j], config.centers[r]) + steps[r] - steps[j]
            }
        })
        .collect();
    let mut next = config.clone();
    next.time += dt;
    for j in 0..k {
        next.centers[j] = wrap(config.centers[j] + steps[j]);
    }
    let start = (0..k).min_by(|&a, &b| next.centers[a].total_cmp(&next.centers[b])).expect("nonempty");
    next.centers.rotate_left(start);
    next.masses.rotate_left(start);
    next.labels.rotate_left(start);
    let mut gaps = gaps;
    gaps.rotate_left(start);
    let mut events = Vec::new();
    merge_close(&mut next, Some(gaps), params, &mut events);
    Ok((next, events))
}

/// One event of the particle jump chain: a single particle leaves a cluster for a neighbor.
///
/// Cluster `j` with `M` particles sends one to the right at rate `M phi_r(M / N)` and to the
/// left at rate `M phi_l(M / N)`. A cluster is removed when its count reaches zero.
pub fn gillespie_step<R: Rng + ?Sized>(
    config: &ClusterConfiguration,
    params: &RateParams,
    rng: &mut R,
) -> Result<(f64, ClusterConfiguration, Option<ClusterEvent>)> {
    let n = particle_count(config)?;
    if config.len() < 2 {
        return Err(Error::Absorbed);
    }
    let counts: Vec<f64> = config.masses.iter().map(|&m| (m * n as f64).round()).collect();
    let (wait, j, to_right) = draw_jump(config, &counts, n, params, rng)?;
    let mut next = config.clone();
    next.time += wait;
    let (dest, mut counts) = (if to_right { config.right(j) } else { config.left(j) }, counts);
    counts[j] -= 1.0;
    counts[dest] += 1.0;
    next.masses = counts.iter().map(|&c| c / n as f64).collect();
    let mut event = None;
    if counts[j] == 0.0 {
        let before = next.masses.clone();
        let label = next.labels[j];
        next.remove(j);
        event = Some(ClusterEvent {
            t: next.time,
            kind: EventKind::Dissolve,
            participants: vec![label],
            masses_before: before,
            masses_after: next.masses.clone(),
        });
    }
    Ok((wait, next, event))
}

fn draw_jump<R: Rng + ?Sized>(
    config: &ClusterConfiguration,
    counts: &[f64],
    n: usize,
    params: &RateParams,
    rng: &mut R,
) -> Result<(f64, usize, bool)> {
    let masses: Vec<f64> = counts.iter().map(|&c| c / n as f64).collect();
    let rates = all_rates(config, &masses, params)?;
    let channels: Vec<f64> = rates.iter().zip(counts).flat_map(|(&(r, l), &c)| [c * r, c * l]).collect();
    let total: f64 = channels.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Geometry(format!("total jump rate {total} is not positive and finite")));
    }
    let e: f64 = Exp1.sample(rng);
    let wait = e / total;
    let mut u = rng.random::<f64>() * total;
    let mut pick = channels.len() - 1;
    for (i, &c) in channels.iter().enumerate() {
        if u < c {
            pick = i;
            break;
        }
        u -= c;
    }
    Ok((wait, pick / 2, pick.is_multiple_of(2)))
}

/// Couples center motion with mass exchange up to `t_end` or until one cluster remains.
///
/// In the modes with moving centers the merge distance is raised to at least
/// twice the interaction radius so the rates stay finite.
pub fn run_reduced<R: Rng + ?Sized>(
    config0: &ClusterConfiguration,
    params: &RateParams,
    t_end: f64,
    mode: ReducedMode,
    options: ReducedOptions,
    rng: &mut R,
) -> Result<ReducedTrajectory> {
    if mode == ReducedMode::Ode {
        return integrate_mass_ode(config0, params, t_end, options.ode);
    }
    particle_count(config0)?;
    let mut params = params.clone();
    if mode.moves_centers() {
        params.merge_distance = params.merge_distance.max(2.0 * params.spec.interaction_radius());
        if !(options.dt_bm > 0.0) {
            return Err(Error::InvalidParameter(format!("dt_bm must be positive, got {}", options.dt_bm)));
        }
    }
    let params = &params;
    let mut traj = ReducedTrajectory::default();
    let mut config = config0.clone();
    traj.records.push((config.clone(), None));
    let mut merges = Vec::new();
    merge_close(&mut config, None, params, &mut merges);
    push_events(&mut traj, &config, merges);

    let span = (t_end - config.time).max(0.0);
    let record_every = options.record_interval.unwrap_or(match mode {
        ReducedMode::OdeBm | ReducedMode::GillespieBm => options.dt_bm,
        _ => span / 1000.0,
    });
    let mut next_record = config.time + record_every;
    let record_until = |traj: &mut ReducedTrajectory, config: &ClusterConfiguration, upto: f64, next_record: &mut f64| {
        while *next_record <= upto + 1e-12 * upto.abs().max(1.0) && *next_record <= t_end {
            let mut snap = config.clone();
            snap.time = *next_record;
            traj.records.push((snap, None));
            *next_record += record_every;
        }
    };

    match mode {
        ReducedMode::Ode => unreachable!(),
        ReducedMode::OdeBm => {
            while config.len() > 1 && config.time < t_end {
                let t_next = (config.time + options.dt_bm).min(t_end);
                let mut scratch = ReducedTrajectory::default();
                run_segment(&mut config, params, t_next, options.ode, &mut scratch)?;
                let died = scratch.events;
                for (c, kind) in scratch.records.into_iter().filter(|r| r.1.is_some()) {
                    traj.records.push((c, kind));
                }
                traj.events.extend(died);
                if config.len() < 2 {
                    break;
                }
                // run_segment stops early only when a single cluster is left.
                let (moved, merges) = heavy_bm_step(&config, params, options.dt_bm, rng)?;
                config = moved;
                config.time = t_next;
                push_events(&mut traj, &config, merges);
                record_until(&mut traj, &config, config.time, &mut next_record);
            }
        }
        ReducedMode::Gillespie | ReducedMode::GillespieBm => {
            let mut next_bm = if mode.moves_centers() { config.time + options.dt_bm } else { f64::INFINITY };
            while config.len() > 1 && config.time < t_end {
                // Sample the next jump; if it falls beyond the next center move, discard it
                // (memorylessness) and move the centers instead.
                let (wait, jumped, event) = gillespie_step(&config, params, rng)?;
                let t_jump = config.time + wait;
                let horizon = next_bm.min(t_end);
                if t_jump > horizon {
                    record_until(&mut traj, &config, horizon, &mut next_record);
                    config.time = horizon;
                    if horizon == next_bm {
                        let (moved, merges) = heavy_bm_step(&config, params, options.dt_bm, rng)?;
                        config = moved;
                        config.time = horizon;
                        push_events(&mut traj, &config, merges);
                        next_bm += options.dt_bm;
                    }
                    continue;
                }
                record_until(&mut traj, &config, t_jump, &mut next_record);
                config = jumped;
                if let Some(e) = event {
                    traj.events.push(e);
                    traj.records.push((config.clone(), Some(EventKind::Dissolve)));
                }
            }
        }
    }
    if traj.last().time < config.time || traj.last().len() != config.len() {
        traj.records.push((config, None));
    }
    Ok(traj)
}

fn push_events(traj: &mut ReducedTrajectory, config: &ClusterConfiguration, events: Vec<ClusterEvent>) {
    for e in events {
        let kind = e.kind;
        traj.events.push(e);
        traj.records.push((config.clone(), Some(kind)));
    }
}
