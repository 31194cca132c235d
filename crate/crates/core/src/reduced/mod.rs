//! Coarse-grained cluster model.
//!
//! Clusters are point masses on the torus. Mass leaks between neighbors at
//! Eyring–Kramers rates, centers perform Brownian motions with diffusivity
//! `1 / (N m)`, clusters merge on contact and dissolve below a minimal mass.

mod kramers;
mod ode;
mod stochastic;

pub use kramers::{
    exit_probability, exit_probability_oracle, mfpt_eyring_kramers, mfpt_quadrature_oracle, oracle_endpoints, v_eff,
    v_eff_quadrature, VeffMode,
};
pub use ode::{integrate_mass_ode, OdeOptions};
pub use stochastic::{gillespie_step, heavy_bm_step, run_reduced, ReducedMode, ReducedOptions};

use std::f64::consts::{E, PI};
use std::io::Write;

use crate::cluster::ClusterConfiguration;
use crate::error::{Error, Result};
use crate::potentials::PotentialSpec;
pub use crate::torus::d_dir;

/// Parameters of the reduced model.
#[derive(Clone, Debug)]
pub struct RateParams {
    pub spec: PotentialSpec,
    /// Centers closer than this merge.
    pub merge_distance: f64,
    /// Clusters at or below this mass dissolve.
    pub dissolve_mass: f64,
}

impl RateParams {
    /// Merge distance `s_w ell`, dissolution mass `1 / (gamma ell w''(0))`.
    pub fn new(spec: PotentialSpec) -> Self {
        let merge_distance = spec.interaction_radius();
        let dissolve_mass = 1.0 / (spec.gamma * spec.ell * spec.wpp0());
        Self { spec, merge_distance, dissolve_mass }
    }

    /// Uses the critical mass `gamma_c / gamma` as dissolution threshold.
    pub fn with_gamma_c(mut self, gamma_c: f64) -> Self {
        self.dissolve_mass = gamma_c / self.spec.gamma;
        self
    }

    pub fn with_merge_factor(mut self, c_merge: f64) -> Self {
        self.merge_distance = c_merge * self.spec.interaction_radius();
        self
    }

    /// `true` when every initial gap exceeds the merge distance.
    pub fn is_valid_for(&self, config: &ClusterConfiguration) -> bool {
        config.len() < 2 || (0..config.len()).all(|j| d_dir(config.centers[j], config.centers[config.right(j)]) > self.merge_distance)
    }

    /// Gap excluded from the free diffusion path on each side of a cluster.
    fn excluded(&self) -> f64 {
        2.0 * self.spec.interaction_radius()
    }
}

/// `sqrt(e gamma w''(0) / (2 pi ell)) sqrt(m) exp(-gamma ell Delta m)`.
fn rate_numerator(m: f64, spec: &PotentialSpec) -> f64 {
    (E * spec.gamma * spec.wpp0() / (2.0 * PI * spec.ell)).sqrt() * m.sqrt() * (-spec.gamma * spec.ell * spec.delta() * m).exp()
}

fn free_gap(gap: f64, params: &RateParams) -> Result<f64> {
    let free = gap - params.excluded();
    if !(free > 0.0) {
        return Err(Error::Geometry(format!("gap {gap} is within twice the interaction radius")));
    }
    Ok(free)
}

fn rate_over_gap(m: f64, gap: f64, params: &RateParams) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::Geometry(format!("cluster mass must be positive, got {m}")));
    }
    Ok(rate_numerator(m, &params.spec) / free_gap(gap, params)?)
}

/// Rate at which a particle of a cluster of mass `m` at `x` joins the right neighbor at `x_r`.
pub fn rate_phi_r(m: f64, _x_l: f64, x: f64, x_r: f64, params: &RateParams) -> Result<f64> {
    rate_over_gap(m, d_dir(x, x_r), params)
}

/// Rate at which a particle of a cluster of mass `m` at `x` joins the left neighbor at `x_l`.
pub fn rate_phi_l(m: f64, x_l: f64, x: f64, _x_r: f64, params: &RateParams) -> Result<f64> {
    rate_over_gap(m, d_dir(x_l, x), params)
}

/// `(phi_r, phi_l)` for every cluster at the given masses; empty clusters get zero rates.
fn all_rates(config: &ClusterConfiguration, masses: &[f64], params: &RateParams) -> Result<Vec<(f64, f64)>> {
    (0..config.len())
        .map(|j| {
            let (l, r) = (config.left(j), config.right(j));
            let (xl, x, xr) = (config.centers[l], config.centers[j], config.centers[r]);
            let num = rate_numerator(masses[j].max(0.0), &params.spec);
            Ok((num / free_gap(d_dir(x, xr), params)?, num / free_gap(d_dir(xl, x), params)?))
        })
        .collect()
}

/// Cyclic flux balance `phi_r[j-1] m[j-1] + phi_l[j+1] m[j+1] - (phi_r[j] + phi_l[j]) m[j]`.
pub fn mass_ode_rhs(config: &ClusterConfiguration, params: &RateParams) -> Result<Vec<f64>> {
    mass_rhs_with(config, &config.masses, params)
}

fn mass_rhs_with(config: &ClusterConfiguration, masses: &[f64], params: &RateParams) -> Result<Vec<f64>> {
    let k = config.len();
    if k < 2 {
        return Ok(vec![0.0; k]);
    }
    let rates = all_rates(config, masses, params)?;
    let out_r: Vec<f64> = (0..k).map(|j| rates[j].0 * masses[j].max(0.0)).collect();
    let out_l: Vec<f64> = (0..k).map(|j| rates[j].1 * masses[j].max(0.0)).collect();
    let rhs: Vec<f64> = (0..k)
        .map(|j| (out_r[config.left(j)] + out_l[config.right(j)]) - (out_r[j] + out_l[j]))
        .collect();
    let scale = out_r.iter().chain(&out_l).fold(0.0f64, |a, b| a.max(b.abs()));
    debug_assert!(
        rhs.iter().sum::<f64>().abs() <= 4.0 * f64::EPSILON * k as f64 * scale,
        "mass derivatives do not sum to zero"
    );
    Ok(rhs)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Merge,
    Dissolve,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Merge => "merge",
            EventKind::Dissolve => "dissolve",
        }
    }
}

/// A merge or dissolution; participants are cluster labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterEvent {
    pub t: f64,
    pub kind: EventKind,
    pub participants: Vec<usize>,
    pub masses_before: Vec<f64>,
    pub masses_after: Vec<f64>,
}

/// Recorded configurations (each carries its time) and the event log.
#[derive(Clone, Debug, Default)]
pub struct ReducedTrajectory {
    pub records: Vec<(ClusterConfiguration, Option<EventKind>)>,
    pub events: Vec<ClusterEvent>,
}

impl ReducedTrajectory {
    pub fn last(&self) -> &ClusterConfiguration {
        &self.records.last().expect("trajectory holds the initial state").0
    }

    /// Time of the first dissolution; later records are extrapolations of the model.
    pub fn first_dissolution(&self) -> Option<f64> {
        self.events.iter().find(|e| e.kind == EventKind::Dissolve).map(|e| e.t)
    }

    /// Time at which a single cluster remains.
    pub fn collapse_time(&self) -> Option<f64> {
        self.records.iter().find(|(c, _)| c.len() == 1).map(|(c, _)| c.time)
    }

    /// Labels in order of dissolution.
    pub fn dissolution_order(&self) -> Vec<usize> {
        self.events.iter().filter(|e| e.kind == EventKind::Dissolve).flat_map(|e| e.participants.clone()).collect()
    }

    /// Mass of the cluster labelled `label` at time `t` (linear interpolation, 0 once gone).
    pub fn mass_at(&self, label: usize, t: f64) -> f64 {
        let mass_in = |c: &ClusterConfiguration| c.index_of(label).map_or(0.0, |i| c.masses[i]);
        let k = self.records.partition_point(|(c, _)| c.time <= t);
        if k == 0 {
            return mass_in(&self.records[0].0);
        }
        if k == self.records.len() {
            return mass_in(&self.records[k - 1].0);
        }
        let (a, b) = (&self.records[k - 1].0, &self.records[k].0);
        let (ma, mb) = (mass_in(a), mass_in(b));
        if b.time <= a.time || (ma > 0.0) != (mb > 0.0) {
            return ma;
        }
        ma + (mb - ma) * (t - a.time) / (b.time - a.time)
    }

    /// `(t, cluster_id, center, mass, event)` rows.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (c, event) in &self.records {
            let tag = event.map_or("none", EventKind::as_str);
            for j in 0..c.len() {
                writeln!(out, "{},{},{},{},{tag}", c.time, c.labels[j], c.centers[j], c.masses[j])?;
            }
        }
        Ok(())
    }

    /// `(t_event, type, participants, masses_before, masses_after)` rows; lists are `;`-separated.
    pub fn write_events_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        for e in &self.events {
            let who = e.participants.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
            writeln!(out, "{},{},{who},{},{}", e.t, e.kind.as_str(), join(&e.masses_before), join(&e.masses_after))?;
        }
        Ok(())
    }
}

/// Removes cluster `j` and hands its mass to its neighbors in the ratio of its outgoing rates.
fn dissolve(config: &mut ClusterConfiguration, j: usize, params: &RateParams) -> ClusterEvent {
    let before = config.masses.clone();
    let label = config.labels[j];
    let (l, r) = (config.left(j), config.right(j));
    let m = config.masses[j];
    let share_right = if l == r {
        1.0
    } else {
        let (xl, x, xr) = (config.centers[l], config.centers[j], config.centers[r]);
        // The mass argument cancels in the ratio; only the gaps matter.
        let pr = rate_phi_r(1.0, xl, x, xr, params);
        let pl = rate_phi_l(1.0, xl, x, xr, params);
        match (pr, pl) {
            (Ok(a), Ok(b)) => a / (a + b),
            _ => {
                let (gr, gl) = (d_dir(x, xr), d_dir(xl, x));
                gl / (gl + gr)
            }
        }
    };
    config.masses[r] += share_right * m;
    if l != r {
        config.masses[l] += (1.0 - share_right) * m;
    }
    config.remove(j);
    ClusterEvent {
        t: config.time,
        kind: EventKind::Dissolve,
        participants: vec![label],
        masses_before: before,
        masses_after: config.masses.clone(),
    }
}
