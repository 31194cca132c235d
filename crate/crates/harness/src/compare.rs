//! Cluster-mass time series and their comparison across models.

use std::io::Write;

use clusterlab::reduced::ReducedTrajectory;
use clusterlab::torus;
use clusterlab::DensityField;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Masses of a fixed set of clusters sampled at increasing times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassSeries {
    /// Initial centers; they define the labeling used to pair two series.
    pub centers: Vec<f64>,
    pub times: Vec<f64>,
    /// `masses[k][j]` is the mass of cluster `j` at `times[k]`.
    pub masses: Vec<Vec<f64>>,
}

impl MassSeries {
    pub fn new(centers: Vec<f64>, times: Vec<f64>, masses: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != masses.len() {
            return Err(HarnessError::Config("mass series needs one mass vector per time and at least one time".into()));
        }
        if masses.iter().any(|m| m.len() != centers.len()) {
            return Err(HarnessError::Config("every mass vector must have one entry per cluster".into()));
        }
        if times.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(HarnessError::Config("series times must be non-decreasing".into()));
        }
        Ok(Self { centers, times, masses })
    }

    /// Every record of a reduced-model trajectory, one column per initial cluster.
    pub fn from_trajectory(traj: &ReducedTrajectory) -> Self {
        let first = &traj.records[0].0;
        let labels = first.labels.clone();
        let times: Vec<f64> = traj.records.iter().map(|(c, _)| c.time).collect();
        let masses = traj
            .records
            .iter()
            .map(|(c, _)| labels.iter().map(|&l| c.index_of(l).map_or(0.0, |i| c.masses[i])).collect())
            .collect();
        Self { centers: first.centers.clone(), times, masses }
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Linear interpolation of cluster `j`, clamped to the ends of the series.
    pub fn mass_at(&self, j: usize, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return self.masses[0][j];
        }
        if k == self.times.len() {
            return self.masses[k - 1][j];
        }
        let (ta, tb) = (self.times[k - 1], self.times[k]);
        let (ma, mb) = (self.masses[k - 1][j], self.masses[k][j]);
        if tb <= ta {
            return ma;
        }
        ma + (mb - ma) * (t - ta) / (tb - ta)
    }

    /// First sample time at which cluster `j` holds less than `eps`.
    pub fn dissolution_time(&self, j: usize, eps: f64) -> Option<f64> {
        self.times.iter().zip(&self.masses).find(|(_, m)| m[j] < eps).map(|(&t, _)| t)
    }

    /// First sample time at which at most one cluster holds `eps` or more.
    pub fn collapse_time(&self, eps: f64) -> Option<f64> {
        self.times.iter().zip(&self.masses).find(|(_, m)| m.iter().filter(|&&x| x >= eps).count() <= 1).map(|(&t, _)| t)
    }

    /// Cluster indices ordered by dissolution time; clusters that never dissolve are left out.
    pub fn dissolution_order(&self, eps: f64) -> Vec<usize> {
        let mut order: Vec<(f64, usize)> = (0..self.len()).filter_map(|j| self.dissolution_time(j, eps).map(|t| (t, j))).collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        order.into_iter().map(|(_, j)| j).collect()
    }

    /// Same series with clusters reordered: column `j` of the result is column `perm[j]` of `self`.
    fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            centers: perm.iter().map(|&p| self.centers[p]).collect(),
            times: self.times.clone(),
            masses: self.masses.iter().map(|m| perm.iter().map(|&p| m[p]).collect()).collect(),
        }
    }

    /// `(t, cluster, mass)` rows.
    pub fn write_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "t,cluster,mass")?;
        for (t, m) in self.times.iter().zip(&self.masses) {
            for (j, x) in m.iter().enumerate() {
                writeln!(out, "{t},{j},{x}")?;
            }
        }
        Ok(())
    }
}

/// Density regions between fixed cut points, tracked over a PDE run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegionTracker {
    cuts: Vec<f64>,
    /// Region `order[j]` is reported as cluster `j`, so clusters follow their initial centers.
    order: Vec<usize>,
    centers: Vec<f64>,
    times: Vec<f64>,
    masses: Vec<Vec<f64>>,
}

impl RegionTracker {
    /// Regions `[cuts[k], cuts[k + 1])`, cyclically; fewer than two cuts means one region.
    pub fn new(cuts: &[f64], rho0: &DensityField) -> Self {
        let mut cuts: Vec<f64> = cuts.iter().map(|&c| torus::wrap(c)).collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        if cuts.len() < 2 {
            cuts.clear();
        }
        let mut tracker = Self { cuts, order: Vec::new(), centers: Vec::new(), times: Vec::new(), masses: Vec::new() };
        let h = rho0.h();
        let n = tracker.n_regions();
        let mut points: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n];
        for (i, &v) in rho0.values().iter().enumerate() {
            let x = (i as f64 + 0.5) * h;
            points[tracker.region_of(x)].push((x, v));
        }
        let centers: Vec<f64> = points.into_iter().map(|p| torus::circular_mean(p).unwrap_or(0.0)).collect();
        tracker.order = (0..n).collect();
        tracker.order.sort_by(|&a, &b| centers[a].total_cmp(&centers[b]));
        tracker.centers = tracker.order.iter().map(|&k| centers[k]).collect();
        tracker
    }

    pub fn n_regions(&self) -> usize {
        self.cuts.len().max(1)
    }

    fn region_of(&self, x: f64) -> usize {
        if self.cuts.is_empty() {
            return 0;
        }
        self.cuts.iter().rposition(|&c| c <= x).unwrap_or(self.cuts.len() - 1)
    }

    pub fn masses(&self, rho: &DensityField) -> Vec<f64> {
        let h = rho.h();
        let mut m = vec![0.0; self.n_regions()];
        for (i, &v) in rho.values().iter().enumerate() {
            m[self.region_of((i as f64 + 0.5) * h)] += h * v;
        }
        self.order.iter().map(|&k| m[k]).collect()
    }

    /// Appends the region masses of `rho` at time `t` and returns them.
    pub fn record(&mut self, t: f64, rho: &DensityField) -> Vec<f64> {
        let m = self.masses(rho);
        self.times.push(t);
        self.masses.push(m.clone());
        m
    }

    pub fn series(&self) -> Result<MassSeries> {
        MassSeries::new(self.centers.clone(), self.times.clone(), self.masses.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassComparison {
    /// Per-cluster `sup |m_pde - m_ode|` up to the first dissolution in either series.
    pub sup_gap: Vec<f64>,
    /// End of the window over which `sup_gap` is taken.
    pub gap_window_end: f64,
    pub pde_order: Vec<usize>,
    pub ode_order: Vec<usize>,
    /// The dissolution orders agree on their common prefix.
    pub order_match: bool,
    pub pde_collapse: Option<f64>,
    pub ode_collapse: Option<f64>,
    /// `pde_collapse / ode_collapse` when both series collapse.
    pub collapse_ratio: Option<f64>,
    pub dissolve_mass: f64,
}

/// Pairs the clusters of two series by nearest initial center; fails unless that is a bijection.
fn match_labels(a: &MassSeries, b: &MassSeries) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(HarnessError::LabelMismatch(format!("{} clusters against {}", a.len(), b.len())));
    }
    let perm: Vec<usize> = a
        .centers
        .iter()
        .map(|&c| {
            (0..b.len())
                .min_by(|&i, &j| torus::signed(b.centers[i] - c).abs().total_cmp(&torus::signed(b.centers[j] - c).abs()))
                .expect("series are non-empty")
        })
        .collect();
    let mut seen = vec![false; b.len()];
    for &p in &perm {
        if std::mem::replace(&mut seen[p], true) {
            return Err(HarnessError::LabelMismatch(format!("initial centers {:?} and {:?} do not pair up", a.centers, b.centers)));
        }
    }
    Ok(perm)
}

/// Compares PDE region masses with reduced-model masses.
///
/// A cluster has dissolved once its mass drops below `dissolve_mass`; the series
/// collapses when at most one cluster is left above it. The ODE series is
/// evaluated at the PDE sample times by linear interpolation.
pub fn compare_masses(pde: &MassSeries, ode: &MassSeries, dissolve_mass: f64) -> Result<MassComparison> {
    if pde.is_empty() {
        return Err(HarnessError::LabelMismatch("empty series".into()));
    }
    let ode = ode.permuted(&match_labels(pde, ode)?);
    let eps = dissolve_mass;
    let first = |s: &MassSeries| (0..s.len()).filter_map(|j| s.dissolution_time(j, eps)).fold(f64::INFINITY, f64::min);
    let t_end = pde.times.last().unwrap().min(*ode.times.last().unwrap());
    let window = first(pde).min(first(&ode)).min(t_end);
    let sup_gap = (0..pde.len())
        .map(|j| {
            pde.times
                .iter()
                .zip(&pde.masses)
                .filter(|(&t, _)| t <= window)
                .map(|(&t, m)| (m[j] - ode.mass_at(j, t)).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    let pde_order = pde.dissolution_order(eps);
    let ode_order = ode.dissolution_order(eps);
    let order_match = pde_order.iter().zip(&ode_order).all(|(a, b)| a == b);
    let pde_collapse = pde.collapse_time(eps);
    let ode_collapse = ode.collapse_time(eps);
    let collapse_ratio = match (pde_collapse, ode_collapse) {
        (Some(a), Some(b)) if a == b => Some(1.0),
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    Ok(MassComparison { sup_gap, gap_window_end: window, pde_order, ode_order, order_match, pde_collapse, ode_collapse, collapse_ratio, dissolve_mass })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series() -> MassSeries {
        let times = vec![0.0, 1.0, 2.0, 3.0];
        let masses = vec![vec![0.2, 0.3, 0.5], vec![0.1, 0.35, 0.55], vec![0.0, 0.4, 0.6], vec![0.0, 0.0, 1.0]];
        MassSeries::new(vec![0.1, 0.3, 0.7], times, masses).unwrap()
    }

    #[test]
    fn identical_series() {
        let s = series();
        let r = compare_masses(&s, &s, 0.05).unwrap();
        assert!(r.sup_gap.iter().all(|&g| g == 0.0));
        assert!(r.order_match);
        assert_eq!(r.pde_order, vec![0, 1]);
        assert_eq!(r.collapse_ratio, Some(1.0));
        assert_eq!(r.gap_window_end, 2.0);
    }

    #[test]
    fn labels_pair_by_center() {
        let s = series();
        let shuffled = s.permuted(&[2, 0, 1]);
        let r = compare_masses(&s, &shuffled, 0.05).unwrap();
        assert!(r.sup_gap.iter().all(|&g| g == 0.0));
        assert!(r.order_match);
    }

    #[test]
    fn different_counts_are_rejected() {
        let s = series();
        let two = MassSeries::new(vec![0.1, 0.7], vec![0.0], vec![vec![0.5, 0.5]]).unwrap();
        assert!(matches!(compare_masses(&s, &two, 0.05), Err(HarnessError::LabelMismatch(_))));
        let crowded = MassSeries::new(vec![0.1, 0.11, 0.12], vec![0.0], vec![vec![0.2, 0.3, 0.5]]).unwrap();
        assert!(matches!(compare_masses(&s, &crowded, 0.05), Err(HarnessError::LabelMismatch(_))));
    }

    #[test]
    fn swapped_order_is_flagged() {
        let s = series();
        let mut t = s.clone();
        t.masses[2] = vec![0.1, 0.0, 0.9];
        let r = compare_masses(&s, &t, 0.05).unwrap();
        assert!(!r.order_match);
    }

    #[test]
    fn region_tracker_sums_to_total_mass() {
        let rho = DensityField::from_fn(64, |x| 1.0 + 0.5 * (2.0 * std::f64::consts::PI * 2.0 * x).cos()).unwrap();
        let mut tr = RegionTracker::new(&[0.25, 0.75], &rho);
        let m = tr.record(0.0, &rho);
        assert_eq!(m.len(), 2);
        assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // The wrapped region [0.75, 0.25) has its center at 0 and comes first.
        assert!((m[1] - 0.5).abs() < 1e-12);
        let s = tr.series().unwrap();
        assert!(s.centers[0] < 1e-9 || s.centers[0] > 1.0 - 1e-9);
        assert!((s.centers[1] - 0.5).abs() < 1e-9);
    }
}
