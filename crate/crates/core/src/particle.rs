//! The N-particle system, stepped with Euler–Maruyama.
//!
//! Every particle owns a ChaCha8 stream derived from the master seed, so
//! trajectories do not depend on how the work is split across threads.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::cluster::ClusterConfiguration;
use crate::error::{Error, Result};
use crate::pde::DensityField;
use crate::potentials::PotentialSpec;
use crate::torus;

/// Time step of the reference run at `gamma w''(0) = 2000`.
const REFERENCE_DT: f64 = 5e-5;
const REFERENCE_STIFFNESS: f64 = 2000.0;

/// Particles per parallel task; small ensembles run on one thread.
const PAR_CHUNK: usize = 256;

/// Default Euler–Maruyama step, inversely proportional to `gamma w''(0)`.
pub fn default_dt(spec: &PotentialSpec) -> f64 {
    let stiffness = spec.gamma * spec.wpp0();
    if stiffness > 0.0 {
        REFERENCE_DT * REFERENCE_STIFFNESS / stiffness
    } else {
        REFERENCE_DT
    }
}

#[derive(Clone, Debug)]
pub struct ParticleEnsemble {
    pub positions: Vec<f64>,
    pub time: f64,
    seed: u64,
    rngs: Vec<ChaCha8Rng>,
}

fn particle_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// How to draw the initial positions.
#[derive(Clone, Copy, Debug)]
pub enum InitialKind<'a> {
    /// `x_i = i / n` for `i = 1..=n`, wrapped.
    Grid,
    /// I.i.d. from a piecewise-constant density.
    Iid(&'a DensityField),
    UniformIid,
}

impl ParticleEnsemble {
    /// Ensemble at explicit positions (wrapped), with fresh streams.
    pub fn from_positions(positions: Vec<f64>, seed: u64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidParameter("an ensemble needs at least one particle".into()));
        }
        let rngs = (0..positions.len()).map(|i| particle_rng(seed, i)).collect();
        Ok(Self { positions: positions.into_iter().map(torus::wrap).collect(), time: 0.0, seed, rngs })
    }

    pub fn sample_initial(kind: InitialKind<'_>, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("an ensemble needs at least one particle".into()));
        }
        let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| particle_rng(seed, i)).collect();
        let positions = match kind {
            InitialKind::Grid => (1..=n).map(|i| torus::wrap(i as f64 / n as f64)).collect(),
            InitialKind::UniformIid => rngs.iter_mut().map(|r| r.random::<f64>()).collect(),
            InitialKind::Iid(density) => {
                let sampler = InverseCdf::new(density)?;
                rngs.iter_mut().map(|r| sampler.sample(r.random::<f64>())).collect()
            }
        };
        Ok(Self { positions, time: 0.0, seed, rngs })
    }

    /// Restores an ensemble saved with [`ParticleEnsemble::stream_positions`].
    pub fn restore(positions: Vec<f64>, time: f64, seed: u64, stream_positions: &[u128]) -> Result<Self> {
        if positions.len() != stream_positions.len() || positions.is_empty() {
            return Err(Error::InvalidParameter("positions and stream states must match".into()));
        }
        let rngs = stream_positions
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let mut r = particle_rng(seed, i);
                r.set_word_pos(w);
                r
            })
            .collect();
        Ok(Self { positions, time, seed, rngs })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Word offsets of every particle stream, enough to resume bit-exactly.
    pub fn stream_positions(&self) -> Vec<u128> {
        self.rngs.iter().map(|r| r.get_word_pos()).collect()
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// One Euler–Maruyama step with cell-list drifts.
    pub fn em_step(&mut self, spec: &PotentialSpec, dt: f64) {
        let drift = if spec.gamma == 0.0 {
            vec![0.0; self.len()]
        } else {
            CellList::new(&self.positions, spec.interaction_radius()).drifts(&self.positions, spec)
        };
        let noise = (2.0 * dt).sqrt();
        self.positions
            .par_iter_mut()
            .zip(self.rngs.par_iter_mut())
            .zip(drift.par_iter())
            .with_min_len(PAR_CHUNK)
            .for_each(|((x, rng), d)| {
                let xi: f64 = rng.sample(StandardNormal);
                *x = torus::wrap(*x - dt * d + noise * xi);
            });
        self.time += dt;
    }

    /// `(1/2N^2) sum_{i,j} W(x_i - x_j)` including the diagonal.
    pub fn interaction_energy(&self, spec: &PotentialSpec) -> f64 {
        CellList::new(&self.positions, spec.interaction_radius()).energy(&self.positions, spec)
    }

    pub fn detect_clusters(&self, gap_threshold: f64) -> ClusterConfiguration {
        let mut c = detect_clusters(&self.positions, gap_threshold);
        c.time = self.time;
        c
    }
}

struct InverseCdf<'a> {
    density: &'a DensityField,
    cumulative: Vec<f64>,
}

impl<'a> InverseCdf<'a> {
    fn new(density: &'a DensityField) -> Result<Self> {
        let h = density.h();
        let mass = density.mass();
        if (mass - 1.0).abs() > 1e-9 || density.values().iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidDensity(format!("density of mass {mass} cannot be sampled")));
        }
        let mut cumulative = Vec::with_capacity(density.m_cells() + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for v in density.values() {
            acc += h * v;
            cumulative.push(acc);
        }
        Ok(Self { density, cumulative })
    }

    fn sample(&self, u: f64) -> f64 {
        let u = u * self.cumulative[self.cumulative.len() - 1];
        // Last cell whose left cumulative value is <= u, skipping empty cells.
        let m = self.density.m_cells();
        let mut i = self.cumulative.partition_point(|&c| c <= u).saturating_sub(1).min(m - 1);
        while self.density.values()[i] == 0.0 && i > 0 {
            i -= 1;
        }
        let h = self.density.h();
        let w = h * self.density.values()[i];
        let frac = if w > 0.0 { ((u - self.cumulative[i]) / w).clamp(0.0, 1.0) } else { 0.5 };
        torus::wrap((i as f64 + frac) * h)
    }
}

/// Cyclic buckets of width at least the interaction radius.
///
/// Bucket contents are in ascending particle index, and neighborhoods are
/// visited in ascending index, so sums match the brute-force order exactly.
#[derive(Clone, Debug)]
pub struct CellList {
    n_cells: usize,
    buckets: Vec<Vec<usize>>,
}

impl CellList {
    /// With fewer than three cells every particle neighbors every other one.
    pub fn new(positions: &[f64], radius: f64) -> Self {
        // The margin keeps cells strictly wider than the radius when 1/radius is an integer.
        let n_cells = if radius > 0.0 { ((1.0 - 1e-9) / radius).floor() as usize } else { 1 };
        let n_cells = if n_cells < 3 { 1 } else { n_cells };
        let mut buckets = vec![Vec::new(); n_cells];
        for (i, &x) in positions.iter().enumerate() {
            buckets[Self::cell_of(x, n_cells)].push(i);
        }
        Self { n_cells, buckets }
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn cell_width(&self) -> f64 {
        1.0 / self.n_cells as f64
    }

    fn cell_of(x: f64, n_cells: usize) -> usize {
        ((x * n_cells as f64) as usize).min(n_cells - 1)
    }

    /// Calls `f(j)` for every particle in the cell of `x` and its two neighbors, in ascending order.
    fn for_each_neighbor(&self, x: f64, mut f: impl FnMut(usize)) {
        if self.n_cells == 1 {
            self.buckets[0].iter().for_each(|&j| f(j));
            return;
        }
        let c = Self::cell_of(x, self.n_cells);
        let n = self.n_cells;
        let lists = [&self.buckets[(c + n - 1) % n], &self.buckets[c], &self.buckets[(c + 1) % n]];
        let mut idx = [0usize; 3];
        loop {
            let mut best: Option<(usize, usize)> = None;
            for (k, list) in lists.iter().enumerate() {
                if let Some(&j) = list.get(idx[k]) {
                    if best.is_none_or(|(_, b)| j < b) {
                        best = Some((k, j));
                    }
                }
            }
            match best {
                Some((k, j)) => {
                    idx[k] += 1;
                    f(j);
                }
                None => break,
            }
        }
    }

    /// `(1/N) sum_j W'(x_i - x_j)` for every `i`.
    pub fn drifts(&self, positions: &[f64], spec: &PotentialSpec) -> Vec<f64> {
        let inv_n = 1.0 / positions.len() as f64;
        positions
            .par_iter()
            .with_min_len(PAR_CHUNK)
            .map(|&x| {
                let mut acc = 0.0;
                self.for_each_neighbor(x, |j| acc += spec.derivative(x - positions[j]));
                acc * inv_n
            })
            .collect()
    }

    pub fn energy(&self, positions: &[f64], spec: &PotentialSpec) -> f64 {
        let n = positions.len() as f64;
        let rows: Vec<f64> = positions
            .par_iter()
            .with_min_len(PAR_CHUNK)
            .map(|&x| {
                let mut acc = 0.0;
                self.for_each_neighbor(x, |j| acc += spec.eval(x - positions[j]));
                acc
            })
            .collect();
        rows.iter().sum::<f64>() / (2.0 * n * n)
    }
}

/// O(N^2) drift, summing over `j` in ascending order.
pub fn drifts_brute_force(positions: &[f64], spec: &PotentialSpec) -> Vec<f64> {
    let inv_n = 1.0 / positions.len() as f64;
    positions
        .iter()
        .map(|&x| positions.iter().fold(0.0, |acc, &y| acc + spec.derivative(x - y)) * inv_n)
        .collect()
}

/// O(N^2) interaction energy.
pub fn energy_brute_force(positions: &[f64], spec: &PotentialSpec) -> f64 {
    let n = positions.len() as f64;
    let total: f64 = positions
        .iter()
        .map(|&x| positions.iter().fold(0.0, |acc, &y| acc + spec.eval(x - y)))
        .sum();
    total / (2.0 * n * n)
}

/// Cuts the circle at every gap wider than `gap_threshold`.
///
/// Each arc is a cluster of mass `count / N` centred at its circular mean.
pub fn detect_clusters(positions: &[f64], gap_threshold: f64) -> ClusterConfiguration {
    let n = positions.len();
    let mut xs: Vec<f64> = positions.iter().map(|&x| torus::wrap(x)).collect();
    xs.sort_by(f64::total_cmp);
    // gap after xs[i]
    let cuts: Vec<usize> = (0..n)
        .filter(|&i| {
            let next = if i + 1 < n { xs[i + 1] } else { xs[0] + 1.0 };
            next - xs[i] > gap_threshold
        })
        .collect();
    let arc_center = |members: &[f64]| {
        torus::circular_mean(members.iter().map(|&x| (x, 1.0))).unwrap_or(members[0])
    };
    let (centers, counts): (Vec<f64>, Vec<usize>) = if cuts.is_empty() {
        (vec![arc_center(&xs)], vec![n])
    } else {
        cuts.iter()
            .enumerate()
            .map(|(k, &end)| {
                let start = (cuts[(k + cuts.len() - 1) % cuts.len()] + 1) % n;
                let members: Vec<f64> = if start <= end {
                    xs[start..=end].to_vec()
                } else {
                    xs[start..].iter().chain(&xs[..=end]).copied().collect()
                };
                (arc_center(&members), members.len())
            })
            .unzip()
    };
    let masses = counts.iter().map(|&c| c as f64 / n as f64).collect();
    ClusterConfiguration::new(centers, masses)
        .expect("arc counts form a partition of the ensemble")
        .with_particles(n)
}

/// Default gap for [`detect_clusters`]: twice the interaction radius.
pub fn default_gap(spec: &PotentialSpec) -> f64 {
    2.0 * spec.interaction_radius()
}

/// `(t, particle_id, x)` rows.
pub fn write_positions_csv<W: Write>(out: &mut W, ensemble: &ParticleEnsemble) -> std::io::Result<()> {
    for (i, x) in ensemble.positions.iter().enumerate() {
        writeln!(out, "{},{i},{x}", ensemble.time)?;
    }
    Ok(())
}

/// `(t, cluster_id, center, mass)` rows, `cluster_id` being the cluster label.
pub fn write_clusters_csv<W: Write>(out: &mut W, clusters: &ClusterConfiguration) -> std::io::Result<()> {
    for ((c, m), l) in clusters.centers.iter().zip(&clusters.masses).zip(&clusters.labels) {
        writeln!(out, "{},{l},{c},{m}", clusters.time)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_initial() {
        let e = ParticleEnsemble::sample_initial(InitialKind::Grid, 4, 0).unwrap();
        assert_eq!(e.positions, vec![0.25, 0.5, 0.75, 0.0]);
        assert!(ParticleEnsemble::sample_initial(InitialKind::Grid, 0, 0).is_err());
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let spec = PotentialSpec::hk(2000.0, 0.08).unwrap();
        let run = || {
            let mut e = ParticleEnsemble::sample_initial(InitialKind::UniformIid, 100, 42).unwrap();
            for _ in 0..50 {
                e.em_step(&spec, 5e-5);
            }
            e.positions
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn restore_resumes_exactly() {
        let spec = PotentialSpec::hk(100.0, 0.1).unwrap();
        let mut a = ParticleEnsemble::sample_initial(InitialKind::UniformIid, 30, 9).unwrap();
        for _ in 0..10 {
            a.em_step(&spec, 1e-4);
        }
        let mut b = ParticleEnsemble::restore(a.positions.clone(), a.time, 9, &a.stream_positions()).unwrap();
        for _ in 0..10 {
            a.em_step(&spec, 1e-4);
            b.em_step(&spec, 1e-4);
        }
        assert_eq!(a.positions, b.positions);
    }

    #[test]
    fn far_pair_has_no_drift() {
        let spec = PotentialSpec::hk(2000.0, 0.08).unwrap();
        let cells = CellList::new(&[0.1, 0.7], spec.interaction_radius());
        assert_eq!(cells.drifts(&[0.1, 0.7], &spec), vec![0.0, 0.0]);
    }

    #[test]
    fn near_pair_drifts_cancel() {
        let spec = PotentialSpec::hk(2000.0, 0.08).unwrap();
        let pos = [0.99, 0.02];
        let d = CellList::new(&pos, spec.interaction_radius()).drifts(&pos, &spec);
        assert!(d[0] != 0.0);
        assert_eq!(d[0], -d[1]);
    }

    #[test]
    fn energy_values() {
        let spec = PotentialSpec::hk(30.0, 0.1).unwrap();
        let same = ParticleEnsemble::from_positions(vec![0.3; 17], 0).unwrap();
        assert!((same.interaction_energy(&spec) + 30.0 * 0.1 / 4.0).abs() < 1e-13);
        let spread = ParticleEnsemble::from_positions(vec![0.0, 0.25, 0.5, 0.75], 0).unwrap();
        assert!((spread.interaction_energy(&spec) + 30.0 * 0.1 / 16.0).abs() < 1e-15);
        let shifted = ParticleEnsemble::from_positions(vec![0.13, 0.38, 0.63, 0.88], 0).unwrap();
        assert!((shifted.interaction_energy(&spec) - spread.interaction_energy(&spec)).abs() < 1e-15);
    }

    #[test]
    fn detect_two_clusters() {
        let c = detect_clusters(&[0.1, 0.11, 0.6, 0.61], 0.16);
        assert_eq!(c.len(), 2);
        assert_eq!(c.masses, vec![0.5, 0.5]);
        assert!((c.centers[0] - 0.105).abs() < 1e-12 && (c.centers[1] - 0.605).abs() < 1e-12);
        let p = detect_clusters(&[0.61, 0.1, 0.6, 0.11], 0.16);
        assert_eq!(p.centers, c.centers);
    }

    #[test]
    fn detect_wrapping_cluster() {
        let c = detect_clusters(&[0.98, 0.01, 0.02, 0.5], 0.1);
        assert_eq!(c.len(), 2);
        let big = c.masses.iter().position(|&m| m == 0.75).unwrap();
        assert!(torus::signed(c.centers[big] - 0.0033333333).abs() < 1e-4);
    }

    #[test]
    fn detect_single_cluster() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let c = detect_clusters(&xs, 0.05);
        assert_eq!(c.len(), 1);
        assert_eq!(c.masses, vec![1.0]);
    }

    #[test]
    fn iid_sampling_respects_density() {
        let rho = DensityField::indicator(0.2, 0.4, 50).unwrap();
        let e = ParticleEnsemble::sample_initial(InitialKind::Iid(&rho), 10_000, 3).unwrap();
        assert!(e.positions.iter().all(|&x| (0.2..=0.4).contains(&x)));
        let mean: f64 = e.positions.iter().sum::<f64>() / 1e4;
        assert!((mean - 0.3).abs() < 0.003);
    }
}
