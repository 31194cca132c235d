//! Cluster configurations shared by the particle, PDE and reduced descriptions.

use crate::error::{Error, Result};
use crate::torus;

/// Cyclically ordered clusters on the torus with masses summing to one.
///
/// `labels` identify clusters across merges and dissolutions; a merged cluster
/// keeps the label of the heavier partner.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterConfiguration {
    pub centers: Vec<f64>,
    pub masses: Vec<f64>,
    pub labels: Vec<usize>,
    pub n_particles: Option<usize>,
    pub time: f64,
}

pub const MASS_TOLERANCE: f64 = 1e-12;

impl ClusterConfiguration {
    /// Sorts clusters by center; labels are the input positions.
    pub fn new(centers: Vec<f64>, masses: Vec<f64>) -> Result<Self> {
        let labels = (0..centers.len()).collect();
        Self::with_labels(centers, masses, labels)
    }

    pub fn with_labels(centers: Vec<f64>, masses: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if centers.is_empty() || centers.len() != masses.len() || labels.len() != masses.len() {
            return Err(Error::Geometry("need matching, nonempty centers, masses and labels".into()));
        }
        if masses.iter().any(|&m| !(m > 0.0 && m <= 1.0 + MASS_TOLERANCE)) {
            return Err(Error::Geometry(format!("masses must lie in (0, 1], got {masses:?}")));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Geometry(format!("masses must sum to 1, got {total}")));
        }
        let mut order: Vec<usize> = (0..centers.len()).collect();
        let wrapped: Vec<f64> = centers.iter().map(|&c| torus::wrap(c)).collect();
        order.sort_by(|&a, &b| wrapped[a].total_cmp(&wrapped[b]));
        Ok(Self {
            centers: order.iter().map(|&i| wrapped[i]).collect(),
            masses: order.iter().map(|&i| masses[i]).collect(),
            labels: order.iter().map(|&i| labels[i]).collect(),
            n_particles: None,
            time: 0.0,
        })
    }

    pub fn with_particles(mut self, n: usize) -> Self {
        self.n_particles = Some(n);
        self
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// Cyclic left neighbor index.
    #[inline]
    pub fn left(&self, j: usize) -> usize {
        (j + self.len() - 1) % self.len()
    }

    /// Cyclic right neighbor index.
    #[inline]
    pub fn right(&self, j: usize) -> usize {
        (j + 1) % self.len()
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Mass-weighted circular mean of the centers.
    pub fn mass_center(&self) -> Option<f64> {
        torus::circular_mean(self.centers.iter().copied().zip(self.masses.iter().copied()))
    }

    /// Index of the cluster with a given label.
    pub fn index_of(&self, label: usize) -> Option<usize> {
        self.labels.iter().position(|&l| l == label)
    }

    /// Restores the cyclic order after centers moved.
    pub fn resort(&mut self) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.centers[a].total_cmp(&self.centers[b]));
        self.centers = order.iter().map(|&i| self.centers[i]).collect();
        self.masses = order.iter().map(|&i| self.masses[i]).collect();
        self.labels = order.iter().map(|&i| self.labels[i]).collect();
    }

    /// Removes cluster `j` and returns `(center, mass, label)`.
    pub(crate) fn remove(&mut self, j: usize) -> (f64, f64, usize) {
        (self.centers.remove(j), self.masses.remove(j), self.labels.remove(j))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_and_labeled() {
        let c = ClusterConfiguration::new(vec![0.7, 0.1, 1.3], vec![0.5, 0.2, 0.3]).unwrap();
        assert_eq!(c.labels, vec![1, 2, 0]);
        assert!((c.centers[1] - 0.3).abs() < 1e-15);
        assert_eq!(c.left(0), 2);
        assert_eq!(c.right(2), 0);
    }

    #[test]
    fn rejects_bad_masses() {
        assert!(ClusterConfiguration::new(vec![0.1, 0.2], vec![0.5, 0.6]).is_err());
        assert!(ClusterConfiguration::new(vec![0.1, 0.2], vec![1.0, 0.0]).is_err());
        assert!(ClusterConfiguration::new(vec![], vec![]).is_err());
    }
}
