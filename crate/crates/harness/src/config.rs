//! Experiment configuration: presets with figure parameters, overridable from TOML.

use std::path::{Path, PathBuf};

use clusterlab::pde::ConvolutionMethod;
use clusterlab::reduced::ReducedMode;
use clusterlab::{PotentialFamily, PotentialSpec};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExperimentKind {
    #[serde(rename = "fig1_particles")]
    Fig1Particles,
    #[serde(rename = "fig1_pde")]
    Fig1Pde,
    #[serde(rename = "fig2_coalescence")]
    Fig2Coalescence,
    #[serde(rename = "fig3_mass_exchange")]
    Fig3MassExchange,
    #[serde(rename = "fig4_metastability")]
    Fig4Metastability,
    #[serde(rename = "fig5_comparison")]
    Fig5Comparison,
    #[serde(rename = "fig6_steady_state")]
    Fig6SteadyState,
    #[serde(rename = "fig7_bifurcation")]
    Fig7Bifurcation,
    #[serde(rename = "fig8_landscape")]
    Fig8Landscape,
    #[serde(rename = "figPP_comparison")]
    FigPpComparison,
    #[serde(rename = "custom")]
    Custom,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 11] = [
        ExperimentKind::Fig1Particles,
        ExperimentKind::Fig1Pde,
        ExperimentKind::Fig2Coalescence,
        ExperimentKind::Fig3MassExchange,
        ExperimentKind::Fig4Metastability,
        ExperimentKind::Fig5Comparison,
        ExperimentKind::Fig6SteadyState,
        ExperimentKind::Fig7Bifurcation,
        ExperimentKind::Fig8Landscape,
        ExperimentKind::FigPpComparison,
        ExperimentKind::Custom,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Fig1Particles => "fig1_particles",
            ExperimentKind::Fig1Pde => "fig1_pde",
            ExperimentKind::Fig2Coalescence => "fig2_coalescence",
            ExperimentKind::Fig3MassExchange => "fig3_mass_exchange",
            ExperimentKind::Fig4Metastability => "fig4_metastability",
            ExperimentKind::Fig5Comparison => "fig5_comparison",
            ExperimentKind::Fig6SteadyState => "fig6_steady_state",
            ExperimentKind::Fig7Bifurcation => "fig7_bifurcation",
            ExperimentKind::Fig8Landscape => "fig8_landscape",
            ExperimentKind::FigPpComparison => "figPP_comparison",
            ExperimentKind::Custom => "custom",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    /// `hk`, `piecewise_parabolic` or `tabulated`.
    pub family: String,
    pub gamma: f64,
    pub ell: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    /// Two-column CSV `(x, w)` on `[0, s_w]` for the tabulated family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
    /// Curvature `w''(0)` of the tabulated profile.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wpp0: Option<f64>,
}

impl PotentialConfig {
    pub fn hk(gamma: f64, ell: f64) -> Self {
        Self { family: "hk".into(), gamma, ell, alpha: None, beta: None, a: None, table: None, wpp0: None }
    }

    pub fn family(&self) -> Result<PotentialFamily> {
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| HarnessError::Config(format!("potential.{name} is required for family {}", self.family)));
        Ok(match self.family.as_str() {
            "hk" => PotentialFamily::hegselmann_krause(),
            "piecewise_parabolic" => PotentialFamily::piecewise_parabolic(need(self.alpha, "alpha")?, need(self.beta, "beta")?, need(self.a, "a")?)?,
            "tabulated" => {
                let path = self.table.as_ref().ok_or_else(|| HarnessError::Config("potential.table is required for family tabulated".into()))?;
                PotentialFamily::tabulated_from_csv(path, need(self.wpp0, "wpp0")?)?
            }
            other => return Err(HarnessError::Config(format!("unknown potential family {other:?}"))),
        })
    }

    pub fn spec(&self) -> Result<PotentialSpec> {
        Ok(PotentialSpec::new(self.family()?, self.gamma, self.ell)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleConfig {
    pub n: usize,
    pub t_end: f64,
    /// Defaults to the scaled step of the coalescence figure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub record_interval: f64,
    /// `grid` (`X_i = i / N`) or `uniform_iid`.
    pub init: String,
    /// Cluster detection gap; defaults to twice the interaction radius.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    pub m_cells: usize,
    pub t_end: f64,
    pub output_interval: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// `fft` or `direct`.
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steady_tol: Option<f64>,
    /// `indicator` (`(100/98) chi_[0.01, 0.99]`), `mixture`, `uniform` or `cosine`.
    pub init: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub centers: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masses: Option<Vec<f64>>,
    /// Amplitude and mode index of the `cosine` start.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<usize>,
    /// Write every `snapshot_stride`-th profile; masses and energies are written at every output.
    pub snapshot_stride: usize,
    /// Stop once a single region holds more than the dissolution mass.
    pub stop_at_collapse: bool,
    /// Evaluate the free energy after every step (about doubles the cost).
    #[serde(default)]
    pub check_every_step: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationaryConfig {
    pub m_cells: usize,
    /// `newton` or `picard`.
    pub method: String,
    pub damping: f64,
    pub tol: f64,
    /// Branch grid from `gamma_start` down (or up) to `gamma_stop`; empty step means a single solve.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_step: Option<f64>,
}

impl StationaryConfig {
    pub fn gamma_grid(&self) -> Option<Vec<f64>> {
        let (a, b, s) = (self.gamma_start?, self.gamma_stop?, self.gamma_step?.abs());
        if !(s > 0.0) {
            return None;
        }
        let n = ((a - b).abs() / s + 1e-9).floor() as usize;
        let dir = if b < a { -1.0 } else { 1.0 };
        Some((0..=n).map(|i| a + dir * s * i as f64).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReducedConfig {
    pub centers: Vec<f64>,
    pub masses: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_particles: Option<usize>,
    pub t_end: f64,
    /// `ode`, `ode+bm`, `gillespie` or `gillespie+bm`.
    pub mode: String,
    pub dt_bm: f64,
    pub merge_factor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_interval: Option<f64>,
    /// Dissolution threshold; defaults to `1 / (gamma ell w''(0))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dissolve_mass: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeConfig {
    pub m_cells: usize,
    pub m1_points: usize,
    pub d_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Wall-clock seconds between PDE checkpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_interval: Option<f64>,
    pub potential: PotentialConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<ParticleConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pde: Option<PdeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationary: Option<StationaryConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reduced: Option<ReducedConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landscape: Option<LandscapeConfig>,
}

fn pde_section(m_cells: usize, t_end: f64, output_interval: f64, init: &str) -> PdeConfig {
    PdeConfig {
        m_cells,
        t_end,
        output_interval,
        dt: None,
        method: "fft".into(),
        steady_tol: None,
        init: init.into(),
        centers: None,
        masses: None,
        amplitude: None,
        mode: None,
        snapshot_stride: 1,
        stop_at_collapse: false,
        check_every_step: false,
    }
}

fn mixture(mut pde: PdeConfig, centers: &[f64], masses: &[f64]) -> PdeConfig {
    pde.centers = Some(centers.to_vec());
    pde.masses = Some(masses.to_vec());
    pde
}

fn ode_section(centers: &[f64], masses: &[f64], t_end: f64) -> ReducedConfig {
    ReducedConfig {
        centers: centers.to_vec(),
        masses: masses.to_vec(),
        n_particles: None,
        t_end,
        mode: "ode".into(),
        dt_bm: 1e-3,
        merge_factor: 1.0,
        record_interval: None,
        dissolve_mass: None,
    }
}

const FIG3_CENTERS: [f64; 3] = [0.1, 0.3, 0.7];
const FIG3_MASSES: [f64; 3] = [0.2, 0.3, 0.5];
const PP_CENTERS: [f64; 3] = [1.0 / 6.0, 0.5, 5.0 / 6.0];
const PP_MASSES: [f64; 3] = [0.1, 0.3, 0.6];

impl ExperimentConfig {
    /// Parameters of the corresponding figure.
    pub fn preset(kind: ExperimentKind) -> Self {
        let base = |potential: PotentialConfig| Self {
            experiment: kind,
            seeds: Vec::new(),
            threads: None,
            checkpoint_interval: None,
            potential,
            particles: None,
            pde: None,
            stationary: None,
            reduced: None,
            landscape: None,
        };
        let pp = PotentialConfig {
            family: "piecewise_parabolic".into(),
            alpha: Some(1.0),
            beta: Some(3.0),
            a: Some(0.5),
            ..PotentialConfig::hk(500.0, 0.05)
        };
        match kind {
            ExperimentKind::Fig1Particles => Self {
                seeds: vec![1],
                particles: Some(ParticleConfig { n: 500, t_end: 0.1, dt: None, record_interval: 0.005, init: "grid".into(), gap: None }),
                ..base(PotentialConfig::hk(1e4, 0.1))
            },
            ExperimentKind::Fig1Pde => Self { pde: Some(pde_section(512, 0.1, 0.005, "indicator")), ..base(PotentialConfig::hk(1e4, 0.1)) },
            ExperimentKind::Fig2Coalescence => Self {
                seeds: vec![1],
                particles: Some(ParticleConfig { n: 50, t_end: 2.0, dt: Some(5e-5), record_interval: 0.01, init: "grid".into(), gap: None }),
                ..base(PotentialConfig::hk(2000.0, 0.08))
            },
            ExperimentKind::Fig3MassExchange => {
                let mut pde = mixture(pde_section(512, 40.0, 0.05, "mixture"), &FIG3_CENTERS, &FIG3_MASSES);
                pde.snapshot_stride = 20;
                Self { pde: Some(pde), checkpoint_interval: Some(300.0), ..base(PotentialConfig::hk(1000.0, 0.05)) }
            }
            ExperimentKind::Fig4Metastability => {
                let mut pde = mixture(pde_section(512, 100.0, 0.5, "mixture"), &[0.25, 0.75], &[0.45, 0.55]);
                pde.snapshot_stride = 10;
                pde.stop_at_collapse = true;
                Self {
                    pde: Some(pde),
                    reduced: Some(ode_section(&[0.25, 0.75], &[0.45, 0.55], 1e4)),
                    checkpoint_interval: Some(300.0),
                    ..base(PotentialConfig::hk(1000.0, 0.05))
                }
            }
            ExperimentKind::Fig5Comparison | ExperimentKind::FigPpComparison => {
                let (potential, centers, masses) = if kind == ExperimentKind::Fig5Comparison {
                    (PotentialConfig::hk(1000.0, 0.05), &FIG3_CENTERS, &FIG3_MASSES)
                } else {
                    (pp, &PP_CENTERS, &PP_MASSES)
                };
                let mut pde = mixture(pde_section(512, 200.0, 0.05, "mixture"), centers, masses);
                pde.snapshot_stride = 100;
                pde.stop_at_collapse = true;
                Self {
                    pde: Some(pde),
                    reduced: Some(ode_section(centers, masses, 1e4)),
                    checkpoint_interval: Some(300.0),
                    ..base(potential)
                }
            }
            ExperimentKind::Fig6SteadyState => Self {
                stationary: Some(StationaryConfig { m_cells: 1024, method: "newton".into(), damping: 0.5, tol: 1e-11, gamma_start: None, gamma_stop: None, gamma_step: None }),
                ..base(PotentialConfig::hk(100.0, 0.5))
            },
            ExperimentKind::Fig7Bifurcation => Self {
                stationary: Some(StationaryConfig {
                    m_cells: 256,
                    method: "newton".into(),
                    damping: 0.5,
                    tol: 1e-11,
                    gamma_start: Some(300.0),
                    gamma_stop: Some(100.0),
                    gamma_step: Some(2.0),
                }),
                ..base(PotentialConfig::hk(300.0, 0.1))
            },
            ExperimentKind::Fig8Landscape => Self {
                landscape: Some(LandscapeConfig { m_cells: 512, m1_points: 41, d_points: 41 }),
                ..base(PotentialConfig::hk(150.0, 0.1))
            },
            ExperimentKind::Custom => base(PotentialConfig::hk(100.0, 0.1)),
        }
    }

    /// Reads a TOML experiment file (overrides on top of the preset named by `experiment`)
    /// or the `config` entry of a JSON manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let parse_err = |message: String| HarnessError::Parse { path: path.to_path_buf(), message };
        if path.extension().is_some_and(|e| e == "json") {
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| parse_err(e.to_string()))?;
            let config = value.get("config").cloned().ok_or_else(|| parse_err("manifest has no config entry".into()))?;
            return serde_json::from_value(config).map_err(|e| parse_err(e.to_string()));
        }
        Self::from_toml_str(&text).map_err(|e| match e {
            HarnessError::Config(message) => parse_err(message),
            other => other,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let name = user
            .get("experiment")
            .and_then(|v| v.as_str())
            .ok_or_else(|| HarnessError::Config("missing `experiment` key".into()))?;
        let kind = ExperimentKind::from_name(name).ok_or_else(|| HarnessError::Config(format!("unknown experiment {name:?}")))?;
        Self::preset(kind).with_overrides(user)
    }

    /// Deep-merges `overrides` into this configuration.
    pub fn with_overrides(&self, overrides: toml::Table) -> Result<Self> {
        let mut base = toml::Table::try_from(self).map_err(|e| HarnessError::Config(e.to_string()))?;
        merge(&mut base, overrides);
        toml::Value::Table(base).try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks every parameter against the preconditions of the module it feeds.
    pub fn validate(&self) -> Result<()> {
        let spec = self.potential.spec()?;
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if let Some(p) = &self.particles {
            if p.n == 0 || !(p.t_end >= 0.0) || !(p.record_interval > 0.0) {
                return bad("particles: need n >= 1, t_end >= 0 and record_interval > 0".into());
            }
            if p.dt.is_some_and(|dt| !(dt > 0.0)) {
                return bad("particles.dt must be positive".into());
            }
            if !matches!(p.init.as_str(), "grid" | "uniform_iid") {
                return bad(format!("particles.init {:?} is not grid or uniform_iid", p.init));
            }
            if self.seeds.is_empty() {
                return bad("particle experiments need at least one seed".into());
            }
        }
        if let Some(p) = &self.pde {
            if p.m_cells < 16 || !(p.t_end >= 0.0) || !(p.output_interval > 0.0) || p.snapshot_stride == 0 {
                return bad("pde: need m_cells >= 16, t_end >= 0, output_interval > 0, snapshot_stride >= 1".into());
            }
            p.method.parse::<ConvolutionMethod>()?;
            match p.init.as_str() {
                "indicator" | "uniform" => {}
                "cosine" => {
                    if p.amplitude.is_none() || p.mode.is_none() {
                        return bad("pde.init = cosine needs amplitude and mode".into());
                    }
                }
                "mixture" => {
                    if p.centers.is_none() || p.masses.is_none() {
                        return bad("pde.init = mixture needs centers and masses".into());
                    }
                    if !(spec.gamma > 0.0) {
                        return bad("pde.init = mixture needs gamma > 0 for the cluster widths".into());
                    }
                }
                other => return bad(format!("unknown pde.init {other:?}")),
            }
        }
        if let Some(s) = &self.stationary {
            if s.m_cells < 16 || !(s.tol > 0.0) || !(s.damping > 0.0 && s.damping <= 1.0) {
                return bad("stationary: need m_cells >= 16, tol > 0, damping in (0, 1]".into());
            }
            if !matches!(s.method.as_str(), "newton" | "picard") {
                return bad(format!("stationary.method {:?} is not newton or picard", s.method));
            }
        }
        if let Some(r) = &self.reduced {
            let mode: ReducedMode = r.mode.parse()?;
            clusterlab::ClusterConfiguration::new(r.centers.clone(), r.masses.clone())?;
            if mode != ReducedMode::Ode && (r.n_particles.is_none() || self.seeds.is_empty()) {
                return bad(format!("reduced mode {} needs n_particles and at least one seed", r.mode));
            }
            if !(r.t_end >= 0.0) || !(r.dt_bm > 0.0) || !(r.merge_factor > 0.0) || !(spec.gamma > 0.0) {
                return bad("reduced: need t_end >= 0, dt_bm > 0, merge_factor > 0 and gamma > 0".into());
            }
        }
        if let Some(l) = &self.landscape {
            if l.m_cells < 16 || l.m1_points < 2 || l.d_points < 2 {
                return bad("landscape: need m_cells >= 16 and at least two grid points per axis".into());
            }
            if !(spec.gamma > 0.0) {
                return bad("landscape: Gaussian cluster widths need gamma > 0".into());
            }
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        if self.checkpoint_interval.is_some_and(|c| !(c > 0.0)) {
            return bad("checkpoint_interval must be positive".into());
        }
        Ok(())
    }
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (key, value) in overrides {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for kind in ExperimentKind::ALL {
            assert_eq!(ExperimentKind::from_name(kind.name()), Some(kind));
        }
    }

    #[test]
    fn presets_validate_and_round_trip() {
        for kind in ExperimentKind::ALL {
            let preset = ExperimentConfig::preset(kind);
            preset.validate().unwrap();
            let back = ExperimentConfig::from_toml_str(&preset.to_toml()).unwrap();
            assert_eq!(back, preset);
        }
    }

    #[test]
    fn overrides_merge_into_tables() {
        let c = ExperimentConfig::from_toml_str("experiment = \"fig3_mass_exchange\"\n[pde]\nt_end = 0.5\n").unwrap();
        let pde = c.pde.unwrap();
        assert_eq!(pde.t_end, 0.5);
        assert_eq!(pde.m_cells, 512);
        assert_eq!(c.potential.gamma, 1000.0);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_toml_str("experiment = \"fig6_steady_state\"\n[stationary]\nbogus = 1\n").is_err());
        let c = ExperimentConfig::from_toml_str("experiment = \"custom\"\n[potential]\nell = 0.7\n").unwrap();
        assert!(matches!(c.validate(), Err(HarnessError::Core(_))));
        assert!(ExperimentConfig::from_toml_str("experiment = \"fig9\"").is_err());
    }

    #[test]
    fn branch_grid() {
        let s = ExperimentConfig::preset(ExperimentKind::Fig7Bifurcation).stationary.unwrap();
        let g = s.gamma_grid().unwrap();
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 300.0);
        assert_eq!(*g.last().unwrap(), 100.0);
    }
}
