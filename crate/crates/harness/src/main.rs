use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use clusterlab_harness::compare::{compare_masses, MassSeries};
use clusterlab_harness::config::{
    ExperimentConfig, ExperimentKind, LandscapeConfig, ParticleConfig, PdeConfig, PotentialConfig, ReducedConfig, StationaryConfig,
};
use clusterlab_harness::{run_experiment, HarnessError, Result};

#[derive(Parser)]
#[command(name = "clusterlab", version, about = "Clustering of interacting diffusions on the circle: simulations and reduced models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Seed for stochastic pipelines (repeatable).
    #[arg(long, global = true)]
    seed: Vec<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for seeds and grid points.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Wall-clock seconds between PDE checkpoints.
    #[arg(long, global = true)]
    checkpoint_interval: Option<f64>,
}

#[derive(Args, Clone)]
struct PotentialArgs {
    /// `hk`, `piecewise_parabolic` or `tabulated`.
    #[arg(long, default_value = "hk")]
    family: String,
    /// Interaction strength
    #[arg(long)]
    gamma: f64,
    /// Interaction length scale
    #[arg(long)]
    ell: f64,
    /// Piecewise-parabolic inner curvature
    #[arg(long)]
    alpha: Option<f64>,
    /// Piecewise-parabolic outer curvature
    #[arg(long)]
    beta: Option<f64>,
    /// Piecewise-parabolic breakpoint
    #[arg(long)]
    a: Option<f64>,
    /// Two-column CSV `(x, w)` on `[0, s_w]` for the tabulated family
    #[arg(long)]
    table: Option<PathBuf>,
    /// Curvature w''(0) of a tabulated profile
    #[arg(long)]
    wpp0: Option<f64>,
}

impl PotentialArgs {
    fn config(&self) -> PotentialConfig {
        PotentialConfig {
            family: self.family.clone(),
            gamma: self.gamma,
            ell: self.ell,
            alpha: self.alpha,
            beta: self.beta,
            a: self.a,
            table: self.table.clone(),
            wpp0: self.wpp0,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Growth rates, dominant mode and instability threshold.
    Spectral {
        #[command(flatten)]
        potential: PotentialArgs,
    },
    /// Euler–Maruyama particle system.
    Particles {
        #[command(flatten)]
        potential: PotentialArgs,
        #[arg(long)]
        n: usize,
        /// Final time
        #[arg(long)]
        t_end: f64,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, default_value_t = 0.01)]
        record_interval: f64,
        /// `grid` or `uniform_iid`.
        #[arg(long, default_value = "grid")]
        init: String,
    },
    /// Finite-volume solver of the mean-field PDE.
    Pde {
        #[command(flatten)]
        potential: PotentialArgs,
        #[arg(long, default_value_t = 512)]
        m_cells: usize,
        /// Final time
        #[arg(long)]
        t_end: f64,
        #[arg(long, default_value_t = 0.1)]
        output_interval: f64,
        #[arg(long)]
        dt: Option<f64>,
        /// `indicator`, `uniform`, `cosine` or `mixture`.
        #[arg(long, default_value = "indicator")]
        init: String,
        #[arg(long, value_delimiter = ',')]
        centers: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        masses: Option<Vec<f64>>,
        #[arg(long)]
        amplitude: Option<f64>,
        #[arg(long)]
        mode: Option<usize>,
        #[arg(long, default_value_t = 1)]
        snapshot_stride: usize,
    },
    /// Stationary states: a single solve, or a branch when a gamma range is given.
    Stationary {
        #[command(flatten)]
        potential: PotentialArgs,
        #[arg(long, default_value_t = 512)]
        m_cells: usize,
        #[arg(long, default_value = "newton")]
        method: String,
        #[arg(long, default_value_t = 0.5)]
        damping: f64,
        #[arg(long, default_value_t = 1e-11)]
        tol: f64,
        #[arg(long)]
        gamma_stop: Option<f64>,
        #[arg(long)]
        gamma_step: Option<f64>,
        /// Also tabulate the two-cluster free-energy landscape on this many points per axis.
        #[arg(long)]
        landscape_points: Option<usize>,
    },
    /// Reduced cluster model.
    Reduced {
        #[command(flatten)]
        potential: PotentialArgs,
        #[arg(long, value_delimiter = ',')]
        centers: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        masses: Vec<f64>,
        /// Final time
        #[arg(long)]
        t_end: f64,
        /// `ode`, `ode+bm`, `gillespie` or `gillespie+bm`.
        #[arg(long, default_value = "ode")]
        mode: String,
        #[arg(long)]
        n_particles: Option<usize>,
        #[arg(long, default_value_t = 1e-3)]
        dt_bm: f64,
        #[arg(long, default_value_t = 1.0)]
        merge_factor: f64,
        #[arg(long)]
        record_interval: Option<f64>,
    },
    /// Runs a named experiment, a TOML experiment file or a manifest.
    Experiment {
        /// Experiment name, `*.toml` config or `manifest.json`.
        target: String,
        /// Print the resolved configuration instead of running it.
        #[arg(long)]
        print_config: bool,
    },
    /// Compares two `(t, cluster, mass)` CSV series.
    Compare {
        pde: PathBuf,
        ode: PathBuf,
        /// Initial centers of the PDE clusters, in column order.
        #[arg(long, value_delimiter = ',')]
        pde_centers: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        ode_centers: Vec<f64>,
        #[arg(long)]
        dissolve_mass: f64,
    },
}

fn custom(potential: PotentialConfig) -> ExperimentConfig {
    ExperimentConfig { potential, ..ExperimentConfig::preset(ExperimentKind::Custom) }
}

/// Reads `t, cluster, mass` rows. A header picks the columns by name (`cluster` or
/// `region`, and `mass`); without one the first three columns are used.
fn read_series(path: &Path, centers: Vec<f64>) -> Result<MassSeries> {
    let text = std::fs::read_to_string(path)?;
    let err = |message: String| HarnessError::Parse { path: path.to_path_buf(), message };
    let mut lines = text.lines().enumerate().peekable();
    let mut cols = (0, 1, 2);
    if let Some((_, header)) = lines.peek() {
        let names: Vec<&str> = header.split(',').map(str::trim).collect();
        if names.first().is_some_and(|f| f.parse::<f64>().is_err()) {
            let find = |want: &[&str]| names.iter().position(|n| want.contains(n));
            cols = match (find(&["t"]), find(&["cluster", "region"]), find(&["mass"])) {
                (Some(t), Some(j), Some(m)) => (t, j, m),
                _ => return Err(err("header needs t, cluster (or region) and mass columns".into())),
            };
            lines.next();
        }
    }
    let mut times: Vec<f64> = Vec::new();
    let mut masses: Vec<Vec<f64>> = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |i: usize| fields.get(i).copied().unwrap_or("");
        let (Ok(t), Ok(j), Ok(m)) = (get(cols.0).parse::<f64>(), get(cols.1).parse::<usize>(), get(cols.2).parse::<f64>()) else {
            return Err(err(format!("line {}: expected t,cluster,mass", n + 1)));
        };
        if times.last() != Some(&t) {
            times.push(t);
            masses.push(vec![0.0; centers.len()]);
        }
        let row = masses.last_mut().unwrap();
        if j >= row.len() {
            return Err(HarnessError::LabelMismatch(format!("{}: cluster {j} but only {} centers", path.display(), centers.len())));
        }
        row[j] = m;
    }
    MassSeries::new(centers, times, masses)
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match cli.command {
        Command::Spectral { potential } => custom(potential.config()),
        Command::Particles { potential, n, t_end, dt, record_interval, init } => ExperimentConfig {
            particles: Some(ParticleConfig { n, t_end, dt, record_interval, init, gap: None }),
            seeds: vec![1],
            ..custom(potential.config())
        },
        Command::Pde { potential, m_cells, t_end, output_interval, dt, init, centers, masses, amplitude, mode, snapshot_stride } => {
            ExperimentConfig {
                pde: Some(PdeConfig {
                    m_cells,
                    t_end,
                    output_interval,
                    dt,
                    method: "fft".into(),
                    steady_tol: None,
                    init,
                    centers,
                    masses,
                    amplitude,
                    mode,
                    snapshot_stride,
                    stop_at_collapse: false,
                    check_every_step: false,
                }),
                ..custom(potential.config())
            }
        }
        Command::Stationary { potential, m_cells, method, damping, tol, gamma_stop, gamma_step, landscape_points } => {
            let gamma = potential.gamma;
            ExperimentConfig {
                stationary: Some(StationaryConfig {
                    m_cells,
                    method,
                    damping,
                    tol,
                    gamma_start: gamma_stop.map(|_| gamma),
                    gamma_stop,
                    gamma_step,
                }),
                landscape: landscape_points.map(|n| LandscapeConfig { m_cells, m1_points: n, d_points: n }),
                ..custom(potential.config())
            }
        }
        Command::Reduced { potential, centers, masses, t_end, mode, n_particles, dt_bm, merge_factor, record_interval } => {
            ExperimentConfig {
                reduced: Some(ReducedConfig { centers, masses, n_particles, t_end, mode, dt_bm, merge_factor, record_interval, dissolve_mass: None }),
                seeds: vec![1],
                ..custom(potential.config())
            }
        }
        Command::Experiment { target, print_config } => {
            let config = match ExperimentKind::from_name(&target) {
                Some(kind) => ExperimentConfig::preset(kind),
                None => ExperimentConfig::load(Path::new(&target))?,
            };
            if print_config {
                print!("{}", config.to_toml());
                return Ok(());
            }
            config
        }
        Command::Compare { pde, ode, pde_centers, ode_centers, dissolve_mass } => {
            let report = compare_masses(&read_series(&pde, pde_centers)?, &read_series(&ode, ode_centers)?, dissolve_mass)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            return Ok(());
        }
    };
    if !cli.seed.is_empty() {
        config.seeds = cli.seed;
    }
    if cli.threads.is_some() {
        config.threads = cli.threads;
    }
    if cli.checkpoint_interval.is_some() {
        config.checkpoint_interval = cli.checkpoint_interval;
    }
    let manifest = run_experiment(&config, &cli.out)?;
    eprintln!("{}: {} files in {} ({:.2} s)", manifest.experiment, manifest.outputs.len(), cli.out.display(), manifest.wall_time_seconds);
    println!("{}", serde_json::to_string_pretty(&manifest.summary)?);
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
