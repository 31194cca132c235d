//! Pipelines behind each experiment and the artifacts they write.
//!
//! An experiment runs every section present in its configuration: spectral
//! summary, particles, PDE, stationary states, reduced model and free-energy
//! landscape. When both a mixture-initialized PDE and the reduced ODE are
//! present their cluster masses are compared.

use std::cell::RefCell;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use clusterlab::particle::{self, InitialKind, ParticleEnsemble};
use clusterlab::pde::{self, ConvolutionMethod, DensityField, PdeRunConfig};
use clusterlab::reduced::{run_reduced, OdeOptions, RateParams, ReducedMode, ReducedOptions, ReducedTrajectory};
use clusterlab::spectral::SpectralReport;
use clusterlab::stationary::{self, SolverMethod, SolverOptions};
use clusterlab::{ClusterConfiguration, PotentialSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::checkpoint::Checkpointer;
use crate::compare::{compare_masses, MassSeries, RegionTracker};
use crate::config::{ExperimentConfig, LandscapeConfig, ParticleConfig, PdeConfig, ReducedConfig, StationaryConfig};
use crate::error::{HarnessError, Result};
use crate::manifest::{sha256_str, Manifest, OutputFile, MANIFEST_FILE};

/// Knobs that change how, not what, an experiment computes.
#[derive(Clone, Copy, Debug, Default)]
pub struct RunControl {
    /// Stop the PDE after this many output intervals, leaving a checkpoint behind.
    pub max_pde_outputs: Option<u64>,
}

/// Runs `config`, writes its artifacts and `manifest.json` into `out`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<Manifest> {
    run_experiment_with(config, out, RunControl::default())
}

pub fn run_experiment_with(config: &ExperimentConfig, out: &Path, control: RunControl) -> Result<Manifest> {
    run_inner(config, out, control).map_err(|e| match e {
        HarnessError::Interrupted { .. } => e,
        other => HarnessError::Experiment { experiment: config.experiment.name().to_string(), source: Box::new(other) },
    })
}

struct Outputs {
    files: Vec<String>,
    summary: Map<String, Value>,
    notes: Vec<String>,
}

fn csv(dir: &Path, name: &str, header: &str) -> Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    writeln!(w, "{header}")?;
    Ok(w)
}

fn run_inner(config: &ExperimentConfig, out: &Path, control: RunControl) -> Result<Manifest> {
    config.validate()?;
    std::fs::create_dir_all(out)?;
    let start = Instant::now();
    let spec = config.potential.spec()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| HarnessError::Config(e.to_string()))?;
    let mut outputs = Outputs { files: Vec::new(), summary: Map::new(), notes: Vec::new() };

    spectral_section(&spec, config, out, &mut outputs)?;
    if let Some(p) = &config.particles {
        particle_section(&spec, p, &config.seeds, &pool, out, &mut outputs)?;
    }
    let pde_series = match &config.pde {
        Some(p) => Some(pde_section(&spec, p, config, out, control, &mut outputs)?),
        None => None,
    };
    if let Some(s) = &config.stationary {
        stationary_section(&spec, s, out, &mut outputs)?;
    }
    let ode = match &config.reduced {
        Some(r) => reduced_section(&spec, r, &config.seeds, &pool, out, &mut outputs)?,
        None => None,
    };
    if let (Some(series), Some((traj, eps)), Some(p)) = (&pde_series, &ode, &config.pde) {
        if p.init == "mixture" {
            comparison_section(series, traj, *eps, out, &mut outputs)?;
        }
    }
    if let Some(l) = &config.landscape {
        landscape_section(&spec, l, out, &mut outputs)?;
    }

    outputs.files.sort();
    outputs.files.dedup();
    let files = outputs.files.iter().map(|f| OutputFile::hash(out, f)).collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        experiment: config.experiment.name().to_string(),
        config: config.clone(),
        seeds: config.seeds.clone(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        outputs: files,
        summary: outputs.summary,
        notes: outputs.notes,
    };
    debug_assert!(!manifest.outputs.iter().any(|o| o.path == MANIFEST_FILE));
    manifest.write(out)?;
    Ok(manifest)
}

fn opt(x: Option<f64>) -> Value {
    x.map_or(Value::Null, |v| json!(v))
}

fn spectral_section(spec: &PotentialSpec, config: &ExperimentConfig, out: &Path, outputs: &mut Outputs) -> Result<()> {
    let n = config.particles.as_ref().map(|p| p.n);
    let report = SpectralReport::compute(spec, None, 1e-2, n);
    let mut w = csv(out, "spectral.csv", "k,psi")?;
    for (k, psi) in &report.modes {
        writeln!(w, "{k},{psi}")?;
    }
    w.flush()?;
    outputs.files.push("spectral.csv".into());
    outputs.summary.insert(
        "spectral".into(),
        json!({
            "k_max": opt(report.k_max),
            "psi_max": opt(report.psi_max),
            "gamma_sharp": opt(report.gamma_sharp),
            "n_clusters": report.n_clusters,
            "t_clustering": opt(report.t_clustering),
        }),
    );
    Ok(())
}

fn particle_section(
    spec: &PotentialSpec,
    p: &ParticleConfig,
    seeds: &[u64],
    pool: &rayon::ThreadPool,
    out: &Path,
    outputs: &mut Outputs,
) -> Result<()> {
    let dt = p.dt.unwrap_or_else(|| particle::default_dt(spec));
    let n_steps = (p.t_end / dt).round() as u64;
    let every = ((p.record_interval / dt).round() as u64).max(1);
    let gap = p.gap.unwrap_or_else(|| particle::default_gap(spec));
    let kind = if p.init == "grid" { InitialKind::Grid } else { InitialKind::UniformIid };
    let results: Vec<Result<(Vec<String>, Value)>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let mut ens = ParticleEnsemble::sample_initial(kind, p.n, seed)?;
                let names = [format!("particles_seed{seed}.csv"), format!("clusters_seed{seed}.csv"), format!("order_seed{seed}.csv")];
                let mut pos = csv(out, &names[0], "t,particle,x")?;
                let mut clu = csv(out, &names[1], "t,cluster,center,mass")?;
                let mut ord = csv(out, &names[2], "t,n_clusters,max_mass,interaction_energy")?;
                let mut record = |ens: &ParticleEnsemble| -> Result<usize> {
                    particle::write_positions_csv(&mut pos, ens)?;
                    let c = ens.detect_clusters(gap);
                    particle::write_clusters_csv(&mut clu, &c)?;
                    let max_mass = c.masses.iter().cloned().fold(0.0, f64::max);
                    writeln!(ord, "{},{},{max_mass},{}", ens.time, c.len(), ens.interaction_energy(spec))?;
                    Ok(c.len())
                };
                record(&ens)?;
                let mut clusters = 0;
                for step in 1..=n_steps {
                    ens.em_step(spec, dt);
                    if step % every == 0 || step == n_steps {
                        clusters = record(&ens)?;
                    }
                }
                pos.flush()?;
                clu.flush()?;
                ord.flush()?;
                Ok((names.to_vec(), json!({"seed": seed, "final_clusters": clusters, "t_end": ens.time})))
            })
            .collect()
    });
    let mut per_seed = Vec::new();
    for r in results {
        let (names, summary) = r?;
        outputs.files.extend(names);
        per_seed.push(summary);
    }
    outputs.summary.insert("particles".into(), json!({"dt": dt, "steps": n_steps, "gap": gap, "seeds": per_seed}));
    Ok(())
}

/// Initial density of a PDE section.
pub fn pde_initial(spec: &PotentialSpec, p: &PdeConfig) -> Result<DensityField> {
    let m = p.m_cells;
    Ok(match p.init.as_str() {
        "indicator" => DensityField::indicator(0.01, 0.99, m)?,
        "uniform" => DensityField::uniform(m),
        "cosine" => {
            let (a, n) = (p.amplitude.unwrap_or(0.0), p.mode.unwrap_or(1) as f64);
            let h = 1.0 / m as f64;
            // Exact cell averages of 1 + a cos(2 pi n x).
            let k = std::f64::consts::TAU * n;
            let values = (0..m).map(|i| 1.0 + a * ((k * (i + 1) as f64 * h).sin() - (k * i as f64 * h).sin()) / (k * h)).collect();
            DensityField::from_values(values)?
        }
        "mixture" => {
            let clusters = ClusterConfiguration::new(p.centers.clone().unwrap_or_default(), p.masses.clone().unwrap_or_default())?;
            pde::gaussian_mixture_init(&clusters, spec, m)?
        }
        other => return Err(HarnessError::Config(format!("unknown pde.init {other:?}"))),
    })
}

/// Running diagnostics of a PDE run, carried through checkpoints.
#[derive(serde::Serialize, serde::Deserialize)]
struct PdeMonitor {
    tracker: RegionTracker,
    mass0: f64,
    max_mass_drift: f64,
    min_rho: f64,
    steps: u64,
    dt_min: f64,
    /// Free energy after the last step; only tracked with `check_every_step`.
    last_energy: Option<f64>,
    /// Largest `(F_new - F_old) / (1 + |F_old|)` over single steps.
    max_step_energy_increase: Option<f64>,
}

impl PdeMonitor {
    fn observe(&mut self, rho: &DensityField) {
        self.max_mass_drift = self.max_mass_drift.max((rho.mass() - self.mass0).abs());
        self.min_rho = rho.values().iter().cloned().fold(self.min_rho, f64::min);
    }
}

const PDE_FILES: [&str; 3] = ["pde_density.csv", "pde_energy.csv", "pde_masses.csv"];

fn pde_section(
    spec: &PotentialSpec,
    p: &PdeConfig,
    config: &ExperimentConfig,
    out: &Path,
    control: RunControl,
    outputs: &mut Outputs,
) -> Result<MassSeries> {
    let rho0 = pde_initial(spec, p)?;
    let method: ConvolutionMethod = p.method.parse()?;
    let run = PdeRunConfig {
        spec: spec.clone(),
        m_cells: p.m_cells,
        dt: p.dt,
        t_start: 0.0,
        t_end: p.t_end,
        output_interval: p.output_interval,
        method,
        steady_tol: p.steady_tol,
    };
    let eps = if spec.gamma > 0.0 { RateParams::new(spec.clone()).dissolve_mass } else { f64::INFINITY };
    let mut checkpoints = Checkpointer::new(out, config.checkpoint_interval, sha256_str(&config.to_toml()));

    let (start_rho, start_outputs, monitor, resumed) = match checkpoints.resume()? {
        Some((sidecar, rho)) => {
            let monitor: PdeMonitor = serde_json::from_value(sidecar.state)?;
            (rho, sidecar.completed_outputs, monitor, true)
        }
        None => {
            for (name, header) in PDE_FILES.iter().zip(["t,cell,rho", "t,free_energy,entropy,interaction", "t,region,mass"]) {
                csv(out, name, header)?.flush()?;
            }
            let cuts = pde::density_boundaries(&rho0, pde::DEFAULT_PROMINENCE);
            let mut monitor = PdeMonitor {
                tracker: RegionTracker::new(&cuts, &rho0),
                mass0: rho0.mass(),
                max_mass_drift: 0.0,
                min_rho: f64::INFINITY,
                steps: 0,
                dt_min: f64::INFINITY,
                last_energy: None,
                max_step_energy_increase: None,
            };
            monitor.observe(&rho0);
            (rho0.clone(), 0, monitor, false)
        }
    };
    let append = |name: &str| -> Result<BufWriter<File>> {
        Ok(BufWriter::new(std::fs::OpenOptions::new().append(true).open(out.join(name))?))
    };
    let (mut dens, mut energy, mut masses) = (append(PDE_FILES[0])?, append(PDE_FILES[1])?, append(PDE_FILES[2])?);

    // Both callbacks update the monitor; they never run at the same time.
    let monitor = RefCell::new(monitor);
    let mut rho = start_rho.clone();
    let mut done = start_outputs;
    let mut failure: Option<HarnessError> = None;
    let mut first = true;
    let mut collapsed = false;
    let mut interrupted = false;
    let on_step = |kernel: &pde::InteractionKernel, r: &DensityField, dt: f64| {
        let mut mon = monitor.borrow_mut();
        mon.steps += 1;
        mon.dt_min = mon.dt_min.min(dt);
        mon.observe(r);
        if p.check_every_step {
            let f = pde::free_energy(r, kernel).total;
            if let Some(prev) = mon.last_energy {
                let rel = (f - prev) / (1.0 + prev.abs());
                mon.max_step_energy_increase = Some(mon.max_step_energy_increase.map_or(rel, |m| m.max(rel)));
            }
            mon.last_energy = Some(f);
        }
    };
    let (_, _, steady) = pde::run_pde_stepwise(&start_rho, start_outputs, &run, on_step, |s| {
        // The first call reports the starting state; every later one completes an output interval.
        let is_repeat = first && resumed;
        if !first {
            done += 1;
        }
        first = false;
        let mut handle = || -> Result<bool> {
            let mut mon = monitor.borrow_mut();
            if p.check_every_step && mon.last_energy.is_none() {
                mon.last_energy = Some(s.energy.total);
            }
            if !is_repeat {
                writeln!(energy, "{},{},{},{}", s.t, s.energy.total, s.energy.entropy, s.energy.interaction)?;
                let m = mon.tracker.record(s.t, &s.rho);
                for (j, x) in m.iter().enumerate() {
                    writeln!(masses, "{},{j},{x}", s.t)?;
                }
                if done % p.snapshot_stride as u64 == 0 {
                    pde::write_snapshot_csv(&mut dens, s.t, &s.rho)?;
                }
                rho = s.rho.clone();
                if p.stop_at_collapse && mon.tracker.n_regions() > 1 && m.iter().filter(|&&x| x >= eps).count() <= 1 {
                    collapsed = true;
                    return Ok(false);
                }
            }
            if control.max_pde_outputs.is_some_and(|limit| done >= limit) {
                interrupted = true;
                return Ok(false);
            }
            if checkpoints.due() {
                for w in [&mut dens, &mut energy, &mut masses] {
                    w.flush()?;
                }
                checkpoints.write(&rho, s.t, done, &PDE_FILES, serde_json::to_value(&*mon)?)?;
            }
            Ok(true)
        };
        match handle() {
            Ok(go) => go,
            Err(e) => {
                failure = Some(e);
                false
            }
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    for w in [&mut dens, &mut energy, &mut masses] {
        w.flush()?;
    }
    let monitor = monitor.into_inner();
    let series = monitor.tracker.series()?;
    let t_final = series.times.last().copied().unwrap_or(0.0);
    if interrupted {
        checkpoints.write(&rho, t_final, done, &PDE_FILES, serde_json::to_value(&monitor)?)?;
        return Err(HarnessError::Interrupted { completed_outputs: done });
    }
    checkpoints.clear()?;

    let mut bin = BufWriter::new(File::create(out.join("pde_final.mvpd"))?);
    pde::write_binary(&mut bin, &rho, monitor.dt_min, t_final)?;
    bin.flush()?;
    outputs.files.extend(PDE_FILES.iter().map(|s| s.to_string()));
    outputs.files.push("pde_final.mvpd".into());
    outputs.summary.insert(
        "pde".into(),
        json!({
            "t_final": t_final,
            "steps": monitor.steps,
            "dt_min": monitor.dt_min,
            "steady": steady,
            "collapsed": collapsed,
            "max_mass_drift": monitor.max_mass_drift,
            "max_step_energy_increase": opt(monitor.max_step_energy_increase),
            "min_rho": monitor.min_rho,
            "regions": series.len(),
            "region_centers": series.centers,
            "final_region_masses": series.masses.last(),
        }),
    );
    Ok(series)
}

fn stationary_section(spec: &PotentialSpec, s: &StationaryConfig, out: &Path, outputs: &mut Outputs) -> Result<()> {
    let start_spec = match s.gamma_grid() {
        Some(grid) => spec.with_gamma(grid[0])?,
        None => spec.clone(),
    };
    let rho0 = if start_spec.gamma > 0.0 {
        pde::gaussian_mixture_init(&ClusterConfiguration::new(vec![0.5], vec![1.0])?, &start_spec, s.m_cells)?
    } else {
        DensityField::uniform(s.m_cells)
    };
    if let Some(grid) = s.gamma_grid() {
        let branch = stationary::continue_branch(&start_spec, &grid, &rho0)?;
        let mut w = csv(out, "branch.csv", "gamma,gap,l1_to_uniform,residual,iterations")?;
        stationary::write_branch_csv(&mut w, &branch)?;
        w.flush()?;
        outputs.files.push("branch.csv".into());
        let gamma_c = branch.gamma_c;
        outputs.summary.insert(
            "stationary".into(),
            json!({
                "gamma_c": opt(gamma_c),
                "gamma_sharp": opt(clusterlab::spectral::gamma_sharp(&spec.family, spec.ell).ok()),
                "branch_points": branch.points.len(),
                "branch_end": branch.points.last().map(|p| p.gamma),
            }),
        );
        return Ok(());
    }
    let method = if s.method == "picard" { SolverMethod::Picard { damping: s.damping } } else { SolverMethod::Newton };
    let state = stationary::solve_fixed_point(&rho0, spec, method, SolverOptions { tol: s.tol, max_iterations: None })?;
    let mut w = csv(out, "stationary.csv", "x,rho")?;
    for (i, v) in state.rho.values().iter().enumerate() {
        writeln!(w, "{},{v}", state.rho.cell_center(i))?;
    }
    w.flush()?;
    outputs.files.push("stationary.csv".into());
    let fit = stationary::gaussian_fit(&state.rho, 1e-3);
    let sym = stationary::symmetric_decreasing_check(&state.rho);
    outputs.summary.insert(
        "stationary".into(),
        json!({
            "residual": state.residual,
            "free_energy": state.free_energy,
            "iterations": state.iterations,
            "gaussian_variance": opt(fit.map(|f| f.variance)),
            "gaussian_center": opt(fit.map(|f| f.center)),
            "single_cluster": sym.is_single_cluster,
            "symmetric_deviation": sym.max_deviation,
        }),
    );
    Ok(())
}

fn write_trajectory(out: &Path, suffix: &str, traj: &ReducedTrajectory) -> Result<[String; 2]> {
    let names = [format!("reduced{suffix}.csv"), format!("reduced_events{suffix}.csv")];
    let mut w = csv(out, &names[0], "t,cluster,center,mass,event")?;
    traj.write_csv(&mut w)?;
    w.flush()?;
    let mut w = csv(out, &names[1], "t,kind,participants,masses_before,masses_after")?;
    traj.write_events_csv(&mut w)?;
    w.flush()?;
    Ok(names)
}

fn trajectory_summary(traj: &ReducedTrajectory) -> Value {
    json!({
        "first_dissolution": opt(traj.first_dissolution()),
        "collapse_time": opt(traj.collapse_time()),
        "dissolution_order": traj.dissolution_order(),
        "final_clusters": traj.last().len(),
        "t_final": traj.last().time,
    })
}

fn reduced_section(
    spec: &PotentialSpec,
    r: &ReducedConfig,
    seeds: &[u64],
    pool: &rayon::ThreadPool,
    out: &Path,
    outputs: &mut Outputs,
) -> Result<Option<(ReducedTrajectory, f64)>> {
    let mode: ReducedMode = r.mode.parse()?;
    let mut config0 = ClusterConfiguration::new(r.centers.clone(), r.masses.clone())?;
    if let Some(n) = r.n_particles {
        config0 = config0.with_particles(n);
    }
    let mut params = RateParams::new(spec.clone()).with_merge_factor(r.merge_factor);
    if let Some(eps) = r.dissolve_mass {
        params.dissolve_mass = eps;
    }
    let options = ReducedOptions { dt_bm: r.dt_bm, record_interval: r.record_interval, ode: OdeOptions::default() };
    let extrapolation = |t: Option<f64>, who: &str| {
        t.map(|t| format!("{who}: records after the first dissolution at t = {t} extrapolate the reduced model"))
    };
    if mode == ReducedMode::Ode {
        let traj = run_reduced(&config0, &params, r.t_end, mode, options, &mut ChaCha8Rng::seed_from_u64(0))?;
        outputs.files.extend(write_trajectory(out, "", &traj)?);
        outputs.notes.extend(extrapolation(traj.first_dissolution(), "reduced"));
        let mut summary = trajectory_summary(&traj);
        summary["dissolve_mass"] = json!(params.dissolve_mass);
        outputs.summary.insert("reduced".into(), summary);
        return Ok(Some((traj, params.dissolve_mass)));
    }
    let results: Vec<Result<(u64, ReducedTrajectory)>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let traj = run_reduced(&config0, &params, r.t_end, mode, options, &mut ChaCha8Rng::seed_from_u64(seed))?;
                write_trajectory(out, &format!("_seed{seed}"), &traj)?;
                Ok((seed, traj))
            })
            .collect()
    });
    let mut per_seed = Vec::new();
    for res in results {
        let (seed, traj) = res?;
        let suffix = format!("_seed{seed}");
        outputs.files.extend([format!("reduced{suffix}.csv"), format!("reduced_events{suffix}.csv")]);
        outputs.notes.extend(extrapolation(traj.first_dissolution(), &format!("reduced seed {seed}")));
        let mut s = trajectory_summary(&traj);
        s["seed"] = json!(seed);
        per_seed.push(s);
    }
    outputs.summary.insert("reduced".into(), json!({"mode": mode.as_str(), "dissolve_mass": params.dissolve_mass, "seeds": per_seed}));
    Ok(None)
}

fn comparison_section(pde_series: &MassSeries, traj: &ReducedTrajectory, eps: f64, out: &Path, outputs: &mut Outputs) -> Result<()> {
    let ode = MassSeries::from_trajectory(traj);
    let report = compare_masses(pde_series, &ode, eps)?;
    std::fs::write(out.join("comparison.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    // Paired series on the PDE sample times, ODE columns in PDE order.
    let mut w = csv(out, "mass_comparison.csv", "t,cluster,pde_mass,ode_mass")?;
    let pairing: Vec<usize> = pde_series
        .centers
        .iter()
        .map(|&c| {
            (0..ode.len())
                .min_by(|&i, &j| {
                    clusterlab::torus::signed(ode.centers[i] - c).abs().total_cmp(&clusterlab::torus::signed(ode.centers[j] - c).abs())
                })
                .unwrap_or(0)
        })
        .collect();
    for (t, m) in pde_series.times.iter().zip(&pde_series.masses) {
        for (j, x) in m.iter().enumerate() {
            writeln!(w, "{t},{j},{x},{}", ode.mass_at(pairing[j], *t))?;
        }
    }
    w.flush()?;
    outputs.files.extend(["comparison.json".to_string(), "mass_comparison.csv".to_string()]);
    outputs.summary.insert("comparison".into(), serde_json::to_value(&report)?);
    Ok(())
}

fn landscape_section(spec: &PotentialSpec, l: &LandscapeConfig, out: &Path, outputs: &mut Outputs) -> Result<()> {
    let grid = |a: f64, b: f64, n: usize| -> Vec<f64> { (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect() };
    let m1 = grid(0.05, 0.95, l.m1_points);
    let d = grid(0.02, 0.5, l.d_points);
    let values = stationary::two_cluster_landscape(spec, &m1, &d, l.m_cells)?;
    let mut w = csv(out, "landscape.csv", "m1,d,free_energy")?;
    stationary::write_landscape_csv(&mut w, &m1, &d, &values)?;
    w.flush()?;
    outputs.files.push("landscape.csv".into());
    let (mut best, mut at) = (f64::INFINITY, (0.0, 0.0));
    for (a, row) in values.iter().enumerate() {
        for (b, &f) in row.iter().enumerate() {
            if f < best {
                best = f;
                at = (m1[a], d[b]);
            }
        }
    }
    outputs.summary.insert("landscape".into(), json!({"min_free_energy": best, "argmin_m1": at.0, "argmin_d": at.1}));
    Ok(())
}
