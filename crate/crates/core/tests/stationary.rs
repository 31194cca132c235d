use clusterlab::pde::{self, gaussian_mixture_init, DensityField, PdeRunConfig};
use clusterlab::spectral::gamma_sharp;
use clusterlab::stationary::{
    continue_branch, critical_mass, gaussian_fit, multi_cluster_scale, solve_fixed_point, symmetric_decreasing_check, SolverMethod,
    SolverOptions,
};
use clusterlab::{ClusterConfiguration, PotentialFamily, PotentialSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn single_gaussian(spec: &PotentialSpec, m: usize) -> DensityField {
    gaussian_mixture_init(&ClusterConfiguration::new(vec![0.5], vec![1.0]).unwrap(), spec, m).unwrap()
}

#[test]
fn single_cluster_variance() {
    let spec = PotentialSpec::hk(100.0, 0.5).unwrap();
    let t = Instant::now();
    let s = solve_fixed_point(&single_gaussian(&spec, 1024), &spec, SolverMethod::Newton, SolverOptions::default()).unwrap();
    let fit = gaussian_fit(&s.rho, 1e-3).unwrap();
    println!("variance {} in {:?} ({} iterations)", fit.variance, t.elapsed(), s.iterations);
    assert!((fit.variance / 0.005 - 1.0).abs() < 0.05);
    assert!(s.rho.values().iter().all(|&v| v > 0.0));
    // Below the uniform state in free energy.
    assert!(s.free_energy < 0.5 * spec.fourier(0.0));
}

#[test]
fn branch_has_discontinuous_transition() {
    let spec = PotentialSpec::hk(300.0, 0.1).unwrap();
    let m = 256;
    let start = single_gaussian(&spec, m);
    let grid: Vec<f64> = (0..=100).map(|i| 300.0 - 2.0 * i as f64).collect();
    let t = Instant::now();
    let branch = continue_branch(&spec, &grid, &start).unwrap();
    let gc = branch.gamma_c.expect("gap changes sign");
    let gs = gamma_sharp(&PotentialFamily::hegselmann_krause(), 0.1).unwrap();
    let last = branch.points.last().unwrap();
    println!("gamma_c {gc}, gamma_sharp {gs}, branch ends at {} ({} points) in {:?}", last.gamma, branch.points.len(), t.elapsed());
    assert!(gc < gs);
    let near = branch.points.iter().min_by(|a, b| (a.gamma - gc).abs().total_cmp(&(b.gamma - gc).abs())).unwrap();
    assert!(near.l1_to_uniform > 0.1, "{}", near.l1_to_uniform);
    for p in &branch.points {
        assert_eq!(p.gap > 0.0, p.gamma < gc, "gamma {} gap {}", p.gamma, p.gap);
    }
    let m2 = critical_mass(&spec.with_gamma(2.0 * gc).unwrap(), gc).unwrap();
    assert_eq!(m2, 0.5);
    // m_crit gamma ell w''(0) stays put as gamma grows.
    let scaled: Vec<f64> = [2.0, 5.0, 10.0]
        .iter()
        .map(|f| {
            let s = spec.with_gamma(f * gc).unwrap();
            critical_mass(&s, gc).unwrap() * s.gamma * s.ell * s.wpp0()
        })
        .collect();
    assert!(scaled.iter().all(|x| (x - scaled[0]).abs() < 1e-9 * x && *x > 1.0 && *x < 100.0), "{scaled:?}");
}

#[test]
fn scaled_states_are_fixed_points() {
    let spec = PotentialSpec::hk(100.0, 0.5).unwrap();
    let s = solve_fixed_point(&single_gaussian(&spec, 512), &spec, SolverMethod::Newton, SolverOptions::default()).unwrap();
    for k in [2, 3] {
        let scaled = multi_cluster_scale(&s, k).unwrap();
        assert!(scaled.residual < 1e-8);
        assert_eq!(scaled.rho.m_cells(), 512 * k);
        let regions = pde::cluster_masses_from_density(&scaled.rho, None);
        assert_eq!(regions.len(), k);
    }
}

#[test]
fn generic_starts_reach_symmetric_decreasing_states() {
    let spec = PotentialSpec::hk(150.0, 0.1).unwrap();
    let m = 256;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for trial in 0..5 {
        let phases: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
        let amps: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..0.6)).collect();
        let rho0 = DensityField::from_fn(m, |x| {
            (0..6).map(|n| amps[n] * (std::f64::consts::TAU * ((n + 1) as f64 * x + phases[n])).cos()).sum::<f64>().exp()
        })
        .unwrap();
        let mut config = PdeRunConfig::new(spec.clone(), m, 5.0);
        config.output_interval = 0.5;
        config.steady_tol = Some(1e-6);
        let run = pde::run_pde(&rho0, &config).unwrap();
        let s = solve_fixed_point(&run.last().rho, &spec, SolverMethod::Newton, SolverOptions::default()).unwrap();
        let report = symmetric_decreasing_check(&s.rho);
        println!("trial {trial}: deviation {} l1 {}", report.max_deviation, s.rho.l1_distance(&DensityField::uniform(m)));
        assert!(report.is_single_cluster);
    }
}
