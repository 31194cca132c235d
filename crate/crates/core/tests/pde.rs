use clusterlab::pde::{self, free_energy, read_binary, run_pde_resume, run_pde_stepwise, write_binary, InteractionKernel, PdeRunConfig, PdeSnapshot};
use clusterlab::spectral::{dominant_mode, gamma_sharp, growth_rate};
use clusterlab::{ClusterConfiguration, DensityField, PotentialFamily, PotentialSpec};
use proptest::prelude::*;

fn noisy(m: usize, seed: u64, amplitude: f64) -> DensityField {
    // Small deterministic hash noise; avoids pulling an RNG into the property.
    let values = (0..m)
        .map(|i| {
            let z = (i as u64 ^ seed).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            1.0 + amplitude * ((z >> 11) as f64 / (1u64 << 53) as f64 - 0.5)
        })
        .collect();
    DensityField::normalized(values).unwrap()
}

fn collect(rho: &DensityField, done: u64, config: &PdeRunConfig) -> Vec<PdeSnapshot> {
    let mut out = Vec::new();
    run_pde_resume(rho, done, config, |s| {
        out.push(s.clone());
        true
    })
    .unwrap();
    out
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let spec = PotentialSpec::hk(800.0, 0.08).unwrap();
    let mut config = PdeRunConfig::new(spec, 128, 0.2);
    config.output_interval = 0.02;
    config.steady_tol = None;
    let rho0 = noisy(128, 3, 0.1);
    let whole = collect(&rho0, 0, &config);

    // Round trip the state at output 4 through the binary format.
    let mut buf = Vec::new();
    write_binary(&mut buf, &whole[4].rho, 0.0, whole[4].t).unwrap();
    let (restored, _, t) = read_binary(&mut buf.as_slice()).unwrap();
    assert_eq!(t, whole[4].t);
    let tail = collect(&restored, 4, &config);
    assert_eq!(tail.len(), whole.len() - 4);
    for (a, b) in tail.iter().zip(&whole[4..]) {
        assert_eq!(a.t, b.t);
        assert_eq!(a.rho.values(), b.rho.values());
    }
}

#[test]
fn step_hook_sees_every_step() {
    let spec = PotentialSpec::hk(300.0, 0.1).unwrap();
    let mut config = PdeRunConfig::new(spec, 64, 0.05);
    config.steady_tol = None;
    let rho0 = noisy(64, 9, 0.2);
    let mut seen = 0u64;
    let mut elapsed = 0.0;
    let mut last = None;
    let (steps, _, _) = run_pde_stepwise(
        &rho0,
        0,
        &config,
        |_: &InteractionKernel, rho: &DensityField, dt: f64| {
            seen += 1;
            elapsed += dt;
            last = Some(rho.clone());
        },
        |_| true,
    )
    .unwrap();
    assert_eq!(seen, steps);
    assert!((elapsed - 0.05).abs() < 1e-12);
    let reference = collect(&rho0, 0, &config);
    assert_eq!(last.unwrap().values(), reference.last().unwrap().rho.values());
}

#[test]
fn small_perturbation_grows_at_the_linear_rate() {
    let ell = 0.1;
    let spec = PotentialSpec::hk(1.5 * gamma_sharp(&PotentialFamily::hegselmann_krause(), ell).unwrap(), ell).unwrap();
    let mode = dominant_mode(&spec).unwrap();
    let k = mode.k_max;
    let m = 256;
    let rho0 = DensityField::from_fn(m, |x| 1.0 + 1e-5 * (k * x).cos()).unwrap();
    let t_end = 3.0 / mode.psi_max;
    let mut config = PdeRunConfig::new(spec.clone(), m, t_end);
    config.steady_tol = None;
    let run = pde::run_pde(&rho0, &config).unwrap();
    let n = mode.n_clusters;
    let a0 = run.snapshots[0].rho.fourier_amplitude(n);
    let a1 = run.last().rho.fourier_amplitude(n);
    let measured = (a1 / a0).ln() / t_end;
    let psi = growth_rate(&spec, k);
    assert!((measured / psi - 1.0).abs() < 0.02, "{measured} vs {psi}");
}

#[test]
fn mixture_collapses_to_the_heaviest_region() {
    let spec = PotentialSpec::hk(1000.0, 0.05).unwrap();
    let clusters = ClusterConfiguration::new(vec![0.25, 0.75], vec![0.3, 0.7]).unwrap();
    let rho0 = pde::gaussian_mixture_init(&clusters, &spec, 256).unwrap();
    let cuts = pde::density_boundaries(&rho0, pde::DEFAULT_PROMINENCE);
    assert_eq!(cuts.len(), 2);
    let initial = pde::cluster_masses_from_density(&rho0, Some(&cuts));
    let mut config = PdeRunConfig::new(spec, 256, 0.5);
    config.steady_tol = None;
    let run = pde::run_pde(&rho0, &config).unwrap();
    let later = pde::cluster_masses_from_density(&run.last().rho, Some(&cuts));
    // Mass flows from the light cluster to the heavy one.
    let light = |v: &[(f64, f64)]| v.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    assert!(light(&later) < light(&initial));
    assert!((later.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scheme_conserves_mass_and_dissipates(seed in any::<u64>(), gamma in 0.0f64..2000.0, ell in 0.05f64..0.5, amp in 0.0f64..1.8) {
        let m = 64;
        let spec = PotentialSpec::hk(gamma, ell).unwrap();
        let mut config = PdeRunConfig::new(spec, m, 0.01);
        config.output_interval = 0.001;
        config.steady_tol = None;
        let rho0 = noisy(m, seed, amp);
        let mut prev: Option<f64> = None;
        let mut ok = true;
        let mut min_rho = f64::INFINITY;
        let mut drift = 0.0f64;
        run_pde_stepwise(&rho0, 0, &config, |kernel: &InteractionKernel, rho: &DensityField, _| {
            let f = free_energy(rho, kernel).total;
            if let Some(p) = prev {
                ok &= f <= p + 1e-12 * (1.0 + p.abs());
            }
            prev = Some(f);
            min_rho = min_rho.min(rho.values().iter().cloned().fold(f64::INFINITY, f64::min));
            drift = drift.max((rho.mass() - 1.0).abs());
        }, |_| true).unwrap();
        prop_assert!(ok);
        prop_assert!(min_rho > 0.0);
        prop_assert!(drift < 1e-12, "{}", drift);
    }

    #[test]
    fn translation_commutes_with_the_scheme(seed in any::<u64>(), shift in 0isize..64) {
        let m = 64;
        let spec = PotentialSpec::hk(600.0, 0.1).unwrap();
        let mut config = PdeRunConfig::new(spec, m, 0.005);
        config.dt = Some(2e-5);
        config.output_interval = 0.005;
        config.steady_tol = None;
        let rho0 = noisy(m, seed, 0.5);
        let a = pde::run_pde(&rho0, &config).unwrap().last().rho.shifted(shift);
        let b = pde::run_pde(&rho0.shifted(shift), &config).unwrap().last().rho.clone();
        prop_assert!(a.l1_distance(&b) < 1e-12);
    }
}
