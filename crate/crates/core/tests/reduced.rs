use clusterlab::reduced::*;
use clusterlab::torus::signed;
use clusterlab::{ClusterConfiguration, Error, PotentialSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn three_cluster_setup() -> (ClusterConfiguration, RateParams) {
    let c = ClusterConfiguration::new(vec![0.1, 0.3, 0.7], vec![0.2, 0.3, 0.5]).unwrap();
    (c, RateParams::new(PotentialSpec::hk(1000.0, 0.05).unwrap()))
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[test]
fn smallest_cluster_loses_mass() {
    let (c, p) = three_cluster_setup();
    let rhs = mass_ode_rhs(&c, &p).unwrap();
    assert!(rhs[0] < 0.0);
    assert!(rhs.iter().sum::<f64>().abs() < 1e-15);
}

#[test]
fn ode_trajectory_conserves_mass_and_kills_smallest_first() {
    let (c, p) = three_cluster_setup();
    let traj = integrate_mass_ode(&c, &p, 1e7, OdeOptions::default()).unwrap();
    for (cfg, _) in &traj.records {
        assert!((cfg.total_mass() - 1.0).abs() < 1e-9);
    }
    let order = traj.dissolution_order();
    assert_eq!(order.len(), 2);
    assert_eq!(order[0], 0);
    assert_eq!(traj.last().labels, vec![2]);
    let times: Vec<f64> = traj.records.iter().map(|(c, _)| c.time).collect();
    assert!(times.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn collapse_time_grows_with_gamma() {
    let c = ClusterConfiguration::new(vec![0.25, 0.75], vec![0.45, 0.55]).unwrap();
    let mut prev = 0.0;
    for gamma in [600.0, 800.0, 1000.0] {
        let p = RateParams::new(PotentialSpec::hk(gamma, 0.05).unwrap());
        let t = integrate_mass_ode(&c, &p, 1e9, OdeOptions::default()).unwrap().collapse_time().unwrap();
        assert!(t > prev);
        prev = t;
    }
}

#[test]
fn heavy_bm_variance_scaling() {
    let c = ClusterConfiguration::new(vec![0.5], vec![1.0]).unwrap().with_particles(100);
    let p = RateParams::new(PotentialSpec::hk(100.0, 0.05).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let dt = 1e-3;
    let n = 100_000;
    let sq: Vec<f64> = (0..n)
        .map(|_| {
            let (next, events) = heavy_bm_step(&c, &p, dt, &mut rng).unwrap();
            assert!(events.is_empty());
            signed(next.centers[0] - 0.5).powi(2)
        })
        .collect();
    let (mean, sd) = mean_sd(&sq);
    let expected = 2.0 * dt / 100.0;
    assert!((mean - expected).abs() < 3.0 * sd / (n as f64).sqrt(), "{mean} vs {expected}");
}

#[test]
fn heavy_bm_requires_particle_count() {
    let c = ClusterConfiguration::new(vec![0.5], vec![1.0]).unwrap();
    let p = RateParams::new(PotentialSpec::hk(100.0, 0.05).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(heavy_bm_step(&c, &p, 1e-3, &mut rng), Err(Error::InvalidParameter(_))));
}

#[test]
fn cascaded_merge_within_one_step() {
    let c = ClusterConfiguration::new(vec![0.4, 0.43, 0.46, 0.8], vec![0.2, 0.3, 0.1, 0.4]).unwrap().with_particles(1_000_000_000);
    let p = RateParams::new(PotentialSpec::hk(100.0, 0.05).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (next, events) = heavy_bm_step(&c, &p, 1e-16, &mut rng).unwrap();
    assert_eq!(events.len(), 2);
    assert_eq!(next.len(), 2);
    let merged = next.index_of(1).unwrap();
    assert!((next.masses[merged] - 0.6).abs() < 1e-12);
    let expected = (0.2 * 0.4 + 0.3 * 0.43 + 0.1 * 0.46) / 0.6;
    assert!((next.centers[merged] - expected).abs() < 1e-9);
}

#[test]
fn gillespie_absorbed_with_one_cluster() {
    let c = ClusterConfiguration::new(vec![0.5], vec![1.0]).unwrap().with_particles(100);
    let p = RateParams::new(PotentialSpec::hk(100.0, 0.05).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(matches!(gillespie_step(&c, &p, &mut rng), Err(Error::Absorbed)));
}

#[test]
fn gillespie_drift_matches_ode_rhs() {
    let (c, p) = three_cluster_setup();
    let c = c.with_particles(10_000);
    let rhs = mass_ode_rhs(&c, &p).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let mut residuals = vec![Vec::new(); 3];
    for _ in 0..n {
        let (wait, next, event) = gillespie_step(&c, &p, &mut rng).unwrap();
        assert!(event.is_none());
        for j in 0..3 {
            residuals[j].push(next.masses[j] - c.masses[j] - rhs[j] * wait);
        }
    }
    for j in 0..3 {
        let (mean, sd) = mean_sd(&residuals[j]);
        assert!(mean.abs() < 3.0 * sd / (n as f64).sqrt(), "cluster {j}: {mean} (sd {sd})");
    }
}

#[test]
fn gillespie_conserves_particle_count() {
    let c = ClusterConfiguration::new(vec![0.1, 0.3, 0.7], vec![0.02, 0.48, 0.5]).unwrap().with_particles(500);
    let p = RateParams::new(PotentialSpec::hk(2000.0, 0.05).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut cfg = c;
    let mut deaths = 0;
    for _ in 0..20_000 {
        match gillespie_step(&cfg, &p, &mut rng) {
            Ok((wait, next, event)) => {
                assert!(wait > 0.0);
                let counts: Vec<f64> = next.masses.iter().map(|m| m * 500.0).collect();
                assert!(counts.iter().all(|x| (x - x.round()).abs() < 1e-9));
                assert_eq!(counts.iter().map(|x| x.round() as i64).sum::<i64>(), 500);
                deaths += usize::from(event.is_some());
                cfg = next;
            }
            Err(Error::Absorbed) => break,
            Err(e) => panic!("{e}"),
        }
    }
    assert!(deaths >= 1);
}

#[test]
fn coupled_modes_run_to_completion() {
    let (c, p) = three_cluster_setup();
    let c = c.with_particles(10_000);
    for mode in [ReducedMode::OdeBm, ReducedMode::Gillespie, ReducedMode::GillespieBm] {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let opts = ReducedOptions { dt_bm: 1e-2, record_interval: Some(0.5), ..Default::default() };
        let traj = run_reduced(&c, &p, 5.0, mode, opts, &mut rng).unwrap();
        let last = traj.last();
        assert!((last.total_mass() - 1.0).abs() < 1e-9, "{mode:?}");
        assert!(traj.records.len() >= 10, "{mode:?}");
        assert!(traj.records.windows(2).all(|w| w[1].0.time >= w[0].0.time));
    }
}

#[test]
fn ode_mode_ignores_particle_count() {
    let (c, p) = three_cluster_setup();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let traj = run_reduced(&c, &p, 10.0, ReducedMode::Ode, ReducedOptions::default(), &mut rng).unwrap();
    let direct = integrate_mass_ode(&c, &p, 10.0, OdeOptions::default()).unwrap();
    assert_eq!(traj.last().masses, direct.last().masses);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let err = run_reduced(&c, &p, 10.0, ReducedMode::GillespieBm, ReducedOptions::default(), &mut rng);
    assert!(matches!(err, Err(Error::InvalidParameter(_))));
}

#[test]
fn exit_time_splits_into_directional_rates() {
    let c = ClusterConfiguration::new(vec![0.1, 0.35, 0.8], vec![0.3, 0.4, 0.3]).unwrap();
    let spec = PotentialSpec::hk(500.0, 0.05).unwrap();
    let p = RateParams::new(spec.clone());
    let t = mfpt_eyring_kramers(1, &c, &spec).unwrap();
    let left = exit_probability(1, &c, &spec).unwrap();
    let phi_r = rate_phi_r(0.4, 0.1, 0.35, 0.8, &p).unwrap();
    let phi_l = rate_phi_l(0.4, 0.1, 0.35, 0.8, &p).unwrap();
    assert!((1.0 / (t / left) + 1.0 / (t / (1.0 - left)) - 1.0 / t).abs() < 1e-12 / t);
    assert!((phi_r + phi_l - 1.0 / t).abs() < 1e-10 * phi_r);
    assert!((phi_l - left / t).abs() < 1e-10 * phi_l);
}

#[test]
fn eyring_kramers_approaches_oracle() {
    let ell = 0.05;
    let c = ClusterConfiguration::new(vec![1.0 / 6.0, 0.5, 5.0 / 6.0], vec![0.25, 0.5, 0.25]).unwrap();
    let mut prev = f64::INFINITY;
    for gl in [15.0, 20.0, 25.0] {
        let spec = PotentialSpec::hk(gl / ell, ell).unwrap();
        let (a, b) = oracle_endpoints(1, &c, &spec).unwrap();
        let oracle = mfpt_quadrature_oracle(1, &c, &spec, a, b).unwrap();
        let ek = mfpt_eyring_kramers(1, &c, &spec).unwrap();
        let r = (ek / oracle).ln().abs();
        assert!(r < prev, "gamma ell = {gl}: {r}");
        prev = r;
    }
}

#[test]
fn oracle_follows_kramers_slope() {
    let ell = 0.05;
    let c = ClusterConfiguration::new(vec![0.25, 0.75], vec![0.5, 0.5]).unwrap();
    let gls = [25.0, 32.5, 40.0];
    let logs: Vec<(f64, f64)> = gls
        .iter()
        .map(|&gl| {
            let spec = PotentialSpec::hk(gl / ell, ell).unwrap();
            let (a, b) = oracle_endpoints(0, &c, &spec).unwrap();
            let oracle = mfpt_quadrature_oracle(0, &c, &spec, a, b).unwrap();
            (oracle.ln(), mfpt_eyring_kramers(0, &c, &spec).unwrap().ln())
        })
        .collect();
    let slope = |ys: Vec<f64>| {
        let mx = gls.iter().sum::<f64>() / 3.0;
        let my = ys.iter().sum::<f64>() / 3.0;
        gls.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / gls.iter().map(|x| (x - mx).powi(2)).sum::<f64>()
    };
    let so = slope(logs.iter().map(|p| p.0).collect());
    let se = slope(logs.iter().map(|p| p.1).collect());
    assert!((so / se - 1.0).abs() < 0.05, "{so} vs {se}");
}

#[test]
fn exit_probability_matches_oracle() {
    let ell = 0.05;
    let spec = PotentialSpec::hk(25.0 / ell, ell).unwrap();
    let c = ClusterConfiguration::new(vec![0.1, 0.4, 0.8], vec![1.0 / 3.0; 3]).unwrap();
    let (a, b) = oracle_endpoints(1, &c, &spec).unwrap();
    let closed = exit_probability(1, &c, &spec).unwrap();
    let oracle = exit_probability_oracle(1, &c, &spec, a, b).unwrap();
    assert!((closed - 0.6).abs() < 1e-12);
    assert!((closed - oracle).abs() < 0.05, "{closed} vs {oracle}");
}

#[test]
fn flat_potential_exit_time() {
    let c = ClusterConfiguration::new(vec![0.1, 0.4, 0.8], vec![0.2, 0.5, 0.3]).unwrap();
    let spec = PotentialSpec::hk(0.0, 0.05).unwrap();
    for (a, b) in [(0.15, 0.75), (0.3, 0.5), (-0.2, 0.7)] {
        let u = mfpt_quadrature_oracle(1, &c, &spec, a, b).unwrap();
        let exact = (0.4 - a) * (b - 0.4) / 2.0;
        assert!((u - exact).abs() < 1e-9 * exact);
    }
}

#[test]
fn effective_potential_well_bottoms_and_far_field() {
    let ell = 0.05;
    let c = ClusterConfiguration::new(vec![0.2, 0.45, 0.8], vec![0.3, 0.4, 0.3]).unwrap();
    for gl in [25.0, 40.0, 80.0] {
        let spec = PotentialSpec::hk(gl / ell, ell).unwrap();
        for j in 0..3 {
            let x = c.centers[j];
            let full = v_eff(x, &c, &spec, VeffMode::Full);
            let quad = v_eff(x, &c, &spec, VeffMode::Quadratic);
            let depth = gl * spec.delta() * c.masses[j];
            assert!((full - quad).abs() < 0.05 * depth);
            assert!((quad - (0.5 - depth)).abs() < 1e-12);
        }
        // 0.325 and 0.625 are more than ell + 6 sigma from every center.
        for x in [0.325, 0.625] {
            assert!(v_eff(x, &c, &spec, VeffMode::Full).abs() < 1e-6 * gl);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn oracle_dominates_flat_exit_time(
        gl in 5.0f64..25.0,
        shift in 0.0f64..1.0,
        m in 0.2f64..0.6,
        dl in 0.2f64..0.4,
        dr in 0.2f64..0.4,
    ) {
        let ell = 0.05;
        let spec = PotentialSpec::hk(gl / ell, ell).unwrap();
        let rest = (1.0 - m) / 2.0;
        let c = ClusterConfiguration::new(vec![shift, shift + dr, shift - dl], vec![m, rest, rest]).unwrap();
        let j = c.index_of(0).unwrap();
        let (a, b) = oracle_endpoints(j, &c, &spec).unwrap();
        let oracle = mfpt_quadrature_oracle(j, &c, &spec, a, b).unwrap();
        let x = c.centers[j];
        let x = a + (x - a).rem_euclid(1.0);
        prop_assert!(oracle >= (x - a) * (b - x) / 2.0);
    }

    #[test]
    fn rhs_commutes_with_rotation(
        shift in 0.0f64..1.0,
        m0 in 0.1f64..0.5,
        m1 in 0.1f64..0.4,
    ) {
        let p = RateParams::new(PotentialSpec::hk(800.0, 0.05).unwrap());
        let masses = vec![m0, m1, 1.0 - m0 - m1];
        let a = ClusterConfiguration::new(vec![0.1, 0.4, 0.7], masses.clone()).unwrap();
        let b = ClusterConfiguration::new(vec![0.1 + shift, 0.4 + shift, 0.7 + shift], masses).unwrap();
        let (ra, rb) = (mass_ode_rhs(&a, &p).unwrap(), mass_ode_rhs(&b, &p).unwrap());
        for label in 0..3 {
            let (ia, ib) = (a.index_of(label).unwrap(), b.index_of(label).unwrap());
            prop_assert!((ra[ia] - rb[ib]).abs() < 1e-9 * ra[ia].abs().max(1e-12));
        }
    }

    #[test]
    fn merge_preserves_first_moment(
        base in 0.0f64..1.0,
        gap in 0.0f64..0.04,
        m0 in 0.1f64..0.5,
        m1 in 0.1f64..0.4,
    ) {
        let masses = vec![m0, m1, 1.0 - m0 - m1];
        let c = ClusterConfiguration::new(vec![base, base + gap, base + 0.5], masses).unwrap().with_particles(usize::MAX / 4);
        let p = RateParams::new(PotentialSpec::hk(100.0, 0.05).unwrap());
        // Unwrap relative to a cut opposite the merging pair.
        let cut = base - 0.25;
        let moment = |c: &ClusterConfiguration| {
            c.centers.iter().zip(&c.masses).map(|(&x, &m)| m * (cut + (x - cut).rem_euclid(1.0))).sum::<f64>()
        };
        let before = moment(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (next, events) = heavy_bm_step(&c, &p, 1e-30, &mut rng).unwrap();
        prop_assert_eq!(events.len(), 1);
        prop_assert_eq!(next.len(), 2);
        prop_assert!((moment(&next) - before).abs() < 1e-12);
    }
}
