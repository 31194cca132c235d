use clusterlab::particle::{detect_clusters, drifts_brute_force, energy_brute_force, CellList, InitialKind, ParticleEnsemble};
use clusterlab::{DensityField, PotentialFamily, PotentialSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

fn clustered_positions(rng: &mut ChaCha8Rng, n: usize, width: f64) -> Vec<f64> {
    let centers: Vec<f64> = (0..rng.random_range(1..6)).map(|_| rng.random::<f64>()).collect();
    (0..n)
        .map(|_| {
            let c = centers[rng.random_range(0..centers.len())];
            (c + width * (rng.random::<f64>() - 0.5)).rem_euclid(1.0)
        })
        .collect()
}

#[test]
fn cell_list_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..100 {
        let n = rng.random_range(1..=200);
        let ell = [0.02, 0.05, 0.08, 0.1, 0.25, 0.5][trial % 6];
        let spec = PotentialSpec::hk(rng.random_range(1.0..5000.0), ell).unwrap();
        let xs = if trial % 2 == 0 {
            (0..n).map(|_| rng.random::<f64>()).collect()
        } else {
            clustered_positions(&mut rng, n, 3.0 * ell)
        };
        let fast = CellList::new(&xs, spec.interaction_radius()).drifts(&xs, &spec);
        let slow = drifts_brute_force(&xs, &spec);
        for (a, b) in fast.iter().zip(&slow) {
            assert!(a == b, "trial {trial}: {a} vs {b}");
        }
        let e_fast = CellList::new(&xs, spec.interaction_radius()).energy(&xs, &spec);
        assert!((e_fast - energy_brute_force(&xs, &spec)).abs() <= 1e-14 * spec.gamma);
    }
}

#[test]
fn cell_list_matches_for_tabulated_profile() {
    let xs: Vec<f64> = (0..=40).map(|i| i as f64 / 40.0 * 1.5).collect();
    let ws: Vec<f64> = xs.iter().map(|&x: &f64| if x < 1.5 { -(1.5 - x).powi(2) } else { 0.0 }).collect();
    let fam = PotentialFamily::tabulated(&xs, &ws, 2.0).unwrap();
    let spec = PotentialSpec::new(fam, 300.0, 0.05).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pos = clustered_positions(&mut rng, 150, 0.2);
    let fast = CellList::new(&pos, spec.interaction_radius()).drifts(&pos, &spec);
    assert_eq!(fast, drifts_brute_force(&pos, &spec));
}

proptest! {
    #[test]
    fn drifts_cancel_pairwise(seed in any::<u64>(), n in 2usize..150, gamma in 1.0f64..5000.0) {
        let spec = PotentialSpec::hk(gamma, 0.08).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = clustered_positions(&mut rng, n, 0.3);
        let total: f64 = CellList::new(&xs, spec.interaction_radius()).drifts(&xs, &spec).iter().sum();
        prop_assert!(total.abs() < 1e-13 * gamma, "{}", total);
    }

    #[test]
    fn energy_translation_invariant(seed in any::<u64>(), shift in 0.0f64..1.0) {
        let spec = PotentialSpec::hk(100.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = clustered_positions(&mut rng, 60, 0.3);
        let ys: Vec<f64> = xs.iter().map(|x| (x + shift).rem_euclid(1.0)).collect();
        let a = ParticleEnsemble::from_positions(xs, 0).unwrap().interaction_energy(&spec);
        let b = ParticleEnsemble::from_positions(ys, 0).unwrap().interaction_energy(&spec);
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn clusters_ignore_particle_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = clustered_positions(&mut rng, 80, 0.05);
        let a = detect_clusters(&xs, 0.1);
        xs.reverse();
        let b = detect_clusters(&xs, 0.1);
        prop_assert_eq!(a.masses, b.masses);
        for (x, y) in a.centers.iter().zip(&b.centers) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn positions_stay_on_torus(seed in any::<u64>()) {
        let spec = PotentialSpec::hk(2000.0, 0.08).unwrap();
        let mut e = ParticleEnsemble::sample_initial(InitialKind::UniformIid, 40, seed).unwrap();
        for _ in 0..20 {
            e.em_step(&spec, 5e-3);
            prop_assert!(e.positions.iter().all(|x| (0.0..1.0).contains(x)));
        }
    }
}

#[test]
fn free_diffusion_increment_variance() {
    let spec = PotentialSpec::hk(0.0, 0.1).unwrap();
    let dt = 1e-4;
    let mut e = ParticleEnsemble::from_positions(vec![0.5], 77).unwrap();
    let steps = 100_000;
    let mut incs = Vec::with_capacity(steps);
    for _ in 0..steps {
        let before = e.positions[0];
        e.em_step(&spec, dt);
        incs.push(clusterlab::torus::signed(e.positions[0] - before));
    }
    let mean = incs.iter().sum::<f64>() / steps as f64;
    let var = incs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (steps - 1) as f64;
    // Standard error of a Gaussian sample variance.
    let se = 2.0 * dt * (2.0 / (steps - 1) as f64).sqrt();
    assert!((var - 2.0 * dt).abs() < 3.0 * se, "{var}");
}

#[test]
fn free_diffusion_matches_wrapped_heat_kernel() {
    let spec = PotentialSpec::hk(0.0, 0.1).unwrap();
    let n = 10_000;
    let mut e = ParticleEnsemble::from_positions(vec![0.5; n], 123).unwrap();
    for _ in 0..100 {
        e.em_step(&spec, 1e-3);
    }
    assert!((e.time - 0.1).abs() < 1e-12);
    let bins = 50;
    let normal = Normal::new(0.0, 0.2f64.sqrt()).unwrap();
    let prob = |a: f64, b: f64| (-6..=6).map(|k| normal.cdf(b - 0.5 + k as f64) - normal.cdf(a - 0.5 + k as f64)).sum::<f64>();
    let mut counts = vec![0usize; bins];
    for &x in &e.positions {
        counts[((x * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let chi2: f64 = (0..bins)
        .map(|b| {
            let expect = n as f64 * prob(b as f64 / bins as f64, (b + 1) as f64 / bins as f64);
            (counts[b] as f64 - expect).powi(2) / expect
        })
        .sum();
    let critical = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(0.99);
    assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
}

fn ks_uniform(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max)
}

#[test]
fn iid_from_uniform_density_is_uniform() {
    let n = 100_000;
    let critical = 1.628 / (n as f64).sqrt();
    let rho = DensityField::uniform(37);
    let iid = ParticleEnsemble::sample_initial(InitialKind::Iid(&rho), n, 8).unwrap();
    assert!(ks_uniform(iid.positions) < critical);
    let direct = ParticleEnsemble::sample_initial(InitialKind::UniformIid, n, 8).unwrap();
    assert!(ks_uniform(direct.positions) < critical);
}

#[test]
fn iid_rejects_unnormalized_density() {
    let rho = DensityField::uniform(10);
    let mut values = rho.into_values();
    values[0] = 2.0;
    // Construction through the validated path must fail first.
    assert!(DensityField::from_values(values).is_err());
}

#[test]
fn energy_trends_down_while_clustering() {
    let spec = PotentialSpec::hk(2000.0, 0.08).unwrap();
    let seeds = 20;
    let checkpoints = 6;
    let steps_per = 400;
    let mut avg = vec![0.0; checkpoints + 1];
    for seed in 0..seeds {
        let mut e = ParticleEnsemble::sample_initial(InitialKind::Grid, 50, seed).unwrap();
        avg[0] += e.interaction_energy(&spec) / seeds as f64;
        for c in 1..=checkpoints {
            for _ in 0..steps_per {
                e.em_step(&spec, 5e-5);
            }
            avg[c] += e.interaction_energy(&spec) / seeds as f64;
        }
    }
    // Least-squares slope over checkpoints.
    let n = avg.len() as f64;
    let tm = (n - 1.0) / 2.0;
    let ym = avg.iter().sum::<f64>() / n;
    let slope: f64 = avg.iter().enumerate().map(|(i, y)| (i as f64 - tm) * (y - ym)).sum::<f64>()
        / avg.iter().enumerate().map(|(i, _)| (i as f64 - tm).powi(2)).sum::<f64>();
    assert!(slope < 0.0, "{avg:?}");
    assert!(avg[checkpoints] < avg[0], "{avg:?}");
}
