use std::f64::consts::TAU;

use clusterlab::spectral::{dominant_mode, gamma_sharp, growth_rate, hk_transcendental_root, SpectralReport};
use clusterlab::{PotentialFamily, PotentialSpec};
use proptest::prelude::*;

fn families() -> impl Strategy<Value = PotentialFamily> {
    prop_oneof![
        Just(PotentialFamily::hegselmann_krause()),
        (0.5f64..3.0, 0.5f64..3.0, 0.2f64..0.8).prop_map(|(al, be, a)| PotentialFamily::piecewise_parabolic(al, be, a).unwrap()),
    ]
}

#[test]
fn cluster_count_tracks_the_root_at_large_gamma() {
    let y = hk_transcendental_root();
    for ell in [0.05, 0.02] {
        let spec = PotentialSpec::hk(1e7, ell).unwrap();
        let mode = dominant_mode(&spec).unwrap();
        // Nearest admissible mode to y / ell.
        let expected = (y / (TAU * ell)).round() as usize;
        assert!(mode.n_clusters.abs_diff(expected) <= 1, "ell {ell}: {} vs {expected}", mode.n_clusters);
    }
}

#[test]
fn report_is_consistent() {
    let spec = PotentialSpec::hk(2000.0, 0.05).unwrap();
    let r = SpectralReport::compute(&spec, Some(40), 1e-3, Some(1000));
    assert_eq!(r.modes.len(), 40);
    let best = r.modes.iter().cloned().fold((0.0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    assert_eq!(Some(best.0), r.k_max);
    assert!(r.t_clustering.unwrap() > 0.0);
    assert!(spec.gamma > r.gamma_sharp.unwrap());
}

proptest! {
    #[test]
    fn uniform_state_is_stable_below_threshold(fam in families(), ell in 0.02f64..0.5, frac in 0.05f64..0.98, n in 1usize..400) {
        let gs = gamma_sharp(&fam, ell).unwrap();
        let spec = PotentialSpec::new(fam, frac * gs, ell).unwrap();
        prop_assert!(growth_rate(&spec, TAU * n as f64) < 0.0);
        prop_assert!(dominant_mode(&spec).is_err());
    }

    #[test]
    fn uniform_state_is_unstable_above_threshold(fam in families(), ell in 0.02f64..0.5, factor in 1.02f64..20.0) {
        let gs = gamma_sharp(&fam, ell).unwrap();
        let spec = PotentialSpec::new(fam, factor * gs, ell).unwrap();
        let mode = dominant_mode(&spec).unwrap();
        prop_assert!(mode.psi_max > 0.0);
        for n in 1..(4.0 / ell) as usize {
            prop_assert!(growth_rate(&spec, TAU * n as f64) <= mode.psi_max);
        }
    }

    #[test]
    fn rate_is_affine_in_gamma(fam in families(), ell in 0.02f64..0.5, gamma in 1.0f64..1e4, n in 1usize..200) {
        let unit = PotentialSpec::new(fam.clone(), 1.0, ell).unwrap();
        let spec = PotentialSpec::new(fam, gamma, ell).unwrap();
        let k = TAU * n as f64;
        let w = spec.fourier(k);
        prop_assert!((w - gamma * unit.fourier(k)).abs() <= 1e-12 * gamma * ell * ell);
        prop_assert_eq!(growth_rate(&spec, k), -k * k * (w + 1.0));
    }
}
