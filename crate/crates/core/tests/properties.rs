use std::f64::consts::PI;

use num_complex::Complex64;
use proptest::prelude::*;
use qfp_core::biphoton::{self, BiphotonState, JsiNormalization};
use qfp_core::eom::{eom_operator, guard_bins, RfDrive};
use qfp_core::lattice::default_half_width;
use qfp_core::qfp::{self, beamsplitter_config, compose_qfp, fidelity, rt_closed_form, submatrix};
use qfp_core::rings::{ws_operator, OutsidePolicy, RingParams, WsChannel, WsModel, WsUnitConfig};
use qfp_core::tomo::{self, canonical_settings, CountMode, DensityMatrix, MleOptions};
use qfp_core::{make_lattice, unitarity_deficit, ModeOperator};

const DNU: f64 = 13.25e9;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 32,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn lattice_steps_are_uniform(center in 1.8e14..2.0e14f64, spacing in 1e9..5e10f64, hw in 1usize..40) {
        let l = make_lattice(center, spacing, hw).unwrap();
        for b in l.l_min()..l.l_max() {
            let step = l.bin_frequency(b + 1) - l.bin_frequency(b);
            prop_assert!((step - spacing).abs() <= 4.0 * f64::EPSILON * center);
            prop_assert!(step > 0.0);
        }
    }

    #[test]
    fn eom_is_toeplitz_and_phase_covariant(delta in 0.0..3.0f64, theta in -PI..PI) {
        let l = make_lattice(193.7e12, DNU, default_half_width(delta)).unwrap();
        let op = eom_operator(&RfDrive::new(delta, theta, DNU), &l).unwrap();
        let base = eom_operator(&RfDrive::new(delta, 0.0, DNU), &l).unwrap();
        for m in l.bins() {
            for n in l.bins() {
                let a = op.element(m, n).unwrap();
                if m > l.l_min() && n > l.l_min() {
                    prop_assert_eq!(a, op.element(m - 1, n - 1).unwrap());
                }
                let cov = base.element(m, n).unwrap() * Complex64::cis((m - n) as f64 * theta);
                prop_assert!((a - cov).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn bessel_sum_rule(delta in 0.0..5.0f64) {
        let l = make_lattice(193.7e12, DNU, default_half_width(delta) + guard_bins(delta).unwrap()).unwrap();
        let op = eom_operator(&RfDrive::new(delta, 0.0, DNU), &l).unwrap();
        let col: f64 = l.bins().map(|m| op.element(m, 0).unwrap().norm_sqr()).sum();
        prop_assert!((col - 1.0).abs() < 1e-12);
    }

    #[test]
    fn antiphase_pair_cancels(delta in 0.0..2.0f64, theta in -PI..PI) {
        let k = guard_bins(delta).unwrap();
        let l = make_lattice(193.7e12, DNU, default_half_width(delta) + k + 2).unwrap();
        let a = eom_operator(&RfDrive::new(delta, theta, DNU), &l).unwrap();
        let b = eom_operator(&RfDrive::new(delta, theta + PI, DNU), &l).unwrap();
        let d = b.after(&a).unwrap().interior_distance(&ModeOperator::identity(l), k).unwrap();
        prop_assert!(d < 1e-10);
    }

    #[test]
    fn lossless_rings_conserve_power(kappa2 in 0.001..0.5f64, detuning in -2e-9..2e-9f64) {
        let ring = RingParams {
            resonance_wavelength: 1550e-9,
            power_coupling: kappa2,
            round_trip_loss: 1.0,
            radius: 50e-6,
            effective_index: 2.8,
        };
        let (t, d) = ring.ports_detuned(1550e-9 + detuning, 0.0);
        prop_assert!((t.norm_sqr() + d.norm_sqr() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ideal_ws_is_unitary_and_physical_is_subunitary(phases in proptest::collection::vec(-PI..PI, 4)) {
        let l = make_lattice(193.7e12, DNU, 8).unwrap();
        let channels: Vec<WsChannel> = (0..4)
            .map(|k| {
                let bin = k as i64 - 1;
                let wl = l.bin_wavelength(bin);
                WsChannel { bin, unit: WsUnitConfig::phase(RingParams::reference_waveshaper(wl), wl, phases[k]) }
            })
            .collect();
        let ideal = ws_operator(&channels, &l, WsModel::Ideal, OutsidePolicy::Unshaped).unwrap();
        prop_assert!(unitarity_deficit(&ideal, 0) < 1e-14);
        let phys = ws_operator(&channels, &l, WsModel::Physical, OutsidePolicy::Unshaped).unwrap();
        for b in l.bins() {
            prop_assert!(phys.element(b, b).unwrap().norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn unit_response_reciprocal_under_ring_swap(dd in -0.5..0.5f64, dm in -0.5..0.5f64, phase in -PI..PI) {
        let wl = 1550e-9;
        let base = WsUnitConfig::phase(RingParams::reference_waveshaper(wl), wl, phase);
        let lw = base.linewidth();
        let mut other = base.demux;
        other.power_coupling = 0.03;
        let a = WsUnitConfig { demux: other, ..base }.with_detunings(dd * lw, dm * lw);
        let b = WsUnitConfig { mux: other, demux: base.mux, ..base }.with_detunings(dm * lw, dd * lw);
        for probe in [wl - 0.3 * lw, wl, wl + 0.2 * lw] {
            let ra = qfp_core::rings::ws_unit_response(probe, &a);
            let rb = qfp_core::rings::ws_unit_response(probe, &b);
            prop_assert!((ra - rb).norm() < 1e-12);
        }
    }

    #[test]
    fn splitter_matches_closed_form(alpha in 0.0..2.0 * PI, delta in 0.3..1.3f64) {
        let l = make_lattice(193.7e12, DNU, default_half_width(delta) + 4).unwrap();
        let cfg = beamsplitter_config(alpha, delta, l, [0, 1]).unwrap();
        let v = submatrix(&compose_qfp(&cfg).unwrap(), [0, 1]).unwrap();
        let (r, t) = rt_closed_form(alpha, delta).unwrap();
        prop_assert!((v[(0, 0)].norm_sqr() - r).abs() < 1e-6);
        prop_assert!((v[(0, 1)].norm_sqr() - t).abs() < 1e-6);
        // Half the Frobenius norm is the mean of R and T over both columns.
        let half = 0.5 * v.iter().map(|z| z.norm_sqr()).sum::<f64>();
        prop_assert!((half - (r + t)).abs() < 1e-8);
    }

    #[test]
    fn fidelity_is_global_phase_invariant(alpha in PI..2.0 * PI, g in -PI..PI) {
        let l = make_lattice(193.7e12, DNU, default_half_width(0.8169) + 4).unwrap();
        let cfg = beamsplitter_config(alpha, 0.8169, l, [0, 1]).unwrap();
        let v = submatrix(&compose_qfp(&cfg).unwrap(), [0, 1]).unwrap();
        let target = qfp::target_unitary(0.5 * PI, 0.0, 0.0);
        let f0 = fidelity(&v, &target).unwrap();
        let f1 = fidelity(&(v * Complex64::cis(g)), &target).unwrap();
        prop_assert!((f0 - f1).abs() < 1e-12);
    }

    #[test]
    fn walk_conserves_probability(phases in proptest::collection::vec(-PI..PI, 6), delta in 0.1..1.5f64) {
        let mags = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5];
        let s = BiphotonState::from_polar(&mags, &phases).unwrap();
        let l = biphoton::walk_lattice(6, delta).unwrap();
        let a = biphoton::walk(&s, delta, &l).unwrap();
        prop_assert!((a.total_probability() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn jsi_is_gauge_invariant(phases in proptest::collection::vec(-PI..PI, 6), g in -PI..PI) {
        let mags = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5];
        let s = BiphotonState::from_polar(&mags, &phases).unwrap();
        let shifted: Vec<f64> = phases.iter().map(|p| p + g).collect();
        let t = BiphotonState::from_polar(&mags, &shifted).unwrap();
        let a = biphoton::simulate_jsi(&s, 0.8, [1, 4]).unwrap();
        let b = biphoton::simulate_jsi(&t, 0.8, [1, 4]).unwrap();
        prop_assert!((a - b).amax() < 1e-14);
    }

    #[test]
    fn equal_real_operators_give_symmetric_amplitude(mags in proptest::collection::vec(0.1..1.0f64, 6), delta in 0.1..1.5f64) {
        let s = BiphotonState::from_polar(&mags, &[0.0; 6]).unwrap();
        let l = biphoton::walk_lattice(6, delta).unwrap();
        let op = eom_operator(&RfDrive::new(delta, 0.0, l.spacing()), &l).unwrap();
        let a = biphoton::apply_joint(&op, &op, &s).unwrap();
        prop_assert!((&a.a - a.a.transpose()).iter().all(|z| z.norm() == 0.0));
        let j = biphoton::jsi(&a, [1, 4], JsiNormalization::Max).unwrap();
        prop_assert!((j.max() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mle_output_is_a_state(seed in 0u64..1000) {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let psi = tomo::random_pure_state(&mut rng);
        let rho = DensityMatrix::pure(&psi).unwrap();
        let recs = tomo::simulate_counts(&rho, &canonical_settings(), 300.0, 55.0, 0.8169, CountMode::Sampled { seed }).unwrap();
        let r = tomo::mle_reconstruct(&recs, &MleOptions { random_restarts: 1, ..MleOptions::default() }).unwrap();
        prop_assert!(r.rho.eigenvalues().iter().all(|&e| e >= -1e-10));
        prop_assert!((r.rho.matrix().trace().re - 1.0).abs() < 1e-10);
        let h = r.rho.matrix() - r.rho.matrix().adjoint();
        prop_assert!(h.iter().all(|z| z.norm() < 1e-12));
        prop_assert!(r.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn violation_only_above_threshold(v in 0.0..1.0f64, b in 50.0..500.0f64) {
        let pts: Vec<(f64, f64)> = (0..16)
            .map(|k| {
                let d = k as f64 * 2.0 * PI / 16.0;
                (d, b * (1.0 + v * d.cos()) + if k % 2 == 0 { 1.0 } else { -1.0 })
            })
            .collect();
        let fit = tomo::fit_visibility(&pts).unwrap();
        if fit.violates_bell {
            prop_assert!(fit.visibility > std::f64::consts::FRAC_1_SQRT_2 + fit.visibility_std);
        }
        prop_assert!((0.0..=1.0).contains(&fit.visibility));
    }
}
