mod common;

use common::*;
use proptest::prelude::*;
use rydion::constants::{angular, HBAR};
use rydion::crystal::linear_chain;
use rydion::crystal::CrystalIon;
use rydion::interactions::{driven_mode, mw_dressed_states, spin_transport, MWDressing, TransportBasis, TransportParams};
use rydion::trap::{IonSpecies, TrapConfig};

fn vector() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-1.0..1.0f64).prop_filter("direction", usable_direction)
}

fn ladder() -> impl Strategy<Value = LadderCase> {
    (
        prop::array::uniform2(0.0..30.0f64),
        prop::array::uniform2(-40.0..40.0f64),
        prop::array::uniform2(prop_oneof![Just(0.0), 0.0..10.0f64]),
        prop::array::uniform2(0.0..2.0f64),
        any::<bool>(),
        0usize..4,
    )
        .prop_map(|(rabi, detuning, decay, linewidth, pulsed, start)| LadderCase { rabi, detuning, decay, linewidth, pulsed, start })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn density_matrix_stays_physical(case in ladder()) {
        prop_assert_eq!(density_matrix_contract(&case), Ok(()));
    }

    #[test]
    fn trap_potential_is_harmonic(
        gamma_prime in 0.0..1e9f64,
        gamma in -1e7..1e7f64,
        epsilon in -0.5..0.5f64,
        rf_mhz in 1.0..50.0f64,
        stray in prop::array::uniform3(-100.0..100.0f64),
        pos in prop::array::uniform3(-1e-4..1e-4f64),
        time in 0.0..1e-6f64,
    ) {
        let case = TrapCase { gamma_prime, gamma, epsilon, omega_rf: angular(rf_mhz * 1e6), stray, pos, time };
        prop_assert_eq!(laplace_constraint(&case), Ok(()));
    }

    #[test]
    fn normal_modes_are_orthonormal(
        ions in 1usize..7,
        aspect in 1.2..8.0f64,
        axial_mhz in 0.3..3.0f64,
        doubly in prop::collection::vec(prop::bool::weighted(0.2), 6),
    ) {
        prop_assert_eq!(mode_orthonormality(&CrystalCase { ions, aspect, axial_mhz, doubly }), Ok(()));
    }

    #[test]
    fn bessel_series_is_complete(x in -40.0..40.0f64, beta_mm in 0.0..3.0f64, beta_alpha in -1.0..1.0f64) {
        prop_assert_eq!(bessel_completeness(x, beta_mm, beta_alpha), Ok(()));
    }

    #[test]
    fn multipole_error_is_third_order(
        distance in 1e-6..30e-6f64,
        direction in vector(),
        first in vector(),
        second in vector(),
        scale in prop::array::uniform2(0.3..1.0f64),
    ) {
        let case = PairCase { distance, direction, electron_dirs: [first, second], electron_scale: scale };
        prop_assert_eq!(multipole_slope_check(&case), Ok(()));
    }

    #[test]
    fn dressed_states_are_orthonormal(
        rabi in 1.0..1000.0f64,
        delta_s in -500.0..500.0f64,
        delta_p in -500.0..500.0f64,
        alpha_s in -1e-29..1e-29f64,
        alpha_p in -1e-29..1e-29f64,
    ) {
        let d = MWDressing { rabi_mw: angular(rabi * 1e6), delta_s: angular(delta_s * 1e6), delta_p: angular(delta_p * 1e6), dipole_d1: 4e-27, alpha_s, alpha_p };
        let pair = mw_dressed_states(&d).unwrap();
        let (a, b) = (pair.plus.amplitudes, pair.minus.amplitudes);
        prop_assert!((a[0] * a[0] + a[1] * a[1] - 1.0).abs() < 1e-12);
        prop_assert!((b[0] * b[0] + b[1] * b[1] - 1.0).abs() < 1e-12);
        prop_assert!((a[0] * b[0] + a[1] * b[1]).abs() < 1e-12);
        prop_assert!((pair.plus.mixing * pair.minus.mixing + 1.0).abs() < 1e-9);
        let (lo, hi) = (alpha_s.min(alpha_p), alpha_s.max(alpha_p));
        for s in [pair.plus, pair.minus] {
            prop_assert!(s.polarizability >= lo - 1e-12 * hi.abs() && s.polarizability <= hi + 1e-12 * hi.abs());
        }
    }

    #[test]
    fn kick_phases_compose(
        omega_mhz in 0.5..5.0f64,
        first in prop::collection::vec((-5e6..5e6f64, 1e-9..2e-7f64), 1..4),
        second in prop::collection::vec((-5e6..5e6f64, 1e-9..2e-7f64), 1..4),
    ) {
        let w = angular(omega_mhz * 1e6);
        let (ba, pa) = driven_mode(w, 0.0, &first);
        let start: f64 = first.iter().map(|s| s.1).sum();
        let (bb, pb) = driven_mode(w, start, &second);
        let joined: Vec<(f64, f64)> = first.iter().chain(&second).cloned().collect();
        let (bt, pt) = driven_mode(w, 0.0, &joined);
        let scale = bt.norm().max(ba.norm()).max(bb.norm()).max(1e-12);
        prop_assert!((bt - ba - bb).norm() < 1e-9 * scale);
        let composed = pa + pb + (ba.conj() * bb).im;
        prop_assert!((pt - composed).abs() < 1e-9 * (pa.abs() + pb.abs() + scale * scale));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn transport_conserves_magnetization(ions in 2usize..9, onsite in -1.0..1.0f64, from_last in any::<bool>()) {
        let ca = IonSpecies::calcium40();
        let trap = TrapConfig::from_secular(&ca, angular(10e6), angular(1e6), angular(100e6)).unwrap();
        let chain = linear_chain(&trap, &vec![CrystalIon::ground(ca); ions]).unwrap();
        let times: Vec<f64> = (0..40).map(|k| k as f64 * 0.1e-6).collect();
        let p = TransportParams { exchange: HBAR * 1e6, onsite: onsite * HBAR * 1e6, basis: TransportBasis::SingleExcitation };
        let sector = spin_transport(&chain, &p, &times, from_last).unwrap();
        let expected = 1.0 - 0.5 * ions as f64;
        prop_assert!(sector.total.iter().all(|t| (t - expected).abs() < 1e-10));
        let mirrored = spin_transport(&chain, &p, &times, !from_last).unwrap();
        for (a, b) in sector.magnetization.iter().zip(&mirrored.magnetization) {
            for i in 0..ions {
                prop_assert!((a[i] - b[ions - 1 - i]).abs() < 1e-8);
            }
        }
        if ions <= 6 {
            let full = spin_transport(&chain, &TransportParams { basis: TransportBasis::Full, ..p }, &times, from_last).unwrap();
            for (a, b) in sector.magnetization.iter().zip(&full.magnetization) {
                for i in 0..ions {
                    prop_assert!((a[i] - b[i]).abs() < 1e-8);
                }
            }
        }
    }
}
