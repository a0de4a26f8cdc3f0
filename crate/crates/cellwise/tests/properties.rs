//! Property tests over the spec-level invariants that hold for *any*
//! input, not just the designed scenarios.

mod common;

use cellwise::adaptive::{
    autotune_step, condition_number, excitation_tag, AutoTuneConfig, AutoTuneState,
    ExcitationTag, TagConfig,
};
use cellwise::joint::{error_report, EstimateTrace, TraceRecord};
use cellwise::linalg::{Matrix, Vector};
use cellwise::model::{
    inject_noise, simulate_step, CellState, NoiseConfig, OcvCurve, ProfileSample,
};
use cellwise::rls::{dffrls_step, ArxTheta, DffRlsState, ForgettingMatrix, Regressor};
use common::nominal_ecm;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// SOC saturates inside [0, 1] for any current sequence.
    #[test]
    fn soc_stays_in_unit_interval(
        soc0 in 0.0f64..1.0,
        currents in prop::collection::vec(-500.0f64..500.0, 1..200),
        dt in 0.1f64..60.0,
    ) {
        let ecm = nominal_ecm();
        let curve = OcvCurve::default_synthetic();
        let mut state = CellState::new(soc0, 0.0);
        for i in currents {
            let (next, _) = simulate_step(state, i, dt, &ecm, &curve).unwrap();
            prop_assert!(next.soc >= 0.0 && next.soc <= 1.0);
            state = next;
        }
    }

    /// Noise injection is a pure function of (profile, config).
    #[test]
    fn noise_injection_deterministic(
        seed in any::<u64>(),
        bias in -2.0f64..2.0,
        sigma_i in 0.0f64..3.0,
        sigma_v in 0.0f64..0.05,
    ) {
        let samples: Vec<ProfileSample<f64>> = (0..50)
            .map(|k| ProfileSample {
                t: k as f64,
                current: (k as f64 * 0.7).sin() * 50.0,
                voltage: Some(3.7 + (k as f64 * 0.3).cos() * 0.1),
                temperature: None,
            })
            .collect();
        let profile = cellwise::model::DriveProfile::new(samples).unwrap();
        let cfg = NoiseConfig::new(bias, sigma_i, sigma_v, seed).unwrap();
        let a = inject_noise(&profile, &cfg);
        let b = inject_noise(&profile, &cfg);
        prop_assert_eq!(a, b);
    }

    /// Condition number: at least 1, and invariant under positive scaling.
    #[test]
    fn condition_number_properties(
        d in prop::collection::vec(0.01f64..100.0, 4),
        scale in 1e-6f64..1e6,
    ) {
        let m = Matrix::<f64, 4>::from_diag([d[0], d[1], d[2], d[3]]);
        let cn = condition_number(&m).unwrap();
        prop_assert!(cn >= 1.0);
        let cn_scaled = condition_number(&m.scale(scale)).unwrap();
        prop_assert!((cn_scaled - cn).abs() <= 1e-10 * cn);
    }

    /// The excitation tag only sees the window's multiset of values.
    #[test]
    fn excitation_tag_permutation_invariant(
        mut window in prop::collection::vec(-80.0f64..80.0, 60),
        swap_a in 0usize..60,
        swap_b in 0usize..60,
    ) {
        let cfg = TagConfig::for_one_c(72.0);
        let before = excitation_tag(&window, &cfg).unwrap();
        window.swap(swap_a, swap_b);
        window.reverse();
        prop_assert_eq!(excitation_tag(&window, &cfg).unwrap(), before);
    }

    /// The tuner respects its bounds for any finite CN sequence.
    #[test]
    fn autotune_bounded(
        lambda0 in 0.90f64..0.9999,
        cns in prop::collection::vec(1.0f64..1e12, 1..2000),
    ) {
        let cfg = AutoTuneConfig {
            eval_window: 10,
            ..AutoTuneConfig::<f64>::default()
        };
        let mut state = AutoTuneState::new(lambda0, &cfg);
        for cn in cns {
            state = autotune_step(&state, cn, &cfg, ExcitationTag::Sufficient);
            prop_assert!(state.lambda1 >= cfg.lambda_lo);
            prop_assert!(state.lambda1 <= cfg.lambda_hi);
        }
    }

    /// Error reports always satisfy max >= avg >= 0.
    #[test]
    fn report_max_dominates_avg(
        pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0, 3.0f64..4.2), 2..300),
        warmup in 0usize..100,
    ) {
        let records: Vec<TraceRecord<f64>> = pairs
            .iter()
            .enumerate()
            .map(|(k, &(est, _, v))| TraceRecord {
                t: k as f64,
                soc_est: est,
                v_est: v + 0.01,
                tag: 0,
                cn: f64::NAN,
                lambda1: f64::NAN,
                r0_est: f64::NAN,
                r1_est: f64::NAN,
                c1_est: f64::NAN,
            })
            .collect();
        let trace = EstimateTrace { records };
        let truth: Vec<f64> = pairs.iter().map(|&(_, t, _)| t).collect();
        let meas: Vec<f64> = pairs.iter().map(|&(_, _, v)| v).collect();
        let report = error_report(&trace, Some(&truth), Some(&meas), warmup, "e", "p").unwrap();
        if let (Some(max), Some(avg)) = (report.soc_max_pct, report.soc_avg_pct) {
            prop_assert!(max >= avg && avg >= 0.0);
        }
        if let (Some(max), Some(avg)) = (report.v_max_mv, report.v_avg_mv) {
            prop_assert!(max >= avg && avg >= 0.0);
        }
    }

    /// One identification step keeps P symmetric positive definite for
    /// any reasonable regressor, and leaves theta fixed at zero
    /// innovation.
    #[test]
    fn dffrls_step_preserves_spd(
        v_prev in 3.0f64..4.2,
        i_now in -100.0f64..100.0,
        i_prev in -100.0f64..100.0,
        y_offset in -0.5f64..0.5,
        lambda in 0.9f64..1.0,
    ) {
        let theta = ArxTheta::new([0.04, 0.99, -1.5e-3, 1.45e-3]).unwrap();
        let state = DffRlsState::new(theta, 100.0, ForgettingMatrix::uniform(lambda).unwrap());
        let phi = Regressor::new(v_prev, i_now, i_prev).unwrap();
        let y = theta.predict(&phi) + y_offset;
        let (next, alpha) = dffrls_step(&state, &phi, y).unwrap();
        prop_assert!((alpha - y_offset).abs() < 1e-9);
        let eig = next.p.sym_eigenvalues();
        prop_assert!(eig[0] > 0.0);
        prop_assert!(next.p.max_asymmetry() < 1e-10);
    }

    /// Prediction then exact-measurement update round-trips the state
    /// regardless of where it starts.
    #[test]
    fn ekf_zero_innovation_fixed_point(
        soc in 0.05f64..0.95,
        v1 in -0.1f64..0.1,
        current in -100.0f64..100.0,
    ) {
        use cellwise::ekf::{ekf_update, EkfModel, EkfState};
        let model = EkfModel::new(nominal_ecm(), OcvCurve::default_synthetic(), 1.0).unwrap();
        let state = EkfState::new(
            Vector([soc, v1]),
            Matrix::from_diag([1e-2, 1e-4]),
            Matrix::from_diag([1e-10, 1e-8]),
            10.0,
            25e-6,
        )
        .unwrap();
        let v = model.predict_voltage(&state.x, current).unwrap();
        let (next, innovation) = ekf_update(&state, &model, v, current).unwrap();
        prop_assert_eq!(innovation, 0.0);
        prop_assert_eq!(next.x, state.x);
    }
}
