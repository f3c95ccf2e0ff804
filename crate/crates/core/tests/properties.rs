use proptest::prelude::*;
use qrm_stirling::cycle::{bound_report, run_cycle, CycleBackend, CycleSpec};
use qrm_stirling::eigen::{eigh, qrm_levels};
use qrm_stirling::model::{build_hamiltonian, ModelParams, Truncation};
use qrm_stirling::scan::{fit_exponent, sweep_efficiency, BackendKind, SweepBase, SweepPlan, SweepVariable};
use qrm_stirling::thermo::{analytic_state, levels_state};

fn normal_spec() -> impl Strategy<Value = CycleSpec> {
    // T_C from 3e-3 omega0 upward keeps Boltzmann factors representable
    (0.1..0.7f64, 0.8..1.0f64, -2.5..1.0f64, 0.01..0.5f64, 1.0..800.0f64).prop_filter_map(
        "g2 below the critical point",
        |(g1, g2, log_t, dt, ratio)| {
            let g2 = g2.min(1.0 - 1e-6);
            let theta = 10f64.powf(log_t) / ratio;
            CycleSpec::from_theta(g1, g2, theta, dt, ratio, CycleBackend::Analytic).ok()
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ladder_state_is_physical(eps in 1e-3..10.0f64, t in 1e-3..10.0f64, e0 in -500.0..0.0f64) {
        let s = analytic_state(e0, eps, 1.0 / t).unwrap();
        let hotter = analytic_state(e0, eps, 1.0 / (t * 1.01)).unwrap();
        prop_assert!(s.entropy >= 0.0 && s.heat_capacity >= 0.0);
        prop_assert!(hotter.entropy >= s.entropy && hotter.u_excess >= s.u_excess);
        let identity = s.entropy - (s.ln_z + s.beta * s.internal_energy());
        prop_assert!(identity.abs() <= 1e-12 * (s.beta * e0).abs().max(1.0));
    }

    #[test]
    fn finite_level_state_is_physical(levels in prop::collection::vec(-50.0..50.0f64, 1..40), t in 0.05..20.0f64) {
        let s = levels_state(&levels, 1.0 / t).unwrap();
        prop_assert!(s.entropy >= -1e-12);
        prop_assert!(s.entropy <= (levels.len() as f64).ln() + 1e-12);
        prop_assert!(s.heat_capacity >= 0.0);
        let identity = s.entropy - (s.ln_z + s.beta * s.internal_energy());
        prop_assert!(identity.abs() <= 1e-11 * (s.beta * s.e_ref).abs().max(1.0));
    }

    #[test]
    fn normal_phase_cycles_respect_the_bounds(spec in normal_spec()) {
        let r = run_cycle(&spec).unwrap();
        let rep = bound_report(&r, &spec).unwrap();
        prop_assert!(rep.all_satisfied(), "{:?}", rep);
        prop_assert!((r.work - (r.q_ab + r.q_bc + r.q_cd + r.q_da)).abs() <= 1e-15 * r.q_ab.abs().max(1e-300));
        if let (Some(eta), Some(dec)) = (r.eta, r.eta_decomposed) {
            prop_assert!((eta - dec).abs() <= 1e-9);
            if r.work > 0.0 {
                prop_assert!(eta <= r.eta_carnot + 1e-10);
            }
        }
    }

    #[test]
    fn parity_chains_reproduce_the_dense_spectrum(ratio in 0.5..50.0f64, g in 0.0..2.0f64, n in 1usize..40) {
        let p = ModelParams::new(ratio, g).unwrap();
        let t = Truncation::new(n).unwrap();
        let dense = eigh(&build_hamiltonian(&p, t), false).unwrap().values;
        let chains = qrm_levels(&p, t).unwrap().energies;
        prop_assert_eq!(dense.len(), chains.len());
        let scale = dense.iter().fold(1.0f64, |m, e| m.max(e.abs()));
        for (a, b) in dense.iter().zip(&chains) {
            prop_assert!((a - b).abs() <= 1e-11 * scale);
        }
    }

    #[test]
    fn exact_power_laws_are_recovered(p in 0.1..3.0f64, c in 0.01..100.0f64, mut ds in prop::collection::vec(1e-9..0.5f64, 3..20)) {
        ds.sort_by(f64::total_cmp);
        ds.dedup_by(|a, b| (*a / *b - 1.0).abs() < 1e-6);
        prop_assume!(ds.len() >= 3);
        let samples: Vec<(f64, f64)> = ds.iter().map(|&d| (1.0 + d, c * ((1.0 + d) - 1.0).powf(p))).collect();
        let fit = fit_exponent(&samples).unwrap();
        prop_assert!((fit.estimate - p).abs() < 1e-12, "{} vs {}", fit.estimate, p);
        prop_assert!((fit.r2 - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sweeps_are_pure_maps_over_the_grid(picks in prop::collection::vec(any::<bool>(), 12)) {
        let grid: Vec<f64> = (0..12).map(|i| 0.86 + 0.03 * i as f64).collect();
        let base = SweepBase { ratio: 50.0, theta_c: 1e-3, backend: BackendKind::Spectral, ..Default::default() };
        let full = sweep_efficiency(&SweepPlan::new(SweepVariable::G2, grid.clone(), base).unwrap());
        let subset: Vec<f64> = grid.iter().zip(&picks).filter(|(_, p)| **p).map(|(g, _)| *g).collect();
        prop_assume!(!subset.is_empty());
        let part = sweep_efficiency(&SweepPlan::new(SweepVariable::G2, subset, base).unwrap());
        for row in &part {
            let same = full.iter().find(|r| r.value == row.value).unwrap();
            prop_assert_eq!(&same.result, &row.result);
        }
    }
}
