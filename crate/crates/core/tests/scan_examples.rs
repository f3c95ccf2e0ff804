use qrm_stirling::cycle::{alpha_coefficient, run_cycle};
use qrm_stirling::eigen::{converged_spectrum_with, ConvergenceSettings};
use qrm_stirling::model::{effective_excitation, ModelParams, Phase};
use qrm_stirling::scan::{
    convergence_study, fit_asymptote_from_sweep, fit_exponent, fit_exponent_from_spectra, log_grid,
    sweep_efficiency, sweep_spectrum, BackendKind, SweepBase, SweepPlan, SweepVariable,
};

fn analytic_plan(theta_c: f64, grid: Vec<f64>) -> SweepPlan {
    let base = SweepBase { g1: 0.2, theta_c, dt_frac: 0.1, ratio: 400.0, backend: BackendKind::Analytic, ..Default::default() };
    SweepPlan::new(SweepVariable::G2, grid, base).unwrap()
}

#[test]
fn level_spacing_at_criticality_shrinks_with_ratio() {
    let spacing = |ratio: f64| {
        let s = converged_spectrum_with(&ModelParams::new(ratio, 1.0).unwrap(), &ConvergenceSettings::default()).unwrap();
        (s.energies[7] - s.energies[0]) / 7.0
    };
    assert!(spacing(800.0) < spacing(100.0));
}

#[test]
fn superradiant_doublet_is_far_below_the_normal_gap() {
    let base = SweepBase { ratio: 800.0, ..Default::default() };
    let rows = sweep_spectrum(&SweepPlan::new(SweepVariable::G, vec![0.8, 1.2], base).unwrap(), 8).unwrap();
    assert!(rows.iter().all(|r| r.spectrum.as_ref().unwrap().converged));
    let (normal, doublet) = (rows[0].gap.unwrap(), rows[1].gap.unwrap());
    assert!(doublet * 100.0 <= normal, "{doublet} vs {normal}");
}

#[test]
fn decoupled_column_is_the_bare_ladder() {
    let base = SweepBase { ratio: 7.0, ..Default::default() };
    let rows = sweep_spectrum(&SweepPlan::new(SweepVariable::G, vec![0.0], base).unwrap(), 8).unwrap();
    let mut ladder: Vec<f64> = (0..8).flat_map(|n| [n as f64 - 3.5, n as f64 + 3.5]).collect();
    ladder.sort_by(f64::total_cmp);
    assert_eq!(rows[0].spectrum.as_ref().unwrap().energies, ladder[..8].to_vec());
}

#[test]
fn analytic_exponent_is_one_half() {
    let samples: Vec<(f64, f64)> = log_grid(1e-6, 1e-3, 10)
        .into_iter()
        .map(|d| (1.0 - d, effective_excitation(1.0 - d, Phase::Normal).unwrap()))
        .collect();
    let fit = fit_exponent(&samples).unwrap();
    assert!((fit.estimate - 0.5).abs() < 1e-3);
    assert!(fit.window.0 >= 1.0 - 1e-3 && fit.window.1 <= 1.0 - 1e-6);
}

#[test]
fn finite_size_exponent_is_near_one_half() {
    let base = SweepBase { ratio: 800.0, ..Default::default() };
    let grid: Vec<f64> = (90..=98).map(|i| i as f64 / 100.0).collect();
    let rows = sweep_spectrum(&SweepPlan::new(SweepVariable::G, grid, base).unwrap(), 8).unwrap();
    let fit = fit_exponent_from_spectra(&rows).unwrap();
    assert!((0.4..=0.6).contains(&fit.estimate), "{}", fit.estimate);
    assert_eq!(fit.excluded, 0);
}

#[test]
fn asymptote_fit_in_the_logarithmic_regime() {
    // at theta_C = 1e-3 the window 1e-8..1e-4 is already logarithmic
    let mut grid: Vec<f64> = log_grid(1e-8, 1e-4, 17).into_iter().map(|d| 1.0 - d).collect();
    grid.sort_by(f64::total_cmp);
    let plan = analytic_plan(1e-3, grid);
    let rows = sweep_efficiency(&plan);
    let fit = fit_asymptote_from_sweep(&rows, 0.5).unwrap();
    assert!(fit.r2 > 0.99, "r2 {}", fit.r2);
    let mid = 1.0 - 1e-6;
    let spec = plan.cycle_spec(mid).unwrap();
    let alpha = alpha_coefficient(&run_cycle(&spec).unwrap(), &spec);
    assert!(alpha < 0.0);
    assert!((fit.estimate - alpha.abs()).abs() < 0.1 * alpha.abs(), "{} vs {}", fit.estimate, alpha);
}

#[test]
fn deficit_at_fixed_g2_grows_as_temperature_falls() {
    // at g2 = 0.999 the excitation gap is ~0.045 omega0, so colder baths
    // freeze the hot-isotherm entropy gain and widen the deficit
    let deficits: Vec<f64> = [1e-3, 1e-4, 1e-5]
        .iter()
        .map(|&t| sweep_efficiency(&analytic_plan(t, vec![0.999]))[0].result.as_ref().unwrap().deficit().unwrap())
        .collect();
    assert!(deficits[0] < deficits[1] && deficits[1] < deficits[2], "{deficits:?}");
}

#[test]
fn convergence_cost_grows_with_ratio_and_coupling() {
    let gs = [0.0, 0.5, 1.0, 1.2, 1.5];
    let rows = convergence_study(&[100.0, 800.0], &gs, 8, &[1e-6, 1e-8, 1e-10], 32, 4096);
    assert!(rows.iter().all(|r| r.converged));
    for r in rows.iter().filter(|r| r.g == 0.0) {
        assert_eq!(r.n_max_used, Some(32));
    }
    for ratio in [100.0, 800.0] {
        for &g in &gs {
            let ladder: Vec<usize> = rows
                .iter()
                .filter(|r| r.ratio == ratio && r.g == g)
                .map(|r| r.n_max_used.unwrap())
                .collect();
            assert!(ladder.windows(2).all(|w| w[0] <= w[1]));
        }
    }
    let costliest = rows.iter().max_by_key(|r| (r.n_max_used, (r.g * 1e3) as i64)).unwrap();
    assert_eq!((costliest.ratio, costliest.g), (800.0, 1.5));
}
