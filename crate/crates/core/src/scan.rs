//! Parameter sweeps, regression fits and truncation-convergence studies.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::cycle::{
    run_cycle_on, CornerCache, CornerLevels, CycleBackend, CycleError, CycleResult, CycleSpec,
};
use crate::eigen::{converged_spectrum_with, ConvergenceSettings, EigenError, Spectrum};
use crate::model::{ModelParams, G_CRITICAL};
use crate::output::{fmt_f64, Cell, Table};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScanError {
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error("sweep grid must be strictly increasing (at position {0})")]
    UnsortedGrid(usize),
    #[error("grid value {value} is outside the domain of {variable}")]
    OutOfDomain { variable: &'static str, value: f64 },
    #[error("need at least {need} usable points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("all samples must lie on one side of the critical point")]
    MixedSides,
    #[error("sample {0} is not usable: {1}")]
    BadSample(usize, &'static str),
    #[error("design matrix is degenerate")]
    Degenerate,
    #[error("need at least {0} levels")]
    TooFewLevels(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepVariable {
    G2,
    G,
    ThetaC,
    Ratio,
}

impl SweepVariable {
    pub fn name(&self) -> &'static str {
        match self {
            SweepVariable::G2 => "g2",
            SweepVariable::G => "g",
            SweepVariable::ThetaC => "theta_c",
            SweepVariable::Ratio => "ratio",
        }
    }

    fn admits(&self, v: f64) -> bool {
        v.is_finite()
            && match self {
                SweepVariable::G2 | SweepVariable::G => v >= 0.0,
                SweepVariable::ThetaC | SweepVariable::Ratio => v > 0.0,
            }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    Analytic,
    Spectral,
}

/// Parameters held fixed during a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepBase {
    pub g1: f64,
    pub g2: f64,
    /// Coupling for spectrum sweeps over `ratio`.
    pub g: f64,
    pub theta_c: f64,
    /// `T_H = T_C (1 + dt_frac)`.
    pub dt_frac: f64,
    pub ratio: f64,
    pub backend: BackendKind,
    pub settings: ConvergenceSettings,
}

impl Default for SweepBase {
    fn default() -> Self {
        Self {
            g1: 0.2,
            g2: 0.99,
            g: 1.0,
            theta_c: 1e-4,
            dt_frac: 0.1,
            ratio: 400.0,
            backend: BackendKind::Spectral,
            settings: ConvergenceSettings::default(),
        }
    }
}

impl SweepBase {
    pub fn cycle_backend(&self) -> CycleBackend {
        match self.backend {
            BackendKind::Analytic => CycleBackend::Analytic,
            BackendKind::Spectral => CycleBackend::Spectral(self.settings),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub variable: SweepVariable,
    pub grid: Vec<f64>,
    pub base: SweepBase,
    /// Columns to emit; empty means all.
    pub outputs: Vec<String>,
}

impl SweepPlan {
    pub fn new(variable: SweepVariable, grid: Vec<f64>, base: SweepBase) -> Result<Self, ScanError> {
        if grid.is_empty() {
            return Err(ScanError::EmptyGrid);
        }
        for (i, &v) in grid.iter().enumerate() {
            if !variable.admits(v) {
                return Err(ScanError::OutOfDomain { variable: variable.name(), value: v });
            }
            if i > 0 && !(v > grid[i - 1]) {
                return Err(ScanError::UnsortedGrid(i));
            }
        }
        Ok(Self { variable, grid, base, outputs: Vec::new() })
    }

    pub fn cycle_spec(&self, value: f64) -> Result<CycleSpec, CycleError> {
        let b = &self.base;
        let (mut g2, mut theta_c, mut ratio) = (b.g2, b.theta_c, b.ratio);
        match self.variable {
            SweepVariable::G2 | SweepVariable::G => g2 = value,
            SweepVariable::ThetaC => theta_c = value,
            SweepVariable::Ratio => ratio = value,
        }
        CycleSpec::from_theta(b.g1, g2, theta_c, b.dt_frac, ratio, b.cycle_backend())
    }

    pub fn model_params(&self, value: f64) -> Result<ModelParams, crate::model::ModelError> {
        match self.variable {
            SweepVariable::Ratio => ModelParams::new(value, self.base.g),
            _ => ModelParams::new(self.base.ratio, value),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub spec: Option<CycleSpec>,
    pub result: Result<CycleResult, CycleError>,
}

impl SweepRow {
    pub fn eta(&self) -> Option<f64> {
        self.result.as_ref().ok().and_then(|r| r.eta)
    }

    pub fn status(&self) -> String {
        match &self.result {
            Err(e) => format!("error: {e}"),
            Ok(r) if !r.converged => "unconverged".to_owned(),
            Ok(r) => r.outcome.tag().to_owned(),
        }
    }
}

/// One cycle per grid point; points are independent and the output order
/// follows the grid.
pub fn sweep_efficiency(plan: &SweepPlan) -> Vec<SweepRow> {
    let specs: Vec<Result<CycleSpec, CycleError>> =
        plan.grid.iter().map(|&v| plan.cycle_spec(v)).collect();

    let mut seen = HashSet::new();
    let mut corners: Vec<(f64, f64, f64, CycleBackend)> = Vec::new();
    for spec in specs.iter().flatten() {
        for g in [spec.g1, spec.g2] {
            if seen.insert(CornerCache::key(g, spec.ratio, spec.t_hot)) {
                corners.push((g, spec.ratio, spec.t_hot, spec.backend));
            }
        }
    }
    let computed: Vec<Result<CornerLevels, CycleError>> = corners
        .par_iter()
        .map(|(g, ratio, t_hot, backend)| CornerLevels::for_coupling(*g, *ratio, backend, *t_hot))
        .collect();
    let mut cache = CornerCache::default();
    let mut failures: HashMap<(u64, u64, u64), CycleError> = HashMap::new();
    for ((g, ratio, t_hot, _), levels) in corners.iter().zip(computed) {
        match levels {
            Ok(l) => cache.insert(*g, *ratio, *t_hot, l),
            Err(e) => {
                failures.insert(CornerCache::key(*g, *ratio, *t_hot), e);
            }
        }
    }

    plan.grid
        .par_iter()
        .zip(specs.par_iter())
        .map(|(&value, spec)| {
            let result = spec.clone().and_then(|spec| {
                let lookup = |g: f64| {
                    let key = CornerCache::key(g, spec.ratio, spec.t_hot);
                    match failures.get(&key) {
                        Some(e) => Err(e.clone()),
                        None => Ok(cache.get(g, spec.ratio, spec.t_hot).expect("cached corner")),
                    }
                };
                run_cycle_on(&spec, lookup(spec.g1)?, lookup(spec.g2)?)
            });
            SweepRow { value, spec: spec.as_ref().ok().copied(), result }
        })
        .collect()
}

pub const CYCLE_COLUMNS: [&str; 16] = [
    "g1", "g2", "T_C", "T_H", "ratio", "backend", "Q_AB", "Q_BC", "Q_CD", "Q_DA", "W", "eta",
    "eta_carnot", "sigma1", "sigma2", "status",
];

pub fn cycle_table(rows: &[SweepRow], outputs: &[String]) -> Table {
    let mut full = Table::new(CYCLE_COLUMNS);
    for row in rows {
        let status: Cell = row.status().into();
        let cells: Vec<Cell> = match (&row.spec, &row.result) {
            (Some(s), Ok(r)) => vec![
                s.g1.into(),
                s.g2.into(),
                s.t_cold.into(),
                s.t_hot.into(),
                s.ratio.into(),
                s.backend.name().into(),
                r.q_ab.into(),
                r.q_bc.into(),
                r.q_cd.into(),
                r.q_da.into(),
                r.work.into(),
                r.eta.into(),
                r.eta_carnot.into(),
                r.sigmas.map(|x| x.sigma1).into(),
                r.sigmas.map(|x| x.sigma2).into(),
                status,
            ],
            (Some(s), Err(_)) => {
                let mut v = vec![
                    s.g1.into(),
                    s.g2.into(),
                    s.t_cold.into(),
                    s.t_hot.into(),
                    s.ratio.into(),
                    s.backend.name().into(),
                ];
                v.extend(std::iter::repeat_n(Cell::Empty, 6));
                v.push(s.eta_carnot().into());
                v.extend([Cell::Empty, Cell::Empty, status]);
                v
            }
            (None, _) => {
                let mut v = vec![Cell::Empty; CYCLE_COLUMNS.len() - 1];
                v.push(status);
                v
            }
        };
        full.push(cells);
    }
    select_columns(full, outputs)
}

fn select_columns(table: Table, outputs: &[String]) -> Table {
    if outputs.is_empty() {
        return table;
    }
    let idx: Vec<usize> = outputs.iter().filter_map(|c| table.column(c)).collect();
    let mut out = Table::new(idx.iter().map(|&i| table.columns[i].clone()));
    for row in table.rows {
        out.push(idx.iter().map(|&i| row[i].clone()).collect());
    }
    out
}

/// Tie tolerance, relative to `eta_C`, under which two efficiencies are
/// treated as equal when locating the maximum.
pub const PEAK_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EfficiencyPeak {
    pub index: usize,
    /// Grid value of the maximum (the coupling `g_m` for a `g2` sweep).
    pub at: f64,
    pub eta_max: f64,
    pub eta_carnot: f64,
    /// Spacing of the grid around the maximum.
    pub resolution: f64,
}

/// Maximum of `eta` over the sweep; among points within
/// `PEAK_TIE_TOL * eta_C` of the maximum the first one is returned.
pub fn efficiency_peak(rows: &[SweepRow]) -> Option<EfficiencyPeak> {
    let usable: Vec<(usize, f64, f64)> = rows
        .iter()
        .enumerate()
        .filter_map(|(i, r)| match &r.result {
            Ok(res) if res.converged => res.eta.map(|e| (i, e, res.eta_carnot)),
            _ => None,
        })
        .collect();
    let (_, eta_max, eta_c) = usable.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1))?;
    let (index, eta, _) = usable
        .iter()
        .copied()
        .find(|&(_, e, _)| e >= eta_max - PEAK_TIE_TOL * eta_c)?;
    let resolution = if rows.len() < 2 {
        0.0
    } else {
        let lo = index.saturating_sub(1);
        let hi = (index + 1).min(rows.len() - 1);
        (rows[hi].value - rows[lo].value) / (hi - lo) as f64
    };
    Some(EfficiencyPeak { index, at: rows[index].value, eta_max: eta, eta_carnot: eta_c, resolution })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumRow {
    pub ratio: f64,
    pub g: f64,
    pub spectrum: Result<Spectrum, EigenError>,
    pub gap: Option<f64>,
}

/// Lowest `k` levels at every grid point of a `g` or `ratio` sweep.
pub fn sweep_spectrum(plan: &SweepPlan, k: usize) -> Result<Vec<SpectrumRow>, ScanError> {
    if k < 2 {
        return Err(ScanError::TooFewLevels(2));
    }
    let settings = ConvergenceSettings { levels: k, ..plan.base.settings };
    Ok(plan
        .grid
        .par_iter()
        .map(|&v| {
            let (ratio, g) = match plan.variable {
                SweepVariable::Ratio => (v, plan.base.g),
                _ => (plan.base.ratio, v),
            };
            let spectrum = ModelParams::new(ratio, g)
                .map_err(EigenError::from)
                .and_then(|p| converged_spectrum_with(&p, &settings));
            let gap = spectrum.as_ref().ok().and_then(|s| s.ground_gap().ok());
            SpectrumRow { ratio, g, spectrum, gap }
        })
        .collect())
}

pub fn spectrum_table(rows: &[SpectrumRow], k: usize) -> Table {
    let mut cols: Vec<String> = vec!["index".into(), "g".into(), "ratio".into()];
    cols.extend((0..k).map(|i| format!("E_{i}")));
    cols.extend(["gap", "n_max_used", "converged", "max_shift"].map(String::from));
    let mut t = Table::new(cols);
    for (i, row) in rows.iter().enumerate() {
        let mut cells: Vec<Cell> = vec![i.into(), row.g.into(), row.ratio.into()];
        match &row.spectrum {
            Ok(s) => {
                cells.extend((0..k).map(|j| s.energies.get(j).copied().into()));
                cells.push(row.gap.into());
                cells.push(s.n_max_used.into());
                cells.push(s.converged.into());
                cells.push(s.max_shift.into());
            }
            Err(e) => {
                cells.extend(std::iter::repeat_n(Cell::Empty, k + 2));
                cells.push(false.into());
                cells.push(Cell::Text(format!("error: {e}")));
            }
        }
        t.push(cells);
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub estimate: f64,
    pub stderr: f64,
    pub r2: f64,
    /// Smallest and largest coupling used.
    pub window: (f64, f64),
    pub residuals: Vec<f64>,
    /// Intercept of the log-log line (exponent fits only).
    pub intercept: Option<f64>,
    pub n_points: usize,
    /// Grid points dropped (unconverged or degenerate).
    pub excluded: usize,
}

impl FitResult {
    /// Flat `key=value` report, one pair per line.
    pub fn report(&self, kind: &str, extra: &[(&str, String)]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "fit={kind}");
        for (k, v) in extra {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s, "estimate={}", fmt_f64(self.estimate));
        let _ = writeln!(s, "stderr={}", fmt_f64(self.stderr));
        let _ = writeln!(s, "r2={}", fmt_f64(self.r2));
        if let Some(b) = self.intercept {
            let _ = writeln!(s, "intercept={}", fmt_f64(b));
        }
        let _ = writeln!(s, "window_min={}", fmt_f64(self.window.0));
        let _ = writeln!(s, "window_max={}", fmt_f64(self.window.1));
        let _ = writeln!(s, "n_points={}", self.n_points);
        let _ = writeln!(s, "excluded={}", self.excluded);
        let res: Vec<String> = self.residuals.iter().map(|r| fmt_f64(*r)).collect();
        let _ = writeln!(s, "residuals={}", res.join(","));
        s
    }
}

fn r_squared(ssr: f64, sst: f64) -> f64 {
    if sst > 0.0 {
        (1.0 - ssr / sst).clamp(0.0, 1.0)
    } else if ssr == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn window_of(gs: impl Iterator<Item = f64>) -> (f64, f64) {
    gs.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), g| (lo.min(g), hi.max(g)))
}

/// Least-squares slope of `ln eps` against `ln |g_C - g|`: the exponent `z nu`.
pub fn fit_exponent(samples: &[(f64, f64)]) -> Result<FitResult, ScanError> {
    if samples.len() < 3 {
        return Err(ScanError::TooFewPoints { need: 3, got: samples.len() });
    }
    for (i, &(g, eps)) in samples.iter().enumerate() {
        if !g.is_finite() || g == G_CRITICAL {
            return Err(ScanError::BadSample(i, "coupling must be finite and off the critical point"));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(ScanError::BadSample(i, "excitation energy must be positive"));
        }
    }
    let below = samples[0].0 < G_CRITICAL;
    if samples.iter().any(|&(g, _)| (g < G_CRITICAL) != below) {
        return Err(ScanError::MixedSides);
    }
    let xs: Vec<f64> = samples.iter().map(|&(g, _)| (G_CRITICAL - g).abs().ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|&(_, e)| e.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if !(sxx > 1e-24 * xs.iter().map(|x| x * x).sum::<f64>()) {
        return Err(ScanError::Degenerate);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - (intercept + slope * x)).collect();
    let ssr: f64 = residuals.iter().map(|r| r * r).sum();
    let stderr = if samples.len() > 2 { (ssr / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok(FitResult {
        estimate: slope,
        stderr,
        r2: r_squared(ssr, syy),
        window: window_of(samples.iter().map(|s| s.0)),
        residuals,
        intercept: Some(intercept),
        n_points: samples.len(),
        excluded: 0,
    })
}

/// Fit of `deficit = a / (z nu |ln(g_C - g2)|)` through the origin; the
/// estimate is `|alpha|`.
pub fn fit_asymptote(samples: &[(f64, f64)], znu: f64) -> Result<FitResult, ScanError> {
    let usable: Vec<(f64, f64)> = samples
        .iter()
        .copied()
        .filter(|&(g2, d)| g2 < G_CRITICAL && g2.is_finite() && d > 0.0 && d.is_finite())
        .collect();
    if usable.len() < 3 {
        return Err(ScanError::TooFewPoints { need: 3, got: usable.len() });
    }
    let xs: Vec<f64> = usable.iter().map(|&(g2, _)| 1.0 / (znu * (G_CRITICAL - g2).ln().abs())).collect();
    let ys: Vec<f64> = usable.iter().map(|&(_, d)| d).collect();
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    if !(sxx > 0.0) || !sxx.is_finite() {
        return Err(ScanError::Degenerate);
    }
    let slope = xs.iter().zip(&ys).map(|(x, y)| x * y).sum::<f64>() / sxx;
    let residuals: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y - slope * x).collect();
    let ssr: f64 = residuals.iter().map(|r| r * r).sum();
    let n = ys.len() as f64;
    let my = ys.iter().sum::<f64>() / n;
    let sst: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    Ok(FitResult {
        estimate: slope,
        stderr: (ssr / (n - 1.0) / sxx).sqrt(),
        r2: r_squared(ssr, sst),
        window: window_of(usable.iter().map(|s| s.0)),
        residuals,
        intercept: None,
        n_points: usable.len(),
        excluded: samples.len() - usable.len(),
    })
}

/// Exponent fit on the gaps of a spectrum sweep; unconverged points are
/// dropped and counted.
pub fn fit_exponent_from_spectra(rows: &[SpectrumRow]) -> Result<FitResult, ScanError> {
    let samples: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| matches!(&r.spectrum, Ok(s) if s.converged))
        .filter_map(|r| r.gap.filter(|g| *g > 0.0).map(|gap| (r.g, gap)))
        .collect();
    let excluded = rows.len() - samples.len();
    let mut fit = fit_exponent(&samples)?;
    fit.excluded = excluded;
    Ok(fit)
}

/// Asymptote fit on the deficits `eta_C - eta` of a `g2` sweep.
pub fn fit_asymptote_from_sweep(rows: &[SweepRow], znu: f64) -> Result<FitResult, ScanError> {
    let samples: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| match &r.result {
            Ok(res) if res.converged => res.deficit().map(|d| (r.value, d)),
            _ => None,
        })
        .collect();
    let dropped = rows.len() - samples.len();
    let mut fit = fit_asymptote(&samples, znu)?;
    fit.excluded += dropped;
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub ratio: f64,
    pub g: f64,
    pub tol: f64,
    pub n_max_used: Option<usize>,
    pub max_shift: Option<f64>,
    pub converged: bool,
}

/// Cutoff needed for every `(ratio, g, tol)` cell.
pub fn convergence_study(
    ratios: &[f64],
    gs: &[f64],
    k: usize,
    tols: &[f64],
    n_start: usize,
    n_cap: usize,
) -> Vec<ConvergenceRow> {
    let cells: Vec<(f64, f64, f64)> = ratios
        .iter()
        .flat_map(|&r| gs.iter().flat_map(move |&g| tols.iter().map(move |&t| (r, g, t))))
        .collect();
    cells
        .par_iter()
        .map(|&(ratio, g, tol)| {
            let settings = ConvergenceSettings { levels: k, tol, n_start, n_cap };
            let spec = ModelParams::new(ratio, g)
                .map_err(EigenError::from)
                .and_then(|p| converged_spectrum_with(&p, &settings));
            match spec {
                Ok(s) => ConvergenceRow {
                    ratio,
                    g,
                    tol,
                    n_max_used: Some(s.n_max_used),
                    max_shift: Some(s.max_shift),
                    converged: s.converged,
                },
                Err(_) => ConvergenceRow { ratio, g, tol, n_max_used: None, max_shift: None, converged: false },
            }
        })
        .collect()
}

pub fn convergence_table(rows: &[ConvergenceRow]) -> Table {
    let mut t = Table::new(["ratio", "g", "tol", "n_max_used", "dimension", "max_shift", "converged"]);
    for r in rows {
        t.push(vec![
            r.ratio.into(),
            r.g.into(),
            r.tol.into(),
            r.n_max_used.map_or(Cell::Empty, Cell::from),
            r.n_max_used.map_or(Cell::Empty, |n| Cell::from(2 * (n + 1))),
            r.max_shift.into(),
            r.converged.into(),
        ]);
    }
    t
}

/// `n` points from `from` to `to`, evenly spaced.
pub fn linear_grid(from: f64, to: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![from],
        _ => (0..n).map(|i| from + (to - from) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// `n` points from `from` to `to`, evenly spaced in the logarithm.
pub fn log_grid(from: f64, to: f64, n: usize) -> Vec<f64> {
    linear_grid(from.ln(), to.ln(), n).into_iter().map(f64::exp).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cycle::run_cycle;

    #[test]
    fn plan_validation() {
        let b = SweepBase::default();
        assert_eq!(SweepPlan::new(SweepVariable::G2, vec![], b), Err(ScanError::EmptyGrid));
        assert_eq!(SweepPlan::new(SweepVariable::G2, vec![0.5, 0.5], b), Err(ScanError::UnsortedGrid(1)));
        assert!(SweepPlan::new(SweepVariable::Ratio, vec![0.0, 1.0], b).is_err());
        assert!(SweepPlan::new(SweepVariable::ThetaC, vec![-1e-4], b).is_err());
        assert!(SweepPlan::new(SweepVariable::G2, vec![0.5, f64::NAN], b).is_err());
    }

    #[test]
    fn singleton_sweep_equals_run_cycle() {
        let base = SweepBase { backend: BackendKind::Analytic, ..Default::default() };
        let plan = SweepPlan::new(SweepVariable::G2, vec![0.95], base).unwrap();
        let rows = sweep_efficiency(&plan);
        let direct = run_cycle(&plan.cycle_spec(0.95).unwrap()).unwrap();
        assert_eq!(rows[0].result.as_ref().unwrap(), &direct);
    }

    #[test]
    fn bad_points_do_not_abort_the_sweep() {
        let base = SweepBase { backend: BackendKind::Analytic, g1: 0.5, ..Default::default() };
        let plan = SweepPlan::new(SweepVariable::G2, vec![0.3, 0.9, 1.0, 1.1], base).unwrap();
        let rows = sweep_efficiency(&plan);
        assert_eq!(rows.len(), 4);
        assert!(rows[0].result.is_err() && rows[0].spec.is_none());
        assert!(rows[1].result.is_ok());
        assert_eq!(rows[2].result, Err(CycleError::CriticalCoupling));
        assert!(rows[3].result.is_ok());
        let t = cycle_table(&rows, &[]);
        assert_eq!(t.rows.len(), 4);
        assert!(matches!(&t.rows[2][15], Cell::Text(s) if s.starts_with("error")));
    }

    #[test]
    fn permuting_the_grid_permutes_rows() {
        let base = SweepBase { ratio: 100.0, theta_c: 1e-3, ..Default::default() };
        let grid = vec![0.9, 1.0, 1.1];
        let a = sweep_efficiency(&SweepPlan::new(SweepVariable::G2, grid.clone(), base).unwrap());
        for g in grid.iter().rev() {
            let single = sweep_efficiency(&SweepPlan::new(SweepVariable::G2, vec![*g], base).unwrap());
            let row = a.iter().find(|r| r.value == *g).unwrap();
            assert_eq!(row.result, single[0].result);
        }
    }

    #[test]
    fn peak_ties_pick_the_first_point() {
        let base = SweepBase { backend: BackendKind::Analytic, ..Default::default() };
        let plan = SweepPlan::new(SweepVariable::G2, vec![0.3, 0.5, 0.9], base).unwrap();
        let mut rows = sweep_efficiency(&plan);
        for r in rows.iter_mut() {
            if let Ok(res) = r.result.as_mut() {
                res.eta = Some(0.05);
            }
        }
        rows[2].result.as_mut().unwrap().eta = Some(0.05 + 1e-16);
        let p = efficiency_peak(&rows).unwrap();
        assert_eq!(p.index, 0);
        rows[2].result.as_mut().unwrap().eta = Some(0.06);
        assert_eq!(efficiency_peak(&rows).unwrap().at, 0.9);
    }

    #[test]
    fn exact_power_law_recovered() {
        let samples: Vec<(f64, f64)> = log_grid(1e-6, 1e-1, 12)
            .into_iter()
            .map(|d| (1.0 - d, 3.0 * d.powf(0.5)))
            .collect();
        let f = fit_exponent(&samples).unwrap();
        assert!((f.estimate - 0.5).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
        assert!((f.intercept.unwrap() - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn exponent_fit_errors() {
        assert!(matches!(fit_exponent(&[(0.9, 1.0), (0.8, 1.0)]), Err(ScanError::TooFewPoints { .. })));
        assert_eq!(fit_exponent(&[(0.9, 1.0), (0.8, 1.0), (1.1, 1.0)]), Err(ScanError::MixedSides));
        assert_eq!(fit_exponent(&[(0.9, 1.0), (0.9, 2.0), (0.9, 3.0)]), Err(ScanError::Degenerate));
        assert!(matches!(fit_exponent(&[(0.9, 0.0), (0.8, 1.0), (0.7, 1.0)]), Err(ScanError::BadSample(0, _))));
        assert!(matches!(fit_exponent(&[(0.9, 1.0), (1.0, 1.0), (0.7, 1.0)]), Err(ScanError::BadSample(1, _))));
    }

    #[test]
    fn synthetic_asymptote_recovered() {
        let samples: Vec<(f64, f64)> = log_grid(1e-8, 1e-4, 9)
            .into_iter()
            .map(|d| (1.0 - d, 0.07 / (0.5 * d.ln().abs())))
            .collect();
        let f = fit_asymptote(&samples, 0.5).unwrap();
        assert!((f.estimate - 0.07).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-9);
        assert_eq!(f.excluded, 0);
        let mut with_bad = samples.clone();
        with_bad.push((1.1, 0.01));
        with_bad.push((0.9, -0.01));
        let g = fit_asymptote(&with_bad, 0.5).unwrap();
        assert_eq!(g.excluded, 2);
        assert!(fit_asymptote(&samples[..2], 0.5).is_err());
    }

    #[test]
    fn fit_report_is_key_value() {
        let samples: Vec<(f64, f64)> = [0.9, 0.95, 0.99].iter().map(|&g| (g, (1.0 - g) * 2.0)).collect();
        let f = fit_exponent(&samples).unwrap();
        let text = f.report("exponent", &[("source", "analytic".into())]);
        for line in text.lines() {
            assert_eq!(line.split('=').count(), 2, "{line}");
        }
        assert!(text.starts_with("fit=exponent\nsource=analytic\nestimate="));
    }

    #[test]
    fn spectrum_sweep_decoupled_column() {
        let base = SweepBase { ratio: 2.0, ..Default::default() };
        let plan = SweepPlan::new(SweepVariable::G, vec![0.0], base).unwrap();
        let rows = sweep_spectrum(&plan, 4).unwrap();
        let s = rows[0].spectrum.as_ref().unwrap();
        assert_eq!(s.energies, vec![-1.0, 0.0, 1.0, 1.0]);
        assert_eq!(rows[0].gap, Some(1.0));
        let t = spectrum_table(&rows, 4);
        assert_eq!(t.columns.len(), 3 + 4 + 4);
        assert!(sweep_spectrum(&plan, 1).is_err());
    }

    #[test]
    fn convergence_study_basic_shape() {
        let rows = convergence_study(&[100.0], &[0.0, 0.9], 8, &[1e-6, 1e-8, 1e-10], 16, 1024);
        assert_eq!(rows.len(), 6);
        for r in rows.iter().filter(|r| r.g == 0.0) {
            assert_eq!(r.n_max_used, Some(16));
        }
        let g9: Vec<usize> = rows.iter().filter(|r| r.g == 0.9).map(|r| r.n_max_used.unwrap()).collect();
        assert!(g9.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn grids() {
        assert_eq!(linear_grid(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        let lg = log_grid(1e-8, 1e-4, 5);
        assert!((lg[2] - 1e-6).abs() < 1e-18);
        assert_eq!(linear_grid(1.0, 2.0, 1), vec![1.0]);
    }
}
