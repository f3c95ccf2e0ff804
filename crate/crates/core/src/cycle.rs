//! Quasi-static Stirling cycle with the Rabi model as working substance.
//!
//! Corners: `A = (T_H, g1)`, `B = (T_H, g2)`, `C = (T_C, g2)`, `D = (T_C, g1)`.
//! Strokes `A -> B` and `C -> D` are isothermal (the coupling changes),
//! `B -> C` and `D -> A` are isochoric (the reservoir changes). Heats are
//! counted positive into the working substance, so `W > 0` is net output.

use std::collections::HashMap;

use thiserror::Error;

use crate::eigen::{converged_spectrum_with, ConvergenceSettings, EigenError, Spectrum};
use crate::model::{
    effective_excitation, effective_ground_energy, ModelError, ModelParams, Phase, G_CRITICAL,
};
use crate::thermo::{analytic_state, heat_capacity, spectral_state, ThermoError, ThermoState};

/// Default critical exponent product `z nu` of the Rabi transition.
pub const DEFAULT_ZNU: f64 = 0.5;

/// Levels are added to a spectral corner until the top retained level has
/// Boltzmann weight below `exp(-THERMAL_TAIL)` at the hot reservoir.
const THERMAL_TAIL: f64 = 46.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CycleError {
    #[error("need 0 <= g1 <= g2, got g1={g1}, g2={g2}")]
    BadCouplings { g1: f64, g2: f64 },
    #[error("need 0 < T_C <= T_H, got T_C={t_cold}, T_H={t_hot}")]
    BadTemperatures { t_cold: f64, t_hot: f64 },
    #[error("the analytic backend has no branch at the critical coupling g = 1")]
    CriticalCoupling,
    #[error("{0} requires the analytic backend")]
    NeedsAnalytic(&'static str),
    #[error("the bound inequalities only hold for normal-phase g2 < 1, got {0}")]
    NotNormalPhase(f64),
    #[error("the bound inequalities need a positive entropy change on A -> B, got {0}")]
    NoEntropyGain(f64),
    #[error("asymptote needs 0 < g2 < 1, got {0}")]
    AsymptoteDomain(f64),
    #[error("critical exponent must be positive, got {0}")]
    BadExponent(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eigen(#[from] EigenError),
    #[error(transparent)]
    Thermo(#[from] ThermoError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CycleBackend {
    Analytic,
    Spectral(ConvergenceSettings),
}

impl CycleBackend {
    pub fn name(&self) -> &'static str {
        match self {
            CycleBackend::Analytic => "analytic",
            CycleBackend::Spectral(_) => "spectral",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleSpec {
    pub g1: f64,
    pub g2: f64,
    pub t_cold: f64,
    pub t_hot: f64,
    pub ratio: f64,
    pub backend: CycleBackend,
}

impl CycleSpec {
    /// Equal couplings or equal temperatures are accepted; they give the
    /// degenerate cycles reported through [`CycleOutcome`].
    pub fn new(
        g1: f64,
        g2: f64,
        t_cold: f64,
        t_hot: f64,
        ratio: f64,
        backend: CycleBackend,
    ) -> Result<Self, CycleError> {
        if !(g1 >= 0.0 && g1 <= g2 && g2.is_finite()) {
            return Err(CycleError::BadCouplings { g1, g2 });
        }
        if !(t_cold > 0.0 && t_cold <= t_hot && t_hot.is_finite()) {
            return Err(CycleError::BadTemperatures { t_cold, t_hot });
        }
        ModelParams::new(ratio, g1)?;
        Ok(Self { g1, g2, t_cold, t_hot, ratio, backend })
    }

    /// Temperatures given as `theta = k_B T / (hbar Omega)`, with
    /// `T_H = T_C (1 + dt_frac)`.
    pub fn from_theta(
        g1: f64,
        g2: f64,
        theta_cold: f64,
        dt_frac: f64,
        ratio: f64,
        backend: CycleBackend,
    ) -> Result<Self, CycleError> {
        let t_cold = theta_cold * ratio;
        Self::new(g1, g2, t_cold, t_cold * (1.0 + dt_frac), ratio, backend)
    }

    pub fn theta_cold(&self) -> f64 {
        self.t_cold / self.ratio
    }

    pub fn eta_carnot(&self) -> f64 {
        1.0 - self.t_cold / self.t_hot
    }
}

/// `eta_C = 1 - T_C / T_H`.
pub fn carnot_efficiency(t_cold: f64, t_hot: f64) -> Result<f64, CycleError> {
    if !(t_cold > 0.0 && t_cold <= t_hot && t_hot.is_finite()) {
        return Err(CycleError::BadTemperatures { t_cold, t_hot });
    }
    Ok(1.0 - t_cold / t_hot)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CycleOutcome {
    Regular,
    /// `T_C = T_H`: every stroke reverses another, `W = 0`.
    Isothermal,
    /// `Q_in = 0`: efficiency undefined.
    NoHeatInput,
    /// `Q_AB = 0`: the sigma decomposition is undefined.
    NoIsothermalHeat,
}

impl CycleOutcome {
    pub fn tag(&self) -> &'static str {
        match self {
            CycleOutcome::Regular => "regular",
            CycleOutcome::Isothermal => "isothermal",
            CycleOutcome::NoHeatInput => "no_heat_input",
            CycleOutcome::NoIsothermalHeat => "no_isothermal_heat",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sigmas {
    pub sigma1: f64,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleResult {
    pub a: ThermoState,
    pub b: ThermoState,
    pub c: ThermoState,
    pub d: ThermoState,
    pub q_ab: f64,
    pub q_bc: f64,
    pub q_cd: f64,
    pub q_da: f64,
    pub work: f64,
    pub q_in: f64,
    /// `W / Q_in`.
    pub eta: Option<f64>,
    /// `(eta_C + sigma1 + sigma2) / (1 + sigma2)`.
    pub eta_decomposed: Option<f64>,
    pub eta_carnot: f64,
    pub sigmas: Option<Sigmas>,
    pub ds_ab: f64,
    pub ds_bc: f64,
    pub ds_ad: f64,
    pub outcome: CycleOutcome,
    /// False when a spectral corner hit the truncation cap.
    pub converged: bool,
}

impl CycleResult {
    pub fn deficit(&self) -> Option<f64> {
        self.eta.map(|eta| self.eta_carnot - eta)
    }
}

/// Level scheme feeding the four corners at one coupling.
#[derive(Debug, Clone)]
pub enum CornerLevels {
    Ladder { e0: f64, eps: f64 },
    Spectrum(Spectrum),
}

impl CornerLevels {
    pub fn for_coupling(
        g: f64,
        ratio: f64,
        backend: &CycleBackend,
        t_hot: f64,
    ) -> Result<Self, CycleError> {
        let params = ModelParams::new(ratio, g)?;
        match backend {
            CycleBackend::Analytic => {
                let phase = Phase::of(g).ok_or(CycleError::CriticalCoupling)?;
                Ok(CornerLevels::Ladder {
                    e0: effective_ground_energy(g, phase, &params)?,
                    eps: effective_excitation(g, phase)?,
                })
            }
            CycleBackend::Spectral(settings) => {
                Ok(CornerLevels::Spectrum(thermal_spectrum(&params, 1.0 / t_hot, settings)?))
            }
        }
    }

    fn state(&self, beta: f64) -> Result<ThermoState, ThermoError> {
        match self {
            CornerLevels::Ladder { e0, eps } => analytic_state(*e0, *eps, beta),
            CornerLevels::Spectrum(s) => spectral_state(s, beta),
        }
    }

    fn converged(&self) -> bool {
        match self {
            CornerLevels::Ladder { .. } => true,
            CornerLevels::Spectrum(s) => s.converged,
        }
    }
}

/// Converged spectrum holding every level with non-negligible weight at
/// inverse temperature `beta_min`.
pub fn thermal_spectrum(
    params: &ModelParams,
    beta_min: f64,
    settings: &ConvergenceSettings,
) -> Result<Spectrum, CycleError> {
    let mut levels = settings.levels.max(2);
    let max_levels = 2 * (settings.n_cap.max(settings.n_start) + 1);
    loop {
        let s = converged_spectrum_with(params, &ConvergenceSettings { levels, ..*settings })?;
        let top = s.energies[s.energies.len() - 1] - s.energies[0];
        if !s.converged || beta_min * top >= THERMAL_TAIL || levels >= max_levels {
            return Ok(s);
        }
        levels = (2 * levels).min(max_levels);
    }
}

pub fn run_cycle(spec: &CycleSpec) -> Result<CycleResult, CycleError> {
    let low = CornerLevels::for_coupling(spec.g1, spec.ratio, &spec.backend, spec.t_hot)?;
    let high = if spec.g2 == spec.g1 {
        low.clone()
    } else {
        CornerLevels::for_coupling(spec.g2, spec.ratio, &spec.backend, spec.t_hot)?
    };
    run_cycle_on(spec, &low, &high)
}

/// Runs the cycle on precomputed level schemes for `g1` and `g2`.
pub fn run_cycle_on(
    spec: &CycleSpec,
    low: &CornerLevels,
    high: &CornerLevels,
) -> Result<CycleResult, CycleError> {
    let (beta_h, beta_c) = (1.0 / spec.t_hot, 1.0 / spec.t_cold);
    let a = low.state(beta_h)?;
    let b = high.state(beta_h)?;
    let c = high.state(beta_c)?;
    let d = low.state(beta_c)?;

    let ds_ab = b.entropy - a.entropy;
    let ds_bc = c.entropy - b.entropy;
    let ds_ad = d.entropy - a.entropy;
    let q_ab = spec.t_hot * ds_ab;
    let q_cd = spec.t_cold * (d.entropy - c.entropy);
    let q_da = d.energy_change_to(&a);
    let q_bc = b.energy_change_to(&c);
    let work = q_da + q_ab + q_bc + q_cd;
    let q_in = q_da + q_ab;
    let eta_carnot = spec.eta_carnot();

    let sigmas = (q_ab != 0.0).then(|| Sigmas {
        sigma1: (spec.t_cold / spec.t_hot) * (ds_ad - ds_bc) / ds_ab + q_bc / q_ab,
        sigma2: q_da / q_ab,
    });
    let eta = (q_in != 0.0).then(|| work / q_in);
    let eta_decomposed = match (sigmas, eta) {
        (Some(s), Some(_)) => Some((eta_carnot + s.sigma1 + s.sigma2) / (1.0 + s.sigma2)),
        _ => None,
    };
    let outcome = if q_in == 0.0 {
        CycleOutcome::NoHeatInput
    } else if q_ab == 0.0 {
        CycleOutcome::NoIsothermalHeat
    } else if spec.t_cold == spec.t_hot {
        CycleOutcome::Isothermal
    } else {
        CycleOutcome::Regular
    };

    Ok(CycleResult {
        a,
        b,
        c,
        d,
        q_ab,
        q_bc,
        q_cd,
        q_da,
        work,
        q_in,
        eta,
        eta_decomposed,
        eta_carnot,
        sigmas,
        ds_ab,
        ds_bc,
        ds_ad,
        outcome,
        converged: low.converged() && high.converged(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    /// `rhs - lhs`.
    pub slack: f64,
}

impl BoundCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        Self { lhs, rhs, satisfied: lhs < rhs, slack: rhs - lhs }
    }
}

/// The three upper bounds on the sigma contributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    /// `|Q_DA / Q_AB| < eta_C C(beta_H eps(g1) / 2) / dS_AB`.
    pub isochoric_input: BoundCheck,
    /// `|-(T_C/T_H) dS_BC / dS_AB + Q_BC / Q_AB| < 2 eta_C C(beta_H eps(g2) / 2) / dS_AB`.
    pub hot_isochore: BoundCheck,
    /// `|(T_C/T_H) dS_AD / dS_AB| < eta_C C(beta_H eps(g1) / 2) / dS_AB`.
    pub cold_isochore: BoundCheck,
}

impl BoundReport {
    pub fn all_satisfied(&self) -> bool {
        self.checks().iter().all(|c| c.satisfied)
    }

    pub fn checks(&self) -> [BoundCheck; 3] {
        [self.isochoric_input, self.hot_isochore, self.cold_isochore]
    }
}

pub fn bound_report(result: &CycleResult, spec: &CycleSpec) -> Result<BoundReport, CycleError> {
    if spec.backend != CycleBackend::Analytic {
        return Err(CycleError::NeedsAnalytic("bound_report"));
    }
    if !(spec.g2 < G_CRITICAL) {
        return Err(CycleError::NotNormalPhase(spec.g2));
    }
    if !(result.ds_ab > 0.0) {
        return Err(CycleError::NoEntropyGain(result.ds_ab));
    }
    let beta_h = 1.0 / spec.t_hot;
    let ratio_t = spec.t_cold / spec.t_hot;
    let eta_c = result.eta_carnot;
    let c1 = heat_capacity(0.5 * beta_h * effective_excitation(spec.g1, Phase::Normal)?)?;
    let c2 = heat_capacity(0.5 * beta_h * effective_excitation(spec.g2, Phase::Normal)?)?;
    let ds = result.ds_ab;
    Ok(BoundReport {
        isochoric_input: BoundCheck::new((result.q_da / result.q_ab).abs(), eta_c * c1 / ds),
        hot_isochore: BoundCheck::new(
            (-ratio_t * result.ds_bc / ds + result.q_bc / result.q_ab).abs(),
            2.0 * eta_c * c2 / ds,
        ),
        cold_isochore: BoundCheck::new((ratio_t * result.ds_ad / ds).abs(), eta_c * c1 / ds),
    })
}

/// `alpha(g2) = [T_C (dS_AD - dS_BC) + Q_BC + (T_C/T_H) Q_DA] / T_H`.
///
/// With it, `eta - eta_C = alpha T_H / Q_in` holds exactly.
pub fn alpha_coefficient(result: &CycleResult, spec: &CycleSpec) -> f64 {
    let (tc, th) = (spec.t_cold, spec.t_hot);
    (tc * (result.ds_ad - result.ds_bc) + result.q_bc + (tc / th) * result.q_da) / th
}

/// Predicted `eta_C - eta ~ alpha / (z nu ln(g_C - g2))`.
pub fn asymptote_prediction(alpha: f64, g2: f64, znu: f64) -> Result<f64, CycleError> {
    if !(g2 > 0.0 && g2 < G_CRITICAL) {
        return Err(CycleError::AsymptoteDomain(g2));
    }
    if !(znu > 0.0 && znu.is_finite()) {
        return Err(CycleError::BadExponent(znu));
    }
    Ok(alpha / (znu * (G_CRITICAL - g2).ln()))
}

/// Shared read-only cache of corner level schemes keyed by
/// `(ratio, g, T_H)` bit patterns.
#[derive(Debug, Default)]
pub struct CornerCache {
    map: HashMap<(u64, u64, u64), CornerLevels>,
}

impl CornerCache {
    pub fn key(g: f64, ratio: f64, t_hot: f64) -> (u64, u64, u64) {
        (ratio.to_bits(), g.to_bits(), t_hot.to_bits())
    }

    pub fn insert(&mut self, g: f64, ratio: f64, t_hot: f64, levels: CornerLevels) {
        self.map.insert(Self::key(g, ratio, t_hot), levels);
    }

    pub fn get(&self, g: f64, ratio: f64, t_hot: f64) -> Option<&CornerLevels> {
        self.map.get(&Self::key(g, ratio, t_hot))
    }
}
