//! Canonical-ensemble thermodynamics of a level scheme.
//!
//! Everything is evaluated relative to the lowest level `e_ref`, so that
//! `Z = exp(-beta e_ref) Z'` with `Z' >= 1`. Entropy and heat capacity then
//! never suffer the cancellation between `ln Z` and `beta U` that otherwise
//! wipes them out when `beta |E_0|` is in the tens of thousands.

use thiserror::Error;

use crate::eigen::Spectrum;

/// Smallest excitation energy the single-mode formulas accept.
pub const MIN_EXCITATION: f64 = 1e-30;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermoError {
    #[error("inverse temperature must be positive and finite, got {0}")]
    BadBeta(f64),
    #[error("excitation energy must exceed {MIN_EXCITATION:e}, got {0}")]
    Gapless(f64),
    #[error("heat_capacity argument must be positive, got {0}")]
    BadArgument(f64),
    #[error("level scheme is empty")]
    EmptySpectrum,
    #[error("level scheme contains a non-finite energy")]
    NonFiniteLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ThermoBackend {
    /// Single bosonic ladder `E_k = E_0 + k eps`.
    Analytic,
    /// Boltzmann sums over a computed spectrum.
    Spectral,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermoState {
    pub beta: f64,
    pub ln_z: f64,
    /// Lowest energy of the level scheme; `U = e_ref + u_excess`.
    pub e_ref: f64,
    pub u_excess: f64,
    pub entropy: f64,
    pub heat_capacity: f64,
    pub backend: ThermoBackend,
}

impl ThermoState {
    pub fn temperature(&self) -> f64 {
        1.0 / self.beta
    }

    pub fn internal_energy(&self) -> f64 {
        self.e_ref + self.u_excess
    }

    /// `U(other) - U(self)`, exact in the excess energies when both states
    /// share a level scheme.
    pub fn energy_change_to(&self, other: &ThermoState) -> f64 {
        if self.e_ref == other.e_ref {
            other.u_excess - self.u_excess
        } else {
            other.internal_energy() - self.internal_energy()
        }
    }
}

fn check_beta(beta: f64) -> Result<(), ThermoError> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(ThermoError::BadBeta(beta))
    }
}

/// `C(x) = x^2 / sinh^2(x)`, the heat capacity of a ladder at `x = beta eps / 2`.
pub fn heat_capacity(x: f64) -> Result<f64, ThermoError> {
    if !(x > 0.0) {
        return Err(ThermoError::BadArgument(x));
    }
    if x < 1e-4 {
        return Ok(1.0 - x * x / 3.0);
    }
    if x < 20.0 {
        let r = x / x.sinh();
        return Ok(r * r);
    }
    // sinh x = e^x (1 - e^{-2x}) / 2 ; underflows cleanly to 0
    let r = 2.0 * x * (-x).exp() / (-(-2.0 * x).exp_m1());
    Ok(r * r)
}

/// `-ln(1 - e^{-y})` for `y > 0`.
fn neg_ln_one_minus_exp(y: f64) -> f64 {
    if y < std::f64::consts::LN_2 {
        -(-(-y).exp_m1()).ln()
    } else {
        -(-(-y).exp()).ln_1p()
    }
}

/// Thermal state of the ladder `E_k = e0 + k eps`.
pub fn analytic_state(e0: f64, eps: f64, beta: f64) -> Result<ThermoState, ThermoError> {
    check_beta(beta)?;
    if !(eps > MIN_EXCITATION) || !eps.is_finite() {
        return Err(ThermoError::Gapless(eps));
    }
    let y = beta * eps;
    let occupation = 1.0 / y.exp_m1();
    let ln_z_excess = neg_ln_one_minus_exp(y);
    Ok(ThermoState {
        beta,
        ln_z: -beta * e0 + ln_z_excess,
        e_ref: e0,
        u_excess: eps * occupation,
        entropy: y * occupation + ln_z_excess,
        heat_capacity: heat_capacity(0.5 * y)?,
        backend: ThermoBackend::Analytic,
    })
}

/// Thermal state of an arbitrary finite level scheme (any order).
pub fn levels_state(energies: &[f64], beta: f64) -> Result<ThermoState, ThermoError> {
    check_beta(beta)?;
    if energies.is_empty() {
        return Err(ThermoError::EmptySpectrum);
    }
    if energies.iter().any(|e| !e.is_finite()) {
        return Err(ThermoError::NonFiniteLevel);
    }
    let e_ref = energies.iter().copied().fold(f64::INFINITY, f64::min);
    // weights relative to the lowest level; the lowest contributes exactly 1
    let mut z_tail = 0.0;
    let mut first_ground = true;
    let weights: Vec<f64> = energies
        .iter()
        .map(|&e| {
            if e == e_ref && first_ground {
                first_ground = false;
                1.0
            } else {
                let w = (-beta * (e - e_ref)).exp();
                z_tail += w;
                w
            }
        })
        .collect();
    let z = 1.0 + z_tail;
    let mut u_excess = 0.0;
    for (&e, &w) in energies.iter().zip(&weights) {
        u_excess += (e - e_ref) * w;
    }
    u_excess /= z;
    let mut var = 0.0;
    for (&e, &w) in energies.iter().zip(&weights) {
        let d = e - e_ref - u_excess;
        var += d * d * w;
    }
    var /= z;
    let ln_z_excess = z_tail.ln_1p();
    Ok(ThermoState {
        beta,
        ln_z: -beta * e_ref + ln_z_excess,
        e_ref,
        u_excess,
        entropy: ln_z_excess + beta * u_excess,
        heat_capacity: beta * beta * var,
        backend: ThermoBackend::Spectral,
    })
}

pub fn spectral_state(spec: &Spectrum, beta: f64) -> Result<ThermoState, ThermoError> {
    levels_state(&spec.energies, beta)
}
