//! Quantum Rabi model: truncated Fock-space Hamiltonian and the analytic
//! effective-model energies of the normal and superradiant phases.
//!
//! Units: the cavity frequency is the energy unit (`omega0 = 1`), with
//! `hbar = k_B = 1`. The qubit splitting is `ratio = Omega / omega0` and the
//! dimensionless coupling is `g = 2 lambda / sqrt(omega0 Omega)`.
//!
//! Basis ordering is interleaved with the spin index fastest:
//! `index = 2 n + s`, where `s = 0` is the qubit ground state (`sigma_z = -1`)
//! and `s = 1` the excited state (`sigma_z = +1`).

use std::fmt;
use std::io::{self, Write};

use nalgebra::DMatrix;
use thiserror::Error;

/// Critical coupling of the superradiant transition.
pub const G_CRITICAL: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{name} must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("ratio must be > 0, got {0}")]
    BadRatio(f64),
    #[error("coupling g must be >= 0, got {0}")]
    NegativeCoupling(f64),
    #[error("truncation n_max must be >= 1, got {0}")]
    BadTruncation(usize),
    #[error("g = {g} is outside the {phase} branch of the effective model")]
    WrongPhase { g: f64, phase: Phase },
}

/// Dimensionless model parameters, energies in units of `omega0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    ratio: f64,
    g: f64,
}

impl ModelParams {
    pub fn new(ratio: f64, g: f64) -> Result<Self, ModelError> {
        if !ratio.is_finite() {
            return Err(ModelError::NonFinite { name: "ratio", value: ratio });
        }
        if !g.is_finite() {
            return Err(ModelError::NonFinite { name: "g", value: g });
        }
        if ratio <= 0.0 {
            return Err(ModelError::BadRatio(ratio));
        }
        if g < 0.0 {
            return Err(ModelError::NegativeCoupling(g));
        }
        Ok(Self { ratio, g })
    }

    /// Builds parameters from the bare coupling `lambda` instead of `g`.
    pub fn from_lambda(ratio: f64, lambda: f64) -> Result<Self, ModelError> {
        if !ratio.is_finite() || ratio <= 0.0 {
            return Self::new(ratio, 0.0);
        }
        Self::new(ratio, 2.0 * lambda / ratio.sqrt())
    }

    pub fn omega0(&self) -> f64 {
        1.0
    }

    /// Qubit splitting `Omega` in units of `omega0`.
    pub fn omega(&self) -> f64 {
        self.ratio
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    /// Bare coupling `lambda = g sqrt(omega0 Omega) / 2`.
    pub fn lambda(&self) -> f64 {
        0.5 * self.g * (self.omega0() * self.omega()).sqrt()
    }

    pub fn with_g(&self, g: f64) -> Result<Self, ModelError> {
        Self::new(self.ratio, g)
    }

    /// Phase of the effective model, `None` exactly at the critical point.
    pub fn phase(&self) -> Option<Phase> {
        Phase::of(self.g)
    }
}

/// Fock-space cutoff: occupations `0..=n_max` are retained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Truncation {
    n_max: usize,
}

impl Truncation {
    pub fn new(n_max: usize) -> Result<Self, ModelError> {
        if n_max < 1 {
            return Err(ModelError::BadTruncation(n_max));
        }
        Ok(Self { n_max })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn dimension(&self) -> usize {
        2 * (self.n_max + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Normal,
    Superradiant,
}

impl Phase {
    pub fn of(g: f64) -> Option<Phase> {
        if g < G_CRITICAL {
            Some(Phase::Normal)
        } else if g > G_CRITICAL {
            Some(Phase::Superradiant)
        } else {
            None
        }
    }

    fn admits(self, g: f64) -> bool {
        Phase::of(g) == Some(self) && g >= 0.0 && g.is_finite()
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Normal => f.write_str("normal"),
            Phase::Superradiant => f.write_str("superradiant"),
        }
    }
}

#[inline]
pub fn basis_index(n: usize, spin_up: bool) -> usize {
    2 * n + usize::from(spin_up)
}

/// Dense real symmetric matrix of
/// `H = omega0 a^dag a + (Omega/2) sigma_z - lambda (a + a^dag) sigma_x`.
pub fn build_hamiltonian(params: &ModelParams, trunc: Truncation) -> DMatrix<f64> {
    let dim = trunc.dimension();
    let half_omega = 0.5 * params.omega();
    let lambda = params.lambda();
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for n in 0..=trunc.n_max() {
        let bare = n as f64 * params.omega0();
        h[(basis_index(n, false), basis_index(n, false))] = bare - half_omega;
        h[(basis_index(n, true), basis_index(n, true))] = bare + half_omega;
        if n < trunc.n_max() {
            let amp = -lambda * ((n + 1) as f64).sqrt();
            for up in [false, true] {
                let i = basis_index(n, up);
                let j = basis_index(n + 1, !up);
                h[(i, j)] = amp;
                h[(j, i)] = amp;
            }
        }
    }
    h
}

/// One parity sector of the Hamiltonian as a symmetric tridiagonal chain.
///
/// The coupling only connects `|n, s>` with `|n +- 1, !s>`, so the matrix
/// splits into two chains `|0,s0>, |1,!s0>, |2,s0>, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParityChain {
    /// Spin of the `n = 0` site.
    pub ground_spin_up: bool,
    pub diagonal: Vec<f64>,
    pub off_diagonal: Vec<f64>,
}

impl ParityChain {
    pub fn len(&self) -> usize {
        self.diagonal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diagonal.is_empty()
    }

    /// Spin at Fock site `n` of this chain.
    pub fn spin_up_at(&self, n: usize) -> bool {
        self.ground_spin_up ^ (n % 2 == 1)
    }
}

/// Both parity chains; their spectra together form the full spectrum.
pub fn parity_chains(params: &ModelParams, trunc: Truncation) -> [ParityChain; 2] {
    let half_omega = 0.5 * params.omega();
    let lambda = params.lambda();
    let off: Vec<f64> = (1..=trunc.n_max())
        .map(|n| -lambda * (n as f64).sqrt())
        .collect();
    [false, true].map(|ground_spin_up| {
        let diagonal = (0..=trunc.n_max())
            .map(|n| {
                let up = ground_spin_up ^ (n % 2 == 1);
                n as f64 * params.omega0() + if up { half_omega } else { -half_omega }
            })
            .collect();
        ParityChain {
            ground_spin_up,
            diagonal,
            off_diagonal: off.clone(),
        }
    })
}

/// Excitation energy of the effective model, in units of `omega0`.
pub fn effective_excitation(g: f64, phase: Phase) -> Result<f64, ModelError> {
    if !phase.admits(g) {
        return Err(ModelError::WrongPhase { g, phase });
    }
    // factored forms keep full relative precision next to g = 1
    let eps = match phase {
        Phase::Normal => ((1.0 - g) * (1.0 + g)).sqrt(),
        Phase::Superradiant => {
            let g2 = g * g;
            ((g2 - 1.0) * (g2 + 1.0)).sqrt() / g2
        }
    };
    Ok(eps)
}

/// Ground energy of the effective model, in units of `omega0`.
pub fn effective_ground_energy(
    g: f64,
    phase: Phase,
    params: &ModelParams,
) -> Result<f64, ModelError> {
    if !phase.admits(g) {
        return Err(ModelError::WrongPhase { g, phase });
    }
    let omega = params.omega();
    Ok(match phase {
        Phase::Normal => -0.5 * omega,
        Phase::Superradiant => -0.25 * omega * (g * g + 1.0 / (g * g)),
    })
}

/// Writes every nonzero entry as a `row col value` triplet after a one-line
/// header.
pub fn write_matrix_dump<W: Write>(
    mut out: W,
    params: &ModelParams,
    trunc: Truncation,
) -> io::Result<()> {
    let h = build_hamiltonian(params, trunc);
    writeln!(
        out,
        "# qrm n_max={} ratio={} g={}",
        trunc.n_max(),
        crate::output::fmt_f64(params.ratio()),
        crate::output::fmt_f64(params.g())
    )?;
    for i in 0..h.nrows() {
        for j in 0..h.ncols() {
            let v = h[(i, j)];
            if v != 0.0 {
                writeln!(out, "{} {} {}", i, j, crate::output::fmt_f64(v))?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_round_trips_to_g() {
        for &(ratio, g) in &[(400.0, 0.2), (2.0, 1.3), (800.0, 0.999_999)] {
            let p = ModelParams::new(ratio, g).unwrap();
            let back = 2.0 * p.lambda() / (p.omega0() * p.omega()).sqrt();
            assert!((back - g).abs() <= 4.0 * f64::EPSILON * g.max(1.0));
            let q = ModelParams::from_lambda(ratio, p.lambda()).unwrap();
            assert!((q.g() - g).abs() <= 4.0 * f64::EPSILON * g.max(1.0));
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(ModelParams::new(0.0, 0.1), Err(ModelError::BadRatio(_))));
        assert!(matches!(ModelParams::new(2.0, -0.1), Err(ModelError::NegativeCoupling(_))));
        assert!(ModelParams::new(f64::NAN, 0.1).is_err());
        assert!(ModelParams::new(2.0, f64::INFINITY).is_err());
        assert!(Truncation::new(0).is_err());
    }

    #[test]
    fn truncation_dimension() {
        for n in 1..10 {
            assert_eq!(Truncation::new(n).unwrap().dimension(), 2 * (n + 1));
        }
    }

    #[test]
    fn decoupled_hamiltonian_is_diagonal() {
        let p = ModelParams::new(2.0, 0.0).unwrap();
        let t = Truncation::new(1).unwrap();
        let h = build_hamiltonian(&p, t);
        assert_eq!(h.nrows(), 4);
        let diag: Vec<f64> = (0..4).map(|i| h[(i, i)]).collect();
        assert_eq!(diag, vec![-1.0, 1.0, 0.0, 2.0]);
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    assert_eq!(h[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn coupling_matrix_elements() {
        let p = ModelParams::new(3.0, 0.7).unwrap();
        let t = Truncation::new(5).unwrap();
        let h = build_hamiltonian(&p, t);
        let lambda = p.lambda();
        for n in 0..5 {
            for up in [false, true] {
                let i = basis_index(n, up);
                assert_eq!(h[(i, basis_index(n + 1, !up))], -lambda * ((n + 1) as f64).sqrt());
                // no spin-conserving hop
                assert_eq!(h[(i, basis_index(n + 1, up))], 0.0);
            }
        }
        assert_eq!(h, h.transpose());
    }

    #[test]
    fn chains_cover_the_dense_matrix() {
        let p = ModelParams::new(5.0, 1.1).unwrap();
        let t = Truncation::new(6).unwrap();
        let h = build_hamiltonian(&p, t);
        for chain in parity_chains(&p, t) {
            for n in 0..chain.len() {
                let i = basis_index(n, chain.spin_up_at(n));
                assert_eq!(h[(i, i)], chain.diagonal[n]);
                if n + 1 < chain.len() {
                    let j = basis_index(n + 1, chain.spin_up_at(n + 1));
                    assert_eq!(h[(i, j)], chain.off_diagonal[n]);
                }
            }
        }
    }

    #[test]
    fn effective_excitation_values() {
        assert_eq!(effective_excitation(0.0, Phase::Normal).unwrap(), 1.0);
        assert!((effective_excitation(0.6, Phase::Normal).unwrap() - 0.8).abs() < 1e-15);
        let sr = effective_excitation(2f64.sqrt(), Phase::Superradiant).unwrap();
        assert!((sr - 3f64.sqrt() / 2.0).abs() < 1e-15);
        assert!(effective_excitation(1.0, Phase::Normal).is_err());
        assert!(effective_excitation(1.0, Phase::Superradiant).is_err());
        assert!(effective_excitation(1.2, Phase::Normal).is_err());
        assert!(effective_excitation(0.8, Phase::Superradiant).is_err());
    }

    #[test]
    fn effective_ground_energy_values() {
        let p = ModelParams::new(400.0, 0.3).unwrap();
        for g in [0.0, 0.3, 0.99] {
            assert_eq!(effective_ground_energy(g, Phase::Normal, &p).unwrap(), -200.0);
        }
        let e = effective_ground_energy(2.0, Phase::Superradiant, &p).unwrap();
        assert!((e - (-17.0 * 400.0 / 16.0)).abs() < 1e-12);
        let near = effective_ground_energy(1.0 + 1e-9, Phase::Superradiant, &p).unwrap();
        assert!((near + 200.0).abs() < 1e-9);
    }

    #[test]
    fn excitation_is_monotone_in_each_phase() {
        let mut prev = f64::INFINITY;
        for i in 1..1000 {
            let g = i as f64 / 1000.0;
            let e = effective_excitation(g, Phase::Normal).unwrap();
            assert!(e < prev);
            prev = e;
        }
        let mut prev = 0.0;
        for i in 1..1000 {
            let g = 1.0 + i as f64 / 100.0;
            let e = effective_excitation(g, Phase::Superradiant).unwrap();
            assert!(e > prev);
            prev = e;
        }
    }

    #[test]
    fn square_root_vanishing_at_criticality() {
        for d in [1e-4, 1e-6, 1e-8, 1e-10] {
            // prefactor sqrt(2) below g_C, 2 above
            for (g, phase, c) in [(1.0 - d, Phase::Normal, 2f64.sqrt()), (1.0 + d, Phase::Superradiant, 2.0)] {
                let e = effective_excitation(g, phase).unwrap();
                let dist: f64 = (g - 1.0f64).abs();
                let scaled = e / (c * dist.sqrt());
                assert!((scaled - 1.0).abs() < 3.0 * d, "g={g} scaled={scaled}");
            }
        }
    }

    #[test]
    fn dump_header_and_triplets() {
        let p = ModelParams::new(2.0, 0.0).unwrap();
        let mut buf = Vec::new();
        write_matrix_dump(&mut buf, &p, Truncation::new(1).unwrap()).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "# qrm n_max=1 ratio=2.0 g=0.0");
        // (0,0) = -1 ; (1,1) = 1 ; (2,2) = 0 is skipped ; (3,3) = 2
        assert_eq!(lines.collect::<Vec<_>>(), vec!["0 0 -1.0", "1 1 1.0", "3 3 2.0"]);
    }
}
