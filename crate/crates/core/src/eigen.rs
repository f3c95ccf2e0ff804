//! Symmetric eigensolvers and truncation-converged QRM spectra.
//!
//! Two routes are kept side by side:
//! * [`eigh`], a dense symmetric solve of any real symmetric matrix;
//! * [`qrm_levels`], which diagonalises the two parity chains of the Rabi
//!   Hamiltonian with an implicit QL sweep. The chains are tridiagonal, so
//!   this is `O(n^2)` instead of `O(n^3)` and is what the sweeps use.
//!
//! The dense route is the reference the chain route is tested against.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use thiserror::Error;
use twofloat::TwoFloat;

use crate::model::{parity_chains, ModelError, ModelParams, ParityChain, Truncation};
use crate::output::fmt_f64;

/// Hard cap on the Fock cutoff reached by truncation doubling.
pub const DEFAULT_N_CAP: usize = 4096;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_N_START: usize = 32;

const QL_MAX_SWEEPS: usize = 60;
const DENSE_MAX_ITER: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("matrix is empty")]
    Empty,
    #[error("matrix has a non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("matrix is not symmetric at ({row}, {col}): {upper} vs {lower}")]
    NotSymmetric {
        row: usize,
        col: usize,
        upper: f64,
        lower: f64,
    },
    #[error("eigensolver did not converge for dimension {0}")]
    NoConvergence(usize),
    #[error("requested {0} levels; at least {1} required")]
    TooFewLevels(usize, usize),
    #[error("tolerance must be positive and finite, got {0}")]
    BadTolerance(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Eigen-decomposition with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct Eigh {
    pub values: Vec<f64>,
    /// Column `i` pairs with `values[i]`.
    pub vectors: Option<DMatrix<f64>>,
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<(), EigenError> {
    let (r, c) = m.shape();
    if r != c {
        return Err(EigenError::NotSquare(r, c));
    }
    if r == 0 {
        return Err(EigenError::Empty);
    }
    let scale = m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    for i in 0..r {
        for j in 0..=i {
            let (upper, lower) = (m[(j, i)], m[(i, j)]);
            if !upper.is_finite() {
                return Err(EigenError::NonFinite(j, i));
            }
            if !lower.is_finite() {
                return Err(EigenError::NonFinite(i, j));
            }
            if (upper - lower).abs() > 1e-12 * scale {
                return Err(EigenError::NotSymmetric { row: i, col: j, upper, lower });
            }
        }
    }
    Ok(())
}

/// Dense symmetric eigensolve, eigenvalues ascending.
pub fn eigh(m: &DMatrix<f64>, want_vectors: bool) -> Result<Eigh, EigenError> {
    check_symmetric(m)?;
    let n = m.nrows();
    let dec = SymmetricEigen::try_new(m.clone(), f64::EPSILON, DENSE_MAX_ITER)
        .ok_or(EigenError::NoConvergence(n))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dec.eigenvalues[a].total_cmp(&dec.eigenvalues[b]));
    let values = order.iter().map(|&i| dec.eigenvalues[i]).collect();
    let vectors = want_vectors.then(|| {
        let cols: Vec<DVector<f64>> = order
            .iter()
            .map(|&i| dec.eigenvectors.column(i).into_owned())
            .collect();
        DMatrix::from_columns(&cols)
    });
    Ok(Eigh { values, vectors })
}

/// All eigenvalues of the symmetric tridiagonal matrix with the given
/// diagonal and sub-diagonal, ascending. Implicit QL with Wilkinson shifts.
pub fn tridiagonal_eigenvalues(diag: &[f64], off: &[f64]) -> Result<Vec<f64>, EigenError> {
    let n = diag.len();
    if n == 0 {
        return Err(EigenError::Empty);
    }
    if off.len() + 1 != n {
        return Err(EigenError::NotSquare(n, off.len() + 1));
    }
    if let Some(i) = diag.iter().position(|v| !v.is_finite()) {
        return Err(EigenError::NonFinite(i, i));
    }
    if let Some(i) = off.iter().position(|v| !v.is_finite()) {
        return Err(EigenError::NonFinite(i + 1, i));
    }
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[..n - 1].copy_from_slice(off);

    for l in 0..n {
        let mut sweeps = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            sweeps += 1;
            if sweeps > QL_MAX_SWEEPS {
                return Err(EigenError::NoConvergence(n));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    d.sort_by(f64::total_cmp);
    Ok(d)
}

/// Parity sector label of a level: index into [`parity_chains`].
pub type Sector = u8;

/// Full spectrum of a truncated QRM, ascending, with the parity sector of
/// each level.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorLevels {
    pub energies: Vec<f64>,
    pub sectors: Vec<Sector>,
}

pub fn qrm_levels(params: &ModelParams, trunc: Truncation) -> Result<SectorLevels, EigenError> {
    let chains = parity_chains(params, trunc);
    let mut tagged: Vec<(f64, Sector)> = Vec::with_capacity(trunc.dimension());
    for (s, chain) in chains.iter().enumerate() {
        let vals = tridiagonal_eigenvalues(&chain.diagonal, &chain.off_diagonal)?;
        tagged.extend(vals.into_iter().map(|v| (v, s as Sector)));
    }
    // ties broken by sector so the order never depends on anything else
    tagged.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(SectorLevels {
        energies: tagged.iter().map(|t| t.0).collect(),
        sectors: tagged.iter().map(|t| t.1).collect(),
    })
}

/// Settings of the truncation-doubling loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceSettings {
    /// Number of lowest levels whose stability is monitored.
    pub levels: usize,
    pub tol: f64,
    pub n_start: usize,
    pub n_cap: usize,
}

impl Default for ConvergenceSettings {
    fn default() -> Self {
        Self {
            levels: 8,
            tol: DEFAULT_TOL,
            n_start: DEFAULT_N_START,
            n_cap: DEFAULT_N_CAP,
        }
    }
}

/// Lowest levels of a truncated QRM together with convergence metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub params: ModelParams,
    pub energies: Vec<f64>,
    pub sectors: Vec<Sector>,
    pub n_max_used: usize,
    pub converged: bool,
    /// Largest change of a reported level under the last doubling.
    pub max_shift: f64,
    pub tol: f64,
}

impl Spectrum {
    pub fn ground_energy(&self) -> f64 {
        self.energies[0]
    }

    /// `E_1 - E_0`, resolved below double precision when the two lowest
    /// levels sit in different parity sectors (the superradiant doublet).
    pub fn ground_gap(&self) -> Result<f64, EigenError> {
        if self.energies.len() < 2 {
            return Err(EigenError::TooFewLevels(self.energies.len(), 2));
        }
        let plain = self.energies[1] - self.energies[0];
        if self.sectors[0] == self.sectors[1] {
            return Ok(plain);
        }
        let trunc = Truncation::new(self.n_max_used)?;
        let lo = sector_ground_extended(&self.params, trunc, self.sectors[0], self.energies[0]);
        let hi = sector_ground_extended(&self.params, trunc, self.sectors[1], self.energies[1]);
        Ok((hi - lo).hi().abs())
    }

    /// Spectrum CSV: `# key=value` comment lines, then `index,energy` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# ratio={}", fmt_f64(self.params.ratio()))?;
        writeln!(out, "# g={}", fmt_f64(self.params.g()))?;
        writeln!(out, "# n_max_used={}", self.n_max_used)?;
        writeln!(out, "# converged={}", self.converged)?;
        writeln!(out, "# max_shift={}", fmt_f64(self.max_shift))?;
        writeln!(out, "# tol={}", fmt_f64(self.tol))?;
        writeln!(out, "index,energy")?;
        for (i, e) in self.energies.iter().enumerate() {
            writeln!(out, "{},{}", i, fmt_f64(*e))?;
        }
        Ok(())
    }
}

/// Doubles the cutoff from `n_start` until the lowest `k` levels move by
/// less than `tol`, or the default cap is reached.
pub fn converged_spectrum(
    params: &ModelParams,
    k: usize,
    tol: f64,
    n_start: usize,
) -> Result<Spectrum, EigenError> {
    converged_spectrum_with(
        params,
        &ConvergenceSettings {
            levels: k,
            tol,
            n_start,
            ..Default::default()
        },
    )
}

/// The returned spectrum is the one at `n_max_used`; it agrees with the
/// spectrum at `2 n_max_used` to within `max_shift`.
pub fn converged_spectrum_with(
    params: &ModelParams,
    settings: &ConvergenceSettings,
) -> Result<Spectrum, EigenError> {
    let k = settings.levels;
    if k < 1 {
        return Err(EigenError::TooFewLevels(k, 1));
    }
    if !(settings.tol > 0.0 && settings.tol.is_finite()) {
        return Err(EigenError::BadTolerance(settings.tol));
    }
    // smallest cutoff whose dimension holds k levels
    let mut n = settings.n_start.max(k.div_ceil(2)).max(1);
    let cap = settings.n_cap.max(n);
    let mut current = qrm_levels(params, Truncation::new(n)?)?;
    loop {
        let next_n = (2 * n).min(cap);
        if next_n == n {
            return Ok(make_spectrum(params, current, n, k, false, f64::INFINITY, settings.tol));
        }
        let next = qrm_levels(params, Truncation::new(next_n)?)?;
        let shift = current.energies[..k]
            .iter()
            .zip(&next.energies[..k])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        if shift <= settings.tol {
            return Ok(make_spectrum(params, current, n, k, true, shift, settings.tol));
        }
        if next_n == cap {
            return Ok(make_spectrum(params, next, next_n, k, false, shift, settings.tol));
        }
        n = next_n;
        current = next;
    }
}

fn make_spectrum(
    params: &ModelParams,
    mut levels: SectorLevels,
    n_max_used: usize,
    k: usize,
    converged: bool,
    max_shift: f64,
    tol: f64,
) -> Spectrum {
    levels.energies.truncate(k);
    levels.sectors.truncate(k);
    Spectrum {
        params: *params,
        energies: levels.energies,
        sectors: levels.sectors,
        n_max_used,
        converged,
        max_shift,
        tol,
    }
}

/// `a / b` to double-double accuracy. The `Div` impl of `TwoFloat` is only
/// accurate to double precision, so the quotient is corrected twice.
fn div_extended(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    let q1 = a.hi() / b.hi();
    let r = a - b * q1;
    let q2 = r.hi() / b.hi();
    let q3 = (r - b * q2).hi() / b.hi();
    TwoFloat::new_add(q1, q2) + q3
}

/// Number of eigenvalues of `chain` strictly below `x`, evaluated in
/// double-double arithmetic (Sturm count of the LDL^T pivots).
fn sturm_count_extended(diag: &[TwoFloat], off_sq: &[TwoFloat], x: TwoFloat) -> usize {
    let tiny = TwoFloat::from(1e-300);
    let mut count = 0;
    let mut q = diag[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..diag.len() {
        if q == 0.0 {
            q = tiny;
        }
        q = diag[i] - x - div_extended(off_sq[i - 1], q);
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Lowest eigenvalue of one parity chain to double-double accuracy, by
/// bisection seeded with the double-precision estimate `guess`.
fn sector_ground_extended(
    params: &ModelParams,
    trunc: Truncation,
    sector: Sector,
    guess: f64,
) -> TwoFloat {
    let chains = parity_chains(params, trunc);
    let chain: &ParityChain = &chains[sector as usize];
    let half_omega = TwoFloat::from(params.omega()) * 0.5;
    let lambda_sq = TwoFloat::from(params.g()) * TwoFloat::from(params.g()) * TwoFloat::from(params.omega()) * 0.25;
    let diag: Vec<TwoFloat> = (0..chain.len())
        .map(|n| {
            let bare = TwoFloat::from(n as f64);
            if chain.spin_up_at(n) {
                bare + half_omega
            } else {
                bare - half_omega
            }
        })
        .collect();
    let off_sq: Vec<TwoFloat> = (1..chain.len())
        .map(|n| lambda_sq * TwoFloat::from(n as f64))
        .collect();

    let mut width = 1e-9 * guess.abs().max(1.0);
    let (mut lo, mut hi) = loop {
        let lo = TwoFloat::from(guess - width);
        let hi = TwoFloat::from(guess + width);
        if sturm_count_extended(&diag, &off_sq, lo) == 0
            && sturm_count_extended(&diag, &off_sq, hi) >= 1
        {
            break (lo, hi);
        }
        width *= 16.0;
    };
    for _ in 0..200 {
        let mid = (lo + hi) * 0.5;
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count_extended(&diag, &off_sq, mid) >= 1 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (lo + hi) * 0.5
}
