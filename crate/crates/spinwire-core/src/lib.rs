//! Numerical laboratory for a quantum-wire topological phase transition
//! simulated on an NV-center two-spin system.
//!
//! The crate is split along the physics pipeline:
//!
//! * [`linalg`] — small dense complex matrices, Hermitian eigensolver,
//!   unitary exponentials, partial trace, 4x4 Pfaffian.
//! * [`qw`] — the quantum-wire BdG model: dispersion, phase classification,
//!   Pfaffian topological number, Bloch-sphere trajectory.
//! * [`nv`] — NV level structure, the rotating-frame drive Hamiltonian and
//!   the exact parameter mapping between wire and spin descriptions.
//! * [`dynamics`] — ideal, rotating-frame and lab-frame propagation with
//!   quasi-static dephasing, pulse crosstalk and optical readout.
//! * [`spectroscopy`] — the eigenvalue-finding protocol: time series,
//!   interferometric reconstruction, spectra, peak fits, sign averaging.
//!
//! `no_std` + `alloc`; all floating-point math goes through `libm`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod dynamics;
pub mod linalg;
pub mod nv;
pub mod qw;
pub mod spectroscopy;

use core::fmt;

/// Unified error type for every fallible operation in the crate.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Input flagged Hermitian violates max|A - A^dag| <= 1e-12 max|A|.
    NotHermitian { violation: f64 },
    /// Input violates max|A + A^T| <= 1e-10 max|A|.
    NotAntisymmetric { violation: f64 },
    /// Input is not a valid density matrix (Hermitian, trace 1, PSD).
    NotDensityMatrix { what: &'static str, value: f64 },
    /// Operand dimensions do not match the operation's contract.
    DimMismatch { expected: usize, got: usize },
    /// Jacobi sweeps failed to reduce the off-diagonal norm.
    NoConvergence { residual: f64 },
    /// The Pfaffian at p = 0 is too small to carry a sign.
    CriticalPoint { pf0: f64 },
    /// Bands 2 and 3 are degenerate at a grid point; no 3rd-band trajectory.
    DegenerateBands { p: f64, gap: f64 },
    /// An eigenvalue lies outside the Nyquist window of the sample interval.
    Aliasing { energy: f64, nyquist: f64 },
    /// Least-squares design matrix is singular (e.g. all phases equal mod pi).
    DegenerateFit { what: &'static str },
    /// No peak above threshold inside the requested window.
    NoPeak { lo: f64, hi: f64 },
    /// Step-halving check exceeded tolerance; a smaller dt_max is needed.
    StepNotConverged { delta: f64, tol: f64 },
    /// Parameter outside its documented domain.
    InvalidInput { what: &'static str },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NotHermitian { violation } => {
                write!(f, "matrix is not Hermitian: max|A - A^dag| = {violation:.3e}")
            }
            Error::NotAntisymmetric { violation } => {
                write!(f, "matrix is not antisymmetric: max|A + A^T| = {violation:.3e}")
            }
            Error::NotDensityMatrix { what, value } => {
                write!(f, "not a density matrix: {what} = {value:.3e}")
            }
            Error::DimMismatch { expected, got } => {
                write!(f, "dimension mismatch: expected {expected}, got {got}")
            }
            Error::NoConvergence { residual } => {
                write!(f, "eigensolver did not converge: off-diagonal norm {residual:.3e}")
            }
            Error::CriticalPoint { pf0 } => write!(
                f,
                "topological number ill-defined at the phase boundary: |Pf(H(0))| = {:.3e} < 1e-9",
                pf0.abs()
            ),
            Error::DegenerateBands { p, gap } => write!(
                f,
                "bands 2 and 3 degenerate at p = {p:.6}: gap {gap:.3e}; trajectory undefined"
            ),
            Error::Aliasing { energy, nyquist } => write!(
                f,
                "eigenvalue {energy:.6} exceeds the Nyquist limit {nyquist:.6}; reduce tau"
            ),
            Error::DegenerateFit { what } => write!(f, "degenerate fit design: {what}"),
            Error::NoPeak { lo, hi } => {
                write!(f, "no peak found above threshold in [{lo:.6}, {hi:.6}]")
            }
            Error::StepNotConverged { delta, tol } => write!(
                f,
                "integrator step too coarse: halving changed fidelity by {delta:.3e} > {tol:.3e}; \
                 reduce dt_max"
            ),
            Error::InvalidInput { what } => write!(f, "invalid input: {what}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
