//! Small dense complex linear algebra.
//!
//! Everything here is sized for the problem at hand (dim <= 16): storage is a
//! flat row-major `Vec`, products are naive triple loops, and the Hermitian
//! eigensolver is a cyclic complex Jacobi iteration. Tolerances are fixed
//! constants; at these dimensions they are comfortably achievable in f64.

use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex;

use crate::{Error, Result};

pub type C64 = Complex<f64>;

/// Shorthand for a complex number.
#[inline]
pub fn c(re: f64, im: f64) -> C64 {
    Complex::new(re, im)
}

/// e^{i phi} as a complex number.
#[inline]
pub fn cis(phi: f64) -> C64 {
    Complex::new(libm::cos(phi), libm::sin(phi))
}

const HERMITIAN_RTOL: f64 = 1e-12;
const ANTISYM_RTOL: f64 = 1e-10;
const JACOBI_OFF_RTOL: f64 = 1e-14;
const JACOBI_MAX_SWEEPS: usize = 64;
/// Eigenvalues closer than this (relative to max|A|) are treated as
/// degenerate for ordering purposes.
const DEGENERACY_RTOL: f64 = 1e-11;

/// Dense square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: usize,
    entries: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: vec![C64::new(0.0, 0.0); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, c(1.0, 0.0));
        }
        m
    }

    /// Builds from rows given as `[[C64; dim]; dim]`-shaped slices.
    pub fn from_rows(rows: &[&[C64]]) -> Self {
        let dim = rows.len();
        let mut entries = Vec::with_capacity(dim * dim);
        for row in rows {
            assert_eq!(row.len(), dim, "ragged row");
            entries.extend_from_slice(row);
        }
        Self { dim, entries }
    }

    /// Real diagonal matrix.
    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, c(v, 0.0));
        }
        m
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> C64 {
        self.entries[row * self.dim + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: C64) {
        self.entries[row * self.dim + col] = value;
    }

    #[inline]
    pub fn add_to(&mut self, row: usize, col: usize, value: C64) {
        self.entries[row * self.dim + col] += value;
    }

    pub fn dagger(&self) -> Self {
        let mut out = Self::zeros(self.dim);
        for r in 0..self.dim {
            for col in 0..self.dim {
                out.set(col, r, self.at(r, col).conj());
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.dim);
        for r in 0..self.dim {
            for col in 0..self.dim {
                out.set(col, r, self.at(r, col));
            }
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim, "matrix product dimension mismatch");
        let n = self.dim;
        let mut out = Self::zeros(n);
        for r in 0..n {
            for k in 0..n {
                let a = self.at(r, k);
                if a.re == 0.0 && a.im == 0.0 {
                    continue;
                }
                for col in 0..n {
                    out.add_to(r, col, a * other.at(k, col));
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &StateVector) -> StateVector {
        assert_eq!(self.dim, v.dim(), "matrix-vector dimension mismatch");
        let mut out = vec![c(0.0, 0.0); self.dim];
        for r in 0..self.dim {
            let mut acc = c(0.0, 0.0);
            for k in 0..self.dim {
                acc += self.at(r, k) * v.amp(k);
            }
            out[r] = acc;
        }
        StateVector::from_vec(out)
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let entries = self.entries.iter().zip(&other.entries).map(|(a, b)| a + b).collect();
        Self { dim: self.dim, entries }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        let entries = self.entries.iter().zip(&other.entries).map(|(a, b)| a - b).collect();
        Self { dim: self.dim, entries }
    }

    pub fn scale(&self, factor: C64) -> Self {
        Self { dim: self.dim, entries: self.entries.iter().map(|e| e * factor).collect() }
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self.at(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| fmax(m, e.norm()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        self.entries
            .iter()
            .zip(&other.entries)
            .fold(0.0, |m, (a, b)| fmax(m, (a - b).norm()))
    }

    /// max over (r, c) of |A[r][c] - conj(A[c][r])|.
    pub fn hermiticity_violation(&self) -> f64 {
        let mut worst = 0.0;
        for r in 0..self.dim {
            for col in r..self.dim {
                worst = fmax(worst, (self.at(r, col) - self.at(col, r).conj()).norm());
            }
        }
        worst
    }

    fn require_hermitian(&self) -> Result<()> {
        let violation = self.hermiticity_violation();
        let scale = self.max_abs();
        if scale > 0.0 && violation > HERMITIAN_RTOL * scale {
            return Err(Error::NotHermitian { violation });
        }
        Ok(())
    }
}

/// Kronecker product, dim = dimA * dimB.
pub fn kron(a: &ComplexMatrix, b: &ComplexMatrix) -> ComplexMatrix {
    let (na, nb) = (a.dim(), b.dim());
    let n = na * nb;
    let mut out = ComplexMatrix::zeros(n);
    for ra in 0..na {
        for ca in 0..na {
            let f = a.at(ra, ca);
            if f.re == 0.0 && f.im == 0.0 {
                continue;
            }
            for rb in 0..nb {
                for cb in 0..nb {
                    out.set(ra * nb + rb, ca * nb + cb, f * b.at(rb, cb));
                }
            }
        }
    }
    out
}

/// Normalized complex vector with a dimension tag.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<C64>,
}

impl StateVector {
    pub fn from_vec(amplitudes: Vec<C64>) -> Self {
        Self { amplitudes }
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        let mut amplitudes = vec![c(0.0, 0.0); dim];
        amplitudes[index] = c(1.0, 0.0);
        Self { amplitudes }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    #[inline]
    pub fn amp(&self, index: usize) -> C64 {
        self.amplitudes[index]
    }

    #[inline]
    pub fn set_amp(&mut self, index: usize, value: C64) {
        self.amplitudes[index] = value;
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.amplitudes.iter().map(|a| a.norm_sqr()).sum())
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        assert!(n > 0.0, "cannot normalize the zero vector");
        Self { amplitudes: self.amplitudes.iter().map(|a| a / n).collect() }
    }

    /// <self|other>, conjugate-linear in `self`.
    pub fn inner(&self, other: &Self) -> C64 {
        assert_eq!(self.dim(), other.dim());
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn kron(&self, other: &Self) -> Self {
        let mut amplitudes = Vec::with_capacity(self.dim() * other.dim());
        for a in &self.amplitudes {
            for b in &other.amplitudes {
                amplitudes.push(a * b);
            }
        }
        Self { amplitudes }
    }

    /// |self><self| as a density matrix.
    pub fn outer(&self) -> ComplexMatrix {
        let n = self.dim();
        let mut rho = ComplexMatrix::zeros(n);
        for r in 0..n {
            for col in 0..n {
                rho.set(r, col, self.amplitudes[r] * self.amplitudes[col].conj());
            }
        }
        rho
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.dim(), other.dim());
        self.amplitudes
            .iter()
            .zip(&other.amplitudes)
            .fold(0.0, |m, (a, b)| fmax(m, (a - b).norm()))
    }
}

/// Ascending eigenvalues with orthonormal eigenvectors (columns of `vectors`).
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Unitary matrix whose j-th column is the eigenvector of eigenvalue j.
    pub vectors: ComplexMatrix,
}

impl EigenDecomposition {
    pub fn eigenvector(&self, j: usize) -> StateVector {
        let n = self.vectors.dim();
        let mut amps = Vec::with_capacity(n);
        for r in 0..n {
            amps.push(self.vectors.at(r, j));
        }
        StateVector::from_vec(amps)
    }
}

/// Hermitian eigendecomposition by cyclic complex Jacobi rotations.
///
/// Deterministic: eigenvalues ascending; degenerate groups ordered by the
/// index of each vector's largest-magnitude component, then lexicographically;
/// every vector's phase is fixed so its largest-magnitude component is real
/// positive.
pub fn hermitian_eigen(a: &ComplexMatrix) -> Result<EigenDecomposition> {
    a.require_hermitian()?;
    let n = a.dim();
    let scale = a.max_abs();

    // Work on the exactly Hermitian part so roundoff in the input cannot
    // leak imaginary diagonals into the rotations.
    let mut h = ComplexMatrix::zeros(n);
    for r in 0..n {
        for col in 0..n {
            h.set(r, col, (a.at(r, col) + a.at(col, r).conj()) * c(0.5, 0.0));
        }
    }
    let mut v = ComplexMatrix::identity(n);

    if scale > 0.0 {
        let mut converged = false;
        for _ in 0..JACOBI_MAX_SWEEPS {
            if off_diag_norm(&h) <= JACOBI_OFF_RTOL * scale * n as f64 {
                converged = true;
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    jacobi_rotate(&mut h, &mut v, p, q);
                }
            }
        }
        if !converged && off_diag_norm(&h) > JACOBI_OFF_RTOL * scale * n as f64 {
            return Err(Error::NoConvergence { residual: off_diag_norm(&h) });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let eigs: Vec<f64> = (0..n).map(|i| h.at(i, i).re).collect();

    // Phase-fix every column before ordering so degenerate tie-breaking sees
    // canonical representatives.
    let mut cols: Vec<Vec<C64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut col: Vec<C64> = (0..n).map(|r| v.at(r, j)).collect();
        let k = argmax_abs(&col);
        let pivot = col[k];
        let mag = pivot.norm();
        if mag > 0.0 {
            let phase = pivot.conj() / mag;
            for e in col.iter_mut() {
                *e *= phase;
            }
        }
        cols.push(col);
    }

    let deg_tol = DEGENERACY_RTOL * fmax(scale, 1.0);
    order.sort_by(|&i, &j| {
        let di = eigs[i];
        let dj = eigs[j];
        if (di - dj).abs() > deg_tol {
            return di.partial_cmp(&dj).unwrap();
        }
        let ki = argmax_abs(&cols[i]);
        let kj = argmax_abs(&cols[j]);
        if ki != kj {
            return ki.cmp(&kj);
        }
        lex_cmp(&cols[i], &cols[j])
    });

    let mut vectors = ComplexMatrix::zeros(n);
    let mut eigenvalues = Vec::with_capacity(n);
    for (out_j, &src) in order.iter().enumerate() {
        eigenvalues.push(eigs[src]);
        for r in 0..n {
            vectors.set(r, out_j, cols[src][r]);
        }
    }
    Ok(EigenDecomposition { eigenvalues, vectors })
}

fn off_diag_norm(h: &ComplexMatrix) -> f64 {
    let n = h.dim();
    let mut s = 0.0;
    for p in 0..n {
        for q in (p + 1)..n {
            s += 2.0 * h.at(p, q).norm_sqr();
        }
    }
    libm::sqrt(s)
}

/// One complex Jacobi rotation zeroing h[p][q]: conjugate by
/// J = diag-phase * real Givens so the transformed pivot is real, then
/// rotate it away. Updates `h <- J^dag h J` and `v <- v J`.
fn jacobi_rotate(h: &mut ComplexMatrix, v: &mut ComplexMatrix, p: usize, q: usize) {
    let hpq = h.at(p, q);
    let b = hpq.norm();
    if b == 0.0 {
        return;
    }
    let app = h.at(p, p).re;
    let aqq = h.at(q, q).re;
    let phase = hpq / b; // e^{i beta}
    let zeta = (aqq - app) / (2.0 * b);
    let t = if zeta == 0.0 {
        1.0
    } else {
        let sgn = if zeta > 0.0 { 1.0 } else { -1.0 };
        sgn / (zeta.abs() + libm::sqrt(1.0 + zeta * zeta))
    };
    let cth = 1.0 / libm::sqrt(1.0 + t * t);
    let sth = t * cth;

    // J columns: (c, -s e^{-i beta}) and (s, c e^{-i beta}).
    let jpp = c(cth, 0.0);
    let jpq = c(sth, 0.0);
    let jqp = phase.conj() * c(-sth, 0.0);
    let jqq = phase.conj() * c(cth, 0.0);

    let n = h.dim();
    // Column update h[:, (p q)] <- h[:, (p q)] J
    for r in 0..n {
        let hp = h.at(r, p);
        let hq = h.at(r, q);
        h.set(r, p, hp * jpp + hq * jqp);
        h.set(r, q, hp * jpq + hq * jqq);
    }
    // Row update h[(p q), :] <- J^dag h[(p q), :]
    for col in 0..n {
        let hp = h.at(p, col);
        let hq = h.at(q, col);
        h.set(p, col, jpp.conj() * hp + jqp.conj() * hq);
        h.set(q, col, jpq.conj() * hp + jqq.conj() * hq);
    }
    // Pivot pair is now diagonal to roundoff; pin it exactly.
    h.set(p, q, c(0.0, 0.0));
    h.set(q, p, c(0.0, 0.0));
    let hpp = h.at(p, p);
    let hqq = h.at(q, q);
    h.set(p, p, c(hpp.re, 0.0));
    h.set(q, q, c(hqq.re, 0.0));

    for r in 0..n {
        let vp = v.at(r, p);
        let vq = v.at(r, q);
        v.set(r, p, vp * jpp + vq * jqp);
        v.set(r, q, vp * jpq + vq * jqq);
    }
}

fn argmax_abs(col: &[C64]) -> usize {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, e) in col.iter().enumerate() {
        let m = e.norm();
        if m > best_mag {
            best_mag = m;
            best = i;
        }
    }
    best
}

fn lex_cmp(a: &[C64], b: &[C64]) -> core::cmp::Ordering {
    use core::cmp::Ordering;
    for (x, y) in a.iter().zip(b) {
        if (x.re - y.re).abs() > 1e-12 {
            return x.re.partial_cmp(&y.re).unwrap();
        }
        if (x.im - y.im).abs() > 1e-12 {
            return x.im.partial_cmp(&y.im).unwrap();
        }
    }
    Ordering::Equal
}

/// exp(-i 2 pi H t) via eigendecomposition; exactly unitary up to roundoff.
pub fn expm_unitary(h: &ComplexMatrix, t: f64) -> Result<ComplexMatrix> {
    let eig = hermitian_eigen(h)?;
    Ok(propagator_from_eigen(&eig, t))
}

/// Propagator from a precomputed decomposition; useful when many times share
/// one Hamiltonian.
pub fn propagator_from_eigen(eig: &EigenDecomposition, t: f64) -> ComplexMatrix {
    let n = eig.vectors.dim();
    let mut u = ComplexMatrix::zeros(n);
    // u = V e^{-i 2 pi L t} V^dag without forming the diagonal matrix.
    for r in 0..n {
        for col in 0..n {
            let mut acc = c(0.0, 0.0);
            for k in 0..n {
                let ph = cis(-2.0 * core::f64::consts::PI * eig.eigenvalues[k] * t);
                acc += eig.vectors.at(r, k) * ph * eig.vectors.at(col, k).conj();
            }
            u.set(r, col, acc);
        }
    }
    u
}

/// Evolve a state under a precomputed decomposition: V e^{-i2pi L t} V^dag psi.
pub fn evolve_from_eigen(eig: &EigenDecomposition, psi: &StateVector, t: f64) -> StateVector {
    let n = eig.vectors.dim();
    let mut coeffs = Vec::with_capacity(n);
    for k in 0..n {
        coeffs.push(eig.eigenvector(k).inner(psi));
    }
    let mut out = vec![c(0.0, 0.0); n];
    for k in 0..n {
        let ph = cis(-2.0 * core::f64::consts::PI * eig.eigenvalues[k] * t) * coeffs[k];
        for r in 0..n {
            out[r] += eig.vectors.at(r, k) * ph;
        }
    }
    StateVector::from_vec(out)
}

/// Which 2-level sector of a sigma (x) tau product space to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sector {
    /// Spin sector (first factor).
    Sigma,
    /// Particle-hole sector (second factor).
    Tau,
}

/// Partial trace of a 4x4 density matrix over one sector of sigma (x) tau.
///
/// Basis convention: index = 2*sigma + tau.
pub fn partial_trace_spin(rho: &ComplexMatrix, keep: Sector) -> Result<ComplexMatrix> {
    if rho.dim() != 4 {
        return Err(Error::DimMismatch { expected: 4, got: rho.dim() });
    }
    let herm = rho.hermiticity_violation();
    if herm > 1e-10 * fmax(rho.max_abs(), 1.0) {
        return Err(Error::NotDensityMatrix { what: "hermiticity violation", value: herm });
    }
    let tr = rho.trace();
    if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
        return Err(Error::NotDensityMatrix { what: "trace", value: tr.re });
    }
    let eig = hermitian_eigen(rho)?;
    let min_eig = eig.eigenvalues.iter().fold(f64::INFINITY, |m, &x| fmin(m, x));
    if min_eig < -1e-10 {
        return Err(Error::NotDensityMatrix { what: "min eigenvalue", value: min_eig });
    }

    let mut out = ComplexMatrix::zeros(2);
    match keep {
        Sector::Tau => {
            for t1 in 0..2 {
                for t2 in 0..2 {
                    let mut acc = c(0.0, 0.0);
                    for s in 0..2 {
                        acc += rho.at(2 * s + t1, 2 * s + t2);
                    }
                    out.set(t1, t2, acc);
                }
            }
        }
        Sector::Sigma => {
            for s1 in 0..2 {
                for s2 in 0..2 {
                    let mut acc = c(0.0, 0.0);
                    for t in 0..2 {
                        acc += rho.at(2 * s1 + t, 2 * s2 + t);
                    }
                    out.set(s1, s2, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Pfaffian of a 4x4 antisymmetric matrix:
/// Pf = a12 a34 - a13 a24 + a14 a23 (1-based indices).
pub fn pfaffian4(a: &ComplexMatrix) -> Result<C64> {
    if a.dim() != 4 {
        return Err(Error::DimMismatch { expected: 4, got: a.dim() });
    }
    let scale = a.max_abs();
    let mut violation = 0.0;
    for r in 0..4 {
        for col in r..4 {
            violation = fmax(violation, (a.at(r, col) + a.at(col, r)).norm());
        }
    }
    if scale > 0.0 && violation > ANTISYM_RTOL * scale {
        return Err(Error::NotAntisymmetric { violation });
    }
    Ok(a.at(0, 1) * a.at(2, 3) - a.at(0, 2) * a.at(1, 3) + a.at(0, 3) * a.at(1, 2))
}

/// Determinant by LU decomposition with partial pivoting.
pub fn determinant(a: &ComplexMatrix) -> C64 {
    let n = a.dim();
    let mut m = a.clone();
    let mut det = c(1.0, 0.0);
    for k in 0..n {
        let mut pivot_row = k;
        let mut pivot_mag = m.at(k, k).norm();
        for r in (k + 1)..n {
            let mag = m.at(r, k).norm();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = r;
            }
        }
        if pivot_mag == 0.0 {
            return c(0.0, 0.0);
        }
        if pivot_row != k {
            for col in 0..n {
                let tmp = m.at(k, col);
                m.set(k, col, m.at(pivot_row, col));
                m.set(pivot_row, col, tmp);
            }
            det = -det;
        }
        let pivot = m.at(k, k);
        det *= pivot;
        for r in (k + 1)..n {
            let factor = m.at(r, k) / pivot;
            for col in k..n {
                let v = m.at(r, col) - factor * m.at(k, col);
                m.set(r, col, v);
            }
        }
    }
    det
}

#[inline]
pub(crate) fn fmax(a: f64, b: f64) -> f64 {
    if a > b {
        a
    } else {
        b
    }
}

#[inline]
pub(crate) fn fmin(a: f64, b: f64) -> f64 {
    if a < b {
        a
    } else {
        b
    }
}

/// Pauli matrices and the 2x2 identity.
pub mod pauli {
    use super::{c, ComplexMatrix};

    pub fn i2() -> ComplexMatrix {
        ComplexMatrix::identity(2)
    }

    pub fn x() -> ComplexMatrix {
        ComplexMatrix::from_rows(&[&[c(0.0, 0.0), c(1.0, 0.0)], &[c(1.0, 0.0), c(0.0, 0.0)]])
    }

    pub fn y() -> ComplexMatrix {
        ComplexMatrix::from_rows(&[&[c(0.0, 0.0), c(0.0, -1.0)], &[c(0.0, 1.0), c(0.0, 0.0)]])
    }

    pub fn z() -> ComplexMatrix {
        ComplexMatrix::from_rows(&[&[c(1.0, 0.0), c(0.0, 0.0)], &[c(0.0, 0.0), c(-1.0, 0.0)]])
    }

    /// 2x2 Hadamard.
    pub fn hadamard() -> ComplexMatrix {
        let s = 1.0 / libm::sqrt(2.0);
        ComplexMatrix::from_rows(&[&[c(s, 0.0), c(s, 0.0)], &[c(s, 0.0), c(-s, 0.0)]])
    }
}
