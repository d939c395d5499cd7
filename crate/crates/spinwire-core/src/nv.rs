//! NV-center level structure, rotating-frame drive Hamiltonian, and the
//! exact bidirectional mapping between wire and spin-drive parameters.
//!
//! Level labels |1>..|9> run over (m_e, m_n) with m_e = +1, 0, -1 (outer) and
//! m_n = +1, 0, -1 (inner), so |4>,|5>,|6> form the m_e = 0 manifold and
//! |7>,|8>,|9> the m_e = -1 manifold. The simulation subspace is
//! {|4>,|5>,|7>,|8>} ordered as sigma (x) tau with sigma = electron in
//! (m_e = 0, m_e = -1) and tau = nuclear in (m_n = +1, m_n = 0); |6> is the
//! interferometric reference.

use crate::linalg::{c, kron, pauli, ComplexMatrix};
use crate::{Error, Result};
use crate::qw::QwParams;

/// NV Hamiltonian constants. Frequencies are in MHz (f = omega / 2 pi
/// throughout), fields in tesla.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NvConstants {
    /// Electron gyromagnetic ratio, MHz/T (gamma_e / 2 pi = -28.03 GHz/T).
    pub gamma_e: f64,
    /// Nuclear (14N) gyromagnetic ratio, MHz/T.
    pub gamma_n: f64,
    /// Axial zero-field splitting D, MHz.
    pub d_zfs: f64,
    /// Nuclear quadrupole Q, MHz.
    pub q_quad: f64,
    /// Axial hyperfine coupling A, MHz.
    pub a_hf: f64,
    /// Static field B0 along the NV axis, T.
    pub b0: f64,
}

impl Default for NvConstants {
    fn default() -> Self {
        Self {
            gamma_e: -28_030.0,
            gamma_n: 3.077,
            d_zfs: 2_870.0,
            q_quad: -4.945,
            a_hf: -2.16,
            b0: 0.050,
        }
    }
}

impl NvConstants {
    /// E(m_e, m_n) = -gamma_e B0 m_e - gamma_n B0 m_n + D m_e^2 + Q m_n^2
    ///             + A m_e m_n, in MHz.
    pub fn level_energy(&self, m_e: i8, m_n: i8) -> f64 {
        let (me, mn) = (m_e as f64, m_n as f64);
        -self.gamma_e * self.b0 * me - self.gamma_n * self.b0 * mn
            + self.d_zfs * me * me
            + self.q_quad * mn * mn
            + self.a_hf * me * mn
    }
}

/// (m_e, m_n) for level |l>, l = 1..=9.
pub fn level_quantum_numbers(l: usize) -> (i8, i8) {
    assert!((1..=9).contains(&l), "levels are 1..=9");
    let m_e = match (l - 1) / 3 {
        0 => 1,
        1 => 0,
        _ => -1,
    };
    let m_n = match (l - 1) % 3 {
        0 => 1,
        1 => 0,
        _ => -1,
    };
    (m_e, m_n)
}

/// Diagonal 9x9 lab-frame Hamiltonian in the |m_e, m_n> product basis,
/// ordered |1>..|9>.
pub fn build_hnv_lab(constants: &NvConstants) -> ComplexMatrix {
    let mut h = ComplexMatrix::zeros(9);
    for l in 1..=9 {
        let (m_e, m_n) = level_quantum_numbers(l);
        h.set(l - 1, l - 1, c(constants.level_energy(m_e, m_n), 0.0));
    }
    h
}

/// Drive configuration for the two MW and two RF tones, MHz and us.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NvDriveConfig {
    /// Rabi frequency of the MW tone addressing |4> <-> |7>.
    pub omega_mw1: f64,
    /// Rabi frequency of the MW tone addressing |5> <-> |8>.
    pub omega_mw2: f64,
    /// Shared Rabi frequency of the two nuclear (RF) tones.
    pub omega_rf: f64,
    /// Common MW detuning, MHz.
    pub delta_mw: f64,
    /// Common RF detuning, MHz.
    pub delta_rf: f64,
    /// Unit factor converting QW units to MHz (default 1/11).
    pub scale: f64,
    /// Sample interval in us (the NV-frame time step per protocol sample).
    pub tau: f64,
}

pub const DEFAULT_SCALE: f64 = 1.0 / 11.0;

/// QW parameters -> NV drive parameters: Omega_MW = 2 p s (with
/// Omega_MW1 = -Omega_MW2), delta_RF = -2 (p^2 - mu) s, Omega_RF = 2 delta s,
/// delta_MW = -2 bx s. `tau` is the QW-unit sample interval; the NV-frame
/// interval is tau / s.
pub fn qw_to_nv(params: QwParams, p: f64, scale: f64, tau: f64) -> Result<NvDriveConfig> {
    if !(scale > 0.0) {
        return Err(Error::InvalidInput { what: "scale must be positive" });
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidInput { what: "tau must be positive" });
    }
    let omega_mw = 2.0 * p * scale;
    Ok(NvDriveConfig {
        omega_mw1: omega_mw,
        omega_mw2: -omega_mw,
        omega_rf: 2.0 * params.delta * scale,
        delta_mw: -2.0 * params.bx * scale,
        delta_rf: -2.0 * (p * p - params.mu) * scale,
        scale,
        tau: tau / scale,
    })
}

/// Inverse of `qw_to_nv` (requires the QW-simulation convention
/// omega_mw1 = -omega_mw2).
pub fn nv_to_qw(config: &NvDriveConfig) -> Result<(QwParams, f64)> {
    let s = config.scale;
    if !(s > 0.0) {
        return Err(Error::InvalidInput { what: "scale must be positive" });
    }
    if (config.omega_mw1 + config.omega_mw2).abs() > 1e-12 * (config.omega_mw1.abs() + 1.0) {
        return Err(Error::InvalidInput { what: "omega_mw1 must equal -omega_mw2" });
    }
    let p = config.omega_mw1 / (2.0 * s);
    let mu = p * p + config.delta_rf / (2.0 * s);
    let delta = config.omega_rf / (2.0 * s);
    let bx = -config.delta_mw / (2.0 * s);
    Ok((QwParams::new(mu, delta, bx)?, p))
}

/// Rotating-frame Hamiltonian on the (sigma, tau) subspace (|4>,|5>,|7>,|8>):
/// (O1-O2)/4 sx tz + (O1+O2)/4 sx - dRF/2 tz + ORF/2 tx - dMW/2 sz, MHz.
pub fn build_hrot(config: &NvDriveConfig) -> ComplexMatrix {
    let d = (config.omega_mw1 - config.omega_mw2) / 4.0;
    let s = (config.omega_mw1 + config.omega_mw2) / 4.0;
    let mut h = kron(&pauli::x(), &pauli::z()).scale(c(d, 0.0));
    h = h.add(&kron(&pauli::x(), &pauli::i2()).scale(c(s, 0.0)));
    h = h.add(&kron(&pauli::i2(), &pauli::z()).scale(c(-0.5 * config.delta_rf, 0.0)));
    h = h.add(&kron(&pauli::i2(), &pauli::x()).scale(c(0.5 * config.omega_rf, 0.0)));
    h = h.add(&kron(&pauli::z(), &pauli::i2()).scale(c(-0.5 * config.delta_mw, 0.0)));
    h
}

/// (Hd (x) I) H (Hd (x) I): swaps sigma_x and sigma_z terms; involutive.
pub fn hadamard_conjugate(h: &ComplexMatrix) -> ComplexMatrix {
    let hd = kron(&pauli::hadamard(), &pauli::i2());
    hd.mul(h).mul(&hd)
}

/// Static level map: labels, simulation subspace, reference level, and the
/// wire-basis image of each subspace level.
#[derive(Debug, Clone)]
pub struct LevelMap {
    /// (m_e, m_n) for |1>..|9>, indexed by level - 1.
    pub quantum_numbers: [(i8, i8); 9],
    /// Simulation subspace levels in sigma (x) tau order.
    pub subspace: [usize; 4],
    /// Interferometric reference level.
    pub reference: usize,
    /// Wire-basis image of each subspace level, same order as `subspace`.
    /// `p`/`h` is the particle/hole tau state; `->`/`<-` the sigma_x
    /// eigenstate (|up> +- |dn>)/sqrt2.
    pub qw_images: [&'static str; 4],
    /// Nuclear alpha transition (RF tone 1).
    pub alpha_transition: (usize, usize),
    /// Nuclear beta transition (readout tone).
    pub beta_transition: (usize, usize),
    /// Electron MW transitions addressed by the two MW tones.
    pub mw_transitions: [(usize, usize); 2],
}

/// The fixed level map used throughout: |4>,|5> carry m_e = 0 with
/// m_n = +1, 0; |7>,|8> carry m_e = -1 with m_n = +1, 0; |6> = (0, -1) is the
/// reference; |7> images |p, <-).
pub fn nv_basis_map() -> LevelMap {
    let mut quantum_numbers = [(0i8, 0i8); 9];
    for l in 1..=9 {
        quantum_numbers[l - 1] = level_quantum_numbers(l);
    }
    LevelMap {
        quantum_numbers,
        subspace: [4, 5, 7, 8],
        reference: 6,
        qw_images: ["p,->", "h,->", "p,<-", "h,<-"],
        alpha_transition: (4, 5),
        beta_transition: (5, 6),
        mw_transitions: [(4, 7), (5, 8)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::hermitian_eigen;
    use proptest::prelude::*;
    use rand_chacha::rand_core::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform(rng: &mut ChaCha8Rng) -> f64 {
        (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    #[test]
    fn level_energies_at_default_constants() {
        let k = NvConstants::default();
        // m_e = 0 manifold.
        assert!((k.level_energy(0, 1) - (-5.09885)).abs() < 1e-9);
        assert!((k.level_energy(0, 0) - 0.0).abs() < 1e-12);
        assert!((k.level_energy(0, -1) - (-4.79115)).abs() < 1e-9);
        // m_e = -1 manifold.
        assert!((k.level_energy(-1, 1) - 1465.56115).abs() < 1e-8);
        assert!((k.level_energy(-1, 0) - 1468.5).abs() < 1e-9);
    }

    #[test]
    fn hyperfine_splits_transitions_by_a() {
        let k = NvConstants::default();
        let f47 = k.level_energy(-1, 1) - k.level_energy(0, 1);
        let f58 = k.level_energy(-1, 0) - k.level_energy(0, 0);
        // The two MW transitions differ by exactly |A| = 2.16 MHz.
        assert!((f47 - f58 - 2.16).abs() < 1e-9);
        assert!((f47 - 1470.66).abs() < 1e-8);
        assert!((f58 - 1468.5).abs() < 1e-9);
    }

    #[test]
    fn lab_hamiltonian_is_real_diagonal() {
        let h = build_hnv_lab(&NvConstants::default());
        for r in 0..9 {
            for col in 0..9 {
                let e = h.at(r, col);
                if r != col {
                    assert_eq!(e, c(0.0, 0.0));
                } else {
                    assert_eq!(e.im, 0.0);
                }
            }
        }
    }

    #[test]
    fn term_isolation_zero_field() {
        let k = NvConstants { gamma_e: -28_030.0, gamma_n: 3.077, d_zfs: 2_870.0, q_quad: 0.0, a_hf: 0.0, b0: 0.0 };
        for l in 1..=9 {
            let (m_e, _) = level_quantum_numbers(l);
            assert_eq!(k.level_energy(level_quantum_numbers(l).0, level_quantum_numbers(l).1), 2_870.0 * (m_e as f64) * (m_e as f64));
        }
    }

    #[test]
    fn hrot_trivial_cases() {
        let zero = NvDriveConfig {
            omega_mw1: 0.0,
            omega_mw2: 0.0,
            omega_rf: 0.0,
            delta_mw: 0.0,
            delta_rf: 0.0,
            scale: DEFAULT_SCALE,
            tau: 1.0,
        };
        assert!(build_hrot(&zero).max_abs() < 1e-15);
        // Antisymmetric MW tones cancel the plain sigma_x term: the only
        // off-diagonal sigma entries are (4,7) = +O/2 and (5,8) = -O/2.
        let anti = NvDriveConfig { omega_mw1: 0.4, omega_mw2: -0.4, ..zero };
        let h = build_hrot(&anti);
        assert!((h.at(0, 2) - c(0.2, 0.0)).norm() < 1e-15);
        assert!((h.at(1, 3) - c(-0.2, 0.0)).norm() < 1e-15);
        assert!(h.at(0, 1).norm() < 1e-15);
    }

    #[test]
    fn qw_to_nv_frozen_example() {
        let params = QwParams::new(-1.6, 0.165, 1.3).unwrap();
        let cfg = qw_to_nv(params, 1.0, DEFAULT_SCALE, 0.5).unwrap();
        assert!((cfg.omega_mw1 - 2.0 / 11.0).abs() < 1e-15);
        assert!((cfg.omega_mw2 + 2.0 / 11.0).abs() < 1e-15);
        assert!((cfg.delta_rf - (-2.0 * 2.6 / 11.0)).abs() < 1e-15);
        assert!((cfg.omega_rf - 0.33 / 11.0).abs() < 1e-15);
        assert!((cfg.delta_mw - (-2.6 / 11.0)).abs() < 1e-15);
        assert!((cfg.tau - 5.5).abs() < 1e-12);
    }

    #[test]
    fn mapping_theorem_frozen_point() {
        let params = QwParams::new(-1.6, 0.165, 1.3).unwrap();
        let p = 0.5;
        let cfg = qw_to_nv(params, p, DEFAULT_SCALE, 1.0).unwrap();
        let lhs = hadamard_conjugate(&build_hrot(&cfg));
        let rhs = crate::qw::build_hqw(params, p).scale(c(DEFAULT_SCALE, 0.0));
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    proptest! {
        #[test]
        fn mapping_theorem_random(seed in 0u64..400) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = QwParams::new(
                -(0.05 + 1.95 * uniform(&mut rng)),
                2.0 * uniform(&mut rng),
                2.0 * uniform(&mut rng),
            ).unwrap();
            let p = 4.0 * uniform(&mut rng) - 2.0;
            let scale = if seed % 2 == 0 { DEFAULT_SCALE } else { 0.02 + uniform(&mut rng) };
            let cfg = qw_to_nv(params, p, scale, 1.0).unwrap();
            let lhs = hadamard_conjugate(&build_hrot(&cfg));
            let rhs = crate::qw::build_hqw(params, p).scale(c(scale, 0.0));
            prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }

        #[test]
        fn round_trip_identity(seed in 0u64..400) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3000));
            let params = QwParams::new(
                -(0.05 + 1.95 * uniform(&mut rng)),
                2.0 * uniform(&mut rng),
                0.01 + 2.0 * uniform(&mut rng),
            ).unwrap();
            let p = 2.0 * uniform(&mut rng);
            let cfg = qw_to_nv(params, p, DEFAULT_SCALE, 1.0).unwrap();
            let (back, p_back) = nv_to_qw(&cfg).unwrap();
            prop_assert!((back.mu - params.mu).abs() < 1e-12 * params.mu.abs().max(1.0));
            prop_assert!((back.delta - params.delta).abs() < 1e-12);
            prop_assert!((back.bx - params.bx).abs() < 1e-12);
            prop_assert!((p_back - p).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_mw_reversal_preserves_spectrum() {
        let params = QwParams::new(-1.3, 0.165, 1.3).unwrap();
        let cfg = qw_to_nv(params, 0.4, DEFAULT_SCALE, 1.0).unwrap();
        let flipped = NvDriveConfig { delta_mw: -cfg.delta_mw, ..cfg };
        let e1 = hermitian_eigen(&build_hrot(&cfg)).unwrap().eigenvalues;
        let e2 = hermitian_eigen(&build_hrot(&flipped)).unwrap().eigenvalues;
        for (a, b) in e1.iter().zip(&e2) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn hadamard_conjugation_properties() {
        // sigma_x (x) I -> sigma_z (x) I; I (x) tau_x unchanged; involutive.
        let sx = kron(&pauli::x(), &pauli::i2());
        let sz = kron(&pauli::z(), &pauli::i2());
        assert!(hadamard_conjugate(&sx).max_abs_diff(&sz) < 1e-14);
        let tx = kron(&pauli::i2(), &pauli::x());
        assert!(hadamard_conjugate(&tx).max_abs_diff(&tx) < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut m = ComplexMatrix::zeros(4);
        for r in 0..4 {
            for col in 0..4 {
                m.set(r, col, c(uniform(&mut rng), uniform(&mut rng)));
            }
        }
        let herm = m.add(&m.dagger()).scale(c(0.5, 0.0));
        let twice = hadamard_conjugate(&hadamard_conjugate(&herm));
        assert!(twice.max_abs_diff(&herm) < 1e-12);
        let e1 = hermitian_eigen(&herm).unwrap().eigenvalues;
        let e2 = hermitian_eigen(&hadamard_conjugate(&herm)).unwrap().eigenvalues;
        for (a, b) in e1.iter().zip(&e2) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn basis_map_contract() {
        let map = nv_basis_map();
        assert_eq!(map.subspace, [4, 5, 7, 8]);
        assert_eq!(map.reference, 6);
        // Subspace levels carry m_e in {0, -1} and m_n in {0, 1}.
        for &l in &map.subspace {
            let (m_e, m_n) = map.quantum_numbers[l - 1];
            assert!(m_e == 0 || m_e == -1);
            assert!(m_n == 0 || m_n == 1);
        }
        // |7> images the particle state with sigma = <-.
        assert_eq!(map.qw_images[2], "p,<-");
        assert_eq!(map.alpha_transition, (4, 5));
        assert_eq!(map.beta_transition, (5, 6));
    }
}
