//! State propagation in three fidelity tiers plus optical readout.
//!
//! * ideal: exact evolution under H_QW.
//! * rotating frame: H_rot with quasi-static electron dephasing, ensemble
//!   averaged.
//! * lab frame: the full 9-level system driven by explicitly oscillating
//!   tones, treated in the interaction picture of the diagonal NV
//!   Hamiltonian with the carrier rotating-wave approximation per tone
//!   (dropped terms oscillate at ~3 GHz against Rabi amplitudes of ~1e-2
//!   MHz). Every same-class transition a tone can reach stays in the model,
//!   which is what produces pulse crosstalk; with crosstalk disabled only
//!   the addressed pair is kept and the tier reduces to the rotating frame.
//!
//! Quasi-static noise enters as a rigid manifold shift: level l moves by
//! eps (m_e + 1/2), i.e. +eps/2 on the m_e = 0 manifold (including the
//! reference |6>) and -eps/2 on m_e = -1, matching eps/2 sz (x) I on the
//! simulation subspace while keeping each manifold internally coherent.

use alloc::vec;
use alloc::vec::Vec;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::linalg::{
    c, cis, evolve_from_eigen, hermitian_eigen, kron, pauli, ComplexMatrix, StateVector,
};
use crate::nv::{build_hrot, level_quantum_numbers, NvConstants, NvDriveConfig};
use crate::qw::{build_hqw, QwParams};
use crate::{Error, Result};

const TWO_PI: f64 = 2.0 * core::f64::consts::PI;

/// Quasi-static dephasing model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    /// Std of the quasi-static electron frequency detuning, MHz.
    pub sigma_b: f64,
    /// Ensemble size for averaged quantities.
    pub n_realizations: usize,
    /// Seed for the deterministic noise stream.
    pub seed: u64,
    /// Keep off-resonant same-class couplings in the lab tier.
    pub crosstalk: bool,
}

impl NoiseModel {
    /// Noise disabled; single deterministic realization.
    pub fn ideal() -> Self {
        Self { sigma_b: 0.0, n_realizations: 1, seed: 0, crosstalk: false }
    }

    /// sigma_b giving ensemble coherence exp(-(t/T2*)^2):
    /// sigma_b = 1 / (sqrt(2) pi T2*).
    pub fn sigma_b_from_t2_star(t2_star_us: f64) -> f64 {
        1.0 / (libm::sqrt(2.0) * core::f64::consts::PI * t2_star_us)
    }

    /// Default dephasing at T2* = 3 us.
    pub fn with_t2_star(t2_star_us: f64, n_realizations: usize, seed: u64) -> Self {
        Self {
            sigma_b: Self::sigma_b_from_t2_star(t2_star_us),
            n_realizations,
            seed,
            crosstalk: false,
        }
    }

    pub(crate) fn draws(&self) -> Vec<f64> {
        if self.sigma_b == 0.0 {
            return vec![0.0];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let normal = Normal::new(0.0, self.sigma_b).expect("sigma_b must be finite");
        (0..self.n_realizations.max(1)).map(|_| normal.sample(&mut rng)).collect()
    }
}

/// Mean photoluminescence per level and shot statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutModel {
    /// PL_l for l = 4..=8, counts per shot (arbitrary units).
    pub pl: [f64; 5],
    /// Shots per theta point.
    pub shots: usize,
    /// Draw Poisson counts instead of returning the exact mean.
    pub shot_noise: bool,
}

impl Default for ReadoutModel {
    fn default() -> Self {
        Self { pl: [1.00, 0.97, 0.97, 0.70, 0.70], shots: 400, shot_noise: false }
    }
}

impl ReadoutModel {
    /// Ordering contract: PL4 > PL5 and |PL5 - PL6| <= 0.02 PL5.
    pub fn validate(&self) -> Result<()> {
        let [pl4, pl5, pl6, ..] = self.pl;
        if !(pl4 > pl5) {
            return Err(Error::InvalidInput { what: "readout requires PL4 > PL5" });
        }
        if (pl5 - pl6).abs() > 0.02 * pl5 {
            return Err(Error::InvalidInput { what: "readout requires PL5 ~ PL6 within 2%" });
        }
        if self.shots == 0 {
            return Err(Error::InvalidInput { what: "shots must be positive" });
        }
        Ok(())
    }

    /// PL of NV level l (1..=9). Levels outside the measured table (the
    /// m_e = +1 manifold and |9>) read as the dark m_e = -1 value; they are
    /// never populated beyond leakage.
    pub fn pl_of_level(&self, l: usize) -> f64 {
        match l {
            4 => self.pl[0],
            5 => self.pl[1],
            6 => self.pl[2],
            7 => self.pl[3],
            _ => self.pl[4],
        }
    }
}

/// exp(-i 2 pi H_QW t) psi0.
pub fn evolve_ideal_qw(params: QwParams, p: f64, psi0: &StateVector, t: f64) -> StateVector {
    let eig = hermitian_eigen(&build_hqw(params, p)).expect("H_QW is Hermitian");
    evolve_from_eigen(&eig, psi0, t)
}

/// Ensemble-averaged evolution under H_rot + eps/2 sz (x) I with
/// eps ~ N(0, sigma_b) per realization from the seeded stream.
pub fn evolve_rot_nv(
    config: &NvDriveConfig,
    psi0: &StateVector,
    t: f64,
    noise: &NoiseModel,
) -> ComplexMatrix {
    let h = build_hrot(config);
    let sz = kron(&pauli::z(), &pauli::i2());
    let draws = noise.draws();
    let weight = c(1.0 / draws.len() as f64, 0.0);
    let mut rho = ComplexMatrix::zeros(4);
    for eps in draws {
        let hk = h.add(&sz.scale(c(0.5 * eps, 0.0)));
        let eig = hermitian_eigen(&hk).expect("H_rot + noise is Hermitian");
        let psi = evolve_from_eigen(&eig, psi0, t);
        rho = rho.add(&psi.outer().scale(weight));
    }
    rho
}

/// Tone class: microwave (electron) or radio frequency (nuclear).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToneClass {
    Mw,
    Rf,
}

/// m_n-preserving electron 0 <-> -1 transitions reachable by an MW tone.
pub const MW_PAIRS: [(usize, usize); 3] = [(4, 7), (5, 8), (6, 9)];
/// Delta m_n = +-1 nuclear transitions reachable by an RF tone.
pub const RF_PAIRS: [(usize, usize); 6] = [(1, 2), (2, 3), (4, 5), (5, 6), (7, 8), (8, 9)];

/// One drive tone: field = rabi cos(2 pi f t + phase) with
/// f = (addressed transition frequency) - detuning, t global from schedule
/// start (tones are phase-coherent across segments). Matrix elements on all
/// same-class pairs are equal; the 1/sqrt2 spin-1 ladder factor is absorbed
/// into the Rabi frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriveTone {
    pub class: ToneClass,
    /// Addressed level pair, e.g. (4, 7).
    pub addressed: (usize, usize),
    /// Rabi frequency, MHz (may be negative: a pi phase flip).
    pub rabi: f64,
    /// Detuning from the addressed transition, MHz.
    pub detuning: f64,
    /// Tone phase in radians.
    pub phase: f64,
}

/// A constant-tone interval of the pulse scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSegment {
    /// Duration in us.
    pub duration: f64,
    pub tones: Vec<DriveTone>,
}

/// Ordered pulse segments; global time starts at 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PulseSchedule {
    pub segments: Vec<PulseSegment>,
}

impl PulseSchedule {
    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }
}

/// The four simultaneous QW-simulation tones of one evolution interval.
pub fn qw_drive_segment(config: &NvDriveConfig, duration: f64) -> PulseSegment {
    PulseSegment {
        duration,
        tones: vec![
            DriveTone {
                class: ToneClass::Mw,
                addressed: (4, 7),
                rabi: config.omega_mw1,
                detuning: config.delta_mw,
                phase: 0.0,
            },
            DriveTone {
                class: ToneClass::Mw,
                addressed: (5, 8),
                rabi: config.omega_mw2,
                detuning: config.delta_mw,
                phase: 0.0,
            },
            DriveTone {
                class: ToneClass::Rf,
                addressed: (4, 5),
                rabi: config.omega_rf,
                detuning: config.delta_rf,
                phase: 0.0,
            },
            DriveTone {
                class: ToneClass::Rf,
                addressed: (7, 8),
                rabi: config.omega_rf,
                detuning: config.delta_rf,
                phase: 0.0,
            },
        ],
    }
}

/// A single resonant pulse of given rotation angle (pi for a flip, pi/2 for
/// a beam splitter): duration = angle / (2 pi rabi).
pub fn resonant_pulse(
    class: ToneClass,
    addressed: (usize, usize),
    rabi: f64,
    angle: f64,
    phase: f64,
) -> PulseSegment {
    PulseSegment {
        duration: angle / (TWO_PI * rabi),
        tones: vec![DriveTone { class, addressed, rabi, detuning: 0.0, phase }],
    }
}

fn transition_frequency(constants: &NvConstants, pair: (usize, usize)) -> f64 {
    let (ma, na) = level_quantum_numbers(pair.0);
    let (mb, nb) = level_quantum_numbers(pair.1);
    (constants.level_energy(mb, nb) - constants.level_energy(ma, na)).abs()
}

fn class_pairs(class: ToneClass) -> &'static [(usize, usize)] {
    match class {
        ToneClass::Mw => &MW_PAIRS,
        ToneClass::Rf => &RF_PAIRS,
    }
}

/// Interaction-picture Hamiltonian at global time t (MHz, 9x9).
fn lab_interaction_hamiltonian(
    schedule_tones: &[DriveTone],
    constants: &NvConstants,
    eps: f64,
    crosstalk: bool,
    t: f64,
) -> ComplexMatrix {
    let mut h = ComplexMatrix::zeros(9);
    // Static diagonal: the quasi-static manifold shift.
    for l in 1..=9 {
        let (m_e, _) = level_quantum_numbers(l);
        h.set(l - 1, l - 1, c(eps * (m_e as f64 + 0.5), 0.0));
    }
    for tone in schedule_tones {
        let f_tone = transition_frequency(constants, tone.addressed) - tone.detuning;
        let pairs: &[(usize, usize)] = if crosstalk {
            class_pairs(tone.class)
        } else {
            core::slice::from_ref(&tone.addressed)
        };
        for &(la, lb) in pairs {
            let (ma, na) = level_quantum_numbers(la);
            let (mb, nb) = level_quantum_numbers(lb);
            let (ea, eb) = (constants.level_energy(ma, na), constants.level_energy(mb, nb));
            let (lo, hi, f_ab) = if eb >= ea { (la, lb, eb - ea) } else { (lb, la, ea - eb) };
            // Co-rotating term of rabi cos(2 pi f t + phase) on |hi><lo|.
            let coupling = c(0.5 * tone.rabi, 0.0)
                * cis(-tone.phase)
                * cis(TWO_PI * (f_ab - f_tone) * t);
            h.add_to(hi - 1, lo - 1, coupling);
            h.add_to(lo - 1, hi - 1, coupling.conj());
        }
    }
    h
}

fn max_interaction_frequency(
    schedule: &PulseSchedule,
    constants: &NvConstants,
    eps: f64,
    crosstalk: bool,
) -> f64 {
    let mut fmax = eps.abs() * 1.5;
    for seg in &schedule.segments {
        for tone in &seg.tones {
            let f_tone = transition_frequency(constants, tone.addressed) - tone.detuning;
            fmax = crate::linalg::fmax(fmax, tone.rabi.abs());
            fmax = crate::linalg::fmax(fmax, tone.detuning.abs());
            let pairs: &[(usize, usize)] = if crosstalk {
                class_pairs(tone.class)
            } else {
                core::slice::from_ref(&tone.addressed)
            };
            for &pair in pairs {
                let f_ab = transition_frequency(constants, pair);
                fmax = crate::linalg::fmax(fmax, (f_ab - f_tone).abs());
            }
        }
    }
    fmax
}

/// Single-realization lab-tier propagation at fixed quasi-static offset
/// `eps`. Returns the interaction-picture state (populations equal lab-frame
/// populations; coherences differ by the known diagonal phases e^{-i2pi E_l t}).
///
/// Midpoint exponential integrator: U_step = exp(-i 2 pi H_I(t_mid) dt).
pub fn evolve_lab_nv_pure(
    schedule: &PulseSchedule,
    constants: &NvConstants,
    psi0: &StateVector,
    dt_max: f64,
    eps: f64,
    crosstalk: bool,
) -> Result<StateVector> {
    evolve_lab_nv_pure_from(schedule, constants, psi0, dt_max, eps, crosstalk, 0.0)
}

/// Same as `evolve_lab_nv_pure` with the schedule starting at global time
/// `t_start` (tone phases stay coherent with an earlier schedule portion that
/// ended there, so a long run can be evolved incrementally).
pub fn evolve_lab_nv_pure_from(
    schedule: &PulseSchedule,
    constants: &NvConstants,
    psi0: &StateVector,
    dt_max: f64,
    eps: f64,
    crosstalk: bool,
    t_start: f64,
) -> Result<StateVector> {
    if psi0.dim() != 9 {
        return Err(Error::DimMismatch { expected: 9, got: psi0.dim() });
    }
    if !(dt_max > 0.0) {
        return Err(Error::InvalidInput { what: "dt_max must be positive" });
    }
    let f_max = max_interaction_frequency(schedule, constants, eps, crosstalk);
    if dt_max * f_max > 0.05 {
        return Err(Error::InvalidInput {
            what: "dt_max too coarse: max frequency x dt_max must be <= 0.05 cycles",
        });
    }
    let mut psi = psi0.clone();
    let mut t0 = t_start;
    for seg in &schedule.segments {
        if seg.duration <= 0.0 {
            continue;
        }
        let n_steps = libm::ceil(seg.duration / dt_max) as usize;
        let dt = seg.duration / n_steps as f64;
        for k in 0..n_steps {
            let t_mid = t0 + (k as f64 + 0.5) * dt;
            let h = lab_interaction_hamiltonian(&seg.tones, constants, eps, crosstalk, t_mid);
            let eig = hermitian_eigen(&h)?;
            psi = evolve_from_eigen(&eig, &psi, dt);
        }
        t0 += seg.duration;
    }
    Ok(psi)
}

/// Ensemble-averaged lab-tier density matrix over the noise draws.
pub fn evolve_lab_nv(
    schedule: &PulseSchedule,
    constants: &NvConstants,
    psi0: &StateVector,
    dt_max: f64,
    noise: &NoiseModel,
) -> Result<ComplexMatrix> {
    let draws = noise.draws();
    let weight = c(1.0 / draws.len() as f64, 0.0);
    let mut rho = ComplexMatrix::zeros(9);
    for eps in draws {
        let psi = evolve_lab_nv_pure(schedule, constants, psi0, dt_max, eps, noise.crosstalk)?;
        rho = rho.add(&psi.outer().scale(weight));
    }
    Ok(rho)
}

/// Step-halving convergence check: evolves at dt_max and dt_max/2 and errors
/// if the final-state fidelity changed by more than `tol` (advising a smaller
/// dt_max). Returns the observed fidelity change.
pub fn lab_step_convergence(
    schedule: &PulseSchedule,
    constants: &NvConstants,
    psi0: &StateVector,
    dt_max: f64,
    eps: f64,
    crosstalk: bool,
    tol: f64,
) -> Result<f64> {
    let a = evolve_lab_nv_pure(schedule, constants, psi0, dt_max, eps, crosstalk)?;
    let b = evolve_lab_nv_pure(schedule, constants, psi0, 0.5 * dt_max, eps, crosstalk)?;
    let delta = 1.0 - a.inner(&b).norm();
    if delta > tol {
        return Err(Error::StepNotConverged { delta, tol });
    }
    Ok(delta)
}

/// Mean photoluminescence counts of a state, summed over shots.
///
/// `levels[i]` is the NV level (1..=9) of basis index i of `rho`. Without
/// shot noise this returns shots * sum_l pop_l PL_l exactly; with shot noise
/// each shot draws Poisson(mean) from the seeded stream.
pub fn simulate_pl(
    rho: &ComplexMatrix,
    levels: &[usize],
    readout: &ReadoutModel,
    rng_seed: u64,
) -> f64 {
    assert_eq!(rho.dim(), levels.len(), "levels must label every basis index");
    let mut mean = 0.0;
    for (i, &l) in levels.iter().enumerate() {
        mean += rho.at(i, i).re * readout.pl_of_level(l);
    }
    if !readout.shot_noise {
        return mean * readout.shots as f64;
    }
    if mean <= 0.0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let poisson = Poisson::new(mean).expect("positive mean");
    (0..readout.shots).map(|_| poisson.sample(&mut rng)).sum()
}
