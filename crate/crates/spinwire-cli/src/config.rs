//! Run configuration: strict TOML schema, flag overrides, canonical hashing.
//!
//! Every section rejects unknown keys so a typo fails the run instead of
//! silently falling back to a default. The resolved (post-override) config
//! re-serializes canonically; its SHA-256 is the manifest hash stamped into
//! every output file.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spinwire_core::dynamics::{NoiseModel, ReadoutModel};
use spinwire_core::nv::DEFAULT_SCALE;
use spinwire_core::qw::QwParams;
use spinwire_core::spectroscopy::{
    default_theta_grid, EmulationOptions, LabEmulation, PsiLabel, Window,
};

use crate::errors::RunError;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    pub model: ModelSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    pub grid: GridSection,
    pub bloch: BlochSection,
    pub protocol: ProtocolSection,
    pub noise: NoiseSection,
    pub readout: ReadoutSection,
    pub lab: LabSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: None,
            model: ModelSection::default(),
            sweep: None,
            grid: GridSection::default(),
            bloch: BlochSection::default(),
            protocol: ProtocolSection::default(),
            noise: NoiseSection::default(),
            readout: ReadoutSection::default(),
            lab: LabSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub mu: f64,
    pub delta: f64,
    pub bx: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { mu: -1.14, delta: 0.165, bx: 1.3 }
    }
}

/// Chemical-potential grid of the nu sweep.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

/// Momentum grid of dispersion runs (simulated half-axis p >= 0).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub p_max: f64,
    pub points: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { p_max: 1.5, points: 21 }
    }
}

/// Momentum grid of Bloch-trajectory runs (needs p_max^2 >> model scale).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct BlochSection {
    pub p_max: f64,
    pub points: usize,
}

impl Default for BlochSection {
    fn default() -> Self {
        Self { p_max: 13.0, points: 261 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    /// Probe level: 4, 5, 7 or 8.
    pub psi: u8,
    /// Momentum of single-point runs (spectrum/emulate).
    pub p: f64,
    pub m_max: usize,
    pub zero_pad: usize,
    /// "rect" | "hann"
    pub window: String,
    /// Sample interval in QW units; omitted = 1/(8 E_max) policy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub theta_points: usize,
    /// "ideal" | "rot" | "lab"
    pub mode: String,
    /// QW-to-MHz drive scale.
    pub scale: f64,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        Self {
            psi: 5,
            p: 0.0,
            m_max: 128,
            zero_pad: 8,
            window: "hann".into(),
            tau: None,
            theta_points: 8,
            mode: "ideal".into(),
            scale: DEFAULT_SCALE,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Effective inhomogeneous dephasing time, us.
    pub t2_star_us: f64,
    /// Direct override of the detuning std in MHz (wins over t2_star_us).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_b: Option<f64>,
    pub n_realizations: usize,
    pub crosstalk: bool,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self { t2_star_us: 3.0, sigma_b: None, n_realizations: 400, crosstalk: false }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ReadoutSection {
    /// Mean photoluminescence of levels 4..8, counts per shot.
    pub pl: [f64; 5],
    pub shots: usize,
    pub shot_noise: bool,
}

impl Default for ReadoutSection {
    fn default() -> Self {
        let d = ReadoutModel::default();
        Self { pl: d.pl, shots: d.shots, shot_noise: d.shot_noise }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LabSection {
    /// Integrator step bound, us.
    pub dt_max: f64,
    /// Readback bridge/splitter Rabi frequencies, MHz.
    pub rabi_mw: f64,
    pub rabi_rf: f64,
}

impl Default for LabSection {
    fn default() -> Self {
        let d = LabEmulation::default();
        Self { dt_max: d.dt_max, rabi_mw: d.readback_rabi_mw, rabi_rf: d.readback_rabi_rf }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Ideal,
    Rot,
    Lab,
}

/// Post-override view of a config with everything parsed into core types.
/// `out_dir` is lifted out of the hashed config: the destination directory
/// is plumbing, not physics, and must not change the manifest identity.
pub struct Resolved {
    pub config: RunConfig,
    pub out_dir: Option<String>,
    pub params: QwParams,
    pub psi: PsiLabel,
    pub window: Window,
    pub mode: Mode,
    pub noise: NoiseModel,
    pub readout: ReadoutModel,
    pub theta_grid: Vec<f64>,
    pub manifest_hash: String,
}

impl Resolved {
    /// Emulation options for a run point; the per-point noise seed is set by
    /// the caller.
    pub fn emulation_options(&self) -> EmulationOptions {
        let lab = if self.mode == Mode::Lab || self.noise.crosstalk {
            Some(LabEmulation {
                dt_max: self.config.lab.dt_max,
                readback_rabi_mw: self.config.lab.rabi_mw,
                readback_rabi_rf: self.config.lab.rabi_rf,
                ..Default::default()
            })
        } else {
            None
        };
        EmulationOptions { scale: self.config.protocol.scale, reverse_delta_mw: false, lab }
    }

    pub fn noise_for_point(&self, idx: usize) -> NoiseModel {
        NoiseModel { seed: point_seed(self.config.seed, idx), ..self.noise }
    }
}

/// Per-point substream: a fixed odd multiplier scrambles the grid index so
/// neighboring points never share a stream.
pub fn point_seed(master: u64, idx: usize) -> u64 {
    master.wrapping_add((idx as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn config_err(msg: impl Into<String>) -> RunError {
    RunError::config(msg)
}

pub fn load(path: Option<&std::path::Path>) -> Result<RunConfig, RunError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| config_err(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text)
                .map_err(|e| config_err(format!("config {}: {e}", p.display())))
        }
    }
}

/// Flag overrides applied before resolution.
pub struct Overrides {
    pub seed: Option<u64>,
    pub noise: Option<bool>,
    pub crosstalk: Option<bool>,
    pub shots: Option<usize>,
    pub ideal: bool,
}

pub fn resolve(mut config: RunConfig, ov: &Overrides) -> Result<Resolved, RunError> {
    if let Some(seed) = ov.seed {
        config.seed = seed;
    }
    if let Some(shots) = ov.shots {
        config.readout.shots = shots;
    }
    if let Some(ct) = ov.crosstalk {
        config.noise.crosstalk = ct;
    }
    if ov.noise == Some(false) {
        config.noise.sigma_b = Some(0.0);
        config.noise.n_realizations = 1;
    }
    if ov.noise == Some(true) && config.noise.sigma_b == Some(0.0) {
        config.noise.sigma_b = None;
    }
    if ov.ideal {
        config.protocol.mode = "ideal".into();
    }
    let out_dir = config.out_dir.take();

    let params = QwParams::new(config.model.mu, config.model.delta, config.model.bx)
        .map_err(|e| config_err(format!("model: {e}")))?;
    let psi = match config.protocol.psi {
        4 => PsiLabel::L4,
        5 => PsiLabel::L5,
        7 => PsiLabel::L7,
        8 => PsiLabel::L8,
        other => return Err(config_err(format!("protocol.psi must be 4, 5, 7 or 8, got {other}"))),
    };
    let window = match config.protocol.window.as_str() {
        "rect" => Window::Rect,
        "hann" => Window::Hann,
        other => return Err(config_err(format!("protocol.window must be rect|hann, got {other:?}"))),
    };
    let mode = match config.protocol.mode.as_str() {
        "ideal" => Mode::Ideal,
        "rot" => Mode::Rot,
        "lab" => Mode::Lab,
        other => return Err(config_err(format!("protocol.mode must be ideal|rot|lab, got {other:?}"))),
    };
    if config.protocol.m_max < 8 {
        return Err(config_err("protocol.m_max must be >= 8"));
    }
    if config.protocol.zero_pad == 0 {
        return Err(config_err("protocol.zero_pad must be >= 1"));
    }
    if config.protocol.theta_points < 4 {
        return Err(config_err("protocol.theta_points must be >= 4"));
    }
    if !(config.protocol.scale > 0.0) {
        return Err(config_err("protocol.scale must be positive"));
    }
    if let Some(tau) = config.protocol.tau {
        if !(tau > 0.0) {
            return Err(config_err("protocol.tau must be positive"));
        }
    }
    if config.grid.points < 2 || !(config.grid.p_max > 0.0) {
        return Err(config_err("grid needs points >= 2 and p_max > 0"));
    }
    if config.bloch.points < 2 || !(config.bloch.p_max > 0.0) {
        return Err(config_err("bloch grid needs points >= 2 and p_max > 0"));
    }
    if let Some(sw) = &config.sweep {
        if !(sw.step > 0.0) || sw.stop < sw.start {
            return Err(config_err("sweep needs step > 0 and stop >= start"));
        }
    }
    if config.noise.n_realizations == 0 {
        return Err(config_err("noise.n_realizations must be >= 1"));
    }
    if !(config.noise.t2_star_us > 0.0) {
        return Err(config_err("noise.t2_star_us must be positive"));
    }
    if !(config.lab.dt_max > 0.0) || !(config.lab.rabi_mw > 0.0) || !(config.lab.rabi_rf > 0.0) {
        return Err(config_err("lab section needs positive dt_max and Rabi frequencies"));
    }

    let sigma_b = config
        .noise
        .sigma_b
        .unwrap_or_else(|| NoiseModel::sigma_b_from_t2_star(config.noise.t2_star_us));
    if sigma_b < 0.0 {
        return Err(config_err("noise.sigma_b must be >= 0"));
    }
    let noise = NoiseModel {
        sigma_b,
        n_realizations: config.noise.n_realizations,
        seed: config.seed,
        crosstalk: config.noise.crosstalk,
    };
    let readout = ReadoutModel {
        pl: config.readout.pl,
        shots: config.readout.shots,
        shot_noise: config.readout.shot_noise,
    };
    readout.validate().map_err(|e| config_err(format!("readout: {e}")))?;
    let theta_grid = default_theta_grid(config.protocol.theta_points);
    let manifest_hash = hash_config(&config)?;
    Ok(Resolved {
        config,
        out_dir,
        params,
        psi,
        window,
        mode,
        noise,
        readout,
        theta_grid,
        manifest_hash,
    })
}

pub fn canonical_toml(config: &RunConfig) -> Result<String, RunError> {
    toml::to_string(config).map_err(|e| config_err(format!("serialize config: {e}")))
}

fn hash_config(config: &RunConfig) -> Result<String, RunError> {
    Ok(sha256_hex(canonical_toml(config)?.as_bytes()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}
