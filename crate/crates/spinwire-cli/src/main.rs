//! spinwire: quantum-wire spectroscopy runs from the command line.
//!
//! Subcommands map one-to-one to experiments; every run drops its data
//! tables, the resolved config and a checksummed manifest into the output
//! directory. Identical resolved configs produce byte-identical data files.

mod config;
mod errors;
mod runners;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{Overrides, RunConfig};
use crate::errors::RunError;

#[derive(Parser)]
#[command(name = "spinwire", version, about = "Quantum-wire topological spectroscopy runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Config file (strict TOML); omitted = built-in defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: config out_dir, else "out").
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: machine parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Force quasi-static noise on or off.
    #[arg(long, global = true, value_parser = parse_switch)]
    noise: Option<bool>,
    /// Force drive crosstalk (lab tier) on or off.
    #[arg(long, global = true, value_parser = parse_switch)]
    crosstalk: Option<bool>,
    /// Photon shots per readback point.
    #[arg(long, global = true)]
    shots: Option<usize>,
    /// Force ideal (analytic) protocol mode.
    #[arg(long, global = true)]
    ideal: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Band structure plus ideal- and noisy-protocol line tables over a p grid.
    Dispersion,
    /// Reduced-spin Bloch trajectory and its closed/open classification.
    Bloch,
    /// Single-point series, spectrum and line fits.
    Spectrum,
    /// Topological-number sweep over the chemical potential.
    NuSweep,
    /// Single-point run forced through the emulated pipeline.
    Emulate,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Dispersion => "dispersion",
            Command::Bloch => "bloch",
            Command::Spectrum => "spectrum",
            Command::NuSweep => "nu-sweep",
            Command::Emulate => "emulate",
        }
    }
}

fn parse_switch(s: &str) -> Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        other => Err(format!("expected on|off, got {other:?}")),
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    artifact_version: u32,
    command: &'a str,
    manifest_hash: &'a str,
    /// Wall clock; the only non-reproducible field of a run.
    created_unix_s: u64,
    config: &'a RunConfig,
    checksums: &'a BTreeMap<String, String>,
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), RunError> {
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| RunError::io(format!("write {}: {e}", path.display())))
}

fn run(cli: &Cli) -> Result<(), RunError> {
    let overrides = Overrides {
        seed: cli.seed,
        noise: cli.noise,
        crosstalk: cli.crosstalk,
        shots: cli.shots,
        ideal: cli.ideal,
    };
    let raw = config::load(cli.config.as_deref())?;
    let res = config::resolve(raw, &overrides)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0))
        .build()
        .map_err(|e| RunError::config(format!("worker pool: {e}")))?;
    let output = pool.install(|| match cli.command {
        Command::Dispersion => runners::run_dispersion(&res),
        Command::Bloch => runners::run_bloch(&res),
        Command::Spectrum => runners::run_spectrum(&res, false),
        Command::Emulate => runners::run_spectrum(&res, true),
        Command::NuSweep => runners::run_nu_sweep(&res),
    })?;

    let out_dir = cli
        .out
        .clone()
        .or_else(|| res.out_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| RunError::io(format!("create {}: {e}", out_dir.display())))?;

    let mut checksums = BTreeMap::new();
    for (name, contents) in &output.files {
        write_file(&out_dir, name, contents)?;
        checksums.insert(name.clone(), config::sha256_hex(contents.as_bytes()));
    }
    let resolved_text = format!(
        "# manifest {}\n{}",
        res.manifest_hash,
        config::canonical_toml(&res.config)?
    );
    write_file(&out_dir, "config.resolved.toml", &resolved_text)?;
    checksums.insert(
        "config.resolved.toml".into(),
        config::sha256_hex(resolved_text.as_bytes()),
    );

    let created_unix_s = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = Manifest {
        artifact_version: 1,
        command: cli.command.name(),
        manifest_hash: &res.manifest_hash,
        created_unix_s,
        config: &res.config,
        checksums: &checksums,
    };
    let manifest_body = toml::to_string(&manifest)
        .map_err(|e| RunError::io(format!("serialize manifest: {e}")))?;
    let manifest_text = format!("# manifest {}\n{manifest_body}", res.manifest_hash);
    write_file(&out_dir, "manifest.toml", &manifest_text)?;

    println!("manifest {}", res.manifest_hash);
    for line in &output.summary {
        println!("{line}");
    }
    for (name, _) in &output.files {
        println!("wrote {}", out_dir.join(name).display());
    }
    println!("wrote {}", out_dir.join("config.resolved.toml").display());
    println!("wrote {}", out_dir.join("manifest.toml").display());
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
