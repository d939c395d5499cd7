//! Experiment runners. Each one produces the data files of a subcommand as
//! (name, contents) pairs plus human-readable summary lines; `main` writes the
//! files, the resolved config and the manifest.
//!
//! File texture: delimiter-separated numeric tables, `#`-commented header,
//! first line always `# manifest <hash>`. Floats print in Rust's shortest
//! round-trip form so identical runs are byte-identical.

use rayon::prelude::*;
use spinwire_core::qw::{
    band_energies, bloch_trajectory, classify_phase, classify_trajectory, Phase, QwParams,
    TrajectoryClass,
};
use spinwire_core::spectroscopy::{
    analyze_peaks, combined_magnitude, default_tau_for, default_tau_for_grid, sample_series_ideal,
    sample_series_emulated_full, sample_series_emulated_with, spectrum, EnergySpectrum,
    PeakAnalysis, PeakPipeline, PsiLabel, TimeSeries, UnresolvedReason,
};
use spinwire_core::spectroscopy::{measure_topological_number, NuEmulation, NuProtocol};
use spinwire_core::Error as CoreError;

use crate::config::{Mode, Resolved};
use crate::errors::RunError;

/// What a runner hands back to `main`.
pub struct RunOutput {
    /// (file name, full contents) in emission order.
    pub files: Vec<(String, String)>,
    /// Lines for stdout.
    pub summary: Vec<String>,
}

fn num(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x}")
    }
}

fn header(res: &Resolved, command: &str, columns: &str) -> String {
    format!(
        "# manifest {}\n# spinwire {command}\n# columns: {columns}\n",
        res.manifest_hash
    )
}

/// Uniform grid over [0, max] with `points` nodes (points >= 2 validated).
fn half_grid(max: f64, points: usize) -> Vec<f64> {
    (0..points).map(|i| max * i as f64 / (points - 1) as f64).collect()
}

fn reason_label(reason: UnresolvedReason) -> &'static str {
    match reason {
        UnresolvedReason::Clustered => "clustered",
        UnresolvedReason::WidthGate => "width-gate",
        UnresolvedReason::ResidualGate => "residual-gate",
        UnresolvedReason::FitFailed => "fit-failed",
    }
}

/// Peak-table rows for one analyzed point, fitted lines first (ascending
/// center), then unresolved features. `prefix` carries the per-point columns.
fn peak_rows(prefix: &str, analysis: &PeakAnalysis, out: &mut String) {
    for pk in &analysis.peaks {
        out.push_str(prefix);
        out.push_str(&format!(
            "\tline\t{}\t{}\t{}\t{}\t{}\t{}\n",
            num(pk.center),
            num(pk.sigma),
            num(pk.height),
            num(pk.baseline),
            num(pk.center_stderr),
            num(pk.rms_residual),
        ));
    }
    for uf in &analysis.unresolved {
        out.push_str(prefix);
        out.push_str(&format!(
            "\t{}\t{}\tnan\t{}\tnan\tnan\tnan\n",
            reason_label(uf.reason),
            num(uf.energy),
            num(uf.magnitude),
        ));
    }
}

/// Combined |5>+|7> line spectrum of one momentum point: both nuclear-mode
/// series carry the full four-line content between them, so their summed
/// magnitude is what the dispersion protocol fits.
fn probe_pair_spectrum(
    res: &Resolved,
    series_of: &dyn Fn(PsiLabel) -> Result<TimeSeries, CoreError>,
) -> Result<EnergySpectrum, CoreError> {
    let zp = res.config.protocol.zero_pad;
    let s5 = spectrum(&series_of(PsiLabel::L5)?, res.window, zp)?;
    let s7 = spectrum(&series_of(PsiLabel::L7)?, res.window, zp)?;
    combined_magnitude(&[&s5, &s7])
}

pub fn run_dispersion(res: &Resolved) -> Result<RunOutput, RunError> {
    let params = res.params;
    let grid = half_grid(res.config.grid.p_max, res.config.grid.points);
    let tau = match res.config.protocol.tau {
        Some(t) => t,
        None => default_tau_for_grid(params, &grid)?,
    };
    let m_max = res.config.protocol.m_max;
    let pipeline = PeakPipeline::default();

    // Exact bands over the mirrored axis; only p >= 0 is computed, negative
    // rows restate the same energies with the mirrored flag up.
    let mut bands = header(res, "dispersion", "p mirrored e1 e2 e3 e4");
    let band_rows: Vec<[f64; 4]> = grid.iter().map(|&p| band_energies(params, p)).collect();
    let band_line = |p: f64, mirrored: bool, e: &[f64; 4], out: &mut String| {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\n",
            num(p),
            u8::from(mirrored),
            num(e[0]),
            num(e[1]),
            num(e[2]),
            num(e[3]),
        ));
    };
    for i in (1..grid.len()).rev() {
        band_line(-grid[i], true, &band_rows[i], &mut bands);
    }
    for (i, e) in band_rows.iter().enumerate() {
        band_line(grid[i], false, e, &mut bands);
    }

    // Protocol peaks per point, ideal and noisy tier, in parallel.
    let analyses: Vec<(PeakAnalysis, PeakAnalysis)> = grid
        .par_iter()
        .enumerate()
        .map(|(idx, &p)| -> Result<(PeakAnalysis, PeakAnalysis), RunError> {
            let ideal = probe_pair_spectrum(res, &|psi| {
                sample_series_ideal(params, p, psi, m_max, tau)
            })?;
            let noise = res.noise_for_point(idx);
            let opts = res.emulation_options();
            let noisy = probe_pair_spectrum(res, &|psi| {
                sample_series_emulated_with(
                    params,
                    p,
                    psi,
                    m_max,
                    tau,
                    &noise,
                    &res.readout,
                    &res.theta_grid,
                    &opts,
                )
            })?;
            Ok((
                analyze_peaks(&ideal, &pipeline),
                analyze_peaks(&noisy, &pipeline),
            ))
        })
        .collect::<Result<_, _>>()?;

    let columns = "p mirrored kind center sigma height baseline stderr rms";
    let mut peaks_ideal = header(res, "dispersion", columns);
    let mut peaks_noisy = header(res, "dispersion", columns);
    let emit = |i: usize, p: f64, mirrored: bool, pi: &mut String, pn: &mut String| {
        let prefix = format!("{}\t{}", num(p), u8::from(mirrored));
        peak_rows(&prefix, &analyses[i].0, pi);
        peak_rows(&prefix, &analyses[i].1, pn);
    };
    for i in (1..grid.len()).rev() {
        emit(i, -grid[i], true, &mut peaks_ideal, &mut peaks_noisy);
    }
    for i in 0..grid.len() {
        emit(i, grid[i], false, &mut peaks_ideal, &mut peaks_noisy);
    }

    let n_lines: usize = analyses.iter().map(|(a, _)| a.peaks.len()).sum();
    let n_noisy: usize = analyses.iter().map(|(_, b)| b.peaks.len()).sum();
    let summary = vec![
        format!("dispersion: {} points, tau {}", grid.len(), num(tau)),
        format!("fitted lines: {n_lines} ideal, {n_noisy} noisy"),
    ];
    Ok(RunOutput {
        files: vec![
            ("bands.tsv".into(), bands),
            ("peaks_ideal.tsv".into(), peaks_ideal),
            ("peaks_noisy.tsv".into(), peaks_noisy),
        ],
        summary,
    })
}

pub fn run_nu_sweep(res: &Resolved) -> Result<RunOutput, RunError> {
    let sweep = res
        .config
        .sweep
        .as_ref()
        .ok_or_else(|| RunError::config("nu-sweep needs a [sweep] section (start, stop, step)"))?;
    let n = ((sweep.stop - sweep.start) / sweep.step + 1e-9).floor() as usize + 1;
    let mus: Vec<f64> = (0..n).map(|i| sweep.start + sweep.step * i as f64).collect();

    enum Point {
        Ok(spinwire_core::spectroscopy::NuMeasurement),
        Gap(&'static str),
    }
    let points: Vec<Point> = mus
        .par_iter()
        .enumerate()
        .map(|(idx, &mu)| -> Result<Point, RunError> {
            let params = QwParams::new(mu, res.config.model.delta, res.config.model.bx)
                .map_err(RunError::from_core)?;
            let protocol = NuProtocol {
                m_max: res.config.protocol.m_max,
                zero_pad: res.config.protocol.zero_pad,
                tau: res.config.protocol.tau,
                emulation: match res.mode {
                    Mode::Ideal => None,
                    _ => Some(NuEmulation {
                        noise: res.noise_for_point(idx),
                        readout: res.readout.clone(),
                        theta_grid: res.theta_grid.clone(),
                        options: res.emulation_options(),
                    }),
                },
            };
            match measure_topological_number(params, &protocol) {
                Ok(m) => Ok(Point::Ok(m)),
                // Per-point fit failures become gaps, not aborts.
                Err(CoreError::NoPeak { .. }) => Ok(Point::Gap("no-peak")),
                Err(CoreError::DegenerateFit { .. }) => Ok(Point::Gap("degenerate-fit")),
                Err(e) => Err(RunError::from_core(e)),
            }
        })
        .collect::<Result<_, _>>()?;

    let mut table = header(res, "nu-sweep", "mu nu_bar e_c sigma low_confidence status");
    for (i, point) in points.iter().enumerate() {
        match point {
            Point::Ok(m) => table.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\tok\n",
                num(mus[i]),
                num(m.nu_bar),
                num(m.e_c),
                num(m.sigma),
                m.n_low_confidence,
            )),
            Point::Gap(status) => table.push_str(&format!(
                "{}\tnan\tnan\tnan\t0\t{status}\n",
                num(mus[i]),
            )),
        }
    }

    let mut summary = vec![format!("nu-sweep: {} points", mus.len())];
    let mut changes = 0usize;
    let mut last: Option<(f64, f64)> = None;
    for (i, point) in points.iter().enumerate() {
        if let Point::Ok(m) = point {
            if let Some((mu_prev, nu_prev)) = last {
                if nu_prev * m.nu_bar < 0.0 {
                    changes += 1;
                    summary.push(format!(
                        "sign change in [{}, {}]",
                        num(mu_prev),
                        num(mus[i])
                    ));
                }
            }
            last = Some((mus[i], m.nu_bar));
        }
    }
    if changes == 0 {
        summary.push("no sign change in the sweep range".into());
    }
    Ok(RunOutput {
        files: vec![("nu_sweep.tsv".into(), table)],
        summary,
    })
}

pub fn run_bloch(res: &Resolved) -> Result<RunOutput, RunError> {
    if classify_phase(res.params) == Phase::Critical {
        return Err(RunError::config(
            "bloch: parameters sit on the phase boundary, trajectory undefined",
        ));
    }
    let grid = half_grid(res.config.bloch.p_max, res.config.bloch.points);
    let traj = bloch_trajectory(res.params, &grid).map_err(RunError::from_core)?;
    let class = match classify_trajectory(&traj) {
        TrajectoryClass::Closed => "closed",
        TrajectoryClass::OpenPoleToPole => "open-pole-to-pole",
        TrajectoryClass::Other => "other",
    };
    let mut table = header(res, "bloch", "p rx ry rz raw_len");
    table.push_str(&format!("# class {class}\n"));
    for i in 0..traj.momenta.len() {
        let v = traj.vectors[i];
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            num(traj.momenta[i]),
            num(v[0]),
            num(v[1]),
            num(v[2]),
            num(traj.raw_lengths[i]),
        ));
    }
    Ok(RunOutput {
        files: vec![("bloch.tsv".into(), table)],
        summary: vec![format!("bloch: class {class}")],
    })
}

/// Single-point spectroscopy. `force_emulated` is the `emulate` subcommand:
/// an ideal-mode config still runs the rotating-frame tier there.
pub fn run_spectrum(res: &Resolved, force_emulated: bool) -> Result<RunOutput, RunError> {
    let params = res.params;
    let p = res.config.protocol.p;
    let psi = res.psi;
    let m_max = res.config.protocol.m_max;
    let tau = res.config.protocol.tau.unwrap_or_else(|| default_tau_for(params, p));
    let emulated = force_emulated || res.mode != Mode::Ideal;

    let command = if force_emulated { "emulate" } else { "spectrum" };
    let mut files = Vec::new();
    let series = if emulated {
        let run = sample_series_emulated_full(
            params,
            p,
            psi,
            m_max,
            tau,
            &res.noise_for_point(0),
            &res.readout,
            &res.theta_grid,
            &res.emulation_options(),
        )
        .map_err(RunError::from_core)?;
        let mut curves = header(res, command, "m theta pl");
        for (m, curve) in run.pl_curves.iter().enumerate() {
            for (ti, pl) in curve.iter().enumerate() {
                curves.push_str(&format!(
                    "{m}\t{}\t{}\n",
                    num(res.theta_grid[ti]),
                    num(*pl),
                ));
            }
        }
        files.push(("pl_curves.tsv".into(), curves));
        run.series
    } else {
        sample_series_ideal(params, p, psi, m_max, tau).map_err(RunError::from_core)?
    };

    let mut series_table = header(res, command, "m t re im low_confidence");
    for (m, a) in series.values.iter().enumerate() {
        let low = u8::from(series.low_confidence.contains(&m));
        series_table.push_str(&format!(
            "{m}\t{}\t{}\t{}\t{low}\n",
            num(m as f64 * tau),
            num(a.re),
            num(a.im),
        ));
    }
    files.push(("series.tsv".into(), series_table));

    let spec = spectrum(&series, res.window, res.config.protocol.zero_pad)
        .map_err(RunError::from_core)?;
    let mut spec_table = header(res, command, "e re im mag");
    for (k, e) in spec.energies.iter().enumerate() {
        let v = spec.values[k];
        spec_table.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            num(*e),
            num(v.re),
            num(v.im),
            num(v.norm()),
        ));
    }
    files.push(("spectrum.tsv".into(), spec_table));

    let analysis = analyze_peaks(&spec, &PeakPipeline::default());
    let mut peaks = header(res, command, "kind center sigma height baseline stderr rms");
    // Single-point table has no per-point prefix; reuse the row writer with
    // an empty one and strip the leading tab.
    let mut raw = String::new();
    peak_rows("", &analysis, &mut raw);
    for line in raw.lines() {
        peaks.push_str(line.trim_start_matches('\t'));
        peaks.push('\n');
    }
    files.push(("peaks.tsv".into(), peaks));

    let tier = if !emulated {
        "ideal"
    } else if res.emulation_options().lab.is_some() {
        "lab"
    } else {
        "rot"
    };
    let mut summary = vec![
        format!(
            "{command}: psi {} p {} tier {tier}, {} samples at tau {}",
            res.config.protocol.psi,
            num(p),
            series.values.len(),
            num(tau),
        ),
        format!(
            "lines fitted: {}, unresolved features: {}",
            analysis.peaks.len(),
            analysis.unresolved.len()
        ),
    ];
    if let Some(best) = analysis
        .peaks
        .iter()
        .max_by(|a, b| a.height.partial_cmp(&b.height).unwrap())
    {
        summary.push(format!(
            "dominant line at {} (sigma {})",
            num(best.center),
            num(best.sigma)
        ));
    }
    Ok(RunOutput {
        files,
        summary,
    })
}
