//! Command implementations. Each command writes into one output directory:
//! `config.toml` (the resolved configuration), its data files, and
//! `metadata.json` (written last, also on failure).

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use synccool_core::ensemble::{EnsembleOptions, EnsembleOutput, PhaseSnapshot};
use synccool_core::observables::{find_peaks, histogram1d, histogram2d, laplace_spectrum, Normalization, SpectrumOptions, TimeSeries};
use synccool_core::semiclassical::NoiseDiagnostics;
use synccool_core::steady_state::{self, SteadyStateSolution};
use synccool_core::{meanfield, rng, semiclassical, Error as CoreError, PhysicalParams};

use crate::config::{Engine, InvalidConfig, RunConfig, SCHEMA_VERSION};
use crate::output;

/// Where and how a command runs. `threads` affects speed only.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub threads: Option<usize>,
}

/// Identity of one trajectory's random stream.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StreamId {
    pub master_seed: u64,
    pub index: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    /// `invalid-input`, `numerical-blowup` or `error`.
    pub kind: &'static str,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
}

impl ErrorReport {
    pub fn from_error(err: &anyhow::Error) -> Self {
        let message = format!("{err:#}");
        if err.downcast_ref::<InvalidConfig>().is_some() {
            return ErrorReport {
                kind: "invalid-input",
                message,
                trajectory: None,
                step: None,
                t: None,
            };
        }
        let core = err.chain().find_map(|e| e.downcast_ref::<CoreError>());
        match core {
            Some(CoreError::NumericalBlowup { step, t, trajectory, .. }) => ErrorReport {
                kind: "numerical-blowup",
                message,
                trajectory: *trajectory,
                step: Some(*step),
                t: Some(*t),
            },
            Some(CoreError::InvalidParameter(_)) | Some(CoreError::DimensionMismatch { .. }) => ErrorReport {
                kind: "invalid-input",
                message,
                trajectory: None,
                step: None,
                t: None,
            },
            _ => ErrorReport {
                kind: "error",
                message,
                trajectory: None,
                step: None,
                t: None,
            },
        }
    }

    /// Process exit code: 2 for invalid input, 3 for numerical blowup, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.kind {
            "invalid-input" => 2,
            "numerical-blowup" => 3,
            _ => 1,
        }
    }
}

/// Everything needed to reproduce a run bitwise: the configuration echo plus
/// the generator identity and per-trajectory stream ids.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata {
    pub tool: &'static str,
    pub version: &'static str,
    pub schema_version: u32,
    pub command: String,
    pub engine: Option<&'static str>,
    pub config: Option<RunConfig>,
    pub rng_algorithm: &'static str,
    pub master_seed: Option<u64>,
    pub trajectory_streams: Vec<StreamId>,
    pub threads: Option<usize>,
    pub wall_time_s: f64,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorReport>,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseDiagnostics>,
    pub files: Vec<String>,
    pub summary: Value,
}

/// What an engine produced.
#[derive(Debug, Default)]
pub struct Report {
    pub files: Vec<String>,
    pub warnings: Vec<String>,
    pub noise: Option<NoiseDiagnostics>,
    pub summary: Value,
}

impl Report {
    fn file(&mut self, dir: &Path, name: &str) -> PathBuf {
        self.files.push(name.to_owned());
        dir.join(name)
    }
}

fn finish(
    out: &Path,
    command: &str,
    engine: Option<Engine>,
    cfg: Option<&RunConfig>,
    threads: Option<usize>,
    started: Instant,
    result: Result<Report>,
) -> Result<RunMetadata> {
    let (status, error) = match &result {
        Ok(_) => ("completed", None),
        Err(e) => ("failed", Some(ErrorReport::from_error(e))),
    };
    let streams = match (cfg, engine) {
        (Some(c), Some(Engine::Semiclassical | Engine::Meanfield)) => (0..c.n_traj as u64)
            .map(|index| StreamId {
                master_seed: c.master_seed,
                index,
            })
            .collect(),
        _ => Vec::new(),
    };
    let mut meta = RunMetadata {
        tool: "synccool",
        version: env!("CARGO_PKG_VERSION"),
        schema_version: SCHEMA_VERSION,
        command: command.to_owned(),
        engine: engine.map(Engine::name),
        config: cfg.cloned(),
        rng_algorithm: rng::ALGORITHM,
        master_seed: cfg.map(|c| c.master_seed),
        trajectory_streams: streams,
        threads,
        wall_time_s: started.elapsed().as_secs_f64(),
        status,
        error,
        warnings: Vec::new(),
        noise: None,
        files: Vec::new(),
        summary: Value::Null,
    };
    match result {
        Ok(r) => {
            meta.warnings = r.warnings;
            meta.noise = r.noise;
            meta.files = r.files;
            meta.summary = r.summary;
            meta.files.push("metadata.json".into());
            output::write_json(&out.join("metadata.json"), &meta)?;
            Ok(meta)
        }
        Err(e) => {
            if let Some(err) = &meta.error {
                let _ = output::write_json(&out.join("error.json"), err);
            }
            let _ = output::write_json(&out.join("metadata.json"), &meta);
            Err(e)
        }
    }
}

/// Run one engine of `cfg` into `opts.out`.
pub fn execute(cfg: &RunConfig, engine: Engine, opts: &RunOptions, command: &str) -> Result<RunMetadata> {
    let started = Instant::now();
    std::fs::create_dir_all(&opts.out).with_context(|| format!("creating {}", opts.out.display()))?;
    let result = (|| {
        cfg.validate()?;
        std::fs::write(opts.out.join("config.toml"), cfg.to_toml()?)?;
        let mut report = match engine {
            Engine::Semiclassical => simulate_sc(cfg, opts),
            Engine::Meanfield => simulate_mf(cfg, opts),
            Engine::SteadyState => steady_state_cmd(cfg, &opts.out),
            Engine::Sweep => sweep_cmd(cfg, &opts.out),
        }?;
        report.files.insert(0, "config.toml".into());
        Ok(report)
    })();
    finish(&opts.out, command, Some(engine), Some(cfg), opts.threads, started, result)
}

/// Run every engine listed in the configuration. With more than one engine
/// each writes into a subdirectory named after it.
pub fn run_all(cfg: &RunConfig, opts: &RunOptions) -> Result<Vec<RunMetadata>> {
    let nested = cfg.engines.len() > 1;
    cfg.engines
        .iter()
        .map(|&e| {
            let out = if nested { opts.out.join(e.name()) } else { opts.out.clone() };
            let o = RunOptions {
                out,
                threads: opts.threads,
            };
            execute(cfg, e, &o, "run")
        })
        .collect()
}

fn ensemble_options(opts: &RunOptions) -> EnsembleOptions {
    EnsembleOptions { threads: opts.threads }
}

fn write_series(cfg: &RunConfig, series: &TimeSeries, engine: &str, dir: &Path, report: &mut Report) -> Result<()> {
    let channels = output::select_channels(series, &cfg.output.channels, cfg.n_traj == 1)?;
    output::write_timeseries(&report.file(dir, "timeseries.csv"), series, engine, &channels)
}

fn simulate_sc(cfg: &RunConfig, opts: &RunOptions) -> Result<Report> {
    let params = cfg.physical()?;
    let out = semiclassical::simulate_ensemble(
        &params,
        &cfg.integration,
        &cfg.initial,
        cfg.n_traj,
        cfg.master_seed,
        &ensemble_options(opts),
    )?;
    let mut report = Report {
        warnings: out.warnings.clone(),
        noise: Some(out.noise),
        ..Default::default()
    };
    write_series(cfg, &out.series, "semiclassical", &opts.out, &mut report)?;
    let snaps = write_snapshots(cfg, &out, &cfg.integration.snapshot_times, &opts.out, &mut report)?;
    let spectra = write_spectra(cfg, &out.series, &opts.out, &mut report)?;
    report.summary = json!({
        "final": final_values(&out.series),
        "snapshots": snaps,
        "spectra": spectra,
    });
    Ok(report)
}

fn simulate_mf(cfg: &RunConfig, opts: &RunOptions) -> Result<Report> {
    let params = cfg.physical()?;
    let out = meanfield::simulate_ensemble(
        &params,
        &cfg.meanfield,
        &cfg.initial,
        cfg.n_traj,
        cfg.master_seed,
        &ensemble_options(opts),
    )?;
    let mut report = Report::default();
    write_series(cfg, &out.series, "meanfield", &opts.out, &mut report)?;
    let snaps = write_snapshots(cfg, &out, &cfg.meanfield.snapshot_times, &opts.out, &mut report)?;
    let spectra = write_spectra(cfg, &out.series, &opts.out, &mut report)?;
    let separatrix = if out.snapshots.is_empty() {
        Value::Null
    } else {
        write_separatrix(&params, &out.series, &opts.out, &mut report)?
    };
    report.summary = json!({
        "final": final_values(&out.series),
        "snapshots": snaps,
        "spectra": spectra,
        "separatrix": separatrix,
    });
    Ok(report)
}

fn final_values(series: &TimeSeries) -> Value {
    let mut m = serde_json::Map::new();
    m.insert("t".into(), json!(series.times.last()));
    for (name, v) in &series.channels {
        if let Some(x) = v.last() {
            m.insert(name.clone(), if x.is_finite() { json!(x) } else { Value::Null });
        }
    }
    Value::Object(m)
}

/// File-name label for a snapshot time.
fn time_label(t: f64) -> String {
    format!("t{t}").replace('.', "p")
}

/// Late-window average of a channel (final `fraction` of the samples).
pub fn late_mean(values: &[f64], fraction: f64) -> f64 {
    let start = ((1.0 - fraction) * values.len() as f64).floor() as usize;
    let tail = &values[start.min(values.len().saturating_sub(1))..];
    tail.iter().sum::<f64>() / tail.len() as f64
}

fn write_snapshots(cfg: &RunConfig, out: &EnsembleOutput, times: &[f64], dir: &Path, report: &mut Report) -> Result<Value> {
    if out.snapshots.is_empty() {
        return Ok(Value::Null);
    }
    if cfg.output.write_snapshots {
        let cols = [("trajectory", "1"), ("t", "1/omega_R"), ("atom", "1"), ("x", "1/k"), ("p", "hbar k")];
        let rows = out.snapshots.iter().flat_map(|(i, s)| {
            s.x.iter()
                .zip(&s.p)
                .enumerate()
                .map(move |(j, (x, p))| vec![*i as f64, s.t, j as f64, *x, *p])
        });
        output::write_table(&report.file(dir, "snapshots.csv"), &cols, "raw phase-space snapshots", rows)?;
    }
    let p_range = match cfg.output.p_range {
        Some([lo, hi]) => (lo, hi),
        None => {
            let m = out
                .snapshots
                .iter()
                .flat_map(|(_, s)| s.p.iter())
                .fold(0.0f64, |m, p| m.max(p.abs()));
            let m = if m > 0.0 { m } else { 1.0 };
            (-m, m)
        }
    };
    let [bx, bp] = cfg.output.phase_space_bins;
    let tol = 1e-9 * times.iter().fold(1.0f64, |m, t| m.max(t.abs()));
    let mut groups: Vec<(String, Vec<&PhaseSnapshot>)> = Vec::new();
    for &t in times {
        let snaps: Vec<&PhaseSnapshot> = out.snapshots.iter().map(|(_, s)| s).filter(|s| (s.t - t).abs() <= tol.max(1e-6)).collect();
        if !snaps.is_empty() {
            groups.push((time_label(t), snaps));
        }
    }
    if groups.len() > 1 {
        groups.push(("pooled".into(), out.snapshots.iter().map(|(_, s)| s).collect()));
    }
    let mut summary = serde_json::Map::new();
    for (label, snaps) in groups {
        let x: Vec<f64> = snaps.iter().flat_map(|s| s.x.iter().copied()).collect();
        let p: Vec<f64> = snaps.iter().flat_map(|s| s.p.iter().copied()).collect();
        let h2 = histogram2d(&x, &p, (bx, bp), Some(p_range), Normalization::Density)?;
        output::write_histogram2d(&report.file(dir, &format!("phase_space_{label}.txt")), &h2, &format!("phase space at {label}"))?;
        let h1 = histogram1d(&p, cfg.output.momentum_bins, Some(p_range), Normalization::Density)?;
        output::write_histogram1d(&report.file(dir, &format!("momentum_{label}.csv")), &h1, &format!("momentum distribution at {label}"))?;
        let moments = synccool_core::observables::moments(&p).ok();
        summary.insert(label, json!({ "samples": p.len(), "moments": moments }));
    }
    Ok(Value::Object(summary))
}

fn write_spectra(cfg: &RunConfig, series: &TimeSeries, dir: &Path, report: &mut Report) -> Result<Value> {
    let mut summary = serde_json::Map::new();
    for ch in &cfg.spectrum.channels {
        let peaks = spectrum_files(series, ch, cfg.spectrum.t_start, &cfg.spectrum.options, dir, report)?;
        summary.insert(ch.clone(), json!(peaks));
    }
    Ok(Value::Object(summary))
}

fn spectrum_files(
    series: &TimeSeries,
    channel: &str,
    t_start: f64,
    opts: &SpectrumOptions,
    dir: &Path,
    report: &mut Report,
) -> Result<Vec<synccool_core::observables::Peak>> {
    let values = series.channel(channel).with_context(|| {
        let known: Vec<&str> = series.names().collect();
        format!("unknown channel `{channel}` (available: {})", known.join(", "))
    })?;
    let i0 = series.times.iter().position(|&t| t >= t_start).unwrap_or(series.len());
    let spectrum = laplace_spectrum(&series.times[i0..], &values[i0..], opts)?;
    let peaks = find_peaks(&spectrum.omega, &spectrum.magnitude());
    output::write_spectrum(&report.file(dir, &format!("spectrum_{channel}.csv")), &spectrum, channel)?;
    output::write_peaks(&report.file(dir, &format!("peaks_{channel}.csv")), &peaks, channel)?;
    Ok(peaks)
}

/// The `E₀` iso-energy contour of `p² + V_eff(x)` at the late-time `|X|²`.
fn write_separatrix(params: &PhysicalParams, series: &TimeSeries, dir: &Path, report: &mut Report) -> Result<Value> {
    let Some(x_abs2) = series.channel("x_abs2") else {
        return Ok(Value::Null);
    };
    let x2 = late_mean(x_abs2, 0.2);
    let e0 = match steady_state::separatrix_energy(x2, params) {
        Ok(e) => e,
        Err(CoreError::NoSeparatrix) => return Ok(json!({ "x2_late": x2, "energy": null })),
        Err(e) => return Err(e.into()),
    };
    let n = 721;
    let rows: Vec<Vec<f64>> = (0..n)
        .filter_map(|k| {
            let x = std::f64::consts::TAU * k as f64 / (n - 1) as f64;
            let v = steady_state::v_eff(x, x2, params.w_pump, params.delta, params.kappa, params.n_gamma_c);
            (e0 >= v).then(|| {
                let p = (e0 - v).sqrt();
                vec![x, v, p, -p]
            })
        })
        .collect();
    let cols = [("x", "1/k"), ("v_eff", "hbar omega_R"), ("p_upper", "hbar k"), ("p_lower", "hbar k")];
    let extra = format!("separatrix p^2 + V_eff(x) = E0 = {e0} at late-time |X|^2 = {x2}");
    output::write_table(&report.file(dir, "separatrix.csv"), &cols, &extra, rows)?;
    Ok(json!({ "x2_late": x2, "energy": e0 }))
}

fn steady_state_cmd(cfg: &RunConfig, dir: &Path) -> Result<Report> {
    let params = cfg.physical()?;
    let sol = SteadyStateSolution::solve(&params, cfg.steady_state.regime.clone(), cfg.steady_state.grid_points)?;
    let mut report = Report::default();
    let cols = [
        ("x", "1/k"),
        ("s0", "1"),
        ("z0", "1"),
        ("v_eff", "hbar omega_R"),
        ("gamma", "omega_R"),
        ("two_d", "(hbar k)^2 omega_R"),
    ];
    let rows = (0..sol.x.len()).map(|k| vec![sol.x[k], sol.s0[k], sol.z0[k], sol.v_eff[k], sol.gamma[k], sol.diffusion[k]]);
    output::write_table(
        &report.file(dir, "profile.csv"),
        &cols,
        &format!("stationary profiles at |X|^2 = {}", sol.x2),
        rows,
    )?;
    let separatrix = steady_state::separatrix_energy(sol.x2, &params).ok();
    let roots = steady_state::x0_roots(sol.x2, params.w_pump, params.delta, params.kappa, params.n_gamma_c)?;
    let p2_inf = steady_state::p2_infinity(params.w_pump, params.delta, params.kappa, params.n_gamma_c)?;
    report.summary = json!({
        "x2": sol.x2,
        "omega0": sol.omega0,
        "regime": sol.regime,
        "separatrix_energy": separatrix,
        "friction_sign_change_x": roots,
        "friction_threshold_xi2": steady_state::friction_threshold(params.alpha()),
        "trap_depth_prefactor": -params.delta * params.w_pump / (2.0 * params.kappa),
        "p2_infinity": if p2_inf.is_finite() { json!(p2_inf) } else { Value::Null },
    });
    output::write_json(&report.file(dir, "steady_state.json"), &report.summary)?;
    Ok(report)
}

fn sweep_cmd(cfg: &RunConfig, dir: &Path) -> Result<Report> {
    let params = cfg.physical()?;
    let grid = cfg.sweep.grid(&params);
    let table = steady_state::sweep_optimal(&grid)?;
    let pbar2 = params.n_gamma_c / 2.0;
    let mut report = Report::default();
    let cols = [
        ("delta", "omega_R"),
        ("delta_ratio", "kappa/2"),
        ("w", "omega_R"),
        ("w_fraction", "N Gamma_C"),
        ("p2", "(hbar k)^2"),
        ("p2_reduced", "pbar^2"),
    ];
    let mut rows = Vec::new();
    for (i, d) in table.deltas.iter().enumerate() {
        for (k, w) in table.w_values.iter().enumerate() {
            let p = table.p2[i][k];
            rows.push(vec![*d, 2.0 * d / params.kappa, *w, w / params.n_gamma_c, p, p / pbar2]);
        }
    }
    output::write_table(&report.file(dir, "sweep_grid.csv"), &cols, "fluctuation-dissipation <p^2>_inf; pbar^2 = N Gamma_C/2", rows)?;
    let cols = [
        ("delta", "omega_R"),
        ("delta_ratio", "kappa/2"),
        ("w_min", "omega_R"),
        ("w_min_fraction", "N Gamma_C"),
        ("p2_min", "(hbar k)^2"),
        ("p2_min_reduced", "pbar^2"),
    ];
    let rows = table.deltas.iter().enumerate().map(|(i, d)| {
        vec![
            *d,
            2.0 * d / params.kappa,
            table.w_min[i],
            table.w_min[i] / params.n_gamma_c,
            table.p2_min[i],
            table.p2_min[i] / pbar2,
        ]
    });
    output::write_table(&report.file(dir, "sweep_optimum.csv"), &cols, "optimal pump rate per detuning", rows)?;
    let best = (0..table.deltas.len())
        .filter(|&i| table.p2_min[i].is_finite())
        .min_by(|&a, &b| table.p2_min[a].total_cmp(&table.p2_min[b]));
    report.summary = json!({
        "pbar2": pbar2,
        "best": best.map(|i| json!({
            "delta_ratio": 2.0 * table.deltas[i] / params.kappa,
            "w_min_fraction": table.w_min[i] / params.n_gamma_c,
            "p2_min_reduced": table.p2_min[i] / pbar2,
        })),
    });
    Ok(report)
}

/// Arguments of the standalone `spectrum` command.
#[derive(Debug, Clone)]
pub struct SpectrumRequest {
    pub input: PathBuf,
    pub channels: Vec<String>,
    pub t_start: f64,
    pub options: SpectrumOptions,
}

/// Laplace spectra and peak tables of channels of an existing time series.
pub fn spectrum_command(req: &SpectrumRequest, out: &Path) -> Result<RunMetadata> {
    let started = Instant::now();
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let result = (|| {
        let series = output::read_timeseries(&req.input)?;
        let mut report = Report::default();
        let mut peaks = serde_json::Map::new();
        for ch in &req.channels {
            let p = spectrum_files(&series, ch, req.t_start, &req.options, out, &mut report)?;
            peaks.insert(ch.clone(), json!(p));
        }
        report.summary = json!({
            "input": req.input.display().to_string(),
            "t_start": req.t_start,
            "options": req.options,
            "peaks": peaks,
        });
        Ok(report)
    })();
    finish(out, "spectrum", None, None, None, started, result)
}
