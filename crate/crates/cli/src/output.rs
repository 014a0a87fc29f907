//! File formats. Floats are written with Rust's shortest round-trip formatting,
//! so identical results give byte-identical files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::Serialize;
use synccool_core::observables::{Histogram, Peak, Spectrum, TimeSeries};

/// Version tag written in every CSV header comment.
pub const CSV_SCHEMA: &str = "synccool-csv/1";

/// Unit of a time-series channel (`_stderr` columns share their base unit).
pub fn channel_unit(name: &str) -> &'static str {
    let base = name.strip_suffix("_stderr").unwrap_or(name);
    match base {
        "t" => "1/omega_R",
        "p2" => "(hbar k)^2",
        "p4" => "(hbar k)^4",
        "arg_x" => "rad",
        _ => "1",
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn header_comment(columns: &[(&str, &str)], extra: &str) -> String {
    let cols: Vec<String> = columns.iter().map(|(n, u)| format!("{n} [{u}]")).collect();
    if extra.is_empty() {
        format!("# {CSV_SCHEMA}; columns: {}\n", cols.join(", "))
    } else {
        format!("# {CSV_SCHEMA}; {extra}; columns: {}\n", cols.join(", "))
    }
}

/// Write a table: one `#` comment line documenting columns and units, a header
/// row, then the rows.
pub fn write_table(path: &Path, columns: &[(&str, &str)], extra: &str, rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut out = create(path)?;
    out.write_all(header_comment(columns, extra).as_bytes())?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(columns.iter().map(|(n, _)| *n))?;
    for row in rows {
        ensure!(row.len() == columns.len(), "row width {} != {} columns", row.len(), columns.len());
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Select channels of `series`; an empty `names` keeps all.
pub fn select_channels<'a>(series: &'a TimeSeries, names: &[String], drop_stderr: bool) -> Result<Vec<(&'a str, &'a [f64])>> {
    let mut picked = Vec::new();
    if names.is_empty() {
        for (n, v) in &series.channels {
            if !(drop_stderr && n.ends_with("_stderr")) {
                picked.push((n.as_str(), v.as_slice()));
            }
        }
    } else {
        for want in names {
            let Some((n, v)) = series.channels.iter().find(|(n, _)| n == want) else {
                let known: Vec<&str> = series.names().collect();
                bail!("unknown channel `{want}` (available: {})", known.join(", "));
            };
            picked.push((n.as_str(), v.as_slice()));
            let se = format!("{want}_stderr");
            if !drop_stderr {
                if let Some((n, v)) = series.channels.iter().find(|(n, _)| *n == se) {
                    picked.push((n.as_str(), v.as_slice()));
                }
            }
        }
    }
    Ok(picked)
}

pub fn write_timeseries(path: &Path, series: &TimeSeries, engine: &str, channels: &[(&str, &[f64])]) -> Result<()> {
    let mut cols = vec![("t", channel_unit("t"))];
    cols.extend(channels.iter().map(|(n, _)| (*n, channel_unit(n))));
    let rows = (0..series.len()).map(|k| {
        let mut r = Vec::with_capacity(cols.len());
        r.push(series.times[k]);
        r.extend(channels.iter().map(|(_, v)| v[k]));
        r
    });
    write_table(path, &cols, &format!("engine: {engine}"), rows)
}

/// Read a time series written by [`write_timeseries`] (or any CSV whose first
/// column is time); `#` lines are skipped.
pub fn read_timeseries(path: &Path) -> Result<TimeSeries> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    ensure!(headers.len() >= 2, "{}: need a time column and at least one channel", path.display());
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        ensure!(rec.len() == headers.len(), "{}: row {} has {} fields", path.display(), line + 1, rec.len());
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .with_context(|| format!("{}: row {}, column `{}`", path.display(), line + 1, headers[c]))?;
            cols[c].push(v);
        }
    }
    let mut it = cols.into_iter();
    let mut series = TimeSeries::new(it.next().unwrap_or_default());
    for (name, values) in headers[1..].iter().zip(it) {
        series.push_channel(name, values);
    }
    series.validate()?;
    Ok(series)
}

pub fn write_spectrum(path: &Path, spectrum: &Spectrum, channel: &str) -> Result<()> {
    let cols = [("omega", "omega_R"), ("re", "arb"), ("im", "arb"), ("abs", "arb")];
    let extra = format!("Laplace spectrum of `{channel}`; stationary value {}", spectrum.stationary);
    let rows = spectrum.omega.iter().zip(&spectrum.values).map(|(w, v)| vec![*w, v.re, v.im, v.norm()]);
    write_table(path, &cols, &extra, rows)
}

pub fn write_peaks(path: &Path, peaks: &[Peak], channel: &str) -> Result<()> {
    let cols = [("omega", "omega_R"), ("magnitude", "arb")];
    let extra = format!("peaks of |S| for `{channel}` above 3x median");
    write_table(path, &cols, &extra, peaks.iter().map(|p| vec![p.omega, p.magnitude]))
}

pub fn write_histogram1d(path: &Path, h: &Histogram, what: &str) -> Result<()> {
    let cols = [("p_lo", "hbar k"), ("p_hi", "hbar k"), ("value", "1")];
    let extra = format!("{what}; normalization {:?}; samples {}", h.mode, h.total);
    let e = &h.edges[0];
    write_table(path, &cols, &extra, (0..h.values.len()).map(|k| vec![e[k], e[k + 1], h.values[k]]))
}

/// Dense text matrix: comment lines with edges, then one row per `x` bin with
/// one whitespace-separated value per `p` bin.
pub fn write_histogram2d(path: &Path, h: &Histogram, what: &str) -> Result<()> {
    ensure!(h.edges.len() == 2, "expected a 2D histogram");
    let mut out = create(path)?;
    let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    writeln!(
        out,
        "# synccool-matrix/1; {what}; rows: x bins [1/k], columns: p bins [hbar k]; normalization {:?}; samples {}",
        h.mode, h.total
    )?;
    writeln!(out, "# x_edges: {}", join(&h.edges[0]))?;
    writeln!(out, "# p_edges: {}", join(&h.edges[1]))?;
    let ny = h.edges[1].len() - 1;
    for row in h.values.chunks(ny) {
        writeln!(out, "{}", join(row))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}
