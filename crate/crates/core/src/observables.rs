//! Statistical reductions: time series, moments and kurtosis, Laplace spectra,
//! peak extraction and 1D/2D histograms.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::sum::{mean, pairwise_sum, pairwise_sum_by};

/// Named channels sampled on a common time grid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub channels: Vec<(String, Vec<f64>)>,
    pub meta: BTreeMap<String, String>,
}

impl TimeSeries {
    pub fn new(times: Vec<f64>) -> Self {
        TimeSeries {
            times,
            ..Default::default()
        }
    }

    /// Append a channel; its length must match the time grid.
    pub fn push_channel(&mut self, name: &str, values: Vec<f64>) {
        assert_eq!(values.len(), self.times.len(), "channel {name} has the wrong length");
        self.channels.push((name.to_string(), values));
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.channels.iter().map(|(n, _)| n.as_str())
    }

    pub fn set_meta(&mut self, key: &str, value: &str) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Check the length and nonnegative-stderr invariants.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in &self.channels {
            if v.len() != self.times.len() {
                return Err(Error::DimensionMismatch {
                    expected: self.times.len(),
                    found: v.len(),
                });
            }
            if name.ends_with("_stderr") && v.iter().any(|e| *e < 0.0) {
                return Err(Error::Consistency(format!("negative standard error in {name}")));
            }
        }
        Ok(())
    }
}

/// Second and fourth moments with kurtosis and jackknife errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub p2: f64,
    pub p4: f64,
    pub kurtosis: f64,
    pub p2_stderr: f64,
    pub p4_stderr: f64,
    pub kurtosis_stderr: f64,
}

fn stderr_of_mean(values: &[f64], m: f64) -> f64 {
    let n = values.len() as f64;
    let ss = pairwise_sum_by(values, &|v: &f64| (v - m).powi(2));
    (ss / ((n - 1.0) * n)).sqrt()
}

/// Pooled kurtosis `<p⁴>/<p²>²` from per-group means of `p²` and `p⁴`,
/// with a leave-one-group-out jackknife error.
pub fn kurtosis_jackknife(p2: &[f64], p4: &[f64]) -> Result<(f64, f64)> {
    if p2.len() != p4.len() {
        return Err(Error::DimensionMismatch {
            expected: p2.len(),
            found: p4.len(),
        });
    }
    let n = p2.len();
    if n == 0 {
        return Err(Error::invalid("kurtosis needs at least one group"));
    }
    let s2 = pairwise_sum(p2);
    let s4 = pairwise_sum(p4);
    if s2 == 0.0 {
        return Err(Error::UndefinedKurtosis);
    }
    let nf = n as f64;
    let k = (s4 / nf) / (s2 / nf).powi(2);
    if n == 1 {
        return Ok((k, f64::NAN));
    }
    let m = nf - 1.0;
    let loo: Vec<f64> = (0..n).map(|i| ((s4 - p4[i]) / m) / ((s2 - p2[i]) / m).powi(2)).collect();
    let loo_mean = mean(&loo);
    let var = pairwise_sum_by(&loo, &|v: &f64| (v - loo_mean).powi(2)) * (m / nf);
    Ok((k, var.sqrt()))
}

/// Moments of individual momentum samples; each sample is its own jackknife group.
pub fn moments(samples: &[f64]) -> Result<Moments> {
    if samples.len() < 2 {
        return Err(Error::invalid("moments need at least 2 samples"));
    }
    let p2: Vec<f64> = samples.iter().map(|p| p * p).collect();
    let p4: Vec<f64> = p2.iter().map(|q| q * q).collect();
    let (kurtosis, kurtosis_stderr) = kurtosis_jackknife(&p2, &p4)?;
    let m2 = mean(&p2);
    let m4 = mean(&p4);
    Ok(Moments {
        p2: m2,
        p4: m4,
        kurtosis,
        p2_stderr: stderr_of_mean(&p2, m2),
        p4_stderr: stderr_of_mean(&p4, m4),
        kurtosis_stderr,
    })
}

/// Options of [`laplace_spectrum`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumOptions {
    /// Fraction of the final samples averaged for the stationary value.
    pub window_fraction: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub n_omega: usize,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        SpectrumOptions {
            window_fraction: 0.2,
            omega_min: -20.0,
            omega_max: 20.0,
            n_omega: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub omega: Vec<f64>,
    pub values: Vec<Complex64>,
    /// Stationary value subtracted from the series.
    pub stationary: f64,
}

impl Spectrum {
    pub fn magnitude(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm()).collect()
    }
}

/// `S(iω) = Σ_n w_n e^{iωt_n} (f(t_n) − f_st)` with trapezoid weights `w_n`.
pub fn laplace_spectrum(times: &[f64], values: &[f64], opts: &SpectrumOptions) -> Result<Spectrum> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: times.len(),
            found: values.len(),
        });
    }
    let n = times.len();
    if n < 16 {
        return Err(Error::invalid(format!("spectrum needs at least 16 samples, got {n}")));
    }
    if !(opts.window_fraction > 0.0 && opts.window_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "window fraction must lie in (0, 1), got {}",
            opts.window_fraction
        )));
    }
    if opts.n_omega < 2 || !(opts.omega_max > opts.omega_min) {
        return Err(Error::invalid("frequency grid needs at least 2 increasing points"));
    }
    let start = ((1.0 - opts.window_fraction) * n as f64).floor() as usize;
    let stationary = mean(&values[start.min(n - 1)..]);
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 64.0 * f64::EPSILON * scale;
    let dev: Vec<f64> = values
        .iter()
        .map(|v| {
            let d = v - stationary;
            if d.abs() <= floor {
                0.0
            } else {
                d
            }
        })
        .collect();
    let weights: Vec<f64> = (0..n)
        .map(|k| {
            let left = if k > 0 { times[k] - times[k - 1] } else { 0.0 };
            let right = if k + 1 < n { times[k + 1] - times[k] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect();
    let step = (opts.omega_max - opts.omega_min) / (opts.n_omega - 1) as f64;
    let omega: Vec<f64> = (0..opts.n_omega).map(|k| opts.omega_min + k as f64 * step).collect();
    let values = omega
        .iter()
        .map(|&om| {
            let (mut re, mut im) = (0.0, 0.0);
            for k in 0..n {
                if dev[k] == 0.0 {
                    continue;
                }
                let (s, c) = (om * times[k]).sin_cos();
                let a = weights[k] * dev[k];
                re += a * c;
                im += a * s;
            }
            Complex64::new(re, im)
        })
        .collect();
    Ok(Spectrum {
        omega,
        values,
        stationary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub omega: f64,
    pub magnitude: f64,
}

/// Local maxima of `magnitude` above `3 ×` its median, refined by quadratic interpolation.
pub fn find_peaks(omega: &[f64], magnitude: &[f64]) -> Vec<Peak> {
    let n = magnitude.len();
    if n < 3 || omega.len() != n {
        return Vec::new();
    }
    let mut sorted = magnitude.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let threshold = 3.0 * median;
    let mut peaks = Vec::new();
    for k in 1..n - 1 {
        let (l, c, r) = (magnitude[k - 1], magnitude[k], magnitude[k + 1]);
        if c > threshold && c > 0.0 && c > l && c >= r {
            let denom = l - 2.0 * c + r;
            let shift = if denom < 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
            let h = omega[k + 1] - omega[k];
            peaks.push(Peak {
                omega: omega[k] + shift * h,
                magnitude: c - 0.25 * (l - r) * shift,
            });
        }
    }
    peaks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    #[default]
    Counts,
    Density,
}

/// Histogram on one or two axes; `values` is row-major over `(axis 0, axis 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub mode: Normalization,
    /// Samples that fell inside the range.
    pub total: usize,
}

impl Histogram {
    pub fn shape(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.len() - 1).collect()
    }

    /// `Σ value × bin volume`.
    pub fn integral(&self) -> f64 {
        let widths: Vec<Vec<f64>> = self.edges.iter().map(|e| e.windows(2).map(|w| w[1] - w[0]).collect()).collect();
        let mut acc = Vec::with_capacity(self.values.len());
        match widths.len() {
            1 => acc.extend(self.values.iter().zip(&widths[0]).map(|(v, w)| v * w)),
            _ => {
                let ny = widths[1].len();
                for (k, v) in self.values.iter().enumerate() {
                    acc.push(v * widths[0][k / ny] * widths[1][k % ny]);
                }
            }
        }
        pairwise_sum(&acc)
    }

    pub fn center(&self, axis: usize, bin: usize) -> f64 {
        0.5 * (self.edges[axis][bin] + self.edges[axis][bin + 1])
    }
}

fn auto_range(samples: &[f64]) -> (f64, f64) {
    if samples.is_empty() {
        return (0.0, 1.0);
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn uniform_edges(range: (f64, f64), bins: usize) -> Vec<f64> {
    let w = (range.1 - range.0) / bins as f64;
    (0..=bins).map(|k| if k == bins { range.1 } else { range.0 + k as f64 * w }).collect()
}

fn bin_of(v: f64, range: (f64, f64), bins: usize) -> Option<usize> {
    if !(v >= range.0 && v <= range.1) {
        return None;
    }
    let k = ((v - range.0) / (range.1 - range.0) * bins as f64).floor() as usize;
    Some(k.min(bins - 1))
}

fn check_bins(bins: usize) -> Result<()> {
    if bins < 2 {
        Err(Error::invalid(format!("at least 2 bins are required, got {bins}")))
    } else {
        Ok(())
    }
}

fn check_range(range: (f64, f64)) -> Result<(f64, f64)> {
    if range.1 > range.0 && range.0.is_finite() && range.1.is_finite() {
        Ok(range)
    } else {
        Err(Error::invalid(format!("invalid histogram range {range:?}")))
    }
}

fn normalize(values: &mut [f64], total: usize, volume: f64, mode: Normalization) {
    if mode == Normalization::Density && total > 0 {
        let f = 1.0 / (total as f64 * volume);
        values.iter_mut().for_each(|v| *v *= f);
    }
}

/// Histogram of `samples`; the range defaults to the sample extent.
pub fn histogram1d(samples: &[f64], bins: usize, range: Option<(f64, f64)>, mode: Normalization) -> Result<Histogram> {
    check_bins(bins)?;
    let range = check_range(range.unwrap_or_else(|| auto_range(samples)))?;
    let mut values = vec![0.0; bins];
    let mut total = 0;
    for &s in samples {
        if let Some(k) = bin_of(s, range, bins) {
            values[k] += 1.0;
            total += 1;
        }
    }
    normalize(&mut values, total, (range.1 - range.0) / bins as f64, mode);
    Ok(Histogram {
        edges: vec![uniform_edges(range, bins)],
        values,
        mode,
        total,
    })
}

/// Phase-space histogram; positions are folded into `[0, 2π)`.
pub fn histogram2d(
    x: &[f64],
    p: &[f64],
    bins: (usize, usize),
    p_range: Option<(f64, f64)>,
    mode: Normalization,
) -> Result<Histogram> {
    if x.len() != p.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: p.len(),
        });
    }
    check_bins(bins.0)?;
    check_bins(bins.1)?;
    let xr = (0.0, TAU);
    let pr = check_range(p_range.unwrap_or_else(|| auto_range(p)))?;
    let mut values = vec![0.0; bins.0 * bins.1];
    let mut total = 0;
    for (&xv, &pv) in x.iter().zip(p) {
        let folded = xv.rem_euclid(TAU);
        if let (Some(i), Some(j)) = (bin_of(folded, xr, bins.0), bin_of(pv, pr, bins.1)) {
            values[i * bins.1 + j] += 1.0;
            total += 1;
        }
    }
    let volume = (TAU / bins.0 as f64) * ((pr.1 - pr.0) / bins.1 as f64);
    normalize(&mut values, total, volume, mode);
    Ok(Histogram {
        edges: vec![uniform_edges(xr, bins.0), uniform_edges(pr, bins.1)],
        values,
        mode,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_stream;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn gaussian_kurtosis() {
        let mut rng = rng_stream(12, 0);
        let s: Vec<f64> = (0..1_000_000).map(|_| rng.sample::<f64, _>(StandardNormal) * 2.0).collect();
        let m = moments(&s).unwrap();
        assert!((m.kurtosis - 3.0).abs() < 0.02, "K = {}", m.kurtosis);
        assert!(m.kurtosis_stderr > 0.0 && m.kurtosis_stderr < 0.02);
        assert!((m.p2 - 4.0).abs() < 5.0 * m.p2_stderr);
    }

    #[test]
    fn two_point_and_uniform_kurtosis() {
        let s: Vec<f64> = (0..100).map(|k| if k % 2 == 0 { 1.5 } else { -1.5 }).collect();
        assert_relative_eq!(moments(&s).unwrap().kurtosis, 1.0, max_relative = 1e-14);
        let n = 200_000;
        let u: Vec<f64> = (0..n).map(|k| -2.0 + 4.0 * (k as f64 + 0.5) / n as f64).collect();
        assert_relative_eq!(moments(&u).unwrap().kurtosis, 1.8, max_relative = 1e-6);
    }

    #[test]
    fn degenerate_moments() {
        assert_eq!(moments(&[0.0; 10]), Err(Error::UndefinedKurtosis));
        assert!(moments(&[1.0]).is_err());
        let (k, e) = kurtosis_jackknife(&[2.0], &[8.0]).unwrap();
        assert_eq!(k, 2.0);
        assert!(e.is_nan());
    }

    #[test]
    fn constant_series_has_empty_spectrum() {
        let t: Vec<f64> = (0..200).map(|k| k as f64 * 0.1).collect();
        let f = vec![0.1; 200];
        let s = laplace_spectrum(&t, &f, &SpectrumOptions::default()).unwrap();
        assert!(s.values.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
        assert!(find_peaks(&s.omega, &s.magnitude()).is_empty());
    }

    #[test]
    fn exponential_transform() {
        let lambda = 0.8;
        let dt = 0.005;
        let t: Vec<f64> = (0..16_000).map(|k| k as f64 * dt).collect();
        let f: Vec<f64> = t.iter().map(|t| (-lambda * t).exp()).collect();
        let s = laplace_spectrum(&t, &f, &SpectrumOptions::default()).unwrap();
        assert!(s.stationary.abs() < 1e-20);
        for (om, v) in s.omega.iter().zip(&s.values) {
            let exact = 1.0 / Complex64::new(lambda, -om).norm();
            assert!((v.norm() - exact).abs() < 1e-4 * exact.max(1.0), "ω = {om}");
        }
    }

    #[test]
    fn spectrum_peaks_at_oscillation_frequency() {
        let t: Vec<f64> = (0..4000).map(|k| k as f64 * 0.02).collect();
        let f: Vec<f64> = t.iter().map(|t| (5.0 * t).cos()).collect();
        let s = laplace_spectrum(&t, &f, &SpectrumOptions::default()).unwrap();
        let peaks = find_peaks(&s.omega, &s.magnitude());
        let mut main: Vec<&Peak> = peaks.iter().collect();
        main.sort_by(|a, b| b.magnitude.total_cmp(&a.magnitude));
        let top: Vec<f64> = main.iter().take(2).map(|p| p.omega).collect();
        assert!(top.iter().any(|w| (w - 5.0).abs() < 0.02));
        assert!(top.iter().any(|w| (w + 5.0).abs() < 0.02));
    }

    #[test]
    fn spectrum_errors() {
        let t: Vec<f64> = (0..10).map(|k| k as f64).collect();
        assert!(laplace_spectrum(&t, &t, &SpectrumOptions::default()).is_err());
        let t: Vec<f64> = (0..20).map(|k| k as f64).collect();
        let bad = SpectrumOptions {
            window_fraction: 1.0,
            ..Default::default()
        };
        assert!(laplace_spectrum(&t, &t, &bad).is_err());
    }

    #[test]
    fn peak_interpolation_is_exact_for_parabola() {
        let om: Vec<f64> = (0..41).map(|k| k as f64 * 0.1).collect();
        let mag: Vec<f64> = om.iter().map(|w| (10.0 - 40.0 * (w - 2.03f64).powi(2)).max(0.0)).collect();
        let peaks = find_peaks(&om, &mag);
        assert_eq!(peaks.len(), 1);
        assert_relative_eq!(peaks[0].omega, 2.03, max_relative = 1e-12);
        assert_relative_eq!(peaks[0].magnitude, 10.0, max_relative = 1e-12);
    }

    #[test]
    fn histogram_basics() {
        let h = histogram1d(&[0.3], 4, Some((0.0, 1.0)), Normalization::Counts).unwrap();
        assert_eq!(h.values, vec![0.0, 1.0, 0.0, 0.0]);
        let e = histogram1d(&[], 4, None, Normalization::Density).unwrap();
        assert_eq!(e.total, 0);
        assert!(histogram1d(&[1.0], 1, None, Normalization::Counts).is_err());
        let h2 = histogram2d(&[-0.1, 7.0], &[0.0, 1.0], (4, 2), Some((-1.0, 1.0)), Normalization::Counts).unwrap();
        assert_eq!(h2.total, 2);
        // −0.1 folds to 2π − 0.1 (last x bin); 7.0 folds to 0.717 (first x bin).
        assert_eq!(h2.values[3 * 2 + 1], 1.0);
        assert_eq!(h2.values[1], 1.0);
    }

    #[test]
    fn timeseries_invariants() {
        let mut ts = TimeSeries::new(vec![0.0, 1.0]);
        ts.push_channel("a", vec![1.0, 2.0]);
        ts.push_channel("a_stderr", vec![0.0, 0.1]);
        assert!(ts.validate().is_ok());
        ts.channels[1].1[0] = -1.0;
        assert!(ts.validate().is_err());
        assert_eq!(ts.names().collect::<Vec<_>>(), vec!["a", "a_stderr"]);
    }

    proptest! {
        #[test]
        fn kurtosis_scale_invariant(s in proptest::collection::vec(-10.0f64..10.0, 2..200), c in prop_oneof![-8.0f64..-0.125, 0.125f64..8.0]) {
            prop_assume!(s.iter().any(|v| *v != 0.0));
            // Powers of two keep the scaling exact in floating point.
            let c = c.signum() * 2f64.powi(c.abs().log2().round() as i32);
            let scaled: Vec<f64> = s.iter().map(|v| c * v).collect();
            prop_assert_eq!(moments(&s).unwrap().kurtosis, moments(&scaled).unwrap().kurtosis);
        }

        #[test]
        fn spectrum_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let t: Vec<f64> = (0..64).map(|k| k as f64 * 0.3).collect();
            let f: Vec<f64> = t.iter().map(|t| (1.3 * t).sin() + 0.2 * t).collect();
            let g: Vec<f64> = t.iter().map(|t| (-0.4 * t).exp()).collect();
            let h: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + b * y).collect();
            let opts = SpectrumOptions { n_omega: 65, ..Default::default() };
            let sf = laplace_spectrum(&t, &f, &opts).unwrap();
            let sg = laplace_spectrum(&t, &g, &opts).unwrap();
            let sh = laplace_spectrum(&t, &h, &opts).unwrap();
            for k in 0..65 {
                let lin = sf.values[k] * a + sg.values[k] * b;
                prop_assert!((sh.values[k] - lin).norm() <= 1e-9 * (1.0 + lin.norm()));
            }
        }

        #[test]
        fn histogram_conservation(s in proptest::collection::vec(-5.0f64..5.0, 1..300), bins in 2usize..40) {
            let h = histogram1d(&s, bins, None, Normalization::Counts).unwrap();
            prop_assert_eq!(h.values.iter().sum::<f64>() as usize, s.len());
            let d = histogram1d(&s, bins, None, Normalization::Density).unwrap();
            prop_assert!((d.integral() - 1.0).abs() < 1e-9);
            let p: Vec<f64> = s.iter().map(|v| v * 0.5).collect();
            let h2 = histogram2d(&s, &p, (bins, bins + 1), None, Normalization::Density).unwrap();
            prop_assert!((h2.integral() - 1.0).abs() < 1e-9);
        }
    }
}
