//! Parallel, deterministic ensemble runner and reductions.
//!
//! Trajectories run on a rayon pool but results are gathered in index order
//! and reduced with fixed-order pairwise sums, so output is bitwise identical
//! for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observables::{kurtosis_jackknife, TimeSeries};
use crate::semiclassical::NoiseDiagnostics;
use crate::sum::pairwise_sum_by;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnsembleOptions {
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

/// Positions and momenta of one trajectory at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSnapshot {
    pub t: f64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
}

/// Samples recorded along one trajectory; `channels[c][k]` is channel `c` at sample `k`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryRecord {
    pub channels: Vec<Vec<f64>>,
    pub snapshots: Vec<PhaseSnapshot>,
    pub noise: NoiseDiagnostics,
}

impl TrajectoryRecord {
    pub fn new(n_channels: usize) -> Self {
        TrajectoryRecord {
            channels: vec![Vec::new(); n_channels],
            ..Default::default()
        }
    }

    pub fn push(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.channels.len());
        for (c, v) in self.channels.iter_mut().zip(values) {
            c.push(*v);
        }
    }
}

/// Ensemble statistics of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    /// Ensemble means, plus `<name>_stderr` columns and (when `p2`/`p4` were
    /// recorded) `kurtosis` and `kurtosis_stderr`.
    pub series: TimeSeries,
    /// Snapshots of every trajectory, ordered by trajectory index.
    pub snapshots: Vec<(usize, PhaseSnapshot)>,
    pub noise: NoiseDiagnostics,
    pub n_trajectories: usize,
    pub warnings: Vec<String>,
}

impl EnsembleOutput {
    /// All snapshots taken at (or within `dt/2` of) time `t`.
    pub fn snapshots_at(&self, t: f64, tol: f64) -> Vec<&PhaseSnapshot> {
        self.snapshots
            .iter()
            .filter(|(_, s)| (s.t - t).abs() <= tol)
            .map(|(_, s)| s)
            .collect()
    }
}

/// Run `f(0..n)` in parallel; results are returned in index order.
///
/// The first failing index (lowest) determines the reported error.
pub fn run_parallel<T, F>(n: usize, threads: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    let work = || (0..n).into_par_iter().map(&f).collect::<Vec<Result<T>>>();
    let results = match threads {
        Some(0) => return Err(Error::invalid("threads must be at least 1")),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    results.into_iter().collect()
}

/// Reduce per-trajectory records to means and standard errors per channel.
pub fn reduce(times: Vec<f64>, names: &[&str], records: Vec<TrajectoryRecord>, engine: &str) -> EnsembleOutput {
    let n_traj = records.len();
    let n_samples = times.len();
    let mut series = TimeSeries::new(times);
    series.set_meta("engine", engine);
    series.set_meta("trajectories", &n_traj.to_string());

    for (c, name) in names.iter().enumerate() {
        let mut means = Vec::with_capacity(n_samples);
        let mut errs = Vec::with_capacity(n_samples);
        for k in 0..n_samples {
            let m = pairwise_sum_by(&records, &|r: &TrajectoryRecord| r.channels[c][k]) / n_traj as f64;
            means.push(m);
            let err = if n_traj > 1 {
                let ss = pairwise_sum_by(&records, &|r: &TrajectoryRecord| (r.channels[c][k] - m).powi(2));
                (ss / ((n_traj - 1) * n_traj) as f64).sqrt()
            } else {
                f64::NAN
            };
            errs.push(err);
        }
        series.push_channel(name, means);
        series.push_channel(&format!("{name}_stderr"), errs);
    }

    let p2 = names.iter().position(|n| *n == "p2");
    let p4 = names.iter().position(|n| *n == "p4");
    if let (Some(i2), Some(i4)) = (p2, p4) {
        let mut k = Vec::with_capacity(n_samples);
        let mut ke = Vec::with_capacity(n_samples);
        let mut a = vec![0.0; n_traj];
        let mut b = vec![0.0; n_traj];
        for s in 0..n_samples {
            for (t, r) in records.iter().enumerate() {
                a[t] = r.channels[i2][s];
                b[t] = r.channels[i4][s];
            }
            match kurtosis_jackknife(&a, &b) {
                Ok((v, e)) => {
                    k.push(v);
                    ke.push(e);
                }
                Err(_) => {
                    k.push(f64::NAN);
                    ke.push(f64::NAN);
                }
            }
        }
        series.push_channel("kurtosis", k);
        series.push_channel("kurtosis_stderr", ke);
    }

    let mut noise = NoiseDiagnostics::default();
    let mut snapshots = Vec::new();
    for (i, r) in records.into_iter().enumerate() {
        noise.merge(&r.noise);
        snapshots.extend(r.snapshots.into_iter().map(|s| (i, s)));
    }
    EnsembleOutput {
        series,
        snapshots,
        noise,
        n_trajectories: n_traj,
        warnings: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake(i: usize) -> Result<TrajectoryRecord> {
        let mut r = TrajectoryRecord::new(2);
        for k in 0..5 {
            let v = (i * 7 + k) as f64 * 0.1 + 1.0 / (1.0 + i as f64);
            r.push(&[v, v * v * 3.0]);
        }
        Ok(r)
    }

    #[test]
    fn results_independent_of_thread_count() {
        let times: Vec<f64> = (0..5).map(|k| k as f64).collect();
        let run = |t| reduce(times.clone(), &["p2", "p4"], run_parallel(37, t, fake).unwrap(), "test");
        let a = run(Some(1));
        let b = run(Some(3));
        let c = run(None);
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn lowest_failing_index_is_reported() {
        let err = run_parallel(10, Some(2), |i| {
            if i == 4 || i == 7 {
                Err(Error::invalid(format!("bad {i}")))
            } else {
                Ok(i)
            }
        })
        .unwrap_err();
        assert!(format!("{err}").contains("bad 4"));
        assert!(run_parallel(3, Some(0), |i| Ok(i)).is_err());
    }

    #[test]
    fn reduction_statistics() {
        let records: Vec<TrajectoryRecord> = [1.0, 2.0, 3.0, 4.0]
            .iter()
            .map(|&v| {
                let mut r = TrajectoryRecord::new(1);
                r.push(&[v]);
                r
            })
            .collect();
        let out = reduce(vec![0.0], &["q"], records, "test");
        assert_eq!(out.series.channel("q").unwrap(), &[2.5]);
        let se = out.series.channel("q_stderr").unwrap()[0];
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert!(out.series.channel("kurtosis").is_none());
    }
}
