//! Deterministic mean-field dynamics: classical motion coupled to per-atom
//! dipoles `s_j = <σ_j>` and inversions `z_j = <σ^z_j>`.
//!
//! ```text
//! ds_j/dt = −(w/2) s_j − (NΓ_C/2) iα* X cos(x_j) z_j
//! dz_j/dt = w(1 − z_j) + 2NΓ_C Im(α X* s_j) cos(x_j)
//! dx_j/dt = p_j/m
//! dp_j/dt = −sin(x_j) NΓ_C Re(α X* s_j)
//! ```
//!
//! with `X = (1/N) Σ_j s_j cos(x_j)`. Pump and shot noise are neglected, so
//! `s ≡ 0` is an exact invariant manifold; a small random-phase dipole seed
//! breaks the symmetry.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ensemble::{self, EnsembleOptions, EnsembleOutput, PhaseSnapshot, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::model::{PhysicalParams, MASS};
use crate::observables::TimeSeries;
use crate::rng::rng_stream;
use crate::semiclassical::InitialCondition;

#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldState {
    pub t: f64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub s: Vec<Complex64>,
    pub z: Vec<f64>,
}

impl MeanFieldState {
    pub fn new(x: Vec<f64>, p: Vec<f64>, s: Vec<Complex64>, z: Vec<f64>) -> Result<Self> {
        let n = x.len();
        for len in [p.len(), s.len(), z.len()] {
            if len != n {
                return Err(Error::DimensionMismatch { expected: n, found: len });
            }
        }
        Ok(MeanFieldState { t: 0.0, x, p, s, z })
    }

    /// Positions and momenta from `ic`, dipoles `ε e^{iφ_j}` with independent
    /// uniform phases and `z_j = √(1 − 4ε²)` (on the Bloch sphere).
    pub fn seeded<R: Rng + ?Sized>(ic: &InitialCondition, n: usize, rng: &mut R) -> Result<Self> {
        ic.validate(n)?;
        let (x, p) = ic.sample_phase_space(n, rng);
        let eps = ic.dipole_seed;
        let s = (0..n)
            .map(|_| Complex64::from_polar(eps, rng.random::<f64>() * std::f64::consts::TAU))
            .collect();
        let z = vec![(1.0 - 4.0 * eps * eps).sqrt(); n];
        Ok(MeanFieldState { t: 0.0, x, p, s, z })
    }

    pub fn n_atoms(&self) -> usize {
        self.x.len()
    }

    pub fn order_parameter(&self) -> Complex64 {
        let n = self.n_atoms() as f64;
        self.s.iter().zip(&self.x).map(|(s, x)| s * x.cos()).sum::<Complex64>() / n
    }

    /// `<X†X>` with the single-atom diagonal restored:
    /// `|X|² + (1/N²) Σ_j cos²(x_j) ((1 + z_j)/2 − |s_j|²)`.
    pub fn xdagx(&self) -> f64 {
        let n = self.n_atoms() as f64;
        let diag: f64 = (0..self.n_atoms())
            .map(|j| self.x[j].cos().powi(2) * (0.5 * (1.0 + self.z[j]) - self.s[j].norm_sqr()))
            .sum();
        self.order_parameter().norm_sqr() + diag / (n * n)
    }

    /// `max_j (4|s_j|² + z_j²)`.
    pub fn max_bloch_radius_sq(&self) -> f64 {
        self.s
            .iter()
            .zip(&self.z)
            .map(|(s, z)| 4.0 * s.norm_sqr() + z * z)
            .fold(0.0, f64::max)
    }
}

/// Time derivatives of a [`MeanFieldState`].
#[derive(Debug, Clone, PartialEq)]
pub struct MeanFieldDerivative {
    pub dx: Vec<f64>,
    pub dp: Vec<f64>,
    pub ds: Vec<Complex64>,
    pub dz: Vec<f64>,
}

impl MeanFieldDerivative {
    fn zeros(n: usize) -> Self {
        MeanFieldDerivative {
            dx: vec![0.0; n],
            dp: vec![0.0; n],
            ds: vec![Complex64::new(0.0, 0.0); n],
            dz: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeanFieldConfig {
    pub dt: f64,
    pub t_end: f64,
    pub sample_interval: f64,
    pub snapshot_times: Vec<f64>,
    /// Hold positions and momenta fixed (internal dynamics only).
    pub frozen_motion: bool,
}

impl Default for MeanFieldConfig {
    fn default() -> Self {
        MeanFieldConfig {
            dt: 2e-3,
            t_end: 100.0,
            sample_interval: 0.5,
            snapshot_times: Vec::new(),
            frozen_motion: false,
        }
    }
}

impl MeanFieldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::invalid("t_end must be nonnegative"));
        }
        if !(self.sample_interval > 0.0) {
            return Err(Error::invalid("sample_interval must be positive"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> u64 {
        (self.t_end / self.dt).round() as u64
    }

    pub fn sample_every(&self) -> u64 {
        ((self.sample_interval / self.dt).round() as u64).max(1)
    }

    pub fn sample_times(&self) -> Vec<f64> {
        let every = self.sample_every();
        (0..=self.n_steps())
            .filter(|s| s % every == 0)
            .map(|s| s as f64 * self.dt)
            .collect()
    }
}

struct Coefficients {
    w: f64,
    n_gamma_c: f64,
    alpha: Complex64,
    /// `(NΓ_C/2) iα*`
    drive: Complex64,
}

impl Coefficients {
    fn new(params: &PhysicalParams) -> Self {
        let alpha = params.alpha().value();
        Coefficients {
            w: params.w_pump,
            n_gamma_c: params.n_gamma_c,
            alpha,
            drive: Complex64::i() * alpha.conj() * (0.5 * params.n_gamma_c),
        }
    }

    fn eval(&self, st: &MeanFieldState, frozen: bool, out: &mut MeanFieldDerivative) {
        let n = st.n_atoms();
        let mut x_sum = Complex64::new(0.0, 0.0);
        for j in 0..n {
            x_sum += st.s[j] * st.x[j].cos();
        }
        let big_x = x_sum / n as f64;
        let ax = self.alpha * big_x.conj();
        let dx_drive = self.drive * big_x;
        for j in 0..n {
            let (sin, cos) = st.x[j].sin_cos();
            let coupling = ax * st.s[j];
            out.ds[j] = -st.s[j] * (0.5 * self.w) - dx_drive * (cos * st.z[j]);
            out.dz[j] = self.w * (1.0 - st.z[j]) + 2.0 * self.n_gamma_c * coupling.im * cos;
            if frozen {
                out.dx[j] = 0.0;
                out.dp[j] = 0.0;
            } else {
                out.dx[j] = st.p[j] / MASS;
                out.dp[j] = -sin * self.n_gamma_c * coupling.re;
            }
        }
    }
}

/// Right-hand side of the mean-field equations.
pub fn meanfield_derivatives(state: &MeanFieldState, params: &PhysicalParams) -> MeanFieldDerivative {
    let mut out = MeanFieldDerivative::zeros(state.n_atoms());
    Coefficients::new(params).eval(state, false, &mut out);
    out
}

/// Classical fourth-order Runge–Kutta with reusable buffers.
pub struct Rk4 {
    coeffs: Coefficients,
    dt: f64,
    frozen: bool,
    k: [MeanFieldDerivative; 4],
    tmp: MeanFieldState,
    steps: u64,
}

impl Rk4 {
    pub fn new(params: &PhysicalParams, config: &MeanFieldConfig) -> Result<Self> {
        config.validate()?;
        let n = params.n_atoms;
        let zero_state = MeanFieldState {
            t: 0.0,
            x: vec![0.0; n],
            p: vec![0.0; n],
            s: vec![Complex64::new(0.0, 0.0); n],
            z: vec![0.0; n],
        };
        Ok(Rk4 {
            coeffs: Coefficients::new(params),
            dt: config.dt,
            frozen: config.frozen_motion,
            k: std::array::from_fn(|_| MeanFieldDerivative::zeros(n)),
            tmp: zero_state,
            steps: 0,
        })
    }

    fn stage(tmp: &mut MeanFieldState, base: &MeanFieldState, k: &MeanFieldDerivative, h: f64) {
        for j in 0..base.n_atoms() {
            tmp.x[j] = base.x[j] + h * k.dx[j];
            tmp.p[j] = base.p[j] + h * k.dp[j];
            tmp.s[j] = base.s[j] + k.ds[j] * h;
            tmp.z[j] = base.z[j] + h * k.dz[j];
        }
    }

    pub fn step(&mut self, st: &mut MeanFieldState) -> Result<()> {
        let h = self.dt;
        let [k1, k2, k3, k4] = &mut self.k;
        self.coeffs.eval(st, self.frozen, k1);
        Self::stage(&mut self.tmp, st, k1, 0.5 * h);
        self.coeffs.eval(&self.tmp, self.frozen, k2);
        Self::stage(&mut self.tmp, st, k2, 0.5 * h);
        self.coeffs.eval(&self.tmp, self.frozen, k3);
        Self::stage(&mut self.tmp, st, k3, h);
        self.coeffs.eval(&self.tmp, self.frozen, k4);
        let w = h / 6.0;
        for j in 0..st.n_atoms() {
            st.x[j] += w * (k1.dx[j] + 2.0 * (k2.dx[j] + k3.dx[j]) + k4.dx[j]);
            st.p[j] += w * (k1.dp[j] + 2.0 * (k2.dp[j] + k3.dp[j]) + k4.dp[j]);
            st.s[j] += (k1.ds[j] + (k2.ds[j] + k3.ds[j]) * 2.0 + k4.ds[j]) * w;
            st.z[j] += w * (k1.dz[j] + 2.0 * (k2.dz[j] + k3.dz[j]) + k4.dz[j]);
            if !(st.p[j].is_finite() && st.x[j].is_finite() && st.z[j].is_finite() && st.s[j].is_finite()) {
                return Err(Error::NumericalBlowup {
                    step: self.steps,
                    t: st.t,
                    trajectory: None,
                    what: format!("non-finite mean-field state for atom {j}"),
                });
            }
        }
        self.steps += 1;
        st.t += h;
        Ok(())
    }
}

/// Channels recorded per trajectory by the mean-field engine.
pub const CHANNELS: [&str; 6] = ["p2", "p4", "x_abs2", "xdagx", "arg_x", "cos_arg_x"];

fn observe(st: &MeanFieldState) -> [f64; 6] {
    let n = st.n_atoms() as f64;
    let p2 = st.p.iter().map(|p| p * p).sum::<f64>() / n;
    let p4 = st.p.iter().map(|p| (p * p) * (p * p)).sum::<f64>() / n;
    let x = st.order_parameter();
    let cos_arg = if x.norm() > 0.0 { x.re / x.norm() } else { 0.0 };
    [p2, p4, x.norm_sqr(), st.xdagx(), x.arg(), cos_arg]
}

/// Integrate one state, recording observables on the sample grid.
pub fn run_trajectory(
    mut state: MeanFieldState,
    params: &PhysicalParams,
    config: &MeanFieldConfig,
) -> Result<(TrajectoryRecord, MeanFieldState)> {
    let mut rk = Rk4::new(params, config)?;
    let every = config.sample_every();
    let snap_steps: Vec<u64> = config
        .snapshot_times
        .iter()
        .map(|t| (t / config.dt).round() as u64)
        .collect();
    let mut record = TrajectoryRecord::new(CHANNELS.len());
    let keep = |st: &MeanFieldState, step: u64, rec: &mut TrajectoryRecord| {
        if step % every == 0 {
            rec.push(&observe(st));
        }
        if snap_steps.contains(&step) {
            rec.snapshots.push(PhaseSnapshot {
                t: st.t,
                x: st.x.clone(),
                p: st.p.clone(),
            });
        }
    };
    keep(&state, 0, &mut record);
    for step in 1..=config.n_steps() {
        rk.step(&mut state)?;
        keep(&state, step, &mut record);
    }
    Ok((record, state))
}

/// Result of a single seeded mean-field run.
#[derive(Debug, Clone)]
pub struct MeanFieldRun {
    pub series: TimeSeries,
    pub snapshots: Vec<PhaseSnapshot>,
    pub final_state: MeanFieldState,
}

/// One mean-field trajectory seeded from `(seed, 0)`.
pub fn meanfield_simulate(
    params: &PhysicalParams,
    config: &MeanFieldConfig,
    ic: &InitialCondition,
    seed: u64,
) -> Result<MeanFieldRun> {
    params.validate()?;
    let mut rng = rng_stream(seed, 0);
    let state = MeanFieldState::seeded(ic, params.n_atoms, &mut rng)?;
    let (record, final_state) = run_trajectory(state, params, config)?;
    let mut series = TimeSeries::new(config.sample_times());
    series.set_meta("engine", "meanfield");
    for (name, values) in CHANNELS.iter().zip(record.channels) {
        series.push_channel(name, values);
    }
    Ok(MeanFieldRun {
        series,
        snapshots: record.snapshots,
        final_state,
    })
}

/// Independent mean-field runs (trajectory `i` seeded from `(master_seed, i)`).
pub fn simulate_ensemble(
    params: &PhysicalParams,
    config: &MeanFieldConfig,
    ic: &InitialCondition,
    n_traj: usize,
    master_seed: u64,
    options: &EnsembleOptions,
) -> Result<EnsembleOutput> {
    params.validate()?;
    config.validate()?;
    let records = ensemble::run_parallel(n_traj, options.threads, |i| {
        let mut rng = rng_stream(master_seed, i as u64);
        let state = MeanFieldState::seeded(ic, params.n_atoms, &mut rng)?;
        run_trajectory(state, params, config)
            .map(|(r, _)| r)
            .map_err(|e| e.in_trajectory(i))
    })?;
    Ok(ensemble::reduce(config.sample_times(), &CHANNELS, records, "meanfield"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Coupling;
    use crate::semiclassical::Placement;
    use crate::steady_state;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn params(n: usize) -> PhysicalParams {
        PhysicalParams::new(n, 780.0, 390.0, 10.0, Coupling::CollectiveLinewidth(40.0)).unwrap()
    }

    fn frozen(dt: f64, t_end: f64) -> MeanFieldConfig {
        MeanFieldConfig {
            dt,
            t_end,
            frozen_motion: true,
            ..Default::default()
        }
    }

    fn advance(mut st: MeanFieldState, pr: &PhysicalParams, cfg: &MeanFieldConfig) -> MeanFieldState {
        let mut rk = Rk4::new(pr, cfg).unwrap();
        for _ in 0..cfg.n_steps() {
            rk.step(&mut st).unwrap();
        }
        st
    }

    #[test]
    fn unsynchronized_fixed_point() {
        let n = 5;
        let pr = params(n);
        let x: Vec<f64> = (0..n).map(|j| 0.4 * j as f64).collect();
        let st = MeanFieldState::new(x, vec![1.0; n], vec![Complex64::new(0.0, 0.0); n], vec![0.0; n]).unwrap();
        let d = meanfield_derivatives(&st, &pr);
        for j in 0..n {
            assert_eq!(d.ds[j], Complex64::new(0.0, 0.0));
            assert_eq!(d.dz[j], pr.w_pump);
            assert_eq!(d.dp[j], 0.0);
            assert_eq!(d.dx[j], 2.0);
        }
    }

    #[test]
    fn nodes_decay_freely() {
        let n = 3;
        let pr = params(n);
        let s = vec![Complex64::new(0.2, 0.1); n];
        let st = MeanFieldState::new(vec![FRAC_PI_2; n], vec![0.0; n], s.clone(), vec![0.3; n]).unwrap();
        let d = meanfield_derivatives(&st, &pr);
        for j in 0..n {
            assert!((d.ds[j] + s[j] * 5.0).norm() < 1e-14);
            assert_relative_eq!(d.dz[j], 7.0, max_relative = 1e-14);
            assert!(d.dp[j].abs() < 1e-14);
        }
    }

    #[test]
    fn zero_seed_never_synchronizes() {
        let pr = params(20);
        let ic = InitialCondition {
            dipole_seed: 0.0,
            ..Default::default()
        };
        let cfg = MeanFieldConfig {
            t_end: 5.0,
            ..Default::default()
        };
        let run = meanfield_simulate(&pr, &cfg, &ic, 1).unwrap();
        assert!(run.series.channel("x_abs2").unwrap().iter().all(|v| *v == 0.0));
        assert!(run.final_state.z.iter().all(|z| (*z - 1.0).abs() < 1e-15));
    }

    #[test]
    fn stationary_profile_rotates_rigidly() {
        let n = 64;
        let pr = params(n);
        let x: Vec<f64> = (0..n).map(|j| (j as f64 + 0.5) * 2.0 * PI / n as f64).collect();
        let x2 = steady_state::solve_x2_density(pr.w_pump, pr.n_gamma_c, &x).unwrap();
        assert!(x2 > 0.01);
        let (s0, z0) = steady_state::profiles_s0_z0(&x, x2, pr.w_pump, pr.n_gamma_c);
        let phase = Complex64::from_polar(1.0, 0.7);
        let s: Vec<Complex64> = s0.iter().map(|v| phase * v).collect();
        let st0 = MeanFieldState::new(x, vec![0.0; n], s, z0.clone()).unwrap();
        let x_init = st0.order_parameter();
        let t_end = 10.0 / pr.w_pump;
        let st = advance(st0, &pr, &frozen(1e-3, t_end));
        let omega0 = steady_state::omega0(pr.w_pump, pr.delta, pr.kappa);
        let expect = x_init * Complex64::from_polar(1.0, -omega0 * t_end);
        let x_end = st.order_parameter();
        assert!((x_end.norm() - x_init.norm()).abs() < 1e-6);
        assert!((x_end - expect).norm() < 1e-6 * x_init.norm().max(1.0));
        for j in 0..n {
            assert!((st.z[j] - z0[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn pinned_relaxation_reaches_closed_form() {
        let n = 10;
        let pr = params(n);
        let mut rng = rng_stream(4, 0);
        let ic = InitialCondition {
            placement: Placement::Fixed(vec![0.0, PI, 0.0, PI, 0.0, 0.0, PI, 2.0 * PI, 0.0, PI]),
            dipole_seed: 0.05,
            ..Default::default()
        };
        let st = MeanFieldState::seeded(&ic, n, &mut rng).unwrap();
        let st = advance(st, &pr, &frozen(2e-3, 40.0));
        let pinned = steady_state::solve_x2_pinned(pr.w_pump, pr.n_gamma_c, 1.0);
        assert!((st.order_parameter().norm_sqr() - pinned).abs() < 1e-4);
    }

    #[test]
    fn rk4_is_fourth_order() {
        let n = 6;
        let pr = params(n);
        let mut rng = rng_stream(2, 0);
        let ic = InitialCondition {
            dipole_seed: 0.2,
            ..Default::default()
        };
        let st0 = MeanFieldState::seeded(&ic, n, &mut rng).unwrap();
        let run = |dt: f64| advance(st0.clone(), &pr, &frozen(dt, 0.8));
        let reference = run(1e-4);
        let err = |s: &MeanFieldState| {
            s.s.iter()
                .zip(&reference.s)
                .map(|(a, b)| (a - b).norm())
                .chain(s.z.iter().zip(&reference.z).map(|(a, b)| (a - b).abs()))
                .fold(0.0, f64::max)
        };
        let e1 = err(&run(0.02));
        let e2 = err(&run(0.01));
        let ratio = e1 / e2;
        assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn global_phase_covariance() {
        let n = 12;
        let pr = params(n);
        let ic = InitialCondition {
            dipole_seed: 0.05,
            ..Default::default()
        };
        let st0 = MeanFieldState::seeded(&ic, n, &mut rng_stream(6, 0)).unwrap();
        let rot = Complex64::from_polar(1.0, 1.234);
        let mut st1 = st0.clone();
        st1.s.iter_mut().for_each(|s| *s *= rot);
        let cfg = MeanFieldConfig {
            t_end: 2.0,
            ..Default::default()
        };
        let a = advance(st0, &pr, &cfg);
        let b = advance(st1, &pr, &cfg);
        assert!((a.order_parameter() * rot - b.order_parameter()).norm() < 1e-12);
        assert!((a.order_parameter().norm() - b.order_parameter().norm()).abs() < 1e-12);
        assert!((a.mean_p2() - b.mean_p2()).abs() < 1e-12);
        for j in 0..n {
            assert!((a.z[j] - b.z[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn xdagx_adds_diagonal_correction() {
        let st = MeanFieldState::new(vec![0.0], vec![0.0], vec![Complex64::new(0.0, 0.0)], vec![1.0]).unwrap();
        assert_eq!(st.xdagx(), 1.0);
        let st = MeanFieldState::new(vec![0.0, 0.0], vec![0.0; 2], vec![Complex64::new(0.5, 0.0); 2], vec![0.0; 2]).unwrap();
        // |X|² = 1/4 plus (1/4)·2·(1/2 − 1/4).
        assert_relative_eq!(st.xdagx(), 0.375, max_relative = 1e-15);
    }

    #[test]
    fn cos_arg_x_oscillates_at_rotation_frequency() {
        let n = 50;
        let pr = params(n);
        let ic = InitialCondition {
            p2_initial: 0.0,
            placement: Placement::Fixed((0..n).map(|j| (j as f64 + 0.5) * 2.0 * PI / n as f64).collect()),
            dipole_seed: 0.01,
        };
        let cfg = MeanFieldConfig {
            t_end: 30.0,
            sample_interval: 0.02,
            frozen_motion: true,
            ..Default::default()
        };
        let run = meanfield_simulate(&pr, &cfg, &ic, 3).unwrap();
        let arg = run.series.channel("arg_x").unwrap();
        let t = &run.series.times;
        let k0 = t.iter().position(|&v| v >= 20.0).unwrap();
        let mut unwrapped = arg[k0];
        let mut prev = arg[k0];
        for &a in &arg[k0 + 1..] {
            let mut d = a - prev;
            d -= 2.0 * PI * (d / (2.0 * PI)).round();
            unwrapped += d;
            prev = a;
        }
        let rate = (unwrapped - arg[k0]) / (t[t.len() - 1] - t[k0]);
        assert!((rate + 5.0).abs() < 1e-3, "phase rate {rate}");
    }

    impl MeanFieldState {
        fn mean_p2(&self) -> f64 {
            self.p.iter().map(|p| p * p).sum::<f64>() / self.n_atoms() as f64
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn bloch_containment(seed in 0u64..1000, eps in 0.0f64..0.5, w in 2.0f64..60.0) {
            let n = 8;
            let pr = PhysicalParams::new(n, 780.0, 390.0, w, Coupling::CollectiveLinewidth(40.0)).unwrap();
            let ic = InitialCondition { dipole_seed: eps, ..Default::default() };
            let mut st = MeanFieldState::seeded(&ic, n, &mut rng_stream(seed, 0)).unwrap();
            let cfg = MeanFieldConfig { t_end: 3.0, ..Default::default() };
            let mut rk = Rk4::new(&pr, &cfg).unwrap();
            for _ in 0..cfg.n_steps() {
                rk.step(&mut st).unwrap();
                prop_assert!(st.max_bloch_radius_sq() <= 1.0 + 1e-6);
                prop_assert!(st.z.iter().all(|z| (-1.0 - 1e-8..=1.0 + 1e-8).contains(z)));
            }
        }
    }
}
