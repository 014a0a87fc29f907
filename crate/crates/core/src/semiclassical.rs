//! Semiclassical dynamics: stochastic classical motion coupled to a
//! second-order cumulant expansion of the spin correlations.
//!
//! The state of one trajectory is the positions `x_j`, momenta `p_j` and the
//! Hermitian matrix `C_jl = <σ_j† σ_l>`. Operator products in the cavity forces
//! are closed with `C`:
//!
//! * adiabatic force `F⁽⁰⁾_j = −sin(x_j) NΓ_C Re[α y_j]` with
//!   `y_j = <X†σ_j> = (1/N) Σ_l cos(x_l) C_lj`,
//! * retarded (friction) force
//!   `F⁽¹⁾_j = −NΓ_C κ/(Δ²+κ²/4) sin(x_j) Re[iα² (1/N) Σ_l sin(x_l) p_l C_lj]`,
//! * shot noise with covariance `D^{jl} = Γ_C sin(x_j) sin(x_l) Re C_lj`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ensemble::{self, EnsembleOptions, EnsembleOutput, TrajectoryRecord};
use crate::error::{Error, Result};
use crate::model::{PhysicalParams, MASS};
use crate::noise::{Factorization, NoiseFactor};
use crate::rng::{rng_stream, RngStream};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Row-major Hermitian matrix `C_jl = <σ_j† σ_l>`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    n: usize,
    data: Vec<Complex64>,
}

impl CorrelationMatrix {
    /// All atoms excited and uncorrelated.
    pub fn identity(n: usize) -> Self {
        let mut data = vec![ZERO; n * n];
        for j in 0..n {
            data[j * n + j] = ONE;
        }
        CorrelationMatrix { n, data }
    }

    pub fn zeros(n: usize) -> Self {
        CorrelationMatrix {
            n,
            data: vec![ZERO; n * n],
        }
    }

    pub fn from_row_major(n: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch {
                expected: n * n,
                found: data.len(),
            });
        }
        Ok(CorrelationMatrix { n, data })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, j: usize, l: usize) -> Complex64 {
        self.data[j * self.n + l]
    }

    #[inline]
    pub fn set(&mut self, j: usize, l: usize, v: Complex64) {
        self.data[j * self.n + l] = v;
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    /// `max |C − C†|`.
    pub fn hermiticity_error(&self) -> f64 {
        let n = self.n;
        let mut worst = 0.0f64;
        for j in 0..n {
            for l in j..n {
                worst = worst.max((self.data[j * n + l] - self.data[l * n + j].conj()).norm());
            }
        }
        worst
    }

    /// Replace `C` by `(C + C†)/2`.
    pub fn hermitize(&mut self) {
        let n = self.n;
        for j in 0..n {
            self.data[j * n + j].im = 0.0;
            for l in (j + 1)..n {
                let v = 0.5 * (self.data[j * n + l] + self.data[l * n + j].conj());
                self.data[j * n + l] = v;
                self.data[l * n + j] = v.conj();
            }
        }
    }

    /// Smallest eigenvalue of the Hermitian matrix, via the real `2n × 2n` embedding.
    pub fn min_eigenvalue(&self) -> f64 {
        let n = self.n;
        let m = DMatrix::from_fn(2 * n, 2 * n, |r, c| {
            let v = self.data[(r % n) * n + (c % n)];
            match (r < n, c < n) {
                (true, true) | (false, false) => v.re,
                (true, false) => -v.im,
                (false, true) => v.im,
            }
        });
        m.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemiclassicalState {
    pub t: f64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub corr: CorrelationMatrix,
}

impl SemiclassicalState {
    pub fn new(x: Vec<f64>, p: Vec<f64>, corr: CorrelationMatrix) -> Result<Self> {
        let n = x.len();
        if p.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: p.len(),
            });
        }
        if corr.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: corr.dim(),
            });
        }
        Ok(SemiclassicalState { t: 0.0, x, p, corr })
    }

    pub fn n_atoms(&self) -> usize {
        self.x.len()
    }

    pub fn xdagx(&self) -> f64 {
        crate::model::xdagx_from_correlations(&self.x, self.corr.as_slice()).unwrap_or(f64::NAN)
    }

    pub fn mean_p2(&self) -> f64 {
        self.p.iter().map(|p| p * p).sum::<f64>() / self.p.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    EulerMaruyama,
    #[default]
    Heun,
}

/// Which parts of the cavity force act on the atoms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForceMode {
    #[default]
    Full,
    AdiabaticOnly,
    FrictionOnly,
}

impl ForceMode {
    fn adiabatic(self) -> bool {
        !matches!(self, ForceMode::FrictionOnly)
    }

    fn friction(self) -> bool {
        !matches!(self, ForceMode::AdiabaticOnly)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrationConfig {
    pub dt: f64,
    pub t_end: f64,
    pub scheme: Scheme,
    pub force_mode: ForceMode,
    pub noise_enabled: bool,
    /// Momentum kicks are drawn every `noise_stride` steps with variance
    /// `D · noise_stride · dt`.
    pub noise_stride: usize,
    pub factorization: Factorization,
    /// Observable sampling cadence (in `1/ω_R`).
    pub sample_interval: f64,
    /// Times at which full phase-space snapshots are kept.
    pub snapshot_times: Vec<f64>,
}

impl Default for IntegrationConfig {
    fn default() -> Self {
        IntegrationConfig {
            dt: 2e-3,
            t_end: 100.0,
            scheme: Scheme::Heun,
            force_mode: ForceMode::Full,
            noise_enabled: true,
            noise_stride: 1,
            factorization: Factorization::Cholesky,
            sample_interval: 0.5,
            snapshot_times: Vec::new(),
        }
    }
}

impl IntegrationConfig {
    /// Validate; returns non-fatal warnings (the stability guard).
    pub fn validate(&self, params: &PhysicalParams) -> Result<Vec<String>> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::invalid("t_end must be nonnegative"));
        }
        if self.noise_stride == 0 {
            return Err(Error::invalid("noise_stride must be at least 1"));
        }
        if !(self.sample_interval > 0.0) {
            return Err(Error::invalid("sample_interval must be positive"));
        }
        let mut warnings = Vec::new();
        let stiff = self.dt * params.w_pump.max(params.n_gamma_c);
        if stiff >= 0.1 {
            warnings.push(format!(
                "dt·max(w, NΓ_C) = {stiff:.3} exceeds the 0.1 stability guideline"
            ));
        }
        Ok(warnings)
    }

    pub fn n_steps(&self) -> u64 {
        (self.t_end / self.dt).round() as u64
    }

    /// Steps between recorded samples.
    pub fn sample_every(&self) -> u64 {
        ((self.sample_interval / self.dt).round() as u64).max(1)
    }
}

/// How atoms are placed initially.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    /// Uniform over one wavelength `[0, 2π)`.
    #[default]
    Uniform,
    /// Given positions, replicated in every trajectory.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialCondition {
    /// Thermal momentum variance `<p²(0)>` in `(ħk)²`.
    pub p2_initial: f64,
    pub placement: Placement,
    /// Magnitude of the random-phase dipole seed (mean-field engine only).
    pub dipole_seed: f64,
}

impl Default for InitialCondition {
    fn default() -> Self {
        InitialCondition {
            p2_initial: 5.0,
            placement: Placement::Uniform,
            dipole_seed: 1e-3,
        }
    }
}

impl InitialCondition {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.p2_initial >= 0.0 && self.p2_initial.is_finite()) {
            return Err(Error::invalid("p2_initial must be nonnegative"));
        }
        if let Placement::Fixed(xs) = &self.placement {
            if xs.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: xs.len(),
                });
            }
        }
        if !(0.0..=0.5).contains(&self.dipole_seed) {
            return Err(Error::invalid("dipole_seed must lie in [0, 1/2]"));
        }
        Ok(())
    }

    /// Draw positions and momenta.
    pub(crate) fn sample_phase_space<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let x = match &self.placement {
            Placement::Uniform => (0..n).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect(),
            Placement::Fixed(xs) => xs.clone(),
        };
        let sigma = self.p2_initial.sqrt();
        let p = (0..n).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect();
        (x, p)
    }

    pub fn semiclassical_state<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> SemiclassicalState {
        let (x, p) = self.sample_phase_space(n, rng);
        SemiclassicalState {
            t: 0.0,
            x,
            p,
            corr: CorrelationMatrix::identity(n),
        }
    }
}

/// Precomputed constants and scratch space for the `O(N²)` right-hand side.
#[derive(Debug, Clone)]
pub struct Kernel {
    n: usize,
    w: f64,
    n_gamma_c: f64,
    gamma_c: f64,
    alpha: Complex64,
    /// `iα`
    i_alpha: Complex64,
    /// `Re`-projection coefficient for the friction force, `iα²`.
    i_alpha2: Complex64,
    friction_prefactor: f64,
    cos: Vec<f64>,
    sin: Vec<f64>,
    sp: Vec<f64>,
    y: Vec<Complex64>,
    u: Vec<Complex64>,
    a_conj: Vec<Complex64>,
    b_conj: Vec<Complex64>,
}

impl Kernel {
    pub fn new(params: &PhysicalParams) -> Self {
        let n = params.n_atoms;
        let alpha = params.alpha().value();
        let i = Complex64::i();
        Kernel {
            n,
            w: params.w_pump,
            n_gamma_c: params.n_gamma_c,
            gamma_c: params.gamma_c(),
            alpha,
            i_alpha: i * alpha,
            i_alpha2: i * alpha * alpha,
            friction_prefactor: params.n_gamma_c * params.retardation_factor(),
            cos: vec![0.0; n],
            sin: vec![0.0; n],
            sp: vec![0.0; n],
            y: vec![ZERO; n],
            u: vec![ZERO; n],
            a_conj: vec![ZERO; n],
            b_conj: vec![ZERO; n],
        }
    }

    /// Evaluate `dC/dt` into `dc` and the forces into `force`.
    pub fn eval(&mut self, x: &[f64], p: &[f64], c: &[Complex64], mode: ForceMode, dc: &mut [Complex64], force: &mut [f64]) {
        let n = self.n;
        debug_assert_eq!(c.len(), n * n);
        let inv_n = 1.0 / n as f64;
        for j in 0..n {
            let (s, co) = x[j].sin_cos();
            self.sin[j] = s;
            self.cos[j] = co;
            self.sp[j] = s * p[j];
        }

        // y_j = (1/N) Σ_l cos_l C_lj = conj((1/N) Σ_l cos_l C_jl), likewise u_j.
        let need_u = mode.friction();
        for j in 0..n {
            let row = &c[j * n..(j + 1) * n];
            let (mut yr, mut yi) = (0.0, 0.0);
            if need_u {
                let (mut ur, mut ui) = (0.0, 0.0);
                for l in 0..n {
                    let v = row[l];
                    let cl = self.cos[l];
                    let sl = self.sp[l];
                    yr += cl * v.re;
                    yi += cl * v.im;
                    ur += sl * v.re;
                    ui += sl * v.im;
                }
                self.u[j] = Complex64::new(ur * inv_n, -ui * inv_n);
            } else {
                for l in 0..n {
                    let v = row[l];
                    let cl = self.cos[l];
                    yr += cl * v.re;
                    yi += cl * v.im;
                }
            }
            self.y[j] = Complex64::new(yr * inv_n, -yi * inv_n);
        }

        for j in 0..n {
            let mut f = 0.0;
            if mode.adiabatic() {
                f -= self.sin[j] * self.n_gamma_c * (self.alpha * self.y[j]).re;
            }
            if need_u {
                f -= self.friction_prefactor * self.sin[j] * (self.i_alpha2 * self.u[j]).re;
            }
            force[j] = f;
        }

        for j in 0..n {
            let cjj = c[j * n + j].re;
            let cos = self.cos[j];
            let a = Complex64::new(0.5 * self.w, 0.0) + self.i_alpha * (self.gamma_c * cos * cos * cjj);
            let b = self.i_alpha * (0.5 * self.n_gamma_c * cos * (2.0 * cjj - 1.0));
            self.a_conj[j] = a.conj();
            self.b_conj[j] = b.conj();
        }

        for j in 0..n {
            let cjj = c[j * n + j].re;
            dc[j * n + j] = Complex64::new(
                self.w * (1.0 - cjj) + self.n_gamma_c * (self.alpha * self.y[j]).im * self.cos[j],
                0.0,
            );
            let a_j = self.a_conj[j].conj();
            let b_j = self.b_conj[j].conj();
            let y_j_conj = self.y[j].conj();
            for l in (j + 1)..n {
                let d = -(a_j + self.a_conj[l]) * c[j * n + l] + b_j * self.y[l] + self.b_conj[l] * y_j_conj;
                dc[j * n + l] = d;
                dc[l * n + j] = d.conj();
            }
        }
    }

    /// Fill `d` (row-major) with the shot-noise covariance `D^{jl}`.
    pub fn diffusion_into(&mut self, x: &[f64], c: &[Complex64], d: &mut [f64]) {
        let n = self.n;
        for j in 0..n {
            self.sin[j] = x[j].sin();
        }
        for j in 0..n {
            let sj = self.gamma_c * self.sin[j];
            for l in 0..n {
                d[j * n + l] = sj * self.sin[l] * c[j * n + l].re;
            }
        }
    }
}

/// `dC/dt` of the cumulant equations at the given state.
pub fn cumulant_derivatives(state: &SemiclassicalState, params: &PhysicalParams) -> CorrelationMatrix {
    let n = state.n_atoms();
    let mut k = Kernel::new(params);
    let mut dc = vec![ZERO; n * n];
    let mut f = vec![0.0; n];
    k.eval(&state.x, &state.p, state.corr.as_slice(), ForceMode::Full, &mut dc, &mut f);
    CorrelationMatrix { n, data: dc }
}

/// Cavity forces on every atom (units `ħk ω_R`).
pub fn forces(state: &SemiclassicalState, params: &PhysicalParams, mode: ForceMode) -> Vec<f64> {
    let n = state.n_atoms();
    let mut k = Kernel::new(params);
    let mut dc = vec![ZERO; n * n];
    let mut f = vec![0.0; n];
    k.eval(&state.x, &state.p, state.corr.as_slice(), mode, &mut dc, &mut f);
    f
}

/// Shot-noise covariance `D^{jl} = Γ_C sin(x_j) sin(x_l) Re C_lj`.
pub fn diffusion_matrix(state: &SemiclassicalState, params: &PhysicalParams) -> DMatrix<f64> {
    let n = state.n_atoms();
    let mut k = Kernel::new(params);
    let mut d = vec![0.0; n * n];
    k.diffusion_into(&state.x, state.corr.as_slice(), &mut d);
    DMatrix::from_row_slice(n, n, &d)
}

/// Running counters of the noise factorization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseDiagnostics {
    pub factorizations: u64,
    pub clipped: u64,
    pub fallbacks: u64,
}

impl NoiseDiagnostics {
    pub fn merge(&mut self, other: &NoiseDiagnostics) {
        self.factorizations += other.factorizations;
        self.clipped += other.clipped;
        self.fallbacks += other.fallbacks;
    }
}

/// Reusable buffers for [`Stepper::step`].
#[derive(Debug, Clone)]
pub struct Stepper {
    kernel: Kernel,
    config: IntegrationConfig,
    k1: Vec<Complex64>,
    k2: Vec<Complex64>,
    c_pred: Vec<Complex64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    x_pred: Vec<f64>,
    p_pred: Vec<f64>,
    d: Vec<f64>,
    kick: Vec<f64>,
    normals: Vec<f64>,
    step_index: u64,
    pub diagnostics: NoiseDiagnostics,
}

impl Stepper {
    pub fn new(params: &PhysicalParams, config: &IntegrationConfig) -> Result<Self> {
        config.validate(params)?;
        let n = params.n_atoms;
        Ok(Stepper {
            kernel: Kernel::new(params),
            config: config.clone(),
            k1: vec![ZERO; n * n],
            k2: vec![ZERO; n * n],
            c_pred: vec![ZERO; n * n],
            f1: vec![0.0; n],
            f2: vec![0.0; n],
            x_pred: vec![0.0; n],
            p_pred: vec![0.0; n],
            d: vec![0.0; n * n],
            kick: vec![0.0; n],
            normals: Vec::with_capacity(n),
            step_index: 0,
            diagnostics: NoiseDiagnostics::default(),
        })
    }

    /// Advance by one step of `dt`.
    pub fn step<R: Rng + ?Sized>(&mut self, state: &mut SemiclassicalState, rng: &mut R) -> Result<()> {
        let n = state.n_atoms();
        let dt = self.config.dt;
        let mode = self.config.force_mode;
        let c = &mut state.corr.data;

        // Noise is evaluated at the pre-step state (Itô; D does not depend on p).
        let kick_now = self.config.noise_enabled && self.step_index % self.config.noise_stride as u64 == 0;
        if kick_now {
            self.kernel.diffusion_into(&state.x, c, &mut self.d);
            let factor = NoiseFactor::new(&self.d, n, self.config.factorization)
                .map_err(|e| annotate(e, self.step_index, state.t))?;
            self.diagnostics.factorizations += 1;
            self.diagnostics.clipped += factor.clipped as u64;
            self.diagnostics.fallbacks += factor.fell_back as u64;
            let h = dt * self.config.noise_stride as f64;
            factor.sample(h, rng, &mut self.kick, &mut self.normals);
        }

        self.kernel.eval(&state.x, &state.p, c, mode, &mut self.k1, &mut self.f1);
        match self.config.scheme {
            Scheme::EulerMaruyama => {
                for j in 0..n {
                    state.x[j] += dt * state.p[j] / MASS;
                    state.p[j] += dt * self.f1[j];
                }
                for (cv, k) in c.iter_mut().zip(&self.k1) {
                    *cv += k * dt;
                }
            }
            Scheme::Heun => {
                for j in 0..n {
                    self.x_pred[j] = state.x[j] + dt * state.p[j] / MASS;
                    self.p_pred[j] = state.p[j] + dt * self.f1[j];
                }
                for ((cp, cv), k) in self.c_pred.iter_mut().zip(c.iter()).zip(&self.k1) {
                    *cp = cv + k * dt;
                }
                self.kernel
                    .eval(&self.x_pred, &self.p_pred, &self.c_pred, mode, &mut self.k2, &mut self.f2);
                let half = 0.5 * dt;
                for j in 0..n {
                    state.x[j] += half * (state.p[j] + self.p_pred[j]) / MASS;
                    state.p[j] += half * (self.f1[j] + self.f2[j]);
                }
                for ((cv, a), b) in c.iter_mut().zip(&self.k1).zip(&self.k2) {
                    *cv += (a + b) * half;
                }
            }
        }
        if kick_now {
            for (p, k) in state.p.iter_mut().zip(&self.kick) {
                *p += k;
            }
        }

        // Off-diagonal pairs are updated as exact conjugate mirrors, so only the
        // diagonal needs its imaginary part cleared before clamping populations.
        for j in 0..n {
            let v = &mut c[j * n + j];
            v.im = 0.0;
            if !v.re.is_finite() || !state.p[j].is_finite() || !state.x[j].is_finite() {
                return Err(Error::NumericalBlowup {
                    step: self.step_index,
                    t: state.t,
                    trajectory: None,
                    what: format!("non-finite state for atom {j}"),
                });
            }
            v.re = v.re.clamp(0.0, 1.0);
        }
        self.step_index += 1;
        state.t = self.step_index as f64 * dt;
        Ok(())
    }
}

fn annotate(e: Error, step: u64, t: f64) -> Error {
    match e {
        Error::PsdViolation { worst, largest } => Error::NumericalBlowup {
            step,
            t,
            trajectory: None,
            what: format!("noise covariance not PSD (worst eigenvalue {worst:e}, largest {largest:e})"),
        },
        other => other,
    }
}

/// Advance one step with freshly allocated buffers; prefer [`Stepper`] in loops.
pub fn step<R: Rng + ?Sized>(
    state: &SemiclassicalState,
    params: &PhysicalParams,
    config: &IntegrationConfig,
    rng: &mut R,
) -> Result<SemiclassicalState> {
    let mut s = state.clone();
    let mut stepper = Stepper::new(params, config)?;
    stepper.step_index = (state.t / config.dt).round() as u64;
    stepper.step(&mut s, rng)?;
    Ok(s)
}

/// Channels recorded per trajectory by the semiclassical engine.
pub const CHANNELS: [&str; 3] = ["p2", "p4", "xdagx"];

/// Integrate one trajectory from a prepared state, recording observables.
pub fn run_trajectory(
    mut state: SemiclassicalState,
    params: &PhysicalParams,
    config: &IntegrationConfig,
    rng: &mut RngStream,
) -> Result<(TrajectoryRecord, SemiclassicalState)> {
    let mut stepper = Stepper::new(params, config)?;
    let n_steps = config.n_steps();
    let every = config.sample_every();
    let mut record = TrajectoryRecord::new(CHANNELS.len());
    let snap_steps: Vec<u64> = config
        .snapshot_times
        .iter()
        .map(|t| (t / config.dt).round() as u64)
        .collect();
    let observe = |s: &SemiclassicalState, step: u64, rec: &mut TrajectoryRecord| {
        if step % every == 0 {
            let n = s.n_atoms() as f64;
            let p2 = s.p.iter().map(|p| p * p).sum::<f64>() / n;
            let p4 = s.p.iter().map(|p| (p * p) * (p * p)).sum::<f64>() / n;
            rec.push(&[p2, p4, s.xdagx()]);
        }
        if snap_steps.contains(&step) {
            rec.snapshots.push(ensemble::PhaseSnapshot {
                t: s.t,
                x: s.x.clone(),
                p: s.p.clone(),
            });
        }
    };
    observe(&state, 0, &mut record);
    for step in 1..=n_steps {
        stepper.step(&mut state, rng)?;
        observe(&state, step, &mut record);
    }
    record.noise = stepper.diagnostics;
    Ok((record, state))
}

/// Sample times produced by [`run_trajectory`].
pub fn sample_times(config: &IntegrationConfig) -> Vec<f64> {
    let every = config.sample_every();
    (0..=config.n_steps())
        .filter(|s| s % every == 0)
        .map(|s| s as f64 * config.dt)
        .collect()
}

/// Run `n_traj` independent trajectories and reduce them to ensemble statistics.
pub fn simulate_ensemble(
    params: &PhysicalParams,
    config: &IntegrationConfig,
    ic: &InitialCondition,
    n_traj: usize,
    master_seed: u64,
    options: &EnsembleOptions,
) -> Result<EnsembleOutput> {
    params.validate()?;
    ic.validate(params.n_atoms)?;
    let warnings = config.validate(params)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let records = ensemble::run_parallel(n_traj, options.threads, |i| {
        let mut rng = rng_stream(master_seed, i as u64);
        let state = ic.semiclassical_state(params.n_atoms, &mut rng);
        run_trajectory(state, params, config, &mut rng)
            .map(|(rec, _)| rec)
            .map_err(|e| e.in_trajectory(i))
    })?;
    let mut out = ensemble::reduce(sample_times(config), &CHANNELS, records, "semiclassical");
    out.warnings = warnings;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Coupling;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn params(n: usize) -> PhysicalParams {
        PhysicalParams::new(n, 780.0, 390.0, 10.0, Coupling::CollectiveLinewidth(40.0)).unwrap()
    }

    fn state(x: Vec<f64>, p: Vec<f64>, corr: CorrelationMatrix) -> SemiclassicalState {
        SemiclassicalState::new(x, p, corr).unwrap()
    }

    #[test]
    fn excited_antinode_decays_at_purcell_rate() {
        let n = 6;
        let pr = params(n);
        let s = state(vec![0.0; n], vec![0.0; n], CorrelationMatrix::identity(n));
        let dc = cumulant_derivatives(&s, &pr);
        for j in 0..n {
            assert_relative_eq!(dc.get(j, j).re, -pr.gamma_c(), max_relative = 1e-14);
        }
    }

    #[test]
    fn atoms_at_nodes_are_stationary() {
        let n = 5;
        let s = state(vec![FRAC_PI_2; n], vec![0.0; n], CorrelationMatrix::identity(n));
        let dc = cumulant_derivatives(&s, &params(n));
        assert!(dc.as_slice().iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn half_population_diagonal_rate() {
        let n = 4;
        let pr = params(n);
        let x = vec![0.3, 1.1, 2.0, 4.4];
        let mut c = CorrelationMatrix::zeros(n);
        for j in 0..n {
            c.set(j, j, Complex64::new(0.5, 0.0));
        }
        let s = state(x.clone(), vec![0.0; n], c);
        let dc = cumulant_derivatives(&s, &pr);
        for j in 0..n {
            let expect = pr.w_pump / 2.0 + pr.n_gamma_c * pr.alpha().value().im * x[j].cos().powi(2) / (2.0 * n as f64);
            assert_relative_eq!(dc.get(j, j).re, expect, max_relative = 1e-13);
        }
    }

    #[test]
    fn derivative_is_hermitian() {
        let n = 7;
        let pr = params(n);
        let mut c = CorrelationMatrix::identity(n);
        for j in 0..n {
            for l in (j + 1)..n {
                let v = Complex64::new(0.01 * (j + l) as f64, 0.02 * (j as f64 - l as f64));
                c.set(j, l, v);
                c.set(l, j, v.conj());
            }
        }
        let x: Vec<f64> = (0..n).map(|j| 0.7 * j as f64).collect();
        let s = state(x, vec![1.0; n], c);
        let dc = cumulant_derivatives(&s, &pr);
        assert!(dc.hermiticity_error() < 1e-15);
    }

    #[test]
    fn force_reference_values() {
        let n = 3;
        let pr = params(n);
        let zero = state(vec![0.4, 1.0, 2.0], vec![1.0, -1.0, 2.0], CorrelationMatrix::zeros(n));
        assert!(forces(&zero, &pr, ForceMode::Full).iter().all(|f| *f == 0.0));
        let at_zero = state(vec![0.0; n], vec![1.0; n], CorrelationMatrix::identity(n));
        assert!(forces(&at_zero, &pr, ForceMode::Full).iter().all(|f| f.abs() < 1e-15));

        // Single atom, Δ = κ/2: F⁽⁰⁾ = −Γ_C sin(π/4) cos(π/4) Re α = −Γ_C/2.
        let one = params(1);
        let s = state(vec![FRAC_PI_4], vec![0.0], CorrelationMatrix::identity(1));
        let f = forces(&s, &one, ForceMode::AdiabaticOnly);
        assert_relative_eq!(f[0], -one.gamma_c() / 2.0, max_relative = 1e-14);
        assert_eq!(forces(&s, &one, ForceMode::FrictionOnly)[0], 0.0);
    }

    #[test]
    fn adiabatic_force_matches_potential_gradient() {
        // Single atom with C = 1: F⁽⁰⁾ = −NΓ_C Re(α) sin x cos x = −∂_x [−NΓ_C Re(α) cos² x / 2].
        let pr = params(1);
        let v = |x: f64| -pr.n_gamma_c * pr.alpha().detuning_ratio() * x.cos().powi(2) / 2.0;
        for &x in &[0.2, 0.9, 2.5] {
            let s = state(vec![x], vec![0.0], CorrelationMatrix::identity(1));
            let f = forces(&s, &pr, ForceMode::AdiabaticOnly)[0];
            let h = 1e-5;
            let grad = (v(x + h) - v(x - h)) / (2.0 * h);
            assert_relative_eq!(f, -grad, max_relative = 1e-8);
        }
    }

    #[test]
    fn full_force_is_sum_of_parts() {
        let n = 5;
        let pr = params(n);
        let mut c = CorrelationMatrix::identity(n);
        c.set(0, 3, Complex64::new(0.2, 0.1));
        c.set(3, 0, Complex64::new(0.2, -0.1));
        let s = state(vec![0.1, 0.8, 1.9, 2.5, 5.0], vec![1.0, -2.0, 0.5, 3.0, -0.1], c);
        let full = forces(&s, &pr, ForceMode::Full);
        let a = forces(&s, &pr, ForceMode::AdiabaticOnly);
        let b = forces(&s, &pr, ForceMode::FrictionOnly);
        for j in 0..n {
            assert_eq!(full[j], a[j] + b[j]);
        }
    }

    #[test]
    fn friction_damps_excited_atom_blue_detuned() {
        let pr = params(1);
        let s = state(vec![1.0], vec![2.0], CorrelationMatrix::identity(1));
        let f = forces(&s, &pr, ForceMode::FrictionOnly)[0];
        // iα² = 2 for Δ = κ/2.
        let expect = -pr.n_gamma_c * pr.retardation_factor() * 1.0f64.sin().powi(2) * 2.0 * 2.0;
        assert_relative_eq!(f, expect, max_relative = 1e-14);
        assert!(f < 0.0);
    }

    #[test]
    fn diffusion_matrix_values() {
        let n = 2;
        let pr = params(n);
        let s = state(vec![0.0, 0.0], vec![0.0; 2], CorrelationMatrix::identity(2));
        assert!(diffusion_matrix(&s, &pr).iter().all(|v| *v == 0.0));

        let s = state(vec![0.4, 1.3], vec![0.0; 2], CorrelationMatrix::identity(2));
        let d = diffusion_matrix(&s, &pr);
        assert_relative_eq!(d[(0, 0)], pr.gamma_c() * 0.4f64.sin().powi(2));
        assert_eq!(d[(0, 1)], 0.0);

        let mut c = CorrelationMatrix::identity(2);
        c.set(0, 1, Complex64::new(0.5, 0.3));
        c.set(1, 0, Complex64::new(0.5, -0.3));
        let s = state(vec![FRAC_PI_2; 2], vec![0.0; 2], c);
        let d = diffusion_matrix(&s, &pr);
        let g = pr.gamma_c();
        assert_relative_eq!(d[(0, 0)], g, max_relative = 1e-15);
        assert_relative_eq!(d[(0, 1)], 0.5 * g, max_relative = 1e-15);
        assert_relative_eq!(d[(1, 0)], 0.5 * g, max_relative = 1e-15);
        assert_relative_eq!(d[(1, 1)], g, max_relative = 1e-15);
    }

    #[test]
    fn ballistic_motion_without_forces() {
        let n = 3;
        let pr = params(n);
        // C = 0 removes every force at the start of the step; noise off.
        let s = state(vec![0.1, 2.0, 4.0], vec![1.5, -0.5, 0.0], CorrelationMatrix::zeros(n));
        let cfg = IntegrationConfig {
            dt: 0.01,
            scheme: Scheme::EulerMaruyama,
            noise_enabled: false,
            ..Default::default()
        };
        let mut rng = rng_stream(0, 0);
        let next = step(&s, &pr, &cfg, &mut rng).unwrap();
        for j in 0..n {
            assert_relative_eq!(next.x[j], s.x[j] + s.p[j] / MASS * 0.01, max_relative = 1e-14);
            assert_eq!(next.p[j], s.p[j]);
        }
    }

    fn smooth_state(n: usize) -> SemiclassicalState {
        let x: Vec<f64> = (0..n).map(|j| 0.37 + 1.3 * j as f64).collect();
        let p: Vec<f64> = (0..n).map(|j| 1.0 - 0.4 * j as f64).collect();
        state(x, p, CorrelationMatrix::identity(n))
    }

    fn integrate(s0: &SemiclassicalState, pr: &PhysicalParams, scheme: Scheme, dt: f64, t: f64) -> SemiclassicalState {
        let cfg = IntegrationConfig {
            dt,
            t_end: t,
            scheme,
            noise_enabled: false,
            ..Default::default()
        };
        let mut st = Stepper::new(pr, &cfg).unwrap();
        let mut s = s0.clone();
        let mut rng = rng_stream(0, 0);
        for _ in 0..cfg.n_steps() {
            st.step(&mut s, &mut rng).unwrap();
        }
        s
    }

    fn distance(a: &SemiclassicalState, b: &SemiclassicalState) -> f64 {
        let dx = a.x.iter().zip(&b.x).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        let dp = a.p.iter().zip(&b.p).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max);
        let dc = a
            .corr
            .as_slice()
            .iter()
            .zip(b.corr.as_slice())
            .map(|(u, v)| (u - v).norm())
            .fold(0.0, f64::max);
        dx.max(dp).max(dc)
    }

    #[test]
    fn heun_converges_at_second_order() {
        let pr = params(4);
        let s0 = smooth_state(4);
        let t = 0.4;
        let reference = integrate(&s0, &pr, Scheme::Heun, 1e-4, t);
        let e1 = distance(&integrate(&s0, &pr, Scheme::Heun, 4e-3, t), &reference);
        let e2 = distance(&integrate(&s0, &pr, Scheme::Heun, 2e-3, t), &reference);
        let ratio = e1 / e2;
        assert!((3.2..4.8).contains(&ratio), "Heun error ratio {ratio}");
        let f1 = distance(&integrate(&s0, &pr, Scheme::EulerMaruyama, 4e-3, t), &reference);
        let f2 = distance(&integrate(&s0, &pr, Scheme::EulerMaruyama, 2e-3, t), &reference);
        let ratio = f1 / f2;
        assert!((1.7..2.3).contains(&ratio), "Euler error ratio {ratio}");
    }

    #[test]
    fn noisy_steps_keep_invariants() {
        let n = 12;
        let pr = params(n);
        let cfg = IntegrationConfig {
            dt: 2e-3,
            ..Default::default()
        };
        let mut rng = rng_stream(3, 1);
        let ic = InitialCondition::default();
        let mut s = ic.semiclassical_state(n, &mut rng);
        let mut st = Stepper::new(&pr, &cfg).unwrap();
        for _ in 0..2000 {
            st.step(&mut s, &mut rng).unwrap();
            assert!(s.corr.hermiticity_error() < 1e-10);
            for j in 0..n {
                let v = s.corr.get(j, j).re;
                assert!((-1e-8..=1.0 + 1e-8).contains(&v));
            }
        }
        assert!(s.corr.min_eigenvalue() > -1e-8);
        assert_eq!(st.diagnostics.factorizations, 2000);
    }

    #[test]
    fn nodes_stay_decoupled() {
        let n = 8;
        let pr = params(n);
        let ic = InitialCondition {
            p2_initial: 0.0,
            placement: Placement::Fixed(vec![FRAC_PI_2; n]),
            ..Default::default()
        };
        let cfg = IntegrationConfig {
            dt: 2e-3,
            t_end: 2.0,
            noise_enabled: false,
            ..Default::default()
        };
        let out = simulate_ensemble(&pr, &cfg, &ic, 2, 9, &EnsembleOptions::default()).unwrap();
        let xx = out.series.channel("xdagx").unwrap();
        assert!(xx.iter().all(|v| v.abs() < 1e-20));
    }

    #[test]
    fn antinode_synchronization_thresholds() {
        // Frozen atoms at antinodes reduce to the position-independent model.
        let n = 20;
        let run = |w: f64| {
            let pr = PhysicalParams::new(n, 780.0, 390.0, w, Coupling::CollectiveLinewidth(40.0)).unwrap();
            let mut s = state(vec![0.0; n], vec![0.0; n], CorrelationMatrix::identity(n));
            let cfg = IntegrationConfig {
                dt: 1e-3,
                noise_enabled: false,
                ..Default::default()
            };
            let mut st = Stepper::new(&pr, &cfg).unwrap();
            let mut rng = rng_stream(0, 0);
            let mut trace = Vec::new();
            for i in 0..20_000 {
                st.step(&mut s, &mut rng).unwrap();
                if i % 100 == 0 {
                    trace.push(s.xdagx());
                }
            }
            trace
        };
        let sync = run(10.0);
        assert!(sync.last().unwrap() > &0.05, "w = NΓ_C/4 should synchronize: {:?}", sync.last());
        let late = &sync[sync.len() - 20..];
        assert!((late[late.len() - 1] - late[0]).abs() < 1e-3);

        let off = run(80.0);
        let last = *off.last().unwrap();
        assert!(last < 2.0 / n as f64, "w = 2NΓ_C should not synchronize: {last}");
        let tail = &off[off.len() - 10..];
        assert!(tail[tail.len() - 1] <= tail[0] + 1e-9);
    }

    #[test]
    fn blowup_is_reported() {
        let n = 2;
        let pr = params(n);
        let mut s = state(vec![0.3, 0.7], vec![f64::NAN, 0.0], CorrelationMatrix::identity(n));
        let cfg = IntegrationConfig {
            noise_enabled: false,
            ..Default::default()
        };
        let mut st = Stepper::new(&pr, &cfg).unwrap();
        let err = st.step(&mut s, &mut rng_stream(0, 0)).unwrap_err();
        assert!(matches!(err, Error::NumericalBlowup { step: 0, .. }));
        assert!(format!("{}", err.in_trajectory(4)).contains("trajectory 4"));
        let _ = PI;
    }
}
