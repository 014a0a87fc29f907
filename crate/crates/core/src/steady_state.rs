//! Analytics of the synchronized asymptotic regime.
//!
//! With the spins adiabatically eliminated every atom sees the rescaled field
//! `ξ(x) = (NΓ_C/w) X cos(x)`. All formulas here use the real gauge `X = |X|`
//! and write `K = (NΓ_C/w)² |X|²`, so `|ξ|² = K cos²x` and the products
//! `tan²x |ξ|²` that appear in friction and diffusion become `K sin²x`, which
//! is finite everywhere.

use nalgebra::{Matrix2, Matrix3, Vector3};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::model::{Alpha, PhysicalParams};

/// Points of the midpoint rule used for averages over one wavelength.
pub const QUADRATURE_POINTS: usize = 1024;

const BISECTION_TOL: f64 = 1e-12;
const BISECTION_MAX_ITER: usize = 200;

/// `(1/2π) ∫₀^{2π} f(x) dx` by the `n`-point midpoint rule.
pub fn wavelength_average<F: Fn(f64) -> f64>(f: F, n: usize) -> f64 {
    let h = TAU / n as f64;
    let values: Vec<f64> = (0..n).map(|k| f((k as f64 + 0.5) * h)).collect();
    crate::sum::pairwise_sum(&values) / n as f64
}

/// `|X|²` for atoms uniformly spread over the wavelength:
/// `(w/2NΓ_C)(1 − (w/NΓ_C)(1/2 + √(NΓ_C/w + 1/4)))`, clipped at zero.
pub fn solve_x2_uniform(w: f64, n_gamma_c: f64) -> f64 {
    if !(w > 0.0) {
        return 0.0;
    }
    let r = w / n_gamma_c;
    let v = r / 2.0 * (1.0 - r * (0.5 + (1.0 / r + 0.25).sqrt()));
    v.max(0.0)
}

/// `|X|²` for atoms pinned at `cos²(x) = δ²`: `(w/2NΓ_C)(1 − w/(δ²NΓ_C))`, clipped at zero.
pub fn solve_x2_pinned(w: f64, n_gamma_c: f64, delta_pin: f64) -> f64 {
    if !(w > 0.0) || delta_pin == 0.0 {
        return 0.0;
    }
    let r = w / n_gamma_c;
    (r / 2.0 * (1.0 - r / (delta_pin * delta_pin))).max(0.0)
}

/// Self-consistent `|X|²` for an empirical set of positions.
///
/// Dividing `(1/N) Σ |ξ_j|²/(1+2|ξ_j|²) = (NΓ_C/w)|X|²` by `|X|²` leaves a
/// residual that is strictly decreasing in `|X|²`; the nonzero root exists iff
/// the residual is positive at zero.
pub fn solve_x2_density(w: f64, n_gamma_c: f64, positions: &[f64]) -> Result<f64> {
    if !(w > 0.0 && w.is_finite()) {
        return Err(Error::invalid(format!("w must be positive, got {w}")));
    }
    if !(n_gamma_c > 0.0) {
        return Err(Error::invalid("collective linewidth must be positive"));
    }
    if positions.is_empty() {
        return Err(Error::invalid("at least one position is required"));
    }
    let r = n_gamma_c / w;
    let c2: Vec<f64> = positions.iter().map(|x| x.cos().powi(2)).collect();
    let n = c2.len() as f64;
    let residual = |y: f64| {
        let terms: Vec<f64> = c2.iter().map(|c| r * r * c / (1.0 + 2.0 * r * r * y * c)).collect();
        crate::sum::pairwise_sum(&terms) / n - r
    };
    if residual(0.0) <= 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    if residual(hi) >= 0.0 {
        return Ok(hi);
    }
    for _ in 0..BISECTION_MAX_ITER {
        if hi - lo < BISECTION_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if residual(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `K = (NΓ_C/w)² |X|²`.
#[inline]
fn field_scale(x2: f64, w: f64, n_gamma_c: f64) -> f64 {
    (n_gamma_c / w).powi(2) * x2
}

/// Stationary dipole and inversion, `s⁰ = ξ/(1+2|ξ|²)`, `z⁰ = 1/(1+2|ξ|²)`.
pub fn profiles_s0_z0(x: &[f64], x2: f64, w: f64, n_gamma_c: f64) -> (Vec<f64>, Vec<f64>) {
    let k = field_scale(x2, w, n_gamma_c);
    let sk = k.sqrt();
    x.iter()
        .map(|x| {
            let xi = sk * x.cos();
            let z = 1.0 / (1.0 + 2.0 * xi * xi);
            (xi * z, z)
        })
        .unzip()
}

/// Rotating-frame frequency `ω₀ = wΔ/κ`.
pub fn omega0(w: f64, delta: f64, kappa: f64) -> f64 {
    w * delta / kappa
}

/// Per-atom effective potential `−(w/4)(Δ/(κ/2)) log(1 + 2|ξ(x)|²)`.
pub fn v_eff(x: f64, x2: f64, w: f64, delta: f64, kappa: f64, n_gamma_c: f64) -> f64 {
    let u = field_scale(x2, w, n_gamma_c) * x.cos().powi(2);
    -0.25 * w * (2.0 * delta / kappa) * (2.0 * u).ln_1p()
}

/// `|ξ(x₀)|² = (√(2|α|²+1) − 1)/(2|α|²)`, where the friction changes sign.
pub fn friction_threshold(alpha: Alpha) -> f64 {
    let a2 = alpha.norm_sqr();
    ((2.0 * a2 + 1.0).sqrt() - 1.0) / (2.0 * a2)
}

/// Positions in `[0, π]` where the friction changes sign, mirrored about `π/2`.
pub fn x0_roots(x2: f64, w: f64, delta: f64, kappa: f64, n_gamma_c: f64) -> Result<Vec<f64>> {
    let alpha = Alpha::new(delta, kappa)?;
    let k = field_scale(x2, w, n_gamma_c);
    if !(k > 0.0) {
        return Ok(Vec::new());
    }
    let ratio = friction_threshold(alpha) / k;
    if ratio > 1.0 {
        return Ok(Vec::new());
    }
    let x = ratio.sqrt().acos();
    Ok(vec![x, std::f64::consts::PI - x])
}

/// `E₀ = −(w/4) log(1 + 2|ξ(x₀)|²)`.
pub fn separatrix_energy(x2: f64, params: &PhysicalParams) -> Result<f64> {
    let roots = x0_roots(x2, params.w_pump, params.delta, params.kappa, params.n_gamma_c)?;
    if roots.is_empty() {
        return Err(Error::NoSeparatrix);
    }
    Ok(-0.25 * params.w_pump * (2.0 * friction_threshold(params.alpha())).ln_1p())
}

/// Position-dependent quantities at fixed `K` and detuning ratio `a = Δ/(κ/2)`.
#[derive(Debug, Clone, Copy)]
struct Local {
    a: f64,
    w: f64,
    sin: f64,
    cos: f64,
    sqrt_k: f64,
    /// `|ξ|²`
    u: f64,
    /// `tan²x |ξ|² = K sin²x`
    t2u: f64,
}

impl Local {
    fn new(x: f64, x2: f64, w: f64, a: f64, n_gamma_c: f64) -> Self {
        let k = field_scale(x2, w, n_gamma_c);
        let (sin, cos) = x.sin_cos();
        Local {
            a,
            w,
            sin,
            cos,
            sqrt_k: k.sqrt(),
            u: k * cos * cos,
            t2u: k * sin * sin,
        }
    }

    fn from_params(x: f64, x2: f64, params: &PhysicalParams) -> Self {
        Self::new(x, x2, params.w_pump, params.alpha().detuning_ratio(), params.n_gamma_c)
    }

    fn gamma(&self) -> f64 {
        let (a, u) = (self.a, self.u);
        let f_delta = (1.0 - 2.0 * u) / (1.0 + a * a) - 2.0 * u * u;
        8.0 * self.t2u / (1.0 + 2.0 * u).powi(3) * a * f_delta
    }

    fn two_d(&self) -> f64 {
        let (a2, u) = (self.a * self.a, self.u);
        let q = 1.0 + 2.0 * u;
        let bracket = 1.0 + 2.0 * a2 * u / q - 2.0 * a2 / (1.0 + a2) * u / (q * q) * (5.0 + a2 + 4.0 * (a2 + 1.0) * u) / q;
        0.5 * self.w * self.t2u * bracket
    }
}

/// Friction coefficient `γ(x)`; `γ > 0` damps.
pub fn gamma_coeff(x: f64, x2: f64, params: &PhysicalParams) -> f64 {
    Local::from_params(x, x2, params).gamma()
}

/// Retarded force `F_ret = −γ(x) p`.
pub fn friction(x: f64, p: f64, x2: f64, params: &PhysicalParams) -> f64 {
    -gamma_coeff(x, x2, params) * p
}

/// First-order retardation corrections, defined by `s = s⁰ + (p/m) s⁽¹⁾`,
/// `z = z⁰ + (p/m) z⁽¹⁾` (real gauge).
pub fn s1_z1(x: f64, x2: f64, params: &PhysicalParams) -> (Complex64, f64) {
    let l = Local::from_params(x, x2, params);
    let (a, u, w) = (l.a, l.u, l.w);
    let q = 1.0 + 2.0 * u;
    // tan(x)|ξ|² and tan(x)ξ in their finite forms.
    let tan_u = l.sqrt_k * l.sin * l.sqrt_k * l.cos;
    let tan_xi = l.sqrt_k * l.sin;
    let xi = l.sqrt_k * l.cos;
    let z1 = -4.0 * tan_u / (w * q.powi(3)) + 4.0 / w * (1.0 - a * a) / (1.0 + a * a) * tan_u * (2.0 * u - 1.0) / q.powi(3);
    let i_alpha_conj = Complex64::i() * params.alpha().value().conj();
    let s1 = xi * z1 + (2.0 / w) / i_alpha_conj * tan_xi * (2.0 * u - 1.0) / (q * q);
    (s1, z1)
}

/// Momentum diffusion, the closed-form quantity `2D(x)` in `(ħk)² ω_R`.
pub fn diffusion_closed(x: f64, x2: f64, params: &PhysicalParams) -> f64 {
    Local::from_params(x, x2, params).two_d()
}

/// `2D(x)` from the quantum regression theorem for a single driven spin.
///
/// With `v = (σ, σ†, σ^z)` obeying `dv/dt = Ω v + b + noise`, the symmetrized
/// force correlation integrates to `c · (−Ω⁻¹) · ½<{F, δv}>`, where
/// `F = c · v` is the force operator and the equal-time products are taken in
/// the stationary state `v_st = −Ω⁻¹ b`.
pub fn diffusion_oracle(x: f64, x2: f64, params: &PhysicalParams) -> Result<f64> {
    let w = params.w_pump;
    let alpha = params.alpha().value();
    let k = field_scale(x2, w, params.n_gamma_c);
    let xi = Complex64::new(k.sqrt() * x.cos(), 0.0);
    let i = Complex64::i();
    let hw = 0.5 * w;
    let c = |v: f64| Complex64::new(v, 0.0);
    let omega = Matrix3::new(
        i * hw * alpha.conj(),
        c(0.0),
        -i * hw * alpha.conj() * xi,
        c(0.0),
        -i * hw * alpha,
        i * hw * alpha * xi.conj(),
        -i * w * alpha * xi.conj(),
        i * w * alpha.conj() * xi,
        c(-w),
    );
    let inv = omega.try_inverse().ok_or(Error::SingularDrift)?;
    let v_st = -(inv * Vector3::new(c(0.0), c(0.0), c(w)));
    let (s, z) = (v_st[0], v_st[2].re);

    // Basis (e, g); σ = |g><e|.
    let rho = Matrix2::new(c(0.5 * (1.0 + z)), s, s.conj(), c(0.5 * (1.0 - z)));
    let sigma = Matrix2::new(c(0.0), c(0.0), c(1.0), c(0.0));
    let sigma_dag = sigma.adjoint();
    let sigma_z = Matrix2::new(c(1.0), c(0.0), c(0.0), c(-1.0));
    let ops = [sigma, sigma_dag, sigma_z];

    // F = A σ + A* σ†, A = −(w/2) α ξ* tan(x) with tan(x) ξ* = √K sin(x).
    let a = -hw * alpha * k.sqrt() * x.sin();
    let coef = Vector3::new(a, a.conj(), c(0.0));
    let force = sigma * a + sigma_dag * a.conj();
    let mean = |m: &Matrix2<Complex64>| (m * rho).trace();
    let f_mean = mean(&force);
    let corr = Vector3::from_fn(|j, _| {
        let v = &ops[j];
        0.5 * (mean(&(force * v)) + mean(&(v * force))) - f_mean * mean(v)
    });
    Ok((coef.transpose() * (-inv) * corr)[(0, 0)].re)
}

/// Small-field limit of [`p2_infinity`], `w(1 + a²)/(16a)`.
fn p2_small_field(w: f64, a: f64) -> f64 {
    if a > 0.0 {
        w * (1.0 + a * a) / (16.0 * a)
    } else {
        f64::INFINITY
    }
}

/// Fluctuation–dissipation estimate `<p²>_∞ = avg(2D)/avg(γ)` for a uniform density.
///
/// Returns `+∞` when the averaged friction does not damp.
pub fn p2_infinity(w: f64, delta: f64, kappa: f64, n_gamma_c: f64) -> Result<f64> {
    if !(w > 0.0) || !(n_gamma_c > 0.0) {
        return Err(Error::invalid("w and NΓ_C must be positive"));
    }
    let a = Alpha::new(delta, kappa)?.detuning_ratio();
    let x2 = solve_x2_uniform(w, n_gamma_c);
    if x2 <= 0.0 {
        return Ok(p2_small_field(w, a));
    }
    let d = wavelength_average(|x| Local::new(x, x2, w, a, n_gamma_c).two_d(), QUADRATURE_POINTS);
    let g = wavelength_average(|x| Local::new(x, x2, w, a, n_gamma_c).gamma(), QUADRATURE_POINTS);
    Ok(if g > 0.0 { d / g } else { f64::INFINITY })
}

/// Grid for [`sweep_optimal`]; frequencies in `ω_R`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub kappa: f64,
    pub n_gamma_c: f64,
    pub deltas: Vec<f64>,
    pub w_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub deltas: Vec<f64>,
    pub w_values: Vec<f64>,
    /// `p2[i][k]` at `deltas[i]`, `w_values[k]`.
    pub p2: Vec<Vec<f64>>,
    pub w_min: Vec<f64>,
    pub p2_min: Vec<f64>,
}

/// Vertex of the parabola through three points, if it opens upward.
pub fn parabola_vertex(x: [f64; 3], y: [f64; 3]) -> Option<f64> {
    let d1 = (y[1] - y[0]) / (x[1] - x[0]);
    let d2 = (y[2] - y[1]) / (x[2] - x[1]);
    let curv = (d2 - d1) / (x[2] - x[0]);
    if !(curv > 0.0) {
        return None;
    }
    Some(0.5 * (x[0] + x[1]) - d1 / (2.0 * curv))
}

/// Minimum of `f` over `grid`, refined by one parabolic step around the discrete minimum.
///
/// The refined point is accepted only when it lies inside the bracket and improves on the grid.
pub fn refine_minimum<F: Fn(f64) -> f64>(grid: &[f64], values: &[f64], f: F) -> Option<(f64, f64)> {
    let (imin, &vmin) = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let mut best = (grid[imin], vmin);
    if imin > 0 && imin + 1 < grid.len() && values[imin - 1].is_finite() && values[imin + 1].is_finite() {
        let xs = [grid[imin - 1], grid[imin], grid[imin + 1]];
        let ys = [values[imin - 1], values[imin], values[imin + 1]];
        if let Some(xv) = parabola_vertex(xs, ys) {
            if xv > xs[0] && xv < xs[2] {
                let yv = f(xv);
                if yv < best.1 {
                    best = (xv, yv);
                }
            }
        }
    }
    Some(best)
}

/// For each detuning, the pump rate minimizing `<p²>_∞` and the minimum itself.
pub fn sweep_optimal(grid: &SweepGrid) -> Result<SweepTable> {
    if grid.deltas.is_empty() || grid.w_values.is_empty() {
        return Err(Error::invalid("sweep grid must be non-empty"));
    }
    let rows: Vec<Result<(Vec<f64>, f64, f64)>> = grid
        .deltas
        .par_iter()
        .map(|&delta| {
            let eval = |w: f64| p2_infinity(w, delta, grid.kappa, grid.n_gamma_c).unwrap_or(f64::NAN);
            let row: Vec<f64> = grid.w_values.iter().map(|&w| eval(w)).collect();
            let (w_min, p_min) = refine_minimum(&grid.w_values, &row, eval).unwrap_or((f64::NAN, f64::INFINITY));
            Ok((row, w_min, p_min))
        })
        .collect();
    let mut table = SweepTable {
        deltas: grid.deltas.clone(),
        w_values: grid.w_values.clone(),
        p2: Vec::new(),
        w_min: Vec::new(),
        p2_min: Vec::new(),
    };
    for r in rows {
        let (row, w_min, p_min) = r?;
        table.p2.push(row);
        table.w_min.push(w_min);
        table.p2_min.push(p_min);
    }
    Ok(table)
}

/// Population inversion of the single-atom-laser comparison model,
/// `z_N = (κw + NΓw − w√((κ+NΓ)² − 4κNΓ)) / (2NΓw)`.
pub fn salzburger_zn(w: f64, kappa: f64, n_gamma: f64) -> Result<f64> {
    if !(n_gamma > 0.0) || !(w > 0.0) {
        return Err(Error::invalid("NΓ and w must be positive"));
    }
    let disc = ((kappa + n_gamma).powi(2) - 4.0 * kappa * n_gamma).max(0.0);
    Ok((kappa * w + n_gamma * w - w * disc.sqrt()) / (2.0 * n_gamma * w))
}

/// Emission rate `Γ = w g²/(w² + Δ²)` entering [`salzburger_zn`].
pub fn salzburger_gamma(w: f64, g: f64, delta: f64) -> f64 {
    w * g * g / (w * w + delta * delta)
}

/// Density assumption behind a steady-state solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Uniform,
    /// All atoms at `cos²x = δ²`.
    Pinned(f64),
    EmpiricalDensity(Vec<f64>),
}

/// Order parameter and spatial profiles on a grid over one wavelength.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyStateSolution {
    pub x2: f64,
    pub omega0: f64,
    pub regime: Regime,
    pub x: Vec<f64>,
    pub s0: Vec<f64>,
    pub z0: Vec<f64>,
    pub v_eff: Vec<f64>,
    pub gamma: Vec<f64>,
    /// The closed-form `2D(x)`.
    pub diffusion: Vec<f64>,
}

impl SteadyStateSolution {
    /// Solve for `|X|²` and tabulate profiles on `grid_points` points of `[0, 2π]`.
    pub fn solve(params: &PhysicalParams, regime: Regime, grid_points: usize) -> Result<Self> {
        params.validate()?;
        if grid_points < 2 {
            return Err(Error::invalid("grid needs at least 2 points"));
        }
        let (w, ngc) = (params.w_pump, params.n_gamma_c);
        let x2 = match &regime {
            Regime::Uniform => solve_x2_uniform(w, ngc),
            Regime::Pinned(d) => {
                if !(0.0..=1.0).contains(d) {
                    return Err(Error::invalid("pinning δ must lie in [0, 1]"));
                }
                solve_x2_pinned(w, ngc, *d)
            }
            Regime::EmpiricalDensity(xs) => solve_x2_density(w, ngc, xs)?,
        };
        let x: Vec<f64> = (0..grid_points).map(|k| TAU * k as f64 / (grid_points - 1) as f64).collect();
        let (s0, z0) = profiles_s0_z0(&x, x2, w, ngc);
        let v: Vec<f64> = x.iter().map(|&x| v_eff(x, x2, w, params.delta, params.kappa, ngc)).collect();
        let gamma = x.iter().map(|&x| gamma_coeff(x, x2, params)).collect();
        let diffusion = x.iter().map(|&x| diffusion_closed(x, x2, params)).collect();
        Ok(SteadyStateSolution {
            x2,
            omega0: omega0(w, params.delta, params.kappa),
            regime,
            x,
            s0,
            z0,
            v_eff: v,
            gamma,
            diffusion,
        })
    }
}
