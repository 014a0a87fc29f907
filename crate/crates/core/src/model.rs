//! Model constants and the elementary quantities shared by every engine.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Atomic mass in recoil units (`ω_R = ħk²/2m = 1` with `ħ = k = 1`).
pub const MASS: f64 = 0.5;

/// Effective single-atom linewidth induced by the lossy cavity,
/// `Γ_C = κ (g²/4) / (Δ² + κ²/4)`.
pub fn gamma_c(g: f64, delta: f64, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    Ok(g * g / 4.0 / (delta * delta + kappa * kappa / 4.0) * kappa)
}

/// Vacuum Rabi frequency reproducing a collective linewidth `NΓ_C` for `n_atoms` atoms.
pub fn g_from_collective_linewidth(n_gamma_c: f64, n_atoms: usize, delta: f64, kappa: f64) -> Result<f64> {
    check_kappa(kappa)?;
    if n_atoms == 0 {
        return Err(Error::invalid("n_atoms must be at least 1"));
    }
    if !(n_gamma_c > 0.0) {
        return Err(Error::invalid("collective linewidth must be positive"));
    }
    let ng2 = 4.0 * n_gamma_c * (delta * delta + kappa * kappa / 4.0) / kappa;
    Ok((ng2 / n_atoms as f64).sqrt())
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("kappa must be positive, got {kappa}")))
    }
}

/// The dimensionless cavity response `α = Δ/(κ/2) − i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alpha(Complex64);

impl Alpha {
    pub fn new(delta: f64, kappa: f64) -> Result<Self> {
        check_kappa(kappa)?;
        Ok(Alpha(Complex64::new(delta / (kappa / 2.0), -1.0)))
    }

    #[inline]
    pub fn value(self) -> Complex64 {
        self.0
    }

    /// `Δ/(κ/2)`, the real part.
    #[inline]
    pub fn detuning_ratio(self) -> f64 {
        self.0.re
    }

    #[inline]
    pub fn norm_sqr(self) -> f64 {
        self.0.norm_sqr()
    }
}

pub fn alpha(delta: f64, kappa: f64) -> Result<Alpha> {
    Alpha::new(delta, kappa)
}

/// Synchronization order parameter `X = (1/N) Σ_j s_j cos(x_j)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OrderParameter(pub Complex64);

impl OrderParameter {
    #[inline]
    pub fn value(self) -> Complex64 {
        self.0
    }

    #[inline]
    pub fn magnitude_sq(self) -> f64 {
        self.0.norm_sqr()
    }
}

/// Local saturation-like parameter `ξ(x) = (NΓ_C/w) X cos(x)`.
pub fn xi(x: f64, order: OrderParameter, w: f64, n_gamma_c: f64) -> Result<Complex64> {
    if w == 0.0 || !w.is_finite() {
        return Err(Error::invalid("pump rate w must be nonzero"));
    }
    Ok(order.0 * (n_gamma_c / w * x.cos()))
}

/// Mean-field order parameter from positions and dipoles.
pub fn order_parameter(x: &[f64], s: &[Complex64]) -> Result<OrderParameter> {
    if x.len() != s.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: s.len(),
        });
    }
    if x.is_empty() {
        return Ok(OrderParameter::default());
    }
    let sum: Complex64 = x.iter().zip(s).map(|(&xj, &sj)| sj * xj.cos()).sum();
    Ok(OrderParameter(sum / x.len() as f64))
}

/// `<X†X> = (1/N²) Σ_jl cos(x_j) cos(x_l) C_jl` for a Hermitian correlation
/// matrix stored row-major.
pub fn xdagx_from_correlations(x: &[f64], corr: &[Complex64]) -> Result<f64> {
    let n = x.len();
    if corr.len() != n * n {
        return Err(Error::DimensionMismatch {
            expected: n * n,
            found: corr.len(),
        });
    }
    if n == 0 {
        return Ok(0.0);
    }
    const TOL: f64 = 1e-10;
    let cos: Vec<f64> = x.iter().map(|v| v.cos()).collect();
    let mut total = Complex64::new(0.0, 0.0);
    for j in 0..n {
        let row = &corr[j * n..(j + 1) * n];
        let mut acc = Complex64::new(0.0, 0.0);
        for l in 0..n {
            let c = row[l];
            if l > j && (c - corr[l * n + j].conj()).norm() > TOL {
                return Err(Error::Consistency(format!(
                    "correlation matrix is not Hermitian at ({j}, {l})"
                )));
            }
            acc += c * cos[l];
        }
        total += acc * cos[j];
    }
    let value = total / (n * n) as f64;
    if value.re < -1e-12 {
        return Err(Error::Consistency(format!(
            "<X†X> = {} is negative; correlation matrix is not positive semidefinite",
            value.re
        )));
    }
    Ok(value.re.max(0.0))
}

/// Intracavity photon number of the adiabatically eliminated field,
/// `(N g/2)² / (κ²/4 + Δ²) · <X†X>`.
pub fn photon_number_estimate(params: &PhysicalParams, xdagx: f64) -> f64 {
    let n = params.n_atoms as f64;
    let ng2 = n * params.g() * params.g();
    let amp2 = n * ng2 / 4.0;
    amp2 / (params.kappa * params.kappa / 4.0 + params.delta * params.delta) * xdagx
}

/// How the light-matter coupling is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Single-atom vacuum Rabi frequency `g`.
    VacuumRabi(f64),
    /// Collective linewidth `NΓ_C`.
    CollectiveLinewidth(f64),
}

/// All model constants, in recoil units.
///
/// The coupling is stored as the collective linewidth `NΓ_C`; `g` is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub n_atoms: usize,
    pub kappa: f64,
    pub delta: f64,
    pub w_pump: f64,
    pub n_gamma_c: f64,
}

impl PhysicalParams {
    pub fn new(n_atoms: usize, kappa: f64, delta: f64, w_pump: f64, coupling: Coupling) -> Result<Self> {
        check_kappa(kappa)?;
        if n_atoms == 0 {
            return Err(Error::invalid("n_atoms must be at least 1"));
        }
        if !(w_pump > 0.0 && w_pump.is_finite()) {
            return Err(Error::invalid(format!("w_pump must be positive, got {w_pump}")));
        }
        if !delta.is_finite() {
            return Err(Error::invalid("delta must be finite"));
        }
        let n_gamma_c = match coupling {
            Coupling::VacuumRabi(g) => n_atoms as f64 * gamma_c(g, delta, kappa)?,
            Coupling::CollectiveLinewidth(v) => v,
        };
        if !(n_gamma_c > 0.0 && n_gamma_c.is_finite()) {
            return Err(Error::invalid(format!(
                "derived collective linewidth must be positive, got {n_gamma_c}"
            )));
        }
        Ok(PhysicalParams {
            n_atoms,
            kappa,
            delta,
            w_pump,
            n_gamma_c,
        })
    }

    /// Re-validate a value that may have been built field by field.
    pub fn validate(&self) -> Result<()> {
        Self::new(
            self.n_atoms,
            self.kappa,
            self.delta,
            self.w_pump,
            Coupling::CollectiveLinewidth(self.n_gamma_c),
        )
        .map(|_| ())
    }

    #[inline]
    pub fn gamma_c(&self) -> f64 {
        self.n_gamma_c / self.n_atoms as f64
    }

    pub fn g(&self) -> f64 {
        g_from_collective_linewidth(self.n_gamma_c, self.n_atoms, self.delta, self.kappa)
            .expect("validated parameters")
    }

    #[inline]
    pub fn alpha(&self) -> Alpha {
        Alpha(Complex64::new(self.delta / (self.kappa / 2.0), -1.0))
    }

    /// Same physics with a different atom number at fixed `Ng²` (hence fixed `NΓ_C`).
    pub fn with_atoms(&self, n_atoms: usize) -> Result<Self> {
        Self::new(
            n_atoms,
            self.kappa,
            self.delta,
            self.w_pump,
            Coupling::CollectiveLinewidth(self.n_gamma_c),
        )
    }

    /// Prefactor `κ/(Δ² + κ²/4)` of the retarded cavity force (times `ω_R = 1`).
    #[inline]
    pub fn retardation_factor(&self) -> f64 {
        self.kappa / (self.delta * self.delta + self.kappa * self.kappa / 4.0)
    }
}
