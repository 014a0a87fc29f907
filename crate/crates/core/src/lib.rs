//! Synchronization-assisted cavity cooling of incoherently pumped two-level atoms.
//!
//! The crate models `N` atoms moving along the axis of a lossy standing-wave
//! cavity after the cavity field has been adiabatically eliminated. Three
//! levels of description are provided:
//!
//! * [`semiclassical`]: classical motion with stochastic momentum kicks coupled
//!   to a second-order cumulant expansion of the spin correlations
//!   `C_jl = <σ_j† σ_l>`.
//! * [`meanfield`]: deterministic motion coupled to per-atom dipoles `s_j` and
//!   inversions `z_j`.
//! * [`steady_state`]: closed-form and self-consistent analytics of the
//!   synchronized asymptotic regime (order parameter, effective potential,
//!   friction, diffusion and the resulting momentum width).
//!
//! All quantities use recoil units: `ħ = k = ω_R = 1`, so the atomic mass is
//! `m = 1/2`, momenta are in `ħk`, times in `1/ω_R` and frequencies in `ω_R`.

pub mod ensemble;
pub mod error;
pub mod meanfield;
pub mod model;
pub mod noise;
pub mod observables;
pub mod rng;
pub mod semiclassical;
pub mod steady_state;
pub(crate) mod sum;

pub use error::{Error, Result};
pub use model::{Alpha, Coupling, OrderParameter, PhysicalParams, MASS};
pub use num_complex::Complex64;
