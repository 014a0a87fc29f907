//! Run configuration: a versioned TOML schema covering every engine.
//!
//! All frequencies and times are in recoil units (`ω_R`, `1/ω_R`), momenta in
//! `ħk`; unit suffixes are not accepted. Unknown keys are rejected.

use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use synccool_core::meanfield::MeanFieldConfig;
use synccool_core::observables::SpectrumOptions;
use synccool_core::semiclassical::{InitialCondition, IntegrationConfig};
use synccool_core::steady_state::{Regime, SweepGrid};
use synccool_core::{Coupling, PhysicalParams};

pub const SCHEMA_VERSION: u32 = 1;

/// Context marker attached to every configuration error.
#[derive(Debug, Clone, Copy)]
pub struct InvalidConfig;

impl std::fmt::Display for InvalidConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("invalid configuration")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    Semiclassical,
    Meanfield,
    SteadyState,
    Sweep,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Semiclassical => "semiclassical",
            Engine::Meanfield => "meanfield",
            Engine::SteadyState => "steady-state",
            Engine::Sweep => "sweep",
        }
    }
}

/// Model constants. Exactly one of `n_gamma_c` and `g` must be given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsConfig {
    pub n_atoms: usize,
    pub kappa: f64,
    pub delta: f64,
    pub w_pump: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_gamma_c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
}

impl ParamsConfig {
    pub fn physical(&self) -> Result<PhysicalParams> {
        let coupling = match (self.n_gamma_c, self.g) {
            (Some(v), None) => Coupling::CollectiveLinewidth(v),
            (None, Some(g)) => Coupling::VacuumRabi(g),
            _ => bail!("params: give exactly one of `n_gamma_c` and `g`"),
        };
        Ok(PhysicalParams::new(self.n_atoms, self.kappa, self.delta, self.w_pump, coupling)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SteadyStateConfig {
    pub regime: Regime,
    /// Grid points over one wavelength `[0, 2π]`.
    pub grid_points: usize,
}

impl Default for SteadyStateConfig {
    fn default() -> Self {
        SteadyStateConfig {
            regime: Regime::Uniform,
            grid_points: 513,
        }
    }
}

/// Sweep grid in reduced units: `Δ/(κ/2)` and `w/NΓ_C`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub delta_ratios: Vec<f64>,
    pub w_fractions: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            delta_ratios: (1..=12).map(|k| 0.25 * k as f64).collect(),
            w_fractions: (1..=50).map(|k| 0.01 * k as f64).collect(),
        }
    }
}

impl SweepConfig {
    pub fn grid(&self, params: &PhysicalParams) -> SweepGrid {
        SweepGrid {
            kappa: params.kappa,
            n_gamma_c: params.n_gamma_c,
            deltas: self.delta_ratios.iter().map(|r| r * params.kappa / 2.0).collect(),
            w_values: self.w_fractions.iter().map(|f| f * params.n_gamma_c).collect(),
        }
    }
}

/// Spectra computed after a simulation (and defaults for the `spectrum` command).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub channels: Vec<String>,
    /// Samples before `t_start` are excluded.
    pub t_start: f64,
    pub options: SpectrumOptions,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig {
            channels: Vec::new(),
            t_start: 0.0,
            options: SpectrumOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    /// Ensemble channels written to `timeseries.csv`; empty selects all.
    pub channels: Vec<String>,
    /// Raw positions and momenta of every snapshot.
    pub write_snapshots: bool,
    /// Phase-space histogram bins `[x, p]`.
    pub phase_space_bins: [usize; 2],
    pub momentum_bins: usize,
    /// Momentum range of histograms; defaults to the sample extent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_range: Option<[f64; 2]>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            channels: Vec::new(),
            write_snapshots: true,
            phase_space_bins: [64, 64],
            momentum_bins: 101,
            p_range: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub description: String,
    /// Engines run by `synccool run`, in order.
    #[serde(default = "default_engines")]
    pub engines: Vec<Engine>,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    pub params: ParamsConfig,
    #[serde(default)]
    pub initial: InitialCondition,
    #[serde(default)]
    pub integration: IntegrationConfig,
    #[serde(default)]
    pub meanfield: MeanFieldConfig,
    #[serde(default)]
    pub steady_state: SteadyStateConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub spectrum: SpectrumConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_engines() -> Vec<Engine> {
    vec![Engine::Semiclassical]
}

fn default_seed() -> u64 {
    1
}

fn default_n_traj() -> usize {
    1
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context(InvalidConfig)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text)
    }

    /// Serialized form; parsing it back yields an identical configuration.
    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Schema checks that do not depend on the command being run.
    pub fn validate(&self) -> Result<()> {
        self.check().context(InvalidConfig)
    }

    fn check(&self) -> Result<()> {
        ensure!(
            self.schema_version == SCHEMA_VERSION,
            "unsupported schema_version {} (expected {SCHEMA_VERSION})",
            self.schema_version
        );
        ensure!(self.n_traj >= 1, "n_traj must be at least 1");
        ensure!(
            self.master_seed <= i64::MAX as u64,
            "master_seed must fit in a TOML integer (at most {})",
            i64::MAX
        );
        let params = self.params.physical()?;
        self.initial.validate(params.n_atoms)?;
        self.integration.validate(&params)?;
        self.meanfield.validate()?;
        ensure!(self.steady_state.grid_points >= 2, "steady_state.grid_points must be at least 2");
        ensure!(
            self.output.phase_space_bins.iter().all(|&b| b >= 2) && self.output.momentum_bins >= 2,
            "histograms need at least 2 bins per axis"
        );
        if let Some([lo, hi]) = self.output.p_range {
            ensure!(hi > lo, "output.p_range must be increasing");
        }
        ensure!(self.spectrum.t_start >= 0.0, "spectrum.t_start must be nonnegative");
        Ok(())
    }

    pub fn physical(&self) -> Result<PhysicalParams> {
        self.params.physical()
    }
}
