//! Bundled configurations, one per figure.

use anyhow::{anyhow, Context, Result};

use crate::config::{InvalidConfig, RunConfig};

pub const PRESETS: &[(&str, &str)] = &[
    ("fig3a", include_str!("../presets/fig3a.toml")),
    ("fig3b", include_str!("../presets/fig3b.toml")),
    ("fig3c", include_str!("../presets/fig3c.toml")),
    ("fig4", include_str!("../presets/fig4.toml")),
    ("fig5", include_str!("../presets/fig5.toml")),
    ("fig7", include_str!("../presets/fig7.toml")),
    ("fig8", include_str!("../presets/fig8.toml")),
    ("fig10", include_str!("../presets/fig10.toml")),
    ("fig11", include_str!("../presets/fig11.toml")),
];

pub fn names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn source(name: &str) -> Result<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
        .ok_or_else(|| anyhow!("unknown preset `{name}` (available: {})", names().collect::<Vec<_>>().join(", ")))
        .context(InvalidConfig)
}

pub fn preset(name: &str) -> Result<RunConfig> {
    RunConfig::from_toml(source(name)?).with_context(|| format!("preset {name}"))
}
