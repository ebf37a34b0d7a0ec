//! TOML run configuration with `[synth]`, `[model]`, `[train]`, `[ode]` and
//! `[dequant]` sections. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Complex, SynthConfig};
use crate::error::{Error, Result};
use crate::flow::OdeConfig;
use crate::model::ModelConfig;
use crate::train::{DequantConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Solver for sampling and scoring.
    pub ode: OdeConfig,
    pub dequant: DequantConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            synth: SynthConfig::default(),
            model: ModelConfig::desk(),
            train: TrainConfig::desk(),
            ode: OdeConfig::default(),
            dequant: DequantConfig::default(),
        }
    }
}

impl Config {
    /// Keys absent from `s` keep their [`Config::default`] values, also
    /// inside partially given sections.
    pub fn from_toml(s: &str) -> Result<Self> {
        let user: toml::Table = s.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let mut merged = toml::Table::try_from(Config::default()).expect("config serializes");
        merge(&mut merged, user);
        let c: Config = merged.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&s).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Defaults when `path` is `None`.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Config::default()), Config::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.ode.validate()?;
        self.dequant.validate()
    }
}

fn merge(into: &mut toml::Table, from: toml::Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(toml::Value::Table(a)), toml::Value::Table(b)) if !b.contains_key("method") => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

/// Checks that every complex has the shapes `model` expects.
pub fn check_dataset(model: &ModelConfig, data: &[Complex]) -> Result<()> {
    for (k, c) in data.iter().enumerate() {
        let bad = |what: &str, got: usize, want: usize| {
            Err(Error::Config(format!(
                "complex {k}: {what} is {got} but the model expects {want}"
            )))
        };
        let (b, g) = (&c.base, &c.complement);
        if b.feature_dim() != model.base_feature_dim {
            return bad("base feature width", b.feature_dim(), model.base_feature_dim);
        }
        if !b.edges().is_empty() && b.edge_dim() != model.base_edge_dim {
            return bad("base edge width", b.edge_dim(), model.base_edge_dim);
        }
        let gw: usize = b.globals().iter().map(Vec::len).sum();
        if gw != model.base_global_dim {
            return bad("base global width", gw, model.base_global_dim);
        }
        if g.feature_dim() != model.feature_dim {
            return bad("complement feature width", g.feature_dim(), model.feature_dim);
        }
        if !g.edges().is_empty() && g.edge_dim() != model.edge_dim {
            return bad("complement edge width", g.edge_dim(), model.edge_dim);
        }
        let dims: Vec<usize> = g.globals().iter().map(Vec::len).collect();
        if dims != model.property_dims {
            return Err(Error::Config(format!(
                "complex {k}: complement properties {dims:?}, model expects {:?}",
                model.property_dims
            )));
        }
        if g.n_vertices() == 0 || g.n_vertices() > model.n_max {
            return bad("complement size", g.n_vertices(), model.n_max);
        }
    }
    Ok(())
}
