//! The full parameter set: base network, signatures, conditional network,
//! and the three heads, registered into one [`ParamStore`].

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::egnn::{BaseEgnn, BaseState, CondEgnn, NetDims, SignatureNet};
use crate::error::{Error, Result};
use crate::graph3d::{Graph3D, Vec3};
use crate::heads::{EdgeHead, NumberHead, PropertyHead};
use crate::nnkit::{Checkpoint, Dual, Eager, Hidden, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub base_feature_dim: usize,
    pub base_edge_dim: usize,
    /// Total length of the concatenated base globals.
    pub base_global_dim: usize,
    pub feature_dim: usize,
    pub edge_dim: usize,
    /// Category count of each complement property.
    pub property_dims: Vec<usize>,
    pub hidden: usize,
    /// Hidden layers inside each φ network.
    pub mlp_depth: usize,
    pub sig_dim: usize,
    pub base_layers: usize,
    pub cond_layers: usize,
    pub n_max: usize,
    /// Use `x^L − x` rather than `x^L` as the position velocity.
    pub displaced: bool,
    pub activation: Hidden,
    /// Largest vertex-vector length for exact divergence.
    pub divergence_cap: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            base_feature_dim: 4,
            base_edge_dim: 1,
            base_global_dim: 40,
            feature_dim: 3,
            edge_dim: 2,
            property_dims: vec![2, 2],
            hidden: 64,
            mlp_depth: 2,
            sig_dim: 32,
            base_layers: 2,
            cond_layers: 2,
            n_max: 32,
            displaced: true,
            activation: Hidden::Silu,
            divergence_cap: 512,
        }
    }
}

impl ModelConfig {
    /// Narrow widths for single-core training runs.
    pub fn desk() -> Self {
        ModelConfig {
            hidden: 16,
            mlp_depth: 1,
            sig_dim: 8,
            ..Self::default()
        }
    }

    pub fn net_dims(&self) -> NetDims {
        NetDims {
            hidden: self.hidden,
            depth: self.mlp_depth,
            act: self.activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.sig_dim == 0 || self.n_max == 0 {
            return Err(Error::Config("model widths and n_max must be positive".into()));
        }
        if self.base_layers == 0 || self.cond_layers == 0 {
            return Err(Error::Config("both networks need at least one layer".into()));
        }
        if self.property_dims.contains(&0) {
            return Err(Error::Config("property with zero categories".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let s = serde_json::to_string(self).expect("config serializes");
        let d = Sha256::digest(s.as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Initial scale of the feature-velocity readout relative to Glorot. At full
/// scale random models drift features by orders of magnitude within `t ∈ [0, 1]`.
pub const READOUT_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub base: BaseEgnn,
    pub sig: SignatureNet,
    pub cond: CondEgnn,
    pub number: NumberHead,
    pub edge: EdgeHead,
    pub property: PropertyHead,
    /// Constant added to every position velocity. Breaks rotation
    /// equivariance on purpose; used as a negative control.
    pub debug_bias: Option<Vec3>,
}

impl Model {
    /// Registers every parameter and initializes from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let c = &config;
        let dims = c.net_dims();
        let mut p = ParamStore::new();
        let base = BaseEgnn::register(&mut p, "base", c.base_feature_dim, c.base_edge_dim, c.base_global_dim, c.base_layers, dims)?;
        let sig = SignatureNet::register(&mut p, "sig", c.hidden, c.base_layers, c.cond_layers, c.sig_dim, dims)?;
        let cond = CondEgnn::register(&mut p, "cond", c.feature_dim, c.sig_dim, c.cond_layers, true, dims)?;
        let number = NumberHead::register(&mut p, "number", c.hidden, c.n_max, dims)?;
        let edge = EdgeHead::register(
            &mut p,
            "edge",
            c.feature_dim,
            c.edge_dim,
            c.hidden,
            c.base_layers,
            c.cond_layers,
            c.sig_dim,
            dims,
        )?;
        let property = PropertyHead::register(&mut p, "property", c.hidden, c.edge_dim, &c.property_dims, dims)?;
        p.init(seed);
        if let Some(r) = &cond.readout {
            r.scale_last(&mut p, READOUT_INIT_SCALE);
        }
        Ok(Model {
            config,
            params: p,
            base,
            sig,
            cond,
            number,
            edge,
            property,
            debug_bias: None,
        })
    }

    /// Makes the flow velocity identically zero (displaced variant).
    pub fn zero_flow(&mut self) {
        self.cond.zero_updates(&mut self.params);
    }

    pub fn d_v(&self, n: usize) -> usize {
        (3 + self.config.feature_dim) * n
    }

    /// Eager base network pass.
    pub fn base_state(&self, base: &Graph3D) -> Result<BaseState<std::rc::Rc<crate::nnkit::engine::Mat>>> {
        let mut d = Dual::new(Eager::new(&self.params));
        self.base.forward(&mut d, base)
    }

    /// Layer means `ĥ⁰_av..ĥ^L̂_av` of the base network.
    pub fn base_means(&self, base: &Graph3D) -> Result<Vec<Vec<f64>>> {
        let mut d = Dual::new(Eager::new(&self.params));
        let s = self.base.forward(&mut d, base)?;
        Ok(s.h_av.iter().map(|v| d.value(v).to_vec()).collect())
    }

    /// Number distribution `p(N = k + 1 | R̂)`.
    pub fn number_distribution(&self, base: &Graph3D) -> Result<Vec<f64>> {
        let mut d = Dual::new(Eager::new(&self.params));
        let s = self.base.forward(&mut d, base)?;
        let lp = self.number.log_probs(&mut d, &s);
        Ok(d.value(&lp).iter().map(|v| v.exp()).collect())
    }

    pub fn to_checkpoint(&self, mut metadata: serde_json::Map<String, serde_json::Value>) -> Checkpoint {
        metadata.insert("model".into(), serde_json::to_value(&self.config).expect("config serializes"));
        metadata.insert("config_hash".into(), self.config.hash().into());
        metadata.insert("seed".into(), self.params.seed().into());
        Checkpoint {
            metadata,
            tensors: self.params.to_tensors(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Model> {
        let cfg = ck
            .metadata
            .get("model")
            .ok_or_else(|| Error::Config("checkpoint has no model configuration".into()))?;
        let config: ModelConfig =
            serde_json::from_value(cfg.clone()).map_err(|e| Error::Config(format!("checkpoint model configuration: {e}")))?;
        let seed = ck.metadata.get("seed").and_then(|v| v.as_u64()).unwrap_or(0);
        let mut m = Model::new(config, seed)?;
        m.params.load_tensors(&ck.tensors)?;
        Ok(m)
    }
}
