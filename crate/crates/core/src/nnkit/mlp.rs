use serde::{Deserialize, Serialize};

use super::dual::{DVal, Dual};
use super::engine::{Eager, Engine};
use super::kernels::Fun;
use super::params::{Init, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Hidden {
    #[default]
    Silu,
    Tanh,
}

impl Hidden {
    pub fn fun(self) -> Fun {
        match self {
            Hidden::Silu => Fun::Silu,
            Hidden::Tanh => Fun::Tanh,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Output {
    #[default]
    None,
    Softmax,
    Sigmoid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub layer_dims: Vec<usize>,
    pub hidden: Hidden,
    pub output: Output,
}

impl MlpSpec {
    pub fn new(layer_dims: Vec<usize>, hidden: Hidden, output: Output) -> Self {
        MlpSpec {
            layer_dims,
            hidden,
            output,
        }
    }

    /// `input -> hidden^depth -> output` with SiLU and no output activation.
    pub fn uniform(input: usize, hidden: usize, depth: usize, output: usize) -> Self {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(hidden, depth));
        dims.push(output);
        MlpSpec::new(dims, Hidden::Silu, Output::None)
    }

    pub fn with_output(mut self, output: Output) -> Self {
        self.output = output;
        self
    }

    pub fn input(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::Config("an MLP needs at least two layer widths".into()));
        }
        if self.layer_dims[1..].contains(&0) {
            return Err(Error::Config(format!("zero-width MLP layer in {:?}", self.layer_dims)));
        }
        Ok(())
    }
}

/// Registered MLP: one `(weight, bias)` pair per affine layer.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub spec: MlpSpec,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// Registers `{prefix}.{k}.w` / `{prefix}.{k}.b` for each layer.
    pub fn register(store: &mut ParamStore, prefix: &str, spec: MlpSpec) -> Result<Mlp> {
        spec.validate()?;
        let layers = spec
            .layer_dims
            .windows(2)
            .enumerate()
            .map(|(k, d)| {
                (
                    store.register(format!("{prefix}.{k}.w"), &[d[1], d[0]], Init::Glorot),
                    store.register(format!("{prefix}.{k}.b"), &[d[1]], Init::Zeros),
                )
            })
            .collect();
        Ok(Mlp { spec, layers })
    }

    pub fn layers(&self) -> &[(ParamId, ParamId)] {
        &self.layers
    }

    pub fn last_layer(&self) -> (ParamId, ParamId) {
        *self.layers.last().unwrap()
    }

    /// Affine stack up to, but excluding, the output activation.
    pub fn logits<E: Engine>(&self, d: &mut Dual<E>, x: &DVal<E::M>) -> DVal<E::M> {
        let f = self.spec.hidden.fun();
        let mut h = x.clone();
        for (k, &(w, b)) in self.layers.iter().enumerate() {
            h = d.dense(&h, w, Some(b));
            if k + 1 < self.layers.len() {
                h = d.unary(&h, f);
            }
        }
        h
    }

    pub fn forward<E: Engine>(&self, d: &mut Dual<E>, x: &DVal<E::M>) -> DVal<E::M> {
        let z = self.logits(d, x);
        match self.spec.output {
            Output::None => z,
            Output::Sigmoid => d.unary(&z, Fun::Sigmoid),
            Output::Softmax => {
                let ls = d.log_softmax(&z);
                d.unary(&ls, Fun::Exp)
            }
        }
    }

    /// Checked single-vector evaluation.
    pub fn eval(&self, params: &ParamStore, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.spec.input() {
            return Err(Error::Size(format!(
                "MLP input has {} entries, expected {}",
                input.len(),
                self.spec.input()
            )));
        }
        let mut d = Dual::new(Eager::new(params));
        let x = d.constant(input.to_vec());
        let y = self.forward(&mut d, &x);
        Ok(d.value(&y).to_vec())
    }

    /// Zeroes every weight and bias of the final layer.
    pub fn zero_last(&self, params: &mut ParamStore) {
        let (w, b) = self.last_layer();
        params.get_mut(w).fill(0.0);
        params.get_mut(b).fill(0.0);
    }

    /// Multiplies the final layer's weights and bias by `factor`.
    pub fn scale_last(&self, params: &mut ParamStore, factor: f64) {
        let (w, b) = self.last_layer();
        params.get_mut(w).iter_mut().for_each(|v| *v *= factor);
        params.get_mut(b).iter_mut().for_each(|v| *v *= factor);
    }
}
