//! End-to-end complement generation: size, vertices, edges, then properties.

use crate::error::{Error, Result};
use crate::flow::{self, OdeConfig};
use crate::graph3d::{Graph3D, VertexVector};
use crate::heads::argmax;
use crate::model::Model;
use crate::nnkit::{Dual, Eager};
use crate::rng::{self, SeededRng};
use crate::train::DequantConfig;

use rand::Rng;

/// How the complement size is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeChoice {
    Fixed(usize),
    /// Most probable size under the number head.
    Argmax,
    /// A draw from the number head.
    Categorical,
}

pub fn choose_size(model: &Model, base: &Graph3D, choice: SizeChoice, r: &mut SeededRng) -> Result<usize> {
    match choice {
        SizeChoice::Fixed(n) if n == 0 || n > model.config.n_max => Err(Error::Domain(format!(
            "complement size {n} outside 1..={}",
            model.config.n_max
        ))),
        SizeChoice::Fixed(n) => Ok(n),
        SizeChoice::Argmax => Ok(argmax(&model.number_distribution(base)?) + 1),
        SizeChoice::Categorical => {
            let p = model.number_distribution(base)?;
            let u: f64 = r.random();
            let mut acc = 0.0;
            for (k, pk) in p.iter().enumerate() {
                acc += pk;
                if u < acc {
                    return Ok(k + 1);
                }
            }
            Ok(p.len())
        }
    }
}

/// Attaches the most probable edges and properties to sampled vertices.
/// Features are quantized first when dequantization is enabled.
pub fn complete(model: &Model, base: &Graph3D, v: &VertexVector, dq: &DequantConfig) -> Result<Graph3D> {
    let (x, h) = v.devectorize();
    let h: Vec<Vec<f64>> = h.iter().map(|f| dq.quantize(f)).collect();
    let d_h = model.config.feature_dim;
    let bare = Graph3D::with_dims(x.clone(), h.clone(), d_h, vec![], vec![])?;

    let mut d = Dual::new(Eager::new(&model.params));
    let st = model.base.forward(&mut d, base)?;
    let es = model.edge.forward(&mut d, &st, &bare)?;
    let e_dim = model.config.edge_dim;
    let edges: Vec<_> = es
        .pairs
        .iter()
        .filter_map(|(i, j, lp)| {
            let k = argmax(d.value(lp));
            (k < e_dim).then(|| {
                let mut f = vec![0.0; e_dim];
                f[k] = 1.0;
                (*i, *j, f)
            })
        })
        .collect();
    let with_edges = Graph3D::with_dims(x.clone(), h.clone(), d_h, edges.clone(), vec![])?;

    let mut props: Vec<Vec<f64>> = Vec::new();
    for (k, &dim) in model.config.property_dims.iter().enumerate() {
        let lp = model.property.log_probs(&mut d, &es.hidden, &with_edges, &props, k)?;
        let mut a = vec![0.0; dim];
        a[argmax(d.value(&lp))] = 1.0;
        props.push(a);
    }
    Graph3D::with_dims(x, h, d_h, edges, props)
}

/// Samples a full complement for `base`. The size draw and the flow noise
/// both derive from `seed`.
pub fn generate(
    model: &Model,
    base: &Graph3D,
    size: SizeChoice,
    seed: u64,
    ode: &OdeConfig,
    dq: &DequantConfig,
) -> Result<Graph3D> {
    let n = choose_size(model, base, size, &mut rng::stream(seed, 1))?;
    let v = flow::sample(model, base, n, seed, ode)?;
    complete(model, base, &v, dq)
}
