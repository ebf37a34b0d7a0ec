//! Distributions over the vertex count, the complement edges, and the
//! complement's global properties.

use crate::egnn::{BaseState, CondEgnn, CondMode, NetDims, SignatureNet};
use crate::error::{Error, Result};
use crate::graph3d::Graph3D;
use crate::nnkit::{DVal, Dual, Engine, Init, Mlp, MlpSpec, ParamId, ParamStore};

/// `p(N | R̂) = softmax(F2(mean_i ĥ^L̂_i))` over `N = 1..=n_max`, with the
/// inner network `F1` the identity.
#[derive(Debug, Clone)]
pub struct NumberHead {
    f2: Mlp,
    pub n_max: usize,
}

impl NumberHead {
    pub fn register(store: &mut ParamStore, prefix: &str, base_hidden: usize, n_max: usize, dims: NetDims) -> Result<Self> {
        let mut spec = MlpSpec::uniform(base_hidden, dims.hidden, dims.depth, n_max);
        spec.hidden = dims.act;
        Ok(NumberHead {
            f2: Mlp::register(store, &format!("{prefix}.f2"), spec)?,
            n_max,
        })
    }

    pub fn zero_last(&self, p: &mut ParamStore) {
        self.f2.zero_last(p);
    }

    /// Log-probabilities; entry `k` is `ln p(N = k + 1)`.
    pub fn log_probs<E: Engine>(&self, d: &mut Dual<E>, base: &BaseState<E::M>) -> DVal<E::M> {
        let pooled = base.h_av.last().unwrap();
        let z = self.f2.logits(d, pooled);
        d.log_softmax(&z)
    }

    /// `−ln p(N | R̂)`.
    pub fn nll<E: Engine>(&self, d: &mut Dual<E>, base: &BaseState<E::M>, n: usize) -> Result<DVal<E::M>> {
        if n == 0 || n > self.n_max {
            return Err(Error::Domain(format!("vertex count {n} outside 1..={}", self.n_max)));
        }
        let lp = self.log_probs(d, base);
        let pick = d.pick_sum(&lp, vec![n - 1]);
        Ok(d.scale(&pick, -1.0))
    }
}

/// Per-pair categorical over `d_e` edge types plus "no edge", from the
/// last-layer messages of a second conditional EGNN evaluated at `t = 1`.
#[derive(Debug, Clone)]
pub struct EdgeHead {
    pub sig: SignatureNet,
    pub egnn: CondEgnn,
    classifier: Mlp,
    pub edge_dim: usize,
}

/// Hidden state of the edge network, shared with the property head.
pub struct EdgeState<M> {
    /// `(i, j, log-probabilities)` for `i < j`.
    pub pairs: Vec<(usize, usize, DVal<M>)>,
    pub hidden: Vec<DVal<M>>,
}

impl EdgeHead {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        feature_dim: usize,
        edge_dim: usize,
        base_hidden: usize,
        base_layers: usize,
        cond_layers: usize,
        sig_dim: usize,
        dims: NetDims,
    ) -> Result<Self> {
        let sig = SignatureNet::register(store, &format!("{prefix}.sig"), base_hidden, base_layers, cond_layers, sig_dim, dims)?;
        let egnn = CondEgnn::register(store, &format!("{prefix}.egnn"), feature_dim, sig_dim, cond_layers, false, dims)?;
        let mut spec = MlpSpec::uniform(dims.hidden, dims.hidden, dims.depth, edge_dim + 1);
        spec.hidden = dims.act;
        let classifier = Mlp::register(store, &format!("{prefix}.classifier"), spec)?;
        Ok(EdgeHead {
            sig,
            egnn,
            classifier,
            edge_dim,
        })
    }

    pub fn forward<E: Engine>(&self, d: &mut Dual<E>, base: &BaseState<E::M>, g: &Graph3D) -> Result<EdgeState<E::M>> {
        let n = g.n_vertices();
        let x: Vec<_> = g.positions().iter().map(|x| d.constant(x.to_vec())).collect();
        let h: Vec<_> = g.features().iter().map(|h| d.constant(h.clone())).collect();
        let sigs = self.sig.forward(d, &base.h_av, 1.0);
        let out = self.egnn.forward(
            d,
            &x,
            &h,
            &sigs,
            1.0,
            CondMode {
                diag_stride: None,
                keep_messages: true,
            },
        )?;
        let msgs = out.messages.unwrap();
        let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                let m = d.add(msgs[i][j].as_ref().unwrap(), msgs[j][i].as_ref().unwrap());
                let z = self.classifier.logits(d, &m);
                pairs.push((i, j, d.log_softmax(&z)));
            }
        }
        Ok(EdgeState {
            pairs,
            hidden: out.hidden,
        })
    }

    /// Category of each pair `i < j` in `g`: the argmax of the edge
    /// features, or `edge_dim` for a missing edge.
    pub fn targets(&self, g: &Graph3D) -> Result<Vec<usize>> {
        let n = g.n_vertices();
        if !g.edges().is_empty() && g.edge_dim() != self.edge_dim {
            return Err(Error::Size(format!(
                "complement edges have {} features, model expects {}",
                g.edge_dim(),
                self.edge_dim
            )));
        }
        let mut cat = vec![self.edge_dim; n * n.saturating_sub(1) / 2];
        let idx = |i: usize, j: usize| i * n - i * (i + 1) / 2 + (j - i - 1);
        for e in g.edges() {
            cat[idx(e.i, e.j)] = argmax(&e.features);
        }
        Ok(cat)
    }

    /// `−Σ_{i<j} ln p(e_ij)`.
    pub fn nll<E: Engine>(&self, d: &mut Dual<E>, state: &EdgeState<E::M>, targets: &[usize]) -> DVal<E::M> {
        let picks: Vec<_> = state
            .pairs
            .iter()
            .zip(targets)
            .map(|((_, _, lp), &k)| d.pick_sum(lp, vec![k]))
            .collect();
        let s = d.add_n(&picks, 1);
        d.scale(&s, -1.0)
    }
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// `p(a_k | a_<k, V, E, R̂) = softmax(MLP(ξ_h, ξ_e, ξ_{a,k}))`.
#[derive(Debug, Clone)]
pub struct PropertyHead {
    xi_h: Mlp,
    xi_e: Mlp,
    xi_a: Mlp,
    w: Vec<ParamId>,
    classifiers: Vec<Mlp>,
    pub dims_out: Vec<usize>,
    pool: usize,
}

impl PropertyHead {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        hidden: usize,
        edge_dim: usize,
        property_dims: &[usize],
        dims: NetDims,
    ) -> Result<Self> {
        let pool = dims.hidden;
        let mk = |store: &mut ParamStore, name: &str, i: usize, o: usize| {
            let mut s = MlpSpec::uniform(i, dims.hidden, dims.depth, o);
            s.hidden = dims.act;
            Mlp::register(store, &format!("{prefix}.{name}"), s)
        };
        let xi_h = mk(store, "xi_h", hidden, pool)?;
        let xi_e = mk(store, "xi_e", edge_dim, pool)?;
        let xi_a = mk(store, "xi_a", pool, pool)?;
        let w = property_dims
            .iter()
            .enumerate()
            .map(|(j, &k)| store.register(format!("{prefix}.w.{j}"), &[pool, k], Init::Glorot))
            .collect();
        let classifiers = property_dims
            .iter()
            .enumerate()
            .map(|(k, &o)| mk(store, &format!("classifier.{k}"), 3 * pool, o))
            .collect::<Result<_>>()?;
        Ok(PropertyHead {
            xi_h,
            xi_e,
            xi_a,
            w,
            classifiers,
            dims_out: property_dims.to_vec(),
            pool,
        })
    }

    /// Log-probabilities for property `k` given `props[..k]`.
    pub fn log_probs<E: Engine>(
        &self,
        d: &mut Dual<E>,
        hidden: &[DVal<E::M>],
        g: &Graph3D,
        props: &[Vec<f64>],
        k: usize,
    ) -> Result<DVal<E::M>> {
        if k >= self.dims_out.len() {
            return Err(Error::Domain(format!("property index {k} out of {}", self.dims_out.len())));
        }
        let hs: Vec<_> = hidden.iter().map(|h| self.xi_h.forward(d, h)).collect();
        let s = d.add_n(&hs, self.pool);
        let xh = d.scale(&s, 1.0 / hs.len().max(1) as f64);
        let es: Vec<_> = g
            .edges()
            .iter()
            .map(|e| {
                let v = d.constant(e.features.clone());
                self.xi_e.forward(d, &v)
            })
            .collect();
        let xe = if es.is_empty() {
            d.zeros(self.pool)
        } else {
            let s = d.add_n(&es, self.pool);
            d.scale(&s, 1.0 / es.len() as f64)
        };
        let mut terms = Vec::with_capacity(k);
        for (j, a) in props.iter().take(k).enumerate() {
            if a.len() != self.dims_out[j] {
                return Err(Error::Size(format!(
                    "property {j} has {} entries, expected {}",
                    a.len(),
                    self.dims_out[j]
                )));
            }
            let av = d.constant(a.clone());
            terms.push(d.dense(&av, self.w[j], None));
        }
        let sum = d.add_n(&terms, self.pool);
        let xa = self.xi_a.forward(d, &sum);
        let inp = d.concat(&[xh, xe, xa]);
        let z = self.classifiers[k].logits(d, &inp);
        Ok(d.log_softmax(&z))
    }

    /// `−Σ_k ln p(a_k | a_<k, …)` for the graph's own globals.
    pub fn nll<E: Engine>(&self, d: &mut Dual<E>, hidden: &[DVal<E::M>], g: &Graph3D) -> Result<DVal<E::M>> {
        let props = g.globals();
        if props.len() != self.dims_out.len() {
            return Err(Error::Size(format!(
                "complement has {} properties, model expects {}",
                props.len(),
                self.dims_out.len()
            )));
        }
        let mut picks = Vec::with_capacity(props.len());
        for k in 0..props.len() {
            let lp = self.log_probs(d, hidden, g, props, k)?;
            picks.push(d.pick_sum(&lp, vec![argmax(&props[k])]));
        }
        let s = d.add_n(&picks, 1);
        Ok(d.scale(&s, -1.0))
    }
}
