//! E(n)-equivariant message passing: the base-graph network, the signature
//! network that summarizes it, and the conditional network that moves the
//! complement vertices.
//!
//! All three are generic over the [`Engine`], so the same code evaluates
//! eagerly, records for backprop, and carries forward-mode tangents.

use crate::error::{Error, Result};
use crate::graph3d::Graph3D;
use crate::nnkit::{DVal, Dual, Engine, Fun, Hidden, Mlp, MlpSpec, Output, ParamStore};

/// Widths shared by every φ network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetDims {
    pub hidden: usize,
    /// Hidden layers inside each φ.
    pub depth: usize,
    pub act: Hidden,
}

impl NetDims {
    fn mlp(&self, input: usize, output: usize) -> MlpSpec {
        let mut s = MlpSpec::uniform(input, self.hidden, self.depth, output);
        s.hidden = self.act;
        s
    }
}

#[derive(Debug, Clone)]
struct Layer {
    phi_e: Mlp,
    phi_b: Mlp,
    phi_x: Mlp,
    phi_h: Mlp,
}

impl Layer {
    fn register(store: &mut ParamStore, prefix: &str, dims: NetDims, msg_in: usize, ctx: usize) -> Result<Layer> {
        let h = dims.hidden;
        Ok(Layer {
            phi_e: Mlp::register(store, &format!("{prefix}.phi_e"), dims.mlp(msg_in, h))?,
            phi_b: Mlp::register(
                store,
                &format!("{prefix}.phi_b"),
                MlpSpec::new(vec![h + ctx, 1], dims.act, Output::Sigmoid),
            )?,
            phi_x: Mlp::register(store, &format!("{prefix}.phi_x"), dims.mlp(h + ctx, 1))?,
            phi_h: Mlp::register(store, &format!("{prefix}.phi_h"), dims.mlp(2 * h + ctx, h))?,
        })
    }

    fn zero_updates(&self, p: &mut ParamStore) {
        self.phi_x.zero_last(p);
        self.phi_h.zero_last(p);
    }
}

/// `‖a − b‖²` and `a − b`.
fn sq_dist<E: Engine>(d: &mut Dual<E>, a: &DVal<E::M>, b: &DVal<E::M>) -> (DVal<E::M>, DVal<E::M>) {
    let diff = d.sub(a, b);
    let sq = d.mul(&diff, &diff);
    (d.sum(&sq), diff)
}

/// `(x_i − x_j) / (‖x_i − x_j‖ + 1) · s`, where `s = tanh(φ_x)` keeps each
/// pair's pull below one length unit.
fn coord_term<E: Engine>(
    d: &mut Dual<E>,
    diff: &DVal<E::M>,
    sq: &DVal<E::M>,
    s: &DVal<E::M>,
    one: &DVal<E::M>,
) -> DVal<E::M> {
    let norm = d.unary(sq, Fun::Sqrt);
    let den = d.add(&norm, one);
    let inv = d.unary(&den, Fun::Recip);
    let c = d.mul(s, &inv);
    d.mul(diff, &c)
}

fn mean<E: Engine>(d: &mut Dual<E>, items: &[DVal<E::M>], width: usize) -> DVal<E::M> {
    let s = d.add_n(items, width);
    d.scale(&s, 1.0 / items.len().max(1) as f64)
}

fn constant_rows<E: Engine>(d: &mut Dual<E>, rows: impl Iterator<Item = Vec<f64>>) -> Vec<DVal<E::M>> {
    rows.map(|r| d.constant(r)).collect()
}

/// Per-layer positions and features of the base network plus layer means.
#[derive(Debug, Clone)]
pub struct BaseState<M> {
    pub x: Vec<Vec<DVal<M>>>,
    pub h: Vec<Vec<DVal<M>>>,
    pub h_av: Vec<DVal<M>>,
}

/// Base-graph EGNN. Messages are formed for every ordered pair (edge
/// features zero for non-edges); features aggregate over graph neighbours
/// and positions over all other vertices.
#[derive(Debug, Clone)]
pub struct BaseEgnn {
    embed: Mlp,
    layers: Vec<Layer>,
    pub feature_dim: usize,
    pub edge_dim: usize,
    pub global_dim: usize,
    pub dims: NetDims,
}

impl BaseEgnn {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        feature_dim: usize,
        edge_dim: usize,
        global_dim: usize,
        n_layers: usize,
        dims: NetDims,
    ) -> Result<Self> {
        let h = dims.hidden;
        let embed = Mlp::register(
            store,
            &format!("{prefix}.embed"),
            MlpSpec::new(vec![feature_dim, h], dims.act, Output::None),
        )?;
        let layers = (0..n_layers)
            .map(|l| Layer::register(store, &format!("{prefix}.{l}"), dims, 2 * h + 2 + edge_dim + global_dim, 0))
            .collect::<Result<_>>()?;
        Ok(BaseEgnn {
            embed,
            layers,
            feature_dim,
            edge_dim,
            global_dim,
            dims,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    /// Zeroes the final affine layer of every φ_x and φ_h.
    pub fn zero_updates(&self, p: &mut ParamStore) {
        self.layers.iter().for_each(|l| l.zero_updates(p));
    }

    pub fn check(&self, g: &Graph3D) -> Result<()> {
        if g.n_vertices() == 0 {
            return Err(Error::EmptyGraph);
        }
        if g.feature_dim() != self.feature_dim {
            return Err(Error::Size(format!(
                "base graph has {} vertex features, model expects {}",
                g.feature_dim(),
                self.feature_dim
            )));
        }
        if !g.edges().is_empty() && g.edge_dim() != self.edge_dim {
            return Err(Error::Size(format!(
                "base graph has {} edge features, model expects {}",
                g.edge_dim(),
                self.edge_dim
            )));
        }
        let k: usize = g.globals().iter().map(Vec::len).sum();
        if k != self.global_dim {
            return Err(Error::Size(format!(
                "base graph globals have {k} entries, model expects {}",
                self.global_dim
            )));
        }
        Ok(())
    }

    pub fn forward<E: Engine>(&self, d: &mut Dual<E>, g: &Graph3D) -> Result<BaseState<E::M>> {
        self.check(g)?;
        let n = g.n_vertices();
        let hd = self.dims.hidden;
        let one = d.constant(vec![1.0]);
        let globals = d.constant(g.globals().concat());
        let no_edge = d.zeros(self.edge_dim);
        let mut edge_feat: Vec<Vec<Option<DVal<E::M>>>> = vec![vec![None; n]; n];
        for e in g.edges() {
            let v = d.constant(e.features.clone());
            edge_feat[e.i][e.j] = Some(v.clone());
            edge_feat[e.j][e.i] = Some(v);
        }
        let nb = g.neighbours();

        let x0 = constant_rows(d, g.positions().iter().map(|x| x.to_vec()));
        let raw = constant_rows(d, g.features().iter().cloned());
        let h0: Vec<_> = raw.iter().map(|h| self.embed.forward(d, h)).collect();
        let mut d0 = vec![vec![None; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let (sq, _) = sq_dist(d, &x0[i], &x0[j]);
                d0[i][j] = Some(sq.clone());
                d0[j][i] = Some(sq);
            }
        }

        let mut xs = vec![x0];
        let mut hs = vec![h0];
        for layer in &self.layers {
            let (x, h) = (xs.last().unwrap(), hs.last().unwrap());
            let mut nx = Vec::with_capacity(n);
            let mut nh = Vec::with_capacity(n);
            for i in 0..n {
                let mut agg = Vec::new();
                let mut dx = Vec::new();
                for j in (0..n).filter(|&j| j != i) {
                    let (sq, diff) = sq_dist(d, &x[i], &x[j]);
                    let e = edge_feat[i][j].clone().unwrap_or_else(|| no_edge.clone());
                    let inp = d.concat(&[
                        h[i].clone(),
                        h[j].clone(),
                        sq.clone(),
                        d0[i][j].clone().unwrap(),
                        e,
                        globals.clone(),
                    ]);
                    let m = layer.phi_e.forward(d, &inp);
                    if nb[i].binary_search(&j).is_ok() {
                        let b = layer.phi_b.forward(d, &m);
                        agg.push(d.mul(&m, &b));
                    }
                    let s = layer.phi_x.forward(d, &m);
                    let s = d.unary(&s, Fun::Tanh);
                    dx.push(coord_term(d, &diff, &sq, &s, &one));
                }
                let mi = d.add_n(&agg, hd);
                let dxs = d.add_n(&dx, 3);
                nx.push(d.add(&x[i], &dxs));
                let hin = d.concat(&[h[i].clone(), mi]);
                let dh = layer.phi_h.forward(d, &hin);
                nh.push(d.add(&h[i], &dh));
            }
            xs.push(nx);
            hs.push(nh);
        }
        let h_av = hs.iter().map(|h| mean(d, h, hd)).collect();
        Ok(BaseState { x: xs, h: hs, h_av })
    }
}

/// `ĝ⁰ = φ⁰(ĥ¹_av, …, ĥ^L̂_av, t)`, `ĝ^ℓ = φ^ℓ(ĝ^{ℓ−1})`.
#[derive(Debug, Clone)]
pub struct SignatureNet {
    first: Mlp,
    chain: Vec<Mlp>,
    pub sig_dim: usize,
    base_layers: usize,
}

impl SignatureNet {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        base_hidden: usize,
        base_layers: usize,
        cond_layers: usize,
        sig_dim: usize,
        dims: NetDims,
    ) -> Result<Self> {
        let first = Mlp::register(store, &format!("{prefix}.0"), dims.mlp(base_hidden * base_layers + 1, sig_dim))?;
        let chain = (1..=cond_layers)
            .map(|l| Mlp::register(store, &format!("{prefix}.{l}"), dims.mlp(sig_dim, sig_dim)))
            .collect::<Result<_>>()?;
        Ok(SignatureNet {
            first,
            chain,
            sig_dim,
            base_layers,
        })
    }

    /// Weight on the `t` input of the first affine layer of φ⁰.
    pub fn time_weight_column(&self, store: &ParamStore) -> Vec<usize> {
        let (w, _) = self.first.layers()[0];
        let shape = store.shape(w);
        let off = store.offset(w);
        (0..shape[0]).map(|o| off + o * shape[1] + shape[1] - 1).collect()
    }

    /// Signatures `ĝ⁰..ĝ^L` from the layer means `ĥ⁰_av..ĥ^L̂_av` (the
    /// embedding layer mean is not used).
    pub fn forward<E: Engine>(&self, d: &mut Dual<E>, h_av: &[DVal<E::M>], t: f64) -> Vec<DVal<E::M>> {
        debug_assert_eq!(h_av.len(), self.base_layers + 1);
        let mut parts: Vec<_> = h_av[1..].to_vec();
        parts.push(d.constant(vec![t]));
        let inp = d.concat(&parts);
        let mut g = vec![self.first.forward(d, &inp)];
        for m in &self.chain {
            let next = m.forward(d, g.last().unwrap());
            g.push(next);
        }
        g
    }
}

/// Final conditional-network state for the requested vertices.
pub struct CondOut<M> {
    pub x: Vec<DVal<M>>,
    pub hidden: Vec<DVal<M>>,
    /// Last-layer messages `m_ij`, indexed `[i][j]`, when requested.
    pub messages: Option<Vec<Vec<Option<DVal<M>>>>>,
}

/// Options for [`CondEgnn::forward`].
#[derive(Debug, Clone, Copy, Default)]
pub struct CondMode {
    /// Restrict the last layer of vertex `i` to tangent rows
    /// `i * stride .. (i + 1) * stride`, enough for Jacobian diagonal blocks.
    pub diag_stride: Option<usize>,
    pub keep_messages: bool,
}

/// Conditional EGNN over a fully connected complement, steered by the
/// signatures `ĝ^1..ĝ^L` and time.
#[derive(Debug, Clone)]
pub struct CondEgnn {
    embed: Mlp,
    layers: Vec<Layer>,
    pub readout: Option<Mlp>,
    pub feature_dim: usize,
    pub sig_dim: usize,
    pub dims: NetDims,
}

impl CondEgnn {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        feature_dim: usize,
        sig_dim: usize,
        n_layers: usize,
        readout: bool,
        dims: NetDims,
    ) -> Result<Self> {
        let h = dims.hidden;
        let embed = Mlp::register(
            store,
            &format!("{prefix}.embed"),
            MlpSpec::new(vec![feature_dim, h], dims.act, Output::None),
        )?;
        let layers = (0..n_layers)
            .map(|l| Layer::register(store, &format!("{prefix}.{l}"), dims, 2 * h + 2 + sig_dim + 1, sig_dim))
            .collect::<Result<_>>()?;
        let readout = if readout && feature_dim > 0 {
            Some(Mlp::register(
                store,
                &format!("{prefix}.readout"),
                MlpSpec::new(vec![h, feature_dim], dims.act, Output::None),
            )?)
        } else {
            None
        };
        Ok(CondEgnn {
            embed,
            layers,
            readout,
            feature_dim,
            sig_dim,
            dims,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn zero_updates(&self, p: &mut ParamStore) {
        self.layers.iter().for_each(|l| l.zero_updates(p));
        if let Some(r) = &self.readout {
            r.zero_last(p);
        }
    }

    /// Runs the network from layer-0 positions `x` and raw features `h`.
    /// `sigs` holds `ĝ⁰..ĝ^L`; layer `ℓ` uses `ĝ^ℓ`.
    pub fn forward<E: Engine>(
        &self,
        d: &mut Dual<E>,
        x: &[DVal<E::M>],
        h: &[DVal<E::M>],
        sigs: &[DVal<E::M>],
        t: f64,
        mode: CondMode,
    ) -> Result<CondOut<E::M>> {
        let n = x.len();
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        if sigs.len() != self.layers.len() + 1 {
            return Err(Error::Config(format!(
                "{} signatures for {} conditional layers",
                sigs.len(),
                self.layers.len()
            )));
        }
        let hd = self.dims.hidden;
        let one = d.constant(vec![1.0]);
        let tv = d.constant(vec![t]);
        let mut hs: Vec<_> = h.iter().map(|v| self.embed.forward(d, v)).collect();
        let mut xs = x.to_vec();
        let mut d0 = vec![vec![None; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let (sq, _) = sq_dist(d, &x[i], &x[j]);
                d0[i][j] = Some(sq.clone());
                d0[j][i] = Some(sq);
            }
        }
        let mut messages = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let last = l + 1 == self.layers.len();
            let g = &sigs[l + 1];
            let mut nx = Vec::with_capacity(n);
            let mut nh = Vec::with_capacity(n);
            let mut kept: Vec<Vec<Option<DVal<E::M>>>> = Vec::new();
            for i in 0..n {
                let restrict = if last { mode.diag_stride.map(|s| (i * s, s)) } else { None };
                let pick = |d: &mut Dual<E>, v: &DVal<E::M>| match restrict {
                    Some((lo, r)) => d.restrict(v, lo, r),
                    None => v.clone(),
                };
                let xi = pick(d, &xs[i]);
                let hi = pick(d, &hs[i]);
                let mut agg = Vec::with_capacity(n);
                let mut dx = Vec::with_capacity(n);
                let mut row = vec![None; n];
                for j in (0..n).filter(|&j| j != i) {
                    let xj = pick(d, &xs[j]);
                    let hj = pick(d, &hs[j]);
                    let d0ij = pick(d, d0[i][j].as_ref().unwrap());
                    let (sq, diff) = sq_dist(d, &xi, &xj);
                    let inp = d.concat(&[hi.clone(), hj, sq.clone(), d0ij, g.clone(), tv.clone()]);
                    let m = layer.phi_e.forward(d, &inp);
                    let mg = d.concat(&[m.clone(), g.clone()]);
                    let b = layer.phi_b.forward(d, &mg);
                    agg.push(d.mul(&m, &b));
                    let s = layer.phi_x.forward(d, &mg);
                    let s = d.unary(&s, Fun::Tanh);
                    dx.push(coord_term(d, &diff, &sq, &s, &one));
                    if last && mode.keep_messages {
                        row[j] = Some(m);
                    }
                }
                let mi = d.add_n(&agg, hd);
                let dxs = d.add_n(&dx, 3);
                nx.push(d.add(&xi, &dxs));
                let hin = d.concat(&[hi.clone(), mi, g.clone()]);
                let dh = layer.phi_h.forward(d, &hin);
                nh.push(d.add(&hi, &dh));
                if last && mode.keep_messages {
                    kept.push(row);
                }
            }
            xs = nx;
            hs = nh;
            if last && mode.keep_messages {
                messages = Some(kept);
            }
        }
        Ok(CondOut {
            x: xs,
            hidden: hs,
            messages,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::graph3d::{apply_perm, apply_rigid, Permutation, RigidTransform};
    use crate::nnkit::Eager;
    use crate::rng::{self, SeededRng};
    use rand::Rng;

    pub fn dims() -> NetDims {
        NetDims {
            hidden: 8,
            depth: 1,
            act: Hidden::Silu,
        }
    }

    pub fn random_graph(rng: &mut SeededRng, n: usize, dh: usize, de: usize, globals: &[usize]) -> Graph3D {
        let x: Vec<_> = (0..n).map(|_| [rng::normal(rng), rng::normal(rng), rng::normal(rng)]).collect();
        let h: Vec<_> = (0..n).map(|_| rng::normal_vec(rng, dh)).collect();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random_bool(0.4) {
                    edges.push((i, j, rng::normal_vec(rng, de)));
                }
            }
        }
        let a = globals.iter().map(|&k| rng::normal_vec(rng, k)).collect();
        Graph3D::with_dims(x, h, dh, edges, a).unwrap()
    }

    fn base(store: &mut ParamStore) -> BaseEgnn {
        BaseEgnn::register(store, "base", 3, 2, 3, 2, dims()).unwrap()
    }

    fn values<E: Engine>(d: &Dual<E>, v: &[DVal<E::M>]) -> Vec<Vec<f64>> {
        v.iter().map(|x| d.value(x).to_vec()).collect()
    }

    fn max_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(u, v)| (u - v).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn zero_update_layers_are_identity() {
        let mut p = ParamStore::new();
        let b = base(&mut p);
        p.init(1);
        b.zero_updates(&mut p);
        let g = random_graph(&mut rng::seeded(2), 6, 3, 2, &[1, 2]);
        let mut d = Dual::new(Eager::new(&p));
        let s = b.forward(&mut d, &g).unwrap();
        for l in 1..=2 {
            assert_eq!(values(&d, &s.x[l]), values(&d, &s.x[0]));
            assert_eq!(values(&d, &s.h[l]), values(&d, &s.h[0]));
        }
    }

    #[test]
    fn base_is_rigid_equivariant() {
        let mut p = ParamStore::new();
        let b = base(&mut p);
        let mut r = rng::seeded(3);
        for k in 0..10 {
            p.init(k);
            let g = random_graph(&mut r, 7, 3, 2, &[1, 2]);
            let t = RigidTransform::random(&mut r, 3.0);
            let mut d = Dual::new(Eager::new(&p));
            let s1 = b.forward(&mut d, &g).unwrap();
            let s2 = b.forward(&mut d, &apply_rigid(&t, &g)).unwrap();
            let moved: Vec<Vec<f64>> = s1.x[2].iter().map(|x| t.apply(&d.value(x).try_into().unwrap()).to_vec()).collect();
            assert!(max_diff(&moved, &values(&d, &s2.x[2])) < 1e-9);
            assert!(max_diff(&values(&d, &s1.h[2]), &values(&d, &s2.h[2])) < 1e-9);
        }
    }

    #[test]
    fn symmetric_vertices_get_equal_features() {
        let mut p = ParamStore::new();
        let b = base(&mut p);
        p.init(4);
        let x = vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.5, 0.0]];
        let h = vec![vec![0.3, 0.1, -0.2], vec![0.3, 0.1, -0.2], vec![1.0, 0.0, 0.0]];
        let g = Graph3D::new(
            x,
            h,
            vec![(0, 2, vec![0.5, 1.0]), (1, 2, vec![0.5, 1.0])],
            vec![vec![1.0], vec![0.0, 2.0]],
        )
        .unwrap();
        let mut d = Dual::new(Eager::new(&p));
        let s = b.forward(&mut d, &g).unwrap();
        let h = values(&d, &s.h[2]);
        assert!(max_diff(&h[0..1], &h[1..2]) < 1e-12);
    }

    #[test]
    fn signatures_are_invariant_and_time_dependent() {
        let mut p = ParamStore::new();
        let b = base(&mut p);
        let sig = SignatureNet::register(&mut p, "sig", 8, 2, 2, 4, dims()).unwrap();
        p.init(5);
        let mut r = rng::seeded(6);
        let g = random_graph(&mut r, 6, 3, 2, &[1, 2]);
        let t = RigidTransform::random(&mut r, 2.0);
        let pi = Permutation::random(&mut r, 6);
        let mut d = Dual::new(Eager::new(&p));
        let run = |d: &mut Dual<Eager>, g: &Graph3D, t: f64| {
            let s = b.forward(d, g).unwrap();
            let sg = sig.forward(d, &s.h_av, t);
            values(d, &sg)
        };
        let g0 = run(&mut d, &g, 0.3);
        assert!(max_diff(&g0, &run(&mut d, &apply_rigid(&t, &g), 0.3)) < 1e-9);
        assert!(max_diff(&g0, &run(&mut d, &apply_perm(&pi, &g).unwrap(), 0.3)) < 1e-12);
        assert_eq!(g0.len(), 3);

        for k in sig.time_weight_column(&p) {
            p.data_mut()[k] = 0.0;
        }
        let k = sig.time_weight_column(&p)[0];
        p.data_mut()[k] = 2.0;
        let mut d = Dual::new(Eager::new(&p));
        let a = run(&mut d, &g, 0.0);
        let c = run(&mut d, &g, 1.0);
        assert!(max_diff(&a[0..1], &c[0..1]) > 1e-6);
    }

    fn cond_setup(p: &mut ParamStore) -> CondEgnn {
        CondEgnn::register(p, "cond", 2, 4, 2, true, dims()).unwrap()
    }

    fn run_cond(p: &ParamStore, c: &CondEgnn, g: &Graph3D, sig: &[Vec<f64>], t: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut d = Dual::new(Eager::new(p));
        let x = constant_rows(&mut d, g.positions().iter().map(|x| x.to_vec()));
        let h = constant_rows(&mut d, g.features().iter().cloned());
        let s = constant_rows(&mut d, sig.iter().cloned());
        let out = c.forward(&mut d, &x, &h, &s, t, CondMode::default()).unwrap();
        (values(&d, &out.x), values(&d, &out.hidden))
    }

    #[test]
    fn single_vertex_moves_only_features() {
        let mut p = ParamStore::new();
        let c = cond_setup(&mut p);
        p.init(7);
        let g = random_graph(&mut rng::seeded(8), 1, 2, 0, &[]);
        let sig = vec![vec![0.1; 4]; 3];
        let (x, _) = run_cond(&p, &c, &g, &sig, 0.5);
        assert_eq!(x[0], g.positions()[0].to_vec());
    }

    #[test]
    fn cond_rotation_and_permutation_equivariance() {
        let mut p = ParamStore::new();
        let c = cond_setup(&mut p);
        let mut r = rng::seeded(9);
        for k in 0..10 {
            p.init(100 + k);
            let g = random_graph(&mut r, 5, 2, 0, &[]);
            let sig: Vec<_> = (0..3).map(|_| rng::normal_vec(&mut r, 4)).collect();
            let (x, h) = run_cond(&p, &c, &g, &sig, 0.4);
            let rot = RigidTransform::random(&mut r, 0.0).rotation_only();
            let (xr, hr) = run_cond(&p, &c, &apply_rigid(&rot, &g), &sig, 0.4);
            let moved: Vec<Vec<f64>> = x.iter().map(|v| rot.apply(&v.clone().try_into().unwrap()).to_vec()).collect();
            assert!(max_diff(&moved, &xr) < 1e-9);
            assert!(max_diff(&h, &hr) < 1e-9);
            let pi = Permutation::random(&mut r, 5);
            let (xp, hp) = run_cond(&p, &c, &apply_perm(&pi, &g).unwrap(), &sig, 0.4);
            let px: Vec<_> = pi.as_slice().iter().map(|&s| x[s].clone()).collect();
            let ph: Vec<_> = pi.as_slice().iter().map(|&s| h[s].clone()).collect();
            assert!(max_diff(&px, &xp) < 1e-12);
            assert!(max_diff(&ph, &hp) < 1e-12);
        }
    }

    #[test]
    fn signature_depth_mismatch_is_config_error() {
        let mut p = ParamStore::new();
        let c = cond_setup(&mut p);
        let g = random_graph(&mut rng::seeded(1), 2, 2, 0, &[]);
        let mut d = Dual::new(Eager::new(&p));
        let x = constant_rows(&mut d, g.positions().iter().map(|x| x.to_vec()));
        let h = constant_rows(&mut d, g.features().iter().cloned());
        let s = vec![d.zeros(4)];
        assert!(matches!(
            c.forward(&mut d, &x, &h, &s, 0.0, CondMode::default()),
            Err(Error::Config(_))
        ));
    }
}
