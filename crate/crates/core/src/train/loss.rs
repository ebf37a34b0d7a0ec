//! Per-complex losses with exact parameter gradients.
//!
//! The flow term is differentiated through the fixed-step RK4 solve: a
//! numeric sweep stores the state at every grid point, then each step is
//! re-recorded on its own tape and back-propagated in reverse order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::field::{self, NeuralField};
use crate::flow::ode::{rk4_grid, rk4_step, Rhs};
use crate::flow::{log_standard_normal, AffineCentering, VectorField};
use crate::graph3d::{Graph3D, VertexVector};
use crate::model::Model;
use crate::nnkit::{DVal, Dual, Eager, NodeId, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub flow: f64,
    pub number: f64,
    pub edge: f64,
    pub property: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            flow: 1.0,
            number: 1.0,
            edge: 1.0,
            property: 1.0,
        }
    }
}

/// Fixed-step settings of the differentiable solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowTrain {
    pub steps: usize,
    /// Weight of `∫₀¹ ‖f‖² dt`.
    pub kinetic: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    /// `−ln p(v | R̂)` under the fixed-step solve.
    pub flow: f64,
    pub kinetic: f64,
    pub number: f64,
    pub edge: f64,
    pub property: f64,
}

impl LossParts {
    pub fn total(&self, w: &LossWeights, kinetic: f64) -> f64 {
        w.flow * (self.flow + kinetic * self.kinetic) + w.number * self.number + w.edge * self.edge + w.property * self.property
    }

    pub fn add_scaled(&mut self, o: &LossParts, s: f64) {
        self.flow += s * o.flow;
        self.kinetic += s * o.kinetic;
        self.number += s * o.number;
        self.edge += s * o.edge;
        self.property += s * o.property;
    }
}

/// `[u, ℓ, κ]` with `dℓ/dt = div f`, `dκ/dt = ‖f‖²`.
struct KineticRhs<'a> {
    field: &'a dyn VectorField,
}

impl Rhs for KineticRhs<'_> {
    fn eval(&mut self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let n = self.field.dim();
        let (mut f, div) = self.field.eval(t, &y[..n], true)?;
        let k = f.iter().map(|v| v * v).sum();
        f.push(div);
        f.push(k);
        Ok(f)
    }
}

struct Sweep {
    /// States at the grid points, from `t = 1` down to `t = 0`.
    states: Vec<Vec<f64>>,
    grid: Vec<f64>,
    z: Vec<f64>,
    ell: f64,
    kappa: f64,
}

fn sweep(field: &dyn VectorField, u1: &[f64], steps: usize) -> Result<Sweep> {
    let n = u1.len();
    let grid = rk4_grid(1.0, 0.0, steps);
    let mut rhs = KineticRhs { field };
    let mut y = u1.to_vec();
    y.extend([0.0, 0.0]);
    let mut states = vec![u1.to_vec()];
    for w in grid.windows(2) {
        y = rk4_step(&mut rhs, w[0], &y, w[1] - w[0])?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite flow state at t = {}", w[1])));
        }
        states.push(y[..n].to_vec());
    }
    Ok(Sweep {
        z: y[..n].to_vec(),
        ell: y[n],
        kappa: y[n + 1],
        states,
        grid,
    })
}

/// Flow loss `−ln p` and kinetic integral under `steps` RK4 steps.
pub fn flow_loss(model: &Model, v: &VertexVector, base: &Graph3D, steps: usize) -> Result<(f64, f64)> {
    let c = AffineCentering::new(v.n_vertices(), base)?;
    let u = c.forward(v)?;
    let f = NeuralField::new(model, model.base_means(base)?, v.n_vertices());
    let s = sweep(&f, u.as_slice(), steps)?;
    // ℓ(0) = −∫₀¹ div and κ(0) = −∫₀¹ ‖f‖².
    Ok((-(log_standard_normal(&s.z) + s.ell + c.log_det()), -s.kappa))
}

/// Gradient of the flow objective.
pub struct FlowGrad {
    pub nll: f64,
    pub kinetic: f64,
    pub params: Vec<f64>,
    /// Gradient with respect to the base layer means `ĥ^ℓ_av`.
    pub h_av: Vec<Vec<f64>>,
}

type TVal = DVal<NodeId>;

fn stage(
    d: &mut Dual<Tape>,
    model: &Model,
    h_av: &[TVal],
    u: &TVal,
    n: usize,
    t: f64,
) -> Result<(TVal, TVal, TVal)> {
    let d_h = model.config.feature_dim;
    let (x, h) = field::vertex_inputs(d, std::slice::from_ref(u), n, d_h, true);
    let v = field::velocity(d, model, h_av, &x, &h, t, true)?;
    let div = field::divergence(d, &v, 3 + d_h);
    let mut xs = Vec::with_capacity(2 * n);
    for vi in &v {
        let p = d.detach(vi);
        xs.push(d.slice(&p, 0, 3));
    }
    if d_h > 0 {
        for vi in &v {
            let p = d.detach(vi);
            xs.push(d.slice(&p, 3, d_h));
        }
    }
    let f = d.concat(&xs);
    let sq = d.mul(&f, &f);
    let k = d.sum(&sq);
    Ok((f, div, k))
}

/// Back-propagates `(a_u, a_ℓ, a_κ)` through one recorded RK4 step.
#[allow(clippy::too_many_arguments)]
fn step_backward(
    model: &Model,
    h_av: &[Vec<f64>],
    u: &[f64],
    t: f64,
    h: f64,
    n: usize,
    adj: (&[f64], f64, f64),
    gp: &mut [f64],
    gh: &mut [Vec<f64>],
) -> Result<Vec<f64>> {
    let mut d = Dual::new(Tape::new(&model.params, true));
    let hav_ids: Vec<NodeId> = h_av.iter().map(|v| d.e.leaf(1, v.len(), v.clone())).collect();
    let hav: Vec<TVal> = hav_ids.iter().map(|&id| d.lift(id)).collect();
    let u_id = d.e.leaf(1, u.len(), u.to_vec());
    let u0 = d.lift(u_id);

    let (k1, l1, q1) = stage(&mut d, model, &hav, &u0, n, t)?;
    let s = d.scale(&k1, h / 2.0);
    let u2 = d.add(&u0, &s);
    let (k2, l2, q2) = stage(&mut d, model, &hav, &u2, n, t + h / 2.0)?;
    let s = d.scale(&k2, h / 2.0);
    let u3 = d.add(&u0, &s);
    let (k3, l3, q3) = stage(&mut d, model, &hav, &u3, n, t + h / 2.0)?;
    let s = d.scale(&k3, h);
    let u4 = d.add(&u0, &s);
    let (k4, l4, q4) = stage(&mut d, model, &hav, &u4, n, t + h)?;

    let combine = |d: &mut Dual<Tape>, a: &TVal, b: &TVal, c: &TVal, e: &TVal, w: usize| {
        let b2 = d.scale(b, 2.0);
        let c2 = d.scale(c, 2.0);
        let s = d.add_n(&[a.clone(), b2, c2, e.clone()], w);
        d.scale(&s, h / 6.0)
    };
    let du = combine(&mut d, &k1, &k2, &k3, &k4, u.len());
    let dl = combine(&mut d, &l1, &l2, &l3, &l4, 1);
    let dk = combine(&mut d, &q1, &q2, &q3, &q4, 1);

    let tape = d.into_inner();
    // `u_next = u + du`, so the state adjoint passes straight through to `u`
    // in addition to flowing through `du`.
    let grads = tape.backward(&[(du.p, adj.0.to_vec()), (dl.p, vec![adj.1]), (dk.p, vec![adj.2])]);
    for (a, b) in gp.iter_mut().zip(&grads.params) {
        *a += b;
    }
    for (acc, &id) in gh.iter_mut().zip(&hav_ids) {
        if let Some(g) = grads.node(id) {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
    }
    let mut gu = adj.0.to_vec();
    if let Some(g) = grads.node(u_id) {
        for (a, b) in gu.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok(gu)
}

/// `−ln p` plus `kinetic · ∫‖f‖²` and its gradient.
pub fn flow_loss_grad(model: &Model, v: &VertexVector, base: &Graph3D, cfg: FlowTrain) -> Result<FlowGrad> {
    let n = v.n_vertices();
    let c = AffineCentering::new(n, base)?;
    let u = c.forward(v)?;
    let h_av = model.base_means(base)?;
    let f = NeuralField::new(model, h_av.clone(), n);
    let s = sweep(&f, u.as_slice(), cfg.steps)?;

    let mut gp = vec![0.0; model.params.len()];
    let mut gh: Vec<Vec<f64>> = h_av.iter().map(|v| vec![0.0; v.len()]).collect();
    // L = −ln N(z) − ℓ(0) − ln|det Ω| − kinetic · κ(0).
    let mut a_u = s.z.clone();
    let (a_l, a_k) = (-1.0, -cfg.kinetic);
    for k in (0..cfg.steps).rev() {
        let (t0, t1) = (s.grid[k], s.grid[k + 1]);
        a_u = step_backward(model, &h_av, &s.states[k], t0, t1 - t0, n, (&a_u, a_l, a_k), &mut gp, &mut gh)?;
    }
    Ok(FlowGrad {
        nll: -(log_standard_normal(&s.z) + s.ell + c.log_det()),
        kinetic: -s.kappa,
        params: gp,
        h_av: gh,
    })
}

/// One training example.
#[derive(Debug, Clone)]
pub struct Example<'a> {
    pub base: &'a Graph3D,
    pub complement: &'a Graph3D,
    /// Complement vertex vector with dequantized features.
    pub v: VertexVector,
}

/// Head losses on an eager pass: number, edge, property.
pub fn head_losses(model: &Model, base: &Graph3D, complement: &Graph3D) -> Result<(f64, f64, f64)> {
    let mut d = Dual::new(Eager::new(&model.params));
    let st = model.base.forward(&mut d, base)?;
    let num = model.number.nll(&mut d, &st, complement.n_vertices())?;
    let es = model.edge.forward(&mut d, &st, complement)?;
    let targets = model.edge.targets(complement)?;
    let e = model.edge.nll(&mut d, &es, &targets);
    let p = model.property.nll(&mut d, &es.hidden, complement)?;
    Ok((d.value(&num)[0], d.value(&e)[0], d.value(&p)[0]))
}

/// All losses of one complex and the gradient of their weighted sum.
pub fn example_grad(
    model: &Model,
    ex: &Example,
    w: &LossWeights,
    flow: Option<FlowTrain>,
) -> Result<(LossParts, Vec<f64>)> {
    let mut parts = LossParts::default();
    let mut grad = vec![0.0; model.params.len()];
    let mut gh = None;
    if let Some(cfg) = flow.filter(|_| w.flow != 0.0) {
        let fg = flow_loss_grad(model, &ex.v, ex.base, cfg)?;
        parts.flow = fg.nll;
        parts.kinetic = fg.kinetic;
        for (a, b) in grad.iter_mut().zip(&fg.params) {
            *a += w.flow * b;
        }
        gh = Some(fg.h_av);
    }

    let mut d = Dual::new(Tape::new(&model.params, true));
    let st = model.base.forward(&mut d, ex.base)?;
    let num = model.number.nll(&mut d, &st, ex.complement.n_vertices())?;
    let es = model.edge.forward(&mut d, &st, ex.complement)?;
    let targets = model.edge.targets(ex.complement)?;
    let e = model.edge.nll(&mut d, &es, &targets);
    let p = model.property.nll(&mut d, &es.hidden, ex.complement)?;
    parts.number = d.value(&num)[0];
    parts.edge = d.value(&e)[0];
    parts.property = d.value(&p)[0];
    let mut seeds = vec![(num.p, vec![w.number]), (e.p, vec![w.edge]), (p.p, vec![w.property])];
    if let Some(gh) = gh {
        for (hv, g) in st.h_av.iter().zip(gh) {
            seeds.push((hv.p, g.iter().map(|v| w.flow * v).collect()));
        }
    }
    let tape = d.into_inner();
    let g = tape.backward(&seeds);
    for (a, b) in grad.iter_mut().zip(&g.params) {
        *a += b;
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok((parts, grad))
}

#[cfg(test)]
mod tests;
