use crate::error::{Error, Result};
use crate::model::Model;
use crate::nnkit::{DVal, Dual, Eager, Engine};

use super::ode::Rhs;

/// A time-dependent vector field on flat vertex vectors, with its divergence.
pub trait VectorField {
    fn dim(&self) -> usize;
    /// `f(t, u)` and, when asked, `tr(∂f/∂u)` (otherwise 0).
    fn eval(&self, t: f64, u: &[f64], with_div: bool) -> Result<(Vec<f64>, f64)>;
    /// Number of leading 3-vectors in the state; see [`Rhs::spatial_vectors`].
    fn spatial_vectors(&self) -> usize {
        0
    }
}

/// `f(u) = A u`, a test field with known flow and divergence.
#[derive(Debug, Clone)]
pub struct LinearField {
    pub a: Vec<Vec<f64>>,
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn eval(&self, _t: f64, u: &[f64], _with_div: bool) -> Result<(Vec<f64>, f64)> {
        let f = self.a.iter().map(|r| r.iter().zip(u).map(|(a, b)| a * b).sum()).collect();
        let tr = (0..self.a.len()).map(|k| self.a[k][k]).sum();
        Ok((f, tr))
    }
}

/// Per-vertex velocity `(dx_i, dh_i)` of width `3 + d_h` at time `t`.
///
/// `x` and `h` are the centered positions and features. With `diag`, the
/// final network layer keeps only the tangent rows of each vertex's own
/// block, which is all the divergence needs.
pub fn velocity<E: Engine>(
    d: &mut Dual<E>,
    model: &Model,
    h_av: &[DVal<E::M>],
    x: &[DVal<E::M>],
    h: &[DVal<E::M>],
    t: f64,
    diag: bool,
) -> Result<Vec<DVal<E::M>>> {
    let s = 3 + model.config.feature_dim;
    let sigs = model.sig.forward(d, h_av, t);
    let out = model.cond.forward(
        d,
        x,
        h,
        &sigs,
        t,
        crate::egnn::CondMode {
            diag_stride: diag.then_some(s),
            keep_messages: false,
        },
    )?;
    let bias = model.debug_bias.map(|b| d.constant(b.to_vec()));
    let mut v = Vec::with_capacity(x.len());
    for (i, (xl, hl)) in out.x.iter().zip(&out.hidden).enumerate() {
        let mut dx = if model.config.displaced {
            d.sub(xl, &x[i])
        } else {
            xl.clone()
        };
        if let Some(b) = &bias {
            dx = d.add(&dx, b);
        }
        v.push(match &model.cond.readout {
            Some(r) => {
                let dh = r.forward(d, hl);
                d.concat(&[dx, dh])
            }
            None => dx,
        });
    }
    Ok(v)
}

/// `Σ_i tr ∂v_i/∂u_i` from seeded tangents.
pub fn divergence<E: Engine>(d: &mut Dual<E>, v: &[DVal<E::M>], stride: usize) -> DVal<E::M> {
    let traces: Vec<_> = v.iter().enumerate().map(|(i, vi)| d.tangent_trace(vi, i * stride)).collect();
    d.add_n(&traces, 1)
}

/// Splits a flat vertex vector into per-vertex positions and features,
/// optionally seeding tangents in vertex-major order.
pub fn vertex_inputs<E: Engine>(
    d: &mut Dual<E>,
    u: &[DVal<E::M>],
    n: usize,
    d_h: usize,
    seed: bool,
) -> (Vec<DVal<E::M>>, Vec<DVal<E::M>>) {
    debug_assert_eq!(u.len(), 1);
    let s = 3 + d_h;
    let mut xs = Vec::with_capacity(n);
    let mut hs = Vec::with_capacity(n);
    for i in 0..n {
        let x = d.slice(&u[0], 3 * i, 3);
        let h = d.slice(&u[0], 3 * n + d_h * i, d_h);
        xs.push(if seed { d.seed(&x, i * s) } else { x });
        hs.push(if seed && d_h > 0 { d.seed(&h, i * s + 3) } else { h });
    }
    (xs, hs)
}

/// Reassembles per-vertex velocities into the positions-first layout.
pub fn flatten(v: &[Vec<f64>]) -> Vec<f64> {
    let mut out: Vec<f64> = v.iter().flat_map(|r| r[..3].iter().copied()).collect();
    out.extend(v.iter().flat_map(|r| r[3..].iter().copied()));
    out
}

/// The conditional flow field of a model for one base graph.
pub struct NeuralField<'m> {
    pub model: &'m Model,
    pub h_av: Vec<Vec<f64>>,
    pub n: usize,
}

impl<'m> NeuralField<'m> {
    pub fn new(model: &'m Model, h_av: Vec<Vec<f64>>, n: usize) -> Self {
        NeuralField { model, h_av, n }
    }
}

impl VectorField for NeuralField<'_> {
    fn dim(&self) -> usize {
        self.model.d_v(self.n)
    }

    fn spatial_vectors(&self) -> usize {
        self.n
    }

    fn eval(&self, t: f64, u: &[f64], with_div: bool) -> Result<(Vec<f64>, f64)> {
        let dim = self.dim();
        if u.len() != dim {
            return Err(Error::Size(format!("state has {} entries, field expects {dim}", u.len())));
        }
        let cap = self.model.config.divergence_cap;
        if with_div && dim > cap {
            return Err(Error::Capacity { dim, cap });
        }
        let d_h = self.model.config.feature_dim;
        let mut d = Dual::new(Eager::new(&self.model.params));
        let h_av: Vec<_> = self.h_av.iter().map(|v| d.constant(v.clone())).collect();
        let uv = d.constant(u.to_vec());
        let (x, h) = vertex_inputs(&mut d, &[uv], self.n, d_h, with_div);
        let v = velocity(&mut d, self.model, &h_av, &x, &h, t, with_div)?;
        let div = if with_div {
            let dv = divergence(&mut d, &v, 3 + d_h);
            d.value(&dv)[0]
        } else {
            0.0
        };
        let rows: Vec<Vec<f64>> = v.iter().map(|r| d.value(r).to_vec()).collect();
        Ok((flatten(&rows), div))
    }
}

/// `Σ_k ∂f_k/∂u_k` by central differences.
pub fn divergence_fd(field: &dyn VectorField, t: f64, u: &[f64], eps: f64) -> Result<f64> {
    let mut w = u.to_vec();
    let mut acc = 0.0;
    for k in 0..u.len() {
        w[k] = u[k] + eps;
        let fp = field.eval(t, &w, false)?.0[k];
        w[k] = u[k] - eps;
        let fm = field.eval(t, &w, false)?.0[k];
        w[k] = u[k];
        acc += (fp - fm) / (2.0 * eps);
    }
    Ok(acc)
}

/// `[u, ℓ] ↦ [f(t, u), div f(t, u)]`.
pub struct Augmented<'a> {
    pub field: &'a dyn VectorField,
    pub with_div: bool,
}

impl Rhs for Augmented<'_> {
    fn eval(&mut self, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let n = self.field.dim();
        let (mut f, div) = self.field.eval(t, &y[..n], self.with_div)?;
        if self.with_div {
            f.push(div);
        }
        Ok(f)
    }

    fn spatial_vectors(&self) -> usize {
        self.field.spatial_vectors()
    }
}
