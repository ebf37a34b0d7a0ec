//! Conditional flow: centering, the ODE, exact likelihood, and sampling.
//!
//! A complement vertex vector `v` is centered to `u = Ω v + ω`; `u` is the
//! time-1 state of `du/dt = γ(G_u, R̂, t)` started from Gaussian noise `z`.
//! The density is
//! `ln p(v) = ln N(z; 0, I) − ∫₀¹ div γ dt + 3 ln(1 − α)`.

pub mod affine;
pub mod field;
pub mod ode;

use std::f64::consts::PI;

pub use affine::AffineCentering;
pub use field::{LinearField, NeuralField, VectorField};
pub use ode::OdeConfig;

use crate::error::{Error, Result};
use crate::graph3d::{Graph3D, Vec3, VertexVector};
use crate::model::Model;
use crate::nnkit::{Dual, Eager};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub u1: VertexVector,
    pub z: VertexVector,
    /// `∫₀¹ div f dt`.
    pub divergence_integral: f64,
    pub nfe: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Likelihood {
    pub log_p: f64,
    pub z: VertexVector,
    pub divergence_integral: f64,
    pub log_det: f64,
    pub nfe: usize,
}

pub fn log_standard_normal(z: &[f64]) -> f64 {
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * z.len() as f64 * (2.0 * PI).ln()
}

/// Integrates `field` from `t0` to `t1`, co-integrating the divergence when
/// asked. Returns the final state, `ℓ(t1) − ℓ(t0)`, and the evaluation count.
pub fn integrate_field(
    field: &dyn VectorField,
    y0: &[f64],
    t0: f64,
    t1: f64,
    cfg: &OdeConfig,
    with_div: bool,
) -> Result<(Vec<f64>, f64, usize)> {
    if y0.len() != field.dim() {
        return Err(Error::Size(format!(
            "initial state has {} entries, field expects {}",
            y0.len(),
            field.dim()
        )));
    }
    let mut aug = field::Augmented { field, with_div };
    let mut y = y0.to_vec();
    if with_div {
        y.push(0.0);
    }
    let sol = ode::solve(&mut aug, &y, t0, t1, cfg)?;
    let mut y = sol.y;
    let l = if with_div { y.pop().unwrap() } else { 0.0 };
    Ok((y, l, sol.nfe))
}

/// `γ` at time `t` for the complement's current vertices, as
/// `(position velocity, feature velocity)` per vertex.
pub fn gamma(model: &Model, complement: &Graph3D, base: &Graph3D, t: f64) -> Result<Vec<(Vec3, Vec<f64>)>> {
    let n = complement.n_vertices();
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    let h_av = model.base_means(base)?;
    let mut d = Dual::new(Eager::new(&model.params));
    let h_av: Vec<_> = h_av.into_iter().map(|v| d.constant(v)).collect();
    let x: Vec<_> = complement.positions().iter().map(|p| d.constant(p.to_vec())).collect();
    let h: Vec<_> = complement.features().iter().map(|f| d.constant(f.clone())).collect();
    let v = field::velocity(&mut d, model, &h_av, &x, &h, t, false)?;
    Ok(v
        .iter()
        .map(|r| {
            let r = d.value(r);
            ([r[0], r[1], r[2]], r[3..].to_vec())
        })
        .collect())
}

fn check_complement(model: &Model, v: &VertexVector) -> Result<()> {
    if v.n_vertices() == 0 {
        return Err(Error::EmptyGraph);
    }
    if v.feature_dim() != model.config.feature_dim {
        return Err(Error::Size(format!(
            "complement has {} features per vertex, model expects {}",
            v.feature_dim(),
            model.config.feature_dim
        )));
    }
    Ok(())
}

/// Solves from `z` at `t = 0` to `u(1)`.
pub fn integrate_flow(model: &Model, z: &VertexVector, base: &Graph3D, cfg: &OdeConfig, with_div: bool) -> Result<FlowResult> {
    check_complement(model, z)?;
    let f = NeuralField::new(model, model.base_means(base)?, z.n_vertices());
    let (u1, l, nfe) = integrate_field(&f, z.as_slice(), 0.0, 1.0, cfg, with_div)?;
    Ok(FlowResult {
        u1: VertexVector::new(u1, z.n_vertices(), z.feature_dim())?,
        z: z.clone(),
        divergence_integral: l,
        nfe,
    })
}

/// `ln p(v | R̂)` by integrating backward from the centered state.
pub fn log_likelihood(model: &Model, v: &VertexVector, base: &Graph3D, cfg: &OdeConfig) -> Result<Likelihood> {
    check_complement(model, v)?;
    let c = AffineCentering::new(v.n_vertices(), base)?;
    let u = c.forward(v)?;
    let f = NeuralField::new(model, model.base_means(base)?, v.n_vertices());
    let (z, l0, nfe) = integrate_field(&f, u.as_slice(), 1.0, 0.0, cfg, true)?;
    // ℓ(1) = 0, so ∫₀¹ div = ℓ(1) − ℓ(0) = −ℓ(0).
    let div = -l0;
    let log_det = c.log_det();
    let log_p = log_standard_normal(&z) - div + log_det;
    if !log_p.is_finite() {
        return Err(Error::Numeric("non-finite log-likelihood".into()));
    }
    Ok(Likelihood {
        log_p,
        z: VertexVector::new(z, v.n_vertices(), v.feature_dim())?,
        divergence_integral: div,
        log_det,
        nfe,
    })
}

/// Standard normal draw of a vertex vector, fixed by `seed`.
pub fn draw_noise(model: &Model, n: usize, seed: u64) -> VertexVector {
    let mut r = rng::seeded(seed);
    let d_h = model.config.feature_dim;
    VertexVector::new(rng::normal_vec(&mut r, (3 + d_h) * n), n, d_h).expect("sized by construction")
}

/// Pushes `z` through the flow and un-centers.
pub fn sample_from(model: &Model, base: &Graph3D, z: &VertexVector, cfg: &OdeConfig) -> Result<VertexVector> {
    let c = AffineCentering::new(z.n_vertices(), base)?;
    let r = integrate_flow(model, z, base, cfg, false)?;
    c.inverse(&r.u1)
}

/// Samples `N` complement vertices for `base`.
pub fn sample(model: &Model, base: &Graph3D, n: usize, seed: u64, cfg: &OdeConfig) -> Result<VertexVector> {
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    sample_from(model, base, &draw_noise(model, n, seed), cfg)
}

#[cfg(test)]
mod tests;
