//! Executable invariance, determinant, invertibility and gradient checks.
//!
//! Every check reports the largest violation it saw over its probes along
//! with the tolerance it is held to.

use std::fmt;

use rand::Rng;

use crate::error::Result;
use crate::flow::{self, field, gamma, AffineCentering, NeuralField, OdeConfig, VectorField};
use crate::graph3d::{apply_perm, apply_rigid, Graph3D, Permutation, RigidTransform, Vec3};
use crate::model::Model;
use crate::nnkit::gradcheck::{grad_check, spread_indices};
use crate::nnkit::{Dual, Eager, ParamStore};
use crate::rng::{self, SeededRng};
use crate::train::loss::{self, Example, FlowTrain, LossWeights};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub max_violation: f64,
    pub tolerance: f64,
    pub probes: usize,
}

impl Check {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Check {
            name,
            max_violation: 0.0,
            tolerance,
            probes: 0,
        }
    }

    fn record(&mut self, v: f64) {
        self.probes += 1;
        // NaN counts as a failure.
        self.max_violation = if v.is_nan() { f64::INFINITY } else { self.max_violation.max(v) };
    }

    pub fn passed(&self) -> bool {
        self.max_violation <= self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(
            f,
            "{:<24} {}  max violation {:.3e}  tolerance {:.0e}  probes {}",
            self.name,
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_violation,
            self.tolerance,
            self.probes
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Probes per equivariance check.
    pub probes: usize,
    /// Probes per likelihood check.
    pub nll_probes: usize,
    pub max_n: usize,
    pub max_base: usize,
    pub ode: OdeConfig,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 0,
            probes: 50,
            nll_probes: 20,
            max_n: 8,
            max_base: 30,
            ode: OdeConfig::dopri5(1e-6, 1e-6),
        }
    }
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn one_hot(rng: &mut SeededRng, k: usize) -> Vec<f64> {
    let c = rng.random_range(0..k.max(1));
    (0..k).map(|i| (i == c) as u8 as f64).collect()
}

/// A random `(complement, base)` pair shaped for `model`.
pub fn random_complex(model: &Model, rng: &mut SeededRng, n: usize, n_base: usize) -> (Graph3D, Graph3D) {
    let c = &model.config;
    let pos = |rng: &mut SeededRng| -> Vec3 { [rng::normal(rng), rng::normal(rng), rng::normal(rng)] };
    let mut base_edges = Vec::new();
    for i in 0..n_base {
        for j in i + 1..n_base {
            if rng.random_bool(0.3) {
                base_edges.push((i, j, rng::normal_vec(rng, c.base_edge_dim)));
            }
        }
    }
    let base = Graph3D::with_dims(
        (0..n_base).map(|_| pos(rng)).collect(),
        (0..n_base).map(|_| rng::normal_vec(rng, c.base_feature_dim)).collect(),
        c.base_feature_dim,
        base_edges,
        vec![rng::normal_vec(rng, c.base_global_dim)],
    )
    .expect("valid by construction");
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random_bool(0.4) {
                edges.push((i, j, one_hot(rng, c.edge_dim)));
            }
        }
    }
    let comp = Graph3D::with_dims(
        (0..n).map(|_| pos(rng).map(|v| 0.7 * v + 1.0)).collect(),
        (0..n).map(|_| rng::normal_vec(rng, c.feature_dim)).collect(),
        c.feature_dim,
        edges,
        c.property_dims.iter().map(|&k| one_hot(rng, k)).collect(),
    )
    .expect("valid by construction");
    (comp, base)
}

fn sizes(cfg: &SuiteConfig, rng: &mut SeededRng) -> (usize, usize) {
    (rng.random_range(1..=cfg.max_n), rng.random_range(1..=cfg.max_base))
}

fn rotate_all(t: &RigidTransform, xs: &[Vec3]) -> Vec<f64> {
    xs.iter().flat_map(|x| t.rotate(x)).collect()
}

/// `γ(T_rot G, T R̂) = T_rot γ(G, R̂)` and `γ(πG, π̂R̂) = π γ(G, R̂)`.
pub fn gamma_equivariance(model: &Model, cfg: &SuiteConfig) -> Result<(Check, Check)> {
    let mut rot = Check::new("gamma_rotation", 1e-9);
    let mut perm = Check::new("gamma_permutation", 1e-12);
    let mut r = rng::stream(cfg.seed, 1);
    for _ in 0..cfg.probes {
        let (n, nb) = sizes(cfg, &mut r);
        let (g, b) = random_complex(model, &mut r, n, nb);
        let t_ = r.random::<f64>();
        let out = gamma(model, &g, &b, t_)?;
        let t = RigidTransform::random(&mut r, 3.0);
        let out_t = gamma(model, &apply_rigid(&t.rotation_only(), &g), &apply_rigid(&t, &b), t_)?;
        let xs: Vec<Vec3> = out.iter().map(|o| o.0).collect();
        let want = rotate_all(&t, &xs);
        let got: Vec<f64> = out_t.iter().flat_map(|o| o.0).collect();
        let hs: Vec<f64> = out.iter().flat_map(|o| o.1.clone()).collect();
        let hs_t: Vec<f64> = out_t.iter().flat_map(|o| o.1.clone()).collect();
        rot.record(max_abs(&want, &got).max(max_abs(&hs, &hs_t)));

        let p = Permutation::random(&mut r, n);
        let pb = Permutation::random(&mut r, nb);
        let out_p = gamma(model, &apply_perm(&p, &g)?, &apply_perm(&pb, &b)?, t_)?;
        let mut v = 0.0f64;
        for (i, &src) in p.as_slice().iter().enumerate() {
            v = v.max(max_abs(&out_p[i].0, &out[src].0)).max(max_abs(&out_p[i].1, &out[src].1));
        }
        perm.record(v);
    }
    Ok((rot, perm))
}

fn base_outputs(model: &Model, b: &Graph3D) -> Result<(Vec<Vec3>, Vec<Vec<f64>>, Vec<f64>)> {
    let mut d = Dual::new(Eager::new(&model.params));
    let st = model.base.forward(&mut d, b)?;
    let x = st.x.last().unwrap().iter().map(|v| {
        let s = d.value(v);
        [s[0], s[1], s[2]]
    });
    let x = x.collect();
    let h = st.h.last().unwrap().iter().map(|v| d.value(v).to_vec()).collect();
    let sigs = model.sig.forward(&mut d, &st.h_av, 0.5);
    let s = sigs.iter().flat_map(|v| d.value(v).to_vec()).collect();
    Ok((x, h, s))
}

/// Base network equivariance under `E(3)` and permutations, plus
/// invariance of the signatures.
pub fn base_equivariance(model: &Model, cfg: &SuiteConfig) -> Result<(Check, Check, Check)> {
    let mut rot = Check::new("base_egnn_rotation", 1e-9);
    let mut perm = Check::new("base_egnn_permutation", 1e-12);
    let mut sig = Check::new("signature_invariance", 1e-9);
    let mut r = rng::stream(cfg.seed, 2);
    for _ in 0..cfg.probes {
        let (_, nb) = sizes(cfg, &mut r);
        let (_, b) = random_complex(model, &mut r, 1, nb);
        let (x, h, s) = base_outputs(model, &b)?;
        let t = RigidTransform::random(&mut r, 3.0);
        let (xt, ht, st) = base_outputs(model, &apply_rigid(&t, &b))?;
        let want: Vec<f64> = x.iter().flat_map(|p| t.apply(p)).collect();
        let got: Vec<f64> = xt.iter().flatten().copied().collect();
        rot.record(max_abs(&want, &got).max(max_abs(&h.concat(), &ht.concat())));
        let mut sv = max_abs(&s, &st);

        let p = Permutation::random(&mut r, nb);
        let (xp, hp, sp) = base_outputs(model, &apply_perm(&p, &b)?)?;
        let mut v = 0.0f64;
        for (i, &src) in p.as_slice().iter().enumerate() {
            v = v.max(max_abs(&xp[i], &x[src])).max(max_abs(&hp[i], &h[src]));
        }
        perm.record(v);
        sv = sv.max(max_abs(&s, &sp));
        sig.record(sv);
    }
    Ok((rot, perm, sig))
}

fn cond_outputs(model: &Model, g: &Graph3D, b: &Graph3D, t: f64) -> Result<(Vec<Vec3>, Vec<Vec<f64>>)> {
    let h_av = model.base_means(b)?;
    let mut d = Dual::new(Eager::new(&model.params));
    let h_av: Vec<_> = h_av.into_iter().map(|v| d.constant(v)).collect();
    let x: Vec<_> = g.positions().iter().map(|p| d.constant(p.to_vec())).collect();
    let h: Vec<_> = g.features().iter().map(|f| d.constant(f.clone())).collect();
    let sigs = model.sig.forward(&mut d, &h_av, t);
    let out = model.cond.forward(&mut d, &x, &h, &sigs, t, Default::default())?;
    let xs = out.x.iter().map(|v| {
        let s = d.value(v);
        [s[0], s[1], s[2]]
    });
    let xs = xs.collect();
    Ok((xs, out.hidden.iter().map(|v| d.value(v).to_vec()).collect()))
}

/// Final-layer semi-equivariance of the conditional network: the complement
/// moves by a rigid motion while the base moves by an independent one.
pub fn cond_equivariance(model: &Model, cfg: &SuiteConfig) -> Result<(Check, Check)> {
    let mut rot = Check::new("cond_egnn_rotation", 1e-9);
    let mut perm = Check::new("cond_egnn_permutation", 1e-12);
    let mut r = rng::stream(cfg.seed, 3);
    for _ in 0..cfg.probes {
        let (n, nb) = sizes(cfg, &mut r);
        let (g, b) = random_complex(model, &mut r, n, nb);
        let t_ = r.random::<f64>();
        let (x, h) = cond_outputs(model, &g, &b, t_)?;
        let tc = RigidTransform::random(&mut r, 3.0);
        let tb = RigidTransform::random(&mut r, 3.0);
        let (xt, ht) = cond_outputs(model, &apply_rigid(&tc, &g), &apply_rigid(&tb, &b), t_)?;
        let want: Vec<f64> = x.iter().flat_map(|p| tc.apply(p)).collect();
        let got: Vec<f64> = xt.iter().flatten().copied().collect();
        rot.record(max_abs(&want, &got).max(max_abs(&h.concat(), &ht.concat())));

        let p = Permutation::random(&mut r, n);
        let pb = Permutation::random(&mut r, nb);
        let (xp, hp) = cond_outputs(model, &apply_perm(&p, &g)?, &apply_perm(&pb, &b)?, t_)?;
        let mut v = 0.0f64;
        for (i, &src) in p.as_slice().iter().enumerate() {
            v = v.max(max_abs(&xp[i], &x[src])).max(max_abs(&hp[i], &h[src]));
        }
        perm.record(v);
    }
    Ok((rot, perm))
}

/// Invariance of the number, edge and property distributions under joint
/// rigid motions and permutations.
pub fn head_invariance(model: &Model, cfg: &SuiteConfig) -> Result<Check> {
    let mut c = Check::new("head_invariance", 1e-9);
    let mut r = rng::stream(cfg.seed, 4);
    for _ in 0..cfg.probes.min(20) {
        let (n, nb) = sizes(cfg, &mut r);
        let (g, b) = random_complex(model, &mut r, n, nb);
        let p0 = model.number_distribution(&b)?;
        let l0 = loss::head_losses(model, &b, &g)?;
        let t = RigidTransform::random(&mut r, 3.0);
        let (gt, bt) = (apply_rigid(&t, &g), apply_rigid(&t, &b));
        let p = Permutation::random(&mut r, n);
        let pb = Permutation::random(&mut r, nb);
        let (gp, bp) = (apply_perm(&p, &gt)?, apply_perm(&pb, &bt)?);
        let p1 = model.number_distribution(&bp)?;
        let l1 = loss::head_losses(model, &bp, &gp)?;
        c.record(max_abs(&p0, &p1).max(max_abs(&[l0.0, l0.1, l0.2], &[l1.0, l1.1, l1.2])));
    }
    Ok(c)
}

/// `Γ¹_{TR̂}(Tv) = T_rot Γ¹_{R̂}(v)` and `Γ¹_{π̂R̂}(πv) = π Γ¹_{R̂}(v)`.
pub fn lemma1(model: &Model, cfg: &SuiteConfig) -> Result<(Check, Check)> {
    let mut rot = Check::new("lemma1_rigid", 1e-12);
    let mut perm = Check::new("lemma1_permutation", 1e-12);
    let mut r = rng::stream(cfg.seed, 5);
    for _ in 0..cfg.probes {
        let (n, nb) = sizes(cfg, &mut r);
        let (g, b) = random_complex(model, &mut r, n, nb);
        let v = g.vertex_vector();
        let u = AffineCentering::new(n, &b)?.forward(&v)?;
        let t = RigidTransform::random(&mut r, 3.0);
        let ut = AffineCentering::new(n, &apply_rigid(&t, &b))?.forward(&v.apply_rigid(&t))?;
        rot.record(max_abs(ut.as_slice(), u.apply_rigid(&t.rotation_only()).as_slice()));
        let p = Permutation::random(&mut r, n);
        let pb = Permutation::random(&mut r, nb);
        let up = AffineCentering::new(n, &apply_perm(&pb, &b)?)?.forward(&v.apply_perm(&p)?)?;
        perm.record(max_abs(up.as_slice(), u.apply_perm(&p)?.as_slice()));
    }
    Ok((rot, perm))
}

/// Solving from `T_rot z` under `T R̂` lands on `T_rot` of the solution from
/// `z` under `R̂`.
pub fn lemma2(model: &Model, cfg: &SuiteConfig) -> Result<Check> {
    let mut c = Check::new("lemma2_flow", 5e-4);
    let mut r = rng::stream(cfg.seed, 6);
    for _ in 0..cfg.nll_probes {
        let (n, nb) = sizes(cfg, &mut r);
        let (_, b) = random_complex(model, &mut r, n, nb);
        let z = flow::draw_noise(model, n, r.random());
        let t = RigidTransform::random(&mut r, 3.0);
        let rot = t.rotation_only();
        let a = flow::integrate_flow(model, &z, &b, &cfg.ode, false)?;
        let bt = flow::integrate_flow(model, &z.apply_rigid(&rot), &apply_rigid(&t, &b), &cfg.ode, false)?;
        c.record(max_abs(bt.u1.as_slice(), a.u1.apply_rigid(&rot).as_slice()));
    }
    Ok(c)
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut det = 1.0;
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        if a[p][k] == 0.0 {
            return 0.0;
        }
        if p != k {
            a.swap(p, k);
            det = -det;
        }
        det *= a[k][k];
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
        }
    }
    det
}

/// Closed-form `ln|det Ω|` against the determinant of the explicit matrix
/// for `N, N̂ ∈ 1..=5`.
pub fn log_det_oracle() -> Result<Check> {
    let mut c = Check::new("log_det", 1e-12);
    for n in 1..=5 {
        for nb in 1..=5 {
            let b = Graph3D::new(vec![[0.0; 3]; nb], vec![vec![]; nb], vec![], vec![])?;
            let a = AffineCentering::new(n, &b)?;
            let m = a.omega_matrix(1);
            c.record((determinant(m).abs().ln() - a.log_det()).abs());
        }
    }
    Ok(c)
}

fn nll(model: &Model, g: &Graph3D, b: &Graph3D, ode: &OdeConfig) -> Result<f64> {
    Ok(-flow::log_likelihood(model, &g.vertex_vector(), b, ode)?.log_p)
}

/// `NLL(T·G | T·R̂) = NLL(G | R̂)` and `NLL(πG | π̂R̂) = NLL(G | R̂)`.
pub fn nll_invariance(model: &Model, cfg: &SuiteConfig) -> Result<(Check, Check)> {
    let mut rot = Check::new("nll_rigid", 1e-4);
    let mut perm = Check::new("nll_permutation", 1e-6);
    let mut r = rng::stream(cfg.seed, 7);
    for _ in 0..cfg.nll_probes {
        let (n, nb) = sizes(cfg, &mut r);
        let (g, b) = random_complex(model, &mut r, n, nb);
        let l0 = nll(model, &g, &b, &cfg.ode)?;
        let t = RigidTransform::random(&mut r, 3.0);
        rot.record((nll(model, &apply_rigid(&t, &g), &apply_rigid(&t, &b), &cfg.ode)? - l0).abs());
        let p = Permutation::random(&mut r, n);
        let pb = Permutation::random(&mut r, nb);
        perm.record((nll(model, &apply_perm(&p, &g)?, &apply_perm(&pb, &b)?, &cfg.ode)? - l0).abs());
    }
    Ok((rot, perm))
}

/// Sampling then inverting recovers the noise.
pub fn invertibility(model: &Model, cfg: &SuiteConfig) -> Result<Check> {
    let mut c = Check::new("invertibility", 1e-3);
    let mut r = rng::stream(cfg.seed, 8);
    for _ in 0..cfg.nll_probes.min(10) {
        let (n, nb) = sizes(cfg, &mut r);
        let (_, b) = random_complex(model, &mut r, n, nb);
        let seed = r.random();
        let v = flow::sample(model, &b, n, seed, &cfg.ode)?;
        let l = flow::log_likelihood(model, &v, &b, &cfg.ode)?;
        c.record(max_abs(l.z.as_slice(), flow::draw_noise(model, n, seed).as_slice()));
    }
    Ok(c)
}

/// Exact divergence against central differences, relative to `max(1, |fd|)`.
pub fn divergence_oracle(model: &Model, cfg: &SuiteConfig) -> Result<Check> {
    let mut c = Check::new("exact_divergence", 1e-4);
    let mut r = rng::stream(cfg.seed, 9);
    for _ in 0..cfg.probes.min(10) {
        let (n, nb) = sizes(cfg, &mut r);
        let (_, b) = random_complex(model, &mut r, n, nb);
        let f = NeuralField::new(model, model.base_means(&b)?, n);
        let u = rng::normal_vec(&mut r, f.dim());
        let t = r.random::<f64>();
        let (_, exact) = f.eval(t, &u, true)?;
        let fd = field::divergence_fd(&f, t, &u, 1e-5)?;
        c.record((exact - fd).abs() / fd.abs().max(1.0));
    }
    Ok(c)
}

fn with_params(model: &Model, p: &ParamStore) -> Model {
    let mut m = model.clone();
    m.params = p.clone();
    m
}

/// Gradients of the flow and head losses against central differences on a
/// spread of parameter indices.
pub fn gradient_checks(model: &Model, cfg: &SuiteConfig) -> Result<Vec<Check>> {
    let mut r = rng::stream(cfg.seed, 10);
    let (g, b) = random_complex(model, &mut r, 3, 6);
    let ex = Example {
        base: &b,
        complement: &g,
        v: g.vertex_vector(),
    };
    let idx = spread_indices(model.params.len(), 40);
    let steps = FlowTrain { steps: 2, kinetic: 1e-3 };
    let mut out = Vec::new();
    let heads: [(&'static str, LossWeights); 4] = [
        ("grad_flow", LossWeights { flow: 1.0, number: 0.0, edge: 0.0, property: 0.0 }),
        ("grad_number", LossWeights { flow: 0.0, number: 1.0, edge: 0.0, property: 0.0 }),
        ("grad_edge", LossWeights { flow: 0.0, number: 0.0, edge: 1.0, property: 0.0 }),
        ("grad_property", LossWeights { flow: 0.0, number: 0.0, edge: 0.0, property: 1.0 }),
    ];
    for (name, w) in heads {
        let (_, grad) = loss::example_grad(model, &ex, &w, Some(steps))?;
        let err = grad_check(
            |p| {
                let m = with_params(model, p);
                let (f, k) = if w.flow != 0.0 {
                    loss::flow_loss(&m, &ex.v, &b, steps.steps)?
                } else {
                    (0.0, 0.0)
                };
                let (nn, e, q) = loss::head_losses(&m, &b, &g)?;
                Ok(w.flow * (f + steps.kinetic * k) + w.number * nn + w.edge * e + w.property * q)
            },
            &model.params,
            &grad,
            1e-5,
            Some(&idx),
        )?;
        let mut c = Check::new(name, 1e-4);
        c.record(err);
        out.push(c);
    }
    Ok(out)
}

/// The full suite in a fixed order.
pub fn run(model: &Model, cfg: &SuiteConfig) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let (a, b) = gamma_equivariance(model, cfg)?;
    out.extend([a, b]);
    let (a, b, c) = base_equivariance(model, cfg)?;
    out.extend([a, b, c]);
    let (a, b) = cond_equivariance(model, cfg)?;
    out.extend([a, b]);
    out.push(head_invariance(model, cfg)?);
    let (a, b) = lemma1(model, cfg)?;
    out.extend([a, b]);
    out.push(lemma2(model, cfg)?);
    out.push(log_det_oracle()?);
    let (a, b) = nll_invariance(model, cfg)?;
    out.extend([a, b]);
    out.push(invertibility(model, cfg)?);
    out.push(divergence_oracle(model, cfg)?);
    out.extend(gradient_checks(model, cfg)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn small() -> Model {
        let cfg = ModelConfig {
            hidden: 8,
            mlp_depth: 1,
            sig_dim: 4,
            ..ModelConfig::default()
        };
        Model::new(cfg, 5).unwrap()
    }

    fn quick() -> SuiteConfig {
        SuiteConfig {
            probes: 5,
            nll_probes: 3,
            max_n: 4,
            max_base: 8,
            ..SuiteConfig::default()
        }
    }

    #[test]
    fn determinant_of_known_matrices() {
        assert_eq!(determinant(vec![vec![2.0, 0.0], vec![0.0, 3.0]]), 6.0);
        assert!((determinant(vec![vec![0.0, 1.0], vec![1.0, 0.0]]) + 1.0).abs() < 1e-15);
        let a = vec![vec![4.0, 3.0, 2.0], vec![1.0, 3.0, 1.0], vec![2.0, 1.0, 5.0]];
        assert!((determinant(a) - 37.0).abs() < 1e-12);
        assert_eq!(determinant(vec![vec![1.0, 2.0], vec![2.0, 4.0]]), 0.0);
    }

    #[test]
    fn random_model_passes_the_suite() {
        let checks = run(&small(), &quick()).unwrap();
        assert_eq!(checks.len(), 20);
        for c in &checks {
            assert!(c.passed(), "{c}");
            assert!(c.probes > 0);
        }
    }

    #[test]
    fn injected_bias_fails_rotation() {
        let mut m = small();
        m.debug_bias = Some([0.3, -0.2, 0.1]);
        let (rot, perm) = gamma_equivariance(&m, &quick()).unwrap();
        assert!(!rot.passed(), "{rot}");
        assert!(perm.passed());
    }

    #[test]
    fn display_names_the_check() {
        let mut c = Check::new("x", 1e-3);
        c.record(0.5);
        let s = c.to_string();
        assert!(s.contains("FAIL") && s.starts_with('x'));
        c.record(f64::NAN);
        assert!(!c.passed());
    }
}

