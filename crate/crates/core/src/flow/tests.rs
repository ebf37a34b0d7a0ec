use super::*;
use crate::egnn::tests::random_graph;
use crate::graph3d::{apply_perm, apply_rigid, Permutation, RigidTransform};
use crate::model::ModelConfig;

fn tiny() -> ModelConfig {
    ModelConfig {
        hidden: 8,
        mlp_depth: 1,
        sig_dim: 4,
        base_global_dim: 1,
        ..ModelConfig::default()
    }
}

fn model(seed: u64) -> Model {
    Model::new(tiny(), seed).unwrap()
}

fn base(seed: u64, n: usize) -> Graph3D {
    random_graph(&mut rng::seeded(seed), n, 4, 1, &[1])
}

fn complement(seed: u64, n: usize) -> Graph3D {
    random_graph(&mut rng::seeded(seed), n, 3, 2, &[2, 2])
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn zero_flow_gamma_vanishes() {
    let mut m = model(1);
    m.zero_flow();
    let g = gamma(&m, &complement(2, 4), &base(3, 6), 0.3).unwrap();
    for (x, h) in g {
        assert_eq!(x, [0.0; 3]);
        assert!(h.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn zero_dynamics_keep_state_and_closed_form_likelihood() {
    let mut m = model(1);
    m.zero_flow();
    let b = base(3, 6);
    let z = draw_noise(&m, 3, 9);
    let r = integrate_flow(&m, &z, &b, &OdeConfig::dopri5(1e-6, 1e-6), true).unwrap();
    assert_eq!(r.u1, z);
    assert_eq!(r.divergence_integral, 0.0);

    let v = complement(4, 3).vertex_vector();
    let c = AffineCentering::new(3, &b).unwrap();
    let u = c.forward(&v).unwrap();
    let want = log_standard_normal(u.as_slice()) + 3.0 * (6.0f64 / 9.0).ln();
    let got = log_likelihood(&m, &v, &b, &OdeConfig::rk4(4)).unwrap().log_p;
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn zero_dynamics_sample_is_scaled_noise() {
    let mut cfg = tiny();
    cfg.feature_dim = 0;
    let mut m = Model::new(cfg, 2).unwrap();
    m.zero_flow();
    // Centre the base at the origin.
    let b0 = base(5, 4);
    let mean = b0.mean_position();
    let b = apply_rigid(&RigidTransform::translation(mean.map(|v| -v)), &b0);
    let z = draw_noise(&m, 1, 17);
    let s = sample_from(&m, &b, &z, &OdeConfig::rk4(2)).unwrap();
    let alpha = 1.0 / 5.0;
    for k in 0..3 {
        assert!((s.as_slice()[k] - z.as_slice()[k] / (1.0 - alpha)).abs() < 1e-12);
    }
}

/// `exp(A)` by series summation.
fn expm(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut out: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    let mut term = out.clone();
    for k in 1..40 {
        let next: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| (0..n).map(|l| term[i][l] * a[l][j]).sum::<f64>() / k as f64).collect())
            .collect();
        term = next;
        for i in 0..n {
            for j in 0..n {
                out[i][j] += term[i][j];
            }
        }
    }
    out
}

#[test]
fn linear_field_matches_matrix_exponential() {
    let mut r = rng::seeded(3);
    let a: Vec<Vec<f64>> = (0..4).map(|_| rng::normal_vec(&mut r, 4).iter().map(|v| 0.5 * v).collect()).collect();
    let f = LinearField { a: a.clone() };
    let z = rng::normal_vec(&mut r, 4);
    let (u, l, _) = integrate_field(&f, &z, 0.0, 1.0, &OdeConfig::dopri5(1e-10, 1e-10), true).unwrap();
    let e = expm(&a);
    let want: Vec<f64> = e.iter().map(|row| row.iter().zip(&z).map(|(x, y)| x * y).sum()).collect();
    assert!(max_abs(&u, &want) < 1e-8);
    let tr: f64 = (0..4).map(|k| a[k][k]).sum();
    assert!((l - tr).abs() < 1e-10);
}

struct Quadratic;

impl VectorField for Quadratic {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, _t: f64, u: &[f64], _d: bool) -> Result<(Vec<f64>, f64)> {
        Ok((vec![u[0] * u[0], u[0] * u[1]], 2.0 * u[0] + u[0]))
    }
}

#[test]
fn finite_difference_divergence_oracles() {
    let d = field::divergence_fd(&Quadratic, 0.0, &[1.0, 2.0], 1e-5).unwrap();
    assert!((d - 3.0).abs() < 1e-8);
    let f = LinearField {
        a: vec![vec![1.0, 2.0], vec![3.0, -4.0]],
    };
    assert!((field::divergence_fd(&f, 0.0, &[0.3, 0.1], 1e-5).unwrap() + 3.0).abs() < 1e-6);
    let zero = LinearField { a: vec![vec![0.0; 3]; 3] };
    assert_eq!(field::divergence_fd(&zero, 0.0, &[1.0, 2.0, 3.0], 1e-5).unwrap(), 0.0);
}

#[test]
fn exact_divergence_matches_finite_differences() {
    for (seed, n) in [(5, 1), (6, 2), (7, 4)] {
        let m = model(seed);
        let b = base(seed + 10, 5);
        let f = NeuralField::new(&m, m.base_means(&b).unwrap(), n);
        let u = rng::normal_vec(&mut rng::seeded(seed), f.dim());
        let (_, exact) = f.eval(0.37, &u, true).unwrap();
        let fd = field::divergence_fd(&f, 0.37, &u, 1e-5).unwrap();
        assert!((exact - fd).abs() <= 1e-4 * fd.abs().max(1.0), "n={n}: {exact} vs {fd}");
    }
}

#[test]
fn divergence_cap_is_enforced() {
    let mut cfg = tiny();
    cfg.divergence_cap = 10;
    let m = Model::new(cfg, 1).unwrap();
    let f = NeuralField::new(&m, m.base_means(&base(1, 3)).unwrap(), 2);
    assert!(matches!(f.eval(0.0, &[0.0; 12], true), Err(Error::Capacity { dim: 12, cap: 10 })));
    assert!(f.eval(0.0, &[0.0; 12], false).is_ok());
}

#[test]
fn sampling_is_deterministic_and_invertible() {
    let m = model(8);
    let b = base(9, 7);
    let cfg = OdeConfig::dopri5(1e-6, 1e-6);
    let a = sample(&m, &b, 3, 4, &cfg).unwrap();
    assert_eq!(a, sample(&m, &b, 3, 4, &cfg).unwrap());
    let z = draw_noise(&m, 3, 4);
    let l = log_likelihood(&m, &a, &b, &cfg).unwrap();
    assert!(max_abs(l.z.as_slice(), z.as_slice()) < 1e-3);
}

#[test]
fn likelihood_is_rigid_and_permutation_invariant() {
    let m = model(11);
    let cfg = OdeConfig::dopri5(1e-6, 1e-6);
    let mut r = rng::seeded(12);
    let b = base(13, 6);
    let g = complement(14, 4);
    let l0 = log_likelihood(&m, &g.vertex_vector(), &b, &cfg).unwrap().log_p;
    let t = RigidTransform::random(&mut r, 2.0);
    let l1 = log_likelihood(&m, &apply_rigid(&t, &g).vertex_vector(), &apply_rigid(&t, &b), &cfg)
        .unwrap()
        .log_p;
    assert!((l0 - l1).abs() < 1e-4, "{l0} vs {l1}");
    let p = Permutation::random(&mut r, 4);
    let pb = Permutation::random(&mut r, 6);
    let l2 = log_likelihood(&m, &apply_perm(&p, &g).unwrap().vertex_vector(), &apply_perm(&pb, &b).unwrap(), &cfg)
        .unwrap()
        .log_p;
    assert!((l0 - l2).abs() < 1e-6, "{l0} vs {l2}");
}

#[test]
fn fixed_and_adaptive_solvers_agree() {
    let m = model(15);
    let b = base(16, 5);
    let z = draw_noise(&m, 3, 1);
    let a = integrate_flow(&m, &z, &b, &OdeConfig::rk4(256), false).unwrap();
    let c = integrate_flow(&m, &z, &b, &OdeConfig::dopri5(1e-6, 1e-6), false).unwrap();
    assert!(max_abs(a.u1.as_slice(), c.u1.as_slice()) < 1e-4);
}
