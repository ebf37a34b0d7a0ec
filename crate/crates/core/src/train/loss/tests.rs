use super::*;
use crate::egnn::tests::random_graph;
use crate::flow::{log_likelihood, OdeConfig};
use crate::graph3d::Graph3D;
use crate::model::ModelConfig;
use crate::nnkit::gradcheck::{grad_check, spread_indices};
use crate::nnkit::ParamStore;
use crate::rng;

fn tiny() -> ModelConfig {
    ModelConfig {
        hidden: 6,
        mlp_depth: 1,
        sig_dim: 4,
        base_global_dim: 1,
        ..ModelConfig::default()
    }
}

fn base(seed: u64, n: usize) -> Graph3D {
    random_graph(&mut rng::seeded(seed), n, 4, 1, &[1])
}

/// Complement with one-hot edge types and one-hot properties.
fn complement(seed: u64, n: usize) -> Graph3D {
    let g = random_graph(&mut rng::seeded(seed), n, 3, 2, &[2, 2]);
    let edges = g
        .edges()
        .iter()
        .enumerate()
        .map(|(k, e)| (e.i, e.j, if k % 2 == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }))
        .collect();
    Graph3D::new(
        g.positions().to_vec(),
        g.features().to_vec(),
        edges,
        vec![vec![0.0, 1.0], vec![1.0, 0.0]],
    )
    .unwrap()
}

fn with_params(m: &Model, p: &ParamStore) -> Model {
    let mut m = m.clone();
    m.params = p.clone();
    m
}

#[test]
fn flow_loss_matches_fixed_step_likelihood() {
    let m = Model::new(tiny(), 3).unwrap();
    let b = base(1, 5);
    let v = complement(2, 3).vertex_vector();
    let (nll, _) = flow_loss(&m, &v, &b, 6).unwrap();
    let lp = log_likelihood(&m, &v, &b, &OdeConfig::rk4(6)).unwrap().log_p;
    assert!((nll + lp).abs() < 1e-10, "{nll} vs {lp}");
    let g = flow_loss_grad(&m, &v, &b, FlowTrain { steps: 6, kinetic: 0.0 }).unwrap();
    assert!((g.nll - nll).abs() < 1e-12);
}

#[test]
fn kinetic_integral_vanishes_for_zero_dynamics() {
    let mut m = Model::new(tiny(), 3).unwrap();
    m.zero_flow();
    let (_, k) = flow_loss(&m, &complement(2, 3).vertex_vector(), &base(1, 5), 4).unwrap();
    assert_eq!(k, 0.0);
}

#[test]
fn flow_gradient_matches_finite_differences() {
    let m = Model::new(tiny(), 7).unwrap();
    let b = base(4, 5);
    let v = complement(5, 3).vertex_vector();
    let cfg = FlowTrain { steps: 3, kinetic: 0.1 };
    let g = flow_loss_grad(&m, &v, &b, cfg).unwrap();
    // Base parameters reach the flow only through `h_av`; the combined check covers them.
    let base_ranges = m.params.ranges_with_prefix("base.");
    let idx: Vec<usize> = spread_indices(m.params.len(), 80)
        .into_iter()
        .filter(|k| !base_ranges.iter().any(|r| r.contains(k)))
        .collect();
    assert!(idx.len() > 30);
    let err = grad_check(
        |p| {
            let (nll, k) = flow_loss(&with_params(&m, p), &v, &b, cfg.steps)?;
            Ok(nll + cfg.kinetic * k)
        },
        &m.params,
        &g.params,
        1e-5,
        Some(&idx),
    )
    .unwrap();
    assert!(err < 1e-5, "relative error {err}");
}

#[test]
fn combined_gradient_matches_finite_differences() {
    let m = Model::new(tiny(), 9).unwrap();
    let b = base(6, 6);
    let c = complement(7, 3);
    let ex = Example {
        base: &b,
        complement: &c,
        v: c.vertex_vector(),
    };
    let w = LossWeights {
        flow: 0.5,
        number: 1.0,
        edge: 0.7,
        property: 1.3,
    };
    let cfg = FlowTrain { steps: 2, kinetic: 0.0 };
    let (parts, grad) = example_grad(&m, &ex, &w, Some(cfg)).unwrap();
    let (num, edge, prop) = head_losses(&m, &b, &c).unwrap();
    assert!((parts.number - num).abs() < 1e-12);
    assert!((parts.edge - edge).abs() < 1e-12);
    assert!((parts.property - prop).abs() < 1e-12);

    // Indices drawn from every parameter group, so base, heads and flow are all probed.
    let mut idx = Vec::new();
    for prefix in ["base", "sig", "cond", "number", "edge", "property"] {
        for r in m.params.ranges_with_prefix(prefix).iter().step_by(3) {
            idx.push(r.start + r.len() / 2);
        }
    }
    let err = grad_check(
        |p| {
            let mm = with_params(&m, p);
            let (f, _) = flow_loss(&mm, &ex.v, &b, cfg.steps)?;
            let (n, e, q) = head_losses(&mm, &b, &c)?;
            Ok(w.flow * f + w.number * n + w.edge * e + w.property * q)
        },
        &m.params,
        &grad,
        1e-5,
        Some(&idx),
    )
    .unwrap();
    assert!(err < 1e-5, "relative error {err}");
}

#[test]
fn disabled_flow_term_skips_the_solve() {
    let m = Model::new(tiny(), 2).unwrap();
    let b = base(6, 6);
    let c = complement(7, 3);
    let ex = Example {
        base: &b,
        complement: &c,
        v: c.vertex_vector(),
    };
    let (parts, grad) = example_grad(&m, &ex, &LossWeights::default(), None).unwrap();
    assert_eq!(parts.flow, 0.0);
    for r in m.params.ranges_with_prefix("cond") {
        assert!(grad[r].iter().all(|&g| g == 0.0));
    }
}

