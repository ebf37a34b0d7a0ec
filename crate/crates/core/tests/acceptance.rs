//! End-to-end acceptance checks. Each test writes one summary line to
//! stderr directly so the line shows up even when output is captured.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::Rng;
use semiflow::cli::score;
use semiflow::config::Config;
use semiflow::data::{self, Complex, SynthConfig};
use semiflow::flow::{self, OdeConfig};
use semiflow::graph3d::{RigidTransform, VertexVector};
use semiflow::model::{Model, ModelConfig};
use semiflow::rng;
use semiflow::train::{DequantConfig, Trainer};
use semiflow::verify::{self, Check, SuiteConfig};

fn report(id: u32, what: &str, pass: bool, detail: impl std::fmt::Display) {
    let line = format!(
        "acceptance [{id:>2}] {} {what}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    std::io::stderr().write_all(line.as_bytes()).ok();
}

fn report_checks(id: u32, what: &str, checks: &[Check], elapsed: Duration) -> bool {
    let pass = checks.iter().all(Check::passed);
    let detail: Vec<String> = checks
        .iter()
        .map(|c| format!("{} {:.2e}/{:.0e} ({})", c.name, c.max_violation, c.tolerance, c.probes))
        .collect();
    report(id, what, pass, format!("{} in {:.1?}", detail.join(", "), elapsed));
    pass
}

fn desk_model(seed: u64) -> Model {
    Model::new(ModelConfig::desk(), seed).unwrap()
}

fn suite() -> SuiteConfig {
    SuiteConfig {
        seed: 2024,
        probes: 50,
        nll_probes: 20,
        max_n: 8,
        max_base: 30,
        ode: OdeConfig::dopri5(1e-6, 1e-6),
    }
}

#[test]
fn c01_rigid_motion_invariance_of_nll() {
    let t0 = Instant::now();
    let (rot, _) = verify::nll_invariance(&desk_model(1), &suite()).unwrap();
    let elapsed = t0.elapsed();
    let ok = report_checks(1, "NLL under joint rigid motions", &[rot], elapsed);
    let fast = elapsed < Duration::from_secs(300);
    assert!(ok && fast, "elapsed {elapsed:.1?}");
}

#[test]
fn c02_permutation_invariance_of_nll() {
    let t0 = Instant::now();
    let (_, perm) = verify::nll_invariance(&desk_model(2), &suite()).unwrap();
    assert!(report_checks(2, "NLL under vertex permutations", &[perm], t0.elapsed()));
}

#[test]
fn c03_centering_and_flow_equivariance() {
    let t0 = Instant::now();
    let m = desk_model(3);
    let (a, b) = verify::lemma1(&m, &suite()).unwrap();
    let c = verify::lemma2(&m, &suite()).unwrap();
    assert!(report_checks(3, "affine centering and flow map equivariance", &[a, b, c], t0.elapsed()));
}

#[test]
fn c04_log_det_closed_form() {
    let t0 = Instant::now();
    let c = verify::log_det_oracle().unwrap();
    assert!(report_checks(4, "centering log-determinant vs explicit matrices", &[c], t0.elapsed()));
}

#[test]
fn c05_sample_then_invert_recovers_noise() {
    let t0 = Instant::now();
    let c = verify::invertibility(&desk_model(5), &suite()).unwrap();
    assert!(report_checks(5, "flow invertibility", &[c], t0.elapsed()));
}

#[test]
fn c06_single_vertex_density_integrates_to_one() {
    let t0 = Instant::now();
    let cfg = ModelConfig {
        feature_dim: 0,
        hidden: 8,
        sig_dim: 4,
        ..ModelConfig::desk()
    };
    let model = Model::new(cfg, 6).unwrap();
    let mut r = rng::stream(6, 0);
    let (_, base) = verify::random_complex(&model, &mut r, 1, 4);
    let ode = OdeConfig::rk4(16);
    let centre = flow::sample_from(&model, &base, &VertexVector::new(vec![0.0; 3], 1, 0).unwrap(), &ode).unwrap();

    // Midpoint rule on a cube wide enough to hold all but a negligible tail.
    let (half, cells) = (7.5, 40usize);
    let h = 2.0 * half / cells as f64;
    let mut mass = 0.0;
    for i in 0..cells {
        for j in 0..cells {
            for k in 0..cells {
                let off = [i, j, k].map(|a| -half + (a as f64 + 0.5) * h);
                let x: Vec<f64> = centre.as_slice().iter().zip(off).map(|(c, o)| c + o).collect();
                let v = VertexVector::new(x, 1, 0).unwrap();
                mass += flow::log_likelihood(&model, &v, &base, &ode).unwrap().log_p.exp();
            }
        }
    }
    mass *= h * h * h;
    let pass = (mass - 1.0).abs() <= 0.02;
    report(
        6,
        "density normalization (one vertex, no features)",
        pass,
        format!("integral {mass:.5} (tol ±0.02), {} cells in {:.1?}", cells.pow(3), t0.elapsed()),
    );
    assert!(pass);
}

#[test]
fn c07_loss_gradients_match_finite_differences() {
    let t0 = Instant::now();
    let checks = verify::gradient_checks(&desk_model(7), &suite()).unwrap();
    assert!(report_checks(7, "loss head gradients vs central differences", &checks, t0.elapsed()));
}

#[test]
fn c08_network_semi_equivariance() {
    let t0 = Instant::now();
    let m = desk_model(8);
    let cfg = suite();
    let (a, b) = verify::gamma_equivariance(&m, &cfg).unwrap();
    let (c, d, e) = verify::base_equivariance(&m, &cfg).unwrap();
    let (f, g) = verify::cond_equivariance(&m, &cfg).unwrap();
    assert!(report_checks(8, "vector field and both networks", &[a, b, c, d, e, f, g], t0.elapsed()));
}

struct Trained {
    model: Model,
    data: Vec<Complex>,
    val: Vec<usize>,
    val_flow: Vec<f64>,
    accuracy: Vec<f64>,
    elapsed: Duration,
    dequant: DequantConfig,
}

/// The default (desk) configuration on 500 synthetic complexes.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let cfg = Config::default();
        assert_eq!(cfg.synth.n_complexes, 500);
        assert!(cfg.train.epochs <= 30);
        let t0 = Instant::now();
        let data = data::generate(&cfg.synth).unwrap();
        let (train, val) = data::split(data.len(), cfg.train.val_fraction, cfg.train.seed).unwrap();
        let model = Model::new(cfg.model.clone(), cfg.train.seed).unwrap();
        let mut t = Trainer::new(model, cfg.train.clone(), cfg.dequant).unwrap();
        let mut val_flow = Vec::new();
        let mut accuracy = Vec::new();
        for _ in 0..cfg.train.epochs {
            let rep = t.run_epoch(&data, &train, &val).unwrap();
            val_flow.push(rep.val.unwrap().flow_nll);
            accuracy.push(rep.number_accuracy.unwrap());
            let line = format!(
                "  training epoch {:>2}: val flow NLL {:.3}, number accuracy {:.3}, {:.0?}\n",
                t.epoch,
                val_flow.last().unwrap(),
                accuracy.last().unwrap(),
                t0.elapsed()
            );
            std::io::stderr().write_all(line.as_bytes()).ok();
        }
        Trained {
            model: t.model,
            data,
            val,
            val_flow,
            accuracy,
            elapsed: t0.elapsed(),
            dequant: cfg.dequant,
        }
    })
}

#[test]
fn c09_desk_training_learns_flow_and_size_rule() {
    let t = trained();
    let (first, last) = (t.val_flow[0], *t.val_flow.last().unwrap());
    let drop = (first - last) / first.abs();
    let acc = *t.accuracy.last().unwrap();
    let in_time = t.elapsed <= Duration::from_secs(30 * 60);
    let rule = t.data.iter().all(|c| c.complement.n_vertices() == SynthConfig::complement_size(c.base.n_vertices()));
    let pass = drop >= 0.2 && acc >= 0.9 && in_time && rule;
    report(
        9,
        "desk-scale training",
        pass,
        format!(
            "{} epochs in {:.0?} (limit 30 min), val flow NLL {first:.3} -> {last:.3} ({:.1}% drop, need 20%), \
             number accuracy {acc:.3} (need 0.9)",
            t.val_flow.len(),
            t.elapsed,
            100.0 * drop
        ),
    );
    assert!(pass);
}

#[test]
fn c10_nll_grows_with_complement_displacement() {
    let t = trained();
    let t0 = Instant::now();
    let set: Vec<Complex> = t.val.iter().take(20).map(|&i| t.data[i].clone()).collect();
    let ode = OdeConfig::dopri5(1e-6, 1e-6);
    let mut r = rng::stream(10, 0);
    let dirs: Vec<[f64; 3]> = (0..4)
        .map(|_| {
            let d = [rng::normal(&mut r), rng::normal(&mut r), rng::normal(&mut r)];
            let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            d.map(|x| x / n)
        })
        .collect();
    let mut means = Vec::new();
    for radius in [0.0, 0.5, 1.0, 2.0] {
        let mut total = 0.0;
        for d in &dirs {
            let shift = RigidTransform::translation(d.map(|x| radius * x));
            let nll = score(&t.model, &set, Some((&shift, false)), 10, &ode, &t.dequant).unwrap();
            total += nll.iter().sum::<f64>() / nll.len() as f64;
        }
        means.push(total / dirs.len() as f64);
    }
    let pass = means.windows(2).all(|w| w[1] >= w[0]);
    let shown: Vec<String> = means.iter().map(|m| format!("{m:.3}")).collect();
    report(
        10,
        "NLL vs complement-only translation radius {0, 0.5, 1, 2}",
        pass,
        format!("mean NLL [{}] over {} complexes x {} directions in {:.1?}", shown.join(", "), set.len(), dirs.len(), t0.elapsed()),
    );
    assert!(pass);
}

#[test]
fn c11_fixed_step_and_adaptive_solvers_agree() {
    let t0 = Instant::now();
    let m = desk_model(11);
    let cfg = suite();
    let mut r = rng::stream(11, 0);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let n = r.random_range(1..=cfg.max_n);
        let nb = r.random_range(1..=cfg.max_base);
        let (g, b) = verify::random_complex(&m, &mut r, n, nb);
        let v = g.vertex_vector();
        let a = flow::log_likelihood(&m, &v, &b, &OdeConfig::rk4(256)).unwrap().log_p;
        let d = flow::log_likelihood(&m, &v, &b, &cfg.ode).unwrap().log_p;
        worst = worst.max((a - d).abs());
    }
    let pass = worst < 1e-3;
    report(
        11,
        "RK4 (256 steps) vs dopri5 (1e-6)",
        pass,
        format!("max NLL gap {worst:.2e} (tol 1e-3) over 10 complexes in {:.1?}", t0.elapsed()),
    );
    assert!(pass);
}
