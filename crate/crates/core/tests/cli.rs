use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::RngCore;
use semiflow::data::{self, synthesize, SynthConfig};
use semiflow::flow::{draw_noise, AffineCentering};
use semiflow::graph3d::Graph3D;
use semiflow::model::Model;
use semiflow::nnkit::Checkpoint;
use semiflow::rng;
use semiflow::train::DequantConfig;

const SMALL: &str = "\
[synth]
n_complexes = 12
base_min = 6
base_max = 12

[model]
hidden = 8
sig_dim = 4

[train]
epochs = 2
batch_size = 4
rk4_steps = 2
val_fraction = 0.25

[train.validation_ode]
method = \"rk4\"
steps = 4

[ode]
method = \"rk4\"
steps = 8
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_semiflow"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        let w = Work {
            dir: tempfile::tempdir().unwrap(),
        };
        std::fs::write(w.path("small.toml"), SMALL).unwrap();
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn gen(&self, name: &str, seed: &str) -> Output {
        run(&["gen-data", "--config", &self.s("small.toml"), "--out", &self.s(name), "--seed", seed])
    }

    fn trained(&self) -> String {
        self.gen("d.jsonl", "0");
        let o = run(&[
            "train",
            "--config",
            &self.s("small.toml"),
            "--data",
            &self.s("d.jsonl"),
            "--out-dir",
            &self.s("run"),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        self.s("run/latest.json")
    }
}

fn nll_rows(o: &Output) -> Vec<f64> {
    assert!(o.status.success(), "{}", stderr(o));
    let text = stdout(o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("index,n_vertices,nll"));
    lines.map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect()
}

#[test]
fn gen_data_writes_the_configured_count_and_a_histogram() {
    let w = Work::new();
    let o = w.gen("d.jsonl", "0");
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("12 complexes"), "{out}");
    assert!(out.contains("complement_size,count"));
    let counted: usize = out
        .lines()
        .skip(2)
        .map(|l| l.split(',').nth(1).unwrap().parse::<usize>().unwrap())
        .sum();
    assert_eq!(counted, 12);
    assert_eq!(data::load(&w.path("d.jsonl")).unwrap().len(), 12);
}

#[test]
fn gen_data_seed_changes_content() {
    let w = Work::new();
    w.gen("a.jsonl", "1");
    w.gen("b.jsonl", "1");
    w.gen("c.jsonl", "2");
    let read = |n: &str| std::fs::read_to_string(w.path(n)).unwrap();
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_ne!(read("a.jsonl"), read("c.jsonl"));
}

#[test]
fn gen_data_bad_path_fails_with_config_code() {
    let w = Work::new();
    let o = w.gen("missing/dir/d.jsonl", "0");
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_two_epochs_then_resume() {
    let w = Work::new();
    w.trained();
    for f in ["epoch_001.json", "epoch_002.json", "latest.json", "metrics.csv"] {
        assert!(w.path("run").join(f).exists(), "{f}");
    }
    assert!(!w.path("run/epoch_003.json").exists());
    let csv = std::fs::read_to_string(w.path("run/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    let o = run(&[
        "train",
        "--data",
        &w.s("d.jsonl"),
        "--out-dir",
        &w.s("run"),
        "--resume",
        "--epochs",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("resuming after epoch 2"));
    assert!(w.path("run/epoch_003.json").exists());
    let csv = std::fs::read_to_string(w.path("run/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn unknown_config_key_is_named() {
    let w = Work::new();
    w.gen("d.jsonl", "0");
    std::fs::write(w.path("bad.toml"), "[train]\nlearning_rate = 0.1\n").unwrap();
    let o = run(&[
        "train",
        "--config",
        &w.s("bad.toml"),
        "--data",
        &w.s("d.jsonl"),
        "--out-dir",
        &w.s("run"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn solver_failure_exits_with_numeric_code() {
    let w = Work::new();
    let ck = w.trained();
    std::fs::write(
        w.path("tight.toml"),
        "[ode]\nmethod = \"dopri5\"\nrtol = 1e-12\natol = 1e-12\nmax_steps = 1\n",
    )
    .unwrap();
    let o = run(&["nll", "--ckpt", &ck, "--data", &w.s("d.jsonl"), "--config", &w.s("tight.toml")]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

fn sample(w: &Work, ck: &str, extra: &[&str], out: &str) -> Vec<Graph3D> {
    let (base, o_path) = (w.s("d.jsonl"), w.s(out));
    let mut args = vec!["sample", "--ckpt", ck, "--base", &base, "--out", &o_path];
    args.extend_from_slice(&["--ode-steps", "8"]);
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    std::fs::read_to_string(w.path(out))
        .unwrap()
        .lines()
        .map(|l| Graph3D::from_json(l).unwrap())
        .collect()
}

#[test]
fn sampling_is_reproducible_per_seed() {
    let w = Work::new();
    let ck = w.trained();
    let a = sample(&w, &ck, &["--n", "3", "--seed", "4"], "a.jsonl");
    let b = sample(&w, &ck, &["--n", "3", "--seed", "4"], "b.jsonl");
    let c = sample(&w, &ck, &["--n", "3", "--seed", "5"], "c.jsonl");
    assert_eq!(a.len(), 12);
    assert!(a.iter().all(|g| g.n_vertices() == 3));
    let js = |v: &[Graph3D]| v.iter().map(|g| g.to_json()).collect::<Vec<_>>();
    assert_eq!(js(&a), js(&b));
    assert_ne!(js(&a), js(&c));
}

#[test]
fn auto_size_follows_the_number_head() {
    let w = Work::new();
    let ck = w.trained();
    let model = Model::from_checkpoint(&Checkpoint::load(Path::new(&ck)).unwrap()).unwrap();
    let set = data::load(&w.path("d.jsonl")).unwrap();
    let a = sample(&w, &ck, &["--n", "auto", "--draw", "argmax"], "a.jsonl");
    for (g, c) in a.iter().zip(&set) {
        let p = model.number_distribution(&c.base).unwrap();
        assert!(p.iter().all(|&q| q <= p[g.n_vertices() - 1]));
    }
    let b = sample(&w, &ck, &["--n", "auto", "--draw", "categorical"], "b.jsonl");
    assert!(b.iter().all(|g| (1..=model.config.n_max).contains(&g.n_vertices())));
}

#[test]
fn zero_dynamics_sample_is_the_affine_inverse_of_the_noise() {
    let w = Work::new();
    let ck = w.trained();
    let mut model = Model::from_checkpoint(&Checkpoint::load(Path::new(&ck)).unwrap()).unwrap();
    model.zero_flow();
    model.to_checkpoint(Default::default()).save(&w.path("zero.json")).unwrap();
    let got = sample(&w, &w.s("zero.json"), &["--n", "2", "--seed", "7"], "z.jsonl");
    let set = data::load(&w.path("d.jsonl")).unwrap();
    let dq = DequantConfig::default();
    for (i, (g, c)) in got.iter().zip(&set).enumerate() {
        let seed = rng::stream(7, i as u64).next_u64();
        let z = draw_noise(&model, 2, seed);
        let v = AffineCentering::new(2, &c.base).unwrap().inverse(&z).unwrap();
        let (x, h) = v.devectorize();
        for (a, b) in g.positions().iter().zip(&x) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
        for (a, b) in g.features().iter().zip(&h) {
            assert_eq!(a, &dq.quantize(b));
        }
    }
}

#[test]
fn nll_rigid_flags() {
    let w = Work::new();
    let ck = w.trained();
    let d = w.s("d.jsonl");
    let plain = nll_rows(&run(&["nll", "--ckpt", &ck, "--data", &d]));
    assert_eq!(plain.len(), 13);
    let mean = plain[..12].iter().sum::<f64>() / 12.0;
    assert!((plain[12] - mean).abs() < 1e-9);

    let ident = nll_rows(&run(&["nll", "--ckpt", &ck, "--data", &d, "--rigid", "0,0,0,0,0,0"]));
    assert_eq!(plain, ident);

    let t = "0.4,-1.2,0.7,3,-2,5";
    let joint = nll_rows(&run(&["nll", "--ckpt", &ck, "--data", &d, "--rigid", t, "--rigid-joint"]));
    for (a, b) in plain.iter().zip(&joint) {
        assert!((a - b).abs() < 1e-4, "{a} {b}");
    }
    let moved = nll_rows(&run(&["nll", "--ckpt", &ck, "--data", &d, "--rigid", "0,0,0,2,0,0"]));
    assert!(plain.iter().zip(&moved).any(|(a, b)| (a - b).abs() > 1e-6));

    let o = run(&["nll", "--ckpt", &ck, "--data", &d, "--rigid", "1,2,3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn verify_passes_on_random_parameters_and_lists_every_check() {
    let w = Work::new();
    let o = run(&["verify", "--config", &w.s("small.toml"), "--probes", "5", "--nll-probes", "3"]);
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let out = stdout(&o);
    for name in [
        "gamma_rotation",
        "gamma_permutation",
        "base_egnn_rotation",
        "cond_egnn_permutation",
        "lemma1_rigid",
        "lemma2_flow",
        "log_det",
        "nll_rigid",
        "invertibility",
        "grad_property",
    ] {
        assert!(out.contains(name), "{name}");
    }
    assert!(out.contains("20/20 checks passed"));
}

#[test]
fn verify_injected_bias_fails_rotation() {
    let w = Work::new();
    let o = run(&[
        "verify",
        "--config",
        &w.s("small.toml"),
        "--probes",
        "5",
        "--nll-probes",
        "3",
        "--inject-bias",
    ]);
    assert_eq!(o.status.code(), Some(4));
    let out = stdout(&o);
    let rot = out.lines().find(|l| l.starts_with("gamma_rotation")).unwrap();
    assert!(rot.contains("FAIL"), "{rot}");
    let perm = out.lines().find(|l| l.starts_with("gamma_permutation")).unwrap();
    assert!(perm.contains("PASS"), "{perm}");
}

#[test]
fn verify_accepts_a_checkpoint() {
    let w = Work::new();
    let ck = w.trained();
    let o = run(&["verify", "--ckpt", &ck, "--probes", "3", "--nll-probes", "2"]);
    assert!(o.status.success(), "{}", stdout(&o));
}

#[test]
fn missing_subcommand_is_a_usage_error() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn base_file_may_hold_bare_graphs() {
    let w = Work::new();
    let ck = w.trained();
    let (c, _) = synthesize(
        &SynthConfig {
            base_min: 6,
            base_max: 12,
            ..SynthConfig::default()
        },
        99,
    )
    .unwrap();
    std::fs::write(w.path("bases.jsonl"), format!("{}\n{}\n", c.base.to_json(), c.base.to_json())).unwrap();
    let o = run(&[
        "sample",
        "--ckpt",
        &ck,
        "--base",
        &w.s("bases.jsonl"),
        "--n",
        "2",
        "--ode-steps",
        "4",
        "--out",
        &w.s("s.jsonl"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(w.path("s.jsonl")).unwrap().lines().count(), 2);
}
