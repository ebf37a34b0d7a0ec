//! The `semiflow` command line: `gen-data`, `train`, `sample`, `nll` and
//! `verify`.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numeric or
//! solver failure, 4 verification failure.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::RngCore;

use crate::config::{check_dataset, Config};
use crate::data::{self, Complex};
use crate::error::{Error, Result};
use crate::flow::{log_likelihood, OdeConfig};
use crate::generate::{generate, SizeChoice};
use crate::graph3d::{apply_rigid, Graph3D, RigidTransform};
use crate::model::Model;
use crate::nnkit::Checkpoint;
use crate::rng;
use crate::train::{dequantized, DequantConfig, EpochReport, Trainer};
use crate::verify::{self, SuiteConfig};

#[derive(Debug, Parser)]
#[command(name = "semiflow", version, about = "Semi-equivariant conditional flows over 3D graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset of complexes.
    GenData(GenDataArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Sample complements for base graphs.
    Sample(SampleArgs),
    /// Score complexes; CSV on stdout.
    Nll(NllArgs),
    /// Run the equivariance and gradient suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output JSONL file; a `.gz` suffix compresses.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n_complexes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Continue from `latest.json` in the output directory.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub rk4_steps: Option<usize>,
}

/// Complement size for `sample`: a count or `auto`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeArg {
    Count(usize),
    Auto,
}

impl FromStr for SizeArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "auto" {
            return Ok(SizeArg::Auto);
        }
        s.parse()
            .map(SizeArg::Count)
            .map_err(|_| format!("expected a vertex count or `auto`, got {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Draw {
    Argmax,
    Categorical,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// JSONL of base graphs, or of complexes whose bases are used.
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long, default_value = "auto")]
    pub n: SizeArg,
    /// Size rule for `--n auto`.
    #[arg(long, value_enum, default_value_t = Draw::Argmax)]
    pub draw: Draw,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Supplies `[ode]` and `[dequant]`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Fixed-step RK4 instead of the configured solver.
    #[arg(long)]
    pub ode_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct NllArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// `"rx,ry,rz,tx,ty,tz"` applied to the complement only.
    #[arg(long, allow_hyphen_values = true)]
    pub rigid: Option<String>,
    /// Apply `--rigid` to the base as well.
    #[arg(long, requires = "rigid")]
    pub rigid_joint: bool,
    /// Seed of the dequantization noise.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ode_steps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Checkpoint to test; random parameters otherwise.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Supplies `[model]` for random parameters.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub probes: Option<usize>,
    #[arg(long)]
    pub nll_probes: Option<usize>,
    #[arg(long, hide = true)]
    pub inject_bias: bool,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Verification(_) => 4,
        e if e.is_numeric() => 3,
        _ => 2,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            e.print().ok();
            return code;
        }
    };
    let mut out = std::io::stdout().lock();
    let mut err = std::io::stderr();
    match run(cli, &mut out, &mut err) {
        Ok(()) => 0,
        Err(e) => {
            writeln!(err, "error: {e}").ok();
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a, out),
        Command::Train(a) => train(a, err),
        Command::Sample(a) => sample(a, err),
        Command::Nll(a) => nll(a, out),
        Command::Verify(a) => run_verify(a, out),
    }
}

fn emit(w: &mut dyn Write, s: std::fmt::Arguments) -> Result<()> {
    w.write_fmt(s)
        .map_err(|e| Error::io("<output>", e))
}

fn parent_exists(p: &Path) -> Result<()> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => Err(Error::Config(format!(
            "output directory {} does not exist",
            d.display()
        ))),
        _ => Ok(()),
    }
}

fn gen_data(a: GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = Config::load_or_default(a.config.as_deref())?.synth;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n_complexes {
        cfg.n_complexes = n;
    }
    cfg.validate()?;
    parent_exists(&a.out)?;
    let set = data::generate(&cfg)?;
    data::save(&a.out, &set)?;
    emit(out, format_args!("{} complexes written to {}\n", set.len(), a.out.display()))?;
    let mut hist = BTreeMap::new();
    for c in &set {
        *hist.entry(c.complement.n_vertices()).or_insert(0usize) += 1;
    }
    emit(out, format_args!("complement_size,count\n"))?;
    for (n, k) in hist {
        emit(out, format_args!("{n},{k}\n"))?;
    }
    Ok(())
}

fn log_epoch(err: &mut dyn Write, r: &EpochReport) {
    let t = &r.train;
    let mut line = format!(
        "epoch {:>3}  train flow {:.4} number {:.4} edge {:.4} property {:.4}",
        t.epoch, t.flow_nll, t.number_nll, t.edge_nll, t.property_nll
    );
    if let Some(v) = &r.val {
        line += &format!("  val flow {:.4} number {:.4}", v.flow_nll, v.number_nll);
    }
    if let Some(acc) = r.number_accuracy {
        line += &format!(" accuracy {acc:.3}");
    }
    writeln!(err, "{line}").ok();
}

fn train(a: TrainArgs, err: &mut dyn Write) -> Result<()> {
    let set = data::load(&a.data)?;
    if set.is_empty() {
        return Err(Error::Config(format!("{} holds no complexes", a.data.display())));
    }
    let mut trainer = if a.resume {
        let ck = Checkpoint::load(&a.out_dir.join("latest.json"))?;
        let mut t = Trainer::from_checkpoint(&ck)?;
        if let Some(e) = a.epochs {
            t.cfg.epochs = e;
        }
        writeln!(err, "resuming after epoch {}", t.epoch).ok();
        t
    } else {
        let mut cfg = Config::load_or_default(a.config.as_deref())?;
        let t = &mut cfg.train;
        if let Some(v) = a.epochs {
            t.epochs = v;
        }
        if let Some(v) = a.seed {
            t.seed = v;
        }
        if let Some(v) = a.lr {
            t.adam.lr = v;
        }
        if let Some(v) = a.batch_size {
            t.batch_size = v;
        }
        if let Some(v) = a.rk4_steps {
            t.rk4_steps = v;
        }
        cfg.validate()?;
        let model = Model::new(cfg.model.clone(), cfg.train.seed)?;
        Trainer::new(model, cfg.train, cfg.dequant)?
    };
    check_dataset(&trainer.model.config, &set)?;
    trainer.fit(&set, &a.out_dir, |r| log_epoch(err, r))
}

fn load_model(path: &Path) -> Result<(Model, Option<DequantConfig>)> {
    let ck = Checkpoint::load(path)?;
    let dq = match ck.metadata.get("dequant") {
        Some(v) => Some(serde_json::from_value(v.clone())?),
        None => None,
    };
    Ok((Model::from_checkpoint(&ck)?, dq))
}

fn solver(config: Option<&Path>, steps: Option<usize>) -> Result<(OdeConfig, DequantConfig)> {
    let cfg = Config::load_or_default(config)?;
    let ode = steps.map_or(cfg.ode, OdeConfig::rk4);
    ode.validate()?;
    Ok((ode, cfg.dequant))
}

/// Reads base graphs from JSONL lines holding either a graph or a complex.
fn read_bases(path: &Path) -> Result<Vec<Graph3D>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse = |m: String| Error::Parse { line: k + 1, message: m };
        let v: serde_json::Value = serde_json::from_str(line).map_err(|e| parse(e.to_string()))?;
        let g = match v.get("base") {
            Some(_) => serde_json::from_value::<Complex>(v).map(|c| c.base),
            None => serde_json::from_value::<Graph3D>(v),
        };
        out.push(g.map_err(|e| parse(e.to_string()))?);
    }
    Ok(out)
}

fn sample(a: SampleArgs, err: &mut dyn Write) -> Result<()> {
    let (model, ck_dq) = load_model(&a.ckpt)?;
    let (ode, cfg_dq) = solver(a.config.as_deref(), a.ode_steps)?;
    let dq = ck_dq.unwrap_or(cfg_dq);
    let bases = read_bases(&a.base)?;
    parent_exists(&a.out)?;
    let size = match (a.n, a.draw) {
        (SizeArg::Count(n), _) => SizeChoice::Fixed(n),
        (SizeArg::Auto, Draw::Argmax) => SizeChoice::Argmax,
        (SizeArg::Auto, Draw::Categorical) => SizeChoice::Categorical,
    };
    let mut lines = String::new();
    for (i, b) in bases.iter().enumerate() {
        let seed = rng::stream(a.seed, i as u64).next_u64();
        let g = generate(&model, b, size, seed, &ode, &dq).map_err(|e| e.context(format!("base {i}")))?;
        lines.push_str(&g.to_json());
        lines.push('\n');
    }
    std::fs::write(&a.out, lines).map_err(|e| Error::io(&a.out, e))?;
    writeln!(err, "{} complements written to {}", bases.len(), a.out.display()).ok();
    Ok(())
}

/// Per-complex NLL with dequantization noise fixed by `seed` and the index.
pub fn score(
    model: &Model,
    set: &[Complex],
    rigid: Option<(&RigidTransform, bool)>,
    seed: u64,
    ode: &OdeConfig,
    dq: &DequantConfig,
) -> Result<Vec<f64>> {
    set.iter()
        .enumerate()
        .map(|(i, c)| {
            let v = dequantized(c, dq, &mut rng::stream(seed, i as u64));
            let (v, base) = match rigid {
                None => (v, c.base.clone()),
                Some((t, joint)) => (
                    v.apply_rigid(t),
                    if joint { apply_rigid(t, &c.base) } else { c.base.clone() },
                ),
            };
            log_likelihood(model, &v, &base, ode)
                .map(|l| -l.log_p)
                .map_err(|e| e.context(format!("complex {i}")))
        })
        .collect()
}

fn nll(a: NllArgs, out: &mut dyn Write) -> Result<()> {
    let (model, ck_dq) = load_model(&a.ckpt)?;
    let (ode, cfg_dq) = solver(a.config.as_deref(), a.ode_steps)?;
    let dq = ck_dq.unwrap_or(cfg_dq);
    let t = a.rigid.as_deref().map(RigidTransform::parse_rotvec).transpose()?;
    let set = data::load(&a.data)?;
    check_dataset(&model.config, &set)?;
    let nlls = score(&model, &set, t.as_ref().map(|t| (t, a.rigid_joint)), a.seed, &ode, &dq)?;
    emit(out, format_args!("index,n_vertices,nll\n"))?;
    for (i, (c, v)) in set.iter().zip(&nlls).enumerate() {
        emit(out, format_args!("{i},{},{v}\n", c.complement.n_vertices()))?;
    }
    let mean = nlls.iter().sum::<f64>() / nlls.len().max(1) as f64;
    emit(out, format_args!("mean,,{mean}\n"))
}

fn run_verify(a: VerifyArgs, out: &mut dyn Write) -> Result<()> {
    let mut model = match &a.ckpt {
        Some(p) => load_model(p)?.0,
        None => Model::new(Config::load_or_default(a.config.as_deref())?.model, a.seed)?,
    };
    if a.inject_bias {
        model.debug_bias = Some([0.3, -0.2, 0.1]);
    }
    let mut cfg = SuiteConfig {
        seed: a.seed,
        ..SuiteConfig::default()
    };
    if let Some(p) = a.probes {
        cfg.probes = p;
    }
    if let Some(p) = a.nll_probes {
        cfg.nll_probes = p;
    }
    let checks = verify::run(&model, &cfg)?;
    for c in &checks {
        emit(out, format_args!("{c}\n"))?;
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed()).map(|c| c.name).collect();
    emit(out, format_args!("{}/{} checks passed\n", checks.len() - failed.len(), checks.len()))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Verification(format!("failed: {}", failed.join(", "))))
    }
}
