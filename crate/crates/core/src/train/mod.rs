//! Mini-batch training with Adam, adaptive clipping, per-epoch checkpoints
//! and a CSV metrics log.

pub mod adam;
pub mod clip;
pub mod dequant;
pub mod loss;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::data::Complex;
use crate::error::{Error, Result};
use crate::flow::{log_likelihood, OdeConfig};
use crate::graph3d::VertexVector;
use crate::heads::argmax;
use crate::model::Model;
use crate::nnkit::Checkpoint;
use crate::rng;

pub use adam::{Adam, AdamConfig};
pub use clip::Clipper;
pub use dequant::DequantConfig;
pub use loss::{example_grad, head_losses, Example, FlowTrain, LossParts, LossWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub val_fraction: f64,
    /// RK4 steps of the differentiable solve.
    pub rk4_steps: usize,
    pub kinetic: f64,
    pub clip_window: usize,
    pub clip_multiplier: f64,
    pub adam: AdamConfig,
    pub weights: LossWeights,
    /// Solver for validation likelihoods.
    pub validation_ode: OdeConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 128,
            seed: 0,
            val_fraction: 0.1,
            rk4_steps: 32,
            kinetic: 1e-3,
            clip_window: 50,
            clip_multiplier: 1.5,
            adam: AdamConfig::default(),
            weights: LossWeights::default(),
            validation_ode: OdeConfig::dopri5(1e-4, 1e-4),
        }
    }
}

impl TrainConfig {
    /// Small batches, a larger step size and a coarse solve; trains the
    /// synthetic benchmark in minutes on one core.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 16,
            rk4_steps: 4,
            adam: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
            weights: LossWeights {
                number: 3.0,
                ..LossWeights::default()
            },
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.rk4_steps == 0 {
            return bad("batch_size and rk4_steps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must be in [0, 1), got {}", self.val_fraction));
        }
        if !(self.adam.lr > 0.0) || !(self.clip_multiplier > 0.0) || self.kinetic < 0.0 {
            return bad("lr and clip_multiplier must be positive, kinetic non-negative".into());
        }
        self.validation_ode.validate()
    }
}

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub flow_nll: f64,
    pub number_nll: f64,
    pub edge_nll: f64,
    pub property_nll: f64,
    /// Mean pre-clip gradient norm; training rows only.
    pub grad_norm: Option<f64>,
    pub nfe: usize,
}

pub const CSV_HEADER: &str = "epoch,split,flow_nll,number_nll,edge_nll,property_nll,grad_norm,nfe";

impl MetricRow {
    fn csv(&self) -> String {
        let g = self.grad_norm.map_or(String::new(), |g| g.to_string());
        format!(
            "{},{},{},{},{},{},{},{}",
            self.epoch, self.split, self.flow_nll, self.number_nll, self.edge_nll, self.property_nll, g, self.nfe
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub train: MetricRow,
    pub val: Option<MetricRow>,
    /// Argmax accuracy of the number head on the validation split.
    pub number_accuracy: Option<f64>,
}

/// Complement vertex vector with dequantized features.
pub fn dequantized(c: &Complex, dq: &DequantConfig, r: &mut rng::SeededRng) -> VertexVector {
    let g = &c.complement;
    let h: Vec<Vec<f64>> = g.features().iter().map(|f| dq.dequantize(f, r)).collect();
    VertexVector::from_vertices(g.positions(), &h, g.feature_dim())
}

/// Training state; everything needed to resume bit-for-bit.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    pub dequant: DequantConfig,
    pub adam: Adam,
    pub clip: Clipper,
    /// Completed epochs.
    pub epoch: usize,
    pub history: Vec<MetricRow>,
    pub accuracy: Vec<f64>,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig, dequant: DequantConfig) -> Result<Self> {
        cfg.validate()?;
        dequant.validate()?;
        let n = model.params.len();
        Ok(Trainer {
            adam: Adam::new(cfg.adam, n),
            clip: Clipper::new(cfg.clip_window, cfg.clip_multiplier),
            model,
            cfg,
            dequant,
            epoch: 0,
            history: Vec::new(),
            accuracy: Vec::new(),
        })
    }

    fn flow_cfg(&self) -> FlowTrain {
        FlowTrain {
            steps: self.cfg.rk4_steps,
            kinetic: self.cfg.kinetic,
        }
    }

    /// One pass over `train` in a seeded order, then validation on `val`.
    pub fn run_epoch(&mut self, data: &[Complex], train: &[usize], val: &[usize]) -> Result<EpochReport> {
        let epoch = self.epoch + 1;
        let mut order = train.to_vec();
        order.shuffle(&mut rng::stream(self.cfg.seed, epoch as u64));
        let mut sums = LossParts::default();
        let mut norms = 0.0;
        let mut n_batches = 0;
        for batch in order.chunks(self.cfg.batch_size) {
            let mut grad = vec![0.0; self.model.params.len()];
            let w = 1.0 / batch.len() as f64;
            for &i in batch {
                let c = &data[i];
                let mut r = rng::stream(self.cfg.seed.wrapping_add(1), ((epoch as u64) << 32) | i as u64);
                let ex = Example {
                    base: &c.base,
                    complement: &c.complement,
                    v: dequantized(c, &self.dequant, &mut r),
                };
                let (parts, g) = example_grad(&self.model, &ex, &self.cfg.weights, Some(self.flow_cfg()))
                    .map_err(|e| e.context(format!("epoch {epoch}, complex {i}")))?;
                sums.add_scaled(&parts, 1.0 / train.len() as f64);
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += w * b;
                }
            }
            norms += self.clip.clip(&mut grad);
            n_batches += 1;
            self.adam.step(self.model.params.data_mut(), &grad);
        }
        let train_row = MetricRow {
            epoch,
            split: "train".into(),
            flow_nll: sums.flow,
            number_nll: sums.number,
            edge_nll: sums.edge,
            property_nll: sums.property,
            grad_norm: Some(norms / n_batches.max(1) as f64),
            nfe: 4 * self.cfg.rk4_steps * train.len(),
        };
        let (val_row, acc) = if val.is_empty() {
            (None, None)
        } else {
            let (row, acc) = self.validate(data, val, epoch)?;
            (Some(row), Some(acc))
        };
        self.epoch = epoch;
        self.history.push(train_row.clone());
        if let (Some(r), Some(a)) = (&val_row, acc) {
            self.history.push(r.clone());
            self.accuracy.push(a);
        }
        Ok(EpochReport {
            train: train_row,
            val: val_row,
            number_accuracy: acc,
        })
    }

    /// Mean losses on `val` with the adaptive solver, plus number-head
    /// accuracy. Dequantization noise is fixed per complex.
    pub fn validate(&self, data: &[Complex], val: &[usize], epoch: usize) -> Result<(MetricRow, f64)> {
        let mut row = MetricRow {
            epoch,
            split: "val".into(),
            flow_nll: 0.0,
            number_nll: 0.0,
            edge_nll: 0.0,
            property_nll: 0.0,
            grad_norm: None,
            nfe: 0,
        };
        let mut correct = 0usize;
        let s = 1.0 / val.len() as f64;
        for &i in val {
            let c = &data[i];
            let mut r = rng::stream(self.cfg.seed.wrapping_add(2), i as u64);
            let v = dequantized(c, &self.dequant, &mut r);
            let ctx = |e: Error| e.context(format!("validation, epoch {epoch}, complex {i}"));
            let l = log_likelihood(&self.model, &v, &c.base, &self.cfg.validation_ode).map_err(ctx)?;
            let (n, e, p) = head_losses(&self.model, &c.base, &c.complement).map_err(ctx)?;
            row.flow_nll -= s * l.log_p;
            row.number_nll += s * n;
            row.edge_nll += s * e;
            row.property_nll += s * p;
            row.nfe += l.nfe;
            let dist = self.model.number_distribution(&c.base)?;
            correct += (argmax(&dist) + 1 == c.complement.n_vertices()) as usize;
        }
        Ok((row, correct as f64 / val.len() as f64))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut meta = Map::new();
        meta.insert("epoch".into(), self.epoch.into());
        meta.insert("train".into(), serde_json::to_value(&self.cfg).expect("config serializes"));
        meta.insert("dequant".into(), serde_json::to_value(self.dequant).expect("config serializes"));
        meta.insert("adam_t".into(), self.adam.t.into());
        meta.insert("clip_history".into(), json!(self.clip.history));
        meta.insert("history".into(), serde_json::to_value(&self.history).expect("rows serialize"));
        meta.insert("accuracy".into(), json!(self.accuracy));
        let mut ck = self.model.to_checkpoint(meta);
        let p = &self.model.params;
        ck.tensors.extend(p.tensors_from_flat("adam.m.", &self.adam.m));
        ck.tensors.extend(p.tensors_from_flat("adam.v.", &self.adam.v));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let model = Model::from_checkpoint(ck)?;
        let get = |k: &str| -> Result<Value> {
            ck.metadata
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Config(format!("checkpoint lacks training state `{k}`")))
        };
        let de = |k: &str, v: Value| Error::Config(format!("checkpoint field `{k}`: {v}"));
        let cfg: TrainConfig = serde_json::from_value(get("train")?).map_err(|e| de("train", e.to_string().into()))?;
        let dequant: DequantConfig =
            serde_json::from_value(get("dequant")?).map_err(|e| de("dequant", e.to_string().into()))?;
        let mut t = Trainer::new(model, cfg, dequant)?;
        t.epoch = serde_json::from_value(get("epoch")?)?;
        t.adam.t = serde_json::from_value(get("adam_t")?)?;
        t.adam.m = t.model.params.flat_from_tensors("adam.m.", &ck.tensors)?;
        t.adam.v = t.model.params.flat_from_tensors("adam.v.", &ck.tensors)?;
        t.clip.history = serde_json::from_value(get("clip_history")?)?;
        t.history = serde_json::from_value(get("history")?)?;
        t.accuracy = serde_json::from_value(get("accuracy")?)?;
        Ok(t)
    }

    pub fn write_metrics(&self, path: &Path) -> Result<()> {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.history {
            s.push_str(&r.csv());
            s.push('\n');
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    /// Trains up to `cfg.epochs`, writing `epoch_NNN.json`, `latest.json`
    /// and `metrics.csv` into `out` after every epoch.
    pub fn fit(&mut self, data: &[Complex], out: &Path, mut log: impl FnMut(&EpochReport)) -> Result<()> {
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let (train, val) = crate::data::split(data.len(), self.cfg.val_fraction, self.cfg.seed)?;
        if train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        while self.epoch < self.cfg.epochs {
            let rep = self.run_epoch(data, &train, &val)?;
            let ck = self.checkpoint();
            ck.save(&out.join(format!("epoch_{:03}.json", self.epoch)))?;
            ck.save(&out.join("latest.json"))?;
            self.write_metrics(&out.join("metrics.csv"))?;
            log(&rep);
            std::io::stderr().flush().ok();
        }
        Ok(())
    }
}
