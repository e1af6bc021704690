//! Two-stage training: person-level pretraining of the node RNNs, then joint
//! training of the whole hierarchy.

mod adam;
mod metrics;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use adam::{Adam, AdamState};
pub use metrics::{evaluate, write_metrics_csv, write_metrics_csv_to, EpochRecord, Metrics, CSV_HEADER};

use crate::config::KeyValues;
use crate::data::SequenceSample;
use crate::error::{Error, Result};
use crate::model::{action_loss, forward, joint_loss, Level, ModelConfig, Variant, NODE_PREFIX};
use crate::tensor::{Graph, ModelParams};
use metrics::order_free_sum;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub learning_rate: f64,
    pub stage1_batch_size: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm ceiling applied before every step.
    pub clip_norm: f64,
    /// Share of the data held out for checkpoint selection by the CLI.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_epochs: 10,
            stage2_epochs: 40,
            learning_rate: 1e-3,
            stage1_batch_size: 8,
            batch_size: 8,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 5.0,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "stage1-epochs",
    "stage2-epochs",
    "learning-rate",
    "lr",
    "stage1-batch-size",
    "batch-size",
    "beta1",
    "beta2",
    "adam-eps",
    "clip-norm",
    "val-fraction",
    "seed",
];

impl TrainConfig {
    /// Optimizer settings of the Volleyball experiments.
    pub fn full_scale(variant: Variant) -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            stage1_batch_size: 36,
            batch_size: if variant == Variant::MaxEdge { 16 } else { 30 },
            ..TrainConfig::default()
        }
    }

    pub fn keys() -> &'static [&'static str] {
        KEYS
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage1_epochs == 0 || self.stage2_epochs == 0 {
            return Err(Error::Config("epoch counts must be at least 1".into()));
        }
        if self.batch_size == 0 || self.stage1_batch_size == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        // lr = 0 is accepted: it freezes the parameters.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("bad learning rate {}", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(Error::Config("need 0 ≤ beta < 1 and adam-eps > 0".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config("clip-norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val-fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// Overrides fields present in `kv`; other keys are ignored.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        if let Some(v) = kv.get_parsed("stage1-epochs")? {
            self.stage1_epochs = v;
        }
        if let Some(v) = kv.get_parsed("stage2-epochs")? {
            self.stage2_epochs = v;
        }
        if let Some(v) = kv.get_parsed("lr")? {
            self.learning_rate = v;
        }
        if let Some(v) = kv.get_parsed("learning-rate")? {
            self.learning_rate = v;
        }
        if let Some(v) = kv.get_parsed("stage1-batch-size")? {
            self.stage1_batch_size = v;
        }
        if let Some(v) = kv.get_parsed("batch-size")? {
            self.batch_size = v;
        }
        if let Some(v) = kv.get_parsed("beta1")? {
            self.beta1 = v;
        }
        if let Some(v) = kv.get_parsed("beta2")? {
            self.beta2 = v;
        }
        if let Some(v) = kv.get_parsed("adam-eps")? {
            self.adam_eps = v;
        }
        if let Some(v) = kv.get_parsed("clip-norm")? {
            self.clip_norm = v;
        }
        if let Some(v) = kv.get_parsed("val-fraction")? {
            self.val_fraction = v;
        }
        if let Some(v) = kv.get_parsed("seed")? {
            self.seed = v;
        }
        self.validate()
    }

    pub fn adam(&self) -> Adam {
        Adam {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Nodes,
    Joint,
}

struct SampleStep {
    grads: ModelParams,
    loss: f64,
    group: Option<usize>,
    actions: Vec<usize>,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn is_node_param(name: &str) -> bool {
    name.starts_with(NODE_PREFIX) && name[NODE_PREFIX.len()..].starts_with('.')
}

fn sample_step(params: &ModelParams, cfg: &ModelConfig, sample: &SequenceSample, stage: Stage) -> Result<SampleStep> {
    let mut graph = Graph::new();
    let frames = 0..sample.frames();
    let (bound, level) = match stage {
        Stage::Nodes => (graph.bind_trainable(params, is_node_param), Level::Actions),
        Stage::Joint => (graph.bind(params), Level::Full),
    };
    let outputs = forward(&mut graph, &bound, cfg, sample, frames.clone(), level)?;
    let loss = match stage {
        Stage::Nodes => action_loss(&mut graph, &outputs, sample, frames)?,
        Stage::Joint => joint_loss(&mut graph, &outputs, sample, frames)?,
    };
    let grads = graph.backward(loss)?.for_params(&graph, &bound);
    let grads = match stage {
        Stage::Nodes => grads.filter_prefix(&[&format!("{NODE_PREFIX}.")]),
        Stage::Joint => grads,
    };
    let last = outputs.last().expect("non-empty clip");
    let group = last.group_logits.map(|g| argmax(graph.value(g).data()));
    let actions = graph
        .value(last.action_logits)
        .data()
        .chunks(cfg.action_classes)
        .map(argmax)
        .collect();
    Ok(SampleStep {
        grads,
        loss: graph.value(loss).item(),
        group,
        actions,
    })
}

/// Result of one training stage.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub params: ModelParams,
    /// Mean training loss of every epoch, measured during the epoch.
    pub epoch_losses: Vec<f64>,
    /// Per-epoch CSV rows, epochs numbered from 1 within the stage.
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were returned, when a validation set chose it.
    pub best_epoch: Option<usize>,
}

fn check_data(cfg: &ModelConfig, data: &[SequenceSample]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::usage("training set is empty"));
    }
    for s in data {
        s.validate_labels(cfg.label_space())?;
    }
    Ok(())
}

fn run_stage(
    tc: &TrainConfig,
    cfg: &ModelConfig,
    data: &[SequenceSample],
    val: Option<&[SequenceSample]>,
    mut params: ModelParams,
    stage: Stage,
) -> Result<StageOutcome> {
    tc.validate()?;
    cfg.validate()?;
    cfg.check_params(&params)?;
    check_data(cfg, data)?;
    if let Some(v) = val {
        check_data(cfg, v)?;
    }
    let (epochs, batch_size, stream) = match stage {
        Stage::Nodes => (tc.stage1_epochs, tc.stage1_batch_size, 1),
        Stage::Joint => (tc.stage2_epochs, tc.batch_size, 2),
    };
    let adam = tc.adam();
    let mut state = AdamState::new();
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    rng.set_stream(stream);
    let mut order: Vec<usize> = (0..data.len()).collect();

    let mut epoch_losses = Vec::with_capacity(epochs);
    let mut records = Vec::new();
    let mut best: Option<(f64, f64, usize, ModelParams)> = None;

    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(data.len());
        let mut group_hits = 0usize;
        let mut action_hits = 0usize;
        let mut persons = 0usize;
        for batch in order.chunks(batch_size) {
            let steps = batch
                .par_iter()
                .map(|&i| sample_step(&params, cfg, &data[i], stage))
                .collect::<Result<Vec<_>>>()?;
            let mut total = steps[0].grads.zeros_like();
            for (step, &i) in steps.iter().zip(batch) {
                total.add_assign(&step.grads)?;
                losses.push(step.loss);
                let s = &data[i];
                let last = s.frames() - 1;
                if step.group == Some(s.group_labels[last]) {
                    group_hits += 1;
                }
                for (p, &a) in s.persons.iter().zip(&step.actions) {
                    action_hits += usize::from(p.actions[last] == a);
                }
                persons += s.num_persons();
            }
            total.scale(1.0 / batch.len() as f64);
            let norm = total.l2_norm();
            if norm > tc.clip_norm {
                total.scale(tc.clip_norm / norm);
            }
            adam.step(&mut params, &total, &mut state)?;
        }
        let mean_loss = order_free_sum(&losses) / data.len() as f64;
        epoch_losses.push(mean_loss);
        records.push(EpochRecord {
            epoch,
            split: "train".into(),
            loss: mean_loss,
            group_acc: (stage == Stage::Joint).then(|| group_hits as f64 / data.len() as f64),
            action_acc: action_hits as f64 / persons as f64,
        });

        if let (Stage::Joint, Some(val)) = (stage, val) {
            let m = evaluate(&params, cfg, val)?;
            records.push(EpochRecord {
                epoch,
                split: "val".into(),
                loss: m.mean_loss,
                group_acc: Some(m.group_accuracy),
                action_acc: m.action_accuracy,
            });
            let score = m.group_accuracy + m.action_accuracy;
            let better = match &best {
                None => true,
                Some((s, l, _, _)) => score > *s || (score == *s && m.mean_loss < *l),
            };
            if better {
                best = Some((score, m.mean_loss, epoch, params.clone()));
            }
        }
    }

    let (params, best_epoch) = match best {
        Some((_, _, epoch, p)) => (p, Some(epoch)),
        None => (params, None),
    };
    Ok(StageOutcome {
        params,
        epoch_losses,
        records,
        best_epoch,
    })
}

/// Stage 1 from fresh parameters seeded by `tc.seed`.
pub fn train_stage1(tc: &TrainConfig, cfg: &ModelConfig, data: &[SequenceSample]) -> Result<StageOutcome> {
    let init = cfg.init_params(tc.seed)?;
    train_stage1_from(tc, cfg, data, init)
}

/// Optimizes the node RNN and action head against the action loss only.
/// Edge and group parameters are returned bit-for-bit as given.
pub fn train_stage1_from(
    tc: &TrainConfig,
    cfg: &ModelConfig,
    data: &[SequenceSample],
    init: ModelParams,
) -> Result<StageOutcome> {
    run_stage(tc, cfg, data, None, init, Stage::Nodes)
}

/// Optimizes every parameter against the joint loss. With a validation set,
/// the parameters of the best validation epoch are returned.
pub fn train_stage2(
    tc: &TrainConfig,
    cfg: &ModelConfig,
    data: &[SequenceSample],
    val: Option<&[SequenceSample]>,
    init: ModelParams,
) -> Result<StageOutcome> {
    run_stage(tc, cfg, data, val, init, Stage::Joint)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub stage1: StageOutcome,
    /// Stage-2 epochs are numbered after the stage-1 ones.
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
}

/// Both stages back to back.
pub fn train(
    tc: &TrainConfig,
    cfg: &ModelConfig,
    data: &[SequenceSample],
    val: Option<&[SequenceSample]>,
) -> Result<TrainOutcome> {
    let stage1 = train_stage1(tc, cfg, data)?;
    let stage2 = train_stage2(tc, cfg, data, val, stage1.params.clone())?;
    let offset = tc.stage1_epochs;
    let mut records = stage1.records.clone();
    records.extend(stage2.records.iter().cloned().map(|mut r| {
        r.epoch += offset;
        r
    }));
    Ok(TrainOutcome {
        params: stage2.params,
        best_epoch: stage2.best_epoch.map(|e| e + offset),
        stage1,
        records,
    })
}
