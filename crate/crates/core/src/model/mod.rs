//! The three hierarchical recurrent models and their losses.

mod config;
mod forward;
mod topology;

use std::ops::Range;

pub use config::{
    GroupsMode, ModelConfig, Variant, ACTION_BIAS, ACTION_WEIGHT, EDGE_LSTM, EDGE_PREFIX, GROUP_BIAS,
    GROUP_LSTM, GROUP_PREFIX, GROUP_WEIGHT, NODE_LSTM, NODE_PREFIX,
};
pub use forward::{forward, forward_hlstm_v3, forward_maxedge, forward_maxnode, grid_pool, FrameOutput, Level};
pub use topology::{split_two_groups, Topology};

use crate::data::SequenceSample;
use crate::error::{Error, Result};
use crate::tensor::{gradcheck_cross_entropy, CrossEntropyTerm, GradCheckOptions, GradCheckReport, Graph, ModelParams, Var};

fn frame_labels(sample: &SequenceSample, t: usize) -> Vec<usize> {
    sample.persons.iter().map(|p| p.actions[t]).collect()
}

fn check_frames(outputs: &[FrameOutput], frames: &Range<usize>) -> Result<()> {
    if outputs.is_empty() || outputs.len() != frames.len() {
        return Err(Error::usage(format!(
            "{} frame outputs for frame range {frames:?}",
            outputs.len()
        )));
    }
    Ok(())
}

/// Mean over frames of the group cross-entropy plus the mean person-action
/// cross-entropy. `outputs[k]` must belong to frame `frames.start + k`.
pub fn joint_loss(
    graph: &mut Graph,
    outputs: &[FrameOutput],
    sample: &SequenceSample,
    frames: Range<usize>,
) -> Result<Var> {
    check_frames(outputs, &frames)?;
    let mut terms = Vec::with_capacity(outputs.len());
    for (out, t) in outputs.iter().zip(frames.clone()) {
        let group_logits = out
            .group_logits
            .ok_or_else(|| Error::usage("joint loss needs group logits"))?;
        let lg = graph.softmax_cross_entropy(group_logits, sample.group_labels[t])?;
        let la = graph.softmax_cross_entropy_mean(out.action_logits, &frame_labels(sample, t))?;
        terms.push(graph.add(lg, la)?);
    }
    mean(graph, &terms)
}

/// Mean over frames of the mean person-action cross-entropy.
pub fn action_loss(
    graph: &mut Graph,
    outputs: &[FrameOutput],
    sample: &SequenceSample,
    frames: Range<usize>,
) -> Result<Var> {
    check_frames(outputs, &frames)?;
    let mut terms = Vec::with_capacity(outputs.len());
    for (out, t) in outputs.iter().zip(frames) {
        terms.push(graph.softmax_cross_entropy_mean(out.action_logits, &frame_labels(sample, t))?);
    }
    mean(graph, &terms)
}

fn mean(graph: &mut Graph, terms: &[Var]) -> Result<Var> {
    let stacked = graph.concat(terms)?;
    let total = graph.sum(stacked);
    Ok(graph.scale(total, 1.0 / terms.len() as f64))
}

/// Clip-level decision read off the last frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub group: usize,
    pub actions: Vec<usize>,
    /// Joint loss over the whole clip.
    pub loss: f64,
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

pub fn predict(params: &ModelParams, cfg: &ModelConfig, sample: &SequenceSample) -> Result<Prediction> {
    cfg.check_params(params)?;
    let mut graph = Graph::new();
    let bound = graph.bind_trainable(params, |_| false);
    let frames = 0..sample.frames();
    let outputs = forward(&mut graph, &bound, cfg, sample, frames.clone(), Level::Full)?;
    let loss = joint_loss(&mut graph, &outputs, sample, frames)?;
    let last = outputs.last().expect("at least one frame");
    let group = argmax(graph.value(last.group_logits.expect("full level")).data());
    let k = cfg.action_classes;
    let actions = graph.value(last.action_logits).data().chunks(k).map(argmax).collect();
    Ok(Prediction {
        group,
        actions,
        loss: graph.value(loss).item(),
    })
}

/// Finite-difference check of the joint-loss gradient of every parameter on
/// one clip.
pub fn check_gradients(
    params: &ModelParams,
    cfg: &ModelConfig,
    sample: &SequenceSample,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    cfg.check_params(params)?;
    let frames = 0..sample.frames();
    let per_frame = 1.0 / frames.len() as f64;
    let per_person = per_frame / sample.num_persons() as f64;
    gradcheck_cross_entropy(
        |graph, bound| {
            let outputs = forward(graph, bound, cfg, sample, frames.clone(), Level::Full)?;
            let mut terms = Vec::with_capacity(2 * outputs.len());
            for (out, t) in outputs.iter().zip(frames.clone()) {
                terms.push(CrossEntropyTerm {
                    logits: out.group_logits.expect("full level"),
                    labels: vec![sample.group_labels[t]],
                    weight: per_frame,
                });
                terms.push(CrossEntropyTerm {
                    logits: out.action_logits,
                    labels: frame_labels(sample, t),
                    weight: per_person,
                });
            }
            Ok(terms)
        },
        params,
        opts,
    )
}
