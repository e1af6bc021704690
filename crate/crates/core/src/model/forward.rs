//! Per-frame forward passes of SRNN-MaxNode, SRNN-MaxEdge and the
//! hierarchical LSTM (V3) baseline.
//!
//! All recurrent instances of one kind share a parameter set and advance as
//! rows of one matrix: edges, persons, and the single group instance.

use std::ops::Range;

use crate::data::SequenceSample;
use crate::error::{Error, Result};
use crate::geometry::{assign_cells, edge_feature, GRID_CELLS};
use crate::lstm::{Lstm, LstmState};
use crate::model::topology::Topology;
use crate::model::{
    ModelConfig, Variant, ACTION_BIAS, ACTION_WEIGHT, EDGE_LSTM, GROUP_BIAS, GROUP_LSTM, GROUP_WEIGHT,
    NODE_LSTM,
};
use crate::tensor::{BoundParams, Graph, Tensor, Var};

/// Graph handles produced for one frame.
#[derive(Debug, Clone, Copy)]
pub struct FrameOutput {
    /// persons × action classes
    pub action_logits: Var,
    /// group classes; absent when only the person level was built
    pub group_logits: Option<Var>,
    /// persons × node hidden
    pub node_hidden: Var,
    /// Grid-pooled edge context fed to the node RNNs (MaxNode only).
    pub grid_input: Option<Var>,
    /// Pooled vector fed to the group RNN.
    pub pooled: Option<Var>,
}

/// How much of the hierarchy to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    /// Person level only: the action logits of stage-1 training.
    Actions,
    Full,
}

fn check_inputs(cfg: &ModelConfig, sample: &SequenceSample, frames: &Range<usize>) -> Result<()> {
    cfg.validate()?;
    if sample.num_persons() == 0 {
        return Err(Error::usage(format!("clip {} has no persons", sample.clip_id)));
    }
    sample.validate()?;
    if sample.feature_dim() != cfg.node_feature_dim {
        return Err(Error::dim(format!(
            "clip {} has {}-d node features, model expects {}",
            sample.clip_id,
            sample.feature_dim(),
            cfg.node_feature_dim
        )));
    }
    if frames.is_empty() || frames.end > sample.frames() {
        return Err(Error::usage(format!(
            "frame range {frames:?} invalid for clip {} of {} frames",
            sample.clip_id,
            sample.frames()
        )));
    }
    Ok(())
}

fn node_features(sample: &SequenceSample, t: usize) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = sample.persons.iter().map(|p| p.feats[t].clone()).collect();
    Tensor::from_rows(&rows)
}

fn edge_features(sample: &SequenceSample, edges: &[(usize, usize)], t: usize, deep: bool) -> Result<Tensor> {
    let mut rows = Vec::with_capacity(edges.len());
    for &(i, j) in edges {
        let (pi, pj) = (&sample.persons[i], &sample.persons[j]);
        let mut row = edge_feature(&pi.boxes, &pj.boxes, t)?.as_slice().to_vec();
        if deep {
            row.extend_from_slice(&pi.feats[t]);
            row.extend_from_slice(&pj.feats[t]);
        }
        rows.push(row);
    }
    Tensor::from_rows(&rows)
}

/// Sums edge hiddens per grid cell around every reference person.
///
/// `edge_hidden` has one row per entry of `topology.edges`. The result has
/// one row per person: the eight cell sums `[L, R, A, B, Q1, Q2, Q3, Q4]`
/// concatenated, with exact zeros for empty cells.
pub fn grid_pool(
    graph: &mut Graph,
    edge_hidden: Option<Var>,
    edge_width: usize,
    topology: &Topology,
    sample: &SequenceSample,
    t: usize,
) -> Result<Var> {
    let n = sample.num_persons();
    let Some(hidden) = edge_hidden else {
        return Ok(graph.constant(Tensor::zeros(&[n, GRID_CELLS * edge_width])?));
    };
    if graph.shape(hidden) != [topology.edges.len(), edge_width] {
        return Err(Error::dim(format!(
            "edge hidden shape {:?} does not match {} edges of width {edge_width}",
            graph.shape(hidden),
            topology.edges.len()
        )));
    }
    let mut segments = vec![Vec::new(); n * GRID_CELLS];
    for (e, &(i, j)) in topology.edges.iter().enumerate() {
        let cells = assign_cells(&sample.persons[i].boxes[t], &sample.persons[j].boxes[t]);
        for cell in cells.cells() {
            segments[i * GRID_CELLS + cell.index()].push(e);
        }
    }
    let summed = graph.segment_sum(hidden, &segments)?;
    graph.reshape(summed, &[n, GRID_CELLS * edge_width])
}

struct Heads {
    action_w: Var,
    action_b: Var,
    group_w: Var,
    group_b: Var,
}

impl Heads {
    fn bind(bound: &BoundParams) -> Result<Self> {
        Ok(Heads {
            action_w: bound.get(ACTION_WEIGHT)?,
            action_b: bound.get(ACTION_BIAS)?,
            group_w: bound.get(GROUP_WEIGHT)?,
            group_b: bound.get(GROUP_BIAS)?,
        })
    }
}

fn linear(graph: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let z = graph.matmul_nt(x, w)?;
    graph.add(z, b)
}

/// Elementwise max over the rows of `hidden` listed in each group, with the
/// per-group vectors concatenated in group order.
fn max_pool_groups(graph: &mut Graph, hidden: Var, groups: &[Vec<usize>]) -> Result<Var> {
    let mut pooled = Vec::with_capacity(groups.len());
    for members in groups {
        let rows = members
            .iter()
            .map(|&r| graph.row(hidden, r))
            .collect::<Result<Vec<_>>>()?;
        pooled.push(graph.elementwise_max(&rows)?);
    }
    graph.concat(&pooled)
}

struct GroupLevel {
    lstm: Lstm,
    state: LstmState,
}

impl GroupLevel {
    fn new(graph: &mut Graph, bound: &BoundParams) -> Result<Self> {
        let lstm = Lstm::bind(graph, bound, GROUP_LSTM)?;
        let state = lstm.zero_state(graph, 1)?;
        Ok(GroupLevel { lstm, state })
    }

    fn step(&mut self, graph: &mut Graph, heads: &Heads, pooled: Var) -> Result<Var> {
        let width = graph.value(pooled).numel();
        let x = graph.reshape(pooled, &[1, width])?;
        self.state = self.lstm.step(graph, &self.state, x)?;
        let logits = linear(graph, self.state.h, heads.group_w, heads.group_b)?;
        let k = graph.value(logits).numel();
        graph.reshape(logits, &[k])
    }
}

fn expect_variant(cfg: &ModelConfig, v: Variant) -> Result<()> {
    if cfg.variant != v {
        return Err(Error::usage(format!("config is for {}, not {v}", cfg.variant)));
    }
    Ok(())
}

pub fn forward_maxnode(
    graph: &mut Graph,
    bound: &BoundParams,
    cfg: &ModelConfig,
    sample: &SequenceSample,
    frames: Range<usize>,
) -> Result<Vec<FrameOutput>> {
    expect_variant(cfg, Variant::MaxNode)?;
    run(graph, bound, cfg, sample, frames, Level::Full)
}

pub fn forward_maxedge(
    graph: &mut Graph,
    bound: &BoundParams,
    cfg: &ModelConfig,
    sample: &SequenceSample,
    frames: Range<usize>,
) -> Result<Vec<FrameOutput>> {
    expect_variant(cfg, Variant::MaxEdge)?;
    run(graph, bound, cfg, sample, frames, Level::Full)
}

pub fn forward_hlstm_v3(
    graph: &mut Graph,
    bound: &BoundParams,
    cfg: &ModelConfig,
    sample: &SequenceSample,
    frames: Range<usize>,
) -> Result<Vec<FrameOutput>> {
    expect_variant(cfg, Variant::HlstmV3)?;
    run(graph, bound, cfg, sample, frames, Level::Full)
}

/// Forward pass of whichever variant `cfg` selects.
pub fn forward(
    graph: &mut Graph,
    bound: &BoundParams,
    cfg: &ModelConfig,
    sample: &SequenceSample,
    frames: Range<usize>,
    level: Level,
) -> Result<Vec<FrameOutput>> {
    run(graph, bound, cfg, sample, frames, level)
}

fn run(
    graph: &mut Graph,
    bound: &BoundParams,
    cfg: &ModelConfig,
    sample: &SequenceSample,
    frames: Range<usize>,
    level: Level,
) -> Result<Vec<FrameOutput>> {
    check_inputs(cfg, sample, &frames)?;
    let topo = Topology::build(cfg, sample)?;
    let n = sample.num_persons();
    let heads = Heads::bind(bound)?;
    let node = Lstm::bind(graph, bound, NODE_LSTM)?;
    if node.input() != cfg.node_input_dim() || node.hidden() != cfg.node_hidden {
        return Err(Error::dim("node RNN parameters do not match the model config"));
    }
    let mut node_state = node.zero_state(graph, n)?;

    let edge = if cfg.variant.has_edges() && !topo.edges.is_empty() {
        let lstm = Lstm::bind(graph, bound, EDGE_LSTM)?;
        if lstm.input() != cfg.edge_input_dim() || lstm.hidden() != cfg.edge_hidden {
            return Err(Error::dim("edge RNN parameters do not match the model config"));
        }
        let state = lstm.zero_state(graph, topo.edges.len())?;
        Some((lstm, state))
    } else {
        None
    };
    let mut edge = edge;
    let mut group = match level {
        Level::Full => Some(GroupLevel::new(graph, bound)?),
        Level::Actions => None,
    };

    let mut out = Vec::with_capacity(frames.len());
    for t in frames {
        let fv = graph.constant(node_features(sample, t)?);
        let mut grid_input = None;
        let mut pooled = None;

        let node_hidden = match cfg.variant {
            Variant::MaxNode => {
                let edge_hidden = match edge.as_mut() {
                    Some((lstm, state)) => {
                        let fe = edge_features(sample, &topo.edges, t, cfg.deep_edge_features)?;
                        let fe = graph.constant(fe);
                        *state = lstm.step(graph, state, fe)?;
                        Some(state.h)
                    }
                    None => None,
                };
                let grid = grid_pool(graph, edge_hidden, cfg.edge_hidden, &topo, sample, t)?;
                grid_input = Some(grid);
                let x = graph.concat(&[grid, fv])?;
                node_state = node.step(graph, &node_state, x)?;
                node_state.h
            }
            Variant::MaxEdge | Variant::HlstmV3 => {
                node_state = node.step(graph, &node_state, fv)?;
                node_state.h
            }
        };
        let action_logits = linear(graph, node_hidden, heads.action_w, heads.action_b)?;

        let group_logits = match group.as_mut() {
            None => None,
            Some(level) => {
                let p = match cfg.variant {
                    Variant::MaxEdge => {
                        let (lstm, state) = edge
                            .as_mut()
                            .ok_or_else(|| Error::usage("maxedge needs at least one edge"))?;
                        let (is, js): (Vec<usize>, Vec<usize>) = topo.edges.iter().copied().unzip();
                        let hi = graph.select_rows(node_hidden, &is)?;
                        let hj = graph.select_rows(node_hidden, &js)?;
                        let fe = graph.constant(edge_features(sample, &topo.edges, t, false)?);
                        let x = graph.concat(&[hi, hj, fe])?;
                        *state = lstm.step(graph, state, x)?;
                        max_pool_groups(graph, state.h, &topo.group_edges)?
                    }
                    _ => max_pool_groups(graph, node_hidden, &topo.groups)?,
                };
                pooled = Some(p);
                Some(level.step(graph, &heads, p)?)
            }
        };

        out.push(FrameOutput {
            action_logits,
            group_logits,
            node_hidden,
            grid_input,
            pooled,
        });
    }
    Ok(out)
}
