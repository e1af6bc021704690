use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::data::synth::{ACTION_CLASSES, GROUP_CLASSES};
use crate::data::LabelSpace;
use crate::error::{Error, Result};
use crate::geometry::{EDGE_FEATURE_DIM, GRID_CELLS};
use crate::lstm::LstmParams;
use crate::tensor::{ModelParams, Tensor};

pub const EDGE_PREFIX: &str = "edge";
pub const NODE_PREFIX: &str = "node";
pub const GROUP_PREFIX: &str = "group";

pub const EDGE_LSTM: &str = "edge.lstm";
pub const NODE_LSTM: &str = "node.lstm";
pub const GROUP_LSTM: &str = "group.lstm";
pub const ACTION_WEIGHT: &str = "node.cls.weight";
pub const ACTION_BIAS: &str = "node.cls.bias";
pub const GROUP_WEIGHT: &str = "group.cls.weight";
pub const GROUP_BIAS: &str = "group.cls.bias";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    MaxNode,
    MaxEdge,
    HlstmV3,
}

impl Variant {
    pub fn has_edges(self) -> bool {
        !matches!(self, Variant::HlstmV3)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::MaxNode => "maxnode",
            Variant::MaxEdge => "maxedge",
            Variant::HlstmV3 => "hlstm-v3",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maxnode" => Ok(Variant::MaxNode),
            "maxedge" => Ok(Variant::MaxEdge),
            "hlstm-v3" => Ok(Variant::HlstmV3),
            other => Err(Error::Config(format!(
                "unknown model {other:?} (expected maxnode, maxedge or hlstm-v3)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupsMode {
    One,
    Two,
}

impl GroupsMode {
    pub fn count(self) -> usize {
        match self {
            GroupsMode::One => 1,
            GroupsMode::Two => 2,
        }
    }
}

impl FromStr for GroupsMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "one" => Ok(GroupsMode::One),
            "2" | "two" => Ok(GroupsMode::Two),
            other => Err(Error::Config(format!("groups must be 1 or 2, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub node_hidden: usize,
    pub edge_hidden: usize,
    pub group_hidden: usize,
    pub node_feature_dim: usize,
    pub action_classes: usize,
    pub group_classes: usize,
    pub groups: GroupsMode,
    /// Feed both endpoint node features to every edge RNN (MaxNode only).
    pub deep_edge_features: bool,
    /// In two-group MaxNode, also connect persons of different groups.
    pub cross_group_edges: bool,
}

impl ModelConfig {
    /// Small sizes that train on a laptop CPU.
    pub fn desk(variant: Variant) -> Self {
        ModelConfig {
            variant,
            node_hidden: 64,
            edge_hidden: if variant == Variant::MaxEdge { 48 } else { 16 },
            group_hidden: 48,
            node_feature_dim: 16,
            action_classes: ACTION_CLASSES,
            group_classes: GROUP_CLASSES,
            groups: GroupsMode::One,
            deep_edge_features: false,
            cross_group_edges: false,
        }
    }

    /// Sizes used for the Volleyball experiments (4096-d CNN features,
    /// 9 actions, 8 group activities).
    pub fn full_scale(variant: Variant) -> Self {
        ModelConfig {
            variant,
            node_hidden: 3000,
            edge_hidden: if variant == Variant::MaxEdge { 1000 } else { 30 },
            group_hidden: 2000,
            node_feature_dim: 4096,
            action_classes: 9,
            group_classes: 8,
            groups: GroupsMode::One,
            deep_edge_features: false,
            cross_group_edges: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("node-hidden", self.node_hidden),
            ("edge-hidden", self.edge_hidden),
            ("group-hidden", self.group_hidden),
            ("node-feature-dim", self.node_feature_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.action_classes < 2 || self.group_classes < 2 {
            return Err(Error::Config("need at least 2 action and 2 group classes".into()));
        }
        if self.deep_edge_features && self.variant != Variant::MaxNode {
            return Err(Error::Config("deep-edge-features applies to maxnode only".into()));
        }
        if self.cross_group_edges && self.variant != Variant::MaxNode {
            return Err(Error::Config("cross-group-edges applies to maxnode only".into()));
        }
        Ok(())
    }

    pub fn label_space(&self) -> LabelSpace {
        LabelSpace {
            actions: self.action_classes,
            groups: self.group_classes,
            feature_dim: self.node_feature_dim,
        }
    }

    pub fn edge_input_dim(&self) -> usize {
        match self.variant {
            Variant::MaxNode if self.deep_edge_features => EDGE_FEATURE_DIM + 2 * self.node_feature_dim,
            Variant::MaxNode => EDGE_FEATURE_DIM,
            Variant::MaxEdge => 2 * self.node_hidden + EDGE_FEATURE_DIM,
            Variant::HlstmV3 => 0,
        }
    }

    pub fn node_input_dim(&self) -> usize {
        match self.variant {
            Variant::MaxNode => GRID_CELLS * self.edge_hidden + self.node_feature_dim,
            _ => self.node_feature_dim,
        }
    }

    pub fn group_input_dim(&self) -> usize {
        let pooled = match self.variant {
            Variant::MaxEdge => self.edge_hidden,
            _ => self.node_hidden,
        };
        pooled * self.groups.count()
    }

    /// Parameter names and shapes for this configuration.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let lstm = |prefix: &str, input: usize, hidden: usize| {
            vec![
                (format!("{prefix}.w_ih"), vec![4 * hidden, input]),
                (format!("{prefix}.w_hh"), vec![4 * hidden, hidden]),
                (format!("{prefix}.bias"), vec![4 * hidden]),
            ]
        };
        let mut out = Vec::new();
        if self.variant.has_edges() {
            out.extend(lstm(EDGE_LSTM, self.edge_input_dim(), self.edge_hidden));
        }
        out.extend(lstm(NODE_LSTM, self.node_input_dim(), self.node_hidden));
        out.push((ACTION_WEIGHT.into(), vec![self.action_classes, self.node_hidden]));
        out.push((ACTION_BIAS.into(), vec![self.action_classes]));
        out.extend(lstm(GROUP_LSTM, self.group_input_dim(), self.group_hidden));
        out.push((GROUP_WEIGHT.into(), vec![self.group_classes, self.group_hidden]));
        out.push((GROUP_BIAS.into(), vec![self.group_classes]));
        out
    }

    /// Checks that `params` has exactly the layout this config needs.
    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        let shapes = self.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::dim(format!(
                "{} model expects {} parameter tensors, got {}",
                self.variant,
                shapes.len(),
                params.len()
            )));
        }
        for (name, shape) in shapes {
            let t = params.get(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::dim(format!(
                    "parameter {name:?} has shape {:?}, config expects {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Fresh parameters, deterministic in `seed`.
    pub fn init_params(&self, seed: u64) -> Result<ModelParams> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ModelParams::new();
        if self.variant.has_edges() {
            LstmParams::init(self.edge_input_dim(), self.edge_hidden, &mut rng)?
                .insert_into(&mut params, EDGE_LSTM);
        }
        LstmParams::init(self.node_input_dim(), self.node_hidden, &mut rng)?.insert_into(&mut params, NODE_LSTM);
        LstmParams::init(self.group_input_dim(), self.group_hidden, &mut rng)?
            .insert_into(&mut params, GROUP_LSTM);
        let mut head = |rows: usize, cols: usize| -> Result<Tensor> {
            let k = 1.0 / (cols as f64).sqrt();
            Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-k..=k)).collect())
        };
        params.insert(ACTION_WEIGHT, head(self.action_classes, self.node_hidden)?);
        params.insert(GROUP_WEIGHT, head(self.group_classes, self.group_hidden)?);
        params.insert(ACTION_BIAS, Tensor::zeros(&[self.action_classes])?);
        params.insert(GROUP_BIAS, Tensor::zeros(&[self.group_classes])?);
        Ok(params)
    }

    pub const KEYS: &'static [&'static str] = &[
        "model",
        "node-hidden",
        "edge-hidden",
        "group-hidden",
        "node-feature-dim",
        "action-classes",
        "group-classes",
        "groups",
        "deep-edge-features",
        "cross-group-edges",
    ];

    pub fn from_key_values(kv: &KeyValues, variant: Variant) -> Result<Self> {
        let mut cfg = ModelConfig::desk(variant);
        cfg.apply(kv)?;
        Ok(cfg)
    }

    /// Overrides fields present in `kv`.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        if let Some(v) = kv.get_parsed::<Variant>("model")? {
            if v != self.variant {
                let hidden_default = ModelConfig::desk(self.variant).edge_hidden == self.edge_hidden;
                self.variant = v;
                if hidden_default {
                    self.edge_hidden = ModelConfig::desk(v).edge_hidden;
                }
            }
        }
        if let Some(v) = kv.get_parsed("node-hidden")? {
            self.node_hidden = v;
        }
        if let Some(v) = kv.get_parsed("edge-hidden")? {
            self.edge_hidden = v;
        }
        if let Some(v) = kv.get_parsed("group-hidden")? {
            self.group_hidden = v;
        }
        if let Some(v) = kv.get_parsed("node-feature-dim")? {
            self.node_feature_dim = v;
        }
        if let Some(v) = kv.get_parsed("action-classes")? {
            self.action_classes = v;
        }
        if let Some(v) = kv.get_parsed("group-classes")? {
            self.group_classes = v;
        }
        if let Some(v) = kv.get_parsed("groups")? {
            self.groups = v;
        }
        if let Some(v) = kv.get_bool("deep-edge-features")? {
            self.deep_edge_features = v;
        }
        if let Some(v) = kv.get_bool("cross-group-edges")? {
            self.cross_group_edges = v;
        }
        self.validate()
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("model", self.variant.to_string());
        kv.set("node-hidden", self.node_hidden.to_string());
        kv.set("edge-hidden", self.edge_hidden.to_string());
        kv.set("group-hidden", self.group_hidden.to_string());
        kv.set("node-feature-dim", self.node_feature_dim.to_string());
        kv.set("action-classes", self.action_classes.to_string());
        kv.set("group-classes", self.group_classes.to_string());
        kv.set("groups", self.groups.count().to_string());
        kv.set("deep-edge-features", self.deep_edge_features.to_string());
        kv.set("cross-group-edges", self.cross_group_edges.to_string());
        kv
    }
}
