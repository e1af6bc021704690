#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use srnn::data::synth::random_clip;
use srnn::data::SequenceSample;
use srnn::geometry::BBox;
use srnn::model::{forward, GroupsMode, Level, ModelConfig, Variant};
use srnn::tensor::{Graph, ModelParams};

pub const VARIANTS: [Variant; 3] = [Variant::MaxNode, Variant::MaxEdge, Variant::HlstmV3];

/// Small enough that every parameter scalar can be finite-differenced.
pub fn tiny(variant: Variant) -> ModelConfig {
    ModelConfig {
        node_hidden: 6,
        edge_hidden: 4,
        group_hidden: 5,
        node_feature_dim: 5,
        ..ModelConfig::desk(variant)
    }
}

pub fn with_groups(mut cfg: ModelConfig, groups: GroupsMode) -> ModelConfig {
    cfg.groups = groups;
    cfg
}

pub fn clip(cfg: &ModelConfig, seed: u64, persons: usize, frames: usize) -> SequenceSample {
    random_clip(seed, persons, frames, cfg.label_space()).unwrap()
}

/// Random clip whose coordinates are multiples of 1/64 in a small range, so
/// that every coordinate difference is exact in binary floating point.
pub fn dyadic_clip(cfg: &ModelConfig, seed: u64, persons: usize, frames: usize) -> SequenceSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut s = clip(cfg, seed, persons, frames);
    let grid = |rng: &mut ChaCha8Rng, lo: i32, hi: i32| f64::from(rng.random_range(lo..hi)) / 64.0;
    for p in &mut s.persons {
        for b in &mut p.boxes {
            *b = BBox::new(grid(&mut rng, 0, 128), grid(&mut rng, 0, 64), grid(&mut rng, 2, 12), grid(&mut rng, 4, 20));
        }
    }
    s
}

pub fn permutation(seed: u64, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order
}

/// Per-frame group logits and person action logits.
pub struct Logits {
    pub group: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

pub fn logits(params: &ModelParams, cfg: &ModelConfig, sample: &SequenceSample) -> Logits {
    let mut g = Graph::new();
    let bound = g.bind(params);
    let outs = forward(&mut g, &bound, cfg, sample, 0..sample.frames(), Level::Full).unwrap();
    Logits {
        group: outs.iter().map(|o| g.value(o.group_logits.unwrap()).data().to_vec()).collect(),
        actions: outs.iter().map(|o| g.value(o.action_logits).data().to_vec()).collect(),
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
