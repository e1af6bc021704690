//! Synthetic two-team clips whose labels depend on pairwise interactions.
//!
//! Group activities: left attack, right attack, rally, idle. In an attack clip
//! one player of the attacking team runs up to the net; the opponent nearest
//! to that attacker at the final (attack) frame is the blocker. Node features
//! are noisy class prototypes, and the attack and block prototypes can be made
//! identical so that only the spatial relation tells the two apart.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::config::KeyValues;
use crate::data::{LabelSpace, PersonTrack, SequenceSample};
use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const GROUP_CLASSES: usize = 4;
pub const ACTION_CLASSES: usize = 5;

pub const GROUP_NAMES: [&str; GROUP_CLASSES] = ["left-attack", "right-attack", "rally", "idle"];
pub const ACTION_NAMES: [&str; ACTION_CLASSES] = ["attack", "block", "dig", "move", "stand"];

pub const LEFT_ATTACK: usize = 0;
pub const RIGHT_ATTACK: usize = 1;
pub const RALLY: usize = 2;
pub const IDLE: usize = 3;

pub const ATTACK: usize = 0;
pub const BLOCK: usize = 1;
pub const DIG: usize = 2;
pub const MOVE: usize = 3;
pub const STAND: usize = 4;

const BOX_W: f64 = 0.06;
const BOX_H: f64 = 0.15;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub num_clips: usize,
    pub persons_per_team: usize,
    pub frames: usize,
    pub court_width: f64,
    pub court_height: f64,
    /// Std-dev of per-frame position jitter.
    pub motion_noise: f64,
    pub feature_dim: usize,
    /// Std-dev of the Gaussian added to node-feature prototypes.
    pub feature_noise: f64,
    /// Give "attack" and "block" the same node-feature prototype.
    pub collide_attack_block: bool,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            num_clips: 200,
            persons_per_team: 4,
            frames: 10,
            court_width: 2.0,
            court_height: 1.0,
            motion_noise: 0.004,
            feature_dim: 16,
            feature_noise: 0.3,
            collide_attack_block: true,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.persons_per_team == 0 {
            return Err(Error::usage("persons-per-team must be at least 1"));
        }
        if self.frames < 3 {
            return Err(Error::usage(format!("need at least 3 frames, got {}", self.frames)));
        }
        if self.feature_dim < ACTION_CLASSES {
            return Err(Error::usage(format!(
                "feature dim must be at least {ACTION_CLASSES}, got {}",
                self.feature_dim
            )));
        }
        for (name, v) in [("motion noise", self.motion_noise), ("feature noise", self.feature_noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::usage(format!("{name} must be finite and non-negative")));
            }
        }
        if !(self.court_width > 0.0 && self.court_height > 0.0) {
            return Err(Error::usage("court extents must be positive"));
        }
        Ok(())
    }

    pub const KEYS: &'static [&'static str] = &[
        "num-clips",
        "persons-per-team",
        "frames",
        "court-width",
        "court-height",
        "motion-noise",
        "feature-dim",
        "feature-noise",
        "collide-attack-block",
        "seed",
    ];

    /// Overrides fields present in `kv`, then validates.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        if let Some(v) = kv.get_parsed("num-clips")? {
            self.num_clips = v;
        }
        if let Some(v) = kv.get_parsed("persons-per-team")? {
            self.persons_per_team = v;
        }
        if let Some(v) = kv.get_parsed("frames")? {
            self.frames = v;
        }
        if let Some(v) = kv.get_parsed("court-width")? {
            self.court_width = v;
        }
        if let Some(v) = kv.get_parsed("court-height")? {
            self.court_height = v;
        }
        if let Some(v) = kv.get_parsed("motion-noise")? {
            self.motion_noise = v;
        }
        if let Some(v) = kv.get_parsed("feature-dim")? {
            self.feature_dim = v;
        }
        if let Some(v) = kv.get_parsed("feature-noise")? {
            self.feature_noise = v;
        }
        if let Some(v) = kv.get_bool("collide-attack-block")? {
            self.collide_attack_block = v;
        }
        if let Some(v) = kv.get_parsed("seed")? {
            self.seed = v;
        }
        self.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn label_space(&self) -> LabelSpace {
        LabelSpace {
            actions: ACTION_CLASSES,
            groups: GROUP_CLASSES,
            feature_dim: self.feature_dim,
        }
    }

    fn prototype_slot(&self, action: usize) -> usize {
        match action {
            BLOCK if self.collide_attack_block => ATTACK,
            a => a,
        }
    }
}

/// Ground truth of an attack clip, for checking generator invariants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackTruth {
    pub attacker: usize,
    pub blocker: usize,
}

/// Returns the attacker/blocker pair of an attack clip.
pub fn attack_truth(sample: &SequenceSample) -> Option<AttackTruth> {
    let last = sample.frames().checked_sub(1)?;
    let attacker = sample.persons.iter().position(|p| p.actions[last] == ATTACK)?;
    let blocker = sample.persons.iter().position(|p| p.actions[last] == BLOCK)?;
    Some(AttackTruth { attacker, blocker })
}

pub fn generate(cfg: &ScenarioConfig) -> Result<Vec<SequenceSample>> {
    cfg.validate()?;
    Ok((0..cfg.num_clips)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            generate_clip(cfg, i, &mut rng)
        })
        .collect())
}

fn gauss(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let z: f64 = rng.sample(StandardNormal);
    z * sigma
}

fn generate_clip(cfg: &ScenarioConfig, index: usize, rng: &mut ChaCha8Rng) -> SequenceSample {
    let group = index % GROUP_CLASSES;
    let n_team = cfg.persons_per_team;
    let frames = cfg.frames;
    let (w, h) = (cfg.court_width, cfg.court_height);
    let net = 0.5 * w;

    let teams: Vec<usize> = (0..2 * n_team).map(|k| k / n_team).collect();
    // Starting positions inside each team's half.
    let mut start: Vec<(f64, f64)> = teams
        .iter()
        .map(|&team| {
            let x = rng.random_range(0.08..0.42) * w;
            let x = if team == 0 { x } else { w - x };
            (x, rng.random_range(0.1..0.9) * h)
        })
        .collect();

    let mut velocity = vec![(0.0, 0.0); teams.len()];
    let mut actions = vec![STAND; teams.len()];
    match group {
        IDLE => {}
        RALLY => {
            for (k, v) in velocity.iter_mut().enumerate() {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let speed = 0.02 * w;
                *v = (speed * angle.cos(), speed * angle.sin());
                actions[k] = MOVE;
            }
        }
        _ => {
            let attacking = if group == LEFT_ATTACK { 0 } else { 1 };
            let attacker = attacking * n_team + rng.random_range(0..n_team);
            // Run-up from the back court to just before the net.
            let back = rng.random_range(0.06..0.2) * w;
            let from_x = if attacking == 0 { back } else { w - back };
            let to_x = if attacking == 0 { net - 0.04 * w } else { net + 0.04 * w };
            start[attacker].0 = from_x;
            velocity[attacker] = ((to_x - from_x) / (frames - 1) as f64, 0.0);
            let end_attacker = (to_x, start[attacker].1);
            let blocker = (0..teams.len())
                .filter(|&k| teams[k] != attacking)
                .min_by(|&a, &b| {
                    let da = (start[a].0 - end_attacker.0).hypot(start[a].1 - end_attacker.1);
                    let db = (start[b].0 - end_attacker.0).hypot(start[b].1 - end_attacker.1);
                    da.total_cmp(&db)
                })
                .expect("defending team is non-empty");
            for (k, &team) in teams.iter().enumerate() {
                actions[k] = if team == attacking { STAND } else { DIG };
            }
            actions[attacker] = ATTACK;
            actions[blocker] = BLOCK;
        }
    }

    let half = |team: usize| -> (f64, f64) {
        if team == 0 {
            (BOX_W, net - BOX_W)
        } else {
            (net + BOX_W, w - BOX_W)
        }
    };

    let persons = teams
        .iter()
        .enumerate()
        .map(|(k, &team)| {
            let (lo, hi) = half(team);
            let boxes = (0..frames)
                .map(|t| {
                    let x = start[k].0 + velocity[k].0 * t as f64 + gauss(rng, cfg.motion_noise);
                    let y = start[k].1 + velocity[k].1 * t as f64 + gauss(rng, cfg.motion_noise);
                    BBox::new(x.clamp(lo, hi), y.clamp(BOX_H / 2.0, h - BOX_H / 2.0), BOX_W, BOX_H)
                })
                .collect();
            let slot = cfg.prototype_slot(actions[k]);
            let feats = (0..frames)
                .map(|_| {
                    (0..cfg.feature_dim)
                        .map(|d| f64::from(d == slot) + gauss(rng, cfg.feature_noise))
                        .collect()
                })
                .collect();
            PersonTrack {
                team: Some(team),
                boxes,
                actions: vec![actions[k]; frames],
                feats,
            }
        })
        .collect();

    SequenceSample {
        clip_id: format!("s{}-{index:05}", cfg.seed),
        group_labels: vec![group; frames],
        persons,
    }
}

/// Clip with uniformly random boxes, features and labels and no structure
/// at all. Persons are split into two teams, the first half being team 0.
pub fn random_clip(seed: u64, persons: usize, frames: usize, space: LabelSpace) -> Result<SequenceSample> {
    if persons == 0 || frames == 0 || space.feature_dim == 0 || space.actions == 0 || space.groups == 0 {
        return Err(Error::usage("random clip needs positive sizes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sample = SequenceSample {
        clip_id: format!("random-{seed}"),
        group_labels: (0..frames).map(|_| rng.random_range(0..space.groups)).collect(),
        persons: (0..persons)
            .map(|k| PersonTrack {
                team: Some(usize::from(2 * k >= persons)),
                boxes: (0..frames)
                    .map(|_| {
                        BBox::new(
                            rng.random_range(0.0..2.0),
                            rng.random_range(0.0..1.0),
                            rng.random_range(0.05..0.2),
                            rng.random_range(0.1..0.3),
                        )
                    })
                    .collect(),
                actions: (0..frames).map(|_| rng.random_range(0..space.actions)).collect(),
                feats: (0..frames)
                    .map(|_| (0..space.feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect(),
            })
            .collect(),
    };
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;

    fn small(seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            num_clips: 24,
            persons_per_team: 3,
            seed,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn same_seed_same_data() {
        assert_eq!(generate(&small(4)).unwrap(), generate(&small(4)).unwrap());
        assert_ne!(generate(&small(4)).unwrap(), generate(&small(5)).unwrap());
    }

    #[test]
    fn every_clip_is_valid() {
        let cfg = small(1);
        for s in generate(&cfg).unwrap() {
            s.validate_labels(cfg.label_space()).unwrap();
            assert_eq!(s.frames(), cfg.frames);
            assert_eq!(s.num_persons(), 6);
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        let bad = [
            ScenarioConfig { persons_per_team: 0, ..small(0) },
            ScenarioConfig { frames: 2, ..small(0) },
            ScenarioConfig { motion_noise: -1.0, ..small(0) },
            ScenarioConfig { feature_dim: 3, ..small(0) },
        ];
        for cfg in bad {
            assert!(matches!(generate(&cfg), Err(Error::Usage(_))), "{cfg:?}");
        }
    }

    #[test]
    fn blocker_is_nearest_defender_at_attack_frame() {
        let data = generate(&ScenarioConfig {
            num_clips: 40,
            ..ScenarioConfig::default()
        })
        .unwrap();
        let mut attacks = 0;
        for s in &data {
            let Some(truth) = attack_truth(s) else { continue };
            attacks += 1;
            let last = s.frames() - 1;
            let at = &s.persons[truth.attacker];
            let team = at.team.unwrap();
            assert_ne!(s.persons[truth.blocker].team.unwrap(), team);
            assert_eq!(
                s.group_labels[0],
                if team == 0 { LEFT_ATTACK } else { RIGHT_ATTACK }
            );
            let dist = |k: usize| {
                let b = &s.persons[k].boxes[last];
                (b.cx - at.boxes[last].cx).hypot(b.cy - at.boxes[last].cy)
            };
            let nearest = (0..s.num_persons())
                .filter(|&k| s.persons[k].team.unwrap() != team)
                .min_by(|&a, &b| dist(a).total_cmp(&dist(b)))
                .unwrap();
            assert_eq!(nearest, truth.blocker, "clip {}", s.clip_id);
        }
        assert_eq!(attacks, 20);
    }

    /// Accuracy of the best possible predictor that sees only one person's
    /// node features: the majority label of each distinct feature vector.
    fn node_feature_bayes_accuracy(data: &[SequenceSample]) -> f64 {
        let mut counts: HashMap<Vec<u64>, HashMap<usize, usize>> = HashMap::new();
        let mut total = 0;
        for s in data {
            for p in &s.persons {
                let key = p.feats.iter().flatten().map(|v| v.to_bits()).collect();
                *counts.entry(key).or_default().entry(p.actions[0]).or_default() += 1;
                total += 1;
            }
        }
        let best: usize = counts.values().map(|c| c.values().max().unwrap()).sum();
        best as f64 / total as f64
    }

    #[test]
    fn colliding_prototypes_cap_node_only_accuracy() {
        let cfg = ScenarioConfig {
            num_clips: 40,
            persons_per_team: 2,
            feature_noise: 0.0,
            motion_noise: 0.0,
            ..ScenarioConfig::default()
        };
        let data = generate(&cfg).unwrap();
        // 20 attack clips × 2 ambiguous persons, one of each label: half are lost.
        let expected = 1.0 - 20.0 / 160.0;
        let bayes = node_feature_bayes_accuracy(&data);
        assert!((bayes - expected).abs() < 1e-12, "{bayes}");
        assert!(bayes < 1.0);

        // Positions disambiguate: the attacker is the one who travels.
        for s in &data {
            let Some(truth) = attack_truth(s) else { continue };
            let travel = |k: usize| {
                let b = &s.persons[k].boxes;
                (b[b.len() - 1].cx - b[0].cx).abs()
            };
            assert!(travel(truth.attacker) > travel(truth.blocker));
        }

        let separate = generate(&ScenarioConfig {
            collide_attack_block: false,
            ..cfg
        })
        .unwrap();
        assert_eq!(node_feature_bayes_accuracy(&separate), 1.0);
    }
}
