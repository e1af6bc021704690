//! Clips of multi-person tracks with per-frame labels.

mod io;
pub mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub use io::{parse_dataset, read_dataset, write_dataset, write_dataset_to};

/// One tracked person inside a clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonTrack {
    /// Team annotation (0 or 1) when available.
    #[serde(default)]
    pub team: Option<usize>,
    pub boxes: Vec<BBox>,
    pub actions: Vec<usize>,
    pub feats: Vec<Vec<f64>>,
}

/// One clip: a fixed window of frames with a group label per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub clip_id: String,
    pub group_labels: Vec<usize>,
    pub persons: Vec<PersonTrack>,
}

/// Class-count limits used when validating labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelSpace {
    pub actions: usize,
    pub groups: usize,
    pub feature_dim: usize,
}

impl SequenceSample {
    pub fn frames(&self) -> usize {
        self.group_labels.len()
    }

    pub fn num_persons(&self) -> usize {
        self.persons.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.persons
            .first()
            .and_then(|p| p.feats.first())
            .map_or(0, Vec::len)
    }

    fn invalid(&self, message: impl Into<String>) -> Error {
        Error::Validation {
            clip_id: self.clip_id.clone(),
            message: message.into(),
        }
    }

    /// Structural invariants: at least one person and one frame, every track
    /// spanning all frames, valid boxes, finite features of one common width.
    pub fn validate(&self) -> Result<()> {
        let frames = self.frames();
        if frames == 0 {
            return Err(self.invalid("clip has no frames"));
        }
        if self.persons.is_empty() {
            return Err(self.invalid("clip has no persons"));
        }
        let dim = self.feature_dim();
        if dim == 0 {
            return Err(self.invalid("node features must be non-empty"));
        }
        for (i, p) in self.persons.iter().enumerate() {
            if p.boxes.len() != frames || p.actions.len() != frames || p.feats.len() != frames {
                return Err(self.invalid(format!(
                    "person {i} spans {}/{}/{} frames (boxes/actions/feats), clip has {frames}",
                    p.boxes.len(),
                    p.actions.len(),
                    p.feats.len()
                )));
            }
            if let Some(t) = p.boxes.iter().position(|b| !b.is_valid()) {
                return Err(self.invalid(format!("person {i} has an invalid box at frame {t}")));
            }
            for (t, f) in p.feats.iter().enumerate() {
                if f.len() != dim {
                    return Err(self.invalid(format!(
                        "person {i} frame {t}: feature width {} != {dim}",
                        f.len()
                    )));
                }
                if f.iter().any(|v| !v.is_finite()) {
                    return Err(self.invalid(format!("person {i} frame {t}: non-finite feature")));
                }
            }
        }
        Ok(())
    }

    /// Structural checks plus label ranges and feature width.
    pub fn validate_labels(&self, space: LabelSpace) -> Result<()> {
        self.validate()?;
        if self.feature_dim() != space.feature_dim {
            return Err(self.invalid(format!(
                "feature width {} but the model expects {}",
                self.feature_dim(),
                space.feature_dim
            )));
        }
        if let Some(&g) = self.group_labels.iter().find(|&&g| g >= space.groups) {
            return Err(self.invalid(format!("group label {g} outside 0..{}", space.groups)));
        }
        for (i, p) in self.persons.iter().enumerate() {
            if let Some(&a) = p.actions.iter().find(|&&a| a >= space.actions) {
                return Err(self.invalid(format!(
                    "person {i} action label {a} outside 0..{}",
                    space.actions
                )));
            }
        }
        Ok(())
    }

    /// Copy with persons reordered: new person `k` is old person `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        SequenceSample {
            clip_id: self.clip_id.clone(),
            group_labels: self.group_labels.clone(),
            persons: order.iter().map(|&i| self.persons[i].clone()).collect(),
        }
    }

    /// Copy with every box shifted by `(dx, dy)`.
    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut out = self.clone();
        for p in &mut out.persons {
            for b in &mut p.boxes {
                *b = b.translated(dx, dy);
            }
        }
        out
    }
}

/// Deterministic 80/20 split after a seeded shuffle.
pub fn split_train_val(
    data: &[SequenceSample],
    val_fraction: f64,
    seed: u64,
) -> (Vec<SequenceSample>, Vec<SequenceSample>) {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    let mut idx: Vec<usize> = (0..data.len()).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_val = ((data.len() as f64) * val_fraction).round() as usize;
    let n_val = n_val.min(data.len().saturating_sub(1));
    let val = idx[..n_val].iter().map(|&i| data[i].clone()).collect();
    let train = idx[n_val..].iter().map(|&i| data[i].clone()).collect();
    (train, val)
}
