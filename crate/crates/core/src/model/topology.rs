//! Which persons are pooled together and which pairs get an edge RNN.

use std::cmp::Ordering;

use crate::data::{PersonTrack, SequenceSample};
use crate::error::{Error, Result};
use crate::model::{GroupsMode, ModelConfig, Variant};

/// Group id (0 = A, 1 = B) of every person.
///
/// Team annotations are used when every person has one; otherwise persons are
/// split at the median x-center of the middle frame, lower half first. Ties in
/// x fall back to person order.
pub fn split_two_groups(sample: &SequenceSample) -> Result<Vec<usize>> {
    let n = sample.num_persons();
    if n < 2 {
        return Err(Error::usage(format!(
            "clip {}: two-group mode needs at least 2 persons, got {n}",
            sample.clip_id
        )));
    }
    if sample.persons.iter().all(|p| p.team.is_some()) {
        let teams: Vec<usize> = sample.persons.iter().map(|p| p.team.unwrap()).collect();
        if let Some(bad) = teams.iter().find(|&&t| t > 1) {
            return Err(Error::usage(format!(
                "clip {}: team id {bad} is not 0 or 1",
                sample.clip_id
            )));
        }
        return Ok(teams);
    }
    let mid = sample.frames() / 2;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let xa = sample.persons[a].boxes[mid].cx;
        let xb = sample.persons[b].boxes[mid].cx;
        xa.total_cmp(&xb).then(a.cmp(&b))
    });
    let mut groups = vec![1; n];
    for &i in &order[..n / 2] {
        groups[i] = 0;
    }
    Ok(groups)
}

/// Orders persons by their observable inputs (track, features, team), never
/// by index or label, so that edge orientation survives reindexing.
fn compare_persons(a: &PersonTrack, b: &PersonTrack) -> Ordering {
    let boxes = a
        .boxes
        .iter()
        .zip(&b.boxes)
        .flat_map(|(x, y)| [(x.cx, y.cx), (x.cy, y.cy), (x.w, y.w), (x.h, y.h)]);
    let feats = a
        .feats
        .iter()
        .zip(&b.feats)
        .flat_map(|(x, y)| x.iter().copied().zip(y.iter().copied()));
    boxes
        .chain(feats)
        .map(|(x, y)| x.total_cmp(&y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
        .then(a.team.cmp(&b.team))
}

/// Pooling groups and edge lists of one clip under one model config.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    /// Person indices per pooling group, in concatenation order.
    pub groups: Vec<Vec<usize>>,
    /// Directed `(reference, neighbour)` pairs; features are computed with
    /// the first person as reference.
    pub edges: Vec<(usize, usize)>,
    /// Edge indices belonging to each pooling group (MaxEdge pooling).
    pub group_edges: Vec<Vec<usize>>,
}

impl Topology {
    pub fn build(cfg: &ModelConfig, sample: &SequenceSample) -> Result<Self> {
        let n = sample.num_persons();
        if n == 0 {
            return Err(Error::usage(format!("clip {} has no persons", sample.clip_id)));
        }
        let membership = match cfg.groups {
            GroupsMode::One => vec![0; n],
            GroupsMode::Two => split_two_groups(sample)?,
        };
        let groups: Vec<Vec<usize>> = (0..cfg.groups.count())
            .map(|g| (0..n).filter(|&i| membership[i] == g).collect())
            .collect();
        let min_size = if cfg.variant == Variant::MaxEdge { 2 } else { 1 };
        for (g, members) in groups.iter().enumerate() {
            if members.len() < min_size {
                return Err(Error::usage(format!(
                    "clip {}: pooling group {} has {} persons, {} needs at least {min_size}",
                    sample.clip_id,
                    ["A", "B"][g],
                    members.len(),
                    cfg.variant
                )));
            }
        }

        let mut edges = Vec::new();
        let mut group_edges = vec![Vec::new(); groups.len()];
        match cfg.variant {
            Variant::HlstmV3 => {}
            Variant::MaxNode => {
                for i in 0..n {
                    for j in 0..n {
                        let linked = cfg.cross_group_edges || membership[i] == membership[j];
                        if i != j && linked {
                            edges.push((i, j));
                        }
                    }
                }
            }
            Variant::MaxEdge => {
                for (g, members) in groups.iter().enumerate() {
                    for (a, &i) in members.iter().enumerate() {
                        for &j in &members[a + 1..] {
                            let (first, second) =
                                match compare_persons(&sample.persons[i], &sample.persons[j]) {
                                    Ordering::Greater => (j, i),
                                    _ => (i, j),
                                };
                            group_edges[g].push(edges.len());
                            edges.push((first, second));
                        }
                    }
                }
            }
        }
        Ok(Topology {
            groups,
            edges,
            group_edges,
        })
    }
}
