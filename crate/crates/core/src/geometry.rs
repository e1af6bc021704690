//! Pairwise bounding-box relation features and grid-cell assignment.
//!
//! Coordinates follow the image convention: `y` grows downwards, so a
//! neighbour with `dy < 0` is above the reference person.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BASE_FEATURE_DIM: usize = 6;
pub const EDGE_FEATURE_DIM: usize = 36;
pub const GRID_CELLS: usize = 8;

/// Axis-aligned box given by its center and extents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox { cx, cy, w, h }
    }

    pub fn is_valid(&self) -> bool {
        self.cx.is_finite() && self.cy.is_finite() && self.w.is_finite() && self.h.is_finite() && self.w > 0.0 && self.h > 0.0
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        BBox {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.cx, b.cy, b.w, b.h]
    }
}

/// `atan(dy/dx)` with `dx = 0` mapped to `sign(dy)·π/2` and the origin to 0.
fn atan_ratio(dy: f64, dx: f64) -> f64 {
    if dx == 0.0 {
        if dy == 0.0 {
            0.0
        } else {
            dy.signum() * FRAC_PI_2
        }
    } else {
        (dy / dx).atan()
    }
}

/// `(|dx|, |dy|, |dx+dy|, ‖(dx,dy)‖, atan(dy/dx), atan2(dy,dx))` for the
/// center offset of `bj` relative to `bi`.
pub fn base_features(bi: &BBox, bj: &BBox) -> [f64; BASE_FEATURE_DIM] {
    let dx = bj.cx - bi.cx;
    let dy = bj.cy - bi.cy;
    // atan2(0, 0) is 0 already, but atan2(-0.0, -0.0) is -π.
    let angle = if dx == 0.0 && dy == 0.0 { 0.0 } else { dy.atan2(dx) };
    [
        dx.abs(),
        dy.abs(),
        (dx + dy).abs(),
        dx.hypot(dy),
        atan_ratio(dy, dx),
        angle,
    ]
}

/// 36-dimensional relation feature of person `j` as seen from person `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeFeature(pub [f64; EDGE_FEATURE_DIM]);

impl EdgeFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Base block at offset `k ∈ {0,1,2}` (frames t−1, t, t+1).
    pub fn base(&self, k: usize) -> &[f64] {
        &self.0[12 * k..12 * k + 6]
    }

    /// Temporal-difference block at offset `k`.
    pub fn diff(&self, k: usize) -> &[f64] {
        &self.0[12 * k + 6..12 * k + 12]
    }
}

/// Blocks `[base(t−1), diff(t−1), base(t), diff(t), base(t+1), diff(t+1)]`
/// with frame indices clamped to the clip and `diff(0) = 0`.
pub fn edge_feature(track_i: &[BBox], track_j: &[BBox], t: usize) -> Result<EdgeFeature> {
    if track_i.len() != track_j.len() {
        return Err(Error::dim(format!(
            "tracks have different lengths ({} vs {})",
            track_i.len(),
            track_j.len()
        )));
    }
    let frames = track_i.len();
    if t >= frames {
        return Err(Error::usage(format!("frame {t} outside clip of {frames} frames")));
    }
    let base = |tau: usize| base_features(&track_i[tau], &track_j[tau]);
    let mut out = [0.0; EDGE_FEATURE_DIM];
    for (k, offset) in [-1isize, 0, 1].into_iter().enumerate() {
        let tau = (t as isize + offset).clamp(0, frames as isize - 1) as usize;
        let b = base(tau);
        out[12 * k..12 * k + 6].copy_from_slice(&b);
        if tau > 0 {
            let prev = base(tau - 1);
            for d in 0..BASE_FEATURE_DIM {
                out[12 * k + 6 + d] = b[d] - prev[d];
            }
        }
    }
    Ok(EdgeFeature(out))
}

/// Grid regions around a reference person.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GridCell {
    L,
    R,
    A,
    B,
    Q1,
    Q2,
    Q3,
    Q4,
}

impl GridCell {
    /// Concatenation order of the pooled cells.
    pub const ALL: [GridCell; GRID_CELLS] = [
        GridCell::L,
        GridCell::R,
        GridCell::A,
        GridCell::B,
        GridCell::Q1,
        GridCell::Q2,
        GridCell::Q3,
        GridCell::Q4,
    ];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Membership of a neighbour in the three grid structures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellAssignment {
    pub horizontal: GridCell,
    pub vertical: GridCell,
    pub quadrant: GridCell,
}

impl CellAssignment {
    pub fn cells(&self) -> [GridCell; 3] {
        [self.horizontal, self.vertical, self.quadrant]
    }
}

/// Right when `dx ≥ 0`, above when `dy < 0`.
pub fn assign_cells(center: &BBox, neighbor: &BBox) -> CellAssignment {
    let dx = neighbor.cx - center.cx;
    let dy = neighbor.cy - center.cy;
    let right = dx >= 0.0;
    let above = dy < 0.0;
    let quadrant = match (right, above) {
        (true, true) => GridCell::Q1,
        (false, true) => GridCell::Q2,
        (false, false) => GridCell::Q3,
        (true, false) => GridCell::Q4,
    };
    CellAssignment {
        horizontal: if right { GridCell::R } else { GridCell::L },
        vertical: if above { GridCell::A } else { GridCell::B },
        quadrant,
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use proptest::prelude::*;

    use super::*;

    fn at(cx: f64, cy: f64) -> BBox {
        BBox::new(cx, cy, 1.0, 2.0)
    }

    #[test]
    fn three_four_five() {
        let f = base_features(&at(0.0, 0.0), &at(3.0, 4.0));
        let expected = [3.0, 4.0, 7.0, 5.0, 0.927_295_2, 0.927_295_2];
        for (a, b) in f.iter().zip(expected) {
            assert!((a - b).abs() < 1e-6, "{f:?}");
        }
    }

    #[test]
    fn left_half_plane_separates_atan_and_atan2() {
        let f = base_features(&at(0.0, 0.0), &at(-1.0, 0.0));
        assert_eq!(f[..4], [1.0, 0.0, 1.0, 1.0]);
        assert_eq!(f[4], 0.0);
        assert!((f[5] - PI).abs() < 1e-15);
    }

    #[test]
    fn coincident_centers() {
        assert_eq!(base_features(&at(2.0, 3.0), &at(2.0, 3.0)), [0.0; 6]);
    }

    #[test]
    fn vertical_offsets_use_sign_convention() {
        assert_eq!(base_features(&at(0.0, 0.0), &at(0.0, 2.0))[4], FRAC_PI_2);
        assert_eq!(base_features(&at(0.0, 0.0), &at(0.0, -2.0))[4], -FRAC_PI_2);
    }

    #[test]
    fn static_tracks_have_zero_diffs() {
        let ti = vec![at(0.0, 0.0); 5];
        let tj = vec![at(1.0, -2.0); 5];
        for t in 0..5 {
            let f = edge_feature(&ti, &tj, t).unwrap();
            for k in 0..3 {
                assert_eq!(f.diff(k), &[0.0; 6]);
                assert_eq!(f.base(k), f.base(1));
            }
        }
    }

    #[test]
    fn clip_start_clamps_and_zeroes_diff() {
        let ti: Vec<BBox> = (0..4).map(|t| at(t as f64, 0.0)).collect();
        let tj: Vec<BBox> = (0..4).map(|t| at(3.0 * t as f64, 1.0)).collect();
        let f = edge_feature(&ti, &tj, 0).unwrap();
        assert_eq!(f.base(0), f.base(1));
        assert_eq!(f.diff(0), &[0.0; 6]);
        assert_eq!(f.diff(1), &[0.0; 6]);
        assert_ne!(f.diff(2), &[0.0; 6]);
    }

    #[test]
    fn linear_motion_has_unit_dx_diff() {
        let ti = vec![at(0.0, 0.0); 6];
        let tj: Vec<BBox> = (0..6).map(|t| at(t as f64, 0.0)).collect();
        for t in 2..5 {
            let f = edge_feature(&ti, &tj, t).unwrap();
            for k in 0..3 {
                assert_eq!(f.diff(k)[0], 1.0, "t={t} k={k}");
            }
        }
    }

    #[test]
    fn frame_outside_clip_is_usage_error() {
        let ti = vec![at(0.0, 0.0); 3];
        assert!(matches!(edge_feature(&ti, &ti, 3), Err(Error::Usage(_))));
        assert!(matches!(edge_feature(&ti, &ti[..2], 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn cell_sign_conventions() {
        let c = at(0.0, 0.0);
        let a = assign_cells(&c, &at(2.0, -1.0));
        assert_eq!(a.cells(), [GridCell::R, GridCell::A, GridCell::Q1]);
        let a = assign_cells(&c, &at(0.0, 0.0));
        assert_eq!(a.cells(), [GridCell::R, GridCell::B, GridCell::Q4]);
        let a = assign_cells(&c, &at(-3.0, 5.0));
        assert_eq!(a.cells(), [GridCell::L, GridCell::B, GridCell::Q3]);
        let a = assign_cells(&c, &at(-3.0, -5.0));
        assert_eq!(a.cells(), [GridCell::L, GridCell::A, GridCell::Q2]);
    }

    #[test]
    fn bbox_serializes_as_array() {
        let b = BBox::new(1.0, 2.0, 3.0, 4.0);
        assert_eq!(serde_json::to_string(&b).unwrap(), "[1.0,2.0,3.0,4.0]");
    }

    fn coord() -> impl Strategy<Value = f64> {
        -50.0..50.0f64
    }

    proptest! {
        #[test]
        fn cells_partition_the_plane(x0 in coord(), y0 in coord(), x1 in coord(), y1 in coord()) {
            let a = assign_cells(&at(x0, y0), &at(x1, y1));
            let cells = a.cells();
            prop_assert!(matches!(cells[0], GridCell::L | GridCell::R));
            prop_assert!(matches!(cells[1], GridCell::A | GridCell::B));
            prop_assert!(matches!(cells[2], GridCell::Q1 | GridCell::Q2 | GridCell::Q3 | GridCell::Q4));
            // Quadrant is consistent with the two half-plane memberships.
            let q = match (cells[0], cells[1]) {
                (GridCell::R, GridCell::A) => GridCell::Q1,
                (GridCell::L, GridCell::A) => GridCell::Q2,
                (GridCell::L, GridCell::B) => GridCell::Q3,
                _ => GridCell::Q4,
            };
            prop_assert_eq!(cells[2], q);
        }

        #[test]
        fn swap_symmetry(x0 in coord(), y0 in coord(), x1 in coord(), y1 in coord()) {
            let (bi, bj) = (at(x0, y0), at(x1, y1));
            let f = base_features(&bi, &bj);
            let r = base_features(&bj, &bi);
            for k in 0..4 {
                prop_assert_eq!(f[k], r[k]);
            }
            // atan(dy/dx) is invariant under point reflection.
            prop_assert_eq!(f[4], r[4]);
            // atan2 moves by ±π, modulo 2π.
            if f[3] > 0.0 {
                let d = (f[5] - r[5]).abs();
                prop_assert!((d - PI).abs() < 1e-12, "atan2 shift {d}");
            }
        }

        #[test]
        fn time_reversed_static_tracks(x0 in coord(), y0 in coord(), x1 in coord(), y1 in coord(), len in 1usize..8) {
            let ti = vec![at(x0, y0); len];
            let tj = vec![at(x1, y1); len];
            for t in 0..len {
                let fwd = edge_feature(&ti, &tj, t).unwrap();
                let rev = edge_feature(&ti, &tj, len - 1 - t).unwrap();
                prop_assert_eq!(fwd, rev);
            }
        }
    }
}
