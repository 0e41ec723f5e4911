//! Transformation from global tracks into the target-centered frame.
//!
//! The target frame has x along the target's driving direction and y to its
//! left. Tracks recorded in the opposite direction are rotated by 180
//! degrees so both carriageways share one convention.

use std::collections::BTreeMap;

use super::{NeighborSlot, Scenario, TimeGrid, LANE_WIDTH, NEIGHBOR_SLOTS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackPoint {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub lane: Option<i64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Track {
    pub id: i64,
    pub points: BTreeMap<i64, TrackPoint>,
}

impl Track {
    pub fn covers(&self, first: i64, last: i64) -> bool {
        (first..=last).all(|f| self.points.contains_key(&f))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameOptions {
    /// Source y axis points to the right of +x (image-style coordinates).
    pub y_axis_down: bool,
    pub lane_width: f64,
    /// Neighbors farther than this, longitudinally, are ignored.
    pub max_range: f64,
    /// Half-length of the alongside zone in adjacent lanes.
    pub alongside_half_length: f64,
}

impl Default for FrameOptions {
    fn default() -> Self {
        FrameOptions { y_axis_down: false, lane_width: LANE_WIDTH, max_range: 100.0, alongside_half_length: 5.0 }
    }
}

/// Direction-normalized copy of a point: +1 keeps, -1 rotates by 180 degrees.
fn oriented(p: &TrackPoint, dir: f64, y_sign: f64) -> [f64; 4] {
    [dir * p.x, dir * y_sign * p.y, dir * p.vx, dir * y_sign * p.vy]
}

/// `(x_rel, y_rel, vx_rel, vy_rel)` of `other` as seen from `target`.
pub fn relative_row(target: &TrackPoint, other: &TrackPoint, flip: bool, opts: &FrameOptions) -> [f64; 4] {
    let dir = if flip { -1.0 } else { 1.0 };
    let ys = if opts.y_axis_down { -1.0 } else { 1.0 };
    let t = oriented(target, dir, ys);
    let o = oriented(other, dir, ys);
    [o[0] - t[0], o[1] - t[1], o[2] - t[2], o[3] - t[3]]
}

fn slot_for(dx: f64, dy: f64, same_lane: Option<bool>, opts: &FrameOptions) -> Option<NeighborSlot> {
    if dx.abs() > opts.max_range || dy.abs() > 1.5 * opts.lane_width {
        return None;
    }
    let same = same_lane.unwrap_or(dy.abs() < 0.5 * opts.lane_width);
    use NeighborSlot::*;
    if same {
        return Some(if dx >= 0.0 { Front } else { Rear });
    }
    let left = dy > 0.0;
    let slot = if dx.abs() <= opts.alongside_half_length {
        if left {
            LeftAlongside
        } else {
            RightAlongside
        }
    } else if dx > 0.0 {
        if left {
            LeftFront
        } else {
            RightFront
        }
    } else if left {
        LeftRear
    } else {
        RightRear
    };
    Some(slot)
}

/// Builds the scenario whose last observation frame is `t0`.
///
/// Neighbors are assigned to slots from their position at `t0`; the nearest
/// vehicle (by longitudinal gap) wins each slot and only vehicles present
/// over the whole observation window are eligible.
pub fn transform_to_target_frame(
    tracks: &[Track],
    target_id: i64,
    t0: i64,
    grid: &TimeGrid,
    opts: &FrameOptions,
) -> Result<Scenario> {
    let o = grid.obs_steps as i64;
    let p = grid.pred_steps as i64;
    let first = t0 - o + 1;
    let target = tracks
        .iter()
        .find(|t| t.id == target_id)
        .ok_or_else(|| Error::Data(format!("target {target_id} not found")))?;
    if !target.covers(first, t0 + p) {
        return Err(Error::Data(format!("target {target_id} missing frames in window {first}..={}", t0 + p)));
    }
    let at = |f: i64| target.points[&f];
    let anchor = at(t0);
    let flip = anchor.vx < 0.0;
    let dir = if flip { -1.0 } else { 1.0 };
    let ys = if opts.y_axis_down { -1.0 } else { 1.0 };

    let target_obs = (first..=t0)
        .map(|f| {
            let q = oriented(&at(f), dir, ys);
            [q[2], q[3]]
        })
        .collect();

    let origin = oriented(&anchor, dir, ys);
    let target_future = (t0 + 1..=t0 + p)
        .map(|f| {
            let q = oriented(&at(f), dir, ys);
            [q[0] - origin[0], q[1] - origin[1]]
        })
        .collect();

    let mut best: [Option<(f64, &Track)>; NEIGHBOR_SLOTS] = [None; NEIGHBOR_SLOTS];
    for other in tracks.iter().filter(|t| t.id != target_id) {
        if !other.covers(first, t0) {
            continue;
        }
        let rel = relative_row(&anchor, &other.points[&t0], flip, opts);
        let same_lane = match (anchor.lane, other.points[&t0].lane) {
            (Some(a), Some(b)) => Some(a == b),
            _ => None,
        };
        if let Some(slot) = slot_for(rel[0], rel[1], same_lane, opts) {
            let gap = rel[0].abs();
            let cell = &mut best[slot.index()];
            if cell.is_none_or(|(g, _)| gap < g) {
                *cell = Some((gap, other));
            }
        }
    }

    let neighbor_obs = NeighborSlot::ALL
        .iter()
        .map(|slot| match best[slot.index()] {
            Some((_, nb)) => (first..=t0).map(|f| relative_row(&at(f), &nb.points[&f], flip, opts)).collect(),
            None => vec![slot.absent_row(); grid.obs_steps],
        })
        .collect();

    Ok(Scenario { id: format!("{target_id}@{t0}"), target_obs, neighbor_obs, target_future, label: None })
}
