//! Scenario data: the sample layout, file formats, the tracks adapter, the
//! synthetic generator and train/test splitting.

mod adapter;
mod canonical;
mod frame;
mod grid;
mod split;
mod synthetic;

use std::fmt;
use std::str::FromStr;

pub use adapter::{adapt_tracks_csv, adapt_tracks_reader, ColumnMap};
pub use canonical::{load_canonical, read_canonical, write_canonical, write_canonical_file};
pub use frame::{relative_row, transform_to_target_frame, FrameOptions, Track, TrackPoint};
pub use grid::TimeGrid;
pub use split::{split_dataset, split_indices};
pub use synthetic::{generate_synthetic, generate_synthetic_with_truth, GeneratorConfig, ManeuverTruth, NeighborSpec};

use crate::error::{Error, Result};

/// Number of positional neighbor slots around the target.
pub const NEIGHBOR_SLOTS: usize = 8;

/// Lane width used for slot geometry and absent-neighbor fill, in meters.
pub const LANE_WIDTH: f64 = 3.75;

/// Longitudinal offset of the absent-neighbor fill row, in meters.
pub const ABSENT_GAP: f64 = 200.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ManeuverClass {
    /// Lane change to the left.
    LL,
    /// Keep lane.
    KL,
    /// Lane change to the right.
    LR,
}

impl ManeuverClass {
    pub const ALL: [ManeuverClass; 3] = [ManeuverClass::LL, ManeuverClass::KL, ManeuverClass::LR];

    pub fn index(self) -> usize {
        match self {
            ManeuverClass::LL => 0,
            ManeuverClass::KL => 1,
            ManeuverClass::LR => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ManeuverClass::LL => "LL",
            ManeuverClass::KL => "KL",
            ManeuverClass::LR => "LR",
        }
    }
}

impl fmt::Display for ManeuverClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ManeuverClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "LL" => Ok(ManeuverClass::LL),
            "KL" => Ok(ManeuverClass::KL),
            "LR" => Ok(ManeuverClass::LR),
            other => Err(Error::Data(format!("unknown maneuver label {other:?}"))),
        }
    }
}

/// Positional neighbor slots, in the order they appear in a scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NeighborSlot {
    LeftFront,
    LeftAlongside,
    LeftRear,
    Front,
    Rear,
    RightFront,
    RightAlongside,
    RightRear,
}

impl NeighborSlot {
    pub const ALL: [NeighborSlot; NEIGHBOR_SLOTS] = [
        NeighborSlot::LeftFront,
        NeighborSlot::LeftAlongside,
        NeighborSlot::LeftRear,
        NeighborSlot::Front,
        NeighborSlot::Rear,
        NeighborSlot::RightFront,
        NeighborSlot::RightAlongside,
        NeighborSlot::RightRear,
    ];

    /// +1 for the left lane, 0 for the own lane, -1 for the right lane.
    pub fn lane_offset(self) -> i32 {
        use NeighborSlot::*;
        match self {
            LeftFront | LeftAlongside | LeftRear => 1,
            Front | Rear => 0,
            RightFront | RightAlongside | RightRear => -1,
        }
    }

    pub fn is_rear(self) -> bool {
        matches!(self, NeighborSlot::LeftRear | NeighborSlot::Rear | NeighborSlot::RightRear)
    }

    pub fn is_alongside(self) -> bool {
        matches!(self, NeighborSlot::LeftAlongside | NeighborSlot::RightAlongside)
    }

    pub fn index(self) -> usize {
        NeighborSlot::ALL.iter().position(|s| *s == self).expect("slot is listed")
    }

    /// Fill row for an empty slot: far away toward the slot, zero relative velocity.
    pub fn absent_row(self) -> [f64; 4] {
        let dx = if self.is_rear() { -ABSENT_GAP } else { ABSENT_GAP };
        [dx, self.lane_offset() as f64 * LANE_WIDTH, 0.0, 0.0]
    }
}

/// One sample: observation window plus the ground-truth future.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub id: String,
    /// `O` rows of absolute target velocity `(v_x, v_y)`.
    pub target_obs: Vec<[f64; 2]>,
    /// `N` slots, each `O` rows of `(x_rel, y_rel, vx_rel, vy_rel)`.
    pub neighbor_obs: Vec<Vec<[f64; 4]>>,
    /// `P` target positions in the target frame at `t_0`.
    pub target_future: Vec<[f64; 2]>,
    pub label: Option<ManeuverClass>,
}

impl Scenario {
    /// Most recent target velocity before the prediction starts.
    pub fn v0(&self) -> [f64; 2] {
        *self.target_obs.last().expect("validated scenarios have observations")
    }

    /// Row `k` of the stacked observation matrix `[xi_0, xi_1, .., xi_N]`.
    pub fn observation_row(&self, k: usize) -> Vec<f64> {
        let mut row = Vec::with_capacity(2 + 4 * self.neighbor_obs.len());
        row.extend_from_slice(&self.target_obs[k]);
        for slot in &self.neighbor_obs {
            row.extend_from_slice(&slot[k]);
        }
        row
    }

    pub fn validate(&self, grid: &TimeGrid) -> Result<()> {
        let o = grid.obs_steps;
        if self.target_obs.len() != o {
            return Err(Error::Data(format!(
                "scenario {}: {} target observation rows, expected {o}",
                self.id,
                self.target_obs.len()
            )));
        }
        if self.neighbor_obs.len() != NEIGHBOR_SLOTS || self.neighbor_obs.iter().any(|n| n.len() != o) {
            return Err(Error::Data(format!("scenario {}: neighbor block must be {NEIGHBOR_SLOTS} x {o}", self.id)));
        }
        if self.target_future.len() != grid.pred_steps {
            return Err(Error::Data(format!(
                "scenario {}: {} future rows, expected {}",
                self.id,
                self.target_future.len(),
                grid.pred_steps
            )));
        }
        let finite = self.target_obs.iter().flatten().all(|v| v.is_finite())
            && self.neighbor_obs.iter().flatten().flatten().all(|v| v.is_finite())
            && self.target_future.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Data(format!("scenario {}: non-finite entry", self.id)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub scenarios: Vec<Scenario>,
    pub grid: TimeGrid,
    pub split_seed: u64,
}

impl Dataset {
    pub fn new(grid: TimeGrid) -> Self {
        Dataset { scenarios: Vec::new(), grid, split_seed: 0 }
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    /// Label counts in `[LL, KL, LR, unlabeled]` order.
    pub fn label_counts(&self) -> [usize; 4] {
        let mut counts = [0; 4];
        for s in &self.scenarios {
            counts[s.label.map_or(3, ManeuverClass::index)] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        for c in ManeuverClass::ALL {
            assert_eq!(c.as_str().parse::<ManeuverClass>().unwrap(), c);
        }
        assert!("XX".parse::<ManeuverClass>().is_err());
    }

    #[test]
    fn slot_geometry() {
        assert_eq!(NeighborSlot::LeftFront.absent_row(), [200.0, 3.75, 0.0, 0.0]);
        assert_eq!(NeighborSlot::Rear.absent_row(), [-200.0, 0.0, 0.0, 0.0]);
        assert_eq!(NeighborSlot::RightRear.absent_row(), [-200.0, -3.75, 0.0, 0.0]);
        for (i, s) in NeighborSlot::ALL.iter().enumerate() {
            assert_eq!(s.index(), i);
        }
    }
}
