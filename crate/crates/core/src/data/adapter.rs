//! Adapter for per-frame track tables (highD `tracks.csv` style).
//!
//! The column map is a key=value file naming the source columns:
//!
//! ```text
//! frame = frame
//! id = id
//! x = x
//! y = y
//! xVelocity = xVelocity
//! yVelocity = yVelocity
//! laneId = laneId        # optional
//! y_axis = down          # optional, default up
//! stride = 25            # optional, frames between window starts
//! ```

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use super::frame::{transform_to_target_frame, FrameOptions, Track, TrackPoint};
use super::{Dataset, TimeGrid};
use crate::config::KeyValues;
use crate::error::{Error, Result};

const REQUIRED: [&str; 6] = ["frame", "id", "x", "y", "xVelocity", "yVelocity"];

#[derive(Clone, Debug, PartialEq)]
pub struct ColumnMap {
    pub frame: String,
    pub id: String,
    pub x: String,
    pub y: String,
    pub x_velocity: String,
    pub y_velocity: String,
    pub lane_id: Option<String>,
    pub stride: usize,
    pub frame_options: FrameOptions,
}

impl Default for ColumnMap {
    /// Column names as they appear in highD track files.
    fn default() -> Self {
        ColumnMap {
            frame: "frame".into(),
            id: "id".into(),
            x: "x".into(),
            y: "y".into(),
            x_velocity: "xVelocity".into(),
            y_velocity: "yVelocity".into(),
            lane_id: Some("laneId".into()),
            stride: 25,
            frame_options: FrameOptions { y_axis_down: true, ..FrameOptions::default() },
        }
    }
}

impl ColumnMap {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        for k in REQUIRED {
            if kv.get(k).is_none() {
                return Err(Error::Config(format!("column map lacks required key {k:?}")));
            }
        }
        let get = |k: &str| kv.get(k).unwrap_or_default().to_string();
        let y_axis_down = match kv.get("y_axis") {
            None | Some("up") => false,
            Some("down") => true,
            Some(other) => return Err(Error::Config(format!("y_axis must be up or down, got {other:?}"))),
        };
        let stride = kv.parse_value::<usize>("stride")?.unwrap_or(25);
        if stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        let mut frame_options = FrameOptions { y_axis_down, ..FrameOptions::default() };
        if let Some(w) = kv.parse_value::<f64>("lane_width")? {
            frame_options.lane_width = w;
        }
        Ok(ColumnMap {
            frame: get("frame"),
            id: get("id"),
            x: get("x"),
            y: get("y"),
            x_velocity: get("xVelocity"),
            y_velocity: get("yVelocity"),
            lane_id: kv.get("laneId").map(str::to_string),
            stride,
            frame_options,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_key_values(&KeyValues::load(path)?)
    }
}

pub fn adapt_tracks_csv(path: &Path, map: &ColumnMap, grid: &TimeGrid) -> Result<Dataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    adapt_tracks_reader(f, map, grid)
}

pub fn adapt_tracks_reader<R: Read>(reader: R, map: &ColumnMap, grid: &TimeGrid) -> Result<Dataset> {
    let tracks = read_tracks(reader, map)?;
    let window = (grid.obs_steps + grid.pred_steps) as i64;
    let mut scenarios = Vec::new();
    for track in &tracks {
        for (start, end) in consecutive_runs(track) {
            let mut t0 = start + grid.obs_steps as i64 - 1;
            while t0 + grid.pred_steps as i64 <= end && end - start + 1 >= window {
                scenarios.push(transform_to_target_frame(&tracks, track.id, t0, grid, &map.frame_options)?);
                t0 += map.stride as i64;
            }
        }
    }
    Ok(Dataset { scenarios, grid: *grid, split_seed: 0 })
}

fn read_tracks<R: Read>(reader: R, map: &ColumnMap) -> Result<Vec<Track>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::Data(format!("tracks csv header: {e}")))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("mapped column {name:?} not found in tracks csv")))
    };
    let (c_frame, c_id, c_x, c_y, c_vx, c_vy) =
        (col(&map.frame)?, col(&map.id)?, col(&map.x)?, col(&map.y)?, col(&map.x_velocity)?, col(&map.y_velocity)?);
    let c_lane = map.lane_id.as_deref().map(col).transpose()?;

    let mut by_id: BTreeMap<i64, Track> = BTreeMap::new();
    for (n, rec) in rdr.records().enumerate() {
        let line = n + 2;
        let rec = rec.map_err(|e| Error::Data(format!("tracks csv line {line}: {e}")))?;
        let num = |c: usize| -> Result<f64> {
            let raw = rec.get(c).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Data(format!("tracks csv line {line} column {}: bad value {raw:?}", c + 1)))
        };
        let frame = num(c_frame)? as i64;
        let id = num(c_id)? as i64;
        let lane = c_lane.map(|c| num(c).map(|v| v as i64)).transpose()?;
        let point = TrackPoint { x: num(c_x)?, y: num(c_y)?, vx: num(c_vx)?, vy: num(c_vy)?, lane };
        by_id.entry(id).or_insert_with(|| Track { id, points: BTreeMap::new() }).points.insert(frame, point);
    }
    Ok(by_id.into_values().collect())
}

/// Maximal runs of consecutive frames, as inclusive `(first, last)` pairs.
fn consecutive_runs(track: &Track) -> Vec<(i64, i64)> {
    let mut runs = Vec::new();
    let mut frames = track.points.keys().copied();
    let Some(mut start) = frames.next() else { return runs };
    let mut prev = start;
    for f in frames {
        if f != prev + 1 {
            runs.push((start, prev));
            start = f;
        }
        prev = f;
    }
    runs.push((start, prev));
    runs
}
