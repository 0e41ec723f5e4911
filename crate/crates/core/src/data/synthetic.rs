//! Synthetic highway scenarios whose futures follow the descriptive
//! decoder's own equations.
//!
//! Each scenario draws an initial speed, a constant acceleration and a
//! maneuver class; the class fixes the ranges of the lateral amplitude and
//! stretch. The observation window is the same motion extended backwards in
//! time. Neighbors occupy the 3x3 grid around the target with a layout that
//! hints at the maneuver: lane changes are preceded by a slower leader and a
//! free target lane.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Dataset, ManeuverClass, NeighborSlot, Scenario, TimeGrid, LANE_WIDTH, NEIGHBOR_SLOTS};
use crate::decoder::{lateral_at, predict_lateral, predict_longitudinal};
use crate::error::{Error, Result};
use crate::nn::logistic;

/// Stream offset separating measurement noise from scene sampling, so the
/// same seed yields the same scenes at any noise level.
const NOISE_STREAM: u64 = 0x05EE_D0FD_15C0;

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub count: usize,
    /// Class proportions in `[LL, KL, LR]` order.
    pub class_mix: [f64; 3],
    /// Standard deviation of position noise in meters.
    pub noise_sigma: f64,
    /// Velocity noise standard deviation per meter of position noise, in 1/s.
    pub velocity_noise_ratio: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { count: 1000, class_mix: [1.0 / 3.0; 3], noise_sigma: 0.0, velocity_noise_ratio: 0.1, seed: 0 }
    }
}

/// Generator-side ground truth of one scenario.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ManeuverTruth {
    pub class: ManeuverClass,
    pub v0x: f64,
    pub a_x: f64,
    pub lambda: f64,
    pub stretch: f64,
}

/// A neighbor at the end of the observation window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborSpec {
    /// Longitudinal gap at `t_0`, in meters.
    pub gap: f64,
    /// Velocity relative to the target at `t_0`, in m/s.
    pub rel_speed: f64,
}

impl ManeuverTruth {
    fn lateral_state(&self, t: f64, grid: &TimeGrid) -> (f64, f64) {
        let z3 = self.stretch.ln();
        let tau = t - 0.5 * grid.t_pred;
        let y = lateral_at(self.lambda, z3, tau, grid);
        let s = logistic(self.stretch * tau);
        (y, self.lambda * self.stretch * s * (1.0 - s))
    }

    /// Noise-free scenario for this truth and neighbor layout.
    pub fn render(&self, id: String, neighbors: &[Option<NeighborSpec>; NEIGHBOR_SLOTS], grid: &TimeGrid) -> Scenario {
        let xs = predict_longitudinal(self.a_x, self.v0x, grid);
        let ys = predict_lateral(self.lambda, self.stretch.ln(), grid);
        let target_future = xs.into_iter().zip(ys).map(|(x, y)| [x, y]).collect();

        let target_obs = (0..grid.obs_steps)
            .map(|k| {
                let t = grid.obs_time(k);
                [self.v0x + self.a_x * t, self.lateral_state(t, grid).1]
            })
            .collect();

        // Lane center the target started from, in the t_0 frame.
        let lane_center = -self.lambda * logistic(self.stretch * grid.tau_anchor());
        let neighbor_obs = NeighborSlot::ALL
            .iter()
            .zip(neighbors)
            .map(|(slot, spec)| match spec {
                None => vec![slot.absent_row(); grid.obs_steps],
                Some(n) => (0..grid.obs_steps)
                    .map(|k| {
                        let t = grid.obs_time(k);
                        let (y, vy) = self.lateral_state(t, grid);
                        [
                            n.gap + n.rel_speed * t - 0.5 * self.a_x * t * t,
                            lane_center + slot.lane_offset() as f64 * LANE_WIDTH - y,
                            n.rel_speed - self.a_x * t,
                            -vy,
                        ]
                    })
                    .collect(),
            })
            .collect();

        Scenario { id, target_obs, neighbor_obs, target_future, label: Some(self.class) }
    }
}

pub fn generate_synthetic(cfg: &GeneratorConfig, grid: TimeGrid) -> Result<Dataset> {
    generate_synthetic_with_truth(cfg, grid).map(|(ds, _)| ds)
}

/// Class list with exactly `round(mix * count)` members per class
/// (largest-remainder rounding), in shuffled order.
fn class_schedule(cfg: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Vec<ManeuverClass> {
    let raw: Vec<f64> = cfg.class_mix.iter().map(|m| m * cfg.count as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (raw[b] - raw[b].floor()).total_cmp(&(raw[a] - raw[a].floor())).then(a.cmp(&b)));
    let mut missing = cfg.count - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        if cfg.class_mix[i] > 0.0 {
            counts[i] += 1;
            missing -= 1;
        }
    }
    let mut classes: Vec<ManeuverClass> =
        ManeuverClass::ALL.iter().zip(&counts).flat_map(|(c, n)| std::iter::repeat_n(*c, *n)).collect();
    classes.shuffle(rng);
    classes
}

fn sample_neighbors(class: ManeuverClass, rng: &mut ChaCha8Rng) -> [Option<NeighborSpec>; NEIGHBOR_SLOTS] {
    use NeighborSlot::*;
    let mut out = [None; NEIGHBOR_SLOTS];
    let mut put =
        |slot: NeighborSlot, gap: f64, rel_speed: f64| out[slot.index()] = Some(NeighborSpec { gap, rel_speed });

    let (target_lane, other_lane) = match class {
        ManeuverClass::LL => (Some([LeftFront, LeftAlongside, LeftRear]), [RightFront, RightAlongside, RightRear]),
        ManeuverClass::LR => (Some([RightFront, RightAlongside, RightRear]), [LeftFront, LeftAlongside, LeftRear]),
        ManeuverClass::KL => (None, [LeftFront, LeftAlongside, LeftRear]),
    };

    match target_lane {
        Some([front, _, rear]) => {
            // Slow leader in the own lane, free gap in the target lane.
            put(Front, rng.gen_range(15.0..40.0), rng.gen_range(-8.0..-3.0));
            if rng.gen_bool(0.5) {
                put(front, rng.gen_range(50.0..90.0), rng.gen_range(1.0..4.0));
            }
            if rng.gen_bool(0.5) {
                put(rear, -rng.gen_range(40.0..80.0), rng.gen_range(-3.0..0.0));
            }
        }
        None => {
            if rng.gen_bool(0.5) {
                put(Front, rng.gen_range(20.0..80.0), rng.gen_range(-1.0..2.0));
            }
            for slot in [RightFront, RightAlongside, RightRear] {
                random_neighbor(slot, rng, &mut put);
            }
        }
    }
    if rng.gen_bool(0.5) {
        put(Rear, -rng.gen_range(15.0..70.0), rng.gen_range(-2.0..3.0));
    }
    for slot in other_lane {
        random_neighbor(slot, rng, &mut put);
    }
    out
}

fn random_neighbor(slot: NeighborSlot, rng: &mut ChaCha8Rng, put: &mut impl FnMut(NeighborSlot, f64, f64)) {
    let p = if slot.is_alongside() { 0.3 } else { 0.5 };
    if !rng.gen_bool(p) {
        return;
    }
    let gap = if slot.is_alongside() {
        rng.gen_range(-4.0..4.0)
    } else if slot.is_rear() {
        -rng.gen_range(10.0..80.0)
    } else {
        rng.gen_range(10.0..80.0)
    };
    put(slot, gap, rng.gen_range(-3.0..3.0));
}

fn sample_truth(class: ManeuverClass, rng: &mut ChaCha8Rng) -> ManeuverTruth {
    let v0x = rng.gen_range(20.0..=40.0);
    let a_x = rng.gen_range(-2.0..=2.0);
    let (lambda, stretch) = match class {
        ManeuverClass::KL => (rng.gen_range(-0.3..=0.3), rng.gen_range(0.01..=0.2)),
        ManeuverClass::LL => (rng.gen_range(3.0..=4.2), rng.gen_range(0.6..=1.6)),
        ManeuverClass::LR => (rng.gen_range(-4.2..=-3.0), rng.gen_range(0.6..=1.6)),
    };
    ManeuverTruth { class, v0x, a_x, lambda, stretch }
}

pub fn generate_synthetic_with_truth(cfg: &GeneratorConfig, grid: TimeGrid) -> Result<(Dataset, Vec<ManeuverTruth>)> {
    if cfg.count == 0 {
        return Err(Error::Config("count must be at least 1".into()));
    }
    let mix_sum: f64 = cfg.class_mix.iter().sum();
    if cfg.class_mix.iter().any(|m| !(*m >= 0.0)) || (mix_sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("class mix must be nonnegative and sum to 1, got {:?}", cfg.class_mix)));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) || !(cfg.velocity_noise_ratio >= 0.0) {
        return Err(Error::Config("noise parameters must be finite and nonnegative".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ NOISE_STREAM);
    let pos_noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let vel_noise =
        Normal::new(0.0, cfg.noise_sigma * cfg.velocity_noise_ratio).map_err(|e| Error::Config(e.to_string()))?;

    let classes = class_schedule(cfg, &mut rng);
    let mut scenarios = Vec::with_capacity(cfg.count);
    let mut truths = Vec::with_capacity(cfg.count);
    for (i, class) in classes.into_iter().enumerate() {
        let truth = sample_truth(class, &mut rng);
        let neighbors = sample_neighbors(class, &mut rng);
        let mut s = truth.render(format!("syn{i:06}"), &neighbors, &grid);
        if cfg.noise_sigma > 0.0 {
            for row in &mut s.target_obs {
                for v in row.iter_mut() {
                    *v += vel_noise.sample(&mut noise_rng);
                }
            }
            for (slot, spec) in s.neighbor_obs.iter_mut().zip(&neighbors) {
                if spec.is_none() {
                    continue;
                }
                for row in slot.iter_mut() {
                    row[0] += pos_noise.sample(&mut noise_rng);
                    row[1] += pos_noise.sample(&mut noise_rng);
                    row[2] += vel_noise.sample(&mut noise_rng);
                    row[3] += vel_noise.sample(&mut noise_rng);
                }
            }
        }
        scenarios.push(s);
        truths.push(truth);
    }
    Ok((Dataset { scenarios, grid, split_seed: cfg.seed }, truths))
}
