use crate::error::{Error, Result};

/// Sampling grid shared by observations and predictions.
///
/// Prediction timestamps are `t_i = i * dt` for `i = 1..=P`; the lateral
/// sigmoid is evaluated at `tau_i = t_i - t_pred / 2` and anchored at
/// `tau_0 = -t_pred / 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub dt: f64,
    pub t_obs: f64,
    pub t_pred: f64,
    pub obs_steps: usize,
    pub pred_steps: usize,
}

impl Default for TimeGrid {
    fn default() -> Self {
        TimeGrid::from_steps(0.04, 75, 125).expect("default grid is valid")
    }
}

impl TimeGrid {
    pub fn new(dt: f64, t_obs: f64, t_pred: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {dt}")));
        }
        let steps = |span: f64, what: &str| -> Result<usize> {
            let n = (span / dt).round();
            if n < 1.0 || (n * dt - span).abs() > 1e-9 * span.max(1.0) {
                return Err(Error::Config(format!("{what} = {span} is not a positive multiple of dt = {dt}")));
            }
            Ok(n as usize)
        };
        Ok(TimeGrid { dt, t_obs, t_pred, obs_steps: steps(t_obs, "t_obs")?, pred_steps: steps(t_pred, "t_pred")? })
    }

    pub fn from_steps(dt: f64, obs_steps: usize, pred_steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || obs_steps == 0 || pred_steps == 0 {
            return Err(Error::Config(format!("invalid grid dt={dt} O={obs_steps} P={pred_steps}")));
        }
        Ok(TimeGrid { dt, t_obs: dt * obs_steps as f64, t_pred: dt * pred_steps as f64, obs_steps, pred_steps })
    }

    pub fn time(&self, i: usize) -> f64 {
        (i + 1) as f64 * self.dt
    }

    /// Prediction timestamps `t_1..t_P`.
    pub fn times(&self) -> Vec<f64> {
        (0..self.pred_steps).map(|i| self.time(i)).collect()
    }

    pub fn tau(&self, i: usize) -> f64 {
        self.time(i) - 0.5 * self.t_pred
    }

    pub fn tau_anchor(&self) -> f64 {
        -0.5 * self.t_pred
    }

    /// Time of observation row `k` relative to `t_0` (the last row is 0).
    pub fn obs_time(&self, k: usize) -> f64 {
        -((self.obs_steps - 1 - k) as f64) * self.dt
    }
}
