//! Descriptive decoder: a fixed, parameter-free map from a latent sample to
//! a trajectory.
//!
//! * longitudinal: constant acceleration, `x_i = v0x t_i + 0.5 a_x t_i^2`
//! * lateral: offset-subtracted scaled logistic,
//!   `y_i = lambda * (s(mu tau_i) - s(mu tau_0))` with `mu = exp(z3)`
//!
//! The latent triple is `(a_x, lambda, ln mu)`.

use crate::data::TimeGrid;
use crate::nn::logistic;

/// A latent sample read through the decoder's physical semantics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatentParams {
    /// Longitudinal acceleration in m/s^2.
    pub a_x: f64,
    /// Signed lateral amplitude in m; positive means leftwards.
    pub lambda: f64,
    /// Sigmoid stretch, always positive.
    pub stretch: f64,
}

impl LatentParams {
    pub fn from_latent(z: [f64; 3]) -> Self {
        LatentParams { a_x: z[0], lambda: z[1], stretch: z[2].exp() }
    }

    pub fn to_latent(&self) -> [f64; 3] {
        [self.a_x, self.lambda, self.stretch.ln()]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// `[x_1..x_P, y_1..y_P]`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.len());
        v.extend_from_slice(&self.xs);
        v.extend_from_slice(&self.ys);
        v
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        let p = flat.len() / 2;
        Trajectory { xs: flat[..p].to_vec(), ys: flat[p..].to_vec() }
    }

    pub fn from_points(points: &[[f64; 2]]) -> Self {
        Trajectory { xs: points.iter().map(|p| p[0]).collect(), ys: points.iter().map(|p| p[1]).collect() }
    }
}

pub fn predict_longitudinal(a_x: f64, v0x: f64, grid: &TimeGrid) -> Vec<f64> {
    (0..grid.pred_steps)
        .map(|i| {
            let t = grid.time(i);
            v0x * t + 0.5 * a_x * t * t
        })
        .collect()
}

pub fn predict_lateral(z2: f64, z3: f64, grid: &TimeGrid) -> Vec<f64> {
    (0..grid.pred_steps).map(|i| lateral_at(z2, z3, grid.tau(i), grid)).collect()
}

/// Lateral offset at an arbitrary shifted time `tau`.
pub fn lateral_at(z2: f64, z3: f64, tau: f64, grid: &TimeGrid) -> f64 {
    let mu = z3.exp();
    z2 * logistic(mu * tau) - z2 * logistic(mu * grid.tau_anchor())
}

pub fn decode(z: [f64; 3], v0x: f64, grid: &TimeGrid) -> Trajectory {
    Trajectory { xs: predict_longitudinal(z[0], v0x, grid), ys: predict_lateral(z[1], z[2], grid) }
}

/// Non-zero partial derivatives of one predicted point. The longitudinal
/// and lateral chains are decoupled, so `dx/dz2 = dx/dz3 = dy/dz1 = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobianRow {
    pub dx_dz1: f64,
    pub dy_dz2: f64,
    pub dy_dz3: f64,
}

pub fn decoder_gradients(z: [f64; 3], grid: &TimeGrid) -> Vec<JacobianRow> {
    let lambda = z[1];
    let mu = z[2].exp();
    let tau0 = grid.tau_anchor();
    let s0 = logistic(mu * tau0);
    let anchor_slope = s0 * (1.0 - s0) * tau0;
    (0..grid.pred_steps)
        .map(|i| {
            let t = grid.time(i);
            let tau = grid.tau(i);
            let s = logistic(mu * tau);
            JacobianRow {
                dx_dz1: 0.5 * t * t,
                dy_dz2: s - s0,
                dy_dz3: lambda * mu * (s * (1.0 - s) * tau - anchor_slope),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn stationary_longitudinal() {
        let g = TimeGrid::default();
        assert!(predict_longitudinal(0.0, 0.0, &g).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn longitudinal_hand_value() {
        let g = TimeGrid::from_steps(0.5, 2, 4).unwrap();
        // t = 1.0 s is index 1
        assert_eq!(predict_longitudinal(2.0, 30.0, &g)[1], 31.0);
    }

    #[test]
    fn zero_acceleration_is_constant_velocity() {
        let g = TimeGrid::default();
        let xs = predict_longitudinal(0.0, 27.3, &g);
        for (i, x) in xs.iter().enumerate() {
            assert_eq!(*x, 27.3 * g.time(i));
        }
    }

    #[test]
    fn lateral_zero_amplitude() {
        let g = TimeGrid::default();
        assert!(predict_lateral(0.0, 0.7, &g).iter().all(|y| *y == 0.0));
    }

    #[test]
    fn lateral_hand_values() {
        let g = TimeGrid::default();
        let ys = predict_lateral(3.5, 0.0, &g);
        let end = 3.5 * (sig(2.5) - sig(-2.5));
        let mid = 3.5 * (sig(0.0) - sig(-2.5));
        assert!((ys[124] - end).abs() < 1e-12);
        let at_mid = lateral_at(3.5, 0.0, 0.0, &g);
        assert!((at_mid - mid).abs() < 1e-12);
        assert!((ys[124] - 2.9690).abs() < 5e-5);
        assert!((at_mid - 1.4845).abs() < 5e-5);
    }

    #[test]
    fn anchor_offset_is_zero() {
        let g = TimeGrid::default();
        for (l, z3) in [(4.0, 0.3), (-7.5, -3.0), (0.2, 1.9)] {
            assert_eq!(lateral_at(l, z3, g.tau_anchor(), &g), 0.0);
        }
    }

    #[test]
    fn decode_composes_both_axes() {
        let g = TimeGrid::default();
        let z = [1.0, 3.5, 0.0];
        let tr = decode(z, 30.0, &g);
        assert_eq!(tr.xs, predict_longitudinal(1.0, 30.0, &g));
        assert_eq!(tr.ys, predict_lateral(3.5, 0.0, &g));
        for i in 0..g.pred_steps {
            let t = (i + 1) as f64 * 0.04;
            let tau = t - 2.5;
            assert!((tr.xs[i] - (30.0 * t + 0.5 * t * t)).abs() < 1e-10);
            assert!((tr.ys[i] - 3.5 * (sig(tau) - sig(-2.5))).abs() < 1e-12);
        }
        let zero = decode([0.0, 0.0, -2.0], 0.0, &g);
        assert!(zero.xs.iter().chain(&zero.ys).all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_hand_value_and_zero_amplitude() {
        let g = TimeGrid::default();
        let rows = decoder_gradients([0.3, 0.0, 0.4], &g);
        // t = 2 s is index 49
        assert!((rows[49].dx_dz1 - 2.0).abs() < 1e-12);
        assert!(rows.iter().all(|r| r.dy_dz3 == 0.0));
    }

    #[test]
    fn latent_params_mapping() {
        let lp = LatentParams::from_latent([0.5, -2.0, 0.0]);
        assert_eq!(lp.stretch, 1.0);
        assert_eq!(lp.to_latent(), [0.5, -2.0, 0.0]);
    }
}
