//! Motion-weighted adaptive threshold.
//!
//! Every frame contributes `(gamma, e)`: `gamma` shrinks when the acceleration
//! changes abruptly, `e` measures how far fine registration moved the initial
//! pose. The threshold is the gamma-weighted RMS of the stored errors.

use std::collections::VecDeque;

use nalgebra::Vector3;

use crate::error::KinematicsError;
use crate::se3::{rotation_angle, Pose};

/// `exp(-alpha / (dt * sigma_decay))`
#[inline]
pub fn dynamic_weight(accel_change: f64, dt: f64, sigma_decay: f64) -> f64 {
    (-accel_change / (dt * sigma_decay)).exp()
}

/// `sigma_max * tanh(beta * theta) + |t|` for the deviation `init^-1 * new`.
pub fn model_deviation_error(init: &Pose, new: &Pose, sigma_max: f64, beta: f64) -> f64 {
    let d = init.inverse().compose(new);
    sigma_max * (beta * rotation_angle(&d.rotation)).tanh() + d.translation.norm()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowEntry {
    pub gamma: f64,
    pub error: f64,
}

/// Sliding window of `(gamma, error)` entries plus the kinematic state needed to
/// compute the next acceleration change.
#[derive(Clone, Debug)]
pub struct MotionWindow {
    entries: VecDeque<WindowEntry>,
    /// 0 keeps every entry.
    window_size: usize,
    dt: f64,
    prev_velocity: Option<Vector3<f64>>,
    prev_accel: Option<Vector3<f64>>,
}

impl MotionWindow {
    pub fn new(window_size: usize, dt: f64) -> Result<Self, KinematicsError> {
        if !(dt > 0.0) {
            return Err(KinematicsError::NonPositiveDt(dt));
        }
        Ok(Self {
            entries: VecDeque::new(),
            window_size,
            dt,
            prev_velocity: None,
            prev_accel: None,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &WindowEntry> {
        self.entries.iter()
    }

    /// Advances the finite-difference state with one more pose pair and returns
    /// the acceleration change `|a_i - a_{i-1}|`, zero until two accelerations exist.
    pub fn update_kinematics(&mut self, prev: &Pose, curr: &Pose) -> f64 {
        let velocity = prev.inverse().compose(curr).translation / self.dt;
        let accel = self.prev_velocity.map(|v| (velocity - v) / self.dt);
        let change = match (accel, self.prev_accel) {
            (Some(a), Some(pa)) => (a - pa).norm(),
            _ => 0.0,
        };
        self.prev_velocity = Some(velocity);
        if accel.is_some() {
            self.prev_accel = accel;
        }
        change
    }

    pub fn push(&mut self, gamma: f64, error: f64) {
        if self.window_size > 0 && self.entries.len() == self.window_size {
            self.entries.pop_front();
        }
        self.entries.push_back(WindowEntry { gamma, error });
    }

    /// `max(floor, sqrt(sum gamma e^2 / count))`, or `bootstrap` when empty.
    pub fn current_threshold(&self, floor: f64, bootstrap: f64) -> f64 {
        if self.entries.is_empty() {
            return bootstrap;
        }
        let sum: f64 = self.entries.iter().map(|e| e.gamma * e.error * e.error).sum();
        (sum / self.entries.len() as f64).sqrt().max(floor)
    }
}
