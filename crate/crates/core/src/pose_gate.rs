//! Motion prediction from recent poses and the gate that chooses between the
//! prediction and the coarse registration result.

use std::collections::VecDeque;

use crate::se3::{Pose, Twist};

/// World-frame poses in frame order. Only the most recent `capacity` poses are
/// retained, but `len` counts every pose ever pushed.
#[derive(Clone, Debug)]
pub struct PoseHistory {
    poses: VecDeque<Pose>,
    capacity: usize,
    total: usize,
}

impl Default for PoseHistory {
    fn default() -> Self {
        Self::new(3)
    }
}

impl PoseHistory {
    /// `capacity` is raised to 3, the most the predictor reads.
    pub fn new(capacity: usize) -> Self {
        let capacity = capacity.max(3);
        Self {
            poses: VecDeque::with_capacity(capacity),
            capacity,
            total: 0,
        }
    }

    pub fn push(&mut self, pose: Pose) {
        if self.poses.len() == self.capacity {
            self.poses.pop_front();
        }
        self.poses.push_back(pose);
        self.total += 1;
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn latest(&self) -> Option<&Pose> {
        self.poses.back()
    }

    /// The `n`-th most recent pose (`0` is the latest).
    pub fn recent(&self, n: usize) -> Option<&Pose> {
        self.poses.len().checked_sub(n + 1).and_then(|i| self.poses.get(i))
    }
}

/// Blend weights for the older and the more recent increment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictionWeights {
    pub older: f64,
    pub recent: f64,
}

impl PredictionWeights {
    /// `older = 1`, `recent = 1 + gain * sigma_th`.
    pub fn from_threshold(sigma_th: f64, gain: f64) -> Self {
        Self {
            older: 1.0,
            recent: 1.0 + gain * sigma_th,
        }
    }
}

/// Predicted world pose of the next frame.
///
/// Fewer than two poses give the identity. Two poses repeat the last increment.
/// With three or more, the last two increments are blended in the Lie algebra
/// and applied to the latest pose.
pub fn predict_pose(history: &PoseHistory, weights: PredictionWeights) -> Pose {
    match history.len() {
        0 | 1 => Pose::identity(),
        2 => {
            let (prev, last) = (history.recent(1).unwrap(), history.recent(0).unwrap());
            last.compose(&prev.inverse().compose(last))
        }
        _ => {
            let (a, b, c) = (
                history.recent(2).unwrap(),
                history.recent(1).unwrap(),
                history.recent(0).unwrap(),
            );
            let older = a.inverse().compose(b);
            let recent = b.inverse().compose(c);
            let blended = match (older.log(), recent.log()) {
                (Ok(o), Ok(r)) => blend(&o, &r, weights).exp(),
                _ => recent,
            };
            c.compose(&blended)
        }
    }
}

fn blend(older: &Twist, recent: &Twist, w: PredictionWeights) -> Twist {
    let total = w.older + w.recent;
    older.scale(w.older / total) + recent.scale(w.recent / total)
}

/// `|| translation(pred^-1 * align) ||`
pub fn translation_difference(pred: &Pose, align: &Pose) -> f64 {
    pred.inverse().compose(align).translation.norm()
}

/// Which candidate became the initial pose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitSource {
    Aligned,
    Predicted,
}

impl InitSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            InitSource::Aligned => "align",
            InitSource::Predicted => "pred",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateDecision {
    pub pose: Pose,
    pub source: InitSource,
    /// `None` when coarse registration failed.
    pub translation_diff: Option<f64>,
}

/// Picks `align` when it exists and agrees with `pred` within `tau`.
pub fn select_initial_pose(pred: &Pose, align: Option<&Pose>, tau: f64) -> GateDecision {
    match align {
        Some(align) => {
            let dt = translation_difference(pred, align);
            if dt <= tau {
                GateDecision {
                    pose: *align,
                    source: InitSource::Aligned,
                    translation_diff: Some(dt),
                }
            } else {
                GateDecision {
                    pose: *pred,
                    source: InitSource::Predicted,
                    translation_diff: Some(dt),
                }
            }
        }
        None => GateDecision {
            pose: *pred,
            source: InitSource::Predicted,
            translation_diff: None,
        },
    }
}
