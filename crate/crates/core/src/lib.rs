//! LiDAR odometry with covariance-weighted coarse registration, prediction
//! gating, a motion-adaptive threshold and point-to-plane refinement against a
//! voxelized local map.

pub mod adaptive_threshold;
pub mod cloud;
pub mod coarse_reg;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod fine_reg;
pub mod kitti_io;
pub mod local_map;
pub mod pipeline;
pub mod pose_gate;
pub mod se3;

pub use cloud::{IndexedCloud, PointCloud};
pub use config::EngineConfig;
pub use pipeline::{run_sequence, Odometry};
pub use se3::{Pose, Twist};
