//! Joint estimation of ego-vehicle poses and tracked object states.
//!
//! The pipeline runs per frame: odometry extends the ego trajectory,
//! detections are associated with tracks by trajectory prediction, and a
//! sliding-window factor graph over ego poses, object poses and object
//! motions is optimized and then marginalized as frames leave the window.
//! Loop events trigger a separate optimization of a global pose graph.
//! A deterministic simulator produces measurement streams with ground truth,
//! and [`eval`] scores the results.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod association;
pub mod backend;
pub mod config;
pub mod eval;
pub mod factor_graph;
pub mod geometry;
pub mod io;
pub mod simulator;
