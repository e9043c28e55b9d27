//! Driving-aware quality scoring for generated driving videos.

pub mod checks;
pub mod clips;
pub mod config;
pub mod fusion;
pub mod geom;
pub mod kinematics;
pub mod lane;
pub mod obedience;
pub mod pipeline;
pub mod prompt;
pub mod render;
pub mod scene;
pub mod summary;
pub mod synth;
pub mod vlm;
