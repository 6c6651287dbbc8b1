//! Synthetic world, training, evaluation and sweeps around the detection pipeline.

pub mod config;
pub mod eval;
pub mod model;
pub mod plot;
pub mod sweep;
pub mod train;
pub mod workspace;
pub mod world;

pub use config::{Mode, RunConfig, Schedule};
pub use model::{ImageTargets, Link, Model};
pub use sweep::{SweepRow, TrainedModel};
pub use workspace::Workspace;
pub use world::{generate_dataset, Dataset, Scene, SceneObject, WorldSpec};
