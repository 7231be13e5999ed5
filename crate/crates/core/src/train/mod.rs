//! Two-branch training: a complete-view teacher pass and a masked student
//! pass share every parameter; the student's map loss, reconstruction loss,
//! and BEV correction loss drive one AdamW update per batch.

pub mod config;
pub mod model;
pub mod run;
pub mod step;

pub use config::TrainConfig;
pub use model::Model;
pub use run::{train_loop, LoopOptions, TrainOutcome};
pub use step::{train_step, LossBreakdown, Objective, SampleForward, StepCoords};
