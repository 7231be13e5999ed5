//! Vectorized map construction from multi-camera observations with missing
//! views.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`]: dense tensors, a reverse-mode tape, layers, AdamW, checkpoints.
//! * [`scene`]: synthetic vectorized worlds, camera rigs, rendering, datasets.
//! * [`encoder`]: per-view patch transformer and random view masking.
//! * [`lift`]: geometric perspective-view to bird's-eye-view lifting.
//! * [`recon`]: missing-view feature reconstruction from a panorama of the
//!   remaining views (Gaussian reference points + deformable attention) and
//!   its ablation variants.
//! * [`correction`]: teacher/student BEV feature distillation.
//! * [`head`]: query-based map decoder, Hungarian matching, map losses.
//! * [`eval`]: Chamfer distance, AP, missing-view scenarios, robustness.
//! * [`train`]: two-branch training step and loop.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); gradient
//! checks run at `f64` and training at `f32`.

pub mod binfmt;
pub mod correction;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod head;
pub mod lift;
pub mod recon;
pub mod rng;
mod scalar;
pub mod scene;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Graph32 = tensor::Graph<f32>;
pub type Graph64 = tensor::Graph<f64>;
pub type Model32 = train::Model<f32>;
pub type Model64 = train::Model<f64>;
