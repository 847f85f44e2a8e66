//! GAST-Net: interleaved dilated temporal convolutions and local/global graph
//! attention for lifting 2D keypoint sequences to root-relative 3D poses.
//!
//! The crate is self-contained: [`tensor`] provides the dense tensor and the
//! reverse-mode tape every layer is built on, [`skeleton`] the joint
//! topologies and graph kernels, [`graph`] and [`temporal`] the two block
//! families, and [`model`] their assembly together with checkpointing and the
//! inference modes. [`data`], [`metrics`], [`optim`] and [`train`] cover the
//! training and evaluation workflow.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod skeleton;
pub mod temporal;
pub mod tensor;
pub mod train;

pub use error::{GastError, Result};
pub use model::{Ablation, GastNet, GastNetConfig, InferMode};
pub use skeleton::SkeletonGraph;
pub use tensor::{Real, Tape, Tensor, Var};
