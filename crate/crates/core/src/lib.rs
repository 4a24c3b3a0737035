//! Deterministic simulator of a semantic-communication pipeline for CT volumes.
//!
//! A synthetic abdominal phantom is reduced to two semantic streams (a label
//! volume and a Canny edge volume), subsampled, pushed through a noisy channel,
//! upsampled and denoised at the receiver, and finally rendered back into an
//! image by a conditional DDPM sampler. Metrics compare the result with the
//! phantom's ground truth.
//!
//! With the default `parallel` feature the per-slice and per-voxel work runs on
//! rayon; without it every loop is sequential. Results are bit-identical
//! either way because all randomness is counter-based (see [`rng`]) and every
//! floating-point reduction runs in a fixed order.

pub mod bits;
pub mod channel;
pub mod codec;
pub mod diffusion;
pub mod error;
pub mod exec;
pub mod harness;
pub mod metrics;
pub mod phantom;
pub mod receiver;
pub mod rng;
pub mod semantics;
pub mod volume;
mod wire;

pub use error::{Error, ErrorKind, Result, Stage};
pub use volume::{CtVolume, Dims, EdgeVolume, Grid, LabelVolume, Plane, ValueDomain};
