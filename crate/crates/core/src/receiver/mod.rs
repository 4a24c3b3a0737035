//! Receiver side: restore full-resolution semantic volumes from latents.

mod denoise;
mod interp;

pub use denoise::{
    denoise_continuous, denoise_continuous_with_sigma, denoise_edges, denoise_labels,
    label_transition, noise_sigma_from_received, smoothing_sigma, DenoiseConfig, SIGMA_MAX,
    SIGMA_REF,
};
pub use interp::{stencil, trilinear_upsample, upsample_edges, upsample_labels, AxisStencil};
