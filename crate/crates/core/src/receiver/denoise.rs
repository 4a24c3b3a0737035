//! Channel-aware denoisers.
//!
//! The discrete filter is a MAP decision per voxel,
//!
//! ```text
//! score(c) = λ · ln((n_c + 1) / (N + C)) + ln T[c][observed]
//! ```
//!
//! where `n_c` counts class `c` in the window around the voxel (clipped to the
//! volume, `N` in-bounds voxels, centre included) and `T` is the declared
//! channel's transition matrix. The window spans the slice and its axial
//! neighbours by default.

use crate::channel::{ChannelModel, TransitionMatrix};
use crate::error::{Error, Result};
use crate::exec;
use crate::semantics::gaussian_kernel;
use crate::volume::{Dims, EdgeVolume, Grid, LabelVolume};

/// Reference noise level: σ = σ_REF gives a smoothing sigma of one voxel.
pub const SIGMA_REF: f64 = 0.05;
/// Upper bound on the continuous smoothing sigma, in voxels.
pub const SIGMA_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseConfig {
    /// Odd window extents `(k_d, k_h, k_w)`.
    pub kernel: [usize; 3],
    pub channel: ChannelModel,
    pub prior_strength: f64,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            kernel: [3, 3, 3],
            channel: ChannelModel::None,
            prior_strength: 1.0,
        }
    }
}

impl DenoiseConfig {
    pub fn new(channel: ChannelModel) -> Self {
        Self {
            channel,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel.iter().any(|&k| k == 0 || k % 2 == 0) {
            return Err(Error::invalid(format!(
                "kernel extents {:?} must be odd and at least 1",
                self.kernel
            )));
        }
        if !(self.prior_strength >= 0.0 && self.prior_strength.is_finite()) {
            return Err(Error::invalid(format!(
                "prior strength {} must be finite and non-negative",
                self.prior_strength
            )));
        }
        self.channel.validate()
    }
}

/// MAP filter over a label grid with an explicit transition matrix.
fn map_filter(labels: &Grid<u8>, t: &TransitionMatrix, kernel: [usize; 3], prior: f64) -> Grid<u8> {
    let dims = labels.dims();
    let c = t.size();
    let log_t: Vec<f64> = t.as_slice().iter().map(|&v| v.ln()).collect();
    let [rd, rh, rw] = kernel.map(|k| k / 2);
    let src = labels.as_slice();
    let slices = exec::map_range(dims.depth, |d| {
        let mut counts = vec![0u32; c];
        let mut out = Vec::with_capacity(dims.slice_len());
        let (d0, d1) = (d.saturating_sub(rd), (d + rd).min(dims.depth - 1));
        for h in 0..dims.height {
            let (h0, h1) = (h.saturating_sub(rh), (h + rh).min(dims.height - 1));
            for w in 0..dims.width {
                let (w0, w1) = (w.saturating_sub(rw), (w + rw).min(dims.width - 1));
                counts.iter_mut().for_each(|n| *n = 0);
                for dd in d0..=d1 {
                    for hh in h0..=h1 {
                        let row = dims.index(dd, hh, 0);
                        for &l in &src[row + w0..=row + w1] {
                            counts[l as usize] += 1;
                        }
                    }
                }
                let total = ((d1 - d0 + 1) * (h1 - h0 + 1) * (w1 - w0 + 1) + c) as f64;
                let obs = src[dims.index(d, h, w)] as usize;
                let mut best = 0usize;
                let mut best_score = f64::NEG_INFINITY;
                for (k, &n) in counts.iter().enumerate() {
                    let mut score = log_t[k * c + obs];
                    if prior != 0.0 {
                        score += prior * ((n + 1) as f64 / total).ln();
                    }
                    if score > best_score {
                        best = k;
                        best_score = score;
                    }
                }
                // An observation impossible under every class keeps its label.
                out.push(if best_score == f64::NEG_INFINITY {
                    obs as u8
                } else {
                    best as u8
                });
            }
        }
        out
    });
    Grid::from_vec(dims, slices.into_iter().flatten().collect()).expect("same dims")
}

/// Transition matrix implied by a declared channel for `num_classes` labels.
pub fn label_transition(
    channel: &ChannelModel,
    num_classes: u16,
) -> Result<Option<TransitionMatrix>> {
    match channel {
        ChannelModel::None => Ok(None),
        ChannelModel::Transition(t) => {
            if t.size() != num_classes as usize {
                return Err(Error::dims(format!(
                    "transition matrix is {0}x{0} but labels have {num_classes} classes",
                    t.size()
                )));
            }
            Ok(Some(t.clone()))
        }
        ChannelModel::BitFlip { p } => TransitionMatrix::from_bit_flips(*p, num_classes).map(Some),
        ChannelModel::Awgn { .. } => Err(Error::invalid(
            "label denoising needs a discrete channel (none, bitflip or transition)",
        )),
    }
}

pub fn denoise_labels(labels: &LabelVolume, cfg: &DenoiseConfig) -> Result<LabelVolume> {
    cfg.validate()?;
    let Some(t) = label_transition(&cfg.channel, labels.num_classes())? else {
        return Ok(labels.clone());
    };
    let grid = map_filter(labels.grid(), &t, cfg.kernel, cfg.prior_strength);
    LabelVolume::new(grid, labels.num_classes())
}

pub fn denoise_edges(edges: &EdgeVolume, cfg: &DenoiseConfig) -> Result<EdgeVolume> {
    cfg.validate()?;
    let p = match cfg.channel {
        ChannelModel::None => return Ok(edges.clone()),
        ChannelModel::BitFlip { p } => p,
        _ => {
            return Err(Error::invalid(
                "edge denoising supports the none and bitflip channels",
            ))
        }
    };
    if p == 0.0 {
        return Ok(edges.clone());
    }
    let t = TransitionMatrix::new(2, vec![1.0 - p, p, p, 1.0 - p])?;
    let grid = map_filter(
        &edges.grid().map(|&b| b as u8),
        &t,
        cfg.kernel,
        cfg.prior_strength,
    );
    Ok(EdgeVolume::new(grid.map(|&l| l == 1)))
}

/// Smoothing sigma (voxels) for a noise standard deviation.
pub fn smoothing_sigma(noise_sigma: f64) -> f64 {
    (noise_sigma / SIGMA_REF).clamp(0.0, SIGMA_MAX)
}

/// Noise standard deviation implied by a received signal's mean square and
/// the declared SNR: `P_rx = P_s · (1 + 10^(-snr/10))`, `σ² = P_s · 10^(-snr/10)`.
pub fn noise_sigma_from_received(received_power: f64, snr_db: f64) -> f64 {
    let r = 10f64.powf(-snr_db / 10.0);
    (received_power * r / (1.0 + r)).sqrt()
}

pub fn denoise_continuous(vol: &Grid<f64>, cfg: &DenoiseConfig) -> Result<Grid<f64>> {
    check_finite(vol)?;
    match cfg.channel {
        ChannelModel::None => Ok(vol.clone()),
        ChannelModel::Awgn { snr_db } => {
            if !snr_db.is_finite() {
                return Err(Error::invalid(format!("SNR {snr_db} dB is not finite")));
            }
            let power = crate::channel::signal_power(vol.as_slice());
            denoise_continuous_with_sigma(vol, noise_sigma_from_received(power, snr_db))
        }
        _ => Err(Error::invalid(
            "continuous denoising supports the none and awgn channels",
        )),
    }
}

/// Gaussian smoothing at `smoothing_sigma(noise_sigma)` voxels on every axis.
pub fn denoise_continuous_with_sigma(vol: &Grid<f64>, noise_sigma: f64) -> Result<Grid<f64>> {
    check_finite(vol)?;
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::invalid(format!(
            "noise sigma {noise_sigma} is invalid"
        )));
    }
    let sigma = smoothing_sigma(noise_sigma);
    if sigma == 0.0 {
        return Ok(vol.clone());
    }
    Ok(blur3(vol, sigma))
}

fn check_finite(vol: &Grid<f64>) -> Result<()> {
    if vol.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("volume contains non-finite values".into()));
    }
    Ok(())
}

/// Separable 3-D Gaussian blur with replicate padding, axes w, h, d in order.
fn blur3(vol: &Grid<f64>, sigma: f64) -> Grid<f64> {
    let k = gaussian_kernel(sigma);
    let dims = vol.dims();
    let mut data = vol.as_slice().to_vec();
    for axis in [2, 1, 0] {
        data = blur_axis(&data, dims, axis, &k);
    }
    Grid::from_vec(dims, data).expect("same dims")
}

fn blur_axis(src: &[f64], dims: Dims, axis: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let ext = dims.as_array();
    let n = ext[axis] as isize;
    let step = match axis {
        0 => dims.slice_len(),
        1 => dims.width,
        _ => 1,
    } as isize;
    let mut out = vec![0.0; src.len()];
    exec::for_each_chunk_mut(&mut out, dims.slice_len(), |d, slice| {
        for (j, o) in slice.iter_mut().enumerate() {
            let i = (d * dims.slice_len() + j) as isize;
            let pos = dims.coords(i as usize);
            let p = [pos.0, pos.1, pos.2][axis] as isize;
            let base = i - p * step;
            *o = k
                .iter()
                .enumerate()
                .map(|(t, kv)| {
                    let q = (p + t as isize - r).clamp(0, n - 1);
                    kv * src[(base + q * step) as usize]
                })
                .sum();
        }
    });
    out
}
