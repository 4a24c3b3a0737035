//! Canny edge detection on a single normalized slice.
//!
//! Stages: Gaussian smoothing, Sobel gradients, magnitude with 4-bucket
//! direction quantization, non-maximum suppression, double threshold and
//! 8-connected hysteresis. Gaussian and Sobel replicate the border.
//! Magnitudes are divided by the slice maximum before thresholding, so the
//! thresholds are fractions of the strongest gradient in the slice.

use crate::error::{Error, Result};
use crate::volume::Plane;

const TAN_22_5: f64 = 0.414_213_562_373_095_03;
const TAN_67_5: f64 = 2.414_213_562_373_095;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CannyParams {
    pub sigma: f64,
    pub low: f64,
    pub high: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: 1.4,
            low: 0.1,
            high: 0.2,
        }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!(
                "canny sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.low >= 0.0 && self.low < self.high && self.high.is_finite()) {
            return Err(Error::invalid(format!(
                "canny thresholds need 0 <= low < high, got {} / {}",
                self.low, self.high
            )));
        }
        Ok(())
    }
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = ((3.0 * sigma).ceil() as usize).max(1);
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let k = i as f64 - radius as f64;
            (-(k * k) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

#[inline]
fn clamp_offset(i: usize, k: isize, n: usize) -> usize {
    (i as isize + k).clamp(0, n as isize - 1) as usize
}

/// Separable Gaussian blur, rows first, edge-replicate padding.
pub(crate) fn blur(values: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let mut rows = vec![0.0; values.len()];
    for h in 0..height {
        let row = &values[h * width..(h + 1) * width];
        for w in 0..width {
            let mut acc = 0.0;
            for (j, &k) in kernel.iter().enumerate() {
                acc += k * row[clamp_offset(w, j as isize - r, width)];
            }
            rows[h * width + w] = acc;
        }
    }
    let mut out = vec![0.0; values.len()];
    for h in 0..height {
        for w in 0..width {
            let mut acc = 0.0;
            for (j, &k) in kernel.iter().enumerate() {
                acc += k * rows[clamp_offset(h, j as isize - r, height) * width + w];
            }
            out[h * width + w] = acc;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Direction {
    Horizontal,
    Diagonal,
    Vertical,
    AntiDiagonal,
}

impl Direction {
    fn quantize(gx: f64, gy: f64) -> Self {
        let (ax, ay) = (gx.abs(), gy.abs());
        if ay <= TAN_22_5 * ax {
            Direction::Horizontal
        } else if ay >= TAN_67_5 * ax {
            Direction::Vertical
        } else if gx * gy > 0.0 {
            Direction::Diagonal
        } else {
            Direction::AntiDiagonal
        }
    }

    /// Neighbour offsets `(dh, dw)` behind and ahead along the gradient.
    fn neighbours(self) -> ((isize, isize), (isize, isize)) {
        match self {
            Direction::Horizontal => ((0, -1), (0, 1)),
            Direction::Vertical => ((-1, 0), (1, 0)),
            Direction::Diagonal => ((-1, -1), (1, 1)),
            Direction::AntiDiagonal => ((-1, 1), (1, -1)),
        }
    }
}

/// Edge map of one slice.
pub fn canny_slice(slice: &Plane<f64>, params: &CannyParams) -> Result<Plane<bool>> {
    params.validate()?;
    let (height, width) = (slice.height, slice.width);
    if slice.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "canny input contains non-finite values".into(),
        ));
    }
    if slice.is_empty() {
        return Ok(Plane::filled(height, width, false));
    }

    // Shift to a zero minimum so adding a constant to the slice cannot change
    // any later arithmetic.
    let min = slice.data.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = slice.data.iter().map(|v| v - min).collect();
    let smooth = blur(&shifted, height, width, params.sigma);

    let at = |h: usize, dh: isize, w: usize, dw: isize| {
        smooth[clamp_offset(h, dh, height) * width + clamp_offset(w, dw, width)]
    };
    let mut gx = vec![0.0; slice.len()];
    let mut gy = vec![0.0; slice.len()];
    let mut mag = vec![0.0; slice.len()];
    for h in 0..height {
        for w in 0..width {
            let i = h * width + w;
            gx[i] = (at(h, -1, w, 1) + 2.0 * at(h, 0, w, 1) + at(h, 1, w, 1))
                - (at(h, -1, w, -1) + 2.0 * at(h, 0, w, -1) + at(h, 1, w, -1));
            gy[i] = (at(h, 1, w, -1) + 2.0 * at(h, 1, w, 0) + at(h, 1, w, 1))
                - (at(h, -1, w, -1) + 2.0 * at(h, -1, w, 0) + at(h, -1, w, 1));
            mag[i] = gx[i].hypot(gy[i]);
        }
    }
    let max = mag.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(Plane::filled(height, width, false));
    }
    for m in &mut mag {
        *m /= max;
    }

    let mag_at = |h: usize, w: usize, (dh, dw): (isize, isize)| {
        let (nh, nw) = (h as isize + dh, w as isize + dw);
        if nh < 0 || nw < 0 || nh >= height as isize || nw >= width as isize {
            0.0
        } else {
            mag[nh as usize * width + nw as usize]
        }
    };
    let mut thin = vec![0.0; slice.len()];
    for h in 0..height {
        for w in 0..width {
            let i = h * width + w;
            let m = mag[i];
            let (behind, ahead) = Direction::quantize(gx[i], gy[i]).neighbours();
            // Ties resolve toward the pixel further along the gradient, so a
            // symmetric ridge still yields a one-pixel line.
            if m >= mag_at(h, w, behind) && m > mag_at(h, w, ahead) {
                thin[i] = m;
            }
        }
    }

    Ok(Plane {
        height,
        width,
        data: hysteresis(&thin, height, width, params.low, params.high),
    })
}

fn hysteresis(thin: &[f64], height: usize, width: usize, low: f64, high: f64) -> Vec<bool> {
    let mut out = vec![false; thin.len()];
    let mut stack = Vec::new();
    for (i, &m) in thin.iter().enumerate() {
        if m > 0.0 && m >= high && !out[i] {
            out[i] = true;
            stack.push(i);
            while let Some(j) = stack.pop() {
                let (h, w) = ((j / width) as isize, (j % width) as isize);
                for dh in -1..=1 {
                    for dw in -1..=1 {
                        let (nh, nw) = (h + dh, w + dw);
                        if (dh, dw) == (0, 0)
                            || nh < 0
                            || nw < 0
                            || nh >= height as isize
                            || nw >= width as isize
                        {
                            continue;
                        }
                        let n = nh as usize * width + nw as usize;
                        if !out[n] && thin[n] > 0.0 && thin[n] >= low {
                            out[n] = true;
                            stack.push(n);
                        }
                    }
                }
            }
        }
    }
    out
}
