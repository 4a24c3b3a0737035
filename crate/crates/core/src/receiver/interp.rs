//! Trilinear upsampling with the align-origin convention.
//!
//! Output voxel `o` along an axis with stride `s` maps to source coordinate
//! `o / s`, so every `s`-th output voxel lands exactly on a latent sample.
//! Coordinates past the last sample clamp to it.

use crate::codec::Strides;
use crate::error::{Error, Result};
use crate::exec;
use crate::volume::{Dims, EdgeVolume, Grid, LabelVolume};

/// Lower/upper sample index and the weight of the upper one along one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisStencil {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

impl AxisStencil {
    pub fn new(out: usize, stride: usize, latent_len: usize) -> Self {
        let lo = out / stride;
        if lo + 1 >= latent_len {
            let last = latent_len - 1;
            return Self {
                lo: last.min(lo),
                hi: last.min(lo),
                frac: 0.0,
            };
        }
        Self {
            lo,
            hi: lo + 1,
            frac: (out % stride) as f64 / stride as f64,
        }
    }

    fn pair(&self, upper: bool) -> (usize, f64) {
        if upper {
            (self.hi, self.frac)
        } else {
            (self.lo, 1.0 - self.frac)
        }
    }
}

/// The eight latent coordinates and weights that produce output voxel `out`.
pub fn stencil(out: [usize; 3], strides: Strides, latent: Dims) -> [([usize; 3], f64); 8] {
    let s = strides.as_array();
    let l = latent.as_array();
    let axes: [AxisStencil; 3] = std::array::from_fn(|a| AxisStencil::new(out[a], s[a], l[a]));
    corners(&axes)
}

fn corners(axes: &[AxisStencil; 3]) -> [([usize; 3], f64); 8] {
    std::array::from_fn(|k| {
        let (d, wd) = axes[0].pair(k & 4 != 0);
        let (h, wh) = axes[1].pair(k & 2 != 0);
        let (w, ww) = axes[2].pair(k & 1 != 0);
        ([d, h, w], wd * wh * ww)
    })
}

fn axis_tables(latent: Dims, target: Dims) -> Result<[Vec<AxisStencil>; 3]> {
    if latent.is_empty() {
        return Err(Error::dims("latent volume is empty"));
    }
    let s = Strides::between(latent, target)?.as_array();
    let (l, t) = (latent.as_array(), target.as_array());
    Ok(std::array::from_fn(|a| {
        (0..t[a]).map(|o| AxisStencil::new(o, s[a], l[a])).collect()
    }))
}

/// Build a target-sized grid by evaluating `f` on the stencil of every voxel,
/// one output slice per task.
fn map_stencils<T, F>(latent: Dims, target: Dims, f: F) -> Result<Grid<T>>
where
    T: Send,
    F: Fn(&[([usize; 3], f64); 8]) -> T + Sync + Send,
{
    let [sd, sh, sw] = axis_tables(latent, target)?;
    let slices = exec::map_range(target.depth, |d| {
        let mut out = Vec::with_capacity(target.slice_len());
        for &y in &sh {
            for &x in &sw {
                out.push(f(&corners(&[sd[d], y, x])));
            }
        }
        out
    });
    Grid::from_vec(target, slices.into_iter().flatten().collect())
}

/// Upsample one real-valued channel to `target` dims.
pub fn trilinear_upsample(latent: &Grid<f64>, target: Dims) -> Result<Grid<f64>> {
    let ld = latent.dims();
    map_stencils(ld, target, |corners| {
        corners
            .iter()
            .map(|&([d, h, w], wt)| wt * latent.as_slice()[ld.index(d, h, w)])
            .sum()
    })
}

/// One-hot upsample then argmax, ties to the lowest class.
///
/// Only classes present in the stencil can carry weight, so the interpolated
/// one-hot value of every class is accumulated from the eight corners directly.
pub fn upsample_labels(
    latent: &LabelVolume,
    num_classes: u16,
    target: Dims,
) -> Result<LabelVolume> {
    if num_classes < latent.num_classes() {
        return Err(Error::invalid(format!(
            "{num_classes} classes cannot hold labels of a {}-class volume",
            latent.num_classes()
        )));
    }
    let ld = latent.dims();
    let labels = latent.labels();
    let grid = map_stencils(ld, target, |corners| {
        let mut acc: [(u8, f64); 8] = [(0, 0.0); 8];
        let mut n = 0;
        for &([d, h, w], wt) in corners {
            let l = labels[ld.index(d, h, w)];
            match acc[..n].iter_mut().find(|(c, _)| *c == l) {
                Some(slot) => slot.1 += wt,
                None => {
                    acc[n] = (l, wt);
                    n += 1;
                }
            }
        }
        let mut best = acc[0];
        for &(c, v) in &acc[1..n] {
            if v > best.1 || (v == best.1 && c < best.0) {
                best = (c, v);
            }
        }
        best.0
    })?;
    LabelVolume::new(grid, num_classes)
}

/// Edge upsampling as the two-class case of [`upsample_labels`]: a voxel is an
/// edge iff its interpolated edge value exceeds 1/2.
pub fn upsample_edges(latent: &EdgeVolume, target: Dims) -> Result<EdgeVolume> {
    let labels = LabelVolume::new(latent.grid().map(|&b| b as u8), 2)?;
    let up = upsample_labels(&labels, 2, target)?;
    Ok(EdgeVolume::new(up.grid().map(|&l| l == 1)))
}
