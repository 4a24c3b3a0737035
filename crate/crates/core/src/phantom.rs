//! Synthetic CT phantoms with exact ground-truth labels.
//!
//! Organs are axis-aligned ellipsoids painted in table order, so a later
//! entry overwrites an earlier one where they overlap. Intensities are the
//! organ's mean HU plus a smooth value-noise texture whose lattice values are
//! hashed from `(seed, class, lattice coordinate)`; the fill is therefore
//! independent of thread count and visiting order.

use crate::error::{Error, Result};
use crate::exec;
use crate::rng::{self, tags};
use crate::volume::{CtVolume, Dims, Grid, LabelVolume, ValueDomain, MAX_CLASSES};

/// HU assigned to voxels outside every organ (air).
pub const BACKGROUND_HU: f64 = -1000.0;
/// Window used by [`normalize_hu`].
pub const HU_WINDOW: (f64, f64) = (-400.0, 400.0);
/// Lattice spacing of the texture field, in voxels.
pub const TEXTURE_CELL: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Organ {
    pub class: u8,
    /// Center in voxel coordinates `(d, h, w)`.
    pub center: [f64; 3],
    /// Semi-axes in voxels.
    pub radii: [f64; 3],
    pub mean_hu: f64,
    /// Peak texture deviation in HU.
    pub texture_hu: f64,
}

impl Organ {
    #[inline]
    pub fn contains(&self, d: usize, h: usize, w: usize) -> bool {
        let p = [d as f64, h as f64, w as f64];
        let s: f64 = (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum();
        s <= 1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub seed: u64,
    pub dims: Dims,
    pub num_classes: u16,
    pub background_texture_hu: f64,
    pub organs: Vec<Organ>,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        self.dims.ensure_nonempty()?;
        if self.num_classes < 2 || self.num_classes > MAX_CLASSES {
            return Err(Error::invalid(format!(
                "phantom needs 2..={MAX_CLASSES} classes, got {}",
                self.num_classes
            )));
        }
        if !self.background_texture_hu.is_finite() {
            return Err(Error::invalid("background texture must be finite"));
        }
        let mut seen = vec![false; self.num_classes as usize];
        let extents = self.dims.as_array();
        for o in &self.organs {
            if o.class == 0 || o.class as u16 >= self.num_classes {
                return Err(Error::invalid(format!(
                    "organ class {} outside 1..{}",
                    o.class, self.num_classes
                )));
            }
            if std::mem::replace(&mut seen[o.class as usize], true) {
                return Err(Error::invalid(format!(
                    "organ class {} listed twice",
                    o.class
                )));
            }
            if !o.mean_hu.is_finite() || !o.texture_hu.is_finite() {
                return Err(Error::invalid("organ HU values must be finite"));
            }
            for (a, (&c, &r)) in o.center.iter().zip(&o.radii).enumerate() {
                if r.is_nan() || r <= 0.0 || !c.is_finite() {
                    return Err(Error::invalid(format!(
                        "organ {} has invalid geometry",
                        o.class
                    )));
                }
                if c - r < 0.0 || c + r > (extents[a] - 1) as f64 {
                    return Err(Error::invalid(format!(
                        "organ {} ellipsoid leaves the volume along axis {a}",
                        o.class
                    )));
                }
            }
        }
        Ok(())
    }

    /// Three-organ abdominal layout (body, liver, kidney) scaled to `dims`.
    ///
    /// Class intensities after normalization are 0, 0.25, 0.5 and 0.75.
    pub fn abdominal(seed: u64, dims: Dims) -> Self {
        let ext = dims.as_array();
        let place = |center: [f64; 3], radii: [f64; 3]| {
            let mut c = [0.0; 3];
            let mut r = [0.0; 3];
            for a in 0..3 {
                let span = (ext[a].max(1) - 1) as f64;
                c[a] = center[a] * span;
                r[a] = radii[a] * span / 2.0;
            }
            (c, r)
        };
        let organ = |class, center, radii, mean_hu, texture_hu| {
            let (center, radii) = place(center, radii);
            Organ {
                class,
                center,
                radii,
                mean_hu,
                texture_hu,
            }
        };
        Self {
            seed,
            dims,
            num_classes: 4,
            background_texture_hu: 20.0,
            organs: vec![
                organ(1, [0.5, 0.5, 0.5], [1.0, 0.92, 0.95], -200.0, 12.0),
                organ(2, [0.5, 0.42, 0.36], [0.8, 0.5, 0.46], 0.0, 12.0),
                organ(3, [0.5, 0.6, 0.72], [0.7, 0.36, 0.3], 200.0, 12.0),
            ],
        }
    }

    /// Normalized intensity of each class, taken from the organ means.
    pub fn intensity_table(&self) -> Vec<f64> {
        let mut table = vec![normalize_value(BACKGROUND_HU); self.num_classes as usize];
        for o in &self.organs {
            table[o.class as usize] = normalize_value(o.mean_hu);
        }
        table
    }

    /// Class at a voxel before texture: the last listed organ containing it.
    pub fn label_at(&self, d: usize, h: usize, w: usize) -> u8 {
        self.organs
            .iter()
            .rev()
            .find(|o| o.contains(d, h, w))
            .map_or(0, |o| o.class)
    }
}

/// Smooth noise in `[-1, 1]`: trilinear blend of hashed lattice values.
fn value_noise(seed: u64, class: u8, d: usize, h: usize, w: usize) -> f64 {
    let key = rng::hash_coords(seed, &[tags::TEXTURE, class as u64]);
    let p = [d, h, w];
    let mut base = [0u64; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..3 {
        base[a] = (p[a] / TEXTURE_CELL) as u64;
        frac[a] = (p[a] % TEXTURE_CELL) as f64 / TEXTURE_CELL as f64;
    }
    let mut acc = 0.0;
    for corner in 0..8u64 {
        let mut weight = 1.0;
        let mut lattice = [0u64; 3];
        for a in 0..3 {
            let bit = (corner >> a) & 1;
            lattice[a] = base[a] + bit;
            weight *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        if weight == 0.0 {
            continue;
        }
        let u = (rng::hash_coords(key, &lattice) >> 11) as f64 / (1u64 << 53) as f64;
        acc += weight * (2.0 * u - 1.0);
    }
    acc
}

/// Render the phantom: raw-HU intensities and the matching label volume.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<(CtVolume, LabelVolume)> {
    spec.validate()?;
    let dims = spec.dims;
    let slices = exec::map_range(dims.depth, |d| {
        let mut hu = Vec::with_capacity(dims.slice_len());
        let mut labels = Vec::with_capacity(dims.slice_len());
        for h in 0..dims.height {
            for w in 0..dims.width {
                let class = spec.label_at(d, h, w);
                let (mean, amp) = match spec.organs.iter().find(|o| o.class == class) {
                    Some(o) => (o.mean_hu, o.texture_hu),
                    None => (BACKGROUND_HU, spec.background_texture_hu),
                };
                let tex = if amp == 0.0 {
                    0.0
                } else {
                    amp * value_noise(spec.seed, class, d, h, w)
                };
                hu.push((mean + tex) as f32);
                labels.push(class);
            }
        }
        (hu, labels)
    });
    let mut hu = Vec::with_capacity(dims.len());
    let mut labels = Vec::with_capacity(dims.len());
    for (s_hu, s_lab) in slices {
        hu.extend(s_hu);
        labels.extend(s_lab);
    }
    Ok((
        CtVolume::new(Grid::from_vec(dims, hu)?, ValueDomain::RawHu)?,
        LabelVolume::new(Grid::from_vec(dims, labels)?, spec.num_classes)?,
    ))
}

#[inline]
pub fn normalize_value(hu: f64) -> f64 {
    let (lo, hi) = HU_WINDOW;
    (hu.clamp(lo, hi) - lo) / (hi - lo)
}

/// Clip to the HU window and rescale into `[0, 1]`.
pub fn normalize_hu(vol: &CtVolume) -> Result<CtVolume> {
    if vol.domain() != ValueDomain::RawHu {
        return Err(Error::invalid("volume is already normalized"));
    }
    let grid = vol.grid().map(|&v| normalize_value(v as f64) as f32);
    CtVolume::new(grid, ValueDomain::Normalized)
}
