//! Dense 3-D and 2-D containers shared by every stage.
//!
//! All volumes are stored row-major in `(d, h, w)` order; `d` indexes axial
//! slices.

use crate::error::{Error, Result};

/// Extents of a volume: `depth` axial slices of `height × width` pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub const fn new(depth: usize, height: usize, width: usize) -> Self {
        Self {
            depth,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.depth * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn slice_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub const fn index(&self, d: usize, h: usize, w: usize) -> usize {
        (d * self.height + h) * self.width + w
    }

    #[inline]
    pub const fn coords(&self, index: usize) -> (usize, usize, usize) {
        let w = index % self.width;
        let rest = index / self.width;
        (rest / self.height, rest % self.height, w)
    }

    pub const fn as_array(&self) -> [usize; 3] {
        [self.depth, self.height, self.width]
    }

    pub(crate) fn ensure_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::invalid(format!(
                "volume dims {self} have a zero extent"
            )));
        }
        Ok(())
    }
}

impl From<[usize; 3]> for Dims {
    fn from(a: [usize; 3]) -> Self {
        Dims::new(a[0], a[1], a[2])
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.depth, self.height, self.width)
    }
}

/// Generic dense 3-D array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid<T> {
    dims: Dims,
    data: Vec<T>,
}

impl<T> Grid<T> {
    pub fn from_vec(dims: Dims, data: Vec<T>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::dims(format!(
                "{} values supplied for a {dims} grid",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for d in 0..dims.depth {
            for h in 0..dims.height {
                for w in 0..dims.width {
                    data.push(f(d, h, w));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, d: usize, h: usize, w: usize) -> &T {
        &self.data[self.dims.index(d, h, w)]
    }

    #[inline]
    pub fn set(&mut self, d: usize, h: usize, w: usize, value: T) {
        let i = self.dims.index(d, h, w);
        self.data[i] = value;
    }

    /// Axial slice `d` as a contiguous row-major `height × width` view.
    pub fn slice(&self, d: usize) -> &[T] {
        let n = self.dims.slice_len();
        &self.data[d * n..(d + 1) * n]
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            dims: self.dims,
            data: self.data.iter().map(f).collect(),
        }
    }
}

impl<T: Clone> Grid<T> {
    pub fn filled(dims: Dims, value: T) -> Self {
        Self {
            dims,
            data: vec![value; dims.len()],
        }
    }

    pub fn slice_plane(&self, d: usize) -> Plane<T> {
        Plane {
            height: self.dims.height,
            width: self.dims.width,
            data: self.slice(d).to_vec(),
        }
    }

    /// Stack equally sized planes along the depth axis.
    pub fn stack(planes: &[Plane<T>]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero planes"))?;
        let (height, width) = (first.height, first.width);
        let mut data = Vec::with_capacity(planes.len() * height * width);
        for p in planes {
            if p.height != height || p.width != width {
                return Err(Error::dims("planes of differing size cannot be stacked"));
            }
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            dims: Dims::new(planes.len(), height, width),
            data,
        })
    }
}

/// Dense 2-D array, row-major `(h, w)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plane<T> {
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T> Plane<T> {
    pub fn from_vec(height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dims(format!(
                "{} values supplied for a {height}x{width} plane",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for h in 0..height {
            for w in 0..width {
                data.push(f(h, w));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn get(&self, h: usize, w: usize) -> &T {
        &self.data[h * self.width + w]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

impl<T: Clone> Plane<T> {
    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }
}

/// Which intensity scale a [`CtVolume`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueDomain {
    /// Hounsfield units.
    RawHu,
    /// Clipped and rescaled into `[0, 1]`.
    Normalized,
}

/// Scalar CT volume.
#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    grid: Grid<f32>,
    domain: ValueDomain,
}

impl CtVolume {
    pub fn new(grid: Grid<f32>, domain: ValueDomain) -> Result<Self> {
        if let Some(v) = grid.as_slice().iter().find(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite voxel value {v}")));
        }
        if domain == ValueDomain::Normalized
            && grid.as_slice().iter().any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::invalid(
                "normalized volume has values outside [0, 1]",
            ));
        }
        Ok(Self { grid, domain })
    }

    pub fn dims(&self) -> Dims {
        self.grid.dims()
    }

    pub fn domain(&self) -> ValueDomain {
        self.domain
    }

    pub fn grid(&self) -> &Grid<f32> {
        &self.grid
    }

    pub fn voxels(&self) -> &[f32] {
        self.grid.as_slice()
    }

    pub fn into_grid(self) -> Grid<f32> {
        self.grid
    }

    /// Values widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.voxels().iter().map(|&v| v as f64).collect()
    }
}

/// Per-voxel class labels in `0..num_classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVolume {
    grid: Grid<u8>,
    num_classes: u16,
}

/// Largest class count a `u8` label can address.
pub const MAX_CLASSES: u16 = 256;

impl LabelVolume {
    pub fn new(grid: Grid<u8>, num_classes: u16) -> Result<Self> {
        if num_classes == 0 || num_classes > MAX_CLASSES {
            return Err(Error::invalid(format!(
                "num_classes must be in 1..={MAX_CLASSES}, got {num_classes}"
            )));
        }
        if let Some(&l) = grid.as_slice().iter().find(|&&l| l as u16 >= num_classes) {
            return Err(Error::invalid(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        Ok(Self { grid, num_classes })
    }

    pub fn dims(&self) -> Dims {
        self.grid.dims()
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }

    pub fn grid(&self) -> &Grid<u8> {
        &self.grid
    }

    pub fn labels(&self) -> &[u8] {
        self.grid.as_slice()
    }

    pub fn into_grid(self) -> Grid<u8> {
        self.grid
    }

    /// Per-class voxel counts.
    pub fn histogram(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes as usize];
        for &l in self.labels() {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Binary mask of voxels carrying `class`.
    pub fn mask(&self, class: u8) -> Grid<bool> {
        self.grid.map(|&l| l == class)
    }
}

/// Binary per-voxel edge mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeVolume {
    grid: Grid<bool>,
}

impl EdgeVolume {
    pub fn new(grid: Grid<bool>) -> Self {
        Self { grid }
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            grid: Grid::filled(dims, false),
        }
    }

    pub fn dims(&self) -> Dims {
        self.grid.dims()
    }

    pub fn grid(&self) -> &Grid<bool> {
        &self.grid
    }

    pub fn mask(&self) -> &[bool] {
        self.grid.as_slice()
    }

    pub fn into_grid(self) -> Grid<bool> {
        self.grid
    }

    pub fn count_ones(&self) -> usize {
        self.mask().iter().filter(|&&b| b).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let dims = Dims::new(3, 4, 5);
        for i in 0..dims.len() {
            let (d, h, w) = dims.coords(i);
            assert_eq!(dims.index(d, h, w), i);
        }
    }

    #[test]
    fn label_volume_rejects_out_of_range() {
        let g = Grid::filled(Dims::new(1, 2, 2), 3u8);
        assert!(LabelVolume::new(g.clone(), 3).is_err());
        assert!(LabelVolume::new(g, 4).is_ok());
    }

    #[test]
    fn normalized_ct_checks_range() {
        let g = Grid::filled(Dims::new(1, 1, 2), 1.5f32);
        assert!(CtVolume::new(g.clone(), ValueDomain::Normalized).is_err());
        assert!(CtVolume::new(g, ValueDomain::RawHu).is_ok());
        let nan = Grid::filled(Dims::new(1, 1, 1), f32::NAN);
        assert!(CtVolume::new(nan, ValueDomain::RawHu).is_err());
    }

    #[test]
    fn stack_and_slice_agree() {
        let g = Grid::from_fn(Dims::new(3, 2, 2), |d, h, w| (d * 4 + h * 2 + w) as u32);
        let planes: Vec<_> = (0..3).map(|d| g.slice_plane(d)).collect();
        assert_eq!(Grid::stack(&planes).unwrap(), g);
    }
}
