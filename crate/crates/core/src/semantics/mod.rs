//! Semantic extraction: segmentation volume and stacked edge volume.

mod canny;

pub(crate) use canny::gaussian_kernel;
pub use canny::{canny_slice, CannyParams};

use crate::error::{Error, Result};
use crate::exec;
use crate::volume::{CtVolume, Dims, EdgeVolume, Grid, LabelVolume, Plane, ValueDomain};

/// Channel-major one-hot tensor of shape `(C, D, H, W)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OneHot {
    num_classes: usize,
    dims: Dims,
    data: Vec<u8>,
}

impl OneHot {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn channel(&self, c: usize) -> &[u8] {
        let n = self.dims.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    /// Per-voxel index of the hot channel; lowest index wins if several are set.
    pub fn argmax(&self) -> Vec<u8> {
        let n = self.dims.len();
        (0..n)
            .map(|i| {
                let mut best = 0;
                for c in 1..self.num_classes {
                    if self.data[c * n + i] > self.data[best * n + i] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }
}

/// One-hot encode labels into `num_classes` channels.
pub fn one_hot(labels: &LabelVolume, num_classes: usize) -> Result<OneHot> {
    if let Some(&l) = labels.labels().iter().find(|&&l| l as usize >= num_classes) {
        return Err(Error::invalid(format!(
            "label {l} does not fit in {num_classes} channels"
        )));
    }
    let dims = labels.dims();
    let n = dims.len();
    let mut data = vec![0u8; num_classes * n];
    for (i, &l) in labels.labels().iter().enumerate() {
        data[l as usize * n + i] = 1;
    }
    Ok(OneHot {
        num_classes,
        dims,
        data,
    })
}

/// Segmentation representation: integer labels with an on-demand one-hot view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegVolume {
    labels: LabelVolume,
}

impl SegVolume {
    pub fn labels(&self) -> &LabelVolume {
        &self.labels
    }

    pub fn into_labels(self) -> LabelVolume {
        self.labels
    }

    pub fn dims(&self) -> Dims {
        self.labels.dims()
    }

    pub fn num_classes(&self) -> u16 {
        self.labels.num_classes()
    }

    pub fn one_hot(&self) -> OneHot {
        one_hot(&self.labels, self.labels.num_classes() as usize)
            .expect("labels validated against num_classes on construction")
    }
}

impl From<LabelVolume> for SegVolume {
    fn from(labels: LabelVolume) -> Self {
        Self { labels }
    }
}

/// Wrap a label volume as the transmitted segmentation.
///
/// The segmentation model is replaced by the labels themselves (ground truth
/// or the output of [`segment_by_intensity`]).
pub fn extract_segmentation(labels: &LabelVolume) -> SegVolume {
    SegVolume {
        labels: labels.clone(),
    }
}

/// Nearest-intensity segmenter: each voxel gets the class whose table
/// intensity is closest; ties go to the lower class index.
pub fn segment_by_intensity(vol: &CtVolume, table: &[f64]) -> Result<LabelVolume> {
    if table.is_empty() || table.len() > crate::volume::MAX_CLASSES as usize {
        return Err(Error::invalid("intensity table needs 1..=256 entries"));
    }
    if table.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("intensity table must be finite"));
    }
    let labels = vol
        .voxels()
        .iter()
        .map(|&v| {
            let v = v as f64;
            let mut best = 0usize;
            for (c, &t) in table.iter().enumerate().skip(1) {
                if (v - t).abs() < (v - table[best]).abs() {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelVolume::new(Grid::from_vec(vol.dims(), labels)?, table.len() as u16)
}

/// Run [`canny_slice`] on every axial slice and stack the results.
pub fn extract_edges(vol: &CtVolume, params: &CannyParams) -> Result<EdgeVolume> {
    if vol.domain() != ValueDomain::Normalized {
        return Err(Error::invalid(
            "edge extraction expects a normalized volume",
        ));
    }
    params.validate()?;
    let dims = vol.dims();
    let slices = exec::map_range(dims.depth, |d| {
        let plane = Plane {
            height: dims.height,
            width: dims.width,
            data: vol.grid().slice(d).iter().map(|&v| v as f64).collect(),
        };
        canny_slice(&plane, params)
    });
    let mut mask = Vec::with_capacity(dims.len());
    for s in slices {
        mask.extend(s?.data);
    }
    Ok(EdgeVolume::new(Grid::from_vec(dims, mask)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_phantom, normalize_hu, Organ, PhantomSpec};
    use crate::rng::Stream;

    fn labels(dims: Dims, c: u16, f: impl Fn(usize) -> u8) -> LabelVolume {
        LabelVolume::new(
            Grid::from_vec(dims, (0..dims.len()).map(f).collect()).unwrap(),
            c,
        )
        .unwrap()
    }

    #[test]
    fn background_only_one_hot() {
        let seg = extract_segmentation(&labels(Dims::new(2, 3, 4), 3, |_| 0));
        let oh = seg.one_hot();
        assert!(oh.channel(0).iter().all(|&v| v == 1));
        assert!(oh.channel(1).iter().chain(oh.channel(2)).all(|&v| v == 0));
    }

    #[test]
    fn single_voxel_vector() {
        let l = labels(Dims::new(1, 1, 1), 4, |_| 2);
        let oh = one_hot(&l, 4).unwrap();
        let v: Vec<u8> = (0..4).map(|c| oh.channel(c)[0]).collect();
        assert_eq!(v, vec![0, 0, 1, 0]);
    }

    #[test]
    fn degenerate_single_class() {
        let l = labels(Dims::new(2, 2, 2), 1, |_| 0);
        let oh = one_hot(&l, 1).unwrap();
        assert!(oh.channel(0).iter().all(|&v| v == 1));
        assert!(one_hot(&labels(Dims::new(1, 1, 1), 3, |_| 2), 2).is_err());
    }

    #[test]
    fn random_labels_sum_to_one_and_argmax_round_trips() {
        let s = Stream::new(8);
        let l = labels(Dims::new(8, 8, 8), 5, |i| (s.u64_at(i as u64) % 5) as u8);
        let oh = one_hot(&l, 5).unwrap();
        for i in 0..l.dims().len() {
            let sum: u32 = (0..5).map(|c| oh.channel(c)[i] as u32).sum();
            assert_eq!(sum, 1);
        }
        assert_eq!(oh.argmax(), l.labels());
    }

    #[test]
    fn phantom_labels_round_trip_through_one_hot() {
        let (_, gt) = generate_phantom(&PhantomSpec::abdominal(4, Dims::new(8, 32, 32))).unwrap();
        let seg = extract_segmentation(&gt);
        assert_eq!(seg.one_hot().argmax(), gt.labels());
    }

    #[test]
    fn intensity_segmenter_ties_to_lower_class() {
        let grid = Grid::from_vec(Dims::new(1, 1, 4), vec![0.0f32, 0.125, 0.3, 0.9]).unwrap();
        let ct = CtVolume::new(grid, ValueDomain::Normalized).unwrap();
        let l = segment_by_intensity(&ct, &[0.0, 0.25, 0.5]).unwrap();
        assert_eq!(l.labels(), &[0, 0, 1, 2]);
    }

    fn bright_ball(dims: Dims, organ: Organ) -> CtVolume {
        let spec = PhantomSpec {
            seed: 1,
            dims,
            num_classes: 2,
            background_texture_hu: 0.0,
            organs: vec![organ],
        };
        normalize_hu(&generate_phantom(&spec).unwrap().0).unwrap()
    }

    #[test]
    fn constant_volume_has_no_edges() {
        let grid = Grid::filled(Dims::new(3, 10, 10), 0.4f32);
        let ct = CtVolume::new(grid, ValueDomain::Normalized).unwrap();
        assert_eq!(
            extract_edges(&ct, &CannyParams::default())
                .unwrap()
                .count_ones(),
            0
        );
    }

    #[test]
    fn edges_present_exactly_on_slices_touching_the_ellipsoid() {
        let dims = Dims::new(12, 24, 24);
        let organ = Organ {
            class: 1,
            center: [5.5, 11.5, 11.5],
            radii: [3.7, 8.0, 6.0],
            mean_hu: 300.0,
            texture_hu: 0.0,
        };
        let ct = bright_ball(dims, organ.clone());
        let edges = extract_edges(&ct, &CannyParams::default()).unwrap();
        for d in 0..dims.depth {
            let touches =
                (0..dims.height).any(|h| (0..dims.width).any(|w| organ.contains(d, h, w)));
            let any_edge = edges.grid().slice(d).iter().any(|&b| b);
            assert_eq!(touches, any_edge, "slice {d}");
        }
    }

    #[test]
    fn single_slice_volume_matches_canny_slice() {
        let s = Stream::new(21);
        let dims = Dims::new(1, 16, 16);
        let grid = Grid::from_vec(
            dims,
            (0..dims.len())
                .map(|i| s.uniform_at(i as u64) as f32)
                .collect(),
        )
        .unwrap();
        let ct = CtVolume::new(grid, ValueDomain::Normalized).unwrap();
        let params = CannyParams::default();
        let stacked = extract_edges(&ct, &params).unwrap();
        let plane = Plane {
            height: 16,
            width: 16,
            data: ct.to_f64(),
        };
        assert_eq!(
            stacked.mask(),
            &canny_slice(&plane, &params).unwrap().data[..]
        );
    }

    #[test]
    fn slice_permutation_commutes() {
        let s = Stream::new(2);
        let dims = Dims::new(4, 12, 12);
        let values: Vec<f32> = (0..dims.len())
            .map(|i| s.uniform_at(i as u64) as f32)
            .collect();
        let perm = [2usize, 0, 3, 1];
        let mut permuted = Vec::new();
        for &p in &perm {
            permuted.extend_from_slice(&values[p * 144..(p + 1) * 144]);
        }
        let a = CtVolume::new(
            Grid::from_vec(dims, values).unwrap(),
            ValueDomain::Normalized,
        )
        .unwrap();
        let b = CtVolume::new(
            Grid::from_vec(dims, permuted).unwrap(),
            ValueDomain::Normalized,
        )
        .unwrap();
        let params = CannyParams::default();
        let ea = extract_edges(&a, &params).unwrap();
        let eb = extract_edges(&b, &params).unwrap();
        for (k, &p) in perm.iter().enumerate() {
            assert_eq!(eb.grid().slice(k), ea.grid().slice(p));
        }
    }

    #[test]
    fn raw_volume_rejected() {
        let ct =
            CtVolume::new(Grid::filled(Dims::new(1, 4, 4), 0.0f32), ValueDomain::RawHu).unwrap();
        assert!(extract_edges(&ct, &CannyParams::default()).is_err());
    }
}
