//! Segmentation and reconstruction metrics.
//!
//! Undefined per-class values (an empty denominator or an empty mask) are
//! reported as [`Measure::Fail`], never as zero.

use crate::error::{Error, Result};
use crate::exec;
use crate::volume::{Grid, LabelVolume};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measure {
    Value(f64),
    Fail,
}

impl Measure {
    pub fn value(self) -> Option<f64> {
        match self {
            Measure::Value(v) => Some(v),
            Measure::Fail => None,
        }
    }

    pub fn is_fail(self) -> bool {
        matches!(self, Measure::Fail)
    }
}

impl From<f64> for Measure {
    fn from(v: f64) -> Self {
        Measure::Value(v)
    }
}

/// Mean of the defined values; `Fail` if there are none.
pub fn mean_defined(values: impl IntoIterator<Item = Measure>) -> Measure {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values.into_iter().filter_map(Measure::value) {
        sum += v;
        n += 1;
    }
    if n == 0 {
        Measure::Fail
    } else {
        Measure::Value(sum / n as f64)
    }
}

/// Per-class true positive, false positive and false negative voxel counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionCounts {
    tp: Vec<u64>,
    fp: Vec<u64>,
    fn_: Vec<u64>,
}

impl ConfusionCounts {
    pub fn from_counts(tp: Vec<u64>, fp: Vec<u64>, fn_: Vec<u64>) -> Result<Self> {
        if tp.len() != fp.len() || tp.len() != fn_.len() {
            return Err(Error::dims("count vectors differ in length"));
        }
        Ok(Self { tp, fp, fn_ })
    }

    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.tp[c]
    }

    pub fn fp(&self, c: usize) -> u64 {
        self.fp[c]
    }

    pub fn fn_(&self, c: usize) -> u64 {
        self.fn_[c]
    }

    /// Ground-truth voxels of class `c`.
    pub fn gt_count(&self, c: usize) -> u64 {
        self.tp[c] + self.fn_[c]
    }
}

pub fn confusion(
    pred: &LabelVolume,
    gt: &LabelVolume,
    num_classes: usize,
) -> Result<ConfusionCounts> {
    if pred.dims() != gt.dims() {
        return Err(Error::dims(format!(
            "prediction is {} but ground truth is {}",
            pred.dims(),
            gt.dims()
        )));
    }
    let mut tp = vec![0u64; num_classes];
    let mut fp = vec![0u64; num_classes];
    let mut fn_ = vec![0u64; num_classes];
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        let (p, g) = (p as usize, g as usize);
        if p >= num_classes || g >= num_classes {
            return Err(Error::invalid(format!(
                "label outside {num_classes} classes"
            )));
        }
        if p == g {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[g] += 1;
        }
    }
    Ok(ConfusionCounts { tp, fp, fn_ })
}

/// `2·TP / (2·TP + FP + FN)`.
pub fn dice(counts: &ConfusionCounts, c: usize) -> Measure {
    let den = 2 * counts.tp[c] + counts.fp[c] + counts.fn_[c];
    if den == 0 {
        Measure::Fail
    } else {
        Measure::Value(2.0 * counts.tp[c] as f64 / den as f64)
    }
}

/// `TP / (TP + FP + FN)`.
pub fn iou(counts: &ConfusionCounts, c: usize) -> Measure {
    let den = counts.tp[c] + counts.fp[c] + counts.fn_[c];
    if den == 0 {
        Measure::Fail
    } else {
        Measure::Value(counts.tp[c] as f64 / den as f64)
    }
}

/// IoU over foreground classes `1..C`, weighted by each class's share of the
/// ground-truth foreground voxels. `Fail` when the foreground is empty.
pub fn weighted_miou(counts: &ConfusionCounts) -> Measure {
    let total: u64 = (1..counts.num_classes()).map(|c| counts.gt_count(c)).sum();
    if total == 0 {
        return Measure::Fail;
    }
    let mut acc = 0.0;
    for c in 1..counts.num_classes() {
        let n = counts.gt_count(c);
        if n > 0 {
            let v = iou(counts, c)
                .value()
                .expect("gt voxels make the denominator positive");
            acc += n as f64 / total as f64 * v;
        }
    }
    Measure::Value(acc)
}

/// How the two directed distance sets are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Hd95Mode {
    /// 95th percentile of both directed sets pooled together.
    #[default]
    Pooled,
    /// Larger of the two directed 95th percentiles.
    DirectedMax,
}

/// Foreground voxels with a face neighbour that is background or outside.
pub fn boundary_voxels(mask: &Grid<bool>) -> Vec<[usize; 3]> {
    let dims = mask.dims();
    let m = mask.as_slice();
    let on = |d: isize, h: isize, w: isize| {
        d >= 0
            && h >= 0
            && w >= 0
            && (d as usize) < dims.depth
            && (h as usize) < dims.height
            && (w as usize) < dims.width
            && m[dims.index(d as usize, h as usize, w as usize)]
    };
    let mut out = Vec::new();
    for (i, &set) in m.iter().enumerate() {
        if !set {
            continue;
        }
        let (d, h, w) = dims.coords(i);
        let (d, h, w) = (d as isize, h as isize, w as isize);
        let inner = on(d - 1, h, w)
            && on(d + 1, h, w)
            && on(d, h - 1, w)
            && on(d, h + 1, w)
            && on(d, h, w - 1)
            && on(d, h, w + 1);
        if !inner {
            out.push([d as usize, h as usize, w as usize]);
        }
    }
    out
}

/// Squared physical distance between two voxels.
#[inline]
pub fn dist_sq(a: [usize; 3], b: [usize; 3], spacing: [f64; 3]) -> f64 {
    let mut s = 0.0;
    for k in 0..3 {
        let d = (a[k] as f64 - b[k] as f64) * spacing[k];
        s += d * d;
    }
    s
}

/// Linear-interpolated quantile of unsorted data; sorts in place.
pub fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(values.len() - 1);
    let frac = pos - lo as f64;
    values[lo] + frac * (values[hi] - values[lo])
}

/// Static kd-tree for exact nearest-neighbour queries.
struct KdTree {
    points: Vec<[usize; 3]>,
    spacing: [f64; 3],
}

impl KdTree {
    fn new(mut points: Vec<[usize; 3]>, spacing: [f64; 3]) -> Self {
        fn build(p: &mut [[usize; 3]], depth: usize) {
            if p.len() <= 1 {
                return;
            }
            let axis = depth % 3;
            let mid = p.len() / 2;
            p.select_nth_unstable_by_key(mid, |v| v[axis]);
            let (left, right) = p.split_at_mut(mid);
            build(left, depth + 1);
            build(&mut right[1..], depth + 1);
        }
        build(&mut points, 0);
        Self { points, spacing }
    }

    fn nearest_sq(&self, q: [usize; 3]) -> f64 {
        let mut best = f64::INFINITY;
        self.search(&self.points, 0, q, &mut best);
        best
    }

    fn search(&self, p: &[[usize; 3]], depth: usize, q: [usize; 3], best: &mut f64) {
        if p.is_empty() {
            return;
        }
        let mid = p.len() / 2;
        let node = p[mid];
        let d = dist_sq(node, q, self.spacing);
        if d < *best {
            *best = d;
        }
        let axis = depth % 3;
        let diff = (q[axis] as f64 - node[axis] as f64) * self.spacing[axis];
        let (near, far) = if q[axis] < node[axis] {
            (&p[..mid], &p[mid + 1..])
        } else {
            (&p[mid + 1..], &p[..mid])
        };
        self.search(near, depth + 1, q, best);
        if diff * diff <= *best {
            self.search(far, depth + 1, q, best);
        }
    }
}

/// Distance from every point of `from` to its nearest point of `to`.
pub fn directed_distances(from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f64; 3]) -> Vec<f64> {
    let tree = KdTree::new(to.to_vec(), spacing);
    exec::map_slice(from, |&q| tree.nearest_sq(q).sqrt())
}

pub fn hd95(pred: &Grid<bool>, gt: &Grid<bool>, spacing: [f64; 3]) -> Result<Measure> {
    hd95_with(pred, gt, spacing, Hd95Mode::Pooled)
}

pub fn hd95_with(
    pred: &Grid<bool>,
    gt: &Grid<bool>,
    spacing: [f64; 3],
    mode: Hd95Mode,
) -> Result<Measure> {
    if pred.dims() != gt.dims() {
        return Err(Error::dims(format!(
            "prediction is {} but ground truth is {}",
            pred.dims(),
            gt.dims()
        )));
    }
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::invalid(format!(
            "voxel spacing {spacing:?} must be positive"
        )));
    }
    let (a, b) = (boundary_voxels(pred), boundary_voxels(gt));
    if a.is_empty() || b.is_empty() {
        return Ok(Measure::Fail);
    }
    let mut ab = directed_distances(&a, &b, spacing);
    let mut ba = directed_distances(&b, &a, spacing);
    let v = match mode {
        Hd95Mode::Pooled => {
            ab.append(&mut ba);
            quantile(&mut ab, 0.95)
        }
        Hd95Mode::DirectedMax => quantile(&mut ab, 0.95).max(quantile(&mut ba, 0.95)),
    };
    Ok(Measure::Value(v))
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::dims(format!(
            "need equal non-empty inputs, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `10·log10(peak² / MSE)`; `+∞` when the inputs are identical.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Per-class Dice and HD95 plus the volume summaries used by the harness.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationReport {
    pub counts: ConfusionCounts,
    pub dice: Vec<Measure>,
    pub iou: Vec<Measure>,
    pub hd95: Vec<Measure>,
    pub miou_w: Measure,
}

impl SegmentationReport {
    /// Mean over foreground classes of a per-class column.
    pub fn foreground_mean(values: &[Measure]) -> Measure {
        mean_defined(values.iter().skip(1).copied())
    }
}

pub fn segmentation_report(
    pred: &LabelVolume,
    gt: &LabelVolume,
    spacing: [f64; 3],
    mode: Hd95Mode,
) -> Result<SegmentationReport> {
    let c = gt.num_classes().max(pred.num_classes()) as usize;
    let counts = confusion(pred, gt, c)?;
    let mut hd = Vec::with_capacity(c);
    for class in 0..c {
        hd.push(hd95_with(
            &pred.mask(class as u8),
            &gt.mask(class as u8),
            spacing,
            mode,
        )?);
    }
    Ok(SegmentationReport {
        dice: (0..c).map(|k| dice(&counts, k)).collect(),
        iou: (0..c).map(|k| iou(&counts, k)).collect(),
        miou_w: weighted_miou(&counts),
        hd95: hd,
        counts,
    })
}

/// Unit spacing.
pub const UNIT_SPACING: [f64; 3] = [1.0; 3];
