//! Independent reference implementations used as test oracles.
//!
//! They are deliberately naive: nested loops, explicit padding, no shared
//! helpers with the library beyond its plain data types.

#![allow(dead_code)]

use medsem::volume::{Dims, Grid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Textbook Canny on a row-major slice.
///
/// Gaussian of radius `ceil(3 sigma)`, Sobel on a replicate-padded image,
/// magnitude scaled to max 1, NMS with `atan2` angle buckets (strict on the
/// far side, inclusive behind), then hysteresis by repeated sweeps until no
/// pixel changes.
pub fn reference_canny(
    img: &[f64],
    h: usize,
    w: usize,
    sigma: f64,
    low: f64,
    high: f64,
) -> Vec<bool> {
    let r = ((3.0 * sigma).ceil() as i64).max(1);
    let mut k: Vec<f64> = (-r..=r)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    let px = |img: &[f64], y: i64, x: i64| -> f64 {
        let y = y.clamp(0, h as i64 - 1) as usize;
        let x = x.clamp(0, w as i64 - 1) as usize;
        img[y * w + x]
    };
    let mut tmp = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                acc += kv * px(img, y, x + j as i64 - r);
            }
            tmp[y as usize * w + x as usize] = acc;
        }
    }
    let mut sm = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                acc += kv * px(&tmp, y + j as i64 - r, x);
            }
            sm[y as usize * w + x as usize] = acc;
        }
    }

    let mut mag = vec![0.0; h * w];
    let mut ang = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let p = |dy: i64, dx: i64| px(&sm, y + dy, x + dx);
            let gx = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let gy = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let i = y as usize * w + x as usize;
            mag[i] = (gx * gx + gy * gy).sqrt();
            ang[i] = gy.atan2(gx).to_degrees().rem_euclid(180.0);
        }
    }
    let max = mag.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return vec![false; h * w];
    }
    for m in &mut mag {
        *m /= max;
    }

    let get = |y: i64, x: i64| -> f64 {
        if y < 0 || x < 0 || y >= h as i64 || x >= w as i64 {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut nms = vec![0.0; h * w];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let i = y as usize * w + x as usize;
            let a = ang[i];
            // (dy, dx) of the neighbour ahead along the gradient.
            let (dy, dx) = if !(22.5..157.5).contains(&a) {
                (0, 1)
            } else if a < 67.5 {
                (1, 1)
            } else if a < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            if mag[i] >= get(y - dy, x - dx) && mag[i] > get(y + dy, x + dx) {
                nms[i] = mag[i];
            }
        }
    }

    let mut edge: Vec<bool> = nms.iter().map(|&m| m > 0.0 && m >= high).collect();
    loop {
        let mut changed = false;
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let i = y as usize * w + x as usize;
                if edge[i] || !(nms[i] > 0.0 && nms[i] >= low) {
                    continue;
                }
                let touches = (-1..=1).any(|dy| {
                    (-1..=1).any(|dx| {
                        let (ny, nx) = (y + dy, x + dx);
                        (dy, dx) != (0, 0)
                            && ny >= 0
                            && nx >= 0
                            && ny < h as i64
                            && nx < w as i64
                            && edge[ny as usize * w + nx as usize]
                    })
                });
                if touches {
                    edge[i] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            return edge;
        }
    }
}

/// Per-voxel `(tp, fp, fn)` by direct counting.
pub fn confusion_oracle(pred: &[u8], gt: &[u8], c: usize) -> Vec<(u64, u64, u64)> {
    (0..c as u8)
        .map(|k| {
            let mut t = (0, 0, 0);
            for (&p, &g) in pred.iter().zip(gt) {
                match (p == k, g == k) {
                    (true, true) => t.0 += 1,
                    (true, false) => t.1 += 1,
                    (false, true) => t.2 += 1,
                    _ => {}
                }
            }
            t
        })
        .collect()
}

fn surface(mask: &Grid<bool>) -> Vec<[i64; 3]> {
    let d = mask.dims();
    let at = |z: i64, y: i64, x: i64| {
        z >= 0
            && y >= 0
            && x >= 0
            && (z as usize) < d.depth
            && (y as usize) < d.height
            && (x as usize) < d.width
            && *mask.get(z as usize, y as usize, x as usize)
    };
    let mut out = Vec::new();
    for z in 0..d.depth as i64 {
        for y in 0..d.height as i64 {
            for x in 0..d.width as i64 {
                if !at(z, y, x) {
                    continue;
                }
                let faces = [
                    (1, 0, 0),
                    (-1, 0, 0),
                    (0, 1, 0),
                    (0, -1, 0),
                    (0, 0, 1),
                    (0, 0, -1),
                ];
                if faces.iter().any(|&(a, b, c)| !at(z + a, y + b, x + c)) {
                    out.push([z, y, x]);
                }
            }
        }
    }
    out
}

/// O(n²) pooled HD95 with unit spacing; `None` when either surface is empty.
pub fn brute_hd95(a: &Grid<bool>, b: &Grid<bool>) -> Option<f64> {
    let (sa, sb) = (surface(a), surface(b));
    if sa.is_empty() || sb.is_empty() {
        return None;
    }
    let nearest = |p: &[i64; 3], set: &[[i64; 3]]| {
        set.iter()
            .map(|q| {
                let mut s = 0.0;
                for k in 0..3 {
                    let d = (p[k] - q[k]) as f64;
                    s += d * d;
                }
                s
            })
            .fold(f64::INFINITY, f64::min)
            .sqrt()
    };
    let mut all: Vec<f64> = sa.iter().map(|p| nearest(p, &sb)).collect();
    all.extend(sb.iter().map(|p| nearest(p, &sa)));
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let pos = 0.95 * (all.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(all.len() - 1);
    Some(all[lo] + (pos - lo as f64) * (all[hi] - all[lo]))
}

pub fn random_labels(rng: &mut impl Rng, dims: Dims, c: u8) -> Vec<u8> {
    (0..dims.len()).map(|_| rng.random_range(0..c)).collect()
}

/// A few random boxes; blobby enough to have real surfaces.
pub fn random_mask(rng: &mut impl Rng, dims: Dims) -> Grid<bool> {
    let boxes: Vec<[usize; 6]> = (0..rng.random_range(1..4))
        .map(|_| {
            let mut b = [0; 6];
            for (k, n) in dims.as_array().into_iter().enumerate() {
                let lo = rng.random_range(0..n);
                b[2 * k] = lo;
                b[2 * k + 1] = rng.random_range(lo..n) + 1;
            }
            b
        })
        .collect();
    Grid::from_fn(dims, |z, y, x| {
        boxes.iter().any(|b| {
            (b[0]..b[1]).contains(&z) && (b[2]..b[3]).contains(&y) && (b[4]..b[5]).contains(&x)
        })
    })
}
