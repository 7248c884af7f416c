//! Independent reference implementations and fixture generators shared by the
//! integration tests. Nothing here calls into the code paths it is used to
//! check.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use maskgen::annotate::{AnnotationDoc, Segmentation};
use maskgen::tensor_io::{BinaryMask, ScoreMap};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

pub fn random_mask(rng: &mut StdRng, h: usize, w: usize, density: f64) -> BinaryMask {
    BinaryMask::from_fn(h, w, |_, _| rng.gen_bool(density))
}

/// Components by stack-based flood fill, as sets of `(row, col)`.
pub fn flood_fill_components(mask: &BinaryMask, eight: bool) -> Vec<BTreeSet<(usize, usize)>> {
    let (h, w) = mask.dims();
    let mut seen = vec![vec![false; w]; h];
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) || seen[r][c] {
                continue;
            }
            let mut set = BTreeSet::new();
            let mut stack = vec![(r, c)];
            seen[r][c] = true;
            while let Some((y, x)) = stack.pop() {
                set.insert((y, x));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if (dy == 0 && dx == 0) || (!eight && dy != 0 && dx != 0) {
                            continue;
                        }
                        let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        let (ny, nx) = (ny as usize, nx as usize);
                        if mask.get(ny, nx) && !seen[ny][nx] {
                            seen[ny][nx] = true;
                            stack.push((ny, nx));
                        }
                    }
                }
            }
            out.push(set);
        }
    }
    out
}

/// Direct bilinear formula with border clamping.
pub fn bilinear_oracle(get: &dyn Fn(usize, usize) -> f64, h: usize, w: usize, x: f64, y: f64) -> f64 {
    let xc = x.max(0.0).min((w - 1) as f64);
    let yc = y.max(0.0).min((h - 1) as f64);
    let j0 = xc.floor() as usize;
    let i0 = yc.floor() as usize;
    let j1 = if j0 + 1 < w { j0 + 1 } else { j0 };
    let i1 = if i0 + 1 < h { i0 + 1 } else { i0 };
    let dx = xc - j0 as f64;
    let dy = yc - i0 as f64;
    (1.0 - dx) * (1.0 - dy) * get(i0, j0)
        + dx * (1.0 - dy) * get(i0, j1)
        + (1.0 - dx) * dy * get(i1, j0)
        + dx * dy * get(i1, j1)
}

/// Dense `h x w x c` values for the naive kernels.
pub struct Grid {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub v: Vec<f64>,
}

impl Grid {
    pub fn at(&self, y: usize, x: usize, ch: usize) -> f64 {
        self.v[(y * self.w + x) * self.c + ch]
    }
}

/// Sample-loop RoIAlign: each output bin evaluates `n * n` points at
/// `(k + 0.5) / n` of the bin and reduces them.
pub fn naive_roi_align(
    g: &Grid,
    roi: [f64; 4],
    out_h: usize,
    out_w: usize,
    n: usize,
    max: bool,
) -> Vec<f64> {
    let [x1, y1, x2, y2] = roi;
    let mut out = Vec::new();
    for by in 0..out_h {
        for bx in 0..out_w {
            for ch in 0..g.c {
                let mut samples = Vec::new();
                for sy in 0..n {
                    for sx in 0..n {
                        let fy = (by as f64 + (sy as f64 + 0.5) / n as f64) / out_h as f64;
                        let fx = (bx as f64 + (sx as f64 + 0.5) / n as f64) / out_w as f64;
                        let y = y1 + fy * (y2 - y1);
                        let x = x1 + fx * (x2 - x1);
                        samples.push(bilinear_oracle(&|i, j| g.at(i, j, ch), g.h, g.w, x, y));
                    }
                }
                let v = if max {
                    samples.iter().cloned().fold(f64::MIN, f64::max)
                } else {
                    samples.iter().sum::<f64>() / samples.len() as f64
                };
                out.push(v);
            }
        }
    }
    out
}

/// Quantized pooling by exhaustive scan of each bin's integer pixels.
pub fn naive_roi_pool(g: &Grid, roi: [f64; 4], out_h: usize, out_w: usize) -> Vec<f64> {
    let xs = roi[0].floor() as i64;
    let ys = roi[1].floor() as i64;
    let rw = ((roi[2].ceil() as i64) - xs).max(1) as f64;
    let rh = ((roi[3].ceil() as i64) - ys).max(1) as f64;
    let mut out = Vec::new();
    for by in 0..out_h {
        for bx in 0..out_w {
            let y_lo = ys + (by as f64 * rh / out_h as f64).floor() as i64;
            let y_hi = ys + ((by + 1) as f64 * rh / out_h as f64).ceil() as i64;
            let x_lo = xs + (bx as f64 * rw / out_w as f64).floor() as i64;
            let x_hi = xs + ((bx + 1) as f64 * rw / out_w as f64).ceil() as i64;
            for ch in 0..g.c {
                let mut best: Option<f64> = None;
                for y in y_lo..y_hi {
                    for x in x_lo..x_hi {
                        if y >= 0 && x >= 0 && (y as usize) < g.h && (x as usize) < g.w {
                            let v = g.at(y as usize, x as usize, ch);
                            best = Some(best.map_or(v, |b: f64| b.max(v)));
                        }
                    }
                }
                out.push(best.unwrap_or(0.0));
            }
        }
    }
    out
}

/// AP by sweeping every rank cutoff: collect (recall, precision) at each
/// cutoff, then integrate the interpolated precision over recall levels.
pub fn ap_threshold_sweep(flags: &[bool], num_gt: usize) -> f64 {
    let mut points = Vec::new();
    for k in 1..=flags.len() {
        let tp = flags[..k].iter().filter(|&&f| f).count();
        points.push((tp as f64 / num_gt as f64, tp as f64 / k as f64));
    }
    let mut levels: Vec<f64> = points.iter().map(|p| p.0).filter(|&r| r > 0.0).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut ap = 0.0;
    let mut prev = 0.0;
    for r in levels {
        let p = points
            .iter()
            .filter(|q| q.0 >= r)
            .map(|q| q.1)
            .fold(0.0, f64::max);
        ap += (r - prev) * p;
        prev = r;
    }
    ap
}

/// Greedy matching by explicit search over the IoU matrix. Returns TP flags
/// in detection input order.
pub fn greedy_oracle(scores: &[f64], iou: &[Vec<f64>], thr: f64) -> Vec<bool> {
    let n_gt = iou.first().map_or(0, Vec::len);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // stable: equal scores keep input order
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut used = vec![false; n_gt];
    let mut flags = vec![false; scores.len()];
    for d in order {
        let candidates: Vec<usize> = (0..n_gt).filter(|&g| !used[g]).collect();
        if candidates.is_empty() {
            continue;
        }
        let best_iou = candidates.iter().map(|&g| iou[d][g]).fold(f64::MIN, f64::max);
        let g = *candidates.iter().find(|&&g| iou[d][g] == best_iou).unwrap();
        if best_iou >= thr {
            used[g] = true;
            flags[d] = true;
        }
    }
    flags
}

pub fn pixel_iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let mut i = 0;
    let mut u = 0;
    for r in 0..a.height() {
        for c in 0..a.width() {
            let (p, q) = (a.get(r, c), b.get(r, c));
            if p && q {
                i += 1;
            }
            if p || q {
                u += 1;
            }
        }
    }
    if u == 0 {
        0.0
    } else {
        i as f64 / u as f64
    }
}

pub fn rect_iou(a: [f64; 4], b: [f64; 4]) -> f64 {
    let ix = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let iy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a[2] * a[3] + b[2] * b[3] - inter)
}

/// RLE decoding written against the column-major definition.
pub fn decode_rle_oracle(size: [usize; 2], counts: &[u64]) -> BinaryMask {
    let [h, w] = size;
    let mut flat = Vec::with_capacity(h * w);
    for (i, &c) in counts.iter().enumerate() {
        for _ in 0..c {
            flat.push(i % 2 == 1);
        }
    }
    BinaryMask::from_fn(h, w, |r, c| flat[c * h + r])
}

/// Even-odd point-in-polygon at pixel centres.
pub fn point_in_polygon(poly: &[(f64, f64)], px: f64, py: f64) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

pub fn decode_segmentation_oracle(seg: &Segmentation, h: usize, w: usize) -> BinaryMask {
    match seg {
        Segmentation::Rle(r) => decode_rle_oracle(r.size, &r.counts),
        Segmentation::Polygons(polys) => {
            let polys: Vec<Vec<(f64, f64)>> = polys
                .iter()
                .map(|p| p.chunks(2).map(|c| (c[0], c[1])).collect())
                .collect();
            BinaryMask::from_fn(h, w, |r, c| {
                polys
                    .iter()
                    .any(|p| point_in_polygon(p, c as f64 + 0.5, r as f64 + 0.5))
            })
        }
    }
}

pub fn tight_bbox(mask: &BinaryMask) -> Option<[f64; 4]> {
    let pts: Vec<(usize, usize)> = (0..mask.height())
        .flat_map(|r| (0..mask.width()).map(move |c| (r, c)))
        .filter(|&(r, c)| mask.get(r, c))
        .collect();
    let r0 = pts.iter().map(|p| p.0).min()?;
    let r1 = pts.iter().map(|p| p.0).max()?;
    let c0 = pts.iter().map(|p| p.1).min()?;
    let c1 = pts.iter().map(|p| p.1).max()?;
    Some([c0 as f64, r0 as f64, (c1 - c0 + 1) as f64, (r1 - r0 + 1) as f64])
}

/// Monolithic scorer: decodes, groups, matches greedily, integrates AP by
/// threshold sweep and averages, without touching the library's eval code.
pub fn brute_force_map(preds: &AnnotationDoc, gt: &AnnotationDoc, thr: f64, segm: bool) -> f64 {
    let dims: BTreeMap<u64, (usize, usize)> =
        gt.images.iter().map(|i| (i.id, (i.height, i.width))).collect();
    let region = |a: &maskgen::annotate::Annotation| -> (Option<BinaryMask>, [f64; 4]) {
        let (h, w) = dims[&a.image_id];
        let m = segm.then(|| decode_segmentation_oracle(a.segmentation.as_ref().unwrap(), h, w));
        (m, a.bbox)
    };
    let iou = |a: &(Option<BinaryMask>, [f64; 4]), b: &(Option<BinaryMask>, [f64; 4])| {
        if segm {
            pixel_iou(a.0.as_ref().unwrap(), b.0.as_ref().unwrap())
        } else {
            rect_iou(a.1, b.1)
        }
    };
    let classes: BTreeSet<u64> = gt.annotations.iter().map(|a| a.category_id).collect();
    let mut aps = Vec::new();
    for &class in &classes {
        let num_gt = gt.annotations.iter().filter(|a| a.category_id == class).count();
        // (score, doc index, tp)
        let mut rows: Vec<(f64, usize, bool)> = Vec::new();
        for img in &gt.images {
            let gts: Vec<_> = gt
                .annotations
                .iter()
                .filter(|a| a.image_id == img.id && a.category_id == class)
                .map(region)
                .collect();
            let dets: Vec<(usize, f64, _)> = preds
                .annotations
                .iter()
                .enumerate()
                .filter(|(_, a)| a.image_id == img.id && a.category_id == class)
                .map(|(i, a)| (i, a.score.unwrap(), region(a)))
                .collect();
            let scores: Vec<f64> = dets.iter().map(|d| d.1).collect();
            let m: Vec<Vec<f64>> = dets
                .iter()
                .map(|d| gts.iter().map(|g| iou(&d.2, g)).collect())
                .collect();
            let m = if gts.is_empty() { vec![vec![]; dets.len()] } else { m };
            let flags = greedy_oracle(&scores, &m, thr);
            for (d, f) in dets.iter().zip(flags) {
                rows.push((d.1, d.0, f));
            }
        }
        rows.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let flags: Vec<bool> = rows.iter().map(|r| r.2).collect();
        aps.push(ap_threshold_sweep(&flags, num_gt));
    }
    aps.iter().sum::<f64>() / aps.len() as f64
}

/// One synthetic object: a rectangle or an ellipse of a known class.
#[derive(Debug, Clone)]
pub struct SyntheticObject {
    pub class: u8,
    pub mask: BinaryMask,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub scores: ScoreMap,
    pub objects: Vec<SyntheticObject>,
    pub noise_blobs: usize,
}

fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let (h, w) = mask.dims();
    let r = radius as i64;
    BinaryMask::from_fn(h, w, |y, x| {
        (-r..=r).any(|dy| {
            (-r..=r).any(|dx| {
                let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                ny >= 0 && nx >= 0 && ny < h as i64 && nx < w as i64 && mask.get(ny as usize, nx as usize)
            })
        })
    })
}

fn overlaps(a: &BinaryMask, b: &BinaryMask) -> bool {
    a.data().iter().zip(b.data()).any(|(&p, &q)| p && q)
}

fn union_into(acc: &mut BinaryMask, m: &BinaryMask) {
    for r in 0..m.height() {
        for c in 0..m.width() {
            if m.get(r, c) {
                acc.set(r, c, true);
            }
        }
    }
}

/// 1-3 objects of distinct classes (area >= 400 px), up to 5 speckle blobs
/// (area < 50 px) and sub-threshold clutter, on a `size x size` map with
/// `classes + 1` channels.
pub fn synthetic_scene(rng: &mut StdRng, size: usize, classes: u8) -> SyntheticScene {
    let n_objects = rng.gen_range(1..=3usize.min(classes as usize));
    let mut class_pool: Vec<u8> = (1..=classes).collect();
    let mut occupied = BinaryMask::zeros(size, size);
    let mut objects: Vec<SyntheticObject> = Vec::new();
    let mut tries = 0;
    while objects.len() < n_objects {
        tries += 1;
        if tries % 200 == 0 {
            // start over when the layout is too crowded to finish
            occupied = BinaryMask::zeros(size, size);
            class_pool = (1..=classes).collect();
            objects.clear();
        }
        let idx = rng.gen_range(0..class_pool.len());
        let ellipse = rng.gen_bool(0.5);
        let bh = rng.gen_range(22..(size * 3 / 8).max(26));
        let bw = rng.gen_range(22..(size * 3 / 8).max(26));
        let top = rng.gen_range(1..size - bh - 1);
        let left = rng.gen_range(1..size - bw - 1);
        let mask = if ellipse {
            let (cy, cx) = (top as f64 + bh as f64 / 2.0, left as f64 + bw as f64 / 2.0);
            let (ry, rx) = (bh as f64 / 2.0, bw as f64 / 2.0);
            BinaryMask::from_fn(size, size, |r, c| {
                let dy = (r as f64 + 0.5 - cy) / ry;
                let dx = (c as f64 + 0.5 - cx) / rx;
                dy * dy + dx * dx <= 1.0
            })
        } else {
            BinaryMask::from_fn(size, size, |r, c| {
                (top..top + bh).contains(&r) && (left..left + bw).contains(&c)
            })
        };
        if mask.count() < 400 || overlaps(&dilate(&mask, 3), &occupied) {
            continue;
        }
        union_into(&mut occupied, &mask);
        objects.push(SyntheticObject {
            class: class_pool.remove(idx),
            mask,
        });
    }

    let mut speckles: Vec<(u8, BinaryMask)> = Vec::new();
    let target = rng.gen_range(0..=5usize);
    let mut attempts = 0;
    while speckles.len() < target && attempts < 500 {
        attempts += 1;
        let bh = rng.gen_range(1..=7usize);
        let bw = rng.gen_range(1..=7usize);
        let top = rng.gen_range(0..size - bh);
        let left = rng.gen_range(0..size - bw);
        let m = BinaryMask::from_fn(size, size, |r, c| {
            (top..top + bh).contains(&r) && (left..left + bw).contains(&c)
        });
        if m.count() >= 50 || overlaps(&dilate(&m, 3), &occupied) {
            continue;
        }
        union_into(&mut occupied, &m);
        speckles.push((rng.gen_range(1..=classes), m));
    }

    let channels = classes as usize + 1;
    let mut data = vec![0f32; size * size * channels];
    for r in 0..size {
        for c in 0..size {
            let px = &mut data[(r * size + c) * channels..(r * size + c + 1) * channels];
            for v in px.iter_mut().skip(1) {
                *v = rng.gen_range(0.0..0.2);
            }
            let owner = objects
                .iter()
                .find(|o| o.mask.get(r, c))
                .map(|o| o.class)
                .or_else(|| speckles.iter().find(|s| s.1.get(r, c)).map(|s| s.0));
            match owner {
                Some(class) => {
                    px[0] = rng.gen_range(0.05..0.3);
                    px[class as usize] = rng.gen_range(0.6..0.95);
                }
                None if rng.gen_bool(0.1) => {
                    // class wins the argmax but stays under the 0.5 threshold
                    px[0] = rng.gen_range(0.1..0.25);
                    let k = rng.gen_range(1..channels);
                    px[k] = rng.gen_range(0.3..0.45);
                }
                None => px[0] = rng.gen_range(0.55..0.9),
            }
        }
    }
    SyntheticScene {
        scores: ScoreMap::new(size, size, channels, data).unwrap(),
        objects,
        noise_blobs: speckles.len(),
    }
}
