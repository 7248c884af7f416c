//! Score map to clean per-class masks.
//!
//! The flow is: thresholded argmax over channels ([`argmax_label_map`]), a
//! per-class split ([`extract_class_mask`]), blob detection
//! ([`connected_components`]) and area-based filtering ([`filter_blobs`]),
//! optionally followed by [`fill_holes`]. [`clean_mask`] runs the last three
//! in one call.

use std::collections::VecDeque;

use thiserror::Error;

use crate::tensor_io::{BinaryMask, LabelMap, ScoreMap};

#[derive(Debug, Error, PartialEq)]
pub enum PostprocessError {
    #[error("score map needs at least 2 channels (background + one class), found {0}")]
    ChannelMismatch(usize),
    #[error("score map has {0} channels; label maps hold at most 256 classes")]
    TooManyChannels(usize),
    #[error("threshold must be finite and non-negative, got {0}")]
    InvalidThreshold(f32),
    #[error("class 0 is background and has no mask")]
    BackgroundClassRequested,
    #[error("keep_largest must be at least 1")]
    InvalidKeepLargest,
}

/// Pixel adjacency used for blob detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl Connectivity {
    pub fn from_neighbors(n: u32) -> Option<Self> {
        match n {
            4 => Some(Connectivity::Four),
            8 => Some(Connectivity::Eight),
            _ => None,
        }
    }

    pub fn neighbors(self) -> u32 {
        match self {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

/// Axis-aligned pixel box: `x`/`y` are the min column/row, `w`/`h` the extents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// One connected foreground component.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Blob {
    /// Component id, starting at 1 in raster order of each blob's first pixel.
    pub label: u32,
    /// `(row, col)` pixels in raster order.
    pub pixels: Vec<(usize, usize)>,
    pub bbox: PixelBox,
}

impl Blob {
    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterPolicy {
    pub min_area: usize,
    pub keep_largest: Option<usize>,
    pub connectivity: Connectivity,
    pub fill_holes: bool,
}

impl Default for FilterPolicy {
    fn default() -> Self {
        Self {
            min_area: 100,
            keep_largest: None,
            connectivity: Connectivity::Eight,
            fill_holes: false,
        }
    }
}

impl FilterPolicy {
    pub fn validate(&self) -> Result<(), PostprocessError> {
        if self.keep_largest == Some(0) {
            return Err(PostprocessError::InvalidKeepLargest);
        }
        Ok(())
    }
}

/// Per-pixel argmax over channels. Ties go to the lowest channel; a pixel whose
/// winning score is below `threshold` becomes background.
pub fn argmax_label_map(scores: &ScoreMap, threshold: f32) -> Result<LabelMap, PostprocessError> {
    let channels = scores.channels();
    if channels < 2 {
        return Err(PostprocessError::ChannelMismatch(channels));
    }
    if channels > 256 {
        return Err(PostprocessError::TooManyChannels(channels));
    }
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(PostprocessError::InvalidThreshold(threshold));
    }
    let data = scores
        .data()
        .chunks_exact(channels)
        .map(|px| {
            let (best, best_score) = px
                .iter()
                .enumerate()
                .skip(1)
                .fold((0usize, px[0]), |(bi, bs), (i, &s)| {
                    if s > bs {
                        (i, s)
                    } else {
                        (bi, bs)
                    }
                });
            if best_score < threshold {
                0
            } else {
                best as u8
            }
        })
        .collect();
    Ok(LabelMap::new(scores.height(), scores.width(), data).expect("dims carried over"))
}

pub fn extract_class_mask(labels: &LabelMap, class_id: u8) -> Result<BinaryMask, PostprocessError> {
    if class_id == 0 {
        return Err(PostprocessError::BackgroundClassRequested);
    }
    let data = labels.data().iter().map(|&l| l == class_id).collect();
    Ok(BinaryMask::new(labels.height(), labels.width(), data).expect("dims carried over"))
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn with_capacity(n: usize) -> Self {
        Self {
            parent: Vec::with_capacity(n),
        }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    // keeps the smaller id as root so roots follow raster order
    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Labels the foreground of `mask` into connected blobs.
///
/// Two-pass union-find labelling. Blob labels are assigned in raster-scan
/// order of each blob's first pixel, so the output is fully determined by the
/// mask.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Blob> {
    let (h, w) = mask.dims();
    const NONE: u32 = u32::MAX;
    let mut provisional = vec![NONE; h * w];
    let mut sets = DisjointSet::with_capacity(64);

    for row in 0..h {
        for col in 0..w {
            if !mask.get(row, col) {
                continue;
            }
            let mut neighbors = [NONE; 4];
            if col > 0 {
                neighbors[0] = provisional[row * w + col - 1];
            }
            if row > 0 {
                let up = (row - 1) * w;
                neighbors[1] = provisional[up + col];
                if connectivity == Connectivity::Eight {
                    if col > 0 {
                        neighbors[2] = provisional[up + col - 1];
                    }
                    if col + 1 < w {
                        neighbors[3] = provisional[up + col + 1];
                    }
                }
            }
            let mut label = NONE;
            for &n in neighbors.iter().filter(|&&n| n != NONE) {
                if label == NONE {
                    label = n;
                } else {
                    sets.union(label, n);
                }
            }
            if label == NONE {
                label = sets.make();
            }
            provisional[row * w + col] = label;
        }
    }

    // resolve roots; first-seen order in the raster scan gives final labels
    let mut root_to_blob: Vec<u32> = vec![NONE; sets.parent.len()];
    let mut blobs: Vec<Blob> = Vec::new();
    for row in 0..h {
        for col in 0..w {
            let p = provisional[row * w + col];
            if p == NONE {
                continue;
            }
            let root = sets.find(p) as usize;
            if root_to_blob[root] == NONE {
                root_to_blob[root] = blobs.len() as u32;
                blobs.push(Blob {
                    label: blobs.len() as u32 + 1,
                    pixels: Vec::new(),
                    bbox: PixelBox {
                        x: col,
                        y: row,
                        w: 1,
                        h: 1,
                    },
                });
            }
            let blob = &mut blobs[root_to_blob[root] as usize];
            blob.pixels.push((row, col));
        }
    }
    for blob in &mut blobs {
        let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
        for &(r, c) in &blob.pixels {
            r0 = r0.min(r);
            c0 = c0.min(c);
            r1 = r1.max(r);
            c1 = c1.max(c);
        }
        blob.bbox = PixelBox {
            x: c0,
            y: r0,
            w: c1 - c0 + 1,
            h: r1 - r0 + 1,
        };
    }
    blobs
}

/// Union of the blobs that survive `policy`, rasterized at `dims = (height, width)`.
///
/// A blob survives if its area is at least `min_area`; with `keep_largest = K`
/// only the K largest of those remain (equal areas ordered by lower label).
/// `policy.fill_holes` is applied to the result.
pub fn filter_blobs(blobs: &[Blob], dims: (usize, usize), policy: &FilterPolicy) -> BinaryMask {
    let mut survivors: Vec<&Blob> = blobs
        .iter()
        .filter(|b| b.area() >= policy.min_area)
        .collect();
    if let Some(k) = policy.keep_largest {
        survivors.sort_by(|a, b| b.area().cmp(&a.area()).then(a.label.cmp(&b.label)));
        survivors.truncate(k);
    }
    let mut out = BinaryMask::zeros(dims.0, dims.1);
    for blob in survivors {
        for &(r, c) in &blob.pixels {
            out.set(r, c, true);
        }
    }
    if policy.fill_holes {
        out = fill_holes(&out);
    }
    out
}

/// Fills background regions that are not 4-connected to the image border.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = mask.dims();
    if h == 0 || w == 0 {
        return mask.clone();
    }
    let mut outside = vec![false; h * w];
    let mut queue = VecDeque::new();
    let seed = |r: usize, c: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<_>| {
        let i = r * w + c;
        if !mask.get(r, c) && !outside[i] {
            outside[i] = true;
            queue.push_back((r, c));
        }
    };
    for c in 0..w {
        seed(0, c, &mut outside, &mut queue);
        seed(h - 1, c, &mut outside, &mut queue);
    }
    for r in 0..h {
        seed(r, 0, &mut outside, &mut queue);
        seed(r, w - 1, &mut outside, &mut queue);
    }
    while let Some((r, c)) = queue.pop_front() {
        if r > 0 {
            seed(r - 1, c, &mut outside, &mut queue);
        }
        if r + 1 < h {
            seed(r + 1, c, &mut outside, &mut queue);
        }
        if c > 0 {
            seed(r, c - 1, &mut outside, &mut queue);
        }
        if c + 1 < w {
            seed(r, c + 1, &mut outside, &mut queue);
        }
    }
    BinaryMask::new(h, w, outside.into_iter().map(|o| !o).collect()).expect("same dims")
}

/// Blob detection plus filtering in one step.
pub fn clean_mask(mask: &BinaryMask, policy: &FilterPolicy) -> BinaryMask {
    let blobs = connected_components(mask, policy.connectivity);
    filter_blobs(&blobs, mask.dims(), policy)
}

/// Class masks of one score map after cleanup, `(class_id, mask)` by ascending
/// class. Classes whose cleaned mask is empty are omitted.
pub fn class_masks(
    scores: &ScoreMap,
    threshold: f32,
    policy: &FilterPolicy,
) -> Result<Vec<(u8, BinaryMask)>, PostprocessError> {
    policy.validate()?;
    let labels = argmax_label_map(scores, threshold)?;
    let mut present = vec![false; scores.channels()];
    for &l in labels.data() {
        present[l as usize] = true;
    }
    let mut out = Vec::new();
    for (class, _) in present.iter().enumerate().skip(1).filter(|(_, &p)| p) {
        let class = class as u8;
        let cleaned = clean_mask(&extract_class_mask(&labels, class)?, policy);
        if !cleaned.is_empty() {
            out.push((class, cleaned));
        }
    }
    Ok(out)
}
