//! COCO-style annotation documents built from cleaned masks.
//!
//! Segmentations are stored either as uncompressed run-length encoding
//! ([`Rle`], column-major, background run first) or as outer-boundary
//! polygons on the pixel-corner lattice. RLE is exact; polygons drop holes.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::postprocess::{connected_components, Connectivity, PixelBox};
use crate::tensor_io::BinaryMask;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("RLE counts sum to {sum}, expected {expected} for size {height}x{width}")]
    CountSumMismatch {
        sum: u64,
        expected: u64,
        height: usize,
        width: usize,
    },
    #[error("RLE counts invalid: {0}")]
    InvalidRuns(String),
    #[error("mask has no foreground pixels")]
    EmptyMask,
    #[error("mask is {mask_h}x{mask_w} but image {image_id} is {image_h}x{image_w}")]
    DimsMismatch {
        image_id: u64,
        mask_h: usize,
        mask_w: usize,
        image_h: usize,
        image_w: usize,
    },
    #[error("malformed polygon: {0}")]
    InvalidPolygon(String),
    #[error("annotation document parse error: {0}")]
    ParseError(#[from] serde_json::Error),
    #[error("referential integrity: {0}")]
    ReferentialIntegrityError(String),
    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u64 },
    #[error("annotation {id}: {reason}")]
    InconsistentAnnotation { id: u64, reason: String },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = AnnotateError> = std::result::Result<T, E>;

/// Uncompressed COCO run-length encoding.
///
/// Pixels are visited column by column; `counts` alternates background and
/// foreground runs starting with background, so a mask whose first pixel is
/// foreground starts with a zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    /// `[height, width]`
    pub size: [usize; 2],
    pub counts: Vec<u64>,
}

impl Rle {
    pub fn height(&self) -> usize {
        self.size[0]
    }

    pub fn width(&self) -> usize {
        self.size[1]
    }

    /// Foreground pixel count (sum of odd-indexed runs).
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let [height, width] = self.size;
        if self.counts.is_empty() {
            return Err(AnnotateError::InvalidRuns("no runs".into()));
        }
        if let Some(i) = self.counts.iter().skip(1).position(|&c| c == 0) {
            return Err(AnnotateError::InvalidRuns(format!(
                "zero-length run at index {}",
                i + 1
            )));
        }
        let sum = self
            .counts
            .iter()
            .try_fold(0u64, |acc, &c| acc.checked_add(c))
            .unwrap_or(u64::MAX);
        let expected = (height as u64).saturating_mul(width as u64);
        if sum != expected {
            return Err(AnnotateError::CountSumMismatch {
                sum,
                expected,
                height,
                width,
            });
        }
        Ok(())
    }
}

pub fn rle_encode(mask: &BinaryMask) -> Rle {
    let (h, w) = mask.dims();
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u64;
    for col in 0..w {
        for row in 0..h {
            let v = mask.get(row, col);
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
    }
    counts.push(run);
    Rle {
        size: [h, w],
        counts,
    }
}

pub fn rle_decode(rle: &Rle) -> Result<BinaryMask> {
    rle.validate()?;
    let [h, w] = rle.size;
    let mut mask = BinaryMask::zeros(h, w);
    let mut pos = 0usize;
    for (i, &run) in rle.counts.iter().enumerate() {
        let run = run as usize;
        if i % 2 == 1 {
            for p in pos..pos + run {
                mask.set(p % h, p / h, true);
            }
        }
        pos += run;
    }
    Ok(mask)
}

/// Tight bounding box of the foreground.
pub fn bbox_of_mask(mask: &BinaryMask) -> Result<PixelBox> {
    let mut it = mask.foreground();
    let (r, c) = it.next().ok_or(AnnotateError::EmptyMask)?;
    let (mut r0, mut r1, mut c0, mut c1) = (r, r, c, c);
    for (r, c) in it {
        r1 = r1.max(r);
        c0 = c0.min(c);
        c1 = c1.max(c);
        r0 = r0.min(r);
    }
    Ok(PixelBox {
        x: c0,
        y: r0,
        w: c1 - c0 + 1,
        h: r1 - r0 + 1,
    })
}

/// Closed polygon, vertices `(x, y)` on the pixel-corner lattice. The closing
/// edge back to the first vertex is implicit.
pub type Polygon = Vec<(f64, f64)>;

/// Outer boundary of every 8-connected blob, one polygon per blob in blob
/// label order.
///
/// Each polygon starts at the top-left corner of the blob's first raster
/// pixel and runs with positive signed area in `(x, y)` image coordinates
/// (`(0,0) (1,0) (1,1) (0,1)` for a lone pixel at the origin). Only corner
/// vertices are emitted. Holes are not traced.
pub fn trace_polygons(mask: &BinaryMask) -> Vec<Polygon> {
    let (h, w) = mask.dims();
    let blobs = connected_components(mask, Connectivity::Eight);
    let mut owner = vec![0u32; h * w];
    for b in &blobs {
        for &(r, c) in &b.pixels {
            owner[r * w + c] = b.label;
        }
    }
    let (hi, wi) = (h as i64, w as i64);
    blobs
        .iter()
        .map(|blob| {
            let inside = |col: i64, row: i64| {
                (0..wi).contains(&col)
                    && (0..hi).contains(&row)
                    && owner[(row * wi + col) as usize] == blob.label
            };
            let (r0, c0) = blob.pixels[0];
            let start = (c0 as i64, r0 as i64);
            trace_outline(start, inside)
        })
        .collect()
}

// Follows boundary edges with the blob on the (-dy, dx) side of the heading.
// Diagonal contacts are treated as connected so the outline wraps the whole
// 8-connected blob.
fn trace_outline(start: (i64, i64), inside: impl Fn(i64, i64) -> bool) -> Polygon {
    // pixel whose centre is v + (d + s) / 2 for heading d and side offset s
    let pixel = |v: (i64, i64), d: (i64, i64), s: (i64, i64)| {
        let cx = 2 * v.0 + d.0 + s.0;
        let cy = 2 * v.1 + d.1 + s.1;
        inside((cx - 1).div_euclid(2), (cy - 1).div_euclid(2))
    };
    let mut vertices = vec![(start.0 as f64, start.1 as f64)];
    let mut v = start;
    let mut d = (1i64, 0i64);
    loop {
        v = (v.0 + d.0, v.1 + d.1);
        let left = (-d.1, d.0);
        let right = (d.1, -d.0);
        let next = if pixel(v, d, right) {
            right
        } else if pixel(v, d, left) {
            d
        } else {
            left
        };
        if v == start {
            debug_assert_eq!(next, (1, 0));
            break;
        }
        if next != d {
            vertices.push((v.0 as f64, v.1 as f64));
        }
        d = next;
    }
    vertices
}

/// Rasterizes closed polygons (even-odd rule on pixel centres) and returns
/// the union of their interiors.
pub fn rasterize_polygons(polygons: &[Polygon], height: usize, width: usize) -> BinaryMask {
    let mut mask = BinaryMask::zeros(height, width);
    let mut crossings: Vec<f64> = Vec::new();
    for poly in polygons {
        let n = poly.len();
        if n < 3 {
            continue;
        }
        for row in 0..height {
            let yc = row as f64 + 0.5;
            crossings.clear();
            for i in 0..n {
                let (x0, y0) = poly[i];
                let (x1, y1) = poly[(i + 1) % n];
                if (y0 <= yc) != (y1 <= yc) {
                    crossings.push(x0 + (yc - y0) * (x1 - x0) / (y1 - y0));
                }
            }
            crossings.sort_by(f64::total_cmp);
            for pair in crossings.chunks_exact(2) {
                // pixel centres strictly inside [a, b)
                let a = (pair[0] - 0.5).ceil().max(0.0);
                let b = (pair[1] - 0.5).ceil().min(width as f64);
                let (a, b) = (a as usize, b.max(0.0) as usize);
                for col in a..b.max(a) {
                    mask.set(row, col, true);
                }
            }
        }
    }
    mask
}

/// Segmentation payload: RLE object or a list of flat `[x1, y1, x2, y2, ...]`
/// polygons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Segmentation {
    Rle(Rle),
    Polygons(Vec<Vec<f64>>),
}

impl Segmentation {
    pub fn from_polygons(polys: &[Polygon]) -> Self {
        Segmentation::Polygons(
            polys
                .iter()
                .map(|p| p.iter().flat_map(|&(x, y)| [x, y]).collect())
                .collect(),
        )
    }

    /// Rasterizes the segmentation onto a `height x width` image.
    pub fn decode(&self, height: usize, width: usize) -> Result<BinaryMask> {
        match self {
            Segmentation::Rle(rle) => {
                if rle.size != [height, width] {
                    return Err(AnnotateError::DimsMismatch {
                        image_id: 0,
                        mask_h: rle.size[0],
                        mask_w: rle.size[1],
                        image_h: height,
                        image_w: width,
                    });
                }
                rle_decode(rle)
            }
            Segmentation::Polygons(flat) => {
                let mut polys = Vec::with_capacity(flat.len());
                for p in flat {
                    if p.len() % 2 != 0 || p.len() < 6 {
                        return Err(AnnotateError::InvalidPolygon(format!(
                            "{} coordinates; need an even count of at least 6",
                            p.len()
                        )));
                    }
                    if p.iter().any(|v| !v.is_finite()) {
                        return Err(AnnotateError::InvalidPolygon(
                            "non-finite coordinate".into(),
                        ));
                    }
                    polys.push(p.chunks_exact(2).map(|c| (c[0], c[1])).collect());
                }
                Ok(rasterize_polygons(&polys, height, width))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageInfo {
    pub id: u64,
    pub file_name: String,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// Absent only for box-only detections.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<Segmentation>,
    pub area: f64,
    /// `[x, y, w, h]`
    pub bbox: [f64; 4],
    #[serde(default)]
    pub iscrowd: u8,
    /// Confidence, present on prediction documents.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AnnotationDoc {
    pub images: Vec<ImageInfo>,
    pub annotations: Vec<Annotation>,
    pub categories: Vec<Category>,
}

fn bbox_array(b: PixelBox) -> [f64; 4] {
    [b.x as f64, b.y as f64, b.w as f64, b.h as f64]
}

fn check_unique<I: IntoIterator<Item = u64>>(kind: &'static str, ids: I) -> Result<HashSet<u64>> {
    let mut seen = HashSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(AnnotateError::DuplicateId { kind, id });
        }
    }
    Ok(seen)
}

impl AnnotationDoc {
    pub fn image(&self, id: u64) -> Option<&ImageInfo> {
        self.images.iter().find(|i| i.id == id)
    }

    /// Checks id uniqueness, referential integrity and that each annotation's
    /// area and bbox agree with its decoded segmentation.
    pub fn validate(&self) -> Result<()> {
        check_unique("image", self.images.iter().map(|i| i.id))?;
        let categories = check_unique("category", self.categories.iter().map(|c| c.id))?;
        check_unique("annotation", self.annotations.iter().map(|a| a.id))?;
        if let Some(c) = self.categories.iter().find(|c| c.id == 0) {
            return Err(AnnotateError::ReferentialIntegrityError(format!(
                "category {:?} uses reserved id 0",
                c.name
            )));
        }
        let images: HashMap<u64, &ImageInfo> = self.images.iter().map(|i| (i.id, i)).collect();
        for ann in &self.annotations {
            let image = images.get(&ann.image_id).ok_or_else(|| {
                AnnotateError::ReferentialIntegrityError(format!(
                    "annotation {} references missing image {}",
                    ann.id, ann.image_id
                ))
            })?;
            if !categories.contains(&ann.category_id) {
                return Err(AnnotateError::ReferentialIntegrityError(format!(
                    "annotation {} references missing category {}",
                    ann.id, ann.category_id
                )));
            }
            check_annotation(ann, image)?;
        }
        Ok(())
    }
}

fn check_annotation(ann: &Annotation, image: &ImageInfo) -> Result<()> {
    let bad = |reason: String| AnnotateError::InconsistentAnnotation { id: ann.id, reason };
    if ann.iscrowd != 0 {
        return Err(bad("crowd annotations are not supported".into()));
    }
    if let Some(s) = ann.score {
        if !s.is_finite() {
            return Err(bad(format!("non-finite score {s}")));
        }
    }
    match &ann.segmentation {
        Some(seg) => {
            let mask = seg.decode(image.height, image.width).map_err(|e| match e {
                AnnotateError::DimsMismatch {
                    mask_h,
                    mask_w,
                    image_h,
                    image_w,
                    ..
                } => AnnotateError::DimsMismatch {
                    image_id: image.id,
                    mask_h,
                    mask_w,
                    image_h,
                    image_w,
                },
                other => other,
            })?;
            let bbox = bbox_of_mask(&mask).map_err(|_| bad("segmentation is empty".into()))?;
            if ann.area != mask.count() as f64 {
                return Err(bad(format!(
                    "area {} but segmentation covers {} pixels",
                    ann.area,
                    mask.count()
                )));
            }
            if ann.bbox != bbox_array(bbox) {
                return Err(bad(format!(
                    "bbox {:?} but segmentation bound is {:?}",
                    ann.bbox,
                    bbox_array(bbox)
                )));
            }
        }
        None => {
            let [x, y, w, h] = ann.bbox;
            if ![x, y, w, h].iter().all(|v| v.is_finite()) || w <= 0.0 || h <= 0.0 {
                return Err(bad(format!("degenerate bbox {:?}", ann.bbox)));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SegmentationMode {
    #[default]
    Rle,
    Polygon,
}

/// One cleaned object mask to annotate.
#[derive(Debug, Clone)]
pub struct MaskInput {
    pub image_id: u64,
    pub category_id: u64,
    pub mask: BinaryMask,
}

/// Assembles a document from per-object masks. Annotation ids run from 1 in
/// input order. Area and bbox are taken from the encoded segmentation.
pub fn build_annotations(
    images: &[ImageInfo],
    categories: &[Category],
    masks: &[MaskInput],
    mode: SegmentationMode,
) -> Result<AnnotationDoc> {
    let mut doc = AnnotationDoc {
        images: images.to_vec(),
        annotations: Vec::with_capacity(masks.len()),
        categories: categories.to_vec(),
    };
    for (i, input) in masks.iter().enumerate() {
        let image = doc.image(input.image_id).ok_or_else(|| {
            AnnotateError::ReferentialIntegrityError(format!(
                "mask {} references missing image {}",
                i, input.image_id
            ))
        })?;
        if input.mask.dims() != (image.height, image.width) {
            return Err(AnnotateError::DimsMismatch {
                image_id: image.id,
                mask_h: input.mask.height(),
                mask_w: input.mask.width(),
                image_h: image.height,
                image_w: image.width,
            });
        }
        if input.mask.is_empty() {
            return Err(AnnotateError::EmptyMask);
        }
        let (segmentation, decoded) = match mode {
            SegmentationMode::Rle => (Segmentation::Rle(rle_encode(&input.mask)), None),
            SegmentationMode::Polygon => {
                let polys = trace_polygons(&input.mask);
                let raster = rasterize_polygons(&polys, image.height, image.width);
                (Segmentation::from_polygons(&polys), Some(raster))
            }
        };
        let decoded = decoded.as_ref().unwrap_or(&input.mask);
        doc.annotations.push(Annotation {
            id: i as u64 + 1,
            image_id: input.image_id,
            category_id: input.category_id,
            segmentation: Some(segmentation),
            area: decoded.count() as f64,
            bbox: bbox_array(bbox_of_mask(decoded)?),
            iscrowd: 0,
            score: None,
        });
    }
    doc.validate()?;
    Ok(doc)
}

pub fn encode_annotation_doc(doc: &AnnotationDoc) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(doc).expect("document serializes");
    out.push(b'\n');
    out
}

/// Parses and validates a document.
pub fn decode_annotation_doc(bytes: &[u8]) -> Result<AnnotationDoc> {
    let doc: AnnotationDoc = serde_json::from_slice(bytes)?;
    doc.validate()?;
    Ok(doc)
}

pub fn write_annotation_doc(doc: &AnnotationDoc, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_annotation_doc(doc)).map_err(|source| AnnotateError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_annotation_doc(path: impl AsRef<Path>) -> Result<AnnotationDoc> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| AnnotateError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_annotation_doc(&bytes)
}
