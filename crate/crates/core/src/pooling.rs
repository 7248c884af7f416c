//! Reference RoIAlign and RoIPool kernels.
//!
//! Coordinates are continuous feature-map coordinates where pixel `(row i,
//! col j)` sits at `(x = j, y = i)`. RoIAlign never rounds: the region and its
//! bins keep real-valued boundaries, a fixed grid of points inside every bin
//! is sampled bilinearly, and the samples are reduced by max (default) or
//! mean. RoIPool snaps the region and bins to whole pixels first, which is
//! what makes it shift by up to a pixel under sub-pixel region moves.

use thiserror::Error;

use crate::tensor_io::{ScoreMap, TensorIoError};

#[derive(Debug, Error, PartialEq)]
pub enum PoolingError {
    #[error("invalid RoI ({x1}, {y1}, {x2}, {y2}): need finite x2 > x1 and y2 > y1")]
    InvalidRoi { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("invalid pooling spec: {0}")]
    InvalidSpec(String),
    #[error("feature map data length {len} does not match {height}x{width}x{channels}")]
    LengthMismatch {
        len: usize,
        height: usize,
        width: usize,
        channels: usize,
    },
    #[error("feature map values must be finite")]
    NonFinite,
    #[error("feature map is empty ({height}x{width}x{channels})")]
    EmptyFeatureMap {
        height: usize,
        width: usize,
        channels: usize,
    },
}

/// Dense `f64` feature map, row-major `(y, x, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, PoolingError> {
        if height * width * channels != data.len() {
            return Err(PoolingError::LengthMismatch {
                len: data.len(),
                height,
                width,
                channels,
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(PoolingError::NonFinite);
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Converts to an `f32` score map for storage. Fails if a value
    /// overflows `f32`.
    pub fn to_score_map(&self) -> Result<ScoreMap, TensorIoError> {
        ScoreMap::new(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| v as f32).collect(),
        )
    }
}

impl From<&ScoreMap> for FeatureMap {
    fn from(s: &ScoreMap) -> Self {
        Self {
            height: s.height(),
            width: s.width(),
            channels: s.channels(),
            data: s.data().iter().map(|&v| f64::from(v)).collect(),
        }
    }
}

/// Region of interest in feature-map coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roi {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl Roi {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, PoolingError> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x2 <= x1 || y2 <= y1 {
            return Err(PoolingError::InvalidRoi { x1, y1, x2, y2 });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolMode {
    #[default]
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub out_h: usize,
    pub out_w: usize,
    /// Sample points per bin side; `n` gives `n * n` points per bin.
    pub samples_per_side: usize,
    pub mode: PoolMode,
}

impl PoolSpec {
    /// `out_h x out_w` bins with 2x2 samples and max reduction.
    pub fn new(out_h: usize, out_w: usize) -> Self {
        Self {
            out_h,
            out_w,
            samples_per_side: 2,
            mode: PoolMode::Max,
        }
    }

    pub fn validate(&self) -> Result<(), PoolingError> {
        if self.out_h == 0 || self.out_w == 0 {
            return Err(PoolingError::InvalidSpec(format!(
                "output size {}x{} must be at least 1x1",
                self.out_h, self.out_w
            )));
        }
        if self.samples_per_side == 0 {
            return Err(PoolingError::InvalidSpec(
                "samples per side must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

fn check_non_empty(f: &FeatureMap) -> Result<(), PoolingError> {
    if f.height == 0 || f.width == 0 || f.channels == 0 {
        return Err(PoolingError::EmptyFeatureMap {
            height: f.height,
            width: f.width,
            channels: f.channels,
        });
    }
    Ok(())
}

/// Bilinear interpolation at `(x, y)`, clamped to the map border.
///
/// Panics on a map with zero height or width.
pub fn bilinear_sample(f: &FeatureMap, x: f64, y: f64, c: usize) -> f64 {
    let x = x.clamp(0.0, (f.width - 1) as f64);
    let y = y.clamp(0.0, (f.height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(f.width - 1);
    let y1 = (y0 + 1).min(f.height - 1);
    let dx = x - x0 as f64;
    let dy = y - y0 as f64;
    let top = f.get(y0, x0, c) * (1.0 - dx) + f.get(y0, x1, c) * dx;
    let bottom = f.get(y1, x0, c) * (1.0 - dx) + f.get(y1, x1, c) * dx;
    top * (1.0 - dy) + bottom * dy
}

/// RoIAlign over all channels; output is `out_h x out_w x channels`.
pub fn roi_align(f: &FeatureMap, roi: &Roi, spec: &PoolSpec) -> Result<FeatureMap, PoolingError> {
    spec.validate()?;
    check_non_empty(f)?;
    let n = spec.samples_per_side;
    let bin_w = roi.width() / spec.out_w as f64;
    let bin_h = roi.height() / spec.out_h as f64;
    // sample offsets within a bin are shared by every bin
    let offsets: Vec<f64> = (0..n).map(|k| (k as f64 + 0.5) / n as f64).collect();
    let mut out = Vec::with_capacity(spec.out_h * spec.out_w * f.channels);
    let mut xs = vec![0.0; n];
    for by in 0..spec.out_h {
        for bx in 0..spec.out_w {
            for (x, off) in xs.iter_mut().zip(&offsets) {
                *x = roi.x1 + bin_w * (bx as f64 + off);
            }
            for c in 0..f.channels {
                let mut acc = match spec.mode {
                    PoolMode::Max => f64::NEG_INFINITY,
                    PoolMode::Avg => 0.0,
                };
                for off_y in &offsets {
                    let y = roi.y1 + bin_h * (by as f64 + off_y);
                    for &x in &xs {
                        let v = bilinear_sample(f, x, y, c);
                        match spec.mode {
                            PoolMode::Max => acc = acc.max(v),
                            PoolMode::Avg => acc += v,
                        }
                    }
                }
                if spec.mode == PoolMode::Avg {
                    acc /= (n * n) as f64;
                }
                out.push(acc);
            }
        }
    }
    Ok(FeatureMap {
        height: spec.out_h,
        width: spec.out_w,
        channels: f.channels,
        data: out,
    })
}

/// Quantized RoI max pooling.
///
/// The region is snapped outward to whole pixels, split into bins whose
/// bounds are floored/ceiled to pixels, and each bin takes the max over its
/// in-map pixels. Bins that cover no in-map pixel produce 0. Only
/// `out_h`/`out_w` of `spec` are used.
pub fn roi_pool(f: &FeatureMap, roi: &Roi, spec: &PoolSpec) -> Result<FeatureMap, PoolingError> {
    spec.validate()?;
    check_non_empty(f)?;
    let x_start = roi.x1.floor() as i64;
    let y_start = roi.y1.floor() as i64;
    let roi_w = (roi.x2.ceil() as i64 - x_start).max(1);
    let roi_h = (roi.y2.ceil() as i64 - y_start).max(1);
    let span = |start: i64, len: i64, bins: usize, i: usize, limit: usize| {
        let lo = start + (i as i64 * len).div_euclid(bins as i64);
        let hi = start + ((i as i64 + 1) * len + bins as i64 - 1).div_euclid(bins as i64);
        (lo.clamp(0, limit as i64) as usize, hi.clamp(0, limit as i64) as usize)
    };
    let mut out = Vec::with_capacity(spec.out_h * spec.out_w * f.channels);
    for by in 0..spec.out_h {
        let (y0, y1) = span(y_start, roi_h, spec.out_h, by, f.height);
        for bx in 0..spec.out_w {
            let (x0, x1) = span(x_start, roi_w, spec.out_w, bx, f.width);
            for c in 0..f.channels {
                let mut best = f64::NEG_INFINITY;
                for y in y0..y1 {
                    for x in x0..x1 {
                        best = best.max(f.get(y, x, c));
                    }
                }
                out.push(if best == f64::NEG_INFINITY { 0.0 } else { best });
            }
        }
    }
    Ok(FeatureMap {
        height: spec.out_h,
        width: spec.out_w,
        channels: f.channels,
        data: out,
    })
}
