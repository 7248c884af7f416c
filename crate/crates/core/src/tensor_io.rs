//! Raster types and their on-disk containers.
//!
//! Three in-memory rasters flow through the pipeline: [`ScoreMap`] (per-pixel
//! class scores), [`LabelMap`] (per-pixel class index) and [`BinaryMask`]
//! (one object's foreground). All of them are stored row-major.
//!
//! Tensors are persisted in the MFT container:
//!
//! ```text
//! offset  size        field
//! 0       4           magic "MFT1"
//! 4       4           dtype code, u32 LE (0 = f32, 1 = u8)
//! 8       4           ndim, u32 LE (2 or 3)
//! 12      4 * ndim    dims, u32 LE, ordered (height, width[, channels])
//! ..      product * dtype size   payload, row-major, LE
//! ```
//!
//! There is no padding and no trailing data. Score maps are `f32` with three
//! dims; label maps and masks are `u8` with two dims (masks hold only 0 and 1).
//!
//! Masks are also exchanged as binary PGM (`P5`, maxval 255).

use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const MFT_MAGIC: [u8; 4] = *b"MFT1";
pub const DTYPE_F32: u32 = 0;
pub const DTYPE_U8: u32 = 1;

#[derive(Debug, Error)]
pub enum TensorIoError {
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic {found:?}, expected \"MFT1\"")]
    BadMagic { found: Vec<u8> },
    #[error("file truncated: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("invalid dimensions {dims:?}")]
    InvalidDims { dims: Vec<u64> },
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("data length {len} does not match dimensions {dims:?}")]
    LengthMismatch { len: usize, dims: Vec<usize> },
    #[error("non-finite score at flat index {0}")]
    NonFinite(usize),
    #[error("expected a {expected}, found a {found}")]
    KindMismatch {
        expected: TensorKind,
        found: TensorKind,
    },
    #[error("value {value} at flat index {index} is not a mask value (0 or 1)")]
    NotAMask { index: usize, value: u8 },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
}

pub type Result<T, E = TensorIoError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    ScoreMap,
    LabelMap,
    BinaryMask,
}

impl fmt::Display for TensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TensorKind::ScoreMap => "score map",
            TensorKind::LabelMap => "label map",
            TensorKind::BinaryMask => "binary mask",
        })
    }
}

fn check_len(len: usize, dims: &[usize]) -> Result<()> {
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| TensorIoError::InvalidDims {
            dims: dims.iter().map(|&d| d as u64).collect(),
        })?;
    if expected != len {
        return Err(TensorIoError::LengthMismatch {
            len,
            dims: dims.to_vec(),
        });
    }
    Ok(())
}

/// Per-pixel class scores, `height x width x channels`, indexed `(y, x, c)`.
///
/// Channel 0 is the background class.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ScoreMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_len(data.len(), &[height, width, channels])?;
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorIoError::NonFinite(i));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
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

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// The channel scores of one pixel.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }
}

/// Per-pixel class indices; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        check_len(data.len(), &[height, width])?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    /// Largest label present, or `None` for an empty map.
    pub fn max_label(&self) -> Option<u8> {
        self.data.iter().copied().max()
    }
}

/// Boolean foreground raster, row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        check_len(data.len(), &[height, width])?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for row in 0..height {
            for col in 0..width {
                data.push(f(row, col));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Builds a mask from rows of 0/1 values; any non-zero value is foreground.
    ///
    /// Panics if the rows have different lengths.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(height * width);
        for r in rows {
            let r = r.as_ref();
            assert_eq!(r.len(), width, "ragged rows");
            data.extend(r.iter().map(|&v| v != 0));
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value;
    }

    /// Number of foreground pixels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&v| v)
    }

    /// Foreground pixels as `(row, col)` in raster order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .map(move |(i, _)| (i / w, i % w))
    }
}

impl fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BinaryMask {}x{}", self.height, self.width)?;
        for row in 0..self.height {
            let line: String = (0..self.width)
                .map(|col| if self.get(row, col) { '#' } else { '.' })
                .collect();
            writeln!(f, "  {line}")?;
        }
        Ok(())
    }
}

/// Anything that can be stored in an MFT file.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Scores(ScoreMap),
    Labels(LabelMap),
    Mask(BinaryMask),
}

impl Tensor {
    pub fn kind(&self) -> TensorKind {
        match self {
            Tensor::Scores(_) => TensorKind::ScoreMap,
            Tensor::Labels(_) => TensorKind::LabelMap,
            Tensor::Mask(_) => TensorKind::BinaryMask,
        }
    }

    pub fn into_scores(self) -> Result<ScoreMap> {
        match self {
            Tensor::Scores(s) => Ok(s),
            other => Err(TensorIoError::KindMismatch {
                expected: TensorKind::ScoreMap,
                found: other.kind(),
            }),
        }
    }

    pub fn into_labels(self) -> Result<LabelMap> {
        match self {
            Tensor::Labels(l) => Ok(l),
            Tensor::Mask(m) => LabelMap::new(
                m.height,
                m.width,
                m.data.iter().map(|&v| u8::from(v)).collect(),
            ),
            other => Err(TensorIoError::KindMismatch {
                expected: TensorKind::LabelMap,
                found: other.kind(),
            }),
        }
    }

    /// Interprets a `u8` raster as a mask. Fails unless every value is 0 or 1.
    pub fn into_mask(self) -> Result<BinaryMask> {
        match self {
            Tensor::Mask(m) => Ok(m),
            Tensor::Labels(l) => {
                if let Some((index, &value)) = l.data.iter().enumerate().find(|(_, &v)| v > 1) {
                    return Err(TensorIoError::NotAMask { index, value });
                }
                BinaryMask::new(l.height, l.width, l.data.iter().map(|&v| v == 1).collect())
            }
            other => Err(TensorIoError::KindMismatch {
                expected: TensorKind::BinaryMask,
                found: other.kind(),
            }),
        }
    }
}

impl From<ScoreMap> for Tensor {
    fn from(s: ScoreMap) -> Self {
        Tensor::Scores(s)
    }
}

impl From<LabelMap> for Tensor {
    fn from(l: LabelMap) -> Self {
        Tensor::Labels(l)
    }
}

impl From<BinaryMask> for Tensor {
    fn from(m: BinaryMask) -> Self {
        Tensor::Mask(m)
    }
}

fn to_u32_dims(dims: &[usize]) -> Result<Vec<u32>> {
    let invalid = || TensorIoError::InvalidDims {
        dims: dims.iter().map(|&d| d as u64).collect(),
    };
    if dims.contains(&0) {
        return Err(invalid());
    }
    dims.iter()
        .map(|&d| u32::try_from(d).map_err(|_| invalid()))
        .collect()
}

/// Serializes a tensor into MFT bytes.
pub fn encode_tensor(tensor: &Tensor) -> Result<Vec<u8>> {
    let (dtype, dims): (u32, Vec<usize>) = match tensor {
        Tensor::Scores(s) => (DTYPE_F32, vec![s.height, s.width, s.channels]),
        Tensor::Labels(l) => (DTYPE_U8, vec![l.height, l.width]),
        Tensor::Mask(m) => (DTYPE_U8, vec![m.height, m.width]),
    };
    let dims32 = to_u32_dims(&dims)?;
    let elem = if dtype == DTYPE_F32 { 4 } else { 1 };
    let n: usize = dims.iter().product();
    let mut out = Vec::with_capacity(12 + 4 * dims.len() + n * elem);
    out.extend_from_slice(&MFT_MAGIC);
    out.extend_from_slice(&dtype.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims32 {
        out.extend_from_slice(&d.to_le_bytes());
    }
    match tensor {
        Tensor::Scores(s) => {
            for v in &s.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Tensor::Labels(l) => out.extend_from_slice(&l.data),
        Tensor::Mask(m) => out.extend(m.data.iter().map(|&v| u8::from(v))),
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(TensorIoError::TruncatedFile {
                expected: self.pos.saturating_add(n),
                found: self.buf.len(),
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parses MFT bytes. `f32` data yields a [`Tensor::Scores`], `u8` data a
/// [`Tensor::Labels`] (use [`Tensor::into_mask`] for masks).
pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    let magic = cur.take(4).map_err(|_| TensorIoError::BadMagic {
        found: bytes.to_vec(),
    })?;
    if magic != MFT_MAGIC {
        return Err(TensorIoError::BadMagic {
            found: magic.to_vec(),
        });
    }
    let dtype = cur.u32()?;
    let elem = match dtype {
        DTYPE_F32 => 4usize,
        DTYPE_U8 => 1usize,
        other => return Err(TensorIoError::UnsupportedDtype(other)),
    };
    let ndim = cur.u32()?;
    if ndim != 2 && ndim != 3 {
        return Err(TensorIoError::InvalidDims { dims: vec![] });
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|_| cur.u32().map(|d| d as usize))
        .collect::<Result<_>>()?;
    let invalid = || TensorIoError::InvalidDims {
        dims: dims.iter().map(|&d| d as u64).collect(),
    };
    let expected_ndim = if dtype == DTYPE_F32 { 3 } else { 2 };
    if dims.len() != expected_ndim || dims.contains(&0) {
        return Err(invalid());
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(invalid)?;
    let payload_len = count.checked_mul(elem).ok_or_else(invalid)?;
    let payload = cur.take(payload_len)?;
    if cur.pos != bytes.len() {
        return Err(TensorIoError::TrailingBytes(bytes.len() - cur.pos));
    }
    match dtype {
        DTYPE_F32 => {
            let data = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            ScoreMap::new(dims[0], dims[1], dims[2], data).map(Tensor::Scores)
        }
        _ => LabelMap::new(dims[0], dims[1], payload.to_vec()).map(Tensor::Labels),
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TensorIoError + '_ {
    move |source| TensorIoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_tensor(tensor)?;
    std::fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_tensor(&bytes)
}

/// Reads an MFT file that must contain a score map.
pub fn read_score_map(path: impl AsRef<Path>) -> Result<ScoreMap> {
    read_tensor(path)?.into_scores()
}

/// Reads an MFT file that must contain a 0/1 `u8` raster.
pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    read_tensor(path)?.into_mask()
}

/// Encodes a mask as binary PGM, foreground 255 and background 0.
pub fn encode_mask_pgm(mask: &BinaryMask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend(mask.data.iter().map(|&v| if v { 255u8 } else { 0 }));
    out
}

/// Decodes a binary PGM (`P5`, maxval 255). Pixels above 127 are foreground.
pub fn decode_mask_pgm(bytes: &[u8]) -> Result<BinaryMask> {
    let unsupported = |msg: &str| TensorIoError::UnsupportedFormat(msg.to_string());
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(TensorIoError::UnsupportedFormat(format!(
            "expected binary PGM magic \"P5\", found {found:?}"
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(unsupported("truncated PGM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(unsupported("malformed PGM header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| unsupported("PGM header value out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(TensorIoError::UnsupportedFormat(format!(
            "PGM maxval {maxval}, only 255 is supported"
        )));
    }
    if width == 0 || height == 0 {
        return Err(TensorIoError::InvalidDims {
            dims: vec![height as u64, width as u64],
        });
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(unsupported("missing whitespace after PGM header")),
    }
    let n = width
        .checked_mul(height)
        .ok_or(TensorIoError::InvalidDims {
            dims: vec![height as u64, width as u64],
        })?;
    let payload = bytes
        .get(pos..pos + n)
        .ok_or(TensorIoError::TruncatedFile {
            expected: pos + n,
            found: bytes.len(),
        })?;
    BinaryMask::new(height, width, payload.iter().map(|&v| v > 127).collect())
}

pub fn write_mask_pgm(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if mask.height == 0 || mask.width == 0 {
        return Err(TensorIoError::InvalidDims {
            dims: vec![mask.height as u64, mask.width as u64],
        });
    }
    std::fs::write(path, encode_mask_pgm(mask)).map_err(io_err(path))
}

pub fn read_mask_pgm(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_mask_pgm(&bytes)
}
