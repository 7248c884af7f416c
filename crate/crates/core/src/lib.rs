//! Turns per-pixel segmentation scores into clean object masks and COCO-style
//! training annotations, and scores mask or box predictions with mAP.
//!
//! | module | what it does |
//! |---|---|
//! | [`tensor_io`] | score/label/mask rasters, MFT tensor files, PGM masks |
//! | [`postprocess`] | thresholded argmax, blob detection, speckle removal, hole filling |
//! | [`annotate`] | RLE and polygon segmentations, annotation documents |
//! | [`pooling`] | RoIAlign and RoIPool reference kernels |
//! | [`eval`] | IoU, greedy matching, AP, mAP |
//! | [`cli`] | the `maskgen` command line |
//!
//! The guide in `book/` walks through each stage; its code listings are
//! compiled and run as doc-tests of this crate.

pub mod annotate;
pub mod cli;
pub mod eval;
pub mod pooling;
pub mod postprocess;
pub mod tensor_io;

pub use annotate::{AnnotationDoc, Rle, SegmentationMode};
pub use eval::{EvalMode, EvalResult};
pub use pooling::{FeatureMap, PoolMode, PoolSpec, Roi};
pub use postprocess::{Blob, Connectivity, FilterPolicy};
pub use tensor_io::{BinaryMask, LabelMap, ScoreMap, Tensor};

// The guide's listings run as doc-tests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensor-files.md")]
    mod tensor_files {}
    #[doc = include_str!("../../../book/src/postprocess.md")]
    mod postprocess {}
    #[doc = include_str!("../../../book/src/annotations.md")]
    mod annotations {}
    #[doc = include_str!("../../../book/src/pooling.md")]
    mod pooling {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
