//! Thread counting for plain-weave canvas X-ray images.
//!
//! The pipeline stages are:
//!
//! 1. **imgproc** – grayscale raster container, PGM/PNG I/O, crop/resample/rotate/orient.
//! 2. **preprocess** – local mean removal, local std normalization, histogram clip + rescale.
//! 3. **dataset** – labeled samples, view generation and augmentation, synthetic weave generator.
//! 4. **nn** – small reverse-mode network engine and the U-Net / inception model variants.
//! 5. **crossings** – probability map thresholding, connected components, centroids.
//! 6. **spatialcount** – nearest-neighbor density and angle estimation from centroids.
//! 7. **freqcount** – Fourier baseline on image patches and on segmentation masks.
//! 8. **canvasmap** – whole-canvas patch sweep, density maps, rendering and pairing.

// negated comparisons below reject NaN on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod canvasmap;
pub mod crossings;
pub mod dataset;
pub mod error;
pub mod freqcount;
pub mod imgproc;
pub mod nn;
pub mod preprocess;
pub mod spatialcount;

pub use error::{Error, Result};
pub use imgproc::{BinaryMask, GrayImage, Orientation};
