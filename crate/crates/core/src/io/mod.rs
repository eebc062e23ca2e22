//! Image codecs, dataset manifest and evaluation metrics.

pub mod image;
pub mod manifest;
pub mod metrics;

pub use self::image::{read_pfm, read_png, write_pfm, write_png, ImageBuffer};
pub use manifest::{Dataset, DatasetManifest, Pose, Role, View};
pub use metrics::{crf_rmse, masked_psnr, scale_aligned_psnr, PSNR_CAP};
