//! Frame-quality metrics: SSIM, PSNR, perceptual distance, FID and hand feasibility.

pub mod feasibility;
pub mod features;
pub mod fid;
pub mod pixel;
pub mod report;

pub use feasibility::{feasibility, ConstantDetector, Detection, HandDetector, NullDetector};
pub use features::{perceptual_distance, FeatureExtractor, RandomProjection};
pub use fid::{fid, fit_moments, frechet_distance, Moments};
pub use pixel::{psnr, ssim, PSNR_CAP_DB};
pub use report::{evaluate, Backends, MetricReport};
