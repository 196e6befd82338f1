//! Two-dimensional normalizing flows for unsupervised anomaly detection.
//!
//! Features of normal images are mapped by a stack of affine coupling steps
//! with fully convolutional subnets onto a standard normal latent. The exact
//! per-location log-determinant makes the likelihood spatially resolved, so
//! low-likelihood regions directly localize anomalies.
//!
//! Module map:
//!
//! - [`tensor`]: dense N-C-H-W tensors and the numerical kernels the flow uses.
//! - [`autodiff`]: a tape-based reverse-mode engine over those kernels.
//! - [`flow`]: coupling steps, the flow model, forward/inverse and the NLL.
//! - [`scoring`]: per-pixel anomaly maps, image scores, multi-scale fusion.
//! - [`features`]: the `.fft` tensor file format, dataset manifests, image
//!   loading and a frozen random-projection extractor.
//! - [`train`]: Adam, the maximum-likelihood loop, augmentation, checkpoints.
//! - [`eval`]: rank-based AUROC and report generation.
//! - [`pipeline`]: one flow per scale, trained and scored together.
//! - [`synth`]: seeded synthetic textures with injected defects.
//! - [`dataset`]: image-folder datasets with ground-truth masks.

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod flow;
pub mod pipeline;
pub mod scoring;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Scalar, Shape4, Tensor4};
