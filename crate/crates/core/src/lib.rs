//! Unsupervised shape features for stamp verification and detection in
//! scanned documents.
//!
//! The pipeline learns a single layer of convolutional filters from stamp
//! images: random patches are ZCA-whitened and clustered with K-means, the
//! resulting atoms are ranked by their strongest response to dark structure on
//! a training stamp, and the top-ranked subset is kept. Those filters then
//! drive a max-assignment encoding with 4x4 quadrant max pooling for a linear
//! SVM verifier, and an averaged rectified response map for localization.

pub mod baselines;
pub mod classifier;
pub mod detector;
pub mod dictionary;
pub mod error;
pub mod features;
pub mod imaging;
pub mod manifest;
pub mod model;
pub mod pipeline;
pub mod synth;
pub mod whitening;

pub use error::{Error, Result};
