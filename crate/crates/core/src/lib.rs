//! Local Expression Predictions (LEPs): random forests trained on spatially
//! local facial subspaces, a hierarchical denoising autoencoder producing
//! per-landmark confidence, confidence-weighted occlusion-robust expression
//! prediction, and a second-layer Action-Unit detector with AU-specific
//! confidence.
//!
//! The pipeline, bottom to top:
//!
//! 1. [`mesh`] — landmark shapes, the mean shape and its Delaunay mesh.
//! 2. [`channels`] — integral HOG feature channels of one image.
//! 3. [`features`] — binary split-candidate templates over shapes/channels.
//! 4. [`forest`] — local-subspace random forest training (random facial
//!    masks, subject-level balanced bagging).
//! 5. [`lep`] — per-triangle expression probabilities and their global /
//!    confidence-weighted aggregation.
//! 6. [`confidence`] — two-layer tied-weight denoising autoencoder stack
//!    yielding per-point and per-triangle confidences.
//! 7. [`au`] — Action-Unit forests over LEP features, root-feature census,
//!    AU-specific confidence and heat maps.
//! 8. [`data`] / [`eval`] — manifests, the synthetic face generator,
//!    occlusion overlays, OOB protocols and ROC-AUC.

// index-based loops are the clearest form for the matrix and mesh math here
#![allow(clippy::needless_range_loop)]

pub mod au;
pub mod channels;
pub mod confidence;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod lep;
pub mod mesh;
pub mod model_io;

pub use error::{Error, Result};
