//! Adaptive multimodal biometric authentication.
//!
//! Implements a transformer-style model that fuses up to two image
//! modalities (face, fingerprint, palmprint) and one sequential modality
//! (voice) for identity classification. Image pairs are fused by a
//! two-stage cross-attention block; the sequence stream is merged in
//! through a gated residual network. A routing layer picks the
//! computation path for whatever subset of modalities a sample provides.
//!
//! Everything runs on a small tape-based reverse-mode autodiff engine
//! ([`tensor`]) that is verified against central finite differences
//! ([`gradcheck`]).

pub mod attention;
pub mod data;
pub mod embedding;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod params;
pub mod router;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
