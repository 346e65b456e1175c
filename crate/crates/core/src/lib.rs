//! Graded image-pair similarity from camera geometry, Generalized Contrastive
//! Loss training of a small siamese embedding network, and retrieval
//! evaluation for visual place recognition.
//!
//! The pipeline runs in four stages:
//!
//! 1. **Annotation** ([`geom2d`], [`geom3d`]): every (query, map) image pair
//!    gets a similarity `psi` in `[0, 1]` from the overlap of the two cameras'
//!    fields of view, either as planar circular sectors or as sets of point
//!    cloud indices visible in both images.
//! 2. **Mining** ([`mining`]): batches are composed by similarity-bin quotas
//!    only, without touching descriptors.
//! 3. **Training** ([`loss`], [`embed`], [`train`]): an MLP embedding is fit
//!    with plain SGD on the Generalized Contrastive Loss using exact
//!    analytic gradients.
//! 4. **Retrieval and evaluation** ([`retrieval`], [`eval`]): exhaustive
//!    nearest-neighbour search with optional PCA whitening, scored by
//!    recall@k, average precision and pose-inheritance localization.

#![warn(clippy::all)]

pub mod embed;
pub mod error;
pub mod eval;
pub mod geom2d;
pub mod geom3d;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod mining;
pub mod polygon;
pub mod retrieval;
pub mod stats;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
