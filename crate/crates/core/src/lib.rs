//! Transfer-matrix tomography of lossy linear-optical interferometers from
//! two-photon cross-correlation visibilities.
//!
//! Matrices follow the rows-are-outputs convention: `M[(k, i)]` is the
//! amplitude from input mode `i` to output mode `k`.

// `!(x >= 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod histogram;
pub mod io;
pub mod lm;
pub mod matrix;
pub mod optics;
pub mod reck;
pub mod sampling;
pub mod sinkhorn;
pub mod tomography;

pub use error::{Error, Result};
pub use matrix::{Branch, TransferMatrix, C64};
pub use optics::{LossModel, ModeQuad, SourceModel};
pub use reck::ReckParams;
