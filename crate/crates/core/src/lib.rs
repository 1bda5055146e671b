//! Two-stage saliency detection: an initial convolutional-deconvolutional
//! network followed by a recurrent attentional refinement network that
//! repeatedly attends to image sub-regions and accumulates corrections into
//! the running saliency map.
//!
//! Everything runs on a small reverse-mode autodiff engine ([`tensor`]) in
//! double precision on the CPU.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod cli;
pub mod data;
mod error;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod racdnn;
pub mod tensor;

pub use error::{Error, Result};
