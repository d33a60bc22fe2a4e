//! Channel and spatial relation-propagation (CSRP) fusion for RGB-thermal
//! semantic segmentation, with everything needed to train it at desk scale:
//! a small `f64` tensor type with a reverse-mode tape, the dual-path
//! cascaded refinement decoder, boundary supervision, mAcc/mIoU metrics,
//! a synthetic RGB-thermal scene generator and a two-stage SGD trainer.
//!
//! Runnable walkthroughs live in the crate's `examples/` directory; the
//! `csrp` binary exposes the same operations on files.

pub mod cli;
pub mod dcfr;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod params;
pub mod pipeline;
pub mod relation;
pub mod supervision;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
