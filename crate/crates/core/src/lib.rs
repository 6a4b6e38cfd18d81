//! Calibrationless parallel-MRI reconstruction and segmentation.
//!
//! The crate covers the forward model and phantom generation ([`mrisim`]),
//! locally low-rank patch lifting and annihilation filterbanks
//! ([`locallowrank`]), the IRLS nuclear-norm reconstruction ([`clearsolve`]),
//! the unrolled image-domain network with its reverse-mode engine
//! ([`idslr`]), joint reconstruction/segmentation ([`segjoint`]) and the
//! experiment harness ([`bench`]).

pub mod clearsolve;
pub mod bench;
pub mod error;
pub mod idslr;
pub mod locallowrank;
pub mod mrisim;
pub mod numkernel;
pub mod segjoint;

pub use error::{Error, Result};
