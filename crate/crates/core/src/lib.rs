//! Semi-supervised binary segmentation with two co-trained encoder-decoder
//! networks and a pixel-wise critic.
//!
//! The crate is organised bottom-up:
//!
//! - [`data`]: image/mask loading, volume slicing, splits, synthetic shapes
//! - [`nn`]: UNet-style networks with explicit backward passes
//! - [`losses`]: supervised, agreement and adversarial objectives
//! - [`trainer`]: the alternating min-max loop, ablations and baselines
//! - [`eval`]: Dice/MAE metrics, confidence maps, comparison tables
//! - [`checkpoint`]: versioned parameter archives

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::{ImageBatch, MapBatch};

/// Maps `f` over `0..n`, in parallel when the `parallel` feature is enabled.
/// Results keep index order either way.
pub(crate) fn par_map<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}
