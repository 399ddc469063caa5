//! Segmentation networks and the pixel-wise critic.

pub mod ops;
mod unet;

pub use unet::{
    CriticConfig, ForwardCache, GradRequest, Gradients, SegNetConfig, UNet, UNetConfig, PROB_EPS,
};
