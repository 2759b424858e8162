//! Structure-aware one-shot diffusion stylization for segmentation under
//! domain shift.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`diffusion`]: DDIM stepping and the diffusion autoencoder.
//! * [`spn`]: the 1x1-convolution structure-preserving correction.
//! * [`embedding`]: image embeddings for the directional style loss.
//! * [`style`]: one-shot training of the style mapper and `stylize`.
//! * [`segmentation`]: the U-Net segmenter and the stylize-then-segment pipeline.
//! * [`metrics`]: Dice, IoU, specificity, weighted F, S-measure, E-measure, MAE.
//! * [`data`]: dataset IO, splits and the synthetic two-domain generator.

pub mod data;
pub mod diffusion;
pub mod embedding;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod segmentation;
pub mod spn;
pub mod style;

pub use error::{Error, Result};
