//! Perceptual block coding with irregularity-aware graph Fourier transforms.
//!
//! Pixels get weights that make the weighted MSE track SSIM, blocks of weights
//! are vector quantized to a small codebook, and each block is coded in the
//! transform that is orthonormal under its codeword's weighted inner product.

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod codec;
pub mod error;
pub mod graph;
pub mod imaging;
pub mod metrics;
pub mod transform;
pub mod vq;
pub mod weights;

pub use codec::{decode_image, encode_image, Codec, EncodeParams, EncodedImage, TableMode, TransformMode};
pub use error::{Error, Result};
pub use imaging::{load_image, save_image, ImageGray};
pub use transform::{compute_iagft, IAGFTBasis, InnerProductWeights};
pub use vq::Codebook;
