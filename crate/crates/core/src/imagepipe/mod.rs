//! Image preprocessing, patching and token-length reduction.

mod augment;
mod image;
mod mask;
mod patch;
mod resize;

pub use augment::{augment, sample_crop, AugmentConfig, CropBox, MIN_INPUT_SIDE};
pub use image::Image;
pub use mask::{
    apply_mask, block_mask, grid_mask, kept_patches, kept_token_count, random_mask, BlockMask, ImageReduction, Rect,
};
pub use patch::{patchify, PatchSet};
pub use resize::{resize_antialias, resize_weights, Taps};

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("image size: {0}")]
    Size(String),
    #[error("image reduction: {0}")]
    Reduction(String),
}
