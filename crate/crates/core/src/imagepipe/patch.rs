use super::image::Image;
use super::ImageError;

/// Flattened non-overlapping patches, each laid out as `(row, col, channel)`.
/// `indices` holds the raster position of every patch on the full grid, so a
/// masked set still knows where its survivors came from.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub data: Vec<f32>,
    pub patch_dim: usize,
    pub indices: Vec<usize>,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn patch(&self, k: usize) -> &[f32] {
        &self.data[k * self.patch_dim..(k + 1) * self.patch_dim]
    }

    /// Keeps only the listed positions (into this set), in the given order.
    pub fn select(&self, keep: &[usize]) -> PatchSet {
        let mut data = Vec::with_capacity(keep.len() * self.patch_dim);
        for &k in keep {
            data.extend_from_slice(self.patch(k));
        }
        PatchSet {
            data,
            patch_dim: self.patch_dim,
            indices: keep.iter().map(|&k| self.indices[k]).collect(),
            grid_h: self.grid_h,
            grid_w: self.grid_w,
        }
    }
}

pub fn patchify(img: &Image, patch: usize) -> Result<PatchSet, ImageError> {
    if patch == 0 || !img.height.is_multiple_of(patch) || !img.width.is_multiple_of(patch) {
        return Err(ImageError::Size(format!(
            "{}x{} image is not divisible into {}-px patches",
            img.height, img.width, patch
        )));
    }
    let (gh, gw) = (img.height / patch, img.width / patch);
    let patch_dim = patch * patch * 3;
    let mut data = Vec::with_capacity(gh * gw * patch_dim);
    for gy in 0..gh {
        for gx in 0..gw {
            for y in gy * patch..(gy + 1) * patch {
                let start = (y * img.width + gx * patch) * 3;
                data.extend_from_slice(&img.data[start..start + patch * 3]);
            }
        }
    }
    Ok(PatchSet { data, patch_dim, indices: (0..gh * gw).collect(), grid_h: gh, grid_w: gw })
}
