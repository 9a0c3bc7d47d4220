use crate::ingest::RgbImage;

use super::ImageError;

/// Interleaved RGB image with floating-point channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self, ImageError> {
        if data.len() != height * width * 3 {
            return Err(ImageError::Size(format!("{}x{} image with {} values", height, width, data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; height * width * 3] }
    }

    /// Scales 8-bit channels to `[0, 1]`.
    pub fn from_rgb8(img: &RgbImage) -> Self {
        Self {
            height: img.height,
            width: img.width,
            data: img.data.iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
        }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self, ImageError> {
        if top + height > self.height || left + width > self.width || height == 0 || width == 0 {
            return Err(ImageError::Size(format!(
                "crop {}x{} at ({}, {}) outside {}x{}",
                height, width, top, left, self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for y in top..top + height {
            let start = (y * self.width + left) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Ok(Self { height, width, data })
    }

    /// `(x - mean) / std` per channel.
    pub fn standardize(&mut self, mean: f32, std: f32) {
        for v in &mut self.data {
            *v = (*v - mean) / std;
        }
    }
}
