//! Single-channel real-valued images.

use std::path::Path;

use eventgan_grad::Tensor;

use crate::error::{Error, Result};

/// Row-major grayscale image. Intensities loaded from 8-bit files lie in [0, 1];
/// derived images (counts, collapsed volumes) may exceed that range.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0.0; width * height] }
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height} frame",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Bilinear sample with edge clamping.
    pub fn sample_clamped(&self, x: f64, y: f64) -> f32 {
        let maxx = (self.width - 1) as f64;
        let maxy = (self.height - 1) as f64;
        let x = x.clamp(0.0, maxx);
        let y = y.clamp(0.0, maxy);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = (x - x0 as f64) as f32;
        let fy = (y - y0 as f64) as f32;
        let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
        let bottom = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    pub fn flip_horizontal(&self) -> Frame {
        Frame::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Frame> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        Ok(Frame::from_fn(width, height, |x, y| self.get(x0 + x, y0 + y)))
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec([1, 1, self.height, self.width], self.data.clone())
    }

    /// Loads an 8-bit (or 16-bit) grayscale image, scaling to [0, 1].
    pub fn load(path: &Path) -> Result<Frame> {
        let img = image::open(path)?.into_luma8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
        Frame::from_vec(w as usize, h as usize, data)
    }

    /// Saves as 8-bit grayscale PNG after clamping to [0, 1].
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| Error::ShapeMismatch("frame buffer size".into()))?;
        img.save(path)?;
        Ok(())
    }

    /// Linear rescale of the value range onto [0, 1] (all-equal input maps to 0).
    pub fn normalized_for_display(&self) -> Frame {
        let lo = self.data.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let span = hi - lo;
        let data = self.data.iter().map(|&v| if span > 0.0 { (v - lo) / span } else { 0.0 }).collect();
        Frame { width: self.width, height: self.height, data }
    }
}
