//! Image containers, gamma handling, quality metrics, histogram matching
//! and multi-focus ground-truth fusion.

mod focus;
mod histogram;
pub mod io;
mod metrics;

pub use focus::{box_filter, focus_measure, multifocus_fuse};
pub use histogram::{
    cdf_kolmogorov_distance, histogram_cdf, histogram_match, quantize_level, HistogramCdf,
};
pub use metrics::{psnr, ssim, ssim_tape, GaussianWindow, PSNR_CAP_DB, SSIM_C1, SSIM_C2};

use crate::{Error, Result};

/// Whether pixel values are display-encoded or linear radiance.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoding {
    Display,
    Linear,
}

/// H×W×C raster of 64-bit reals in [0, 1] with an explicit encoding flag.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    encoding: Encoding,
    data: Vec<f64>,
}

impl Image {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        encoding: Encoding,
        data: Vec<f64>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape("image dimensions must be positive".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!(
                "images carry 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "image {height}x{width}x{channels} expects {} samples, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if !data.iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::Numeric("image samples must lie in [0, 1]".into()));
        }
        Ok(Image {
            height,
            width,
            channels,
            encoding,
            data,
        })
    }

    /// Build an image from raw samples, clamping into [0, 1]. For render
    /// outputs where values may sit epsilon outside the range.
    pub fn from_clamped(
        height: usize,
        width: usize,
        channels: usize,
        encoding: Encoding,
        mut data: Vec<f64>,
    ) -> Result<Self> {
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Image::new(height, width, channels, encoding, data)
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Image::new(
            height,
            width,
            channels,
            Encoding::Display,
            vec![value; height * width * channels],
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Channel-mean grayscale plane.
    pub fn to_gray(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.data.clone();
        }
        self.data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / self.channels as f64)
            .collect()
    }

    pub fn mean_abs_diff(&self, other: &Image) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(Error::Shape("mean_abs_diff: image shapes differ".into()));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(sum / self.data.len() as f64)
    }
}

/// Scalar-valued H×W plane: masks, disparity, defocus and focus-measure maps.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ScalarMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape("map dimensions must be positive".into()));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "map {height}x{width} expects {} samples, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(ScalarMap {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        ScalarMap {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }
}

/// Pixelwise power law `v^gamma`; display -> linear.
///
/// The round trip with [`to_display`] is the identity to 1e-12.
pub fn to_linear(img: &Image, gamma: f64) -> Result<Image> {
    if gamma <= 0.0 {
        return Err(Error::Parameter(format!("gamma must be > 0, got {gamma}")));
    }
    if img.encoding != Encoding::Display {
        return Err(Error::Parameter(
            "to_linear expects a display-encoded image".into(),
        ));
    }
    let data = img.data.iter().map(|v| v.powf(gamma)).collect();
    Image::new(img.height, img.width, img.channels, Encoding::Linear, data)
}

/// Pixelwise power law `v^(1/gamma)`; linear -> display.
pub fn to_display(img: &Image, gamma: f64) -> Result<Image> {
    if gamma <= 0.0 {
        return Err(Error::Parameter(format!("gamma must be > 0, got {gamma}")));
    }
    if img.encoding != Encoding::Linear {
        return Err(Error::Parameter(
            "to_display expects a linear-encoded image".into(),
        ));
    }
    let data = img.data.iter().map(|v| v.powf(1.0 / gamma)).collect();
    Image::new(img.height, img.width, img.channels, Encoding::Display, data)
}
