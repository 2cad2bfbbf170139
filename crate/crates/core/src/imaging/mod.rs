//! Image planes, file I/O, color conversion, and the classical filters used
//! by the fusion pipelines.

mod color;
mod filters;
mod io;
mod stats;

pub use color::{rgb_to_ycbcr, ycbcr_to_rgb, ycbcr_to_rgb_unclipped};
pub use filters::{
    base_detail_split, box_blur, fast_guided_filter, fast_guided_filter_var, guided_filter, guided_filter_var,
    resample, resample_image, sobel_gradients, Direction, DEFAULT_BASE_RADIUS, DEFAULT_GUIDED_EPS,
    DEFAULT_GUIDED_RADIUS, DEFAULT_GUIDED_SUBSAMPLE,
};
pub use io::{load_image, save_image, save_image_with_depth, BitDepth};
pub use stats::{percentile_stretch, percentile_stretch_image, saliency_map};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorSpace {
    Gray,
    Rgb,
    YCbCr,
}

impl ColorSpace {
    pub fn channels(self) -> usize {
        match self {
            ColorSpace::Gray => 1,
            ColorSpace::Rgb | ColorSpace::YCbCr => 3,
        }
    }
}

/// A single image with values in `[0, 1]`, stored as a `(1, c, h, w)` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePlane {
    pixels: Tensor<f32>,
    colorspace: ColorSpace,
}

impl ImagePlane {
    /// Rejects values outside `[0, 1]` and shapes that disagree with the
    /// color space.
    pub fn new(pixels: Tensor<f32>, colorspace: ColorSpace) -> Result<Self> {
        Self::check_shape(&pixels, colorspace)?;
        if let Some(v) = pixels.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(ImagePlane { pixels, colorspace })
    }

    /// Clamps into `[0, 1]`; non-finite values are rejected.
    pub fn clamped(pixels: Tensor<f32>, colorspace: ColorSpace) -> Result<Self> {
        Self::check_shape(&pixels, colorspace)?;
        if !pixels.all_finite() {
            return Err(Error::InvalidArgument("non-finite pixel values".into()));
        }
        Ok(ImagePlane {
            pixels: pixels.clamp(0.0, 1.0),
            colorspace,
        })
    }

    pub fn gray(h: usize, w: usize, data: Vec<f32>) -> Result<Self> {
        Self::new(Tensor::from_plane(h, w, data)?, ColorSpace::Gray)
    }

    fn check_shape(pixels: &Tensor<f32>, cs: ColorSpace) -> Result<()> {
        let s = pixels.shape();
        if s.n != 1 || s.c != cs.channels() || s.h == 0 || s.w == 0 {
            return Err(Error::shape(
                "image plane",
                format!("(1, {}, h, w) for {cs:?}", cs.channels()),
                s,
            ));
        }
        Ok(())
    }

    pub fn pixels(&self) -> &Tensor<f32> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Tensor<f32> {
        self.pixels
    }

    pub fn colorspace(&self) -> ColorSpace {
        self.colorspace
    }

    pub fn shape(&self) -> Shape {
        self.pixels.shape()
    }

    pub fn height(&self) -> usize {
        self.pixels.shape().h
    }

    pub fn width(&self) -> usize {
        self.pixels.shape().w
    }

    pub fn channels(&self) -> usize {
        self.pixels.shape().c
    }

    /// One channel as a gray plane.
    pub fn channel(&self, c: usize) -> ImagePlane {
        ImagePlane {
            pixels: self.pixels.channel(c),
            colorspace: ColorSpace::Gray,
        }
    }

    /// Luminance for RGB, the Y channel for YCbCr, the plane itself for gray.
    pub fn luma(&self) -> Result<ImagePlane> {
        match self.colorspace {
            ColorSpace::Gray => Ok(self.clone()),
            ColorSpace::YCbCr => Ok(self.channel(0)),
            ColorSpace::Rgb => Ok(rgb_to_ycbcr(self)?.channel(0)),
        }
    }
}

/// Co-registered images of identical shape and color space.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageStack {
    planes: Vec<ImagePlane>,
}

impl ImageStack {
    pub fn new(planes: Vec<ImagePlane>) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::InvalidArgument("an image stack needs at least one image".into()))?;
        for (k, p) in planes.iter().enumerate().skip(1) {
            if p.shape() != first.shape() || p.colorspace() != first.colorspace() {
                return Err(Error::shape(
                    "image stack",
                    format!("{} {:?}", first.shape(), first.colorspace()),
                    format!("image {k}: {} {:?}", p.shape(), p.colorspace()),
                ));
            }
        }
        Ok(ImageStack { planes })
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }

    pub fn planes(&self) -> &[ImagePlane] {
        &self.planes
    }

    pub fn get(&self, k: usize) -> Option<&ImagePlane> {
        self.planes.get(k)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, ImagePlane> {
        self.planes.iter()
    }

    pub fn colorspace(&self) -> ColorSpace {
        self.planes[0].colorspace()
    }

    pub fn shape(&self) -> Shape {
        self.planes[0].shape()
    }

    /// All images as one `(K, c, h, w)` batch.
    pub fn to_batch(&self) -> Tensor<f32> {
        let parts: Vec<_> = self.planes.iter().map(|p| p.pixels().clone()).collect();
        Tensor::stack_batch(&parts).expect("stack planes share a shape")
    }
}

impl<'a> IntoIterator for &'a ImageStack {
    type Item = &'a ImagePlane;
    type IntoIter = std::slice::Iter<'a, ImagePlane>;

    fn into_iter(self) -> Self::IntoIter {
        self.planes.iter()
    }
}
