//! Inference entry points of the three networks.

use super::models::{IvfnModel, MefnModel, MmfnModel};
use crate::error::{Error, Result};
use crate::fusion::{fuse, fuse_chroma_l1, FusionStrategy};
use crate::imaging::{percentile_stretch_image, rgb_to_ycbcr, ycbcr_to_rgb, ColorSpace, ImagePlane, ImageStack};
use crate::nn::{Mode, Session};
use crate::tensor::{Scalar, Tensor};

/// Base and detail fusion rules used when none are given.
pub const DEFAULT_BASE_STRATEGY: FusionStrategy = FusionStrategy::Saliency;
pub const DEFAULT_DETAIL_STRATEGY: FusionStrategy = FusionStrategy::L1;

/// Encodes both modalities, fuses base codes with `base` and detail codes
/// with `detail`, and decodes. Inputs are `(1, c, h, w)` planes in `[0, 1]`.
pub fn ivfn_fuse<T: Scalar>(
    model: &IvfnModel<T>,
    infrared: &Tensor<T>,
    visible: &Tensor<T>,
    base: FusionStrategy,
    detail: FusionStrategy,
) -> Result<Tensor<T>> {
    if infrared.shape() != visible.shape() {
        return Err(Error::Data(format!(
            "infrared {} and visible {} are not co-registered",
            infrared.shape(),
            visible.shape()
        )));
    }
    let sess = Session::inference(Mode::Eval);
    let ir = model.encode(&sess, infrared)?;
    let vis = model.encode(&sess, visible)?;
    let (fused_base, _) = fuse(base, ir.base.value(), vis.base.value())?;
    let (fused_detail, _) = fuse(detail, ir.detail.value(), vis.detail.value())?;
    let codes = super::models::IvfCodes {
        base: sess.input(fused_base),
        detail: sess.input(fused_detail),
    };
    Ok(model.decode(&sess, &codes)?.value().clone())
}

/// Result of exposure fusion, with the intermediate quantities exposed.
#[derive(Clone, Debug)]
pub struct MefFusion {
    /// Final image after percentile stretching.
    pub image: ImagePlane,
    /// Fused luma before stretching.
    pub luma: Tensor<f32>,
    /// Per-exposure weight maps; they sum to one at every pixel.
    pub weights: Vec<Tensor<f32>>,
}

/// Weighted luma fusion by the network, chroma by ℓ1 distance from
/// neutral, then conversion back and percentile stretching. Gray stacks
/// skip the chroma step.
pub fn mefn_fuse(model: &MefnModel, stack: &ImageStack) -> Result<MefFusion> {
    if stack.len() < 2 {
        return Err(Error::Config(format!(
            "exposure fusion needs at least two images, got {}",
            stack.len()
        )));
    }
    let cs = stack.colorspace();
    let ycc = match cs {
        ColorSpace::Rgb => stack.iter().map(rgb_to_ycbcr).collect::<Result<Vec<_>>>()?,
        ColorSpace::Gray => stack.planes().to_vec(),
        ColorSpace::YCbCr => return Err(Error::Data("exposure stacks must be RGB or gray".into())),
    };
    let lumas: Vec<Tensor<f32>> = ycc.iter().map(|p| p.pixels().channel(0)).collect();
    let sess = Session::inference(Mode::Eval);
    let fused = model.fuse_luma(&sess, &lumas)?;
    let luma = fused.fused.value().clone();
    let weights = fused.weights.iter().map(|w| w.value().clone()).collect();
    let combined = match cs {
        ColorSpace::Gray => ImagePlane::clamped(luma.clone(), ColorSpace::Gray)?,
        _ => {
            let chroma = |c: usize| fuse_chroma_l1(&ycc.iter().map(|p| p.pixels().channel(c)).collect::<Vec<_>>());
            let pixels = Tensor::concat_channels(&[luma.clone(), chroma(1)?, chroma(2)?])?;
            ycbcr_to_rgb(&ImagePlane::clamped(pixels, ColorSpace::YCbCr)?)?
        }
    };
    Ok(MefFusion {
        image: percentile_stretch_image(&combined)?,
        luma,
        weights,
    })
}

/// High-resolution estimate from a low-resolution input and its guide.
/// The output is not clipped.
pub fn mmfn_fuse<T: Scalar>(model: &MmfnModel<T>, lr: &Tensor<T>, guide: &Tensor<T>) -> Result<Tensor<T>> {
    model.super_resolve(lr, guide)
}
