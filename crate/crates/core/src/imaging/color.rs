use super::{ColorSpace, ImagePlane};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;

fn expect(img: &ImagePlane, cs: ColorSpace, op: &str) -> Result<()> {
    if img.colorspace() != cs {
        return Err(Error::InvalidArgument(format!(
            "{op} expects a {cs:?} image, got {:?}",
            img.colorspace()
        )));
    }
    Ok(())
}

fn map3(t: &Tensor<f32>, f: impl Fn([f64; 3]) -> [f64; 3]) -> Tensor<f32> {
    let s = t.shape();
    let mut out = Tensor::zeros(s);
    for y in 0..s.h {
        for x in 0..s.w {
            let v = f([0, 1, 2].map(|c| t.at(0, c, y, x) as f64));
            for (c, vc) in v.into_iter().enumerate() {
                out.set(0, c, y, x, vc as f32);
            }
        }
    }
    out
}

/// Full-range BT.601 with chroma centred at 0.5.
pub fn rgb_to_ycbcr(img: &ImagePlane) -> Result<ImagePlane> {
    expect(img, ColorSpace::Rgb, "rgb_to_ycbcr")?;
    let t = map3(img.pixels(), |[r, g, b]| {
        let y = KR * r + KG * g + KB * b;
        [
            y,
            0.5 + (b - y) / (2.0 * (1.0 - KB)),
            0.5 + (r - y) / (2.0 * (1.0 - KR)),
        ]
    });
    ImagePlane::clamped(t, ColorSpace::YCbCr)
}

/// Exact algebraic inverse of [`rgb_to_ycbcr`], without clipping.
pub fn ycbcr_to_rgb_unclipped(ycc: &Tensor<f32>) -> Tensor<f32> {
    map3(ycc, |[y, cb, cr]| {
        let r = y + 2.0 * (1.0 - KR) * (cr - 0.5);
        let b = y + 2.0 * (1.0 - KB) * (cb - 0.5);
        [r, (y - KR * r - KB * b) / KG, b]
    })
}

pub fn ycbcr_to_rgb(img: &ImagePlane) -> Result<ImagePlane> {
    expect(img, ColorSpace::YCbCr, "ycbcr_to_rgb")?;
    ImagePlane::clamped(ycbcr_to_rgb_unclipped(img.pixels()), ColorSpace::Rgb)
}
