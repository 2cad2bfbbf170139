use std::fs;
use std::path::Path;

use image::{ColorType, DynamicImage, ImageBuffer, ImageFormat, Luma, Rgb};

use super::{ColorSpace, ImagePlane};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    fn max_code(self) -> u32 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

fn image_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads an 8- or 16-bit PNG or a binary PGM/PPM, mapping codes to `[0, 1]`
/// by dividing by the maximum code value. PNG alpha is discarded.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImagePlane> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(path, &bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(path, &bytes)
    } else {
        Err(image_err(path, "unrecognised format (expected PNG or binary PGM/PPM)"))
    }
}

fn decode_png(path: &Path, bytes: &[u8]) -> Result<ImagePlane> {
    let img =
        image::load_from_memory_with_format(bytes, ImageFormat::Png).map_err(|e| image_err(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (cs, depth) = match img.color() {
        ColorType::L8 | ColorType::La8 => (ColorSpace::Gray, BitDepth::Eight),
        ColorType::L16 | ColorType::La16 => (ColorSpace::Gray, BitDepth::Sixteen),
        ColorType::Rgb8 | ColorType::Rgba8 => (ColorSpace::Rgb, BitDepth::Eight),
        ColorType::Rgb16 | ColorType::Rgba16 => (ColorSpace::Rgb, BitDepth::Sixteen),
        other => return Err(image_err(path, format!("unsupported PNG pixel type {other:?}"))),
    };
    let codes: Vec<u32> = match (cs, depth) {
        (ColorSpace::Gray, BitDepth::Eight) => img.to_luma8().into_raw().into_iter().map(u32::from).collect(),
        (ColorSpace::Gray, BitDepth::Sixteen) => img.to_luma16().into_raw().into_iter().map(u32::from).collect(),
        (_, BitDepth::Eight) => img.to_rgb8().into_raw().into_iter().map(u32::from).collect(),
        (_, BitDepth::Sixteen) => img.to_rgb16().into_raw().into_iter().map(u32::from).collect(),
    };
    from_interleaved(&codes, h, w, cs, depth.max_code())
}

fn from_interleaved(codes: &[u32], h: usize, w: usize, cs: ColorSpace, max: u32) -> Result<ImagePlane> {
    let c = cs.channels();
    let scale = max as f64;
    let t = Tensor::from_fn(Shape::new(1, c, h, w), |_, ch, y, x| {
        (codes[(y * w + x) * c + ch] as f64 / scale) as f32
    });
    ImagePlane::new(t, cs)
}

struct PnmHeader {
    channels: usize,
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn parse_pnm_header(path: &Path, bytes: &[u8]) -> Result<PnmHeader> {
    let channels = if bytes[1] == b'5' { 1 } else { 3 };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(image_err(path, "truncated PNM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| image_err(path, "malformed PNM header"))?;
    }
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(image_err(path, "malformed PNM header"));
    }
    let [width, height, maxval] = fields;
    if maxval != 255 && maxval != 65535 {
        return Err(image_err(
            path,
            format!("unsupported PNM maxval {maxval} (expected 255 or 65535)"),
        ));
    }
    if width == 0 || height == 0 {
        return Err(image_err(path, "PNM image has zero size"));
    }
    Ok(PnmHeader {
        channels,
        width,
        height,
        maxval: maxval as u32,
        data_start: pos + 1,
    })
}

fn decode_pnm(path: &Path, bytes: &[u8]) -> Result<ImagePlane> {
    let hd = parse_pnm_header(path, bytes)?;
    let count = hd.width * hd.height * hd.channels;
    let wide = hd.maxval > 255;
    let need = count * if wide { 2 } else { 1 };
    let data = bytes
        .get(hd.data_start..hd.data_start + need)
        .ok_or_else(|| image_err(path, format!("truncated PNM data (need {need} bytes)")))?;
    let codes: Vec<u32> = if wide {
        data.chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]) as u32)
            .collect()
    } else {
        data.iter().map(|&b| b as u32).collect()
    };
    if let Some(v) = codes.iter().find(|&&v| v > hd.maxval) {
        return Err(image_err(path, format!("sample {v} exceeds maxval {}", hd.maxval)));
    }
    let cs = if hd.channels == 1 {
        ColorSpace::Gray
    } else {
        ColorSpace::Rgb
    };
    from_interleaved(&codes, hd.height, hd.width, cs, hd.maxval)
}

/// Writes an 8-bit image; the format follows the extension (`png`, `pgm`,
/// `ppm`, `pnm`).
pub fn save_image(img: &ImagePlane, path: impl AsRef<Path>) -> Result<()> {
    save_image_with_depth(img, path, BitDepth::Eight)
}

/// Values are scaled by the maximum code and rounded half away from zero.
pub fn save_image_with_depth(img: &ImagePlane, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    if img.colorspace() == ColorSpace::YCbCr {
        return Err(image_err(path, "convert YCbCr images to RGB before saving"));
    }
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let max = depth.max_code() as f32;
    let mut codes = Vec::with_capacity(h * w * c);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                codes.push((img.pixels().at(0, ch, y, x) * max).round() as u32);
            }
        }
    }
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "png" => write_png(path, &codes, h, w, c, depth),
        "pgm" | "ppm" | "pnm" => {
            let magic = if c == 1 { "P5" } else { "P6" };
            let mut out = format!("{magic}\n{w} {h}\n{}\n", depth.max_code()).into_bytes();
            match depth {
                BitDepth::Eight => out.extend(codes.iter().map(|&v| v as u8)),
                BitDepth::Sixteen => out.extend(codes.iter().flat_map(|&v| (v as u16).to_be_bytes())),
            }
            fs::write(path, out).map_err(|e| Error::io(path, e))
        }
        _ => Err(image_err(path, "unknown output extension (use .png, .pgm or .ppm)")),
    }
}

fn write_png(path: &Path, codes: &[u32], h: usize, w: usize, c: usize, depth: BitDepth) -> Result<()> {
    let (w32, h32) = (w as u32, h as u32);
    let dynamic = match (c, depth) {
        (1, BitDepth::Eight) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w32, h32, codes.iter().map(|&v| v as u8).collect())
                .expect("buffer sized from image"),
        ),
        (1, BitDepth::Sixteen) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w32, h32, codes.iter().map(|&v| v as u16).collect())
                .expect("buffer sized from image"),
        ),
        (_, BitDepth::Eight) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w32, h32, codes.iter().map(|&v| v as u8).collect())
                .expect("buffer sized from image"),
        ),
        (_, BitDepth::Sixteen) => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(w32, h32, codes.iter().map(|&v| v as u16).collect())
                .expect("buffer sized from image"),
        ),
    };
    dynamic
        .save_with_format(path, ImageFormat::Png)
        .map_err(|e| image_err(path, e.to_string()))
}
