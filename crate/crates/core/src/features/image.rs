//! 8-bit PNG / PGM / PPM input and grayscale PNG output.

use std::path::Path;

use image::{DynamicImage, ExtendedColorType, ImageReader};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape4, Tensor4};

/// Decodes an 8-bit grayscale or RGB image to a `(1, c, h, w)` tensor in
/// `[0, 1]`, optionally resized bilinearly to `size = (h, w)`.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>, size: Option<(usize, usize)>) -> Result<Tensor4<T>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let img = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    let t = image_to_tensor(&img).map_err(|e| match e {
        Error::Image(msg) => Error::Image(format!("{}: {msg}", path.display())),
        other => other,
    })?;
    match size {
        Some((h, w)) if (h, w) != (t.shape().h, t.shape().w) => t.bilinear_resize(h, w),
        _ => Ok(t),
    }
}

pub fn image_to_tensor<T: Scalar>(img: &DynamicImage) -> Result<Tensor4<T>> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (c, bytes) = match img {
        DynamicImage::ImageLuma8(b) => (1, b.as_raw().as_slice()),
        DynamicImage::ImageRgb8(b) => (3, b.as_raw().as_slice()),
        other => {
            return Err(Error::Image(format!(
                "unsupported pixel format {:?}; expected 8-bit gray or RGB",
                other.color()
            )))
        }
    };
    let scale = T::from_f64_lossy(1.0 / 255.0);
    Ok(Tensor4::from_fn(Shape4::new(1, c, h, w), |_, ch, y, x| {
        T::from_u8(bytes[(y * w + x) * c + ch]).expect("u8 fits") * scale
    }))
}

/// Writes an 8-bit grayscale PNG; `pixels` is row-major `height x width`.
pub fn save_gray_png(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if pixels.len() != width * height {
        return Err(Error::shape(format!(
            "{} pixels for a {width}x{height} image",
            pixels.len()
        )));
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image::save_buffer_with_format(
        path,
        pixels,
        width as u32,
        height as u32,
        ExtendedColorType::L8,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
}

/// Quantizes a single-channel `[0, 1]` plane to 8 bits.
pub fn plane_to_gray8<T: Scalar>(t: &Tensor4<T>, n: usize, c: usize) -> Vec<u8> {
    t.plane(n, c)
        .iter()
        .map(|v| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}
