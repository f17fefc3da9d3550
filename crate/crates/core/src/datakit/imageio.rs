//! Single-channel image files: 8/16-bit PNG or PGM in, PNG out.

use std::path::Path;

use dfseg_nn::Scalar;
use image::{DynamicImage, GrayImage, ImageBuffer, Luma};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::{Image, Mask};

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.exists() {
        return Err(Error::Load {
            path: path.to_path_buf(),
            reason: "file does not exist".into(),
        });
    }
    image::open(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Raw intensities, unscaled: 0..=255 for 8-bit files, 0..=65535 for 16-bit.
pub fn read_intensity<T: Scalar>(path: &Path) -> Result<Image<T>> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<T> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(|v| T::from_u8(v).unwrap()).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(|v| T::from_u16(v).unwrap()).collect(),
        other if other.color().bytes_per_pixel() > other.color().channel_count() => other
            .to_luma16()
            .into_raw()
            .into_iter()
            .map(|v| T::from_u16(v).unwrap())
            .collect(),
        other => other
            .to_luma8()
            .into_raw()
            .into_iter()
            .map(|v| T::from_u8(v).unwrap())
            .collect(),
    };
    Ok(Array2::from_shape_vec((h, w), data).expect("decoder yields h*w pixels"))
}

/// Binary mask; pixels at or above half range are lesion.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|v| v >= 128).collect();
    Ok(Array2::from_shape_vec((h, w), data).expect("decoder yields h*w pixels"))
}

fn save_err(path: &Path, e: image::ImageError) -> Error {
    Error::Runtime(format!("cannot write {}: {e}", path.display()))
}

/// Writes an image in [0,1] as a 16-bit grayscale PNG.
pub fn write_gray16<T: Scalar>(path: &Path, img: &Image<T>) -> Result<()> {
    let (h, w) = img.dim();
    let max = T::lit(65535.0);
    let data: Vec<u16> = img
        .iter()
        .map(|&v| (v.max(T::zero()).min(T::one()) * max).round().to_u16().unwrap_or(0))
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(w as u32, h as u32, data).expect("w*h pixels");
    buf.save(path).map_err(|e| save_err(path, e))
}

/// Writes a mask as an 8-bit PNG with 255 = lesion.
pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let (h, w) = mask.dim();
    let data = mask.iter().map(|&b| if b { 255u8 } else { 0 }).collect();
    let buf = GrayImage::from_raw(w as u32, h as u32, data).expect("w*h pixels");
    buf.save(path).map_err(|e| save_err(path, e))
}
