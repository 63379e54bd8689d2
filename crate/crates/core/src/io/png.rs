//! 16-bit grayscale exports for viewing: `[-1, 1]` maps linearly onto
//! `[0, 65535]`.

use std::fs;
use std::path::Path;

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn plane_dims(image: &Tensor) -> Result<(usize, usize)> {
    match image.shape() {
        &[1, h, w] | &[h, w] => Ok((h, w)),
        s => Err(Error::shape("export", format!("expected [1,H,W] or [H,W], got {s:?}"))),
    }
}

pub fn quantize(v: f64) -> u16 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 0.5 * 65535.0).round() as u16
}

pub fn dequantize(q: u16) -> f64 {
    q as f64 / 65535.0 * 2.0 - 1.0
}

/// Writes a single-channel image as 16-bit PNG, or as binary PGM (`P5`) when
/// the path ends in `.pgm`.
pub fn export_png(image: &Tensor, path: &Path) -> Result<()> {
    let (h, w) = plane_dims(image)?;
    let pixels: Vec<u16> = image.data().iter().map(|&v| quantize(v)).collect();
    let is_pgm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        let mut bytes = format!("P5\n{w} {h}\n65535\n").into_bytes();
        for p in pixels {
            bytes.extend_from_slice(&p.to_be_bytes());
        }
        return fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e));
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, pixels).ok_or_else(|| Error::shape("export_png", "buffer size"))?;
    buf.save(path)
        .map_err(|e| Error::io(format!("writing {}", path.display()), std::io::Error::other(e)))
}

/// Reads a 16-bit grayscale PNG back into `[1,H,W]` on `[-1, 1]`.
pub fn import_png(path: &Path) -> Result<Tensor> {
    let img = image::open(path)
        .map_err(|e| Error::format(path, format!("cannot decode PNG: {e}")))?
        .into_luma16();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(dequantize).collect();
    Tensor::new(vec![1, h as usize, w as usize], data)
}
