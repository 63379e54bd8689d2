//! `IMGF` single-image files.
//!
//! Layout (all little-endian):
//!
//! ```text
//! b"IMGF" | u32 width | u32 height | u32 channels | f32 × channels·height·width
//! ```
//!
//! Samples are row-major within a channel plane, planes in channel order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"IMGF";
const HEADER_LEN: usize = 16;

/// Encodes a `[C,H,W]` tensor. Values are narrowed to `f32`.
pub fn encode_imgf(image: &Tensor) -> Result<Vec<u8>> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::shape(
            "encode_imgf",
            format!("expected [C,H,W], got {:?}", image.shape()),
        ));
    };
    let dim =
        |v: usize| u32::try_from(v).map_err(|_| Error::shape("encode_imgf", format!("dimension {v} exceeds u32")));
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * image.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&dim(w)?.to_le_bytes());
    out.extend_from_slice(&dim(h)?.to_le_bytes());
    out.extend_from_slice(&dim(c)?.to_le_bytes());
    for &v in image.data() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::NonFinite { op: "encode_imgf" });
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_imgf(bytes: &[u8], path: &Path) -> Result<Tensor> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format(path, "not an IMGF image"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (w, h, c) = (word(4), word(8), word(12));
    let count = c
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .ok_or_else(|| Error::format(path, "IMGF dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count * 4 {
        return Err(Error::format(
            path,
            format!("IMGF payload is {} bytes, header implies {}", payload.len(), count * 4),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Tensor::new(vec![c, h, w], data).map_err(|_| Error::format(path, "IMGF contains non-finite samples"))
}

pub fn write_imgf(image: &Tensor, path: &Path) -> Result<()> {
    let bytes = encode_imgf(image)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_imgf(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_imgf(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![1, 2, 3], vec![0.0, 0.5, -1.0, 1.0, 0.25, -0.75]).unwrap();
        let b = encode_imgf(&t).unwrap();
        assert_eq!(&b[..4], b"IMGF");
        assert_eq!(&b[4..8], &3u32.to_le_bytes());
        assert_eq!(&b[8..12], &2u32.to_le_bytes());
        assert_eq!(&b[12..16], &1u32.to_le_bytes());
        assert_eq!(&b[16..20], &0f32.to_le_bytes());
        assert_eq!(&b[20..24], &0.5f32.to_le_bytes());
        assert_eq!(b.len(), 16 + 6 * 4);
        assert_eq!(decode_imgf(&b, Path::new("x")).unwrap(), t);
    }

    #[test]
    fn malformed_inputs_rejected() {
        let t = Tensor::full(&[1, 2, 2], 0.5);
        let b = encode_imgf(&t).unwrap();
        let p = Path::new("bad.imgf");
        assert!(decode_imgf(&b[..b.len() - 1], p).is_err());
        assert!(decode_imgf(&b[..10], p).is_err());
        let mut wrong = b.clone();
        wrong[0] = b'X';
        assert!(decode_imgf(&wrong, p).is_err());
        let mut extra = b;
        extra.push(0);
        assert!(decode_imgf(&extra, p).is_err());
        assert!(encode_imgf(&Tensor::zeros(&[4, 4])).is_err());
    }
}
