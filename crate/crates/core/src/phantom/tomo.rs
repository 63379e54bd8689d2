//! Parallel-beam projection and filtered backprojection on a square grid.
//!
//! Pixel units throughout. The rotation centre is `c = (N − 1) / 2` in both
//! axes; detector bin `j` sits at signed offset `u = j − c`. For angle `θ`
//! the detector axis is `(cos θ, sin θ)` in `(col, row)` coordinates and rays
//! run along `(−sin θ, cos θ)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const RAY_STEP: f64 = 0.5;

/// `n` angles evenly covering `[0, π)`.
pub fn equally_spaced_angles(n: usize) -> Vec<f64> {
    (0..n).map(|i| i as f64 * PI / n as f64).collect()
}

fn square_image(image: &Tensor, op: &'static str) -> Result<usize> {
    match image.shape() {
        &[1, h, w] if h == w => Ok(h),
        s => Err(Error::shape(op, format!("expected [1,N,N], got {s:?}"))),
    }
}

/// Bilinear sample with zeros outside the grid.
fn bilinear(data: &[f64], n: usize, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let (x0, y0) = (x0 as isize, y0 as isize);
    let at = |c: isize, r: isize| -> f64 {
        if c < 0 || r < 0 || c >= n as isize || r >= n as isize {
            0.0
        } else {
            data[r as usize * n + c as usize]
        }
    };
    (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x0 + 1, y0))
        + fy * ((1.0 - fx) * at(x0, y0 + 1) + fx * at(x0 + 1, y0 + 1))
}

/// Line integrals of `image[1,N,N]` for each angle, `N` detector bins each.
///
/// Each ray is sampled every half pixel, symmetrically about its closest
/// approach to the centre, with bilinear interpolation.
pub fn radon_transform(image: &Tensor, angles: &[f64]) -> Result<Tensor> {
    let n = square_image(image, "radon_transform")?;
    if angles.is_empty() {
        return Err(Error::InvalidArgument(
            "radon_transform needs at least one angle".into(),
        ));
    }
    let c = (n as f64 - 1.0) / 2.0;
    // half-diagonal plus one pixel of margin
    let reach = ((c * std::f64::consts::SQRT_2 + 1.0) / RAY_STEP).ceil() as isize;
    let data = image.data();
    let mut sino = Vec::with_capacity(angles.len() * n);
    for &theta in angles {
        let (s, co) = theta.sin_cos();
        for j in 0..n {
            let u = j as f64 - c;
            let (bx, by) = (c + u * co, c + u * s);
            let mut acc = 0.0;
            for k in -reach..=reach {
                let t = k as f64 * RAY_STEP;
                acc += bilinear(data, n, bx - t * s, by + t * co);
            }
            sino.push(acc * RAY_STEP);
        }
    }
    let out = Tensor::from_parts(vec![angles.len(), n], sino);
    out.check_finite("radon_transform")?;
    Ok(out)
}

/// Spatial Ram-Lak kernel for unit detector spacing, indexed `-(len-1)..=(len-1)`:
/// `h(0) = 1/4`, `h(odd m) = −1/(π²m²)`, zero otherwise.
pub fn ramp_kernel(len: usize) -> Vec<f64> {
    let half = len as isize - 1;
    (-half..=half)
        .map(|m| {
            if m == 0 {
                0.25
            } else if m % 2 != 0 {
                -1.0 / (PI * PI * (m * m) as f64)
            } else {
                0.0
            }
        })
        .collect()
}

/// Ramp-filters every projection and backprojects onto a `size x size` grid,
/// scaled by `π / len(angles)`. Negative values are clamped to zero.
pub fn fbp_reconstruct(sinogram: &Tensor, angles: &[f64], size: usize) -> Result<Tensor> {
    let &[n_angles, n_det] = sinogram.shape() else {
        return Err(Error::shape(
            "fbp_reconstruct",
            format!("expected [A,N], got {:?}", sinogram.shape()),
        ));
    };
    if n_angles != angles.len() || n_det != size || n_angles == 0 {
        return Err(Error::shape(
            "fbp_reconstruct",
            format!(
                "sinogram {:?} with {} angles onto {size}x{size}",
                sinogram.shape(),
                angles.len()
            ),
        ));
    }
    let kernel = ramp_kernel(n_det);
    let centre_tap = n_det - 1;
    let mut filtered = vec![0.0; n_angles * n_det];
    for (proj, out) in sinogram
        .data()
        .chunks_exact(n_det)
        .zip(filtered.chunks_exact_mut(n_det))
    {
        for (j, o) in out.iter_mut().enumerate() {
            *o = proj
                .iter()
                .enumerate()
                .map(|(m, p)| p * kernel[centre_tap + j - m])
                .sum();
        }
    }

    let c = (size as f64 - 1.0) / 2.0;
    let scale = PI / n_angles as f64;
    let trig: Vec<(f64, f64)> = angles.iter().map(|a| a.sin_cos()).collect();
    let mut img = vec![0.0; size * size];
    for row in 0..size {
        let y = row as f64 - c;
        for col in 0..size {
            let x = col as f64 - c;
            let mut acc = 0.0;
            for (q, &(s, co)) in filtered.chunks_exact(n_det).zip(&trig) {
                let pos = x * co + y * s + c;
                let j0 = pos.floor();
                let f = pos - j0;
                let j0 = j0 as isize;
                let get = |j: isize| {
                    if j < 0 || j >= n_det as isize {
                        0.0
                    } else {
                        q[j as usize]
                    }
                };
                acc += (1.0 - f) * get(j0) + f * get(j0 + 1);
            }
            img[row * size + col] = (acc * scale).max(0.0);
        }
    }
    let out = Tensor::from_parts(vec![1, size, size], img);
    out.check_finite("fbp_reconstruct")?;
    Ok(out)
}
