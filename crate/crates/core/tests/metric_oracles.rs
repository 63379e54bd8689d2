use bridgekd::metrics::{mse, psnr, ssim, SsimConfig};
use bridgekd::rng::{derive_seed, standard_normal, stream};
use bridgekd::Tensor;

/// Direct sliding-window SSIM: a full 2-D Gaussian window evaluated at every
/// valid position, with sample statistics accumulated in a double loop.
fn brute_force_ssim(a: &Tensor, b: &Tensor, l: f64) -> f64 {
    let (h, w) = (a.shape()[1], a.shape()[2]);
    let (size, sigma) = (11usize, 1.5f64);
    let r = (size / 2) as f64;
    let mut win = vec![0.0; size * size];
    for i in 0..size {
        for j in 0..size {
            let (di, dj) = (i as f64 - r, j as f64 - r);
            win[i * size + j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let z: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= z);
    let (c1, c2) = ((0.01 * l).powi(2), (0.03 * l).powi(2));
    let (da, db) = (a.data(), b.data());
    let mut total = 0.0;
    let mut count = 0;
    for y in 0..=h - size {
        for x in 0..=w - size {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..size {
                for j in 0..size {
                    let (k, g) = ((y + i) * w + x + j, win[i * size + j]);
                    ma += g * da[k];
                    mb += g * db[k];
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..size {
                for j in 0..size {
                    let (k, g) = ((y + i) * w + x + j, win[i * size + j]);
                    va += g * (da[k] - ma).powi(2);
                    vb += g * (db[k] - mb).powi(2);
                    cov += g * (da[k] - ma) * (db[k] - mb);
                }
            }
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn windowed_ssim_equals_brute_force() {
    let cfg = SsimConfig::with_range(2.0);
    for i in 0..20 {
        let a = standard_normal(&mut stream(derive_seed(3, i)), &[1, 32, 32]).map(|v| (0.4 * v).tanh());
        let noise = standard_normal(&mut stream(derive_seed(4, i)), &[1, 32, 32]);
        let b = a
            .zip_map(&noise, |x, n| (x + 0.1 * (i as f64 + 1.0) * n).clamp(-1.0, 1.0))
            .unwrap();
        let fast = ssim(&a, &b, &cfg).unwrap();
        let slow = brute_force_ssim(&a, &b, 2.0);
        assert!((fast - slow).abs() <= 1e-9, "pair {i}: {fast} vs {slow}");
    }
}

#[test]
fn identities() {
    let cfg = SsimConfig::with_range(2.0);
    let x = standard_normal(&mut stream(9), &[1, 24, 24]);
    assert!((ssim(&x, &x, &cfg).unwrap() - 1.0).abs() <= 1e-12);

    // Constant images: the structure term is C2/C2 and the luminance term
    // is C1 / (mu_b^2 + C1).
    let zero = Tensor::zeros(&[1, 16, 16]);
    let tenth = Tensor::full(&[1, 16, 16], 0.1);
    let c1 = (0.01f64 * 2.0).powi(2);
    let want = c1 / (0.01 + c1);
    assert!((ssim(&zero, &tenth, &cfg).unwrap() - want).abs() <= 1e-12);
    assert!((want - 0.038_461_538).abs() < 1e-9);

    let y = standard_normal(&mut stream(10), &[1, 24, 24]);
    let m = mse(&x, &y).unwrap();
    assert_eq!(psnr(&x, &y, 1.0).unwrap(), -10.0 * m.log10());
}

#[test]
fn window_larger_than_image_is_rejected() {
    let a = Tensor::zeros(&[1, 10, 10]);
    assert!(ssim(&a, &a, &SsimConfig::default()).is_err());
}
