//! CT → CBCT-like degradation.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tomo::{equally_spaced_angles, fbp_reconstruct, radon_transform};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationConfig {
    pub n_views: usize,
    /// `a` in the radial bias `a·(r/R)² − a/2`.
    pub cupping_amplitude: f64,
    pub noise_sigma: f64,
    /// Contrast multiplier about the image mean, in `(0, 1]`.
    pub contrast_scale: f64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        DegradationConfig {
            n_views: 16,
            cupping_amplitude: 0.08,
            noise_sigma: 0.01,
            contrast_scale: 0.85,
        }
    }
}

impl DegradationConfig {
    /// 180 views with no bias, noise or contrast loss: plain FBP.
    pub fn dense() -> Self {
        DegradationConfig {
            n_views: 180,
            cupping_amplitude: 0.0,
            noise_sigma: 0.0,
            contrast_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_views == 0 {
            return Err(Error::config("degradation.n_views", "must be >= 1"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::config("degradation.noise_sigma", "must be finite and >= 0"));
        }
        if !(self.contrast_scale > 0.0 && self.contrast_scale <= 1.0) {
            return Err(Error::config("degradation.contrast_scale", "must lie in (0, 1]"));
        }
        if !self.cupping_amplitude.is_finite() {
            return Err(Error::config("degradation.cupping_amplitude", "must be finite"));
        }
        Ok(())
    }
}

/// Simulates a CBCT-like acquisition of `pct` (`[1,N,N]`, values in `[0, 1]`).
///
/// Body support for the cupping term is `pct > 0`; `r` is measured from the
/// image centre and `R = N/2`.
pub fn degrade_to_cbct(pct: &Tensor, cfg: &DegradationConfig, seed: u64) -> Result<Tensor> {
    cfg.validate()?;
    let n = match pct.shape() {
        &[1, h, w] if h == w => h,
        s => return Err(Error::shape("degrade_to_cbct", format!("expected [1,N,N], got {s:?}"))),
    };
    let mean = pct.mean();
    let scaled = pct.map(|v| mean + cfg.contrast_scale * (v - mean));
    let angles = equally_spaced_angles(cfg.n_views);
    let mut recon = fbp_reconstruct(&radon_transform(&scaled, &angles)?, &angles, n)?;

    let c = (n as f64 - 1.0) / 2.0;
    let big_r = n as f64 / 2.0;
    let a = cfg.cupping_amplitude;
    let mut rng = stream(seed);
    let noise =
        Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::config("degradation.noise_sigma", e.to_string()))?;
    for (i, (v, &body)) in recon.data_mut().iter_mut().zip(pct.data()).enumerate() {
        if body > 0.0 {
            let (y, x) = ((i / n) as f64 - c, (i % n) as f64 - c);
            let r2 = (x * x + y * y) / (big_r * big_r);
            *v += a * r2 - a / 2.0;
        }
        if cfg.noise_sigma > 0.0 {
            *v += noise.sample(&mut rng);
        }
        *v = v.clamp(0.0, 1.0);
    }
    Ok(recon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{mse, ssim, SsimConfig};
    use crate::phantom::generate_phantom;

    #[test]
    fn dense_clean_config_is_faithful() {
        let p = generate_phantom(5, 64).unwrap();
        let out = degrade_to_cbct(&p, &DegradationConfig::dense(), 0).unwrap();
        let rmse = mse(&out, &p).unwrap().sqrt();
        assert!(rmse <= 0.05, "rmse {rmse}");
    }

    #[test]
    fn sparse_default_is_visibly_worse() {
        let cfg = SsimConfig::with_range(1.0);
        for seed in 0..3 {
            let p = generate_phantom(seed, 32).unwrap();
            let sparse = degrade_to_cbct(&p, &DegradationConfig::default(), seed).unwrap();
            let dense = degrade_to_cbct(&p, &DegradationConfig::dense(), seed).unwrap();
            let (s_sparse, s_dense) = (ssim(&sparse, &p, &cfg).unwrap(), ssim(&dense, &p, &cfg).unwrap());
            assert!(s_sparse < 0.9, "seed {seed}: {s_sparse}");
            assert!(s_sparse < s_dense, "seed {seed}: {s_sparse} vs {s_dense}");
        }
    }

    #[test]
    fn deterministic_per_seed_and_bounded() {
        let p = generate_phantom(9, 32).unwrap();
        let quiet = DegradationConfig {
            noise_sigma: 0.0,
            ..Default::default()
        };
        assert_eq!(
            degrade_to_cbct(&p, &quiet, 1).unwrap(),
            degrade_to_cbct(&p, &quiet, 1).unwrap()
        );
        let cfg = DegradationConfig::default();
        let a = degrade_to_cbct(&p, &cfg, 1).unwrap();
        assert_eq!(a, degrade_to_cbct(&p, &cfg, 1).unwrap());
        assert_ne!(a, degrade_to_cbct(&p, &cfg, 2).unwrap());
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_invalid_config() {
        let p = generate_phantom(0, 16).unwrap();
        for bad in [
            DegradationConfig {
                n_views: 0,
                ..Default::default()
            },
            DegradationConfig {
                noise_sigma: -0.1,
                ..Default::default()
            },
            DegradationConfig {
                contrast_scale: 0.0,
                ..Default::default()
            },
            DegradationConfig {
                contrast_scale: 1.5,
                ..Default::default()
            },
        ] {
            assert!(degrade_to_cbct(&p, &bad, 0).is_err());
        }
    }
}
