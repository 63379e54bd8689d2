//! Full-reference image quality: MSE, PSNR and SSIM, plus set-level reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    a.ensure_same_shape(b, "mse")?;
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// `10·log10(peak² / mse)` in dB; `+inf` for identical images.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("psnr peak must be > 0, got {peak}")));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L` of the pixel values.
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 2.0,
        }
    }
}

impl SsimConfig {
    pub fn with_range(dynamic_range: f64) -> Self {
        SsimConfig {
            dynamic_range,
            ..Default::default()
        }
    }

    /// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / total).collect()
    }

    pub fn constants(&self) -> (f64, f64) {
        (
            (self.k1 * self.dynamic_range).powi(2),
            (self.k2 * self.dynamic_range).powi(2),
        )
    }
}

/// Valid-mode separable filtering of a `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let n = taps.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + n]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all window positions fully inside the image.
///
/// Multi-channel images are treated as a stack of planes and averaged.
pub fn ssim(a: &Tensor, b: &Tensor, cfg: &SsimConfig) -> Result<f64> {
    a.ensure_same_shape(b, "ssim")?;
    if !(cfg.dynamic_range > 0.0) || cfg.window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("bad SSIM config {cfg:?}")));
    }
    let shape = a.shape();
    if shape.len() < 2 {
        return Err(Error::shape("ssim", format!("need at least [H,W], got {shape:?}")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h < cfg.window || w < cfg.window {
        return Err(Error::shape(
            "ssim",
            format!("{h}x{w} image is smaller than the {0}x{0} window", cfg.window),
        ));
    }
    let taps = cfg.taps();
    let (c1, c2) = cfg.constants();
    let planes = a.len() / (h * w);
    let mut total = 0.0;
    for p in 0..planes {
        let pa = &a.data()[p * h * w..(p + 1) * h * w];
        let pb = &b.data()[p * h * w..(p + 1) * h * w];
        let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { pa.iter().zip(pb).map(|(&x, &y)| f(x, y)).collect() };
        let mu_a = filter_valid(pa, h, w, &taps);
        let mu_b = filter_valid(pb, h, w, &taps);
        let e_aa = filter_valid(&prod(|x, _| x * x), h, w, &taps);
        let e_bb = filter_valid(&prod(|_, y| y * y), h, w, &taps);
        let e_ab = filter_valid(&prod(|x, y| x * y), h, w, &taps);
        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / mu_a.len() as f64;
    }
    Ok(total / planes as f64)
}

mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad float `{t}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub mse: f64,
    #[serde(with = "inf_as_string")]
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dataset: String,
    pub model: String,
    pub peak: f64,
    pub ssim_config: SsimConfig,
    pub mean_mse: f64,
    pub mean_ssim: f64,
    /// Mean over finite per-image PSNRs; `inf` when every pair was identical.
    #[serde(with = "inf_as_string")]
    pub mean_psnr_db: f64,
    pub psnr_excluded: usize,
    pub images: Vec<ImageMetrics>,
}

/// Scores every `(pred, truth)` pair and aggregates by arithmetic mean.
pub fn evaluate_pairs(
    preds: &[Tensor],
    truths: &[Tensor],
    ids: &[String],
    peak: f64,
    ssim_config: &SsimConfig,
) -> Result<MetricsReport> {
    if preds.len() != truths.len() || preds.len() != ids.len() {
        return Err(Error::InvalidArgument(format!(
            "evaluate_pairs: {} predictions, {} truths, {} ids",
            preds.len(),
            truths.len(),
            ids.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::InvalidArgument("evaluate_pairs: no images".into()));
    }
    let images = preds
        .par_iter()
        .zip(truths)
        .zip(ids)
        .map(|((p, t), id)| {
            Ok(ImageMetrics {
                id: id.clone(),
                mse: mse(p, t)?,
                psnr_db: psnr(p, t, peak)?,
                ssim: ssim(p, t, ssim_config)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = images.len() as f64;
    let finite: Vec<f64> = images.iter().map(|m| m.psnr_db).filter(|v| v.is_finite()).collect();
    let mean_psnr_db = if finite.is_empty() {
        f64::INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    Ok(MetricsReport {
        dataset: String::new(),
        model: String::new(),
        peak,
        ssim_config: *ssim_config,
        mean_mse: images.iter().map(|m| m.mse).sum::<f64>() / n,
        mean_ssim: images.iter().map(|m| m.ssim).sum::<f64>() / n,
        mean_psnr_db,
        psnr_excluded: images.len() - finite.len(),
        images,
    })
}

impl MetricsReport {
    pub fn labelled(mut self, dataset: impl Into<String>, model: impl Into<String>) -> Self {
        self.dataset = dataset.into();
        self.model = model.into();
        self
    }
}

/// Aligned text table with one row per report: MSE, SSIM, PSNR.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let width = reports.iter().map(|r| r.model.len()).max().unwrap_or(0).max(5);
    let mut out = format!("{:<width$}  {:>10}  {:>8}  {:>8}\n", "Model", "MSE", "SSIM", "PSNR");
    for r in reports {
        let psnr = if r.mean_psnr_db.is_finite() {
            format!("{:.2}", r.mean_psnr_db)
        } else {
            "inf".to_string()
        };
        out.push_str(&format!(
            "{:<width$}  {:>10.4}  {:>8.4}  {:>8}\n",
            r.model, r.mean_mse, r.mean_ssim, psnr
        ));
    }
    out
}
