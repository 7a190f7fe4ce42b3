//! Image quality measures: PSNR and SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// PSNR cap for (near-)identical images, in dB.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
}

/// 10·log₁₀(d₁d₂·max²/‖x−x̂‖²), capped at 99 dB.
pub fn psnr(reference: &Image, estimate: &Image, max_val: f64) -> Result<f64> {
    if !reference.same_shape(estimate) {
        return Err(Error::invalid("psnr: shape mismatch"));
    }
    if max_val <= 0.0 {
        return Err(Error::invalid("psnr: max_val must be positive"));
    }
    let sse: f64 = reference
        .data()
        .iter()
        .zip(estimate.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if sse == 0.0 {
        return Ok(PSNR_CAP);
    }
    let d = reference.len() as f64;
    Ok((10.0 * (d * max_val * max_val / sse).log10()).min(PSNR_CAP))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean local SSIM with an 11×11 Gaussian window (σ = 1.5), K₁ = 0.01,
/// K₂ = 0.03, dynamic range 1. Windows are fully inside the image.
pub fn ssim(x: &Image, y: &Image) -> Result<f64> {
    if !x.same_shape(y) {
        return Err(Error::invalid("ssim: shape mismatch"));
    }
    let (w, h) = (x.width(), x.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim: image {w}x{h} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let center = (SSIM_WINDOW as f64 - 1.0) / 2.0;
    let mut kernel = [0.0f64; SSIM_WINDOW];
    for (t, k) in kernel.iter_mut().enumerate() {
        *k = (-((t as f64 - center).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }

    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);

    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=(h - SSIM_WINDOW) {
        for c0 in 0..=(w - SSIM_WINDOW) {
            let mut mx = 0.0;
            let mut my = 0.0;
            let mut mxx = 0.0;
            let mut myy = 0.0;
            let mut mxy = 0.0;
            for dr in 0..SSIM_WINDOW {
                for dc in 0..SSIM_WINDOW {
                    let wgt = kernel[dr] * kernel[dc];
                    let a = x.get(r0 + dr, c0 + dc);
                    let b = y.get(r0 + dr, c0 + dc);
                    mx += wgt * a;
                    my += wgt * b;
                    mxx += wgt * a * a;
                    myy += wgt * b * b;
                    mxy += wgt * a * b;
                }
            }
            let vx = mxx - mx * mx;
            let vy = myy - my * my;
            let cxy = mxy - mx * my;
            let val = ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            total += val;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn report(reference: &Image, estimate: &Image, max_val: f64) -> Result<MetricReport> {
    Ok(MetricReport { psnr: psnr(reference, estimate, max_val)?, ssim: ssim(reference, estimate)? })
}
