//! Full-reference and no-reference image quality scores on `[3,H,W]` images.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::ImageRgb;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_pair<T: Scalar>(op: &'static str, y: &ImageRgb<T>, t: &ImageRgb<T>) -> Result<(usize, usize, usize)> {
    let dims = y.chw()?;
    if y.shape() != t.shape() {
        return Err(Error::shapes(op, y.shape(), t.shape()));
    }
    Ok(dims)
}

/// `10·log10(1 / MSE)` for images in `[0,1]`, capped at [`PSNR_CAP`].
pub fn psnr<T: Scalar>(y: &ImageRgb<T>, t: &ImageRgb<T>) -> Result<f64> {
    check_pair("psnr", y, t)?;
    let mse = y
        .data()
        .iter()
        .zip(t.data())
        .map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2))
        .sum::<f64>()
        / y.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

/// Mean SSIM over non-overlapping 8x8 uniform windows, per channel, then
/// averaged over channels.
pub fn ssim<T: Scalar>(y: &ImageRgb<T>, t: &ImageRgb<T>) -> Result<f64> {
    let (c, h, w) = check_pair("ssim", y, t)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim("ssim", format!("{h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let (ya, ta) = (y.data(), t.data());
    let mut total = 0.0;
    let mut count = 0usize;
    for ci in 0..c {
        for y0 in (0..=h - SSIM_WINDOW).step_by(SSIM_WINDOW) {
            for x0 in (0..=w - SSIM_WINDOW).step_by(SSIM_WINDOW) {
                let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for yy in y0..y0 + SSIM_WINDOW {
                    for xx in x0..x0 + SSIM_WINDOW {
                        let i = (ci * h + yy) * w + xx;
                        let (a, b) = (ya[i].as_f64(), ta[i].as_f64());
                        sa += a;
                        sb += b;
                        saa += a * a;
                        sbb += b * b;
                        sab += a * b;
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let va = saa / n - ma * ma;
                let vb = sbb / n - mb * mb;
                let cov = sab / n - ma * mb;
                total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

/// Colorfulness on the 0–255 scale:
/// `sqrt(σ²_rg + σ²_yb) + 0.3·sqrt(μ²_rg + μ²_yb)` with `rg = R − G`,
/// `yb = (R + G)/2 − B`.
pub fn colorfulness<T: Scalar>(img: &ImageRgb<T>) -> Result<f64> {
    let (c, h, w) = img.chw()?;
    if c != 3 {
        return Err(Error::dim("colorfulness", format!("expected 3 channels, got {c}")));
    }
    let plane = h * w;
    let d = img.data();
    let px = |ch: usize, i: usize| d[ch * plane + i].as_f64() * 255.0;
    let rg: Vec<f64> = (0..plane).map(|i| px(0, i) - px(1, i)).collect();
    let yb: Vec<f64> = (0..plane).map(|i| (px(0, i) + px(1, i)) / 2.0 - px(2, i)).collect();
    let stats = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        (mean, var)
    };
    let (m_rg, v_rg) = stats(&rg);
    let (m_yb, v_yb) = stats(&yb);
    Ok((v_rg + v_yb).sqrt() + 0.3 * (m_rg * m_rg + m_yb * m_yb).sqrt())
}

pub fn delta_cf<T: Scalar>(y: &ImageRgb<T>, t: &ImageRgb<T>) -> Result<f64> {
    Ok((colorfulness(y)? - colorfulness(t)?).abs())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub cf: f64,
    pub delta_cf: f64,
}

impl MetricReport {
    /// Scores `y` against the reference `t`; `cf` is that of `y`.
    pub fn compute<T: Scalar>(y: &ImageRgb<T>, t: &ImageRgb<T>) -> Result<Self> {
        let cf = colorfulness(y)?;
        Ok(Self {
            psnr: psnr(y, t)?,
            ssim: ssim(y, t)?,
            cf,
            delta_cf: (cf - colorfulness(t)?).abs(),
        })
    }

    /// Arithmetic mean of each field; `None` for an empty slice.
    pub fn mean(reports: &[Self]) -> Option<Self> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&Self) -> f64| reports.iter().map(f).sum::<f64>() / n;
        Some(Self {
            psnr: avg(|r| r.psnr),
            ssim: avg(|r| r.ssim),
            cf: avg(|r| r.cf),
            delta_cf: avg(|r| r.delta_cf),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tensor;
    use crate::rng::SplitMix64;

    fn rand_img(h: usize, w: usize, seed: u64) -> ImageRgb<f64> {
        Tensor::uniform(&[3, h, w], 0.0, 1.0, &mut SplitMix64::new(seed))
    }

    #[test]
    fn psnr_anchors() {
        let a = Tensor::<f64>::full(&[3, 4, 4], 0.3);
        let b = Tensor::<f64>::full(&[3, 4, 4], 0.4);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-3);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!(psnr(&a, &Tensor::zeros(&[3, 4, 5])).is_err());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = rand_img(16, 24, 1);
        let b = rand_img(16, 24, 2);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!(ssim(&rand_img(4, 16, 0), &rand_img(4, 16, 1)).is_err());
    }

    #[test]
    fn ssim_constant_offset_closed_form() {
        let a = Tensor::<f64>::full(&[3, 8, 8], 0.2);
        let b = Tensor::<f64>::full(&[3, 8, 8], 0.7);
        let want = (2.0 * 0.2 * 0.7 + SSIM_C1) / (0.2 * 0.2 + 0.7 * 0.7 + SSIM_C1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn ssim_inverted_binary() {
        let a = Tensor::<f64>::from_fn(&[3, 16, 16], |i| ((i / 16 + i) % 2) as f64);
        let b = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &b).unwrap() < 0.1);
    }

    #[test]
    fn colorfulness_gray_and_red() {
        let gray = Tensor::<f64>::from_fn(&[3, 4, 4], |i| (i % 16) as f64 / 16.0);
        assert_eq!(colorfulness(&gray).unwrap(), 0.0);
        let red = Tensor::<f64>::from_fn(&[3, 4, 4], |i| if i < 16 { 1.0 } else { 0.0 });
        let want = 0.3 * (255.0f64 * 255.0 + 127.5 * 127.5).sqrt();
        assert!((colorfulness(&red).unwrap() - want).abs() < 1e-9);
        assert!((delta_cf(&gray, &red).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn report_mean() {
        let r = |p| MetricReport { psnr: p, ssim: 1.0, cf: 2.0, delta_cf: 0.0 };
        assert_eq!(MetricReport::mean(&[r(10.0), r(20.0)]).unwrap().psnr, 15.0);
        assert!(MetricReport::mean(&[]).is_none());
    }
}
