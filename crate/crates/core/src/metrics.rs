//! Image quality metrics.

use crate::error::Result;
use crate::image::Image;
use crate::loss;
use crate::math;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 100.0;

/// Peak signal-to-noise ratio in dB for images in `[0, 1]`, capped at 100 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "psnr inputs")?;
    if a.data.is_empty() {
        return Ok(PSNR_CAP);
    }
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * math::log10(mse)).min(PSNR_CAP))
}

/// Single-scale SSIM (11-tap Gaussian window, σ = 1.5), same kernel as the training loss.
pub fn ssim_metric(a: &Image, b: &Image) -> Result<f64> {
    loss::ssim(a, b, 11, 1.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let z = Image::new(4, 4, 3);
        let o = Image::filled(4, 4, 3, 1.0);
        assert_eq!(psnr(&z, &z).unwrap(), 100.0);
        assert_eq!(psnr(&z, &o).unwrap(), 0.0);
        let t = Image::filled(4, 4, 3, 0.1);
        assert!((psnr(&z, &t).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&z, &t).unwrap(), psnr(&t, &z).unwrap());
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let a = Image::from_fn(16, 16, 3, |x, y, c| ((x * 7 + y * 3 + c) % 11) as f64 / 10.0);
        assert!((ssim_metric(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }
}
