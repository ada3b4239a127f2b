use super::Image;
use crate::error::{Error, Result};

/// `(0.01 L)^2` with dynamic range `L = 1`.
pub const SSIM_C1: f64 = 1e-4;
/// `(0.03 L)^2` with dynamic range `L = 1`.
pub const SSIM_C2: f64 = 9e-4;

/// Structural similarity from whole-image statistics (population variances
/// and covariance), computed on channel 0 of each image.
pub fn ssim_global(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::shape(
            "ssim_global",
            &[a.height(), a.width()],
            &[b.height(), b.width()],
        ));
    }
    let n = a.pixels();
    if n < 2 {
        return Err(Error::invalid("ssim_global", "need at least two pixels"));
    }
    Ok(ssim_from_slices(a.plane(0), b.plane(0)))
}

pub(crate) fn ssim_from_slices(a: &[f32], b: &[f32]) -> f64 {
    let n = a.len() as f64;
    let mu_a = a.iter().map(|&v| v as f64).sum::<f64>() / n;
    let mu_b = b.iter().map(|&v| v as f64).sum::<f64>() / n;
    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x as f64 - mu_a, y as f64 - mu_b);
        va += dx * dx;
        vb += dy * dy;
        cov += dx * dy;
    }
    let (va, vb, cov) = (va / n, vb / n, cov / n);
    ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (va + vb + SSIM_C2))
}
