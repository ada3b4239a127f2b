use super::Image;
use crate::error::{Error, Result};

/// 8-bit level of a `[0, 1]` value: `round(v * 255)`.
#[inline]
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn histogram256(gray: &Image) -> [u64; 256] {
    let mut h = [0u64; 256];
    for &v in gray.plane(0) {
        h[quantize(v) as usize] += 1;
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OtsuResult {
    /// Upper edge of the last background bin, `(bin + 0.5) / 255`.
    pub threshold: f32,
    /// Last 8-bit level assigned to the background class.
    pub bin: u8,
    /// Only one level occupied; `bin` is that level.
    pub degenerate: bool,
}

/// Global threshold maximizing the between-class variance
/// `w0 * w1 * (mu0 - mu1)^2` of the 256-bin histogram. Ties go to the
/// smallest level.
pub fn otsu_threshold(gray: &Image) -> Result<OtsuResult> {
    if gray.channels() != 1 {
        return Err(Error::invalid(
            "otsu_threshold",
            format!("expected a grayscale image, got {} channels", gray.channels()),
        ));
    }
    let hist = histogram256(gray);
    let occupied: Vec<usize> = (0..256).filter(|&i| hist[i] > 0).collect();
    if occupied.len() == 1 {
        let bin = occupied[0] as u8;
        return Ok(OtsuResult {
            threshold: edge(bin),
            bin,
            degenerate: true,
        });
    }

    let total = gray.pixels() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut best = (0usize, f64::NEG_INFINITY);
    let (mut n0, mut s0) = (0.0, 0.0);
    for (t, &c) in hist.iter().enumerate() {
        n0 += c as f64;
        s0 += t as f64 * c as f64;
        let n1 = total - n0;
        let var = if n0 == 0.0 || n1 == 0.0 {
            0.0
        } else {
            let (w0, w1) = (n0 / total, n1 / total);
            let (mu0, mu1) = (s0 / n0, (sum_all - s0) / n1);
            w0 * w1 * (mu0 - mu1) * (mu0 - mu1)
        };
        if var > best.1 {
            best = (t, var);
        }
    }
    let bin = best.0 as u8;
    Ok(OtsuResult {
        threshold: edge(bin),
        bin,
        degenerate: false,
    })
}

fn edge(bin: u8) -> f32 {
    (bin as f32 + 0.5) / 255.0
}

/// `1` where the pixel exceeds `t`, else `0`. Uses channel 0.
pub fn binarize(gray: &Image, t: f32) -> Image {
    let data = gray
        .plane(0)
        .iter()
        .map(|&v| if v > t { 1.0 } else { 0.0 })
        .collect();
    Image::new(gray.width(), gray.height(), 1, data).expect("binary values in range")
}
