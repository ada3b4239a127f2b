use super::Image;
use crate::error::{Error, Result};

pub fn green_channel(rgb: &Image) -> Result<Image> {
    if rgb.channels() != 3 {
        return Err(Error::invalid("green_channel", format!("expected RGB, got {} channels", rgb.channels())));
    }
    Ok(rgb.channel(1))
}

const POWER_ITERS: usize = 100;
const POWER_TOL: f64 = 1e-10;

type Mat3 = [[f64; 3]; 3];

fn mat_vec(m: &Mat3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

fn norm(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

/// Dominant eigenvector by power iteration. Iterating from each basis vector
/// and keeping the largest Rayleigh quotient avoids a start orthogonal to it.
fn principal_axis(cov: &Mat3) -> Option<[f64; 3]> {
    let mut best: Option<([f64; 3], f64)> = None;
    for start in 0..3 {
        let mut v = [0.0; 3];
        v[start] = 1.0;
        for _ in 0..POWER_ITERS {
            let mv = mat_vec(cov, v);
            let n = norm(mv);
            if n == 0.0 {
                break;
            }
            let next = mv.map(|x| x / n);
            let delta = norm([next[0] - v[0], next[1] - v[1], next[2] - v[2]]);
            v = next;
            if delta < POWER_TOL {
                break;
            }
        }
        let mv = mat_vec(cov, v);
        let rq = v[0] * mv[0] + v[1] * mv[1] + v[2] * mv[2];
        if best.is_none_or(|(_, b)| rq > b) {
            best = Some((v, rq));
        }
    }
    best.filter(|&(_, rq)| rq > 0.0).map(|(v, _)| v)
}

/// Projection of the mean-centred RGB vectors onto the first principal
/// component, sign-fixed so the green loading is non-negative, then min-max
/// normalized to `[0, 1]`.
pub fn pca_gray(rgb: &Image) -> Result<Image> {
    if rgb.channels() != 3 {
        return Err(Error::invalid("pca_gray", format!("expected RGB, got {} channels", rgb.channels())));
    }
    let n = rgb.pixels();
    let planes = [rgb.plane(0), rgb.plane(1), rgb.plane(2)];
    let mean = planes.map(|p| p.iter().map(|&v| v as f64).sum::<f64>() / n as f64);
    let mut cov = [[0.0; 3]; 3];
    for i in 0..n {
        let d = [0, 1, 2].map(|c| planes[c][i] as f64 - mean[c]);
        for r in 0..3 {
            for c in 0..3 {
                cov[r][c] += d[r] * d[c];
            }
        }
    }
    for row in &mut cov {
        for v in row.iter_mut() {
            *v /= n as f64;
        }
    }
    let degenerate = || Error::Degenerate {
        op: "pca_gray",
        msg: "image has no colour variance".into(),
    };
    let mut axis = principal_axis(&cov).ok_or_else(degenerate)?;
    if axis[1] < 0.0 {
        axis = axis.map(|x| -x);
    }
    let proj: Vec<f64> = (0..n)
        .map(|i| (0..3).map(|c| (planes[c][i] as f64 - mean[c]) * axis[c]).sum())
        .collect();
    let (lo, hi) = proj
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &p| (lo.min(p), hi.max(p)));
    if !(hi - lo > 1e-12) {
        return Err(degenerate());
    }
    let data = proj.iter().map(|&p| ((p - lo) / (hi - lo)) as f32).collect();
    Image::from_clamped(rgb.width(), rgb.height(), 1, data)
}

/// Power-law contrast change `v^gamma`, applied to every channel.
pub fn gamma(img: &Image, g: f32) -> Image {
    img.map(|v| v.powf(g))
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_rgb(seed: u64, w: usize, h: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..3 * w * h).map(|_| rng.gen_range(0.1..0.8)).collect();
        Image::new(w, h, 3, data).unwrap()
    }

    #[test]
    fn green_of_pixel() {
        let img = Image::new(1, 1, 3, vec![0.1, 0.5, 0.9]).unwrap();
        assert_eq!(green_channel(&img).unwrap().data(), &[0.5]);
    }

    #[test]
    fn shift_invariance() {
        let img = random_rgb(4, 16, 12);
        let base = pca_gray(&img).unwrap();
        for c in 0..3 {
            let mut data = img.data().to_vec();
            let n = img.pixels();
            data[c * n..(c + 1) * n].iter_mut().for_each(|v| *v += 0.15);
            let shifted = pca_gray(&Image::new(16, 12, 3, data).unwrap()).unwrap();
            for (a, b) in base.data().iter().zip(shifted.data()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn constant_is_degenerate() {
        let img = Image::filled(4, 4, 3, 0.3);
        assert!(matches!(pca_gray(&img), Err(Error::Degenerate { .. })));
    }

    #[test]
    fn sign_convention_follows_green() {
        // Green anti-correlated with red: the axis must still load green positively,
        // so the output rises with green.
        let n = 50;
        let mut data = vec![0.0f32; 3 * n];
        for i in 0..n {
            let t = i as f32 / (n - 1) as f32;
            data[i] = 0.9 - 0.5 * t;
            data[n + i] = 0.1 + 0.8 * t;
            data[2 * n + i] = 0.5;
        }
        let g = pca_gray(&Image::new(n, 1, 3, data).unwrap()).unwrap();
        assert!(g.data()[n - 1] > g.data()[0]);
    }
}
