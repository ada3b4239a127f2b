use rand::Rng;

use crate::error::{Error, Result};
use crate::imgproc::Image;

/// Aligned crops of image, label and FOV.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub image: Image,
    pub label: Image,
    pub fov: Image,
}

const MAX_ATTEMPTS: usize = 10_000;

/// Draws `n` square patches with uniformly random top-left corners among
/// those whose FOV coverage is at least 50%.
pub fn sample_patches<R: Rng + ?Sized>(
    img: &Image,
    label: &Image,
    fov: &Image,
    size: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Patch>> {
    let (w, h) = img.dims();
    if !label.same_dims(img) || !fov.same_dims(img) {
        return Err(Error::invalid("sample_patches", "image, label and fov sizes differ"));
    }
    if size == 0 || size > w || size > h {
        return Err(Error::invalid(
            "sample_patches",
            format!("patch size {size} does not fit a {w}x{h} image"),
        ));
    }

    // Summed-area table of the FOV for O(1) coverage queries.
    let mut sat = vec![0u64; (w + 1) * (h + 1)];
    for y in 0..h {
        for x in 0..w {
            let v = (fov.get(0, y, x) > 0.5) as u64;
            sat[(y + 1) * (w + 1) + x + 1] =
                v + sat[y * (w + 1) + x + 1] + sat[(y + 1) * (w + 1) + x] - sat[y * (w + 1) + x];
        }
    }
    let covered = |x: usize, y: usize| {
        let (x1, y1) = (x + size, y + size);
        sat[y1 * (w + 1) + x1] + sat[y * (w + 1) + x] - sat[y * (w + 1) + x1] - sat[y1 * (w + 1) + x]
    };
    let need = (size * size).div_ceil(2) as u64;
    let (max_x, max_y) = (w - size, h - size);

    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut corner = None;
        for _ in 0..MAX_ATTEMPTS {
            let x = rng.gen_range(0..=max_x);
            let y = rng.gen_range(0..=max_y);
            if covered(x, y) >= need {
                corner = Some((x, y));
                break;
            }
        }
        let (x, y) = corner.ok_or_else(|| {
            Error::invalid(
                "sample_patches",
                format!("no {size}x{size} patch with at least 50% field of view found"),
            )
        })?;
        out.push(Patch {
            image: img.crop(x, y, size, size),
            label: label.crop(x, y, size, size),
            fov: fov.crop(x, y, size, size),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn ramp(w: usize, h: usize, c: usize) -> Image {
        let n = w * h * c;
        Image::new(w, h, c, (0..n).map(|i| i as f32 / n as f32).collect()).unwrap()
    }

    #[test]
    fn full_size_patch_is_the_image() {
        let img = ramp(16, 16, 3);
        let lbl = ramp(16, 16, 1);
        let fov = Image::filled(16, 16, 1, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = sample_patches(&img, &lbl, &fov, 16, 3, &mut rng).unwrap();
        assert_eq!(p.len(), 3);
        for patch in p {
            assert_eq!(patch.image, img);
            assert_eq!(patch.label, lbl);
        }
    }

    #[test]
    fn fov_overlap_respected_and_aligned() {
        let (w, h) = (40, 30);
        let img = ramp(w, h, 3);
        let lbl = ramp(w, h, 1);
        // FOV only on the right third.
        let fov = Image::new(w, h, 1, (0..w * h).map(|i| if i % w >= 27 { 1.0 } else { 0.0 }).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let patches = sample_patches(&img, &lbl, &fov, 16, 50, &mut rng).unwrap();
        for p in &patches {
            assert!(p.fov.mean() >= 0.5);
            // Image channel 0 and label are the same ramp modulo scale.
            let ratio = p.image.plane(0)[5] / p.label.plane(0)[5];
            assert!((ratio - 1.0 / 3.0).abs() < 1e-5);
        }
    }

    #[test]
    fn seeded_sequence_repeats() {
        let img = ramp(32, 32, 3);
        let lbl = ramp(32, 32, 1);
        let fov = Image::filled(32, 32, 1, 1.0);
        let a = sample_patches(&img, &lbl, &fov, 8, 10, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = sample_patches(&img, &lbl, &fov, 8, 10, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn infeasible_requests_fail() {
        let img = ramp(8, 8, 3);
        let lbl = ramp(8, 8, 1);
        let none = Image::filled(8, 8, 1, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_patches(&img, &lbl, &none, 4, 1, &mut rng).is_err());
        let full = Image::filled(8, 8, 1, 1.0);
        assert!(sample_patches(&img, &lbl, &full, 9, 1, &mut rng).is_err());
    }
}
