mod common;

use common::{clahe_single_tile, otsu_brute_force, random_gray};
use deepangio::imgproc::{clahe, otsu_threshold, pca_gray, ssim_global, Image};
use deepangio::losses::ssim_per_sample;
use deepangio::tensor::{Graph, Tensor};
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn otsu_matches_exhaustive_search_on_50_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..50 {
        let (w, h) = (rng.gen_range(8..48), rng.gen_range(8..48));
        let img = random_gray(&mut rng, w, h);
        let got = otsu_threshold(&img).unwrap();
        assert!(!got.degenerate);
        assert_eq!(got.bin, otsu_brute_force(&img), "image {i} ({w}x{h})");
        assert_eq!(got.threshold, (got.bin as f32 + 0.5) / 255.0);
    }
}

#[test]
fn single_tile_clahe_matches_scalar_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for i in 0..50 {
        let (w, h) = (rng.gen_range(8..40), rng.gen_range(8..40));
        let img = random_gray(&mut rng, w, h);
        let clip = rng.gen_range(1.0..10.0);
        let got = clahe(&img, clip, (1, 1)).unwrap();
        let want = clahe_single_tile(&img, clip);
        for (g, o) in got.data().iter().zip(&want) {
            assert!((*g as f64 - o).abs() <= 1.0 / 255.0, "image {i}: {g} vs {o}");
        }
    }
}

#[test]
fn ssim_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let a = random_gray(&mut rng, 16, 12);
        let b = random_gray(&mut rng, 16, 12);
        assert!((ssim_global(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let ab = ssim_global(&a, &b).unwrap();
        assert!((ab - ssim_global(&b, &a).unwrap()).abs() < 1e-9);
        assert!(ab <= 1.0 + 1e-9);
    }
}

#[test]
fn differentiable_ssim_agrees_with_image_ssim() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let imgs: Vec<Image> = (0..4).map(|_| random_gray(&mut rng, 10, 10)).collect();
    let to_t = |i: &Image| Tensor::new([1, 1, 10, 10], i.data().iter().map(|&v| v as f64).collect()).unwrap();
    let mut g = Graph::<f64>::new();
    let a = g.constant(to_t(&imgs[0]));
    let b = g.constant(to_t(&imgs[1]));
    let s = ssim_per_sample(&mut g, a, b).unwrap();
    let want = ssim_global(&imgs[0], &imgs[1]).unwrap();
    assert!((g.value(s).data()[0] - want).abs() < 1e-9);
}

#[test]
fn pca_gray_matches_eigendecomposition() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..10 {
        let (w, h) = (20, 14);
        // correlated colours so the leading axis is well separated
        let data: Vec<f32> = {
            let base: Vec<f32> = (0..w * h).map(|_| rng.gen_range(0.1..0.9)).collect();
            let mix = [rng.gen_range(0.2..0.6f32), rng.gen_range(0.6..1.0), rng.gen_range(0.1..0.4)];
            (0..3)
                .flat_map(|c| base.iter().map(move |&v| v * mix[c] + 0.05 * c as f32).collect::<Vec<_>>())
                .map(|v| (v + rng.gen_range(-0.02..0.02f32)).clamp(0.0, 1.0))
                .collect()
        };
        let img = Image::new(w, h, 3, data).unwrap();
        let n = (w * h) as f64;
        let px = |i: usize| Vector3::from_fn(|c, _| img.plane(c)[i] as f64);
        let mean = (0..w * h).map(px).sum::<Vector3<f64>>() / n;
        let cov = (0..w * h).map(|i| (px(i) - mean) * (px(i) - mean).transpose()).sum::<Matrix3<f64>>() / n;
        let eig = SymmetricEigen::new(cov);
        let k = eig.eigenvalues.imax();
        let mut axis = eig.eigenvectors.column(k).into_owned();
        if axis[1] < 0.0 {
            axis = -axis;
        }
        let proj: Vec<f64> = (0..w * h).map(|i| (px(i) - mean).dot(&axis)).collect();
        let lo = proj.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = proj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let got = pca_gray(&img).unwrap();
        for (g, p) in got.data().iter().zip(&proj) {
            assert!((*g as f64 - (p - lo) / (hi - lo)).abs() < 1e-4);
        }
    }
}
