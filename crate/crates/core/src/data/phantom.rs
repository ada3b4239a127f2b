//! Synthetic fundus-like vessel phantoms with exact ground truth.
//!
//! Each phantom is a smooth, radially vignetted orange background crossed by
//! dark random-walk strokes (the vessels, strongest in green), with bright
//! and dark elliptical blobs (drusen / haemorrhage look-alikes that are not
//! vessels) and Gaussian pixel noise. The label is exactly the union of the
//! stroke masks.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{write_manifest, DomainTag, SampleRecord};
use crate::error::{Error, Result};
use crate::exec;
use crate::imgproc::{io::write_png, Image};

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomParams {
    pub count: usize,
    /// Side length in pixels.
    pub size: usize,
    /// Inclusive range of vessel strokes per image.
    pub strokes: (usize, usize),
    /// Stroke width range in pixels.
    pub width: (f64, f64),
    /// Stroke length as a fraction of `size`.
    pub length: (f64, f64),
    /// Relative darkening towards the corners.
    pub illumination: f64,
    pub noise_std: f64,
    /// Inclusive range of distractor blobs per image.
    pub blobs: (usize, usize),
    /// Blob radius range as a fraction of `size`.
    pub blob_radius: (f64, f64),
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        PhantomParams {
            count: 16,
            size: 64,
            strokes: (4, 8),
            width: (1.0, 4.0),
            length: (0.4, 0.9),
            illumination: 0.35,
            noise_std: 0.02,
            blobs: (1, 3),
            blob_radius: (0.04, 0.09),
            seed: 0,
        }
    }
}

impl PhantomParams {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("phantom params: {m}")));
        if self.size < 8 {
            return bad("size must be at least 8");
        }
        if self.strokes.0 > self.strokes.1 || self.blobs.0 > self.blobs.1 {
            return bad("ranges must be ordered");
        }
        if !(self.width.0 > 0.0 && self.width.0 <= self.width.1) {
            return bad("stroke width range must be positive and ordered");
        }
        if !(self.length.0 > 0.0 && self.length.0 <= self.length.1) {
            return bad("stroke length range must be positive and ordered");
        }
        if !(self.blob_radius.0 > 0.0 && self.blob_radius.0 <= self.blob_radius.1) {
            return bad("blob radius range must be positive and ordered");
        }
        if !(0.0..1.0).contains(&self.illumination) || self.noise_std < 0.0 {
            return bad("illumination must be in [0, 1) and noise non-negative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub image: Image,
    pub label: Image,
}

/// Per-channel fractional darkening at full vessel contrast.
const VESSEL_DIP: [f32; 3] = [0.12, 0.45, 0.2];
const BACKGROUND: [f32; 3] = [0.82, 0.45, 0.22];

fn seg_distance(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * dx + (py - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Phantom `index` of the set described by `params`; independent of the
/// other indices.
pub fn generate_phantom(params: &PhantomParams, index: usize) -> Phantom {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(index as u64 + 1);
    let s = params.size;
    let sf = s as f64;
    let n = s * s;

    // Vessels: random walks with slowly turning heading.
    let mut dip = vec![0f32; n];
    let mut label = vec![0f32; n];
    let turn = Normal::new(0.0, 0.18).expect("valid std");
    let strokes = rng.gen_range(params.strokes.0..=params.strokes.1);
    for _ in 0..strokes {
        let u: f64 = rng.gen();
        let width = params.width.0 + (params.width.1 - params.width.0) * u * u;
        let radius = width / 2.0;
        let contrast = rng.gen_range(0.6f32..1.0);
        let steps = (rng.gen_range(params.length.0..=params.length.1) * sf).ceil() as usize;
        let mut p = (rng.gen_range(0.0..sf), rng.gen_range(0.0..sf));
        let mut heading = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut pts = vec![p];
        for _ in 0..steps {
            heading += turn.sample(&mut rng);
            p = (p.0 + heading.cos(), p.1 + heading.sin());
            pts.push(p);
        }
        for seg in pts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let x0 = (a.0.min(b.0) - radius).floor().max(0.0) as usize;
            let x1 = ((a.0.max(b.0) + radius).ceil().max(0.0) as usize).min(s);
            let y0 = (a.1.min(b.1) - radius).floor().max(0.0) as usize;
            let y1 = ((a.1.max(b.1) + radius).ceil().max(0.0) as usize).min(s);
            for y in y0..y1 {
                for x in x0..x1 {
                    if seg_distance(x as f64 + 0.5, y as f64 + 0.5, a, b) <= radius {
                        label[y * s + x] = 1.0;
                        dip[y * s + x] = dip[y * s + x].max(contrast);
                    }
                }
            }
        }
    }

    // Background illumination: brightest near a jittered centre.
    let cx = sf / 2.0 + rng.gen_range(-0.12..0.12) * sf;
    let cy = sf / 2.0 + rng.gen_range(-0.12..0.12) * sf;
    let tint: [f32; 3] = [0, 1, 2].map(|c| BACKGROUND[c] * rng.gen_range(0.9f32..1.1));
    let rmax = sf * std::f64::consts::FRAC_1_SQRT_2;
    let mut planes = vec![0f32; 3 * n];
    for y in 0..s {
        for x in 0..s {
            let d = ((x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2)).sqrt() / rmax;
            let illum = (1.0 - params.illumination * d * d).max(0.0) as f32;
            let i = y * s + x;
            for c in 0..3 {
                planes[c * n + i] = tint[c] * illum * (1.0 - VESSEL_DIP[c] * dip[i]);
            }
        }
    }

    // Distractors, drawn over the vessels and never labelled.
    let blobs = rng.gen_range(params.blobs.0..=params.blobs.1);
    for _ in 0..blobs {
        let (bx, by) = (rng.gen_range(0.0..sf), rng.gen_range(0.0..sf));
        let rx = rng.gen_range(params.blob_radius.0..=params.blob_radius.1) * sf;
        let ry = rng.gen_range(params.blob_radius.0..=params.blob_radius.1) * sf;
        let dark = rng.gen_bool(0.5);
        for y in 0..s {
            for x in 0..s {
                let e = ((x as f64 + 0.5 - bx) / rx).powi(2) + ((y as f64 + 0.5 - by) / ry).powi(2);
                if e > 1.0 {
                    continue;
                }
                let i = y * s + x;
                let fall = (1.0 - e) as f32;
                for c in 0..3 {
                    let v = &mut planes[c * n + i];
                    *v = if dark {
                        // haemorrhage: darker than any vessel in green
                        *v * (1.0 - [0.45, 0.7, 0.5][c] * fall.sqrt())
                    } else {
                        // drusen: bright yellow
                        *v + [0.2, 0.25, 0.05][c] * fall.sqrt()
                    };
                }
            }
        }
    }

    if params.noise_std > 0.0 {
        let noise = Normal::new(0.0, params.noise_std).expect("valid std");
        for v in &mut planes {
            *v += noise.sample(&mut rng) as f32;
        }
    }

    Phantom {
        image: Image::from_clamped(s, s, 3, planes).expect("phantom dims"),
        label: Image::new(s, s, 1, label).expect("binary label"),
    }
}

/// The full seeded set, generated in parallel when enabled.
pub fn generate_phantoms(params: &PhantomParams) -> Result<Vec<Phantom>> {
    params.validate()?;
    Ok(exec::map_indexed(params.count, |i| generate_phantom(params, i)))
}

/// Writes `img_####.png` / `lbl_####.png` and `manifest.csv` into `dir`. The
/// last `holdout` phantoms are tagged as target domain. Returns the manifest path.
pub fn write_phantom_set(dir: &Path, phantoms: &[Phantom], holdout: usize) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let split = phantoms.len().saturating_sub(holdout);
    let mut records = Vec::with_capacity(phantoms.len());
    for (i, p) in phantoms.iter().enumerate() {
        let image_path = dir.join(format!("img_{i:04}.png"));
        let label_path = dir.join(format!("lbl_{i:04}.png"));
        write_png(&image_path, &p.image)?;
        write_png(&label_path, &p.label)?;
        records.push(SampleRecord {
            id: format!("phantom_{i:04}"),
            image_path,
            label_path,
            fov_path: None,
            dataset: "PHANTOM".into(),
            domain: if i < split {
                DomainTag::Source
            } else {
                DomainTag::Target
            },
        });
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &records)?;
    Ok(manifest)
}
