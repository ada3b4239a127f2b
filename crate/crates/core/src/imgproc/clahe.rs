use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::otsu::quantize;
use super::Image;
use crate::error::{Error, Result};
use crate::exec;

/// Tile grid `(rows, cols)`.
pub const DEFAULT_TILES: (usize, usize) = (8, 8);

const BINS: usize = 256;

/// Contrast limited adaptive histogram equalization, applied to every channel.
///
/// `clip_limit` is a multiple of the uniform bin height: a tile of `n`
/// pixels clips each of its 256 bins at `clip_limit * n / 256` and spreads
/// the clipped mass evenly over all bins (a single pass). Each pixel is
/// remapped through the CDFs of the four nearest tiles, bilinearly weighted
/// by distance to the tile centres.
pub fn clahe(img: &Image, clip_limit: f64, tiles: (usize, usize)) -> Result<Image> {
    if !(clip_limit >= 1.0) || !clip_limit.is_finite() {
        return Err(Error::invalid("clahe", format!("clip limit {clip_limit} must be >= 1")));
    }
    let (ty, tx) = tiles;
    let (w, h) = img.dims();
    if ty == 0 || tx == 0 || h < ty || w < tx {
        return Err(Error::invalid(
            "clahe",
            format!("{w}x{h} image cannot hold a {ty}x{tx} tile grid"),
        ));
    }
    let planes = exec::map_indexed(img.channels(), |c| {
        clahe_plane(img.plane(c), w, h, clip_limit, ty, tx)
    });
    Image::from_clamped(w, h, img.channels(), planes.concat())
}

fn bounds(n: usize, tiles: usize, t: usize) -> (usize, usize) {
    (t * n / tiles, (t + 1) * n / tiles)
}

fn tile_mapping(plane: &[f32], w: usize, y: (usize, usize), x: (usize, usize), clip: f64) -> [f64; BINS] {
    let mut hist = [0f64; BINS];
    for row in y.0..y.1 {
        for &v in &plane[row * w + x.0..row * w + x.1] {
            hist[quantize(v) as usize] += 1.0;
        }
    }
    let n = ((y.1 - y.0) * (x.1 - x.0)) as f64;
    let limit = clip * n / BINS as f64;
    let mut excess = 0.0;
    for b in hist.iter_mut() {
        if *b > limit {
            excess += *b - limit;
            *b = limit;
        }
    }
    let share = excess / BINS as f64;
    let mut map = [0f64; BINS];
    let mut cdf = 0.0;
    for (m, b) in map.iter_mut().zip(hist) {
        cdf += b + share;
        *m = (cdf / n).min(1.0);
    }
    map
}

/// Lower tile index and weight of the upper one for pixel coordinate `p`.
fn interp(p: usize, n: usize, tiles: usize) -> (usize, usize, f64) {
    let center = |t: usize| {
        let (a, b) = bounds(n, tiles, t);
        (a + b) as f64 / 2.0 - 0.5
    };
    let p = p as f64;
    if p <= center(0) {
        return (0, 0, 0.0);
    }
    if p >= center(tiles - 1) {
        return (tiles - 1, tiles - 1, 0.0);
    }
    let mut t = 0;
    while center(t + 1) < p {
        t += 1;
    }
    let (c0, c1) = (center(t), center(t + 1));
    (t, t + 1, (p - c0) / (c1 - c0))
}

fn clahe_plane(plane: &[f32], w: usize, h: usize, clip: f64, ty: usize, tx: usize) -> Vec<f32> {
    let mut maps = Vec::with_capacity(ty * tx);
    for r in 0..ty {
        for c in 0..tx {
            maps.push(tile_mapping(plane, w, bounds(h, ty, r), bounds(w, tx, c), clip));
        }
    }
    let cols: Vec<_> = (0..w).map(|x| interp(x, w, tx)).collect();
    let mut out = vec![0f32; w * h];
    for y in 0..h {
        let (r0, r1, wy) = interp(y, h, ty);
        for x in 0..w {
            let (c0, c1, wx) = cols[x];
            let lvl = quantize(plane[y * w + x]) as usize;
            let m = |r: usize, c: usize| maps[r * tx + c][lvl];
            let top = m(r0, c0) * (1.0 - wx) + m(r0, c1) * wx;
            let bottom = m(r1, c0) * (1.0 - wx) + m(r1, c1) * wx;
            out[y * w + x] = (top * (1.0 - wy) + bottom * wy) as f32;
        }
    }
    out
}

/// Random CLAHE clip limit: normal draw clamped into `[min, max]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClipLimitSampler {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Default for ClipLimitSampler {
    fn default() -> Self {
        ClipLimitSampler {
            mean: 5.0,
            std: 1.0,
            min: 1.0,
            max: 10.0,
        }
    }
}

impl ClipLimitSampler {
    pub fn new(mean: f64, std: f64) -> Self {
        ClipLimitSampler {
            mean,
            std,
            ..Default::default()
        }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let normal = Normal::new(self.mean, self.std).expect("finite, non-negative std");
        self.clamp(normal.sample(rng))
    }
}
