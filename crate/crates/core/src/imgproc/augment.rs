use rand::Rng;

use super::Image;

/// Rotation by `quarter_turns × 90°` clockwise, then optional flips.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GeomTransform {
    pub quarter_turns: u8,
    pub hflip: bool,
    pub vflip: bool,
}

impl GeomTransform {
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        GeomTransform {
            quarter_turns: rng.gen_range(0..4),
            hflip: rng.gen(),
            vflip: rng.gen(),
        }
    }

    /// Where the pixel at `(row, col)` of an `h × w` image lands.
    pub fn map_coord(&self, row: usize, col: usize, h: usize, w: usize) -> (usize, usize) {
        let (mut r, mut c, mut h, mut w) = (row, col, h, w);
        for _ in 0..self.quarter_turns % 4 {
            (r, c) = (c, h - 1 - r);
            (h, w) = (w, h);
        }
        if self.hflip {
            c = w - 1 - c;
        }
        if self.vflip {
            r = h - 1 - r;
        }
        (r, c)
    }

    pub fn apply(&self, img: &Image) -> Image {
        let (w, h) = img.dims();
        let (ow, oh) = if self.quarter_turns % 2 == 1 { (h, w) } else { (w, h) };
        let mut data = vec![0f32; img.data().len()];
        for c in 0..img.channels() {
            for y in 0..h {
                for x in 0..w {
                    let (ny, nx) = self.map_coord(y, x, h, w);
                    data[(c * oh + ny) * ow + nx] = img.get(c, y, x);
                }
            }
        }
        Image::new(ow, oh, img.channels(), data).expect("permutation keeps range")
    }
}

/// Applies one random geometric transform identically to image, label and FOV.
pub fn augment<R: Rng + ?Sized>(
    img: &Image,
    label: &Image,
    fov: &Image,
    rng: &mut R,
) -> (Image, Image, Image) {
    let t = GeomTransform::random(rng);
    (t.apply(img), t.apply(label), t.apply(fov))
}
