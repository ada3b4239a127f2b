use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Planar row-major image with 1 or 3 channels and pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("image", "dimensions must be positive"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid("image", format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(
                "image",
                format!(
                    "{width}x{height}x{channels} needs {} values, got {}",
                    width * height * channels,
                    data.len()
                ),
            ));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid("image", format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// Like [`Image::new`] but clamps values into `[0, 1]` (NaN becomes 0).
    pub fn from_clamped(width: usize, height: usize, channels: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(width, height, channels, data)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels])
            .expect("valid filled image")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        debug_assert!((0.0..=1.0).contains(&v));
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self.plane(c).to_vec(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    /// Pointwise map; the result is clamped into `[0, 1]`.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Image {
        Image {
            data: self
                .data
                .iter()
                .map(|&v| {
                    let y = f(v);
                    if y.is_nan() {
                        0.0
                    } else {
                        y.clamp(0.0, 1.0)
                    }
                })
                .collect(),
            ..*self
        }
    }

    pub fn same_dims(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Crop `w × h` at top-left `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Image {
        assert!(x + w <= self.width && y + h <= self.height, "crop out of bounds");
        let mut data = Vec::with_capacity(w * h * self.channels);
        for c in 0..self.channels {
            for row in y..y + h {
                let off = (c * self.height + row) * self.width;
                data.extend_from_slice(&self.data[off + x..off + x + w]);
            }
        }
        Image {
            width: w,
            height: h,
            channels: self.channels,
            data,
        }
    }

    /// Reflect-pad (edge pixel not repeated) to `w × h`, content at the top-left.
    pub fn pad_reflect(&self, w: usize, h: usize) -> Image {
        self.pad_reflect_at(0, 0, w, h)
    }

    /// Reflect-pad to `w × h` with the original content starting at `(x0, y0)`.
    pub fn pad_reflect_at(&self, x0: usize, y0: usize, w: usize, h: usize) -> Image {
        assert!(w >= x0 + self.width && h >= y0 + self.height);
        let reflect = |i: usize, off: usize, n: usize| -> usize {
            if n == 1 {
                return 0;
            }
            let period = 2 * (n as isize - 1);
            let m = (i as isize - off as isize).rem_euclid(period);
            (if m < n as isize { m } else { period - m }) as usize
        };
        let mut data = Vec::with_capacity(w * h * self.channels);
        for c in 0..self.channels {
            for y in 0..h {
                let sy = reflect(y, y0, self.height);
                for x in 0..w {
                    data.push(self.get(c, sy, reflect(x, x0, self.width)));
                }
            }
        }
        Image {
            width: w,
            height: h,
            channels: self.channels,
            data,
        }
    }

    /// `[1, C, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::new([1, self.channels, self.height, self.width], self.data.clone())
            .expect("image dims match")
    }

    /// Stacks same-shaped images into `[B, C, H, W]`.
    pub fn stack(images: &[&Image]) -> Result<Tensor<f32>> {
        let first = images
            .first()
            .ok_or_else(|| Error::invalid("stack", "no images"))?;
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for img in images {
            if !img.same_dims(first) || img.channels != first.channels {
                return Err(Error::shape(
                    "stack",
                    &[first.channels, first.height, first.width],
                    &[img.channels, img.height, img.width],
                ));
            }
            data.extend_from_slice(&img.data);
        }
        Tensor::new([images.len(), first.channels, first.height, first.width], data)
    }

    /// Sample `b` of a `[B, C, H, W]` tensor; values are clamped into `[0, 1]`.
    pub fn from_tensor(t: &Tensor<f32>, b: usize) -> Result<Image> {
        let (n, c, h, w) = t
            .dims4()
            .ok_or_else(|| Error::invalid("from_tensor", format!("expected rank 4, got {:?}", t.shape())))?;
        if b >= n {
            return Err(Error::invalid("from_tensor", format!("sample {b} of {n}")));
        }
        let len = c * h * w;
        Image::from_clamped(w, h, c, t.data()[b * len..(b + 1) * len].to_vec())
    }
}
