//! 8-bit PNG / PPM / PGM reading and PNG writing. `float = byte / 255`,
//! `byte = round(float * 255)`.

use std::path::Path;

use image::{ColorType, DynamicImage, ImageFormat};

use super::otsu::quantize;
use super::Image;
use crate::error::{Error, Result};

fn decode_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

/// Reads a PNG/PPM/PGM file. Grayscale files give a 1-channel image,
/// anything else is converted to RGB.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::from(std::io::ErrorKind::NotFound)));
    }
    let dynimg = image::open(path).map_err(|e| decode_err(path, e))?;
    from_dynamic(dynimg).map_err(|e| decode_err(path, e))
}

fn from_dynamic(img: DynamicImage) -> Result<Image> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(
        img.color(),
        ColorType::L8 | ColorType::L16 | ColorType::La8 | ColorType::La16
    );
    if gray {
        let buf = img.to_luma8();
        let data = buf.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        Image::new(w, h, 1, data)
    } else {
        let buf = img.to_rgb8();
        let raw = buf.as_raw();
        let n = w * h;
        let mut data = vec![0f32; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                data[c * n + i] = raw[3 * i + c] as f32 / 255.0;
            }
        }
        Image::new(w, h, 3, data)
    }
}

/// Width and height from the file header, without decoding pixels.
pub fn image_dimensions(path: impl AsRef<Path>) -> Result<(usize, usize)> {
    let path = path.as_ref();
    let (w, h) = image::image_dimensions(path).map_err(|e| decode_err(path, e))?;
    Ok((w as usize, h as usize))
}

/// Interleaved 8-bit bytes (gray or RGB).
pub fn to_bytes(img: &Image) -> Vec<u8> {
    let n = img.pixels();
    let mut out = Vec::with_capacity(n * img.channels());
    for i in 0..n {
        for c in 0..img.channels() {
            out.push(quantize(img.plane(c)[i]));
        }
    }
    out
}

/// Writes an 8-bit PNG (grayscale for 1 channel, RGB for 3).
pub fn write_png(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let color = if img.channels() == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer_with_format(
        path,
        &to_bytes(img),
        img.width() as u32,
        img.height() as u32,
        color,
        ImageFormat::Png,
    )
    .map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => decode_err(path, other),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_exact_on_byte_grid() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..3 * 20).map(|i| (i * 4 % 256) as f32 / 255.0).collect();
        let img = Image::new(5, 4, 3, data).unwrap();
        let p = dir.path().join("x.png");
        write_png(&p, &img).unwrap();
        assert_eq!(read_image(&p).unwrap(), img);
        assert_eq!(image_dimensions(&p).unwrap(), (5, 4));

        let gray = img.channel(1);
        let p = dir.path().join("g.png");
        write_png(&p, &gray).unwrap();
        assert_eq!(read_image(&p).unwrap(), gray);
    }

    #[test]
    fn reads_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 128, 64]);
        std::fs::write(&p, bytes).unwrap();
        let img = read_image(&p).unwrap();
        assert_eq!(img.channels(), 1);
        assert_eq!(img.data()[1], 1.0);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_image("/nonexistent/x.png"), Err(Error::Io { .. })));
    }
}
