use super::SampleRecord;
use crate::error::{Error, Result};
use crate::imgproc::{io::read_image, Image};

/// A loaded fundus image with its binary vessel label and FOV mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub label: Image,
    pub fov: Image,
}

fn to_rgb(img: Image) -> Image {
    if img.channels() == 3 {
        return img;
    }
    let (w, h) = img.dims();
    let plane = img.into_data();
    Image::new(w, h, 3, plane.repeat(3)).expect("replicated gray is valid")
}

fn to_binary(img: &Image) -> Image {
    let data = img
        .plane(0)
        .iter()
        .map(|&v| if v >= 0.5 { 1.0 } else { 0.0 })
        .collect();
    Image::new(img.width(), img.height(), 1, data).expect("binary values in range")
}

/// Reads the image (as RGB), the label and the optional FOV mask, binarizing
/// both masks at 0.5. A missing FOV becomes an all-ones mask.
pub fn load_sample(record: &SampleRecord) -> Result<Sample> {
    let image = to_rgb(read_image(&record.image_path)?);
    let label = to_binary(&read_image(&record.label_path)?);
    let fov = match &record.fov_path {
        Some(p) => to_binary(&read_image(p)?),
        None => Image::filled(image.width(), image.height(), 1, 1.0),
    };
    for (what, m) in [("label", &label), ("fov", &fov)] {
        if !m.same_dims(&image) {
            return Err(Error::Record {
                id: record.id.clone(),
                msg: format!(
                    "{what} is {}x{} but image is {}x{}",
                    m.width(),
                    m.height(),
                    image.width(),
                    image.height()
                ),
            });
        }
    }
    Ok(Sample {
        id: record.id.clone(),
        image,
        label,
        fov,
    })
}

/// Loads every record, in order (in parallel when enabled).
pub fn load_samples(records: &[SampleRecord]) -> Result<Vec<Sample>> {
    crate::exec::map_indexed(records.len(), |i| load_sample(&records[i]))
        .into_iter()
        .collect()
}
