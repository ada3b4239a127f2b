use crate::data::Sample;
use crate::error::{Error, Result};
use crate::imgproc::{binarize, green_channel, otsu_threshold, pca_gray, Image, OtsuResult};
use crate::nn::{Checkpoint, ModelKind, Network, Role};

/// Threshold applied to baseline probability maps.
pub const BASELINE_THRESHOLD: f32 = 0.5;

/// Network input for a model kind: RGB for the angiogram encoder, a
/// grayscale reduction for the baselines.
pub fn preprocess(kind: ModelKind, img: &Image) -> Result<Image> {
    match kind {
        ModelKind::Angiogram => {
            if img.channels() != 3 {
                return Err(Error::invalid("preprocess", format!("expected RGB, got {} channels", img.channels())));
            }
            Ok(img.clone())
        }
        ModelKind::GreenBaseline => green_channel(img),
        ModelKind::PcaBaseline => pca_gray(img),
    }
}

/// Reflect margin added on every side before inference, so zero padding
/// inside the network never touches real pixels.
pub const INFERENCE_MARGIN: usize = 8;

/// Runs `net` on an image of any size: reflect-pads by [`INFERENCE_MARGIN`]
/// and up to the network's size divisor, then crops the output back.
pub fn run_network(net: &Network, img: &Image) -> Result<Image> {
    let (w, h) = img.dims();
    let d = net.config().divisor();
    let m = INFERENCE_MARGIN;
    // The bottom level needs at least 2 pixels per side.
    let fit = |n: usize| (n + 2 * m).div_ceil(d).max(2) * d;
    let padded = img.pad_reflect_at(m, m, fit(w), fit(h));
    let out = net.infer(&padded.to_tensor())?;
    Ok(Image::from_tensor(&out, 0)?.crop(m, m, w, h))
}

/// The encoder's latent image for an RGB fundus image. Never runs a decoder.
pub fn infer_angiogram(encoder: &Network, img: &Image) -> Result<Image> {
    if encoder.role() != Role::Encoder || encoder.config().in_channels != 3 {
        return Err(Error::invalid("infer_angiogram", "expected an RGB encoder network"));
    }
    run_network(encoder, img)
}

/// Whether vessels come out dark in the raw latent of `encoder`, judged by
/// mean latent over label vessel vs background pixels (inside the FOV) of
/// labelled images.
pub fn latent_is_inverted(encoder: &Network, samples: &[Sample]) -> Result<bool> {
    let (mut vessel, mut nv, mut back, mut nb) = (0.0f64, 0u64, 0.0f64, 0u64);
    let latents = crate::exec::map_indexed(samples.len(), |i| infer_angiogram(encoder, &samples[i].image));
    for (s, z) in samples.iter().zip(latents) {
        let z = z?;
        for ((&v, &l), &f) in z.data().iter().zip(s.label.data()).zip(s.fov.data()) {
            if f <= 0.5 {
                continue;
            }
            if l > 0.5 {
                vessel += v as f64;
                nv += 1;
            } else {
                back += v as f64;
                nb += 1;
            }
        }
    }
    if nv == 0 || nb == 0 {
        return Err(Error::Degenerate {
            op: "latent_is_inverted",
            msg: "labels need both vessel and background pixels".into(),
        });
    }
    Ok(vessel / (nv as f64) < back / (nb as f64))
}

/// The angiogram of a trained model: the encoder latent, oriented so that
/// vessels are bright.
pub fn angiogram(model: &Checkpoint, img: &Image) -> Result<Image> {
    let encoder = model
        .encoder()
        .filter(|_| model.kind == ModelKind::Angiogram)
        .ok_or_else(|| Error::invalid("angiogram", "checkpoint is not an angiogram model"))?;
    let z = infer_angiogram(encoder, img)?;
    Ok(if model.latent_inverted { z.map(|v| model.orient(v)) } else { z })
}

/// Otsu binarization of an angiogram. A constant angiogram yields an empty
/// mask and a warning.
pub fn threshold_angiogram(angiogram: &Image) -> Result<(Image, OtsuResult)> {
    let otsu = otsu_threshold(angiogram)?;
    if otsu.degenerate {
        log::warn!("angiogram is constant; Otsu threshold undefined, returning an empty mask");
        let (w, h) = angiogram.dims();
        return Ok((Image::filled(w, h, 1, 0.0), otsu));
    }
    Ok((binarize(angiogram, otsu.threshold), otsu))
}

/// `binarize(angiogram, otsu(angiogram))`.
pub fn segment(encoder: &Network, img: &Image) -> Result<Image> {
    Ok(threshold_angiogram(&infer_angiogram(encoder, img)?)?.0)
}

/// A model's output for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Angiogram or probability map.
    pub map: Image,
    pub mask: Image,
    pub threshold: f32,
}

/// Dispatches on the checkpoint kind: Otsu on the angiogram, or the
/// baseline network's sigmoid output at [`BASELINE_THRESHOLD`].
pub fn predict(model: &Checkpoint, img: &Image) -> Result<Prediction> {
    match model.kind {
        ModelKind::Angiogram => {
            let map = angiogram(model, img)?;
            let (mask, otsu) = threshold_angiogram(&map)?;
            Ok(Prediction {
                map,
                mask,
                threshold: otsu.threshold,
            })
        }
        kind => {
            let net = model
                .networks
                .first()
                .ok_or_else(|| Error::invalid("predict", "checkpoint has no networks"))?;
            let map = run_network(net, &preprocess(kind, img)?)?;
            Ok(Prediction {
                mask: binarize(&map, BASELINE_THRESHOLD),
                map,
                threshold: BASELINE_THRESHOLD,
            })
        }
    }
}
