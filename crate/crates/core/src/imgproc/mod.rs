//! Classical image operations on planar `[0, 1]` float images.

mod augment;
mod clahe;
mod gray;
mod image;
pub mod io;
mod otsu;
mod ssim;

pub use self::image::Image;
pub use augment::{augment, GeomTransform};
pub use clahe::{clahe, ClipLimitSampler, DEFAULT_TILES};
pub use gray::{gamma, green_channel, pca_gray};
pub use otsu::{binarize, histogram256, otsu_threshold, quantize, OtsuResult};
pub use ssim::{ssim_global, SSIM_C1, SSIM_C2};
