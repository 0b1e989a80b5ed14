//! SLIC superpixels, superpixel-image rendering and the proxy strategies.

mod filters;
mod proxy;
mod render;
mod slic;

pub use filters::{canny, gaussian_blur};
pub use proxy::{make_proxy, ProxyBuilder, ProxyMode, ProxyParams, ProxyRegistry};
pub use render::{render_superpixel_image, segment_means, SuperpixelImage};
pub use slic::{default_superpixel_count, slic_segment, SuperpixelLabels};
