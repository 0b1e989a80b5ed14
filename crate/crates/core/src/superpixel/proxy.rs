use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use super::filters::{canny, gaussian_blur};
use super::render::render_superpixel_image;
use super::slic::{default_superpixel_count, slic_segment};
use crate::imaging::GrayscaleImage;
use crate::nn::Tensor;
use crate::{Error, Result};

/// Which intermediate representation bridges input and reconstruction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProxyMode {
    Si,
    Edge,
    SmoothImage,
    SmoothPatches,
    EdgeConcatSmooth,
    EdgeConcatPatches,
}

impl ProxyMode {
    pub const ALL: [ProxyMode; 6] = [
        ProxyMode::Si,
        ProxyMode::Edge,
        ProxyMode::SmoothImage,
        ProxyMode::SmoothPatches,
        ProxyMode::EdgeConcatSmooth,
        ProxyMode::EdgeConcatPatches,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProxyMode::Si => "si",
            ProxyMode::Edge => "edge",
            ProxyMode::SmoothImage => "smooth_image",
            ProxyMode::SmoothPatches => "smooth_patches",
            ProxyMode::EdgeConcatSmooth => "edge_concat_smooth",
            ProxyMode::EdgeConcatPatches => "edge_concat_patches",
        }
    }

    pub fn channel_count(self) -> usize {
        match self {
            ProxyMode::EdgeConcatSmooth | ProxyMode::EdgeConcatPatches => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for ProxyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProxyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProxyMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown proxy mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProxyParams {
    /// `None` selects the area-scaled count (800 per 256² pixels).
    pub n_superpixels: Option<usize>,
    pub compactness: f64,
    pub slic_iters: usize,
    pub smooth_sigma: f64,
    pub patch_size: usize,
    pub canny_sigma: f64,
    pub canny_low: f64,
    pub canny_high: f64,
}

impl Default for ProxyParams {
    fn default() -> Self {
        Self {
            n_superpixels: None,
            compactness: 10.0,
            slic_iters: 10,
            smooth_sigma: 2.0,
            patch_size: 8,
            canny_sigma: 1.0,
            canny_low: 0.1,
            canny_high: 0.2,
        }
    }
}

impl ProxyParams {
    pub fn superpixels_for(&self, height: usize, width: usize) -> usize {
        self.n_superpixels
            .unwrap_or_else(|| default_superpixel_count(height, width))
    }
}

/// A proxy construction strategy.
pub trait ProxyBuilder: Send + Sync {
    fn name(&self) -> &'static str;

    fn channels(&self) -> usize;

    fn build(&self, image: &GrayscaleImage, params: &ProxyParams) -> Result<Tensor<f32>>;

    /// What a cut-paste pseudo-anomaly copies from a source image, one plane
    /// per proxy channel. Intensity-like channels copy raw pixels.
    fn paste_content(&self, image: &GrayscaleImage, _params: &ProxyParams) -> Result<Tensor<f32>> {
        Ok(image.to_tensor())
    }
}

fn single(image: &GrayscaleImage, plane: Vec<f32>) -> Tensor<f32> {
    Tensor::from_vec(1, image.height(), image.width(), plane)
}

fn stack_with_edges(first: Vec<f32>, image: &GrayscaleImage, params: &ProxyParams) -> Tensor<f32> {
    let mut data = first;
    data.extend(edge_plane(image, params));
    Tensor::from_vec(2, image.height(), image.width(), data)
}

fn edge_plane(image: &GrayscaleImage, p: &ProxyParams) -> Vec<f32> {
    canny(image, p.canny_sigma, p.canny_low, p.canny_high)
}

fn smooth_plane(image: &GrayscaleImage, p: &ProxyParams) -> Vec<f32> {
    gaussian_blur(image, p.smooth_sigma)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0) as f32)
        .collect()
}

/// Regular grid of `patch_size` squares (edge patches may be smaller), each
/// replaced by its mean.
fn patch_plane(image: &GrayscaleImage, p: &ProxyParams) -> Result<Vec<f32>> {
    if p.patch_size == 0 {
        return Err(Error::arg("patch_size must be at least 1"));
    }
    let (h, w, s) = (image.height(), image.width(), p.patch_size);
    let mut out = vec![0.0f32; h * w];
    for y0 in (0..h).step_by(s) {
        for x0 in (0..w).step_by(s) {
            let (y1, x1) = ((y0 + s).min(h), (x0 + s).min(w));
            let mut sum = 0.0f64;
            for y in y0..y1 {
                for x in x0..x1 {
                    sum += image.get(y, x) as f64;
                }
            }
            let mean = (sum / ((y1 - y0) * (x1 - x0)) as f64) as f32;
            for y in y0..y1 {
                out[y * w + x0..y * w + x1].fill(mean);
            }
        }
    }
    Ok(out)
}

pub(crate) fn si_plane(image: &GrayscaleImage, p: &ProxyParams) -> Result<Vec<f32>> {
    let n = p.superpixels_for(image.height(), image.width());
    let labels = slic_segment(image, n, p.compactness, p.slic_iters)?;
    Ok(render_superpixel_image(image, &labels)?.pixels.pixels().to_vec())
}

struct SiProxy;
struct EdgeProxy;
struct SmoothImageProxy;
struct SmoothPatchesProxy;
struct EdgeConcatSmoothProxy;
struct EdgeConcatPatchesProxy;

impl ProxyBuilder for SiProxy {
    fn name(&self) -> &'static str {
        "si"
    }
    fn channels(&self) -> usize {
        1
    }
    fn build(&self, image: &GrayscaleImage, params: &ProxyParams) -> Result<Tensor<f32>> {
        Ok(single(image, si_plane(image, params)?))
    }
}

impl ProxyBuilder for EdgeProxy {
    fn name(&self) -> &'static str {
        "edge"
    }
    fn channels(&self) -> usize {
        1
    }
    fn build(&self, image: &GrayscaleImage, params: &ProxyParams) -> Result<Tensor<f32>> {
        Ok(single(image, edge_plane(image, params)))
    }
    fn paste_content(&self, image: &GrayscaleImage, params: &ProxyParams) -> Result<Tensor<f32>> {
        self.build(image, params)
    }
}

impl ProxyBuilder for SmoothImageProxy {
    fn name(&self) -> &'static str {
        "smooth_image"
    }
    fn channels(&self) -> usize {
        1
    }
    fn build(&self, image: &GrayscaleImage, params: &ProxyParams) -> Result<Tensor<f32>> {
        Ok(single(image, smooth_plane(image, params)))
    }
}

impl ProxyBuilder for SmoothPatchesProxy {
    fn name(&self) -> &'static str {
        "smooth_patches"
    }
    fn channels(&self) -> usize {
        1
    }
    fn build(&self, image: &GrayscaleImage, params: &ProxyParams) -> Result<Tensor<f32>> {
        Ok(single(image, patch_plane(image, params)?))
    }
}

impl ProxyBuilder for EdgeConcatSmoothProxy {
    fn name(&self) -> &'static str {
        "edge_concat_smooth"
    }
    fn channels(&self) -> usize {
        2
    }
    fn build(&self, image: &GrayscaleImage, params: &ProxyParams) -> Result<Tensor<f32>> {
        Ok(stack_with_edges(smooth_plane(image, params), image, params))
    }
    fn paste_content(&self, image: &GrayscaleImage, params: &ProxyParams) -> Result<Tensor<f32>> {
        Ok(stack_with_edges(image.pixels().to_vec(), image, params))
    }
}

impl ProxyBuilder for EdgeConcatPatchesProxy {
    fn name(&self) -> &'static str {
        "edge_concat_patches"
    }
    fn channels(&self) -> usize {
        2
    }
    fn build(&self, image: &GrayscaleImage, params: &ProxyParams) -> Result<Tensor<f32>> {
        Ok(stack_with_edges(patch_plane(image, params)?, image, params))
    }
    fn paste_content(&self, image: &GrayscaleImage, params: &ProxyParams) -> Result<Tensor<f32>> {
        Ok(stack_with_edges(image.pixels().to_vec(), image, params))
    }
}

/// Name-keyed collection of proxy builders.
#[derive(Clone, Default)]
pub struct ProxyRegistry {
    builders: BTreeMap<String, Arc<dyn ProxyBuilder>>,
}

impl ProxyRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry holding every [`ProxyMode`].
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(SiProxy));
        r.register(Arc::new(EdgeProxy));
        r.register(Arc::new(SmoothImageProxy));
        r.register(Arc::new(SmoothPatchesProxy));
        r.register(Arc::new(EdgeConcatSmoothProxy));
        r.register(Arc::new(EdgeConcatPatchesProxy));
        r
    }

    pub fn standard() -> &'static ProxyRegistry {
        static REGISTRY: OnceLock<ProxyRegistry> = OnceLock::new();
        REGISTRY.get_or_init(ProxyRegistry::with_defaults)
    }

    pub fn register(&mut self, builder: Arc<dyn ProxyBuilder>) {
        self.builders.insert(builder.name().to_string(), builder);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn ProxyBuilder>> {
        self.builders
            .get(name)
            .cloned()
            .ok_or_else(|| Error::arg(format!("unknown proxy mode {name:?}")))
    }

    pub fn names(&self) -> Vec<&str> {
        self.builders.keys().map(String::as_str).collect()
    }
}

pub fn make_proxy(image: &GrayscaleImage, mode: ProxyMode, params: &ProxyParams) -> Result<Tensor<f32>> {
    ProxyRegistry::standard().get(mode.name())?.build(image, params)
}
