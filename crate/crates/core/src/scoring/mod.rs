//! Anomaly scores and evaluation metrics.
//!
//! Image-level scorers implement [`AnomalyScorer`] and are looked up by name
//! in a [`ScorerRegistry`]:
//!
//! * `latent`: `‖Enc_p(I) − Enc_p(Î)‖_F`, the encoder being the stage-1 one.
//! * `pixel`: `‖I − Î‖_F` in image space.
//! * `si-error`: mean squared error between the predicted proxy and the
//!   proxy computed from the image.

mod metrics;

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;

pub use metrics::{
    compute_acc_f1, compute_auc, compute_gap, confusion_metrics, evaluate, min_max_normalize,
    pixel_metrics, MetricsReport, PixelMetrics, ScoreGap,
};

use crate::imaging::{GrayscaleImage, Label, LabeledSample};
use crate::networks::{ImageReconstructionModule, ProxyExtractionModule};
use crate::nn::Tensor;
use crate::superpixel::{ProxyMode, ProxyParams, ProxyRegistry};
use crate::training::AblationConfig;
use crate::{Error, Result};

/// A trained detector: the proxy extraction module and, when the proxy bridge
/// is enabled, the reconstruction module.
#[derive(Clone, Debug)]
pub struct AnomalyModel {
    pub ablation: AblationConfig,
    pub proxy_params: ProxyParams,
    pub pem: ProxyExtractionModule,
    pub irm: Option<ImageReconstructionModule>,
}

/// Intermediate products of one forward pass.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub image: Tensor<f32>,
    /// `P̂`; for self-reconstruction models this is the reconstruction itself.
    pub proxy: Tensor<f32>,
    /// `Î`.
    pub reconstruction: Tensor<f32>,
}

impl AnomalyModel {
    pub fn new(
        ablation: AblationConfig,
        proxy_params: ProxyParams,
        pem: ProxyExtractionModule,
        irm: Option<ImageReconstructionModule>,
    ) -> Result<Self> {
        ablation.validate()?;
        if ablation.use_memory != pem.use_memory() {
            return Err(Error::Config("memory flag does not match the proxy module".into()));
        }
        if let Some(r) = &irm {
            if r.in_channels() != pem.out_channels() {
                return Err(Error::Config("reconstruction input channels differ from proxy channels".into()));
            }
        }
        Ok(Self {
            ablation,
            proxy_params,
            pem,
            irm,
        })
    }

    pub fn reconstruct(&self, image: &GrayscaleImage) -> Result<Reconstruction> {
        let x = image.to_tensor();
        let proxy = self.pem.forward(&x)?.proxy;
        let reconstruction = if self.ablation.use_si_proxy {
            let irm = self
                .irm
                .as_ref()
                .ok_or_else(|| Error::Untrained("reconstruction module has not been trained".into()))?;
            irm.forward(&proxy)?
        } else {
            proxy.clone()
        };
        Ok(Reconstruction {
            image: x,
            proxy,
            reconstruction,
        })
    }

    /// Mode of the reference proxy used by `si-error`.
    pub fn reference_mode(&self) -> ProxyMode {
        if self.ablation.use_si_proxy {
            self.ablation.proxy_mode
        } else {
            ProxyMode::Si
        }
    }

    /// Name of the scorer that the ablation flags select as the image score.
    pub fn primary_scorer(&self) -> &'static str {
        if self.ablation.score_in_latent {
            LATENT
        } else {
            PIXEL
        }
    }
}

pub fn score_pixel(image: &Tensor<f32>, reconstruction: &Tensor<f32>) -> Result<Vec<f32>> {
    if image.shape() != reconstruction.shape() {
        return Err(Error::arg("image and reconstruction differ in shape"));
    }
    Ok(image.data.iter().zip(&reconstruction.data).map(|(a, b)| (a - b).abs()).collect())
}

pub fn score_image_pixelspace(image: &Tensor<f32>, reconstruction: &Tensor<f32>) -> Result<f64> {
    if image.shape() != reconstruction.shape() {
        return Err(Error::arg("image and reconstruction differ in shape"));
    }
    Ok(image
        .data
        .iter()
        .zip(&reconstruction.data)
        .map(|(&a, &b)| {
            let d = a as f64 - b as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

/// `‖Enc_p(I) − Enc_p(Î)‖_F` with the raw (pre-memory) encoder output.
pub fn score_image_latent(pem: &ProxyExtractionModule, image: &Tensor<f32>, reconstruction: &Tensor<f32>) -> Result<f64> {
    let z = pem.encoder.encode(image)?;
    let z_hat = pem.encoder.encode(reconstruction)?;
    z.frobenius_distance(&z_hat)
}

/// Mean squared error between `F_p(I)` and the proxy computed from `I`.
pub fn score_si_error(pem: &ProxyExtractionModule, image: &GrayscaleImage, mode: ProxyMode, params: &ProxyParams) -> Result<f64> {
    let predicted = pem.forward(&image.to_tensor())?.proxy;
    si_error_of(&predicted, image, mode, params)
}

fn si_error_of(predicted: &Tensor<f32>, image: &GrayscaleImage, mode: ProxyMode, params: &ProxyParams) -> Result<f64> {
    let reference = ProxyRegistry::standard().get(mode.name())?.build(image, params)?;
    if reference.shape() != predicted.shape() {
        return Err(Error::arg("predicted proxy and reference proxy differ in shape"));
    }
    crate::training::mse(&predicted.data, &reference.data)
}

/// An image-level anomaly score computed from a model's forward pass.
pub trait AnomalyScorer: Send + Sync {
    fn name(&self) -> &'static str;

    fn score(&self, model: &AnomalyModel, image: &GrayscaleImage, forward: &Reconstruction) -> Result<f64>;
}

pub const LATENT: &str = "latent";
pub const PIXEL: &str = "pixel";
pub const SI_ERROR: &str = "si-error";

struct LatentScorer;
struct PixelScorer;
struct SiErrorScorer;

impl AnomalyScorer for LatentScorer {
    fn name(&self) -> &'static str {
        LATENT
    }

    fn score(&self, model: &AnomalyModel, _image: &GrayscaleImage, f: &Reconstruction) -> Result<f64> {
        score_image_latent(&model.pem, &f.image, &f.reconstruction)
    }
}

impl AnomalyScorer for PixelScorer {
    fn name(&self) -> &'static str {
        PIXEL
    }

    fn score(&self, _model: &AnomalyModel, _image: &GrayscaleImage, f: &Reconstruction) -> Result<f64> {
        score_image_pixelspace(&f.image, &f.reconstruction)
    }
}

impl AnomalyScorer for SiErrorScorer {
    fn name(&self) -> &'static str {
        SI_ERROR
    }

    fn score(&self, model: &AnomalyModel, image: &GrayscaleImage, f: &Reconstruction) -> Result<f64> {
        si_error_of(&f.proxy, image, model.reference_mode(), &model.proxy_params)
    }
}

#[derive(Clone)]
pub struct ScorerRegistry {
    scorers: BTreeMap<String, Arc<dyn AnomalyScorer>>,
}

impl ScorerRegistry {
    pub fn empty() -> Self {
        Self {
            scorers: BTreeMap::new(),
        }
    }

    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(LatentScorer));
        r.register(Arc::new(PixelScorer));
        r.register(Arc::new(SiErrorScorer));
        r
    }

    pub fn standard() -> &'static ScorerRegistry {
        static REGISTRY: OnceLock<ScorerRegistry> = OnceLock::new();
        REGISTRY.get_or_init(Self::with_defaults)
    }

    pub fn register(&mut self, scorer: Arc<dyn AnomalyScorer>) {
        self.scorers.insert(scorer.name().to_string(), scorer);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn AnomalyScorer>> {
        self.scorers.get(name).cloned().ok_or_else(|| {
            Error::arg(format!("unknown scorer '{name}' (available: {})", self.names().join(", ")))
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.scorers.keys().map(String::as_str).collect()
    }
}

/// Per-sample scoring result.
#[derive(Clone, Debug, PartialEq)]
pub struct AnomalyRecord {
    pub id: String,
    pub label: Label,
    /// Latent score `‖z − ẑ‖_F`.
    pub a_img: f64,
    pub a_img_pixelspace: f64,
    pub a_si_error: f64,
    /// `|I − Î|`, row-major H×W.
    pub a_pix: Vec<f32>,
    pub lesion_mask: Option<Vec<bool>>,
}

impl AnomalyRecord {
    pub fn score(&self, scorer: &str) -> Result<f64> {
        match scorer {
            LATENT => Ok(self.a_img),
            PIXEL => Ok(self.a_img_pixelspace),
            SI_ERROR => Ok(self.a_si_error),
            _ => Err(Error::arg(format!("unknown scorer '{scorer}'"))),
        }
    }
}

pub fn score_sample(model: &AnomalyModel, sample: &LabeledSample) -> Result<AnomalyRecord> {
    let f = model.reconstruct(&sample.image)?;
    let reg = ScorerRegistry::standard();
    let a_img = reg.get(LATENT)?.score(model, &sample.image, &f)?;
    let a_img_pixelspace = reg.get(PIXEL)?.score(model, &sample.image, &f)?;
    let a_si_error = reg.get(SI_ERROR)?.score(model, &sample.image, &f)?;
    let a_pix = score_pixel(&f.image, &f.reconstruction)?;
    let record = AnomalyRecord {
        id: sample.id.clone(),
        label: sample.label,
        a_img,
        a_img_pixelspace,
        a_si_error,
        a_pix,
        lesion_mask: sample.lesion_mask.clone(),
    };
    if !(a_img.is_finite() && a_img_pixelspace.is_finite() && a_si_error.is_finite()) {
        return Err(Error::arg(format!("non-finite anomaly score for {}", sample.id)));
    }
    Ok(record)
}

/// Scores every sample; output order follows `samples`.
pub fn score_dataset(model: &AnomalyModel, samples: &[LabeledSample]) -> Result<Vec<AnomalyRecord>> {
    samples.par_iter().map(|s| score_sample(model, s)).collect()
}

/// Image-level metrics of one score column.
pub fn evaluate_records(records: &[AnomalyRecord], scorer: &str, threshold: f64) -> Result<MetricsReport> {
    let scores = records.iter().map(|r| r.score(scorer)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<Label> = records.iter().map(|r| r.label).collect();
    evaluate(&scores, &labels, threshold)
}

/// Pixel metrics over all records; `None` when no record carries a mask.
pub fn evaluate_pixels(records: &[AnomalyRecord], threshold: f64) -> Result<Option<PixelMetrics>> {
    if records.iter().all(|r| r.lesion_mask.is_none()) {
        return Ok(None);
    }
    let blank: Vec<Vec<bool>> = records
        .iter()
        .map(|r| if r.lesion_mask.is_none() { vec![false; r.a_pix.len()] } else { Vec::new() })
        .collect();
    let masks: Vec<&[bool]> = records
        .iter()
        .zip(&blank)
        .map(|(r, b)| r.lesion_mask.as_deref().unwrap_or(b))
        .collect();
    let maps: Vec<&[f32]> = records.iter().map(|r| r.a_pix.as_slice()).collect();
    pixel_metrics(&maps, &masks, threshold).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: Vec<f32>) -> Tensor<f32> {
        let n = (v.len() as f64).sqrt() as usize;
        Tensor::from_vec(1, n, n, v)
    }

    #[test]
    fn pixel_scores() {
        let a = t(vec![0.5; 16]);
        assert!(score_pixel(&a, &a).unwrap().iter().all(|&v| v == 0.0));
        let mut b = a.clone();
        b.data[5] = 0.8;
        let m = score_pixel(&a, &b).unwrap();
        assert!((m[5] - 0.3).abs() < 1e-6);
        assert_eq!(m.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(score_pixel(&a, &b).unwrap(), score_pixel(&b, &a).unwrap());
    }

    #[test]
    fn pixelspace_uniform_offset() {
        let a = Tensor::from_vec(1, 64, 64, vec![0.25f32; 4096]);
        let b = a.map(|v| v + 0.1);
        assert!((score_image_pixelspace(&a, &b).unwrap() - 6.4).abs() < 1e-4);
        assert_eq!(score_image_pixelspace(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn registry_lists_scorers() {
        let r = ScorerRegistry::standard();
        assert_eq!(r.names(), vec!["latent", "pixel", "si-error"]);
        assert!(r.get("nope").is_err());
    }
}
