use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::nn::Tensor;
use crate::{Error, Result};

/// Smallest supported image side.
pub const MIN_SIDE: usize = 16;

/// Row-major H×W intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayscaleImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl GrayscaleImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::arg(format!(
                "image {height}x{width} is smaller than {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::arg(format!(
                "expected {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::arg(format!("intensity {bad} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    /// Builds an image from arbitrary values, clamping into `[0, 1]`.
    pub fn from_clamped(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        Self::new(
            height,
            width,
            values
                .into_iter()
                .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) })
                .collect(),
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&v| v as f64).sum::<f64>() / self.len() as f64
    }

    pub fn to_tensor(&self) -> Tensor<f32> {
        Tensor::from_vec(1, self.height, self.width, self.pixels.clone())
    }

    /// Converts a single-channel tensor back, clamping into range.
    pub fn from_tensor(t: &Tensor<f32>) -> Result<Self> {
        if t.channels != 1 {
            return Err(Error::arg(format!(
                "expected 1-channel tensor, got {} channels",
                t.channels
            )));
        }
        Self::from_clamped(t.height, t.width, t.data.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Abnormal,
}

impl Label {
    pub fn is_abnormal(self) -> bool {
        self == Label::Abnormal
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Normal => "normal",
            Label::Abnormal => "abnormal",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Label::Normal),
            "abnormal" => Ok(Label::Abnormal),
            other => Err(Error::arg(format!("unknown label {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub id: String,
    pub image: GrayscaleImage,
    pub label: Label,
    /// Binary lesion mask, row-major with the image's shape.
    pub lesion_mask: Option<Vec<bool>>,
}

impl LabeledSample {
    pub fn new(
        id: impl Into<String>,
        image: GrayscaleImage,
        label: Label,
        lesion_mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        if let Some(mask) = &lesion_mask {
            if label != Label::Abnormal {
                return Err(Error::arg("lesion mask given for a normal sample"));
            }
            if mask.len() != image.len() {
                return Err(Error::arg("lesion mask shape does not match image"));
            }
        }
        Ok(Self {
            id: id.into(),
            image,
            label,
            lesion_mask,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_and_tiny_images() {
        assert!(GrayscaleImage::new(16, 16, vec![1.5; 256]).is_err());
        assert!(GrayscaleImage::new(16, 16, vec![f32::NAN; 256]).is_err());
        assert!(GrayscaleImage::new(8, 8, vec![0.0; 64]).is_err());
        assert!(GrayscaleImage::new(16, 16, vec![0.0; 255]).is_err());
        assert!(GrayscaleImage::new(16, 16, vec![1.0; 256]).is_ok());
    }

    #[test]
    fn mask_requires_abnormal_label() {
        let img = GrayscaleImage::filled(16, 16, 0.5).unwrap();
        assert!(LabeledSample::new("a", img.clone(), Label::Normal, Some(vec![false; 256])).is_err());
        assert!(LabeledSample::new("a", img.clone(), Label::Abnormal, Some(vec![false; 10])).is_err());
        assert!(LabeledSample::new("a", img, Label::Abnormal, Some(vec![false; 256])).is_ok());
    }
}
