use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::{GrayscaleImage, Label, LabeledSample, MIN_SIDE};
use crate::{Error, Result};

/// Parameters of the synthetic layered (OCT-like) phantom set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub image_size: usize,
    pub n_train_normal: usize,
    pub n_test_normal: usize,
    pub n_test_abnormal: usize,
    /// Inclusive semi-axis range of the elliptical lesion, in pixels.
    pub lesion_radius_range: [f64; 2],
    /// Inclusive intensity offset range added inside the lesion.
    pub lesion_contrast_range: [f64; 2],
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            image_size: 64,
            n_train_normal: 300,
            n_test_normal: 100,
            n_test_abnormal: 100,
            lesion_radius_range: [3.0, 7.0],
            lesion_contrast_range: [0.2, 0.35],
            noise_sigma: 0.02,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("phantom spec: {m}")));
        if self.image_size < MIN_SIDE {
            return bad(format!("image_size must be at least {MIN_SIDE}"));
        }
        if self.n_train_normal == 0 || self.n_test_normal == 0 || self.n_test_abnormal == 0 {
            return bad("sample counts must be at least 1".into());
        }
        let [rlo, rhi] = self.lesion_radius_range;
        let [clo, chi] = self.lesion_contrast_range;
        if !(rlo.is_finite() && rhi.is_finite() && rlo <= rhi && rlo >= 1.0) {
            return bad("lesion_radius_range must be a non-empty interval with min >= 1".into());
        }
        if !(clo.is_finite() && chi.is_finite() && clo <= chi) {
            return bad("lesion_contrast_range must be a non-empty interval".into());
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return bad("noise_sigma must be >= 0".into());
        }
        if 2.0 * rhi.ceil() + 1.0 > self.image_size as f64 {
            return bad(format!(
                "lesion radius {rhi} does not fit in a {}px image",
                self.image_size
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSet {
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    // splitmix64 finalizer over (seed, stream)
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Smooth horizontal bands with random offset, tilt, curvature and waviness.
fn layered_background(size: usize, rng: &mut impl Rng) -> Vec<f64> {
    const BOUNDARIES: [f64; 4] = [0.22, 0.38, 0.55, 0.72];
    const LEVELS: [f64; 5] = [0.12, 0.42, 0.28, 0.52, 0.18];
    let s = size as f64;
    let offset = rng.random_range(-0.06..0.06) * s;
    let tilt = rng.random_range(-0.05..0.05) * s;
    let curvature = rng.random_range(-0.12..0.12) * s;
    let levels: Vec<f64> = LEVELS
        .iter()
        .map(|l| l + rng.random_range(-0.03..0.03))
        .collect();
    let bounds: Vec<(f64, f64, f64, f64)> = BOUNDARIES
        .iter()
        .map(|b| {
            let base = b * s + offset + rng.random_range(-0.02..0.02) * s;
            let amp = rng.random_range(0.0..0.015) * s;
            let freq = rng.random_range(1.0..2.0);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            (base, amp, freq, phase)
        })
        .collect();
    let mut out = vec![0.0; size * size];
    for x in 0..size {
        let u = x as f64 / s - 0.5;
        let bend = tilt * u + curvature * 4.0 * u * u;
        let edges: Vec<f64> = bounds
            .iter()
            .map(|&(base, amp, freq, phase)| {
                base + bend + amp * (std::f64::consts::TAU * freq * u + phase).sin()
            })
            .collect();
        for y in 0..size {
            let yf = y as f64;
            let mut v = levels[0];
            for (b, e) in edges.iter().enumerate() {
                let t = 1.0 / (1.0 + (-(yf - e) / 0.8).exp());
                v += (levels[b + 1] - levels[b]) * t;
            }
            out[y * size + x] = v;
        }
    }
    out
}

fn normal_image(spec: &PhantomSpec, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = spec.image_size;
    let mut base = layered_background(n, rng);
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).expect("finite sigma");
        for v in base.iter_mut() {
            *v += noise.sample(rng);
        }
    }
    base.into_iter().map(|v| v.clamp(0.0, 1.0) as f32).collect()
}

/// Adds one elliptical lesion to `base`; returns the abnormal pixels and mask.
fn add_lesion(spec: &PhantomSpec, base: &[f32], rng: &mut ChaCha8Rng) -> (Vec<f32>, Vec<bool>) {
    let n = spec.image_size;
    let rx = uniform(rng, spec.lesion_radius_range);
    let ry = uniform(rng, spec.lesion_radius_range);
    let contrast = uniform(rng, spec.lesion_contrast_range) as f32;
    let (mx, my) = (rx.ceil(), ry.ceil());
    let cx = rng.random_range(mx..=(n as f64 - 1.0 - mx));
    let cy = rng.random_range(my..=(n as f64 - 1.0 - my));
    let mut pixels = base.to_vec();
    let mut mask = vec![false; n * n];
    for y in 0..n {
        for x in 0..n {
            let dx = (x as f64 - cx) / rx;
            let dy = (y as f64 - cy) / ry;
            if dx * dx + dy * dy <= 1.0 {
                let i = y * n + x;
                mask[i] = true;
                pixels[i] = (pixels[i] + contrast).clamp(0.0, 1.0);
            }
        }
    }
    if !mask.iter().any(|&m| m) {
        // Degenerate sub-pixel ellipse: mark its centre.
        let i = cy.round() as usize * n + cx.round() as usize;
        mask[i] = true;
        pixels[i] = (pixels[i] + contrast).clamp(0.0, 1.0);
    }
    (pixels, mask)
}

/// Returns `(normal, abnormal, mask)` drawn from one sample stream; the
/// abnormal image equals the normal one outside the mask.
pub(crate) fn phantom_pair(spec: &PhantomSpec, stream: u64) -> (Vec<f32>, Vec<f32>, Vec<bool>) {
    let mut rng = stream_rng(spec.seed, stream);
    let base = normal_image(spec, &mut rng);
    let (abnormal, mask) = add_lesion(spec, &base, &mut rng);
    (base, abnormal, mask)
}

const TEST_NORMAL_STREAM: u64 = 1 << 32;
const TEST_ABNORMAL_STREAM: u64 = 2 << 32;

/// Deterministically generates the training normals and the labelled test set.
pub fn generate_phantoms(spec: &PhantomSpec) -> Result<PhantomSet> {
    spec.validate()?;
    let n = spec.image_size;
    let img = |pixels| GrayscaleImage::new(n, n, pixels);
    let mut train = Vec::with_capacity(spec.n_train_normal);
    for i in 0..spec.n_train_normal {
        let mut rng = stream_rng(spec.seed, i as u64);
        let pixels = normal_image(spec, &mut rng);
        train.push(LabeledSample::new(format!("train_{i:04}"), img(pixels)?, Label::Normal, None)?);
    }
    let mut test = Vec::with_capacity(spec.n_test_normal + spec.n_test_abnormal);
    for i in 0..spec.n_test_normal {
        let mut rng = stream_rng(spec.seed, TEST_NORMAL_STREAM + i as u64);
        let pixels = normal_image(spec, &mut rng);
        test.push(LabeledSample::new(format!("normal_{i:04}"), img(pixels)?, Label::Normal, None)?);
    }
    for i in 0..spec.n_test_abnormal {
        let (_, pixels, mask) = phantom_pair(spec, TEST_ABNORMAL_STREAM + i as u64);
        test.push(LabeledSample::new(
            format!("abnormal_{i:04}"),
            img(pixels)?,
            Label::Abnormal,
            Some(mask),
        )?);
    }
    Ok(PhantomSet { train, test })
}
