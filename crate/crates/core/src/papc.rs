//! Pseudo-abnormal proxy construction by cut-paste: a random rectangle of a
//! normal image is pasted, at the same location, into a normal proxy.

use rand::Rng;

use crate::imaging::{GrayscaleImage, MIN_SIDE};
use crate::nn::Tensor;
use crate::superpixel::{ProxyBuilder, ProxyParams};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchRect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl PatchRect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoProxy {
    pub proxy: Tensor<f32>,
    /// Binary paste mask, H×W row-major in `{0, 1}`.
    pub mask: Vec<f32>,
    pub source_id: String,
    pub rect: PatchRect,
}

/// Inclusive patch-side range `[side/8, side/2]`.
pub fn patch_side_range(side: usize) -> (usize, usize) {
    ((side / 8).max(2), side / 2)
}

pub fn sample_rect(height: usize, width: usize, rng: &mut impl Rng) -> Result<PatchRect> {
    if height < MIN_SIDE || width < MIN_SIDE {
        return Err(Error::arg(format!(
            "pseudo-anomaly needs images of at least {MIN_SIDE}px, got {height}x{width}"
        )));
    }
    let (hlo, hhi) = patch_side_range(height);
    let (wlo, whi) = patch_side_range(width);
    let ph = rng.random_range(hlo..=hhi);
    let pw = rng.random_range(wlo..=whi);
    let top = rng.random_range(0..=height - ph);
    let left = rng.random_range(0..=width - pw);
    Ok(PatchRect {
        top,
        left,
        height: ph,
        width: pw,
    })
}

/// Pastes the rectangle of `source_content` (one plane per proxy channel)
/// into `base_proxy` at a random rectangle.
pub fn construct_pseudo_proxy(
    base_proxy: &Tensor<f32>,
    source_content: &Tensor<f32>,
    source_id: &str,
    rng: &mut impl Rng,
) -> Result<PseudoProxy> {
    if base_proxy.shape() != source_content.shape() {
        return Err(Error::arg(format!(
            "source content {:?} does not match proxy {:?}",
            source_content.shape(),
            base_proxy.shape()
        )));
    }
    let (c, h, w) = base_proxy.shape();
    let rect = sample_rect(h, w, rng)?;
    let mut proxy = base_proxy.clone();
    let mut mask = vec![0.0f32; h * w];
    for y in rect.top..rect.top + rect.height {
        for x in rect.left..rect.left + rect.width {
            mask[y * w + x] = 1.0;
            for ch in 0..c {
                let i = (ch * h + y) * w + x;
                proxy.data[i] = source_content.data[i];
            }
        }
    }
    Ok(PseudoProxy {
        proxy,
        mask,
        source_id: source_id.to_string(),
        rect,
    })
}

/// Convenience wrapper deriving the paste content from a source image via the
/// active proxy strategy.
pub fn construct_from_image(
    base_proxy: &Tensor<f32>,
    source: &GrayscaleImage,
    source_id: &str,
    builder: &dyn ProxyBuilder,
    params: &ProxyParams,
    rng: &mut impl Rng,
) -> Result<PseudoProxy> {
    let content = builder.paste_content(source, params)?;
    construct_pseudo_proxy(base_proxy, &content, source_id, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tensor(c: usize, side: usize, seed: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(c, side, side, (0..c * side * side).map(|_| rng.random_range(0.0..1.0)).collect())
    }

    #[test]
    fn paste_semantics_are_exact() {
        let base = tensor(2, 32, 1);
        let src = tensor(2, 32, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = construct_pseudo_proxy(&base, &src, "s", &mut rng).unwrap();
            for ch in 0..2 {
                for y in 0..32 {
                    for x in 0..32 {
                        let i = (ch * 32 + y) * 32 + x;
                        let inside = p.rect.contains(y, x);
                        assert_eq!(p.mask[y * 32 + x], inside as u8 as f32);
                        let want = if inside { src.data[i] } else { base.data[i] };
                        assert_eq!(p.proxy.data[i].to_bits(), want.to_bits());
                    }
                }
            }
            let area = p.mask.iter().filter(|&&m| m == 1.0).count();
            assert!((16..=16 * 16).contains(&area));
        }
    }

    #[test]
    fn seeded_draws_are_reproducible() {
        let base = tensor(1, 32, 1);
        let src = tensor(1, 32, 2);
        let a = construct_pseudo_proxy(&base, &src, "s", &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = construct_pseudo_proxy(&base, &src, "s", &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn small_images_and_shape_mismatch_fail() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(construct_pseudo_proxy(&tensor(1, 8, 0), &tensor(1, 8, 1), "s", &mut rng).is_err());
        assert!(construct_pseudo_proxy(&tensor(1, 32, 0), &tensor(2, 32, 1), "s", &mut rng).is_err());
    }

    #[test]
    fn patch_sides_cover_their_range_uniformly() {
        // Chi-square goodness of fit over the 25 admissible sides for 64px.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let (lo, hi) = patch_side_range(64);
        assert_eq!((lo, hi), (8, 32));
        let bins = hi - lo + 1;
        let mut counts = vec![0usize; bins];
        let draws = 1000;
        for _ in 0..draws {
            let r = sample_rect(64, 64, &mut rng).unwrap();
            assert!(r.top + r.height <= 64 && r.left + r.width <= 64);
            counts[r.height - lo] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0));
        let expected = draws as f64 / bins as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9th percentile of chi-square with 24 degrees of freedom.
        assert!(chi2 < 51.18, "chi2 = {chi2}");
    }
}
