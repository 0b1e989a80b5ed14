use super::slic::SuperpixelLabels;
use crate::imaging::GrayscaleImage;
use crate::{Error, Result};

/// Piecewise-constant rendering of an image over a segmentation: every pixel
/// carries the mean intensity of its segment.
#[derive(Clone, Debug, PartialEq)]
pub struct SuperpixelImage {
    pub pixels: GrayscaleImage,
    pub source_labels: SuperpixelLabels,
}

/// Per-segment means accumulated in f64.
pub fn segment_means(image: &GrayscaleImage, labels: &SuperpixelLabels) -> Result<Vec<f64>> {
    if image.height() != labels.height() || image.width() != labels.width() {
        return Err(Error::arg(format!(
            "label map {}x{} does not match image {}x{}",
            labels.height(),
            labels.width(),
            image.height(),
            image.width()
        )));
    }
    let n = labels.n_segments();
    let mut sums = vec![0.0f64; n];
    let mut counts = vec![0usize; n];
    for (&l, &v) in labels.labels().iter().zip(image.pixels()) {
        sums[l as usize] += v as f64;
        counts[l as usize] += 1;
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| s / c as f64)
        .collect())
}

pub fn render_superpixel_image(
    image: &GrayscaleImage,
    labels: &SuperpixelLabels,
) -> Result<SuperpixelImage> {
    let means = segment_means(image, labels)?;
    let pixels = labels
        .labels()
        .iter()
        .map(|&l| (means[l as usize] as f32).clamp(0.0, 1.0))
        .collect();
    Ok(SuperpixelImage {
        pixels: GrayscaleImage::new(image.height(), image.width(), pixels)?,
        source_labels: labels.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_segment_gets_its_mean() {
        let mut px = vec![0.9f32; 256];
        px[0] = 0.2;
        px[1] = 0.4;
        let mut lab = vec![1u32; 256];
        lab[0] = 0;
        lab[1] = 0;
        let img = GrayscaleImage::new(16, 16, px).unwrap();
        let labels = SuperpixelLabels::new(16, 16, lab).unwrap();
        let si = render_superpixel_image(&img, &labels).unwrap();
        assert!((si.pixels.get(0, 0) - 0.3).abs() < 1e-7);
        assert!((si.pixels.get(0, 1) - 0.3).abs() < 1e-7);
        assert_eq!(si.pixels.get(5, 5), 0.9);
    }

    #[test]
    fn single_segment_is_the_global_mean() {
        let px: Vec<f32> = (0..256).map(|i| (i % 7) as f32 / 7.0).collect();
        let img = GrayscaleImage::new(16, 16, px).unwrap();
        let labels = SuperpixelLabels::new(16, 16, vec![0; 256]).unwrap();
        let si = render_superpixel_image(&img, &labels).unwrap();
        let mean = img.mean() as f32;
        assert!(si.pixels.pixels().iter().all(|&v| v == mean));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let img = GrayscaleImage::filled(16, 16, 0.1).unwrap();
        let labels = SuperpixelLabels::new(16, 17, vec![0; 16 * 17]).unwrap();
        assert!(render_superpixel_image(&img, &labels).is_err());
    }
}
