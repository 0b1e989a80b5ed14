//! Gaussian smoothing and Canny edges for the non-superpixel proxies.

use crate::imaging::GrayscaleImage;

fn kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with clamped borders. `sigma <= 0` copies the input.
pub fn gaussian_blur(image: &GrayscaleImage, sigma: f64) -> Vec<f64> {
    let (h, w) = (image.height(), image.width());
    let src: Vec<f64> = image.pixels().iter().map(|&v| v as f64).collect();
    if sigma <= 0.0 {
        return src;
    }
    let k = kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| {
                    let xx = (x as isize + j as isize - r).clamp(0, w as isize - 1) as usize;
                    kv * src[y * w + xx]
                })
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| {
                    let yy = (y as isize + j as isize - r).clamp(0, h as isize - 1) as usize;
                    kv * tmp[yy * w + x]
                })
                .sum();
        }
    }
    out
}

/// Binary Canny edge map in `{0, 1}`.
///
/// `low`/`high` are hysteresis thresholds as fractions of the maximum
/// gradient magnitude after Gaussian pre-smoothing with `sigma`.
pub fn canny(image: &GrayscaleImage, sigma: f64, low: f64, high: f64) -> Vec<f32> {
    let (h, w) = (image.height(), image.width());
    let s = gaussian_blur(image, sigma);
    let at = |y: isize, x: isize| {
        s[(y.clamp(0, h as isize - 1) as usize) * w + x.clamp(0, w as isize - 1) as usize]
    };
    let mut mag = vec![0.0f64; h * w];
    let mut dir = vec![0u8; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y, x - 1) + at(y + 1, x - 1));
            let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1))
                - (at(y - 1, x - 1) + 2.0 * at(y - 1, x) + at(y - 1, x + 1));
            let i = y as usize * w + x as usize;
            mag[i] = (gx * gx + gy * gy).sqrt();
            let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            dir[i] = match angle {
                a if !(22.5..157.5).contains(&a) => 0,
                a if a < 67.5 => 1,
                a if a < 112.5 => 2,
                _ => 3,
            };
        }
    }
    let max = mag.iter().cloned().fold(0.0, f64::max);
    let mut out = vec![0.0f32; h * w];
    if max <= 1e-12 {
        return out;
    }
    let m = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut thin = vec![0.0f64; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let (dy, dx) = match dir[i] {
                0 => (0, 1),
                1 => (1, 1),
                2 => (1, 0),
                _ => (1, -1),
            };
            let v = mag[i];
            if v >= m(y + dy, x + dx) && v >= m(y - dy, x - dx) {
                thin[i] = v;
            }
        }
    }
    let (lo, hi) = (low * max, high * max);
    let mut stack: Vec<usize> = Vec::new();
    for (i, &v) in thin.iter().enumerate() {
        if v >= hi {
            out[i] = 1.0;
            stack.push(i);
        }
    }
    while let Some(i) = stack.pop() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (yy, xx) = (y + dy, x + dx);
                if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                    continue;
                }
                let j = yy as usize * w + xx as usize;
                if out[j] == 0.0 && thin[j] >= lo {
                    out[j] = 1.0;
                    stack.push(j);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blur_preserves_constants_and_mass() {
        let img = GrayscaleImage::filled(20, 20, 0.3).unwrap();
        assert!(gaussian_blur(&img, 2.0).iter().all(|v| (v - 0.3f32 as f64).abs() < 1e-12));
    }

    #[test]
    fn constant_image_has_no_edges() {
        let img = GrayscaleImage::filled(20, 20, 0.7).unwrap();
        assert!(canny(&img, 1.0, 0.1, 0.2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_edge_is_detected_as_a_thin_line() {
        let px = (0..32 * 32).map(|i| if i % 32 < 16 { 0.1 } else { 0.9 }).collect();
        let img = GrayscaleImage::new(32, 32, px).unwrap();
        let e = canny(&img, 1.0, 0.1, 0.2);
        assert!(e.iter().all(|&v| v == 0.0 || v == 1.0));
        for y in 2..30 {
            let row: Vec<usize> = (0..32).filter(|&x| e[y * 32 + x] == 1.0).collect();
            assert!(!row.is_empty() && row.len() <= 2, "row {y}: {row:?}");
            assert!(row.iter().all(|&x| (14..=17).contains(&x)));
        }
    }
}
