use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma};

use super::image::{GrayscaleImage, Label, LabeledSample};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

fn is_auxiliary(name: &str) -> bool {
    name.ends_with("_mask.png") || name.contains("_proxy") || name.contains("_apix")
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if path.is_file() && name.to_ascii_lowercase().ends_with(".png") && !is_auxiliary(name) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn image_error(path: &Path, reason: impl ToString) -> Error {
    Error::ImageFile {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Reads a PNG as grayscale intensities `v / (2^bits - 1)`; colour inputs are
/// converted to luma first.
pub(crate) fn read_gray(path: &Path) -> Result<GrayscaleImage> {
    let img = image::ImageReader::open(path)
        .map_err(|e| image_error(path, e))?
        .with_guessed_format()
        .map_err(|e| image_error(path, e))?
        .decode()
        .map_err(|e| image_error(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let values: Vec<f32> = match img {
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        DynamicImage::ImageLuma16(buf) => buf
            .into_raw()
            .into_iter()
            .map(|v| (v as f64 / 65535.0) as f32)
            .collect(),
        other @ (DynamicImage::ImageRgb16(_)
        | DynamicImage::ImageRgba16(_)
        | DynamicImage::ImageLumaA16(_)) => other
            .to_luma16()
            .into_raw()
            .into_iter()
            .map(|v| (v as f64 / 65535.0) as f32)
            .collect(),
        DynamicImage::ImageRgb32F(_) | DynamicImage::ImageRgba32F(_) => {
            return Err(image_error(path, "floating-point PNG data is not supported"))
        }
        other => other
            .to_luma8()
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 255.0)
            .collect(),
    };
    GrayscaleImage::new(h, w, values).map_err(|e| image_error(path, e))
}

fn read_mask(path: &Path, expected: &GrayscaleImage) -> Result<Vec<bool>> {
    let img = read_gray(path)?;
    if img.height() != expected.height() || img.width() != expected.width() {
        return Err(image_error(path, "mask shape does not match image"));
    }
    Ok(img.pixels().iter().map(|&v| v >= 0.5).collect())
}

fn load_class(dir: &Path, label: Label) -> Result<Vec<LabeledSample>> {
    let mut out = Vec::new();
    for path in list_pngs(dir)? {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| image_error(&path, "non UTF-8 file name"))?
            .to_string();
        let image = read_gray(&path)?;
        let mask_path = dir.join(format!("{id}_mask.png"));
        let mask = if label.is_abnormal() && mask_path.is_file() {
            Some(read_mask(&mask_path, &image)?)
        } else {
            None
        };
        out.push(LabeledSample::new(id, image, label, mask)?);
    }
    Ok(out)
}

/// Loads `root/<split>/{normal,abnormal}/*.png` in lexicographic order,
/// normals first.
pub fn load_dataset(root: &Path, split: Split) -> Result<Vec<LabeledSample>> {
    let split_dir = root.join(split.dir_name());
    if !split_dir.is_dir() {
        return Err(Error::Dataset(format!(
            "missing directory {}",
            split_dir.display()
        )));
    }
    let normal_dir = split_dir.join("normal");
    let abnormal_dir = split_dir.join("abnormal");
    let mut samples = Vec::new();
    if normal_dir.is_dir() {
        samples.extend(load_class(&normal_dir, Label::Normal)?);
    }
    if abnormal_dir.is_dir() {
        samples.extend(load_class(&abnormal_dir, Label::Abnormal)?);
    }
    match split {
        Split::Train if !samples.iter().any(|s| s.label == Label::Normal) => {
            Err(Error::Dataset("no training images".into()))
        }
        Split::Test if samples.is_empty() => Err(Error::Dataset("no test images".into())),
        _ => Ok(samples),
    }
}

pub fn write_gray16(path: &Path, height: usize, width: usize, values: &[f32]) -> Result<()> {
    let raw: Vec<u16> = values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) as f64 * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(width as u32, height as u32, raw).expect("buffer size");
    buf.save(path).map_err(|e| image_error(path, e))
}

pub fn write_gray8(path: &Path, height: usize, width: usize, values: &[f32]) -> Result<()> {
    let raw: Vec<u8> = values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(width as u32, height as u32, raw).expect("buffer size");
    buf.save(path).map_err(|e| image_error(path, e))
}

/// Writes samples into the dataset layout read by [`load_dataset`] as 16-bit PNGs.
pub fn save_dataset(root: &Path, split: Split, samples: &[LabeledSample]) -> Result<()> {
    for s in samples {
        let dir = root.join(split.dir_name()).join(s.label.as_str());
        fs::create_dir_all(&dir)?;
        let (h, w) = (s.image.height(), s.image.width());
        write_gray16(&dir.join(format!("{}.png", s.id)), h, w, s.image.pixels())?;
        if let Some(mask) = &s.lesion_mask {
            let m: Vec<f32> = mask.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            write_gray8(&dir.join(format!("{}_mask.png", s.id)), h, w, &m)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_u16(path: &Path, v: u16) {
        let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(16, 16, vec![v; 256]).unwrap();
        buf.save(path).unwrap();
    }

    #[test]
    fn empty_training_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("train/normal")).unwrap();
        let err = load_dataset(dir.path(), Split::Train).unwrap_err();
        assert!(err.to_string().contains("no training images"));
    }

    #[test]
    fn missing_split_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path(), Split::Test), Err(Error::Dataset(_))));
    }

    #[test]
    fn rescales_8_and_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let normal = dir.path().join("train/normal");
        fs::create_dir_all(&normal).unwrap();
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(16, 16, vec![255; 256]).unwrap();
        buf.save(normal.join("a.png")).unwrap();
        write_u16(&normal.join("b.png"), 32768);
        let samples = load_dataset(dir.path(), Split::Train).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[0].id, "a");
        assert_eq!(samples[0].image.get(0, 0), 1.0);
        let expected = 32768.0f64 / 65535.0;
        assert!((samples[1].image.get(3, 4) as f64 - expected).abs() < 1e-7);
        assert!((expected - 0.50001).abs() < 1e-5);
    }

    #[test]
    fn corrupt_file_reports_its_name() {
        let dir = tempfile::tempdir().unwrap();
        let normal = dir.path().join("train/normal");
        fs::create_dir_all(&normal).unwrap();
        fs::write(normal.join("broken.png"), b"not a png").unwrap();
        let err = load_dataset(dir.path(), Split::Train).unwrap_err();
        assert!(err.to_string().contains("broken.png"), "{err}");
    }

    #[test]
    fn masks_are_attached_and_binarized() {
        let dir = tempfile::tempdir().unwrap();
        let ab = dir.path().join("test/abnormal");
        fs::create_dir_all(&ab).unwrap();
        write_u16(&ab.join("x.png"), 1000);
        let mut m = vec![0u8; 256];
        m[17] = 200;
        m[18] = 100;
        let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(16, 16, m).unwrap();
        buf.save(ab.join("x_mask.png")).unwrap();
        let samples = load_dataset(dir.path(), Split::Test).unwrap();
        assert_eq!(samples.len(), 1);
        let mask = samples[0].lesion_mask.as_ref().unwrap();
        assert_eq!(mask.iter().filter(|&&b| b).count(), 1);
        assert!(mask[17]);
    }
}
