//! Grayscale images, labelled samples, on-disk datasets and synthetic phantoms.

mod dataset;
mod image;
mod phantom;

pub use dataset::{load_dataset, save_dataset, write_gray16, write_gray8, Split};
pub use image::{GrayscaleImage, Label, LabeledSample, MIN_SIDE};
pub use phantom::{generate_phantoms, PhantomSpec, PhantomSet};
