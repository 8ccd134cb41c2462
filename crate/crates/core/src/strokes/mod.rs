//! Raster digits to pen-stroke sequences.
//!
//! The conversion of one image is `select_threshold -> binarize -> thin ->
//! extract_strokes`; [`convert_dataset`] applies it across a dataset.

mod dataset;
mod idx;
mod image;
mod sequence;
mod thin;
mod threshold;
mod trace;

pub use dataset::{
    convert_dataset, convert_image, read_dataset, read_dataset_str, write_dataset,
    write_dataset_string, Conversion, SkippedImage,
};
pub use idx::{parse_idx_images, parse_idx_labels, read_idx_file};
pub use image::{binarize, count_components, BinaryImage, Connectivity, GrayImage};
pub use sequence::{PenStep, SeqView, StrokeSequence};
pub use thin::thin;
pub use threshold::{select_threshold, MAX_THRESHOLD};
pub use trace::{extract_strokes, render_sequence};

/// Side length of the digit canvas.
pub const CANVAS: usize = 28;
