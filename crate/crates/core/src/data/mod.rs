//! Domain types, pathology labels, preprocessing, fold construction and dataset I/O.

mod folds;
mod labels;
mod manifest;
mod preprocess;
mod types;

pub use folds::{cores_by_subject, make_folds, Split};
pub use labels::{grade_to_labels, normalize_marker, subject_diagnosis};
pub use manifest::{load_dataset, mask_to_png, quantize, resolve_manifest, save_dataset, MANIFEST_FILE};
pub use preprocess::{
    preprocess_float_image, preprocess_image, preprocess_image_to, resize_bilinear, resize_mask_nearest,
};
pub(crate) use preprocess::bilinear_matrix;
pub use types::{
    BiopsyCore, Category, CoreLabels, Dataset, FoldAssignment, Image, Marker, MarkerMoments, MarkerStats, Mask,
    Subject, IMAGE_SIZE,
};
