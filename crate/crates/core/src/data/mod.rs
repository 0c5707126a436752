//! Synthetic surfaces, patch extraction, augmentation and file formats.

mod augment;
mod io;
mod manifest;
mod patch;
mod surface;

pub use augment::{add_noise, augment, AugmentConfig, Similarity};
pub use io::{format_cloud, read_cloud, write_cloud, CloudFormat};
pub use manifest::{generate_patches, patch_file_name, DatasetManifest, ManifestEntry, Split};
pub use patch::{extract_patch, normalize, subsample_input, Normalization, Patch};
pub use surface::{sample_surface, SurfaceModel};
