//! Rasters, positional channels, velocity quantization, rotation and the
//! on-disk dataset container.

mod coords;
mod dataset;
mod grid;
mod rotate;
mod scene;
mod sdf;
mod velocity;

pub use coords::{coord_channels, coord_channels_unnormalized};
pub use dataset::{
    decode_wgf, encode_wgf, read_dataset, read_manifest, read_wgf, sample_file_name, split_indices,
    write_dataset, write_wgf, DatasetManifest, Family, SampleEntry, SamplePair, WgfRecord, WGF_MAGIC,
};
pub use grid::{ChannelTag, FieldGrid, GridMeta};
pub use rotate::{inside_rotation_disk, rotate_field, Interp};
pub use scene::{rasterize, Building, Scene};
pub use sdf::{normalized_sdf, signed_distance, signed_distance_brute_force, signed_distance_exact};
pub use velocity::{bucketize, denormalize, normalize};

/// Default raster side length in pixels.
pub const DEFAULT_SIZE: usize = 256;
/// Default number of velocity bins.
pub const DEFAULT_BINS: usize = 20;
