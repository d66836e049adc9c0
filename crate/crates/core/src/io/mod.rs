//! File formats: weights container, descriptor store, manifests, images and
//! heatmaps.

mod bytes;
pub mod heatmap;
pub mod image;
mod manifest;
mod store;
mod weights;

pub use manifest::{parse_manifest, read_manifest, write_manifest, ManifestRecord};
pub use store::{decode_store, encode_store, read_store, write_store, STORE_HEADER_BYTES, STORE_MAGIC, STORE_VERSION};
pub use weights::{
    decode_tensors, decode_weights, encode_weights, load_weights, named_tensors, save_weights, WEIGHTS_MAGIC,
    WEIGHTS_VERSION,
};
