use serde::{Deserialize, Serialize};

use super::index::DescriptorIndex;
use crate::aggregate::ImageDescriptor;

/// Bytes reserved for the zero-padded image id in a store record.
pub const ID_FIELD_BYTES: usize = 64;
/// Id field plus grid rows, grid cols and key-patch count (u32 each).
pub const RECORD_HEADER_BYTES: usize = ID_FIELD_BYTES + 3 * 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Footprint {
    pub id: String,
    pub key_patches: usize,
    pub header_bytes: usize,
    pub global_bytes: usize,
    pub coord_bytes: usize,
    pub patch_bytes: usize,
    pub total_bytes: usize,
}

impl Footprint {
    pub fn of(id: &str, dim: usize, key_patches: usize) -> Self {
        let global_bytes = 4 * dim;
        let coord_bytes = 2 * 4 * key_patches;
        let patch_bytes = 4 * dim * key_patches;
        Footprint {
            id: id.to_string(),
            key_patches,
            header_bytes: RECORD_HEADER_BYTES,
            global_bytes,
            coord_bytes,
            patch_bytes,
            total_bytes: RECORD_HEADER_BYTES + global_bytes + coord_bytes + patch_bytes,
        }
    }

    pub fn of_descriptor(d: &ImageDescriptor) -> Self {
        Self::of(&d.id, d.global.len(), d.keys.len())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub per_image: Vec<Footprint>,
    pub total_bytes: usize,
    pub patch_bytes: usize,
}

pub fn memory_report(index: &DescriptorIndex) -> MemoryReport {
    let per_image: Vec<Footprint> = index.entries().iter().map(Footprint::of_descriptor).collect();
    MemoryReport {
        total_bytes: per_image.iter().map(|f| f.total_bytes).sum(),
        patch_bytes: per_image.iter().map(|f| f.patch_bytes).sum(),
        per_image,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unfiltered_vga_payload() {
        let f = Footprint::of("x", 256, 1200);
        assert_eq!(f.patch_bytes, 1_228_800);
        assert_eq!(f.patch_bytes as f64 / (1024.0 * 1024.0), 1.171875);
    }

    #[test]
    fn empty_selection_is_header_plus_global() {
        let f = Footprint::of("x", 256, 0);
        assert_eq!(f.total_bytes, RECORD_HEADER_BYTES + 1024);
    }

    #[test]
    fn payload_linear_in_patch_count() {
        assert_eq!(Footprint::of("x", 256, 600).patch_bytes * 2, Footprint::of("x", 256, 1200).patch_bytes);
    }
}
