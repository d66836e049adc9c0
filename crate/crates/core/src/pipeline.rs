//! Batch extraction over a manifest.

use rayon::prelude::*;

use crate::aggregate::ImageDescriptor;
use crate::encoder::MultiLevelTokens;
use crate::error::Result;
use crate::io::image::{load_image, ResizeMode};
use crate::io::ManifestRecord;
use crate::model::{KeySelection, ModelWeights};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExtractOptions {
    pub width: usize,
    pub height: usize,
    pub resize: ResizeMode,
    pub keys: KeySelection,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        ExtractOptions {
            width: 640,
            height: 480,
            resize: ResizeMode::Stretch,
            keys: KeySelection::Threshold(crate::aggregate::DEFAULT_TAU),
        }
    }
}

/// Tokens for every record, in manifest order.
pub fn extract_tokens(
    model: &ModelWeights<f32>,
    records: &[ManifestRecord],
    opts: &ExtractOptions,
) -> Vec<Result<MultiLevelTokens<f32>>> {
    records
        .par_iter()
        .map(|r| model.tokens(&load_image(&r.image, opts.width, opts.height, opts.resize)?))
        .collect()
}

/// Descriptors for every record, in manifest order; failures stay per image.
pub fn extract_descriptors(
    model: &ModelWeights<f32>,
    records: &[ManifestRecord],
    opts: &ExtractOptions,
) -> Vec<Result<ImageDescriptor>> {
    records
        .par_iter()
        .map(|r| {
            let image = load_image(&r.image, opts.width, opts.height, opts.resize)?;
            model.describe(&r.id, &image, opts.keys).map(|(d, _)| d)
        })
        .collect()
}
