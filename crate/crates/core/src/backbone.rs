//! Four-level CNN feature pyramid and per-level patch embedding into raw
//! patch tokens.

use crate::error::{Error, Result};
use crate::numeric::{batchnorm_infer, conv2d, linear, maxpool2, relu, Rng, Scalar, Tensor};

/// Output channels of the four conv blocks.
pub const PYRAMID_CHANNELS: [usize; 4] = [64, 128, 256, 512];
/// Patch side on the input image, in pixels.
pub const PATCH_SIZE: usize = 16;
/// Patch resolution on each pyramid level; halves level by level so every
/// level yields the same patch grid.
pub const PATCH_RESOLUTION: [usize; 4] = [8, 4, 2, 1];

/// Inference-mode batch-norm statistics for one block.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T = f32> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn identity(c: usize) -> Self {
        BatchNorm {
            mean: vec![T::zero(); c],
            var: vec![T::one(); c],
            gamma: vec![T::one(); c],
            beta: vec![T::zero(); c],
        }
    }
}

/// `MaxPool(ReLU(BN(Conv(x))))`. The conv has no bias; BN follows directly.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock<T = f32> {
    pub kernel: Tensor<T>,
    pub bn: BatchNorm<T>,
}

/// Linear projection of flattened `R×R×C` patches to `D/4` features.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchEmbed<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneWeights<T = f32> {
    pub blocks: Vec<ConvBlock<T>>,
    pub embeds: Vec<PatchEmbed<T>>,
    /// Per-channel standardization applied to `[0, 1]` pixels.
    pub input_mean: [T; 3],
    pub input_std: [T; 3],
    pub bn_eps: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePyramid<T = f32> {
    pub levels: [Tensor<T>; 4],
}

/// `N×D` raw patch tokens with their patch grid and pixel centers.
#[derive(Clone, Debug, PartialEq)]
pub struct RawTokenSet<T = f32> {
    pub tokens: Tensor<T>,
    pub rows: usize,
    pub cols: usize,
    pub centers: Vec<[i32; 2]>,
}

/// Pixel centers `(x, y)` of a row-major patch grid.
pub fn patch_centers(rows: usize, cols: usize) -> Vec<[i32; 2]> {
    let half = (PATCH_SIZE / 2) as i32;
    (0..rows * cols)
        .map(|k| {
            let (r, c) = ((k / cols) as i32, (k % cols) as i32);
            [PATCH_SIZE as i32 * c + half, PATCH_SIZE as i32 * r + half]
        })
        .collect()
}

impl<T: Scalar> BackboneWeights<T> {
    /// Random initialization: He-normal conv kernels, identity batch norm,
    /// `1/sqrt(fan_in)` Gaussian patch projections.
    pub fn random(embed_dim: usize, rng: &mut Rng) -> Self {
        let mut cin = 3;
        let mut blocks = Vec::with_capacity(4);
        let mut embeds = Vec::with_capacity(4);
        for (&cout, &r) in PYRAMID_CHANNELS.iter().zip(&PATCH_RESOLUTION) {
            let std = (2.0 / (9 * cin) as f64).sqrt();
            blocks.push(ConvBlock {
                kernel: Tensor::from_fn(&[3, 3, cin, cout], |_| T::lit(std * rng.normal())),
                bn: BatchNorm::identity(cout),
            });
            let fan_in = r * r * cout;
            let std = 1.0 / (fan_in as f64).sqrt();
            embeds.push(PatchEmbed {
                weight: Tensor::from_fn(&[fan_in, embed_dim / 4], |_| T::lit(std * rng.normal())),
                bias: vec![T::zero(); embed_dim / 4],
            });
            cin = cout;
        }
        BackboneWeights {
            blocks,
            embeds,
            input_mean: [T::lit(0.485), T::lit(0.456), T::lit(0.406)],
            input_std: [T::lit(0.229), T::lit(0.224), T::lit(0.225)],
            bn_eps: T::lit(1e-5),
        }
    }

    pub fn validate(&self, embed_dim: usize) -> Result<()> {
        if self.blocks.len() != 4 || self.embeds.len() != 4 {
            return Err(Error::config("backbone needs exactly four conv blocks and embeddings"));
        }
        let mut cin = 3;
        for (i, ((block, embed), &cout)) in self
            .blocks
            .iter()
            .zip(&self.embeds)
            .zip(&PYRAMID_CHANNELS)
            .enumerate()
        {
            if block.kernel.shape() != [3, 3, cin, cout] {
                return Err(Error::shape(format!(
                    "conv block {i} kernel must be 3x3x{cin}x{cout}, got {:?}",
                    block.kernel.shape()
                )));
            }
            let bn = &block.bn;
            if [&bn.mean, &bn.var, &bn.gamma, &bn.beta]
                .iter()
                .any(|v| v.len() != cout)
            {
                return Err(Error::shape(format!("batch norm {i} must have {cout} channels")));
            }
            let r = PATCH_RESOLUTION[i];
            if embed.weight.shape() != [r * r * cout, embed_dim / 4] || embed.bias.len() != embed_dim / 4 {
                return Err(Error::shape(format!(
                    "patch embedding {i} must be {}x{}, got {:?}",
                    r * r * cout,
                    embed_dim / 4,
                    embed.weight.shape()
                )));
            }
            cin = cout;
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> BackboneWeights<U> {
        let v = |x: &[T]| x.iter().map(|&a| U::lit(a.as_f64())).collect::<Vec<U>>();
        let a3 = |x: &[T; 3]| [U::lit(x[0].as_f64()), U::lit(x[1].as_f64()), U::lit(x[2].as_f64())];
        BackboneWeights {
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvBlock {
                    kernel: b.kernel.cast(),
                    bn: BatchNorm {
                        mean: v(&b.bn.mean),
                        var: v(&b.bn.var),
                        gamma: v(&b.bn.gamma),
                        beta: v(&b.bn.beta),
                    },
                })
                .collect(),
            embeds: self
                .embeds
                .iter()
                .map(|e| PatchEmbed {
                    weight: e.weight.cast(),
                    bias: v(&e.bias),
                })
                .collect(),
            input_mean: a3(&self.input_mean),
            input_std: a3(&self.input_std),
            bn_eps: U::lit(self.bn_eps.as_f64()),
        }
    }
}

fn check_input<T: Scalar>(image: &Tensor<T>) -> Result<(usize, usize)> {
    let (h, w, c) = image.dims3()?;
    if c != 3 {
        return Err(Error::shape(format!("expected an RGB image, got {c} channels")));
    }
    if h % PATCH_SIZE != 0 || w % PATCH_SIZE != 0 {
        return Err(Error::InputSize {
            width: w,
            height: h,
            multiple: PATCH_SIZE,
        });
    }
    Ok((h, w))
}

/// Standardizes `[0, 1]` pixels with the per-channel constants.
pub fn standardize<T: Scalar>(image: &Tensor<T>, mean: &[T; 3], std: &[T; 3]) -> Result<Tensor<T>> {
    image.dims3()?;
    let data = image
        .data()
        .chunks_exact(3)
        .flat_map(|px| (0..3).map(move |c| (px[c] - mean[c]) / std[c]))
        .collect();
    Tensor::new(image.shape(), data)
}

/// One pyramid step: `MaxPool(ReLU(BN(Conv(x))))`.
pub fn conv_block<T: Scalar>(x: &Tensor<T>, block: &ConvBlock<T>, eps: T) -> Result<Tensor<T>> {
    let y = conv2d(x, &block.kernel, None)?;
    let bn = &block.bn;
    let y = batchnorm_infer(&y, &bn.mean, &bn.var, &bn.gamma, &bn.beta, eps)?;
    maxpool2(&relu(&y))
}

/// Builds the four-level pyramid from an `H×W×3` image with pixels in `[0, 1]`.
pub fn build_pyramid<T: Scalar>(image: &Tensor<T>, weights: &BackboneWeights<T>) -> Result<FeaturePyramid<T>> {
    check_input(image)?;
    let x = standardize(image, &weights.input_mean, &weights.input_std)?;
    let f1 = conv_block(&x, &weights.blocks[0], weights.bn_eps)?;
    let f2 = conv_block(&f1, &weights.blocks[1], weights.bn_eps)?;
    let f3 = conv_block(&f2, &weights.blocks[2], weights.bn_eps)?;
    let f4 = conv_block(&f3, &weights.blocks[3], weights.bn_eps)?;
    Ok(FeaturePyramid {
        levels: [f1, f2, f3, f4],
    })
}

/// Splits `feature` into non-overlapping `r×r` patches, flattens each in
/// (row, column, channel) order and projects it.
pub fn patch_embed_level<T: Scalar>(feature: &Tensor<T>, r: usize, proj: &PatchEmbed<T>) -> Result<Tensor<T>> {
    let (h, w, c) = feature.dims3()?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(Error::shape(format!(
            "patch resolution {r} does not divide feature map {h}x{w}"
        )));
    }
    let (rows, cols) = (h / r, w / r);
    let flat = r * r * c;
    let x = feature.data();
    let mut patches = Vec::with_capacity(rows * cols * flat);
    for pr in 0..rows {
        for pc in 0..cols {
            for dy in 0..r {
                let start = ((pr * r + dy) * w + pc * r) * c;
                patches.extend_from_slice(&x[start..start + r * c]);
            }
        }
    }
    linear(&Tensor::new(&[rows * cols, flat], patches)?, &proj.weight, Some(&proj.bias))
}

/// Concatenates the per-level embeddings of each patch in level order.
pub fn assemble_raw_tokens<T: Scalar>(embeddings: &[Tensor<T>], rows: usize, cols: usize) -> Result<RawTokenSet<T>> {
    let n = rows * cols;
    let mut widths = Vec::with_capacity(embeddings.len());
    for (i, e) in embeddings.iter().enumerate() {
        let (en, ed) = e.dims2()?;
        if en != n {
            return Err(Error::shape(format!(
                "level {i} embedding has {en} patches, grid has {n}"
            )));
        }
        widths.push(ed);
    }
    let d: usize = widths.iter().sum();
    let mut data = Vec::with_capacity(n * d);
    for k in 0..n {
        for e in embeddings {
            data.extend_from_slice(e.row(k));
        }
    }
    Ok(RawTokenSet {
        tokens: Tensor::new(&[n, d], data)?,
        rows,
        cols,
        centers: patch_centers(rows, cols),
    })
}

/// Image to raw patch tokens `P₀`.
pub fn raw_tokens<T: Scalar>(image: &Tensor<T>, weights: &BackboneWeights<T>) -> Result<RawTokenSet<T>> {
    let (h, w) = check_input(image)?;
    let pyramid = build_pyramid(image, weights)?;
    let embeds = pyramid
        .levels
        .iter()
        .zip(&weights.embeds)
        .zip(&PATCH_RESOLUTION)
        .map(|((f, e), &r)| patch_embed_level(f, r, e))
        .collect::<Result<Vec<_>>>()?;
    assemble_raw_tokens(&embeds, h / PATCH_SIZE, w / PATCH_SIZE)
}
