//! Multi-level attention aggregation: per-level attention maps, the fused
//! mask, key-patch selection and the reduced global descriptor.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::MultiLevelTokens;
use crate::error::{Error, Result};
use crate::numeric::ops::{norm2, softmax_in_place};
use crate::numeric::{l2_normalize, Rng, Scalar, Tensor};

/// Default key-patch threshold on the fused mask.
pub const DEFAULT_TAU: f64 = 0.02;
/// Denominator guard in [`minmax_norm`].
pub const MINMAX_EPS: f64 = 1e-12;

/// Attention aggregation configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AggregationVariant {
    /// Three maps, each computed from the concatenated multi-level tokens.
    #[serde(rename = "standard")]
    Standard,
    /// Three maps, each computed from its own level only.
    #[serde(rename = "plain")]
    Plain,
    /// One map from the concatenated tokens, pooling the concatenated tokens.
    #[serde(rename = "mL-sATT")]
    MultiLevelSingle,
    /// One map from the last tapped level, pooling that level only.
    #[serde(rename = "sL-sATT")]
    SingleLevelSingle,
}

impl AggregationVariant {
    pub const ALL: [AggregationVariant; 4] = [
        AggregationVariant::Standard,
        AggregationVariant::Plain,
        AggregationVariant::MultiLevelSingle,
        AggregationVariant::SingleLevelSingle,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            AggregationVariant::Standard => "standard",
            AggregationVariant::Plain => "plain",
            AggregationVariant::MultiLevelSingle => "mL-sATT",
            AggregationVariant::SingleLevelSingle => "sL-sATT",
        }
    }

    /// Number of attention maps.
    pub fn maps(self) -> usize {
        match self {
            AggregationVariant::Standard | AggregationVariant::Plain => 3,
            _ => 1,
        }
    }

    /// Length of each attention projection for token dimension `d`.
    pub fn attention_in(self, d: usize) -> usize {
        match self {
            AggregationVariant::Standard | AggregationVariant::MultiLevelSingle => 3 * d,
            AggregationVariant::Plain | AggregationVariant::SingleLevelSingle => d,
        }
    }

    /// Rows of the reduction matrix for token dimension `d`.
    pub fn reduction_in(self, d: usize) -> usize {
        match self {
            AggregationVariant::SingleLevelSingle => d,
            _ => 3 * d,
        }
    }
}

impl fmt::Display for AggregationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for AggregationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" | "mL-mATT-standard" => Ok(AggregationVariant::Standard),
            "plain" | "mL-mATT-plain" => Ok(AggregationVariant::Plain),
            "mL-sATT" => Ok(AggregationVariant::MultiLevelSingle),
            "sL-sATT" => Ok(AggregationVariant::SingleLevelSingle),
            other => Err(Error::config(format!("unknown aggregation variant `{other}`"))),
        }
    }
}

/// Trainable head: attention projections and the reduction matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams<T = f32> {
    pub variant: AggregationVariant,
    /// One projection per map, in low/mid/high order for three-map variants.
    pub attention: Vec<Vec<T>>,
    /// `reduction_in × D`.
    pub reduction: Tensor<T>,
}

impl<T: Scalar> HeadParams<T> {
    /// Small Gaussian attention projections (near-uniform initial maps) and a
    /// `1/sqrt(fan_in)` Gaussian reduction.
    pub fn random(variant: AggregationVariant, d: usize, rng: &mut Rng) -> Self {
        let a_in = variant.attention_in(d);
        let r_in = variant.reduction_in(d);
        let attention = (0..variant.maps())
            .map(|_| (0..a_in).map(|_| T::lit(0.01 * rng.normal())).collect())
            .collect();
        let std = 1.0 / (r_in as f64).sqrt();
        HeadParams {
            variant,
            attention,
            reduction: Tensor::from_fn(&[r_in, d], |_| T::lit(std * rng.normal())),
        }
    }

    pub fn zeros_like(&self) -> Self {
        HeadParams {
            variant: self.variant,
            attention: self.attention.iter().map(|a| vec![T::zero(); a.len()]).collect(),
            reduction: Tensor::zeros(self.reduction.shape()),
        }
    }

    pub fn dim(&self) -> usize {
        self.reduction.shape()[1]
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        let v = self.variant;
        if self.attention.len() != v.maps() {
            return Err(Error::config(format!(
                "variant {v} needs {} attention projections, got {}",
                v.maps(),
                self.attention.len()
            )));
        }
        if let Some(a) = self.attention.iter().find(|a| a.len() != v.attention_in(d)) {
            return Err(Error::config(format!(
                "variant {v} attention projection must have length {}, got {}",
                v.attention_in(d),
                a.len()
            )));
        }
        if self.reduction.shape() != [v.reduction_in(d), d] {
            return Err(Error::config(format!(
                "variant {v} reduction must be {}x{d}, got {:?}",
                v.reduction_in(d),
                self.reduction.shape()
            )));
        }
        let finite = self.reduction.all_finite() && self.attention.iter().flatten().all(|x| x.is_finite());
        if !finite {
            return Err(Error::validation("head parameters contain non-finite values"));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> HeadParams<U> {
        HeadParams {
            variant: self.variant,
            attention: self
                .attention
                .iter()
                .map(|a| a.iter().map(|&x| U::lit(x.as_f64())).collect())
                .collect(),
            reduction: self.reduction.cast(),
        }
    }

    /// All parameters flattened in a fixed order (maps, then reduction).
    pub fn flatten(&self) -> Vec<T> {
        let mut out: Vec<T> = self.attention.iter().flatten().copied().collect();
        out.extend_from_slice(self.reduction.data());
        out
    }

    pub fn num_params(&self) -> usize {
        self.attention.iter().map(Vec::len).sum::<usize>() + self.reduction.len()
    }

    /// Inverse of [`HeadParams::flatten`].
    pub fn unflatten(&self, flat: &[T]) -> Self {
        assert_eq!(flat.len(), self.num_params());
        let mut at = 0;
        let attention = self
            .attention
            .iter()
            .map(|a| {
                let v = flat[at..at + a.len()].to_vec();
                at += a.len();
                v
            })
            .collect();
        HeadParams {
            variant: self.variant,
            attention,
            reduction: Tensor::new(self.reduction.shape(), flat[at..].to_vec()).expect("same shape"),
        }
    }
}

/// Per-level maps and the fused mask, all of length `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBundle<T = f32> {
    /// `[a_L, a_M, a_H]` for three-map variants, a single map otherwise.
    pub maps: Vec<Vec<T>>,
    pub fused: Vec<T>,
}

/// Key-patch coordinates and descriptors (`M×dim`, row-major).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyPatches {
    pub coords: Vec<[i32; 2]>,
    pub descs: Vec<f32>,
    pub dim: usize,
}

impl KeyPatches {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn desc(&self, i: usize) -> &[f32] {
        &self.descs[i * self.dim..(i + 1) * self.dim]
    }
}

/// Global descriptor plus key patches for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDescriptor {
    pub id: String,
    pub rows: u32,
    pub cols: u32,
    pub global: Vec<f32>,
    pub keys: KeyPatches,
}

/// Row-wise concatenation of the three levels: `N×3D`.
pub fn concat_tokens<T: Scalar>(low: &Tensor<T>, mid: &Tensor<T>, high: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = low.dims2()?;
    if mid.shape() != [n, d] || high.shape() != [n, d] {
        return Err(Error::shape(format!(
            "cannot concatenate {:?}, {:?}, {:?}",
            low.shape(),
            mid.shape(),
            high.shape()
        )));
    }
    let mut data = Vec::with_capacity(3 * n * d);
    for k in 0..n {
        data.extend_from_slice(low.row(k));
        data.extend_from_slice(mid.row(k));
        data.extend_from_slice(high.row(k));
    }
    Tensor::new(&[n, 3 * d], data)
}

/// Softmax over the `N` positions of `tokens · w`.
pub fn attention_map<T: Scalar>(tokens: &Tensor<T>, w: &[T]) -> Result<Vec<T>> {
    let (_, d) = tokens.dims2()?;
    if w.len() != d {
        return Err(Error::shape(format!(
            "attention projection length {} != token width {d}",
            w.len()
        )));
    }
    let mut logits: Vec<T> = tokens
        .data()
        .chunks_exact(d)
        .map(|row| row.iter().zip(w).fold(T::zero(), |acc, (&x, &y)| acc + x * y))
        .collect();
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("attention logits contain NaN or infinity"));
    }
    softmax_in_place(&mut logits);
    Ok(logits)
}

/// `(x − min) / (max − min + ε)`; a constant map becomes all zeros.
pub fn minmax_norm<T: Scalar>(x: &[T]) -> Vec<T> {
    let min = x.iter().copied().fold(T::infinity(), T::min);
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let denom = max - min + T::lit(MINMAX_EPS);
    x.iter().map(|&v| (v - min) / denom).collect()
}

/// Normalizes each map, sums, normalizes the sum.
pub fn fuse_attention<T: Scalar>(maps: &[&[T]]) -> Result<Vec<T>> {
    let n = maps.first().map_or(0, |m| m.len());
    if maps.iter().any(|m| m.len() != n) {
        return Err(Error::shape("attention maps differ in length"));
    }
    let mut sum = vec![T::zero(); n];
    for m in maps {
        for (s, v) in sum.iter_mut().zip(minmax_norm(m)) {
            *s = *s + v;
        }
    }
    Ok(minmax_norm(&sum))
}

/// Attention-weighted sum of token rows, `aᵀP`.
pub fn level_global<T: Scalar>(a: &[T], tokens: &Tensor<T>) -> Result<Vec<T>> {
    let (n, d) = tokens.dims2()?;
    if a.len() != n {
        return Err(Error::shape(format!("attention length {} != token count {n}", a.len())));
    }
    let mut g = vec![T::zero(); d];
    for (k, &w) in a.iter().enumerate() {
        for (acc, &x) in g.iter_mut().zip(tokens.row(k)) {
            *acc = *acc + w * x;
        }
    }
    Ok(g)
}

/// `L2Norm(L2Norm(concat(parts)) · W_g)`.
pub fn reduce_global<T: Scalar>(parts: &[&[T]], reduction: &Tensor<T>) -> Result<Vec<T>> {
    let concat: Vec<T> = parts.iter().flat_map(|p| p.iter().copied()).collect();
    let (rin, d) = reduction.dims2()?;
    if concat.len() != rin {
        return Err(Error::shape(format!(
            "concatenated global has {} entries, reduction expects {rin}",
            concat.len()
        )));
    }
    let u = l2_normalize(&concat)?;
    let mut h = vec![T::zero(); d];
    for (i, &ui) in u.iter().enumerate() {
        for (acc, &w) in h.iter_mut().zip(reduction.row(i)) {
            *acc = *acc + ui * w;
        }
    }
    l2_normalize(&h)
}

/// Indices with `fused > tau` (strict), in grid order.
pub fn key_patch_indices<T: Scalar>(fused: &[T], tau: f64) -> Vec<usize> {
    let tau = T::lit(tau);
    fused
        .iter()
        .enumerate()
        .filter(|(_, &a)| a > tau)
        .map(|(k, _)| k)
        .collect()
}

/// Raw mid-level rows and centers of the patches whose fused score exceeds `tau`.
pub fn select_key_patches<T: Scalar>(
    fused: &[T],
    tau: f64,
    mid: &Tensor<T>,
    centers: &[[i32; 2]],
) -> Result<KeyPatches> {
    let (n, d) = mid.dims2()?;
    if fused.len() != n || centers.len() != n {
        return Err(Error::shape("fused mask, tokens and centers differ in length"));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::validation(format!("tau {tau} outside [0, 1]")));
    }
    let idx = key_patch_indices(fused, tau);
    let mut keys = KeyPatches {
        coords: Vec::with_capacity(idx.len()),
        descs: Vec::with_capacity(idx.len() * d),
        dim: d,
    };
    for k in idx {
        keys.coords.push(centers[k]);
        keys.descs.extend(mid.row(k).iter().map(|v| v.as_f64() as f32));
    }
    Ok(keys)
}

/// Logit source and pooled source of each attention branch.
pub(crate) struct Branches<'a, T> {
    pub concat: Option<Tensor<T>>,
    tokens: &'a MultiLevelTokens<T>,
    variant: AggregationVariant,
}

impl<'a, T: Scalar> Branches<'a, T> {
    pub fn new(variant: AggregationVariant, tokens: &'a MultiLevelTokens<T>) -> Result<Self> {
        tokens.validate()?;
        let concat = match variant {
            AggregationVariant::Standard | AggregationVariant::MultiLevelSingle => {
                Some(concat_tokens(&tokens.low, &tokens.mid, &tokens.high)?)
            }
            _ => None,
        };
        Ok(Branches {
            concat,
            tokens,
            variant,
        })
    }

    /// `(logit input, pooled tokens)` for branch `j`.
    pub fn get(&self, j: usize) -> (&Tensor<T>, &Tensor<T>) {
        let levels = self.tokens.levels();
        let cat = || self.concat.as_ref().expect("concat built");
        match self.variant {
            AggregationVariant::Standard => (cat(), levels[j]),
            AggregationVariant::Plain => (levels[j], levels[j]),
            AggregationVariant::MultiLevelSingle => (cat(), cat()),
            AggregationVariant::SingleLevelSingle => (levels[2], levels[2]),
        }
    }
}

/// Aggregation result in the working precision.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregation<T = f32> {
    pub global: Vec<T>,
    pub bundle: AttentionBundle<T>,
}

/// Global descriptor and attention bundle for one image.
pub fn aggregate_global<T: Scalar>(
    variant: AggregationVariant,
    tokens: &MultiLevelTokens<T>,
    params: &HeadParams<T>,
) -> Result<Aggregation<T>> {
    if params.variant != variant {
        return Err(Error::config(format!(
            "head parameters are for variant {}, requested {variant}",
            params.variant
        )));
    }
    params.validate(tokens.dim())?;
    let branches = Branches::new(variant, tokens)?;
    let mut maps = Vec::with_capacity(variant.maps());
    let mut globals = Vec::with_capacity(variant.maps());
    for (j, w) in params.attention.iter().enumerate() {
        let (x, y) = branches.get(j);
        let a = attention_map(x, w)?;
        globals.push(level_global(&a, y)?);
        maps.push(a);
    }
    let parts: Vec<&[T]> = globals.iter().map(Vec::as_slice).collect();
    let global = reduce_global(&parts, &params.reduction)?;
    let fused = if maps.len() == 1 {
        minmax_norm(&maps[0])
    } else {
        let refs: Vec<&[T]> = maps.iter().map(Vec::as_slice).collect();
        fuse_attention(&refs)?
    };
    Ok(Aggregation {
        global,
        bundle: AttentionBundle { maps, fused },
    })
}

/// Full aggregation: global descriptor, attention bundle and key patches
/// (mid-level rows where the fused mask exceeds `tau`).
pub fn aggregate<T: Scalar>(
    id: &str,
    variant: AggregationVariant,
    tokens: &MultiLevelTokens<T>,
    params: &HeadParams<T>,
    tau: f64,
) -> Result<(ImageDescriptor, AttentionBundle<T>)> {
    let agg = aggregate_global(variant, tokens, params)?;
    let keys = select_key_patches(&agg.bundle.fused, tau, &tokens.mid, &tokens.centers)?;
    let descriptor = ImageDescriptor {
        id: id.to_string(),
        rows: tokens.rows as u32,
        cols: tokens.cols as u32,
        global: agg.global.iter().map(|v| v.as_f64() as f32).collect(),
        keys,
    };
    debug_assert!((norm2(&descriptor.global) - 1.0).abs() < 1e-5);
    Ok((descriptor, agg.bundle))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn m(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn concat_layout_and_roundtrip() {
        let a = Tensor::<f64>::full(&[2, 3], 1.0);
        let b = Tensor::full(&[2, 3], 2.0);
        let c = Tensor::full(&[2, 3], 3.0);
        let p = concat_tokens(&a, &b, &c).unwrap();
        assert_eq!(p.shape(), &[2, 9]);
        assert_eq!(p.row(1), &[1., 1., 1., 2., 2., 2., 3., 3., 3.]);
        for (lvl, orig) in [&a, &b, &c].iter().enumerate() {
            for r in 0..2 {
                assert_eq!(&p.row(r)[lvl * 3..lvl * 3 + 3], orig.row(r));
            }
        }
        assert!(concat_tokens(&a, &Tensor::zeros(&[3, 3]), &c).is_err());
    }

    #[test]
    fn attention_map_cases() {
        let p = Tensor::<f64>::from_fn(&[4, 3], |i| i as f64);
        assert!(attention_map(&p, &[0.0; 3]).unwrap().iter().all(|&v| v == 0.25));
        let toy = m(&[&[2.0], &[0.0]]);
        let a = attention_map(&toy, &[1.0]).unwrap();
        let e2 = 2f64.exp();
        assert_relative_eq!(a[0], e2 / (e2 + 1.0), epsilon = 1e-12);
        assert_relative_eq!(a[0], 0.8808, epsilon = 1e-4);
        assert_relative_eq!(a[1], 0.1192, epsilon = 1e-4);
        assert_eq!(attention_map(&m(&[&[5.0]]), &[3.0]).unwrap(), vec![1.0]);
        assert!(attention_map(&m(&[&[f64::NAN]]), &[1.0]).is_err());
    }

    #[test]
    fn minmax_cases() {
        let y = minmax_norm(&[0.2f64, 0.5, 0.3]);
        assert_relative_eq!(y[0], 0.0);
        assert_relative_eq!(y[1], 1.0, epsilon = 1e-10);
        assert_relative_eq!(y[2], 1.0 / 3.0, epsilon = 1e-10);
        assert_eq!(minmax_norm(&[0.7f64; 4]), vec![0.0; 4]);
    }

    #[test]
    fn fuse_hand_example() {
        let a1 = [0.2f64, 0.5, 0.3];
        let a2 = [0.1, 0.1, 0.8];
        let a3 = [1.0 / 3.0; 3];
        let fused = fuse_attention(&[&a1, &a2, &a3]).unwrap();
        assert_relative_eq!(fused[0], 0.0);
        assert_relative_eq!(fused[1], 0.75, epsilon = 1e-10);
        assert_relative_eq!(fused[2], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn level_global_cases() {
        let p = m(&[&[1.0, 3.0], &[3.0, 5.0]]);
        assert_eq!(level_global(&[0.5, 0.5], &p).unwrap(), vec![2.0, 4.0]);
        assert_eq!(level_global(&[0.0, 1.0], &p).unwrap(), vec![3.0, 5.0]);
        assert!(level_global(&[1.0], &p).is_err());
    }

    #[test]
    fn reduce_identity_block() {
        let d = 4;
        let w = Tensor::<f64>::from_fn(&[3 * d, d], |i| {
            let (r, c) = (i / d, i % d);
            if r == c { 1.0 } else { 0.0 }
        });
        let gl = [3.0, 4.0, 0.0, 0.0];
        let z = [0.0; 4];
        let g = reduce_global(&[&gl, &z, &z], &w).unwrap();
        assert_relative_eq!(g[0], 0.6, epsilon = 1e-12);
        assert_relative_eq!(g[1], 0.8, epsilon = 1e-12);
        assert_eq!(&g[2..], &[0.0, 0.0]);
        assert!(matches!(
            reduce_global(&[&z, &z, &z], &w),
            Err(Error::Normalization(_))
        ));
    }

    #[test]
    fn key_patch_threshold() {
        let fused = [0.5f64, 0.01, 0.03];
        assert_eq!(key_patch_indices(&fused, 0.02), vec![0, 2]);
        assert_eq!(key_patch_indices(&fused, 0.0).len(), 3);
        assert!(key_patch_indices(&[1.0f64, 0.3], 1.0).is_empty());
        // strict comparison
        assert_eq!(key_patch_indices(&[0.02f64], 0.02), Vec::<usize>::new());
        let mid = m(&[&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]]);
        let keys = select_key_patches(&fused, 0.02, &mid, &[[8, 8], [24, 8], [40, 8]]).unwrap();
        assert_eq!(keys.coords, vec![[8, 8], [40, 8]]);
        assert_eq!(keys.descs, vec![1.0, 2.0, 5.0, 6.0]);
        assert!(select_key_patches(&fused, 1.5, &mid, &[[8, 8], [24, 8], [40, 8]]).is_err());
    }

    #[test]
    fn variant_parsing_and_shape_checks() {
        for v in AggregationVariant::ALL {
            assert_eq!(v.tag().parse::<AggregationVariant>().unwrap(), v);
        }
        assert!("bogus".parse::<AggregationVariant>().is_err());
        let mut rng = Rng::seed(1);
        let p = HeadParams::<f64>::random(AggregationVariant::Plain, 8, &mut rng);
        p.validate(8).unwrap();
        let mut wrong = p.clone();
        wrong.variant = AggregationVariant::Standard;
        assert!(matches!(wrong.validate(8), Err(Error::Config(_))));
        let flat = p.flatten();
        assert_eq!(p.unflatten(&flat), p);
    }
}
