//! Pre-norm Transformer encoder without positional embedding.

use crate::error::{Error, Result};
use crate::numeric::{layer_norm, mlp_block, msa, MlpWeights, MsaWeights, Rng, Scalar, Tensor};

/// Default tapped layers (1-indexed) for the low, mid and high levels.
pub const DEFAULT_TAPS: [usize; 3] = [2, 4, 6];

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<T = f32> {
    pub ln1_gamma: Vec<T>,
    pub ln1_beta: Vec<T>,
    pub attn: MsaWeights<T>,
    pub ln2_gamma: Vec<T>,
    pub ln2_beta: Vec<T>,
    pub mlp: MlpWeights<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights<T = f32> {
    pub layers: Vec<EncoderLayer<T>>,
    /// Learnable class token; only used in classification pre-training.
    pub class_token: Option<Vec<T>>,
    pub heads: usize,
    pub ln_eps: T,
}

/// Tokens tapped from the low, mid and high encoder levels.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiLevelTokens<T = f32> {
    pub low: Tensor<T>,
    pub mid: Tensor<T>,
    pub high: Tensor<T>,
    pub rows: usize,
    pub cols: usize,
    pub centers: Vec<[i32; 2]>,
}

impl<T: Scalar> MultiLevelTokens<T> {
    pub fn levels(&self) -> [&Tensor<T>; 3] {
        [&self.low, &self.mid, &self.high]
    }

    pub fn len(&self) -> usize {
        self.low.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.low.shape()[1]
    }

    pub fn cast<U: Scalar>(&self) -> MultiLevelTokens<U> {
        MultiLevelTokens {
            low: self.low.cast(),
            mid: self.mid.cast(),
            high: self.high.cast(),
            rows: self.rows,
            cols: self.cols,
            centers: self.centers.clone(),
        }
    }

    /// Checks equal `N×D` across levels and one center per token.
    pub fn validate(&self) -> Result<()> {
        let shape = self.low.shape();
        if shape.len() != 2 || self.mid.shape() != shape || self.high.shape() != shape {
            return Err(Error::shape(format!(
                "level shapes differ: {:?} / {:?} / {:?}",
                self.low.shape(),
                self.mid.shape(),
                self.high.shape()
            )));
        }
        if self.centers.len() != shape[0] {
            return Err(Error::shape("one patch center per token required"));
        }
        Ok(())
    }
}

impl<T: Scalar> EncoderLayer<T> {
    fn zeros(d: usize, hidden: usize) -> Self {
        EncoderLayer {
            ln1_gamma: vec![T::one(); d],
            ln1_beta: vec![T::zero(); d],
            attn: MsaWeights::zeros(d),
            ln2_gamma: vec![T::one(); d],
            ln2_beta: vec![T::zero(); d],
            mlp: MlpWeights::zeros(d, hidden),
        }
    }

    /// `x ← x + MSA(LN(x)); x ← x + MLP(LN(x))`.
    pub fn forward(&self, x: &Tensor<T>, heads: usize, eps: T) -> Result<Tensor<T>> {
        let h = layer_norm(x, &self.ln1_gamma, &self.ln1_beta, eps)?;
        let a = msa(&h, &self.attn, heads)?;
        let x: Vec<T> = x.data().iter().zip(a.data()).map(|(&u, &v)| u + v).collect();
        let x = Tensor::new(a.shape(), x)?;
        let h = layer_norm(&x, &self.ln2_gamma, &self.ln2_beta, eps)?;
        let m = mlp_block(&h, &self.mlp)?;
        let out = x.data().iter().zip(m.data()).map(|(&u, &v)| u + v).collect();
        Tensor::new(x.shape(), out)
    }
}

impl<T: Scalar> EncoderWeights<T> {
    /// All projections zero, norms identity-affine: every layer is the identity.
    pub fn zeros(layers: usize, d: usize, heads: usize, mlp_ratio: usize) -> Self {
        EncoderWeights {
            layers: (0..layers).map(|_| EncoderLayer::zeros(d, d * mlp_ratio)).collect(),
            class_token: None,
            heads,
            ln_eps: T::lit(1e-6),
        }
    }

    /// Scaled-Gaussian projections (`std = 1/sqrt(fan_in)`), zero biases,
    /// identity-affine norms.
    pub fn random(layers: usize, d: usize, heads: usize, mlp_ratio: usize, rng: &mut Rng) -> Self {
        let hidden = d * mlp_ratio;
        let mut gauss = |rows: usize, cols: usize| {
            let std = 1.0 / (rows as f64).sqrt();
            Tensor::from_fn(&[rows, cols], |_| T::lit(std * rng.normal()))
        };
        let layers = (0..layers)
            .map(|_| {
                let mut l = EncoderLayer::zeros(d, hidden);
                l.attn.wq = gauss(d, d);
                l.attn.wk = gauss(d, d);
                l.attn.wv = gauss(d, d);
                l.attn.wo = gauss(d, d);
                l.mlp.w1 = gauss(d, hidden);
                l.mlp.w2 = gauss(hidden, d);
                l
            })
            .collect();
        EncoderWeights {
            layers,
            class_token: None,
            heads,
            ln_eps: T::lit(1e-6),
        }
    }

    pub fn dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.ln1_gamma.len())
    }

    pub fn validate(&self, layers: usize, d: usize) -> Result<()> {
        if self.layers.len() != layers {
            return Err(Error::config(format!(
                "encoder has {} layers, config expects {layers}",
                self.layers.len()
            )));
        }
        if self.heads == 0 || d % self.heads != 0 {
            return Err(Error::config(format!("{d} is not divisible into {} heads", self.heads)));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let vecs = [&l.ln1_gamma, &l.ln1_beta, &l.ln2_gamma, &l.ln2_beta, &l.attn.bq, &l.attn.bk, &l.attn.bv, &l.attn.bo, &l.mlp.b2];
            if vecs.iter().any(|v| v.len() != d) {
                return Err(Error::shape(format!("encoder layer {i}: vector parameter length != {d}")));
            }
            for m in [&l.attn.wq, &l.attn.wk, &l.attn.wv, &l.attn.wo] {
                if m.shape() != [d, d] {
                    return Err(Error::shape(format!("encoder layer {i}: projection must be {d}x{d}")));
                }
            }
            let (w1_in, hidden) = l.mlp.w1.dims2()?;
            if w1_in != d || l.mlp.w2.shape() != [hidden, d] || l.mlp.b1.len() != hidden {
                return Err(Error::shape(format!("encoder layer {i}: mlp shapes inconsistent")));
            }
        }
        if let Some(c) = &self.class_token {
            if c.len() != d {
                return Err(Error::shape("class token length != D"));
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> EncoderWeights<U> {
        let v = |x: &[T]| x.iter().map(|&a| U::lit(a.as_f64())).collect::<Vec<U>>();
        EncoderWeights {
            layers: self
                .layers
                .iter()
                .map(|l| EncoderLayer {
                    ln1_gamma: v(&l.ln1_gamma),
                    ln1_beta: v(&l.ln1_beta),
                    attn: l.attn.cast(),
                    ln2_gamma: v(&l.ln2_gamma),
                    ln2_beta: v(&l.ln2_beta),
                    mlp: l.mlp.cast(),
                })
                .collect(),
            class_token: self.class_token.as_deref().map(v),
            heads: self.heads,
            ln_eps: U::lit(self.ln_eps.as_f64()),
        }
    }

    fn check_tokens(&self, tokens: &Tensor<T>) -> Result<()> {
        let (_, d) = tokens.dims2()?;
        if d != self.dim() {
            return Err(Error::shape(format!(
                "token dimension {d} does not match encoder dimension {}",
                self.dim()
            )));
        }
        Ok(())
    }

    /// Runs every layer on the patch tokens; returns each layer's output.
    pub fn encode(&self, tokens: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.check_tokens(tokens)?;
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut x = tokens.clone();
        for layer in &self.layers {
            x = layer.forward(&x, self.heads, self.ln_eps)?;
            outputs.push(x.clone());
        }
        Ok(outputs)
    }

    /// Pre-training mode: prepends the class token, returns per-layer patch
    /// outputs and per-layer class-token outputs.
    pub fn encode_with_class_token(&self, tokens: &Tensor<T>) -> Result<(Vec<Tensor<T>>, Vec<Vec<T>>)> {
        self.check_tokens(tokens)?;
        let cls = self
            .class_token
            .as_ref()
            .ok_or_else(|| Error::config("encoder has no class token"))?;
        let (n, d) = tokens.dims2()?;
        let mut data = cls.clone();
        data.extend_from_slice(tokens.data());
        let mut x = Tensor::new(&[n + 1, d], data)?;
        let mut patches = Vec::with_capacity(self.layers.len());
        let mut classes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            x = layer.forward(&x, self.heads, self.ln_eps)?;
            classes.push(x.row(0).to_vec());
            patches.push(Tensor::new(&[n, d], x.data()[d..].to_vec())?);
        }
        Ok((patches, classes))
    }
}

/// Picks the tapped layer outputs (1-indexed) as low, mid and high levels.
pub fn tap_levels<T: Scalar>(
    layer_outputs: &[Tensor<T>],
    taps: [usize; 3],
    rows: usize,
    cols: usize,
    centers: Vec<[i32; 2]>,
) -> Result<MultiLevelTokens<T>> {
    let get = |t: usize| {
        layer_outputs
            .get(t.wrapping_sub(1))
            .cloned()
            .ok_or_else(|| Error::config(format!("tap layer {t} outside 1..={}", layer_outputs.len())))
    };
    let tokens = MultiLevelTokens {
        low: get(taps[0])?,
        mid: get(taps[1])?,
        high: get(taps[2])?,
        rows,
        cols,
        centers,
    };
    tokens.validate()?;
    Ok(tokens)
}
