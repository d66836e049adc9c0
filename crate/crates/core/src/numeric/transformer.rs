//! Multi-head self-attention and the position-wise MLP.

use std::cmp::Ordering;

use super::gemm::{gemm, MatMut, MatRef};
use super::ops::{gelu, linear, softmax_in_place};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Query/key/value/output projections. Each is `D×D` with the heads packed
/// along the columns: head `h` owns columns `h·D/heads .. (h+1)·D/heads`.
#[derive(Clone, Debug, PartialEq)]
pub struct MsaWeights<T = f32> {
    pub wq: Tensor<T>,
    pub bq: Vec<T>,
    pub wk: Tensor<T>,
    pub bk: Vec<T>,
    pub wv: Tensor<T>,
    pub bv: Vec<T>,
    pub wo: Tensor<T>,
    pub bo: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpWeights<T = f32> {
    pub w1: Tensor<T>,
    pub b1: Vec<T>,
    pub w2: Tensor<T>,
    pub b2: Vec<T>,
}

impl<T: Scalar> MsaWeights<T> {
    pub fn zeros(d: usize) -> Self {
        MsaWeights {
            wq: Tensor::zeros(&[d, d]),
            bq: vec![T::zero(); d],
            wk: Tensor::zeros(&[d, d]),
            bk: vec![T::zero(); d],
            wv: Tensor::zeros(&[d, d]),
            bv: vec![T::zero(); d],
            wo: Tensor::zeros(&[d, d]),
            bo: vec![T::zero(); d],
        }
    }

    pub fn cast<U: Scalar>(&self) -> MsaWeights<U> {
        let v = |x: &[T]| x.iter().map(|&a| U::lit(a.as_f64())).collect();
        MsaWeights {
            wq: self.wq.cast(),
            bq: v(&self.bq),
            wk: self.wk.cast(),
            bk: v(&self.bk),
            wv: self.wv.cast(),
            bv: v(&self.bv),
            wo: self.wo.cast(),
            bo: v(&self.bo),
        }
    }
}

impl<T: Scalar> MlpWeights<T> {
    pub fn zeros(d: usize, hidden: usize) -> Self {
        MlpWeights {
            w1: Tensor::zeros(&[d, hidden]),
            b1: vec![T::zero(); hidden],
            w2: Tensor::zeros(&[hidden, d]),
            b2: vec![T::zero(); d],
        }
    }

    pub fn cast<U: Scalar>(&self) -> MlpWeights<U> {
        let v = |x: &[T]| x.iter().map(|&a| U::lit(a.as_f64())).collect();
        MlpWeights {
            w1: self.w1.cast(),
            b1: v(&self.b1),
            w2: self.w2.cast(),
            b2: v(&self.b2),
        }
    }
}

/// Lexicographic row order under `total_cmp`. Rows that compare equal are
/// bitwise identical, so the sorted matrix does not depend on input order.
fn canonical_row_order<T: Scalar>(x: &Tensor<T>) -> Vec<usize> {
    let (n, _) = x.dims2().expect("matrix");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        for (u, v) in x.row(a).iter().zip(x.row(b)) {
            match u.as_f64().total_cmp(&v.as_f64()) {
                Ordering::Equal => continue,
                other => return other,
            }
        }
        a.cmp(&b)
    });
    order
}

/// Multi-head scaled dot-product self-attention over `N×D` tokens.
///
/// Rows are processed in a canonical order and scattered back, so every
/// reduction over the token axis runs in the same sequence regardless of how
/// the input rows are permuted: the layer is exactly permutation-equivariant.
pub fn msa<T: Scalar>(tokens: &Tensor<T>, w: &MsaWeights<T>, heads: usize) -> Result<Tensor<T>> {
    let (n, d) = tokens.dims2()?;
    if heads == 0 || d % heads != 0 {
        return Err(Error::config(format!(
            "token dimension {d} is not divisible into {heads} heads"
        )));
    }
    for (name, m) in [("wq", &w.wq), ("wk", &w.wk), ("wv", &w.wv), ("wo", &w.wo)] {
        if m.shape() != [d, d] {
            return Err(Error::shape(format!(
                "msa {name} must be {d}x{d}, got {:?}",
                m.shape()
            )));
        }
    }
    let dh = d / heads;
    let order = canonical_row_order(tokens);
    let x = tokens.select_rows(&order)?;

    let q = linear(&x, &w.wq, Some(&w.bq))?;
    let k = linear(&x, &w.wk, Some(&w.bk))?;
    let v = linear(&x, &w.wv, Some(&w.bv))?;
    let scale = T::one() / T::lit(dh as f64).sqrt();

    let mut scores = vec![T::zero(); n * n];
    let mut concat = vec![T::zero(); n * d];
    for h in 0..heads {
        let off = h * dh;
        let qh = MatRef {
            data: q.data(),
            offset: off,
            rows: n,
            cols: dh,
            row_stride: d,
            col_stride: 1,
        };
        let kh = MatRef { data: k.data(), ..qh };
        gemm(
            qh,
            kh.t(),
            T::zero(),
            MatMut {
                data: &mut scores,
                offset: 0,
                rows: n,
                cols: n,
                row_stride: n,
            },
        );
        for row in scores.chunks_exact_mut(n) {
            for s in row.iter_mut() {
                *s = *s * scale;
            }
            softmax_in_place(row);
        }
        gemm(
            MatRef::dense(&scores, n, n),
            MatRef { data: v.data(), ..qh },
            T::zero(),
            MatMut {
                data: &mut concat,
                offset: off,
                rows: n,
                cols: dh,
                row_stride: d,
            },
        );
    }
    let out = linear(&Tensor::new(&[n, d], concat)?, &w.wo, Some(&w.bo))?;

    let mut data = vec![T::zero(); n * d];
    for (pos, &orig) in order.iter().enumerate() {
        data[orig * d..(orig + 1) * d].copy_from_slice(out.row(pos));
    }
    Tensor::new(&[n, d], data)
}

/// Row-wise `linear → GELU → linear`.
pub fn mlp_block<T: Scalar>(tokens: &Tensor<T>, w: &MlpWeights<T>) -> Result<Tensor<T>> {
    let (_, d) = tokens.dims2()?;
    let (w1_in, hidden) = w.w1.dims2()?;
    let (w2_in, w2_out) = w.w2.dims2()?;
    if w1_in != d || w2_in != hidden || w2_out != d {
        return Err(Error::shape(format!(
            "mlp weights {:?}/{:?} do not fit token dimension {d}",
            w.w1.shape(),
            w.w2.shape()
        )));
    }
    let hidden = linear(tokens, &w.w1, Some(&w.b1))?.map(gelu);
    linear(&hidden, &w.w2, Some(&w.b2))
}
