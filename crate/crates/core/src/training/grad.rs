//! Reverse-mode gradients of the triplet loss with respect to the head.
//!
//! Forward chain per image: for every branch `j`, logits `X_j w_j`, softmax
//! `a_j`, pooled `g_j = a_jᵀ Y_j`; then `u = c / ‖c‖` for `c = concat(g_j)`,
//! `h = u W`, `G = h / ‖h‖`. The fused mask only drives key-patch selection
//! and takes no part in the loss.

use super::loss::euclidean;
use crate::aggregate::{attention_map, level_global, Branches, HeadParams};
use crate::encoder::MultiLevelTokens;
use crate::error::{Error, Result};
use crate::numeric::{norm2, Scalar};

/// Three precomputed token sets sharing the head input dimension.
#[derive(Clone, Copy, Debug)]
pub struct Triplet<'a, T> {
    pub query: &'a MultiLevelTokens<T>,
    pub positive: &'a MultiLevelTokens<T>,
    pub negative: &'a MultiLevelTokens<T>,
}

/// Forward activations of one image, kept for the backward pass.
pub struct HeadForward<'a, T> {
    branches: Branches<'a, T>,
    pub maps: Vec<Vec<T>>,
    concat_norm: T,
    unit: Vec<T>,
    reduced_norm: T,
    pub global: Vec<T>,
}

impl<'a, T: Scalar> HeadForward<'a, T> {
    pub fn new(tokens: &'a MultiLevelTokens<T>, params: &HeadParams<T>) -> Result<Self> {
        params.validate(tokens.dim())?;
        let branches = Branches::new(params.variant, tokens)?;
        let mut maps = Vec::with_capacity(params.attention.len());
        let mut concat = Vec::with_capacity(params.reduction.shape()[0]);
        for (j, w) in params.attention.iter().enumerate() {
            let (x, y) = branches.get(j);
            let a = attention_map(x, w)?;
            concat.extend(level_global(&a, y)?);
            maps.push(a);
        }
        let concat_norm = T::lit(norm2(&concat));
        if !(concat_norm > T::zero()) {
            return Err(Error::Normalization("pooled descriptor"));
        }
        let unit: Vec<T> = concat.iter().map(|&c| c / concat_norm).collect();
        let d = params.reduction.shape()[1];
        let mut reduced = vec![T::zero(); d];
        for (i, &ui) in unit.iter().enumerate() {
            for (acc, &w) in reduced.iter_mut().zip(params.reduction.row(i)) {
                *acc = *acc + ui * w;
            }
        }
        let reduced_norm = T::lit(norm2(&reduced));
        if !(reduced_norm > T::zero()) {
            return Err(Error::Normalization("reduced descriptor"));
        }
        let global = reduced.iter().map(|&h| h / reduced_norm).collect();
        Ok(HeadForward {
            branches,
            maps,
            concat_norm,
            unit,
            reduced_norm,
            global,
        })
    }

    /// Accumulates `∂L/∂params` into `grad` given `∂L/∂G`.
    pub fn backward(&self, d_global: &[T], params: &HeadParams<T>, grad: &mut HeadParams<T>) {
        let dot = |a: &[T], b: &[T]| a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y);

        // G = h / ‖h‖
        let gd = dot(&self.global, d_global);
        let d_reduced: Vec<T> = d_global
            .iter()
            .zip(&self.global)
            .map(|(&dg, &g)| (dg - g * gd) / self.reduced_norm)
            .collect();

        // h = u W
        let w = &params.reduction;
        let d = w.shape()[1];
        let mut d_unit = vec![T::zero(); self.unit.len()];
        {
            let gw = grad.reduction.data_mut();
            for (i, &ui) in self.unit.iter().enumerate() {
                let wrow = w.row(i);
                let mut acc = T::zero();
                for k in 0..d {
                    gw[i * d + k] = gw[i * d + k] + ui * d_reduced[k];
                    acc = acc + wrow[k] * d_reduced[k];
                }
                d_unit[i] = acc;
            }
        }

        // u = c / ‖c‖
        let ud = dot(&self.unit, &d_unit);
        let d_concat: Vec<T> = d_unit
            .iter()
            .zip(&self.unit)
            .map(|(&du, &u)| (du - u * ud) / self.concat_norm)
            .collect();

        let mut at = 0;
        for (j, a) in self.maps.iter().enumerate() {
            let (x, y) = self.branches.get(j);
            let width = y.shape()[1];
            let d_pooled = &d_concat[at..at + width];
            at += width;
            // g = aᵀ Y, then softmax backward.
            let d_attn: Vec<T> = (0..a.len()).map(|k| dot(y.row(k), d_pooled)).collect();
            let ad = dot(a, &d_attn);
            let gj = &mut grad.attention[j];
            for (k, (&ak, &dak)) in a.iter().zip(&d_attn).enumerate() {
                let d_logit = ak * (dak - ad);
                for (gv, &xv) in gj.iter_mut().zip(x.row(k)) {
                    *gv = *gv + d_logit * xv;
                }
            }
        }
    }
}

/// Loss and exact gradients for one triplet. When the hinge is inactive or
/// sits exactly on its boundary, all gradients are zero.
pub fn head_grad<T: Scalar>(
    triplet: Triplet<'_, T>,
    params: &HeadParams<T>,
    margin: T,
) -> Result<(T, HeadParams<T>)> {
    let q = HeadForward::new(triplet.query, params)?;
    let p = HeadForward::new(triplet.positive, params)?;
    let n = HeadForward::new(triplet.negative, params)?;
    let dp = euclidean(&q.global, &p.global);
    let dn = euclidean(&q.global, &n.global);
    let loss = dp - dn + margin;
    let mut grad = params.zeros_like();
    if !(loss > T::zero()) {
        return Ok((loss.max(T::zero()), grad));
    }
    // ∂‖x − y‖/∂x = (x − y) / ‖x − y‖, taken as 0 at coincidence.
    let unit_diff = |a: &[T], b: &[T], dist: T| -> Vec<T> {
        if dist > T::zero() {
            a.iter().zip(b).map(|(&x, &y)| (x - y) / dist).collect()
        } else {
            vec![T::zero(); a.len()]
        }
    };
    let e_p = unit_diff(&q.global, &p.global, dp);
    let e_n = unit_diff(&q.global, &n.global, dn);
    let d_q: Vec<T> = e_p.iter().zip(&e_n).map(|(&a, &b)| a - b).collect();
    let d_p: Vec<T> = e_p.iter().map(|&a| -a).collect();
    q.backward(&d_q, params, &mut grad);
    p.backward(&d_p, params, &mut grad);
    n.backward(&e_n, params, &mut grad);
    Ok((loss, grad))
}

/// `a += b` over all parameters.
pub fn add_assign<T: Scalar>(a: &mut HeadParams<T>, b: &HeadParams<T>) {
    for (x, y) in a.attention.iter_mut().zip(&b.attention) {
        for (u, &v) in x.iter_mut().zip(y) {
            *u = *u + v;
        }
    }
    for (u, &v) in a.reduction.data_mut().iter_mut().zip(b.reduction.data()) {
        *u = *u + v;
    }
}

pub fn scale<T: Scalar>(a: &mut HeadParams<T>, s: T) {
    for x in a.attention.iter_mut().flatten() {
        *x = *x * s;
    }
    for u in a.reduction.data_mut() {
        *u = *u * s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::{aggregate_global, AggregationVariant};
    use crate::numeric::{Rng, Tensor};

    fn tokens(n: usize, d: usize, rng: &mut Rng) -> MultiLevelTokens<f64> {
        let mut t = || Tensor::from_fn(&[n, d], |_| rng.normal());
        MultiLevelTokens {
            low: t(),
            mid: t(),
            high: t(),
            rows: 1,
            cols: n,
            centers: (0..n as i32).map(|k| [16 * k + 8, 8]).collect(),
        }
    }

    #[test]
    fn forward_matches_aggregation() {
        let mut rng = Rng::seed(2);
        for v in AggregationVariant::ALL {
            let t = tokens(5, 4, &mut rng);
            let params = HeadParams::random(v, 4, &mut rng);
            let f = HeadForward::new(&t, &params).unwrap();
            let g = aggregate_global(v, &t, &params).unwrap().global;
            for (a, b) in f.global.iter().zip(&g) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn inactive_hinge_has_zero_gradient() {
        let mut rng = Rng::seed(3);
        let q = tokens(4, 4, &mut rng);
        let n = tokens(4, 4, &mut rng);
        let params = HeadParams::random(AggregationVariant::Standard, 4, &mut rng);
        let t = Triplet { query: &q, positive: &q, negative: &n };
        // d(q,p) = 0 and any d(q,n) > margin = 0 leaves the hinge at zero.
        let (loss, g) = head_grad(t, &params, 0.0).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.flatten().iter().all(|&v| v == 0.0));
    }
}
