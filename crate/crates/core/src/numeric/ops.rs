//! Elementwise, normalization and convolution primitives.

use super::gemm::{gemm, MatMut, MatRef};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Upper bound on im2col scratch elements per chunk of output rows.
const IM2COL_BUDGET: usize = 1 << 21;

/// 3×3 convolution, stride 1, zero padding 1, on an `H×W×Cin` tensor with a
/// `3×3×Cin×Cout` kernel. Output keeps the input's spatial size.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&[T]>,
) -> Result<Tensor<T>> {
    let (h, w, cin) = input.dims3()?;
    let (kh, kw, kcin, cout) = match *kernel.shape() {
        [a, b, c, d] => (a, b, c, d),
        _ => {
            return Err(Error::shape(format!(
                "conv kernel must be 3x3xCinxCout, got {:?}",
                kernel.shape()
            )))
        }
    };
    if kh != 3 || kw != 3 {
        return Err(Error::shape(format!("conv kernel must be 3x3, got {kh}x{kw}")));
    }
    if kcin != cin {
        return Err(Error::shape(format!(
            "conv channel mismatch: input has {cin}, kernel expects {kcin}"
        )));
    }
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(Error::shape(format!(
                "conv bias length {} != {cout}",
                b.len()
            )));
        }
    }

    let x = input.data();
    let patch = 9 * cin;
    let rows_per_chunk = (IM2COL_BUDGET / (w * patch)).clamp(1, h);
    let mut out = vec![T::zero(); h * w * cout];
    let mut cols = vec![T::zero(); rows_per_chunk * w * patch];

    let mut y0 = 0;
    while y0 < h {
        let y1 = (y0 + rows_per_chunk).min(h);
        let n_rows = (y1 - y0) * w;
        let cols = &mut cols[..n_rows * patch];
        for y in y0..y1 {
            for xo in 0..w {
                let dst = &mut cols[((y - y0) * w + xo) * patch..][..patch];
                for ky in 0..3 {
                    let iy = y as isize + ky as isize - 1;
                    for kx in 0..3 {
                        let ix = xo as isize + kx as isize - 1;
                        let seg = &mut dst[(ky * 3 + kx) * cin..][..cin];
                        if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                            seg.fill(T::zero());
                        } else {
                            let src = (iy as usize * w + ix as usize) * cin;
                            seg.copy_from_slice(&x[src..src + cin]);
                        }
                    }
                }
            }
        }
        let out_chunk = &mut out[y0 * w * cout..y1 * w * cout];
        if let Some(b) = bias {
            for px in out_chunk.chunks_exact_mut(cout) {
                px.copy_from_slice(b);
            }
        }
        let beta = if bias.is_some() { T::one() } else { T::zero() };
        gemm(
            MatRef::dense(cols, n_rows, patch),
            MatRef::dense(kernel.data(), patch, cout),
            beta,
            MatMut {
                data: out_chunk,
                offset: 0,
                rows: n_rows,
                cols: cout,
                row_stride: cout,
            },
        );
        y0 = y1;
    }
    Tensor::new(&[h, w, cout], out)
}

/// 2×2 max pooling with stride 2 on an `H×W×C` tensor.
pub fn maxpool2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = input.dims3()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(format!(
            "maxpool2 needs even extents, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for xo in 0..ow {
            let base = |dy: usize, dx: usize| ((2 * y + dy) * w + 2 * xo + dx) * c;
            let (a, b, d, e) = (base(0, 0), base(0, 1), base(1, 0), base(1, 1));
            for ch in 0..c {
                out.push(x[a + ch].max(x[b + ch]).max(x[d + ch].max(x[e + ch])));
            }
        }
    }
    Tensor::new(&[oh, ow, c], out)
}

/// Inference-mode batch normalization over the last axis.
pub fn batchnorm_infer<T: Scalar>(
    input: &Tensor<T>,
    mean: &[T],
    var: &[T],
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> Result<Tensor<T>> {
    let c = *input.shape().last().expect("rank >= 1");
    if [mean.len(), var.len(), gamma.len(), beta.len()]
        .iter()
        .any(|&l| l != c)
    {
        return Err(Error::shape(format!(
            "batchnorm statistics must have length {c}"
        )));
    }
    if let Some(ch) = var.iter().position(|v| !(*v >= T::zero())) {
        return Err(Error::validation(format!(
            "batchnorm variance of channel {ch} is negative or NaN"
        )));
    }
    let scale: Vec<T> = (0..c).map(|i| gamma[i] / (var[i] + eps).sqrt()).collect();
    let data = input
        .data()
        .chunks_exact(c)
        .flat_map(|px| (0..c).map(|i| (px[i] - mean[i]) * scale[i] + beta[i]).collect::<Vec<_>>())
        .collect();
    Tensor::new(input.shape(), data)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| v.max(T::zero()))
}

/// Exact (erf-based) GELU.
#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::lit(0.5);
    half * x * (T::one() + (x * T::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// Row-wise affine map: `input (N×Din) · weight (Din×Dout) + bias`.
pub fn linear<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[T]>,
) -> Result<Tensor<T>> {
    let (n, din) = input.dims2()?;
    let (wdin, dout) = weight.dims2()?;
    if din != wdin {
        return Err(Error::shape(format!(
            "linear: input has {din} features, weight expects {wdin}"
        )));
    }
    let mut out = vec![T::zero(); n * dout];
    let beta = match bias {
        Some(b) if b.len() != dout => {
            return Err(Error::shape(format!(
                "linear bias length {} != {dout}",
                b.len()
            )))
        }
        Some(b) => {
            for row in out.chunks_exact_mut(dout) {
                row.copy_from_slice(b);
            }
            T::one()
        }
        None => T::zero(),
    };
    gemm(
        MatRef::dense(input.data(), n, din),
        MatRef::dense(weight.data(), din, dout),
        beta,
        MatMut {
            data: &mut out,
            offset: 0,
            rows: n,
            cols: dout,
            row_stride: dout,
        },
    );
    Tensor::new(&[n, dout], out)
}

/// Max-subtracted softmax of one contiguous slice, in place.
pub(crate) fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum = sum + *x;
    }
    for x in v.iter_mut() {
        *x = *x / sum;
    }
}

/// Numerically stable softmax along `axis`.
pub fn softmax_axis<T: Scalar>(input: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let shape = input.shape();
    if axis >= shape.len() {
        return Err(Error::shape(format!(
            "softmax axis {axis} out of range for rank {}",
            shape.len()
        )));
    }
    if !input.all_finite() {
        return Err(Error::validation("softmax input contains NaN or infinity"));
    }
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut data = input.data().to_vec();
    let mut buf = vec![T::zero(); len];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| (o * len + k) * inner + i;
            for (k, b) in buf.iter_mut().enumerate() {
                *b = data[at(k)];
            }
            softmax_in_place(&mut buf);
            for (k, b) in buf.iter().enumerate() {
                data[at(k)] = *b;
            }
        }
    }
    Tensor::new(shape, data)
}

/// Per-row normalization to zero mean and unit (biased) variance, then affine.
pub fn layer_norm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> Result<Tensor<T>> {
    let (_, d) = input.dims2()?;
    if d < 2 {
        return Err(Error::shape("layer_norm needs at least two features"));
    }
    if gamma.len() != d || beta.len() != d {
        return Err(Error::shape(format!(
            "layer_norm parameters must have length {d}"
        )));
    }
    let dn = T::from_usize(d).expect("usize fits");
    let mut data = Vec::with_capacity(input.len());
    for row in input.data().chunks_exact(d) {
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / dn;
        let inv = T::one() / (var + eps).sqrt();
        data.extend(
            row.iter()
                .zip(gamma.iter().zip(beta))
                .map(|(&x, (&g, &b))| (x - mean) * inv * g + b),
        );
    }
    Tensor::new(input.shape(), data)
}

/// Euclidean norm accumulated in `f64`.
pub fn norm2<T: Scalar>(v: &[T]) -> f64 {
    v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
}

/// `v / ‖v‖₂`; fails on a zero or non-finite norm.
pub fn l2_normalize<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    let n = norm2(v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Normalization("l2_normalize"));
    }
    Ok(v.iter().map(|&x| T::lit(x.as_f64() / n)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Rng;
    use approx::assert_relative_eq;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t(&[2, 2, 1], &[1., 2., 3., 4.]);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let y = conv2d(&x, &t(&[3, 3, 1, 1], &k), Some(&[0.0])).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_zero_input_gives_bias() {
        let x = Tensor::<f64>::zeros(&[4, 3, 2]);
        let mut rng = Rng::seed(1);
        let k = Tensor::from_fn(&[3, 3, 2, 3], |_| rng.normal());
        let y = conv2d(&x, &k, Some(&[0.5, -1.0, 2.0])).unwrap();
        for px in y.data().chunks(3) {
            assert_eq!(px, &[0.5, -1.0, 2.0]);
        }
    }

    #[test]
    fn conv_channel_mismatch() {
        let x = Tensor::<f32>::zeros(&[4, 4, 2]);
        let k = Tensor::<f32>::zeros(&[3, 3, 3, 1]);
        assert!(matches!(conv2d(&x, &k, None), Err(Error::Shape(_))));
        let k5 = Tensor::<f32>::zeros(&[5, 5, 2, 1]);
        assert!(conv2d(&x, &k5, None).is_err());
    }

    #[test]
    fn conv_chunking_matches_single_pass() {
        // Tall enough that the im2col scratch is split across several chunks.
        let mut rng = Rng::seed(2);
        let (h, w, cin, cout) = (40, 600, 10, 4);
        let x = Tensor::from_fn(&[h, w, cin], |_| rng.normal());
        let k = Tensor::from_fn(&[3, 3, cin, cout], |_| rng.normal());
        assert!(IM2COL_BUDGET / (w * 9 * cin) < h);
        let y = conv2d(&x, &k, None).unwrap();
        let (yy, xx, co) = (37, 599, 3);
        let mut want = 0.0;
        for ky in 0..3 {
            for kx in 0..3 {
                let (iy, ix) = (yy + ky, xx + kx);
                if iy < 1 || iy > h || ix < 1 || ix > w {
                    continue;
                }
                for ci in 0..cin {
                    want += x.data()[((iy - 1) * w + ix - 1) * cin + ci]
                        * k.data()[((ky * 3 + kx) * cin + ci) * cout + co];
                }
            }
        }
        assert_relative_eq!(y.data()[(yy * w + xx) * cout + co], want, epsilon = 1e-10);
    }

    #[test]
    fn maxpool_cases() {
        let y = maxpool2(&t(&[2, 2, 1], &[1., 2., 3., 4.])).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let c = Tensor::<f64>::full(&[4, 6, 2], 3.5);
        assert!(maxpool2(&c).unwrap().data().iter().all(|&v| v == 3.5));
        assert!(maxpool2(&Tensor::<f64>::zeros(&[3, 2, 1])).is_err());
    }

    #[test]
    fn batchnorm_cases() {
        let x = t(&[1, 3], &[1., -2., 7.]);
        let one = [1.0; 3];
        let zero = [0.0; 3];
        let y = batchnorm_infer(&x, &zero, &one, &one, &zero, 0.0).unwrap();
        assert_eq!(y.data(), x.data());

        let y = batchnorm_infer(&t(&[1], &[5.]), &[5.], &[4.], &[2.], &[1.], 0.0).unwrap();
        assert_eq!(y.data(), &[1.0]);

        let err = batchnorm_infer(&x, &zero, &[1., -1., 1.], &one, &zero, 0.0);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn relu_cases() {
        let y = relu(&t(&[3], &[-1., 0., 2.]));
        assert_eq!(y.data(), &[0., 0., 2.]);
        let mut rng = Rng::seed(4);
        let x = Tensor::<f64>::from_fn(&[50], |_| rng.normal());
        assert_eq!(relu(&relu(&x)), relu(&x));
        let pos = x.map(f64::abs);
        assert_eq!(relu(&pos), pos);
    }

    #[test]
    fn linear_cases() {
        let y = linear(&t(&[1, 2], &[1., 2.]), &t(&[2, 1], &[1., 1.]), None).unwrap();
        assert_eq!(y.data(), &[3.0]);
        let eye = t(&[2, 2], &[1., 0., 0., 1.]);
        let x = t(&[3, 2], &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(linear(&x, &eye, Some(&[0., 0.])).unwrap(), x);
        assert!(linear(&x, &t(&[3, 1], &[1., 1., 1.]), None).is_err());
    }

    #[test]
    fn softmax_cases() {
        let y = softmax_axis(&t(&[2], &[0., 0.]), 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
        let y = softmax_axis(&t(&[2], &[0., 3f64.ln()]), 0).unwrap();
        assert_relative_eq!(y.data()[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(y.data()[1], 0.75, epsilon = 1e-12);
        assert!(matches!(
            softmax_axis(&t(&[2], &[0., f64::NAN]), 0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn softmax_along_first_axis() {
        let x = t(&[2, 2], &[0., 1., 0., 1.]);
        let y = softmax_axis(&x, 0).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5, 0.5, 0.5]);
        let y = softmax_axis(&x, 1).unwrap();
        assert_relative_eq!(y.data()[0] + y.data()[1], 1.0, epsilon = 1e-12);
        assert!(softmax_axis(&x, 2).is_err());
    }

    #[test]
    fn layer_norm_cases() {
        let g = [1.0; 4];
        let b = [0.0; 4];
        let y = layer_norm(&t(&[1, 4], &[3.; 4]), &g, &b, 1e-6).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        let y = layer_norm(&t(&[1, 2], &[1., -1.]), &[1., 1.], &[0., 0.], 0.0).unwrap();
        assert_eq!(y.data(), &[1., -1.]);
        assert!(layer_norm(&t(&[2, 1], &[1., 2.]), &[1.], &[0.], 0.0).is_err());
    }

    #[test]
    fn l2_cases() {
        assert_eq!(l2_normalize(&[3.0f64, 4.0]).unwrap(), vec![0.6, 0.8]);
        assert!(matches!(
            l2_normalize(&[0.0f32; 3]),
            Err(Error::Normalization(_))
        ));
        let u = l2_normalize(&[0.0f64, 1.0, 0.0]).unwrap();
        assert_eq!(u, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0f64), 0.0);
        // GELU(1) = Φ(1) = 0.841344746...
        assert_relative_eq!(gelu(1.0f64), 0.8413447460685429, epsilon = 1e-12);
        assert_relative_eq!(gelu(-1.0f64), -0.15865525393145707, epsilon = 1e-12);
    }
}
