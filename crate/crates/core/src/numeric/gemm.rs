use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Strided view of a row-major matrix inside a larger buffer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatRef<'a, T> {
    pub data: &'a [T],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn dense(data: &'a [T], rows: usize, cols: usize) -> Self {
        MatRef {
            data,
            offset: 0,
            rows,
            cols,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Logical transpose; no data moves.
    pub fn t(self) -> Self {
        MatRef {
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
            ..self
        }
    }

    fn last_index(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return self.offset;
        }
        self.offset + (self.rows - 1) * self.row_stride + (self.cols - 1) * self.col_stride
    }

    fn in_bounds(&self) -> bool {
        self.rows == 0 || self.cols == 0 || self.last_index() < self.data.len()
    }
}

/// Mutable strided destination.
pub(crate) struct MatMut<'a, T> {
    pub data: &'a mut [T],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub row_stride: usize,
}

/// `c = a * b + beta * c`. Panics when any view is out of bounds or the
/// inner extents disagree; callers check shapes and return errors first.
pub(crate) fn gemm<T: Scalar>(a: MatRef<'_, T>, b: MatRef<'_, T>, beta: T, c: MatMut<'_, T>) {
    assert_eq!(a.cols, b.rows, "gemm inner extent");
    assert_eq!(a.rows, c.rows, "gemm output rows");
    assert_eq!(b.cols, c.cols, "gemm output cols");
    assert!(a.in_bounds() && b.in_bounds(), "gemm operand out of bounds");
    if c.rows > 0 && c.cols > 0 {
        let last = c.offset + (c.rows - 1) * c.row_stride + c.cols - 1;
        assert!(last < c.data.len(), "gemm destination out of bounds");
    } else {
        return;
    }
    if a.cols == 0 {
        // k = 0: the product is empty, only scaling remains.
        for r in 0..c.rows {
            for v in &mut c.data[c.offset + r * c.row_stride..][..c.cols] {
                *v = *v * beta;
            }
        }
        return;
    }
    // SAFETY: bounds verified above; `c` is a unique borrow so it cannot
    // alias the shared borrows of `a` and `b`.
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            a.data.as_ptr().add(a.offset),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr().add(b.offset),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.row_stride as isize,
            1,
        );
    }
}

/// Dense product of two rank-2 tensors.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner extents differ: {m}x{k} * {k2}x{n}"
        )));
    }
    let mut out = vec![T::zero(); m * n];
    matmul_into(a.data(), b.data(), m, k, n, &mut out);
    Tensor::new(&[m, n], out)
}

/// Dense `out = a(m×k) * b(k×n)` on raw row-major slices.
pub fn matmul_into<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(out.len(), m * n);
    gemm(
        MatRef::dense(a, m, k),
        MatRef::dense(b, k, n),
        T::zero(),
        MatMut {
            data: out,
            offset: 0,
            rows: m,
            cols: n,
            row_stride: n,
        },
    );
}
