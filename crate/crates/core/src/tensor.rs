//! Dense row-major matrices and the scalar types they carry.
//!
//! Storage is generic over [`Scalar`] so the same layer code runs at `f32`
//! (training and inference) and at `f64` (gradient checking). Every
//! reduction goes through `f64` regardless of the storage type.

use std::borrow::Cow;
use std::fmt::Debug;

use crate::error::{Error, Result};

pub trait Scalar: Copy + Default + Debug + PartialEq + PartialOrd + Send + Sync + 'static {
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;
    /// Borrow or widen a slice to `f64`.
    fn widen(s: &[Self]) -> Cow<'_, [f64]>;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
    fn widen(s: &[Self]) -> Cow<'_, [f64]> {
        Cow::Owned(s.iter().map(|&v| v as f64).collect())
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
    fn widen(s: &[Self]) -> Cow<'_, [f64]> {
        Cow::Borrowed(s)
    }
}

/// A `rows × cols` matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::shape(format!(
                "{rows}x{cols} tensor needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![T::ZERO; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(T::from_f64(f(r, c)));
            }
        }
        Tensor { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(format!("row {i} has {} values, expected {cols}", r.len())));
            }
            data.extend(r.iter().map(|&v| T::from_f64(v)));
        }
        Ok(Tensor {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| T::from_f64(f(v.to_f64()))).collect(),
        }
    }

    /// Element-wise `f(self, other)`.
    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_same_shape(other, "zip_map")?;
        Ok(Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| T::from_f64(f(a.to_f64(), b.to_f64())))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = T::from_f64(a.to_f64() + b.to_f64());
        }
        Ok(())
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    /// Adds `bias` (a `1 × cols` tensor or a plain slice of `cols`) to every row.
    pub fn add_row_broadcast(&mut self, bias: &[T]) -> Result<()> {
        if bias.len() != self.cols {
            return Err(Error::shape(format!(
                "row broadcast of {} values onto {} columns",
                bias.len(),
                self.cols
            )));
        }
        for row in self.data.chunks_exact_mut(self.cols.max(1)) {
            for (v, &b) in row.iter_mut().zip(bias) {
                *v = T::from_f64(v.to_f64() + b.to_f64());
            }
        }
        Ok(())
    }

    /// Column sums accumulated at `f64`.
    pub fn sum_rows(&self) -> Vec<f64> {
        let mut acc = vec![0.0f64; self.cols];
        for row in self.data.chunks_exact(self.cols.max(1)) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += v.to_f64();
            }
        }
        acc
    }

    pub fn transpose(&self) -> Self {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    /// Columns `[start, start + width)` as a new tensor.
    pub fn slice_cols(&self, start: usize, width: usize) -> Self {
        let mut data = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..start + width]);
        }
        Tensor {
            rows: self.rows,
            cols: width,
            data,
        }
    }

    /// Writes `src` into columns `[start, start + src.cols)`.
    pub fn set_cols(&mut self, start: usize, src: &Self) {
        debug_assert_eq!(self.rows, src.rows);
        for r in 0..self.rows {
            let w = src.cols;
            self.row_mut(r)[start..start + w].copy_from_slice(src.row(r));
        }
    }

    pub fn concat_cols(a: &Self, b: &Self) -> Result<Self> {
        if a.rows != b.rows {
            return Err(Error::shape(format!(
                "concat of {} and {} rows",
                a.rows, b.rows
            )));
        }
        let mut out = Tensor::zeros(a.rows, a.cols + b.cols);
        out.set_cols(0, a);
        out.set_cols(a.cols, b);
        Ok(out)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64()).collect()
    }

    fn check_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "{op}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }
}

/// Whether a matmul operand is used as stored or transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

fn logical(t: &Tensor<impl Scalar>, op: Op) -> (usize, usize, isize, isize) {
    let (r, c) = t.shape();
    match op {
        Op::N => (r, c, c as isize, 1),
        Op::T => (c, r, 1, c as isize),
    }
}

/// `op(a) · op(b)`, accumulated at `f64`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, opa: Op, b: &Tensor<T>, opb: Op) -> Result<Tensor<T>> {
    let (m, _, _, _) = logical(a, opa);
    let (_, n, _, _) = logical(b, opb);
    let prod = gemm(a, opa, b, opb)?;
    Ok(Tensor {
        rows: m,
        cols: n,
        data: prod.into_iter().map(T::from_f64).collect(),
    })
}

/// `out += op(a) · op(b)`.
pub fn matmul_acc<T: Scalar>(
    out: &mut Tensor<T>,
    a: &Tensor<T>,
    opa: Op,
    b: &Tensor<T>,
    opb: Op,
) -> Result<()> {
    let (m, _, _, _) = logical(a, opa);
    let (_, n, _, _) = logical(b, opb);
    if out.shape() != (m, n) {
        return Err(Error::shape(format!(
            "matmul_acc into {:?}, product is {m}x{n}",
            out.shape()
        )));
    }
    let prod = gemm(a, opa, b, opb)?;
    for (o, p) in out.data.iter_mut().zip(prod) {
        *o = T::from_f64(o.to_f64() + p);
    }
    Ok(())
}

fn gemm<T: Scalar>(a: &Tensor<T>, opa: Op, b: &Tensor<T>, opb: Op) -> Result<Vec<f64>> {
    let (m, k, rsa, csa) = logical(a, opa);
    let (k2, n, rsb, csb) = logical(b, opb);
    if k != k2 {
        return Err(Error::shape(format!(
            "matmul inner dims {m}x{k} · {k2}x{n}"
        )));
    }
    let mut c = vec![0.0f64; m * n];
    if m == 0 || n == 0 || k == 0 {
        return Ok(c);
    }
    let aw = T::widen(&a.data);
    let bw = T::widen(&b.data);
    // SAFETY: strides describe in-bounds views of `aw` (m×k), `bw` (k×n)
    // and the freshly allocated `c` (m×n, row-major).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            aw.as_ptr(),
            rsa,
            csa,
            bw.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    Ok(c)
}
