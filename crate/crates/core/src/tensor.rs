//! Dense tensors, 2-D FFT and valid cross-correlation.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{shape_err, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(shape_err!("zero-sized dimension in {:?}", shape));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(shape_err!(
                "shape {:?} needs {} values, got {}",
                shape,
                len,
                data.len()
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a 2-D tensor by evaluating `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.shape[self.shape.len() - 2]
    }

    pub fn cols(&self) -> usize {
        self.shape[self.shape.len() - 1]
    }

    /// Returns `(rows, cols)` or a shape error when the tensor is not 2-D.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            s => Err(shape_err!("expected a 2-D tensor, got shape {:?}", s)),
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies the `rows × cols` window whose top-left corner is `(r0, c0)`.
    pub fn crop(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Result<Tensor> {
        let (h, w) = self.dims2()?;
        if r0 + rows > h || c0 + cols > w {
            return Err(shape_err!(
                "crop {}x{} at ({}, {}) exceeds {}x{}",
                rows,
                cols,
                r0,
                c0,
                h,
                w
            ));
        }
        Ok(Tensor::from_fn(rows, cols, |r, c| self.at(r0 + r, c0 + c)))
    }

    /// Rotates a 2-D tensor by a quarter turn in the positive angular
    /// direction used throughout the crate (see [`crate::rotation`]).
    pub fn rot90(&self) -> Tensor {
        let (h, w) = (self.rows(), self.cols());
        // out(i, j) samples in(R(-pi/2) p) around the center.
        Tensor::from_fn(w, h, |i, j| self.at(h - 1 - j, i))
    }

    /// View of plane `k` of a 3-D tensor as a slice.
    pub fn plane(&self, k: usize) -> &[f64] {
        let plane = self.shape[1..].iter().product::<usize>();
        &self.data[k * plane..(k + 1) * plane]
    }

    pub fn plane_mut(&mut self, k: usize) -> &mut [f64] {
        let plane = self.shape[1..].iter().product::<usize>();
        &mut self.data[k * plane..(k + 1) * plane]
    }
}

/// Complex 2-D array holding a discrete Fourier transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<Complex64>,
}

impl Spectrum {
    pub fn at(&self, r: usize, c: usize) -> Complex64 {
        self.values[r * self.cols + c]
    }
}

/// Reusable forward/inverse 2-D FFT plan for one array size.
#[derive(Clone)]
pub struct Fft2Plan {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2Plan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2Plan")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .finish()
    }
}

impl Fft2Plan {
    pub fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2Plan {
            rows,
            cols,
            row_fwd: planner.plan_fft_forward(cols),
            row_inv: planner.plan_fft_inverse(cols),
            col_fwd: planner.plan_fft_forward(rows),
            col_inv: planner.plan_fft_inverse(rows),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn transform(&self, buf: &mut [Complex64], inverse: bool) {
        let (rows, cols) = (self.rows, self.cols);
        let (row_fft, col_fft) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        row_fft.process(buf);
        let mut t = vec![Complex64::default(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                t[c * rows + r] = buf[r * cols + c];
            }
        }
        col_fft.process(&mut t);
        for c in 0..cols {
            for r in 0..rows {
                buf[r * cols + c] = t[c * rows + r];
            }
        }
    }

    /// Unnormalized forward transform (kernel `e^{-2 pi i k n / N}`) of a
    /// real array embedded top-left in a zero `rows × cols` grid.
    pub fn forward_padded(&self, x: &[f64], x_rows: usize, x_cols: usize) -> Spectrum {
        debug_assert!(x_rows <= self.rows && x_cols <= self.cols);
        let mut buf = vec![Complex64::default(); self.rows * self.cols];
        for r in 0..x_rows {
            for c in 0..x_cols {
                buf[r * self.cols + c] = Complex64::new(x[r * x_cols + c], 0.0);
            }
        }
        self.forward_complex(buf)
    }

    pub fn forward_complex(&self, mut buf: Vec<Complex64>) -> Spectrum {
        assert_eq!(buf.len(), self.rows * self.cols);
        self.transform(&mut buf, false);
        Spectrum {
            rows: self.rows,
            cols: self.cols,
            values: buf,
        }
    }

    /// Inverse transform including the `1/(rows·cols)` normalization.
    pub fn inverse_complex(&self, mut buf: Vec<Complex64>) -> Vec<Complex64> {
        assert_eq!(buf.len(), self.rows * self.cols);
        self.transform(&mut buf, true);
        let scale = 1.0 / (self.rows * self.cols) as f64;
        for v in &mut buf {
            *v *= scale;
        }
        buf
    }
}

pub fn fft2(x: &Tensor) -> Result<Spectrum> {
    let (h, w) = x.dims2()?;
    Ok(Fft2Plan::new(h, w).forward_padded(x.data(), h, w))
}

/// Inverse of [`fft2`]; the imaginary residue is discarded.
pub fn ifft2(s: &Spectrum) -> Tensor {
    let plan = Fft2Plan::new(s.rows, s.cols);
    let out = plan.inverse_complex(s.values.clone());
    Tensor {
        shape: vec![s.rows, s.cols],
        data: out.into_iter().map(|z| z.re).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrMethod {
    Direct,
    Fft,
}

/// Valid cross-correlation: `out(r, c) = sum_{u,v} image(r+u, c+v) kernel(u, v)`.
pub fn xcorr2_valid(image: &Tensor, kernel: &Tensor, method: CorrMethod) -> Result<Tensor> {
    let (h, w) = image.dims2()?;
    let (kh, kw) = kernel.dims2()?;
    if kh > h || kw > w {
        return Err(shape_err!(
            "kernel {}x{} larger than image {}x{}",
            kh,
            kw,
            h,
            w
        ));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    match method {
        CorrMethod::Direct => Ok(Tensor::from_fn(oh, ow, |r, c| {
            let mut acc = 0.0;
            for u in 0..kh {
                let img_row = &image.data()[(r + u) * w + c..(r + u) * w + c + kw];
                let ker_row = &kernel.data()[u * kw..(u + 1) * kw];
                acc += img_row.iter().zip(ker_row).map(|(a, b)| a * b).sum::<f64>();
            }
            acc
        })),
        CorrMethod::Fft => {
            let plan = Fft2Plan::new(h, w);
            let xs = plan.forward_padded(image.data(), h, w);
            let ks = plan.forward_padded(kernel.data(), kh, kw);
            let prod = xs
                .values
                .iter()
                .zip(&ks.values)
                .map(|(x, k)| x * k.conj())
                .collect();
            let full = plan.inverse_complex(prod);
            // circular correlation never wraps inside the valid window
            Ok(Tensor::from_fn(oh, ow, |r, c| full[r * w + c].re))
        }
    }
}
