//! Activation buffers and the dense kernels the layers are built from.
//!
//! Activations are stored channel-major, `[channel][sample][time]`, so a
//! whole batch of 1D convolutions is a single GEMM against an im2col matrix
//! whose columns are indexed by `sample * len + t`.

use crate::signal::EegTrial;

/// Batch activation, layout `[c][n][l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Act {
    pub c: usize,
    pub n: usize,
    pub l: usize,
    pub data: Vec<f64>,
}

impl Act {
    pub fn zeros(c: usize, n: usize, l: usize) -> Self {
        Self {
            c,
            n,
            l,
            data: vec![0.0; c * n * l],
        }
    }

    pub fn from_trials(trials: &[&EegTrial]) -> Self {
        let n = trials.len();
        let (c, l) = trials
            .first()
            .map(|t| (t.channels(), t.time_steps()))
            .unwrap_or((0, 0));
        let mut a = Self::zeros(c, n, l);
        for (i, t) in trials.iter().enumerate() {
            for ch in 0..c {
                a.data[(ch * n + i) * l..(ch * n + i + 1) * l].copy_from_slice(t.channel(ch));
            }
        }
        a
    }

    /// Sample `i` as a row-major `[channel][time]` vector.
    pub fn sample(&self, i: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.c * self.l);
        for ch in 0..self.c {
            out.extend_from_slice(&self.data[(ch * self.n + i) * self.l..(ch * self.n + i + 1) * self.l]);
        }
        out
    }

    /// `a` followed by `b` along the sample axis.
    pub fn concat_batch(a: &Act, b: &Act) -> Act {
        assert_eq!((a.c, a.l), (b.c, b.l), "batch concat needs matching channels and length");
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        for ch in 0..a.c {
            data.extend_from_slice(a.channel(ch));
            data.extend_from_slice(b.channel(ch));
        }
        Act {
            c: a.c,
            n: a.n + b.n,
            l: a.l,
            data,
        }
    }

    /// Samples `start..end`.
    pub fn batch_range(&self, start: usize, end: usize) -> Act {
        let mut data = Vec::with_capacity(self.c * (end - start) * self.l);
        for ch in 0..self.c {
            data.extend_from_slice(&self.channel(ch)[start * self.l..end * self.l]);
        }
        Act {
            c: self.c,
            n: end - start,
            l: self.l,
            data,
        }
    }

    /// Contiguous `[n][l]` slab of one channel.
    pub fn channel(&self, ch: usize) -> &[f64] {
        &self.data[ch * self.n * self.l..(ch + 1) * self.n * self.l]
    }
}

/// Row-major matrix, used for logits and latent batches.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Column `c` as a vector.
    pub fn col(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.data[r * self.cols + c]).collect()
    }

    /// Rows `start..end` as a new matrix.
    pub fn rows_range(&self, start: usize, end: usize) -> Mat {
        Mat::from_rows(end - start, self.cols, self.data[start * self.cols..end * self.cols].to_vec())
    }

    /// Columns `start..end` as a new matrix.
    pub fn cols_range(&self, start: usize, end: usize) -> Mat {
        let mut out = Mat::zeros(self.rows, end - start);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[start..end]);
        }
        out
    }
}

/// Strided matrix view for [`gemm`].
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rs: usize,
    pub cs: usize,
}

impl<'a> View<'a> {
    pub fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    /// Transposed view of a row-major matrix with `cols` columns.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }
}

fn span(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// `c = a · b + beta · c` with `a: m×k`, `b: k×n`, `c: m×n` row-major.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64]) {
    assert!(span(m, k, a.rs, a.cs) <= a.data.len(), "gemm: lhs out of bounds");
    assert!(span(k, n, b.rs, b.cs) <= b.data.len(), "gemm: rhs out of bounds");
    assert!(m * n <= c.len(), "gemm: output out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    // SAFETY: all three operands were bounds-checked above for the given
    // dimensions and non-negative strides; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a strided 1D convolution mapping a long axis (`long_len`) to
/// a short one (`short_len`). A transposed convolution uses the same
/// geometry in the other direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub long_len: usize,
    pub short_len: usize,
}

impl ConvGeom {
    /// Geometry for a forward convolution over `long_len` steps.
    pub fn conv(kernel: usize, stride: usize, pad: usize, long_len: usize) -> Option<Self> {
        let padded = long_len + 2 * pad;
        if padded < kernel || stride == 0 {
            return None;
        }
        Some(Self {
            kernel,
            stride,
            pad,
            long_len,
            short_len: (padded - kernel) / stride + 1,
        })
    }

    /// Geometry for a transposed convolution expanding `short_len` steps.
    pub fn transposed(kernel: usize, stride: usize, pad: usize, short_len: usize) -> Option<Self> {
        let long = ((short_len - 1) * stride + kernel).checked_sub(2 * pad)?;
        let g = Self::conv(kernel, stride, pad, long)?;
        (g.short_len == short_len).then_some(g)
    }

    #[inline]
    fn source(&self, t: usize, j: usize) -> Option<usize> {
        let pos = (t * self.stride + j).checked_sub(self.pad)?;
        (pos < self.long_len).then_some(pos)
    }
}

/// Unfolds `x: [ch][n][long]` into `[(ch * k)][n * short]`.
pub(crate) fn im2col(x: &[f64], ch: usize, n: usize, g: &ConvGeom) -> Vec<f64> {
    let width = n * g.short_len;
    let mut cols = vec![0.0; ch * g.kernel * width];
    crate::par::for_each_chunk_mut(&mut cols, width.max(1), |row, out| {
        let (ci, j) = (row / g.kernel, row % g.kernel);
        for s in 0..n {
            let src = &x[(ci * n + s) * g.long_len..(ci * n + s + 1) * g.long_len];
            let dst = &mut out[s * g.short_len..(s + 1) * g.short_len];
            for (t, d) in dst.iter_mut().enumerate() {
                if let Some(p) = g.source(t, j) {
                    *d = src[p];
                }
            }
        }
    });
    cols
}

/// Adjoint of [`im2col`]: scatter-adds `[(ch * k)][n * short]` into
/// `[ch][n][long]`.
pub(crate) fn col2im(cols: &[f64], ch: usize, n: usize, g: &ConvGeom) -> Vec<f64> {
    let width = n * g.short_len;
    let slab = n * g.long_len;
    let mut x = vec![0.0; ch * slab];
    crate::par::for_each_chunk_mut(&mut x, slab.max(1), |ci, out| {
        for j in 0..g.kernel {
            let row = &cols[(ci * g.kernel + j) * width..(ci * g.kernel + j + 1) * width];
            for s in 0..n {
                let dst = &mut out[s * g.long_len..(s + 1) * g.long_len];
                for t in 0..g.short_len {
                    if let Some(p) = g.source(t, j) {
                        dst[p] += row[s * g.short_len + t];
                    }
                }
            }
        }
    });
    x
}
