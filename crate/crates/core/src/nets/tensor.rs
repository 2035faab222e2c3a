//! Channel-major activations and the GEMM / im2col kernels behind the
//! convolution layers.

use crate::error::{Error, Result};

/// Activations stored `C x N x H x W`.
///
/// Channel-major storage makes the im2col GEMM output land directly in
/// place and keeps every batch-norm channel contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(channels: usize, batch: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            batch,
            height,
            width,
            data: vec![0.0; channels * batch * height * width],
        }
    }

    /// From image-major `N x H x W x C` pixels.
    pub fn from_images(pixels: &[f32], batch: usize, height: usize, width: usize, channels: usize) -> Result<Self> {
        if pixels.len() != batch * height * width * channels {
            return Err(Error::Shape(format!(
                "{} values cannot form {batch} images of {height}x{width}x{channels}",
                pixels.len()
            )));
        }
        let hw = height * width;
        let mut data = vec![0.0; pixels.len()];
        for n in 0..batch {
            for p in 0..hw {
                for c in 0..channels {
                    data[(c * batch + n) * hw + p] = pixels[(n * hw + p) * channels + c];
                }
            }
        }
        Ok(Self {
            channels,
            batch,
            height,
            width,
            data,
        })
    }

    /// Back to image-major `N x H x W x C`.
    pub fn to_images(&self) -> Vec<f32> {
        let hw = self.spatial();
        let mut out = vec![0.0; self.data.len()];
        for c in 0..self.channels {
            for n in 0..self.batch {
                for p in 0..hw {
                    out[(n * hw + p) * self.channels + c] = self.data[(c * self.batch + n) * hw + p];
                }
            }
        }
        out
    }

    pub fn spatial(&self) -> usize {
        self.height * self.width
    }

    /// Per-sample features flattened in `C, H, W` order (`N x CHW`).
    pub fn flatten_samples(&self) -> Vec<f32> {
        let hw = self.spatial();
        let per = self.channels * hw;
        let mut out = vec![0.0; self.data.len()];
        for c in 0..self.channels {
            for n in 0..self.batch {
                let src = (c * self.batch + n) * hw;
                out[n * per + c * hw..n * per + (c + 1) * hw].copy_from_slice(&self.data[src..src + hw]);
            }
        }
        out
    }

    /// Inverse of [`FeatureMap::flatten_samples`].
    pub fn unflatten_samples(flat: &[f32], channels: usize, batch: usize, height: usize, width: usize) -> Self {
        let hw = height * width;
        let per = channels * hw;
        let mut data = vec![0.0; flat.len()];
        for c in 0..channels {
            for n in 0..batch {
                let dst = (c * batch + n) * hw;
                data[dst..dst + hw].copy_from_slice(&flat[n * per + c * hw..n * per + (c + 1) * hw]);
            }
        }
        Self {
            channels,
            batch,
            height,
            width,
            data,
        }
    }
}

/// Row-major `c = op(a) * op(b) + beta * c` with `op(a)` of shape `m x k`
/// and `op(b)` of shape `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Sliding-window geometry of a convolution from an `h x w` plane to an
/// `out_h x out_w` plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Window {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Window {
    pub fn new(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_h: (height + 2 * pad - kernel) / stride + 1,
            out_w: (width + 2 * pad - kernel) / stride + 1,
        }
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    /// Source coordinate for output index `o` and kernel tap `t`, if inside.
    #[inline]
    fn source(o: usize, t: usize, stride: usize, pad: usize, limit: usize) -> Option<usize> {
        (o * stride + t).checked_sub(pad).filter(|&i| i < limit)
    }
}

/// Unfolds `x` (`C x N x H x W`) into `[C*k*k, N*out_h*out_w]`.
pub(crate) fn im2col(x: &[f32], batch: usize, win: &Window) -> Vec<f32> {
    let Window {
        channels,
        height,
        width,
        kernel,
        stride,
        pad,
        out_h,
        out_w,
    } = *win;
    let cols_n = batch * out_h * out_w;
    let mut cols = vec![0.0; win.patch_len() * cols_n];
    for c in 0..channels {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (c * kernel + ki) * kernel + kj;
                let dst_row = &mut cols[row * cols_n..(row + 1) * cols_n];
                for n in 0..batch {
                    let plane = &x[(c * batch + n) * height * width..][..height * width];
                    for oy in 0..out_h {
                        let Some(iy) = Window::source(oy, ki, stride, pad, height) else {
                            continue;
                        };
                        let dst = &mut dst_row[(n * out_h + oy) * out_w..][..out_w];
                        let src = &plane[iy * width..(iy + 1) * width];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            if let Some(ix) = Window::source(ox, kj, stride, pad, width) {
                                *d = src[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters-adds columns back into a `C x N x H x W`
/// buffer.
pub(crate) fn col2im(cols: &[f32], batch: usize, win: &Window, out: &mut [f32]) {
    let Window {
        channels,
        height,
        width,
        kernel,
        stride,
        pad,
        out_h,
        out_w,
    } = *win;
    let cols_n = batch * out_h * out_w;
    for c in 0..channels {
        for ki in 0..kernel {
            for kj in 0..kernel {
                let row = (c * kernel + ki) * kernel + kj;
                let src_row = &cols[row * cols_n..(row + 1) * cols_n];
                for n in 0..batch {
                    let plane = &mut out[(c * batch + n) * height * width..][..height * width];
                    for oy in 0..out_h {
                        let Some(iy) = Window::source(oy, ki, stride, pad, height) else {
                            continue;
                        };
                        let src = &src_row[(n * out_h + oy) * out_w..][..out_w];
                        let dst = &mut plane[iy * width..(iy + 1) * width];
                        for (ox, s) in src.iter().enumerate() {
                            if let Some(ix) = Window::source(ox, kj, stride, pad, width) {
                                dst[ix] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}
