//! Raw numeric kernels shared by the tape and the tape-free inference path.
//!
//! Image tensors are NHWC; convolution kernels are `[kh, kw, c_in, c_out]`.

use serde::{Deserialize, Serialize};

/// Matrix view: `(rows, cols, row stride, col stride)`.
#[derive(Clone, Copy)]
pub(crate) struct MatView<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a> MatView<'a> {
    pub fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols);
        MatView {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        MatView {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `c = alpha * a · b + beta * c`, with `c` row-major `[a.rows, b.cols]`.
pub(crate) fn gemm(alpha: f64, a: MatView<'_>, b: MatView<'_>, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the asserts above and the MatView constructors guarantee every
    // strided access stays within the borrowed slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    gemm(
        1.0,
        MatView::row_major(a, m, k),
        MatView::row_major(b, k, n),
        0.0,
        &mut out,
    );
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    Same,
}

/// Resolved geometry of one 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub out_c: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

/// Output extent and leading pad along one spatial axis, or `None` when the
/// kernel does not fit.
pub fn conv_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if input < kernel {
                None
            } else {
                Some(((input - kernel) / stride + 1, 0))
            }
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let needed = ((out - 1) * stride + kernel).saturating_sub(input);
            Some((out, needed / 2))
        }
    }
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Option<Self> {
        if input.len() != 4 || kernel.len() != 4 || input[3] != kernel[2] {
            return None;
        }
        if stride != 1 && stride != 2 {
            return None;
        }
        let (out_h, pad_top) = conv_extent(input[1], kernel[0], stride, padding)?;
        let (out_w, pad_left) = conv_extent(input[2], kernel[1], stride, padding)?;
        Some(ConvGeometry {
            batch: input[0],
            in_h: input[1],
            in_w: input[2],
            in_c: input[3],
            k_h: kernel[0],
            k_w: kernel[1],
            out_c: kernel[3],
            stride,
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.k_h * self.k_w * self.in_c
    }

    pub fn rows(&self) -> usize {
        self.batch * self.out_h * self.out_w
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.out_h, self.out_w, self.out_c]
    }

    /// Input coordinate for output position `o` and kernel tap `k`, if inside.
    #[inline]
    fn src(&self, o: usize, k: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - pad as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    pub(crate) fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let p = self.patch_len();
        let mut cols = vec![0.0; self.rows() * p];
        let c = self.in_c;
        let mut row = 0;
        for b in 0..self.batch {
            let img = &input[b * self.in_h * self.in_w * c..(b + 1) * self.in_h * self.in_w * c];
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for ky in 0..self.k_h {
                        let Some(iy) = self.src(oy, ky, self.pad_top, self.in_h) else {
                            continue;
                        };
                        for kx in 0..self.k_w {
                            let Some(ix) = self.src(ox, kx, self.pad_left, self.in_w) else {
                                continue;
                            };
                            let s = (iy * self.in_w + ix) * c;
                            let d = (ky * self.k_w + kx) * c;
                            dst[d..d + c].copy_from_slice(&img[s..s + c]);
                        }
                    }
                    row += 1;
                }
            }
        }
        cols
    }

    pub(crate) fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let p = self.patch_len();
        let c = self.in_c;
        let mut out = vec![0.0; self.batch * self.in_h * self.in_w * c];
        let mut row = 0;
        for b in 0..self.batch {
            let base = b * self.in_h * self.in_w * c;
            for oy in 0..self.out_h {
                for ox in 0..self.out_w {
                    let src = &cols[row * p..(row + 1) * p];
                    for ky in 0..self.k_h {
                        let Some(iy) = self.src(oy, ky, self.pad_top, self.in_h) else {
                            continue;
                        };
                        for kx in 0..self.k_w {
                            let Some(ix) = self.src(ox, kx, self.pad_left, self.in_w) else {
                                continue;
                            };
                            let d = base + (iy * self.in_w + ix) * c;
                            let s = (ky * self.k_w + kx) * c;
                            for (o, v) in out[d..d + c].iter_mut().zip(&src[s..s + c]) {
                                *o += v;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
        out
    }

    /// Forward convolution; returns the output and the column matrix.
    pub(crate) fn forward(&self, input: &[f64], kernel: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let cols = self.im2col(input);
        let out = matmul(&cols, self.rows(), self.patch_len(), kernel, self.out_c);
        (out, cols)
    }

    pub(crate) fn grad_kernel(&self, cols: &[f64], grad_out: &[f64]) -> Vec<f64> {
        let mut gk = vec![0.0; self.patch_len() * self.out_c];
        gemm(
            1.0,
            MatView::row_major(cols, self.rows(), self.patch_len()).t(),
            MatView::row_major(grad_out, self.rows(), self.out_c),
            0.0,
            &mut gk,
        );
        gk
    }

    pub(crate) fn grad_input(&self, kernel: &[f64], grad_out: &[f64]) -> Vec<f64> {
        let mut gcols = vec![0.0; self.rows() * self.patch_len()];
        gemm(
            1.0,
            MatView::row_major(grad_out, self.rows(), self.out_c),
            MatView::row_major(kernel, self.patch_len(), self.out_c).t(),
            0.0,
            &mut gcols,
        );
        self.col2im(&gcols)
    }
}

/// 2×2 max pooling with stride 2 (floor). Returns output and, per output
/// element, the flat index of the winning input element.
pub(crate) fn maxpool2x2(input: &[f64], shape: &[usize]) -> (Vec<f64>, Vec<usize>, Vec<usize>) {
    let (b, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(b * oh * ow * c);
    let mut arg = Vec::with_capacity(b * oh * ow * c);
    for n in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = 0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let i = ((n * h + 2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                            if input[i] > best {
                                best = input[i];
                                best_i = i;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i);
                }
            }
        }
    }
    (out, arg, vec![b, oh, ow, c])
}

/// Row-wise log-softmax over the last axis of a `[rows, cols]` buffer.
pub(crate) fn log_softmax_rows(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|x| x - lse));
    }
    out
}

pub fn softmax_rows(data: &[f64], cols: usize) -> Vec<f64> {
    log_softmax_rows(data, cols).into_iter().map(f64::exp).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let i = [1.0, 0.0, 0.0, 1.0];
        assert_eq!(matmul(&a, 2, 2, &i, 2), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn transposed_views() {
        // a^T · b with a = [[1,2],[3,4]], b = [[1],[1]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.0, 1.0];
        let mut c = [0.0; 2];
        gemm(1.0, MatView::row_major(&a, 2, 2).t(), MatView::row_major(&b, 2, 1), 0.0, &mut c);
        assert_eq!(c, [4.0, 6.0]);
    }

    #[test]
    fn valid_conv_of_ones() {
        let g = ConvGeometry::new(&[1, 3, 3, 1], &[2, 2, 1, 1], 1, Padding::Valid).unwrap();
        let (out, _) = g.forward(&[1.0; 9], &[1.0; 4]);
        assert_eq!(g.output_shape(), vec![1, 2, 2, 1]);
        assert_eq!(out, vec![4.0; 4]);
    }

    #[test]
    fn same_padding_geometry() {
        let g = ConvGeometry::new(&[1, 5, 5, 2], &[3, 3, 2, 4], 1, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w, g.pad_top), (5, 5, 1));
        let g = ConvGeometry::new(&[1, 5, 5, 2], &[3, 3, 2, 4], 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.pad_top), (3, 1));
        let g = ConvGeometry::new(&[1, 6, 6, 2], &[3, 3, 2, 4], 2, Padding::Valid).unwrap();
        assert_eq!(g.out_h, 2);
        assert!(ConvGeometry::new(&[1, 2, 2, 1], &[3, 3, 1, 1], 1, Padding::Valid).is_none());
        assert!(ConvGeometry::new(&[1, 8, 8, 1], &[3, 3, 1, 1], 3, Padding::Valid).is_none());
    }

    #[test]
    fn same_conv_matches_direct_sum() {
        // 3x3 input 1..9, 3x3 kernel of ones, same padding: each output is the
        // sum of its in-bounds neighbourhood.
        let input: Vec<f64> = (1..=9).map(f64::from).collect();
        let g = ConvGeometry::new(&[1, 3, 3, 1], &[3, 3, 1, 1], 1, Padding::Same).unwrap();
        let (out, _) = g.forward(&input, &[1.0; 9]);
        assert_eq!(out, vec![12.0, 21.0, 16.0, 27.0, 45.0, 33.0, 24.0, 39.0, 28.0]);
    }

    #[test]
    fn maxpool_picks_maximum() {
        let input = [1.0, 5.0, 3.0, 2.0];
        let (out, arg, shape) = maxpool2x2(&input, &[1, 2, 2, 1]);
        assert_eq!(out, vec![5.0]);
        assert_eq!(arg, vec![1]);
        assert_eq!(shape, vec![1, 1, 1, 1]);
    }
}
