//! Convolution kernels over NHWC buffers, lowered to GEMM through chunked
//! patch extraction (im2col) and its adjoint (col2im).

use crate::error::ShapeError;
use crate::gemm;

/// Padding rule for a convolution, with the usual `SAME`/`VALID` semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output size `ceil(in / stride)`; for a transposed convolution, `in * stride`.
    Same,
    /// No padding; output size `(in - k) / stride + 1`, or `(in - 1) * stride + k`
    /// for a transposed convolution.
    Valid,
}

/// Spatial geometry of a forward convolution from `in_h × in_w` to
/// `out_h × out_w`. A transposed convolution is described by the geometry of
/// the forward convolution it is the adjoint of.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

fn same_axis(input: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + k).saturating_sub(input);
    (out, total / 2)
}

impl ConvGeometry {
    pub fn conv(
        in_h: usize,
        in_w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self, ShapeError> {
        if stride == 0 || kh == 0 || kw == 0 || in_h == 0 || in_w == 0 {
            return Err(ShapeError::new("conv2d", "zero-sized geometry"));
        }
        let (out_h, out_w, pad_top, pad_left) = match padding {
            Padding::Same => {
                let (oh, pt) = same_axis(in_h, kh, stride);
                let (ow, pl) = same_axis(in_w, kw, stride);
                (oh, ow, pt, pl)
            }
            Padding::Valid => {
                if in_h < kh || in_w < kw {
                    return Err(ShapeError::new(
                        "conv2d",
                        format!("{kh}x{kw} VALID kernel does not fit a {in_h}x{in_w} input"),
                    ));
                }
                ((in_h - kh) / stride + 1, (in_w - kw) / stride + 1, 0, 0)
            }
        };
        Ok(Self {
            in_h,
            in_w,
            out_h,
            out_w,
            kh,
            kw,
            stride,
            pad_top,
            pad_left,
        })
    }

    /// Geometry of a transposed convolution taking an `in_h × in_w` input.
    /// The returned geometry's `in_*` fields are the transposed output size.
    pub fn transposed(
        in_h: usize,
        in_w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: Padding,
    ) -> Result<Self, ShapeError> {
        if stride == 0 || kh == 0 || kw == 0 || in_h == 0 || in_w == 0 {
            return Err(ShapeError::new("conv2d_transpose", "zero-sized geometry"));
        }
        let (oh, ow) = match padding {
            Padding::Same => (in_h * stride, in_w * stride),
            Padding::Valid => ((in_h - 1) * stride + kh, (in_w - 1) * stride + kw),
        };
        let g = Self::conv(oh, ow, kh, kw, stride, padding)?;
        debug_assert_eq!((g.out_h, g.out_w), (in_h, in_w));
        Ok(g)
    }

    fn patch_len(&self, channels: usize) -> usize {
        self.kh * self.kw * channels
    }

    fn rows(&self, batch: usize) -> usize {
        batch * self.out_h * self.out_w
    }

    fn chunk_rows(&self, channels: usize) -> usize {
        ((1usize << 21) / self.patch_len(channels).max(1)).max(1)
    }

    /// Writes the patches of output rows `r0..r0 + rows` into `cols`.
    fn im2col(&self, x: &[f64], channels: usize, r0: usize, rows: usize, cols: &mut [f64]) {
        let k = self.patch_len(channels);
        let per_image = self.out_h * self.out_w;
        for (i, row) in cols[..rows * k].chunks_exact_mut(k).enumerate() {
            let r = r0 + i;
            let b = r / per_image;
            let oy = (r % per_image) / self.out_w;
            let ox = r % self.out_w;
            let base = b * self.in_h * self.in_w * channels;
            for ky in 0..self.kh {
                let dst = &mut row[ky * self.kw * channels..(ky + 1) * self.kw * channels];
                let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                if iy < 0 || iy >= self.in_h as isize {
                    dst.fill(0.0);
                    continue;
                }
                for kx in 0..self.kw {
                    let d = &mut dst[kx * channels..(kx + 1) * channels];
                    let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                    if ix < 0 || ix >= self.in_w as isize {
                        d.fill(0.0);
                    } else {
                        let src = base + (iy as usize * self.in_w + ix as usize) * channels;
                        d.copy_from_slice(&x[src..src + channels]);
                    }
                }
            }
        }
    }

    /// Scatter-adds patch gradients for output rows `r0..r0 + rows` into `dx`.
    fn col2im(&self, cols: &[f64], channels: usize, r0: usize, rows: usize, dx: &mut [f64]) {
        let k = self.patch_len(channels);
        let per_image = self.out_h * self.out_w;
        for (i, row) in cols[..rows * k].chunks_exact(k).enumerate() {
            let r = r0 + i;
            let b = r / per_image;
            let oy = (r % per_image) / self.out_w;
            let ox = r % self.out_w;
            let base = b * self.in_h * self.in_w * channels;
            for ky in 0..self.kh {
                let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                if iy < 0 || iy >= self.in_h as isize {
                    continue;
                }
                for kx in 0..self.kw {
                    let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                    if ix < 0 || ix >= self.in_w as isize {
                        continue;
                    }
                    let src =
                        &row[(ky * self.kw + kx) * channels..(ky * self.kw + kx + 1) * channels];
                    let dst = base + (iy as usize * self.in_w + ix as usize) * channels;
                    for (d, s) in dx[dst..dst + channels].iter_mut().zip(src) {
                        *d += s;
                    }
                }
            }
        }
    }

    /// `y = conv(x, kernel)` where `kernel` is `[kh·kw·cin, cout]`; `y` is overwritten.
    pub(crate) fn forward(
        &self,
        batch: usize,
        x: &[f64],
        cin: usize,
        kernel: &[f64],
        cout: usize,
        y: &mut [f64],
    ) {
        let k = self.patch_len(cin);
        let total = self.rows(batch);
        let chunk = self.chunk_rows(cin).min(total);
        let mut cols = vec![0.0; chunk * k];
        let mut r0 = 0;
        while r0 < total {
            let rows = chunk.min(total - r0);
            self.im2col(x, cin, r0, rows, &mut cols);
            gemm::matmul(
                rows,
                k,
                cout,
                &cols[..rows * k],
                kernel,
                0.0,
                &mut y[r0 * cout..(r0 + rows) * cout],
            );
            r0 += rows;
        }
    }

    /// Accumulates `dx += convᵀ(dy, kernel)`.
    pub(crate) fn backward_data(
        &self,
        batch: usize,
        dy: &[f64],
        cin: usize,
        kernel: &[f64],
        cout: usize,
        dx: &mut [f64],
    ) {
        let k = self.patch_len(cin);
        let total = self.rows(batch);
        let chunk = self.chunk_rows(cin).min(total);
        let mut cols = vec![0.0; chunk * k];
        let mut r0 = 0;
        while r0 < total {
            let rows = chunk.min(total - r0);
            gemm::matmul_a_bt(
                rows,
                cout,
                k,
                &dy[r0 * cout..(r0 + rows) * cout],
                kernel,
                0.0,
                &mut cols[..rows * k],
            );
            self.col2im(&cols, cin, r0, rows, dx);
            r0 += rows;
        }
    }

    /// Accumulates `dkernel += patches(x)ᵀ · dy`.
    pub(crate) fn backward_kernel(
        &self,
        batch: usize,
        x: &[f64],
        cin: usize,
        dy: &[f64],
        cout: usize,
        dkernel: &mut [f64],
    ) {
        let k = self.patch_len(cin);
        let total = self.rows(batch);
        let chunk = self.chunk_rows(cin).min(total);
        let mut cols = vec![0.0; chunk * k];
        let mut r0 = 0;
        while r0 < total {
            let rows = chunk.min(total - r0);
            self.im2col(x, cin, r0, rows, &mut cols);
            gemm::matmul_at_b(
                k,
                rows,
                cout,
                &cols[..rows * k],
                &dy[r0 * cout..(r0 + rows) * cout],
                1.0,
                dkernel,
            );
            r0 += rows;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_halves_with_stride_two() {
        let g = ConvGeometry::conv(64, 64, 3, 3, 2, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.out_w, g.pad_top), (32, 32, 0));
        let g = ConvGeometry::conv(7, 7, 5, 5, 1, Padding::Same).unwrap();
        assert_eq!((g.out_h, g.pad_top), (7, 2));
    }

    #[test]
    fn valid_head_collapses_four_by_four() {
        let g = ConvGeometry::conv(4, 4, 4, 4, 1, Padding::Valid).unwrap();
        assert_eq!((g.out_h, g.out_w), (1, 1));
        assert!(ConvGeometry::conv(2, 2, 4, 4, 1, Padding::Valid).is_err());
    }

    #[test]
    fn transposed_geometries_double() {
        let g = ConvGeometry::transposed(1, 1, 4, 4, 1, Padding::Valid).unwrap();
        assert_eq!((g.in_h, g.in_w), (4, 4));
        let g = ConvGeometry::transposed(4, 4, 8, 8, 2, Padding::Same).unwrap();
        assert_eq!((g.in_h, g.pad_top), (8, 3));
        let g = ConvGeometry::transposed(8, 8, 3, 3, 2, Padding::Same).unwrap();
        assert_eq!(g.in_h, 16);
    }

    /// Direct nested-loop convolution used as an oracle for the GEMM lowering.
    fn naive(
        g: &ConvGeometry,
        batch: usize,
        x: &[f64],
        cin: usize,
        kern: &[f64],
        cout: usize,
    ) -> Vec<f64> {
        let mut y = vec![0.0; batch * g.out_h * g.out_w * cout];
        for b in 0..batch {
            for oy in 0..g.out_h {
                for ox in 0..g.out_w {
                    for co in 0..cout {
                        let mut acc = 0.0;
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                                let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                                if iy < 0
                                    || ix < 0
                                    || iy >= g.in_h as isize
                                    || ix >= g.in_w as isize
                                {
                                    continue;
                                }
                                for ci in 0..cin {
                                    let xv = x[((b * g.in_h + iy as usize) * g.in_w + ix as usize)
                                        * cin
                                        + ci];
                                    let kv = kern[((ky * g.kw + kx) * cin + ci) * cout + co];
                                    acc += xv * kv;
                                }
                            }
                        }
                        y[((b * g.out_h + oy) * g.out_w + ox) * cout + co] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn gemm_lowering_matches_nested_loops() {
        let g = ConvGeometry::conv(5, 6, 3, 2, 2, Padding::Same).unwrap();
        let (batch, cin, cout) = (2, 3, 4);
        let x: Vec<f64> = (0..batch * 5 * 6 * cin)
            .map(|i| ((i * 37 % 11) as f64) - 5.0)
            .collect();
        let k: Vec<f64> = (0..3 * 2 * cin * cout)
            .map(|i| ((i * 13 % 7) as f64) * 0.25 - 0.7)
            .collect();
        let mut y = vec![0.0; batch * g.out_h * g.out_w * cout];
        g.forward(batch, &x, cin, &k, cout, &mut y);
        let expect = naive(&g, batch, &x, cin, &k, cout);
        for (a, b) in y.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_data_is_the_adjoint_of_forward() {
        // <conv(x), dy> == <x, convᵀ(dy)> for arbitrary x and dy.
        let g = ConvGeometry::conv(6, 5, 3, 3, 2, Padding::Same).unwrap();
        let (batch, cin, cout) = (2, 2, 3);
        let x: Vec<f64> = (0..batch * 6 * 5 * cin)
            .map(|i| ((i * 7 % 13) as f64) * 0.1 - 0.6)
            .collect();
        let k: Vec<f64> = (0..9 * cin * cout)
            .map(|i| ((i * 5 % 9) as f64) * 0.2 - 0.8)
            .collect();
        let dy: Vec<f64> = (0..batch * g.out_h * g.out_w * cout)
            .map(|i| ((i * 3 % 5) as f64) - 2.0)
            .collect();
        let mut y = vec![0.0; dy.len()];
        g.forward(batch, &x, cin, &k, cout, &mut y);
        let mut dx = vec![0.0; x.len()];
        g.backward_data(batch, &dy, cin, &k, cout, &mut dx);
        let lhs: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));

        let mut dk = vec![0.0; k.len()];
        g.backward_kernel(batch, &x, cin, &dy, cout, &mut dk);
        let rhs_k: f64 = k.iter().zip(&dk).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs_k).abs() < 1e-9 * lhs.abs().max(1.0));
    }
}
