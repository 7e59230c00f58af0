//! Transposed 2-D convolution on channel-last batches.
//!
//! Kernels are laid out `k x k x Cin x Cout`. The forward pass multiplies a
//! block of input rows against every tap at once and scatter-accumulates the
//! block into the output; the backward pass gathers the output gradient per
//! tap block by block and reuses the same GEMM shape. Blocks are visited in
//! a fixed order, so results do not depend on the block size.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Fully resolved geometry of one transposed convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub kernel: usize,
    pub out_c: usize,
    pub stride: usize,
    /// Rows/columns cropped from the top/left of the full scatter result.
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

/// Size of the uncropped scatter result along one axis.
pub fn full_extent(input: usize, stride: usize, kernel: usize) -> usize {
    (input - 1) * stride + kernel
}

impl ConvGeometry {
    /// Geometry with symmetric padding: `out = (in - 1) * stride - 2 * pad + k`.
    pub fn symmetric(
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        let (_, h, w, _) = split_input(input_shape)?;
        let k = kernel_shape.first().copied().unwrap_or(0);
        let out = |n: usize| full_extent(n, stride, k) as isize - 2 * pad as isize;
        let (oh, ow) = (out(h), out(w));
        if k == 0 || oh < 1 || ow < 1 {
            return Err(Error::invalid(
                "conv_transpose2d",
                format!(
                    "computed output size {oh}x{ow} is not positive (input {h}x{w}, k={k}, stride={stride}, padding={pad})"
                ),
            ));
        }
        Self::cropped(input_shape, kernel_shape, stride, pad, oh as usize, ow as usize)
    }

    /// Geometry with an explicit top/left crop and output size, used for
    /// same-size layers whose padding would otherwise be fractional.
    pub fn cropped(
        input_shape: &[usize],
        kernel_shape: &[usize],
        stride: usize,
        pad: usize,
        out_h: usize,
        out_w: usize,
    ) -> Result<Self> {
        let (batch, in_h, in_w, in_c) = split_input(input_shape)?;
        if kernel_shape.len() != 4 || kernel_shape[0] != kernel_shape[1] || kernel_shape[2] != in_c
        {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("kernel k x k x {in_c} x Cout"),
                kernel_shape,
            ));
        }
        let k = kernel_shape[0];
        if k < 1 || !(1..=2).contains(&stride) {
            return Err(Error::invalid(
                "conv_transpose2d",
                format!("need k >= 1 and stride in {{1, 2}}, got k={k}, stride={stride}"),
            ));
        }
        let (fh, fw) = (full_extent(in_h, stride, k), full_extent(in_w, stride, k));
        if out_h < 1 || out_w < 1 || pad + out_h > fh || pad + out_w > fw {
            return Err(Error::invalid(
                "conv_transpose2d",
                format!("output {out_h}x{out_w} with crop {pad} does not fit the {fh}x{fw} scatter"),
            ));
        }
        Ok(Self {
            batch,
            in_h,
            in_w,
            in_c,
            kernel: k,
            out_c: kernel_shape[3],
            stride,
            pad,
            out_h,
            out_w,
        })
    }

    pub fn input_pixels(&self) -> usize {
        self.batch * self.in_h * self.in_w
    }

    pub fn output_len(&self) -> usize {
        self.batch * self.out_h * self.out_w * self.out_c
    }

    /// Input rows (`batch * in_h`) per block, keeping a block of per-tap
    /// products near [`BLOCK_ELEMS`] elements.
    fn rows_per_block(&self) -> usize {
        let per_row = self.in_w * self.kernel * self.kernel * self.out_c;
        (BLOCK_ELEMS / per_row.max(1)).clamp(1, (self.batch * self.in_h).max(1))
    }

    /// Visits every run of taps `(ky, kx_lo..kx_hi)` of the input pixels in
    /// input rows `rows` (indexing `batch * in_h`) that lands inside the
    /// output, as `f(p, first_tap, first_output_pixel, len)`. Consecutive
    /// taps in a run hit consecutive output pixels.
    #[inline]
    fn for_each_run(&self, rows: std::ops::Range<usize>, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (k, st, pad) = (self.kernel, self.stride, self.pad);
        let (oh, ow) = (self.out_h as isize, self.out_w as isize);
        // Valid kx range for every input column.
        let cols: Vec<(usize, usize)> = (0..self.in_w)
            .map(|ix| {
                let x0 = (ix * st) as isize - pad as isize;
                let lo = (-x0).clamp(0, k as isize) as usize;
                let hi = (ow - x0).clamp(0, k as isize) as usize;
                (lo, hi.max(lo))
            })
            .collect();
        for r in rows {
            let (n, iy) = (r / self.in_h, r % self.in_h);
            let y0 = (iy * st) as isize - pad as isize;
            for ky in 0..k {
                let oy = y0 + ky as isize;
                if oy < 0 || oy >= oh {
                    continue;
                }
                let out_row = (n * self.out_h + oy as usize) * self.out_w;
                for (ix, &(lo, hi)) in cols.iter().enumerate() {
                    if lo < hi {
                        let p = r * self.in_w + ix;
                        let ox = ix * st + lo - pad;
                        f(p, ky * k + lo, out_row + ox, hi - lo);
                    }
                }
            }
        }
    }

    /// Visits the taps of the input pixels in `rows` that fall outside the
    /// output, as `f(p, first_tap, len)` over runs of consecutive taps.
    #[inline]
    fn for_each_gap(&self, rows: std::ops::Range<usize>, mut f: impl FnMut(usize, usize, usize)) {
        let (k, st, pad) = (self.kernel, self.stride, self.pad);
        let (oh, ow) = (self.out_h as isize, self.out_w as isize);
        for r in rows {
            let iy = r % self.in_h;
            let y0 = (iy * st) as isize - pad as isize;
            for ix in 0..self.in_w {
                let p = r * self.in_w + ix;
                let x0 = (ix * st) as isize - pad as isize;
                let lo = (-x0).clamp(0, k as isize) as usize;
                let hi = ((ow - x0).clamp(0, k as isize) as usize).max(lo);
                for ky in 0..k {
                    let oy = y0 + ky as isize;
                    if oy < 0 || oy >= oh {
                        f(p, ky * k, k);
                    } else {
                        if lo > 0 {
                            f(p, ky * k, lo);
                        }
                        if hi < k {
                            f(p, ky * k + hi, k - hi);
                        }
                    }
                }
            }
        }
    }
}

/// Target size of one block of per-tap products.
const BLOCK_ELEMS: usize = 1 << 15;

/// Half-open row ranges covering `0..total` in steps of `step`.
fn blocks(total: usize, step: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    (0..total).step_by(step).map(move |r0| r0..(r0 + step).min(total))
}

fn split_input(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [h, w, c] => Ok((1, h, w, c)),
        [n, h, w, c] => Ok((n, h, w, c)),
        _ => Err(Error::shape("conv_transpose2d", "H x W x C or N x H x W x C", shape)),
    }
}

/// Kernel `k x k x Cin x Cout` regrouped as `Cin x (k*k*Cout)`, so one GEMM
/// covers every tap.
fn taps_by_input<S: Scalar>(g: &ConvGeometry, kernel: &[S]) -> Vec<S> {
    let (cin, cout, taps) = (g.in_c, g.out_c, g.kernel * g.kernel);
    let mut out = vec![S::zero(); kernel.len()];
    for tap in 0..taps {
        for ci in 0..cin {
            let src = &kernel[(tap * cin + ci) * cout..][..cout];
            out[(ci * taps + tap) * cout..][..cout].copy_from_slice(src);
        }
    }
    out
}

pub fn forward<S: Scalar>(
    g: &ConvGeometry,
    input: &[S],
    kernel: &[S],
    bias: Option<&[S]>,
) -> Vec<S> {
    let (cin, cout, w) = (g.in_c, g.out_c, g.in_w);
    let row = g.kernel * g.kernel * cout;
    let wp = taps_by_input(g, kernel);
    let step = g.rows_per_block();
    let mut cols = vec![S::zero(); step * w * row];
    let mut out = vec![S::zero(); g.output_len()];
    for rows in blocks(g.batch * g.in_h, step) {
        let (p0, pc) = (rows.start * w, rows.len() * w);
        S::gemm(
            pc,
            cin,
            row,
            &input[p0 * cin..],
            cin as isize,
            1,
            &wp,
            row as isize,
            1,
            S::zero(),
            &mut cols,
            row as isize,
            1,
        );
        g.for_each_run(rows, |p, tap, o, len| {
            let src = &cols[(p - p0) * row + tap * cout..][..len * cout];
            for (d, &s) in out[o * cout..][..len * cout].iter_mut().zip(src) {
                *d = *d + s;
            }
        });
    }
    if let Some(b) = bias {
        for px in out.chunks_exact_mut(cout) {
            for (v, &bv) in px.iter_mut().zip(b) {
                *v = *v + bv;
            }
        }
    }
    out
}

/// Gradients with respect to the input and/or the kernel.
pub fn backward<S: Scalar>(
    g: &ConvGeometry,
    input: &[S],
    kernel: &[S],
    grad_out: &[S],
    want_input: bool,
    want_kernel: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>) {
    if !want_input && !want_kernel {
        return (None, None);
    }
    let (cin, cout, w) = (g.in_c, g.out_c, g.in_w);
    let taps = g.kernel * g.kernel;
    let row = taps * cout;
    let wp = taps_by_input(g, kernel);
    let step = g.rows_per_block();
    let mut gathered = vec![S::zero(); step * w * row];
    let mut dx = want_input.then(|| vec![S::zero(); g.input_pixels() * cin]);
    let mut dwp = want_kernel.then(|| vec![S::zero(); cin * row]);
    for (i, rows) in blocks(g.batch * g.in_h, step).enumerate() {
        let (p0, pc) = (rows.start * w, rows.len() * w);
        // Output gradient per (input pixel, tap); zero where the tap falls
        // outside the output.
        g.for_each_gap(rows.clone(), |p, tap, len| {
            gathered[(p - p0) * row + tap * cout..][..len * cout].fill(S::zero());
        });
        g.for_each_run(rows, |p, tap, o, len| {
            gathered[(p - p0) * row + tap * cout..][..len * cout].copy_from_slice(&grad_out[o * cout..][..len * cout]);
        });
        if let Some(dx) = dx.as_mut() {
            // dX = G * Wp^T
            S::gemm(
                pc,
                row,
                cin,
                &gathered,
                row as isize,
                1,
                &wp,
                1,
                row as isize,
                S::zero(),
                &mut dx[p0 * cin..],
                cin as isize,
                1,
            );
        }
        if let Some(dwp) = dwp.as_mut() {
            // dWp += X^T * G
            let beta = if i == 0 { S::zero() } else { S::one() };
            S::gemm(
                cin,
                pc,
                row,
                &input[p0 * cin..],
                1,
                cin as isize,
                &gathered,
                row as isize,
                1,
                beta,
                dwp,
                row as isize,
                1,
            );
        }
    }
    // Back to the k x k x Cin x Cout layout.
    let d_kernel = dwp.map(|dwp| {
        let mut dw = vec![S::zero(); kernel.len()];
        for ci in 0..cin {
            for tap in 0..taps {
                dw[(tap * cin + ci) * cout..][..cout].copy_from_slice(&dwp[(ci * taps + tap) * cout..][..cout]);
            }
        }
        dw
    });
    (dx, d_kernel)
}

pub fn bias_grad<S: Scalar>(grad_out: &[S], channels: usize) -> Vec<S> {
    let mut db = vec![S::zero(); channels];
    for px in grad_out.chunks_exact(channels) {
        for (d, &g) in db.iter_mut().zip(px) {
            *d = *d + g;
        }
    }
    db
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight scatter loop over every (input, tap) pair.
    fn reference(g: &ConvGeometry, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; g.output_len()];
        for n in 0..g.batch {
            for iy in 0..g.in_h {
                for ix in 0..g.in_w {
                    for ky in 0..g.kernel {
                        for kx in 0..g.kernel {
                            let oy = (iy * g.stride + ky) as isize - g.pad as isize;
                            let ox = (ix * g.stride + kx) as isize - g.pad as isize;
                            if oy < 0 || ox < 0 || oy as usize >= g.out_h || ox as usize >= g.out_w {
                                continue;
                            }
                            for ci in 0..g.in_c {
                                for co in 0..g.out_c {
                                    let xv = x[((n * g.in_h + iy) * g.in_w + ix) * g.in_c + ci];
                                    let wv = w[((ky * g.kernel + kx) * g.in_c + ci) * g.out_c + co];
                                    out[((n * g.out_h + oy as usize) * g.out_w + ox as usize)
                                        * g.out_c
                                        + co] += xv * wv;
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    #[test]
    fn gemm_scatter_matches_loop() {
        let geoms = [
            ConvGeometry::symmetric(&[2, 3, 3, 2], &[4, 4, 2, 3], 2, 1).unwrap(),
            ConvGeometry::symmetric(&[1, 1, 1, 5], &[4, 4, 5, 2], 1, 0).unwrap(),
            ConvGeometry::cropped(&[1, 4, 4, 2], &[4, 4, 2, 2], 1, 1, 4, 4).unwrap(),
        ];
        for g in geoms {
            let x: Vec<f64> = (0..g.input_pixels() * g.in_c)
                .map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0)
                .collect();
            let w: Vec<f64> = (0..g.kernel * g.kernel * g.in_c * g.out_c)
                .map(|i| ((i * 5 % 13) as f64 - 6.0) / 7.0)
                .collect();
            let got = forward(&g, &x, &w, None);
            let want = reference(&g, &x, &w);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn blocked_passes_match_loop_and_adjoint() {
        // 48 input rows of 16 * 16 * 8 products span two blocks.
        let g = ConvGeometry::symmetric(&[3, 16, 16, 4], &[4, 4, 4, 8], 2, 1).unwrap();
        assert!(g.rows_per_block() < g.batch * g.in_h);
        let x: Vec<f64> = (0..g.input_pixels() * g.in_c)
            .map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0)
            .collect();
        let w: Vec<f64> = (0..16 * g.in_c * g.out_c).map(|i| ((i * 5 % 13) as f64 - 6.0) / 7.0).collect();
        let gy: Vec<f64> = (0..g.output_len()).map(|i| ((i * 3 % 17) as f64 - 8.0) / 9.0).collect();
        let y = forward(&g, &x, &w, None);
        for (a, b) in y.iter().zip(&reference(&g, &x, &w)) {
            assert!((a - b).abs() < 1e-11, "{a} vs {b}");
        }
        let (dx, dw) = backward(&g, &x, &w, &gy, true, true);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let lhs = dot(&y, &gy);
        assert!((lhs - dot(&x, &dx.unwrap())).abs() < 1e-8 * lhs.abs().max(1.0));
        assert!((lhs - dot(&w, &dw.unwrap())).abs() < 1e-8 * lhs.abs().max(1.0));
    }

    #[test]
    fn rejects_non_positive_output() {
        assert!(ConvGeometry::symmetric(&[1, 1, 1], &[1, 1, 1, 1], 1, 1).is_err());
    }
}
