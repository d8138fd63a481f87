//! Spatial 2D convolution applied independently to every frame of a
//! `(N, T, C, H, W)` activation tensor.
//!
//! Forward and backward are im2col + GEMM per `(sample, frame)`, parallel
//! over samples. Weight-gradient partials are computed per sample and summed
//! in sample order so accumulation is bit-deterministic.

use ndarray::parallel::prelude::*;
use ndarray::{linalg::general_mat_mul, Array1, Array2, Array5, ArrayView2, ArrayView3, Axis};
use rand_chacha::ChaCha8Rng;

use super::param::Param;
use super::{conv_out_len, param::ParamWalk};
use crate::nn::ops::he_normal;

#[derive(Debug, Clone)]
pub struct Conv2dSpatial {
    pub w: Param, // (Cout, Cin, k, k)
    pub b: Option<Param>, // (Cout,); omitted when batch norm follows
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    cache: Option<Array5<f64>>,
}

impl Conv2dSpatial {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        let w = he_normal(&[c_out, c_in, kernel, kernel], fan_in, rng);
        Conv2dSpatial {
            w: Param::new(format!("{name}.w"), w),
            b: bias.then(|| Param::new(format!("{name}.b"), Array1::zeros(c_out).into_dyn())),
            kernel,
            stride,
            pad,
            cache: None,
        }
    }

    pub fn out_shape(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out_len(h, self.kernel, self.stride, self.pad),
            conv_out_len(w, self.kernel, self.stride, self.pad),
        )
    }

    pub fn forward(&mut self, x: &Array5<f64>, train: bool) -> Array5<f64> {
        let (n, t, _c, h, w) = x.dim();
        let c_out = self.w.value.shape()[0];
        let (ho, wo) = self.out_shape(h, w);
        let mut y = Array5::zeros((n, t, c_out, ho, wo));

        let w_flat = flat_weight(&self.w);
        let bias = self
            .b
            .as_ref()
            .map(|b| b.value.view().into_dimensionality::<ndarray::Ix1>().unwrap());
        let (k, s, p) = (self.kernel, self.stride, self.pad);

        y.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(x.axis_iter(Axis(0)).into_par_iter())
            .for_each(|(mut y_n, x_n)| {
                let mut col = Array2::zeros((x_n.shape()[1] * k * k, ho * wo));
                for ti in 0..t {
                    let frame = x_n.index_axis(Axis(0), ti);
                    let mut out = y_n
                        .index_axis_mut(Axis(0), ti)
                        .into_shape_with_order((c_out, ho * wo))
                        .unwrap();
                    if k == 1 && s == 1 && p == 0 {
                        let flat = frame.into_shape_with_order((frame.shape()[0], ho * wo)).unwrap();
                        general_mat_mul(1.0, &w_flat, &flat, 0.0, &mut out);
                    } else {
                        im2col(frame, k, s, p, ho, wo, &mut col);
                        general_mat_mul(1.0, &w_flat, &col.view(), 0.0, &mut out);
                    }
                    if let Some(b) = &bias {
                        for (ci, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
                            row += b[ci];
                        }
                    }
                }
            });

        if train {
            self.cache = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, gy: &Array5<f64>) -> Array5<f64> {
        self.backward_impl(gy, true)
    }

    /// Backward accumulating only parameter gradients; for the first layer
    /// of a network, where the input gradient is never consumed.
    pub fn backward_params_only(&mut self, gy: &Array5<f64>) {
        let _ = self.backward_impl(gy, false);
    }

    fn backward_impl(&mut self, gy: &Array5<f64>, need_gx: bool) -> Array5<f64> {
        let x = self.cache.take().expect("conv2d backward without forward");
        let (n, t, c, h, w) = x.dim();
        let (_, _, c_out, ho, wo) = gy.dim();
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        let w_flat = flat_weight(&self.w);

        let mut gx = Array5::zeros(if need_gx { (n, t, c, h, w) } else { (n, 0, 0, 0, 0) });
        let mut partials: Vec<(Array2<f64>, Array1<f64>)> = (0..n)
            .map(|_| (Array2::zeros((c_out, c * k * k)), Array1::zeros(c_out)))
            .collect();

        gx.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(x.axis_iter(Axis(0)).into_par_iter())
            .zip(gy.axis_iter(Axis(0)).into_par_iter())
            .zip(partials.par_iter_mut())
            .for_each(|(((mut gx_n, x_n), gy_n), (dw, db))| {
                let mut col = Array2::zeros((c * k * k, ho * wo));
                let mut dcol = Array2::zeros((c * k * k, ho * wo));
                for ti in 0..t {
                    let gy_mat = gy_n
                        .index_axis(Axis(0), ti)
                        .into_shape_with_order((c_out, ho * wo))
                        .unwrap();
                    let frame = x_n.index_axis(Axis(0), ti);
                    im2col(frame, k, s, p, ho, wo, &mut col);
                    general_mat_mul(1.0, &gy_mat, &col.view().reversed_axes(), 1.0, dw);
                    for ci in 0..c_out {
                        db[ci] += gy_mat.row(ci).sum();
                    }
                    if need_gx {
                        general_mat_mul(1.0, &w_flat.reversed_axes(), &gy_mat, 0.0, &mut dcol);
                        col2im(&dcol, k, s, p, ho, wo, gx_n.index_axis_mut(Axis(0), ti));
                    }
                }
            });

        let mut gw = self
            .w
            .grad
            .view_mut()
            .into_shape_with_order((c_out, c * k * k))
            .unwrap();
        for (dw, db) in &partials {
            gw += dw;
            if let Some(b) = &mut self.b {
                let mut gb = b.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
                gb += db;
            }
        }
        gx
    }
}

impl ParamWalk for Conv2dSpatial {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w);
        if let Some(b) = &mut self.b {
            f(b);
        }
    }
}

fn flat_weight(w: &Param) -> ArrayView2<'_, f64> {
    let sh = w.value.shape();
    w.value
        .view()
        .into_shape_with_order((sh[0], sh[1] * sh[2] * sh[3]))
        .unwrap()
}

/// Fills `col` with patches of `frame` so that `w_flat @ col` is the
/// convolution output. Out-of-bounds taps contribute zeros.
fn im2col(frame: ArrayView3<'_, f64>, k: usize, s: usize, p: usize, ho: usize, wo: usize, col: &mut Array2<f64>) {
    let (c, h, w) = frame.dim();
    let fslice = frame.to_slice().expect("contiguous frame");
    let cslice = col.as_slice_mut().expect("contiguous col");
    for ci in 0..c {
        let plane = &fslice[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row_idx = (ci * k + ky) * k + kx;
                let row = &mut cslice[row_idx * ho * wo..(row_idx + 1) * ho * wo];
                for yo in 0..ho {
                    let hi = (yo * s + ky) as isize - p as isize;
                    let seg = &mut row[yo * wo..(yo + 1) * wo];
                    if hi < 0 || hi as usize >= h {
                        seg.fill(0.0);
                        continue;
                    }
                    let src = &plane[hi as usize * w..(hi as usize + 1) * w];
                    if s == 1 {
                        // contiguous span with zero fringes where the kernel
                        // hangs past the frame edge
                        let lo = (p as isize - kx as isize).max(0) as usize;
                        let hi_x = ((w + p - kx) as usize).min(wo);
                        seg[..lo.min(wo)].fill(0.0);
                        if lo < hi_x {
                            let src_start = lo + kx - p;
                            seg[lo..hi_x].copy_from_slice(&src[src_start..src_start + (hi_x - lo)]);
                        }
                        if hi_x < wo {
                            seg[hi_x..].fill(0.0);
                        }
                    } else {
                        for (xo, out) in seg.iter_mut().enumerate() {
                            let wi = (xo * s + kx) as isize - p as isize;
                            *out = if wi < 0 || wi as usize >= w { 0.0 } else { src[wi as usize] };
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `dcol` back onto the input frame gradient.
fn col2im(dcol: &Array2<f64>, k: usize, s: usize, p: usize, ho: usize, wo: usize, mut gframe: ndarray::ArrayViewMut3<'_, f64>) {
    let (c, h, w) = gframe.dim();
    let gslice = gframe.as_slice_mut().expect("contiguous gframe");
    let dslice = dcol.as_slice().expect("contiguous dcol");
    for ci in 0..c {
        let plane = &mut gslice[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &dslice[((ci * k + ky) * k + kx) * ho * wo..((ci * k + ky) * k + kx + 1) * ho * wo];
                for yo in 0..ho {
                    let hi = (yo * s + ky) as isize - p as isize;
                    if hi < 0 || hi as usize >= h {
                        continue;
                    }
                    let dst = &mut plane[hi as usize * w..(hi as usize + 1) * w];
                    let seg = &row[yo * wo..(yo + 1) * wo];
                    if s == 1 {
                        let lo = (p as isize - kx as isize).max(0) as usize;
                        let hi_x = ((w + p - kx) as usize).min(wo);
                        if lo < hi_x {
                            let dst_start = lo + kx - p;
                            for i in 0..hi_x - lo {
                                dst[dst_start + i] += seg[lo + i];
                            }
                        }
                    } else {
                        for (xo, &v) in seg.iter().enumerate() {
                            let wi = (xo * s + kx) as isize - p as isize;
                            if wi >= 0 && (wi as usize) < w {
                                dst[wi as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}
