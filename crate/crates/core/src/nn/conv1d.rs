//! Temporal 1D convolution mixing channels across time steps of a
//! `(N, T, C, H, W)` activation tensor, one GEMM per kernel tap.

use ndarray::parallel::prelude::*;
use ndarray::{linalg::general_mat_mul, Array1, Array3, Array5, ArrayView2, Axis};
use rand_chacha::ChaCha8Rng;

use super::param::{Param, ParamWalk};
use super::conv_out_len;
use crate::nn::ops::he_normal;

#[derive(Debug, Clone)]
pub struct Conv1dTemporal {
    pub w: Param, // (Cout, Cin, kt)
    pub b: Option<Param>, // (Cout,); omitted when batch norm follows
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    cache: Option<Array5<f64>>,
}

impl Conv1dTemporal {
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
        let w = he_normal(&[c_out, c_in, kernel], c_in * kernel, rng);
        Conv1dTemporal {
            w: Param::new(format!("{name}.w"), w),
            b: bias.then(|| Param::new(format!("{name}.b"), Array1::zeros(c_out).into_dyn())),
            kernel,
            stride,
            pad,
            cache: None,
        }
    }

    pub fn out_len(&self, t: usize) -> usize {
        conv_out_len(t, self.kernel, self.stride, self.pad)
    }

    fn tap(&self, dt: usize) -> ArrayView2<'_, f64> {
        self.w
            .value
            .view()
            .into_dimensionality::<ndarray::Ix3>()
            .unwrap()
            .index_axis_move(Axis(2), dt)
    }

    pub fn forward(&mut self, x: &Array5<f64>, train: bool) -> Array5<f64> {
        let (n, t, _c, h, w) = x.dim();
        let c_out = self.w.value.shape()[0];
        let to = self.out_len(t);
        let mut y = Array5::zeros((n, to, c_out, h, w));
        let bias = self
            .b
            .as_ref()
            .map(|b| b.value.view().into_dimensionality::<ndarray::Ix1>().unwrap());
        let (k, s, p) = (self.kernel, self.stride, self.pad);

        y.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(x.axis_iter(Axis(0)).into_par_iter())
            .for_each(|(mut y_n, x_n)| {
                for ti in 0..to {
                    let mut out = y_n
                        .index_axis_mut(Axis(0), ti)
                        .into_shape_with_order((c_out, h * w))
                        .unwrap();
                    match &bias {
                        Some(b) => {
                            for (ci, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
                                row.fill(b[ci]);
                            }
                        }
                        None => out.fill(0.0),
                    }
                    for dt in 0..k {
                        let src = (ti * s + dt) as isize - p as isize;
                        if src < 0 || src as usize >= t {
                            continue;
                        }
                        let frame = x_n
                            .index_axis(Axis(0), src as usize)
                            .into_shape_with_order((x_n.shape()[1], h * w))
                            .unwrap();
                        general_mat_mul(1.0, &self.tap(dt), &frame, 1.0, &mut out);
                    }
                }
            });

        if train {
            self.cache = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, gy: &Array5<f64>) -> Array5<f64> {
        let x = self.cache.take().expect("conv1d backward without forward");
        let (n, t, c, h, w) = x.dim();
        let (_, to, c_out, _, _) = gy.dim();
        let (k, s, p) = (self.kernel, self.stride, self.pad);

        let mut gx = Array5::zeros((n, t, c, h, w));
        let mut partials: Vec<(Array3<f64>, Array1<f64>)> = (0..n)
            .map(|_| (Array3::zeros((c_out, c, k)), Array1::zeros(c_out)))
            .collect();

        gx.axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(x.axis_iter(Axis(0)).into_par_iter())
            .zip(gy.axis_iter(Axis(0)).into_par_iter())
            .zip(partials.par_iter_mut())
            .for_each(|(((mut gx_n, x_n), gy_n), (dw, db))| {
                for ti in 0..to {
                    let gy_mat = gy_n
                        .index_axis(Axis(0), ti)
                        .into_shape_with_order((c_out, h * w))
                        .unwrap();
                    for ci in 0..c_out {
                        db[ci] += gy_mat.row(ci).sum();
                    }
                    for dt in 0..k {
                        let src = (ti * s + dt) as isize - p as isize;
                        if src < 0 || src as usize >= t {
                            continue;
                        }
                        let frame = x_n
                            .index_axis(Axis(0), src as usize)
                            .into_shape_with_order((c, h * w))
                            .unwrap();
                        let mut dw_tap = dw.index_axis_mut(Axis(2), dt);
                        general_mat_mul(1.0, &gy_mat, &frame.reversed_axes(), 1.0, &mut dw_tap);
                        let mut gx_frame = gx_n
                            .index_axis_mut(Axis(0), src as usize)
                            .into_shape_with_order((c, h * w))
                            .unwrap();
                        let w_tap = self
                            .w
                            .value
                            .view()
                            .into_dimensionality::<ndarray::Ix3>()
                            .unwrap()
                            .index_axis_move(Axis(2), dt);
                        general_mat_mul(1.0, &w_tap.reversed_axes(), &gy_mat, 1.0, &mut gx_frame);
                    }
                }
            });

        let mut gw = self.w.grad.view_mut().into_dimensionality::<ndarray::Ix3>().unwrap();
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

impl ParamWalk for Conv1dTemporal {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w);
        if let Some(b) = &mut self.b {
            f(b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn temporal_stride_halves_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv1dTemporal::new("t", 4, 6, 5, 2, 2, true, &mut rng);
        let x = Array5::zeros((1, 32, 4, 8, 8));
        let y = conv.forward(&x, false);
        assert_eq!(y.dim(), (1, 16, 6, 8, 8));
    }

    #[test]
    fn kernel_one_is_channel_mix() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv1dTemporal::new("t", 2, 2, 1, 1, 0, true, &mut rng);
        conv.b.as_mut().unwrap().value.fill(0.0);
        let mut w = conv.w.value.view_mut().into_dimensionality::<ndarray::Ix3>().unwrap();
        w.fill(0.0);
        w[[0, 1, 0]] = 1.0;
        w[[1, 0, 0]] = 1.0;
        let x = Array5::from_shape_fn((1, 3, 2, 2, 2), |(_, t, c, h, w)| (t * 8 + c * 4 + h * 2 + w) as f64);
        let y = conv.forward(&x, false);
        // channels swapped
        for t in 0..3 {
            for h in 0..2 {
                for w in 0..2 {
                    assert_eq!(y[[0, t, 0, h, w]], x[[0, t, 1, h, w]]);
                    assert_eq!(y[[0, t, 1, h, w]], x[[0, t, 0, h, w]]);
                }
            }
        }
    }
}
