//! Batch normalization over video activations and over flat feature rows.
//!
//! Normalization uses biased batch variance; running statistics (updated with
//! momentum 0.1 in training mode) are stored as buffers so checkpoints and
//! eval-mode forwards see them.
//!
//! The 5D variant views `(N, T, C, H, W)` as `(N*T, C, H*W)` so every
//! per-channel pass runs over contiguous rows; per-channel reductions are
//! serial per channel (parallel across channels), keeping sums bit-exact
//! regardless of thread count.

use ndarray::parallel::prelude::*;
use ndarray::{Array1, Array2, Array5, ArrayView3, Axis};

use super::param::{Param, ParamWalk};

const MOMENTUM: f64 = 0.1;
const EPS: f64 = 1e-5;

fn as3(x: &Array5<f64>) -> ArrayView3<'_, f64> {
    let (n, t, c, h, w) = x.dim();
    x.view().into_shape_with_order((n * t, c, h * w)).unwrap()
}

fn channel_stats(x: ArrayView3<'_, f64>) -> (Array1<f64>, Array1<f64>) {
    let (rows, c, inner) = x.dim();
    let count = (rows * inner) as f64;
    let mut mean = Array1::zeros(c);
    let mut var = Array1::zeros(c);
    mean.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(var.axis_iter_mut(Axis(0)).into_par_iter())
        .enumerate()
        .for_each(|(ci, (mut m, mut v))| {
            let mut sum = 0.0;
            for r in 0..rows {
                sum += x.index_axis(Axis(0), r).row(ci).sum();
            }
            let mu = sum / count;
            let mut sq = 0.0;
            for r in 0..rows {
                for &e in x.index_axis(Axis(0), r).row(ci) {
                    let d = e - mu;
                    sq += d * d;
                }
            }
            m.fill(mu);
            v.fill(sq / count);
        });
    (mean, var)
}

/// Per-channel batch norm over the `(N, T, H, W)` axes of `(N, T, C, H, W)`.
#[derive(Debug, Clone)]
pub struct BatchNorm3d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    /// Normalize with running statistics even in training mode (and stop
    /// updating them); parameters still train.
    pub frozen_stats: bool,
    cache: Option<Cache5>,
}

#[derive(Debug, Clone)]
struct Cache5 {
    xhat: Array5<f64>,
    inv_std: Array1<f64>,
    batch_stats: bool,
}

impl BatchNorm3d {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm3d {
            gamma: Param::new(format!("{name}.gamma"), Array1::ones(channels).into_dyn()),
            beta: Param::new(format!("{name}.beta"), Array1::zeros(channels).into_dyn()),
            running_mean: Param::buffer(format!("{name}.running_mean"), Array1::zeros(channels).into_dyn()),
            running_var: Param::buffer(format!("{name}.running_var"), Array1::ones(channels).into_dyn()),
            frozen_stats: false,
            cache: None,
        }
    }

    fn vec1(p: &Param) -> Array1<f64> {
        p.value.view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned()
    }

    pub fn forward(&mut self, x: &Array5<f64>, train: bool) -> Array5<f64> {
        let dim = x.dim();
        let (_n, _t, c, _h, _w) = dim;
        let x3 = as3(x);
        let batch_stats = train && !self.frozen_stats;

        let (mean, var) = if batch_stats {
            let (mean, var) = channel_stats(x3);
            let mut rm = self.running_mean.value.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            let mut rv = self.running_var.value.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            rm.zip_mut_with(&mean, |r, &b| *r = (1.0 - MOMENTUM) * *r + MOMENTUM * b);
            rv.zip_mut_with(&var, |r, &b| *r = (1.0 - MOMENTUM) * *r + MOMENTUM * b);
            (mean, var)
        } else {
            (Self::vec1(&self.running_mean), Self::vec1(&self.running_var))
        };

        let inv_std = var.mapv(|v| 1.0 / (v + EPS).sqrt());
        let gamma = Self::vec1(&self.gamma);
        let beta = Self::vec1(&self.beta);

        let mut y = Array5::zeros(dim);
        if train {
            let mut xhat = Array5::zeros(dim);
            {
                let (n, t, _, h, w) = dim;
                let mut y3 = y.view_mut().into_shape_with_order((n * t, c, h * w)).unwrap();
                let mut xh3 = xhat.view_mut().into_shape_with_order((n * t, c, h * w)).unwrap();
                y3.axis_iter_mut(Axis(0))
                    .into_par_iter()
                    .zip(xh3.axis_iter_mut(Axis(0)).into_par_iter())
                    .zip(x3.axis_iter(Axis(0)).into_par_iter())
                    .for_each(|((mut yr, mut xhr), xr)| {
                        for ci in 0..c {
                            let (mu, inv, g, b) = (mean[ci], inv_std[ci], gamma[ci], beta[ci]);
                            let xs = xr.row(ci);
                            let xs = xs.to_slice().unwrap();
                            let ys = yr.row_mut(ci).into_slice().unwrap();
                            let xhs = xhr.row_mut(ci).into_slice().unwrap();
                            for ((y, xh), &xi) in ys.iter_mut().zip(xhs.iter_mut()).zip(xs.iter()) {
                                let v = (xi - mu) * inv;
                                *xh = v;
                                *y = g * v + b;
                            }
                        }
                    });
            }
            self.cache = Some(Cache5 { xhat, inv_std, batch_stats });
        } else {
            let (n, t, _, h, w) = dim;
            let mut y3 = y.view_mut().into_shape_with_order((n * t, c, h * w)).unwrap();
            y3.axis_iter_mut(Axis(0))
                .into_par_iter()
                .zip(x3.axis_iter(Axis(0)).into_par_iter())
                .for_each(|(mut yr, xr)| {
                    for ci in 0..c {
                        let (mu, inv, g, b) = (mean[ci], inv_std[ci], gamma[ci], beta[ci]);
                        let xs = xr.row(ci);
                        let xs = xs.to_slice().unwrap();
                        let ys = yr.row_mut(ci).into_slice().unwrap();
                        for (y, &xi) in ys.iter_mut().zip(xs.iter()) {
                            *y = g * (xi - mu) * inv + b;
                        }
                    }
                });
        }
        y
    }

    pub fn backward(&mut self, gy: &Array5<f64>) -> Array5<f64> {
        let Cache5 { xhat, inv_std, batch_stats } = self.cache.take().expect("bn3d backward without forward");
        let dim = xhat.dim();
        let (n, t, c, h, w) = dim;
        let count = (n * t * h * w) as f64;
        let gamma = Self::vec1(&self.gamma);
        let gy3 = as3(gy);
        let xh3 = as3(&xhat);

        // per-channel reductions
        let mut sum_gy = Array1::zeros(c);
        let mut sum_gy_xh = Array1::zeros(c);
        sum_gy
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .zip(sum_gy_xh.axis_iter_mut(Axis(0)).into_par_iter())
            .enumerate()
            .for_each(|(ci, (mut sg, mut sgx))| {
                let mut a = 0.0;
                let mut b = 0.0;
                for r in 0..n * t {
                    let gs = gy3.index_axis(Axis(0), r);
                    let xs = xh3.index_axis(Axis(0), r);
                    let grow = gs.row(ci);
                    let grow = grow.to_slice().unwrap();
                    let xrow = xs.row(ci);
                    let xrow = xrow.to_slice().unwrap();
                    for (g, xh) in grow.iter().zip(xrow.iter()) {
                        a += g;
                        b += g * xh;
                    }
                }
                sg.fill(a);
                sgx.fill(b);
            });

        {
            let mut gg = self.gamma.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            let mut gb = self.beta.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            gg += &sum_gy_xh;
            gb += &sum_gy;
        }

        let mut gx = Array5::zeros(dim);
        {
            let mut gx3 = gx.view_mut().into_shape_with_order((n * t, c, h * w)).unwrap();
            gx3.axis_iter_mut(Axis(0))
                .into_par_iter()
                .zip(gy3.axis_iter(Axis(0)).into_par_iter())
                .zip(xh3.axis_iter(Axis(0)).into_par_iter())
                .for_each(|((mut gr, gys), xhs)| {
                    for ci in 0..c {
                        let scale = gamma[ci] * inv_std[ci];
                        // frozen stats are constants: no mean correction terms
                        let mean_gy = if batch_stats { sum_gy[ci] / count } else { 0.0 };
                        let mean_gy_xh = if batch_stats { sum_gy_xh[ci] / count } else { 0.0 };
                        let gyr = gys.row(ci);
                        let gyr = gyr.to_slice().unwrap();
                        let xhr = xhs.row(ci);
                        let xhr = xhr.to_slice().unwrap();
                        let out = gr.row_mut(ci).into_slice().unwrap();
                        for ((o, &g), &xh) in out.iter_mut().zip(gyr.iter()).zip(xhr.iter()) {
                            *o = scale * (g - mean_gy - xh * mean_gy_xh);
                        }
                    }
                });
        }
        gx
    }
}

impl ParamWalk for BatchNorm3d {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

/// Per-column batch norm over the rows of a `(rows, C)` matrix.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub frozen_stats: bool,
    cache: Option<(Array2<f64>, Array1<f64>, bool)>,
}

impl BatchNorm1d {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm1d {
            gamma: Param::new(format!("{name}.gamma"), Array1::ones(channels).into_dyn()),
            beta: Param::new(format!("{name}.beta"), Array1::zeros(channels).into_dyn()),
            running_mean: Param::buffer(format!("{name}.running_mean"), Array1::zeros(channels).into_dyn()),
            running_var: Param::buffer(format!("{name}.running_var"), Array1::ones(channels).into_dyn()),
            frozen_stats: false,
            cache: None,
        }
    }

    fn vec1(p: &Param) -> Array1<f64> {
        p.value.view().into_dimensionality::<ndarray::Ix1>().unwrap().to_owned()
    }

    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> Array2<f64> {
        let (rows, c) = x.dim();
        let count = rows as f64;
        let batch_stats = train && !self.frozen_stats;
        let (mean, var) = if batch_stats {
            let mean = x.sum_axis(Axis(0)) / count;
            let mut var = Array1::zeros(c);
            for ci in 0..c {
                let mu = mean[ci];
                var[ci] = x.column(ci).fold(0.0, |acc, &e| acc + (e - mu) * (e - mu)) / count;
            }
            let mut rm = self.running_mean.value.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            let mut rv = self.running_var.value.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            rm.zip_mut_with(&mean, |r, &b| *r = (1.0 - MOMENTUM) * *r + MOMENTUM * b);
            rv.zip_mut_with(&var, |r, &b| *r = (1.0 - MOMENTUM) * *r + MOMENTUM * b);
            (mean, var)
        } else {
            (Self::vec1(&self.running_mean), Self::vec1(&self.running_var))
        };

        let inv_std = var.mapv(|v| 1.0 / (v + EPS).sqrt());
        let gamma = Self::vec1(&self.gamma);
        let beta = Self::vec1(&self.beta);

        let mut xhat = Array2::zeros((rows, c));
        let mut y = Array2::zeros((rows, c));
        for ci in 0..c {
            let (mu, inv, g, b) = (mean[ci], inv_std[ci], gamma[ci], beta[ci]);
            ndarray::Zip::from(y.column_mut(ci))
                .and(xhat.column_mut(ci))
                .and(x.column(ci))
                .for_each(|yo, xh, &xi| {
                    let v = (xi - mu) * inv;
                    *xh = v;
                    *yo = g * v + b;
                });
        }
        if train {
            self.cache = Some((xhat, inv_std, batch_stats));
        }
        y
    }

    pub fn backward(&mut self, gy: &Array2<f64>) -> Array2<f64> {
        let (xhat, inv_std, batch_stats) = self.cache.take().expect("bn1d backward without forward");
        let (rows, c) = xhat.dim();
        let count = rows as f64;
        let gamma = Self::vec1(&self.gamma);
        let mut gx = Array2::zeros((rows, c));
        let mut gg = self.gamma.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut gb = self.beta.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
        for ci in 0..c {
            let gy_c = gy.column(ci);
            let xh_c = xhat.column(ci);
            let sum_gy = gy_c.sum();
            let sum_gy_xh = gy_c.iter().zip(xh_c.iter()).fold(0.0, |acc, (&g, &xh)| acc + g * xh);
            gg[ci] += sum_gy_xh;
            gb[ci] += sum_gy;
            let scale = gamma[ci] * inv_std[ci];
            let mean_gy = if batch_stats { sum_gy / count } else { 0.0 };
            let mean_gy_xh = if batch_stats { sum_gy_xh / count } else { 0.0 };
            ndarray::Zip::from(gx.column_mut(ci))
                .and(&gy_c)
                .and(&xh_c)
                .for_each(|go, &g, &xh| {
                    *go = scale * (g - mean_gy - xh * mean_gy_xh);
                });
        }
        gx
    }
}

impl ParamWalk for BatchNorm1d {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}
