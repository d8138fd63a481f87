//! Dense layer over `(rows, features)` matrices.

use ndarray::{linalg::general_mat_mul, Array1, Array2};
use rand_chacha::ChaCha8Rng;

use super::ops::he_normal;
use super::param::{Param, ParamWalk};

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Param, // (out, in)
    pub b: Param, // (out,)
    cache: Option<Array2<f64>>,
}

impl Linear {
    pub fn new(name: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            w: Param::new(format!("{name}.w"), he_normal(&[d_out, d_in], d_in, rng)),
            b: Param::new(format!("{name}.b"), Array1::zeros(d_out).into_dyn()),
            cache: None,
        }
    }

    fn w2(&self) -> ndarray::ArrayView2<'_, f64> {
        self.w.value.view().into_dimensionality::<ndarray::Ix2>().unwrap()
    }

    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> Array2<f64> {
        let (rows, _) = x.dim();
        let d_out = self.w.value.shape()[0];
        let mut y = Array2::zeros((rows, d_out));
        general_mat_mul(1.0, x, &self.w2().reversed_axes(), 0.0, &mut y);
        let b = self.b.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        for mut row in y.rows_mut() {
            row += &b;
        }
        if train {
            self.cache = Some(x.clone());
        }
        y
    }

    pub fn backward(&mut self, gy: &Array2<f64>) -> Array2<f64> {
        let x = self.cache.take().expect("linear backward without forward");
        {
            let mut gw = self.w.grad.view_mut().into_dimensionality::<ndarray::Ix2>().unwrap();
            general_mat_mul(1.0, &gy.view().reversed_axes(), &x.view(), 1.0, &mut gw);
            let mut gb = self.b.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            gb += &gy.sum_axis(ndarray::Axis(0));
        }
        let (rows, _) = gy.dim();
        let d_in = self.w.value.shape()[1];
        let mut gx = Array2::zeros((rows, d_in));
        general_mat_mul(1.0, gy, &self.w2(), 0.0, &mut gx);
        gx
    }
}

impl ParamWalk for Linear {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w);
        f(&mut self.b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::SeedableRng;

    #[test]
    fn forward_matches_manual_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut lin = Linear::new("l", 2, 2, &mut rng);
        lin.w.value = arr2(&[[1.0, 2.0], [3.0, 4.0]]).into_dyn();
        lin.b.value = ndarray::arr1(&[0.5, -0.5]).into_dyn();
        let x = arr2(&[[1.0, 1.0]]);
        let y = lin.forward(&x, false);
        assert_eq!(y, arr2(&[[3.5, 6.5]]));
    }
}
