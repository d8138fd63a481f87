//! Pointwise layers and weight initialization.

use ndarray::{Array, Array2, ArrayD, Dimension, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// He-normal initialization for conv/linear weights.
pub fn he_normal(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid normal");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng))
}

/// ReLU with a cached activation mask, generic over array dimension.
#[derive(Debug, Clone, Default)]
pub struct Relu<D: Dimension> {
    mask: Option<Array<u8, D>>,
}

impl<D: Dimension> Relu<D> {
    pub fn new() -> Self {
        Relu { mask: None }
    }

    pub fn forward(&mut self, x: &Array<f64, D>, train: bool) -> Array<f64, D> {
        self.forward_owned(x.clone(), train)
    }

    /// In-place variant used when the caller is done with `x`.
    pub fn forward_owned(&mut self, mut y: Array<f64, D>, train: bool) -> Array<f64, D> {
        if train {
            let mut mask = Array::<u8, D>::zeros(y.raw_dim());
            let ys = y.as_slice_mut().expect("relu expects standard layout");
            let ms = mask.as_slice_mut().unwrap();
            for (v, m) in ys.iter_mut().zip(ms.iter_mut()) {
                if *v > 0.0 {
                    *m = 1;
                } else {
                    *v = 0.0;
                }
            }
            self.mask = Some(mask);
        } else {
            for v in y.as_slice_mut().expect("relu expects standard layout") {
                if *v <= 0.0 {
                    *v = 0.0;
                }
            }
        }
        y
    }

    pub fn backward(&mut self, gy: &Array<f64, D>) -> Array<f64, D> {
        let mask = self.mask.take().expect("relu backward without forward");
        let mut gx = gy.clone();
        let gs = gx.as_slice_mut().expect("relu expects standard layout");
        for (g, &m) in gs.iter_mut().zip(mask.as_slice().unwrap()) {
            if m == 0 {
                *g = 0.0;
            }
        }
        gx
    }
}

/// Inverted dropout over feature rows; identity in eval mode.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
    mask: Option<Array2<f64>>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout p must be in [0,1)");
        Dropout { p, mask: None }
    }

    pub fn forward(&mut self, x: &Array2<f64>, train: bool, rng: &mut ChaCha8Rng) -> Array2<f64> {
        if !train || self.p == 0.0 {
            return x.clone();
        }
        let keep = 1.0 - self.p;
        let mask = Array2::from_shape_simple_fn(x.dim(), || {
            if rng.gen::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let y = x * &mask;
        self.mask = Some(mask);
        y
    }

    pub fn backward(&mut self, gy: &Array2<f64>) -> Array2<f64> {
        match self.mask.take() {
            Some(mask) => gy * &mask,
            None => gy.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::SeedableRng;

    #[test]
    fn relu_masks_negative() {
        let mut relu = Relu::new();
        let x = arr2(&[[-1.0, 2.0], [0.0, -3.0]]);
        let y = relu.forward(&x, true);
        assert_eq!(y, arr2(&[[0.0, 2.0], [0.0, 0.0]]));
        let g = relu.backward(&arr2(&[[1.0, 1.0], [1.0, 1.0]]));
        assert_eq!(g, arr2(&[[0.0, 1.0], [0.0, 0.0]]));
    }

    #[test]
    fn dropout_eval_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut drop = Dropout::new(0.5);
        let x = arr2(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(drop.forward(&x, false, &mut rng), x);
    }
}
