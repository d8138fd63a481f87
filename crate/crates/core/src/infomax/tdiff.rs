//! Temporal-difference features: consequent feature grids are split into
//! first/second temporal halves and their element-wise difference goes to
//! the contrastive model.

use ndarray::{s, Array5};

use crate::error::{Result, VdimError};

/// `second_half - first_half` along the temporal axis of `(B, T, C, X, Y)`;
/// output temporal extent is `T/2`. Errors on odd `T`.
pub fn temporal_difference(features: &Array5<f64>) -> Result<Array5<f64>> {
    let (_b, t, _c, _x, _y) = features.dim();
    if t % 2 != 0 {
        return Err(VdimError::invalid(format!(
            "temporal difference needs an even temporal extent, got {t}"
        )));
    }
    let half = t / 2;
    let first = features.slice(s![.., ..half, .., .., ..]);
    let second = features.slice(s![.., half.., .., .., ..]);
    Ok(&second - &first)
}

/// Backward of [`temporal_difference`]: routes `+g` to the second half and
/// `-g` to the first.
pub fn temporal_difference_backward(grad: &Array5<f64>, input_t: usize) -> Array5<f64> {
    let (b, half, c, x, y) = grad.dim();
    debug_assert_eq!(half * 2, input_t);
    let mut gx = Array5::zeros((b, input_t, c, x, y));
    gx.slice_mut(s![.., ..half, .., .., ..]).assign(&(-grad));
    gx.slice_mut(s![.., half.., .., .., ..]).assign(grad);
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_in_time_gives_zero() {
        let x = Array5::from_elem((2, 4, 3, 2, 2), 0.7);
        let d = temporal_difference(&x).unwrap();
        assert_eq!(d.dim(), (2, 2, 3, 2, 2));
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn t2_gives_single_slice_difference() {
        let mut x = Array5::zeros((1, 2, 1, 1, 1));
        x[[0, 0, 0, 0, 0]] = 1.5;
        x[[0, 1, 0, 0, 0]] = 4.0;
        let d = temporal_difference(&x).unwrap();
        assert_eq!(d.dim().1, 1);
        assert_eq!(d[[0, 0, 0, 0, 0]], 2.5);
    }

    #[test]
    fn linear_in_time_gives_constant_offset() {
        // f(t) = a*t with halves offset by T/2 frames: difference = a*T/2
        let a = 0.25;
        let t = 6;
        let x = Array5::from_shape_fn((1, t, 2, 2, 2), |(_, ti, _, _, _)| a * ti as f64);
        let d = temporal_difference(&x).unwrap();
        let expect = a * (t / 2) as f64;
        for &v in d.iter() {
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn odd_t_errors() {
        let x = Array5::zeros((1, 3, 1, 1, 1));
        assert!(temporal_difference(&x).is_err());
    }

    #[test]
    fn backward_routes_signs() {
        let x = Array5::from_shape_fn((1, 4, 1, 1, 1), |(_, t, _, _, _)| (t * t) as f64);
        let g = Array5::ones((1, 2, 1, 1, 1));
        let gx = temporal_difference_backward(&g, x.dim().1);
        assert_eq!(gx[[0, 0, 0, 0, 0]], -1.0);
        assert_eq!(gx[[0, 1, 0, 0, 0]], -1.0);
        assert_eq!(gx[[0, 2, 0, 0, 0]], 1.0);
        assert_eq!(gx[[0, 3, 0, 0, 0]], 1.0);
    }
}
