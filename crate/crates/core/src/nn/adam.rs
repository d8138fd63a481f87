//! Adam optimizer driving any [`ParamWalk`] model.

use super::param::ParamWalk;

#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step_count: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step_count: 0,
        }
    }

    /// One update over every trainable parameter; gradients are consumed
    /// (zeroed) afterwards by the caller.
    pub fn step<M: ParamWalk + ?Sized>(&mut self, model: &mut M) {
        self.step_count += 1;
        let t = self.step_count as f64;
        let bias1 = 1.0 - self.beta1.powf(t);
        let bias2 = 1.0 - self.beta2.powf(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        model.visit_params(&mut |p| {
            if !p.trainable {
                return;
            }
            ndarray::Zip::from(&mut p.value)
                .and(&mut p.m)
                .and(&mut p.v)
                .and(&p.grad)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bias1;
                    let v_hat = *v / bias2;
                    *w -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::Param;
    use ndarray::arr1;

    struct One(Param);
    impl ParamWalk for One {
        fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
            f(&mut self.0);
        }
    }

    #[test]
    fn zero_lr_leaves_params_unchanged() {
        let mut m = One(Param::new("p", arr1(&[1.0, -2.0]).into_dyn()));
        m.0.grad.fill(3.0);
        let before = m.0.value.clone();
        let mut opt = Adam::new(0.0);
        for _ in 0..5 {
            opt.step(&mut m);
        }
        assert_eq!(m.0.value, before);
    }

    #[test]
    fn gradient_descends_quadratic() {
        // minimize (w - 3)^2
        let mut m = One(Param::new("p", arr1(&[0.0]).into_dyn()));
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let w = m.0.value[[0]];
            m.0.grad[[0]] = 2.0 * (w - 3.0);
            opt.step(&mut m);
            m.0.zero_grad();
        }
        assert!((m.0.value[[0]] - 3.0).abs() < 1e-3);
    }
}
