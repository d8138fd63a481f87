//! Finite-difference gradient verification against the analytic backward
//! passes. Used by unit tests and the acceptance suite; independent of the
//! backward implementations it checks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::param::ParamWalk;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_err: f64,
    pub worst_param: String,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares analytic gradients against central finite differences on
/// `probes` randomly chosen trainable parameter entries.
///
/// `run_backward` must run forward + backward and return the loss, leaving
/// gradients populated; `loss_only` must evaluate the identical loss without
/// touching gradients. Both must be deterministic functions of the model
/// parameters.
pub fn check_gradients<M: ParamWalk>(
    model: &mut M,
    run_backward: &mut dyn FnMut(&mut M) -> f64,
    loss_only: &mut dyn FnMut(&mut M) -> f64,
    probes: usize,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> GradCheckReport {
    model.zero_grads();
    run_backward(model);

    // Enumerate trainable entries once to draw probe targets.
    let mut sizes: Vec<(String, usize)> = Vec::new();
    model.visit_params(&mut |p| {
        if p.trainable {
            sizes.push((p.name.clone(), p.value.len()));
        }
    });
    let total: usize = sizes.iter().map(|(_, n)| n).sum();
    assert!(total > 0, "no trainable parameters");

    let mut targets: Vec<(usize, usize)> = (0..probes)
        .map(|_| {
            let mut flat = rng.gen_range(0..total);
            let mut pi = 0;
            while flat >= sizes[pi].1 {
                flat -= sizes[pi].1;
                pi += 1;
            }
            (pi, flat)
        })
        .collect();
    targets.sort_unstable();
    targets.dedup();

    let analytic: Vec<f64> = targets
        .iter()
        .map(|&(pi, idx)| {
            let mut val = 0.0;
            let mut seen = 0;
            model.visit_params(&mut |p| {
                if p.trainable {
                    if seen == pi {
                        val = p.grad.as_slice().unwrap()[idx];
                    }
                    seen += 1;
                }
            });
            val
        })
        .collect();

    let mut report = GradCheckReport {
        probes: targets.len(),
        max_rel_err: 0.0,
        worst_param: String::new(),
    };

    for (k, &(pi, idx)) in targets.iter().enumerate() {
        let nudge = |model: &mut M, delta: f64| {
            let mut seen = 0;
            model.visit_params(&mut |p| {
                if p.trainable {
                    if seen == pi {
                        p.value.as_slice_mut().unwrap()[idx] += delta;
                    }
                    seen += 1;
                }
            });
        };
        nudge(model, eps);
        let plus = loss_only(model);
        nudge(model, -2.0 * eps);
        let minus = loss_only(model);
        nudge(model, eps);
        let numeric = (plus - minus) / (2.0 * eps);
        let err = relative_error(analytic[k], numeric);
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_param = format!("{}[{}]", sizes[pi].0, idx);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{BatchNorm3d, Conv1dTemporal, Conv2dSpatial, Param, Relu};
    use ndarray::{Array5, Ix5};
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    struct MiniNet {
        c2: Conv2dSpatial,
        bn: BatchNorm3d,
        relu: Relu<Ix5>,
        c1: Conv1dTemporal,
        x: Array5<f64>,
        readout: Array5<f64>,
    }

    impl MiniNet {
        fn new() -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let c2 = Conv2dSpatial::new("c2", 2, 3, 3, 2, 1, false, &mut rng);
            let bn = BatchNorm3d::new("bn", 3);
            let c1 = Conv1dTemporal::new("c1", 3, 4, 3, 2, 0, true, &mut rng);
            let normal = Normal::new(0.0, 1.0).unwrap();
            let x = Array5::from_shape_simple_fn((2, 6, 2, 7, 7), || normal.sample(&mut rng));
            let readout = Array5::from_shape_simple_fn((2, 2, 4, 4, 4), || normal.sample(&mut rng));
            MiniNet {
                c2,
                bn,
                relu: Relu::new(),
                c1,
                x,
                readout,
            }
        }

        fn forward(&mut self) -> Array5<f64> {
            let x = self.x.clone();
            let h = self.c2.forward(&x, true);
            let h = self.bn.forward(&h, true);
            let h = self.relu.forward(&h, true);
            self.c1.forward(&h, true)
        }

        fn loss(&mut self) -> f64 {
            let y = self.forward();
            (&y * &self.readout).sum()
        }

        fn loss_and_backward(&mut self) -> f64 {
            let y = self.forward();
            let loss = (&y * &self.readout).sum();
            let g = self.readout.clone();
            let g = self.c1.backward(&g);
            let g = self.relu.backward(&g);
            let g = self.bn.backward(&g);
            let _ = self.c2.backward(&g);
            loss
        }
    }

    impl ParamWalk for MiniNet {
        fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param)) {
            self.c2.visit_params(f);
            self.bn.visit_params(f);
            self.c1.visit_params(f);
        }
    }

    #[test]
    fn conv_bn_relu_stack_matches_finite_differences() {
        let mut net = MiniNet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let report = check_gradients(
            &mut net,
            &mut |m| m.loss_and_backward(),
            &mut |m| m.loss(),
            60,
            1e-6,
            &mut rng,
        );
        assert!(
            report.max_rel_err < 1e-5,
            "max rel err {} at {}",
            report.max_rel_err,
            report.worst_param
        );
    }
}
