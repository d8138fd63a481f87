//! Fast invariant suite behind `vdim selfcheck`: block-shape conformance,
//! infoNCE against a scalar reference, receptive-field locality probes, and
//! the Lab round trip. Prints one pass/fail line per check.

use ndarray::Array5;
use rand::Rng;

use crate::encoder::{receptive_field, Encoder, EncoderSpec};
use crate::error::Result;
use crate::infomax::{infonce, NegativeMode, PairScores};
use crate::seeding::rng_from;
use crate::view::color::{lab_raw_to_rgb, rgb_to_lab_raw};

pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Scalar reference evaluation of the bound: explicit loops over samples,
/// locations and layer pairs, independent of the vectorized path.
fn scalar_reference_loss(pairs: &[PairScores], mode: NegativeMode) -> f64 {
    let mut total = 0.0;
    let mut tuples = 0usize;
    for p in pairs {
        for b in 0..p.batch {
            for i in 0..p.nj {
                for ip in 0..p.njp {
                    let s_pos = p.positive(b, i, ip);
                    let mut denom = 0.0;
                    match mode {
                        NegativeMode::AllConsequentLocations => {
                            for bp in 0..p.batch {
                                for ipp in 0..p.njp {
                                    denom += p.negative(b, bp, i, ipp).exp();
                                }
                            }
                        }
                        NegativeMode::FixedPair => {
                            for bp in 0..p.batch {
                                denom += p.negative(b, bp, i, ip).exp();
                            }
                        }
                    }
                    total += s_pos.exp().ln() - denom.ln();
                    tuples += 1;
                }
            }
        }
    }
    -(total / tuples as f64)
}

fn check_block_shapes() -> CheckOutcome {
    let run = || -> Result<(Vec<(usize, usize, usize, usize)>, Vec<(usize, usize, usize, usize)>)> {
        let spec = EncoderSpec::full();
        let mut enc = Encoder::build(spec.clone(), &mut rng_from(&[1]))?;
        Ok((enc.probe_shapes(1)?, spec.expected_shapes))
    };
    match run() {
        Ok((got, want)) => CheckOutcome {
            name: "block shape conformance (full encoder)",
            passed: got == want,
            detail: if got == want {
                format!("{} blocks match", got.len())
            } else {
                format!("got {got:?}, want {want:?}")
            },
        },
        Err(e) => CheckOutcome {
            name: "block shape conformance (full encoder)",
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn check_infonce_reference() -> CheckOutcome {
    let mut rng = rng_from(&[2]);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let batch = 2 + (case % 2);
        let nj = 1 + (case % 4);
        let njp = 1 + (case % 3);
        let p = PairScores {
            j: 5,
            jp: 8,
            batch,
            nj,
            njp,
            scores: ndarray::Array2::from_shape_simple_fn((batch * nj, batch * njp), || {
                rng.gen_range(-2.0..2.0)
            }),
        };
        for mode in [NegativeMode::AllConsequentLocations, NegativeMode::FixedPair] {
            let reference = scalar_reference_loss(std::slice::from_ref(&p), mode);
            match infonce(std::slice::from_ref(&p), mode, None) {
                Ok(out) => worst = worst.max((out.loss - reference).abs()),
                Err(e) => {
                    return CheckOutcome {
                        name: "infoNCE scalar-reference agreement",
                        passed: false,
                        detail: e.to_string(),
                    }
                }
            }
        }
    }
    CheckOutcome {
        name: "infoNCE scalar-reference agreement",
        passed: worst <= 1e-6,
        detail: format!("max |vectorized - reference| = {worst:.2e}"),
    }
}

fn check_receptive_field() -> CheckOutcome {
    let run = || -> Result<(usize, usize)> {
        let spec = EncoderSpec::tiny();
        let mut enc = Encoder::build(spec.clone(), &mut rng_from(&[3]))?;
        let mut rng = rng_from(&[4]);
        let base_x = Array5::from_shape_simple_fn(
            (1, spec.input_len, 3, spec.input_size, spec.input_size),
            || rng.gen::<f64>(),
        );
        let base = enc.encode(&base_x, false)?;
        let mut checked = 0;
        let mut exact = 0;
        for &tap in &[5usize, 6] {
            let rf = receptive_field(&spec, tap);
            let (gt, gx, gy) = spec.tap_grid(tap);
            for probe in 0..4 {
                let loc = (probe % gt, (probe * 2) % gx, (probe * 3) % gy);
                let ((t0, t1), (x0, x1), (y0, y1)) = rf.region(loc, spec.input_len, spec.input_size);
                // perturb one pixel outside the region
                let mut x = base_x.clone();
                let pt = if t1 < spec.input_len { t1 } else { 0 };
                let px = if x1 < spec.input_size { x1 } else { 0 };
                let py = if y1 < spec.input_size { y1 } else { 0 };
                if (t0..t1).contains(&pt) && (x0..x1).contains(&px) && (y0..y1).contains(&py) {
                    continue; // region covers the axes entirely; nothing outside
                }
                x[[0, pt, 1, px, py]] += 10.0;
                let out = enc.encode(&x, false)?;
                let a = base.taps[&tap].slice(ndarray::s![0, loc.0, .., loc.1, loc.2]);
                let b = out.taps[&tap].slice(ndarray::s![0, loc.0, .., loc.1, loc.2]);
                checked += 1;
                if a == b {
                    exact += 1;
                }
            }
        }
        Ok((checked, exact))
    };
    match run() {
        Ok((checked, exact)) => CheckOutcome {
            name: "receptive-field locality probe (tiny encoder)",
            passed: checked > 0 && checked == exact,
            detail: format!("{exact}/{checked} probes unchanged outside analytic region"),
        },
        Err(e) => CheckOutcome {
            name: "receptive-field locality probe (tiny encoder)",
            passed: false,
            detail: e.to_string(),
        },
    }
}

fn check_lab_round_trip() -> CheckOutcome {
    let mut rng = rng_from(&[5]);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let rgb = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        let back = lab_raw_to_rgb(rgb_to_lab_raw(rgb));
        for c in 0..3 {
            worst = worst.max((rgb[c] - back[c]).abs());
        }
    }
    CheckOutcome {
        name: "Lab round trip",
        passed: worst < 1e-3,
        detail: format!("max channel error {worst:.2e}"),
    }
}

/// Runs every check, printing one line per check; returns true when all
/// pass.
pub fn run_selfcheck() -> bool {
    let checks = [
        check_block_shapes(),
        check_infonce_reference(),
        check_receptive_field(),
        check_lab_round_trip(),
    ];
    let mut all = true;
    for c in &checks {
        println!("[{}] {} - {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        all &= c.passed;
    }
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selfcheck_passes() {
        assert!(run_selfcheck());
    }
}
