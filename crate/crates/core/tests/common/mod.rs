//! Shared test oracles: a scalar-loop reference for the contrastive
//! objective, written directly from the score/bound definitions and kept
//! independent of the vectorized implementation it checks.

use ndarray::Array2;
use vdim::infomax::{NegativeMode, PairScores};

/// Dot product of two projection rows.
fn dot(a: &Array2<f64>, i: usize, b: &Array2<f64>, j: usize) -> f64 {
    a.row(i).iter().zip(b.row(j).iter()).map(|(x, y)| x * y).sum()
}

/// Builds the score tensor of one layer pair with explicit loops over
/// (sample, sample', location, location').
pub fn oracle_pair_scores(
    j: usize,
    jp: usize,
    a: &Array2<f64>, // (B*Nj, D) antecedent projections
    c: &Array2<f64>, // (B*Njp, D) consequent projections
    batch: usize,
) -> PairScores {
    let nj = a.nrows() / batch;
    let njp = c.nrows() / batch;
    let mut scores = Array2::zeros((batch * nj, batch * njp));
    for b in 0..batch {
        for bp in 0..batch {
            for i in 0..nj {
                for ip in 0..njp {
                    scores[[b * nj + i, bp * njp + ip]] = dot(a, b * nj + i, c, bp * njp + ip);
                }
            }
        }
    }
    PairScores {
        j,
        jp,
        batch,
        nj,
        njp,
        scores,
    }
}

/// Scalar-loop evaluation of the objective: for every tuple, the positive
/// score minus the log of the summed exponentials of its denominator; the
/// loss is the negated mean over tuples of every pair.
pub fn oracle_loss(pairs: &[PairScores], mode: NegativeMode) -> f64 {
    let mut total = 0.0;
    let mut tuples = 0usize;
    for p in pairs {
        for b in 0..p.batch {
            for i in 0..p.nj {
                for ip in 0..p.njp {
                    let s_plus = p.positive(b, i, ip);
                    let mut denom = 0.0;
                    match mode {
                        NegativeMode::AllConsequentLocations => {
                            // the contrasting set is the batch (the sample
                            // itself included), every consequent location
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
                    total += s_plus - denom.ln();
                    tuples += 1;
                }
            }
        }
    }
    -(total / tuples as f64)
}

/// Per-tuple estimates for the bound property checks.
pub fn oracle_tuple_estimates(p: &PairScores, mode: NegativeMode) -> Vec<f64> {
    let mut out = Vec::new();
    for b in 0..p.batch {
        for i in 0..p.nj {
            for ip in 0..p.njp {
                let s_plus = p.positive(b, i, ip);
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
                out.push(s_plus - denom.ln());
            }
        }
    }
    out
}
