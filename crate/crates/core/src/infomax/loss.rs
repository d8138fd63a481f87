//! Pairwise scores and the infoNCE objective.
//!
//! For a layer pair `(j, j')`, scores are all dot products between projected
//! antecedent locations (view 1, layer j) and projected consequent locations
//! (view 2, layer j'), across the whole batch. The per-tuple estimate is
//! `s+ - logsumexp(denominator)` where the denominator runs over every
//! sample in the batch (the positive's own sample included) and, in the
//! default mode, over every consequent location of each sample. The loss is
//! the negated mean over all tuples of all layer pairs.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{linalg::general_mat_mul, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VdimError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayerPairSpec {
    /// Antecedent layer set J (features from view 1).
    pub antecedent: BTreeSet<usize>,
    /// Consequent layer set J' (features from view 2).
    pub consequent: BTreeSet<usize>,
    /// Also use the reversed layer sets (J' antecedent, J consequent).
    pub symmetric: bool,
}

impl Default for LayerPairSpec {
    fn default() -> Self {
        LayerPairSpec {
            antecedent: BTreeSet::from([5, 6, 8]),
            consequent: BTreeSet::from([8]),
            symmetric: true,
        }
    }
}

impl LayerPairSpec {
    pub fn validate(&self) -> Result<()> {
        if self.antecedent.is_empty() || self.consequent.is_empty() {
            return Err(VdimError::Config("layer pair sets must be nonempty".into()));
        }
        Ok(())
    }

    /// Ordered, deduplicated `(antecedent layer, consequent layer)` pairs.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut set = BTreeSet::new();
        for &j in &self.antecedent {
            for &jp in &self.consequent {
                set.insert((j, jp));
            }
        }
        if self.symmetric {
            for &j in &self.consequent {
                for &jp in &self.antecedent {
                    set.insert((j, jp));
                }
            }
        }
        set.into_iter().collect()
    }

    /// Layers needed from view 1 / view 2 respectively.
    pub fn antecedent_layers(&self) -> BTreeSet<usize> {
        self.pairs().iter().map(|&(j, _)| j).collect()
    }

    pub fn consequent_layers(&self) -> BTreeSet<usize> {
        self.pairs().iter().map(|&(_, jp)| jp).collect()
    }

    /// Every layer any head must exist for.
    pub fn all_layers(&self) -> BTreeSet<usize> {
        self.antecedent_layers().union(&self.consequent_layers()).copied().collect()
    }
}

/// How the denominator of the bound treats locations of negative samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    /// Sum over all consequent locations of every sample (default; negatives
    /// are compared against all local features of the other samples).
    AllConsequentLocations,
    /// Sum only over the fixed location pair of every sample.
    FixedPair,
}

impl Default for NegativeMode {
    fn default() -> Self {
        NegativeMode::AllConsequentLocations
    }
}

/// All pairwise scores of one layer pair: `(B*Nj, B*Njp)`, row-major over
/// samples then locations. Diagonal blocks hold the positive pairs.
#[derive(Debug, Clone)]
pub struct PairScores {
    pub j: usize,
    pub jp: usize,
    pub batch: usize,
    pub nj: usize,
    pub njp: usize,
    pub scores: Array2<f64>,
}

impl PairScores {
    /// Positive score for (sample, antecedent location, consequent location).
    pub fn positive(&self, b: usize, i: usize, ip: usize) -> f64 {
        self.scores[[b * self.nj + i, b * self.njp + ip]]
    }

    /// Negative score for (sample, other sample, locations) per the score
    /// definition; `b == bp` returns the same-sample entry.
    pub fn negative(&self, b: usize, bp: usize, i: usize, ip: usize) -> f64 {
        self.scores[[b * self.nj + i, bp * self.njp + ip]]
    }

    /// Denominator term count per tuple under `mode`.
    pub fn denominator_terms(&self, mode: NegativeMode) -> usize {
        match mode {
            NegativeMode::AllConsequentLocations => self.batch * self.njp,
            NegativeMode::FixedPair => self.batch,
        }
    }
}

/// Computes the score matrix for one layer pair from projected rows
/// (`(B*Nj, D)` and `(B*Njp, D)`).
pub fn pair_scores(j: usize, jp: usize, a: &Array2<f64>, c: &Array2<f64>, batch: usize) -> Result<PairScores> {
    if batch == 0 || a.nrows() % batch != 0 || c.nrows() % batch != 0 {
        return Err(VdimError::invalid("projection rows not divisible by batch"));
    }
    if a.ncols() != c.ncols() {
        return Err(VdimError::shape("score space dims", a.ncols(), c.ncols()));
    }
    let mut scores = Array2::zeros((a.nrows(), c.nrows()));
    general_mat_mul(1.0, a, &c.view().reversed_axes(), 0.0, &mut scores);
    Ok(PairScores {
        j,
        jp,
        batch,
        nj: a.nrows() / batch,
        njp: c.nrows() / batch,
        scores,
    })
}

/// The evaluated objective with everything needed for backprop and metrics.
#[derive(Debug, Clone)]
pub struct InfoNce {
    /// Negated mean per-tuple estimate; minimized during training. Bounded
    /// below by 0 because the positive term appears in its own denominator.
    pub loss: f64,
    /// Mean estimate (nats) per layer pair, keyed `(j, j')`.
    pub per_pair: BTreeMap<(usize, usize), f64>,
    /// Mean estimate per sample (for permutation/equivariance checks).
    pub per_sample: Vec<f64>,
    /// d loss / d scores, aligned with the input `PairScores` order.
    pub grads: Vec<Array2<f64>>,
    pub tuple_count: usize,
}

fn logsumexp(row: &[f64]) -> f64 {
    let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Evaluates the multi-layer infoNCE objective over all layer pairs.
///
/// `clamp` optionally soft-limits scores to `±limit` via `limit*tanh(s/limit)`
/// before the bound; gradients are chained through it.
pub fn infonce(pairs: &[PairScores], mode: NegativeMode, clamp: Option<f64>) -> Result<InfoNce> {
    if pairs.is_empty() {
        return Err(VdimError::invalid("no score pairs supplied"));
    }
    let batch = pairs[0].batch;
    if batch < 2 {
        return Err(VdimError::invalid(
            "infoNCE needs batch_size >= 2: no in-batch negatives available",
        ));
    }
    for p in pairs {
        if p.batch != batch {
            return Err(VdimError::invalid("inconsistent batch across score pairs"));
        }
        if !p.scores.iter().all(|v| v.is_finite()) {
            return Err(VdimError::NonFinite(format!("scores for pair ({}, {})", p.j, p.jp)));
        }
    }

    let tuple_count: usize = pairs.iter().map(|p| batch * p.nj * p.njp).sum();
    let mut total = 0.0;
    let mut per_pair = BTreeMap::new();
    let mut per_sample = vec![0.0; batch];
    let mut per_sample_tuples = vec![0usize; batch];
    let mut grads = Vec::with_capacity(pairs.len());

    for p in pairs {
        // soft clamp with its derivative
        let (s, dsdx): (Array2<f64>, Option<Array2<f64>>) = match clamp {
            Some(limit) => {
                let t = p.scores.mapv(|v| (v / limit).tanh());
                let ds = t.mapv(|th| 1.0 - th * th);
                (t.mapv(|th| th * limit), Some(ds))
            }
            None => (p.scores.clone(), None),
        };
        let (rows, _cols) = s.dim();
        let mut grad = Array2::zeros(s.dim());
        let mut pair_sum = 0.0;

        match mode {
            NegativeMode::AllConsequentLocations => {
                for r in 0..rows {
                    let b = r / p.nj;
                    let row = s.row(r);
                    let row_slice = row.as_slice().unwrap();
                    let z = logsumexp(row_slice);
                    // all Njp tuples of this row share the denominator
                    let mut pos_sum = 0.0;
                    for ip in 0..p.njp {
                        pos_sum += row_slice[b * p.njp + ip];
                    }
                    let row_estimate = pos_sum - p.njp as f64 * z;
                    pair_sum += row_estimate;
                    per_sample[b] += row_estimate;
                    per_sample_tuples[b] += p.njp;
                    // dloss/ds = (Njp * softmax - positive indicator) / Ntot
                    let mut grow = grad.row_mut(r);
                    let gs = grow.as_slice_mut().unwrap();
                    let scale = p.njp as f64 / tuple_count as f64;
                    for (gq, &sq) in gs.iter_mut().zip(row_slice.iter()) {
                        *gq = scale * (sq - z).exp();
                    }
                    for ip in 0..p.njp {
                        gs[b * p.njp + ip] -= 1.0 / tuple_count as f64;
                    }
                }
            }
            NegativeMode::FixedPair => {
                let mut denom: Vec<f64> = Vec::with_capacity(batch);
                for r in 0..rows {
                    let b = r / p.nj;
                    let row = s.row(r);
                    let row_slice = row.as_slice().unwrap();
                    for ip in 0..p.njp {
                        denom.clear();
                        for bp in 0..batch {
                            denom.push(row_slice[bp * p.njp + ip]);
                        }
                        let z = logsumexp(&denom);
                        let est = row_slice[b * p.njp + ip] - z;
                        pair_sum += est;
                        per_sample[b] += est;
                        per_sample_tuples[b] += 1;
                        let mut grow = grad.row_mut(r);
                        let gs = grow.as_slice_mut().unwrap();
                        for bp in 0..batch {
                            gs[bp * p.njp + ip] += (denom[bp] - z).exp() / tuple_count as f64;
                        }
                        gs[b * p.njp + ip] -= 1.0 / tuple_count as f64;
                    }
                }
            }
        }

        if let Some(ds) = dsdx {
            grad *= &ds;
        }
        grads.push(grad);
        per_pair.insert((p.j, p.jp), pair_sum / (batch * p.nj * p.njp) as f64);
        total += pair_sum;
    }

    for (acc, &n) in per_sample.iter_mut().zip(&per_sample_tuples) {
        *acc /= n.max(1) as f64;
    }

    Ok(InfoNce {
        loss: -(total / tuple_count as f64),
        per_pair,
        per_sample,
        grads,
        tuple_count,
    })
}

/// Backprops one pair's score gradient onto the projected rows:
/// `dA = dS @ C`, `dC = dS^T @ A`.
pub fn score_grads(ds: &Array2<f64>, a: &Array2<f64>, c: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mut da = Array2::zeros(a.dim());
    general_mat_mul(1.0, ds, c, 0.0, &mut da);
    let mut dc = Array2::zeros(c.dim());
    general_mat_mul(1.0, &ds.view().reversed_axes(), a, 0.0, &mut dc);
    (da, dc)
}

/// Total denominator term count across pairs for the degenerate analysis.
pub fn uniform_loss(pairs: &[PairScores], mode: NegativeMode) -> f64 {
    // with all scores equal, every tuple contributes log(M) with M the
    // pair's denominator term count
    let mut total = 0.0;
    let mut tuples = 0usize;
    for p in pairs {
        let m = p.denominator_terms(mode);
        let n = p.batch * p.nj * p.njp;
        total += (m as f64).ln() * n as f64;
        tuples += n;
    }
    total / tuples as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from;
    use rand::Rng;

    fn random_pair(j: usize, jp: usize, batch: usize, nj: usize, njp: usize, seed: u64) -> PairScores {
        let mut rng = rng_from(&[seed]);
        PairScores {
            j,
            jp,
            batch,
            nj,
            njp,
            scores: Array2::from_shape_simple_fn((batch * nj, batch * njp), || rng.gen_range(-2.0..2.0)),
        }
    }

    #[test]
    fn uniform_scores_hit_log_m() {
        for &(batch, nj, njp) in &[(4usize, 3usize, 1usize), (2, 1, 5), (3, 2, 2)] {
            let p = PairScores {
                j: 5,
                jp: 8,
                batch,
                nj,
                njp,
                scores: Array2::from_elem((batch * nj, batch * njp), 1.37),
            };
            let m = (batch * njp) as f64;
            let out = infonce(&[p], NegativeMode::AllConsequentLocations, None).unwrap();
            assert!((out.loss - m.ln()).abs() < 1e-10, "loss {} vs ln M {}", out.loss, m.ln());
        }
    }

    #[test]
    fn estimates_are_nonpositive_and_loss_nonnegative() {
        for seed in 0..50 {
            let p = random_pair(5, 8, 3, 4, 2, seed);
            let out = infonce(&[p], NegativeMode::AllConsequentLocations, None).unwrap();
            assert!(out.loss >= 0.0);
            for (_k, &v) in &out.per_pair {
                assert!(v <= 1e-12);
            }
        }
    }

    #[test]
    fn huge_positive_drives_estimate_to_zero() {
        let mut p = random_pair(8, 8, 2, 1, 1, 7);
        p.scores[[0, 0]] = 60.0;
        p.scores[[1, 1]] = 60.0;
        let out = infonce(&[p], NegativeMode::AllConsequentLocations, None).unwrap();
        assert!(out.loss < 1e-10, "loss {}", out.loss);
    }

    #[test]
    fn batch_permutation_permutes_per_sample_estimates() {
        let p = random_pair(5, 8, 4, 3, 2, 11);
        let out = infonce(&[p.clone()], NegativeMode::AllConsequentLocations, None).unwrap();
        // permute samples: reverse order
        let (nj, njp, b) = (p.nj, p.njp, p.batch);
        let mut permuted = Array2::zeros(p.scores.dim());
        for r in 0..b * nj {
            for q in 0..b * njp {
                let (rb, ri) = (r / nj, r % nj);
                let (qb, qi) = (q / njp, q % njp);
                permuted[[(b - 1 - rb) * nj + ri, (b - 1 - qb) * njp + qi]] = p.scores[[r, q]];
            }
        }
        let p2 = PairScores { scores: permuted, ..p };
        let out2 = infonce(&[p2], NegativeMode::AllConsequentLocations, None).unwrap();
        assert!((out.loss - out2.loss).abs() < 1e-12);
        for b_i in 0..b {
            assert!((out.per_sample[b_i] - out2.per_sample[b - 1 - b_i]).abs() < 1e-12);
        }
    }

    #[test]
    fn increasing_a_positive_decreases_loss() {
        let p = random_pair(6, 8, 3, 2, 2, 13);
        let base = infonce(&[p.clone()], NegativeMode::AllConsequentLocations, None).unwrap();
        let mut bumped = p.clone();
        bumped.scores[[0, 0]] += 1e-4; // positive entry of sample 0
        let out = infonce(&[bumped], NegativeMode::AllConsequentLocations, None).unwrap();
        assert!(out.loss < base.loss);
        // and the analytic gradient agrees in sign
        assert!(base.grads[0][[0, 0]] < 0.0);
    }

    #[test]
    fn gradient_matches_finite_difference() {
        for &mode in &[NegativeMode::AllConsequentLocations, NegativeMode::FixedPair] {
            for &clamp in &[None, Some(5.0)] {
                let p = random_pair(5, 8, 2, 3, 2, 17);
                let base = infonce(&[p.clone()], mode, clamp).unwrap();
                let eps = 1e-6;
                for &(r, q) in &[(0usize, 0usize), (1, 3), (5, 2), (4, 1)] {
                    let mut plus = p.clone();
                    plus.scores[[r, q]] += eps;
                    let lp = infonce(&[plus], mode, clamp).unwrap().loss;
                    let mut minus = p.clone();
                    minus.scores[[r, q]] -= eps;
                    let lm = infonce(&[minus], mode, clamp).unwrap().loss;
                    let numeric = (lp - lm) / (2.0 * eps);
                    let analytic = base.grads[0][[r, q]];
                    assert!(
                        (numeric - analytic).abs() < 1e-7,
                        "mode {mode:?} clamp {clamp:?} ({r},{q}): {analytic} vs {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn batch_of_one_errors() {
        let p = random_pair(8, 8, 1, 2, 2, 19);
        assert!(infonce(&[p], NegativeMode::AllConsequentLocations, None).is_err());
    }

    #[test]
    fn non_finite_scores_error() {
        let mut p = random_pair(8, 8, 2, 1, 1, 23);
        p.scores[[0, 1]] = f64::INFINITY;
        assert!(matches!(
            infonce(&[p], NegativeMode::AllConsequentLocations, None),
            Err(VdimError::NonFinite(_))
        ));
    }

    #[test]
    fn pair_enumeration_with_symmetry() {
        let spec = LayerPairSpec::default();
        let pairs = spec.pairs();
        assert!(pairs.contains(&(5, 8)));
        assert!(pairs.contains(&(8, 5)));
        assert!(pairs.contains(&(8, 8)));
        assert_eq!(pairs.len(), 5); // (5,8),(6,8),(8,8),(8,5),(8,6)
        let asym = LayerPairSpec {
            symmetric: false,
            ..Default::default()
        };
        assert_eq!(asym.pairs().len(), 3);
    }

    #[test]
    fn orthogonal_and_identical_unit_projections() {
        let a = ndarray::arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let c = ndarray::arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let p = pair_scores(8, 8, &a, &c, 2).unwrap();
        assert_eq!(p.positive(0, 0, 0), 1.0); // identical units
        assert_eq!(p.negative(0, 1, 0, 0), 0.0); // orthogonal units
    }
}
