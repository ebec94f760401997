//! Exact decoding-failure probability of a random code on a two-state
//! channel, under weighted-distance threshold decoding.
//!
//! Conditioned on the number of good-state symbols `n1` and the error
//! counts `(e1, e2)` on good and bad positions, the transmitted word sits
//! at weighted distance `B = gamma e1 + e2` from the received word. A
//! uniformly random competitor lands within radius `D` with probability
//! `q = V(D) / 2^N`, where `V` counts weight pairs inside the radius.
//! Averaging the competitor-set failure probability over the noise and the
//! occupancy law gives the exact failure matrix.
//!
//! Two competitor aggregation models are provided. [`CompetitorModel::
//! CappedUnion`] rounds the radius up to the next integer and applies the
//! union bound capped at one; this is the variant the published curves
//! follow, and it is exact in the regime where at most one competitor can
//! land nearby. [`CompetitorModel::IndependentExact`] keeps the real
//! radius and uses the exact inclusion-exclusion for independent uniform
//! competitors, `1 - (1-q)^{M-1}`; this is the variant a direct simulation
//! of the decoder reproduces. Ties lose: a competitor at distance exactly
//! `B` (or at the margin edge) counts as a failure.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::bounds::CodeParams;
use crate::channel::FscSpec;
use crate::math::{log_cumsum_exp, log_sum_exp, LnFactorial, NeumaierSum, LN_2};
use crate::occupation::discrete_occupancy_law;
use crate::{Error, Result};

/// Decoding metric.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecisionRule {
    /// Weight good-state disagreements by the likelihood ratio
    /// [`ml_gamma`]; optimal when the receiver knows the state sequence.
    MaximumLikelihood,
    /// Plain Hamming distance (`gamma = 1`).
    MinimumDistance,
}

/// How the competitor codewords are aggregated into a failure probability.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompetitorModel {
    /// Integer (rounded-up) radius, union bound capped at one.
    CappedUnion,
    /// Real radius, exact independent-competitor probability.
    IndependentExact,
}

/// Exact failure (or undetected-failure) matrix, jointly with end state.
#[derive(Clone, Debug)]
pub struct ExactFailureMatrix {
    /// `values[i][j] = P(event, S_N = j | S_0 = i)`.
    pub values: [[f64; 2]; 2],
    /// Weight applied to good-state disagreements.
    pub gamma: f64,
    /// Detection margin in weighted-distance units.
    pub margin: u32,
    pub model: CompetitorModel,
    /// True when the event is the undetected failure (competitor strictly
    /// inside the shrunk radius), false for the full failure event.
    pub undetected: bool,
}

impl ExactFailureMatrix {
    pub fn scalar(&self, pi: &[f64; 2]) -> f64 {
        (0..2)
            .map(|i| pi[i] * (self.values[i][0] + self.values[i][1]))
            .sum()
    }

    /// Largest entry of the matrix conditioned on the end state:
    /// `max_{i,j} P(event | S_N = j, S_0 = i)` with `pn` the plain state
    /// transition law over the block.
    pub fn max_conditional(&self, pn: &[[f64; 2]; 2]) -> f64 {
        let mut best = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                if pn[i][j] > 0.0 {
                    best = best.max(self.values[i][j] / pn[i][j]);
                }
            }
        }
        best
    }
}

/// Likelihood-ratio weight for good-state disagreements:
/// `ln((1-eps1)/eps1) / ln((1-eps2)/eps2)`.
pub fn ml_gamma(eps1: f64, eps2: f64) -> Result<f64> {
    if !(eps1 > 0.0 && eps2 > 0.0 && eps1 < 0.5 && eps2 < 0.5) {
        return Err(Error::param(format!(
            "crossovers ({eps1}, {eps2}) must lie in (0, 1/2) for a likelihood weight"
        )));
    }
    if eps1 > eps2 {
        return Err(Error::param(format!(
            "good-state crossover {eps1} must not exceed bad-state {eps2}"
        )));
    }
    Ok(((1.0 - eps1) / eps1).ln() / ((1.0 - eps2) / eps2).ln())
}

/// Relative epsilon for boundary comparisons of weighted distances.
const TIE_EPS: f64 = 1e-12;

/// ln of the number of words within weighted radius `d` of a reference
/// word, when `n1` positions carry weight `gamma` and `n2` carry weight 1:
/// `ln sum_{t1} C(n1, t1) * cumC(n2, floor(d - gamma t1))`.
fn ln_volume(
    n1: usize,
    n2: usize,
    gamma: f64,
    d: f64,
    lb1: &[f64],
    lcum2: &[f64],
) -> f64 {
    let mut terms = Vec::with_capacity(n1 + 1);
    for t1 in 0..=n1 {
        let x = d - gamma * t1 as f64;
        let teps = TIE_EPS * x.abs().max(1.0);
        let t = (x + teps).floor();
        if t < 0.0 {
            // x decreases with t1; nothing further contributes.
            break;
        }
        let t = (t as usize).min(n2);
        terms.push(lb1[t1] + lcum2[t]);
    }
    log_sum_exp(&terms)
}

/// Number of words within weighted radius `radius` when `n1` positions
/// weigh `gamma` and `n2` weigh 1 (ties inside).
pub fn volume_count(n1: usize, n2: usize, gamma: f64, radius: f64) -> f64 {
    if gamma <= 0.0 {
        return f64::NAN;
    }
    let fact = LnFactorial::new(n1.max(n2));
    let lb1 = fact.ln_binomial_row(n1);
    let lcum2 = log_cumsum_exp(&fact.ln_binomial_row(n2));
    ln_volume(n1, n2, gamma, radius, &lb1, &lcum2).exp()
}

/// Failure probability given the competitor-ball log-volume.
fn prob_from_ln_volume(lnv: f64, n: usize, lnm1: f64, model: CompetitorModel) -> f64 {
    if lnv == f64::NEG_INFINITY {
        return 0.0;
    }
    let lnq = (lnv - n as f64 * LN_2).min(0.0);
    match model {
        CompetitorModel::CappedUnion => (lnm1 + lnq).min(0.0).exp(),
        CompetitorModel::IndependentExact => {
            let q = lnq.exp();
            if q == 0.0 {
                return 0.0;
            }
            let m1 = lnm1.exp();
            -(m1 * (-q).ln_1p()).exp_m1()
        }
    }
}

/// Radius of the competitor region for noise `(e1, e2)` and a signed
/// margin offset: rounded up per weighted unit under the capped-union
/// policy, kept real under the exact policy.
fn competitor_radius(e1: usize, e2: usize, gamma: f64, offset: f64, model: CompetitorModel) -> f64 {
    match model {
        CompetitorModel::CappedUnion => {
            (gamma * e1 as f64 - TIE_EPS).ceil() + e2 as f64 + offset
        }
        CompetitorModel::IndependentExact => gamma * e1 as f64 + e2 as f64 + offset,
    }
}

/// Range of error counts worth enumerating: the binomial bulk plus twelve
/// standard deviations, clipped to the support. The omitted tail mass is
/// below 1e-30 and the failure probabilities it multiplies are in [0, 1].
fn error_box(n: usize, eps: f64) -> (usize, usize) {
    if n <= 64 || eps == 0.0 {
        return (0, if eps == 0.0 { 0 } else { n });
    }
    let c = n as f64 * eps;
    let sd = (n as f64 * eps * (1.0 - eps)).sqrt();
    let lo = (c - 12.0 * sd).floor().max(0.0) as usize;
    let hi = (c + 12.0 * sd).ceil().min(n as f64) as usize;
    (lo, hi)
}

fn ln_binom_pmf(n: usize, k: usize, eps: f64, fact: &LnFactorial) -> f64 {
    if eps == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    fact.ln_binomial(n, k as i64) + k as f64 * eps.ln() + (n - k) as f64 * (1.0 - eps).ln()
}

/// Failure probability averaged over the noise, conditioned on `n1` good
/// positions.
#[allow(clippy::too_many_arguments)]
fn conditional_average(
    n: usize,
    n1: usize,
    eps: (f64, f64),
    gamma: f64,
    offset: f64,
    lnm1: f64,
    model: CompetitorModel,
    fact: &LnFactorial,
) -> f64 {
    let n2 = n - n1;
    let lb1 = fact.ln_binomial_row(n1);
    let lcum2 = log_cumsum_exp(&fact.ln_binomial_row(n2));
    let (lo1, hi1) = error_box(n1, eps.0);
    let (lo2, hi2) = error_box(n2, eps.1);
    let lp1: Vec<f64> = (lo1..=hi1)
        .map(|e| ln_binom_pmf(n1, e, eps.0, fact))
        .collect();
    let lp2: Vec<f64> = (lo2..=hi2)
        .map(|e| ln_binom_pmf(n2, e, eps.1, fact))
        .collect();
    // Under the capped-union policy the radius is integral, so the ball
    // volume repeats across noise outcomes; memoise it.
    let mut memo: HashMap<i64, f64> = HashMap::new();
    let mut acc = NeumaierSum::new();
    for (idx1, e1) in (lo1..=hi1).enumerate() {
        for (idx2, e2) in (lo2..=hi2).enumerate() {
            let w = (lp1[idx1] + lp2[idx2]).exp();
            if w == 0.0 {
                continue;
            }
            let d = competitor_radius(e1, e2, gamma, offset, model);
            if d < 0.0 {
                continue;
            }
            let pe = match model {
                CompetitorModel::CappedUnion => {
                    let key = d.round() as i64;
                    *memo.entry(key).or_insert_with(|| {
                        let lnv = ln_volume(n1, n2, gamma, key as f64, &lb1, &lcum2);
                        prob_from_ln_volume(lnv, n, lnm1, model)
                    })
                }
                CompetitorModel::IndependentExact => {
                    let lnv = ln_volume(n1, n2, gamma, d, &lb1, &lcum2);
                    prob_from_ln_volume(lnv, n, lnm1, model)
                }
            };
            acc.add(w * pe);
        }
    }
    acc.value()
}

/// Failure probability for one explicit noise outcome `(e1, e2)` given
/// `n1` good positions: the building block of the averaged matrices,
/// exposed for direct checks.
#[allow(clippy::too_many_arguments)]
pub fn conditional_failure(
    n: usize,
    n1: usize,
    e1: usize,
    e2: usize,
    gamma: f64,
    margin: u32,
    code: &CodeParams,
    model: CompetitorModel,
) -> Result<f64> {
    if n1 > n || e1 > n1 || e2 > n - n1 {
        return Err(Error::param("error counts exceed their position counts"));
    }
    if code.n() != n {
        return Err(Error::param(format!(
            "code block length {} does not match n = {n}",
            code.n()
        )));
    }
    let n2 = n - n1;
    let fact = LnFactorial::new(n.max(1));
    let lb1 = fact.ln_binomial_row(n1);
    let lcum2 = log_cumsum_exp(&fact.ln_binomial_row(n2));
    let d = competitor_radius(e1, e2, gamma, margin as f64, model);
    if d < 0.0 {
        return Ok(0.0);
    }
    let lnv = ln_volume(n1, n2, gamma, d, &lb1, &lcum2);
    Ok(prob_from_ln_volume(lnv, n, code.ln_competitors(), model))
}

fn exact_matrix(
    spec: &FscSpec,
    code: &CodeParams,
    rule: DecisionRule,
    margin: u32,
    model: CompetitorModel,
    undetected: bool,
) -> Result<ExactFailureMatrix> {
    if spec.states() != 2 {
        return Err(Error::param(
            "exact failure matrices are defined for two-state channels",
        ));
    }
    let (alpha, beta) = spec.two_state_rates(code.n())?;
    let eps = (spec.crossover()[0], spec.crossover()[1]);
    let gamma = match rule {
        DecisionRule::MaximumLikelihood => ml_gamma(eps.0, eps.1)?,
        DecisionRule::MinimumDistance => 1.0,
    };
    let law = discrete_occupancy_law(alpha, beta, code.n())?;
    let fact = LnFactorial::new(code.n() + 1);
    let lnm1 = code.ln_competitors();
    let offset = if undetected {
        -(margin as f64)
    } else {
        margin as f64
    };
    let n = code.n();
    let cond: Vec<f64> = (0..=n)
        .into_par_iter()
        .map(|n1| conditional_average(n, n1, eps, gamma, offset, lnm1, model, &fact))
        .collect();
    let mut values = [[0.0f64; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = NeumaierSum::new();
            for (n1, &c) in cond.iter().enumerate() {
                acc.add(law.prob(n1, i, j) * c);
            }
            values[i][j] = acc.value();
        }
    }
    Ok(ExactFailureMatrix {
        values,
        gamma,
        margin,
        model,
        undetected,
    })
}

/// Exact failure matrix: some competitor lands within the (margin-grown)
/// radius of the transmitted word, forcing a retransmission or an error.
pub fn failure_matrix_exact(
    spec: &FscSpec,
    code: &CodeParams,
    rule: DecisionRule,
    margin: u32,
    model: CompetitorModel,
) -> Result<ExactFailureMatrix> {
    exact_matrix(spec, code, rule, margin, model, false)
}

/// Exact undetected-failure matrix: some competitor lands within the
/// margin-shrunk radius, so the decoder commits to a wrong word without
/// noticing.
pub fn undetected_matrix_exact(
    spec: &FscSpec,
    code: &CodeParams,
    rule: DecisionRule,
    margin: u32,
    model: CompetitorModel,
) -> Result<ExactFailureMatrix> {
    exact_matrix(spec, code, rule, margin, model, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::standard_channel;
    use approx::assert_relative_eq;

    #[test]
    fn ml_gamma_reference() {
        let g = ml_gamma(0.01, 0.1).unwrap();
        assert_relative_eq!(g, 99f64.ln() / 9f64.ln(), epsilon = 1e-15);
        assert!((g - 2.0913).abs() < 1e-4);
        assert!(ml_gamma(0.0, 0.1).is_err());
        assert!(ml_gamma(0.1, 0.5).is_err());
        assert!(ml_gamma(0.2, 0.1).is_err());
        assert_relative_eq!(ml_gamma(0.1, 0.1).unwrap(), 1.0);
    }

    #[test]
    fn volume_small_example() {
        // n1 = 3, n2 = 2, unit weights, radius 1: the empty word plus five
        // single flips.
        assert_relative_eq!(volume_count(3, 2, 1.0, 1.0), 6.0, epsilon = 1e-10);
    }

    #[test]
    fn volume_unit_weights_match_hamming_ball() {
        let fact = LnFactorial::new(16);
        for &(n1, n2, d) in &[(4usize, 3usize, 2usize), (5, 5, 4), (7, 2, 0)] {
            let direct: f64 = (0..=d)
                .map(|t| fact.ln_binomial(n1 + n2, t as i64).exp())
                .sum();
            assert_relative_eq!(
                volume_count(n1, n2, 1.0, d as f64),
                direct,
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn conditional_failure_two_symbol_example() {
        // Two symbols, both good, no noise, one competitor: the competitor
        // must equal the transmitted word, probability 1/4.
        let code = CodeParams::new(2, 0.5).unwrap();
        for model in [CompetitorModel::CappedUnion, CompetitorModel::IndependentExact] {
            let p = conditional_failure(2, 2, 0, 0, 1.0, 0, &code, model).unwrap();
            assert_relative_eq!(p, 0.25, epsilon = 1e-12);
        }
        assert!(conditional_failure(2, 3, 0, 0, 1.0, 0, &code, CompetitorModel::CappedUnion).is_err());
    }

    #[test]
    fn margin_monotonicity() {
        let spec = standard_channel();
        let code = CodeParams::new(12, 0.5).unwrap();
        let rule = DecisionRule::MaximumLikelihood;
        let model = CompetitorModel::CappedUnion;
        let mut prev_fail = 0.0;
        let mut prev_undet = 1.0;
        for nu in 0..4u32 {
            let f = failure_matrix_exact(&spec, &code, rule, nu, model).unwrap();
            let u = undetected_matrix_exact(&spec, &code, rule, nu, model).unwrap();
            let fs = f.scalar(&[0.6, 0.4]);
            let us = u.scalar(&[0.6, 0.4]);
            assert!(fs >= prev_fail - 1e-15, "failure shrank with margin");
            assert!(us <= prev_undet + 1e-15, "undetected grew with margin");
            for i in 0..2 {
                for j in 0..2 {
                    assert!(u.values[i][j] <= f.values[i][j] + 1e-15);
                }
            }
            prev_fail = fs;
            prev_undet = us;
        }
    }

    #[test]
    fn capped_union_dominates_exact_model() {
        let spec = standard_channel();
        let code = CodeParams::new(12, 0.5).unwrap();
        let rule = DecisionRule::MaximumLikelihood;
        let union =
            failure_matrix_exact(&spec, &code, rule, 0, CompetitorModel::CappedUnion).unwrap();
        let exact =
            failure_matrix_exact(&spec, &code, rule, 0, CompetitorModel::IndependentExact)
                .unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    union.values[i][j] >= exact.values[i][j] * (1.0 - 1e-12),
                    "capped union fell below the exact model at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn models_agree_for_single_competitor_unit_weights() {
        // M = 2 and gamma = 1: both radius policies coincide and
        // min(1, q) = 1 - (1 - q).
        let spec = standard_channel();
        let code = CodeParams::new(8, 1.0 / 8.0).unwrap();
        let rule = DecisionRule::MinimumDistance;
        let a = failure_matrix_exact(&spec, &code, rule, 0, CompetitorModel::CappedUnion).unwrap();
        let b = failure_matrix_exact(&spec, &code, rule, 0, CompetitorModel::IndependentExact)
            .unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(a.values[i][j], b.values[i][j], max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn failure_values_are_probabilities() {
        let spec = standard_channel();
        let code = CodeParams::new(20, 0.5).unwrap();
        let m = failure_matrix_exact(
            &spec,
            &code,
            DecisionRule::MaximumLikelihood,
            2,
            CompetitorModel::CappedUnion,
        )
        .unwrap();
        let law = discrete_occupancy_law(0.0533, 0.08, 20).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!(m.values[i][j] >= 0.0);
                assert!(m.values[i][j] <= law.transition_mass(i, j) + 1e-12);
            }
        }
    }
}
