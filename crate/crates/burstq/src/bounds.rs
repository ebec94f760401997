//! Random-coding failure bounds for state-modulated binary symmetric
//! channels, driven by the occupancy laws of [`crate::occupation`].
//!
//! All bounds share one shape: a per-state error exponent weighted by the
//! time spent in each state, truncated at 1 where the exponent goes the
//! wrong way, and averaged over the joint law of occupancy and endpoint
//! states. They differ in which occupancy law they use (exact block law,
//! matrix product form, or the slow-transition limit) and in whether a
//! detection margin is folded into the exponent.

use crate::channel::FscSpec;
use crate::math::{adaptive_simpson, minimize_grid_refined, LN_2};
use crate::occupation::{discrete_occupancy_law, ContinuousOccupancyLaw, DiscreteOccupancyLaw};
use crate::{Error, Result};

/// Block length and rate of a random code.
///
/// The rate is stored in bits per symbol; the codebook size enters every
/// computation in log form, so rates whose codebook exponent `N * R` is not
/// an integer are representable (grid tooling that requires an integer
/// exponent filters on [`CodeParams::has_integer_size`]).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodeParams {
    n: usize,
    rate_bits: f64,
}

impl CodeParams {
    pub fn new(n: usize, rate_bits: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("block length must be positive"));
        }
        if !(rate_bits > 0.0 && rate_bits <= 1.0) {
            return Err(Error::param(format!(
                "rate {rate_bits} bits/symbol must lie in (0, 1]"
            )));
        }
        Ok(Self { n, rate_bits })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rate_bits(&self) -> f64 {
        self.rate_bits
    }

    pub fn rate_nats(&self) -> f64 {
        self.rate_bits * LN_2
    }

    /// `ln M` where `M = 2^{N R}` is the codebook size.
    pub fn ln_codebook_size(&self) -> f64 {
        self.n as f64 * self.rate_bits * LN_2
    }

    /// `ln(M - 1)`, stable even when `M` barely exceeds 1.
    pub fn ln_competitors(&self) -> f64 {
        let ln_m = self.ln_codebook_size();
        ln_m + (-(-ln_m).exp()).ln_1p()
    }

    /// Whether the codebook exponent `N R` is an integer (within 1e-9).
    pub fn has_integer_size(&self) -> bool {
        let x = self.n as f64 * self.rate_bits;
        (x - x.round()).abs() < 1e-9
    }
}

/// Which construction produced a [`FailureBoundMatrix`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundKind {
    /// Product of per-symbol tilted transition matrices.
    GallagerMatrix,
    /// Occupancy-type sum with the per-type bound capped at 1.
    TypeSum,
    /// Slow-transition limit: integral against the occupancy fraction law.
    RareTransition,
    /// Margined bound on undetected failures under threshold feedback.
    UndetectedWithMargin,
    /// Margined bound on the total failure (retransmission) event.
    FailureWithMargin,
}

impl BoundKind {
    /// Stable identifier used in CSV output.
    pub fn label(&self) -> &'static str {
        match self {
            BoundKind::GallagerMatrix => "gallager_matrix",
            BoundKind::TypeSum => "type_sum",
            BoundKind::RareTransition => "rare_transition",
            BoundKind::UndetectedWithMargin => "undetected_bound",
            BoundKind::FailureWithMargin => "error_bound_with_margin",
        }
    }
}

/// A 2x2 failure bound, jointly with the end state: entry `(i, j)` bounds
/// `P(failure event, S_N = j | S_0 = i)`.
#[derive(Clone, Debug)]
pub struct FailureBoundMatrix {
    pub kind: BoundKind,
    pub values: [[f64; 2]; 2],
    /// Per-entry optimising tilt.
    pub rho_star: [[f64; 2]; 2],
    /// Per-entry margin split, for the margined kinds.
    pub v_star: Option<[[f64; 2]; 2]>,
    /// Detection margin in exponent units; zero for plain bounds.
    pub tau: f64,
}

impl FailureBoundMatrix {
    /// State-averaged scalar bound: `sum_i pi_i sum_j values[i][j]`.
    pub fn scalar(&self, pi: &[f64; 2]) -> f64 {
        (0..2)
            .map(|i| pi[i] * (self.values[i][0] + self.values[i][1]))
            .sum()
    }

    /// Largest entry of the joint matrix.
    pub fn max_entry(&self) -> f64 {
        self.values
            .iter()
            .flatten()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Largest entry after conditioning on the realized transition:
    /// `max_{ij} values[i][j] / pn[i][j]`.
    pub fn max_conditional(&self, pn: &[[f64; 2]; 2]) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..2 {
            for j in 0..2 {
                worst = worst.max(self.values[i][j] / pn[i][j]);
            }
        }
        worst
    }
}

/// Per-state random-coding exponent of a binary symmetric crossover under
/// uniform inputs: `rho ln 2 - (1+rho) ln(eps^{1/(1+rho)} + (1-eps)^{1/(1+rho)})`.
pub fn state_exponent(eps: f64, rho: f64) -> f64 {
    assert!((0.0..=0.5).contains(&eps), "crossover out of range");
    assert!(rho >= 0.0, "tilt must be non-negative");
    let s = 1.0 / (1.0 + rho);
    rho * LN_2 - (1.0 + rho) * (eps.powf(s) + (1.0 - eps).powf(s)).ln()
}

/// Occupancy-weighted exponent: the per-state exponents mixed with the
/// fraction of the block spent in each state.
pub fn gallager_exponent(crossovers: &[f64], fractions: &[f64], rho: f64) -> f64 {
    assert_eq!(crossovers.len(), fractions.len());
    crossovers
        .iter()
        .zip(fractions)
        .map(|(&e, &f)| f * state_exponent(e, rho))
        .sum()
}

/// Occupancy-weighted exponent for a biased input distribution
/// `(q0, 1 - q0)`; reduces to [`gallager_exponent`] at `q0 = 1/2`.
pub fn gallager_exponent_with_input(
    crossovers: &[f64],
    fractions: &[f64],
    rho: f64,
    q0: f64,
) -> f64 {
    assert!((0.0..=1.0).contains(&q0));
    let s = 1.0 / (1.0 + rho);
    crossovers
        .iter()
        .zip(fractions)
        .map(|(&e, &f)| {
            let a = q0 * (1.0 - e).powf(s) + (1.0 - q0) * e.powf(s);
            let b = q0 * e.powf(s) + (1.0 - q0) * (1.0 - e).powf(s);
            f * -(a.powf(1.0 + rho) + b.powf(1.0 + rho)).ln()
        })
        .sum()
}

fn two_state_inputs(spec: &FscSpec, code: &CodeParams) -> Result<(f64, f64, f64, f64)> {
    let (alpha, beta) = spec.two_state_rates(code.n())?;
    let eps = spec.crossover();
    Ok((alpha, beta, eps[0], eps[1]))
}

/// Fixed-tilt matrix-product bound: entry `(i, j)` of the `N`-th power of
/// the per-symbol matrix `P_{cd} exp(rho R - b_c)`.
pub fn gallager_matrix_value(
    spec: &FscSpec,
    code: &CodeParams,
    rho: f64,
) -> Result<[[f64; 2]; 2]> {
    let (alpha, beta, e1, e2) = two_state_inputs(spec, code)?;
    let r = code.rate_nats();
    let g1 = (rho * r - state_exponent(e1, rho)).exp();
    let g2 = (rho * r - state_exponent(e2, rho)).exp();
    let m = [
        [(1.0 - alpha) * g1, alpha * g1],
        [beta * g2, (1.0 - beta) * g2],
    ];
    // Plain repeated squaring on a 2x2.
    let mut out = [[1.0, 0.0], [0.0, 1.0]];
    let mut base = m;
    let mut k = code.n();
    while k > 0 {
        if k & 1 == 1 {
            out = mat2_mul(&out, &base);
        }
        base = mat2_mul(&base, &base);
        k >>= 1;
    }
    Ok(out)
}

fn mat2_mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

/// Matrix-product bound with the tilt optimised per entry over `[0, 1]`.
///
/// The tilt grid includes 0, where the bound degenerates to the transition
/// law itself, so every entry is automatically capped by `[P^N]_{ij}`.
pub fn gallager_matrix_bound(
    spec: &FscSpec,
    code: &CodeParams,
    grid_step: f64,
) -> Result<FailureBoundMatrix> {
    let mut values = [[0.0; 2]; 2];
    let mut rho_star = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let f = |rho: f64| {
                gallager_matrix_value(spec, code, rho)
                    .map(|m| m[i][j])
                    .unwrap_or(f64::INFINITY)
            };
            let (rs, v) = minimize_grid_refined(&f, 0.0, 1.0, grid_step, 1e-7);
            values[i][j] = v;
            rho_star[i][j] = rs;
        }
    }
    Ok(FailureBoundMatrix {
        kind: BoundKind::GallagerMatrix,
        values,
        rho_star,
        v_star: None,
        tau: 0.0,
    })
}

/// Fixed-tilt occupancy-type bound for one entry: the per-type exponent is
/// capped at 1 before averaging over the exact block occupancy law.
pub fn type_sum_value(
    law: &DiscreteOccupancyLaw,
    crossovers: (f64, f64),
    code: &CodeParams,
    rho: f64,
    i: usize,
    j: usize,
) -> f64 {
    margined_type_value(law, crossovers, code, rho, 0.0, 0.0, i, j)
}

/// Shared kernel for type sums with an optional margin: averages
/// `min(1, exp(-N (E0(m) - rho R - v tau + shift)))` over the law column.
fn margined_type_value(
    law: &DiscreteOccupancyLaw,
    (e1, e2): (f64, f64),
    code: &CodeParams,
    rho: f64,
    vtau: f64,
    shift: f64,
    i: usize,
    j: usize,
) -> f64 {
    let n = law.n() as f64;
    let b1 = state_exponent(e1, rho);
    let b2 = state_exponent(e2, rho);
    let r = code.rate_nats();
    let mut acc = crate::math::NeumaierSum::new();
    for m in 0..=law.n() {
        let p = law.prob(m, i, j);
        if p == 0.0 {
            continue;
        }
        let e0 = (m as f64 * b1 + (n - m as f64) * b2) / n;
        let arg = -n * (e0 - rho * r - vtau + shift);
        acc.add(arg.min(0.0).exp() * p);
    }
    acc.value()
}

/// Occupancy-type bound with per-entry tilt optimisation.
pub fn type_sum_bound(
    spec: &FscSpec,
    code: &CodeParams,
    grid_step: f64,
) -> Result<FailureBoundMatrix> {
    let (alpha, beta, e1, e2) = two_state_inputs(spec, code)?;
    let law = discrete_occupancy_law(alpha, beta, code.n())?;
    let mut values = [[0.0; 2]; 2];
    let mut rho_star = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let f = |rho: f64| type_sum_value(&law, (e1, e2), code, rho, i, j);
            let (rs, v) = minimize_grid_refined(&f, 0.0, 1.0, grid_step, 1e-7);
            values[i][j] = v;
            rho_star[i][j] = rs;
        }
    }
    Ok(FailureBoundMatrix {
        kind: BoundKind::TypeSum,
        values,
        rho_star,
        v_star: None,
        tau: 0.0,
    })
}

/// Fixed-tilt slow-transition bound for one entry: the capped exponent
/// integrated against the limiting occupancy-fraction law, endpoint atoms
/// included.
pub fn rare_transition_value(
    law: &ContinuousOccupancyLaw,
    crossovers: (f64, f64),
    code: &CodeParams,
    rho: f64,
    i: usize,
    j: usize,
) -> f64 {
    let (e1, e2) = crossovers;
    let n = code.n() as f64;
    let b1 = state_exponent(e1, rho);
    let b2 = state_exponent(e2, rho);
    let r = code.rate_nats();
    if b1 == b2 {
        // Equal per-state exponents: the cap is a constant factor.
        let factor = (-n * (b2 - rho * r)).min(0.0).exp();
        let mass = adaptive_simpson(&|t| law.density(i, j, t), 0.0, 1.0, 1e-13)
            + law.atom_mass(i, j);
        return factor * mass;
    }
    // Exponent at fraction t: E(t) = b2 + (b1 - b2) t; capped where
    // E(t) <= rho R, i.e. left of the kink.
    let cap = |t: f64| {
        let arg = -n * (b2 + (b1 - b2) * t - rho * r);
        arg.min(0.0).exp()
    };
    let integrand = |t: f64| cap(t) * law.density(i, j, t);
    let kink = if b1 > b2 {
        ((rho * r - b2) / (b1 - b2)).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let mut total = 0.0;
    if kink > 0.0 {
        // Left of the kink the cap is active and the integrand is the
        // density itself.
        total += adaptive_simpson(&|t| law.density(i, j, t), 0.0, kink, 1e-13);
    }
    if kink < 1.0 {
        total += adaptive_simpson(&integrand, kink, 1.0, 1e-13);
    }
    if let Some(loc) = law.atom_location(i, j) {
        total += law.atom_mass(i, j) * cap(loc);
    }
    total
}

/// Slow-transition bound with per-entry tilt optimisation.
///
/// `law` carries the block-scaled jump rates; `code` supplies length and
/// rate. The caller chooses the scaling convention (fixed rates or rates
/// proportional to the block length).
pub fn rare_transition_bound(
    law: &ContinuousOccupancyLaw,
    crossovers: (f64, f64),
    code: &CodeParams,
    grid_step: f64,
) -> Result<FailureBoundMatrix> {
    let mut values = [[0.0; 2]; 2];
    let mut rho_star = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let f = |rho: f64| rare_transition_value(law, crossovers, code, rho, i, j);
            let (rs, v) = minimize_grid_refined(&f, 0.0, 1.0, grid_step, 1e-7);
            values[i][j] = v;
            rho_star[i][j] = rs;
        }
    }
    Ok(FailureBoundMatrix {
        kind: BoundKind::RareTransition,
        values,
        rho_star,
        v_star: None,
        tau: 0.0,
    })
}

/// Margined bound pair for decision-feedback decoding with threshold
/// margin `tau` (in exponent units).
///
/// The margin splits between the two error events through `v(rho) =
/// rho / (1 + rho)`, the tilt of the competitor weight at the optimising
/// point: the undetected-failure bound gains the full margin and pays the
/// tilted share, the retransmission bound only pays.
///
/// For each entry the tilt is chosen once and shared by both bounds: with
/// a `target` it minimises the retransmission bound subject to the
/// undetected bound meeting the target (falling back to the undetected
/// minimiser when infeasible); without a target it minimises the
/// undetected bound.
pub fn undetected_and_error_bounds(
    spec: &FscSpec,
    code: &CodeParams,
    tau: f64,
    target: Option<f64>,
    grid_step: f64,
) -> Result<(FailureBoundMatrix, FailureBoundMatrix)> {
    if tau < 0.0 {
        return Err(Error::param(format!("margin tau = {tau} must be >= 0")));
    }
    let (alpha, beta, e1, e2) = two_state_inputs(spec, code)?;
    let law = discrete_occupancy_law(alpha, beta, code.n())?;
    let mut undet = FailureBoundMatrix {
        kind: BoundKind::UndetectedWithMargin,
        values: [[0.0; 2]; 2],
        rho_star: [[0.0; 2]; 2],
        v_star: Some([[0.0; 2]; 2]),
        tau,
    };
    let mut fail = FailureBoundMatrix {
        kind: BoundKind::FailureWithMargin,
        values: [[0.0; 2]; 2],
        rho_star: [[0.0; 2]; 2],
        v_star: Some([[0.0; 2]; 2]),
        tau,
    };
    let n_grid = (1.0 / grid_step).round() as usize;
    for i in 0..2 {
        for j in 0..2 {
            let undet_at = |rho: f64| {
                let v = rho / (1.0 + rho);
                margined_type_value(&law, (e1, e2), code, rho, v * tau, tau, i, j)
            };
            let fail_at = |rho: f64| {
                let v = rho / (1.0 + rho);
                margined_type_value(&law, (e1, e2), code, rho, v * tau, 0.0, i, j)
            };
            // Grid scan records both objectives so the constrained choice
            // can fall out of one pass.
            let mut best_u = (0.0f64, f64::INFINITY);
            let mut best_c: Option<(f64, f64)> = None;
            for k in 0..=n_grid {
                let rho = (k as f64 * grid_step).min(1.0);
                let u = undet_at(rho);
                if u < best_u.1 {
                    best_u = (rho, u);
                }
                if let Some(t) = target {
                    if u <= t {
                        let fv = fail_at(rho);
                        if best_c.map_or(true, |(_, bf)| fv < bf) {
                            best_c = Some((rho, fv));
                        }
                    }
                }
            }
            let rho_star = match (target, best_c) {
                (Some(_), Some((rho, _))) => {
                    // Refine the constrained minimiser inside its bracket,
                    // rejecting refinements that leave the feasible set.
                    let a = (rho - grid_step).max(0.0);
                    let b = (rho + grid_step).min(1.0);
                    let (rr, fr) = crate::math::golden_section_min(&fail_at, a, b, 1e-7);
                    if fr < fail_at(rho) && undet_at(rr) <= target.unwrap() {
                        rr
                    } else {
                        rho
                    }
                }
                _ => {
                    let a = (best_u.0 - grid_step).max(0.0);
                    let b = (best_u.0 + grid_step).min(1.0);
                    let (rr, ur) = crate::math::golden_section_min(&undet_at, a, b, 1e-7);
                    if ur < best_u.1 {
                        rr
                    } else {
                        best_u.0
                    }
                }
            };
            undet.values[i][j] = undet_at(rho_star);
            fail.values[i][j] = fail_at(rho_star);
            undet.rho_star[i][j] = rho_star;
            fail.rho_star[i][j] = rho_star;
            let v = rho_star / (1.0 + rho_star);
            undet.v_star.as_mut().unwrap()[i][j] = v;
            fail.v_star.as_mut().unwrap()[i][j] = v;
        }
    }
    Ok((undet, fail))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::standard_channel;
    use approx::assert_relative_eq;

    #[test]
    fn state_exponent_reference_point() {
        // Uniform-input exponent of a BSC(0.01) at full tilt.
        assert_relative_eq!(state_exponent(0.01, 1.0), 0.5116614, epsilon = 1e-6);
        assert_eq!(state_exponent(0.3, 0.0), 0.0);
        assert_relative_eq!(state_exponent(0.0, 0.7), 0.7 * LN_2, epsilon = 1e-15);
        // Larger crossover, smaller exponent.
        assert!(state_exponent(0.01, 0.5) > state_exponent(0.1, 0.5));
    }

    #[test]
    fn biased_input_reduces_to_uniform() {
        let e = [0.01, 0.1];
        let f = [0.6, 0.4];
        for &rho in &[0.2, 0.7, 1.0] {
            assert_relative_eq!(
                gallager_exponent_with_input(&e, &f, rho, 0.5),
                gallager_exponent(&e, &f, rho),
                epsilon = 1e-13
            );
        }
    }

    #[test]
    fn code_params_size_bookkeeping() {
        let code = CodeParams::new(50, 0.5).unwrap();
        assert_relative_eq!(code.ln_codebook_size(), 25.0 * LN_2, epsilon = 1e-12);
        assert!(code.has_integer_size());
        let frac = CodeParams::new(50, 0.25).unwrap();
        assert!(!frac.has_integer_size());
        // ln(M - 1) for M = 2: exactly 0.
        let tiny = CodeParams::new(2, 0.5).unwrap();
        assert_relative_eq!(tiny.ln_competitors(), 0.0, epsilon = 1e-12);
        assert!(CodeParams::new(0, 0.5).is_err());
        assert!(CodeParams::new(10, 0.0).is_err());
        assert!(CodeParams::new(10, 1.5).is_err());
    }

    #[test]
    fn matrix_bound_at_zero_tilt_is_transition_law() {
        let spec = standard_channel();
        let code = CodeParams::new(40, 0.5).unwrap();
        let m = gallager_matrix_value(&spec, &code, 0.0).unwrap();
        let law = discrete_occupancy_law(0.0533, 0.08, 40).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(m[i][j], law.transition_mass(i, j), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn uncapped_type_sum_equals_matrix_product() {
        // Without the cap the type sum factorises into the matrix power.
        let spec = standard_channel();
        let code = CodeParams::new(12, 0.5).unwrap();
        let rho = 0.3;
        let law = discrete_occupancy_law(0.0533, 0.08, 12).unwrap();
        let b1 = state_exponent(0.01, rho);
        let b2 = state_exponent(0.1, rho);
        let r = code.rate_nats();
        let matrix = gallager_matrix_value(&spec, &code, rho).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut direct = 0.0;
                for m in 0..=12usize {
                    let e0 = (m as f64 * b1 + (12 - m) as f64 * b2) / 12.0;
                    direct += (-12.0 * (e0 - rho * r)).exp() * law.prob(m, i, j);
                }
                assert_relative_eq!(direct, matrix[i][j], epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn capped_type_sum_below_matrix_bound() {
        let spec = standard_channel();
        let code = CodeParams::new(60, 0.5).unwrap();
        let law = discrete_occupancy_law(0.0533, 0.08, 60).unwrap();
        for &rho in &[0.2, 0.6, 1.0] {
            let matrix = gallager_matrix_value(&spec, &code, rho).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    let ts = type_sum_value(&law, (0.01, 0.1), &code, rho, i, j);
                    assert!(
                        ts <= matrix[i][j] * (1.0 + 1e-12),
                        "type sum above matrix bound at rho={rho}"
                    );
                }
            }
        }
    }

    #[test]
    fn optimized_bounds_stay_below_transition_law() {
        let spec = standard_channel();
        let code = CodeParams::new(80, 0.6).unwrap();
        let law = discrete_occupancy_law(0.0533, 0.08, 80).unwrap();
        let g = gallager_matrix_bound(&spec, &code, 0.01).unwrap();
        let t = type_sum_bound(&spec, &code, 0.01).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let pn = law.transition_mass(i, j);
                assert!(g.values[i][j] <= pn * (1.0 + 1e-10));
                assert!(t.values[i][j] <= g.values[i][j] * (1.0 + 1e-10));
                assert!(t.values[i][j] >= 0.0);
            }
        }
        assert!(g.scalar(&[0.6, 0.4]) <= 1.0 + 1e-10);
    }

    #[test]
    fn rare_transition_tracks_type_sum_at_scale() {
        // With rates scaled as mu = N alpha the limit law approximates the
        // block law; the two bounds should be within a few percent.
        let spec = standard_channel();
        let n = 100;
        let code = CodeParams::new(n, 0.5).unwrap();
        let law =
            crate::occupation::continuous_occupancy_law(n as f64 * 0.0533, n as f64 * 0.08)
                .unwrap();
        let rare = rare_transition_bound(&law, (0.01, 0.1), &code, 0.01).unwrap();
        let ts = type_sum_bound(&spec, &code, 0.01).unwrap();
        let pi = [0.6, 0.4];
        let (a, b) = (rare.scalar(&pi), ts.scalar(&pi));
        // The limit error is of the order of the per-block jump count
        // times alpha, so expect agreement to within ~10% here.
        assert!(
            (a - b).abs() / b < 0.10,
            "limit bound {a} far from block bound {b}"
        );
    }

    #[test]
    fn margined_pair_reduces_to_type_sum_at_zero_margin() {
        let spec = standard_channel();
        let code = CodeParams::new(60, 0.5).unwrap();
        let (u, f) = undetected_and_error_bounds(&spec, &code, 0.0, None, 0.01).unwrap();
        let ts = type_sum_bound(&spec, &code, 0.01).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(u.values[i][j], ts.values[i][j], max_relative = 1e-9);
                assert_relative_eq!(f.values[i][j], ts.values[i][j], max_relative = 1e-9);
            }
        }
    }

    #[test]
    fn margin_moves_the_two_bounds_apart() {
        let spec = standard_channel();
        let code = CodeParams::new(170, 0.5).unwrap();
        let (u0, f0) = undetected_and_error_bounds(&spec, &code, 0.0, None, 0.01).unwrap();
        let (u1, f1) = undetected_and_error_bounds(&spec, &code, 0.05, None, 0.01).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!(u1.values[i][j] <= u0.values[i][j] * (1.0 + 1e-12));
                assert!(f1.values[i][j] >= f0.values[i][j] * (1.0 - 1e-12));
            }
        }
        assert!(u1.max_entry() < u0.max_entry());
    }

    #[test]
    fn margined_pair_with_target_prefers_cheaper_failure() {
        let spec = standard_channel();
        let code = CodeParams::new(170, 0.5).unwrap();
        let tau = 0.048;
        let (u_t, f_t) =
            undetected_and_error_bounds(&spec, &code, tau, Some(1e-5), 0.01).unwrap();
        let (_, f_free) = undetected_and_error_bounds(&spec, &code, tau, None, 0.01).unwrap();
        // The constrained tilt may only improve the failure side.
        for i in 0..2 {
            for j in 0..2 {
                if u_t.values[i][j] <= 1e-5 {
                    assert!(f_t.values[i][j] <= f_free.values[i][j] * (1.0 + 1e-9));
                }
            }
        }
    }
}
