//! Stationary analysis of the transmit queue driven by codeword
//! successes.
//!
//! Time is slotted by codewords. The queue level counts packets in the
//! system; the phase is the channel state at the codeword boundary. Each
//! slot brings a Poisson number of packet arrivals. The head-of-line
//! packet departs when the codeword decodes successfully and carries the
//! packet's last parcel, which happens with the geometric completion
//! probability [`completion_probability`]. The resulting chain has the
//! skip-free-to-the-left block structure
//!
//! ```text
//! level 0:  B_0 B_1 B_2 ...           B_m = a_m M
//! level k:  A_0 A_1 ...  (to k-1+m)   A_m = a_{m-1} U + a_m D
//! ```
//!
//! where `a` is the Poisson arrival law, `M` is the one-slot phase
//! transition matrix, `D = rho_r * S` is the joint departure/phase matrix
//! and `U = M - D` its complement. The stationary law is computed with
//! the usual two-stage scheme: a fixed point for the first-passage matrix
//! `G`, then a level-by-level recursion seeded by the boundary balance.

use nalgebra::{Matrix2, RowVector2};

use crate::bounds::CodeParams;
use crate::math::poisson_weights;
use crate::{Error, Result};

/// Arrival and packet-length parameters, in per-channel-use units.
#[derive(Clone, Copy, Debug)]
pub struct TrafficSpec {
    /// Expected packets per channel use; arrivals per codeword are
    /// Poisson with mean `arrival_rate * N`.
    pub arrival_rate: f64,
    /// Probability that any given information bit is the last bit of its
    /// packet (geometric packet lengths in bits).
    pub completion: f64,
}

impl TrafficSpec {
    pub fn new(arrival_rate: f64, completion: f64) -> Result<Self> {
        if !(arrival_rate > 0.0 && arrival_rate.is_finite()) {
            return Err(Error::param(format!(
                "arrival rate {arrival_rate} must be positive and finite"
            )));
        }
        if !(completion > 0.0 && completion <= 1.0) {
            return Err(Error::param(format!(
                "completion probability {completion} must lie in (0, 1]"
            )));
        }
        Ok(Self {
            arrival_rate,
            completion,
        })
    }
}

/// Probability that a codeword of `n * rate_bits` information bits
/// contains the final bit of the in-service packet.
pub fn completion_probability(p_geo: f64, rate_bits: f64, n: usize) -> Result<f64> {
    if !(p_geo > 0.0 && p_geo <= 1.0) {
        return Err(Error::param(format!(
            "per-bit completion probability {p_geo} must lie in (0, 1]"
        )));
    }
    if !(rate_bits > 0.0) || n == 0 {
        return Err(Error::param(
            "completion probability needs a positive payload",
        ));
    }
    let bits = rate_bits * n as f64;
    Ok(-(bits * (-p_geo).ln_1p()).exp_m1())
}

/// Where a success matrix came from; carried along so downstream reports
/// can tell analytic pipelines apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuccessProvenance {
    /// Complement of an exact decoding-failure matrix.
    Exact,
    /// Complement of an upper bound on failure, hence a lower bound on
    /// success; the queue built from it is pessimistic.
    Bound,
}

/// Joint success/phase matrix `S[i][j] = P(decode ok, S_N = j | S_0 = i)`
/// together with the unconditional phase transition `M = P^N`.
#[derive(Clone, Debug)]
pub struct SuccessMatrix {
    pub s: Matrix2<f64>,
    pub pn: Matrix2<f64>,
    pub provenance: SuccessProvenance,
}

impl SuccessMatrix {
    /// Build from a failure matrix: `S = M - F` entrywise. Fails when `F`
    /// is not dominated by the phase law.
    pub fn from_failure(
        failure: &[[f64; 2]; 2],
        pn: &[[f64; 2]; 2],
        provenance: SuccessProvenance,
    ) -> Result<Self> {
        for i in 0..2 {
            let row: f64 = pn[i].iter().sum();
            if (row - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidMatrix(format!(
                    "phase transition row {i} sums to {row}, expected 1"
                )));
            }
            for j in 0..2 {
                if !(0.0..=1.0).contains(&pn[i][j]) {
                    return Err(Error::InvalidMatrix(format!(
                        "phase transition entry ({i},{j}) = {} outside [0,1]",
                        pn[i][j]
                    )));
                }
                if failure[i][j] < 0.0 || failure[i][j] > pn[i][j] + 1e-12 {
                    return Err(Error::InvalidMatrix(format!(
                        "failure entry ({i},{j}) = {} exceeds its phase mass {}",
                        failure[i][j], pn[i][j]
                    )));
                }
            }
        }
        let s = Matrix2::from_fn(|i, j| (pn[i][j] - failure[i][j]).max(0.0));
        let pn = Matrix2::from_fn(|i, j| pn[i][j]);
        Ok(Self { s, pn, provenance })
    }

    /// Stationary phase distribution of the codeword-boundary chain.
    pub fn phase_stationary(&self) -> Result<RowVector2<f64>> {
        let a = self.pn[(0, 1)];
        let b = self.pn[(1, 0)];
        if a + b <= 0.0 {
            return Err(Error::Reducible(
                "phase chain never leaves its starting state".into(),
            ));
        }
        Ok(RowVector2::new(b / (a + b), a / (a + b)))
    }
}

/// Transition blocks of the level/phase chain.
#[derive(Clone, Debug)]
pub struct QueueBlocks {
    /// Poisson arrival probabilities `a_0..a_K`, truncated.
    pub arrivals: Vec<f64>,
    /// `A_m`: level `k >= 1` to `k - 1 + m`, length `K + 2`.
    pub a_blocks: Vec<Matrix2<f64>>,
    /// `B_m`: level 0 to `m`, length `K + 1`.
    pub boundary: Vec<Matrix2<f64>>,
    /// Packet-completion probability per successful codeword.
    pub rho_r: f64,
    /// Mean arrivals per codeword.
    pub lambda_n: f64,
    /// Joint departure matrix `D = rho_r * S`.
    pub departure: Matrix2<f64>,
    pub pn: Matrix2<f64>,
    pub success: Matrix2<f64>,
}

/// Assemble the transition blocks for a success matrix and traffic
/// parameters. `tail_tol` truncates the Poisson arrival law.
pub fn build_blocks(
    success: &SuccessMatrix,
    traffic: &TrafficSpec,
    code: &CodeParams,
    tail_tol: f64,
) -> Result<QueueBlocks> {
    if !(tail_tol > 0.0 && tail_tol < 1e-2) {
        return Err(Error::param(format!(
            "arrival truncation tolerance {tail_tol} out of range"
        )));
    }
    let lambda_n = traffic.arrival_rate * code.n() as f64;
    let rho_r = completion_probability(traffic.completion, code.rate_bits(), code.n())?;
    if !(lambda_n >= 0.0 && lambda_n < 700.0) {
        return Err(Error::param(format!(
            "mean arrivals per codeword {lambda_n} out of range"
        )));
    }
    let arrivals = poisson_weights(lambda_n, tail_tol);
    let departure = success.s * rho_r;
    let stay = success.pn - departure;
    let k = arrivals.len();
    let mut a_blocks = Vec::with_capacity(k + 1);
    for m in 0..=k {
        let from_stay = if m >= 1 { stay * arrivals[m - 1] } else { Matrix2::zeros() };
        let from_dep = if m < k { departure * arrivals[m] } else { Matrix2::zeros() };
        a_blocks.push(from_stay + from_dep);
    }
    let boundary = arrivals.iter().map(|&a| success.pn * a).collect();
    Ok(QueueBlocks {
        arrivals,
        a_blocks,
        boundary,
        rho_r,
        lambda_n,
        departure,
        pn: success.pn,
        success: success.s,
    })
}

/// Mean drift of the level process away from the boundary: arrivals per
/// slot minus the stationary departure rate. Negative drift means the
/// queue is stable.
pub fn stability_drift(blocks: &QueueBlocks) -> Result<f64> {
    let a = blocks.pn[(0, 1)];
    let b = blocks.pn[(1, 0)];
    if a + b <= 0.0 {
        return Err(Error::Reducible(
            "phase chain never leaves its starting state".into(),
        ));
    }
    let pi = RowVector2::new(b / (a + b), a / (a + b));
    let dep_rate = pi[0] * (blocks.departure[(0, 0)] + blocks.departure[(0, 1)])
        + pi[1] * (blocks.departure[(1, 0)] + blocks.departure[(1, 1)]);
    Ok(blocks.lambda_n - dep_rate)
}

fn horner(blocks: &[Matrix2<f64>], g: &Matrix2<f64>) -> Matrix2<f64> {
    let mut acc = blocks[blocks.len() - 1];
    for m in (0..blocks.len() - 1).rev() {
        acc = blocks[m] + acc * g;
    }
    acc
}

/// First-passage matrix `G`: entry `(i, j)` is the probability that,
/// starting one level up in phase `i`, the chain first returns to the
/// lower level in phase `j`. Solves `G = sum_m A_m G^m` by fixed-point
/// iteration from zero, which converges monotonically for stable chains.
pub fn solve_g_matrix(blocks: &QueueBlocks) -> Result<Matrix2<f64>> {
    let drift = stability_drift(blocks)?;
    if drift >= 0.0 {
        return Err(Error::Unstable { drift });
    }
    let mut g = Matrix2::zeros();
    for _ in 0..100_000 {
        let next = horner(&blocks.a_blocks, &g);
        let delta = (next - g).abs().max();
        g = next;
        if delta <= 1e-13 {
            return Ok(g);
        }
    }
    Err(Error::NoConvergence(
        "first-passage fixed point did not reach tolerance".into(),
    ))
}

/// `bar[k] = sum_{m >= k} blocks[m] G^{m-k}`, computed backward.
fn bar_sums(blocks: &[Matrix2<f64>], g: &Matrix2<f64>) -> Vec<Matrix2<f64>> {
    let mut bars = vec![Matrix2::zeros(); blocks.len()];
    let mut acc = Matrix2::zeros();
    for k in (0..blocks.len()).rev() {
        acc = blocks[k] + acc * g;
        bars[k] = acc;
    }
    bars
}

/// Left null vector of the 2x2 matrix `m`, nonnegative and unnormalised.
fn left_null_vector(m: &Matrix2<f64>) -> Result<RowVector2<f64>> {
    let c1 = RowVector2::new(m[(1, 0)], -m[(0, 0)]);
    let c2 = RowVector2::new(m[(1, 1)], -m[(0, 1)]);
    let mut x = if c1.abs().sum() >= c2.abs().sum() { c1 } else { c2 };
    if x[0] + x[1] < 0.0 {
        x = -x;
    }
    let scale = x.abs().max();
    if scale == 0.0 {
        return Err(Error::NoConvergence(
            "boundary balance has a vanishing null vector".into(),
        ));
    }
    if x.min() < -1e-10 * scale {
        return Err(Error::NoConvergence(
            "boundary balance produced a sign-indefinite vector".into(),
        ));
    }
    Ok(RowVector2::new(x[0].max(0.0), x[1].max(0.0)))
}

/// Stationary level/phase distribution, phase-resolved per level, plus
/// the extrapolated mass beyond the computed levels.
#[derive(Clone, Debug)]
pub struct StationaryLevels {
    /// `levels[l] = [P(L = l, phase 0), P(L = l, phase 1)]`.
    pub levels: Vec<[f64; 2]>,
    /// Geometric estimate of the stationary mass above the last computed
    /// level, included in the normalisation.
    pub residual: f64,
}

impl StationaryLevels {
    /// Total probability of level `l`.
    pub fn level_mass(&self, l: usize) -> f64 {
        self.levels.get(l).map_or(0.0, |v| v[0] + v[1])
    }

    /// `P(L > q)` where `L` counts packets in the system. Negative
    /// thresholds give 1.
    pub fn tail_probability(&self, q: i64) -> Result<f64> {
        if q < 0 {
            return Ok(1.0);
        }
        let q = q as usize;
        if q + 1 > self.levels.len() {
            return Err(Error::param(format!(
                "threshold {q} exceeds the {} computed levels",
                self.levels.len()
            )));
        }
        if self.residual > 1e-9 {
            return Err(Error::ResidualTooLarge {
                residual: self.residual,
                tol: 1e-9,
            });
        }
        let head: f64 = (0..=q).map(|l| self.level_mass(l)).sum();
        Ok((1.0 - head).max(0.0))
    }
}

/// Hard cap on the level recursion; a stable queue that has not decayed
/// by then is too close to critical for the geometric tail estimate.
const MAX_LEVELS: usize = 5000;

/// Level-by-level stationary recursion. Runs for at least `min_levels`
/// levels, then continues until the per-level mass falls below 1e-13 of
/// the accumulated total.
pub fn stationary_levels(
    blocks: &QueueBlocks,
    g: &Matrix2<f64>,
    min_levels: usize,
) -> Result<StationaryLevels> {
    let abar = bar_sums(&blocks.a_blocks, g);
    let bbar = bar_sums(&blocks.boundary, g);
    let abar_at = |k: usize| abar.get(k).copied().unwrap_or_else(Matrix2::zeros);
    let bbar_at = |k: usize| bbar.get(k).copied().unwrap_or_else(Matrix2::zeros);

    let pi0 = left_null_vector(&(Matrix2::identity() - bbar[0]))?;
    let kernel = (Matrix2::identity() - abar[1]).try_inverse().ok_or_else(|| {
        Error::NoConvergence("level recursion kernel is singular".into())
    })?;

    let mut pis: Vec<RowVector2<f64>> = vec![pi0];
    let mut total = pi0.sum();
    let min_levels = min_levels.max(4);
    loop {
        let l = pis.len();
        if l >= MAX_LEVELS {
            break;
        }
        let mut rhs = pi0 * bbar_at(l);
        // Highest block index is K + 1, so only the last few levels feed
        // each step; older ones multiply a zero bar.
        let k_lo = if l > abar.len() { l + 1 - abar.len() } else { 1 };
        for k in k_lo..l {
            rhs += pis[k] * abar_at(l + 1 - k);
        }
        let pi_l = rhs * kernel;
        let mass = pi_l.sum();
        pis.push(pi_l);
        total += mass;
        if l >= min_levels && mass < 1e-13 * total {
            break;
        }
    }

    let last = pis.len() - 1;
    let m_last = pis[last].sum();
    let m_prev = pis[last - 1].sum();
    let residual = if m_last <= 0.0 || m_prev <= 0.0 {
        0.0
    } else {
        let r = m_last / m_prev;
        if r >= 1.0 {
            return Err(Error::NoConvergence(
                "level masses are not decaying; queue is too close to critical".into(),
            ));
        }
        m_last * r / (1.0 - r)
    };
    let scale = 1.0 / (total + residual);
    let levels = pis
        .iter()
        .map(|p| [p[0] * scale, p[1] * scale])
        .collect();
    Ok(StationaryLevels {
        levels,
        residual: residual * scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy_success(fail_scale: f64) -> SuccessMatrix {
        let pn = [[0.7, 0.3], [0.45, 0.55]];
        let failure = [
            [0.02 * fail_scale, 0.05 * fail_scale],
            [0.08 * fail_scale, 0.11 * fail_scale],
        ];
        SuccessMatrix::from_failure(&failure, &pn, SuccessProvenance::Exact).unwrap()
    }

    fn toy_traffic() -> TrafficSpec {
        TrafficSpec::new(1.0 / 575.0, 0.0066).unwrap()
    }

    fn toy_code() -> CodeParams {
        CodeParams::new(170, 0.5).unwrap()
    }

    #[test]
    fn completion_examples() {
        assert_relative_eq!(completion_probability(1.0, 0.5, 10).unwrap(), 1.0);
        assert_relative_eq!(
            completion_probability(0.005, 0.5, 170).unwrap(),
            0.346925,
            epsilon = 1e-5
        );
        // A one-bit payload completes exactly with the per-bit probability.
        assert_relative_eq!(
            completion_probability(0.3, 1.0, 1).unwrap(),
            0.3,
            epsilon = 1e-14
        );
        assert!(completion_probability(0.0, 0.5, 10).is_err());
        assert!(completion_probability(1.2, 0.5, 10).is_err());
    }

    #[test]
    fn from_failure_rejects_bad_inputs() {
        let pn = [[0.7, 0.3], [0.45, 0.55]];
        let too_big = [[0.8, 0.0], [0.0, 0.0]];
        assert!(SuccessMatrix::from_failure(&too_big, &pn, SuccessProvenance::Exact).is_err());
        let negative = [[-0.1, 0.0], [0.0, 0.0]];
        assert!(SuccessMatrix::from_failure(&negative, &pn, SuccessProvenance::Exact).is_err());
        let bad_rows = [[0.9, 0.3], [0.45, 0.55]];
        assert!(
            SuccessMatrix::from_failure(&[[0.0; 2]; 2], &bad_rows, SuccessProvenance::Exact)
                .is_err()
        );
    }

    #[test]
    fn block_families_resolve_the_phase_law() {
        let blocks = build_blocks(&toy_success(1.0), &toy_traffic(), &toy_code(), 1e-14).unwrap();
        let mass: f64 = blocks.arrivals.iter().sum();
        assert!(mass > 1.0 - 1e-13);
        // Summing out the level move recovers the phase transition,
        // scaled by the retained arrival mass.
        let a_total: Matrix2<f64> = blocks.a_blocks.iter().sum();
        let b_total: Matrix2<f64> = blocks.boundary.iter().sum();
        for i in 0..2 {
            for j in 0..2 {
                assert_relative_eq!(
                    a_total[(i, j)],
                    blocks.pn[(i, j)] * mass,
                    epsilon = 1e-12
                );
                assert_relative_eq!(
                    b_total[(i, j)],
                    blocks.pn[(i, j)] * mass,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn g_matrix_is_stochastic_for_stable_queue() {
        let blocks = build_blocks(&toy_success(1.0), &toy_traffic(), &toy_code(), 1e-14).unwrap();
        assert!(stability_drift(&blocks).unwrap() < 0.0);
        let g = solve_g_matrix(&blocks).unwrap();
        for i in 0..2 {
            let row = g[(i, 0)] + g[(i, 1)];
            assert_relative_eq!(row, 1.0, epsilon = 1e-10);
            assert!(g[(i, 0)] >= 0.0 && g[(i, 1)] >= 0.0);
        }
    }

    #[test]
    fn unstable_queue_is_rejected() {
        let success = toy_success(1.0);
        let traffic = TrafficSpec::new(0.02, 0.0066).unwrap();
        let blocks = build_blocks(&success, &traffic, &toy_code(), 1e-14).unwrap();
        match solve_g_matrix(&blocks) {
            Err(Error::Unstable { drift }) => assert!(drift >= 0.0),
            other => panic!("expected instability, got {other:?}"),
        }
    }

    #[test]
    fn stationary_solution_satisfies_global_balance() {
        let blocks = build_blocks(&toy_success(1.0), &toy_traffic(), &toy_code(), 1e-14).unwrap();
        let g = solve_g_matrix(&blocks).unwrap();
        let sol = stationary_levels(&blocks, &g, 32).unwrap();
        let pi = |l: usize| RowVector2::new(sol.levels[l][0], sol.levels[l][1]);
        let a_at = |m: usize| blocks.a_blocks.get(m).copied().unwrap_or_else(Matrix2::zeros);
        let b_at = |m: usize| blocks.boundary.get(m).copied().unwrap_or_else(Matrix2::zeros);
        // pi_j = pi_0 B_j + sum_{k=1}^{j+1} pi_k A_{j+1-k}
        for j in 0..10usize {
            let mut rhs = pi(0) * b_at(j);
            for k in 1..=j + 1 {
                rhs += pi(k) * a_at(j + 1 - k);
            }
            let lhs = pi(j);
            for c in 0..2 {
                assert_relative_eq!(lhs[c], rhs[c], epsilon = 1e-13, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn masses_normalise_and_tails_decrease() {
        let blocks = build_blocks(&toy_success(1.0), &toy_traffic(), &toy_code(), 1e-14).unwrap();
        let g = solve_g_matrix(&blocks).unwrap();
        let sol = stationary_levels(&blocks, &g, 16).unwrap();
        let total: f64 = (0..sol.levels.len()).map(|l| sol.level_mass(l)).sum();
        assert_relative_eq!(total + sol.residual, 1.0, epsilon = 1e-12);
        assert_relative_eq!(sol.tail_probability(-1).unwrap(), 1.0);
        let mut prev = 1.0;
        for q in 0..12 {
            let t = sol.tail_probability(q).unwrap();
            assert!(t <= prev + 1e-15);
            assert!(t >= 0.0);
            prev = t;
        }
    }

    #[test]
    fn worse_code_means_heavier_tail() {
        let traffic = toy_traffic();
        let code = toy_code();
        // Scale 2 degrades the service law while keeping the drift negative;
        // scale 4 would tip this toy configuration into instability.
        let tails: Vec<f64> = [1.0, 2.0]
            .iter()
            .map(|&scale| {
                let blocks = build_blocks(&toy_success(scale), &traffic, &code, 1e-14).unwrap();
                let g = solve_g_matrix(&blocks).unwrap();
                stationary_levels(&blocks, &g, 16)
                    .unwrap()
                    .tail_probability(6)
                    .unwrap()
            })
            .collect();
        assert!(
            tails[1] > tails[0],
            "larger failure mass should inflate the tail: {tails:?}"
        );
    }
}
