//! Monte Carlo and exhaustive cross-checks for the analytic pipeline.
//!
//! Everything here is deliberately independent of the formulas it
//! validates: the occupancy enumeration walks raw state paths, the code
//! simulator draws actual random codebooks and runs the threshold
//! decoder, and the queue simulators step the Lindley recursion. Results
//! are reproducible for a fixed seed and independent of thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bounds::CodeParams;
use crate::channel::FscSpec;
use crate::exact::{ml_gamma, DecisionRule};
use crate::occupation::DiscreteOccupancyLaw;
use crate::queueing::{SuccessMatrix, TrafficSpec};
use crate::{Error, Result};

/// Reproducibility knobs shared by the simulators.
#[derive(Clone, Copy, Debug)]
pub struct SimConfig {
    pub seed: u64,
    /// Trials per initial state (code simulation) or steps (queues).
    pub trials: u64,
}

/// Trials processed per RNG stream; chunking keeps parallel runs
/// byte-for-byte reproducible regardless of thread count.
const CHUNK: u64 = 65_536;

/// Occupancy law by brute-force enumeration of all `2^n` state paths.
/// Only feasible for short blocks; serves as an oracle for the
/// combinatorial law.
pub fn enumerate_occupancy_exact(alpha: f64, beta: f64, n: usize) -> Result<DiscreteOccupancyLaw> {
    if n == 0 || n > 14 {
        return Err(Error::param(format!(
            "path enumeration handles 1 <= n <= 14, got {n}"
        )));
    }
    for (name, v) in [("alpha", alpha), ("beta", beta)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::param(format!("{name} = {v} must lie in (0, 1)")));
        }
    }
    let step = [[1.0 - alpha, alpha], [beta, 1.0 - beta]];
    let mut table = vec![[[0.0f64; 2]; 2]; n + 1];
    for init in 0..2usize {
        for mask in 0u32..(1u32 << n) {
            // Bit t-1 of the mask is the state before symbol t+1; the
            // state before symbol 1 is `init`.
            let mut s = init;
            let mut prob = 1.0;
            let mut good = 0usize;
            for t in 0..n {
                if s == 0 {
                    good += 1;
                }
                let next = ((mask >> t) & 1) as usize;
                prob *= step[s][next];
                s = next;
            }
            table[good][init][s] += prob;
        }
    }
    Ok(DiscreteOccupancyLaw::from_parts(n, table))
}

/// Empirical failure and undetected-failure matrices from simulated
/// random codebooks, jointly with the final state.
#[derive(Clone, Debug, Serialize)]
pub struct CodeFailureEstimate {
    pub failure: [[f64; 2]; 2],
    pub failure_stderr: [[f64; 2]; 2],
    pub undetected: [[f64; 2]; 2],
    pub undetected_stderr: [[f64; 2]; 2],
    pub trials_per_state: u64,
    pub gamma: f64,
    pub margin: u32,
}

/// Simulate the threshold decoder on freshly drawn random codebooks.
///
/// Each trial runs the channel from a fixed initial state, draws `M - 1`
/// independent uniform competitors (the transmitted word is pinned to
/// zero by symmetry) and checks whether any competitor falls within the
/// margin-grown (failure) or margin-shrunk (undetected) weighted radius.
/// Restricted to blocks short enough for exhaustive bit masks.
pub fn simulate_random_code_failure(
    spec: &FscSpec,
    code: &CodeParams,
    rule: DecisionRule,
    margin: u32,
    config: &SimConfig,
) -> Result<CodeFailureEstimate> {
    if spec.states() != 2 {
        return Err(Error::param("code simulation expects a two-state channel"));
    }
    let n = code.n();
    if n > 16 {
        return Err(Error::param(format!(
            "code simulation handles n <= 16, got {n}"
        )));
    }
    if !code.has_integer_size() {
        return Err(Error::param(
            "code simulation needs an integer codebook size",
        ));
    }
    let m_total = (code.rate_bits() * n as f64).exp2().round() as u64;
    if !(2..=64).contains(&m_total) {
        return Err(Error::param(format!(
            "code simulation handles 2 <= M <= 64, got {m_total}"
        )));
    }
    if config.trials == 0 {
        return Err(Error::param("trial count must be positive"));
    }
    let eps = [spec.crossover()[0], spec.crossover()[1]];
    let gamma = match rule {
        DecisionRule::MaximumLikelihood => ml_gamma(eps[0], eps[1])?,
        DecisionRule::MinimumDistance => 1.0,
    };
    let (alpha, beta) = spec.two_state_rates(n)?;
    let stay = [1.0 - alpha, 1.0 - beta];
    let full_mask = if n == 32 { u32::MAX } else { (1u32 << n) - 1 };
    let competitors = (m_total - 1) as usize;
    let nu = margin as f64;

    let mut failure = [[0.0f64; 2]; 2];
    let mut failure_stderr = [[0.0f64; 2]; 2];
    let mut undetected = [[0.0f64; 2]; 2];
    let mut undetected_stderr = [[0.0f64; 2]; 2];
    for init in 0..2usize {
        let chunks = config.trials.div_ceil(CHUNK);
        let counts = (0..chunks)
            .into_par_iter()
            .map(|chunk| {
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                rng.set_stream(chunk + ((init as u64) << 32));
                let todo = CHUNK.min(config.trials - chunk * CHUNK);
                let mut fail = [0u64; 2];
                let mut undet = [0u64; 2];
                for _ in 0..todo {
                    let mut s = init;
                    let mut good_mask = 0u32;
                    let mut err = 0u32;
                    for t in 0..n {
                        if s == 0 {
                            good_mask |= 1 << t;
                        }
                        if rng.gen::<f64>() < eps[s] {
                            err |= 1 << t;
                        }
                        if rng.gen::<f64>() >= stay[s] {
                            s = 1 - s;
                        }
                    }
                    let b = gamma * (err & good_mask).count_ones() as f64
                        + (err & !good_mask).count_ones() as f64;
                    let mut failed = false;
                    let mut unnoticed = false;
                    for _ in 0..competitors {
                        let w = rng.gen::<u32>() & full_mask;
                        let diff = w ^ err;
                        let d = gamma * (diff & good_mask).count_ones() as f64
                            + (diff & !good_mask).count_ones() as f64;
                        // Distances tie only when the weighted parts match
                        // bit for bit, so plain comparisons are exact.
                        failed |= d <= b + nu;
                        unnoticed |= d <= b - nu;
                        if failed && unnoticed {
                            break;
                        }
                    }
                    if failed {
                        fail[s] += 1;
                    }
                    if unnoticed {
                        undet[s] += 1;
                    }
                }
                (fail, undet)
            })
            .reduce(
                || ([0u64; 2], [0u64; 2]),
                |a, b| {
                    (
                        [a.0[0] + b.0[0], a.0[1] + b.0[1]],
                        [a.1[0] + b.1[0], a.1[1] + b.1[1]],
                    )
                },
            );
        let t = config.trials as f64;
        for j in 0..2 {
            let pf = counts.0[j] as f64 / t;
            let pu = counts.1[j] as f64 / t;
            failure[init][j] = pf;
            failure_stderr[init][j] = (pf * (1.0 - pf) / t).sqrt();
            undetected[init][j] = pu;
            undetected_stderr[init][j] = (pu * (1.0 - pu) / t).sqrt();
        }
    }
    Ok(CodeFailureEstimate {
        failure,
        failure_stderr,
        undetected,
        undetected_stderr,
        trials_per_state: config.trials,
        gamma,
        margin,
    })
}

fn sample_poisson<R: Rng>(rng: &mut R, lambda: f64) -> u64 {
    let u: f64 = rng.gen();
    let mut k = 0u64;
    let mut p = (-lambda).exp();
    let mut cum = p;
    while u > cum && k < 1000 {
        k += 1;
        p *= lambda / k as f64;
        cum += p;
    }
    k
}

/// One queue slot under shared randomness. The phase draw ignores the
/// success matrix so two queues with the same `pn` stay on one phase
/// path.
struct SlotDraw {
    arrivals: u64,
    phase_u: f64,
    success_u: f64,
    completion_u: f64,
}

impl SlotDraw {
    fn sample<R: Rng>(rng: &mut R, lambda_n: f64) -> Self {
        Self {
            arrivals: sample_poisson(rng, lambda_n),
            phase_u: rng.gen(),
            success_u: rng.gen(),
            completion_u: rng.gen(),
        }
    }
}

fn advance(
    q: i64,
    phase: usize,
    success: &SuccessMatrix,
    rho_r: f64,
    draw: &SlotDraw,
) -> (i64, usize) {
    let row0 = success.pn[(phase, 0)];
    let next = if draw.phase_u < row0 { 0 } else { 1 };
    let mass = success.pn[(phase, next)];
    let ok = mass > 0.0 && draw.success_u < success.s[(phase, next)] / mass;
    let dep = (q > 0 && ok && draw.completion_u < rho_r) as i64;
    (q + draw.arrivals as i64 - dep, next)
}

/// Empirical queue tail from a sequential Lindley recursion.
#[derive(Clone, Debug, Serialize)]
pub struct QueueSimEstimate {
    /// Fraction of post-warmup slots with more than `threshold` packets.
    pub tail: f64,
    /// Batch-means standard error (100 batches); slots are correlated,
    /// so the naive binomial error would be optimistic.
    pub stderr: f64,
    pub steps: u64,
    pub mean_level: f64,
}

/// Simulate the codeword-slotted queue and estimate `P(L > threshold)`.
pub fn simulate_queue(
    success: &SuccessMatrix,
    traffic: &TrafficSpec,
    code: &CodeParams,
    threshold: i64,
    warmup: u64,
    config: &SimConfig,
) -> Result<QueueSimEstimate> {
    if config.trials == 0 {
        return Err(Error::param("step count must be positive"));
    }
    let lambda_n = traffic.arrival_rate * code.n() as f64;
    let rho_r =
        crate::queueing::completion_probability(traffic.completion, code.rate_bits(), code.n())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut q = 0i64;
    let mut phase = 0usize;
    for _ in 0..warmup {
        let draw = SlotDraw::sample(&mut rng, lambda_n);
        let (nq, np) = advance(q, phase, success, rho_r, &draw);
        q = nq;
        phase = np;
    }
    let steps = config.trials;
    let batches = 100u64.min(steps);
    let batch_size = steps / batches;
    let mut batch_means = Vec::with_capacity(batches as usize);
    let mut hits_total = 0u64;
    let mut level_sum = 0.0f64;
    let mut batch_hits = 0u64;
    let mut in_batch = 0u64;
    let mut recorded = 0u64;
    for _ in 0..steps {
        let draw = SlotDraw::sample(&mut rng, lambda_n);
        let (nq, np) = advance(q, phase, success, rho_r, &draw);
        q = nq;
        phase = np;
        recorded += 1;
        level_sum += q as f64;
        if q > threshold {
            hits_total += 1;
            batch_hits += 1;
        }
        in_batch += 1;
        if in_batch == batch_size && (batch_means.len() as u64) < batches {
            batch_means.push(batch_hits as f64 / batch_size as f64);
            batch_hits = 0;
            in_batch = 0;
        }
    }
    let tail = hits_total as f64 / recorded as f64;
    let nb = batch_means.len() as f64;
    let stderr = if nb >= 2.0 {
        let mean: f64 = batch_means.iter().sum::<f64>() / nb;
        let var: f64 =
            batch_means.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (nb - 1.0);
        (var / nb).sqrt()
    } else {
        f64::NAN
    };
    Ok(QueueSimEstimate {
        tail,
        stderr,
        steps,
        mean_level: level_sum / recorded as f64,
    })
}

/// Outcome of a coupled run of two queues on shared randomness.
#[derive(Clone, Debug, Serialize)]
pub struct DominanceReport {
    pub steps: u64,
    /// Largest backlog excess of the pessimistic queue over the exact
    /// one; never negative when the run completes.
    pub max_gap: i64,
    pub final_exact: i64,
    pub final_bound: i64,
}

/// Drive an exact-success queue and a bound-success queue with the same
/// arrivals, phase path and decision variables, and verify pathwise that
/// the pessimistic queue never falls below the exact one. Any violation
/// aborts with an error; a completed run is evidence that the analytic
/// tail ordering is the right direction.
pub fn coupled_dominance_experiment(
    exact: &SuccessMatrix,
    bound: &SuccessMatrix,
    traffic: &TrafficSpec,
    code: &CodeParams,
    config: &SimConfig,
) -> Result<DominanceReport> {
    for i in 0..2 {
        for j in 0..2 {
            if (exact.pn[(i, j)] - bound.pn[(i, j)]).abs() > 1e-12 {
                return Err(Error::param(
                    "coupled queues need identical phase transition laws",
                ));
            }
            if exact.s[(i, j)] < bound.s[(i, j)] - 1e-15 {
                return Err(Error::param(format!(
                    "success entry ({i},{j}): exact {} below bound {}; coupling needs dominance",
                    exact.s[(i, j)],
                    bound.s[(i, j)]
                )));
            }
        }
    }
    let lambda_n = traffic.arrival_rate * code.n() as f64;
    let rho_r =
        crate::queueing::completion_probability(traffic.completion, code.rate_bits(), code.n())?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut q_exact = 0i64;
    let mut q_bound = 0i64;
    let mut phase = 0usize;
    let mut max_gap = 0i64;
    for step in 0..config.trials {
        let draw = SlotDraw::sample(&mut rng, lambda_n);
        let (qe, pe) = advance(q_exact, phase, exact, rho_r, &draw);
        let (qb, pb) = advance(q_bound, phase, bound, rho_r, &draw);
        debug_assert_eq!(pe, pb);
        q_exact = qe;
        q_bound = qb;
        phase = pe;
        if q_bound < q_exact {
            return Err(Error::DominanceViolation(format!(
                "step {step}: pessimistic queue {q_bound} fell below exact queue {q_exact}"
            )));
        }
        max_gap = max_gap.max(q_bound - q_exact);
    }
    Ok(DominanceReport {
        steps: config.trials,
        max_gap,
        final_exact: q_exact,
        final_bound: q_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::standard_channel;
    use crate::exact::{failure_matrix_exact, CompetitorModel};
    use crate::occupation::discrete_occupancy_law;
    use crate::queueing::SuccessProvenance;
    use approx::assert_relative_eq;

    #[test]
    fn enumeration_matches_combinatorial_law() {
        for &(alpha, beta, n) in &[(0.3f64, 0.4f64, 6usize), (0.0533, 0.08, 9)] {
            let law = discrete_occupancy_law(alpha, beta, n).unwrap();
            let oracle = enumerate_occupancy_exact(alpha, beta, n).unwrap();
            for m in 0..=n {
                for i in 0..2 {
                    for j in 0..2 {
                        assert_relative_eq!(
                            law.prob(m, i, j),
                            oracle.prob(m, i, j),
                            epsilon = 1e-13,
                            max_relative = 1e-12
                        );
                    }
                }
            }
        }
        assert!(enumerate_occupancy_exact(0.3, 0.4, 15).is_err());
    }

    #[test]
    fn code_simulation_is_seed_deterministic() {
        let spec = standard_channel();
        let code = CodeParams::new(8, 0.25).unwrap();
        let cfg = SimConfig { seed: 7, trials: 80_000 };
        let a = simulate_random_code_failure(
            &spec,
            &code,
            DecisionRule::MaximumLikelihood,
            1,
            &cfg,
        )
        .unwrap();
        let b = simulate_random_code_failure(
            &spec,
            &code,
            DecisionRule::MaximumLikelihood,
            1,
            &cfg,
        )
        .unwrap();
        assert_eq!(a.failure, b.failure);
        assert_eq!(a.undetected, b.undetected);
    }

    #[test]
    fn code_simulation_tracks_exact_matrix() {
        let spec = standard_channel();
        let code = CodeParams::new(8, 0.5).unwrap();
        let cfg = SimConfig { seed: 11, trials: 200_000 };
        let sim = simulate_random_code_failure(
            &spec,
            &code,
            DecisionRule::MinimumDistance,
            0,
            &cfg,
        )
        .unwrap();
        let exact = failure_matrix_exact(
            &spec,
            &code,
            DecisionRule::MinimumDistance,
            0,
            CompetitorModel::IndependentExact,
        )
        .unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let gap = (sim.failure[i][j] - exact.values[i][j]).abs();
                assert!(
                    gap <= 4.0 * sim.failure_stderr[i][j].max(1e-6),
                    "entry ({i},{j}): sim {} vs exact {}",
                    sim.failure[i][j],
                    exact.values[i][j]
                );
            }
        }
    }

    #[test]
    fn code_simulation_rejects_bad_shapes() {
        let spec = standard_channel();
        let cfg = SimConfig { seed: 1, trials: 10 };
        let long = CodeParams::new(20, 0.5).unwrap();
        assert!(simulate_random_code_failure(
            &spec,
            &long,
            DecisionRule::MinimumDistance,
            0,
            &cfg
        )
        .is_err());
        let fractional = CodeParams::new(10, 0.47).unwrap();
        assert!(simulate_random_code_failure(
            &spec,
            &fractional,
            DecisionRule::MinimumDistance,
            0,
            &cfg
        )
        .is_err());
    }

    fn toy_success(fail_scale: f64) -> SuccessMatrix {
        let pn = [[0.7, 0.3], [0.45, 0.55]];
        let failure = [
            [0.02 * fail_scale, 0.05 * fail_scale],
            [0.08 * fail_scale, 0.11 * fail_scale],
        ];
        SuccessMatrix::from_failure(&failure, &pn, SuccessProvenance::Exact).unwrap()
    }

    #[test]
    fn queue_simulation_matches_analytic_tail() {
        let success = toy_success(1.0);
        let traffic = TrafficSpec::new(1.0 / 575.0, 0.0066).unwrap();
        let code = CodeParams::new(170, 0.5).unwrap();
        let blocks = crate::queueing::build_blocks(&success, &traffic, &code, 1e-14).unwrap();
        let g = crate::queueing::solve_g_matrix(&blocks).unwrap();
        let levels = crate::queueing::stationary_levels(&blocks, &g, 16).unwrap();
        let want = levels.tail_probability(4).unwrap();
        let cfg = SimConfig { seed: 3, trials: 400_000 };
        let sim = simulate_queue(&success, &traffic, &code, 4, 20_000, &cfg).unwrap();
        assert!(
            (sim.tail - want).abs() <= 4.0 * sim.stderr.max(1e-4),
            "sim {} +- {} vs analytic {}",
            sim.tail,
            sim.stderr,
            want
        );
    }

    #[test]
    fn coupled_queues_respect_dominance() {
        let exact = toy_success(1.0);
        let bound = toy_success(3.0);
        let traffic = TrafficSpec::new(1.0 / 575.0, 0.0066).unwrap();
        let code = CodeParams::new(170, 0.5).unwrap();
        let cfg = SimConfig { seed: 5, trials: 200_000 };
        let report =
            coupled_dominance_experiment(&exact, &bound, &traffic, &code, &cfg).unwrap();
        assert_eq!(report.steps, 200_000);
        assert!(report.max_gap >= 0);
        // Swapping the roles must be rejected up front.
        assert!(coupled_dominance_experiment(&bound, &exact, &traffic, &code, &cfg).is_err());
    }
}
