//! Joint laws of state occupancy and endpoint states over one block.
//!
//! For a two-state chain run over a block of `N` symbols, the decoding
//! analysis needs the joint law of: the number of symbols governed by the
//! good state (`m`, counted over the states at symbol times `0..N-1`), and
//! the state right after the block (`S_N`), conditioned on the state at the
//! start (`S_0`). Three forms are provided:
//!
//! * [`discrete_occupancy_law`]: the exact law at finite `N`, in closed
//!   form (log-domain sums of binomial products).
//! * [`continuous_occupancy_law`]: the slow-transition limit, where the
//!   occupancy fraction has a Bessel-series density on `(0, 1)` plus
//!   endpoint atoms for paths that never switch.
//! * [`weighted_cdf_matrix`]: the distribution of a state-weighted time
//!   average for a general finite-state generator, evaluated by a
//!   convex-combination recursion that is stable in every regime.
//!
//! State indices are 0-based throughout: state 0 is the good state.

use nalgebra::DMatrix;

use crate::math::{
    adaptive_simpson, compensated_sum, ln_bessel_i0, ln_bessel_i1, log_sum_exp, poisson_weights,
    LnFactorial, NeumaierSum,
};
use crate::{Error, Result};

/// Exact joint law `P(m, S_N = j | S_0 = i)` for a two-state chain.
#[derive(Clone, Debug)]
pub struct DiscreteOccupancyLaw {
    n: usize,
    /// `table[m][i][j]`, `m = 0..=n`.
    table: Vec<[[f64; 2]; 2]>,
}

impl DiscreteOccupancyLaw {
    pub(crate) fn from_parts(n: usize, table: Vec<[[f64; 2]; 2]>) -> Self {
        debug_assert_eq!(table.len(), n + 1);
        Self { n, table }
    }

    /// Block length `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// `P(m good-state symbols, S_N = j | S_0 = i)`.
    pub fn prob(&self, m: usize, i: usize, j: usize) -> f64 {
        self.table[m][i][j]
    }

    /// The column of probabilities over `m = 0..=N` for fixed `(i, j)`.
    pub fn column(&self, i: usize, j: usize) -> Vec<f64> {
        self.table.iter().map(|t| t[i][j]).collect()
    }

    /// `P(S_N = j | S_0 = i)`: the occupancy law summed over `m`.
    pub fn transition_mass(&self, i: usize, j: usize) -> f64 {
        compensated_sum(&self.column(i, j))
    }

    /// Unconditional CDF of the occupancy fraction `m/N` under initial
    /// distribution `pi`, evaluated at `r` (jumps included from the left,
    /// i.e. this is the usual right-continuous CDF).
    pub fn unconditional_cdf(&self, pi: &[f64; 2], r: f64) -> f64 {
        let mut acc = NeumaierSum::new();
        for m in 0..=self.n {
            if m as f64 <= r * self.n as f64 + 1e-12 {
                for i in 0..2 {
                    for j in 0..2 {
                        acc.add(pi[i] * self.table[m][i][j]);
                    }
                }
            }
        }
        acc.value()
    }
}

/// Closed-form joint occupancy law for the two-state chain with per-symbol
/// leave probabilities `alpha` (good state) and `beta` (bad state).
///
/// Each entry is a sum over the number of good-runs, with binomial
/// coefficients counting the run-boundary placements; everything is
/// accumulated in the log domain so blocks of several hundred symbols with
/// rare transitions do not underflow.
pub fn discrete_occupancy_law(alpha: f64, beta: f64, n: usize) -> Result<DiscreteOccupancyLaw> {
    if !(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0) {
        return Err(Error::param(format!(
            "per-symbol rates ({alpha}, {beta}) must lie in (0, 1)"
        )));
    }
    if n == 0 {
        return Err(Error::param("block length must be positive"));
    }
    let fact = LnFactorial::new(n + 1);
    let la = (1.0 - alpha).ln();
    let lb = (1.0 - beta).ln();
    // Each interior switch pair contributes alpha*beta/((1-alpha)(1-beta)).
    let llam = alpha.ln() + beta.ln() - la - lb;

    // ln sum over run counts r of C(a, r + da) * C(b, r + db) * lam^r.
    let run_sum = |a: usize, da: i64, b: usize, db: i64, r_lo: i64| -> f64 {
        let r_hi = (a as i64 - da).min(b as i64 - db);
        if r_hi < r_lo {
            return f64::NEG_INFINITY;
        }
        let terms: Vec<f64> = (r_lo..=r_hi)
            .map(|r| {
                fact.ln_binomial(a, r + da) + fact.ln_binomial(b, r + db) + r as f64 * llam
            })
            .collect();
        log_sum_exp(&terms)
    };

    let mut table = vec![[[0.0f64; 2]; 2]; n + 1];
    for m in 0..=n {
        let n2 = n - m;
        // Start in the good state: m >= 1 because s_0 itself counts.
        if m == n {
            table[m][0][0] = ((n as f64) * la).exp();
            table[m][0][1] = alpha * (((n - 1) as f64) * la).exp();
        } else if m >= 1 {
            // End state good: runs of both kinds interleave, good first and
            // good last, so bad runs choose r-1 boundaries out of n2-1.
            let s_gg = run_sum(m, 0, n2 - 1, -1, 1);
            table[m][0][0] = ((m as f64) * la + (n2 as f64) * lb + s_gg).exp();
            // End state bad: the trailing bad run is open at the block end.
            let even = run_sum(m - 1, 0, n2 - 1, 0, 0);
            let odd = run_sum(m - 1, 0, n2 - 1, -1, 1);
            let s_gb = crate::math::log_add_exp(even, odd);
            table[m][0][1] =
                alpha * (((m - 1) as f64) * la + (n2 as f64) * lb + s_gb).exp();
        }
        // Start in the bad state: n2 >= 1 because s_0 counts as bad.
        if m == 0 {
            table[m][1][1] = ((n as f64) * lb).exp();
            table[m][1][0] = beta * (((n - 1) as f64) * lb).exp();
        } else if n2 >= 1 {
            let even = run_sum(n2 - 1, 0, m - 1, 0, 0);
            let odd = run_sum(n2 - 1, 0, m - 1, -1, 1);
            let s_bg = crate::math::log_add_exp(even, odd);
            table[m][1][0] =
                beta * ((m as f64) * la + ((n2 - 1) as f64) * lb + s_bg).exp();
            let s_bb = run_sum(n2, 0, m - 1, -1, 1);
            table[m][1][1] = ((m as f64) * la + (n2 as f64) * lb + s_bb).exp();
        }
    }
    Ok(DiscreteOccupancyLaw::from_parts(n, table))
}

/// Slow-transition limit of the occupancy law: the block shrinks to unit
/// time, the chain jumps at rates `mu` (out of good) and `xi` (out of bad).
#[derive(Clone, Copy, Debug)]
pub struct ContinuousOccupancyLaw {
    mu: f64,
    xi: f64,
}

/// Build the limit law; both jump rates must be positive.
pub fn continuous_occupancy_law(mu: f64, xi: f64) -> Result<ContinuousOccupancyLaw> {
    if !(mu > 0.0 && xi > 0.0) {
        return Err(Error::param(format!(
            "jump rates ({mu}, {xi}) must be positive"
        )));
    }
    Ok(ContinuousOccupancyLaw { mu, xi })
}

impl ContinuousOccupancyLaw {
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// Density of the good-state fraction `r` on `(0, 1)`, jointly with the
    /// end state `j`, from start state `i`. Endpoint values are the limits,
    /// which are finite; the endpoint atoms are reported separately.
    pub fn density(&self, i: usize, j: usize, r: f64) -> f64 {
        assert!((0.0..=1.0).contains(&r), "fraction out of range");
        let (mu, xi) = (self.mu, self.xi);
        let base = -mu * r - xi * (1.0 - r);
        let prod = mu * xi * r * (1.0 - r);
        let x = 2.0 * prod.sqrt();
        match (i, j) {
            // Bessel-1 entries have a square-root prefactor whose endpoint
            // blowup cancels against I_1(x) ~ x/2; take limits explicitly.
            (0, 0) => {
                if r == 1.0 {
                    (-mu).exp() * mu * xi
                } else if r == 0.0 {
                    0.0
                } else {
                    let lpre = 0.5 * ((mu * xi * r).ln() - (1.0 - r).ln());
                    (base + lpre + ln_bessel_i1(x)).exp()
                }
            }
            (1, 1) => {
                if r == 0.0 {
                    (-xi).exp() * mu * xi
                } else if r == 1.0 {
                    0.0
                } else {
                    let lpre = 0.5 * ((mu * xi * (1.0 - r)).ln() - r.ln());
                    (base + lpre + ln_bessel_i1(x)).exp()
                }
            }
            (0, 1) => mu * (base + ln_bessel_i0(x)).exp(),
            (1, 0) => xi * (base + ln_bessel_i0(x)).exp(),
            _ => panic!("state index out of range"),
        }
    }

    /// Mass of the endpoint atom for entry `(i, j)`: paths that never leave
    /// the starting state. Zero except for `(0,0)` (at `r = 1`) and `(1,1)`
    /// (at `r = 0`).
    pub fn atom_mass(&self, i: usize, j: usize) -> f64 {
        match (i, j) {
            (0, 0) => (-self.mu).exp(),
            (1, 1) => (-self.xi).exp(),
            _ => 0.0,
        }
    }

    /// Location of the endpoint atom, if any.
    pub fn atom_location(&self, i: usize, j: usize) -> Option<f64> {
        match (i, j) {
            (0, 0) => Some(1.0),
            (1, 1) => Some(0.0),
            _ => None,
        }
    }

    /// Joint CDF `P(fraction <= r, end = j | start = i)`, atoms included.
    pub fn cdf(&self, i: usize, j: usize, r: f64) -> f64 {
        let r = r.clamp(0.0, 1.0);
        let mut total = 0.0;
        if let Some(loc) = self.atom_location(i, j) {
            if loc <= r {
                total += self.atom_mass(i, j);
            }
        }
        if r > 0.0 {
            total += adaptive_simpson(&|t| self.density(i, j, t), 0.0, r, 1e-12);
        }
        total
    }

    /// CDF matrix of a two-level weighted average `b0 * R + b1 * (1 - R)`
    /// where `R` is the good-state fraction; requires `b0 > b1`.
    ///
    /// This is the closed-form oracle that the general recursion in
    /// [`weighted_cdf_matrix`] is checked against for two states.
    pub fn weighted_cdf(&self, b0: f64, b1: f64, w: f64) -> Result<[[f64; 2]; 2]> {
        if b0 <= b1 {
            return Err(Error::param(format!(
                "weights must be strictly decreasing, got ({b0}, {b1})"
            )));
        }
        let r = (w - b1) / (b0 - b1);
        let mut out = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                out[i][j] = if r < 0.0 {
                    0.0
                } else {
                    self.cdf(i, j, r.min(1.0))
                };
            }
        }
        Ok(out)
    }

    /// Total mass per start state; equals 1 up to quadrature tolerance.
    pub fn total_mass(&self, i: usize) -> f64 {
        (0..2).map(|j| self.cdf(i, j, 1.0)).sum()
    }
}

/// Result of [`weighted_cdf_matrix`].
#[derive(Clone, Debug)]
pub struct WeightedCdfMatrix {
    /// `values[(i, j)] = P(weighted average <= w, Z(1) = j | Z(0) = i)`.
    pub values: DMatrix<f64>,
    /// True when `w` fell outside `[min weight, max weight]` and the
    /// result is the trivial clamp (all mass or none).
    pub clamped: bool,
}

/// Distribution of `sum_k weight[k] * (time in state k)` over unit time for
/// the chain with generator `q`, jointly with the end state.
///
/// Weights must be strictly decreasing. The evaluation uses uniformisation:
/// conditioned on `n` uniformised jumps the weighted average has a Bernstein
/// polynomial CDF in the position of `w` within its weight interval, with
/// coefficient matrices built by a two-directional recursion (descending in
/// the Bernstein index for rows whose weight is below the interval,
/// ascending for rows above). All recursion steps are convex combinations,
/// so every coefficient stays in `[0, 1]` regardless of the jump rates.
pub fn weighted_cdf_matrix(
    q: &DMatrix<f64>,
    weights: &[f64],
    w: f64,
    tail_tol: f64,
) -> Result<WeightedCdfMatrix> {
    let s = q.nrows();
    if q.ncols() != s || s == 0 {
        return Err(Error::InvalidMatrix("generator must be square".into()));
    }
    if weights.len() != s {
        return Err(Error::param(format!(
            "{} weights for {s} states",
            weights.len()
        )));
    }
    if weights.windows(2).any(|p| p[0] <= p[1]) {
        return Err(Error::param(
            "weights must be strictly decreasing".to_string(),
        ));
    }
    if !(tail_tol > 0.0) {
        return Err(Error::param("tail tolerance must be positive"));
    }
    let uni = crate::channel::uniformize(q)?;

    // Degenerate chain: no jumps ever, the average is the starting weight.
    if uni.degenerate {
        let mut values = DMatrix::zeros(s, s);
        for c in 0..s {
            if weights[c] <= w {
                values[(c, c)] = 1.0;
            }
        }
        let clamped = w < weights[s - 1] || w > weights[0];
        return Ok(WeightedCdfMatrix { values, clamped });
    }

    let pois = poisson_weights(uni.rate, tail_tol);
    let a = &uni.jump_matrix;

    // Out-of-range thresholds clamp to the trivial answers.
    if w >= weights[0] {
        let mut power = DMatrix::<f64>::identity(s, s);
        let mut values = DMatrix::<f64>::zeros(s, s);
        for (k, &pw) in pois.iter().enumerate() {
            if k > 0 {
                power = &power * a;
            }
            values += pw * &power;
        }
        return Ok(WeightedCdfMatrix {
            values,
            clamped: w > weights[0],
        });
    }
    if w < weights[s - 1] {
        return Ok(WeightedCdfMatrix {
            values: DMatrix::zeros(s, s),
            clamped: true,
        });
    }

    // Interval t in 1..=s-1 covers [weights[t], weights[t-1]); x is the
    // position of w inside the interval that contains it.
    let t_star = (1..s).find(|&t| weights[t] <= w).expect("w in range");
    let x = (w - weights[t_star]) / (weights[t_star - 1] - weights[t_star]);

    let n_max = pois.len() - 1;
    // coef[t-1][l] is the S x S coefficient matrix of interval t at
    // Bernstein index l, for the current jump count n.
    let mut prev: Vec<Vec<DMatrix<f64>>> = Vec::new();
    let mut values = DMatrix::<f64>::zeros(s, s);

    for n in 0..=n_max {
        let mut cur: Vec<Vec<DMatrix<f64>>> =
            vec![vec![DMatrix::zeros(s, s); n + 1]; s - 1];

        if n == 0 {
            // No jumps: the average equals the starting weight, which is
            // inside the covered range exactly for rows at or below the
            // interval's lower edge.
            for t in 1..s {
                for c in t..s {
                    cur[t - 1][0][(c, c)] = 1.0;
                }
            }
        } else {
            // Rows at or below the interval: anchored at l = n, descending.
            for t in 1..s {
                for l in (0..=n).rev() {
                    if l == n {
                        if t == 1 {
                            // Top interval: the anchor is the plain n-step
                            // jump-chain transition probability.
                            let full = if n == 1 {
                                a.clone()
                            } else {
                                // prev anchor already holds A^{n-1}.
                                &prev[0][n - 1] * a
                            };
                            for c in t..s {
                                for d in 0..s {
                                    cur[0][n][(c, d)] = full[(c, d)];
                                }
                            }
                        } else {
                            // Chain to the interval above at the same n.
                            let (left, right) = cur.split_at_mut(t - 1);
                            let src = &left[t - 2][0];
                            for c in t..s {
                                for d in 0..s {
                                    right[0][n][(c, d)] = src[(c, d)];
                                }
                            }
                        }
                        continue;
                    }
                    let (bk, bk1) = (weights[t], weights[t - 1]);
                    for c in t..s {
                        let keep = (bk - weights[c]) / (bk1 - weights[c]);
                        let flow = (bk1 - bk) / (bk1 - weights[c]);
                        for d in 0..s {
                            let mut mix = 0.0;
                            for e in 0..s {
                                mix += a[(c, e)] * prev[t - 1][l][(e, d)];
                            }
                            cur[t - 1][l][(c, d)] =
                                keep * cur[t - 1][l + 1][(c, d)] + flow * mix;
                        }
                    }
                }
            }
            // Rows above the interval: anchored at l = 0, ascending. The
            // bottom interval anchors at zero; the others chain to the
            // interval below at the same n, so iterate t downward.
            for t in (1..s).rev() {
                if t < s - 1 {
                    let (left, right) = cur.split_at_mut(t);
                    let src = &right[0][n];
                    for c in 0..t {
                        for d in 0..s {
                            left[t - 1][0][(c, d)] = src[(c, d)];
                        }
                    }
                }
                let (bk, bk1) = (weights[t], weights[t - 1]);
                for l in 1..=n {
                    for c in 0..t {
                        let keep = (weights[c] - bk1) / (weights[c] - bk);
                        let flow = (bk1 - bk) / (weights[c] - bk);
                        for d in 0..s {
                            let mut mix = 0.0;
                            for e in 0..s {
                                mix += a[(c, e)] * prev[t - 1][l - 1][(e, d)];
                            }
                            cur[t - 1][l][(c, d)] =
                                keep * cur[t - 1][l - 1][(c, d)] + flow * mix;
                        }
                    }
                }
            }
        }

        // Bernstein evaluation at x for the covering interval. The interval
        // choice guarantees x in [0, 1), so ln(1-x) is safe.
        let coef = &cur[t_star - 1];
        if x == 0.0 {
            values += pois[n] * &coef[0];
        } else {
            let fact = LnFactorial::new(n);
            let lx = x.ln();
            let l1x = (1.0 - x).ln();
            for (l, c) in coef.iter().enumerate() {
                let lw = fact.ln_binomial(n, l as i64)
                    + l as f64 * lx
                    + (n - l) as f64 * l1x;
                if lw > -750.0 {
                    values += lw.exp() * pois[n] * c;
                }
            }
        }

        prev = cur;
    }

    Ok(WeightedCdfMatrix {
        values,
        clamped: false,
    })
}

/// Largest gap between the finite-`N` occupancy CDF and its slow-transition
/// limit, probed at the jump points `m/N` of the discrete law.
///
/// Both CDFs are unconditional: entries are mixed over the initial state
/// with `pi` and summed over the end state, atoms included.
pub fn kolmogorov_distance(
    disc: &DiscreteOccupancyLaw,
    cont: &ContinuousOccupancyLaw,
    pi: &[f64; 2],
) -> f64 {
    let n = disc.n();
    let mut worst = 0.0f64;
    // Continuous CDF difference accumulates by integrating between jump
    // points, so the whole scan costs one pass of quadrature.
    let mut f_cont = 0.0;
    let mut f_disc = 0.0;
    let mut prev_r = 0.0;
    for m in 0..=n {
        let r = m as f64 / n as f64;
        for i in 0..2 {
            for j in 0..2 {
                if r > prev_r {
                    f_cont += pi[i]
                        * adaptive_simpson(&|t| cont.density(i, j, t), prev_r, r, 1e-13);
                }
                if let Some(loc) = cont.atom_location(i, j) {
                    if loc <= r && loc > prev_r || (m == 0 && loc == 0.0) {
                        f_cont += pi[i] * cont.atom_mass(i, j);
                    }
                }
                f_disc += pi[i] * disc.prob(m, i, j);
            }
        }
        prev_r = r;
        worst = worst.max((f_disc - f_cont).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn discrete_law_two_symbol_spot_values() {
        let law = discrete_occupancy_law(0.1, 0.2, 2).unwrap();
        // Start good: stay-stay, stay-leave, leave-return, leave-stay.
        assert_relative_eq!(law.prob(2, 0, 0), 0.81, epsilon = 1e-14);
        assert_relative_eq!(law.prob(2, 0, 1), 0.09, epsilon = 1e-14);
        assert_relative_eq!(law.prob(1, 0, 0), 0.02, epsilon = 1e-14);
        assert_relative_eq!(law.prob(1, 0, 1), 0.08, epsilon = 1e-14);
        assert_relative_eq!(law.prob(0, 0, 0), 0.0, epsilon = 1e-16);
        // Start bad.
        assert_relative_eq!(law.prob(0, 1, 1), 0.64, epsilon = 1e-14);
        assert_relative_eq!(law.prob(0, 1, 0), 0.16, epsilon = 1e-14);
        assert_relative_eq!(law.prob(1, 1, 0), 0.18, epsilon = 1e-14);
        assert_relative_eq!(law.prob(1, 1, 1), 0.02, epsilon = 1e-14);
        assert_relative_eq!(law.prob(2, 1, 0), 0.0, epsilon = 1e-16);
    }

    #[test]
    fn discrete_law_rows_sum_to_one() {
        for &(a, b, n) in &[(0.0533, 0.08, 170usize), (0.3, 0.4, 37), (0.01, 0.9, 64)] {
            let law = discrete_occupancy_law(a, b, n).unwrap();
            for i in 0..2 {
                let total: f64 = (0..2).map(|j| law.transition_mass(i, j)).sum();
                assert!(
                    (total - 1.0).abs() < 1e-12,
                    "row {i} sums to {total} for ({a}, {b}, {n})"
                );
            }
        }
    }

    #[test]
    fn discrete_law_matches_path_enumeration() {
        let (alpha, beta, n) = (0.3, 0.15, 5usize);
        let law = discrete_occupancy_law(alpha, beta, n).unwrap();
        let p = [[1.0 - alpha, alpha], [beta, 1.0 - beta]];
        for i in 0..2 {
            let mut direct = vec![[0.0f64; 2]; n + 1];
            // Enumerate s_1..s_n over all 2^n continuations.
            for mask in 0..(1usize << n) {
                let mut prob = 1.0;
                let mut good = if i == 0 { 1 } else { 0 };
                let mut cur = i;
                for step in 0..n {
                    let next = (mask >> step) & 1;
                    prob *= p[cur][next];
                    cur = next;
                    if step + 1 < n && cur == 0 {
                        good += 1;
                    }
                }
                direct[good][cur] += prob;
            }
            for m in 0..=n {
                for j in 0..2 {
                    assert_relative_eq!(law.prob(m, i, j), direct[m][j], epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn continuous_law_mass_and_endpoints() {
        let law = continuous_occupancy_law(4.0, 6.0).unwrap();
        for i in 0..2 {
            let mass = law.total_mass(i);
            assert!((mass - 1.0).abs() < 1e-9, "mass from {i} is {mass}");
        }
        assert_relative_eq!(law.density(0, 0, 1.0), (-4.0f64).exp() * 24.0, epsilon = 1e-12);
        assert_relative_eq!(law.density(1, 1, 0.0), (-6.0f64).exp() * 24.0, epsilon = 1e-12);
        assert_eq!(law.density(0, 0, 0.0), 0.0);
        assert_relative_eq!(law.atom_mass(0, 0), (-4.0f64).exp());
        assert_relative_eq!(law.atom_mass(1, 1), (-6.0f64).exp());
        assert_eq!(law.atom_mass(0, 1), 0.0);
    }

    #[test]
    fn continuous_weighted_cdf_edges() {
        let law = continuous_occupancy_law(2.0, 3.0).unwrap();
        let below = law.weighted_cdf(0.5, 0.2, 0.1).unwrap();
        assert_eq!(below[0][0], 0.0);
        let above = law.weighted_cdf(0.5, 0.2, 0.6).unwrap();
        let total: f64 = above[0].iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(law.weighted_cdf(0.2, 0.5, 0.3).is_err());
    }

    /// Joint law `P(visits to state 0 among z_0..z_n <= l, z_n = d)` for
    /// the uniformised jump chain: the direct counting oracle for the
    /// two-state Bernstein coefficients. Conditioned on `n` events the
    /// time in state 0 is Beta(v, n+1-v) in the visit count v over all
    /// n+1 segment states, so `P(T <= x) = P(Bin(n, x) >= v)`.
    fn counting_dp(a: &DMatrix<f64>, n: usize, l: usize, c: usize, d: usize) -> f64 {
        // state -> count among z_0..z_{step-1} -> prob
        let mut dist = vec![vec![0.0f64; n + 2]; 2];
        dist[c][0] = 1.0;
        for _ in 0..n {
            let mut next = vec![vec![0.0f64; n + 2]; 2];
            for s in 0..2 {
                for k in 0..=n {
                    let p = dist[s][k];
                    if p == 0.0 {
                        continue;
                    }
                    let k_after = if s == 0 { k + 1 } else { k };
                    for t in 0..2 {
                        next[t][k_after] += p * a[(s, t)];
                    }
                }
            }
            dist = next;
        }
        // The final segment state z_n = d joins the count.
        let last = usize::from(d == 0);
        (0..=n + 1)
            .filter(|k| k + last <= l)
            .map(|k| dist[d][k])
            .sum()
    }

    #[test]
    fn weighted_cdf_two_state_matches_counting_oracle() {
        let (mu, xi) = (2.8615, 4.2955);
        let q = DMatrix::from_row_slice(2, 2, &[-mu, mu, xi, -xi]);
        let (b0, b1) = (0.9, 0.2);
        let uni = crate::channel::uniformize(&q).unwrap();
        let pois = poisson_weights(uni.rate, 1e-13);
        for &w in &[0.25, 0.4, 0.55, 0.7, 0.85] {
            let got = weighted_cdf_matrix(&q, &[b0, b1], w, 1e-13).unwrap();
            assert!(!got.clamped);
            let x = (w - b1) / (b0 - b1);
            let fact = LnFactorial::new(pois.len());
            for c in 0..2 {
                for d in 0..2 {
                    let mut expect = 0.0;
                    for (n, &pw) in pois.iter().enumerate() {
                        let mut inner = 0.0;
                        for l in 0..=n {
                            let bern = (fact.ln_binomial(n, l as i64)
                                + l as f64 * x.ln()
                                + (n - l) as f64 * (1.0 - x).ln())
                            .exp();
                            // Bernstein weight against the counting CDF.
                            let tail = counting_dp(&uni.jump_matrix, n, l, c, d);
                            inner += bern * tail;
                        }
                        expect += pw * inner;
                    }
                    assert!(
                        (got.values[(c, d)] - expect).abs() < 1e-12,
                        "entry ({c},{d}) at w={w}: {} vs {expect}",
                        got.values[(c, d)]
                    );
                }
            }
        }
    }

    #[test]
    fn weighted_cdf_two_state_matches_limit_law() {
        // Light version of the full acceptance comparison.
        let (mu, xi) = (2.8615, 4.2955);
        let q = DMatrix::from_row_slice(2, 2, &[-mu, mu, xi, -xi]);
        let law = continuous_occupancy_law(mu, xi).unwrap();
        let (b0, b1) = (0.51166, 0.22314);
        for &w in &[0.28, 0.35, 0.45] {
            let got = weighted_cdf_matrix(&q, &[b0, b1], w, 1e-11).unwrap();
            let oracle = law.weighted_cdf(b0, b1, w).unwrap();
            for c in 0..2 {
                for d in 0..2 {
                    assert!(
                        (got.values[(c, d)] - oracle[c][d]).abs() < 1e-7,
                        "w = {w}, entry ({c},{d}): {} vs {}",
                        got.values[(c, d)],
                        oracle[c][d]
                    );
                }
            }
        }
    }

    #[test]
    fn weighted_cdf_edges_and_flags() {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]);
        let b = [1.0, 0.0];
        let lo = weighted_cdf_matrix(&q, &b, -0.1, 1e-12).unwrap();
        assert!(lo.clamped);
        assert_eq!(lo.values[(0, 0)], 0.0);
        let hi = weighted_cdf_matrix(&q, &b, 1.5, 1e-12).unwrap();
        assert!(hi.clamped);
        for c in 0..2 {
            let row: f64 = (0..2).map(|d| hi.values[(c, d)]).sum();
            assert!((row - 1.0).abs() < 1e-11);
        }
        // At the top weight the answer is the full transition law, unclamped.
        let top = weighted_cdf_matrix(&q, &b, 1.0, 1e-12).unwrap();
        assert!(!top.clamped);
        for c in 0..2 {
            let row: f64 = (0..2).map(|d| top.values[(c, d)]).sum();
            assert!((row - 1.0).abs() < 1e-11);
        }
        // At the bottom weight only never-jumping paths qualify.
        let bot = weighted_cdf_matrix(&q, &b, 0.0, 1e-12).unwrap();
        assert!(!bot.clamped);
        assert_relative_eq!(bot.values[(1, 1)], (-2.0f64).exp(), epsilon = 1e-11);
        assert!(bot.values[(0, 0)] < 1e-11);
        assert!(bot.values[(0, 1)] < 1e-11);
    }

    #[test]
    fn weighted_cdf_three_state_structure() {
        let q = DMatrix::from_row_slice(
            3,
            3,
            &[-2.0, 1.5, 0.5, 1.0, -3.0, 2.0, 0.5, 2.5, -3.0],
        );
        let b = [0.8, 0.5, 0.1];
        // Monotone in w, continuous across the interior breakpoint.
        let mut prev = DMatrix::zeros(3, 3);
        for k in 0..=20 {
            let w = 0.1 + 0.7 * k as f64 / 20.0;
            let g = weighted_cdf_matrix(&q, &b, w, 1e-12).unwrap();
            for c in 0..3 {
                for d in 0..3 {
                    assert!(
                        g.values[(c, d)] >= prev[(c, d)] - 1e-12,
                        "not monotone at w={w} entry ({c},{d})"
                    );
                }
            }
            prev = g.values;
        }
        // Crossing the middle pure-state weight picks up exactly the
        // never-jump atom of state 1 on the diagonal; every other entry
        // is continuous there.
        let lo = weighted_cdf_matrix(&q, &b, 0.5 - 1e-9, 1e-12).unwrap();
        let hi = weighted_cdf_matrix(&q, &b, 0.5 + 1e-9, 1e-12).unwrap();
        for c in 0..3 {
            for d in 0..3 {
                let jump = hi.values[(c, d)] - lo.values[(c, d)];
                if (c, d) == (1, 1) {
                    assert_relative_eq!(jump, (-3.0f64).exp(), epsilon = 1e-7);
                } else {
                    assert!(
                        jump.abs() < 1e-6,
                        "discontinuity at interior weight, entry ({c},{d})"
                    );
                }
            }
        }
        // Right-continuity: the atom belongs to the breakpoint itself.
        let at = weighted_cdf_matrix(&q, &b, 0.5, 1e-12).unwrap();
        for c in 0..3 {
            for d in 0..3 {
                assert!((at.values[(c, d)] - hi.values[(c, d)]).abs() < 1e-7);
            }
        }
        // Degenerate generator.
        let zero = DMatrix::zeros(3, 3);
        let g = weighted_cdf_matrix(&zero, &b, 0.5, 1e-12).unwrap();
        assert_eq!(g.values[(1, 1)], 1.0);
        assert_eq!(g.values[(0, 0)], 0.0);
        assert_eq!(g.values[(2, 2)], 1.0);
    }

    #[test]
    fn weighted_cdf_rejects_bad_weights() {
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 2.0, -2.0]);
        assert!(weighted_cdf_matrix(&q, &[0.2, 0.5], 0.3, 1e-12).is_err());
        assert!(weighted_cdf_matrix(&q, &[0.5], 0.3, 1e-12).is_err());
        assert!(weighted_cdf_matrix(&q, &[0.5, 0.2], 0.3, -1.0).is_err());
    }

    #[test]
    fn kolmogorov_distance_shrinks_with_n() {
        let cont = continuous_occupancy_law(4.0, 6.0).unwrap();
        let pi = [0.6, 0.4];
        let d50 = kolmogorov_distance(
            &discrete_occupancy_law(4.0 / 50.0, 6.0 / 50.0, 50).unwrap(),
            &cont,
            &pi,
        );
        let d200 = kolmogorov_distance(
            &discrete_occupancy_law(4.0 / 200.0, 6.0 / 200.0, 200).unwrap(),
            &cont,
            &pi,
        );
        assert!(d200 < d50, "gap should shrink: {d50} -> {d200}");
        assert!(d50 < 0.25, "gap at N=50 unexpectedly large: {d50}");
    }
}
