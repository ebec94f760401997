//! Finite-state channels whose state selects a binary symmetric crossover.
//!
//! A channel is a hidden state chain plus a per-state crossover probability.
//! The state evolves once per transmitted symbol, either by an explicit
//! one-step matrix or by a generator scaled to the symbol clock (`exp(Q/N)`
//! for block length `N`); the latter is how slow-transition asymptotics are
//! parameterised.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::math::{binary_entropy_bits, poisson_weights};
use crate::{Error, Result};

/// State dynamics: either a one-step stochastic matrix on the symbol clock,
/// or a continuous-time generator to be scaled by the block length.
#[derive(Clone, Debug, PartialEq)]
pub enum Dynamics {
    /// Row-stochastic one-step transition matrix.
    Discrete(DMatrix<f64>),
    /// Generator with non-negative off-diagonal entries and zero row sums.
    Continuous(DMatrix<f64>),
}

/// A finite-state channel with state-modulated crossover.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FscSpecRepr", into = "FscSpecRepr")]
pub struct FscSpec {
    crossover: Vec<f64>,
    dynamics: Dynamics,
}

/// On-disk shape: `{states, crossover, dynamics: {kind, matrix}}`.
#[derive(Serialize, Deserialize)]
struct FscSpecRepr {
    states: usize,
    crossover: Vec<f64>,
    dynamics: DynamicsRepr,
}

#[derive(Serialize, Deserialize)]
struct DynamicsRepr {
    kind: String,
    matrix: Vec<Vec<f64>>,
}

impl TryFrom<FscSpecRepr> for FscSpec {
    type Error = Error;

    fn try_from(repr: FscSpecRepr) -> Result<Self> {
        if repr.states != repr.crossover.len() {
            return Err(Error::param(format!(
                "states field {} does not match crossover length {}",
                repr.states,
                repr.crossover.len()
            )));
        }
        let n = repr.states;
        if repr.dynamics.matrix.len() != n || repr.dynamics.matrix.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidMatrix(format!(
                "dynamics matrix must be {n}x{n}"
            )));
        }
        let m = DMatrix::from_fn(n, n, |i, j| repr.dynamics.matrix[i][j]);
        let dynamics = match repr.dynamics.kind.as_str() {
            "discrete" => Dynamics::Discrete(m),
            "continuous" => Dynamics::Continuous(m),
            other => {
                return Err(Error::param(format!(
                    "unknown dynamics kind {other:?}; expected \"discrete\" or \"continuous\""
                )))
            }
        };
        FscSpec::new(repr.crossover, dynamics)
    }
}

impl From<FscSpec> for FscSpecRepr {
    fn from(spec: FscSpec) -> Self {
        let (kind, m) = match &spec.dynamics {
            Dynamics::Discrete(m) => ("discrete", m),
            Dynamics::Continuous(m) => ("continuous", m),
        };
        let matrix = (0..m.nrows())
            .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
            .collect();
        FscSpecRepr {
            states: spec.crossover.len(),
            crossover: spec.crossover,
            dynamics: DynamicsRepr {
                kind: kind.to_string(),
                matrix,
            },
        }
    }
}

impl FscSpec {
    /// Validating constructor.
    ///
    /// Crossovers must lie in `[0, 1/2]` (one per state); the dynamics
    /// matrix must be square of matching size and structurally valid for
    /// its kind.
    pub fn new(crossover: Vec<f64>, dynamics: Dynamics) -> Result<Self> {
        if crossover.is_empty() {
            return Err(Error::param("channel needs at least one state"));
        }
        for (i, &e) in crossover.iter().enumerate() {
            if !(0.0..=0.5).contains(&e) {
                return Err(Error::param(format!(
                    "crossover[{i}] = {e} outside [0, 1/2]"
                )));
            }
        }
        let n = crossover.len();
        match &dynamics {
            Dynamics::Discrete(p) => {
                check_square(p, n)?;
                check_stochastic(p)?;
            }
            Dynamics::Continuous(q) => {
                check_square(q, n)?;
                check_generator(q)?;
            }
        }
        Ok(Self {
            crossover,
            dynamics,
        })
    }

    pub fn states(&self) -> usize {
        self.crossover.len()
    }

    pub fn crossover(&self) -> &[f64] {
        &self.crossover
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    /// One-step state transition matrix on the symbol clock for a block of
    /// `n` symbols: the matrix itself for discrete dynamics, `exp(Q/n)` for
    /// a generator.
    pub fn symbol_transition_matrix(&self, n: usize) -> Result<DMatrix<f64>> {
        match &self.dynamics {
            Dynamics::Discrete(p) => Ok(p.clone()),
            Dynamics::Continuous(q) => transition_matrix_from_generator(q, n),
        }
    }

    /// State transition matrix across a whole block of `n` symbols:
    /// the `n`-th power of the per-symbol step.
    pub fn block_transition_matrix(&self, n: usize) -> Result<DMatrix<f64>> {
        let step = self.symbol_transition_matrix(n)?;
        let dim = step.nrows();
        let mut out = DMatrix::<f64>::identity(dim, dim);
        for _ in 0..n {
            out = &out * &step;
        }
        Ok(out)
    }

    /// `(alpha, beta)` of a two-state channel on the symbol clock:
    /// `alpha` leaves the good state, `beta` leaves the bad state.
    pub fn two_state_rates(&self, n: usize) -> Result<(f64, f64)> {
        if self.states() != 2 {
            return Err(Error::param(format!(
                "two-state accessor on a {}-state channel",
                self.states()
            )));
        }
        let p = self.symbol_transition_matrix(n)?;
        Ok((p[(0, 1)], p[(1, 0)]))
    }

    /// Stationary distribution of the state chain.
    pub fn stationary(&self) -> Result<DVector<f64>> {
        match &self.dynamics {
            Dynamics::Discrete(p) => stationary_distribution(p),
            Dynamics::Continuous(q) => {
                // The uniformised jump chain shares the stationary law.
                let u = uniformize(q)?;
                if u.degenerate {
                    return Err(Error::Reducible(
                        "zero generator has no unique stationary law".into(),
                    ));
                }
                stationary_distribution(&u.jump_matrix)
            }
        }
    }
}

/// Result of uniformising a generator: `Q = rate * (jump_matrix - I)`.
#[derive(Clone, Debug)]
pub struct Uniformized {
    /// Row-stochastic jump matrix `I + Q / rate`.
    pub jump_matrix: DMatrix<f64>,
    /// Uniformisation rate: the largest diagonal magnitude of `Q`.
    pub rate: f64,
    /// True when `Q = 0`, in which case the jump matrix is the identity.
    pub degenerate: bool,
}

fn check_square(m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::InvalidMatrix(format!(
            "expected {n}x{n} matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

fn check_stochastic(p: &DMatrix<f64>) -> Result<()> {
    for i in 0..p.nrows() {
        let mut row = 0.0;
        for j in 0..p.ncols() {
            let v = p[(i, j)];
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidMatrix(format!(
                    "entry ({i},{j}) = {v} outside [0, 1]"
                )));
            }
            row += v;
        }
        if (row - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMatrix(format!(
                "row {i} sums to {row}, expected 1"
            )));
        }
    }
    Ok(())
}

fn check_generator(q: &DMatrix<f64>) -> Result<()> {
    let scale = (0..q.nrows())
        .map(|i| q[(i, i)].abs())
        .fold(1.0f64, f64::max);
    for i in 0..q.nrows() {
        let mut row = 0.0;
        for j in 0..q.ncols() {
            let v = q[(i, j)];
            if i != j && v < 0.0 {
                return Err(Error::InvalidMatrix(format!(
                    "off-diagonal entry ({i},{j}) = {v} is negative"
                )));
            }
            if i == j && v > 0.0 {
                return Err(Error::InvalidMatrix(format!(
                    "diagonal entry ({i},{i}) = {v} is positive"
                )));
            }
            row += v;
        }
        if row.abs() > 1e-12 * scale {
            return Err(Error::InvalidMatrix(format!(
                "generator row {i} sums to {row}, expected 0"
            )));
        }
    }
    Ok(())
}

/// Two-state channel whose good state crosses over with `eps1` and whose
/// bad state crosses over with `eps2 > eps1`; `alpha` leaves the good
/// state, `beta` leaves the bad state, per symbol.
pub fn build_gilbert_elliott(alpha: f64, beta: f64, eps1: f64, eps2: f64) -> Result<FscSpec> {
    if !(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0) {
        return Err(Error::param(format!(
            "transition probabilities ({alpha}, {beta}) must lie in (0, 1)"
        )));
    }
    if !(eps1 > 0.0 && eps2 < 0.5) {
        return Err(Error::param(format!(
            "crossovers ({eps1}, {eps2}) must lie in (0, 1/2)"
        )));
    }
    if eps1 >= eps2 {
        return Err(Error::param(format!(
            "good-state crossover {eps1} must be smaller than bad-state {eps2}"
        )));
    }
    let p = DMatrix::from_row_slice(2, 2, &[1.0 - alpha, alpha, beta, 1.0 - beta]);
    FscSpec::new(vec![eps1, eps2], Dynamics::Discrete(p))
}

/// `exp(Q / n)` for a generator `Q`, by uniformisation.
///
/// Uniformisation keeps every entry non-negative and every row sum within
/// truncation error of 1, which matrix Pade or Taylor forms do not
/// guarantee after rounding.
pub fn transition_matrix_from_generator(q: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::param("block length must be positive"));
    }
    check_square(q, q.nrows())?;
    check_generator(q)?;
    let scaled = q / (n as f64);
    let u = uniformize(&scaled)?;
    if u.degenerate {
        return Ok(DMatrix::identity(q.nrows(), q.nrows()));
    }
    // exp(Q/n) = sum_k Pois(rate; k) * A^k, truncated far below f64 eps.
    let weights = poisson_weights(u.rate, 1e-16);
    let dim = q.nrows();
    let mut power = DMatrix::<f64>::identity(dim, dim);
    let mut out = DMatrix::<f64>::zeros(dim, dim);
    for (k, &w) in weights.iter().enumerate() {
        if k > 0 {
            power = &power * &u.jump_matrix;
        }
        out += w * &power;
    }
    Ok(out)
}

/// Invert `exp(Q/n)` for a two-state chain: the `(mu, xi)` with
/// `Q = [[-mu, mu], [xi, -xi]]` whose scaled exponential has off-diagonals
/// `(alpha, beta)`.
///
/// Requires `alpha + beta < 1`; beyond that the matrix logarithm leaves
/// the generator cone.
pub fn generator_from_discrete(alpha: f64, beta: f64, n: usize) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::param("block length must be positive"));
    }
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::param(format!(
            "transition probabilities ({alpha}, {beta}) must be positive"
        )));
    }
    let s = alpha + beta;
    if s >= 1.0 {
        return Err(Error::param(format!(
            "alpha + beta = {s} >= 1 has no generator preimage"
        )));
    }
    // exp(Q/n) has off-diagonal alpha = mu/(mu+xi) * (1 - e^{-(mu+xi)/n}).
    let total = -(n as f64) * (1.0 - s).ln();
    let mu = alpha / s * total;
    let xi = beta / s * total;
    Ok((mu, xi))
}

/// Uniformise a generator: rate is the largest diagonal magnitude, jump
/// matrix is `I + Q/rate`. A zero generator is flagged degenerate.
pub fn uniformize(q: &DMatrix<f64>) -> Result<Uniformized> {
    check_square(q, q.nrows())?;
    check_generator(q)?;
    let rate = (0..q.nrows())
        .map(|i| q[(i, i)].abs())
        .fold(0.0f64, f64::max);
    if rate == 0.0 {
        return Ok(Uniformized {
            jump_matrix: DMatrix::identity(q.nrows(), q.nrows()),
            rate: 0.0,
            degenerate: true,
        });
    }
    let mut a = q / rate;
    for i in 0..a.nrows() {
        a[(i, i)] += 1.0;
        // Clamp the roundoff dust so the jump matrix stays stochastic.
        if a[(i, i)] < 0.0 && a[(i, i)] > -1e-15 {
            a[(i, i)] = 0.0;
        }
    }
    Ok(Uniformized {
        jump_matrix: a,
        rate,
        degenerate: false,
    })
}

/// Unique stationary row vector of an irreducible stochastic matrix.
///
/// Errors with [`Error::Reducible`] when some state cannot reach some
/// other state, since the stationary law is then not unique.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    check_stochastic(p)?;
    let n = p.nrows();
    if n == 1 {
        return Ok(DVector::from_element(1, 1.0));
    }
    // Boolean transitive closure; every ordered pair must communicate.
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        reach[i][i] = true;
        for j in 0..n {
            if p[(i, j)] > 0.0 {
                reach[i][j] = true;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    if let Some((i, j)) = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .find(|&(i, j)| !reach[i][j])
    {
        return Err(Error::Reducible(format!(
            "state {i} never reaches state {j}"
        )));
    }
    // Solve pi (P - I) = 0 with the last equation replaced by sum = 1.
    let mut a = p.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let lu = a.lu();
    let mut pi = lu
        .solve(&b)
        .ok_or_else(|| Error::NoConvergence("singular stationary system".into()))?;
    // A few power-iteration polish steps push the residual to the floor.
    for _ in 0..64 {
        let next = p.transpose() * &pi;
        let residual = (&next - &pi).amax();
        pi = next;
        let mass: f64 = pi.iter().sum();
        pi /= mass;
        if residual <= 1e-15 {
            break;
        }
    }
    let residual = (p.transpose() * &pi - &pi).amax();
    if residual > 1e-14 {
        return Err(Error::NoConvergence(format!(
            "stationary residual {residual:.3e} above 1e-14"
        )));
    }
    Ok(pi)
}

/// Capacity in bits per symbol when the receiver observes the state
/// sequence: one minus the stationary average of the per-state binary
/// entropies of the crossovers.
pub fn csi_capacity(spec: &FscSpec) -> Result<f64> {
    let pi = spec.stationary()?;
    let mut h = 0.0;
    for (i, &eps) in spec.crossover().iter().enumerate() {
        h += pi[i] * binary_entropy_bits(eps);
    }
    Ok(1.0 - h)
}

/// The reference two-state channel used throughout the figure pipelines.
pub fn standard_channel() -> FscSpec {
    build_gilbert_elliott(0.0533, 0.08, 0.01, 0.1).expect("standard parameters are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gilbert_elliott_rejects_bad_parameters() {
        assert!(build_gilbert_elliott(0.0, 0.1, 0.01, 0.1).is_err());
        assert!(build_gilbert_elliott(0.1, 1.0, 0.01, 0.1).is_err());
        assert!(build_gilbert_elliott(0.1, 0.1, 0.1, 0.01).is_err());
        assert!(build_gilbert_elliott(0.1, 0.1, 0.1, 0.1).is_err());
        assert!(build_gilbert_elliott(0.1, 0.1, 0.0, 0.1).is_err());
        assert!(build_gilbert_elliott(0.1, 0.1, 0.01, 0.5).is_err());
        assert!(build_gilbert_elliott(0.1, 0.1, 0.01, 0.1).is_ok());
    }

    #[test]
    fn standard_channel_stationary_and_capacity() {
        let spec = standard_channel();
        let pi = spec.stationary().unwrap();
        assert_relative_eq!(pi[0], 0.08 / (0.0533 + 0.08), epsilon = 1e-13);
        assert_relative_eq!(pi[1], 0.0533 / (0.0533 + 0.08), epsilon = 1e-13);
        let c = csi_capacity(&spec).unwrap();
        assert!((c - 0.764).abs() < 5e-4, "capacity {c} not near 0.764");
    }

    #[test]
    fn generator_exponential_matches_closed_form() {
        // Two-state closed form: [exp(Q/n)]_{01} = mu/(mu+xi) (1 - e^{-(mu+xi)/n}).
        let q = DMatrix::from_row_slice(2, 2, &[-4.0, 4.0, 6.0, -6.0]);
        let p = transition_matrix_from_generator(&q, 50).unwrap();
        let expect = 4.0 / 10.0 * (1.0 - (-10.0f64 / 50.0).exp());
        assert_relative_eq!(p[(0, 1)], expect, epsilon = 1e-12);
        assert_relative_eq!(p[(0, 1)], 0.072508, epsilon = 1e-6);
        let expect10 = 6.0 / 10.0 * (1.0 - (-10.0f64 / 50.0).exp());
        assert_relative_eq!(p[(1, 0)], expect10, epsilon = 1e-12);
        for i in 0..2 {
            let row: f64 = (0..2).map(|j| p[(i, j)]).sum();
            assert_relative_eq!(row, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn generator_discrete_round_trip() {
        let (alpha, beta, n) = (0.0533, 0.08, 50);
        let (mu, xi) = generator_from_discrete(alpha, beta, n).unwrap();
        assert!((mu - 2.8605).abs() < 1e-3, "mu = {mu}");
        assert!((xi - 4.2934).abs() < 1e-3, "xi = {xi}");
        let q = DMatrix::from_row_slice(2, 2, &[-mu, mu, xi, -xi]);
        let p = transition_matrix_from_generator(&q, n).unwrap();
        assert_relative_eq!(p[(0, 1)], alpha, epsilon = 1e-12);
        assert_relative_eq!(p[(1, 0)], beta, epsilon = 1e-12);
    }

    #[test]
    fn generator_from_discrete_rejects_fast_mixing() {
        assert!(generator_from_discrete(0.6, 0.5, 10).is_err());
        assert!(generator_from_discrete(0.0, 0.5, 10).is_err());
    }

    #[test]
    fn uniformize_example() {
        let q = DMatrix::from_row_slice(2, 2, &[-4.0, 4.0, 6.0, -6.0]);
        let u = uniformize(&q).unwrap();
        assert_relative_eq!(u.rate, 6.0);
        assert_relative_eq!(u.jump_matrix[(0, 0)], 1.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(u.jump_matrix[(0, 1)], 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(u.jump_matrix[(1, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(u.jump_matrix[(1, 1)], 0.0, epsilon = 1e-15);
        assert!(!u.degenerate);
        let zero = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0]);
        assert!(uniformize(&zero).unwrap().degenerate);
    }

    #[test]
    fn stationary_rejects_reducible() {
        let p = DMatrix::identity(2, 2);
        assert!(matches!(
            stationary_distribution(&p),
            Err(Error::Reducible(_))
        ));
        let absorbing = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.0, 1.0]);
        assert!(matches!(
            stationary_distribution(&absorbing),
            Err(Error::Reducible(_))
        ));
    }

    #[test]
    fn stationary_handles_periodic_chain() {
        let p = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let pi = stationary_distribution(&p).unwrap();
        assert_relative_eq!(pi[0], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn json_round_trip_is_bit_identical() {
        let spec = standard_channel();
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"kind\":\"discrete\""));
        assert!(text.contains("\"states\":2"));
        let back: FscSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
        let again = serde_json::to_string(&back).unwrap();
        assert_eq!(text, again);

        let q = DMatrix::from_row_slice(2, 2, &[-4.0, 4.0, 6.0, -6.0]);
        let cont = FscSpec::new(vec![0.01, 0.1], Dynamics::Continuous(q)).unwrap();
        let text = serde_json::to_string(&cont).unwrap();
        let back: FscSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(cont, back);
    }

    #[test]
    fn repr_validation_rejects_mismatches() {
        let bad = r#"{"states":3,"crossover":[0.01,0.1],
            "dynamics":{"kind":"discrete","matrix":[[0.9,0.1],[0.2,0.8]]}}"#;
        assert!(serde_json::from_str::<FscSpec>(bad).is_err());
        let bad_kind = r#"{"states":2,"crossover":[0.01,0.1],
            "dynamics":{"kind":"fancy","matrix":[[0.9,0.1],[0.2,0.8]]}}"#;
        assert!(serde_json::from_str::<FscSpec>(bad_kind).is_err());
    }

    #[test]
    fn continuous_spec_stationary_matches_rates() {
        let q = DMatrix::from_row_slice(2, 2, &[-4.0, 4.0, 6.0, -6.0]);
        let spec = FscSpec::new(vec![0.01, 0.1], Dynamics::Continuous(q)).unwrap();
        let pi = spec.stationary().unwrap();
        assert_relative_eq!(pi[0], 0.6, epsilon = 1e-13);
        assert_relative_eq!(pi[1], 0.4, epsilon = 1e-13);
        let (a, b) = spec.two_state_rates(100).unwrap();
        assert!(a > 0.0 && b > 0.0 && a < 4.0 / 100.0 && b < 6.0 / 100.0);
    }
}
