//! Shared numeric kernels: log-domain accumulation, special functions,
//! quadrature, and one-dimensional minimisation.
//!
//! Everything here is plain `f64`. The routines favour log-domain forms
//! because the quantities downstream (binomial tails, path weights, failure
//! probabilities) span hundreds of orders of magnitude.

/// Natural log of 2, used when converting between bits and nats.
pub const LN_2: f64 = std::f64::consts::LN_2;

/// `ln(e^a + e^b)` without overflow; tolerates `-inf` in either slot.
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(sum_i e^{x_i})` via max shift and compensated accumulation.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY || !hi.is_finite() {
        return hi;
    }
    let mut acc = NeumaierSum::new();
    for &x in xs {
        acc.add((x - hi).exp());
    }
    hi + acc.value().ln()
}

/// Running `ln(sum)` of a log-domain slice: entry `i` holds
/// `ln(e^{x_0} + ... + e^{x_i})`.
pub fn log_cumsum_exp(xs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut run = f64::NEG_INFINITY;
    for &x in xs {
        run = log_add_exp(run, x);
        out.push(run);
    }
    out
}

/// Compensated (Neumaier) summation accumulator.
///
/// Keeps the running error term separate so that adding many terms of mixed
/// magnitude loses at most a few ulps overall.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sum a slice with compensation.
pub fn compensated_sum(xs: &[f64]) -> f64 {
    let mut acc = NeumaierSum::new();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Table of `ln(n!)` for `n` up to a fixed cap, with binomial helpers.
///
/// Built once per block length; lookups are branch-free after the bounds
/// check. The cumulative rounding in the construction stays below
/// `n * eps * ln(n!)`, far inside every tolerance used downstream.
#[derive(Clone, Debug)]
pub struct LnFactorial {
    table: Vec<f64>,
}

impl LnFactorial {
    /// Table covering `0! ..= max_n!`.
    pub fn new(max_n: usize) -> Self {
        let mut table = Vec::with_capacity(max_n + 1);
        let mut acc = NeumaierSum::new();
        table.push(0.0);
        for n in 1..=max_n {
            acc.add((n as f64).ln());
            table.push(acc.value());
        }
        Self { table }
    }

    pub fn max_n(&self) -> usize {
        self.table.len() - 1
    }

    /// `ln(n!)`; panics if `n` exceeds the table.
    pub fn ln_factorial(&self, n: usize) -> f64 {
        self.table[n]
    }

    /// `ln(C(n, k))`, `-inf` outside `0 <= k <= n`.
    pub fn ln_binomial(&self, n: usize, k: i64) -> f64 {
        if k < 0 || k as usize > n {
            return f64::NEG_INFINITY;
        }
        let k = k as usize;
        self.table[n] - self.table[k] - self.table[n - k]
    }

    /// Row of `ln(C(n, k))` for `k = 0..=n`.
    pub fn ln_binomial_row(&self, n: usize) -> Vec<f64> {
        (0..=n).map(|k| self.ln_binomial(n, k as i64)).collect()
    }
}

/// Binary entropy in bits; `0` at both endpoints.
pub fn binary_entropy_bits(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -(p * p.log2() + (1.0 - p) * (1.0 - p).log2())
}

/// `ln(I_0(x))` for `x >= 0`.
///
/// Power series below the crossover, leading asymptotic expansion above;
/// both branches agree to ~1e-13 at the seam.
pub fn ln_bessel_i0(x: f64) -> f64 {
    ln_bessel_i(0, x)
}

/// `ln(I_1(x))` for `x >= 0`; `-inf` at `x = 0`.
pub fn ln_bessel_i1(x: f64) -> f64 {
    ln_bessel_i(1, x)
}

fn ln_bessel_i(nu: u32, x: f64) -> f64 {
    assert!(x >= 0.0, "modified Bessel argument must be non-negative");
    if x == 0.0 {
        return if nu == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if x < 40.0 {
        // Series sum_k (x^2/4)^k / (k! (k+nu)!), prefactor (x/2)^nu.
        let q = 0.25 * x * x;
        let mut term = 1.0;
        let mut sum = NeumaierSum::new();
        sum.add(1.0);
        for k in 0..500usize {
            term *= q / ((k + 1) as f64 * (k + 1 + nu as usize) as f64);
            sum.add(term);
            if term < sum.value() * 1e-18 {
                break;
            }
        }
        (nu as f64) * (0.5 * x).ln() + sum.value().ln()
    } else {
        // I_nu(x) ~ e^x / sqrt(2 pi x) * sum_k (-1)^k a_k(nu) / x^k with
        // a_k = prod_{j=1..k} (4 nu^2 - (2j-1)^2) / (8 k!). Truncated where
        // the terms start growing; at x >= 40 that is well past 1e-15.
        let mu = 4.0 * (nu as f64) * (nu as f64);
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut prev = f64::INFINITY;
        for k in 1..30usize {
            let j = (2 * k - 1) as f64;
            term *= -(mu - j * j) / (8.0 * k as f64 * x);
            if term.abs() > prev {
                break;
            }
            prev = term.abs();
            sum += term;
            if term.abs() < 1e-17 {
                break;
            }
        }
        x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + sum.ln()
    }
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance.
///
/// Recursion depth is capped; on hitting the cap the local estimate is used
/// as is, which keeps the routine total even for integrands with kinks.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 48)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Golden-section minimisation of a unimodal `f` on `[a, b]`.
///
/// Returns `(x*, f(x*))` once the bracket is narrower than `xtol`.
pub fn golden_section_min<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, xtol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut lo, mut hi) = (a.min(b), a.max(b));
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > xtol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = f(x2);
        }
    }
    let xm = 0.5 * (lo + hi);
    let fm = f(xm);
    if f1.min(f2) < fm {
        if f1 <= f2 {
            (x1, f1)
        } else {
            (x2, f2)
        }
    } else {
        (xm, fm)
    }
}

/// Minimise `f` over `[lo, hi]`: coarse grid scan with step `step`, then a
/// golden-section refinement inside the bracketing grid cells.
///
/// Robust for the piecewise-smooth objectives produced by capped bounds,
/// which are unimodal on the grid scale but can have flat shelves.
pub fn minimize_grid_refined<F: Fn(f64) -> f64>(
    f: &F,
    lo: f64,
    hi: f64,
    step: f64,
    xtol: f64,
) -> (f64, f64) {
    assert!(hi > lo && step > 0.0);
    let n = ((hi - lo) / step).round() as usize;
    let mut best_i = 0usize;
    let mut best_x = lo;
    let mut best_f = f64::INFINITY;
    for i in 0..=n {
        let x = (lo + i as f64 * step).min(hi);
        let v = f(x);
        if v < best_f {
            best_f = v;
            best_x = x;
            best_i = i;
        }
    }
    let a = if best_i == 0 { lo } else { lo + (best_i - 1) as f64 * step };
    let b = if best_i >= n { hi } else { (lo + (best_i + 1) as f64 * step).min(hi) };
    let (xr, fr) = golden_section_min(f, a, b, xtol);
    if fr < best_f {
        (xr, fr)
    } else {
        (best_x, best_f)
    }
}

/// Poisson probabilities `P(K = k)` for `k = 0..`, truncated once the
/// remaining tail mass drops below `tail_tol`.
pub fn poisson_weights(lambda: f64, tail_tol: f64) -> Vec<f64> {
    assert!(lambda >= 0.0 && lambda < 700.0, "rate out of range");
    assert!(tail_tol > 0.0);
    let mut p = (-lambda).exp();
    let mut cum = NeumaierSum::new();
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        out.push(p);
        cum.add(p);
        if 1.0 - cum.value() <= tail_tol && k as f64 >= lambda {
            break;
        }
        k += 1;
        p *= lambda / k as f64;
        if k > 100_000 {
            break;
        }
    }
    out
}
