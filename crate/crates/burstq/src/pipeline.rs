//! End-to-end orchestration: margin selection, per-cell queue tails,
//! traffic calibration, parameter sweeps, and the CSV emitters the
//! command-line tool writes.
//!
//! Two pipelines produce a decoding-failure matrix for the queue. The
//! `Exact` pipeline evaluates the decoder head-on and tunes the integer
//! margin `nu`; the `Bound` pipeline works from the exponential bounds
//! and tunes the continuous tilt margin `tau`. Both enforce the same
//! undetected-error budget before looking at queueing performance.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    gallager_matrix_bound, rare_transition_bound, undetected_and_error_bounds, CodeParams,
    FailureBoundMatrix,
};
use crate::channel::{build_gilbert_elliott, FscSpec};
use crate::exact::{
    failure_matrix_exact, undetected_matrix_exact, CompetitorModel, DecisionRule,
    ExactFailureMatrix,
};
use crate::montecarlo::CodeFailureEstimate;
use crate::occupation::{continuous_occupancy_law, ContinuousOccupancyLaw, DiscreteOccupancyLaw};
use crate::queueing::{
    build_blocks, solve_g_matrix, stability_drift, stationary_levels, SuccessMatrix,
    SuccessProvenance, TrafficSpec,
};
use crate::{Error, Result};

/// Which failure model feeds the queue.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginPipeline {
    /// Exponential upper bounds with a tilt margin `tau`.
    Bound,
    /// Exact decoder evaluation with an integer margin `nu`.
    Exact,
}

/// Selected margin, in the pipeline's native units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum MarginValue {
    Nu(u32),
    Tau(f64),
}

impl MarginValue {
    pub fn kind_label(&self) -> &'static str {
        match self {
            MarginValue::Nu(_) => "nu",
            MarginValue::Tau(_) => "tau",
        }
    }

    pub fn numeric(&self) -> f64 {
        match self {
            MarginValue::Nu(v) => f64::from(*v),
            MarginValue::Tau(t) => *t,
        }
    }
}

/// Outcome of the margin search.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MarginSelection {
    pub pipeline: MarginPipeline,
    pub value: MarginValue,
    /// Undetected-error level actually achieved at the selected margin.
    pub achieved: f64,
    pub target: f64,
}

/// Step of the tilt-margin grid; the search returns a multiple of this.
const TAU_STEP: f64 = 1e-3;
/// Upper end of the tilt-margin grid.
const TAU_MAX_STEPS: u32 = 250;
/// Largest integer margin considered before giving up.
const NU_MAX: u32 = 64;
/// Grid step for the tilt-parameter optimisation inside the bounds.
const RHO_GRID: f64 = 0.01;

fn pn_array(spec: &FscSpec, n: usize) -> Result<[[f64; 2]; 2]> {
    let pn = spec.block_transition_matrix(n)?;
    Ok([[pn[(0, 0)], pn[(0, 1)]], [pn[(1, 0)], pn[(1, 1)]]])
}

fn stationary_array(spec: &FscSpec) -> Result<[f64; 2]> {
    let pi = spec.stationary()?;
    Ok([pi[0], pi[1]])
}

/// Smallest margin meeting the undetected-error budget: the exact
/// pipeline caps `max_{i,j} P(undetected | S_0 = i, S_N = j)`, the bound
/// pipeline caps the largest joint bound entry.
pub fn select_margin(
    spec: &FscSpec,
    code: &CodeParams,
    pipeline: MarginPipeline,
    target: f64,
) -> Result<MarginSelection> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::param(format!(
            "undetected-error target {target} must lie in (0, 1)"
        )));
    }
    match pipeline {
        MarginPipeline::Exact => {
            let pn = pn_array(spec, code.n())?;
            let achieved_at = |nu: u32| -> Result<f64> {
                let ue = undetected_matrix_exact(
                    spec,
                    code,
                    DecisionRule::MaximumLikelihood,
                    nu,
                    CompetitorModel::CappedUnion,
                )?;
                Ok(ue.max_conditional(&pn))
            };
            if achieved_at(NU_MAX)? > target {
                return Err(Error::InfeasibleMargin(format!(
                    "even nu = {NU_MAX} leaves the undetected level above {target}"
                )));
            }
            // Shrinking the radius is monotone, so bisect on the margin.
            let (mut lo, mut hi) = (0u32, NU_MAX);
            while lo < hi {
                let mid = (lo + hi) / 2;
                if achieved_at(mid)? <= target {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            Ok(MarginSelection {
                pipeline,
                value: MarginValue::Nu(hi),
                achieved: achieved_at(hi)?,
                target,
            })
        }
        MarginPipeline::Bound => {
            let achieved_at = |k: u32| -> Result<f64> {
                let (ue, _) = undetected_and_error_bounds(
                    spec,
                    code,
                    f64::from(k) * TAU_STEP,
                    Some(target),
                    RHO_GRID,
                )?;
                Ok(ue.max_entry())
            };
            if achieved_at(TAU_MAX_STEPS)? > target {
                return Err(Error::InfeasibleMargin(format!(
                    "even tau = {} leaves the undetected bound above {target}",
                    f64::from(TAU_MAX_STEPS) * TAU_STEP
                )));
            }
            let (mut lo, mut hi) = (0u32, TAU_MAX_STEPS);
            while lo < hi {
                let mid = (lo + hi) / 2;
                if achieved_at(mid)? <= target {
                    hi = mid;
                } else {
                    lo = mid + 1;
                }
            }
            Ok(MarginSelection {
                pipeline,
                value: MarginValue::Tau(f64::from(hi) * TAU_STEP),
                achieved: achieved_at(hi)?,
                target,
            })
        }
    }
}

/// Failure matrix the selected pipeline feeds to the queue.
pub fn failure_for_pipeline(
    spec: &FscSpec,
    code: &CodeParams,
    selection: &MarginSelection,
) -> Result<([[f64; 2]; 2], SuccessProvenance)> {
    match selection.value {
        MarginValue::Nu(nu) => {
            let f = failure_matrix_exact(
                spec,
                code,
                DecisionRule::MaximumLikelihood,
                nu,
                CompetitorModel::CappedUnion,
            )?;
            Ok((f.values, SuccessProvenance::Exact))
        }
        MarginValue::Tau(tau) => {
            let (_, fail) =
                undetected_and_error_bounds(spec, code, tau, Some(selection.target), RHO_GRID)?;
            Ok((fail.values, SuccessProvenance::Bound))
        }
    }
}

/// Fully resolved queueing figure for one `(N, rate)` cell.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct CellOutcome {
    pub n: usize,
    pub rate_bits: f64,
    pub margin: MarginSelection,
    /// `P(waiting packets > threshold)` in steady state.
    pub tail: f64,
    pub drift: f64,
    /// Stationary mass beyond the computed levels (after normalisation).
    pub residual: f64,
}

/// Select the margin, solve the queue, and report the stationary tail of
/// the waiting-packet count beyond `waiting_threshold`.
pub fn queue_tail_for_cell(
    spec: &FscSpec,
    code: &CodeParams,
    pipeline: MarginPipeline,
    target: f64,
    traffic: &TrafficSpec,
    waiting_threshold: i64,
) -> Result<CellOutcome> {
    let selection = select_margin(spec, code, pipeline, target)?;
    let (failure, provenance) = failure_for_pipeline(spec, code, &selection)?;
    let pn = pn_array(spec, code.n())?;
    let success = SuccessMatrix::from_failure(&failure, &pn, provenance)?;
    let blocks = build_blocks(&success, traffic, code, 1e-14)?;
    let drift = stability_drift(&blocks)?;
    let g = solve_g_matrix(&blocks)?;
    let min_levels = waiting_threshold.max(0) as usize + 8;
    let levels = stationary_levels(&blocks, &g, min_levels)?;
    // The level process counts packets in the system; the packet in
    // service is not waiting, hence the shift.
    let tail = levels.tail_probability(waiting_threshold + 1)?;
    Ok(CellOutcome {
        n: code.n(),
        rate_bits: code.rate_bits(),
        margin: selection,
        tail,
        drift,
        residual: levels.residual,
    })
}

/// Result of fitting the per-bit completion probability to a target tail.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Calibration {
    pub p_geo: f64,
    pub achieved_tail: f64,
    pub rel_error: f64,
    pub margin: MarginSelection,
}

/// Find the per-bit completion probability whose stationary tail matches
/// `target_tail` at this cell. The failure matrix is computed once; the
/// queue is re-solved per candidate. Unstable candidates count as tail 1,
/// which keeps the bisection bracketed.
pub fn calibrate_traffic(
    spec: &FscSpec,
    code: &CodeParams,
    pipeline: MarginPipeline,
    target: f64,
    arrival_rate: f64,
    waiting_threshold: i64,
    target_tail: f64,
) -> Result<Calibration> {
    if !(target_tail > 0.0 && target_tail < 1.0) {
        return Err(Error::param(format!(
            "target tail {target_tail} must lie in (0, 1)"
        )));
    }
    let selection = select_margin(spec, code, pipeline, target)?;
    let (failure, provenance) = failure_for_pipeline(spec, code, &selection)?;
    let pn = pn_array(spec, code.n())?;
    let success = SuccessMatrix::from_failure(&failure, &pn, provenance)?;
    let min_levels = waiting_threshold.max(0) as usize + 8;
    let tail_at = |p_geo: f64| -> Result<f64> {
        let traffic = TrafficSpec::new(arrival_rate, p_geo)?;
        let blocks = build_blocks(&success, &traffic, code, 1e-14)?;
        match solve_g_matrix(&blocks) {
            Ok(g) => stationary_levels(&blocks, &g, min_levels)?
                .tail_probability(waiting_threshold + 1),
            Err(Error::Unstable { .. }) => Ok(1.0),
            Err(e) => Err(e),
        }
    };
    let mut lo = 1e-9;
    let mut hi = 1.0;
    if tail_at(hi)? > target_tail {
        return Err(Error::NoConvergence(
            "target tail unreachable even with instant packet completion".into(),
        ));
    }
    // The tail decreases as completions get more frequent.
    while hi - lo > 1e-13 * hi {
        let mid = 0.5 * (lo + hi);
        if tail_at(mid)? > target_tail {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let p_geo = 0.5 * (lo + hi);
    let achieved_tail = tail_at(p_geo)?;
    Ok(Calibration {
        p_geo,
        achieved_tail,
        rel_error: (achieved_tail - target_tail).abs() / target_tail,
        margin: selection,
    })
}

/// Per-cell status inside a sweep.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellStatus {
    Done(CellOutcome),
    Skipped { reason: String },
    Failed { error: String },
}

#[derive(Clone, Debug, Serialize)]
pub struct CellReport {
    pub n: usize,
    pub rate_bits: f64,
    #[serde(flatten)]
    pub status: CellStatus,
}

/// Sweep outcome: one report per `(N, rate)` cell plus the best cell.
#[derive(Clone, Debug, Serialize)]
pub struct SweepSummary {
    pub pipeline: MarginPipeline,
    pub target: f64,
    pub waiting_threshold: i64,
    pub cells: Vec<CellReport>,
    pub best: Option<CellOutcome>,
}

/// Evaluate the queue tail over a grid of block lengths and rates,
/// skipping cells whose codebook size is not an integer, and report the
/// cell with the smallest tail. Individual cell errors are recorded, not
/// fatal.
pub fn run_sweep(
    spec: &FscSpec,
    ns: &[usize],
    rates: &[f64],
    pipeline: MarginPipeline,
    target: f64,
    traffic: &TrafficSpec,
    waiting_threshold: i64,
) -> SweepSummary {
    let cells: Vec<(usize, f64)> = ns
        .iter()
        .flat_map(|&n| rates.iter().map(move |&r| (n, r)))
        .collect();
    let reports: Vec<CellReport> = cells
        .par_iter()
        .map(|&(n, rate)| {
            let status = match CodeParams::new(n, rate) {
                Err(e) => CellStatus::Failed { error: e.to_string() },
                Ok(code) if !code.has_integer_size() => CellStatus::Skipped {
                    reason: format!("codebook size 2^({n} * {rate}) is not an integer"),
                },
                Ok(code) => {
                    match queue_tail_for_cell(
                        spec,
                        &code,
                        pipeline,
                        target,
                        traffic,
                        waiting_threshold,
                    ) {
                        Ok(outcome) => CellStatus::Done(outcome),
                        Err(e) => CellStatus::Failed { error: e.to_string() },
                    }
                }
            };
            CellReport { n, rate_bits: rate, status }
        })
        .collect();
    let best = reports
        .iter()
        .filter_map(|r| match &r.status {
            CellStatus::Done(outcome) => Some(*outcome),
            _ => None,
        })
        .min_by(|a, b| a.tail.total_cmp(&b.tail));
    SweepSummary {
        pipeline,
        target,
        waiting_threshold,
        cells: reports,
        best,
    }
}

/// Formats a value with twelve significant digits, the precision used in
/// all emitted tables.
fn num(x: f64) -> String {
    format!("{x:.11e}")
}

const MATRIX_CSV_HEADER: &str = "kind,n,rate_bits,i,j,rho_star,v_star,tau,margin,value";

/// Write bound matrices as CSV rows (1-based state labels).
pub fn write_bound_csv<W: Write>(
    w: &mut W,
    code: &CodeParams,
    matrices: &[FailureBoundMatrix],
) -> io::Result<()> {
    writeln!(w, "{MATRIX_CSV_HEADER}")?;
    for m in matrices {
        for i in 0..2 {
            for j in 0..2 {
                let v_star = m
                    .v_star
                    .map(|v| num(v[i][j]))
                    .unwrap_or_default();
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},,{}",
                    m.kind.label(),
                    code.n(),
                    num(code.rate_bits()),
                    i + 1,
                    j + 1,
                    num(m.rho_star[i][j]),
                    v_star,
                    num(m.tau),
                    num(m.values[i][j]),
                )?;
            }
        }
    }
    Ok(())
}

fn exact_kind_label(m: &ExactFailureMatrix) -> &'static str {
    if m.undetected {
        "exact_undetected"
    } else if m.gamma == 1.0 {
        "exact_md"
    } else {
        "exact_ml"
    }
}

/// Write exact failure matrices as CSV rows, sharing the bound layout so
/// outputs concatenate cleanly.
pub fn write_exact_csv<W: Write>(
    w: &mut W,
    code: &CodeParams,
    matrices: &[ExactFailureMatrix],
) -> io::Result<()> {
    writeln!(w, "{MATRIX_CSV_HEADER}")?;
    for m in matrices {
        for i in 0..2 {
            for j in 0..2 {
                writeln!(
                    w,
                    "{},{},{},{},{},,,,{},{}",
                    exact_kind_label(m),
                    code.n(),
                    num(code.rate_bits()),
                    i + 1,
                    j + 1,
                    m.margin,
                    num(m.values[i][j]),
                )?;
            }
        }
    }
    Ok(())
}

/// Write a sweep summary as CSV, one row per cell.
pub fn write_queue_csv<W: Write>(w: &mut W, summary: &SweepSummary) -> io::Result<()> {
    writeln!(
        w,
        "n,rate_bits,margin_kind,margin_value,threshold,tail_probability,drift,residual,status,detail"
    )?;
    for cell in &summary.cells {
        match &cell.status {
            CellStatus::Done(o) => writeln!(
                w,
                "{},{},{},{},{},{},{},{},ok,",
                o.n,
                num(o.rate_bits),
                o.margin.value.kind_label(),
                num(o.margin.value.numeric()),
                summary.waiting_threshold,
                num(o.tail),
                num(o.drift),
                num(o.residual),
            )?,
            CellStatus::Skipped { reason } => writeln!(
                w,
                "{},{},,,{},,,,skipped,{}",
                cell.n,
                num(cell.rate_bits),
                summary.waiting_threshold,
                reason.replace(',', ";"),
            )?,
            CellStatus::Failed { error } => writeln!(
                w,
                "{},{},,,{},,,,failed,{}",
                cell.n,
                num(cell.rate_bits),
                summary.waiting_threshold,
                error.replace(',', ";"),
            )?,
        }
    }
    Ok(())
}

/// Write the discrete occupancy law (1-based state labels).
pub fn write_discrete_law_csv<W: Write>(
    w: &mut W,
    law: &DiscreteOccupancyLaw,
) -> io::Result<()> {
    writeln!(w, "m,initial,final,probability")?;
    for m in 0..=law.n() {
        for i in 0..2 {
            for j in 0..2 {
                writeln!(w, "{},{},{},{}", m, i + 1, j + 1, num(law.prob(m, i, j)))?;
            }
        }
    }
    Ok(())
}

/// Sample the continuous occupancy law on a uniform grid and list the
/// endpoint atoms.
pub fn write_continuous_law_csv<W: Write>(
    w: &mut W,
    law: &ContinuousOccupancyLaw,
    samples: usize,
) -> io::Result<()> {
    writeln!(w, "r,initial,final,kind,value")?;
    let samples = samples.max(2);
    for k in 0..=samples {
        let r = k as f64 / samples as f64;
        for i in 0..2 {
            for j in 0..2 {
                writeln!(
                    w,
                    "{},{},{},density,{}",
                    num(r),
                    i + 1,
                    j + 1,
                    num(law.density(i, j, r))
                )?;
            }
        }
    }
    for i in 0..2 {
        for j in 0..2 {
            if let Some(loc) = law.atom_location(i, j) {
                writeln!(
                    w,
                    "{},{},{},atom,{}",
                    num(loc),
                    i + 1,
                    j + 1,
                    num(law.atom_mass(i, j))
                )?;
            }
        }
    }
    Ok(())
}

/// Write a simulated code-failure estimate.
pub fn write_mc_csv<W: Write>(
    w: &mut W,
    code: &CodeParams,
    est: &CodeFailureEstimate,
) -> io::Result<()> {
    writeln!(w, "kind,n,rate_bits,margin,trials,i,j,value,stderr")?;
    for i in 0..2 {
        for j in 0..2 {
            writeln!(
                w,
                "mc_failure,{},{},{},{},{},{},{},{}",
                code.n(),
                num(code.rate_bits()),
                est.margin,
                est.trials_per_state,
                i + 1,
                j + 1,
                num(est.failure[i][j]),
                num(est.failure_stderr[i][j]),
            )?;
        }
    }
    for i in 0..2 {
        for j in 0..2 {
            writeln!(
                w,
                "mc_undetected,{},{},{},{},{},{},{},{}",
                code.n(),
                num(code.rate_bits()),
                est.margin,
                est.trials_per_state,
                i + 1,
                j + 1,
                num(est.undetected[i][j]),
                num(est.undetected_stderr[i][j]),
            )?;
        }
    }
    Ok(())
}

/// One point of a data figure.
#[derive(Clone, Debug, Serialize)]
pub struct FigureRow {
    pub figure: u8,
    pub series: String,
    pub n: usize,
    pub rate_bits: f64,
    pub value: f64,
}

fn rate_grid() -> Vec<f64> {
    (5..=15).map(|k| k as f64 * 0.05).collect()
}

/// Compute the rows of one of the four data figures.
///
/// 1. is reserved (no data series);
/// 2. bound comparison on per-length channels with `alpha = 4/N`,
///    `beta = 6/N`: Gallager-type matrix bound vs the rare-transition
///    approximation, lengths 50/75/100;
/// 3. exact failure (maximum-likelihood and minimum-distance) vs the
///    rare-transition approximation on the reference channel, lengths
///    50/75;
/// 4. queue tail over block lengths and rates, bound pipeline;
/// 5. queue tail over block lengths and rates, exact pipeline.
///
/// Queue-figure cells that are unstable or miss the undetected-error
/// budget are reported at value 1.
pub fn figure_rows(
    spec: &FscSpec,
    figure: u8,
    target: f64,
    traffic: &TrafficSpec,
    waiting_threshold: i64,
) -> Result<Vec<FigureRow>> {
    let rates = rate_grid();
    match figure {
        2 => {
            let eps = (spec.crossover()[0], spec.crossover()[1]);
            let law = continuous_occupancy_law(4.0, 6.0)?;
            let mut rows = Vec::new();
            for &n in &[50usize, 75, 100] {
                let spec_n =
                    build_gilbert_elliott(4.0 / n as f64, 6.0 / n as f64, eps.0, eps.1)?;
                let pi = stationary_array(&spec_n)?;
                for &rate in &rates {
                    let code = CodeParams::new(n, rate)?;
                    let g = gallager_matrix_bound(&spec_n, &code, RHO_GRID)?;
                    rows.push(FigureRow {
                        figure,
                        series: "gallager".into(),
                        n,
                        rate_bits: rate,
                        value: g.scalar(&pi).min(1.0),
                    });
                    let r = rare_transition_bound(&law, eps, &code, RHO_GRID)?;
                    rows.push(FigureRow {
                        figure,
                        series: "rare".into(),
                        n,
                        rate_bits: rate,
                        value: r.scalar(&pi).min(1.0),
                    });
                }
            }
            Ok(rows)
        }
        3 => {
            let eps = (spec.crossover()[0], spec.crossover()[1]);
            let pi = stationary_array(spec)?;
            let mut rows = Vec::new();
            for &n in &[50usize, 75] {
                let (alpha, beta) = spec.two_state_rates(n)?;
                let law = continuous_occupancy_law(alpha * n as f64, beta * n as f64)?;
                for &rate in &rates {
                    let code = CodeParams::new(n, rate)?;
                    for (series, rule) in [
                        ("exact_ml", DecisionRule::MaximumLikelihood),
                        ("exact_md", DecisionRule::MinimumDistance),
                    ] {
                        let m = failure_matrix_exact(
                            spec,
                            &code,
                            rule,
                            0,
                            CompetitorModel::CappedUnion,
                        )?;
                        rows.push(FigureRow {
                            figure,
                            series: series.into(),
                            n,
                            rate_bits: rate,
                            value: m.scalar(&pi),
                        });
                    }
                    let r = rare_transition_bound(&law, eps, &code, RHO_GRID)?;
                    rows.push(FigureRow {
                        figure,
                        series: "rare".into(),
                        n,
                        rate_bits: rate,
                        value: r.scalar(&pi).min(1.0),
                    });
                }
            }
            Ok(rows)
        }
        4 | 5 => {
            let (pipeline, series, ns): (MarginPipeline, &str, &[usize]) = if figure == 4 {
                (
                    MarginPipeline::Bound,
                    "bound_tail",
                    &[75, 125, 170, 225, 275, 325, 375],
                )
            } else {
                (MarginPipeline::Exact, "exact_tail", &[75, 125, 170, 225])
            };
            let cells: Vec<(usize, f64)> = ns
                .iter()
                .flat_map(|&n| rates.iter().map(move |&r| (n, r)))
                .collect();
            let rows: Vec<FigureRow> = cells
                .par_iter()
                .map(|&(n, rate)| {
                    let value = CodeParams::new(n, rate)
                        .and_then(|code| {
                            queue_tail_for_cell(
                                spec,
                                &code,
                                pipeline,
                                target,
                                traffic,
                                waiting_threshold,
                            )
                        })
                        .map(|o| o.tail.min(1.0))
                        .unwrap_or(1.0);
                    FigureRow {
                        figure,
                        series: series.into(),
                        n,
                        rate_bits: rate,
                        value,
                    }
                })
                .collect();
            Ok(rows)
        }
        other => Err(Error::param(format!(
            "figure {other} is not defined; choose 2, 3, 4 or 5"
        ))),
    }
}

/// Write figure rows as CSV.
pub fn write_figure_csv<W: Write>(w: &mut W, rows: &[FigureRow]) -> io::Result<()> {
    writeln!(w, "figure,series,n,rate_bits,value")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.figure,
            r.series,
            r.n,
            num(r.rate_bits),
            num(r.value)
        )?;
    }
    Ok(())
}
