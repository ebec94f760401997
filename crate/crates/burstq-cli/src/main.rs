//! Command line front end for the burst-channel coding and queueing
//! analysis library.
//!
//! Every command resolves its inputs in three layers with increasing
//! precedence: built-in defaults, an optional TOML configuration file
//! (`--config`), and command line flags. Tables are emitted as CSV and
//! single results as JSON, to stdout by default; `--output DIR` writes
//! each artifact into `DIR` instead. For a fixed configuration and seed
//! the output is byte-for-byte reproducible.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use burstq::bounds::{
    gallager_matrix_bound, rare_transition_bound, type_sum_bound, CodeParams,
};
use burstq::channel::{build_gilbert_elliott, csi_capacity, FscSpec};
use burstq::exact::{
    failure_matrix_exact, undetected_matrix_exact, CompetitorModel, DecisionRule,
};
use burstq::montecarlo::{
    coupled_dominance_experiment, simulate_queue, simulate_random_code_failure,
    QueueSimEstimate, SimConfig,
};
use burstq::occupation::continuous_occupancy_law;
use burstq::pipeline::{
    calibrate_traffic, failure_for_pipeline, figure_rows, queue_tail_for_cell, run_sweep,
    select_margin, write_bound_csv, write_exact_csv, write_figure_csv, write_mc_csv,
    write_queue_csv, CellStatus, MarginPipeline, MarginSelection,
};
use burstq::queueing::{SuccessMatrix, TrafficSpec};

/// Built-in defaults; the configuration file and flags override them.
mod defaults {
    pub const ALPHA: f64 = 0.0533;
    pub const BETA: f64 = 0.08;
    pub const EPS1: f64 = 0.01;
    pub const EPS2: f64 = 0.1;
    pub const LAMBDA: f64 = 1.0 / 575.0;
    pub const P_GEO: f64 = 0.006626;
    pub const TARGET: f64 = 1e-5;
    pub const THRESHOLD: i64 = 5;
    pub const SEED: u64 = 7;
    pub const NS: &[usize] = &[75, 125, 170, 225];
}

fn default_rates() -> Vec<f64> {
    (5..=15).map(|k| f64::from(k) * 0.05).collect()
}

#[derive(Parser)]
#[command(
    name = "burstq",
    version,
    about = "Failure probabilities and queue tails for block codes on burst-noise channels"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalOpts {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Directory for output artifacts (default: stdout).
    #[arg(long, global = true, value_name = "DIR")]
    output: Option<PathBuf>,
    /// Worker threads for parallel kernels (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Per-symbol probability of leaving the good state.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Per-symbol probability of leaving the bad state.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Crossover probability in the good state.
    #[arg(long, global = true)]
    eps1: Option<f64>,
    /// Crossover probability in the bad state.
    #[arg(long, global = true)]
    eps2: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Inspect the channel model.
    Channel {
        #[command(subcommand)]
        cmd: ChannelCmd,
    },
    /// Analytic failure bounds for one code cell.
    Bound {
        #[command(subcommand)]
        cmd: BoundCmd,
    },
    /// Exact random-code failure probabilities for one code cell.
    Exact {
        #[command(subcommand)]
        cmd: ExactCmd,
    },
    /// Detection-margin selection against an undetected-error budget.
    Margin {
        #[command(subcommand)]
        cmd: MarginCmd,
    },
    /// Stationary queue analysis for one code cell.
    Queue {
        #[command(subcommand)]
        cmd: QueueCmd,
    },
    /// Monte Carlo cross-checks of the analytic pipeline.
    Mc {
        #[command(subcommand)]
        cmd: McCmd,
    },
    /// Queue tails over a grid of block lengths and rates.
    Sweep(SweepArgs),
    /// Emit the rows of one bundled data figure (2 through 5).
    Figure(FigureArgs),
    /// Fit the per-bit completion probability to a target queue tail.
    Calibrate(CalibrateArgs),
}

#[derive(Subcommand)]
enum ChannelCmd {
    /// Print parameters, the stationary law, and the side-information capacity.
    Info {
        /// Also print the state transition matrix across a block of N symbols.
        #[arg(long)]
        n: Option<usize>,
    },
}

#[derive(Args)]
struct CellArgs {
    /// Block length in symbols.
    #[arg(long)]
    n: usize,
    /// Code rate in bits per symbol.
    #[arg(long)]
    rate: f64,
}

impl CellArgs {
    fn code(&self) -> Result<CodeParams> {
        Ok(CodeParams::new(self.n, self.rate)?)
    }
}

#[derive(Subcommand)]
enum BoundCmd {
    /// Matrix random-coding bound with per-entry exponent optimisation.
    Gallager {
        #[command(flatten)]
        cell: CellArgs,
        /// Grid step for the initial exponent scan.
        #[arg(long, default_value_t = 0.01)]
        grid_step: f64,
    },
    /// Occupancy-resolved sum of per-type random-coding bounds.
    TypeSum {
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long, default_value_t = 0.01)]
        grid_step: f64,
    },
    /// Slow-transition limit bound from the continuous occupancy law.
    Rare {
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long, default_value_t = 0.01)]
        grid_step: f64,
        /// Mean good-state departures per block (default: N * alpha).
        #[arg(long)]
        mu: Option<f64>,
        /// Mean bad-state departures per block (default: N * beta).
        #[arg(long)]
        xi: Option<f64>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    /// Union bound over competitors, capped at one.
    Capped,
    /// Independent competitors, exact complement.
    Independent,
}

impl From<ModelArg> for CompetitorModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Capped => CompetitorModel::CappedUnion,
            ModelArg::Independent => CompetitorModel::IndependentExact,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum RuleArg {
    /// Likelihood-weighted distance.
    Ml,
    /// Plain Hamming distance.
    Md,
}

impl From<RuleArg> for DecisionRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Ml => DecisionRule::MaximumLikelihood,
            RuleArg::Md => DecisionRule::MinimumDistance,
        }
    }
}

#[derive(Args)]
struct ExactArgs {
    #[command(flatten)]
    cell: CellArgs,
    /// Detection margin in weighted-distance units.
    #[arg(long, default_value_t = 0)]
    margin: u32,
    /// Competitor aggregation model.
    #[arg(long, value_enum, default_value_t = ModelArg::Capped)]
    model: ModelArg,
}

#[derive(Subcommand)]
enum ExactCmd {
    /// Failure under the likelihood-weighted distance rule.
    Ml(ExactArgs),
    /// Failure under plain minimum-distance decoding.
    Md(ExactArgs),
    /// Undetected failure inside the detection margin.
    Undetected {
        #[command(flatten)]
        args: ExactArgs,
        /// Decision rule for the weighted distance.
        #[arg(long, value_enum, default_value_t = RuleArg::Ml)]
        rule: RuleArg,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum PipelineArg {
    /// Exact failure matrices with an integer margin.
    Exact,
    /// Analytic bounds with a fractional-occupancy margin.
    Bound,
}

impl From<PipelineArg> for MarginPipeline {
    fn from(p: PipelineArg) -> Self {
        match p {
            PipelineArg::Exact => MarginPipeline::Exact,
            PipelineArg::Bound => MarginPipeline::Bound,
        }
    }
}

#[derive(Subcommand)]
enum MarginCmd {
    /// Smallest margin meeting the undetected-error budget.
    Select {
        #[command(flatten)]
        cell: CellArgs,
        #[command(flatten)]
        overrides: PipelineOverrides,
    },
}

/// Flags that override the `[margin]`, `[traffic]`, and `[run]` sections.
#[derive(Args, Debug)]
struct PipelineOverrides {
    /// Margin pipeline feeding the queue.
    #[arg(long, value_enum)]
    pipeline: Option<PipelineArg>,
    /// Undetected-error budget.
    #[arg(long)]
    target: Option<f64>,
    /// Waiting-packet threshold for tail reports.
    #[arg(long)]
    threshold: Option<i64>,
    /// Packet arrival rate per symbol slot.
    #[arg(long)]
    lambda: Option<f64>,
    /// Per-bit completion probability of the retransmission phase.
    #[arg(long)]
    p_geo: Option<f64>,
}

#[derive(Subcommand)]
enum QueueCmd {
    /// Margin selection, stationary solve, and waiting-tail report.
    Tail {
        #[command(flatten)]
        cell: CellArgs,
        #[command(flatten)]
        overrides: PipelineOverrides,
    },
}

#[derive(Subcommand)]
enum McCmd {
    /// Simulate random codebooks over drawn state paths.
    Code {
        #[command(flatten)]
        cell: CellArgs,
        #[arg(long, value_enum, default_value_t = RuleArg::Ml)]
        rule: RuleArg,
        /// Detection margin in weighted-distance units.
        #[arg(long, default_value_t = 0)]
        margin: u32,
        /// Trials per initial state.
        #[arg(long, default_value_t = 200_000)]
        trials: u64,
        /// RNG seed (default: `[run] seed`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate the retransmission queue along one trajectory.
    Queue {
        #[command(flatten)]
        cell: CellArgs,
        #[command(flatten)]
        overrides: PipelineOverrides,
        /// Simulated slots after warmup.
        #[arg(long, default_value_t = 1_000_000)]
        steps: u64,
        /// Warmup slots discarded before counting.
        #[arg(long, default_value_t = 10_000)]
        warmup: u64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Couple the exact and bound queues on shared randomness.
    Dominance {
        #[command(flatten)]
        cell: CellArgs,
        #[command(flatten)]
        overrides: PipelineOverrides,
        /// Simulated slots.
        #[arg(long, default_value_t = 1_000_000)]
        steps: u64,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    overrides: PipelineOverrides,
    /// Block lengths, comma separated (default: `[grid] n`).
    #[arg(long, value_delimiter = ',')]
    ns: Option<Vec<usize>>,
    /// Rates in bits per symbol, comma separated (default: `[grid] rates`).
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
}

#[derive(Args)]
struct FigureArgs {
    /// Figure number.
    #[arg(value_parser = clap::value_parser!(u8).range(2..=5))]
    which: u8,
    #[command(flatten)]
    overrides: PipelineOverrides,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    cell: CellArgs,
    /// Stationary waiting tail the completion probability must achieve.
    #[arg(long)]
    target_tail: f64,
    #[command(flatten)]
    overrides: PipelineOverrides,
}

/// Optional configuration file; every field falls back to a default.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    channel: Option<ChannelSection>,
    grid: Option<GridSection>,
    margin: Option<MarginSection>,
    traffic: Option<TrafficSection>,
    run: Option<RunSection>,
    output: Option<OutputSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelSection {
    alpha: Option<f64>,
    beta: Option<f64>,
    eps1: Option<f64>,
    eps2: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSection {
    n: Option<Vec<usize>>,
    rates: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarginSection {
    pipeline: Option<PipelineArg>,
    target: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrafficSection {
    lambda: Option<f64>,
    p_geo: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSection {
    seed: Option<u64>,
    jobs: Option<usize>,
    threshold: Option<i64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    dir: Option<PathBuf>,
}

/// Fully resolved run parameters.
struct Settings {
    spec: FscSpec,
    alpha: f64,
    beta: f64,
    ns: Vec<usize>,
    rates: Vec<f64>,
    pipeline: MarginPipeline,
    target: f64,
    lambda: f64,
    p_geo: f64,
    seed: u64,
    threshold: i64,
    sink: Sink,
}

impl Settings {
    fn resolve(global: &GlobalOpts) -> Result<Self> {
        let file = match &global.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading configuration {}", path.display()))?;
                toml::from_str::<FileConfig>(&text)
                    .with_context(|| format!("parsing configuration {}", path.display()))?
            }
            None => FileConfig::default(),
        };
        let channel = file.channel.unwrap_or_default();
        let grid = file.grid.unwrap_or_default();
        let margin = file.margin.unwrap_or_default();
        let traffic = file.traffic.unwrap_or_default();
        let run = file.run.unwrap_or_default();
        let output = file.output.unwrap_or_default();

        let alpha = global.alpha.or(channel.alpha).unwrap_or(defaults::ALPHA);
        let beta = global.beta.or(channel.beta).unwrap_or(defaults::BETA);
        let eps1 = global.eps1.or(channel.eps1).unwrap_or(defaults::EPS1);
        let eps2 = global.eps2.or(channel.eps2).unwrap_or(defaults::EPS2);
        let spec = build_gilbert_elliott(alpha, beta, eps1, eps2)?;

        if let Some(jobs) = global.jobs.or(run.jobs) {
            ensure!(jobs > 0, "--jobs must be positive");
            rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build_global()
                .context("configuring the worker pool")?;
        }

        Ok(Settings {
            spec,
            alpha,
            beta,
            ns: grid.n.unwrap_or_else(|| defaults::NS.to_vec()),
            rates: grid.rates.unwrap_or_else(default_rates),
            pipeline: margin.pipeline.map_or(MarginPipeline::Exact, Into::into),
            target: margin.target.unwrap_or(defaults::TARGET),
            lambda: traffic.lambda.unwrap_or(defaults::LAMBDA),
            p_geo: traffic.p_geo.unwrap_or(defaults::P_GEO),
            seed: run.seed.unwrap_or(defaults::SEED),
            threshold: run.threshold.unwrap_or(defaults::THRESHOLD),
            sink: Sink {
                dir: global.output.clone().or(output.dir),
            },
        })
    }

    fn pipeline(&self, o: &PipelineOverrides) -> MarginPipeline {
        o.pipeline.map_or(self.pipeline, Into::into)
    }

    fn target(&self, o: &PipelineOverrides) -> f64 {
        o.target.unwrap_or(self.target)
    }

    fn threshold(&self, o: &PipelineOverrides) -> i64 {
        o.threshold.unwrap_or(self.threshold)
    }

    fn traffic(&self, o: &PipelineOverrides) -> Result<TrafficSpec> {
        Ok(TrafficSpec::new(
            o.lambda.unwrap_or(self.lambda),
            o.p_geo.unwrap_or(self.p_geo),
        )?)
    }
}

/// Writes one named artifact to the output directory or stdout.
struct Sink {
    dir: Option<PathBuf>,
}

impl Sink {
    fn emit(&self, name: &str, body: &str) -> Result<()> {
        match &self.dir {
            Some(dir) => {
                fs::create_dir_all(dir)
                    .with_context(|| format!("creating {}", dir.display()))?;
                let path = dir.join(name);
                fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
                println!("wrote {}", path.display());
            }
            None => io::stdout().write_all(body.as_bytes())?,
        }
        Ok(())
    }

    fn emit_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut body = serde_json::to_string_pretty(value)?;
        body.push('\n');
        self.emit(name, &body)
    }
}

fn csv_string<F>(write: F) -> Result<String>
where
    F: FnOnce(&mut Vec<u8>) -> io::Result<()>,
{
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(String::from_utf8(buf).expect("csv emitters produce UTF-8"))
}

fn pn_as_array(spec: &FscSpec, n: usize) -> Result<[[f64; 2]; 2]> {
    ensure!(spec.states() == 2, "two-state channel required");
    let pn = spec.block_transition_matrix(n)?;
    Ok([[pn[(0, 0)], pn[(0, 1)]], [pn[(1, 0)], pn[(1, 1)]]])
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let settings = Settings::resolve(&cli.global)?;
    match cli.command {
        Command::Channel { cmd } => channel_cmd(&settings, cmd)?,
        Command::Bound { cmd } => bound_cmd(&settings, cmd)?,
        Command::Exact { cmd } => exact_cmd(&settings, cmd)?,
        Command::Margin { cmd } => margin_cmd(&settings, cmd)?,
        Command::Queue { cmd } => queue_cmd(&settings, cmd)?,
        Command::Mc { cmd } => mc_cmd(&settings, cmd)?,
        Command::Sweep(args) => return sweep_cmd(&settings, args),
        Command::Figure(args) => figure_cmd(&settings, args)?,
        Command::Calibrate(args) => calibrate_cmd(&settings, args)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn channel_cmd(settings: &Settings, cmd: ChannelCmd) -> Result<()> {
    let ChannelCmd::Info { n } = cmd;
    let spec = &settings.spec;
    let mut out = String::new();
    writeln!(out, "states = {}", spec.states())?;
    let eps = spec.crossover();
    writeln!(out, "crossover = {}, {}", eps[0], eps[1])?;
    writeln!(out, "alpha = {}", settings.alpha)?;
    writeln!(out, "beta = {}", settings.beta)?;
    let pi = spec.stationary()?;
    writeln!(out, "stationary = {}, {}", pi[0], pi[1])?;
    writeln!(out, "csi capacity bits = {}", csi_capacity(spec)?)?;
    if let Some(n) = n {
        let pn = spec.block_transition_matrix(n)?;
        writeln!(out, "block transition (n = {n}):")?;
        for i in 0..spec.states() {
            let row: Vec<String> = (0..spec.states()).map(|j| pn[(i, j)].to_string()).collect();
            writeln!(out, "  {}", row.join(", "))?;
        }
    }
    settings.sink.emit("channel.txt", &out)
}

fn bound_cmd(settings: &Settings, cmd: BoundCmd) -> Result<()> {
    let spec = &settings.spec;
    let (name, code, matrix) = match cmd {
        BoundCmd::Gallager { cell, grid_step } => {
            let code = cell.code()?;
            let m = gallager_matrix_bound(spec, &code, grid_step)?;
            ("bound_gallager.csv", code, m)
        }
        BoundCmd::TypeSum { cell, grid_step } => {
            let code = cell.code()?;
            let m = type_sum_bound(spec, &code, grid_step)?;
            ("bound_type_sum.csv", code, m)
        }
        BoundCmd::Rare {
            cell,
            grid_step,
            mu,
            xi,
        } => {
            let code = cell.code()?;
            let n = code.n() as f64;
            let law = continuous_occupancy_law(
                mu.unwrap_or(settings.alpha * n),
                xi.unwrap_or(settings.beta * n),
            )?;
            let eps = spec.crossover();
            let m = rare_transition_bound(&law, (eps[0], eps[1]), &code, grid_step)?;
            ("bound_rare.csv", code, m)
        }
    };
    let body = csv_string(|w| write_bound_csv(w, &code, &[matrix]))?;
    settings.sink.emit(name, &body)
}

fn exact_cmd(settings: &Settings, cmd: ExactCmd) -> Result<()> {
    let spec = &settings.spec;
    let (name, args, rule, undetected) = match cmd {
        ExactCmd::Ml(args) => ("exact_ml.csv", args, DecisionRule::MaximumLikelihood, false),
        ExactCmd::Md(args) => ("exact_md.csv", args, DecisionRule::MinimumDistance, false),
        ExactCmd::Undetected { args, rule } => {
            ("exact_undetected.csv", args, rule.into(), true)
        }
    };
    let code = args.cell.code()?;
    let matrix = if undetected {
        undetected_matrix_exact(spec, &code, rule, args.margin, args.model.into())?
    } else {
        failure_matrix_exact(spec, &code, rule, args.margin, args.model.into())?
    };
    let body = csv_string(|w| write_exact_csv(w, &code, &[matrix]))?;
    settings.sink.emit(name, &body)
}

fn margin_cmd(settings: &Settings, cmd: MarginCmd) -> Result<()> {
    let MarginCmd::Select { cell, overrides } = cmd;
    let code = cell.code()?;
    let selection = select_margin(
        &settings.spec,
        &code,
        settings.pipeline(&overrides),
        settings.target(&overrides),
    )?;
    settings.sink.emit_json("margin.json", &selection)
}

fn queue_cmd(settings: &Settings, cmd: QueueCmd) -> Result<()> {
    let QueueCmd::Tail { cell, overrides } = cmd;
    let code = cell.code()?;
    let outcome = queue_tail_for_cell(
        &settings.spec,
        &code,
        settings.pipeline(&overrides),
        settings.target(&overrides),
        &settings.traffic(&overrides)?,
        settings.threshold(&overrides),
    )?;
    settings.sink.emit_json("queue_tail.json", &outcome)
}

/// Context echoed next to a queue simulation estimate.
#[derive(Serialize)]
struct McQueueOutput {
    margin: MarginSelection,
    waiting_threshold: i64,
    estimate: QueueSimEstimate,
}

fn mc_cmd(settings: &Settings, cmd: McCmd) -> Result<()> {
    let spec = &settings.spec;
    match cmd {
        McCmd::Code {
            cell,
            rule,
            margin,
            trials,
            seed,
        } => {
            let code = cell.code()?;
            let config = SimConfig {
                seed: seed.unwrap_or(settings.seed),
                trials,
            };
            let est = simulate_random_code_failure(spec, &code, rule.into(), margin, &config)?;
            let body = csv_string(|w| write_mc_csv(w, &code, &est))?;
            settings.sink.emit("mc_code.csv", &body)
        }
        McCmd::Queue {
            cell,
            overrides,
            steps,
            warmup,
            seed,
        } => {
            let code = cell.code()?;
            let selection = select_margin(
                spec,
                &code,
                settings.pipeline(&overrides),
                settings.target(&overrides),
            )?;
            let (failure, provenance) = failure_for_pipeline(spec, &code, &selection)?;
            let pn = pn_as_array(spec, code.n())?;
            let success = SuccessMatrix::from_failure(&failure, &pn, provenance)?;
            let traffic = settings.traffic(&overrides)?;
            let threshold = settings.threshold(&overrides);
            let config = SimConfig {
                seed: seed.unwrap_or(settings.seed),
                trials: steps,
            };
            // The simulator thresholds packets in the system; shift by the
            // packet in service to report waiting packets.
            let est = simulate_queue(&success, &traffic, &code, threshold + 1, warmup, &config)?;
            settings.sink.emit_json(
                "mc_queue.json",
                &McQueueOutput {
                    margin: selection,
                    waiting_threshold: threshold,
                    estimate: est,
                },
            )
        }
        McCmd::Dominance {
            cell,
            overrides,
            steps,
            seed,
        } => {
            let code = cell.code()?;
            let target = settings.target(&overrides);
            let pn = pn_as_array(spec, code.n())?;
            let success = |pipeline: MarginPipeline| -> Result<SuccessMatrix> {
                let selection = select_margin(spec, &code, pipeline, target)?;
                let (failure, provenance) = failure_for_pipeline(spec, &code, &selection)?;
                Ok(SuccessMatrix::from_failure(&failure, &pn, provenance)?)
            };
            let exact = success(MarginPipeline::Exact)?;
            let bound = success(MarginPipeline::Bound)?;
            let traffic = settings.traffic(&overrides)?;
            let config = SimConfig {
                seed: seed.unwrap_or(settings.seed),
                trials: steps,
            };
            let report = coupled_dominance_experiment(&exact, &bound, &traffic, &code, &config)?;
            settings.sink.emit_json("mc_dominance.json", &report)
        }
    }
}

fn sweep_cmd(settings: &Settings, args: SweepArgs) -> Result<ExitCode> {
    let ns = args.ns.as_deref().unwrap_or(&settings.ns);
    let rates = args.rates.as_deref().unwrap_or(&settings.rates);
    let summary = run_sweep(
        &settings.spec,
        ns,
        rates,
        settings.pipeline(&args.overrides),
        settings.target(&args.overrides),
        &settings.traffic(&args.overrides)?,
        settings.threshold(&args.overrides),
    );
    let body = csv_string(|w| write_queue_csv(w, &summary))?;
    settings.sink.emit("sweep.csv", &body)?;
    let failed = summary
        .cells
        .iter()
        .filter(|c| matches!(c.status, CellStatus::Failed { .. }))
        .count();
    if failed > 0 {
        eprintln!("{failed} of {} cells failed", summary.cells.len());
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn figure_cmd(settings: &Settings, args: FigureArgs) -> Result<()> {
    let rows = figure_rows(
        &settings.spec,
        args.which,
        settings.target(&args.overrides),
        &settings.traffic(&args.overrides)?,
        settings.threshold(&args.overrides),
    )?;
    let body = csv_string(|w| write_figure_csv(w, &rows))?;
    settings.sink.emit(&format!("figure{}.csv", args.which), &body)
}

fn calibrate_cmd(settings: &Settings, args: CalibrateArgs) -> Result<()> {
    let code = args.cell.code()?;
    let calibration = calibrate_traffic(
        &settings.spec,
        &code,
        settings.pipeline(&args.overrides),
        settings.target(&args.overrides),
        args.overrides.lambda.unwrap_or(settings.lambda),
        settings.threshold(&args.overrides),
        args.target_tail,
    )?;
    settings.sink.emit_json("calibration.json", &calibration)
}
