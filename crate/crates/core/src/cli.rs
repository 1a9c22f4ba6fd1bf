//! Command-line front end: experiment manifests, report files and the
//! `validate`/`certify` one-shot checks.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::branchflow::{residual_check, sweep_solve, DEFAULT_SWEEP_MAX_ITER, DEFAULT_SWEEP_TOL};
use crate::conic::{InteriorPoint, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::controller::ScheduleKind;
use crate::error::{Error, Result};
use crate::network::{PriceSchedule, RadialNetwork};
use crate::relaxation::{
    build_maps, exactness_certificate, solve_primal, strict_feasibility_probe, ExactnessReport, ProbeMode,
    ProbeReport, DEFAULT_TOL_CONE, DEFAULT_TOL_MU,
};
use crate::sim::{
    convergence_interval, run_monte_carlo, steady_state_mean, ControllerKind, CostRecord, InjectionSource,
    Scenario, StochasticConfig, TraceData,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

/// Column order of `costs.csv`.
pub const COSTS_HEADER: [&str; 17] = [
    "t",
    "cost_stochastic",
    "cost_deterministic",
    "cost_ideal",
    "loss_pu_stochastic",
    "loss_pu_deterministic",
    "loss_pu_ideal",
    "exact_stochastic",
    "exact_deterministic",
    "exact_ideal",
    "v_min_stochastic",
    "v_min_deterministic",
    "v_min_ideal",
    "v_max_stochastic",
    "v_max_deterministic",
    "v_max_ideal",
    "warnings",
];

#[derive(Debug, Parser)]
#[command(name = "voltvar", version, about = "Reactive power control experiments on radial feeders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an experiment described by a JSON manifest.
    Run(RunArgs),
    /// Check a feeder description and report its nominal operating point.
    Validate {
        #[arg(long)]
        feeder: PathBuf,
    },
    /// Solve the relaxation once and report exactness and strict feasibility.
    Certify {
        #[arg(long)]
        feeder: PathBuf,
        /// File of net active injections, one value per non-root bus.
        #[arg(long)]
        p: PathBuf,
        /// File of net reactive injections, one value per non-root bus.
        #[arg(long)]
        q: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Use a fixed step size instead of the configured schedule.
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub realizations: Option<usize>,
    /// Comma-separated subset of stochastic,deterministic,ideal.
    #[arg(long, value_delimiter = ',')]
    pub controllers: Option<Vec<ControllerKind>>,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum SourceConfig {
    Gaussian {
        noise_sigma: f64,
        horizon: usize,
        #[serde(default)]
        delay_intervals: usize,
        #[serde(default = "default_interval")]
        interval_seconds: f64,
    },
    Trace {
        path: PathBuf,
        /// Defaults to the full resampled trace.
        #[serde(default)]
        horizon: Option<usize>,
        #[serde(default)]
        delay_intervals: usize,
        #[serde(default = "default_interval")]
        interval_seconds: f64,
        #[serde(default)]
        normalize_generation: bool,
    },
}

fn default_interval() -> f64 {
    30.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReactivePrice {
    Uniform(f64),
    PerBus(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceConfig {
    /// Loss price, currency per kWh.
    pub c0_tilde: f64,
    /// Reactive support price, currency per kVar·h.
    pub c_tilde: ReactivePrice,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

fn default_realizations() -> usize {
    1
}

fn default_controllers() -> Vec<ControllerKind> {
    ControllerKind::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub feeder: PathBuf,
    pub source: SourceConfig,
    #[serde(default = "default_controllers")]
    pub controllers: Vec<ControllerKind>,
    #[serde(default)]
    pub schedule: StochasticConfig,
    pub prices: PriceConfig,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// First interval counted as steady state; defaults to the second half.
    #[serde(default)]
    pub steady_state_from: Option<usize>,
    #[serde(default)]
    pub per_realization: bool,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl RunConfig {
    /// Reads a manifest; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.feeder);
        resolve(&mut cfg.output);
        if let SourceConfig::Trace { path, .. } = &mut cfg.source {
            resolve(path);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, args: &RunArgs) {
        if let Some(eta) = args.eta {
            self.schedule.schedule = ScheduleKind::Fixed { eta };
        }
        if let Some(seed) = args.seed {
            self.seed = seed;
        }
        if let Some(r) = args.realizations {
            self.realizations = r;
        }
        if let Some(c) = &args.controllers {
            self.controllers = c.clone();
        }
        if let Some(o) = &args.output {
            self.output = o.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(Error::Config("realizations must be at least 1".into()));
        }
        if self.controllers.is_empty() {
            return Err(Error::Config("select at least one controller".into()));
        }
        let mut seen = self.controllers.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.controllers.len() {
            return Err(Error::Config("controllers listed more than once".into()));
        }
        if !self.feeder.exists() {
            return Err(Error::Config(format!("feeder file {} does not exist", self.feeder.display())));
        }
        if let SourceConfig::Trace { path, .. } = &self.source {
            if !path.exists() {
                return Err(Error::Config(format!("trace file {} does not exist", path.display())));
            }
        }
        Ok(())
    }
}

/// One `costs.csv` row, aggregated over realizations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    pub t: usize,
    pub cost: [Option<f64>; 3],
    pub loss_pu: [Option<f64>; 3],
    pub exact: [Option<bool>; 3],
    pub v_min: [Option<f64>; 3],
    pub v_max: [Option<f64>; 3],
    pub warnings: usize,
}

fn mean(vals: &[f64]) -> Option<f64> {
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Means of costs and losses, all-realizations exactness, and voltage
/// extremes over realizations.
pub fn aggregate(runs: &[Vec<CostRecord>]) -> Vec<CostRow> {
    let horizon = runs.iter().map(|r| r.len()).max().unwrap_or(0);
    (0..horizon)
        .map(|i| {
            let recs: Vec<&CostRecord> = runs.iter().filter_map(|r| r.get(i)).collect();
            let mut row = CostRow {
                t: i + 1,
                cost: [None; 3],
                loss_pu: [None; 3],
                exact: [None; 3],
                v_min: [None; 3],
                v_max: [None; 3],
                warnings: recs.iter().map(|r| r.warnings()).sum(),
            };
            for (j, kind) in ControllerKind::ALL.iter().enumerate() {
                let cr: Vec<_> = recs.iter().filter_map(|r| r.get(*kind)).collect();
                if cr.is_empty() {
                    continue;
                }
                let costs: Vec<_> = cr.iter().filter_map(|c| c.cost).collect();
                row.cost[j] = mean(&costs.iter().map(|c| c.cost).collect::<Vec<_>>());
                row.loss_pu[j] = mean(&costs.iter().map(|c| c.loss_pu).collect::<Vec<_>>());
                row.exact[j] = Some(cr.iter().all(|c| c.exact == Some(true)));
                row.v_min[j] = costs.iter().map(|c| c.v_min).reduce(f64::min);
                row.v_max[j] = costs.iter().map(|c| c.v_max).reduce(f64::max);
            }
            row
        })
        .collect()
}

fn fmt_opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_costs_csv(path: &Path, rows: &[CostRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(COSTS_HEADER)?;
    for r in rows {
        let mut rec = vec![r.t.to_string()];
        rec.extend(r.cost.iter().map(|v| fmt_opt(*v)));
        rec.extend(r.loss_pu.iter().map(|v| fmt_opt(*v)));
        rec.extend(r.exact.iter().map(|v| fmt_opt(*v)));
        rec.extend(r.v_min.iter().map(|v| fmt_opt(*v)));
        rec.extend(r.v_max.iter().map(|v| fmt_opt(*v)));
        rec.push(r.warnings.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub realizations: usize,
    pub horizon: usize,
    pub controllers: Vec<ControllerKind>,
    pub steady_state_from: usize,
    /// Currency per hour.
    pub mean_steady_state_cost: BTreeMap<String, f64>,
    /// Steady-state cost of the first controller minus the second, currency
    /// per hour; positive means the second is cheaper.
    pub savings: BTreeMap<String, f64>,
    /// First interval from which the mean curve stays within 10% of its
    /// steady-state mean.
    pub convergence_interval: BTreeMap<String, Option<usize>>,
    pub warnings: usize,
}

pub fn summarize(config: &RunConfig, rows: &[CostRow], mc: &crate::sim::MonteCarloResult) -> Summary {
    let horizon = rows.len();
    let from = config.steady_state_from.unwrap_or(horizon / 2 + 1).clamp(1, horizon.max(1));
    let mut ss = BTreeMap::new();
    let mut conv = BTreeMap::new();
    for &k in &config.controllers {
        if let Some(m) = steady_state_mean(&mc.mean, k, from) {
            ss.insert(k.name().to_string(), m);
            conv.insert(k.name().to_string(), convergence_interval(&mc.mean, k, m, 0.1));
        }
    }
    let mut savings = BTreeMap::new();
    let pairs = [
        (ControllerKind::Deterministic, ControllerKind::Stochastic),
        (ControllerKind::Stochastic, ControllerKind::Ideal),
        (ControllerKind::Deterministic, ControllerKind::Ideal),
    ];
    for (a, b) in pairs {
        if let (Some(x), Some(y)) = (ss.get(a.name()), ss.get(b.name())) {
            savings.insert(format!("{}_vs_{}", b.name(), a.name()), x - y);
        }
    }
    Summary {
        realizations: config.realizations,
        horizon,
        controllers: config.controllers.clone(),
        steady_state_from: from,
        mean_steady_state_cost: ss,
        savings,
        convergence_interval: conv,
        warnings: rows.iter().map(|r| r.warnings).sum(),
    }
}

fn prices_for(network: &RadialNetwork, cfg: &PriceConfig) -> Result<PriceSchedule> {
    match &cfg.c_tilde {
        ReactivePrice::Uniform(c) => PriceSchedule::uniform(network, cfg.c0_tilde, *c),
        ReactivePrice::PerBus(v) => PriceSchedule::new(network, cfg.c0_tilde, v.clone()),
    }
    .map_err(|e| Error::Config(format!("prices: {e}")))
}

fn source_for(network: &RadialNetwork, cfg: &RunConfig) -> Result<InjectionSource> {
    Ok(match &cfg.source {
        SourceConfig::Gaussian {
            noise_sigma,
            horizon,
            delay_intervals,
            interval_seconds,
        } => {
            let mut s = Scenario::from_network(network, *noise_sigma, *horizon, *delay_intervals, cfg.seed)
                .map_err(|e| Error::Config(e.to_string()))?;
            s.interval_seconds = *interval_seconds;
            s.validate().map_err(|e| Error::Config(e.to_string()))?;
            InjectionSource::Gaussian(s)
        }
        SourceConfig::Trace {
            path,
            horizon,
            delay_intervals,
            interval_seconds,
            normalize_generation,
        } => {
            let mut data = TraceData::load(path, network.n())?.resample(*interval_seconds)?;
            if *normalize_generation {
                data.normalize_generation(network);
            }
            let horizon = horizon.unwrap_or(data.len);
            let src = InjectionSource::Trace {
                data,
                horizon,
                delay_intervals: *delay_intervals,
            };
            src.validate(network)?;
            src
        }
    })
}

/// Runs a validated manifest and writes `costs.csv`, `summary.json` and,
/// when requested, one `costs_rNNN.csv` per realization.
pub fn run(config: &RunConfig) -> Result<Summary> {
    config.validate()?;
    let network = RadialNetwork::load(&config.feeder)?;
    let prices = prices_for(&network, &config.prices)?;
    let source = source_for(&network, config)?;
    let solver = InteriorPoint::new(config.solver.tol, config.solver.max_iter);
    info!(
        "running {} realization(s) of {} intervals",
        config.realizations,
        source.horizon()
    );
    let mc = run_monte_carlo(
        &network,
        &prices,
        &source,
        &config.controllers,
        &config.schedule,
        config.realizations,
        &solver,
    )?;
    fs::create_dir_all(&config.output).map_err(|source| Error::Io {
        path: config.output.clone(),
        source,
    })?;
    let rows = aggregate(&mc.runs);
    write_costs_csv(&config.output.join("costs.csv"), &rows)?;
    if config.per_realization {
        for (r, run) in mc.runs.iter().enumerate() {
            let path = config.output.join(format!("costs_r{r:03}.csv"));
            write_costs_csv(&path, &aggregate(std::slice::from_ref(run)))?;
        }
    }
    let summary = summarize(config, &rows, &mc);
    let path = config.output.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)?).map_err(|source| Error::Io { path, source })?;
    if summary.warnings > 0 {
        warn!("{} controller interval(s) held a setpoint or lost their cost", summary.warnings);
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub buses: usize,
    pub controllable: Vec<usize>,
    pub base_kva: f64,
    pub nominal_loss_pu: f64,
    pub nominal_v_min: f64,
    pub nominal_v_max: f64,
    /// Nominal voltages inside every bus's limits.
    pub nominal_within_limits: bool,
    pub max_equation_residual: f64,
}

pub fn validate_feeder(path: &Path) -> Result<ValidationReport> {
    let network = RadialNetwork::load(path)?;
    let (p, qc) = network.nominal_injections();
    let q: Vec<f64> = qc.iter().map(|v| -v).collect();
    let point = sweep_solve(&network, &p, &q, DEFAULT_SWEEP_TOL, DEFAULT_SWEEP_MAX_ITER)?;
    let res = residual_check(&network, &p, &q, &point)?;
    let (v_min, v_max) = point.v_extremes();
    Ok(ValidationReport {
        buses: network.n() + 1,
        controllable: network.controllable(),
        base_kva: network.base_kva(),
        nominal_loss_pu: crate::branchflow::power_loss(&network, &point),
        nominal_v_min: v_min,
        nominal_v_max: v_max,
        nominal_within_limits: res.voltage_box == 0.0,
        max_equation_residual: res.max_equation(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertifyReport {
    pub loss_pu: f64,
    pub exactness: ExactnessReport,
    pub probe: ProbeReport,
}

/// Reads numbers separated by commas, whitespace or newlines.
pub fn read_vector(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::Config(format!("{}: not a number: {s:?}", path.display())))
        })
        .collect()
}

pub fn certify(feeder: &Path, p_path: &Path, q_path: &Path) -> Result<CertifyReport> {
    let network = RadialNetwork::load(feeder)?;
    let p = read_vector(p_path)?;
    let q = read_vector(q_path)?;
    for (what, v) in [("p", &p), ("q", &q)] {
        if v.len() != network.n() {
            return Err(Error::Config(format!(
                "{what} has {} values, feeder has {} non-root buses",
                v.len(),
                network.n()
            )));
        }
    }
    let maps = build_maps(&network);
    let solver = InteriorPoint::default();
    let sol = solve_primal(&maps, &network, &p, &q, &solver)?;
    let exactness = exactness_certificate(&maps, &sol.z, &p, &sol.dual, DEFAULT_TOL_CONE, DEFAULT_TOL_MU)?;
    let probe = strict_feasibility_probe(&maps, &network, &p, &q, &solver, ProbeMode::MaxMinSlack)?;
    Ok(CertifyReport {
        loss_pu: sol.value,
        exactness,
        probe,
    })
}

/// Exit status for an error: 2 for configuration and input problems, 3 for
/// everything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_)
        | Error::Io { .. }
        | Error::Json(_)
        | Error::Csv(_)
        | Error::Trace(_)
        | Error::Network(_)
        | Error::Dimension { .. }
        | Error::InvalidArgument(_) => EXIT_CONFIG,
        _ => EXIT_INTERNAL,
    }
}

/// Dispatches a parsed command line; returns the process exit status.
pub fn execute(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(args) => RunConfig::load(&args.config).and_then(|mut cfg| {
            cfg.apply(&args);
            let summary = run(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }),
        Command::Validate { feeder } => validate_feeder(&feeder).and_then(|r| {
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(())
        }),
        Command::Certify { feeder, p, q } => certify(&feeder, &p, &q).and_then(|r| {
            println!("{}", serde_json::to_string_pretty(&r)?);
            Ok(())
        }),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
