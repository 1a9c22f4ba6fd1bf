//! Injection scenarios, observation delay, the per-interval controller loop
//! and true-cost accounting.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::branchflow::{power_loss, sweep_solve, DEFAULT_SWEEP_MAX_ITER, DEFAULT_SWEEP_TOL};
use crate::conic::ConicSolver;
use crate::controller::{
    default_diameter, deterministic_step, ideal_step, ControllerState, DualMode, ScheduleKind, StepDiagnostics,
    StepSizeSchedule,
};
use crate::error::{check_len, Error, Result};
use crate::network::{clamp_to_region, PriceSchedule, RadialNetwork};
use crate::relaxation::{build_maps, AffineMaps};

/// Stationary Gaussian perturbation of nominal injections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub nominal_p: Vec<f64>,
    pub nominal_qc: Vec<f64>,
    /// Relative standard deviation: entry std is `noise_sigma * |nominal|`.
    pub noise_sigma: f64,
    pub horizon: usize,
    pub interval_seconds: f64,
    pub delay_intervals: usize,
    pub seed: u64,
}

impl Scenario {
    /// Nominal injections taken from the feeder description.
    pub fn from_network(
        network: &RadialNetwork,
        noise_sigma: f64,
        horizon: usize,
        delay_intervals: usize,
        seed: u64,
    ) -> Result<Self> {
        let (nominal_p, nominal_qc) = network.nominal_injections();
        let s = Scenario {
            nominal_p,
            nominal_qc,
            noise_sigma,
            horizon,
            interval_seconds: 30.0,
            delay_intervals,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nominal_p.len() != self.nominal_qc.len() {
            return Err(Error::Dimension {
                what: "nominal reactive demand",
                expected: self.nominal_p.len(),
                got: self.nominal_qc.len(),
            });
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("noise sigma must be nonnegative, got {}", self.noise_sigma)));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidArgument("horizon must be at least 1".into()));
        }
        if !(self.interval_seconds > 0.0) {
            return Err(Error::InvalidArgument("interval length must be positive".into()));
        }
        Ok(())
    }

    fn draw(&self, t: usize) -> (Vec<f64>, Vec<f64>) {
        if self.noise_sigma == 0.0 {
            return (self.nominal_p.clone(), self.nominal_qc.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(t as u64);
        let mut perturb = |v: &f64| {
            let e: f64 = StandardNormal.sample(&mut rng);
            v + self.noise_sigma * v.abs() * e
        };
        let p = self.nominal_p.iter().map(&mut perturb).collect();
        let qc = self.nominal_qc.iter().map(&mut perturb).collect();
        (p, qc)
    }
}

/// True and observed injections for one interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Injections {
    pub true_p: Vec<f64>,
    pub true_qc: Vec<f64>,
    pub observed_p: Vec<f64>,
    pub observed_qc: Vec<f64>,
}

/// Draws interval `t` (0-based). Observations lag by the scenario delay and
/// fall back to nominal values before the first delayed sample exists.
pub fn gen_gaussian(scenario: &Scenario, t: usize) -> Result<Injections> {
    if t >= scenario.horizon {
        return Err(Error::InvalidArgument(format!(
            "interval {t} outside horizon {}",
            scenario.horizon
        )));
    }
    let (true_p, true_qc) = scenario.draw(t);
    let d = scenario.delay_intervals;
    let (observed_p, observed_qc) = if d == 0 {
        (true_p.clone(), true_qc.clone())
    } else if t < d {
        (scenario.nominal_p.clone(), scenario.nominal_qc.clone())
    } else {
        scenario.draw(t - d)
    };
    Ok(Injections {
        true_p,
        true_qc,
        observed_p,
        observed_qc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Pg,
    Pc,
    Qc,
}

#[derive(Debug, Deserialize)]
struct TraceRow {
    timestamp: String,
    bus: usize,
    kind: TraceKind,
    value_pu: f64,
}

/// Per-bus time series at a fixed cadence.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceData {
    pub cadence_seconds: f64,
    pub len: usize,
    pub series: BTreeMap<(usize, TraceKind), Vec<f64>>,
    /// Per-bus factor applied to generation by [`TraceData::normalize_generation`].
    pub pg_scale: BTreeMap<usize, f64>,
}

fn parse_timestamp(s: &str) -> Result<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v as f64);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Ok(dt.timestamp_millis() as f64 / 1000.0);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc().timestamp_millis() as f64 / 1000.0);
        }
    }
    Err(Error::Trace(format!("unparseable timestamp {s:?}")))
}

impl TraceData {
    pub fn load(path: &Path, n: usize) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_reader(file, n)
    }

    /// Parses `timestamp,bus,kind,value_pu` rows for a feeder with `n`
    /// non-root buses.
    pub fn from_reader<R: Read>(reader: R, n: usize) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["timestamp", "bus", "kind", "value_pu"] {
            return Err(Error::Trace(format!(
                "expected header timestamp,bus,kind,value_pu, got {}",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut raw: BTreeMap<(usize, TraceKind), BTreeMap<i64, f64>> = BTreeMap::new();
        let mut stamps = Vec::new();
        for (line, row) in rdr.deserialize::<TraceRow>().enumerate() {
            let row = row?;
            if row.bus == 0 || row.bus > n {
                return Err(Error::Trace(format!("row {}: bus {} outside 1..={n}", line + 2, row.bus)));
            }
            if !row.value_pu.is_finite() {
                return Err(Error::Trace(format!("row {}: non-finite value", line + 2)));
            }
            let ts = parse_timestamp(&row.timestamp)?;
            let key = (ts * 1000.0).round() as i64;
            stamps.push(key);
            if raw.entry((row.bus, row.kind)).or_default().insert(key, row.value_pu).is_some() {
                return Err(Error::Trace(format!(
                    "row {}: duplicate sample for bus {} {:?}",
                    line + 2,
                    row.bus,
                    row.kind
                )));
            }
        }
        stamps.sort_unstable();
        stamps.dedup();
        if stamps.is_empty() {
            return Err(Error::Trace("trace has no samples".into()));
        }
        let cadence_ms = if stamps.len() > 1 { stamps[1] - stamps[0] } else { 1000 };
        if cadence_ms <= 0 || stamps.windows(2).any(|w| w[1] - w[0] != cadence_ms) {
            return Err(Error::Trace("timestamps are not uniformly spaced".into()));
        }
        let mut series = BTreeMap::new();
        for (key, samples) in raw {
            if samples.len() != stamps.len() {
                return Err(Error::Trace(format!(
                    "bus {} {:?} has {} samples, expected {}",
                    key.0,
                    key.1,
                    samples.len(),
                    stamps.len()
                )));
            }
            series.insert(key, samples.into_values().collect());
        }
        Ok(TraceData {
            cadence_seconds: cadence_ms as f64 / 1000.0,
            len: stamps.len(),
            series,
            pg_scale: BTreeMap::new(),
        })
    }

    /// Zero-order hold onto a new cadence over the same time span.
    pub fn resample(&self, interval_seconds: f64) -> Result<TraceData> {
        if !(interval_seconds > 0.0) {
            return Err(Error::InvalidArgument("interval length must be positive".into()));
        }
        let span = self.len as f64 * self.cadence_seconds;
        let len = ((span / interval_seconds) + 1e-9).floor() as usize;
        let series = self
            .series
            .iter()
            .map(|(k, v)| {
                let out = (0..len)
                    .map(|i| {
                        let j = ((i as f64 * interval_seconds / self.cadence_seconds) + 1e-9).floor() as usize;
                        v[j.min(self.len - 1)]
                    })
                    .collect();
                (*k, out)
            })
            .collect();
        Ok(TraceData {
            cadence_seconds: interval_seconds,
            len,
            series,
            pg_scale: self.pg_scale.clone(),
        })
    }

    /// Rescales each generation series so its peak equals the bus's rated
    /// generation in the feeder description.
    pub fn normalize_generation(&mut self, network: &RadialNetwork) {
        for ((bus, kind), v) in self.series.iter_mut() {
            if *kind != TraceKind::Pg {
                continue;
            }
            let peak = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            let cap = network.bus(*bus).p_g;
            if peak > 0.0 {
                let s = cap / peak;
                v.iter_mut().for_each(|x| *x *= s);
                self.pg_scale.insert(*bus, s);
            }
        }
    }

    /// Net active injection and reactive demand at sample `t`; buses without
    /// a series keep their feeder values.
    pub fn injections_at(&self, network: &RadialNetwork, t: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        if t >= self.len {
            return Err(Error::Trace(format!("sample {t} past end of trace ({})", self.len)));
        }
        let n = network.n();
        let mut p = Vec::with_capacity(n);
        let mut qc = Vec::with_capacity(n);
        for bus in 1..=n {
            let b = network.bus(bus);
            let get = |k: TraceKind, default: f64| self.series.get(&(bus, k)).map_or(default, |v| v[t]);
            p.push(get(TraceKind::Pg, b.p_g) - get(TraceKind::Pc, b.p_c));
            qc.push(get(TraceKind::Qc, b.q_c));
        }
        Ok((p, qc))
    }
}

/// Where each interval's injections come from.
#[derive(Debug, Clone, PartialEq)]
pub enum InjectionSource {
    Gaussian(Scenario),
    Trace {
        data: TraceData,
        horizon: usize,
        delay_intervals: usize,
    },
}

impl InjectionSource {
    pub fn horizon(&self) -> usize {
        match self {
            InjectionSource::Gaussian(s) => s.horizon,
            InjectionSource::Trace { horizon, .. } => *horizon,
        }
    }

    pub fn validate(&self, network: &RadialNetwork) -> Result<()> {
        match self {
            InjectionSource::Gaussian(s) => {
                s.validate()?;
                check_len("scenario injections", network.n(), s.nominal_p.len())
            }
            InjectionSource::Trace { data, horizon, .. } => {
                if *horizon == 0 {
                    return Err(Error::InvalidArgument("horizon must be at least 1".into()));
                }
                if data.len < *horizon {
                    return Err(Error::Trace(format!(
                        "trace has {} intervals, horizon needs {horizon}",
                        data.len
                    )));
                }
                Ok(())
            }
        }
    }

    /// Before the first delayed trace sample exists, observations repeat
    /// sample 0.
    pub fn injections(&self, network: &RadialNetwork, t: usize) -> Result<Injections> {
        match self {
            InjectionSource::Gaussian(s) => gen_gaussian(s, t),
            InjectionSource::Trace {
                data,
                delay_intervals,
                ..
            } => {
                let (true_p, true_qc) = data.injections_at(network, t)?;
                let (observed_p, observed_qc) = data.injections_at(network, t.saturating_sub(*delay_intervals))?;
                Ok(Injections {
                    true_p,
                    true_qc,
                    observed_p,
                    observed_qc,
                })
            }
        }
    }

    fn with_seed(&self, seed: u64) -> Self {
        match self {
            InjectionSource::Gaussian(s) => InjectionSource::Gaussian(Scenario { seed, ..s.clone() }),
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Stochastic,
    Deterministic,
    Ideal,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [
        ControllerKind::Stochastic,
        ControllerKind::Deterministic,
        ControllerKind::Ideal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ControllerKind::Stochastic => "stochastic",
            ControllerKind::Deterministic => "deterministic",
            ControllerKind::Ideal => "ideal",
        }
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "stochastic" => Ok(ControllerKind::Stochastic),
            "deterministic" => Ok(ControllerKind::Deterministic),
            "ideal" => Ok(ControllerKind::Ideal),
            other => Err(Error::Config(format!("unknown controller {other:?}"))),
        }
    }
}

/// Step-size settings for the stochastic controller. Missing `d` defaults to
/// the box diameter bound, missing `l` to a running max of observed
/// multiplier norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticConfig {
    #[serde(flatten)]
    pub schedule: ScheduleKind,
    #[serde(default)]
    pub d: Option<f64>,
    #[serde(default)]
    pub l: Option<f64>,
    #[serde(default)]
    pub dual_mode: DualMode,
}

impl Default for StochasticConfig {
    fn default() -> Self {
        StochasticConfig {
            schedule: ScheduleKind::Decaying,
            d: None,
            l: None,
            dual_mode: DualMode::Extracted,
        }
    }
}

impl StochasticConfig {
    pub fn initial_state(&self, network: &RadialNetwork) -> Result<ControllerState> {
        let d = self.d.unwrap_or_else(|| default_diameter(network));
        let mut state = match self.l {
            Some(l) => ControllerState::new(network, StepSizeSchedule::new(self.schedule, d, l)?)?,
            None => ControllerState::with_adaptive_bound(network, self.schedule, Some(d))?,
        };
        state.dual_mode = self.dual_mode;
        Ok(state)
    }
}

/// Physical outcome of applying a setpoint to the true injections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrueCost {
    /// Currency per hour.
    pub cost: f64,
    pub loss_pu: f64,
    pub reactive_cost: f64,
    pub v_min: f64,
    pub v_max: f64,
}

/// Loss from the power flow at the true injections with the clamped
/// setpoint, priced by `c0_tilde`, plus `sum c_tilde_n |q_n|`.
pub fn true_cost(
    network: &RadialNetwork,
    prices: &PriceSchedule,
    true_p: &[f64],
    true_qc: &[f64],
    setpoint: &[f64],
) -> Result<TrueCost> {
    let n = network.n();
    check_len("true active injections", n, true_p.len())?;
    check_len("true reactive demand", n, true_qc.len())?;
    check_len("prices", n, prices.c_tilde.len())?;
    let q_g = clamp_to_region(setpoint, network)?;
    let q: Vec<f64> = q_g.iter().zip(true_qc).map(|(g, c)| g - c).collect();
    let point = sweep_solve(network, true_p, &q, DEFAULT_SWEEP_TOL, DEFAULT_SWEEP_MAX_ITER)?;
    let loss_pu = power_loss(network, &point);
    let base = network.base_kva();
    let reactive_cost: f64 = prices
        .c_tilde
        .iter()
        .zip(&q_g)
        .map(|(c, q)| c * q.abs() * base)
        .sum();
    let (v_min, v_max) = point.v_extremes();
    Ok(TrueCost {
        cost: prices.c0_tilde * loss_pu * base + reactive_cost,
        loss_pu,
        reactive_cost,
        v_min,
        v_max,
    })
}

/// One controller's outcome in one interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllerRecord {
    pub setpoint: Vec<f64>,
    /// `None` when the power flow at the true injections failed.
    pub cost: Option<TrueCost>,
    /// Exactness of the relaxation solved by the controller.
    pub exact: Option<bool>,
    /// The controller held its previous setpoint this interval.
    pub flagged: bool,
    #[serde(skip)]
    pub diagnostics: Option<StepDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRecord {
    /// 1-based interval index.
    pub t: usize,
    pub stochastic: Option<ControllerRecord>,
    pub deterministic: Option<ControllerRecord>,
    pub ideal: Option<ControllerRecord>,
}

impl CostRecord {
    pub fn get(&self, kind: ControllerKind) -> Option<&ControllerRecord> {
        match kind {
            ControllerKind::Stochastic => self.stochastic.as_ref(),
            ControllerKind::Deterministic => self.deterministic.as_ref(),
            ControllerKind::Ideal => self.ideal.as_ref(),
        }
    }

    pub fn cost(&self, kind: ControllerKind) -> Option<f64> {
        self.get(kind).and_then(|r| r.cost.map(|c| c.cost))
    }

    fn slot(&mut self, kind: ControllerKind) -> &mut Option<ControllerRecord> {
        match kind {
            ControllerKind::Stochastic => &mut self.stochastic,
            ControllerKind::Deterministic => &mut self.deterministic,
            ControllerKind::Ideal => &mut self.ideal,
        }
    }

    /// Number of controllers that held their setpoint or lost their cost.
    pub fn warnings(&self) -> usize {
        ControllerKind::ALL
            .iter()
            .filter_map(|&k| self.get(k))
            .filter(|r| r.flagged || r.cost.is_none())
            .count()
    }
}

fn evaluate(
    network: &RadialNetwork,
    prices: &PriceSchedule,
    inj: &Injections,
    setpoint: Vec<f64>,
    exact: Option<bool>,
    flagged: bool,
    diagnostics: Option<StepDiagnostics>,
) -> Result<ControllerRecord> {
    let cost = match true_cost(network, prices, &inj.true_p, &inj.true_qc, &setpoint) {
        Ok(c) => Some(c),
        Err(e @ (Error::PowerFlowDiverged { .. } | Error::VoltageCollapse { .. })) => {
            warn!("true cost unavailable: {e}");
            None
        }
        Err(e) => return Err(e),
    };
    Ok(ControllerRecord {
        setpoint,
        cost,
        exact,
        flagged,
        diagnostics,
    })
}

/// Runs the requested controllers side by side over the source's horizon.
/// Every controller starts at a zero setpoint; solver trouble is recorded
/// as a held setpoint, never fatal.
pub fn run_experiment(
    network: &RadialNetwork,
    prices: &PriceSchedule,
    source: &InjectionSource,
    controllers: &[ControllerKind],
    config: &StochasticConfig,
    solver: &dyn ConicSolver,
) -> Result<Vec<CostRecord>> {
    let maps = build_maps(network);
    run_with_maps(network, &maps, prices, source, controllers, config, solver)
}

fn run_with_maps(
    network: &RadialNetwork,
    maps: &AffineMaps,
    prices: &PriceSchedule,
    source: &InjectionSource,
    controllers: &[ControllerKind],
    config: &StochasticConfig,
    solver: &dyn ConicSolver,
) -> Result<Vec<CostRecord>> {
    if controllers.is_empty() {
        return Err(Error::InvalidArgument("no controllers selected".into()));
    }
    source.validate(network)?;
    check_len("prices", network.n(), prices.c.len())?;
    let mut stochastic = config.initial_state(network)?;
    let mut held = BTreeMap::new();
    let mut records = Vec::with_capacity(source.horizon());
    for t in 0..source.horizon() {
        let inj = source.injections(network, t)?;
        let mut rec = CostRecord {
            t: t + 1,
            stochastic: None,
            deterministic: None,
            ideal: None,
        };
        for &kind in controllers {
            let out = match kind {
                ControllerKind::Stochastic => {
                    let diag =
                        stochastic.step(network, maps, prices, &inj.observed_p, &inj.observed_qc, solver)?;
                    let (exact, flagged) = (diag.exact, diag.flag.is_some());
                    evaluate(network, prices, &inj, stochastic.q_hat.clone(), exact, flagged, Some(diag))?
                }
                ControllerKind::Deterministic | ControllerKind::Ideal => {
                    let (p, qc) = if kind == ControllerKind::Ideal {
                        (&inj.true_p, &inj.true_qc)
                    } else {
                        (&inj.observed_p, &inj.observed_qc)
                    };
                    let step = if kind == ControllerKind::Ideal {
                        ideal_step(network, maps, prices, p, qc, solver)
                    } else {
                        deterministic_step(network, maps, prices, p, qc, solver)
                    };
                    let prev = held.entry(kind).or_insert_with(|| vec![0.0; network.n()]);
                    match step {
                        Ok(opt) => {
                            *prev = opt.setpoint.clone();
                            evaluate(network, prices, &inj, opt.setpoint, Some(true), false, None)?
                        }
                        Err(e @ (Error::Infeasible | Error::Solver(_))) => {
                            warn!("interval {}: {} controller: {e}; holding setpoint", t + 1, kind.name());
                            evaluate(network, prices, &inj, prev.clone(), None, true, None)?
                        }
                        Err(e) => return Err(e),
                    }
                }
            };
            *rec.slot(kind) = Some(out);
        }
        records.push(rec);
    }
    Ok(records)
}

/// Realization-averaged cost per interval; `None` when no realization
/// produced a cost for that controller and interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanRecord {
    pub t: usize,
    pub stochastic: Option<f64>,
    pub deterministic: Option<f64>,
    pub ideal: Option<f64>,
    pub loss_stochastic: Option<f64>,
    pub loss_deterministic: Option<f64>,
    pub loss_ideal: Option<f64>,
}

impl MeanRecord {
    pub fn cost(&self, kind: ControllerKind) -> Option<f64> {
        match kind {
            ControllerKind::Stochastic => self.stochastic,
            ControllerKind::Deterministic => self.deterministic,
            ControllerKind::Ideal => self.ideal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloResult {
    pub seeds: Vec<u64>,
    pub runs: Vec<Vec<CostRecord>>,
    pub mean: Vec<MeanRecord>,
}

/// Seed of realization `r`; realization 0 uses the base seed.
pub fn realization_seed(base: u64, r: usize) -> u64 {
    base.wrapping_add((r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

pub fn mean_curve(runs: &[Vec<CostRecord>]) -> Vec<MeanRecord> {
    let horizon = runs.iter().map(|r| r.len()).max().unwrap_or(0);
    (0..horizon)
        .map(|i| {
            let avg = |f: &dyn Fn(&CostRecord) -> Option<f64>| {
                let vals: Vec<f64> = runs.iter().filter_map(|r| r.get(i)).filter_map(f).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            };
            let loss = |k: ControllerKind| {
                move |r: &CostRecord| r.get(k).and_then(|c| c.cost.map(|c| c.loss_pu))
            };
            MeanRecord {
                t: i + 1,
                stochastic: avg(&|r| r.cost(ControllerKind::Stochastic)),
                deterministic: avg(&|r| r.cost(ControllerKind::Deterministic)),
                ideal: avg(&|r| r.cost(ControllerKind::Ideal)),
                loss_stochastic: avg(&loss(ControllerKind::Stochastic)),
                loss_deterministic: avg(&loss(ControllerKind::Deterministic)),
                loss_ideal: avg(&loss(ControllerKind::Ideal)),
            }
        })
        .collect()
}

/// Independent realizations in parallel. Gaussian sources get one derived
/// seed per realization; trace sources are replayed unchanged.
pub fn run_monte_carlo(
    network: &RadialNetwork,
    prices: &PriceSchedule,
    source: &InjectionSource,
    controllers: &[ControllerKind],
    config: &StochasticConfig,
    realizations: usize,
    solver: &dyn ConicSolver,
) -> Result<MonteCarloResult> {
    if realizations == 0 {
        return Err(Error::InvalidArgument("need at least one realization".into()));
    }
    let base = match source {
        InjectionSource::Gaussian(s) => s.seed,
        InjectionSource::Trace { .. } => 0,
    };
    let seeds: Vec<u64> = (0..realizations).map(|r| realization_seed(base, r)).collect();
    let maps = build_maps(network);
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            run_with_maps(
                network,
                &maps,
                prices,
                &source.with_seed(seed),
                controllers,
                config,
                solver,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = mean_curve(&runs);
    Ok(MonteCarloResult { seeds, runs, mean })
}

/// Mean of `curve` over intervals `from..` (1-based `t >= from`).
pub fn steady_state_mean(mean: &[MeanRecord], kind: ControllerKind, from: usize) -> Option<f64> {
    let vals: Vec<f64> = mean
        .iter()
        .filter(|m| m.t >= from)
        .filter_map(|m| m.cost(kind))
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// First interval from which the curve stays within `rel` of `target`.
pub fn convergence_interval(mean: &[MeanRecord], kind: ControllerKind, target: f64, rel: f64) -> Option<usize> {
    let mut first = None;
    for m in mean {
        match m.cost(kind) {
            Some(c) if (c - target).abs() <= rel * target.abs() => {
                first.get_or_insert(m.t);
            }
            _ => first = None,
        }
    }
    first
}
