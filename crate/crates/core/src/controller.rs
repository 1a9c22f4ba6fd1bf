//! Online reactive setpoint control: a dual-subgradient step on the relaxed
//! loss followed by a closed-form soft-threshold projection, plus the
//! per-interval optimizing baselines.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::conic::{ConicProblem, ConicSolver, SocConstraint, SolveStatus};
use crate::error::{check_len, Error, Result};
use crate::network::{PriceSchedule, RadialNetwork};
use crate::relaxation::{
    check_status, exactness_certificate, primal_problem, solve_dual_explicit, solve_primal, AffineMaps,
    DEFAULT_TOL_CONE, DEFAULT_TOL_MU,
};

/// Entrywise minimizer of `(q - y)^2 / 2 + eta_c |q|` over `[q_lo, q_hi]`.
///
/// Requires `q_lo <= 0 <= q_hi` and `eta_c >= 0`. The dead band
/// `[-eta_c, eta_c]` is closed.
pub fn threshold_update(y: &[f64], eta_c: &[f64], q_lo: &[f64], q_hi: &[f64]) -> Result<Vec<f64>> {
    let n = y.len();
    check_len("step sizes", n, eta_c.len())?;
    check_len("lower bounds", n, q_lo.len())?;
    check_len("upper bounds", n, q_hi.len())?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (yi, ec, lo, hi) = (y[i], eta_c[i], q_lo[i], q_hi[i]);
        if !(lo <= hi) {
            return Err(Error::InvalidArgument(format!("entry {i}: lower bound {lo} above upper bound {hi}")));
        }
        if !(lo <= 0.0 && hi >= 0.0) {
            return Err(Error::InvalidArgument(format!("entry {i}: box [{lo}, {hi}] must contain 0")));
        }
        if !(ec >= 0.0) || !ec.is_finite() {
            return Err(Error::InvalidArgument(format!("entry {i}: negative or non-finite eta*c {ec}")));
        }
        if !yi.is_finite() {
            return Err(Error::InvalidArgument(format!("entry {i}: non-finite input {yi}")));
        }
        let q = if yi > hi + ec {
            hi
        } else if yi > ec {
            yi - ec
        } else if yi >= -ec {
            0.0
        } else if yi >= lo - ec {
            yi + ec
        } else {
            lo
        };
        out.push(q);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScheduleKind {
    /// `D / (L sqrt(T))` for a known horizon `T`.
    ConstantHorizon { horizon: usize },
    /// `D / (L sqrt(t))`.
    Decaying,
    /// `beta D / (L sqrt(t))`.
    ScaledDecaying { beta: f64 },
    /// A constant step chosen by the caller.
    Fixed { eta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizeSchedule {
    pub kind: ScheduleKind,
    /// Diameter bound of the feasible box.
    pub d: f64,
    /// Subgradient norm bound.
    pub l: f64,
}

impl StepSizeSchedule {
    pub fn new(kind: ScheduleKind, d: f64, l: f64) -> Result<Self> {
        let s = StepSizeSchedule { kind, d, l };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.d > 0.0 && self.d.is_finite()) {
            return bad(format!("diameter bound must be positive, got {}", self.d));
        }
        if !(self.l > 0.0 && self.l.is_finite()) {
            return bad(format!("subgradient bound must be positive, got {}", self.l));
        }
        match self.kind {
            ScheduleKind::ConstantHorizon { horizon: 0 } => bad("horizon must be at least 1".into()),
            ScheduleKind::ScaledDecaying { beta } if !(beta > 0.0 && beta.is_finite()) => {
                bad(format!("beta must be positive, got {beta}"))
            }
            ScheduleKind::Fixed { eta } if !(eta > 0.0 && eta.is_finite()) => {
                bad(format!("fixed step must be positive, got {eta}"))
            }
            _ => Ok(()),
        }
    }

    pub fn eta_at(&self, t: usize) -> Result<f64> {
        if t == 0 {
            return Err(Error::InvalidArgument("step sizes are defined for t >= 1".into()));
        }
        self.validate()?;
        let base = self.d / self.l;
        Ok(match self.kind {
            ScheduleKind::ConstantHorizon { horizon } => base / (horizon as f64).sqrt(),
            ScheduleKind::Decaying => base / (t as f64).sqrt(),
            ScheduleKind::ScaledDecaying { beta } => beta * base / (t as f64).sqrt(),
            ScheduleKind::Fixed { eta } => eta,
        })
    }
}

/// `sqrt(2 sum q_max^2)` over controllable buses, or 1 when there are none.
pub fn default_diameter(network: &RadialNetwork) -> f64 {
    let s: f64 = network.q_hi().iter().map(|q| q * q).sum();
    if s > 0.0 {
        (2.0 * s).sqrt()
    } else {
        1.0
    }
}

pub fn eta_at(schedule: &StepSizeSchedule, t: usize) -> Result<f64> {
    schedule.eta_at(t)
}

/// Where the equality multipliers come from.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualMode {
    /// Read off the primal interior-point solve.
    #[default]
    Extracted,
    /// Solve the dual program separately.
    Explicit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StepFlag {
    Infeasible,
    SolverFailure,
}

/// What one controller interval did.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub t: usize,
    pub eta: f64,
    /// Relaxed loss at the observed injections and previous setpoint.
    pub f_value: Option<f64>,
    pub lambda: Vec<f64>,
    pub exact: Option<bool>,
    pub flag: Option<StepFlag>,
    pub dual_solves: usize,
    pub threshold_updates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllerState {
    pub q_hat: Vec<f64>,
    pub q_bar_sum: Vec<f64>,
    pub t: usize,
    pub schedule: StepSizeSchedule,
    /// When set, `schedule.l` tracks the running max of observed `||lambda||`.
    pub adaptive_l: bool,
    pub dual_mode: DualMode,
    pub flags: usize,
}

impl ControllerState {
    /// Starts at `q_hat = 0` with a fixed schedule.
    pub fn new(network: &RadialNetwork, schedule: StepSizeSchedule) -> Result<Self> {
        schedule.validate()?;
        let n = network.n();
        Ok(ControllerState {
            q_hat: vec![0.0; n],
            q_bar_sum: vec![0.0; n],
            t: 0,
            schedule,
            adaptive_l: false,
            dual_mode: DualMode::Extracted,
            flags: 0,
        })
    }

    /// Starts at `q_hat = 0` with `L` learned online. `D` defaults to the
    /// box bound.
    pub fn with_adaptive_bound(network: &RadialNetwork, kind: ScheduleKind, d: Option<f64>) -> Result<Self> {
        let d = d.unwrap_or_else(|| default_diameter(network));
        let schedule = StepSizeSchedule::new(kind, d, 1.0)?;
        let mut s = Self::new(network, schedule)?;
        s.adaptive_l = true;
        s.schedule.l = 0.0;
        Ok(s)
    }

    /// Running average of emitted setpoints.
    pub fn q_bar(&self) -> Vec<f64> {
        let t = self.t.max(1) as f64;
        self.q_bar_sum.iter().map(|s| s / t).collect()
    }

    fn effective_schedule(&self) -> StepSizeSchedule {
        let mut s = self.schedule;
        if !(s.l > 0.0) {
            s.l = 1.0;
        }
        s
    }

    /// Advances one interval using observed injections; returns the new
    /// setpoint. On infeasibility or solver failure the previous setpoint is
    /// held and flagged.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        network: &RadialNetwork,
        maps: &AffineMaps,
        prices: &PriceSchedule,
        observed_p: &[f64],
        observed_qc: &[f64],
        solver: &dyn ConicSolver,
    ) -> Result<StepDiagnostics> {
        let n = network.n();
        check_len("observed active injections", n, observed_p.len())?;
        check_len("observed reactive demand", n, observed_qc.len())?;
        check_len("prices", n, prices.c.len())?;
        let t = self.t + 1;
        let q: Vec<f64> = self.q_hat.iter().zip(observed_qc).map(|(g, c)| g - c).collect();

        let mut diag = StepDiagnostics {
            t,
            eta: 0.0,
            f_value: None,
            lambda: Vec::new(),
            exact: None,
            flag: None,
            dual_solves: 1,
            threshold_updates: 0,
        };
        let solved = solve_primal(maps, network, observed_p, &q, solver).and_then(|sol| match self.dual_mode {
            DualMode::Extracted => Ok(sol),
            DualMode::Explicit => {
                let dual = solve_dual_explicit(maps, network, observed_p, &q, solver)?;
                Ok(crate::relaxation::PrimalSolution { dual, ..sol })
            }
        });
        let sol = match solved {
            Ok(sol) => sol,
            Err(e) => {
                let flag = match e {
                    Error::Infeasible => StepFlag::Infeasible,
                    Error::Solver(_) => StepFlag::SolverFailure,
                    other => return Err(other),
                };
                warn!("interval {t}: {flag:?}, holding previous setpoint");
                self.flags += 1;
                diag.flag = Some(flag);
                diag.eta = self.effective_schedule().eta_at(t)?;
                self.finish(t);
                return Ok(diag);
            }
        };
        let cert = exactness_certificate(maps, &sol.z, observed_p, &sol.dual, DEFAULT_TOL_CONE, DEFAULT_TOL_MU)?;
        let lambda = sol.dual.lambda.clone();
        if self.adaptive_l {
            let norm = lambda.iter().map(|v| v * v).sum::<f64>().sqrt();
            self.schedule.l = self.schedule.l.max(norm);
        }
        let eta = self.effective_schedule().eta_at(t)?;
        let y: Vec<f64> = self.q_hat.iter().zip(&lambda).map(|(q, l)| q + eta * l).collect();
        let eta_c: Vec<f64> = prices.c.iter().map(|c| eta * c).collect();
        self.q_hat = threshold_update(&y, &eta_c, &network.q_lo(), &network.q_hi())?;
        diag.eta = eta;
        diag.f_value = Some(sol.value);
        diag.lambda = lambda;
        diag.exact = Some(cert.exact);
        diag.threshold_updates = 1;
        self.finish(t);
        Ok(diag)
    }

    fn finish(&mut self, t: usize) {
        self.t = t;
        for (s, q) in self.q_bar_sum.iter_mut().zip(&self.q_hat) {
            *s += q;
        }
    }
}

/// Functional form of [`ControllerState::step`].
pub fn stochastic_step(
    state: &ControllerState,
    network: &RadialNetwork,
    maps: &AffineMaps,
    prices: &PriceSchedule,
    observed_p: &[f64],
    observed_qc: &[f64],
    solver: &dyn ConicSolver,
) -> Result<(ControllerState, Vec<f64>, StepDiagnostics)> {
    let mut next = state.clone();
    let diag = next.step(network, maps, prices, observed_p, observed_qc, solver)?;
    let setpoint = next.q_hat.clone();
    Ok((next, setpoint, diag))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimalSetpoint {
    pub setpoint: Vec<f64>,
    /// Relaxed loss plus normalized reactive support cost.
    pub objective: f64,
    pub loss: f64,
}

/// Minimizes relaxed loss plus `sum c_n |q_n|` over the capability box with
/// the setpoint as a decision variable. Priced buses get an epigraph
/// variable `t_n >= |q_n|`; unpriced ones do not, which keeps the optimal
/// face bounded.
pub fn deterministic_step(
    network: &RadialNetwork,
    maps: &AffineMaps,
    prices: &PriceSchedule,
    observed_p: &[f64],
    observed_qc: &[f64],
    solver: &dyn ConicSolver,
) -> Result<OptimalSetpoint> {
    let n = network.n();
    check_len("observed reactive demand", n, observed_qc.len())?;
    check_len("prices", n, prices.c.len())?;
    let neg_qc: Vec<f64> = observed_qc.iter().map(|v| -v).collect();
    let base = primal_problem(maps, network, observed_p, &neg_qc)?;
    let ctrl = network.controllable();
    let priced: Vec<usize> = (0..ctrl.len()).filter(|&j| prices.c[ctrl[j] - 1] > 0.0).collect();
    let (m, k, kp) = (base.num_vars(), ctrl.len(), priced.len());
    let cols = m + k + kp;
    let q_lo = network.q_lo();
    let q_hi = network.q_hi();

    let mut cost = base.cost.clone().resize_vertically(cols, 0.0);
    let mut eq = base.eq_matrix.clone().resize_horizontally(cols, 0.0);
    for (j, &bus) in ctrl.iter().enumerate() {
        eq[(bus - 1, m + j)] = -1.0;
    }
    let nv = base.num_box();
    let rows = nv + k + 2 * kp;
    let mut boxm = DMatrix::zeros(rows, cols);
    boxm.view_mut((0, 0), (nv, m)).copy_from(&base.box_matrix);
    let off = base.box_offset.clone().resize_vertically(rows, 0.0);
    let mut lo = base.box_lo.clone().resize_vertically(rows, 0.0);
    let mut hi = base.box_hi.clone().resize_vertically(rows, f64::INFINITY);
    for (j, &bus) in ctrl.iter().enumerate() {
        boxm[(nv + j, m + j)] = 1.0;
        lo[nv + j] = q_lo[bus - 1];
        hi[nv + j] = q_hi[bus - 1];
    }
    for (i, &j) in priced.iter().enumerate() {
        cost[m + k + i] = prices.c[ctrl[j] - 1];
        let (r1, r2) = (nv + k + 2 * i, nv + k + 2 * i + 1);
        boxm[(r1, m + k + i)] = 1.0;
        boxm[(r1, m + j)] = -1.0;
        boxm[(r2, m + k + i)] = 1.0;
        boxm[(r2, m + j)] = 1.0;
    }
    let mut prob = ConicProblem::new(cost)
        .with_equalities(eq, base.eq_rhs.clone())
        .with_box(boxm, off, lo, hi);
    for cone in &base.cones {
        prob = prob.with_cone(SocConstraint {
            f_mat: cone.f_mat.clone().resize_horizontally(cols, 0.0),
            f_vec: cone.f_vec.clone(),
            h: cone.h.clone().resize_vertically(cols, 0.0),
            s: cone.s,
        });
    }
    let sol = solver.solve(&prob)?;
    check_status(&sol)?;
    let mut setpoint = vec![0.0; n];
    for (j, &bus) in ctrl.iter().enumerate() {
        setpoint[bus - 1] = sol.z[m + j].clamp(q_lo[bus - 1], q_hi[bus - 1]);
    }
    let z = DVector::from_iterator(m, sol.z.iter().take(m).copied());
    Ok(OptimalSetpoint {
        setpoint,
        objective: sol.primal_value,
        loss: maps.r_z.dot(&z),
    })
}

/// The benchmark that optimizes against the true, undelayed state. Same
/// computation as [`deterministic_step`]; the caller feeds it true data.
pub fn ideal_step(
    network: &RadialNetwork,
    maps: &AffineMaps,
    prices: &PriceSchedule,
    true_p: &[f64],
    true_qc: &[f64],
    solver: &dyn ConicSolver,
) -> Result<OptimalSetpoint> {
    deterministic_step(network, maps, prices, true_p, true_qc, solver)
}

/// True when a solver error should be held and flagged rather than aborting.
pub fn is_recoverable(err: &Error) -> bool {
    matches!(err, Error::Infeasible | Error::Solver(_))
}

impl From<SolveStatus> for StepFlag {
    fn from(status: SolveStatus) -> Self {
        match status {
            SolveStatus::PrimalInfeasible => StepFlag::Infeasible,
            _ => StepFlag::SolverFailure,
        }
    }
}
