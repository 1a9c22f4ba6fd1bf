//! Branch flow equations, a backward/forward sweep power-flow solver, and
//! line losses.

use serde::Serialize;

use crate::error::{check_len, Error, Result};
use crate::network::RadialNetwork;

pub const DEFAULT_SWEEP_TOL: f64 = 1e-10;
pub const DEFAULT_SWEEP_MAX_ITER: usize = 500;

/// Grid state in squared magnitudes. Line quantities are indexed by the bus
/// they feed (`entry i` is line/bus `i + 1`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub p0: f64,
    pub q0: f64,
    /// Sending-end active line flows.
    pub p_flow: Vec<f64>,
    /// Sending-end reactive line flows.
    pub q_flow: Vec<f64>,
    /// Squared line currents.
    pub ell: Vec<f64>,
    /// Squared bus voltages.
    pub v: Vec<f64>,
}

impl OperatingPoint {
    /// No-load point: zero flows and currents, every voltage at `v0`.
    pub fn flat(network: &RadialNetwork) -> Self {
        let n = network.n();
        OperatingPoint {
            p0: 0.0,
            q0: 0.0,
            p_flow: vec![0.0; n],
            q_flow: vec![0.0; n],
            ell: vec![0.0; n],
            v: vec![network.v0(); n],
        }
    }

    /// Squared voltage at any bus, including the root.
    pub fn voltage(&self, network: &RadialNetwork, bus: usize) -> f64 {
        if bus == 0 {
            network.v0()
        } else {
            self.v[bus - 1]
        }
    }

    pub fn v_extremes(&self) -> (f64, f64) {
        self.v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
    }
}

/// Largest absolute residual of each family of the branch flow equations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ResidualReport {
    /// Active power balance, including the root.
    pub active: f64,
    /// Reactive power balance, including the root.
    pub reactive: f64,
    /// Voltage drop.
    pub voltage: f64,
    /// Current definition `ell = (P^2 + Q^2) / v_parent`.
    pub current: f64,
    /// Violation of the squared voltage box (0 when inside).
    pub voltage_box: f64,
}

impl ResidualReport {
    /// Largest residual among the four equation families.
    pub fn max_equation(&self) -> f64 {
        self.active.max(self.reactive).max(self.voltage).max(self.current)
    }
}

pub fn residual_check(
    network: &RadialNetwork,
    p: &[f64],
    q: &[f64],
    point: &OperatingPoint,
) -> Result<ResidualReport> {
    let n = network.n();
    check_len("active injections", n, p.len())?;
    check_len("reactive injections", n, q.len())?;
    check_len("operating point", n, point.ell.len())?;
    check_len("operating point", n, point.v.len())?;
    check_len("operating point", n, point.p_flow.len())?;
    check_len("operating point", n, point.q_flow.len())?;

    let mut rep = ResidualReport::default();
    let child_sum = |bus: usize, flows: &[f64]| -> f64 {
        network.children(bus).iter().map(|&k| flows[k - 1]).sum()
    };
    rep.active = (point.p0 - child_sum(0, &point.p_flow)).abs();
    rep.reactive = (point.q0 - child_sum(0, &point.q_flow)).abs();
    for bus in 1..=n {
        let i = bus - 1;
        let line = network.line(bus);
        let (pf, qf, ell) = (point.p_flow[i], point.q_flow[i], point.ell[i]);
        let r1 = p[i] - (child_sum(bus, &point.p_flow) - (pf - line.r * ell));
        let r2 = q[i] - (child_sum(bus, &point.q_flow) - (qf - line.x * ell));
        let parent = network.parent(bus).unwrap();
        let vp = point.voltage(network, parent);
        let z2 = line.r * line.r + line.x * line.x;
        let r3 = point.v[i] - (vp + z2 * ell - 2.0 * (line.r * pf + line.x * qf));
        let r4 = ell - (pf * pf + qf * qf) / vp;
        let b = network.bus(bus);
        let boxv = (b.v_min - point.v[i]).max(point.v[i] - b.v_max).max(0.0);
        rep.active = rep.active.max(r1.abs());
        rep.reactive = rep.reactive.max(r2.abs());
        rep.voltage = rep.voltage.max(r3.abs());
        rep.current = rep.current.max(r4.abs());
        rep.voltage_box = rep.voltage_box.max(boxv);
    }
    Ok(rep)
}

/// Backward/forward sweep: flows are accumulated leaf-to-root from the current
/// `ell`, voltages pushed root-to-leaf, and `ell` refreshed from the current
/// definition until its max-norm change drops to `tol`. Voltage limits are not
/// enforced.
pub fn sweep_solve(
    network: &RadialNetwork,
    p: &[f64],
    q: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<OperatingPoint> {
    let n = network.n();
    check_len("active injections", n, p.len())?;
    check_len("reactive injections", n, q.len())?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    if p.iter().chain(q).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("injections must be finite".into()));
    }

    let mut point = OperatingPoint::flat(network);
    let mut last_change = f64::INFINITY;
    for _ in 0..max_iter {
        propagate(network, p, q, &mut point)?;
        let mut change: f64 = 0.0;
        for bus in 1..=n {
            let i = bus - 1;
            let vp = point.voltage(network, network.parent(bus).unwrap());
            let next = (point.p_flow[i].powi(2) + point.q_flow[i].powi(2)) / vp;
            change = change.max((next - point.ell[i]).abs());
            point.ell[i] = next;
        }
        if !change.is_finite() {
            break;
        }
        last_change = change;
        if change <= tol {
            propagate(network, p, q, &mut point)?;
            return Ok(point);
        }
    }
    Err(Error::PowerFlowDiverged {
        iterations: max_iter,
        last_change,
    })
}

/// Recomputes flows, root injections and voltages from `point.ell`.
fn propagate(
    network: &RadialNetwork,
    p: &[f64],
    q: &[f64],
    point: &mut OperatingPoint,
) -> Result<()> {
    for &bus in network.leaf_to_root() {
        let (mut ps, mut qs) = (0.0, 0.0);
        for &k in network.children(bus) {
            ps += point.p_flow[k - 1];
            qs += point.q_flow[k - 1];
        }
        if bus == 0 {
            point.p0 = ps;
            point.q0 = qs;
        } else {
            let i = bus - 1;
            let line = network.line(bus);
            point.p_flow[i] = ps + line.r * point.ell[i] - p[i];
            point.q_flow[i] = qs + line.x * point.ell[i] - q[i];
        }
    }
    for bus in network.root_to_leaf().skip(1) {
        let i = bus - 1;
        let line = network.line(bus);
        let vp = point.voltage(network, network.parent(bus).unwrap());
        let z2 = line.r * line.r + line.x * line.x;
        let v = vp + z2 * point.ell[i] - 2.0 * (line.r * point.p_flow[i] + line.x * point.q_flow[i]);
        if !(v > 0.0) {
            return Err(Error::VoltageCollapse { bus });
        }
        point.v[i] = v;
    }
    Ok(())
}

/// Total resistive line loss `sum_n r_n ell_n`.
pub fn power_loss(network: &RadialNetwork, point: &OperatingPoint) -> f64 {
    network
        .lines()
        .iter()
        .zip(&point.ell)
        .map(|(line, ell)| line.r * ell)
        .sum()
}
