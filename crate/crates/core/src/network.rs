//! Radial feeder data model.
//!
//! Buses are indexed `0..=N` with bus 0 the substation. Every non-root bus `n`
//! is fed by exactly one line, also indexed by `n`. Per-bus vectors used by the
//! power-flow and optimization code cover the non-root buses only, so entry
//! `i` of such a vector belongs to bus `i + 1`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, NetworkError, Result};

/// Default squared voltage limits: (0.95)^2 and (1.05)^2.
pub const DEFAULT_V_MIN: f64 = 0.9025;
pub const DEFAULT_V_MAX: f64 = 1.1025;
pub const DEFAULT_BASE_KVA: f64 = 1000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Substation,
    Load,
    Dg,
    Shunt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: usize,
    pub parent: Option<usize>,
    pub kind: BusKind,
    /// Active demand (pu).
    pub p_c: f64,
    /// Reactive demand (pu).
    pub q_c: f64,
    /// Active generation (pu).
    pub p_g: f64,
    pub q_g_min: f64,
    pub q_g_max: f64,
    /// Squared voltage limits.
    pub v_min: f64,
    pub v_max: f64,
}

impl Bus {
    pub fn new(id: usize, parent: Option<usize>, kind: BusKind) -> Self {
        Bus {
            id,
            parent,
            kind,
            p_c: 0.0,
            q_c: 0.0,
            p_g: 0.0,
            q_g_min: 0.0,
            q_g_max: 0.0,
            v_min: DEFAULT_V_MIN,
            v_max: DEFAULT_V_MAX,
        }
    }

    pub fn with_demand(mut self, p_c: f64, q_c: f64) -> Self {
        self.p_c = p_c;
        self.q_c = q_c;
        self
    }

    pub fn with_generation(mut self, p_g: f64, q_g_max: f64) -> Self {
        self.p_g = p_g;
        self.q_g_max = q_g_max;
        self.q_g_min = -q_g_max;
        self
    }

    pub fn with_voltage_limits(mut self, v_min: f64, v_max: f64) -> Self {
        self.v_min = v_min;
        self.v_max = v_max;
        self
    }

    pub fn is_controllable(&self) -> bool {
        self.q_g_max > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    /// The bus this line feeds.
    pub child: usize,
    pub r: f64,
    pub x: f64,
}

/// Validated radial feeder. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialNetwork {
    buses: Vec<Bus>,
    /// `lines[i]` feeds bus `i + 1`.
    lines: Vec<Line>,
    v0: f64,
    base_kva: f64,
    children: Vec<Vec<usize>>,
    leaf_to_root: Vec<usize>,
}

/// Validates buses and lines and precomputes children sets and a leaf-to-root
/// ordering.
pub fn build_network(
    buses: Vec<Bus>,
    lines: Vec<Line>,
    v0: f64,
    base_kva: f64,
) -> std::result::Result<RadialNetwork, NetworkError> {
    if buses.is_empty() {
        return Err(NetworkError::Empty);
    }
    if !(v0 > 0.0 && v0.is_finite()) {
        return Err(NetworkError::Invalid(format!("v0 must be positive, got {v0}")));
    }
    if !(base_kva > 0.0 && base_kva.is_finite()) {
        return Err(NetworkError::Invalid(format!(
            "base_kva must be positive, got {base_kva}"
        )));
    }
    for (position, bus) in buses.iter().enumerate() {
        if bus.id != position {
            return Err(NetworkError::NonContiguousId {
                position,
                id: bus.id,
            });
        }
    }
    let n_bus = buses.len();
    let root = &buses[0];
    if root.parent.is_some() || root.kind != BusKind::Substation {
        return Err(NetworkError::InvalidRoot);
    }

    for bus in &buses[1..] {
        match bus.parent {
            None => return Err(NetworkError::Disconnected { bus: bus.id }),
            Some(p) if p >= n_bus => {
                return Err(NetworkError::MissingParent {
                    bus: bus.id,
                    parent: p,
                })
            }
            Some(p) if p == bus.id => return Err(NetworkError::Cycle { bus: bus.id }),
            Some(_) => {}
        }
        validate_bus(bus)?;
    }

    // Walk each parent chain; 0 = unvisited, 1 = on current chain, 2 = reaches root.
    let mut state = vec![0u8; n_bus];
    state[0] = 2;
    for start in 1..n_bus {
        let mut chain = Vec::new();
        let mut cur = start;
        while state[cur] == 0 {
            state[cur] = 1;
            chain.push(cur);
            cur = buses[cur].parent.expect("non-root parent checked above");
        }
        if state[cur] == 1 {
            return Err(NetworkError::Cycle { bus: cur });
        }
        for b in chain {
            state[b] = 2;
        }
    }

    let mut slots: Vec<Option<Line>> = vec![None; n_bus];
    for line in lines {
        if line.child == 0 || line.child >= n_bus {
            return Err(NetworkError::UnknownLine { child: line.child });
        }
        if slots[line.child].is_some() {
            return Err(NetworkError::DuplicateLine { child: line.child });
        }
        if !(line.r > 0.0) || !line.r.is_finite() {
            return Err(NetworkError::NonpositiveResistance {
                child: line.child,
                r: line.r,
            });
        }
        if !line.x.is_finite() {
            return Err(NetworkError::Invalid(format!(
                "line feeding bus {} has non-finite reactance",
                line.child
            )));
        }
        slots[line.child] = Some(line);
    }
    let mut ordered = Vec::with_capacity(n_bus - 1);
    for (child, slot) in slots.into_iter().enumerate().skip(1) {
        ordered.push(slot.ok_or(NetworkError::MissingLine { child })?);
    }

    let mut children = vec![Vec::new(); n_bus];
    for bus in &buses[1..] {
        children[bus.parent.unwrap()].push(bus.id);
    }
    // Breadth-first from the root, reversed, puts every child before its parent.
    let mut bfs = Vec::with_capacity(n_bus);
    bfs.push(0);
    let mut head = 0;
    while head < bfs.len() {
        let b = bfs[head];
        head += 1;
        bfs.extend_from_slice(&children[b]);
    }
    debug_assert_eq!(bfs.len(), n_bus);
    bfs.reverse();

    Ok(RadialNetwork {
        buses,
        lines: ordered,
        v0,
        base_kva,
        children,
        leaf_to_root: bfs,
    })
}

fn validate_bus(bus: &Bus) -> std::result::Result<(), NetworkError> {
    let invalid = |reason: &str| NetworkError::InvalidBus {
        bus: bus.id,
        reason: reason.to_string(),
    };
    let fields = [bus.p_c, bus.q_c, bus.p_g, bus.q_g_min, bus.q_g_max];
    if fields.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite power value"));
    }
    if bus.p_c < 0.0 || bus.q_c < 0.0 || bus.p_g < 0.0 {
        return Err(invalid("p_c, q_c and p_g must be nonnegative"));
    }
    if bus.q_g_max < 0.0 || bus.q_g_min != -bus.q_g_max {
        return Err(invalid("reactive capability must be a symmetric box q_g_min = -q_g_max <= 0"));
    }
    match bus.kind {
        BusKind::Substation => return Err(invalid("only the root may be a substation")),
        BusKind::Load if bus.p_g != 0.0 || bus.q_g_max != 0.0 => {
            return Err(invalid("load buses cannot generate"))
        }
        BusKind::Shunt if bus.p_g != 0.0 || bus.p_c != 0.0 => {
            return Err(invalid("shunt buses carry no active power"))
        }
        _ => {}
    }
    if !(bus.v_min > 0.0 && bus.v_min <= bus.v_max && bus.v_max.is_finite()) {
        return Err(NetworkError::InvalidVoltageLimits {
            bus: bus.id,
            v_min: bus.v_min,
            v_max: bus.v_max,
        });
    }
    Ok(())
}

impl RadialNetwork {
    /// Number of non-root buses (and of lines).
    pub fn n(&self) -> usize {
        self.lines.len()
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn bus(&self, id: usize) -> &Bus {
        &self.buses[id]
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    /// The line feeding bus `child` (`child >= 1`).
    pub fn line(&self, child: usize) -> &Line {
        &self.lines[child - 1]
    }

    pub fn v0(&self) -> f64 {
        self.v0
    }

    pub fn base_kva(&self) -> f64 {
        self.base_kva
    }

    pub fn parent(&self, bus: usize) -> Option<usize> {
        self.buses[bus].parent
    }

    pub fn children(&self, bus: usize) -> &[usize] {
        &self.children[bus]
    }

    /// All buses, every child before its parent, root last.
    pub fn leaf_to_root(&self) -> &[usize] {
        &self.leaf_to_root
    }

    pub fn root_to_leaf(&self) -> impl Iterator<Item = usize> + '_ {
        self.leaf_to_root.iter().rev().copied()
    }

    pub fn resistances(&self) -> Vec<f64> {
        self.lines.iter().map(|l| l.r).collect()
    }

    pub fn v_min(&self) -> Vec<f64> {
        self.buses[1..].iter().map(|b| b.v_min).collect()
    }

    pub fn v_max(&self) -> Vec<f64> {
        self.buses[1..].iter().map(|b| b.v_max).collect()
    }

    pub fn q_lo(&self) -> Vec<f64> {
        self.buses[1..].iter().map(|b| b.q_g_min).collect()
    }

    pub fn q_hi(&self) -> Vec<f64> {
        self.buses[1..].iter().map(|b| b.q_g_max).collect()
    }

    /// Non-root bus ids with controllable reactive injection.
    pub fn controllable(&self) -> Vec<usize> {
        self.buses[1..]
            .iter()
            .filter(|b| b.is_controllable())
            .map(|b| b.id)
            .collect()
    }

    /// Static net active injections `p_g - p_c` and reactive demands `q_c`.
    pub fn nominal_injections(&self) -> (Vec<f64>, Vec<f64>) {
        let p = self.buses[1..].iter().map(|b| b.p_g - b.p_c).collect();
        let qc = self.buses[1..].iter().map(|b| b.q_c).collect();
        (p, qc)
    }

    /// Same network with every bus voltage box replaced.
    pub fn with_voltage_limits(&self, v_min: f64, v_max: f64) -> Result<RadialNetwork> {
        let buses = self
            .buses
            .iter()
            .cloned()
            .map(|b| b.with_voltage_limits(v_min, v_max))
            .collect();
        Ok(build_network(buses, self.lines.clone(), self.v0, self.base_kva)?)
    }

    pub fn from_json_str(s: &str) -> Result<RadialNetwork> {
        let file: FeederFile = serde_json::from_str(s)?;
        Ok(file.into_network()?)
    }

    pub fn load(path: &Path) -> Result<RadialNetwork> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_feeder_file(&self) -> FeederFile {
        FeederFile {
            v0: self.v0,
            base_kva: self.base_kva,
            buses: self
                .buses
                .iter()
                .map(|b| BusRecord {
                    id: b.id,
                    parent: b.parent,
                    kind: b.kind,
                    p_c: b.p_c,
                    q_c: b.q_c,
                    p_g: b.p_g,
                    q_g_max: b.q_g_max,
                    v_min: Some(b.v_min),
                    v_max: Some(b.v_max),
                })
                .collect(),
            lines: self.lines.clone(),
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_feeder_file()).expect("feeder serializes")
    }
}

/// On-disk feeder description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeederFile {
    #[serde(default = "default_v0")]
    pub v0: f64,
    pub buses: Vec<BusRecord>,
    pub lines: Vec<Line>,
    #[serde(default = "default_base_kva")]
    pub base_kva: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BusRecord {
    pub id: usize,
    #[serde(default)]
    pub parent: Option<usize>,
    pub kind: BusKind,
    #[serde(default)]
    pub p_c: f64,
    #[serde(default)]
    pub q_c: f64,
    #[serde(default)]
    pub p_g: f64,
    #[serde(default)]
    pub q_g_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
}

fn default_v0() -> f64 {
    1.0
}

fn default_base_kva() -> f64 {
    DEFAULT_BASE_KVA
}

impl FeederFile {
    pub fn into_network(self) -> std::result::Result<RadialNetwork, NetworkError> {
        let buses = self
            .buses
            .into_iter()
            .map(|r| Bus {
                id: r.id,
                parent: r.parent,
                kind: r.kind,
                p_c: r.p_c,
                q_c: r.q_c,
                p_g: r.p_g,
                q_g_min: -r.q_g_max,
                q_g_max: r.q_g_max,
                v_min: r.v_min.unwrap_or(DEFAULT_V_MIN),
                v_max: r.v_max.unwrap_or(DEFAULT_V_MAX),
            })
            .collect();
        build_network(buses, self.lines, self.v0, self.base_kva)
    }
}

/// Reactive half-width `sqrt(s^2 - p_bar^2)` of an inverter with apparent
/// capacity `s` serving a panel of nameplate `p_bar`, available regardless of
/// the instantaneous solar output.
pub fn capability_bound(s: f64, p_bar: f64) -> Result<f64> {
    if !(p_bar > 0.0) || !s.is_finite() || !p_bar.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "panel capacity must be positive and finite, got {p_bar}"
        )));
    }
    if s < p_bar {
        return Err(Error::InvalidArgument(format!(
            "inverter capacity {s} is smaller than panel capacity {p_bar}"
        )));
    }
    Ok((s * s - p_bar * p_bar).sqrt())
}

/// Entrywise projection onto the reactive injection box; non-controllable
/// entries become zero.
pub fn clamp_to_region(q_g: &[f64], network: &RadialNetwork) -> Result<Vec<f64>> {
    check_len("reactive setpoint", network.n(), q_g.len())?;
    Ok(q_g
        .iter()
        .zip(&network.buses[1..])
        .map(|(&q, b)| {
            if b.is_controllable() {
                q.clamp(b.q_g_min, b.q_g_max)
            } else {
                0.0
            }
        })
        .collect())
}

/// Loss price and reactive support prices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSchedule {
    /// Active power (loss) price, currency per kWh.
    pub c0_tilde: f64,
    /// Reactive support prices per non-root bus, currency per kVar·h.
    pub c_tilde: Vec<f64>,
    /// Normalized prices `c_tilde / c0_tilde`.
    pub c: Vec<f64>,
}

impl PriceSchedule {
    pub fn new(network: &RadialNetwork, c0_tilde: f64, c_tilde: Vec<f64>) -> Result<Self> {
        if !(c0_tilde > 0.0) || !c0_tilde.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "loss price must be positive, got {c0_tilde}"
            )));
        }
        check_len("reactive prices", network.n(), c_tilde.len())?;
        for (i, &ct) in c_tilde.iter().enumerate() {
            if !(ct >= 0.0) || !ct.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "reactive price at bus {} must be nonnegative",
                    i + 1
                )));
            }
            if ct != 0.0 && !network.bus(i + 1).is_controllable() {
                return Err(Error::InvalidArgument(format!(
                    "bus {} is not controllable but has reactive price {ct}",
                    i + 1
                )));
            }
        }
        let c = c_tilde.iter().map(|ct| ct / c0_tilde).collect();
        Ok(PriceSchedule {
            c0_tilde,
            c_tilde,
            c,
        })
    }

    /// Same reactive price at every controllable bus.
    pub fn uniform(network: &RadialNetwork, c0_tilde: f64, c_tilde: f64) -> Result<Self> {
        let per_bus = network.buses[1..]
            .iter()
            .map(|b| if b.is_controllable() { c_tilde } else { 0.0 })
            .collect();
        Self::new(network, c0_tilde, per_bus)
    }

    /// Loss-only pricing (all reactive prices zero).
    pub fn loss_only(network: &RadialNetwork, c0_tilde: f64) -> Result<Self> {
        Self::uniform(network, c0_tilde, 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus(r: f64) -> std::result::Result<RadialNetwork, NetworkError> {
        build_network(
            vec![
                Bus::new(0, None, BusKind::Substation),
                Bus::new(1, Some(0), BusKind::Load).with_demand(0.1, 0.05),
            ],
            vec![Line { child: 1, r, x: 0.02 }],
            1.0,
            1000.0,
        )
    }

    #[test]
    fn smallest_tree() {
        let net = two_bus(0.01).unwrap();
        assert_eq!(net.n(), 1);
        assert_eq!(net.children(0), &[1]);
        assert_eq!(net.leaf_to_root(), &[1, 0]);
    }

    #[test]
    fn parent_loop_is_a_cycle() {
        let buses = vec![
            Bus::new(0, None, BusKind::Substation),
            Bus::new(1, Some(2), BusKind::Load),
            Bus::new(2, Some(1), BusKind::Load),
        ];
        let lines = vec![
            Line { child: 1, r: 0.01, x: 0.0 },
            Line { child: 2, r: 0.01, x: 0.0 },
        ];
        let err = build_network(buses, lines, 1.0, 1000.0).unwrap_err();
        assert!(matches!(err, NetworkError::Cycle { .. }));
        assert!(err.to_string().contains("cycle"));
    }

    #[test]
    fn zero_resistance_rejected() {
        let err = two_bus(0.0).unwrap_err();
        assert_eq!(err, NetworkError::NonpositiveResistance { child: 1, r: 0.0 });
        assert!(err.to_string().contains("nonpositive resistance"));
    }

    #[test]
    fn duplicate_and_missing_lines() {
        let buses = vec![
            Bus::new(0, None, BusKind::Substation),
            Bus::new(1, Some(0), BusKind::Load),
            Bus::new(2, Some(1), BusKind::Load),
        ];
        let dup = vec![
            Line { child: 1, r: 0.01, x: 0.0 },
            Line { child: 1, r: 0.02, x: 0.0 },
        ];
        assert_eq!(
            build_network(buses.clone(), dup, 1.0, 1.0).unwrap_err(),
            NetworkError::DuplicateLine { child: 1 }
        );
        let missing = vec![Line { child: 1, r: 0.01, x: 0.0 }];
        assert_eq!(
            build_network(buses, missing, 1.0, 1.0).unwrap_err(),
            NetworkError::MissingLine { child: 2 }
        );
    }

    #[test]
    fn second_root_is_disconnected() {
        let buses = vec![
            Bus::new(0, None, BusKind::Substation),
            Bus::new(1, None, BusKind::Load),
        ];
        let lines = vec![Line { child: 1, r: 0.01, x: 0.0 }];
        assert_eq!(
            build_network(buses, lines, 1.0, 1.0).unwrap_err(),
            NetworkError::Disconnected { bus: 1 }
        );
    }

    #[test]
    fn load_bus_cannot_generate() {
        let buses = vec![
            Bus::new(0, None, BusKind::Substation),
            Bus::new(1, Some(0), BusKind::Load).with_generation(0.1, 0.0),
        ];
        let lines = vec![Line { child: 1, r: 0.01, x: 0.0 }];
        assert!(matches!(
            build_network(buses, lines, 1.0, 1.0),
            Err(NetworkError::InvalidBus { bus: 1, .. })
        ));
    }

    #[test]
    fn capability_examples() {
        assert_eq!(capability_bound(1.0, 1.0).unwrap(), 0.0);
        assert!((capability_bound(1.1, 1.0).unwrap() - 0.21f64.sqrt()).abs() < 1e-15);
        assert!((capability_bound(1.1, 1.0).unwrap() - 0.45826).abs() < 1e-5);
        assert!((capability_bound(1.3, 1.0).unwrap() - 0.83066).abs() < 1e-5);
        assert!(capability_bound(0.9, 1.0).is_err());
    }

    #[test]
    fn clamp_examples() {
        let net = build_network(
            vec![
                Bus::new(0, None, BusKind::Substation),
                Bus::new(1, Some(0), BusKind::Dg).with_generation(0.5, 0.45),
                Bus::new(2, Some(1), BusKind::Load),
            ],
            vec![
                Line { child: 1, r: 0.01, x: 0.01 },
                Line { child: 2, r: 0.01, x: 0.01 },
            ],
            1.0,
            1.0,
        )
        .unwrap();
        assert_eq!(clamp_to_region(&[0.2, 0.0], &net).unwrap(), vec![0.2, 0.0]);
        assert_eq!(clamp_to_region(&[0.9, 0.0], &net).unwrap(), vec![0.45, 0.0]);
        assert_eq!(clamp_to_region(&[0.0, 0.1], &net).unwrap(), vec![0.0, 0.0]);
        assert!(clamp_to_region(&[0.0], &net).is_err());
    }

    #[test]
    fn price_normalization() {
        let net = build_network(
            vec![
                Bus::new(0, None, BusKind::Substation),
                Bus::new(1, Some(0), BusKind::Dg).with_generation(0.5, 0.45),
                Bus::new(2, Some(1), BusKind::Load),
            ],
            vec![
                Line { child: 1, r: 0.01, x: 0.01 },
                Line { child: 2, r: 0.01, x: 0.01 },
            ],
            1.0,
            1.0,
        )
        .unwrap();
        let prices = PriceSchedule::uniform(&net, 6.6, 6.6 / 80.0).unwrap();
        assert!((prices.c_tilde[0] - 0.0825).abs() < 1e-15);
        assert!((prices.c[0] - 1.0 / 80.0).abs() < 1e-15);
        assert_eq!(prices.c[1], 0.0);
        assert!(PriceSchedule::new(&net, 6.6, vec![0.1, 0.1]).is_err());
        assert!(PriceSchedule::new(&net, 0.0, vec![0.1, 0.0]).is_err());
    }
}
