//! Two synthetic desk-scale feeders shipped with the crate.

use crate::network::RadialNetwork;

/// Six-bus line feeder with loads at buses 1, 3, 5 and inverters at 2 and 4.
pub const FEEDER6_JSON: &str = include_str!("../fixtures/feeder6.json");

/// Fifteen-bus branching feeder with inverters at buses 5, 8 and 14.
pub const FEEDER15_JSON: &str = include_str!("../fixtures/feeder15.json");

pub fn feeder6() -> RadialNetwork {
    RadialNetwork::from_json_str(FEEDER6_JSON).expect("bundled six-bus feeder is valid")
}

pub fn feeder15() -> RadialNetwork {
    RadialNetwork::from_json_str(FEEDER15_JSON).expect("bundled fifteen-bus feeder is valid")
}
