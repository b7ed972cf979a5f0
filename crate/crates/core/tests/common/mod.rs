#![allow(dead_code)]

use beaconsim::beaconing::{BeaconConfig, StartPhase};
use beaconsim::channel::{large_scale_loss, ChannelConfig, DistributionSpec, SigmaByEnvironment};
use beaconsim::geometry::{LinkClass, LinkGeometry};
use beaconsim::mobility::{static_scenario, Environment, NodeId, NodeState, Scenario, DEFAULT_TICK_S};
use beaconsim::Point;
use statrs::distribution::{ContinuousCDF, Normal};

pub const SIGMA_DB: f64 = 4.0;

/// Static vehicles on a line `spacing_m` apart with independent per-beacon
/// fading, and the nominal power at which the link between the first two
/// succeeds with probability `p`.
pub fn iid_setup(nodes: usize, spacing_m: f64, p: f64, duration_s: f64) -> (Scenario, ChannelConfig, BeaconConfig) {
    let states: Vec<NodeState> = (0..nodes)
        .map(|i| NodeState::vehicle(NodeId(i as u32), 0.0, Point::new(i as f64 * spacing_m, 0.0), 90.0))
        .collect();
    let scenario = static_scenario(
        Environment::Highway,
        states.clone(),
        duration_s,
        DEFAULT_TICK_S,
        Vec::new(),
    )
    .unwrap();
    let fixed = DistributionSpec::Fixed { value: SIGMA_DB };
    let channel = ChannelConfig {
        smallscale_sigma: SigmaByEnvironment {
            urban: fixed,
            highway: fixed,
        },
        fading_coherence_s: 0.0,
        ..Default::default()
    };
    let geo = LinkGeometry {
        class: Some(LinkClass::Los),
        ..Default::default()
    };
    let loss = large_scale_loss(&geo, spacing_m, &states[0], &states[1], &channel);
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(p);
    let beacon = BeaconConfig {
        tx_power_dbm: beaconsim::beaconing::RolePower::uniform(channel.sensitivity_dbm + loss + SIGMA_DB * z),
        start_phase: StartPhase::PerNodeRandom,
        ..Default::default()
    };
    (scenario, channel, beacon)
}
