//! Periodic beacon emission and per-link evaluation over a scenario.

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, BeaconKey, ChannelConfig, LinkSample};
use crate::error::{Error, Result};
use crate::geometry::{analyze_link_with, obstacle_counts, LinkClass, NodeSet, SpatialIndex};
use crate::mobility::{Environment, NodeId, NodeState, Role, Scenario};
use crate::rng::{self, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartPhase {
    Aligned,
    PerNodeRandom,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolePower {
    pub vehicle: f64,
    pub roadside: f64,
}

impl RolePower {
    pub fn uniform(dbm: f64) -> Self {
        Self {
            vehicle: dbm,
            roadside: dbm,
        }
    }

    pub fn get(&self, role: Role) -> f64 {
        match role {
            Role::Vehicle => self.vehicle,
            Role::Roadside => self.roadside,
        }
    }
}

/// Per-node constant offset from nominal power, uniform in
/// `[low_db, high_db]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct PowerPerturbation {
    pub low_db: f64,
    pub high_db: f64,
}

impl PowerPerturbation {
    /// Spread seen in field radios: 10–20 dBm effective against a 21 dBm
    /// nominal setting.
    pub fn measurement_preset() -> Self {
        Self {
            low_db: -11.0,
            high_db: -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeaconConfig {
    pub rate_hz: f64,
    pub tx_power_dbm: RolePower,
    pub payload_bytes: u32,
    pub candidate_radius_m: f64,
    pub start_phase: StartPhase,
    pub power_perturbation: PowerPerturbation,
}

impl Default for BeaconConfig {
    fn default() -> Self {
        Self {
            rate_hz: 10.0,
            tx_power_dbm: RolePower::uniform(21.0),
            payload_bytes: 100,
            candidate_radius_m: 1500.0,
            start_phase: StartPhase::PerNodeRandom,
            power_perturbation: PowerPerturbation::default(),
        }
    }
}

impl BeaconConfig {
    pub fn validate(&self, tick_s: f64) -> Result<()> {
        if !(1.0..=10.0).contains(&self.rate_hz) {
            return Err(Error::config(format!("rate_hz {} outside 1..10", self.rate_hz)));
        }
        if self.rate_hz * tick_s > 1.0 + 1e-9 {
            return Err(Error::config(format!(
                "rate {} Hz exceeds the {} s tick grid",
                self.rate_hz, tick_s
            )));
        }
        if tick_s < 1e-3 {
            return Err(Error::config("tick must be at least 1 ms"));
        }
        if !(self.candidate_radius_m > 0.0) {
            return Err(Error::config("candidate_radius_m must be > 0"));
        }
        let PowerPerturbation { low_db, high_db } = self.power_perturbation;
        if !(low_db <= high_db) || !low_db.is_finite() || !high_db.is_finite() {
            return Err(Error::config("power perturbation needs finite low_db <= high_db"));
        }
        if !self.tx_power_dbm.vehicle.is_finite() || !self.tx_power_dbm.roadside.is_finite() {
            return Err(Error::config("tx power must be finite"));
        }
        Ok(())
    }
}

/// Effective transmit power of `node`: nominal for its role plus a per-node
/// offset drawn once per run.
pub fn effective_power(node: &NodeState, cfg: &BeaconConfig, seed: u64) -> f64 {
    let PowerPerturbation { low_db, high_db } = cfg.power_perturbation;
    let offset = if high_db == low_db {
        low_db
    } else {
        low_db + (high_db - low_db) * rng::unit_open(rng::key(seed, Stream::TxPower, node.id.0 as u64, 0, 0))
    };
    cfg.tx_power_dbm.get(node.role) + offset
}

/// Emission grid of one node. Emission `j` happens at the tick containing
/// `phase + j / rate`; rates that do not divide the tick grid are quantized
/// onto it with the exact count per second preserved.
#[derive(Clone, Copy, Debug)]
pub struct Schedule {
    period_ticks: f64,
    phase_ticks: f64,
}

impl Schedule {
    pub fn new(rate_hz: f64, tick_s: f64, phase: StartPhase, node: NodeId, seed: u64) -> Self {
        let period_ticks = 1.0 / (rate_hz * tick_s);
        let phase_ticks = match phase {
            StartPhase::Aligned => 0.0,
            StartPhase::PerNodeRandom => {
                let u = rng::unit_open(rng::key(seed, Stream::Phase, node.0 as u64, 0, 0));
                (u * period_ticks).floor()
            }
        };
        Self {
            period_ticks,
            phase_ticks,
        }
    }

    fn emission_tick(&self, j: i64) -> i64 {
        (self.phase_ticks + j as f64 * self.period_ticks + 1e-9).floor() as i64
    }

    pub fn emits_at(&self, tick: usize) -> bool {
        let k = tick as i64;
        let j = ((k as f64 - self.phase_ticks) / self.period_ticks).floor() as i64;
        (j - 1..=j + 1).any(|j| j >= 0 && self.emission_tick(j) == k)
    }
}

/// Receives every evaluated link sample, one tick at a time, in canonical
/// `(tx, rx)` order.
pub trait SampleSink {
    fn accept_tick(&mut self, tick: usize, samples: &[LinkSample]);
}

impl<A: SampleSink, B: SampleSink> SampleSink for (A, B) {
    fn accept_tick(&mut self, tick: usize, samples: &[LinkSample]) {
        self.0.accept_tick(tick, samples);
        self.1.accept_tick(tick, samples);
    }
}

impl<S: SampleSink + ?Sized> SampleSink for &mut S {
    fn accept_tick(&mut self, tick: usize, samples: &[LinkSample]) {
        (**self).accept_tick(tick, samples);
    }
}

/// Adapts a closure into a sink.
pub struct FnSink<F>(pub F);

impl<F: FnMut(usize, &[LinkSample])> SampleSink for FnSink<F> {
    fn accept_tick(&mut self, tick: usize, samples: &[LinkSample]) {
        (self.0)(tick, samples)
    }
}

impl SampleSink for Vec<LinkSample> {
    fn accept_tick(&mut self, _tick: usize, samples: &[LinkSample]) {
        self.extend_from_slice(samples);
    }
}

/// Everything needed to interpret a stored log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimMeta {
    pub environment: Environment,
    pub tick_s: f64,
    pub duration_s: f64,
    pub seed: u64,
    pub beacon: BeaconConfig,
    pub channel: ChannelConfig,
    pub node_names: Vec<String>,
    /// Emissions per node, indexed like `node_names`.
    pub emissions: Vec<u64>,
    /// Free-form description of how the scenario was produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<serde_json::Value>,
}

/// Complete record of a run.
#[derive(Clone, Debug)]
pub struct SimLog {
    pub meta: SimMeta,
    pub samples: Vec<LinkSample>,
}

impl SimLog {
    pub fn emissions_of(&self, node: NodeId) -> u64 {
        self.meta.emissions[node.0 as usize]
    }
}

/// Runs the beacon simulation and returns the full log.
pub fn run(scenario: &Scenario, beacon: &BeaconConfig, channel: &ChannelConfig, seed: u64) -> Result<SimLog> {
    let mut samples = Vec::new();
    let emissions = run_with(scenario, beacon, channel, seed, &mut samples)?;
    Ok(SimLog {
        meta: SimMeta {
            environment: scenario.environment,
            tick_s: scenario.tick_s,
            duration_s: scenario.duration_s,
            seed,
            beacon: beacon.clone(),
            channel: channel.clone(),
            node_names: scenario.node_names.clone(),
            emissions,
            scenario: None,
        },
        samples,
    })
}

/// Streams samples into `sink` tick by tick and returns per-node emission
/// counts. Emitters within a tick are evaluated in parallel on the current
/// rayon pool; results are merged in node order, so output does not depend
/// on the worker count.
pub fn run_with<S: SampleSink>(
    scenario: &Scenario,
    beacon: &BeaconConfig,
    channel: &ChannelConfig,
    seed: u64,
    sink: S,
) -> Result<Vec<u64>> {
    beacon.validate(scenario.tick_s)?;
    let schedules: Vec<Schedule> = (0..scenario.node_count())
        .map(|i| {
            Schedule::new(
                beacon.rate_hz,
                scenario.tick_s,
                beacon.start_phase,
                NodeId(i as u32),
                seed,
            )
        })
        .collect();
    drive(scenario, beacon, channel, seed, sink, |node, tick| {
        schedules[node].emits_at(tick)
    })
}

/// Like [`run_with`] but every node emits at every tick, whatever the
/// configured rate. Any rate's emissions are a subset of these ticks and
/// link gains do not depend on rate or power, so one such pass determines
/// the outcome of every (power, rate) setting under the same seed.
pub fn run_every_tick<S: SampleSink>(
    scenario: &Scenario,
    beacon: &BeaconConfig,
    channel: &ChannelConfig,
    seed: u64,
    sink: S,
) -> Result<Vec<u64>> {
    let probe = BeaconConfig {
        rate_hz: 1.0,
        ..beacon.clone()
    };
    probe.validate(scenario.tick_s)?;
    drive(scenario, beacon, channel, seed, sink, |_, _| true)
}

fn drive<S: SampleSink>(
    scenario: &Scenario,
    beacon: &BeaconConfig,
    channel: &ChannelConfig,
    seed: u64,
    mut sink: S,
    emits: impl Fn(usize, usize) -> bool,
) -> Result<Vec<u64>> {
    channel.validate()?;
    let index = scenario.spatial_index()?;
    let mut emissions = vec![0u64; scenario.node_count()];
    let ctx = TickContext {
        env: scenario.environment,
        beacon,
        channel,
        seed,
        index: &index,
        tick_s: scenario.tick_s,
    };
    // Emissions happen at t in [0, duration).
    for tick in 0..scenario.tick_count() {
        let frame = scenario.frame(tick);
        let emitters: Vec<&NodeState> = frame.iter().filter(|n| emits(n.id.0 as usize, tick)).collect();
        for e in &emitters {
            emissions[e.id.0 as usize] += 1;
        }
        let samples = ctx.evaluate_tick(tick, frame, &emitters);
        sink.accept_tick(tick, &samples);
    }
    Ok(emissions)
}

struct TickContext<'a> {
    env: Environment,
    beacon: &'a BeaconConfig,
    channel: &'a ChannelConfig,
    seed: u64,
    index: &'a SpatialIndex<f64>,
    tick_s: f64,
}

impl TickContext<'_> {
    fn evaluate_tick(&self, tick: usize, frame: &[NodeState], emitters: &[&NodeState]) -> Vec<LinkSample> {
        let nodes = NodeSet::new(frame);
        let time_s = tick as f64 * self.tick_s;
        let second = (time_s + 1e-9).floor() as u64;
        let r2 = self.beacon.candidate_radius_m * self.beacon.candidate_radius_m;
        let in_range = |a: &NodeState, b: &NodeState| {
            let dx = b.position.x - a.position.x;
            let dy = b.position.y - a.position.y;
            a.id != b.id && dx * dx + dy * dy <= r2
        };
        // When most nodes transmit, each pair is queried from both ends, so
        // obstacle counts are computed once per pair up front.
        let shared: Option<Vec<Vec<(u32, u32)>>> = (2 * emitters.len() >= frame.len()).then(|| {
            (0..frame.len())
                .into_par_iter()
                .map(|i| {
                    frame[i + 1..]
                        .iter()
                        .map(|b| {
                            if in_range(&frame[i], b) {
                                obstacle_counts(&frame[i], b, self.index)
                            } else {
                                (0, 0)
                            }
                        })
                        .collect()
                })
                .collect()
        });
        // Frames are sorted by id, so positions can be found by search.
        let slot = |n: &NodeState| frame.binary_search_by_key(&n.id, |m| m.id).expect("emitter in frame");
        let counts = |i: usize, j: usize| match &shared {
            Some(rows) => {
                let (i, j) = if i < j { (i, j) } else { (j, i) };
                rows[i][j - i - 1]
            }
            None => obstacle_counts(&frame[i], &frame[j], self.index),
        };
        let per_emitter: Vec<Vec<LinkSample>> = emitters
            .par_iter()
            .map(|tx| {
                let tx_power = effective_power(tx, self.beacon, self.seed);
                let i = slot(tx);
                frame
                    .iter()
                    .enumerate()
                    .filter(|(_, rx)| in_range(tx, rx))
                    .map(|(j, rx)| {
                        let geo = analyze_link_with(tx, rx, &nodes, counts(i, j));
                        let link = rng::link_key(tx.id.0, rx.id.0);
                        let sigma = channel::draw_sigma(self.env, link, second, self.channel, self.seed);
                        let key = BeaconKey {
                            link,
                            tick: tick as u64,
                            second,
                        };
                        channel::receive(tx, rx, tx_power, &geo, sigma, self.channel, self.seed, key, time_s)
                    })
                    .collect()
            })
            .collect();
        per_emitter.into_iter().flatten().collect()
    }
}

pub const SIMLOG_HEADER: &str = "time_s,tx_id,rx_id,distance_m,link_class,rx_power_dbm,received";

/// Writes samples in the log CSV schema.
pub fn write_samples<W: Write>(samples: &[LinkSample], names: &[String], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{SIMLOG_HEADER}")?;
    for s in samples {
        writeln!(
            out,
            "{:.3},{},{},{},{},{},{}",
            s.time_s, names[s.tx.0 as usize], names[s.rx.0 as usize], s.distance_m, s.class, s.rx_power_dbm, s.received
        )?;
    }
    Ok(())
}

/// Sink that streams samples straight to a CSV writer.
pub struct CsvSink<'a, W: Write> {
    out: W,
    names: &'a [String],
    error: Option<std::io::Error>,
}

impl<'a, W: Write> CsvSink<'a, W> {
    pub fn new(mut out: W, names: &'a [String]) -> std::io::Result<Self> {
        writeln!(out, "{SIMLOG_HEADER}")?;
        Ok(Self {
            out,
            names,
            error: None,
        })
    }

    pub fn finish(mut self) -> std::io::Result<W> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()?;
        Ok(self.out)
    }
}

impl<W: Write> SampleSink for CsvSink<'_, W> {
    fn accept_tick(&mut self, _tick: usize, samples: &[LinkSample]) {
        if self.error.is_some() {
            return;
        }
        for s in samples {
            let r = writeln!(
                self.out,
                "{:.3},{},{},{},{},{},{}",
                s.time_s,
                self.names[s.tx.0 as usize],
                self.names[s.rx.0 as usize],
                s.distance_m,
                s.class,
                s.rx_power_dbm,
                s.received
            );
            if let Err(e) = r {
                self.error = Some(e);
                return;
            }
        }
    }
}

/// Reads a log CSV. Node names are resolved against `names`; the stored
/// log does not carry transmit power, so `tx_power_dbm` and
/// `link_gain_db` come back as NaN.
pub fn read_samples(path: &Path, names: &[String], tick_s: f64) -> Result<Vec<LinkSample>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let lookup: std::collections::HashMap<&str, NodeId> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), NodeId(i as u32)))
        .collect();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = i + 1;
        if i == 0 {
            if line.trim() != SIMLOG_HEADER {
                return Err(Error::Parse {
                    path: path.into(),
                    line: 1,
                    reason: format!("expected header `{SIMLOG_HEADER}`"),
                });
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| Error::Parse {
            path: path.into(),
            line: lineno,
            reason,
        };
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 7 {
            return Err(bad(format!("expected 7 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}`")));
        let node = |s: &str| lookup.get(s).copied().ok_or_else(|| bad(format!("unknown node `{s}`")));
        let time_s = num(f[0])?;
        let class: LinkClass = f[4].parse().map_err(bad)?;
        let received = match f[6] {
            "true" | "1" => true,
            "false" | "0" => false,
            other => return Err(bad(format!("bad boolean `{other}`"))),
        };
        out.push(LinkSample {
            tick: (time_s / tick_s).round() as u32,
            time_s,
            tx: node(f[1])?,
            rx: node(f[2])?,
            distance_m: num(f[3])?,
            class,
            tx_power_dbm: f64::NAN,
            link_gain_db: f64::NAN,
            rx_power_dbm: num(f[5])?,
            received,
        });
    }
    Ok(out)
}
