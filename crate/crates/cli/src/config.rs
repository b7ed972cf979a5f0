use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use beaconsim::mobility::{
    gen_highway, gen_urban_grid, load_obstacles, load_static_nodes, load_trace, static_scenario, Coords, Environment,
    HighwayParams, NodeId, NodeState, Scenario, UrbanParams, DEFAULT_TICK_S,
};
use beaconsim::Point;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// How a scenario is obtained. Relative paths are resolved against the
/// directory of the config file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioConfig {
    Highway(HighwayParams),
    Urban(UrbanParams),
    Trace(TraceConfig),
    /// Parked vehicles, mostly for smoke tests.
    Static(StaticConfig),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    pub environment: Environment,
    pub trace: PathBuf,
    #[serde(default)]
    pub obstacles: Option<PathBuf>,
    #[serde(default)]
    pub static_nodes: Option<PathBuf>,
    #[serde(default)]
    pub coords: Coords,
    #[serde(default = "default_tick")]
    pub tick_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticConfig {
    pub environment: Environment,
    /// `[x, y]` in meters.
    pub positions: Vec<[f64; 2]>,
    pub duration_s: f64,
    #[serde(default = "default_tick")]
    pub tick_s: f64,
}

fn default_tick() -> f64 {
    DEFAULT_TICK_S
}

/// Reads and parses a JSON file; the error names the path.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

impl ScenarioConfig {
    /// Input files the scenario reads, resolved.
    pub fn inputs(&self, base: &Path) -> Vec<PathBuf> {
        match self {
            ScenarioConfig::Trace(t) => std::iter::once(&t.trace)
                .chain(t.obstacles.as_ref())
                .chain(t.static_nodes.as_ref())
                .map(|p| base.join(p))
                .collect(),
            _ => Vec::new(),
        }
    }

    pub fn build(&self, base: &Path, seed: u64) -> Result<Scenario> {
        Ok(match self {
            ScenarioConfig::Highway(p) => gen_highway(p, seed)?,
            ScenarioConfig::Urban(p) => gen_urban_grid(p, seed)?,
            ScenarioConfig::Static(s) => {
                let nodes = s
                    .positions
                    .iter()
                    .enumerate()
                    .map(|(i, &[x, y])| NodeState::vehicle(NodeId(i as u32), 0.0, Point::new(x, y), 0.0))
                    .collect();
                static_scenario(s.environment, nodes, s.duration_s, s.tick_s, Vec::new())?
            }
            ScenarioConfig::Trace(t) => {
                let frag = load_trace(base.join(&t.trace), t.tick_s, t.environment, t.coords, None)?;
                let mut scenario = frag.scenario;
                let mut projection = frag.projection;
                if let Some(o) = &t.obstacles {
                    let (obstacles, p) = load_obstacles(base.join(o), projection)?;
                    scenario.obstacles = obstacles;
                    projection = p;
                }
                if let Some(s) = &t.static_nodes {
                    scenario.add_static_nodes(load_static_nodes(base.join(s), t.coords, projection)?)?;
                }
                scenario
            }
        })
    }
}

/// Directory that relative paths in `config` refer to.
pub fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}
