//! Time-indexed node states: trace ingestion, synthetic highway and
//! Manhattan-grid generators, and static roadside nodes.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ObstacleKind, ObstaclePolygon, Point2, SpatialIndex};
use crate::rng::{self, Stream};

pub const DEFAULT_TICK_S: f64 = 0.1;
pub const VEHICLE_LENGTH_M: f64 = 4.5;
pub const VEHICLE_WIDTH_M: f64 = 1.8;
pub const VEHICLE_HEIGHT_M: f64 = 1.5;
pub const TALL_VEHICLE_HEIGHT_M: f64 = 3.2;
pub const TALL_VEHICLE_SHARE: f64 = 0.3;
pub const VEHICLE_ANTENNA_M: f64 = 1.55;
pub const ROADSIDE_ANTENNA_M: f64 = 10.0;
pub const HIGHWAY_LANE_WIDTH_M: f64 = 3.5;

/// Gap beyond which trace samples are not interpolated.
pub const MAX_INTERPOLATION_GAP_S: f64 = 1.0;

/// Dense node index within one scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Vehicle,
    Roadside,
}

impl std::str::FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "vehicle" => Ok(Role::Vehicle),
            "roadside" => Ok(Role::Roadside),
            other => Err(format!("unknown role `{other}`")),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Vehicle => "vehicle",
            Role::Roadside => "roadside",
        })
    }
}

/// Propagation environment, selects the small-scale variation law.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Environment {
    Urban,
    Highway,
}

/// State of one node at one instant. Heading is in degrees clockwise from
/// north; positions are in the local metric plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub id: NodeId,
    pub role: Role,
    pub time_s: f64,
    pub position: Point2<f64>,
    pub speed_mps: f64,
    pub heading_deg: f64,
    pub length_m: f64,
    pub width_m: f64,
    pub body_height_m: f64,
    pub antenna_height_m: f64,
}

impl NodeState {
    /// A regular passenger car with default dimensions.
    pub fn vehicle(id: NodeId, time_s: f64, position: Point2<f64>, heading_deg: f64) -> Self {
        Self {
            id,
            role: Role::Vehicle,
            time_s,
            position,
            speed_mps: 0.0,
            heading_deg,
            length_m: VEHICLE_LENGTH_M,
            width_m: VEHICLE_WIDTH_M,
            body_height_m: VEHICLE_HEIGHT_M,
            antenna_height_m: VEHICLE_ANTENNA_M,
        }
    }

    pub fn roadside(id: NodeId, time_s: f64, position: Point2<f64>, antenna_height_m: f64) -> Self {
        Self {
            id,
            role: Role::Roadside,
            time_s,
            position,
            speed_mps: 0.0,
            heading_deg: 0.0,
            length_m: 0.0,
            width_m: 0.0,
            body_height_m: 0.0,
            antenna_height_m,
        }
    }

    fn check(&self) -> std::result::Result<(), String> {
        if !self.position.is_finite() {
            return Err("non-finite position".into());
        }
        if !(self.antenna_height_m > 0.0) {
            return Err("antenna height must be > 0".into());
        }
        if self.role == Role::Vehicle && !(self.length_m > 0.0 && self.width_m > 0.0 && self.body_height_m > 0.0) {
            return Err("vehicle dimensions must be > 0".into());
        }
        Ok(())
    }
}

/// Equirectangular projection around a reference point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub origin_lat_deg: f64,
    pub origin_lon_deg: f64,
}

const EARTH_RADIUS_M: f64 = 6_371_008.8;

impl Projection {
    /// Centered on the mean of `(lon, lat)` pairs.
    pub fn around_centroid(lonlat: &[(f64, f64)]) -> Self {
        let n = lonlat.len().max(1) as f64;
        let (lon, lat) = lonlat.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        Self {
            origin_lat_deg: lat / n,
            origin_lon_deg: lon / n,
        }
    }

    pub fn project(&self, lon_deg: f64, lat_deg: f64) -> Point2<f64> {
        let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        Point2::new(
            (lon_deg - self.origin_lon_deg) * k * self.origin_lat_deg.to_radians().cos(),
            (lat_deg - self.origin_lat_deg) * k,
        )
    }
}

/// How coordinates in input files are expressed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Coords {
    #[default]
    Meters,
    /// `x` holds longitude and `y` latitude, in degrees.
    Latlon,
}

/// Immutable set of node trajectories on a fixed tick grid plus the static
/// environment.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub environment: Environment,
    pub tick_s: f64,
    pub duration_s: f64,
    pub obstacles: Vec<ObstaclePolygon<f64>>,
    pub node_names: Vec<String>,
    /// `frames[k]` holds the states at `k * tick_s`, sorted by node id.
    frames: Vec<Vec<NodeState>>,
}

impl Scenario {
    pub fn new(
        environment: Environment,
        tick_s: f64,
        duration_s: f64,
        obstacles: Vec<ObstaclePolygon<f64>>,
        node_names: Vec<String>,
        mut frames: Vec<Vec<NodeState>>,
    ) -> Result<Self> {
        if !(tick_s > 0.0) || !(duration_s >= 0.0) {
            return Err(Error::config("tick must be > 0 and duration >= 0"));
        }
        let ticks = ticks_in(duration_s, tick_s)?;
        if frames.len() != ticks + 1 {
            return Err(Error::config(format!(
                "expected {} frames for {duration_s} s at {tick_s} s ticks, got {}",
                ticks + 1,
                frames.len()
            )));
        }
        for f in &mut frames {
            f.sort_by_key(|n| n.id);
            if f.windows(2).any(|w| w[0].id == w[1].id) {
                return Err(Error::config("duplicate node in frame"));
            }
            if let Some(n) = f.iter().find(|n| n.id.0 as usize >= node_names.len()) {
                return Err(Error::config(format!("node id {} has no name", n.id)));
            }
        }
        Ok(Self {
            environment,
            tick_s,
            duration_s,
            obstacles,
            node_names,
            frames,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_names.len()
    }

    pub fn tick_count(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn frame(&self, tick: usize) -> &[NodeState] {
        &self.frames[tick]
    }

    pub fn frames(&self) -> &[Vec<NodeState>] {
        &self.frames
    }

    pub fn is_empty(&self) -> bool {
        self.frames.iter().all(|f| f.is_empty())
    }

    /// Tick index of `t`, which must sit on the grid.
    pub fn tick_of(&self, time_s: f64) -> Result<usize> {
        if time_s < -1e-9 || time_s > self.duration_s + 1e-9 {
            return Err(Error::OutOfRange {
                time_s,
                duration_s: self.duration_s,
            });
        }
        let k = (time_s / self.tick_s).round();
        if (k * self.tick_s - time_s).abs() > 1e-6 * self.tick_s.max(1.0) {
            return Err(Error::OffGrid {
                time_s,
                tick_s: self.tick_s,
            });
        }
        Ok(k as usize)
    }

    /// All node states at time `t`.
    pub fn snapshot(&self, time_s: f64) -> Result<&[NodeState]> {
        Ok(self.frame(self.tick_of(time_s)?))
    }

    pub fn spatial_index(&self) -> Result<SpatialIndex<f64>> {
        SpatialIndex::build(self.obstacles.clone())
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.node_names.iter().position(|n| n == name).map(|i| NodeId(i as u32))
    }

    /// Adds roadside nodes present at every tick.
    pub fn add_static_nodes(&mut self, nodes: Vec<(String, NodeState)>) -> Result<()> {
        for (name, mut state) in nodes {
            if self.node_id(&name).is_some() {
                return Err(Error::config(format!("duplicate node `{name}`")));
            }
            state.id = NodeId(self.node_names.len() as u32);
            state.speed_mps = 0.0;
            self.node_names.push(name);
            for (k, f) in self.frames.iter_mut().enumerate() {
                let mut s = state.clone();
                s.time_s = k as f64 * self.tick_s;
                f.push(s);
            }
        }
        Ok(())
    }

    /// Bounding rectangle of obstacles and all node positions.
    pub fn bounds(&self) -> (Point2<f64>, Point2<f64>) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut grow = |p: &Point2<f64>| {
            lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
        };
        self.obstacles.iter().flat_map(|o| o.vertices()).for_each(&mut grow);
        self.frames.iter().flatten().for_each(|n| grow(&n.position));
        (lo, hi)
    }
}

fn ticks_in(duration_s: f64, tick_s: f64) -> Result<usize> {
    let k = (duration_s / tick_s).round();
    if (k * tick_s - duration_s).abs() > 1e-6 * tick_s.max(1.0) {
        return Err(Error::OffGrid {
            time_s: duration_s,
            tick_s,
        });
    }
    Ok(k as usize)
}

pub const TRACE_HEADER: [&str; 11] = [
    "time_s",
    "node_id",
    "x",
    "y",
    "speed_mps",
    "heading_deg",
    "length_m",
    "width_m",
    "body_height_m",
    "antenna_height_m",
    "role",
];

#[derive(Debug, Deserialize)]
struct TraceRow {
    time_s: f64,
    node_id: String,
    x: f64,
    y: f64,
    speed_mps: f64,
    heading_deg: f64,
    length_m: f64,
    width_m: f64,
    body_height_m: f64,
    antenna_height_m: f64,
    role: String,
}

fn read_trace_rows(path: &Path) -> Result<Vec<(usize, TraceRow)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                path: path.into(),
                line: 1,
                reason: format!("{other:?}"),
            },
        })?;
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != TRACE_HEADER {
        return Err(Error::Parse {
            path: path.into(),
            line: 1,
            reason: format!("expected header `{}`", TRACE_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.into(),
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row: TraceRow = rec.deserialize(Some(&header)).map_err(|e| Error::Parse {
            path: path.into(),
            line,
            reason: e.to_string(),
        })?;
        rows.push((line, row));
    }
    Ok(rows)
}

fn row_state(path: &Path, line: usize, row: &TraceRow, pos: Point2<f64>) -> Result<NodeState> {
    let bad = |reason: String| Error::Parse {
        path: path.into(),
        line,
        reason,
    };
    let role: Role = row.role.parse().map_err(bad)?;
    let s = NodeState {
        id: NodeId(0),
        role,
        time_s: row.time_s,
        position: pos,
        speed_mps: row.speed_mps,
        heading_deg: row.heading_deg,
        length_m: row.length_m,
        width_m: row.width_m,
        body_height_m: row.body_height_m,
        antenna_height_m: row.antenna_height_m,
    };
    s.check().map_err(&bad)?;
    if !row.time_s.is_finite() || row.time_s < 0.0 {
        return Err(bad("time must be finite and >= 0".into()));
    }
    Ok(s)
}

fn project_rows(
    rows: &[(usize, TraceRow)],
    coords: Coords,
    projection: Option<Projection>,
) -> (Vec<Point2<f64>>, Option<Projection>) {
    match coords {
        Coords::Meters => (rows.iter().map(|(_, r)| Point2::new(r.x, r.y)).collect(), None),
        Coords::Latlon => {
            let proj = projection.unwrap_or_else(|| {
                Projection::around_centroid(&rows.iter().map(|(_, r)| (r.x, r.y)).collect::<Vec<_>>())
            });
            (rows.iter().map(|(_, r)| proj.project(r.x, r.y)).collect(), Some(proj))
        }
    }
}

/// Loaded trace before it is combined with obstacles and static nodes.
#[derive(Clone, Debug)]
pub struct TraceFragment {
    pub scenario: Scenario,
    pub projection: Option<Projection>,
}

/// Reads a mobility trace and resamples it on the tick grid. Gaps of at
/// most one second are interpolated linearly; longer gaps leave the node
/// absent.
pub fn load_trace(
    path: impl AsRef<Path>,
    tick_s: f64,
    environment: Environment,
    coords: Coords,
    projection: Option<Projection>,
) -> Result<TraceFragment> {
    let path = path.as_ref();
    let rows = read_trace_rows(path)?;
    let (positions, projection) = project_rows(&rows, coords, projection);

    let mut names: Vec<String> = Vec::new();
    let mut by_name: HashMap<String, usize> = HashMap::new();
    let mut tracks: Vec<Vec<NodeState>> = Vec::new();
    for ((line, row), pos) in rows.iter().zip(positions) {
        let idx = *by_name.entry(row.node_id.clone()).or_insert_with(|| {
            names.push(row.node_id.clone());
            tracks.push(Vec::new());
            names.len() - 1
        });
        let mut s = row_state(path, *line, row, pos)?;
        s.id = NodeId(idx as u32);
        if let Some(prev) = tracks[idx].last() {
            if s.time_s <= prev.time_s {
                return Err(Error::NonMonotonicTime {
                    node: row.node_id.clone(),
                    time_s: s.time_s,
                });
            }
        }
        tracks[idx].push(s);
    }

    let max_t = tracks
        .iter()
        .filter_map(|t| t.last())
        .map(|s| s.time_s)
        .fold(0.0, f64::max);
    let ticks = (max_t / tick_s + 1e-9).floor() as usize;
    let mut frames = vec![Vec::new(); ticks + 1];
    for track in &tracks {
        resample_track(track, tick_s, &mut frames);
    }
    let scenario = Scenario::new(environment, tick_s, ticks as f64 * tick_s, Vec::new(), names, frames)?;
    Ok(TraceFragment { scenario, projection })
}

fn resample_track(track: &[NodeState], tick_s: f64, frames: &mut [Vec<NodeState>]) {
    let Some(first) = track.first() else { return };
    let k0 = (first.time_s / tick_s - 1e-9).ceil().max(0.0) as usize;
    let mut seg = 0;
    for (k, frame) in frames.iter_mut().enumerate().skip(k0) {
        let t = k as f64 * tick_s;
        while seg + 1 < track.len() && track[seg + 1].time_s < t - 1e-9 {
            seg += 1;
        }
        let a = &track[seg];
        if (a.time_s - t).abs() <= 1e-9 {
            frame.push(NodeState { time_s: t, ..a.clone() });
            continue;
        }
        let Some(b) = track.get(seg + 1) else { break };
        if (b.time_s - t).abs() <= 1e-9 {
            frame.push(NodeState { time_s: t, ..b.clone() });
            continue;
        }
        if b.time_s - a.time_s > MAX_INTERPOLATION_GAP_S + 1e-9 {
            continue;
        }
        let w = (t - a.time_s) / (b.time_s - a.time_s);
        frame.push(interpolate(a, b, w, t));
    }
}

fn interpolate(a: &NodeState, b: &NodeState, w: f64, t: f64) -> NodeState {
    let dh = (b.heading_deg - a.heading_deg + 540.0).rem_euclid(360.0) - 180.0;
    NodeState {
        time_s: t,
        position: a.position.lerp(&b.position, w),
        speed_mps: a.speed_mps + (b.speed_mps - a.speed_mps) * w,
        heading_deg: (a.heading_deg + dh * w).rem_euclid(360.0),
        ..a.clone()
    }
}

/// Reads a static-node file (trace schema, role `roadside`). The first row
/// per node fixes its position.
pub fn load_static_nodes(
    path: impl AsRef<Path>,
    coords: Coords,
    projection: Option<Projection>,
) -> Result<Vec<(String, NodeState)>> {
    let path = path.as_ref();
    let rows = read_trace_rows(path)?;
    let (positions, _) = project_rows(&rows, coords, projection);
    let mut out: Vec<(String, NodeState)> = Vec::new();
    for ((line, row), pos) in rows.iter().zip(positions) {
        let s = row_state(path, *line, row, pos)?;
        if s.role != Role::Roadside {
            return Err(Error::Parse {
                path: path.into(),
                line: *line,
                reason: "static-node file rows must have role=roadside".into(),
            });
        }
        if !out.iter().any(|(n, _)| n == &row.node_id) {
            out.push((row.node_id.clone(), s));
        }
    }
    Ok(out)
}

/// Reads the obstacle file: one polygon per line as
/// `id,kind,x1;y1|x2;y2|...`. A leading `#coords=latlon` line switches the
/// vertex pairs to `lon;lat` degrees.
pub fn load_obstacles(
    path: impl AsRef<Path>,
    projection: Option<Projection>,
) -> Result<(Vec<ObstaclePolygon<f64>>, Option<Projection>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obstacles(path, &text, projection)
}

pub fn parse_obstacles(
    path: &Path,
    text: &str,
    projection: Option<Projection>,
) -> Result<(Vec<ObstaclePolygon<f64>>, Option<Projection>)> {
    let mut coords = Coords::Meters;
    // (line, id, kind, vertices)
    type Raw = (usize, String, ObstacleKind, Vec<(f64, f64)>);
    let mut raw: Vec<Raw> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(flag) = line.strip_prefix('#') {
            match flag.trim() {
                "coords=latlon" => coords = Coords::Latlon,
                "coords=meters" => coords = Coords::Meters,
                _ => {}
            }
            continue;
        }
        let bad = |reason: String| Error::Parse {
            path: path.into(),
            line: lineno,
            reason,
        };
        let mut parts = line.splitn(3, ',');
        let (Some(id), Some(kind), Some(verts)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad("expected `id,kind,x1;y1|x2;y2|...`".into()));
        };
        let kind: ObstacleKind = kind.parse().map_err(bad)?;
        let mut pts = Vec::new();
        for pair in verts.split('|') {
            let (x, y) = pair
                .split_once(';')
                .ok_or_else(|| bad(format!("bad vertex `{pair}`")))?;
            let x: f64 = x.trim().parse().map_err(|_| bad(format!("bad number `{x}`")))?;
            let y: f64 = y.trim().parse().map_err(|_| bad(format!("bad number `{y}`")))?;
            pts.push((x, y));
        }
        raw.push((lineno, id.trim().to_string(), kind, pts));
    }
    let projection = match coords {
        Coords::Meters => None,
        Coords::Latlon => Some(projection.unwrap_or_else(|| {
            Projection::around_centroid(&raw.iter().flat_map(|r| r.3.iter().copied()).collect::<Vec<_>>())
        })),
    };
    let mut polys = Vec::with_capacity(raw.len());
    for (lineno, id, kind, pts) in raw {
        let verts = pts
            .into_iter()
            .map(|(x, y)| match projection {
                Some(p) => p.project(x, y),
                None => Point2::new(x, y),
            })
            .collect();
        let poly = ObstaclePolygon::new(id, kind, verts);
        poly.validate().map_err(|e| Error::Parse {
            path: path.into(),
            line: lineno,
            reason: e.to_string(),
        })?;
        polys.push(poly);
    }
    Ok((polys, projection))
}

/// Writes a scenario in the trace schema (roadside rows included).
pub fn write_trace<W: std::io::Write>(scenario: &Scenario, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for frame in scenario.frames() {
        for n in frame {
            w.write_record([
                format!("{:.3}", n.time_s),
                scenario.node_names[n.id.0 as usize].clone(),
                n.position.x.to_string(),
                n.position.y.to_string(),
                n.speed_mps.to_string(),
                n.heading_deg.to_string(),
                n.length_m.to_string(),
                n.width_m.to_string(),
                n.body_height_m.to_string(),
                n.antenna_height_m.to_string(),
                n.role.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io("<trace>", e))?;
    Ok(())
}

pub fn write_obstacles<W: std::io::Write>(obstacles: &[ObstaclePolygon<f64>], mut out: W) -> Result<()> {
    for o in obstacles {
        let verts: Vec<String> = o.vertices().iter().map(|v| format!("{};{}", v.x, v.y)).collect();
        writeln!(out, "{},{},{}", o.id, o.kind, verts.join("|")).map_err(|e| Error::io("<obstacles>", e))?;
    }
    Ok(())
}

fn is_tall(rng: &mut impl Rng, share: f64) -> bool {
    rng.random::<f64>() < share
}

fn vehicle_template(id: NodeId, tall: bool) -> NodeState {
    let mut s = NodeState::vehicle(id, 0.0, Point2::new(0.0, 0.0), 0.0);
    if tall {
        s.body_height_m = TALL_VEHICLE_HEIGHT_M;
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HighwayParams {
    pub length_m: f64,
    pub lanes: u32,
    pub vehicles: u32,
    pub mean_speed_mps: f64,
    pub duration_s: f64,
    #[serde(default = "default_tick")]
    pub tick_s: f64,
    /// Share of vehicles with a tall body; with default heights these are
    /// the only ones that block car-to-car rays.
    #[serde(default = "default_tall_share")]
    pub tall_share: f64,
}

fn default_tick() -> f64 {
    DEFAULT_TICK_S
}

fn default_tall_share() -> f64 {
    TALL_VEHICLE_SHARE
}

fn check_tall_share(share: f64) -> Result<()> {
    if (0.0..=1.0).contains(&share) {
        Ok(())
    } else {
        Err(Error::config(format!("tall_share {share} outside [0, 1]")))
    }
}

impl HighwayParams {
    /// 150 vehicles at the density of a 404-vehicle, 12.5 km, 3-lane road.
    pub fn desk_scale(duration_s: f64) -> Self {
        Self {
            length_m: 150.0 / 404.0 * 12_500.0,
            lanes: 3,
            vehicles: 150,
            mean_speed_mps: 30.0,
            duration_s,
            tick_s: DEFAULT_TICK_S,
            tall_share: TALL_VEHICLE_SHARE,
        }
    }
}

/// Straight multi-lane stretch. Lanes alternate direction, every lane runs
/// at its own speed (mean ±10%) and vehicles wrap around at the ends so the
/// density stays constant. Inter-vehicle gaps are exponential, rescaled to
/// fill the lane exactly.
pub fn gen_highway(p: &HighwayParams, seed: u64) -> Result<Scenario> {
    if p.vehicles == 0 || p.lanes == 0 {
        return Err(Error::config("highway needs at least one vehicle and one lane"));
    }
    if !(p.length_m > 0.0) || !(p.mean_speed_mps >= 0.0) {
        return Err(Error::config("highway length must be > 0 and speed >= 0"));
    }
    check_tall_share(p.tall_share)?;
    let per_lane = p.vehicles.div_ceil(p.lanes) as f64;
    if per_lane * VEHICLE_LENGTH_M > p.length_m {
        return Err(Error::Capacity(format!(
            "{} vehicles do not fit on {} lanes of {} m",
            p.vehicles, p.lanes, p.length_m
        )));
    }
    let ticks = ticks_in(p.duration_s, p.tick_s)?;
    let mut rng = rng::generator(rng::derive_seed(seed, Stream::Scenario, 1));

    struct Placed {
        state: NodeState,
        x0: f64,
        dir: f64,
    }
    let mut placed = Vec::with_capacity(p.vehicles as usize);
    for lane in 0..p.lanes {
        let ids: Vec<u32> = (0..p.vehicles).filter(|i| i % p.lanes == lane).collect();
        if ids.is_empty() {
            continue;
        }
        let speed = p.mean_speed_mps * rng.random_range(0.9..=1.1);
        let (dir, heading) = if lane % 2 == 0 { (1.0, 90.0) } else { (-1.0, 270.0) };
        let gaps: Vec<f64> = ids.iter().map(|_| Exp1.sample(&mut rng)).collect();
        let free = p.length_m - ids.len() as f64 * VEHICLE_LENGTH_M;
        let total: f64 = gaps.iter().sum();
        let offset = rng.random_range(0.0..p.length_m);
        let mut x = offset;
        for (&id, gap) in ids.iter().zip(&gaps) {
            let mut s = vehicle_template(NodeId(id), is_tall(&mut rng, p.tall_share));
            s.speed_mps = speed;
            s.heading_deg = heading;
            s.position = Point2::new(0.0, lane as f64 * HIGHWAY_LANE_WIDTH_M);
            placed.push(Placed { state: s, x0: x, dir });
            x += VEHICLE_LENGTH_M + gap / total * free;
        }
    }
    placed.sort_by_key(|v| v.state.id);

    let frames = (0..=ticks)
        .map(|k| {
            let t = k as f64 * p.tick_s;
            placed
                .iter()
                .map(|v| {
                    let mut s = v.state.clone();
                    s.time_s = t;
                    s.position.x = (v.x0 + v.dir * s.speed_mps * t).rem_euclid(p.length_m);
                    s
                })
                .collect()
        })
        .collect();
    let names = (0..p.vehicles).map(|i| i.to_string()).collect();
    Scenario::new(
        Environment::Highway,
        p.tick_s,
        ticks as f64 * p.tick_s,
        Vec::new(),
        names,
        frames,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UrbanParams {
    pub blocks_x: u32,
    pub blocks_y: u32,
    pub block_m: f64,
    pub street_m: f64,
    pub vehicles: u32,
    pub mean_speed_mps: f64,
    pub duration_s: f64,
    #[serde(default = "default_tick")]
    pub tick_s: f64,
    /// Share of vehicles with a tall body; with default heights these are
    /// the only ones that block car-to-car rays.
    #[serde(default = "default_tall_share")]
    pub tall_share: f64,
}

impl UrbanParams {
    /// 500 vehicles on a 10 × 10 block grid of roughly 1 km².
    pub fn desk_scale(duration_s: f64) -> Self {
        Self {
            blocks_x: 10,
            blocks_y: 10,
            block_m: 80.0,
            street_m: 20.0,
            vehicles: 500,
            mean_speed_mps: 10.0,
            duration_s,
            tick_s: DEFAULT_TICK_S,
            tall_share: TALL_VEHICLE_SHARE,
        }
    }
}

/// Street layout of a Manhattan grid: street centerlines sit at
/// `street/2 + i * (block + street)`; building blocks fill the gaps.
#[derive(Clone, Copy, Debug)]
pub struct UrbanGrid {
    pub blocks_x: u32,
    pub blocks_y: u32,
    pub block_m: f64,
    pub street_m: f64,
}

/// Travel direction on the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridDir {
    East,
    North,
    West,
    South,
}

impl GridDir {
    const ALL: [GridDir; 4] = [GridDir::East, GridDir::North, GridDir::West, GridDir::South];

    pub fn heading_deg(self) -> f64 {
        match self {
            GridDir::North => 0.0,
            GridDir::East => 90.0,
            GridDir::South => 180.0,
            GridDir::West => 270.0,
        }
    }

    fn unit(self) -> (i64, i64) {
        match self {
            GridDir::East => (1, 0),
            GridDir::North => (0, 1),
            GridDir::West => (-1, 0),
            GridDir::South => (0, -1),
        }
    }

    fn left(self) -> Self {
        Self::ALL[(self as usize + 1) % 4]
    }

    fn right(self) -> Self {
        Self::ALL[(self as usize + 3) % 4]
    }
}

impl UrbanGrid {
    pub fn pitch(&self) -> f64 {
        self.block_m + self.street_m
    }

    pub fn street_coord(&self, i: i64) -> f64 {
        self.street_m / 2.0 + i as f64 * self.pitch()
    }

    pub fn buildings(&self) -> Vec<ObstaclePolygon<f64>> {
        let mut out = Vec::with_capacity((self.blocks_x * self.blocks_y) as usize);
        for j in 0..self.blocks_y {
            for i in 0..self.blocks_x {
                let x0 = self.street_m + i as f64 * self.pitch();
                let y0 = self.street_m + j as f64 * self.pitch();
                out.push(ObstaclePolygon::rectangle(
                    format!("b{i}_{j}"),
                    ObstacleKind::Building,
                    x0,
                    y0,
                    x0 + self.block_m,
                    y0 + self.block_m,
                ));
            }
        }
        out
    }

    /// Number of street segments between adjacent intersections.
    pub fn street_segments(&self) -> u64 {
        let (bx, by) = (self.blocks_x as u64, self.blocks_y as u64);
        bx * (by + 1) + by * (bx + 1)
    }

    fn inside(&self, i: i64, j: i64) -> bool {
        (0..=self.blocks_x as i64).contains(&i) && (0..=self.blocks_y as i64).contains(&j)
    }

    /// Directions a vehicle arriving at `(i, j)` heading `dir` may take:
    /// straight, left or right, restricted to the grid.
    pub fn exits(&self, i: i64, j: i64, dir: GridDir) -> Vec<GridDir> {
        [dir, dir.left(), dir.right()]
            .into_iter()
            .filter(|d| {
                let (di, dj) = d.unit();
                self.inside(i + di, j + dj)
            })
            .collect()
    }

    /// Center of the right-hand lane at distance `s` from intersection `(i, j)`.
    pub fn lane_position(&self, i: i64, j: i64, dir: GridDir, s: f64) -> Point2<f64> {
        let (di, dj) = dir.unit();
        let (ri, rj) = dir.right().unit();
        let off = self.street_m / 4.0;
        Point2::new(
            self.street_coord(i) + di as f64 * s + ri as f64 * off,
            self.street_coord(j) + dj as f64 * s + rj as f64 * off,
        )
    }
}

/// Manhattan grid of square building blocks with vehicles driving in the
/// right-hand lane of each street and picking uniformly among the allowed
/// straight/left/right exits at every intersection.
pub fn gen_urban_grid(p: &UrbanParams, seed: u64) -> Result<Scenario> {
    if p.blocks_x == 0 || p.blocks_y == 0 || !(p.block_m > 0.0) || !(p.street_m > 0.0) || p.vehicles == 0 {
        return Err(Error::config("urban grid dimensions and vehicle count must be > 0"));
    }
    check_tall_share(p.tall_share)?;
    // Lanes sit at street/4 from the centerline; the widest footprint must
    // clear the building line.
    if p.street_m / 4.0 + VEHICLE_WIDTH_M / 2.0 >= p.street_m / 2.0 || p.street_m / 2.0 < VEHICLE_LENGTH_M / 2.0 {
        return Err(Error::config(format!(
            "street width {} m is too narrow for two lanes",
            p.street_m
        )));
    }
    let grid = UrbanGrid {
        blocks_x: p.blocks_x,
        blocks_y: p.blocks_y,
        block_m: p.block_m,
        street_m: p.street_m,
    };
    let lane_len = 2.0 * grid.street_segments() as f64 * grid.pitch();
    if p.vehicles as f64 * (VEHICLE_LENGTH_M + 2.0) > lane_len {
        return Err(Error::Capacity(format!(
            "{} vehicles exceed {:.0} m of lane length",
            p.vehicles, lane_len
        )));
    }
    let ticks = ticks_in(p.duration_s, p.tick_s)?;
    let mut rng = rng::generator(rng::derive_seed(seed, Stream::Scenario, 2));

    struct Mover {
        template: NodeState,
        i: i64,
        j: i64,
        dir: GridDir,
        s: f64,
    }
    let mut movers = Vec::with_capacity(p.vehicles as usize);
    for id in 0..p.vehicles {
        let (i, j, dir) = loop {
            let i = rng.random_range(0..=p.blocks_x as i64);
            let j = rng.random_range(0..=p.blocks_y as i64);
            let dir = GridDir::ALL[rng.random_range(0..4)];
            let (di, dj) = dir.unit();
            if grid.inside(i + di, j + dj) {
                break (i, j, dir);
            }
        };
        let s = rng.random_range(0.0..grid.pitch());
        let mut template = vehicle_template(NodeId(id), is_tall(&mut rng, p.tall_share));
        template.speed_mps = p.mean_speed_mps * rng.random_range(0.9..=1.1);
        movers.push(Mover { template, i, j, dir, s });
    }

    let mut frames = Vec::with_capacity(ticks + 1);
    for k in 0..=ticks {
        let t = k as f64 * p.tick_s;
        if k > 0 {
            for m in &mut movers {
                m.s += m.template.speed_mps * p.tick_s;
                while m.s >= grid.pitch() {
                    m.s -= grid.pitch();
                    let (di, dj) = m.dir.unit();
                    m.i += di;
                    m.j += dj;
                    let exits = grid.exits(m.i, m.j, m.dir);
                    m.dir = exits[rng.random_range(0..exits.len())];
                }
            }
        }
        frames.push(
            movers
                .iter()
                .map(|m| NodeState {
                    time_s: t,
                    position: grid.lane_position(m.i, m.j, m.dir, m.s),
                    heading_deg: m.dir.heading_deg(),
                    ..m.template.clone()
                })
                .collect(),
        );
    }
    let names = (0..p.vehicles).map(|i| i.to_string()).collect();
    Scenario::new(
        Environment::Urban,
        p.tick_s,
        ticks as f64 * p.tick_s,
        grid.buildings(),
        names,
        frames,
    )
}

/// Nodes that never move, present for `duration_s`.
pub fn static_scenario(
    environment: Environment,
    nodes: Vec<NodeState>,
    duration_s: f64,
    tick_s: f64,
    obstacles: Vec<ObstaclePolygon<f64>>,
) -> Result<Scenario> {
    let ticks = ticks_in(duration_s, tick_s)?;
    let names = (0..nodes.len()).map(|i| i.to_string()).collect();
    let nodes: Vec<NodeState> = nodes
        .into_iter()
        .enumerate()
        .map(|(i, mut n)| {
            n.id = NodeId(i as u32);
            n.speed_mps = 0.0;
            n
        })
        .collect();
    let frames = (0..=ticks)
        .map(|k| {
            nodes
                .iter()
                .map(|n| NodeState {
                    time_s: k as f64 * tick_s,
                    ..n.clone()
                })
                .collect()
        })
        .collect();
    Scenario::new(environment, tick_s, ticks as f64 * tick_s, obstacles, names, frames)
}
