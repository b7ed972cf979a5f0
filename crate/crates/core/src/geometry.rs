//! Planar geometry, obstacle indexing and LOS / NLOSv / NLOSb link
//! classification.
//!
//! Primitives are generic over the coordinate scalar; link classification
//! works on [`NodeState`] snapshots, which are `f64`.

use std::cell::RefCell;
use std::fmt;

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::{NodeState, Role};

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Float> Point2<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dist(&self, other: &Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::new(self.x - other.x, self.y - other.y)
    }

    pub fn dot(&self, other: &Self) -> T {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(&self, other: &Self) -> T {
        self.x * other.y - self.y * other.x
    }

    pub fn lerp(&self, other: &Self, t: T) -> Self {
        Self::new(self.x + (other.x - self.x) * t, self.y + (other.y - self.y) * t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObstacleKind {
    Building,
    Foliage,
}

impl fmt::Display for ObstacleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObstacleKind::Building => "building",
            ObstacleKind::Foliage => "foliage",
        })
    }
}

impl std::str::FromStr for ObstacleKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "building" => Ok(ObstacleKind::Building),
            "foliage" => Ok(ObstacleKind::Foliage),
            other => Err(format!("unknown obstacle kind `{other}`")),
        }
    }
}

/// Footprint of a building or foliage patch.
#[derive(Clone, Debug, PartialEq)]
pub struct ObstaclePolygon<T> {
    pub id: String,
    pub kind: ObstacleKind,
    vertices: Vec<Point2<T>>,
    min: Point2<T>,
    max: Point2<T>,
    /// +1 for a strictly convex counter-clockwise ring, -1 for clockwise,
    /// 0 otherwise.
    convex: i8,
}

impl<T: Float> ObstaclePolygon<T> {
    /// Stores the polygon without validating it; see [`Self::validate`].
    pub fn new(id: impl Into<String>, kind: ObstacleKind, vertices: Vec<Point2<T>>) -> Self {
        let mut min = Point2::new(T::infinity(), T::infinity());
        let mut max = Point2::new(T::neg_infinity(), T::neg_infinity());
        for v in &vertices {
            min = Point2::new(min.x.min(v.x), min.y.min(v.y));
            max = Point2::new(max.x.max(v.x), max.y.max(v.y));
        }
        let convex = convexity(&vertices);
        Self {
            id: id.into(),
            kind,
            vertices,
            min,
            max,
            convex,
        }
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    pub fn rectangle(id: impl Into<String>, kind: ObstacleKind, x0: T, y0: T, x1: T, y1: T) -> Self {
        Self::new(
            id,
            kind,
            vec![
                Point2::new(x0, y0),
                Point2::new(x1, y0),
                Point2::new(x1, y1),
                Point2::new(x0, y1),
            ],
        )
    }

    pub fn vertices(&self) -> &[Point2<T>] {
        &self.vertices
    }

    pub fn bbox(&self) -> (Point2<T>, Point2<T>) {
        (self.min, self.max)
    }

    fn edges(&self) -> impl Iterator<Item = (Point2<T>, Point2<T>)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Checks the simple-polygon invariants.
    pub fn validate(&self) -> Result<()> {
        let reject = |reason: &str| Error::InvalidPolygon {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        let n = self.vertices.len();
        if n < 3 {
            return Err(reject("fewer than 3 vertices"));
        }
        if self.vertices.iter().any(|v| !v.is_finite()) {
            return Err(reject("non-finite coordinate"));
        }
        let edges: Vec<_> = self.edges().collect();
        for i in 0..n {
            if edges[i].0 == edges[i].1 {
                return Err(reject("repeated vertex"));
            }
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    // Adjacent edges share a vertex; they must not fold back
                    // onto each other.
                    let (a, b) = edges[i];
                    let (_, d) = edges[j];
                    let shared_is_b = j == i + 1;
                    let (p, q, r) = if shared_is_b { (a, b, d) } else { (edges[j].0, a, b) };
                    if orient(p, q, r) == T::zero() && (r.sub(&q)).dot(&p.sub(&q)) > T::zero() {
                        return Err(reject("self-intersecting"));
                    }
                    continue;
                }
                if segments_intersect(edges[i].0, edges[i].1, edges[j].0, edges[j].1) {
                    return Err(reject("self-intersecting"));
                }
            }
        }
        if self.signed_area() == T::zero() {
            return Err(reject("vertices are collinear"));
        }
        Ok(())
    }

    pub fn signed_area(&self) -> T {
        let two = T::one() + T::one();
        self.edges().fold(T::zero(), |acc, (a, b)| acc + a.cross(&b)) / two
    }

    /// Even–odd interior test. Points exactly on the boundary may go either
    /// way; callers test boundary contact separately.
    pub fn contains(&self, p: Point2<T>) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }
}

fn convexity<T: Float>(v: &[Point2<T>]) -> i8 {
    let n = v.len();
    if n < 3 {
        return 0;
    }
    let (mut pos, mut neg) = (0, 0);
    for i in 0..n {
        let o = orient(v[i], v[(i + 1) % n], v[(i + 2) % n]);
        if o > T::zero() {
            pos += 1;
        } else if o < T::zero() {
            neg += 1;
        }
    }
    if pos == n {
        1
    } else if neg == n {
        -1
    } else {
        0
    }
}

#[inline]
fn orient<T: Float>(a: Point2<T>, b: Point2<T>, c: Point2<T>) -> T {
    b.sub(&a).cross(&c.sub(&a))
}

#[inline]
fn within<T: Float>(a: Point2<T>, b: Point2<T>, p: Point2<T>) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test. Touching and collinear overlap count.
pub fn segments_intersect<T: Float>(p1: Point2<T>, p2: Point2<T>, q1: Point2<T>, q2: Point2<T>) -> bool {
    let zero = T::zero();
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > zero && d2 < zero) || (d1 < zero && d2 > zero)) && ((d3 > zero && d4 < zero) || (d3 < zero && d4 > zero))
    {
        return true;
    }
    (d1 == zero && within(q1, q2, p1))
        || (d2 == zero && within(q1, q2, p2))
        || (d3 == zero && within(p1, p2, q1))
        || (d4 == zero && within(p1, p2, q2))
}

/// True when segment `ab` touches the polygon boundary or lies inside it.
/// Grazing contact with an edge or vertex counts as an intersection.
pub fn segment_intersects_polygon<T: Float>(a: Point2<T>, b: Point2<T>, poly: &ObstaclePolygon<T>) -> bool {
    let (lo, hi) = poly.bbox();
    if a.x.max(b.x) < lo.x || a.x.min(b.x) > hi.x || a.y.max(b.y) < lo.y || a.y.min(b.y) > hi.y {
        return false;
    }
    if poly.convex != 0 {
        // Separating axes of a segment and a convex polygon: the segment's
        // normal and the polygon's edge normals. Contact is not separation.
        let zero = T::zero();
        let v = &poly.vertices;
        let first = orient(a, b, v[0]);
        if first != zero
            && v.iter()
                .all(|&p| (orient(a, b, p) > zero) == (first > zero) && orient(a, b, p) != zero)
        {
            return false;
        }
        let outside = |o: T| if poly.convex > 0 { o < zero } else { o > zero };
        return !poly
            .edges()
            .any(|(p, q)| outside(orient(p, q, a)) && outside(orient(p, q, b)));
    }
    if poly.edges().any(|(p, q)| segments_intersect(a, b, p, q)) {
        return true;
    }
    poly.contains(a)
}

/// Uniform-grid bucketing shared by the obstacle index and per-tick node
/// grids. Items are registered in every cell their bounding box overlaps.
#[derive(Clone, Debug)]
struct Grid<T> {
    origin: Point2<T>,
    cell: T,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

const MAX_CELLS: usize = 1 << 20;

impl<T: Float> Grid<T> {
    fn new(min: Point2<T>, max: Point2<T>, cell_hint: T) -> Self {
        let w = (max.x - min.x).max(T::one());
        let h = (max.y - min.y).max(T::one());
        let mut cell = cell_hint.max(T::one());
        let dims = |cell: T| {
            (
                (w / cell).ceil().to_usize().unwrap_or(1).max(1),
                (h / cell).ceil().to_usize().unwrap_or(1).max(1),
            )
        };
        let (mut nx, mut ny) = dims(cell);
        while nx.saturating_mul(ny) > MAX_CELLS {
            cell = cell + cell;
            (nx, ny) = dims(cell);
        }
        Self {
            origin: min,
            cell,
            nx,
            ny,
            cells: vec![Vec::new(); nx * ny],
        }
    }

    fn col(&self, x: T) -> isize {
        ((x - self.origin.x) / self.cell)
            .floor()
            .to_isize()
            .unwrap_or(isize::MIN)
    }

    fn row(&self, y: T) -> isize {
        ((y - self.origin.y) / self.cell)
            .floor()
            .to_isize()
            .unwrap_or(isize::MIN)
    }

    fn clamp_range(&self, lo: isize, hi: isize, n: usize) -> Option<(usize, usize)> {
        if hi < 0 || lo >= n as isize {
            return None;
        }
        Some((lo.max(0) as usize, hi.min(n as isize - 1) as usize))
    }

    fn insert(&mut self, id: u32, min: Point2<T>, max: Point2<T>) {
        let Some((c0, c1)) = self.clamp_range(self.col(min.x), self.col(max.x), self.nx) else {
            return;
        };
        let Some((r0, r1)) = self.clamp_range(self.row(min.y), self.row(max.y), self.ny) else {
            return;
        };
        for r in r0..=r1 {
            for c in c0..=c1 {
                self.cells[r * self.nx + c].push(id);
            }
        }
    }

    /// Visits every cell the segment passes within `margin` of. Conservative:
    /// may visit a few extra cells, never misses one.
    fn for_each_cell_along(&self, a: Point2<T>, b: Point2<T>, margin: T, mut visit: impl FnMut(&[u32])) {
        let ylo = a.y.min(b.y) - margin;
        let yhi = a.y.max(b.y) + margin;
        let Some((r0, r1)) = self.clamp_range(self.row(ylo), self.row(yhi), self.ny) else {
            return;
        };
        let dy = b.y - a.y;
        let dx = b.x - a.x;
        let slack = self.cell * T::from(1e-9).unwrap() + margin;
        for r in r0..=r1 {
            let row_lo = self.origin.y + self.cell * T::from(r).unwrap();
            let row_hi = row_lo + self.cell;
            // Part of the segment whose y lies in the (margin-expanded) row.
            let y0 = (row_lo - margin).max(a.y.min(b.y));
            let y1 = (row_hi + margin).min(a.y.max(b.y));
            let (xlo, xhi) = if dy == T::zero() || dx == T::zero() {
                (a.x.min(b.x), a.x.max(b.x))
            } else {
                let xa = a.x + (y0 - a.y) / dy * dx;
                let xb = a.x + (y1 - a.y) / dy * dx;
                (xa.min(xb), xa.max(xb))
            };
            let Some((c0, c1)) = self.clamp_range(self.col(xlo - slack), self.col(xhi + slack), self.nx) else {
                continue;
            };
            for c in c0..=c1 {
                let ids = &self.cells[r * self.nx + c];
                if !ids.is_empty() {
                    visit(ids);
                }
            }
        }
    }
}

#[derive(Default)]
struct Scratch {
    ids: Vec<u32>,
    stamp: Vec<u32>,
    generation: u32,
}

thread_local! {
    static SCRATCH: RefCell<Scratch> = RefCell::new(Scratch::default());
}

/// Collects the deduplicated ids from the cells along a segment, in
/// traversal order, and hands them to `f`.
fn with_candidates<T: Float, R>(
    grid: &Grid<T>,
    a: Point2<T>,
    b: Point2<T>,
    margin: T,
    f: impl FnOnce(&[u32]) -> R,
) -> R {
    SCRATCH.with(|s| {
        let mut s = s.borrow_mut();
        let s = &mut *s;
        s.generation = s.generation.wrapping_add(1);
        if s.generation == 0 {
            s.stamp.fill(0);
            s.generation = 1;
        }
        let generation = s.generation;
        let (ids, stamp) = (&mut s.ids, &mut s.stamp);
        ids.clear();
        grid.for_each_cell_along(a, b, margin, |cell| {
            for &i in cell {
                let k = i as usize;
                if k >= stamp.len() {
                    stamp.resize(k + 1, 0);
                }
                if stamp[k] != generation {
                    stamp[k] = generation;
                    ids.push(i);
                }
            }
        });
        f(ids)
    })
}

/// Grid accelerator over the static obstacle set.
#[derive(Clone, Debug)]
pub struct SpatialIndex<T> {
    polygons: Vec<ObstaclePolygon<T>>,
    grid: Option<Grid<T>>,
}

impl<T: Float> SpatialIndex<T> {
    /// Validates every polygon and buckets it into a uniform grid sized from
    /// the mean footprint extent.
    pub fn build(polygons: Vec<ObstaclePolygon<T>>) -> Result<Self> {
        for p in &polygons {
            p.validate()?;
        }
        if polygons.is_empty() {
            return Ok(Self { polygons, grid: None });
        }
        let mut min = Point2::new(T::infinity(), T::infinity());
        let mut max = Point2::new(T::neg_infinity(), T::neg_infinity());
        let mut extent = T::zero();
        for p in &polygons {
            let (lo, hi) = p.bbox();
            min = Point2::new(min.x.min(lo.x), min.y.min(lo.y));
            max = Point2::new(max.x.max(hi.x), max.y.max(hi.y));
            extent = extent + (hi.x - lo.x).max(hi.y - lo.y);
        }
        let mean_extent = extent / T::from(polygons.len()).unwrap();
        let mut grid = Grid::new(min, max, mean_extent * T::from(2.0).unwrap());
        for (i, p) in polygons.iter().enumerate() {
            let (lo, hi) = p.bbox();
            grid.insert(i as u32, lo, hi);
        }
        Ok(Self {
            polygons,
            grid: Some(grid),
        })
    }

    pub fn polygons(&self) -> &[ObstaclePolygon<T>] {
        &self.polygons
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    /// Polygons whose grid cells the segment passes through: a superset of
    /// the intersecting set.
    pub fn candidates(&self, a: Point2<T>, b: Point2<T>) -> Vec<usize> {
        match &self.grid {
            None => Vec::new(),
            Some(g) => {
                let mut v: Vec<usize> =
                    with_candidates(g, a, b, T::zero(), |ids| ids.iter().map(|&i| i as usize).collect());
                v.sort_unstable();
                v
            }
        }
    }

    /// Exact set of polygons the segment intersects, ascending by position.
    pub fn intersecting(&self, a: Point2<T>, b: Point2<T>) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_intersecting(a, b, |i, _| {
            out.push(i);
            true
        });
        out.sort_unstable();
        out
    }

    /// Calls `f` for each intersecting polygon, in no particular order,
    /// until it returns false.
    pub fn for_each_intersecting(
        &self,
        a: Point2<T>,
        b: Point2<T>,
        mut f: impl FnMut(usize, &ObstaclePolygon<T>) -> bool,
    ) {
        let Some(g) = &self.grid else { return };
        with_candidates(g, a, b, T::zero(), |ids| {
            for &i in ids {
                let poly = &self.polygons[i as usize];
                if segment_intersects_polygon(a, b, poly) && !f(i as usize, poly) {
                    break;
                }
            }
        });
    }
}

/// Obstruction class of one transmitter–receiver link.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LinkClass {
    #[serde(rename = "LOS")]
    Los,
    #[serde(rename = "NLOSv")]
    NlosV,
    #[serde(rename = "NLOSb")]
    NlosB,
}

impl LinkClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            LinkClass::Los => "LOS",
            LinkClass::NlosV => "NLOSv",
            LinkClass::NlosB => "NLOSb",
        }
    }
}

impl fmt::Display for LinkClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LinkClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "LOS" => Ok(LinkClass::Los),
            "NLOSv" => Ok(LinkClass::NlosV),
            "NLOSb" => Ok(LinkClass::NlosB),
            other => Err(format!("unknown link class `{other}`")),
        }
    }
}

/// Everything the channel needs to know about a link's obstructions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct LinkGeometry {
    pub class: Option<LinkClass>,
    pub vehicle_blockers: u32,
    pub buildings: u32,
    pub foliage: u32,
}

impl LinkGeometry {
    pub fn class(&self) -> LinkClass {
        self.class.unwrap_or(LinkClass::Los)
    }
}

/// Immutable per-tick node snapshot with a grid over vehicle footprints.
pub struct NodeSet<'a> {
    nodes: &'a [NodeState],
    grid: Option<Grid<f64>>,
    reach: f64,
}

const NODE_CELL_M: f64 = 50.0;

impl<'a> NodeSet<'a> {
    pub fn new(nodes: &'a [NodeState]) -> Self {
        let mut reach: f64 = 0.0;
        let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        let mut any = false;
        for n in nodes.iter().filter(|n| n.blocks_rays()) {
            any = true;
            reach = reach.max(n.footprint_radius());
            min = Point2::new(min.x.min(n.position.x), min.y.min(n.position.y));
            max = Point2::new(max.x.max(n.position.x), max.y.max(n.position.y));
        }
        let grid = any.then(|| {
            let mut g = Grid::new(min, max, NODE_CELL_M);
            for (i, n) in nodes.iter().enumerate().filter(|(_, n)| n.blocks_rays()) {
                g.insert(i as u32, n.position, n.position);
            }
            g
        });
        Self { nodes, grid, reach }
    }

    pub fn nodes(&self) -> &'a [NodeState] {
        self.nodes
    }

    /// Visits nodes whose footprint could touch the segment.
    fn for_each_candidate(&self, a: Point2<f64>, b: Point2<f64>, mut f: impl FnMut(&NodeState)) {
        let Some(g) = &self.grid else { return };
        with_candidates(g, a, b, self.reach, |ids| {
            for &i in ids {
                f(&self.nodes[i as usize]);
            }
        });
    }
}

/// True when the footprint of `node` blocks the straight ray between the two
/// antennas: the 2-D segment crosses the footprint and the body is taller
/// than the ray at the node's projection onto the segment.
pub fn blocks_ray(node: &NodeState, tx: &NodeState, rx: &NodeState) -> bool {
    if !node.blocks_rays() || node.id == tx.id || node.id == rx.id {
        return false;
    }
    let a = tx.position;
    let b = rx.position;
    let ab = b.sub(&a);
    let len2 = ab.dot(&ab);
    let t = if len2 > 0.0 {
        (node.position.sub(&a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let ray_height = tx.antenna_height_m + (rx.antenna_height_m - tx.antenna_height_m) * t;
    node.body_height_m > ray_height && segment_hits_footprint(a, b, node)
}

/// Closed segment vs oriented rectangle, by clipping in the vehicle frame.
fn segment_hits_footprint(a: Point2<f64>, b: Point2<f64>, node: &NodeState) -> bool {
    let c = node.position;
    let r = node.footprint_radius();
    // Cheap reject: distance from center to the segment exceeds the
    // half-diagonal.
    let ab = b.sub(&a);
    let len2 = ab.dot(&ab);
    let t = if len2 > 0.0 {
        (c.sub(&a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    if a.lerp(&b, t).dist(&c) > r {
        return false;
    }
    let (s, co) = node.heading_deg.to_radians().sin_cos();
    // Heading is clockwise from north: forward = (sin, cos), right = (cos, -sin).
    let local = |p: Point2<f64>| {
        let d = p.sub(&c);
        (d.x * s + d.y * co, d.x * co - d.y * s)
    };
    let (u0, v0) = local(a);
    let (u1, v1) = local(b);
    let hu = node.length_m / 2.0;
    let hv = node.width_m / 2.0;
    let (mut t0, mut t1) = (0.0_f64, 1.0_f64);
    for (p0, d, lim) in [(u0, u1 - u0, hu), (v0, v1 - v0, hv)] {
        if d == 0.0 {
            if p0.abs() > lim {
                return false;
            }
            continue;
        }
        let mut ta = (-lim - p0) / d;
        let mut tb = (lim - p0) / d;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return false;
        }
    }
    true
}

/// Full obstruction analysis of a link. Building/foliage contact makes the
/// link NLOSb (vehicle blockers are then not counted); otherwise any
/// blocking vehicle makes it NLOSv.
pub fn analyze_link(tx: &NodeState, rx: &NodeState, nodes: &NodeSet<'_>, index: &SpatialIndex<f64>) -> LinkGeometry {
    analyze_link_with(tx, rx, nodes, obstacle_counts(tx, rx, index))
}

/// Buildings and foliage patches crossed by the segment between two nodes.
/// The query always runs from the lower id, so the result is symmetric.
pub fn obstacle_counts(a: &NodeState, b: &NodeState, index: &SpatialIndex<f64>) -> (u32, u32) {
    let (p, q) = if a.id <= b.id { (a, b) } else { (b, a) };
    let (mut buildings, mut foliage) = (0, 0);
    index.for_each_intersecting(p.position, q.position, |_, poly| {
        match poly.kind {
            ObstacleKind::Building => buildings += 1,
            ObstacleKind::Foliage => foliage += 1,
        }
        true
    });
    (buildings, foliage)
}

/// Classification given precomputed `(buildings, foliage)` counts.
pub fn analyze_link_with(tx: &NodeState, rx: &NodeState, nodes: &NodeSet<'_>, counts: (u32, u32)) -> LinkGeometry {
    let mut geo = LinkGeometry {
        buildings: counts.0,
        foliage: counts.1,
        ..LinkGeometry::default()
    };
    if geo.buildings + geo.foliage > 0 {
        geo.class = Some(LinkClass::NlosB);
        return geo;
    }
    geo.vehicle_blockers = obstructing_vehicle_count(tx, rx, nodes);
    geo.class = Some(if geo.vehicle_blockers > 0 {
        LinkClass::NlosV
    } else {
        LinkClass::Los
    });
    geo
}

pub fn classify_link(tx: &NodeState, rx: &NodeState, nodes: &NodeSet<'_>, index: &SpatialIndex<f64>) -> LinkClass {
    analyze_link(tx, rx, nodes, index).class()
}

/// Number of distinct nodes blocking the ray per the height test.
pub fn obstructing_vehicle_count(tx: &NodeState, rx: &NodeState, nodes: &NodeSet<'_>) -> u32 {
    let mut count = 0;
    nodes.for_each_candidate(tx.position, rx.position, |n| {
        if blocks_ray(n, tx, rx) {
            count += 1;
        }
    });
    count
}

impl NodeState {
    /// Only vehicles have a physical footprint.
    pub fn blocks_rays(&self) -> bool {
        self.role == Role::Vehicle && self.length_m > 0.0 && self.width_m > 0.0
    }

    pub fn footprint_radius(&self) -> f64 {
        0.5 * self.length_m.hypot(self.width_m)
    }
}
