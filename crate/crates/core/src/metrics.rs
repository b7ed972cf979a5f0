//! Delivery ratio, neighbor awareness ratio and remote neighbor awareness
//! ratio over a run.
//!
//! All three are computed by streaming tallies that implement
//! [`SampleSink`], so they can be attached to a simulation directly instead
//! of storing the log.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::beaconing::{FnSink, SampleSink, SimLog};
use crate::channel::LinkSample;
use crate::error::{Error, Result};
use crate::mobility::{NodeId, Scenario};
use crate::rng::{self, Stream};

pub const PDR_BIN_M: f64 = 25.0;
pub const NAR_BIN_M: f64 = 50.0;
pub const WINDOW_S: f64 = 1.0;
pub const MIN_SAMPLES: u64 = 40;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "PDR")]
    Pdr,
    #[serde(rename = "NAR")]
    Nar,
    #[serde(rename = "RNAR")]
    Rnar,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Pdr => "PDR",
            Metric::Nar => "NAR",
            Metric::Rnar => "RNAR",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeValue {
    pub node: NodeId,
    pub value: f64,
    pub samples: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub center_m: f64,
    pub per_node: Vec<NodeValue>,
    pub mean: f64,
    /// Standard deviation across nodes.
    pub std: f64,
    pub sample_count: u64,
    pub excluded: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedSeries {
    pub metric: Metric,
    pub bin_width_m: f64,
    pub window_s: Option<f64>,
    pub min_samples: u64,
    /// Populated bins in increasing distance.
    pub bins: Vec<Bin>,
}

impl BinnedSeries {
    /// Bins that meet the sample floor.
    pub fn included(&self) -> impl Iterator<Item = &Bin> {
        self.bins.iter().filter(|b| !b.excluded)
    }

    pub fn bin_at(&self, center_m: f64) -> Option<&Bin> {
        self.bins.iter().find(|b| (b.center_m - center_m).abs() < 1e-9)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "bin_center_m,mean,std,n")?;
        for b in self.included() {
            writeln!(out, "{},{},{},{}", b.center_m, b.mean, b.std, b.sample_count)?;
        }
        Ok(())
    }

    /// A gnuplot script drawing the mean with one-std error bars from
    /// `csv_name`.
    pub fn gnuplot(&self, csv_name: &str, title: &str) -> String {
        let xmax = self.bins.last().map_or(100.0, |b| b.center_m + self.bin_width_m);
        format!(
            "set datafile separator ','\n\
             set title '{title}'\n\
             set xlabel 'Distance [m]'\n\
             set ylabel '{metric}'\n\
             set xrange [0:{xmax}]\n\
             set yrange [0:1.05]\n\
             set grid\n\
             set key off\n\
             plot '{csv_name}' every ::1 using 1:2:3 with yerrorbars pt 7 ps 0.6 lc rgb '#1f4e79', \\\n\
             \x20    '' every ::1 using 1:2 with lines lw 2 lc rgb '#1f4e79'\n",
            metric = self.metric,
        )
    }
}

/// Reads a `bin_center_m,mean,std,n` CSV back into plain columns.
pub fn read_series_csv(path: &std::path::Path) -> Result<Vec<(f64, f64, f64, u64)>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.into(),
            line: 0,
            reason: format!("{other:?}"),
        },
    })?;
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<(f64, f64, f64, u64)>().enumerate() {
        out.push(rec.map_err(|e| Error::Parse {
            path: path.into(),
            line: i + 2,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Per-node, per-bin values reduced into a series: mean and sample std
/// across nodes, sample floor applied to the aggregate bin.
#[derive(Clone, Debug, Default)]
pub struct NodeBins {
    /// `cells[node][bin] = (value_sum, terms, samples)`.
    cells: Vec<Vec<(f64, u64, u64)>>,
}

impl NodeBins {
    pub fn new(nodes: usize) -> Self {
        Self {
            cells: vec![Vec::new(); nodes],
        }
    }

    /// Adds one ratio term for `node` in `bin`, backed by `samples`
    /// observations.
    pub fn add(&mut self, node: usize, bin: usize, value: f64, samples: u64) {
        let row = &mut self.cells[node];
        if row.len() <= bin {
            row.resize(bin + 1, (0.0, 0, 0));
        }
        let c = &mut row[bin];
        c.0 += value;
        c.1 += 1;
        c.2 += samples;
    }

    pub fn finish(&self, metric: Metric, width: f64, window_s: Option<f64>, min_samples: u64) -> BinnedSeries {
        let nbins = self.cells.iter().map(Vec::len).max().unwrap_or(0);
        let mut bins = Vec::new();
        for b in 0..nbins {
            let per_node: Vec<NodeValue> = self
                .cells
                .iter()
                .enumerate()
                .filter_map(|(i, row)| {
                    row.get(b).filter(|c| c.1 > 0).map(|c| NodeValue {
                        node: NodeId(i as u32),
                        value: c.0 / c.1 as f64,
                        samples: c.2,
                    })
                })
                .collect();
            if per_node.is_empty() {
                continue;
            }
            let (mean, std) = mean_std(per_node.iter().map(|v| v.value));
            let sample_count = per_node.iter().map(|v| v.samples).sum();
            bins.push(Bin {
                center_m: (b as f64 + 0.5) * width,
                per_node,
                mean,
                std,
                sample_count,
                excluded: sample_count < min_samples,
            });
        }
        BinnedSeries {
            metric,
            bin_width_m: width,
            window_s,
            min_samples,
            bins,
        }
    }
}

/// Mean and standard deviation across nodes, with the `n - 1` divisor
/// (zero for a single node).
pub fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (n, s) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = s / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn bin_of(distance: f64, width: f64) -> usize {
    (distance / width).floor() as usize
}

fn check_width(width: f64) -> Result<()> {
    if width > 0.0 && width.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("bin width {width} must be > 0")))
    }
}

/// Per transmitter and distance bin: received / sent over the whole run.
#[derive(Clone, Debug)]
pub struct PdrTally {
    width: f64,
    counts: Vec<Vec<(u64, u64)>>,
}

impl PdrTally {
    pub fn new(nodes: usize, bin_width_m: f64) -> Result<Self> {
        check_width(bin_width_m)?;
        Ok(Self {
            width: bin_width_m,
            counts: vec![Vec::new(); nodes],
        })
    }

    pub fn add(&mut self, s: &LinkSample) {
        let row = &mut self.counts[s.tx.0 as usize];
        let b = bin_of(s.distance_m, self.width);
        if row.len() <= b {
            row.resize(b + 1, (0, 0));
        }
        row[b].0 += s.received as u64;
        row[b].1 += 1;
    }

    pub fn finish(&self, min_samples: u64) -> BinnedSeries {
        let mut nb = NodeBins::new(self.counts.len());
        for (tx, row) in self.counts.iter().enumerate() {
            for (b, &(pr, pt)) in row.iter().enumerate() {
                if pt > 0 {
                    nb.add(tx, b, pr as f64 / pt as f64, pt);
                }
            }
        }
        nb.finish(Metric::Pdr, self.width, None, min_samples)
    }
}

impl SampleSink for PdrTally {
    fn accept_tick(&mut self, _tick: usize, samples: &[LinkSample]) {
        for s in samples {
            self.add(s);
        }
    }
}

pub fn compute_pdr(log: &SimLog, bin_width_m: f64, min_samples: u64) -> Result<BinnedSeries> {
    if log.samples.is_empty() {
        return Err(Error::InsufficientData("log has no samples".into()));
    }
    let mut t = PdrTally::new(log.meta.node_names.len(), bin_width_m)?;
    for s in &log.samples {
        t.add(s);
    }
    Ok(t.finish(min_samples))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NarOptions {
    pub bin_width_m: f64,
    pub window_s: f64,
    pub min_samples: u64,
    /// Share of nodes carrying a radio. Unequipped nodes still count as
    /// neighbors but never transmit or receive.
    pub equipped_fraction: f64,
}

impl Default for NarOptions {
    fn default() -> Self {
        Self {
            bin_width_m: NAR_BIN_M,
            window_s: WINDOW_S,
            min_samples: MIN_SAMPLES,
            equipped_fraction: 1.0,
        }
    }
}

/// Number of ticks in a window, which must be a whole number of ticks.
pub fn window_ticks(window_s: f64, tick_s: f64) -> Result<usize> {
    let k = (window_s / tick_s).round();
    if !(k >= 1.0) || (k * tick_s - window_s).abs() > 1e-9 * window_s.max(1.0) {
        return Err(Error::config(format!(
            "window {window_s} s is not a whole number of {tick_s} s ticks"
        )));
    }
    Ok(k as usize)
}

/// Whether `node` carries a radio under `fraction`.
pub fn is_equipped(node: NodeId, fraction: f64, seed: u64) -> bool {
    fraction >= 1.0 || rng::unit_open(rng::key(seed, Stream::Equipped, node.0 as u64, 0, 0)) < fraction
}

/// Ground truth at a window start: for every receiver, the other nodes
/// present and the distance bin each falls in.
#[derive(Clone, Debug, Default)]
pub struct WindowTruth {
    /// `neighbors[rx] = [(tx, bin)]` in node order.
    pub neighbors: Vec<Vec<(u32, u32)>>,
    /// `nt[rx][bin]`.
    pub nt: Vec<Vec<u32>>,
}

impl WindowTruth {
    pub fn at(scenario: &Scenario, tick: usize, width: f64) -> Self {
        let n = scenario.node_count();
        let frame = scenario.frame(tick);
        let mut neighbors = vec![Vec::new(); n];
        let mut nt = vec![Vec::new(); n];
        for a in frame {
            let list = &mut neighbors[a.id.0 as usize];
            let counts: &mut Vec<u32> = &mut nt[a.id.0 as usize];
            for b in frame {
                if a.id == b.id {
                    continue;
                }
                let bin = bin_of(a.position.dist(&b.position), width);
                list.push((b.id.0, bin as u32));
                if counts.len() <= bin {
                    counts.resize(bin + 1, 0);
                }
                counts[bin] += 1;
            }
        }
        Self { neighbors, nt }
    }
}

/// Dense per-window reception record: distance of the first received
/// beacon for every ordered pair, NaN if nothing was heard.
#[derive(Clone, Debug)]
struct HeardMatrix {
    n: usize,
    first: Vec<f64>,
}

impl HeardMatrix {
    fn new(n: usize) -> Self {
        Self {
            n,
            first: vec![f64::NAN; n * n],
        }
    }

    fn clear(&mut self) {
        self.first.fill(f64::NAN);
    }

    fn record(&mut self, s: &LinkSample) {
        if s.received {
            let c = &mut self.first[s.rx.0 as usize * self.n + s.tx.0 as usize];
            if c.is_nan() {
                *c = s.distance_m;
            }
        }
    }

    fn heard(&self, rx: usize, tx: usize) -> bool {
        !self.first[rx * self.n + tx].is_nan()
    }

    fn row(&self, rx: usize) -> &[f64] {
        &self.first[rx * self.n..(rx + 1) * self.n]
    }
}

/// Splits the tick stream into consecutive windows aligned to t = 0 and
/// hands each finished window to `close`. A trailing partial window is
/// dropped.
#[derive(Clone, Debug)]
struct Windowing {
    window_ticks: usize,
    windows: usize,
    next: usize,
}

impl Windowing {
    fn new(scenario: &Scenario, window_s: f64) -> Result<Self> {
        let wt = window_ticks(window_s, scenario.tick_s)?;
        Ok(Self {
            window_ticks: wt,
            windows: scenario.tick_count() / wt,
            next: 0,
        })
    }

    /// Windows that end at or before `tick`.
    fn closing_before(&mut self, tick: usize) -> std::ops::Range<usize> {
        let done = (tick / self.window_ticks).min(self.windows);
        let r = self.next..done.max(self.next);
        self.next = r.end;
        r
    }

    fn remaining(&mut self) -> std::ops::Range<usize> {
        let r = self.next..self.windows;
        self.next = self.windows;
        r
    }

    fn in_range(&self, tick: usize) -> bool {
        tick < self.windows * self.window_ticks
    }
}

/// Streaming NAR: per receiver, window and bin, heard / present.
pub struct NarTally<'a> {
    scenario: &'a Scenario,
    opts: NarOptions,
    equipped: Vec<bool>,
    win: Windowing,
    heard: HeardMatrix,
    acc: NodeBins,
}

impl<'a> NarTally<'a> {
    pub fn new(scenario: &'a Scenario, opts: NarOptions, seed: u64) -> Result<Self> {
        check_width(opts.bin_width_m)?;
        if !(opts.equipped_fraction > 0.0 && opts.equipped_fraction <= 1.0) {
            return Err(Error::config("equipped_fraction must be in (0, 1]"));
        }
        let n = scenario.node_count();
        Ok(Self {
            scenario,
            opts,
            equipped: (0..n)
                .map(|i| is_equipped(NodeId(i as u32), opts.equipped_fraction, seed))
                .collect(),
            win: Windowing::new(scenario, opts.window_s)?,
            heard: HeardMatrix::new(n),
            acc: NodeBins::new(n),
        })
    }

    fn close(&mut self, w: usize) {
        let truth = WindowTruth::at(self.scenario, w * self.win.window_ticks, self.opts.bin_width_m);
        let mut nd: Vec<u32> = Vec::new();
        for (rx, list) in truth.neighbors.iter().enumerate() {
            if list.is_empty() || !self.equipped[rx] {
                continue;
            }
            nd.clear();
            nd.resize(truth.nt[rx].len(), 0);
            for &(tx, bin) in list {
                if self.heard.heard(rx, tx as usize) {
                    nd[bin as usize] += 1;
                }
            }
            for (bin, &nt) in truth.nt[rx].iter().enumerate() {
                if nt > 0 {
                    self.acc.add(rx, bin, nd[bin] as f64 / nt as f64, nt as u64);
                }
            }
        }
        self.heard.clear();
    }

    pub fn finish(mut self) -> BinnedSeries {
        for w in self.win.remaining() {
            self.close(w);
        }
        self.acc.finish(
            Metric::Nar,
            self.opts.bin_width_m,
            Some(self.opts.window_s),
            self.opts.min_samples,
        )
    }
}

impl SampleSink for NarTally<'_> {
    fn accept_tick(&mut self, tick: usize, samples: &[LinkSample]) {
        for w in self.win.closing_before(tick) {
            self.close(w);
        }
        if !self.win.in_range(tick) {
            return;
        }
        for s in samples {
            if self.equipped[s.tx.0 as usize] && self.equipped[s.rx.0 as usize] {
                self.heard.record(s);
            }
        }
    }
}

/// Feeds a stored log through a sink tick by tick.
pub fn replay<S: SampleSink>(samples: &[LinkSample], mut sink: S) {
    let mut start = 0;
    while start < samples.len() {
        let tick = samples[start].tick;
        let end = start + samples[start..].iter().take_while(|s| s.tick == tick).count();
        sink.accept_tick(tick as usize, &samples[start..end]);
        start = end;
    }
}

pub fn compute_nar(log: &SimLog, scenario: &Scenario, opts: NarOptions) -> Result<BinnedSeries> {
    let mut t = NarTally::new(scenario, opts, log.meta.seed)?;
    replay(&log.samples, &mut t);
    Ok(t.finish())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnarWindow {
    pub rx: NodeId,
    pub window: u32,
    /// Nodes heard in the window.
    pub n: u32,
    /// Of those, heard from beyond `R`.
    pub na: u32,
}

impl RnarWindow {
    pub fn ratio(&self) -> f64 {
        self.na as f64 / self.n as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnarPoint {
    pub r_m: f64,
    pub mean: f64,
    pub std: f64,
    pub nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RnarResult {
    pub r_m: f64,
    pub window_s: f64,
    pub windows: Vec<RnarWindow>,
    /// RNAR against `R` in 50 m steps from 0 past the farthest heard node.
    pub profile: Vec<RnarPoint>,
}

impl RnarResult {
    pub fn write_profile_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "r_m,mean,std,nodes")?;
        for p in &self.profile {
            writeln!(out, "{},{},{},{}", p.r_m, p.mean, p.std, p.nodes)?;
        }
        Ok(())
    }
}

pub const RNAR_STEP_M: f64 = 50.0;

/// RNAR over heard nodes only: a heard node counts as remote when the
/// first beacon received from it in the window came from farther than `R`.
pub fn compute_rnar(log: &SimLog, scenario: &Scenario, r_m: f64, window_s: f64) -> Result<RnarResult> {
    if !(r_m >= 0.0) {
        return Err(Error::config("R must be >= 0"));
    }
    let n = scenario.node_count();
    let mut win = Windowing::new(scenario, window_s)?;
    let mut heard = HeardMatrix::new(n);
    // Distances heard per (rx, window), kept for the profile.
    let mut per_window: Vec<(usize, u32, Vec<f64>)> = Vec::new();
    let close = |w: usize, heard: &mut HeardMatrix, out: &mut Vec<(usize, u32, Vec<f64>)>| {
        for rx in 0..n {
            let d: Vec<f64> = heard.row(rx).iter().copied().filter(|d| !d.is_nan()).collect();
            if !d.is_empty() {
                out.push((rx, w as u32, d));
            }
        }
        heard.clear();
    };
    replay(
        &log.samples,
        FnSink(|tick: usize, samples: &[LinkSample]| {
            for w in win.closing_before(tick) {
                close(w, &mut heard, &mut per_window);
            }
            if win.in_range(tick) {
                samples.iter().for_each(|s| heard.record(s));
            }
        }),
    );
    for w in win.remaining() {
        close(w, &mut heard, &mut per_window);
    }

    let count = |d: &[f64], r: f64| d.iter().filter(|&&x| x > r).count() as u32;
    let windows = per_window
        .iter()
        .map(|(rx, w, d)| RnarWindow {
            rx: NodeId(*rx as u32),
            window: *w,
            n: d.len() as u32,
            na: count(d, r_m),
        })
        .collect();
    let far = per_window
        .iter()
        .flat_map(|(_, _, d)| d.iter().copied())
        .fold(0.0, f64::max);
    let steps = (far / RNAR_STEP_M).floor() as usize + 1;
    let mut profile = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let r = k as f64 * RNAR_STEP_M;
        let mut nb = NodeBins::new(n);
        for (rx, _, d) in &per_window {
            nb.add(*rx, 0, count(d, r) as f64 / d.len() as f64, 1);
        }
        let s = nb.finish(Metric::Rnar, 1.0, Some(window_s), 0);
        if let Some(b) = s.bins.first() {
            profile.push(RnarPoint {
                r_m: r,
                mean: b.mean,
                std: b.std,
                nodes: b.per_node.len(),
            });
        }
    }
    Ok(RnarResult {
        r_m,
        window_s,
        windows,
        profile,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RangeEstimate {
    pub meters: f64,
    /// Set when no bin meets the threshold.
    pub flagged: bool,
}

/// Largest bin center such that every included bin up to it meets
/// `threshold`.
pub fn effective_range(series: &BinnedSeries, threshold: f64) -> RangeEstimate {
    let mut last = None;
    for b in series.included() {
        if b.mean >= threshold {
            last = Some(b.center_m);
        } else {
            break;
        }
    }
    match last {
        Some(m) => RangeEstimate {
            meters: m,
            flagged: false,
        },
        None => RangeEstimate {
            meters: 0.0,
            flagged: true,
        },
    }
}

/// Largest included bin center with a nonzero mean.
pub fn max_range(series: &BinnedSeries) -> f64 {
    series
        .included()
        .filter(|b| b.mean > 0.0)
        .map(|b| b.center_m)
        .fold(0.0, f64::max)
}

/// Distance beyond which NAR drops below `level`.
pub fn nar_threshold_distance(series: &BinnedSeries, level: f64) -> RangeEstimate {
    effective_range(series, level)
}

/// Conditional-success statistics along each link's own beacon sequence.
#[derive(Clone, Debug, Default)]
pub struct BurstTally {
    links: HashMap<u64, LinkRun>,
}

#[derive(Clone, Copy, Debug, Default)]
struct LinkRun {
    last: Option<bool>,
    n: u64,
    ok: u64,
    /// Consecutive pairs whose first message succeeded.
    after_ok: u64,
    /// Of those, pairs where the second succeeded too.
    ok_after_ok: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BurstSummary {
    /// Links with 0 < PDR < 1 and at least one success followed by another
    /// message.
    pub links: usize,
    /// Mean over those links of `P(s_t | s_{t-1}) - P(s_t)`.
    pub mean_lift: f64,
    /// Pooled `P(s_t | s_{t-1})` and `P(s_t)` over the same links.
    pub p_conditional: f64,
    pub p_marginal: f64,
}

impl BurstTally {
    pub fn add(&mut self, s: &LinkSample) {
        let r = self.links.entry(rng::link_key(s.tx.0, s.rx.0)).or_default();
        if let Some(prev) = r.last {
            if prev {
                r.after_ok += 1;
                r.ok_after_ok += s.received as u64;
            }
        }
        r.last = Some(s.received);
        r.n += 1;
        r.ok += s.received as u64;
    }

    pub fn summary(&self) -> BurstSummary {
        let mut keys: Vec<&u64> = self.links.keys().collect();
        keys.sort();
        let (mut count, mut lift) = (0usize, 0.0);
        let (mut n, mut ok, mut after, mut both) = (0u64, 0u64, 0u64, 0u64);
        for k in keys {
            let r = &self.links[k];
            if r.ok == 0 || r.ok == r.n || r.after_ok == 0 {
                continue;
            }
            count += 1;
            lift += r.ok_after_ok as f64 / r.after_ok as f64 - r.ok as f64 / r.n as f64;
            n += r.n;
            ok += r.ok;
            after += r.after_ok;
            both += r.ok_after_ok;
        }
        BurstSummary {
            links: count,
            mean_lift: lift / count as f64,
            p_conditional: both as f64 / after as f64,
            p_marginal: ok as f64 / n as f64,
        }
    }
}

impl SampleSink for BurstTally {
    fn accept_tick(&mut self, _tick: usize, samples: &[LinkSample]) {
        samples.iter().for_each(|s| self.add(s));
    }
}
