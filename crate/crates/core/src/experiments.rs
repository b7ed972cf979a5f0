//! Power × rate NAR surfaces, window-length families, transition widths,
//! environment comparisons and model-vs-simulation checks.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::awareness::{self, FitPoint, WeightsMode};
use crate::beaconing::{self, BeaconConfig, RolePower, SampleSink, Schedule, SimLog};
use crate::channel::{ChannelConfig, LinkSample};
use crate::error::{Error, Result};
use crate::metrics::{
    self, effective_range, window_ticks, BinnedSeries, BurstSummary, BurstTally, Metric, NarOptions, NarTally,
    NodeBins, PdrTally, RangeEstimate, WindowTruth,
};
use crate::mobility::{NodeId, NodeState, Role, Scenario};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub powers_dbm: Vec<f64>,
    pub rates_hz: Vec<f64>,
    /// Window lengths for the surfaces.
    pub windows_s: Vec<f64>,
    pub seeds: Vec<u64>,
    pub bin_width_m: f64,
    pub min_samples: u64,
    /// Powers that get their own rate-varied surface file.
    pub plot_powers_dbm: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            powers_dbm: (0..=35).map(f64::from).collect(),
            rates_hz: vec![1.0, 2.0, 3.0, 5.0, 10.0],
            windows_s: vec![0.1, 0.2, 0.5, 1.0, 2.0],
            seeds: vec![1],
            bin_width_m: metrics::NAR_BIN_M,
            min_samples: metrics::MIN_SAMPLES,
            plot_powers_dbm: vec![5.0, 15.0, 23.0],
        }
    }
}

impl SweepSpec {
    pub fn validate(&self, tick_s: f64) -> Result<()> {
        if self.powers_dbm.is_empty() || self.rates_hz.is_empty() || self.windows_s.is_empty() || self.seeds.is_empty()
        {
            return Err(Error::config("sweep axes and seed list must be non-empty"));
        }
        if self.powers_dbm.iter().any(|p| !p.is_finite()) {
            return Err(Error::config("sweep powers must be finite"));
        }
        for &r in &self.rates_hz {
            BeaconConfig {
                rate_hz: r,
                ..Default::default()
            }
            .validate(tick_s)?;
        }
        for &w in &self.windows_s {
            window_ticks(w, tick_s)?;
        }
        if !(self.bin_width_m > 0.0) {
            return Err(Error::config("bin_width_m must be > 0"));
        }
        Ok(())
    }

    fn sorted_powers(&self) -> Vec<f64> {
        let mut p = self.powers_dbm.clone();
        p.sort_by(f64::total_cmp);
        p.dedup();
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceCell {
    pub power_dbm: f64,
    pub rate_hz: f64,
    pub window_s: f64,
    pub nar: BinnedSeries,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Surface {
    pub cells: Vec<SurfaceCell>,
}

impl Surface {
    pub fn cell(&self, power_dbm: f64, rate_hz: f64, window_s: f64) -> Option<&SurfaceCell> {
        self.cells
            .iter()
            .find(|c| c.power_dbm == power_dbm && c.rate_hz == rate_hz && c.window_s == window_s)
    }

    /// NAR against power at a fixed rate, window and bin; only powers where
    /// the bin meets the sample floor appear.
    pub fn power_column(&self, rate_hz: f64, window_s: f64, center_m: f64) -> Vec<(f64, f64)> {
        let mut col: Vec<(f64, f64)> = self
            .cells
            .iter()
            .filter(|c| c.rate_hz == rate_hz && c.window_s == window_s)
            .filter_map(|c| {
                c.nar
                    .bin_at(center_m)
                    .filter(|b| !b.excluded)
                    .map(|b| (c.power_dbm, b.mean))
            })
            .collect();
        col.sort_by(|a, b| a.0.total_cmp(&b.0));
        col
    }

    pub fn write_csv<W: Write>(&self, mut out: W, keep: impl Fn(&SurfaceCell) -> bool) -> std::io::Result<()> {
        writeln!(out, "power_dbm,rate_hz,bin_center_m,nar_mean,nar_std,n")?;
        for c in self.cells.iter().filter(|c| keep(c)) {
            for b in c.nar.included() {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    c.power_dbm, c.rate_hz, b.center_m, b.mean, b.std, b.sample_count
                )?;
            }
        }
        Ok(())
    }
}

/// Gnuplot script for a surface CSV: mean as a colored surface, mean ± std
/// as black wireframes. `axis_col` is 1 for power, 2 for rate.
pub fn surface_gnuplot(csv_name: &str, title: &str, axis_col: usize) -> String {
    let axis = if axis_col == 1 {
        "Tx power [dBm]"
    } else {
        "CAM rate [Hz]"
    };
    format!(
        "set datafile separator ','\n\
         set title '{title}'\n\
         set xlabel 'Distance [m]'\n\
         set ylabel '{axis}'\n\
         set zlabel 'NAR'\n\
         set zrange [0:1]\n\
         set dgrid3d 40,40 qnorm 2\n\
         set pm3d\n\
         set hidden3d\n\
         splot '{csv_name}' every ::1 using 3:{axis_col}:4 with pm3d title 'mean', \\\n\
         \x20     '' every ::1 using 3:{axis_col}:($4+$5) with lines lc rgb 'black' title '+std', \\\n\
         \x20     '' every ::1 using 3:{axis_col}:($4-$5) with lines lc rgb 'black' title '-std'\n"
    )
}

/// Streams an every-tick pass into per-(window, power, rate) NAR
/// accumulators.
struct SweepTally<'a> {
    scenario: &'a Scenario,
    sensitivity: f64,
    powers: Vec<f64>,
    rates: Vec<f64>,
    windows: Vec<WindowState>,
    /// `eff[p][node]`: effective power of node at sweep power `p`.
    eff: Vec<Vec<f64>>,
    schedules: Vec<Vec<Schedule>>,
    /// Scratch: which rates emit at the current tick, per node.
    emitting: Vec<Vec<bool>>,
    width: f64,
}

struct WindowState {
    window_ticks: usize,
    windows: usize,
    next: usize,
    /// `gain[r][rx * n + tx]`: best link gain over the window's emissions.
    gain: Vec<Vec<f64>>,
    /// `acc[p][r]`.
    acc: Vec<Vec<NodeBins>>,
}

impl<'a> SweepTally<'a> {
    fn new(scenario: &'a Scenario, spec: &SweepSpec, beacon: &BeaconConfig, channel: &ChannelConfig) -> Result<Self> {
        let n = scenario.node_count();
        let powers = spec.sorted_powers();
        let rates = spec.rates_hz.clone();
        // Filled in by `reseed`.
        let eff = vec![vec![0.0; n]; powers.len()];
        let schedules = rates
            .iter()
            .map(|&r| vec![Schedule::new(r, scenario.tick_s, beacon.start_phase, NodeId(0), 0); n])
            .collect();
        let windows = spec
            .windows_s
            .iter()
            .map(|&w| {
                let wt = window_ticks(w, scenario.tick_s)?;
                Ok(WindowState {
                    window_ticks: wt,
                    windows: scenario.tick_count() / wt,
                    next: 0,
                    gain: vec![vec![f64::NEG_INFINITY; n * n]; rates.len()],
                    acc: (0..powers.len())
                        .map(|_| (0..rates.len()).map(|_| NodeBins::new(n)).collect())
                        .collect(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            scenario,
            sensitivity: channel.sensitivity_dbm,
            emitting: vec![vec![false; n]; rates.len()],
            powers,
            rates,
            windows,
            eff,
            schedules,
            width: spec.bin_width_m,
        })
    }

    fn close(&mut self, wi: usize, w: usize) {
        let n = self.scenario.node_count();
        let ws = &mut self.windows[wi];
        let truth = WindowTruth::at(self.scenario, w * ws.window_ticks, self.width);
        let np = self.powers.len();
        // hist[bin * (np + 1) + k]: neighbors first heard at power index k
        // (k = np: never).
        let mut hist: Vec<u32> = Vec::new();
        for r in 0..self.rates.len() {
            let gain = &ws.gain[r];
            for (rx, list) in truth.neighbors.iter().enumerate() {
                if list.is_empty() {
                    continue;
                }
                let nt = &truth.nt[rx];
                hist.clear();
                hist.resize(nt.len() * (np + 1), 0);
                for &(tx, bin) in list {
                    let g = gain[rx * n + tx as usize];
                    let k = if g == f64::NEG_INFINITY {
                        np
                    } else {
                        let eff = &self.eff;
                        let sens = self.sensitivity;
                        partition_point(np, |p| eff[p][tx as usize] + g < sens)
                    };
                    hist[bin as usize * (np + 1) + k] += 1;
                }
                for (bin, &t) in nt.iter().enumerate() {
                    if t == 0 {
                        continue;
                    }
                    let row = &hist[bin * (np + 1)..(bin + 1) * (np + 1)];
                    let mut nd = 0u32;
                    for (p, &count) in row[..np].iter().enumerate() {
                        nd += count;
                        ws.acc[p][r].add(rx, bin, nd as f64 / t as f64, t as u64);
                    }
                }
            }
        }
        for g in &mut ws.gain {
            g.fill(f64::NEG_INFINITY);
        }
    }

    fn close_remaining(&mut self) {
        for wi in 0..self.windows.len() {
            let (next, total) = (self.windows[wi].next, self.windows[wi].windows);
            for w in next..total {
                self.close(wi, w);
            }
        }
    }

    /// Switches to another seed's pass, keeping the accumulated windows.
    fn reseed(&mut self, beacon: &BeaconConfig, seed: u64, roles: &[Role]) {
        for (p, row) in self.eff.iter_mut().enumerate() {
            let cfg = BeaconConfig {
                tx_power_dbm: RolePower::uniform(self.powers[p]),
                ..beacon.clone()
            };
            for (i, e) in row.iter_mut().enumerate() {
                let mut node = NodeState::vehicle(NodeId(i as u32), 0.0, Default::default(), 0.0);
                node.role = roles[i];
                *e = beaconing::effective_power(&node, &cfg, seed);
            }
        }
        for (r, sch) in self.schedules.iter_mut().enumerate() {
            for (i, s) in sch.iter_mut().enumerate() {
                *s = Schedule::new(
                    self.rates[r],
                    self.scenario.tick_s,
                    beacon.start_phase,
                    NodeId(i as u32),
                    seed,
                );
            }
        }
        for ws in &mut self.windows {
            ws.next = 0;
        }
    }

    fn finish(self, spec: &SweepSpec) -> Vec<SurfaceCell> {
        let mut cells = Vec::new();
        for (wi, ws) in self.windows.iter().enumerate() {
            for (p, row) in ws.acc.iter().enumerate() {
                for (r, acc) in row.iter().enumerate() {
                    let window_s = spec.windows_s[wi];
                    cells.push(SurfaceCell {
                        power_dbm: self.powers[p],
                        rate_hz: self.rates[r],
                        window_s,
                        nar: acc.finish(Metric::Nar, self.width, Some(window_s), spec.min_samples),
                    });
                }
            }
        }
        cells
    }
}

fn partition_point(n: usize, below: impl Fn(usize) -> bool) -> usize {
    let (mut lo, mut hi) = (0, n);
    while lo < hi {
        let mid = (lo + hi) / 2;
        if below(mid) {
            lo = mid + 1;
        } else {
            hi = mid;
        }
    }
    lo
}

impl SampleSink for SweepTally<'_> {
    fn accept_tick(&mut self, tick: usize, samples: &[LinkSample]) {
        for wi in 0..self.windows.len() {
            let ws = &mut self.windows[wi];
            let done = (tick / ws.window_ticks).min(ws.windows);
            let next = ws.next;
            if done > next {
                ws.next = done;
                for w in next..done {
                    self.close(wi, w);
                }
            }
        }
        for (r, sch) in self.schedules.iter().enumerate() {
            for (i, s) in sch.iter().enumerate() {
                self.emitting[r][i] = s.emits_at(tick);
            }
        }
        let n = self.scenario.node_count();
        for ws in &mut self.windows {
            if tick >= ws.windows * ws.window_ticks {
                continue;
            }
            for s in samples {
                let (tx, rx) = (s.tx.0 as usize, s.rx.0 as usize);
                for (r, gain) in ws.gain.iter_mut().enumerate() {
                    if self.emitting[r][tx] {
                        let c = &mut gain[rx * n + tx];
                        if s.link_gain_db > *c {
                            *c = s.link_gain_db;
                        }
                    }
                }
            }
        }
    }
}

fn roles_of(scenario: &Scenario) -> Vec<Role> {
    let mut roles = vec![Role::Vehicle; scenario.node_count()];
    let mut seen = vec![false; scenario.node_count()];
    for frame in scenario.frames() {
        for n in frame {
            let i = n.id.0 as usize;
            if !seen[i] {
                seen[i] = true;
                roles[i] = n.role;
            }
        }
    }
    roles
}

/// Runs the whole sweep. One every-tick pass per seed yields every
/// (power, rate, window) cell; seeds pool as additional windows per node.
/// `extra` sees the pass's samples, which are those of a run at the beacon
/// config's nominal power with every node emitting every tick.
pub fn run_sweep_with<S: SampleSink>(
    scenario: &Scenario,
    spec: &SweepSpec,
    beacon: &BeaconConfig,
    channel: &ChannelConfig,
    mut extra: S,
) -> Result<Surface> {
    spec.validate(scenario.tick_s)?;
    let roles = roles_of(scenario);
    let mut tally = SweepTally::new(scenario, spec, beacon, channel)?;
    for &seed in &spec.seeds {
        tally.reseed(beacon, seed, &roles);
        beaconing::run_every_tick(scenario, beacon, channel, seed, (&mut tally, &mut extra))?;
        tally.close_remaining();
    }
    Ok(Surface {
        cells: tally.finish(spec),
    })
}

pub fn run_sweep(
    scenario: &Scenario,
    spec: &SweepSpec,
    beacon: &BeaconConfig,
    channel: &ChannelConfig,
) -> Result<Surface> {
    run_sweep_with(
        scenario,
        spec,
        beacon,
        channel,
        beaconing::FnSink(|_: usize, _: &[LinkSample]| {}),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub window_s: f64,
    /// Beacons each node sends per window at the log's rate.
    pub expected_messages: f64,
    /// Window shorter than one beacon period.
    pub short: bool,
    pub nar: BinnedSeries,
}

/// NAR of one log under several window lengths.
pub fn window_sweep(
    log: &SimLog,
    scenario: &Scenario,
    windows_s: &[f64],
    opts: NarOptions,
) -> Result<Vec<WindowEntry>> {
    windows_s
        .iter()
        .map(|&w| {
            let expected = w * log.meta.beacon.rate_hz;
            Ok(WindowEntry {
                window_s: w,
                expected_messages: expected,
                short: expected < 1.0 - 1e-9,
                nar: metrics::compute_nar(log, scenario, NarOptions { window_s: w, ..opts })?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionWidth {
    pub width_db: f64,
    /// Largest power at or below `low`, before the first power at or above
    /// `high`.
    pub low_power_dbm: Option<f64>,
    pub high_power_dbm: Option<f64>,
    pub bracketed: bool,
}

/// Power span between NAR ≤ `low` and NAR ≥ `high` in a power-sorted
/// column.
pub fn transition_width(column: &[(f64, f64)], low: f64, high: f64) -> TransitionWidth {
    let hi_idx = column.iter().position(|&(_, v)| v >= high);
    let lo_idx = hi_idx.and_then(|h| column[..h].iter().rposition(|&(_, v)| v <= low));
    match (lo_idx, hi_idx) {
        (Some(l), Some(h)) => TransitionWidth {
            width_db: column[h].0 - column[l].0,
            low_power_dbm: Some(column[l].0),
            high_power_dbm: Some(column[h].0),
            bracketed: true,
        },
        _ => TransitionWidth {
            width_db: f64::NAN,
            low_power_dbm: lo_idx.map(|i| column[i].0),
            high_power_dbm: hi_idx.map(|i| column[i].0),
            bracketed: false,
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentComparison {
    pub power_dbm: f64,
    pub rate_hz: f64,
    /// `(bin center, NAR a, NAR b, b − a)` over bins included in both.
    pub bins: Vec<(f64, f64, f64, f64)>,
    pub threshold_a: RangeEstimate,
    pub threshold_b: RangeEstimate,
    /// Whether `b` keeps 90 % awareness farther than `a`.
    pub b_exceeds_a: bool,
}

pub fn compare_series(a: &BinnedSeries, b: &BinnedSeries, power_dbm: f64, rate_hz: f64) -> EnvironmentComparison {
    let bins = a
        .included()
        .filter_map(|x| {
            b.bin_at(x.center_m)
                .filter(|y| !y.excluded)
                .map(|y| (x.center_m, x.mean, y.mean, y.mean - x.mean))
        })
        .collect();
    let threshold_a = metrics::nar_threshold_distance(a, 0.9);
    let threshold_b = metrics::nar_threshold_distance(b, 0.9);
    EnvironmentComparison {
        power_dbm,
        rate_hz,
        bins,
        b_exceeds_a: threshold_b.meters > threshold_a.meters,
        threshold_a,
        threshold_b,
    }
}

/// Simulates both scenarios at the same power and rate and compares NAR.
#[allow(clippy::too_many_arguments)]
pub fn compare_environments(
    a: &Scenario,
    b: &Scenario,
    power_dbm: f64,
    rate_hz: f64,
    beacon: &BeaconConfig,
    channel: &ChannelConfig,
    seed: u64,
    opts: NarOptions,
) -> Result<EnvironmentComparison> {
    let cfg = BeaconConfig {
        rate_hz,
        tx_power_dbm: RolePower::uniform(power_dbm),
        ..beacon.clone()
    };
    let nar = |s: &Scenario| -> Result<BinnedSeries> {
        let mut t = NarTally::new(s, opts, seed)?;
        beaconing::run_with(s, &cfg, channel, seed, &mut t)?;
        Ok(t.finish())
    };
    Ok(compare_series(&nar(a)?, &nar(b)?, power_dbm, rate_hz))
}

/// Per-NAR-bin PDR: sample-weighted pool of the PDR bins whose centers fall
/// inside it.
pub fn pdr_on_bins(pdr: &BinnedSeries, nar: &BinnedSeries) -> Vec<Option<f64>> {
    nar.bins
        .iter()
        .map(|nb| {
            let lo = nb.center_m - nar.bin_width_m / 2.0;
            let hi = nb.center_m + nar.bin_width_m / 2.0;
            let (mut s, mut w) = (0.0, 0u64);
            for b in pdr.included().filter(|b| b.center_m >= lo && b.center_m < hi) {
                s += b.mean * b.sample_count as f64;
                w += b.sample_count;
            }
            (w > 0).then(|| s / w as f64)
        })
        .collect()
}

/// `(pdr, nar)` fit points from matching series, weighted by NAR sample
/// count or uniformly.
pub fn fit_points(pdr: &BinnedSeries, nar: &BinnedSeries, mode: WeightsMode) -> Vec<FitPoint<f64>> {
    pdr_on_bins(pdr, nar)
        .into_iter()
        .zip(&nar.bins)
        .filter(|(_, b)| !b.excluded)
        .filter_map(|(p, b)| {
            p.map(|pdr| FitPoint {
                pdr,
                nar: b.mean,
                weight: match mode {
                    WeightsMode::Uniform | WeightsMode::Custom => 1.0,
                    WeightsMode::Counts => b.sample_count as f64,
                },
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCheck {
    pub model: awareness::AwarenessModel<f64>,
    pub pdr_effective_range: RangeEstimate,
    /// `(bin center, measured NAR, model NAR)` for NAR bins up to the
    /// effective range.
    pub compared: Vec<(f64, f64, f64)>,
    pub mean_abs_diff: f64,
    /// Same, over every bin with a PDR estimate.
    pub mean_abs_diff_all: f64,
    pub burst: BurstSummary,
    pub pdr: BinnedSeries,
    pub nar: BinnedSeries,
}

/// Fits `Z` to one run and measures how well the closed form reproduces
/// its NAR.
pub fn model_check(pdr: BinnedSeries, nar: BinnedSeries, burst: BurstSummary) -> Result<ModelCheck> {
    let model = awareness::fit_z(&fit_points(&pdr, &nar, WeightsMode::Counts), WeightsMode::Counts)?;
    let eff = effective_range(&pdr, 0.9);
    let per_bin = pdr_on_bins(&pdr, &nar);
    let mut all = Vec::new();
    let mut compared = Vec::new();
    for (p, b) in per_bin.iter().zip(&nar.bins) {
        if let (Some(p), false) = (p, b.excluded) {
            let row = (b.center_m, b.mean, model.predict(*p));
            all.push(row);
            if b.center_m <= eff.meters {
                compared.push(row);
            }
        }
    }
    let mad = |v: &[(f64, f64, f64)]| v.iter().map(|r| (r.1 - r.2).abs()).sum::<f64>() / v.len() as f64;
    Ok(ModelCheck {
        mean_abs_diff: mad(&compared),
        mean_abs_diff_all: mad(&all),
        model,
        pdr_effective_range: eff,
        compared,
        burst,
        pdr,
        nar,
    })
}

/// Runs one configuration with PDR, NAR and burst tallies attached.
pub fn simulate_and_check(
    scenario: &Scenario,
    beacon: &BeaconConfig,
    channel: &ChannelConfig,
    seed: u64,
    opts: NarOptions,
) -> Result<ModelCheck> {
    let mut pdr = PdrTally::new(scenario.node_count(), metrics::PDR_BIN_M)?;
    let mut nar = NarTally::new(scenario, opts, seed)?;
    let mut burst = BurstTally::default();
    beaconing::run_with(scenario, beacon, channel, seed, (&mut pdr, (&mut nar, &mut burst)))?;
    model_check(pdr.finish(opts.min_samples), nar.finish(), burst.summary())
}
