//! Direct recomputation of PDR, NAR and RNAR from the sample log and the
//! scenario frames, shared by the oracle and acceptance tests.

use std::collections::HashMap;

use beaconsim::beaconing::{run, BeaconConfig, SimLog};
use beaconsim::channel::ChannelConfig;
use beaconsim::geometry::{ObstacleKind, ObstaclePolygon};
use beaconsim::metrics::{compute_nar, compute_pdr, compute_rnar, is_equipped, BinnedSeries, NarOptions, RNAR_STEP_M};
use beaconsim::mobility::{Environment, NodeId, NodeState, Scenario};
use beaconsim::Point;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TICK: f64 = 0.1;

/// Up to 10 nodes wandering in a 600 m square; some join late or leave
/// early.
fn micro_scenario(rng: &mut ChaCha8Rng) -> Scenario {
    let n = rng.random_range(2..=10);
    let ticks = 10 * rng.random_range(3..=20);
    let env = if rng.random_bool(0.5) {
        Environment::Urban
    } else {
        Environment::Highway
    };
    let obstacles = if env == Environment::Urban {
        (0..rng.random_range(0..5))
            .map(|i| {
                let (x, y) = (rng.random_range(0.0..500.0), rng.random_range(0.0..500.0));
                ObstaclePolygon::rectangle(format!("b{i}"), ObstacleKind::Building, x, y, x + 60.0, y + 60.0)
            })
            .collect()
    } else {
        Vec::new()
    };
    let spans: Vec<(usize, usize)> = (0..n)
        .map(|_| {
            if rng.random_bool(0.7) {
                (0, ticks)
            } else {
                let a = rng.random_range(0..ticks / 2);
                (a, rng.random_range(a + 1..=ticks))
            }
        })
        .collect();
    let mut pos: Vec<Point> = (0..n)
        .map(|_| Point::new(rng.random_range(0.0..600.0), rng.random_range(0.0..600.0)))
        .collect();
    let vel: Vec<Point> = (0..n)
        .map(|_| Point::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)))
        .collect();
    let mut frames = Vec::with_capacity(ticks + 1);
    for k in 0..=ticks {
        let mut f = Vec::new();
        for i in 0..n {
            if (spans[i].0..=spans[i].1).contains(&k) {
                let heading = vel[i].x.atan2(vel[i].y).to_degrees().rem_euclid(360.0);
                f.push(NodeState::vehicle(NodeId(i as u32), k as f64 * TICK, pos[i], heading));
            }
            pos[i] = Point::new(pos[i].x + vel[i].x * TICK, pos[i].y + vel[i].y * TICK);
        }
        frames.push(f);
    }
    let names = (0..n).map(|i| format!("v{i}")).collect();
    Scenario::new(env, TICK, ticks as f64 * TICK, obstacles, names, frames).unwrap()
}

/// (node, bin) -> (value sum, terms, samples), reduced the way the series
/// defines it.
fn reduce(
    cells: &HashMap<(usize, usize), (f64, u64, u64)>,
    n: usize,
    width: f64,
    min: u64,
) -> Vec<(f64, f64, f64, u64, bool)> {
    let nbins = cells.keys().map(|&(_, b)| b + 1).max().unwrap_or(0);
    let mut out = Vec::new();
    for b in 0..nbins {
        let vals: Vec<(f64, u64)> = (0..n)
            .filter_map(|i| cells.get(&(i, b)).map(|c| (c.0 / c.1 as f64, c.2)))
            .collect();
        if vals.is_empty() {
            continue;
        }
        let m = vals.len() as f64;
        let mean = vals.iter().map(|v| v.0).sum::<f64>() / m;
        let std = if vals.len() > 1 {
            (vals.iter().map(|v| (v.0 - mean) * (v.0 - mean)).sum::<f64>() / (m - 1.0)).sqrt()
        } else {
            0.0
        };
        let samples: u64 = vals.iter().map(|v| v.1).sum();
        out.push(((b as f64 + 0.5) * width, mean, std, samples, samples < min));
    }
    out
}

fn flatten(s: &BinnedSeries) -> Vec<(f64, f64, f64, u64, bool)> {
    s.bins
        .iter()
        .map(|b| (b.center_m, b.mean, b.std, b.sample_count, b.excluded))
        .collect()
}

fn brute_pdr(log: &SimLog, width: f64, min: u64) -> Vec<(f64, f64, f64, u64, bool)> {
    let mut counts: HashMap<(usize, usize), (u64, u64)> = HashMap::new();
    for s in &log.samples {
        let c = counts
            .entry((s.tx.0 as usize, (s.distance_m / width).floor() as usize))
            .or_default();
        c.0 += s.received as u64;
        c.1 += 1;
    }
    let cells = counts
        .into_iter()
        .map(|(k, (pr, pt))| (k, (pr as f64 / pt as f64, 1, pt)))
        .collect();
    reduce(&cells, log.meta.node_names.len(), width, min)
}

fn heard_in(log: &SimLog, rx: NodeId, tx: NodeId, ticks: std::ops::Range<u32>) -> Option<f64> {
    log.samples
        .iter()
        .find(|s| s.rx == rx && s.tx == tx && s.received && ticks.contains(&s.tick))
        .map(|s| s.distance_m)
}

fn brute_nar(log: &SimLog, sc: &Scenario, opts: NarOptions) -> Vec<(f64, f64, f64, u64, bool)> {
    let wt = (opts.window_s / sc.tick_s).round() as usize;
    let eq = |id: NodeId| is_equipped(id, opts.equipped_fraction, log.meta.seed);
    let mut cells: HashMap<(usize, usize), (f64, u64, u64)> = HashMap::new();
    for w in 0..sc.tick_count() / wt {
        let start = w * wt;
        let frame = sc.frame(start);
        for rx in frame.iter().filter(|n| eq(n.id)) {
            let mut per_bin: HashMap<usize, (u32, u32)> = HashMap::new();
            for tx in frame.iter().filter(|n| n.id != rx.id) {
                let bin = (rx.position.dist(&tx.position) / opts.bin_width_m).floor() as usize;
                let e = per_bin.entry(bin).or_default();
                e.1 += 1;
                if eq(tx.id) && heard_in(log, rx.id, tx.id, start as u32..(start + wt) as u32).is_some() {
                    e.0 += 1;
                }
            }
            let mut bins: Vec<_> = per_bin.into_iter().collect();
            bins.sort();
            for (bin, (nd, nt)) in bins {
                let c = cells.entry((rx.id.0 as usize, bin)).or_default();
                c.0 += nd as f64 / nt as f64;
                c.1 += 1;
                c.2 += nt as u64;
            }
        }
    }
    reduce(&cells, sc.node_count(), opts.bin_width_m, opts.min_samples)
}

/// Per (window, rx) with at least one heard node: first-received distances.
fn brute_heard(log: &SimLog, sc: &Scenario, window_s: f64) -> Vec<(u32, u32, Vec<f64>)> {
    let wt = (window_s / sc.tick_s).round() as usize;
    let n = sc.node_count() as u32;
    let mut out = Vec::new();
    for w in 0..sc.tick_count() / wt {
        let r = (w * wt) as u32..((w + 1) * wt) as u32;
        for rx in 0..n {
            let d: Vec<f64> = (0..n)
                .filter_map(|tx| heard_in(log, NodeId(rx), NodeId(tx), r.clone()))
                .collect();
            if !d.is_empty() {
                out.push((w as u32, rx, d));
            }
        }
    }
    out
}

/// Runs `cases` random micro-scenarios and panics on the first mismatch
/// between engine and brute force. Returns (received, lost) sample counts.
pub fn check_micro_scenarios(seed: u64, cases: usize) -> (usize, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channel = ChannelConfig::default();
    let mut received = 0usize;
    let mut lost = 0usize;
    for case in 0..cases {
        let sc = micro_scenario(&mut rng);
        let beacon = BeaconConfig {
            rate_hz: [1.0, 2.0, 5.0, 10.0][case % 4],
            ..Default::default()
        };
        let seed = 1000 + case as u64;
        let log = run(&sc, &beacon, &channel, seed).unwrap();
        received += log.samples.iter().filter(|s| s.received).count();
        lost += log.samples.iter().filter(|s| !s.received).count();

        let min = rng.random_range(0..20);
        if !log.samples.is_empty() {
            let pdr = compute_pdr(&log, 25.0, min).unwrap();
            assert_eq!(flatten(&pdr), brute_pdr(&log, 25.0, min), "case {case} pdr");
        }

        for window_s in [1.0, 2.0, 0.5] {
            let opts = NarOptions {
                window_s,
                min_samples: min,
                equipped_fraction: if case % 5 == 4 { 0.6 } else { 1.0 },
                ..Default::default()
            };
            let nar = compute_nar(&log, &sc, opts).unwrap();
            assert_eq!(
                flatten(&nar),
                brute_nar(&log, &sc, opts),
                "case {case} nar w={window_s}"
            );
        }

        let r_m = rng.random_range(0.0..400.0);
        let rnar = compute_rnar(&log, &sc, r_m, 1.0).unwrap();
        let heard = brute_heard(&log, &sc, 1.0);
        let windows: Vec<(u32, u32, u32, u32)> = rnar.windows.iter().map(|w| (w.window, w.rx.0, w.n, w.na)).collect();
        let mut expect: Vec<(u32, u32, u32, u32)> = heard
            .iter()
            .map(|(w, rx, d)| (*w, *rx, d.len() as u32, d.iter().filter(|&&x| x > r_m).count() as u32))
            .collect();
        expect.sort();
        assert_eq!(windows, expect, "case {case} rnar windows");
        for p in &rnar.profile {
            let mut cells: HashMap<(usize, usize), (f64, u64, u64)> = HashMap::new();
            let mut sorted = heard.clone();
            sorted.sort_by_key(|h| (h.1, h.0));
            for (_, rx, d) in &sorted {
                let c = cells.entry((*rx as usize, 0)).or_default();
                c.0 += d.iter().filter(|&&x| x > p.r_m).count() as f64 / d.len() as f64;
                c.1 += 1;
                c.2 += 1;
            }
            let b = reduce(&cells, sc.node_count(), 1.0, 0);
            assert_eq!(
                (p.mean, p.std),
                (b[0].1, b[0].2),
                "case {case} rnar profile at {}",
                p.r_m
            );
        }
        if let Some(last) = rnar.profile.last() {
            let far = heard.iter().flat_map(|h| h.2.iter().copied()).fold(0.0, f64::max);
            assert!(last.r_m > far && last.r_m - far <= RNAR_STEP_M);
            assert_eq!(last.mean, 0.0);
        }
    }
    (received, lost)
}
