mod config;
mod rundir;

use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use beaconsim::awareness::{self, nar_bounds, validate_model, WeightsMode};
use beaconsim::beaconing::{self, BeaconConfig, CsvSink, SimMeta};
use beaconsim::channel::ChannelConfig;
use beaconsim::experiments::{self, SweepSpec};
use beaconsim::metrics::{
    self, compute_nar, compute_pdr, compute_rnar, effective_range, max_range, nar_threshold_distance, Bin,
    BinnedSeries, Metric, NarOptions,
};
use beaconsim::mobility::{write_obstacles, write_trace};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use config::{base_dir, read_json, ScenarioConfig};
use rundir::RunDir;

#[derive(Parser)]
#[command(
    name = "beaconsim",
    version,
    about = "Vehicular beaconing simulator and awareness analytics"
)]
struct Cli {
    /// Worker threads; output bytes do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Parent directory for run directories.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate beaconing over a scenario and store the link log.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        channel: Option<PathBuf>,
        #[arg(long)]
        beacon: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// PDR, NAR and optionally RNAR from a stored log.
    Analyze {
        #[arg(long)]
        log: PathBuf,
        /// Sidecar written next to the log; defaults to `<log>.json` form.
        #[arg(long)]
        meta: Option<PathBuf>,
        /// Scenario config used instead of the one recorded in the sidecar.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = metrics::PDR_BIN_M)]
        pdr_bin: f64,
        #[arg(long, default_value_t = metrics::NAR_BIN_M)]
        nar_bin: f64,
        #[arg(long, default_value_t = metrics::WINDOW_S)]
        window: f64,
        #[arg(long, default_value_t = metrics::MIN_SAMPLES)]
        min_samples: u64,
        #[arg(long = "rnar-R", alias = "rnar-r")]
        rnar_r: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        equipped_fraction: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the awareness exponent to PDR and NAR series.
    FitZ {
        #[arg(long)]
        pdr: PathBuf,
        #[arg(long)]
        nar: PathBuf,
        #[arg(long, default_value_t = metrics::PDR_BIN_M)]
        pdr_bin: f64,
        #[arg(long, default_value_t = metrics::NAR_BIN_M)]
        nar_bin: f64,
        #[arg(long, value_enum, default_value_t = Weights::Counts)]
        weights: Weights,
        #[command(flatten)]
        common: Common,
    },
    /// Power x rate x window NAR surfaces.
    Sweep {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        channel: Option<PathBuf>,
        #[arg(long)]
        beacon: Option<PathBuf>,
        /// Seed for scenario generation, and the replicate seed unless the
        /// spec lists its own.
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Per-bin absolute difference between a measured and a model series.
    Validate {
        #[arg(long)]
        measured: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Compare only bins present in both series instead of rejecting a
        /// mismatch.
        #[arg(long)]
        common_bins: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Materialize a scenario config as trace and obstacle files.
    GenScenario {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Weights {
    Counts,
    Uniform,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let head = text.split("Usage:").next().unwrap_or_default();
            let msg = head.split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("error: usage: {}", msg.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let result = match cli.workers {
        Some(0) => Err(anyhow::anyhow!("--workers must be >= 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("cannot start worker pool")
            .and_then(|pool| pool.install(|| dispatch(cli.command))),
        None => dispatch(cli.command),
    };
    match result {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = format!("{e:#}").replace(['\n', '\r'], " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<PathBuf> {
    match cmd {
        Command::Simulate {
            scenario,
            channel,
            beacon,
            seed,
            common,
        } => simulate(&scenario, channel.as_deref(), beacon.as_deref(), seed, &common.out),
        Command::Analyze {
            log,
            meta,
            scenario,
            pdr_bin,
            nar_bin,
            window,
            min_samples,
            rnar_r,
            equipped_fraction,
            common,
        } => {
            let opts = NarOptions {
                bin_width_m: nar_bin,
                window_s: window,
                min_samples,
                equipped_fraction,
            };
            analyze(
                &log,
                meta.as_deref(),
                scenario.as_deref(),
                pdr_bin,
                opts,
                rnar_r,
                &common.out,
            )
        }
        Command::FitZ {
            pdr,
            nar,
            pdr_bin,
            nar_bin,
            weights,
            common,
        } => fit(&pdr, &nar, pdr_bin, nar_bin, weights, &common.out),
        Command::Sweep {
            spec,
            scenario,
            channel,
            beacon,
            seed,
            common,
        } => sweep(
            &spec,
            &scenario,
            channel.as_deref(),
            beacon.as_deref(),
            seed,
            &common.out,
        ),
        Command::Validate {
            measured,
            model,
            common_bins,
            common,
        } => validate(&measured, &model, common_bins, &common.out),
        Command::GenScenario { config, seed, common } => gen_scenario(&config, seed, &common.out),
    }
}

/// Configs with their defaults filled in, plus the files they came from.
struct Loaded {
    scenario: ScenarioConfig,
    base: PathBuf,
    channel: ChannelConfig,
    beacon: BeaconConfig,
    inputs: Vec<PathBuf>,
}

fn load(scenario: &Path, channel: Option<&Path>, beacon: Option<&Path>) -> Result<Loaded> {
    let sc: ScenarioConfig = read_json(scenario)?;
    let base = base_dir(scenario);
    let mut inputs = vec![scenario.to_path_buf()];
    inputs.extend(sc.inputs(&base));
    let channel = match channel {
        Some(p) => {
            inputs.push(p.to_path_buf());
            read_json(p)?
        }
        None => ChannelConfig::default(),
    };
    let beacon = match beacon {
        Some(p) => {
            inputs.push(p.to_path_buf());
            read_json(p)?
        }
        None => BeaconConfig::default(),
    };
    channel.validate()?;
    Ok(Loaded {
        scenario: sc,
        base,
        channel,
        beacon,
        inputs,
    })
}

fn simulate(scenario: &Path, channel: Option<&Path>, beacon: Option<&Path>, seed: u64, out: &Path) -> Result<PathBuf> {
    let cfg = load(scenario, channel, beacon)?;
    let sc = cfg.scenario.build(&cfg.base, seed)?;
    cfg.beacon.validate(sc.tick_s)?;
    let resolved = json!({
        "scenario": cfg.scenario,
        "channel": cfg.channel,
        "beacon": cfg.beacon,
    });
    let mut run = RunDir::create(out, "simulate", vec![seed], resolved, &cfg.inputs)?;
    let log_path = run.file("log.csv");
    let file = std::fs::File::create(&log_path).with_context(|| format!("cannot create {}", log_path.display()))?;
    let mut sink = CsvSink::new(BufWriter::new(file), &sc.node_names)?;
    let emissions = beaconing::run_with(&sc, &cfg.beacon, &cfg.channel, seed, &mut sink)?;
    sink.finish()?.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    let meta = SimMeta {
        environment: sc.environment,
        tick_s: sc.tick_s,
        duration_s: sc.duration_s,
        seed,
        beacon: cfg.beacon.clone(),
        channel: cfg.channel.clone(),
        node_names: sc.node_names.clone(),
        emissions,
        scenario: Some(json!({
            "config": cfg.scenario,
            "base_dir": cfg.base.display().to_string(),
        })),
    };
    run.write_json("log.json", &meta)?;
    run.finish()
}

fn sidecar_of(log: &Path) -> PathBuf {
    log.with_extension("json")
}

fn write_series(run: &mut RunDir, stem: &str, s: &BinnedSeries, title: &str) -> Result<()> {
    let mut csv = Vec::new();
    s.write_csv(&mut csv)?;
    run.write(&format!("{stem}.csv"), &csv)?;
    run.write(
        &format!("{stem}.gp"),
        s.gnuplot(&format!("{stem}.csv"), title).as_bytes(),
    )
}

fn analyze(
    log: &Path,
    meta: Option<&Path>,
    scenario: Option<&Path>,
    pdr_bin: f64,
    opts: NarOptions,
    rnar_r: Option<f64>,
    out: &Path,
) -> Result<PathBuf> {
    let meta_path = meta.map(Path::to_path_buf).unwrap_or_else(|| sidecar_of(log));
    let meta: SimMeta = read_json(&meta_path)?;
    let mut inputs = vec![log.to_path_buf(), meta_path.clone()];
    let (sc_cfg, base) = match scenario {
        Some(p) => {
            inputs.push(p.to_path_buf());
            (read_json::<ScenarioConfig>(p)?, base_dir(p))
        }
        None => {
            let rec = meta
                .scenario
                .as_ref()
                .with_context(|| format!("{} records no scenario; pass --scenario", meta_path.display()))?;
            let cfg: ScenarioConfig = serde_json::from_value(rec["config"].clone())
                .with_context(|| format!("bad scenario record in {}", meta_path.display()))?;
            let base = PathBuf::from(rec["base_dir"].as_str().unwrap_or(""));
            (cfg, base)
        }
    };
    inputs.extend(sc_cfg.inputs(&base));
    let sc = sc_cfg.build(&base, meta.seed)?;
    if sc.node_names != meta.node_names {
        bail!("scenario nodes do not match the log's {}", meta_path.display());
    }
    let samples = beaconing::read_samples(log, &meta.node_names, meta.tick_s)?;
    let log = beaconing::SimLog { meta, samples };

    let flags = json!({
        "pdr_bin": pdr_bin,
        "nar": opts,
        "rnar_R": rnar_r,
        "scenario": sc_cfg,
    });
    let mut run = RunDir::create(out, "analyze", vec![log.meta.seed], flags, &inputs)?;
    let pdr = compute_pdr(&log, pdr_bin, opts.min_samples)?;
    let nar = compute_nar(&log, &sc, opts)?;
    write_series(&mut run, "pdr", &pdr, "PDR")?;
    write_series(&mut run, "nar", &nar, &format!("NAR, t = {} s", opts.window_s))?;
    let eff = effective_range(&pdr, 0.9);
    let thr = nar_threshold_distance(&nar, 0.9);
    run.write_json(
        "ranges.json",
        &json!({
            "pdr_effective_range_m": eff.meters,
            "pdr_effective_range_flagged": eff.flagged,
            "pdr_max_range_m": max_range(&pdr),
            "nar_90_distance_m": thr.meters,
            "nar_90_flagged": thr.flagged,
        }),
    )?;
    if let Some(r) = rnar_r {
        let rnar = compute_rnar(&log, &sc, r, opts.window_s)?;
        let mut w = String::from("window,rx_id,n,na,rnar\n");
        for x in &rnar.windows {
            w += &format!(
                "{},{},{},{},{}\n",
                x.window,
                log.meta.node_names[x.rx.0 as usize],
                x.n,
                x.na,
                x.ratio()
            );
        }
        run.write("rnar_windows.csv", w.as_bytes())?;
        let mut p = Vec::new();
        rnar.write_profile_csv(&mut p)?;
        run.write("rnar_profile.csv", &p)?;
    }
    run.finish()
}

/// A series read back from its CSV; per-node detail is not stored there.
fn series_from_csv(path: &Path, metric: Metric, width: f64) -> Result<BinnedSeries> {
    let rows = metrics::read_series_csv(path)?;
    Ok(BinnedSeries {
        metric,
        bin_width_m: width,
        window_s: None,
        min_samples: 0,
        bins: rows
            .into_iter()
            .map(|(center_m, mean, std, n)| Bin {
                center_m,
                per_node: Vec::new(),
                mean,
                std,
                sample_count: n,
                excluded: false,
            })
            .collect(),
    })
}

fn curve_csv(centers: &[f64], values: &[f64], counts: &[u64]) -> Vec<u8> {
    let mut s = String::from("bin_center_m,mean,std,n\n");
    for ((c, v), n) in centers.iter().zip(values).zip(counts) {
        s += &format!("{c},{v},0,{n}\n");
    }
    s.into_bytes()
}

fn fit(pdr_csv: &Path, nar_csv: &Path, pdr_bin: f64, nar_bin: f64, weights: Weights, out: &Path) -> Result<PathBuf> {
    let pdr = series_from_csv(pdr_csv, Metric::Pdr, pdr_bin)?;
    let nar = series_from_csv(nar_csv, Metric::Nar, nar_bin)?;
    let mode = match weights {
        Weights::Counts => WeightsMode::Counts,
        Weights::Uniform => WeightsMode::Uniform,
    };
    let points = experiments::fit_points(&pdr, &nar, mode);
    let model = awareness::fit_z(&points, mode)?;
    let flags = json!({ "pdr_bin": pdr_bin, "nar_bin": nar_bin, "weights": mode });
    let mut run = RunDir::create(
        out,
        "fit-z",
        Vec::new(),
        flags,
        &[pdr_csv.to_path_buf(), nar_csv.to_path_buf()],
    )?;
    run.write_json("model.json", &model)?;
    let (mut centers, mut p, mut n) = (Vec::new(), Vec::new(), Vec::new());
    for (v, b) in experiments::pdr_on_bins(&pdr, &nar).into_iter().zip(&nar.bins) {
        if let Some(v) = v {
            centers.push(b.center_m);
            p.push(v);
            n.push(b.sample_count);
        }
    }
    let predicted: Vec<f64> = p.iter().map(|&x| model.predict(x)).collect();
    let (lo, hi) = nar_bounds(&p);
    run.write("model.csv", &curve_csv(&centers, &predicted, &n))?;
    run.write("bound_z2.csv", &curve_csv(&centers, &lo, &n))?;
    run.write("bound_z8.csv", &curve_csv(&centers, &hi, &n))?;
    run.finish()
}

fn validate(measured: &Path, model: &Path, common_bins: bool, out: &Path) -> Result<PathBuf> {
    let mut a = metrics::read_series_csv(measured)?;
    let mut b = metrics::read_series_csv(model)?;
    if common_bins {
        let has = |v: &[(f64, f64, f64, u64)], c: f64| v.iter().any(|r| (r.0 - c).abs() < 1e-9);
        let (a0, b0) = (a.clone(), b.clone());
        a.retain(|r| has(&b0, r.0));
        b.retain(|r| has(&a0, r.0));
    }
    let centers = |v: &[(f64, f64, f64, u64)]| -> Vec<f64> { v.iter().map(|r| r.0).collect() };
    let means = |v: &[(f64, f64, f64, u64)]| -> Vec<f64> { v.iter().map(|r| r.1).collect() };
    let report = validate_model(&centers(&a), &means(&a), &centers(&b), &means(&b))?;
    let flags = json!({ "common_bins": common_bins });
    let mut run = RunDir::create(
        out,
        "validate",
        Vec::new(),
        flags,
        &[measured.to_path_buf(), model.to_path_buf()],
    )?;
    run.write_json("report.json", &report)?;
    run.finish()
}

fn sweep(
    spec_path: &Path,
    scenario: &Path,
    channel: Option<&Path>,
    beacon: Option<&Path>,
    seed: u64,
    out: &Path,
) -> Result<PathBuf> {
    let raw: Value = read_json(spec_path)?;
    let mut spec: SweepSpec =
        serde_json::from_value(raw.clone()).with_context(|| format!("cannot parse {}", spec_path.display()))?;
    if raw.get("seeds").is_none() {
        spec.seeds = vec![seed];
    }
    let mut cfg = load(scenario, channel, beacon)?;
    cfg.inputs.push(spec_path.to_path_buf());
    let sc = cfg.scenario.build(&cfg.base, seed)?;
    spec.validate(sc.tick_s)?;
    let resolved = json!({
        "spec": spec,
        "scenario": cfg.scenario,
        "channel": cfg.channel,
        "beacon": cfg.beacon,
    });
    let mut seeds = vec![seed];
    seeds.extend(&spec.seeds);
    let mut run = RunDir::create(out, "sweep", seeds, resolved, &cfg.inputs)?;
    let surface = experiments::run_sweep(&sc, &spec, &cfg.beacon, &cfg.channel)?;

    let mut all = Vec::new();
    surface.write_csv(&mut all, |_| true)?;
    run.write("surface.csv", &all)?;
    let mut summary = Vec::new();
    for &w in &spec.windows_s {
        for &r in &spec.rates_hz {
            let name = format!("power_r{r}_w{w}");
            let mut csv = Vec::new();
            surface.write_csv(&mut csv, |c| c.rate_hz == r && c.window_s == w)?;
            run.write(&format!("{name}.csv"), &csv)?;
            let title = format!("NAR, rate {r} Hz, t = {w} s");
            run.write(
                &format!("{name}.gp"),
                experiments::surface_gnuplot(&format!("{name}.csv"), &title, 1).as_bytes(),
            )?;
        }
        for &p in &spec.plot_powers_dbm {
            if !spec.powers_dbm.contains(&p) {
                continue;
            }
            let name = format!("rate_p{p}_w{w}");
            let mut csv = Vec::new();
            surface.write_csv(&mut csv, |c| c.power_dbm == p && c.window_s == w)?;
            run.write(&format!("{name}.csv"), &csv)?;
            let title = format!("NAR, power {p} dBm, t = {w} s");
            run.write(
                &format!("{name}.gp"),
                experiments::surface_gnuplot(&format!("{name}.csv"), &title, 2).as_bytes(),
            )?;
        }
    }
    for c in &surface.cells {
        let t = nar_threshold_distance(&c.nar, 0.9);
        summary.push(json!({
            "power_dbm": c.power_dbm,
            "rate_hz": c.rate_hz,
            "window_s": c.window_s,
            "nar_90_distance_m": t.meters,
            "flagged": t.flagged,
        }));
    }
    run.write_json("thresholds.json", &summary)?;
    run.finish()
}

fn gen_scenario(config: &Path, seed: u64, out: &Path) -> Result<PathBuf> {
    let cfg: ScenarioConfig = read_json(config)?;
    let base = base_dir(config);
    let sc = cfg.build(&base, seed)?;
    let mut inputs = vec![config.to_path_buf()];
    inputs.extend(cfg.inputs(&base));
    let mut run = RunDir::create(out, "gen-scenario", vec![seed], json!({ "scenario": cfg }), &inputs)?;
    let mut trace = Vec::new();
    write_trace(&sc, &mut trace)?;
    run.write("trace.csv", &trace)?;
    let mut obstacles = Vec::new();
    write_obstacles(&sc.obstacles, &mut obstacles)?;
    run.write("obstacles.csv", &obstacles)?;
    let trace_cfg = config::ScenarioConfig::Trace(config::TraceConfig {
        environment: sc.environment,
        trace: "trace.csv".into(),
        obstacles: Some("obstacles.csv".into()),
        static_nodes: None,
        coords: Default::default(),
        tick_s: sc.tick_s,
    });
    run.write_json("scenario.json", &trace_cfg)?;
    run.finish()
}
