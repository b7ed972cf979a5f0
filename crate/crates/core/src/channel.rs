//! Received-power computation and the sensitivity-threshold reception
//! decision.
//!
//! Large-scale loss is a deterministic function of link geometry. All
//! randomness sits in the small-scale term, whose standard deviation is
//! drawn once per link and one-second bin from a configured distribution.

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::geometry::{LinkClass, LinkGeometry};
use crate::mobility::{Environment, NodeId, NodeState, Role};
use crate::rng::{self, Stream};

pub const SPEED_OF_LIGHT_MPS: f64 = 299_792_458.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LosModel {
    TwoRay,
    LogDistance,
}

/// Distribution of the per-second small-scale standard deviation (dB).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DistributionSpec {
    /// `ln X ~ N(mu, sigma²)`.
    Lognormal {
        mu: f64,
        sigma: f64,
    },
    Gamma {
        shape: f64,
        scale: f64,
    },
    /// Normal restricted to `(0, ∞)`; `mean`/`std` are the parent's.
    TruncatedNormal {
        mean: f64,
        std: f64,
    },
    /// Point mass.
    Fixed {
        value: f64,
    },
}

impl DistributionSpec {
    pub fn lognormal_median(median: f64, sigma_log: f64) -> Self {
        DistributionSpec::Lognormal {
            mu: median.ln(),
            sigma: sigma_log,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            DistributionSpec::Lognormal { mu, sigma } => mu.is_finite() && sigma >= 0.0 && sigma.is_finite(),
            DistributionSpec::Gamma { shape, scale } => {
                shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()
            }
            DistributionSpec::TruncatedNormal { mean, std } => {
                mean.is_finite() && std > 0.0 && std.is_finite() && mean / std > -6.0
            }
            DistributionSpec::Fixed { value } => value > 0.0 && value.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid distribution parameters {self:?}")))
        }
    }

    /// Analytic mean.
    pub fn mean(&self) -> f64 {
        match *self {
            DistributionSpec::Lognormal { mu, sigma } => (mu + sigma * sigma / 2.0).exp(),
            DistributionSpec::Gamma { shape, scale } => shape * scale,
            DistributionSpec::TruncatedNormal { mean, std } => {
                let a = -mean / std;
                mean + std * std_pdf(a) / (1.0 - std_cdf(a))
            }
            DistributionSpec::Fixed { value } => value,
        }
    }

    /// Analytic variance.
    pub fn variance(&self) -> f64 {
        match *self {
            DistributionSpec::Lognormal { mu, sigma } => {
                ((sigma * sigma).exp() - 1.0) * (2.0 * mu + sigma * sigma).exp()
            }
            DistributionSpec::Gamma { shape, scale } => shape * scale * scale,
            DistributionSpec::TruncatedNormal { mean, std } => {
                let a = -mean / std;
                let lambda = std_pdf(a) / (1.0 - std_cdf(a));
                std * std * (1.0 + a * lambda - lambda * lambda)
            }
            DistributionSpec::Fixed { .. } => 0.0,
        }
    }

    /// Log density at `x > 0`.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        match *self {
            DistributionSpec::Lognormal { mu, sigma } => {
                if sigma == 0.0 {
                    return if (x.ln() - mu).abs() < 1e-12 {
                        f64::INFINITY
                    } else {
                        f64::NEG_INFINITY
                    };
                }
                let z = (x.ln() - mu) / sigma;
                -x.ln() - sigma.ln() - 0.5 * LN_2PI - 0.5 * z * z
            }
            DistributionSpec::Gamma { shape, scale } => {
                (shape - 1.0) * x.ln() - x / scale - shape * scale.ln() - ln_gamma(shape)
            }
            DistributionSpec::TruncatedNormal { mean, std } => {
                let z = (x - mean) / std;
                -0.5 * z * z - std.ln() - 0.5 * LN_2PI - std_cdf(mean / std).ln()
            }
            DistributionSpec::Fixed { value } => {
                if x == value {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        samples.iter().map(|&x| self.ln_pdf(x)).sum()
    }

    /// One draw, fully determined by `bits`.
    pub fn sample_keyed(&self, bits: u64) -> f64 {
        match *self {
            DistributionSpec::Lognormal { mu, sigma } => (mu + sigma * rng::std_normal(bits)).exp(),
            DistributionSpec::Gamma { shape, scale } => {
                let g = Gamma::new(shape, scale).expect("validated gamma");
                g.sample(&mut rng::generator(bits))
            }
            DistributionSpec::TruncatedNormal { mean, std } => {
                let mut attempt = 0u64;
                loop {
                    let x = mean + std * rng::std_normal(rng::key(bits, Stream::Sigma, attempt, 0, 0));
                    if x > 0.0 {
                        return x;
                    }
                    attempt += 1;
                }
            }
            DistributionSpec::Fixed { value } => value,
        }
    }
}

const LN_2PI: f64 = 1.837_877_066_409_345_3;

fn std_pdf(x: f64) -> f64 {
    (-0.5 * x * x - 0.5 * LN_2PI).exp()
}

fn std_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaByEnvironment {
    pub urban: DistributionSpec,
    pub highway: DistributionSpec,
}

impl SigmaByEnvironment {
    pub fn get(&self, env: Environment) -> &DistributionSpec {
        match env {
            Environment::Urban => &self.urban,
            Environment::Highway => &self.highway,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainByRole {
    pub vehicle: f64,
    pub roadside: f64,
}

impl GainByRole {
    pub fn get(&self, role: Role) -> f64 {
        match role {
            Role::Vehicle => self.vehicle,
            Role::Roadside => self.roadside,
        }
    }
}

/// Propagation and reception parameters. Every field has a default and can
/// be overridden from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub frequency_hz: f64,
    pub sensitivity_dbm: f64,
    pub los_model: LosModel,
    /// Exponent of the `log_distance` LOS model.
    pub los_exponent: f64,
    pub nlosb_exponent: f64,
    /// Extra loss for 1, 2, ... blocking vehicles; the last entry applies to
    /// any larger count.
    pub per_vehicle_loss_db: Vec<f64>,
    pub building_loss_db: f64,
    pub foliage_loss_db: f64,
    pub obstruction_cap_db: f64,
    pub smallscale_sigma: SigmaByEnvironment,
    /// Spacing of the independent anchor draws of the small-scale process.
    /// Between anchors the variation is interpolated, so beacons closer in
    /// time than this are strongly correlated. 0 gives i.i.d. per-beacon
    /// variation.
    pub fading_coherence_s: f64,
    pub antenna_gain_dbi: GainByRole,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            frequency_hz: 5.9e9,
            sensitivity_dbm: -95.0,
            los_model: LosModel::TwoRay,
            los_exponent: 2.0,
            nlosb_exponent: 2.7,
            per_vehicle_loss_db: vec![6.0, 9.0, 12.0],
            building_loss_db: 1.0,
            foliage_loss_db: 1.0,
            obstruction_cap_db: 40.0,
            smallscale_sigma: SigmaByEnvironment {
                urban: DistributionSpec::lognormal_median(3.5, 0.4),
                highway: DistributionSpec::lognormal_median(2.0, 0.4),
            },
            fading_coherence_s: 2.0,
            antenna_gain_dbi: GainByRole {
                vehicle: 0.0,
                roadside: 14.0,
            },
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.sensitivity_dbm.is_finite() {
            return Err(Error::config("sensitivity_dbm must be finite"));
        }
        if !(self.frequency_hz > 0.0) {
            return Err(Error::config("frequency_hz must be > 0"));
        }
        if !(self.nlosb_exponent >= 2.0) || !(self.los_exponent >= 2.0) {
            return Err(Error::config("path-loss exponents must be >= 2"));
        }
        if self.per_vehicle_loss_db.windows(2).any(|w| w[1] < w[0])
            || self.per_vehicle_loss_db.iter().any(|v| !(*v >= 0.0))
        {
            return Err(Error::config(
                "per_vehicle_loss_db must be non-negative and non-decreasing",
            ));
        }
        if !(self.building_loss_db >= 0.0 && self.foliage_loss_db >= 0.0 && self.obstruction_cap_db >= 0.0) {
            return Err(Error::config("obstruction losses must be >= 0"));
        }
        if !(self.fading_coherence_s >= 0.0 && self.fading_coherence_s.is_finite()) {
            return Err(Error::config("fading_coherence_s must be finite and >= 0"));
        }
        self.smallscale_sigma.urban.validate()?;
        self.smallscale_sigma.highway.validate()
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT_MPS / self.frequency_hz
    }
}

/// Friis free-space loss, `20 log10(4πd/λ)`.
pub fn free_space_loss_db(distance_m: f64, wavelength_m: f64) -> f64 {
    20.0 * (4.0 * std::f64::consts::PI * distance_m / wavelength_m).log10()
}

/// Two-ray ground reflection with reflection coefficient −1, using the
/// exact two-path field sum beyond the crossover distance `4π·ht·hr/λ` and
/// free space below it. Distances under 1 m are clamped to 1 m.
pub fn two_ray_loss_db(distance_m: f64, tx_height_m: f64, rx_height_m: f64, wavelength_m: f64) -> f64 {
    let d = distance_m.max(1.0);
    let crossover = 4.0 * std::f64::consts::PI * tx_height_m * rx_height_m / wavelength_m;
    let dz = tx_height_m - rx_height_m;
    let direct = d.hypot(dz);
    if d < crossover {
        return free_space_loss_db(direct, wavelength_m);
    }
    let reflected = d.hypot(tx_height_m + rx_height_m);
    // reflected − direct without cancellation.
    let path_diff = 4.0 * tx_height_m * rx_height_m / (reflected + direct);
    let phase = std::f64::consts::TAU * path_diff / wavelength_m;
    let ratio = direct / reflected;
    let re = 1.0 - ratio * phase.cos();
    let im = ratio * phase.sin();
    free_space_loss_db(direct, wavelength_m) - 10.0 * (re * re + im * im).log10()
}

/// Log-distance loss referenced to free space at 1 m.
pub fn log_distance_loss_db(distance_m: f64, exponent: f64, wavelength_m: f64) -> f64 {
    free_space_loss_db(1.0, wavelength_m) + 10.0 * exponent * distance_m.max(1.0).log10()
}

fn los_loss_db(distance_m: f64, tx_h: f64, rx_h: f64, cfg: &ChannelConfig) -> f64 {
    let wl = cfg.wavelength_m();
    match cfg.los_model {
        LosModel::TwoRay => two_ray_loss_db(distance_m, tx_h, rx_h, wl),
        LosModel::LogDistance => log_distance_loss_db(distance_m, cfg.los_exponent, wl),
    }
}

/// Extra loss for `n` blocking vehicles.
pub fn vehicle_obstruction_db(n: u32, cfg: &ChannelConfig) -> f64 {
    if n == 0 || cfg.per_vehicle_loss_db.is_empty() {
        return 0.0;
    }
    let i = (n as usize).min(cfg.per_vehicle_loss_db.len()) - 1;
    cfg.per_vehicle_loss_db[i]
}

/// Deterministic path loss for one link, in dB.
pub fn large_scale_loss(
    geo: &LinkGeometry,
    distance_m: f64,
    tx: &NodeState,
    rx: &NodeState,
    cfg: &ChannelConfig,
) -> f64 {
    let (ht, hr) = (tx.antenna_height_m, rx.antenna_height_m);
    match geo.class() {
        LinkClass::Los => los_loss_db(distance_m, ht, hr, cfg),
        LinkClass::NlosV => los_loss_db(distance_m, ht, hr, cfg) + vehicle_obstruction_db(geo.vehicle_blockers, cfg),
        LinkClass::NlosB => {
            let surcharge = geo.buildings as f64 * cfg.building_loss_db + geo.foliage as f64 * cfg.foliage_loss_db;
            log_distance_loss_db(distance_m, cfg.nlosb_exponent, cfg.wavelength_m())
                + surcharge.min(cfg.obstruction_cap_db)
        }
    }
}

/// Small-scale standard deviation for one link during one second.
pub fn draw_sigma(env: Environment, link_key: u64, second_index: u64, cfg: &ChannelConfig, seed: u64) -> f64 {
    cfg.smallscale_sigma
        .get(env)
        .sample_keyed(rng::key(seed, Stream::Sigma, link_key, second_index, 0))
}

/// Logical coordinates of one beacon on one link.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BeaconKey {
    pub link: u64,
    pub tick: u64,
    pub second: u64,
}

/// Zero-mean Gaussian small-scale term with standard deviation `sigma`.
/// Independent unit normals sit on a grid of spacing `coherence_s` per link;
/// the value at `time_s` interpolates the two surrounding anchors linearly
/// and rescales to unit variance.
pub fn small_scale_db(sigma: f64, key: BeaconKey, time_s: f64, coherence_s: f64, seed: u64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    if coherence_s == 0.0 {
        return sigma * rng::std_normal(rng::key(seed, Stream::SmallScale, key.link, key.tick, 0));
    }
    let x = time_s / coherence_s;
    let k = x.floor();
    let u = x - k;
    let anchor = |i: f64| rng::std_normal(rng::key(seed, Stream::SmallScaleBlock, key.link, i as u64, 0));
    let (w0, w1) = (1.0 - u, u);
    let z = if w1 == 0.0 {
        anchor(k)
    } else {
        (w0 * anchor(k) + w1 * anchor(k + 1.0)) / (w0 * w0 + w1 * w1).sqrt()
    };
    sigma * z
}

/// One transmitted beacon as seen by one candidate receiver.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkSample {
    pub tick: u32,
    pub time_s: f64,
    pub tx: NodeId,
    pub rx: NodeId,
    pub distance_m: f64,
    pub class: LinkClass,
    pub tx_power_dbm: f64,
    /// Antenna gains minus path loss plus the small-scale term; the received
    /// power is `tx_power_dbm + link_gain_db`.
    pub link_gain_db: f64,
    pub rx_power_dbm: f64,
    pub received: bool,
}

/// Evaluates one beacon: received power and the `>=` sensitivity decision.
#[allow(clippy::too_many_arguments)]
pub fn receive(
    tx: &NodeState,
    rx: &NodeState,
    tx_power_dbm: f64,
    geo: &LinkGeometry,
    sigma: f64,
    cfg: &ChannelConfig,
    seed: u64,
    key: BeaconKey,
    time_s: f64,
) -> LinkSample {
    let distance_m = tx.position.dist(&rx.position);
    let gains = cfg.antenna_gain_dbi.get(tx.role) + cfg.antenna_gain_dbi.get(rx.role);
    let link_gain_db = gains - large_scale_loss(geo, distance_m, tx, rx, cfg)
        + small_scale_db(sigma, key, time_s, cfg.fading_coherence_s, seed);
    let rx_power_dbm = tx_power_dbm + link_gain_db;
    LinkSample {
        tick: key.tick as u32,
        time_s,
        tx: tx.id,
        rx: rx.id,
        distance_m,
        class: geo.class(),
        tx_power_dbm,
        link_gain_db,
        rx_power_dbm,
        received: rx_power_dbm >= cfg.sensitivity_dbm,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Lognormal,
    Gamma,
    TruncatedNormal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistributionFit {
    pub spec: DistributionSpec,
    pub log_likelihood: f64,
}

pub const MIN_FIT_SAMPLES: usize = 30;

/// Maximum-likelihood fit of measured per-second standard deviations.
pub fn fit_distribution(samples: &[f64], family: Family) -> Result<DistributionFit> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "need at least {MIN_FIT_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    if let Some(bad) = samples.iter().find(|x| !(**x > 0.0) || !x.is_finite()) {
        return Err(Error::InsufficientData(format!(
            "sample {bad} is not a positive finite value"
        )));
    }
    let n = samples.len() as f64;
    let spec = match family {
        Family::Lognormal => {
            let mu = samples.iter().map(|x| x.ln()).sum::<f64>() / n;
            let var = samples.iter().map(|x| (x.ln() - mu).powi(2)).sum::<f64>() / n;
            DistributionSpec::Lognormal { mu, sigma: var.sqrt() }
        }
        Family::Gamma => {
            let mean = samples.iter().sum::<f64>() / n;
            let mean_ln = samples.iter().map(|x| x.ln()).sum::<f64>() / n;
            let s = mean.ln() - mean_ln;
            let shape = solve_gamma_shape(s);
            DistributionSpec::Gamma {
                shape,
                scale: mean / shape,
            }
        }
        Family::TruncatedNormal => fit_truncated_normal(samples),
    };
    Ok(DistributionFit {
        log_likelihood: spec.log_likelihood(samples),
        spec,
    })
}

/// Root of `ln k − ψ(k) = s`; the left side decreases monotonically.
fn solve_gamma_shape(s: f64) -> f64 {
    const MAX_SHAPE: f64 = 1e10;
    if !(s > 0.0) {
        return MAX_SHAPE;
    }
    let f = |ln_k: f64| {
        let k = ln_k.exp();
        k.ln() - digamma(k) - s
    };
    let (mut lo, mut hi) = (1e-8f64.ln(), MAX_SHAPE.ln());
    if f(hi) > 0.0 {
        return MAX_SHAPE;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    (0.5 * (lo + hi)).exp()
}

fn fit_truncated_normal(samples: &[f64]) -> DistributionSpec {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let std = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(1e-9);
    let nll = |p: [f64; 2]| {
        let spec = DistributionSpec::TruncatedNormal {
            mean: p[0],
            std: p[1].exp(),
        };
        if spec.validate().is_err() {
            return f64::INFINITY;
        }
        -spec.log_likelihood(samples)
    };
    let best = nelder_mead(nll, [mean, std.ln()], [0.1 * std.max(mean.abs()), 0.1], 2000);
    DistributionSpec::TruncatedNormal {
        mean: best[0],
        std: best[1].exp(),
    }
}

/// Two-dimensional Nelder–Mead minimizer.
fn nelder_mead(f: impl Fn([f64; 2]) -> f64, start: [f64; 2], step: [f64; 2], iters: usize) -> [f64; 2] {
    let mut pts = [start, [start[0] + step[0], start[1]], [start[0], start[1] + step[1]]];
    let mut vals = pts.map(&f);
    let comb = |a: [f64; 2], b: [f64; 2], t: f64| [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    for _ in 0..iters {
        let mut order = [0usize, 1, 2];
        order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
        pts = order.map(|i| pts[i]);
        vals = order.map(|i| vals[i]);
        if (vals[2] - vals[0]).abs() <= 1e-12 * (1.0 + vals[0].abs()) {
            break;
        }
        let centroid = comb(pts[0], pts[1], 0.5);
        let reflected = comb(centroid, pts[2], -1.0);
        let fr = f(reflected);
        if fr < vals[0] {
            let expanded = comb(centroid, pts[2], -2.0);
            let fe = f(expanded);
            (pts[2], vals[2]) = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < vals[1] {
            (pts[2], vals[2]) = (reflected, fr);
        } else {
            let contracted = comb(centroid, pts[2], 0.5);
            let fc = f(contracted);
            if fc < vals[2] {
                (pts[2], vals[2]) = (contracted, fc);
            } else {
                for i in 1..3 {
                    pts[i] = comb(pts[0], pts[i], 0.5);
                    vals[i] = f(pts[i]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&i, &j| vals[i].total_cmp(&vals[j])).unwrap();
    pts[best]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point2;

    fn car(id: u32, x: f64) -> NodeState {
        let mut n = NodeState::vehicle(NodeId(id), 0.0, Point2::new(x, 0.0), 90.0);
        n.antenna_height_m = 1.5;
        n
    }

    fn geo(class: LinkClass, blockers: u32, buildings: u32) -> LinkGeometry {
        LinkGeometry {
            class: Some(class),
            vehicle_blockers: blockers,
            buildings,
            foliage: 0,
        }
    }

    #[test]
    fn friis_at_100m() {
        let cfg = ChannelConfig::default();
        let l = free_space_loss_db(100.0, cfg.wavelength_m());
        assert!((l - 87.87).abs() < 0.05, "{l}");
    }

    #[test]
    fn two_ray_far_field_slope() {
        let wl = ChannelConfig::default().wavelength_m();
        for d in [2_000.0, 5_000.0] {
            let slope = two_ray_loss_db(10.0 * d, 1.5, 1.5, wl) - two_ray_loss_db(d, 1.5, 1.5, wl);
            assert!((slope - 40.0).abs() < 0.5, "slope {slope} at {d}");
        }
        // Below 1 m the distance is clamped.
        assert_eq!(two_ray_loss_db(0.2, 1.5, 1.5, wl), two_ray_loss_db(1.0, 1.5, 1.5, wl));
    }

    #[test]
    fn nlosv_without_blockers_equals_los() {
        let cfg = ChannelConfig::default();
        let (a, b) = (car(0, 0.0), car(1, 250.0));
        let los = large_scale_loss(&geo(LinkClass::Los, 0, 0), 250.0, &a, &b, &cfg);
        let v0 = large_scale_loss(&geo(LinkClass::NlosV, 0, 0), 250.0, &a, &b, &cfg);
        assert_eq!(los, v0);
        let v5 = large_scale_loss(&geo(LinkClass::NlosV, 5, 0), 250.0, &a, &b, &cfg);
        assert_eq!(v5 - los, 12.0);
    }

    #[test]
    fn obstruction_cap() {
        let cfg = ChannelConfig {
            building_loss_db: 10.0,
            ..Default::default()
        };
        let (a, b) = (car(0, 0.0), car(1, 300.0));
        let l10 = large_scale_loss(&geo(LinkClass::NlosB, 0, 10), 300.0, &a, &b, &cfg);
        let l4 = large_scale_loss(&geo(LinkClass::NlosB, 0, 4), 300.0, &a, &b, &cfg);
        assert_eq!(l10, l4);
        let base = log_distance_loss_db(300.0, cfg.nlosb_exponent, cfg.wavelength_m());
        assert!((l4 - base - 40.0).abs() < 1e-9);
    }

    #[test]
    fn class_ordering_default_config() {
        let cfg = ChannelConfig::default();
        for d in [20.0, 50.0, 100.0, 200.0, 400.0, 800.0, 1500.0] {
            let (a, b) = (car(0, 0.0), car(1, d));
            let los = large_scale_loss(&geo(LinkClass::Los, 0, 0), d, &a, &b, &cfg);
            let v = large_scale_loss(&geo(LinkClass::NlosV, 1, 0), d, &a, &b, &cfg);
            let nb = large_scale_loss(&geo(LinkClass::NlosB, 0, 1), d, &a, &b, &cfg);
            assert!(los <= v && v <= nb, "d={d}: {los} {v} {nb}");
        }
    }

    #[test]
    fn fixed_sigma_and_determinism() {
        let cfg = ChannelConfig {
            smallscale_sigma: SigmaByEnvironment {
                urban: DistributionSpec::Fixed { value: 3.0 },
                highway: DistributionSpec::Fixed { value: 3.0 },
            },
            ..Default::default()
        };
        assert_eq!(draw_sigma(Environment::Urban, 7, 3, &cfg, 1), 3.0);
        let d = ChannelConfig::default();
        let a = draw_sigma(Environment::Highway, 9, 4, &d, 5);
        assert_eq!(a, draw_sigma(Environment::Highway, 9, 4, &d, 5));
        assert_ne!(a, draw_sigma(Environment::Highway, 9, 5, &d, 5));
    }

    #[test]
    fn sigma_moments_match_analytic() {
        for spec in [
            DistributionSpec::lognormal_median(3.5, 0.4),
            DistributionSpec::Gamma { shape: 4.0, scale: 0.8 },
            DistributionSpec::TruncatedNormal { mean: 2.0, std: 1.5 },
        ] {
            let n = 100_000u64;
            let xs: Vec<f64> = (0..n)
                .map(|i| spec.sample_keyed(rng::key(17, Stream::Sigma, i, 0, 0)))
                .collect();
            let m = xs.iter().sum::<f64>() / n as f64;
            let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n as f64;
            assert!(
                (m / spec.mean() - 1.0).abs() < 0.02,
                "{spec:?} mean {m} vs {}",
                spec.mean()
            );
            assert!(
                (v / spec.variance() - 1.0).abs() < 0.02 * 2.5,
                "{spec:?} var {v} vs {}",
                spec.variance()
            );
        }
    }

    fn beacon(tick: u64) -> BeaconKey {
        BeaconKey {
            link: rng::link_key(0, 1),
            tick,
            second: tick / 10,
        }
    }

    #[test]
    fn reception_boundary_is_inclusive() {
        let cfg = ChannelConfig::default();
        let (a, b) = (car(0, 0.0), car(1, 100.0));
        let g = geo(LinkClass::Los, 0, 0);
        let loss = large_scale_loss(&g, 100.0, &a, &b, &cfg);
        let p = cfg.sensitivity_dbm + loss;
        let s = receive(&a, &b, p, &g, 0.0, &cfg, 1, beacon(0), 0.0);
        assert_eq!(s.rx_power_dbm, cfg.sensitivity_dbm);
        assert!(s.received);
        let dead = receive(&a, &b, -200.0, &g, 0.0, &cfg, 1, beacon(0), 0.0);
        assert!(!dead.received);
    }

    #[test]
    fn half_reception_at_threshold_mean() {
        let cfg = ChannelConfig {
            fading_coherence_s: 0.0,
            ..Default::default()
        };
        let (a, b) = (car(0, 0.0), car(1, 100.0));
        let g = geo(LinkClass::Los, 0, 0);
        let p = cfg.sensitivity_dbm + large_scale_loss(&g, 100.0, &a, &b, &cfg);
        let n = 10_000;
        let ok = (0..n)
            .filter(|&t| receive(&a, &b, p, &g, 3.0, &cfg, 42, beacon(t), 0.0).received)
            .count();
        let rate = ok as f64 / n as f64;
        assert!((rate - 0.5).abs() < 0.02, "{rate}");
    }

    #[test]
    fn power_monotonicity() {
        let cfg = ChannelConfig::default();
        let (a, b) = (car(0, 0.0), car(1, 700.0));
        let g = geo(LinkClass::NlosV, 2, 0);
        for t in 0..200 {
            let mut was = false;
            for p in 0..40 {
                let s = receive(&a, &b, p as f64, &g, 3.0, &cfg, 7, beacon(t), 0.0);
                assert!(!(was && !s.received));
                was = s.received;
            }
        }
    }

    #[test]
    fn fit_rejections() {
        assert!(fit_distribution(&[1.0; 10], Family::Lognormal).is_err());
        let mut xs = vec![1.0; 40];
        xs[3] = 0.0;
        assert!(fit_distribution(&xs, Family::Gamma).is_err());
    }

    #[test]
    fn degenerate_lognormal_fit() {
        let fit = fit_distribution(&[2.5; 50], Family::Lognormal).unwrap();
        match fit.spec {
            DistributionSpec::Lognormal { mu, sigma } => {
                assert!(sigma < 1e-12);
                assert!((mu.exp() - 2.5).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn lognormal_round_trip_and_likelihood_ranking() {
        let truth = DistributionSpec::Lognormal { mu: 1.0, sigma: 0.5 };
        let xs: Vec<f64> = (0..10_000u64)
            .map(|i| truth.sample_keyed(rng::key(99, Stream::Sigma, i, 1, 0)))
            .collect();
        let ln = fit_distribution(&xs, Family::Lognormal).unwrap();
        let DistributionSpec::Lognormal { mu, sigma } = ln.spec else {
            panic!()
        };
        assert!((mu - 1.0).abs() < 0.05 && (sigma - 0.5).abs() < 0.025, "{mu} {sigma}");
        let g = fit_distribution(&xs, Family::Gamma).unwrap();
        assert!(g.log_likelihood < ln.log_likelihood);
        let tn = fit_distribution(&xs, Family::TruncatedNormal).unwrap();
        assert!(tn.log_likelihood < ln.log_likelihood);
    }

    #[test]
    fn gamma_and_truncated_normal_recover_parameters() {
        let truth = DistributionSpec::Gamma { shape: 3.0, scale: 1.2 };
        let xs: Vec<f64> = (0..20_000u64)
            .map(|i| truth.sample_keyed(rng::key(5, Stream::Sigma, i, 2, 0)))
            .collect();
        let DistributionSpec::Gamma { shape, scale } = fit_distribution(&xs, Family::Gamma).unwrap().spec else {
            panic!()
        };
        assert!(
            (shape / 3.0 - 1.0).abs() < 0.05 && (scale / 1.2 - 1.0).abs() < 0.05,
            "{shape} {scale}"
        );

        let truth = DistributionSpec::TruncatedNormal { mean: 1.0, std: 2.0 };
        let xs: Vec<f64> = (0..20_000u64)
            .map(|i| truth.sample_keyed(rng::key(6, Stream::Sigma, i, 2, 0)))
            .collect();
        let DistributionSpec::TruncatedNormal { mean, std } =
            fit_distribution(&xs, Family::TruncatedNormal).unwrap().spec
        else {
            panic!()
        };
        assert!(
            (mean - 1.0).abs() < 0.15 && (std / 2.0 - 1.0).abs() < 0.05,
            "{mean} {std}"
        );
    }

    #[test]
    fn config_validation() {
        assert!(ChannelConfig::default().validate().is_ok());
        let bad = ChannelConfig {
            per_vehicle_loss_db: vec![9.0, 6.0],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ChannelConfig {
            nlosb_exponent: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let json = r#"{"sensitivity_dbm": -90, "smallscale_sigma": {"urban": {"family": "gamma", "shape": 2, "scale": 1}, "highway": {"family": "fixed", "value": 2}}}"#;
        let cfg: ChannelConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.sensitivity_dbm, -90.0);
        assert_eq!(cfg.nlosb_exponent, 2.7);
        cfg.validate().unwrap();
    }
}
