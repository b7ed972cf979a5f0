//! Closed-form neighbor-awareness model: NAR from per-message delivery
//! probability, with a fitted discount exponent `Z`.

use num_traits::{Float, FromPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const Z_MIN: f64 = 0.5;
pub const Z_MAX: f64 = 20.0;
pub const Z_LOW: f64 = 2.0;
pub const Z_HIGH: f64 = 8.0;
const Z_TOL: f64 = 1e-4;
const PDR_CLAMP: f64 = 1e-6;

fn c<T: FromPrimitive>(x: f64) -> T {
    T::from_f64(x).expect("constant representable")
}

/// Probability that the first success after a success arrives `k` messages
/// later.
pub fn irt_pmf<T: Float>(p: T, k: u32) -> Result<T> {
    if k < 1 {
        return Err(Error::config("inter-reception index k must be >= 1"));
    }
    Ok((T::one() - p).powi(k as i32 - 1) * p)
}

/// Probability of at least one success among `n` messages, as an explicit
/// sum over first-success positions.
pub fn nar_sum<T: Float>(pdr: T, n: u32) -> T {
    let q = T::one() - pdr;
    let mut acc = T::zero();
    let mut qk = T::one();
    for _ in 0..n {
        acc = acc + qk * pdr;
        qk = qk * q;
    }
    acc
}

pub fn nar_closed<T: Float>(pdr: T, z: T) -> T {
    T::one() - (T::one() - pdr).powf(z)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightsMode {
    Counts,
    Uniform,
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AwarenessModel<T> {
    #[serde(rename = "Z")]
    pub z: T,
    pub fit_error: T,
    pub n_bins: usize,
    pub weights_mode: WeightsMode,
}

impl<T: Float> AwarenessModel<T> {
    pub fn predict(&self, pdr: T) -> T {
        nar_closed(pdr, self.z)
    }
}

/// One `(pdr, nar)` observation with its weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitPoint<T> {
    pub pdr: T,
    pub nar: T,
    pub weight: T,
}

/// Weighted squared error of the model at `z`, divided by total weight.
pub fn fit_objective<T: Float + FromPrimitive>(points: &[FitPoint<T>], z: T) -> T {
    let lo: T = c(PDR_CLAMP);
    let hi = T::one() - lo;
    let mut num = T::zero();
    let mut den = T::zero();
    for p in points {
        let pdr = p.pdr.max(lo).min(hi);
        let r = p.nar - nar_closed(pdr, z);
        num = num + p.weight * r * r;
        den = den + p.weight;
    }
    num / den
}

/// Least-squares fit of `Z` over `[0.5, 20]`: a 0.5-step grid scan picks the
/// bracket, golden-section refines it.
pub fn fit_z<T: Float + FromPrimitive>(points: &[FitPoint<T>], mode: WeightsMode) -> Result<AwarenessModel<T>> {
    let informative = points
        .iter()
        .filter(|p| p.pdr > T::zero() && p.pdr < T::one() && p.weight > T::zero())
        .count();
    if informative < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 bins with 0 < pdr < 1, got {informative}"
        )));
    }
    if points
        .iter()
        .any(|p| !(p.weight >= T::zero()) || !p.pdr.is_finite() || !p.nar.is_finite())
    {
        return Err(Error::config("fit points must be finite with non-negative weights"));
    }
    let f = |z: T| fit_objective(points, z);
    let step: T = c(0.5);
    let n_grid = ((Z_MAX - Z_MIN) / 0.5).round() as usize;
    let grid: Vec<T> = (0..=n_grid).map(|i| c::<T>(Z_MIN) + step * c(i as f64)).collect();
    let mut best = 0;
    let mut best_val = f(grid[0]);
    for (i, &z) in grid.iter().enumerate().skip(1) {
        let v = f(z);
        if v < best_val {
            best = i;
            best_val = v;
        }
    }
    let mut a = grid[best.saturating_sub(1)];
    let mut b = grid[(best + 1).min(n_grid)];
    let inv_phi: T = c((5f64.sqrt() - 1.0) / 2.0);
    let tol: T = c(Z_TOL);
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > tol {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2);
        }
    }
    let mut z = (a + b) / c(2.0);
    let mut err = f(z);
    // Never return worse than the best grid point.
    if best_val < err {
        z = grid[best];
        err = best_val;
    }
    Ok(AwarenessModel {
        z,
        fit_error: err,
        n_bins: points.len(),
        weights_mode: mode,
    })
}

/// Model curves at the low and high ends of the commonly observed `Z` range.
pub fn nar_bounds<T: Float + FromPrimitive>(pdr: &[T]) -> (Vec<T>, Vec<T>) {
    let lo = pdr.iter().map(|&p| nar_closed(p, c(Z_LOW))).collect();
    let hi = pdr.iter().map(|&p| nar_closed(p, c(Z_HIGH))).collect();
    (lo, hi)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub bin_centers_m: Vec<f64>,
    pub abs_diff: Vec<f64>,
    pub mean_abs_diff: f64,
    pub std_error: f64,
}

/// Per-bin absolute difference between two curves sampled at the same bin
/// centers, with the mean and its standard error.
pub fn validate_model(centers_a: &[f64], a: &[f64], centers_b: &[f64], b: &[f64]) -> Result<ValidationReport> {
    if centers_a.len() != a.len() || centers_b.len() != b.len() {
        return Err(Error::BinMismatch("centers and values differ in length".into()));
    }
    if centers_a.len() != centers_b.len() || centers_a.iter().zip(centers_b).any(|(x, y)| (x - y).abs() > 1e-9) {
        return Err(Error::BinMismatch("series have different bin centers".into()));
    }
    if a.is_empty() {
        return Err(Error::InsufficientData("no bins to compare".into()));
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
    let n = diff.len() as f64;
    let mean = diff.iter().sum::<f64>() / n;
    let std_error = if diff.len() > 1 {
        let var = diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(ValidationReport {
        bin_centers_m: centers_a.to_vec(),
        abs_diff: diff,
        mean_abs_diff: mean,
        std_error,
    })
}
