use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sorted reporting times in hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid(Vec<f64>);

impl SampleGrid {
    /// Times k·dt for k = 0, 1, … up to t_max, with t_max appended when it is
    /// not a multiple of dt.
    pub fn uniform(t_max: f64, dt: f64) -> Self {
        assert!(dt > 0.0 && t_max >= 0.0, "bad grid: t_max {t_max}, dt {dt}");
        let n = (t_max / dt + 1e-9).floor() as usize;
        let mut times: Vec<f64> = (0..=n).map(|k| k as f64 * dt).collect();
        if let Some(&last) = times.last() {
            if t_max - last > 1e-9 * dt {
                times.push(t_max);
            }
        }
        Self(times)
    }

    pub fn from_times(mut times: Vec<f64>) -> Result<Self> {
        if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::InvalidParams(vec!["sample times must be finite and >= 0".into()]));
        }
        times.sort_by(f64::total_cmp);
        times.dedup();
        Ok(Self(times))
    }

    pub fn times(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Individual masses at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassSnapshot {
    pub t: f64,
    pub masses: Vec<f64>,
}

/// Observables on a sample grid. `count` is the population size for the
/// individual-based model and ⟨p, 1⟩ for the density model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub count: Vec<f64>,
    /// Biomass concentration (total mass / V), mg/l.
    pub biomass: Vec<f64>,
    /// Substrate concentration, mg/l.
    pub substrate: Vec<f64>,
    pub washout_time: Option<f64>,
}

impl Trajectory {
    pub(crate) fn with_capacity(n: usize) -> Self {
        Self {
            times: Vec::with_capacity(n),
            count: Vec::with_capacity(n),
            biomass: Vec::with_capacity(n),
            substrate: Vec::with_capacity(n),
            washout_time: None,
        }
    }

    pub(crate) fn push(&mut self, t: f64, count: f64, biomass: f64, substrate: f64) {
        self.times.push(t);
        self.count.push(count);
        self.biomass.push(biomass);
        self.substrate.push(substrate);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Linear interpolation of one observable at time t, clamped to the ends.
    pub fn interpolate(values: &[f64], times: &[f64], t: f64) -> f64 {
        let k = times.partition_point(|&s| s < t);
        if k == 0 {
            return values[0];
        }
        if k >= times.len() {
            return values[times.len() - 1];
        }
        let (t0, t1) = (times[k - 1], times[k]);
        let w = (t - t0) / (t1 - t0);
        values[k - 1] + w * (values[k] - values[k - 1])
    }
}

/// sup_t |a − b| / sup_t |b| over times ≤ horizon, both series on the same grid.
pub fn relative_sup_distance(times: &[f64], a: &[f64], b: &[f64], horizon: f64) -> f64 {
    let mut num: f64 = 0.0;
    let mut den: f64 = 0.0;
    for ((&t, &x), &y) in times.iter().zip(a).zip(b) {
        if t > horizon + 1e-9 {
            break;
        }
        num = num.max((x - y).abs());
        den = den.max(y.abs());
    }
    num / den
}
