use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-width of the evaluation grid beyond the sample range, in bandwidths.
pub const KDE_MARGIN: f64 = 6.0;
const POINTS_PER_BANDWIDTH: f64 = 10.0;
const MAX_POINTS: usize = 100_001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeCurve {
    pub bandwidth: f64,
    pub t: Vec<f64>,
    pub density: Vec<f64>,
}

impl KdeCurve {
    /// Trapezoidal integral of the curve.
    pub fn integral(&self) -> f64 {
        self.t
            .windows(2)
            .zip(self.density.windows(2))
            .map(|(t, d)| 0.5 * (t[1] - t[0]) * (d[0] + d[1]))
            .sum()
    }

    /// Indices of strict interior local maxima, ignoring flat stretches
    /// below `floor` times the peak height.
    pub fn modes(&self, floor: f64) -> Vec<usize> {
        let peak = self.density.iter().cloned().fold(0.0, f64::max);
        local_maxima(&self.density, floor * peak)
    }
}

/// Strict interior local maxima of `v` with height above `floor`. A plateau
/// counts once, at its first index.
pub fn local_maxima(v: &[f64], floor: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < v.len() {
        if v[i] > v[i - 1] && v[i] > floor {
            let mut j = i;
            while j + 1 < v.len() && v[j + 1] == v[i] {
                j += 1;
            }
            if j + 1 < v.len() && v[j + 1] < v[i] {
                out.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// 1.06·σ̂·n^(−1/5) with the unbiased sample standard deviation.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let h = 1.06 * var.sqrt() * (n as f64).powf(-0.2);
    if h > 0.0 && h.is_finite() {
        Ok(h)
    } else {
        Err(Error::Bandwidth(h))
    }
}

/// Gaussian kernel density estimate of the washout times, on a uniform grid
/// running `KDE_MARGIN` bandwidths past both ends of the sample.
pub fn washout_kde(samples: &[f64], bandwidth: f64) -> Result<KdeCurve> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Bandwidth(bandwidth));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(crate::error::domain("washout time", f64::NAN, "finite"));
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - KDE_MARGIN * bandwidth;
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + KDE_MARGIN * bandwidth;
    let points = (((hi - lo) / bandwidth * POINTS_PER_BANDWIDTH).ceil() as usize + 1).min(MAX_POINTS);
    let step = (hi - lo) / (points - 1) as f64;

    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let norm = 1.0 / (sorted.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let reach = 9.0 * bandwidth;
    let t: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
    let density = t
        .iter()
        .map(|&x| {
            let a = sorted.partition_point(|&s| s < x - reach);
            let b = sorted.partition_point(|&s| s <= x + reach);
            norm * sorted[a..b]
                .iter()
                .map(|&s| (-0.5 * ((x - s) / bandwidth).powi(2)).exp())
                .sum::<f64>()
        })
        .collect();
    Ok(KdeCurve { bandwidth, t, density })
}
