use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// Density-style histogram over [0, m_max]: count / (N · bin width).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MassHistogram {
    /// No individuals to bin.
    Empty { bins: usize, m_max: f64 },
    Density {
        m_max: f64,
        bin_width: f64,
        individuals: u64,
        density: Vec<f64>,
    },
}

impl MassHistogram {
    pub fn bins(&self) -> usize {
        match self {
            Self::Empty { bins, .. } => *bins,
            Self::Density { density, .. } => density.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Self::Empty { .. })
    }

    /// Left bin edges.
    pub fn edges(&self) -> Vec<f64> {
        let (m_max, bins) = match self {
            Self::Empty { bins, m_max } => (*m_max, *bins),
            Self::Density { m_max, density, .. } => (*m_max, density.len()),
        };
        (0..bins).map(|b| m_max * b as f64 / bins as f64).collect()
    }
}

#[inline]
pub(crate) fn bin_of(x: f64, bins: usize, m_max: f64) -> usize {
    ((x / m_max * bins as f64) as usize).min(bins - 1)
}

pub(crate) fn from_counts(counts: &[u64], m_max: f64) -> MassHistogram {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return MassHistogram::Empty {
            bins: counts.len(),
            m_max,
        };
    }
    let bin_width = m_max / counts.len() as f64;
    let scale = 1.0 / (total as f64 * bin_width);
    MassHistogram::Density {
        m_max,
        bin_width,
        individuals: total,
        density: counts.iter().map(|&c| c as f64 * scale).collect(),
    }
}

/// Histogram of a population snapshot with `bins` equal bins on [0, m_max];
/// a mass equal to m_max falls in the last bin.
pub fn mass_histogram(masses: &[f64], bins: usize, m_max: f64) -> Result<MassHistogram> {
    if bins == 0 {
        return Err(domain("bins", 0.0, "[1, inf)"));
    }
    if let Some(&x) = masses.iter().find(|&&x| !(0.0..=m_max).contains(&x)) {
        return Err(domain("mass", x, "[0, m_max]"));
    }
    let mut counts = vec![0u64; bins];
    for &x in masses {
        counts[bin_of(x, bins, m_max)] += 1;
    }
    Ok(from_counts(&counts, m_max))
}
