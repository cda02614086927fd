//! Initial mass densities. The built-in ones are unnormalized, as printed:
//! only rejection sampling and ratio-type quantities use them.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::error::{domain, Error, Result};

#[derive(Clone)]
pub enum InitialMassDensity {
    /// (z(1−z))⁵ with z = (x − 0.0005)/0.00025 on (0.0005, 0.00075).
    Transient,
    /// (z(1−z))⁵ with z = (x − 0.00035)/0.0003 on (0.00035, 0.00065).
    Smooth,
    Custom {
        f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        lo: f64,
        hi: f64,
        /// Upper bound of f on (lo, hi), used as rejection envelope.
        sup: f64,
    },
}

impl fmt::Debug for InitialMassDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Transient => f.write_str("Transient"),
            Self::Smooth => f.write_str("Smooth"),
            Self::Custom { lo, hi, sup, .. } => f
                .debug_struct("Custom")
                .field("lo", lo)
                .field("hi", hi)
                .field("sup", sup)
                .finish_non_exhaustive(),
        }
    }
}

#[inline]
fn bump(x: f64, start: f64, width: f64) -> f64 {
    if x > start && x < start + width {
        let z = (x - start) / width;
        (z * (1.0 - z)).powi(5)
    } else {
        0.0
    }
}

impl InitialMassDensity {
    /// Piecewise-linear density through `(x, value)` knots, zero outside.
    pub fn tabulated(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidParams(vec![
                "density table needs at least two points".into(),
            ]));
        }
        let mut problems = Vec::new();
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) {
                problems.push(format!("density table abscissae must increase ({} then {})", w[0].0, w[1].0));
            }
        }
        for &(x, v) in &points {
            if !(v >= 0.0 && v.is_finite() && x.is_finite()) {
                problems.push(format!("density table entry ({x}, {v}) must be finite and >= 0"));
            }
        }
        if !problems.is_empty() {
            return Err(Error::InvalidParams(problems));
        }
        let lo = points[0].0;
        let hi = points[points.len() - 1].0;
        let sup = points.iter().map(|p| p.1).fold(0.0, f64::max);
        let f = move |x: f64| {
            if x < lo || x > hi {
                return 0.0;
            }
            let k = points.partition_point(|p| p.0 <= x).clamp(1, points.len() - 1);
            let (x0, y0) = points[k - 1];
            let (x1, y1) = points[k];
            y0 + (y1 - y0) * (x - x0) / (x1 - x0)
        };
        Ok(Self::Custom { f: Arc::new(f), lo, hi, sup })
    }

    /// Support bounds (lo, hi).
    pub fn support(&self) -> (f64, f64) {
        match self {
            Self::Transient => (0.0005, 0.00075),
            Self::Smooth => (0.00035, 0.00065),
            Self::Custom { lo, hi, .. } => (*lo, *hi),
        }
    }

    /// Upper bound of the density on its support.
    pub fn sup(&self) -> f64 {
        match self {
            Self::Transient | Self::Smooth => 0.5f64.powi(10),
            Self::Custom { sup, .. } => *sup,
        }
    }

    /// Density at x without domain checks; zero outside the support.
    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Self::Transient => bump(x, 0.0005, 0.00025),
            Self::Smooth => bump(x, 0.00035, 0.0003),
            Self::Custom { f, lo, hi, .. } => {
                if x < *lo || x > *hi {
                    0.0
                } else {
                    f(x).max(0.0)
                }
            }
        }
    }

    /// Draws one mass by rejection against the uniform envelope on the support.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let (lo, hi) = self.support();
        let sup = self.sup();
        if !(sup > 0.0) {
            return Err(Error::ZeroDensity);
        }
        // a density that is zero almost everywhere would spin forever
        for _ in 0..10_000_000 {
            let x = lo + (hi - lo) * rng.random::<f64>();
            if x <= 0.0 {
                continue;
            }
            if rng.random::<f64>() * sup < self.value(x) {
                return Ok(x);
            }
        }
        Err(Error::ZeroDensity)
    }

    /// Mean of the normalized density by composite Simpson quadrature.
    pub fn mean_mass(&self) -> Result<f64> {
        let (lo, hi) = self.support();
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let (mut m0, mut m1) = (0.0, 0.0);
        for i in 0..=n {
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            let x = lo + i as f64 * h;
            let v = self.value(x);
            m0 += w * v;
            m1 += w * x * v;
        }
        if !(m0 > 0.0) {
            return Err(Error::ZeroDensity);
        }
        Ok(m1 / m0)
    }
}

/// Evaluates a density at x ∈ [0, m_max].
pub fn initial_density_eval(d: &InitialMassDensity, x: f64, m_max: f64) -> Result<f64> {
    if !(0.0..=m_max).contains(&x) {
        return Err(domain("x", x, "[0, m_max]"));
    }
    Ok(d.value(x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const M: f64 = 0.001;

    #[test]
    fn printed_values() {
        let t = InitialMassDensity::Transient;
        let s = InitialMassDensity::Smooth;
        assert_eq!(initial_density_eval(&t, 0.0004, M).unwrap(), 0.0);
        let mid = initial_density_eval(&t, 0.000625, M).unwrap();
        assert!((mid - 2f64.powi(-10)).abs() < 1e-15);
        let mid = initial_density_eval(&s, 0.0005, M).unwrap();
        assert!((mid - 2f64.powi(-10)).abs() < 1e-15);
        assert_eq!(initial_density_eval(&t, 0.0005, M).unwrap(), 0.0);
        assert!(initial_density_eval(&t, 0.0011, M).is_err());
        assert!(initial_density_eval(&t, -1e-9, M).is_err());
    }

    #[test]
    fn sup_bounds_values() {
        for d in [InitialMassDensity::Transient, InitialMassDensity::Smooth] {
            let (lo, hi) = d.support();
            for i in 0..=1000 {
                let x = lo + (hi - lo) * i as f64 / 1000.0;
                assert!(d.value(x) <= d.sup() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn mean_of_symmetric_bumps() {
        assert!((InitialMassDensity::Transient.mean_mass().unwrap() - 0.000625).abs() < 1e-12);
        assert!((InitialMassDensity::Smooth.mean_mass().unwrap() - 0.0005).abs() < 1e-12);
    }

    #[test]
    fn tabulated_density() {
        let d = InitialMassDensity::tabulated(vec![(0.0002, 0.0), (0.0004, 2.0), (0.0006, 0.0)]).unwrap();
        assert_eq!(d.sup(), 2.0);
        assert!((d.value(0.0003) - 1.0).abs() < 1e-12);
        assert_eq!(d.value(0.0007), 0.0);
        assert!((d.mean_mass().unwrap() - 0.0004).abs() < 1e-12);
        assert!(InitialMassDensity::tabulated(vec![(0.1, 1.0)]).is_err());
        assert!(InitialMassDensity::tabulated(vec![(0.2, 1.0), (0.1, 1.0)]).is_err());

        let zero = InitialMassDensity::tabulated(vec![(0.0002, 0.0), (0.0004, 0.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(zero.sample(&mut rng), Err(Error::ZeroDensity));
    }
}
