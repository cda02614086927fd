//! Rate functions shared by the individual-based, density and classic models.

use std::fmt;
use std::sync::Arc;

use crate::error::{domain, Error, Result};
use crate::kernel::BetaKernel;
use crate::params::ChemostatParams;

/// r(s) = r_max · s / (k_r + s).
pub fn monod_rate(s: f64, params: &ChemostatParams) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(domain("s", s, "[0, inf)"));
    }
    Ok(monod(s, params.r_max, params.k_r))
}

#[inline]
pub(crate) fn monod(s: f64, max: f64, half: f64) -> f64 {
    max * s / (half + s)
}

fn check_mass(x: f64, params: &ChemostatParams) -> Result<()> {
    if !(0.0..=params.m_max).contains(&x) {
        return Err(domain("x", x, "[0, m_max]"));
    }
    Ok(())
}

/// Gompertz shape x·log(m_max/x), continuous at 0.
#[inline]
pub(crate) fn gompertz_shape(x: f64, m_max: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * (m_max / x).ln()
    }
}

/// ρ_g(s, x) = r(s) · log(m_max / x) · x.
pub fn growth_speed(s: f64, x: f64, params: &ChemostatParams) -> Result<f64> {
    let r = monod_rate(s, params)?;
    check_mass(x, params)?;
    Ok(r * gompertz_shape(x, params.m_max))
}

/// ∂ρ_g/∂x = r(s) · (log(m_max / x) − 1).
pub fn growth_speed_dx(s: f64, x: f64, params: &ChemostatParams) -> Result<f64> {
    let r = monod_rate(s, params)?;
    if !(x > 0.0 && x <= params.m_max) {
        return Err(domain("x", x, "(0, m_max]"));
    }
    Ok(r * ((params.m_max / x).ln() - 1.0))
}

/// λ(s, x) = λ̄ · log((x − m_div)p_λ + 1) / log((m_max − m_div)p_λ + 1) above
/// m_div, zero below. The substrate argument is unused.
pub fn division_rate(s: f64, x: f64, params: &ChemostatParams) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(domain("s", s, "[0, inf)"));
    }
    check_mass(x, params)?;
    Ok(ThresholdRate::new(params).eval(x))
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ThresholdRate {
    m_div: f64,
    p_lambda: f64,
    scale: f64,
}

impl ThresholdRate {
    pub(crate) fn new(p: &ChemostatParams) -> Self {
        Self {
            m_div: p.m_div,
            p_lambda: p.p_lambda,
            scale: p.lambda_bar / ((p.m_max - p.m_div) * p.p_lambda).ln_1p(),
        }
    }

    #[inline]
    pub(crate) fn eval(&self, x: f64) -> f64 {
        if x < self.m_div {
            0.0
        } else {
            self.scale * ((x - self.m_div) * self.p_lambda).ln_1p()
        }
    }
}

/// Individual growth law ρ_g(s, x) = rate(s) · shape(x).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GrowthLaw {
    /// Gompertz growth with Monod rate, the model's law.
    Gompertz,
    /// ρ_g = μ̃(s)·x with Monod μ̃. Violates the boundedness hypotheses and is
    /// only meant for checking the reduction to the classic chemostat.
    Linear { mu_max: f64, k_s: f64 },
    /// No growth at all.
    Frozen,
}

/// Division rate λ(s, x).
#[derive(Clone, Default)]
pub enum DivisionLaw {
    /// Logarithmic ramp above m_div, independent of s.
    #[default]
    Threshold,
    /// λ ≡ λ̄.
    Constant,
    /// User-supplied λ(s, x); must stay within [0, λ̄].
    Custom(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl fmt::Debug for DivisionLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Threshold => f.write_str("Threshold"),
            Self::Constant => f.write_str("Constant"),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Parameters plus the pluggable rate laws: everything a solver needs.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: ChemostatParams,
    pub growth: GrowthLaw,
    pub division: DivisionLaw,
    threshold: ThresholdRate,
    kernel: BetaKernel,
}

impl Model {
    pub fn new(params: ChemostatParams) -> Result<Self> {
        Self::with_laws(params, GrowthLaw::Gompertz, DivisionLaw::Threshold)
    }

    pub fn with_laws(
        params: ChemostatParams,
        growth: GrowthLaw,
        division: DivisionLaw,
    ) -> Result<Self> {
        params.validate()?;
        if let GrowthLaw::Linear { mu_max, k_s } = growth {
            if !(mu_max > 0.0 && k_s > 0.0) {
                return Err(Error::InvalidParams(vec![format!(
                    "linear growth needs mu_max > 0 and k_s > 0 (got {mu_max}, {k_s})"
                )]));
            }
        }
        Ok(Self {
            threshold: ThresholdRate::new(&params),
            kernel: BetaKernel::new(params.p_beta),
            params,
            growth,
            division,
        })
    }

    pub fn kernel(&self) -> &BetaKernel {
        &self.kernel
    }

    /// Substrate-dependent factor of ρ_g.
    #[inline]
    pub fn growth_rate(&self, s: f64) -> f64 {
        match self.growth {
            GrowthLaw::Gompertz => monod(s, self.params.r_max, self.params.k_r),
            GrowthLaw::Linear { mu_max, k_s } => monod(s, mu_max, k_s),
            GrowthLaw::Frozen => 0.0,
        }
    }

    /// Mass-dependent factor of ρ_g.
    #[inline]
    pub fn growth_shape(&self, x: f64) -> f64 {
        match self.growth {
            GrowthLaw::Gompertz => gompertz_shape(x, self.params.m_max),
            GrowthLaw::Linear { .. } => x,
            GrowthLaw::Frozen => 0.0,
        }
    }

    /// d/dx of [`Model::growth_shape`], for x > 0.
    #[inline]
    pub fn growth_shape_dx(&self, x: f64) -> f64 {
        match self.growth {
            GrowthLaw::Gompertz => (self.params.m_max / x).ln() - 1.0,
            GrowthLaw::Linear { .. } => 1.0,
            GrowthLaw::Frozen => 0.0,
        }
    }

    #[inline]
    pub fn growth(&self, s: f64, x: f64) -> f64 {
        self.growth_rate(s) * self.growth_shape(x)
    }

    /// sup over s ≥ 0 and x ∈ [0, m_max] of ρ_g.
    pub fn max_growth_speed(&self) -> f64 {
        match self.growth {
            GrowthLaw::Gompertz => self.params.r_max * self.params.m_max / std::f64::consts::E,
            GrowthLaw::Linear { mu_max, .. } => mu_max * self.params.m_max,
            GrowthLaw::Frozen => 0.0,
        }
    }

    #[inline]
    pub fn division(&self, s: f64, x: f64) -> f64 {
        match &self.division {
            DivisionLaw::Threshold => self.threshold.eval(x),
            DivisionLaw::Constant => self.params.lambda_bar,
            DivisionLaw::Custom(f) => f(s, x),
        }
    }

    /// Whether λ may vary with the substrate concentration.
    pub fn division_depends_on_substrate(&self) -> bool {
        matches!(self.division, DivisionLaw::Custom(_))
    }
}
