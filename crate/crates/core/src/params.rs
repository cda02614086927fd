use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical and model constants of the chemostat.
///
/// Units: concentrations in mg/l, masses in mg, rates in 1/h, volume in l.
/// [`ChemostatParams::new`] fills everything except the dilution rate and
/// the volume with the reference values used throughout the simulations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChemostatParams {
    /// Substrate input concentration.
    pub s_in: f64,
    /// Dilution rate D.
    pub dilution: f64,
    /// Vessel volume V.
    pub volume: f64,
    /// Stoichiometric coefficient (inverse yield).
    pub k: f64,
    /// Maximum individual mass.
    pub m_max: f64,
    /// Minimum division mass.
    pub m_div: f64,
    /// Upper bound of the division rate.
    pub lambda_bar: f64,
    /// Shape parameter of the division rate.
    pub p_lambda: f64,
    /// Exponent of the symmetric beta division kernel.
    pub p_beta: f64,
    /// Maximum Gompertz growth rate.
    pub r_max: f64,
    /// Monod half-saturation constant of the growth rate.
    pub k_r: f64,
    /// Initial substrate concentration.
    pub s0: f64,
}

impl ChemostatParams {
    pub const S0: f64 = 5.0;
    pub const S_IN: f64 = 10.0;
    pub const M_MAX: f64 = 0.001;
    pub const M_DIV: f64 = 0.0004;
    pub const LAMBDA_BAR: f64 = 1.0;
    pub const P_LAMBDA: f64 = 1000.0;
    pub const P_BETA: f64 = 7.0;
    pub const R_MAX: f64 = 1.0;
    pub const K_R: f64 = 10.0;
    pub const K: f64 = 1.0;

    /// Reference parameter set with the given dilution rate and volume.
    pub fn new(dilution: f64, volume: f64) -> Self {
        Self {
            s_in: Self::S_IN,
            dilution,
            volume,
            k: Self::K,
            m_max: Self::M_MAX,
            m_div: Self::M_DIV,
            lambda_bar: Self::LAMBDA_BAR,
            p_lambda: Self::P_LAMBDA,
            p_beta: Self::P_BETA,
            r_max: Self::R_MAX,
            k_r: Self::K_R,
            s0: Self::S0,
        }
    }

    /// Every violated constraint, in field order.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let positive = [
            ("s_in", self.s_in, "mg/l"),
            ("D", self.dilution, "1/h"),
            ("V", self.volume, "l"),
            ("k", self.k, ""),
            ("m_max", self.m_max, "mg"),
            ("m_div", self.m_div, "mg"),
            ("lambda_bar", self.lambda_bar, "1/h"),
            ("p_lambda", self.p_lambda, "1/mg"),
            ("r_max", self.r_max, "1/h"),
            ("k_r", self.k_r, "mg/l"),
        ];
        for (name, v, unit) in positive {
            if !(v.is_finite() && v > 0.0) {
                out.push(format!("{name} = {v} {unit}: must be finite and > 0"));
            }
        }
        if !(self.s0.is_finite() && self.s0 >= 0.0) {
            out.push(format!("s0 = {} mg/l: must be finite and >= 0", self.s0));
        }
        if self.m_div >= self.m_max {
            out.push(format!(
                "m_div = {} mg: must be < m_max = {} mg",
                self.m_div, self.m_max
            ));
        }
        if !(self.p_beta.is_finite() && self.p_beta >= 1.0) {
            out.push(format!("p_beta = {}: must be >= 1", self.p_beta));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParams(problems))
        }
    }

    /// A priori upper bound on the substrate concentration.
    pub fn substrate_bound(&self) -> f64 {
        self.s0.max(self.s_in)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        let p = ChemostatParams::new(0.2, 0.05);
        assert_eq!(p.s0, 5.0);
        assert_eq!(p.s_in, 10.0);
        assert_eq!(p.m_max, 0.001);
        assert_eq!(p.m_div, 0.0004);
        assert_eq!(p.lambda_bar, 1.0);
        assert_eq!(p.p_lambda, 1000.0);
        assert_eq!(p.p_beta, 7.0);
        assert_eq!(p.r_max, 1.0);
        assert_eq!(p.k_r, 10.0);
        assert_eq!(p.k, 1.0);
        p.validate().unwrap();
    }

    #[test]
    fn collects_all_problems() {
        let mut p = ChemostatParams::new(-1.0, 0.0);
        p.p_beta = 0.5;
        p.m_div = 0.002;
        let problems = p.problems();
        assert_eq!(problems.len(), 4, "{problems:?}");
        assert!(matches!(p.validate(), Err(Error::InvalidParams(v)) if v.len() == 4));
    }
}
