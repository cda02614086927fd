//! Two-equation chemostat with Monod kinetics:
//!
//! ```text
//! Ẏ = (μ(S) − D)·Y
//! Ṡ = D(s_in − S) − k·μ(S)·Y,     μ(S) = μ_max·S/(K_s + S)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::params::ChemostatParams;
use crate::rates::monod;
use crate::trajectory::SampleGrid;

/// Default RK4 step in hours.
pub const DEFAULT_STEP: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassicState {
    /// Biomass concentration, mg/l.
    pub y: f64,
    /// Substrate concentration, mg/l.
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monod {
    pub mu_max: f64,
    pub k_s: f64,
}

impl Monod {
    #[inline]
    pub fn rate(&self, s: f64) -> f64 {
        monod(s, self.mu_max, self.k_s)
    }

    /// (S*, Y*) of the non-trivial equilibrium, if it exists.
    pub fn equilibrium(&self, params: &ChemostatParams) -> Option<ClassicState> {
        if self.mu_max <= params.dilution {
            return None;
        }
        let s = params.dilution * self.k_s / (self.mu_max - params.dilution);
        (s < params.s_in).then(|| ClassicState {
            y: (params.s_in - s) / params.k,
            s,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicTrajectory {
    pub times: Vec<f64>,
    pub biomass: Vec<f64>,
    pub substrate: Vec<f64>,
}

/// Time derivative of the state.
pub fn classic_rhs(state: ClassicState, params: &ChemostatParams, kinetics: &Monod) -> ClassicState {
    let mu = kinetics.rate(state.s);
    ClassicState {
        y: (mu - params.dilution) * state.y,
        s: params.dilution * (params.s_in - state.s) - params.k * mu * state.y,
    }
}

fn rk4(x: ClassicState, h: f64, params: &ChemostatParams, kin: &Monod) -> ClassicState {
    let f = |x: ClassicState| classic_rhs(x, params, kin);
    let at = |k: ClassicState, c: f64| ClassicState {
        y: x.y + c * k.y,
        s: x.s + c * k.s,
    };
    let k1 = f(x);
    let k2 = f(at(k1, h / 2.0));
    let k3 = f(at(k2, h / 2.0));
    let k4 = f(at(k3, h));
    ClassicState {
        y: (x.y + h / 6.0 * (k1.y + 2.0 * k2.y + 2.0 * k3.y + k4.y)).max(0.0),
        s: (x.s + h / 6.0 * (k1.s + 2.0 * k2.s + 2.0 * k3.s + k4.s)).max(0.0),
    }
}

/// Fixed-step RK4 from t = 0, reported at the grid times. Each interval
/// between reporting times is split into equal steps no longer than `step`.
pub fn classic_solve(
    init: ClassicState,
    params: &ChemostatParams,
    kinetics: &Monod,
    grid: &SampleGrid,
    step: f64,
) -> Result<ClassicTrajectory> {
    if !(init.y >= 0.0 && init.y.is_finite()) {
        return Err(domain("y0", init.y, "[0, inf)"));
    }
    if !(init.s >= 0.0 && init.s.is_finite()) {
        return Err(domain("s0", init.s, "[0, inf)"));
    }
    if !(kinetics.mu_max > 0.0 && kinetics.k_s > 0.0) {
        return Err(domain("mu_max, K_s", kinetics.mu_max.min(kinetics.k_s), "(0, inf)"));
    }
    if !(step > 0.0) {
        return Err(domain("step", step, "(0, inf)"));
    }
    params.validate()?;

    let n = grid.len();
    let mut out = ClassicTrajectory {
        times: Vec::with_capacity(n),
        biomass: Vec::with_capacity(n),
        substrate: Vec::with_capacity(n),
    };
    let mut x = init;
    let mut t = 0.0;
    for &target in grid.times() {
        let span = target - t;
        if span > 0.0 {
            let steps = (span / step).ceil().max(1.0) as usize;
            let h = span / steps as f64;
            for _ in 0..steps {
                x = rk4(x, h, params, kinetics);
            }
            t = target;
        }
        out.times.push(target);
        out.biomass.push(x.y);
        out.substrate.push(x.s);
    }
    Ok(out)
}
