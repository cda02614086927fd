//! Least-squares calibration of Monod kinetics against a deterministic
//! reference trajectory: log-spaced grid search, then Nelder–Mead in
//! (log μ_max, log K_s).

use serde::{Deserialize, Serialize};

use crate::classic::{classic_solve, ClassicState, Monod, DEFAULT_STEP};
use crate::error::{Error, Result};
use crate::params::ChemostatParams;
use crate::trajectory::{SampleGrid, Trajectory};

pub const GRID_SIDE: usize = 32;
pub const MU_RANGE: (f64, f64) = (0.05, 2.0);
pub const KS_RANGE: (f64, f64) = (0.1, 100.0);
pub const SIMPLEX_ITERATIONS: usize = 200;

/// Weight on the biomass term of Σ [(ΔS)² + w(ΔY)²].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub enum FitWeights {
    /// w = (range S / range Y)², so both residuals are measured relative to
    /// the span of their reference curve.
    #[default]
    RangeNormalized,
    Explicit(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub weights: FitWeights,
    /// Only reference samples with t ≤ horizon are used; None keeps all.
    pub horizon: Option<f64>,
    pub step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            weights: FitWeights::default(),
            horizon: None,
            step: DEFAULT_STEP,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub mu_max: f64,
    #[serde(rename = "K_s")]
    pub k_s: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonodFit {
    pub mu_max: f64,
    #[serde(rename = "K_s")]
    pub k_s: f64,
    pub residual: f64,
    /// Biomass weight actually used.
    pub weight: f64,
    pub grid: Vec<Candidate>,
    /// Best vertex after each simplex iteration.
    pub trace: Vec<Candidate>,
}

impl MonodFit {
    pub fn kinetics(&self) -> Monod {
        Monod {
            mu_max: self.mu_max,
            k_s: self.k_s,
        }
    }
}

struct Objective<'a> {
    params: &'a ChemostatParams,
    init: ClassicState,
    grid: SampleGrid,
    y: &'a [f64],
    s: &'a [f64],
    weight: f64,
    step: f64,
}

impl Objective<'_> {
    fn eval(&self, mu_max: f64, k_s: f64) -> f64 {
        let kin = Monod { mu_max, k_s };
        let Ok(sol) = classic_solve(self.init, self.params, &kin, &self.grid, self.step) else {
            return f64::INFINITY;
        };
        let r: f64 = sol
            .substrate
            .iter()
            .zip(self.s)
            .zip(sol.biomass.iter().zip(self.y))
            .map(|((a, b), (c, d))| (a - b).powi(2) + self.weight * (c - d).powi(2))
            .sum();
        if r.is_finite() {
            r
        } else {
            f64::INFINITY
        }
    }

    /// Residual at (ln μ_max, ln K_s); infinite outside the search box, so
    /// the simplex cannot wander off along the μ_max/K_s ridge that short
    /// references leave unidentified.
    fn eval_log(&self, v: [f64; 2]) -> f64 {
        let (mu_max, k_s) = (v[0].exp(), v[1].exp());
        let inside = |x: f64, (lo, hi): (f64, f64)| x >= lo * (1.0 - 1e-12) && x <= hi * (1.0 + 1e-12);
        if inside(mu_max, MU_RANGE) && inside(k_s, KS_RANGE) {
            self.eval(mu_max, k_s)
        } else {
            f64::INFINITY
        }
    }
}

fn range(v: &[f64]) -> f64 {
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    hi - lo
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

#[cfg(feature = "parallel")]
fn evaluate_grid(obj: &Objective<'_>, points: &[(f64, f64)]) -> Vec<f64> {
    use rayon::prelude::*;
    points.par_iter().map(|&(m, k)| obj.eval(m, k)).collect()
}

#[cfg(not(feature = "parallel"))]
fn evaluate_grid(obj: &Objective<'_>, points: &[(f64, f64)]) -> Vec<f64> {
    points.iter().map(|&(m, k)| obj.eval(m, k)).collect()
}

/// Fits (μ_max, K_s) so the classic model started from the reference's first
/// sample tracks its substrate and biomass concentrations.
pub fn fit_monod(reference: &Trajectory, params: &ChemostatParams, opts: &FitOptions) -> Result<MonodFit> {
    params.validate()?;
    let horizon = opts.horizon.unwrap_or(f64::INFINITY);
    let n = reference.times.partition_point(|&t| t <= horizon + 1e-9);
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let (times, y, s) = (&reference.times[..n], &reference.biomass[..n], &reference.substrate[..n]);
    if y.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateReference("reference biomass is identically zero".into()));
    }
    if y.iter().chain(s).any(|v| !v.is_finite()) {
        return Err(Error::DegenerateReference("reference contains non-finite values".into()));
    }
    let weight = match opts.weights {
        FitWeights::RangeNormalized => {
            let (rs, ry) = (range(s), range(y));
            if rs > 0.0 && ry > 0.0 {
                (rs / ry).powi(2)
            } else {
                1.0
            }
        }
        FitWeights::Explicit(w) => {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidParams(vec![format!("fit weight must be >= 0 (got {w})")]));
            }
            w
        }
    };

    let t0 = times[0];
    let obj = Objective {
        params,
        init: ClassicState { y: y[0], s: s[0] },
        grid: SampleGrid::from_times(times.iter().map(|t| t - t0).collect())?,
        y,
        s,
        weight,
        step: opts.step,
    };

    let mus = log_space(MU_RANGE.0, MU_RANGE.1, GRID_SIDE);
    let kss = log_space(KS_RANGE.0, KS_RANGE.1, GRID_SIDE);
    let points: Vec<(f64, f64)> = mus.iter().flat_map(|&m| kss.iter().map(move |&k| (m, k))).collect();
    let values = evaluate_grid(&obj, &points);
    let grid: Vec<Candidate> = points
        .iter()
        .zip(&values)
        .map(|(&(mu_max, k_s), &residual)| Candidate { mu_max, k_s, residual })
        .collect();
    // Points are in lexicographic order, so a strict comparison keeps the
    // lowest (μ_max, K_s) among ties.
    let best = grid
        .iter()
        .copied()
        .reduce(|a, b| if b.residual < a.residual { b } else { a })
        .expect("grid is non-empty");
    if !best.residual.is_finite() {
        return Err(Error::DegenerateReference("no grid candidate gives a finite residual".into()));
    }

    let dmu = (MU_RANGE.1 / MU_RANGE.0).ln() / (GRID_SIDE - 1) as f64;
    let dks = (KS_RANGE.1 / KS_RANGE.0).ln() / (GRID_SIDE - 1) as f64;
    let start = [best.mu_max.ln(), best.k_s.ln()];
    let (vertex, residual, trace) = nelder_mead(
        |v| obj.eval_log(v),
        [start, [start[0] + 0.5 * dmu, start[1]], [start[0], start[1] + 0.5 * dks]],
        SIMPLEX_ITERATIONS,
    );
    let (mu_max, k_s) = (vertex[0].exp(), vertex[1].exp());
    Ok(MonodFit {
        mu_max,
        k_s,
        residual,
        weight,
        grid,
        trace,
    })
}

fn nelder_mead(
    f: impl Fn([f64; 2]) -> f64,
    init: [[f64; 2]; 3],
    iterations: usize,
) -> ([f64; 2], f64, Vec<Candidate>) {
    let mut simplex: Vec<([f64; 2], f64)> = init.iter().map(|&v| (v, f(v))).collect();
    let lerp = |a: [f64; 2], b: [f64; 2], c: f64| [a[0] + c * (b[0] - a[0]), a[1] + c * (b[1] - a[1])];
    let mut trace = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = (simplex[2].1 - simplex[0].1).abs();
        if spread <= 1e-15 * simplex[0].1.abs() && spread.is_finite() {
            let size = simplex[1..]
                .iter()
                .map(|(v, _)| (v[0] - simplex[0].0[0]).abs().max((v[1] - simplex[0].0[1]).abs()))
                .fold(0.0, f64::max);
            if size < 1e-12 {
                break;
            }
        }
        let centroid = lerp(simplex[0].0, simplex[1].0, 0.5);
        let worst = simplex[2];
        let reflected = lerp(centroid, worst.0, -1.0);
        let fr = f(reflected);
        if fr < simplex[0].1 {
            let expanded = lerp(centroid, worst.0, -2.0);
            let fe = f(expanded);
            simplex[2] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[1].1 {
            simplex[2] = (reflected, fr);
        } else {
            let (contracted, fc) = if fr < worst.1 {
                let c = lerp(centroid, worst.0, -0.5);
                (c, f(c))
            } else {
                let c = lerp(centroid, worst.0, 0.5);
                (c, f(c))
            };
            if fc < worst.1.min(fr) {
                simplex[2] = (contracted, fc);
            } else {
                let best = simplex[0].0;
                for v in simplex.iter_mut().skip(1) {
                    let p = lerp(best, v.0, 0.5);
                    *v = (p, f(p));
                }
            }
        }
        let b = simplex.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        trace.push(Candidate {
            mu_max: b.0[0].exp(),
            k_s: b.0[1].exp(),
            residual: b.1,
        });
    }
    let b = simplex.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    (b.0, b.1, trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference(kin: Monod, dt: f64) -> (ChemostatParams, Trajectory) {
        let p = ChemostatParams::new(0.2, 3.0);
        let g = SampleGrid::uniform(80.0, dt);
        let sol = classic_solve(ClassicState { y: 12.5 / 3.0, s: 5.0 }, &p, &kin, &g, DEFAULT_STEP).unwrap();
        let traj = Trajectory {
            count: vec![0.0; sol.times.len()],
            times: sol.times,
            biomass: sol.biomass,
            substrate: sol.substrate,
            washout_time: None,
        };
        (p, traj)
    }

    #[test]
    fn recovers_generating_parameters() {
        let (p, r) = reference(Monod { mu_max: 0.4, k_s: 4.0 }, 0.5);
        let fit = fit_monod(&r, &p, &FitOptions::default()).unwrap();
        assert!((fit.mu_max / 0.4 - 1.0).abs() < 1e-3, "{}", fit.mu_max);
        assert!((fit.k_s / 4.0 - 1.0).abs() < 1e-3, "{}", fit.k_s);
        assert_eq!(fit.grid.len(), GRID_SIDE * GRID_SIDE);
        assert!(fit.grid.iter().all(|c| fit.residual <= c.residual));
        assert!(fit.trace.windows(2).all(|w| w[1].residual <= w[0].residual));
    }

    #[test]
    fn explicit_weight_and_horizon() {
        let (p, r) = reference(Monod { mu_max: 0.6, k_s: 10.0 }, 1.0);
        let opts = FitOptions {
            weights: FitWeights::Explicit(1.0),
            horizon: Some(40.0),
            ..FitOptions::default()
        };
        let fit = fit_monod(&r, &p, &opts).unwrap();
        assert_eq!(fit.weight, 1.0);
        assert!((fit.mu_max / 0.6 - 1.0).abs() < 1e-3);
        assert!((fit.k_s / 10.0 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn short_reference_keeps_fit_in_search_box() {
        // Far from saturation over 2 h only μ_max/K_s is pinned down.
        let (p, r) = reference(Monod { mu_max: 1.9, k_s: 95.0 }, 0.1);
        let opts = FitOptions {
            horizon: Some(2.0),
            ..FitOptions::default()
        };
        let fit = fit_monod(&r, &p, &opts).unwrap();
        assert!(fit.mu_max <= MU_RANGE.1 * (1.0 + 1e-9) && fit.mu_max >= MU_RANGE.0);
        assert!(fit.k_s <= KS_RANGE.1 * (1.0 + 1e-9) && fit.k_s >= KS_RANGE.0);
        assert!(fit.grid.iter().all(|c| fit.residual <= c.residual));
    }

    #[test]
    fn refinement_of_reference_grid_is_stable() {
        let kin = Monod { mu_max: 0.35, k_s: 3.0 };
        let (p, coarse) = reference(kin, 1.0);
        let (_, fine) = reference(kin, 0.25);
        // Perturb so the optimum is not exact and quadrature matters.
        let bump = |mut r: Trajectory| {
            for (s, t) in r.substrate.iter_mut().zip(&r.times) {
                *s += 0.05 * (t / 7.0).sin();
            }
            r
        };
        let a = fit_monod(&bump(coarse), &p, &FitOptions::default()).unwrap();
        let b = fit_monod(&bump(fine), &p, &FitOptions::default()).unwrap();
        assert!((a.mu_max / b.mu_max - 1.0).abs() < 0.01);
        assert!((a.k_s / b.k_s - 1.0).abs() < 0.01);
    }

    #[test]
    fn deterministic() {
        let (p, r) = reference(Monod { mu_max: 0.3, k_s: 1.5 }, 2.0);
        let a = fit_monod(&r, &p, &FitOptions::default()).unwrap();
        let b = fit_monod(&r, &p, &FitOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_biomass_reference_is_rejected() {
        let (p, mut r) = reference(Monod { mu_max: 0.3, k_s: 1.5 }, 2.0);
        r.biomass.iter_mut().for_each(|y| *y = 0.0);
        assert!(matches!(fit_monod(&r, &p, &FitOptions::default()), Err(Error::DegenerateReference(_))));
        r.times.truncate(1);
        assert!(fit_monod(&r, &p, &FitOptions::default()).is_err());
    }

    #[test]
    fn json_uses_monod_symbols() {
        let (p, r) = reference(Monod { mu_max: 0.3, k_s: 1.5 }, 4.0);
        let fit = fit_monod(&r, &p, &FitOptions::default()).unwrap();
        let json = serde_json::to_value(&fit).unwrap();
        assert!(json.get("K_s").is_some() && json.get("mu_max").is_some());
        assert!(json["grid"].as_array().unwrap().len() == 1024);
    }
}
