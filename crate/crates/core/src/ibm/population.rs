//! Population store with a shared growth clock.
//!
//! Under Gompertz growth ẋ = r(S)·x·log(m_max/x), the coordinate
//! y = log(m_max/x) obeys ẏ = −r(S)·y for every individual. With the clock
//! δ(t) = ∫ r(S) dt since the last rebase, y_i(t) = u_i·e^(−δ), so moving all
//! masses forward is a single scalar update.
//!
//! The substrate equation needs G = Σ x_i·y_i and the reports need
//! X = Σ x_i. Writing ε = 1 − e^(−δ):
//!
//!   X = m_max · Σ_k ε^k/k! · A_k,        G = m_max · e^(−δ) · Σ_k ε^k/k! · A_(k+1)
//!
//! with A_k = Σ_i u_i^k·e^(−u_i) maintained incrementally. The series
//! converge fast while ε·max u stays small; the store is rebased (u ← y,
//! δ ← 0, moments recomputed) before that bound is crossed.

/// Number of series terms.
const TERMS: usize = 18;
/// Rebase once ε·max u exceeds this.
const REBASE_AT: f64 = 0.5;
/// Beyond this the series is not trusted and sums are taken directly.
const SERIES_LIMIT: f64 = 1.0;
/// Direct sums are cheaper than the series for tiny populations.
const DIRECT_BELOW: usize = 24;

#[derive(Debug, Clone)]
pub(crate) struct Population {
    m_max: f64,
    u: Vec<f64>,
    clock: f64,
    decay: f64,
    moments: [f64; TERMS + 2],
    u_max: f64,
    edits: usize,
}

fn add_moments(moments: &mut [f64; TERMS + 2], u: f64, sign: f64) {
    let mut term = sign * (-u).exp();
    for m in moments.iter_mut() {
        *m += term;
        term *= u;
    }
}

impl Population {
    /// Masses must lie in (0, m_max].
    pub(crate) fn from_masses(masses: &[f64], m_max: f64) -> Self {
        let mut pop = Self {
            m_max,
            u: masses.iter().map(|&x| (m_max / x).ln().max(0.0)).collect(),
            clock: 0.0,
            decay: 1.0,
            moments: [0.0; TERMS + 2],
            u_max: 0.0,
            edits: 0,
        };
        pop.recompute();
        pop
    }

    fn recompute(&mut self) {
        self.moments = [0.0; TERMS + 2];
        self.u_max = 0.0;
        for &u in &self.u {
            add_moments(&mut self.moments, u, 1.0);
            self.u_max = self.u_max.max(u);
        }
        self.edits = 0;
    }

    #[inline]
    pub(crate) fn len(&self) -> usize {
        self.u.len()
    }

    #[inline]
    pub(crate) fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub(crate) fn clock(&self) -> f64 {
        self.clock
    }

    pub(crate) fn set_clock(&mut self, clock: f64) {
        self.clock = clock;
        self.decay = (-clock).exp();
    }

    /// Current mass of individual i.
    #[inline]
    pub(crate) fn mass(&self, i: usize) -> f64 {
        self.m_max * (-self.u[i] * self.decay).exp()
    }

    pub(crate) fn masses(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.mass(i)).collect()
    }

    #[inline]
    fn coordinate(&self, x: f64) -> f64 {
        ((self.m_max / x).ln() / self.decay).max(0.0)
    }

    fn note_edit(&mut self, u: f64) {
        self.u_max = self.u_max.max(u);
        self.edits += 1;
        if self.edits > self.u.len() + 1024 {
            self.recompute();
        }
    }

    pub(crate) fn push(&mut self, x: f64) {
        let u = self.coordinate(x);
        self.u.push(u);
        add_moments(&mut self.moments, u, 1.0);
        self.note_edit(u);
    }

    pub(crate) fn replace(&mut self, i: usize, x: f64) {
        let u = self.coordinate(x);
        let old = std::mem::replace(&mut self.u[i], u);
        add_moments(&mut self.moments, old, -1.0);
        add_moments(&mut self.moments, u, 1.0);
        self.note_edit(u);
    }

    /// Removes individual i; the last individual takes its index.
    pub(crate) fn swap_remove(&mut self, i: usize) {
        let old = self.u.swap_remove(i);
        add_moments(&mut self.moments, old, -1.0);
        self.edits += 1;
        if self.u.is_empty() {
            self.recompute();
        }
    }

    pub(crate) fn needs_rebase(&self) -> bool {
        -(-self.clock).exp_m1() * self.u_max > REBASE_AT
    }

    pub(crate) fn rebase(&mut self) {
        let decay = self.decay;
        for u in &mut self.u {
            *u *= decay;
        }
        self.clock = 0.0;
        self.decay = 1.0;
        self.recompute();
    }

    fn use_series(&self, eps: f64) -> bool {
        self.len() >= DIRECT_BELOW && eps * self.u_max <= SERIES_LIMIT
    }

    /// Σ_k ε^k/k! · A_(k + shift). While ε·max u ≤ 1 the terms shrink
    /// monotonically, so the sum stops once they no longer register.
    fn series(&self, eps: f64, shift: usize) -> f64 {
        let mut acc = 0.0;
        let mut coef = 1.0;
        for k in 0..TERMS {
            let term = coef * self.moments[k + shift];
            acc += term;
            if term <= 1e-18 * acc {
                break;
            }
            coef *= eps / (k + 1) as f64;
        }
        acc
    }

    /// Σ x_i·log(m_max/x_i) at clock value `clock`.
    pub(crate) fn growth_sum_at(&self, clock: f64) -> f64 {
        let eps = -(-clock).exp_m1();
        let decay = 1.0 - eps;
        if self.use_series(eps) {
            self.m_max * decay * self.series(eps, 1)
        } else {
            self.u
                .iter()
                .map(|&u| {
                    let y = u * decay;
                    y * (-y).exp()
                })
                .sum::<f64>()
                * self.m_max
        }
    }

    /// Σ x_i at the current clock.
    pub(crate) fn total_mass(&self) -> f64 {
        let eps = -(-self.clock).exp_m1();
        if self.use_series(eps) {
            self.m_max * self.series(eps, 0)
        } else {
            (0..self.len()).map(|i| self.mass(i)).sum()
        }
    }
}
