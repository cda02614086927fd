//! Symmetric beta division kernel q(α) ∝ (α(1−α))^(p_β−1) on [0, 1].

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::error::{domain, Result};

/// B(p_β) = ∫₀¹ (α(1−α))^(p_β−1) dα = Γ(p_β)² / Γ(2p_β).
pub fn beta_normalizer(p_beta: f64) -> f64 {
    (2.0 * ln_gamma(p_beta) - ln_gamma(2.0 * p_beta)).exp()
}

/// Kernel density q(α). Zero outside [0, 1] is the caller's business; this
/// function rejects such arguments.
pub fn kernel_density(alpha: f64, p_beta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(domain("alpha", alpha, "[0, 1]"));
    }
    Ok(BetaKernel::new(p_beta).density(alpha))
}

/// Draws one division fraction α from the kernel.
pub fn kernel_sample<R: Rng + ?Sized>(rng: &mut R, p_beta: f64) -> f64 {
    BetaKernel::new(p_beta).sample(rng)
}

/// Precomputed kernel for repeated evaluation and sampling.
#[derive(Debug, Clone, Copy)]
pub struct BetaKernel {
    p_beta: f64,
    inv_norm: f64,
    gamma: Gamma<f64>,
}

impl BetaKernel {
    pub fn new(p_beta: f64) -> Self {
        assert!(p_beta >= 1.0, "kernel exponent must be >= 1, got {p_beta}");
        Self {
            p_beta,
            inv_norm: 1.0 / beta_normalizer(p_beta),
            gamma: Gamma::new(p_beta, 1.0).expect("shape >= 1"),
        }
    }

    pub fn p_beta(&self) -> f64 {
        self.p_beta
    }

    /// q(α), with a hard zero outside [0, 1].
    #[inline]
    pub fn density(&self, alpha: f64) -> f64 {
        if !(0.0..=1.0).contains(&alpha) {
            return 0.0;
        }
        if self.p_beta == 1.0 {
            return 1.0;
        }
        (alpha * (1.0 - alpha)).powf(self.p_beta - 1.0) * self.inv_norm
    }

    /// X / (X + Y) with X, Y ~ Gamma(p_β, 1) is Beta(p_β, p_β) distributed.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        loop {
            let x = self.gamma.sample(rng);
            let y = self.gamma.sample(rng);
            let alpha = x / (x + y);
            if alpha > 0.0 && alpha < 1.0 {
                return alpha;
            }
        }
    }

    /// Integer exponent n = p_β − 1 when the kernel is a polynomial.
    pub fn polynomial_degree(&self) -> Option<u32> {
        let n = self.p_beta - 1.0;
        (n.fract() == 0.0 && n <= 64.0).then_some(n as u32)
    }

    pub fn inv_norm(&self) -> f64 {
        self.inv_norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{Beta, ContinuousCDF};

    fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut acc = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn normalizer_integer_closed_form() {
        // 6!·6!/13!
        assert!((beta_normalizer(7.0) - 1.0 / 12012.0).abs() < 1e-12);
        assert!((beta_normalizer(1.0) - 1.0).abs() < 1e-14);
        let quad = simpson(|a| (a * (1.0 - a)).powi(6), 0.0, 1.0, 2000);
        assert!((quad - 1.0 / 12012.0).abs() < 1e-12);
    }

    #[test]
    fn normalizer_matches_quadrature_for_real_exponent() {
        let p = 2.5;
        let quad = simpson(|a| (a * (1.0 - a)).powf(p - 1.0), 0.0, 1.0, 20000);
        assert!((quad - beta_normalizer(p)).abs() < 1e-9);
    }

    #[test]
    fn density_values() {
        assert_eq!(kernel_density(0.3, 1.0).unwrap(), 1.0);
        assert_eq!(kernel_density(0.0, 7.0).unwrap(), 0.0);
        assert_eq!(kernel_density(1.0, 7.0).unwrap(), 0.0);
        assert!(kernel_density(1.5, 7.0).is_err());
        assert!(kernel_density(-0.1, 7.0).is_err());
        // peak (1/4)^6 · 12012
        let peak = kernel_density(0.5, 7.0).unwrap();
        assert!((peak - 12012.0 / 4096.0).abs() < 1e-10);
    }

    #[test]
    fn density_integrates_to_one_and_is_symmetric() {
        for p in [1.0, 2.0, 3.5, 7.0] {
            let k = BetaKernel::new(p);
            let total = simpson(|a| k.density(a), 0.0, 1.0, 20000);
            assert!((total - 1.0).abs() < 1e-9, "p_beta {p}: {total}");
            for i in 0..=100 {
                let a = i as f64 / 100.0;
                assert!((k.density(a) - k.density(1.0 - a)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn samples_lie_strictly_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = BetaKernel::new(7.0);
        assert!((0..10_000).map(|_| k.sample(&mut rng)).all(|a| a > 0.0 && a < 1.0));
    }

    fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn samples_match_beta_cdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 20_000;
        for p in [1.0, 2.0, 7.0] {
            let k = BetaKernel::new(p);
            let xs: Vec<f64> = (0..n).map(|_| k.sample(&mut rng)).collect();
            let beta = Beta::new(p, p).unwrap();
            let d = ks_statistic(xs, |x| beta.cdf(x));
            // 1% critical value 1.628/√n
            assert!(d < 1.628 / (n as f64).sqrt(), "p_beta {p}: D = {d}");
        }
    }

    #[test]
    fn polynomial_degree() {
        assert_eq!(BetaKernel::new(7.0).polynomial_degree(), Some(6));
        assert_eq!(BetaKernel::new(1.0).polynomial_degree(), Some(0));
        assert_eq!(BetaKernel::new(2.5).polynomial_degree(), None);
    }
}
