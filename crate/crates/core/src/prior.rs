//! Prior samplers: wavelet (Besov) priors with generalized-Gaussian
//! coefficients and the trigonometric Gaussian prior `N(mu, beta (-Laplace)^-alpha)`.
//!
//! Samplers take an explicit RNG; identical seeds give identical samples.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::wavelet::{WaveletDecomp1D, WaveletDecomp2D};

/// `(kappa, B^s_pp)` wavelet prior truncated after level `max_level`
/// (inclusive), so samples have depth `max_level + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveletPriorSpec {
    pub kappa: f64,
    pub p: f64,
    pub s: f64,
    pub max_level: u32,
}

impl WaveletPriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) {
            return Err(Error::config("kappa", "must be > 0"));
        }
        if !(self.p >= 1.0) {
            return Err(Error::config("p", "must be >= 1"));
        }
        if !(self.s > 0.0) {
            return Err(Error::config("s", "must be > 0"));
        }
        if self.max_level > 12 {
            return Err(Error::config("max_level", "must be <= 12"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrigPriorSpec {
    pub mu: f64,
    pub beta: f64,
    pub alpha: f64,
    pub k_max: usize,
}

impl TrigPriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(Error::config("beta", "must be > 0"));
        }
        if self.k_max < 1 {
            return Err(Error::config("k_max", "must be >= 1"));
        }
        Ok(())
    }

    /// Standard deviation of the weight on a product with frequencies
    /// `(k, l) != (0, 0)`: `beta^{1/2} (4 pi^2 (k^2 + l^2))^{-alpha/2}`.
    pub fn std_dev(&self, k: usize, l: usize) -> f64 {
        let eig = 4.0 * PI * PI * (k * k + l * l) as f64;
        self.beta.sqrt() * eig.powf(-self.alpha / 2.0)
    }
}

/// Sampler for the density proportional to `exp(-|x|^p / 2)`.
///
/// `|X|^p` is Gamma(1/p, scale 2); a fair sign is attached.
#[derive(Debug, Clone, Copy)]
pub struct GeneralizedGaussian {
    p: f64,
    gamma: Gamma<f64>,
}

impl GeneralizedGaussian {
    pub fn new(p: f64) -> Result<Self> {
        if !(p >= 1.0) || !p.is_finite() {
            return Err(Error::invalid(format!(
                "generalized Gaussian exponent {p} must be >= 1"
            )));
        }
        let gamma = Gamma::new(1.0 / p, 2.0).map_err(|e| Error::Numerical(e.to_string()))?;
        Ok(GeneralizedGaussian { p, gamma })
    }
}

impl Distribution<f64> for GeneralizedGaussian {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let magnitude = self.gamma.sample(rng).powf(1.0 / self.p);
        if rng.random::<bool>() {
            magnitude
        } else {
            -magnitude
        }
    }
}

/// One draw from the density proportional to `exp(-|x|^p / 2)`.
pub fn sample_gg<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Result<f64> {
    Ok(GeneralizedGaussian::new(p)?.sample(rng))
}

/// `w_{j,k} = kappa^{-1/p} 2^{-j(s+1/2-1/p)} xi_{j,k}`, `w0 = 0`.
pub fn sample_wavelet_prior_1d<R: Rng>(spec: &WaveletPriorSpec, rng: &mut R) -> Result<WaveletDecomp1D> {
    spec.validate()?;
    let xi = GeneralizedGaussian::new(spec.p)?;
    let WaveletPriorSpec { kappa, p, s, max_level } = *spec;
    let mut out = WaveletDecomp1D::zeros(max_level + 1);
    let amp = kappa.powf(-1.0 / p);
    for j in 0..=max_level {
        let level_scale = amp * (-(j as f64) * (s + 0.5 - 1.0 / p)).exp2();
        for c in out.level_mut(j) {
            *c = level_scale * xi.sample(rng);
        }
    }
    Ok(out)
}

/// `w^{(m)}_{j,k,n} = kappa^{-1/p} 4^{-j(s/2+1/2-1/p)} xi^{(m)}_{j,k,n}`, `w0 = 0`.
pub fn sample_wavelet_prior_2d<R: Rng>(spec: &WaveletPriorSpec, rng: &mut R) -> Result<WaveletDecomp2D> {
    spec.validate()?;
    let xi = GeneralizedGaussian::new(spec.p)?;
    let WaveletPriorSpec { kappa, p, s, max_level } = *spec;
    let mut out = WaveletDecomp2D::zeros(max_level + 1);
    let amp = kappa.powf(-1.0 / p);
    for j in 0..=max_level {
        let level_scale = amp * (-2.0 * j as f64 * (s / 2.0 + 0.5 - 1.0 / p)).exp2();
        for m in 0..3 {
            for c in out.block_mut(j, m) {
                *c = level_scale * xi.sample(rng);
            }
        }
    }
    Ok(out)
}

/// Real tensor-product trigonometric basis on the unit square.
///
/// The 1D factors are ordered `1, cos(2 pi x), sin(2 pi x), cos(4 pi x), ...`
/// up to frequency `k_max`, giving `2 k_max + 1` factors per axis and
/// `(2 k_max + 1)^2` products. Product `(a, b)` has index `a (2 k_max + 1) + b`
/// and equals `f_a(x) f_b(y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrigBasis {
    pub k_max: usize,
}

impl TrigBasis {
    pub fn new(k_max: usize) -> Self {
        TrigBasis { k_max }
    }

    pub fn factors(&self) -> usize {
        2 * self.k_max + 1
    }

    pub fn len(&self) -> usize {
        self.factors() * self.factors()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Frequency of 1D factor `a`.
    #[inline]
    pub fn frequency(a: usize) -> usize {
        a.div_ceil(2)
    }

    /// 1D factor `a` at `x`.
    #[inline]
    pub fn factor(a: usize, x: f64) -> f64 {
        if a == 0 {
            1.0
        } else {
            let arg = 2.0 * PI * Self::frequency(a) as f64 * x;
            if a % 2 == 1 {
                arg.cos()
            } else {
                arg.sin()
            }
        }
    }

    pub fn split(&self, index: usize) -> (usize, usize) {
        (index / self.factors(), index % self.factors())
    }

    #[inline]
    pub fn eval(&self, index: usize, x: f64, y: f64) -> f64 {
        let (a, b) = self.split(index);
        Self::factor(a, x) * Self::factor(b, y)
    }

    /// Factor values at the cell centres of a `2^exponent` grid, one row per factor.
    pub fn factor_table(&self, exponent: u32) -> Vec<Vec<f64>> {
        let side = 1usize << exponent;
        let h = 1.0 / side as f64;
        (0..self.factors())
            .map(|a| (0..side).map(|i| Self::factor(a, (i as f64 + 0.5) * h)).collect())
            .collect()
    }

    /// `sum_i coeffs_i b_i` at the cell centres of a `2^exponent` grid.
    pub fn synthesize(&self, coeffs: &[f64], exponent: u32) -> GridField {
        assert_eq!(coeffs.len(), self.len(), "coefficient count");
        let side = 1usize << exponent;
        let table = self.factor_table(exponent);
        let f = self.factors();
        // tmp[a][n] = sum_b c[a][b] f_b(y_n)
        let mut tmp = vec![0.0; f * side];
        for a in 0..f {
            for b in 0..f {
                let c = coeffs[a * f + b];
                if c == 0.0 {
                    continue;
                }
                for n in 0..side {
                    tmp[a * side + n] += c * table[b][n];
                }
            }
        }
        let mut out = GridField::zeros(exponent);
        let values = out.values_mut();
        for a in 0..f {
            for k in 0..side {
                let fx = table[a][k];
                if fx == 0.0 {
                    continue;
                }
                for n in 0..side {
                    values[k * side + n] += fx * tmp[a * side + n];
                }
            }
        }
        out
    }

    /// Prior standard deviation of each basis weight; the constant product
    /// gets `None` (it carries the deterministic mean instead).
    pub fn prior_std(&self, spec: &TrigPriorSpec) -> Vec<Option<f64>> {
        (0..self.len())
            .map(|i| {
                let (a, b) = self.split(i);
                if a == 0 && b == 0 {
                    None
                } else {
                    Some(spec.std_dev(Self::frequency(a), Self::frequency(b)))
                }
            })
            .collect()
    }
}

/// Basis weights of a trigonometric prior sample; the constant slot holds `mu`.
pub fn sample_trig_prior_coeffs<R: Rng>(spec: &TrigPriorSpec, rng: &mut R) -> Result<Vec<f64>> {
    spec.validate()?;
    let basis = TrigBasis::new(spec.k_max);
    Ok(basis
        .prior_std(spec)
        .into_iter()
        .map(|sd| match sd {
            Some(sd) => sd * rng.sample::<f64, _>(StandardNormal),
            None => spec.mu,
        })
        .collect())
}

/// Trigonometric prior sample evaluated at the cell centres of a `2^exponent` grid.
pub fn sample_trig_prior_2d<R: Rng>(spec: &TrigPriorSpec, exponent: u32, rng: &mut R) -> Result<GridField> {
    let coeffs = sample_trig_prior_coeffs(spec, rng)?;
    Ok(TrigBasis::new(spec.k_max).synthesize(&coeffs, exponent))
}

/// Pointwise variance of the trigonometric prior: every frequency pair's
/// products have squared sum one, so this is the sum of the variances.
pub fn trig_prior_pointwise_variance(spec: &TrigPriorSpec) -> f64 {
    let mut total = 0.0;
    for k in 0..=spec.k_max {
        for l in 0..=spec.k_max {
            if k != 0 || l != 0 {
                total += spec.std_dev(k, l).powi(2);
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments(xs: &[f64]) -> (f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn gg_p2_is_standard_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..100_000).map(|_| sample_gg(2.0, &mut rng).unwrap()).collect();
        let (mean, var) = moments(&xs);
        assert!((0.97..=1.03).contains(&var), "var {var}");
        assert!(mean.abs() < 4.0 * (var / xs.len() as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn gg_p1_is_laplace_scale_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let xs: Vec<f64> = (0..100_000).map(|_| sample_gg(1.0, &mut rng).unwrap()).collect();
        let (mean, var) = moments(&xs);
        assert!((var - 8.0).abs() < 0.4, "var {var}");
        assert!(mean.abs() < 4.0 * (var / xs.len() as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn gg_rejects_small_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_gg(0.5, &mut rng).is_err());
    }

    #[test]
    fn wavelet_1d_truncated_at_level_zero() {
        let spec = WaveletPriorSpec { kappa: 4.0, p: 2.0, s: 1.0, max_level: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = sample_wavelet_prior_1d(&spec, &mut rng).unwrap();
        assert_eq!(d.depth(), 1);
        assert_eq!(d.w0(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xi = sample_gg(2.0, &mut rng).unwrap();
        assert_eq!(d.get(0, 0), 0.5 * xi);
    }

    #[test]
    fn wavelet_1d_level_variance() {
        let spec = WaveletPriorSpec { kappa: 1.0, p: 2.0, s: 1.0, max_level: 3 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<_> = (0..4000)
            .map(|_| sample_wavelet_prior_1d(&spec, &mut rng).unwrap())
            .collect();
        for j in 0..=3u32 {
            let xs: Vec<f64> = samples.iter().flat_map(|d| d.level(j).to_vec()).collect();
            let (_, var) = moments(&xs);
            let want = (-2.0 * j as f64).exp2();
            let se = want * (2.0 / xs.len() as f64).sqrt();
            assert!((var - want).abs() < 4.0 * se, "j={j} var={var} want={want}");
        }
    }

    #[test]
    fn wavelet_2d_level_zero_has_three_coefficients() {
        let spec = WaveletPriorSpec { kappa: 1.0, p: 2.0, s: 1.5, max_level: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = sample_wavelet_prior_2d(&spec, &mut rng).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.coeffs().iter().filter(|&&c| c != 0.0).count(), 3);
    }

    #[test]
    fn wavelet_2d_kappa_scaling_halves_std() {
        let base = WaveletPriorSpec { kappa: 0.5, p: 2.0, s: 1.0, max_level: 2 };
        let quad = WaveletPriorSpec { kappa: 2.0, ..base };
        let a = sample_wavelet_prior_2d(&base, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let b = sample_wavelet_prior_2d(&quad, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        for (x, y) in a.coeffs().iter().zip(b.coeffs()) {
            assert!((0.5 * x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn samplers_are_reproducible() {
        let spec = WaveletPriorSpec { kappa: 1.0, p: 1.0, s: 0.5, max_level: 3 };
        let a = sample_wavelet_prior_2d(&spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_wavelet_prior_2d(&spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        let t = TrigPriorSpec { mu: 0.0, beta: 2.0, alpha: 0.5, k_max: 3 };
        let f = sample_trig_prior_2d(&t, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let g = sample_trig_prior_2d(&t, 4, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn trig_beta_scaling_doubles_field() {
        let t = TrigPriorSpec { mu: 0.0, beta: 1.0, alpha: 1.0, k_max: 4 };
        let t4 = TrigPriorSpec { beta: 4.0, ..t };
        let a = sample_trig_prior_2d(&t, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = sample_trig_prior_2d(&t4, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((2.0 * x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn trig_vanishing_beta_gives_mean() {
        let t = TrigPriorSpec { mu: 5.0, beta: 1e-300, alpha: 1.0, k_max: 3 };
        let f = sample_trig_prior_2d(&t, 3, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(f.values().iter().all(|&v| (v - 5.0).abs() < 1e-12));
    }

    #[test]
    fn trig_synthesis_matches_direct_evaluation() {
        let basis = TrigBasis::new(2);
        let coeffs: Vec<f64> = (0..basis.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let field = basis.synthesize(&coeffs, 3);
        let direct = GridField::from_fn_centers(3, |x, y| {
            (0..basis.len()).map(|i| coeffs[i] * basis.eval(i, x, y)).sum()
        });
        assert!(field.max_abs_diff(&direct) < 1e-12);
    }

    #[test]
    fn trig_basis_ordering() {
        assert_eq!(TrigBasis::new(16).len(), 1089);
        assert_eq!(TrigBasis::frequency(0), 0);
        assert_eq!(TrigBasis::frequency(1), 1);
        assert_eq!(TrigBasis::frequency(2), 1);
        assert_eq!(TrigBasis::frequency(3), 2);
        assert!((TrigBasis::factor(2, 0.25) - 1.0).abs() < 1e-15);
        assert!((TrigBasis::factor(1, 0.5) + 1.0).abs() < 1e-15);
    }
}
