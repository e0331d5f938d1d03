//! Besov sequence norms and the Cameron-Martin geometry of the Gaussian
//! wavelet prior, all computed on finite-depth decompositions.

use crate::error::{Error, Result};
use crate::wavelet::{WaveletDecomp1D, WaveletDecomp2D};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BesovParams {
    pub p: f64,
    pub q: f64,
    pub s: f64,
    pub dim: u32,
}

impl BesovParams {
    pub fn new(p: f64, s: f64, dim: u32) -> Result<Self> {
        Self::with_q(p, p, s, dim)
    }

    pub fn with_q(p: f64, q: f64, s: f64, dim: u32) -> Result<Self> {
        check_exponent("p", p)?;
        check_exponent("q", q)?;
        if !(1..=2).contains(&dim) {
            return Err(Error::invalid(format!("dimension {dim} not in {{1, 2}}")));
        }
        Ok(BesovParams { p, q, s, dim })
    }
}

fn check_exponent(name: &str, p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(Error::invalid(format!("Besov exponent {name} = {p} must be >= 1")));
    }
    Ok(())
}

fn sum_pow(values: &[f64], p: f64) -> f64 {
    if p == 2.0 {
        values.iter().map(|v| v * v).sum()
    } else if p == 1.0 {
        values.iter().map(|v| v.abs()).sum()
    } else {
        values.iter().map(|v| v.abs().powf(p)).sum()
    }
}

/// `(|w0|^p + sum_j 2^{jp(s+1/2-1/p)} sum_k |w_{j,k}|^p)^{1/p}`.
pub fn besov_norm_1d(decomp: &WaveletDecomp1D, p: f64, s: f64) -> Result<f64> {
    check_exponent("p", p)?;
    let mut total = decomp.w0().abs().powf(p);
    for j in 0..decomp.depth() {
        let weight = (j as f64 * p * (s + 0.5 - 1.0 / p)).exp2();
        total += weight * sum_pow(decomp.level(j), p);
    }
    Ok(total.powf(1.0 / p))
}

/// `(|w0|^p + sum_j 2^{jp(s+1-2/p)} sum_{m,k,n} |w^{(m)}_{j,k,n}|^p)^{1/p}`.
pub fn besov_norm_2d(decomp: &WaveletDecomp2D, p: f64, s: f64) -> Result<f64> {
    check_exponent("p", p)?;
    let mut total = decomp.w0().abs().powf(p);
    for j in 0..decomp.depth() {
        let weight = (j as f64 * p * (s + 1.0 - 2.0 / p)).exp2();
        total += weight * sum_pow(decomp.level(j), p);
    }
    Ok(total.powf(1.0 / p))
}

/// Either dimension's decomposition, for the dimension-generic norm.
#[derive(Debug, Clone, Copy)]
pub enum Decomp<'a> {
    OneD(&'a WaveletDecomp1D),
    TwoD(&'a WaveletDecomp2D),
}

/// `B^s_{pq}` norm: `(|w0|^q + sum_j 2^{jq(s+d/2-d/p)} (sum |w_j|^p)^{q/p})^{1/q}`.
pub fn besov_norm_general(decomp: Decomp<'_>, params: BesovParams) -> Result<f64> {
    let BesovParams { p, q, s, dim } = params;
    check_exponent("p", p)?;
    check_exponent("q", q)?;
    let (w0, depth, actual_dim) = match decomp {
        Decomp::OneD(d) => (d.w0(), d.depth(), 1),
        Decomp::TwoD(d) => (d.w0(), d.depth(), 2),
    };
    if actual_dim != dim {
        return Err(Error::invalid(format!(
            "decomposition is {actual_dim}-dimensional but parameters say {dim}"
        )));
    }
    let d = dim as f64;
    let mut total = w0.abs().powf(q);
    for j in 0..depth {
        let level = match decomp {
            Decomp::OneD(dc) => dc.level(j),
            Decomp::TwoD(dc) => dc.level(j),
        };
        let inner = sum_pow(level, p);
        if inner == 0.0 {
            continue;
        }
        let weight = (j as f64 * q * (s + d / 2.0 - d / p)).exp2();
        total += weight * inner.powf(q / p);
    }
    Ok(total.powf(1.0 / q))
}

/// Linear-index form `(|c_0|^p + sum_{l>=1} l^{ps/d + p/2 - 1} |c_l|^p)^{1/p}`.
///
/// `coeffs[0]` is the scale coefficient, entered with weight one; the rest
/// follow the wavelet module's linear index. This norm is equivalent to, but
/// not equal to, the level-wise norms.
pub fn besov_seq_norm_linear(coeffs: &[f64], p: f64, s: f64, dim: u32) -> Result<f64> {
    check_exponent("p", p)?;
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    let exponent = p * s / dim as f64 + p / 2.0 - 1.0;
    let mut total = coeffs.first().map_or(0.0, |c| c.abs().powf(p));
    for (l, c) in coeffs.iter().enumerate().skip(1) {
        if *c != 0.0 {
            total += (l as f64).powf(exponent) * c.abs().powf(p);
        }
    }
    Ok(total.powf(1.0 / p))
}

/// Level weight `4^{js}` of the Cameron-Martin inner product.
#[inline]
pub fn cm_level_weight(j: u32, s: f64) -> f64 {
    (2.0 * j as f64 * s).exp2()
}

/// `<u, v>_E = u0 v0 + sum_j 4^{js} sum_{m,k,n} w(u) w(v)`.
///
/// Decompositions of different depth are compared as if the shallower one
/// were zero-padded.
pub fn cm_inner_product(u: &WaveletDecomp2D, v: &WaveletDecomp2D, s: f64) -> f64 {
    let depth = u.depth().min(v.depth());
    let mut total = u.w0() * v.w0();
    for j in 0..depth {
        let dot: f64 = u.level(j).iter().zip(v.level(j)).map(|(a, b)| a * b).sum();
        total += cm_level_weight(j, s) * dot;
    }
    total
}

pub fn cm_norm(u: &WaveletDecomp2D, s: f64) -> f64 {
    cm_inner_product(u, u, s).sqrt()
}

/// Coefficient-space representative of `h -> <u, h>_E`.
pub fn cm_gradient(u: &WaveletDecomp2D, s: f64) -> WaveletDecomp2D {
    let mut out = u.clone();
    for j in 0..u.depth() {
        let w = cm_level_weight(j, s);
        let size = 1usize << (2 * j);
        out.coeffs_mut()[size..4 * size].iter_mut().for_each(|c| *c *= w);
    }
    out
}

/// Per-coefficient weights `2^{j(s - d/2)}` of the weighted-l1 (`B^s_{11}`)
/// penalty in 2D, with weight 1 on `w0`. Indexed like the decomposition.
pub fn l1_weights_2d(depth: u32, s: f64) -> Vec<f64> {
    let mut weights = vec![1.0; 1 << (2 * depth)];
    for j in 0..depth {
        let size = 1usize << (2 * j);
        let w = (j as f64 * (s - 1.0)).exp2();
        weights[size..4 * size].iter_mut().for_each(|c| *c = w);
    }
    weights
}
