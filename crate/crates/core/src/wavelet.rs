//! Haar wavelet transforms on dyadic grids in one and two dimensions.
//!
//! Coefficients are stored in the orthonormal convention: the detail
//! coefficient `w_{j,k}` multiplies `psi_{j,k}(x) = 2^{j/2} psi(2^j x - k)` and
//! `w^{(m)}_{j,k,n}` multiplies `psi^{(m)}_{j,k,n}(x,y) = 2^j psi^{(m)}(2^j x - k,
//! 2^j y - n)`. The averaging recursions produce unscaled details `d_j`, which
//! are converted with `w = 2^{-j/2} d` (1D) and `w = 2^{-j} d` (2D). With this
//! convention the transform is an isometry of `L^2` on the unit interval/square.
//!
//! Both decompositions keep their coefficients in one flat vector ordered by
//! the linear index: slot 0 holds `w0`, slot `2^j + k` holds `w_{j,k}` (1D) and
//! slot `4^j + m 4^j + k 2^j + n` holds `w^{(m)}_{j,k,n}` (2D). Orientation
//! `m` is 0 = horizontal (`phi(x) psi(y)`), 1 = vertical (`psi(x) phi(y)`),
//! 2 = diagonal (`psi(x) psi(y)`).

use crate::error::{Error, Result};
use crate::grid::GridField;

/// Linear index `l = 2^j + k` of the 1D detail coefficient `(j, k)`.
pub fn linear_index_1d(j: u32, k: usize) -> Result<usize> {
    if j >= usize::BITS - 1 {
        return Err(Error::invalid(format!("level {j} too large")));
    }
    let width = 1usize << j;
    if k >= width {
        return Err(Error::invalid(format!(
            "shift {k} out of range for level {j} (must be < {width})"
        )));
    }
    Ok(width + k)
}

/// Inverse of [`linear_index_1d`]; `l` must be at least 1.
pub fn inverse_linear_index_1d(l: usize) -> Result<(u32, usize)> {
    if l == 0 {
        return Err(Error::invalid("linear index 0 is the scale coefficient"));
    }
    let j = usize::BITS - 1 - l.leading_zeros();
    Ok((j, l - (1usize << j)))
}

/// Linear index `l = 4^j + m 4^j + k 2^j + n` of the 2D detail coefficient.
pub fn linear_index_2d(j: u32, m: usize, k: usize, n: usize) -> Result<usize> {
    if 2 * j >= usize::BITS - 2 {
        return Err(Error::invalid(format!("level {j} too large")));
    }
    if m > 2 {
        return Err(Error::invalid(format!("orientation {m} out of range 0..=2")));
    }
    let width = 1usize << j;
    if k >= width || n >= width {
        return Err(Error::invalid(format!(
            "shift ({k}, {n}) out of range for level {j} (must be < {width})"
        )));
    }
    let block = width * width;
    Ok(block + m * block + k * width + n)
}

/// Inverse of [`linear_index_2d`]; `l` must be at least 1.
pub fn inverse_linear_index_2d(l: usize) -> Result<(u32, usize, usize, usize)> {
    if l == 0 {
        return Err(Error::invalid("linear index 0 is the scale coefficient"));
    }
    let j = (usize::BITS - 1 - l.leading_zeros()) / 2;
    let width = 1usize << j;
    let block = width * width;
    let rest = l - block;
    let m = rest / block;
    let within = rest % block;
    Ok((j, m, within / width, within % width))
}

/// Mother wavelet `psi = 1_[0,1/2) - 1_[1/2,1)`.
#[inline]
pub fn psi(x: f64) -> f64 {
    if (0.0..0.5).contains(&x) {
        1.0
    } else if (0.5..1.0).contains(&x) {
        -1.0
    } else {
        0.0
    }
}

/// Scale function `phi = 1_[0,1)`.
#[inline]
pub fn phi(x: f64) -> f64 {
    if (0.0..1.0).contains(&x) {
        1.0
    } else {
        0.0
    }
}

/// Orthonormal 1D Haar basis function `2^{j/2} psi(2^j x - k)`.
#[inline]
pub fn psi_1d(j: u32, k: usize, x: f64) -> f64 {
    let scale = (1u64 << j) as f64;
    scale.sqrt() * psi(scale * x - k as f64)
}

/// Orthonormal 2D Haar basis function `2^j psi^{(m)}(2^j x - k, 2^j y - n)`.
#[inline]
pub fn psi_2d(j: u32, m: usize, k: usize, n: usize, x: f64, y: f64) -> f64 {
    let scale = (1u64 << j) as f64;
    let sx = scale * x - k as f64;
    let sy = scale * y - n as f64;
    let shape = match m {
        0 => phi(sx) * psi(sy),
        1 => psi(sx) * phi(sy),
        2 => psi(sx) * psi(sy),
        _ => 0.0,
    };
    scale * shape
}

/// Value at `(x, y)` of the basis function with linear index `l`
/// (`l = 0` is the scale function on the unit square).
pub fn basis_2d(l: usize, x: f64, y: f64) -> f64 {
    if l == 0 {
        return phi(x) * phi(y);
    }
    let (j, m, k, n) = inverse_linear_index_2d(l).expect("l >= 1");
    psi_2d(j, m, k, n, x, y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletDecomp1D {
    depth: u32,
    coeffs: Vec<f64>,
}

impl WaveletDecomp1D {
    pub fn zeros(depth: u32) -> Self {
        WaveletDecomp1D {
            depth,
            coeffs: vec![0.0; 1 << depth],
        }
    }

    /// Coefficients in linear-index order (length `2^depth`).
    pub fn from_coeffs(depth: u32, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != 1 << depth {
            return Err(Error::invalid(format!(
                "depth {depth} needs {} coefficients, got {}",
                1usize << depth,
                coeffs.len()
            )));
        }
        Ok(WaveletDecomp1D { depth, coeffs })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn w0(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn set_w0(&mut self, v: f64) {
        self.coeffs[0] = v;
    }

    /// Detail block of level `j` (length `2^j`).
    pub fn level(&self, j: u32) -> &[f64] {
        let start = 1usize << j;
        &self.coeffs[start..2 * start]
    }

    pub fn level_mut(&mut self, j: u32) -> &mut [f64] {
        let start = 1usize << j;
        &mut self.coeffs[start..2 * start]
    }

    pub fn get(&self, j: u32, k: usize) -> f64 {
        self.coeffs[linear_index_1d(j, k).expect("index in range")]
    }

    pub fn set(&mut self, j: u32, k: usize, v: f64) {
        self.coeffs[linear_index_1d(j, k).expect("index in range")] = v;
    }

    /// Zeroes every level `j >= levels`, keeping the storage depth.
    pub fn truncate(&mut self, levels: u32) {
        let keep = 1usize << levels.min(self.depth);
        self.coeffs[keep..].iter_mut().for_each(|c| *c = 0.0);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveletDecomp2D {
    depth: u32,
    coeffs: Vec<f64>,
}

impl WaveletDecomp2D {
    pub fn zeros(depth: u32) -> Self {
        WaveletDecomp2D {
            depth,
            coeffs: vec![0.0; 1 << (2 * depth)],
        }
    }

    /// Coefficients in linear-index order (length `4^depth`).
    pub fn from_coeffs(depth: u32, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != 1 << (2 * depth) {
            return Err(Error::invalid(format!(
                "depth {depth} needs {} coefficients, got {}",
                1usize << (2 * depth),
                coeffs.len()
            )));
        }
        Ok(WaveletDecomp2D { depth, coeffs })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn w0(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn set_w0(&mut self, v: f64) {
        self.coeffs[0] = v;
    }

    /// The `2^j x 2^j` block of level `j`, orientation `m`, row-major in `(k, n)`.
    pub fn block(&self, j: u32, m: usize) -> &[f64] {
        let size = 1usize << (2 * j);
        let start = size * (1 + m);
        &self.coeffs[start..start + size]
    }

    pub fn block_mut(&mut self, j: u32, m: usize) -> &mut [f64] {
        let size = 1usize << (2 * j);
        let start = size * (1 + m);
        &mut self.coeffs[start..start + size]
    }

    /// All three orientation blocks of level `j`, contiguous.
    pub fn level(&self, j: u32) -> &[f64] {
        let size = 1usize << (2 * j);
        &self.coeffs[size..4 * size]
    }

    pub fn get(&self, j: u32, m: usize, k: usize, n: usize) -> f64 {
        self.coeffs[linear_index_2d(j, m, k, n).expect("index in range")]
    }

    pub fn set(&mut self, j: u32, m: usize, k: usize, n: usize, v: f64) {
        self.coeffs[linear_index_2d(j, m, k, n).expect("index in range")] = v;
    }

    /// Zeroes every level `j >= levels`, keeping the storage depth.
    pub fn truncate(&mut self, levels: u32) {
        let keep = 1usize << (2 * levels.min(self.depth));
        self.coeffs[keep..].iter_mut().for_each(|c| *c = 0.0);
    }

    /// Copy at another storage depth: finer levels are dropped or zero-filled.
    pub fn resized(&self, depth: u32) -> WaveletDecomp2D {
        let mut out = WaveletDecomp2D::zeros(depth);
        let keep = out.coeffs.len().min(self.coeffs.len());
        out.coeffs[..keep].copy_from_slice(&self.coeffs[..keep]);
        out
    }
}

/// Forward 1D transform of `2^N` grid values.
pub fn fwt1d(values: &[f64]) -> Result<WaveletDecomp1D> {
    let len = values.len();
    if len == 0 || !len.is_power_of_two() {
        return Err(Error::invalid(format!(
            "1D transform needs a power-of-two length, got {len}"
        )));
    }
    let depth = len.trailing_zeros();
    let mut coeffs = vec![0.0; len];
    let mut approx = values.to_vec();
    for j in (0..depth).rev() {
        let half = 1usize << j;
        let scale = (-(j as f64) / 2.0).exp2();
        for k in 0..half {
            let (a, b) = (approx[2 * k], approx[2 * k + 1]);
            approx[k] = 0.5 * (a + b);
            coeffs[half + k] = scale * 0.5 * (a - b);
        }
    }
    coeffs[0] = approx[0];
    Ok(WaveletDecomp1D { depth, coeffs })
}

/// Inverse 1D transform; returns `2^depth` grid values.
pub fn iwt1d(decomp: &WaveletDecomp1D) -> Vec<f64> {
    let len = 1usize << decomp.depth;
    let mut approx = vec![0.0; len];
    approx[0] = decomp.coeffs[0];
    for j in 0..decomp.depth {
        let half = 1usize << j;
        let scale = (j as f64 / 2.0).exp2();
        for k in (0..half).rev() {
            let a = approx[k];
            let d = scale * decomp.coeffs[half + k];
            approx[2 * k] = a + d;
            approx[2 * k + 1] = a - d;
        }
    }
    approx
}

/// Forward 2D transform of a `2^N x 2^N` field; the decomposition depth is `N`.
pub fn fwt2d(field: &GridField) -> WaveletDecomp2D {
    let mut ops = 0u64;
    let out = fwt2d_counted(field, &mut ops);
    debug_assert!(ops <= 8 * field.values().len() as u64);
    out
}

pub(crate) fn fwt2d_counted(field: &GridField, ops: &mut u64) -> WaveletDecomp2D {
    let depth = field.exponent();
    let mut coeffs = vec![0.0; field.values().len()];
    let mut approx = field.values().to_vec();
    for j in (0..depth).rev() {
        let width = 1usize << j;
        let fine = 2 * width;
        let block = width * width;
        let scale = (-(j as f64)).exp2();
        let mut next = vec![0.0; block];
        for k in 0..width {
            for n in 0..width {
                let a00 = approx[(2 * k) * fine + 2 * n];
                let a10 = approx[(2 * k + 1) * fine + 2 * n];
                let a01 = approx[(2 * k) * fine + 2 * n + 1];
                let a11 = approx[(2 * k + 1) * fine + 2 * n + 1];
                let at = k * width + n;
                next[at] = 0.25 * (a00 + a10 + a01 + a11);
                coeffs[block + at] = scale * 0.25 * (a00 + a10 - a01 - a11);
                coeffs[2 * block + at] = scale * 0.25 * (a00 - a10 + a01 - a11);
                coeffs[3 * block + at] = scale * 0.25 * (a00 - a10 - a01 + a11);
                *ops += 4;
            }
        }
        approx = next;
    }
    coeffs[0] = approx[0];
    WaveletDecomp2D { depth, coeffs }
}

/// Inverse 2D transform onto the decomposition's native `2^depth` grid.
pub fn iwt2d(decomp: &WaveletDecomp2D) -> GridField {
    let mut ops = 0u64;
    let out = iwt2d_counted(decomp, &mut ops);
    debug_assert!(ops <= 8 * decomp.coeffs.len() as u64);
    out
}

pub(crate) fn iwt2d_counted(decomp: &WaveletDecomp2D, ops: &mut u64) -> GridField {
    let mut approx = vec![decomp.coeffs[0]];
    for j in 0..decomp.depth {
        let width = 1usize << j;
        let fine = 2 * width;
        let block = width * width;
        let scale = (j as f64).exp2();
        let mut next = vec![0.0; 4 * block];
        for k in 0..width {
            for n in 0..width {
                let at = k * width + n;
                let a = approx[at];
                let d0 = scale * decomp.coeffs[block + at];
                let d1 = scale * decomp.coeffs[2 * block + at];
                let d2 = scale * decomp.coeffs[3 * block + at];
                next[(2 * k) * fine + 2 * n] = a + d0 + d1 + d2;
                next[(2 * k + 1) * fine + 2 * n] = a + d0 - d1 - d2;
                next[(2 * k) * fine + 2 * n + 1] = a - d0 + d1 - d2;
                next[(2 * k + 1) * fine + 2 * n + 1] = a - d0 - d1 + d2;
                *ops += 4;
            }
        }
        approx = next;
    }
    GridField::from_values(decomp.depth, approx).expect("4^depth values")
}

/// Value of the truncated expansion at `(x, y)` in `[0,1)^2`.
///
/// Haar expansions are constant on the cells of their native grid, so this
/// reconstructs that grid and looks the cell up.
pub fn evaluate_expansion(decomp: &WaveletDecomp2D, x: f64, y: f64) -> Result<f64> {
    iwt2d(decomp).lookup(x, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-14
    }

    #[test]
    fn fwt1d_constant_has_no_details() {
        let d = fwt1d(&[1.0; 4]).unwrap();
        assert_eq!(d.w0(), 1.0);
        assert!(d.coeffs()[1..].iter().all(|&c| c == 0.0));
    }

    #[test]
    fn fwt1d_level_zero_wavelet() {
        let d = fwt1d(&[1.0, -1.0]).unwrap();
        assert_eq!(d.w0(), 0.0);
        assert_eq!(d.get(0, 0), 1.0);
        assert_eq!(iwt1d(&d), vec![1.0, -1.0]);
    }

    #[test]
    fn fwt1d_sampled_scaled_wavelet() {
        let r = 2f64.sqrt();
        let d = fwt1d(&[r, r, -r, -r, 0.0, 0.0, 0.0, 0.0]).unwrap();
        for (l, &c) in d.coeffs().iter().enumerate() {
            let want = if l == linear_index_1d(1, 0).unwrap() { 1.0 } else { 0.0 };
            assert!(close(c, want), "l={l} c={c}");
        }
    }

    #[test]
    fn fwt1d_rejects_non_power_of_two() {
        assert!(fwt1d(&[1.0, 2.0, 3.0]).is_err());
        assert!(fwt1d(&[]).is_err());
    }

    #[test]
    fn iwt1d_scale_only() {
        let mut d = WaveletDecomp1D::zeros(2);
        d.set_w0(1.0);
        assert_eq!(iwt1d(&d), vec![1.0; 4]);
    }

    #[test]
    fn fwt1d_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v: Vec<f64> = (0..64).map(|_| rng.random_range(-5.0..5.0)).collect();
        let back = iwt1d(&fwt1d(&v).unwrap());
        let err = v.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn fwt2d_constant_field() {
        let d = fwt2d(&GridField::constant(3, 2.5));
        assert_eq!(d.w0(), 2.5);
        assert!(d.coeffs()[1..].iter().all(|&c| c == 0.0));
    }

    #[test]
    fn fwt2d_diagonal_on_two_by_two() {
        let f = GridField::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let d = fwt2d(&f);
        assert_eq!(d.w0(), 0.0);
        assert_eq!(d.get(0, 0, 0, 0), 0.0);
        assert_eq!(d.get(0, 1, 0, 0), 0.0);
        assert_eq!(d.get(0, 2, 0, 0), 1.0);
    }

    #[test]
    fn iwt2d_single_vertical_coefficient_matches_basis_samples() {
        let mut d = WaveletDecomp2D::zeros(2);
        d.set(1, 1, 0, 0, 1.0);
        let f = iwt2d(&d);
        let want = GridField::from_fn(2, |x, y| psi_2d(1, 1, 0, 0, x, y));
        assert_eq!(f, want);
        // psi^{(1)}_{1,0,0} is +2 on [0,1/4)x[0,1/2), -2 on [1/4,1/2)x[0,1/2).
        assert_eq!(f.get(0, 0), 2.0);
        assert_eq!(f.get(1, 1), -2.0);
        assert_eq!(f.get(0, 2), 0.0);
    }

    #[test]
    fn iwt2d_scale_only_is_constant() {
        let mut d = WaveletDecomp2D::zeros(3);
        d.set_w0(-4.0);
        assert_eq!(iwt2d(&d), GridField::constant(3, -4.0));
    }

    #[test]
    fn fwt2d_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for exponent in [4, 5] {
            let side = 1usize << exponent;
            let f = GridField::from_values(
                exponent,
                (0..side * side).map(|_| rng.random_range(-3.0..3.0)).collect(),
            )
            .unwrap();
            assert!(iwt2d(&fwt2d(&f)).max_abs_diff(&f) < 1e-12);
        }
    }

    #[test]
    fn op_count_is_linear_in_cells() {
        for exponent in 1..=7 {
            let f = GridField::constant(exponent, 1.0);
            let mut ops = 0;
            let d = fwt2d_counted(&f, &mut ops);
            let cells = f.values().len() as u64;
            // 4 outputs per parent cell: 4 (4^N - 1) / 3 total.
            assert_eq!(ops, 4 * (cells - 1) / 3);
            let mut inv_ops = 0;
            iwt2d_counted(&d, &mut inv_ops);
            assert_eq!(inv_ops, ops);
        }
    }

    #[test]
    fn evaluate_horizontal_level_zero() {
        let mut d = WaveletDecomp2D::zeros(1);
        d.set(0, 0, 0, 0, 1.0);
        assert_eq!(evaluate_expansion(&d, 0.1, 0.1).unwrap(), 1.0);
        assert_eq!(evaluate_expansion(&d, 0.1, 0.9).unwrap(), -1.0);
        assert!(evaluate_expansion(&d, 0.5, 1.0).is_err());
    }

    #[test]
    fn evaluate_constant() {
        let mut d = WaveletDecomp2D::zeros(2);
        d.set_w0(3.0);
        for &(x, y) in &[(0.0, 0.0), (0.37, 0.99), (0.999, 0.5)] {
            assert_eq!(evaluate_expansion(&d, x, y).unwrap(), 3.0);
        }
    }

    #[test]
    fn linear_index_examples() {
        assert_eq!(linear_index_1d(1, 1).unwrap(), 3);
        assert_eq!(linear_index_1d(0, 0).unwrap(), 1);
        assert_eq!(linear_index_2d(2, 1, 0, 0).unwrap(), 32);
        assert_eq!(linear_index_2d(0, 2, 0, 0).unwrap(), 3);
        assert!(linear_index_1d(1, 2).is_err());
        assert!(linear_index_2d(1, 3, 0, 0).is_err());
        assert!(linear_index_2d(1, 0, 2, 0).is_err());
        assert!(inverse_linear_index_1d(0).is_err());
        assert!(inverse_linear_index_2d(0).is_err());
    }

    #[test]
    fn linear_index_round_trips() {
        for j in 0..=6 {
            for k in 0..(1usize << j) {
                let l = linear_index_1d(j, k).unwrap();
                assert_eq!(inverse_linear_index_1d(l).unwrap(), (j, k));
            }
        }
        let mut expected = 1;
        for j in 0..=4 {
            for m in 0..3 {
                for k in 0..(1usize << j) {
                    for n in 0..(1usize << j) {
                        let l = linear_index_2d(j, m, k, n).unwrap();
                        assert_eq!(l, expected);
                        assert_eq!(inverse_linear_index_2d(l).unwrap(), (j, m, k, n));
                        expected += 1;
                    }
                }
            }
        }
    }

    #[test]
    fn truncate_zeroes_fine_levels_only() {
        let mut d = WaveletDecomp2D::from_coeffs(3, (0..64).map(|i| i as f64).collect()).unwrap();
        d.truncate(2);
        assert_eq!(d.len(), 64);
        assert!(d.coeffs()[..16].iter().enumerate().all(|(i, &c)| c == i as f64));
        assert!(d.coeffs()[16..].iter().all(|&c| c == 0.0));
    }
}
