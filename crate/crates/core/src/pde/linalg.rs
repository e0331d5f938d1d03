//! Sparse symmetric positive-definite linear algebra for the grid operator:
//! a CSR matrix, a banded Cholesky factorization and preconditioned
//! conjugate gradients.

use crate::error::{Error, Result};

/// Compressed sparse row matrix (full pattern stored, not just a triangle).
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub(crate) n: usize,
    pub(crate) ncols: usize,
    pub(crate) row_ptr: Vec<usize>,
    pub(crate) cols: Vec<usize>,
    pub(crate) vals: Vec<f64>,
}

impl CsrMatrix {
    /// Square matrix from unsorted triplets; duplicates are summed.
    pub fn from_triplets(n: usize, triplets: Vec<(usize, usize, f64)>) -> Self {
        Self::from_triplets_rect(n, n, triplets)
    }

    pub fn from_triplets_rect(n: usize, ncols: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *vals.last_mut().expect("nonempty") += v;
                continue;
            }
            cols.push(j);
            vals.push(v);
            row_ptr[i + 1] += 1;
            last = Some((i, j));
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n,
            ncols,
            row_ptr,
            cols,
            vals,
        }
    }

    /// Number of rows.
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn transpose(&self) -> CsrMatrix {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.cols {
            counts[c + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut cols = vec![0; self.cols.len()];
        let mut vals = vec![0.0; self.vals.len()];
        for i in 0..self.n {
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                let c = self.cols[idx];
                cols[next[c]] = i;
                vals[next[c]] = self.vals[idx];
                next[c] += 1;
            }
        }
        CsrMatrix {
            n: self.ncols,
            ncols: self.n,
            row_ptr: counts,
            cols,
            vals,
        }
    }

    /// Sparse product `self * other`, columns sorted within each row.
    pub fn matmul(&self, other: &CsrMatrix) -> CsrMatrix {
        assert_eq!(self.ncols, other.n, "inner dimensions");
        let mut acc = vec![0.0; other.ncols];
        let mut seen = vec![usize::MAX; other.ncols];
        let mut row_ptr = Vec::with_capacity(self.n + 1);
        row_ptr.push(0);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut pattern = Vec::new();
        for i in 0..self.n {
            pattern.clear();
            for (k, a) in self.row(i) {
                for (j, b) in other.row(k) {
                    if seen[j] != i {
                        seen[j] = i;
                        acc[j] = 0.0;
                        pattern.push(j);
                    }
                    acc[j] += a * b;
                }
            }
            pattern.sort_unstable();
            for &j in &pattern {
                cols.push(j);
                vals.push(acc[j]);
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix {
            n: self.n,
            ncols: other.ncols,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[range.clone()].iter().copied().zip(self.vals[range].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        for (i, out) in y.iter_mut().enumerate().take(self.n) {
            let mut acc = 0.0;
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[idx] * x[self.cols[idx]];
            }
            *out = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).find(|&(j, _)| j == i).map_or(0.0, |(_, v)| v))
            .collect()
    }

    /// Largest `|i - j|` over stored entries.
    pub fn bandwidth(&self) -> usize {
        (0..self.n)
            .flat_map(|i| self.row(i).map(move |(j, _)| i.abs_diff(j)))
            .max()
            .unwrap_or(0)
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.ncols]; self.n];
        for (i, row) in dense.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        dense
    }
}

/// Lower-triangular Cholesky factor stored by columns within a fixed band.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    // Column k holds rows k ..= k + bw at offsets 0 ..= bw.
    band: Vec<f64>,
}

impl BandCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let bw = a.bandwidth();
        let width = bw + 1;
        let mut band = vec![0.0; n * width];
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    band[j * width + (i - j)] = v;
                }
            }
        }
        Self::factor_lower_band(n, bw, band)
    }

    /// Factors a matrix given as its lower band, column `k` holding rows
    /// `k ..= k + bw` at offsets `0 ..= bw`. Right-looking; every update is a
    /// contiguous axpy.
    pub fn factor_lower_band(n: usize, bw: usize, mut band: Vec<f64>) -> Result<Self> {
        if band.len() != n * (bw + 1) {
            return Err(Error::invalid("band storage does not match n * (bw + 1)"));
        }
        factor_band(&mut band, n, bw)?;
        Ok(BandCholesky { n, bw, band })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (n, bw, width) = (self.n, self.bw, self.bw + 1);
        let mut y = b.to_vec();
        for k in 0..n {
            let len = bw.min(n - 1 - k) + 1;
            let col = &self.band[k * width..k * width + len];
            let yk = y[k] / col[0];
            y[k] = yk;
            for (t, c) in y[k + 1..k + len].iter_mut().zip(&col[1..]) {
                *t -= c * yk;
            }
        }
        for k in (0..n).rev() {
            let len = bw.min(n - 1 - k) + 1;
            let col = &self.band[k * width..k * width + len];
            let s = y[k] - dot(&col[1..], &y[k + 1..k + len]);
            y[k] = s / col[0];
        }
        y
    }
}

fn factor_band(band: &mut [f64], n: usize, bw: usize) -> Result<()> {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were detected at runtime.
            return unsafe { factor_band_avx2(band, n, bw) };
        }
    }
    factor_band_generic(band, n, bw)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn factor_band_avx2(band: &mut [f64], n: usize, bw: usize) -> Result<()> {
    factor_band_generic(band, n, bw)
}

#[inline(always)]
fn factor_band_generic(band: &mut [f64], n: usize, bw: usize) -> Result<()> {
    let width = bw + 1;
    for k in 0..n {
        let len = bw.min(n - 1 - k) + 1;
        let (head, tail) = band.split_at_mut((k + 1) * width);
        let col = &mut head[k * width..k * width + len];
        let pivot = col[0];
        if !(pivot > 0.0) {
            return Err(Error::Numerical(format!(
                "matrix not positive definite (pivot {pivot:.3e} at row {k})"
            )));
        }
        let d = pivot.sqrt();
        col[0] = d;
        let inv = 1.0 / d;
        for x in &mut col[1..] {
            *x *= inv;
        }
        for j in 1..len {
            let l = col[j];
            if l == 0.0 {
                continue;
            }
            let target = &mut tail[(j - 1) * width..(j - 1) * width + (len - j)];
            for (t, c) in target.iter_mut().zip(&col[j..]) {
                *t = (-l).mul_add(*c, *t);
            }
        }
    }
    Ok(())
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for lane in 0..4 {
            acc[lane] += a[4 * c + lane] * b[4 * c + lane];
        }
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[derive(Debug, Clone, Copy)]
pub struct CgOptions {
    pub rel_tol: f64,
    pub max_iters: usize,
}

impl Default for CgOptions {
    fn default() -> Self {
        CgOptions {
            rel_tol: 1e-10,
            max_iters: 20_000,
        }
    }
}

/// Square linear map `y = A x`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.mul_vec(x, y);
    }
}

/// Approximate inverse applied inside conjugate gradients; must be
/// symmetric positive definite.
pub trait Preconditioner {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

/// Inverse of the diagonal.
#[derive(Debug, Clone)]
pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(a: &CsrMatrix) -> Self {
        let inv_diag = a
            .diagonal()
            .into_iter()
            .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        Jacobi { inv_diag }
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((z, r), d) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *z = r * d;
        }
    }
}

/// Jacobi-preconditioned conjugate gradients from a zero initial guess.
pub fn pcg(a: &CsrMatrix, b: &[f64], opts: CgOptions) -> Result<Vec<f64>> {
    Ok(pcg_with(a, b, &Jacobi::new(a), opts)?.0)
}

/// Preconditioned conjugate gradients from a zero initial guess; returns
/// the solution and the iteration count. Converges when
/// `||r|| <= rel_tol ||b||`.
pub fn pcg_with(
    a: &dyn LinearOperator,
    b: &[f64],
    m: &dyn Preconditioner,
    opts: CgOptions,
) -> Result<(Vec<f64>, usize)> {
    let n = a.dim();
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok((x, 0));
    }
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    m.apply(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for iter in 0..opts.max_iters {
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::Numerical(format!(
                "conjugate gradients broke down at iteration {iter} (p'Ap = {pap:.3e})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= opts.rel_tol * b_norm {
            return Ok((x, iter + 1));
        }
        m.apply(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let mut res = vec![0.0; n];
    a.apply(&x, &mut res);
    let residual = res
        .iter()
        .zip(b)
        .map(|(ax, b)| (b - ax).powi(2))
        .sum::<f64>()
        .sqrt()
        / b_norm;
    Err(Error::NoConvergence {
        iterations: opts.max_iters,
        residual,
    })
}
