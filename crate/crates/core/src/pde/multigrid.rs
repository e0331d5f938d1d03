//! Geometric multigrid V-cycle on the nodal grid hierarchy, used as a
//! conjugate-gradient preconditioner.
//!
//! Operators act on all `(2^e + 1)^2` nodes as 9-point stencils; constrained
//! nodes carry identity rows and are decoupled from the rest. Coarse
//! operators are Galerkin products `P^T A P` with bilinear interpolation
//! `P`, formed cell by cell: every fine node inside a coarse cell is
//! interpolated from that cell's corners only, so coarse element matrices
//! are `P_loc^T A_patch P_loc` over the cell's 3x3 fine-node patch.

use super::linalg::{BandCholesky, CsrMatrix, LinearOperator, Preconditioner};
use crate::error::Result;

const COARSEST_EXPONENT: u32 = 1;
const CENTER: usize = 4;

/// 4x4 element matrix, corners ordered (0,0), (1,0), (1,1), (0,1).
pub type ElementMatrix = [[f64; 4]; 4];

/// Corner offsets `(dx, dy)` in the element ordering.
const CORNER: [(usize, usize); 4] = [(0, 0), (1, 0), (1, 1), (0, 1)];

#[inline]
fn slot(di: isize, dj: isize) -> usize {
    ((di + 1) * 3 + (dj + 1)) as usize
}

/// 9-point operator on the `m x m` nodes of a grid, node `(i, j)` at index
/// `i m + j`. Slot `3 (di + 1) + (dj + 1)` couples to node `(i + di, j + dj)`.
#[derive(Debug, Clone)]
pub struct StencilOperator {
    m: usize,
    coef: Vec<[f64; 9]>,
}

impl StencilOperator {
    /// Assembles cell element matrices, dropping couplings of `fixed`
    /// nodes and giving them unit diagonals.
    pub fn from_elements(exponent: u32, elements: &[ElementMatrix], fixed: &[bool]) -> Self {
        let side = 1usize << exponent;
        let m = side + 1;
        let mut coef = vec![[0.0; 9]; m * m];
        for k in 0..side {
            for n in 0..side {
                let e = &elements[k * side + n];
                for a in 0..4 {
                    let (ia, ja) = (k + CORNER[a].0, n + CORNER[a].1);
                    if fixed[ia * m + ja] {
                        continue;
                    }
                    for b in 0..4 {
                        let (ib, jb) = (k + CORNER[b].0, n + CORNER[b].1);
                        if fixed[ib * m + jb] {
                            continue;
                        }
                        let s = slot(ib as isize - ia as isize, jb as isize - ja as isize);
                        coef[ia * m + ja][s] += e[a][b];
                    }
                }
            }
        }
        for (g, c) in coef.iter_mut().enumerate() {
            if fixed[g] {
                c[CENTER] = 1.0;
            }
        }
        StencilOperator { m, coef }
    }

    /// `sum_s coef[g][s] x[neighbour_s]`, skipping the centre when `skip_center`.
    #[inline]
    fn row_sum(&self, i: usize, j: usize, x: &[f64], skip_center: bool) -> f64 {
        let m = self.m;
        let c = &self.coef[i * m + j];
        let mut acc = 0.0;
        if i > 0 && j > 0 && i + 1 < m && j + 1 < m {
            let base = i * m + j;
            acc += c[0] * x[base - m - 1] + c[1] * x[base - m] + c[2] * x[base - m + 1];
            acc += c[3] * x[base - 1] + c[5] * x[base + 1];
            acc += c[6] * x[base + m - 1] + c[7] * x[base + m] + c[8] * x[base + m + 1];
            if !skip_center {
                acc += c[4] * x[base];
            }
            return acc;
        }
        for di in -1isize..=1 {
            for dj in -1isize..=1 {
                if skip_center && di == 0 && dj == 0 {
                    continue;
                }
                let (ni, nj) = (i as isize + di, j as isize + dj);
                if ni < 0 || nj < 0 || ni >= m as isize || nj >= m as isize {
                    continue;
                }
                acc += c[slot(di, dj)] * x[ni as usize * m + nj as usize];
            }
        }
        acc
    }

    fn gauss_seidel(&self, b: &[f64], x: &mut [f64], backward: bool) {
        let m = self.m;
        let mut relax = |g: usize| {
            let (i, j) = (g / m, g % m);
            let off = self.row_sum(i, j, x, true);
            x[g] = (b[g] - off) / self.coef[g][CENTER];
        };
        if backward {
            (0..m * m).rev().for_each(&mut relax);
        } else {
            (0..m * m).for_each(&mut relax);
        }
    }

    pub fn to_csr(&self) -> CsrMatrix {
        let m = self.m;
        let mut triplets = Vec::with_capacity(9 * m * m);
        for i in 0..m {
            for j in 0..m {
                for di in -1isize..=1 {
                    for dj in -1isize..=1 {
                        let (ni, nj) = (i as isize + di, j as isize + dj);
                        if ni < 0 || nj < 0 || ni >= m as isize || nj >= m as isize {
                            continue;
                        }
                        let v = self.coef[i * m + j][slot(di, dj)];
                        if v != 0.0 {
                            triplets.push((i * m + j, ni as usize * m + nj as usize, v));
                        }
                    }
                }
            }
        }
        CsrMatrix::from_triplets(m * m, triplets)
    }
}

impl LinearOperator for StencilOperator {
    fn dim(&self) -> usize {
        self.m * self.m
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let m = self.m;
        for i in 0..m {
            for j in 0..m {
                y[i * m + j] = self.row_sum(i, j, x, false);
            }
        }
    }
}

/// Galerkin coarsening of cell element matrices by one level.
fn coarsen_elements(fine_exponent: u32, fine: &[ElementMatrix]) -> Vec<ElementMatrix> {
    let fine_side = 1usize << fine_exponent;
    let side = fine_side / 2;
    // Interpolation weight of patch coordinate a in {0, 1, 2} from corner c in {0, 1}.
    const W: [[f64; 2]; 3] = [[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]];
    let mut out = vec![[[0.0; 4]; 4]; side * side];
    for kc in 0..side {
        for nc in 0..side {
            let mut patch = [[0.0f64; 9]; 9];
            for dk in 0..2 {
                for dn in 0..2 {
                    let e = &fine[(2 * kc + dk) * fine_side + 2 * nc + dn];
                    let local = CORNER.map(|(cx, cy)| (dk + cx) * 3 + dn + cy);
                    for a in 0..4 {
                        for b in 0..4 {
                            patch[local[a]][local[b]] += e[a][b];
                        }
                    }
                }
            }
            let mut p = [[0.0f64; 4]; 9];
            for (q, row) in p.iter_mut().enumerate() {
                let (a, b) = (q / 3, q % 3);
                for (c, &(cx, cy)) in CORNER.iter().enumerate() {
                    row[c] = W[a][cx] * W[b][cy];
                }
            }
            let e = &mut out[kc * side + nc];
            for c1 in 0..4 {
                for c2 in 0..4 {
                    let mut acc = 0.0;
                    for q1 in 0..9 {
                        if p[q1][c1] == 0.0 {
                            continue;
                        }
                        for q2 in 0..9 {
                            acc += p[q1][c1] * patch[q1][q2] * p[q2][c2];
                        }
                    }
                    e[c1][c2] = acc;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Level {
    op: StencilOperator,
    fixed: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Multigrid {
    levels: Vec<Level>,
    coarse: BandCholesky,
}

impl Multigrid {
    /// Hierarchy for the operator assembled from `elements` on a grid of
    /// exponent `exponent`, constrained at `fixed` nodes. Constrained nodes
    /// must sit on whole boundary edges so every level constrains the same
    /// edges. Returns the finest operator alongside.
    pub fn new(exponent: u32, elements: Vec<ElementMatrix>, fixed: &[bool]) -> Result<(StencilOperator, Self)> {
        let mut levels = Vec::new();
        let mut elements = elements;
        let mut fixed = fixed.to_vec();
        let mut e = exponent;
        loop {
            let op = StencilOperator::from_elements(e, &elements, &fixed);
            if e <= COARSEST_EXPONENT {
                let coarse = BandCholesky::factor(&op.to_csr())?;
                let finest = levels.first().map_or_else(|| op.clone(), |l: &Level| l.op.clone());
                return Ok((finest, Multigrid { levels, coarse }));
            }
            let mf = (1usize << e) + 1;
            let mc = (1usize << (e - 1)) + 1;
            let coarse_fixed: Vec<bool> = (0..mc * mc)
                .map(|idx| fixed[(2 * (idx / mc)) * mf + 2 * (idx % mc)])
                .collect();
            let next = coarsen_elements(e, &elements);
            levels.push(Level { op, fixed });
            elements = next;
            fixed = coarse_fixed;
            e -= 1;
        }
    }

    fn vcycle(&self, lvl: usize, b: &[f64], x: &mut [f64]) {
        let Some(level) = self.levels.get(lvl) else {
            x.copy_from_slice(&self.coarse.solve(b));
            return;
        };
        let op = &level.op;
        x.fill(0.0);
        op.gauss_seidel(b, x, false);
        let mut resid = vec![0.0; b.len()];
        op.apply(x, &mut resid);
        for (r, b) in resid.iter_mut().zip(b) {
            *r = b - *r;
        }
        let next_fixed = match self.levels.get(lvl + 1) {
            Some(l) => &l.fixed,
            None => &coarse_fixed_of(&level.fixed, op.m),
        };
        let bc = restrict(&resid, op.m, &level.fixed, next_fixed);
        let mut xc = vec![0.0; bc.len()];
        self.vcycle(lvl + 1, &bc, &mut xc);
        prolong_add(&xc, op.m, &level.fixed, x);
        op.gauss_seidel(b, x, true);
    }
}

impl Preconditioner for Multigrid {
    /// One V(1,1) cycle from zero: forward sweep down, backward sweep up,
    /// which keeps the preconditioner symmetric.
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.vcycle(0, r, z);
    }
}

fn coarse_fixed_of(fixed: &[bool], mf: usize) -> Vec<bool> {
    let mc = mf / 2 + 1;
    (0..mc * mc)
        .map(|idx| fixed[(2 * (idx / mc)) * mf + 2 * (idx % mc)])
        .collect()
}

/// Coarse parents of fine index `i`, their weights and how many there are.
#[inline]
fn parents(i: usize) -> ([usize; 2], [f64; 2], usize) {
    if i % 2 == 0 {
        ([i / 2, 0], [1.0, 0.0], 1)
    } else {
        ([(i - 1) / 2, (i + 1) / 2], [0.5, 0.5], 2)
    }
}

/// `P^T r` with constrained rows of both grids zeroed.
fn restrict(r: &[f64], mf: usize, fine_fixed: &[bool], coarse_fixed: &[bool]) -> Vec<f64> {
    let mc = mf / 2 + 1;
    let mut out = vec![0.0; mc * mc];
    for i in 0..mf {
        let (ic, iw, ni) = parents(i);
        for j in 0..mf {
            let g = i * mf + j;
            if fine_fixed[g] {
                continue;
            }
            let v = r[g];
            let (jc, jw, nj) = parents(j);
            for a in 0..ni {
                for b in 0..nj {
                    out[ic[a] * mc + jc[b]] += iw[a] * jw[b] * v;
                }
            }
        }
    }
    for (o, f) in out.iter_mut().zip(coarse_fixed) {
        if *f {
            *o = 0.0;
        }
    }
    out
}

/// `x += P xc` on unconstrained fine nodes.
fn prolong_add(xc: &[f64], mf: usize, fine_fixed: &[bool], x: &mut [f64]) {
    let mc = mf / 2 + 1;
    for i in 0..mf {
        let (ic, iw, ni) = parents(i);
        for j in 0..mf {
            let g = i * mf + j;
            if fine_fixed[g] {
                continue;
            }
            let (jc, jw, nj) = parents(j);
            let mut v = 0.0;
            for a in 0..ni {
                for b in 0..nj {
                    v += iw[a] * jw[b] * xc[ic[a] * mc + jc[b]];
                }
            }
            x[g] += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::linalg::{pcg_with, CgOptions, Jacobi};
    use crate::pde::system::K_REF;

    fn fixed_left(e: u32) -> Vec<bool> {
        let m = (1usize << e) + 1;
        (0..m * m).map(|idx| idx / m == 0).collect()
    }

    fn elements(e: u32, theta: impl Fn(usize) -> f64) -> Vec<ElementMatrix> {
        (0..1usize << (2 * e))
            .map(|c| K_REF.map(|row| row.map(|v| v * theta(c))))
            .collect()
    }

    #[test]
    fn galerkin_coarsening_matches_matrix_product() {
        let e = 3;
        let els = elements(e, |c| 1.0 + (c % 7) as f64);
        let none = vec![false; 81];
        let fine = StencilOperator::from_elements(e, &els, &none).to_csr();
        let coarse = StencilOperator::from_elements(e - 1, &coarsen_elements(e, &els), &vec![false; 25]).to_csr();
        let mut t = Vec::new();
        for i in 0..9 {
            let (ic, iw, ni) = parents(i);
            for j in 0..9 {
                let (jc, jw, nj) = parents(j);
                for a in 0..ni {
                    for b in 0..nj {
                        t.push((i * 9 + j, ic[a] * 5 + jc[b], iw[a] * jw[b]));
                    }
                }
            }
        }
        let p = CsrMatrix::from_triplets_rect(81, 25, t);
        let rap = p.transpose().matmul(&fine.matmul(&p)).to_dense();
        let direct = coarse.to_dense();
        for i in 0..25 {
            for j in 0..25 {
                assert!((rap[i][j] - direct[i][j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stencil_apply_matches_csr() {
        let e = 3;
        let fixed = fixed_left(e);
        let op = StencilOperator::from_elements(e, &elements(e, |c| (c as f64 * 0.1).exp()), &fixed);
        let x: Vec<f64> = (0..81).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut y1 = vec![0.0; 81];
        let mut y2 = vec![0.0; 81];
        op.apply(&x, &mut y1);
        op.to_csr().mul_vec(&x, &mut y2);
        for (a, b) in y1.iter().zip(&y2) {
            assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()), "{a} {b}");
        }
    }

    #[test]
    fn multigrid_beats_jacobi_and_is_mesh_independent() {
        let mut counts = Vec::new();
        for e in [4, 5, 6] {
            let fixed = fixed_left(e);
            let side = 1usize << e;
            let els = elements(e, |c| if 4 * (c / side) < side && 4 * (c % side) >= side { 100.0 } else { 1.0 });
            let (op, mg) = Multigrid::new(e, els, &fixed).unwrap();
            let b: Vec<f64> = (0..op.dim())
                .map(|i| if fixed[i] { 0.0 } else { ((i * 7) % 13) as f64 - 6.0 })
                .collect();
            let opts = CgOptions { rel_tol: 1e-10, max_iters: 10_000 };
            let k_mg = pcg_with(&op, &b, &mg, opts).unwrap().1;
            let k_jac = pcg_with(&op, &b, &Jacobi::new(&op.to_csr()), opts).unwrap().1;
            assert!(k_mg * 4 < k_jac, "{k_mg} vs {k_jac}");
            counts.push(k_mg);
        }
        assert!(counts[2] <= counts[0] + 6, "{counts:?}");
    }
}
