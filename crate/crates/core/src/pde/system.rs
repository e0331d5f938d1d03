//! Assembly of the bilinear element system and its reusable factorization.

use super::linalg::{pcg_with, BandCholesky, CgOptions, CsrMatrix};
use super::multigrid::{ElementMatrix, Multigrid, StencilOperator};
use super::{hat_weights, BoundaryKind, BoundarySpec, Edge, EllipticProblem, NodalField};
use crate::error::{Error, Result};
use crate::grid::GridField;

/// Unit-coefficient element stiffness, corners ordered (0,0), (1,0), (1,1),
/// (0,1). Independent of the cell size in two dimensions.
pub(crate) const K_REF: [[f64; 4]; 4] = [
    [4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0, -2.0 / 6.0],
    [-2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0, -1.0 / 6.0],
    [-1.0 / 6.0, -2.0 / 6.0, -1.0 / 6.0, 4.0 / 6.0],
];

/// Largest free-node count factored directly under [`SolverKind::Auto`]; the
/// measured crossover with multigrid lies between 2^7 and 2^8 cells per side.
const AUTO_DIRECT_LIMIT: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverKind {
    /// Banded Cholesky for small systems, multigrid-preconditioned
    /// conjugate gradients otherwise.
    #[default]
    Auto,
    Direct,
    Iterative,
}

/// Full-node operator with identity rows on constrained nodes, and its
/// multigrid hierarchy.
#[derive(Debug, Clone)]
struct IterativeSolver {
    operator: StencilOperator,
    multigrid: Multigrid,
}

/// Stiffness system for one coefficient field, with Dirichlet nodes
/// eliminated and the reduced matrix factored once.
#[derive(Debug, Clone)]
pub struct StiffnessSystem {
    exponent: u32,
    theta: Vec<f64>,
    boundary: BoundarySpec,
    free_of_node: Vec<Option<usize>>,
    free_nodes: Vec<usize>,
    factor: Option<BandCholesky>,
    iterative: Option<IterativeSolver>,
    cg: CgOptions,
}

#[inline]
fn corners(k: usize, n: usize, m: usize) -> [usize; 4] {
    [k * m + n, (k + 1) * m + n, (k + 1) * m + n + 1, k * m + n + 1]
}

impl StiffnessSystem {
    pub fn assemble(log_perm: &GridField, boundary: &BoundarySpec, kind: SolverKind) -> Result<Self> {
        boundary.validate()?;
        let exponent = log_perm.exponent();
        let side = log_perm.side();
        if side < 2 {
            return Err(Error::config("N_solver", "solver grid needs at least 2x2 cells"));
        }
        let m = side + 1;
        let theta: Vec<f64> = log_perm.values().iter().map(|u| u.exp()).collect();
        if let Some(bad) = theta.iter().position(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Numerical(format!(
                "coefficient exp(u) = {} at cell {bad} is not a positive finite number",
                theta[bad]
            )));
        }
        let mut free_of_node = vec![None; m * m];
        let mut free_nodes = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                if !boundary.is_dirichlet_node(i, j, side) {
                    free_of_node[i * m + j] = Some(free_nodes.len());
                    free_nodes.push(i * m + j);
                }
            }
        }
        let n_free = free_nodes.len();
        let direct = match kind {
            SolverKind::Direct => true,
            SolverKind::Iterative => false,
            SolverKind::Auto => n_free <= AUTO_DIRECT_LIMIT,
        };
        let (factor, iterative) = if direct {
            let bw = element_bandwidth(side, &free_of_node);
            let width = bw + 1;
            let mut band = vec![0.0; n_free * width];
            for_each_free_pair(side, &theta, &free_of_node, |fa, fb, v| {
                if fa >= fb {
                    band[fb * width + (fa - fb)] += v;
                }
            });
            (Some(BandCholesky::factor_lower_band(n_free, bw, band)?), None)
        } else {
            let fixed: Vec<bool> = free_of_node.iter().map(Option::is_none).collect();
            let elements: Vec<ElementMatrix> = theta.iter().map(|&t| K_REF.map(|row| row.map(|v| v * t))).collect();
            let (operator, multigrid) = Multigrid::new(exponent, elements, &fixed)?;
            (None, Some(IterativeSolver { operator, multigrid }))
        };
        Ok(StiffnessSystem {
            exponent,
            theta,
            boundary: boundary.clone(),
            free_of_node,
            free_nodes,
            factor,
            iterative,
            cg: CgOptions::default(),
        })
    }

    pub fn with_cg_options(mut self, cg: CgOptions) -> Self {
        self.cg = cg;
        self
    }

    pub fn exponent(&self) -> u32 {
        self.exponent
    }

    /// Cell coefficients `e^u`, row-major like [`GridField`].
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn num_free(&self) -> usize {
        self.free_nodes.len()
    }

    /// Reduced matrix over the free nodes.
    pub fn matrix(&self) -> CsrMatrix {
        reduced_csr(1usize << self.exponent, &self.theta, &self.free_of_node, self.num_free())
    }

    pub fn is_direct(&self) -> bool {
        self.factor.is_some()
    }

    /// Solves the reduced system for a right-hand side over free nodes.
    pub fn solve_reduced(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        if rhs.len() != self.num_free() {
            return Err(Error::invalid(format!(
                "right-hand side has {} entries, system has {}",
                rhs.len(),
                self.num_free()
            )));
        }
        match (&self.factor, &self.iterative) {
            (Some(f), _) => Ok(f.solve(rhs)),
            (None, Some(it)) => {
                let mut full = vec![0.0; self.free_of_node.len()];
                for (&node, r) in self.free_nodes.iter().zip(rhs) {
                    full[node] = *r;
                }
                let (x, _) = pcg_with(&it.operator, &full, &it.multigrid, self.cg)?;
                Ok(self.free_nodes.iter().map(|&node| x[node]).collect())
            }
            (None, None) => unreachable!("assembly stores a factor or an iterative solver"),
        }
    }

    /// Solves with a full nodal load and given values on Dirichlet nodes
    /// (zero when `dirichlet` is `None`). Loads on Dirichlet nodes are
    /// ignored.
    pub fn solve(&self, load: &[f64], dirichlet: Option<&NodalField>) -> Result<NodalField> {
        let m = (1usize << self.exponent) + 1;
        if load.len() != m * m {
            return Err(Error::invalid(format!("load has {} entries, expected {}", load.len(), m * m)));
        }
        let mut rhs: Vec<f64> = self.free_nodes.iter().map(|&g| load[g]).collect();
        let mut out = NodalField::zeros(self.exponent);
        if let Some(g) = dirichlet {
            let mut lifted = vec![0.0; m * m];
            for (idx, v) in lifted.iter_mut().enumerate() {
                if self.free_of_node[idx].is_none() {
                    *v = g.values()[idx];
                }
            }
            let kg = self.apply_full(&lifted);
            for (r, &node) in rhs.iter_mut().zip(&self.free_nodes) {
                *r -= kg[node];
            }
            out.values_mut().copy_from_slice(&lifted);
        }
        let x = self.solve_reduced(&rhs)?;
        let vals = out.values_mut();
        for (&node, v) in self.free_nodes.iter().zip(x) {
            vals[node] = v;
        }
        Ok(out)
    }

    /// Forward solve of `problem` using this operator.
    pub fn solve_problem(&self, problem: &EllipticProblem) -> Result<NodalField> {
        self.check_exponent(problem.exponent())?;
        let g = dirichlet_values(self.exponent, problem.boundary());
        self.solve(&problem.load()?, Some(&g))
    }

    /// Homogeneous-boundary solve driven by weighted Dirac masses.
    pub fn solve_dirac(&self, weights: &[f64], points: &[(f64, f64)]) -> Result<NodalField> {
        let load = point_load(self.exponent, points, weights)?;
        self.solve(&load, None)
    }

    fn check_exponent(&self, e: u32) -> Result<()> {
        if e != self.exponent {
            return Err(Error::invalid(format!(
                "problem exponent {e} does not match the assembled system ({})",
                self.exponent
            )));
        }
        Ok(())
    }

    /// Unconstrained product `K x` over all nodes.
    pub fn apply_full(&self, x: &[f64]) -> Vec<f64> {
        let side = 1usize << self.exponent;
        let m = side + 1;
        let mut y = vec![0.0; m * m];
        for k in 0..side {
            for n in 0..side {
                let t = self.theta[k * side + n];
                let nodes = corners(k, n, m);
                let loc = nodes.map(|g| x[g]);
                for a in 0..4 {
                    let s: f64 = (0..4).map(|b| K_REF[a][b] * loc[b]).sum();
                    y[nodes[a]] += t * s;
                }
            }
        }
        y
    }

    /// `int_cell e^u grad p . grad w` over cell `(k, n)`.
    #[inline]
    pub fn cell_energy(&self, p: &NodalField, w: &NodalField, k: usize, n: usize) -> f64 {
        let side = 1usize << self.exponent;
        self.theta[k * side + n] * unit_cell_energy(p, w, k, n)
    }

    pub fn boundary(&self) -> &BoundarySpec {
        &self.boundary
    }
}

/// Calls `f(free_a, free_b, value)` for every element matrix entry
/// coupling two free nodes.
fn for_each_free_pair(side: usize, theta: &[f64], free_of_node: &[Option<usize>], mut f: impl FnMut(usize, usize, f64)) {
    let m = side + 1;
    for k in 0..side {
        for n in 0..side {
            let t = theta[k * side + n];
            let free = corners(k, n, m).map(|g| free_of_node[g]);
            for a in 0..4 {
                let Some(fa) = free[a] else { continue };
                for b in 0..4 {
                    if let Some(fb) = free[b] {
                        f(fa, fb, t * K_REF[a][b]);
                    }
                }
            }
        }
    }
}

fn element_bandwidth(side: usize, free_of_node: &[Option<usize>]) -> usize {
    let m = side + 1;
    let mut bw = 0;
    for k in 0..side {
        for n in 0..side {
            let free: Vec<usize> = corners(k, n, m).iter().filter_map(|&g| free_of_node[g]).collect();
            for &a in &free {
                for &b in &free {
                    bw = bw.max(a.abs_diff(b));
                }
            }
        }
    }
    bw
}

fn reduced_csr(side: usize, theta: &[f64], free_of_node: &[Option<usize>], n_free: usize) -> CsrMatrix {
    let mut triplets = Vec::with_capacity(16 * side * side);
    for_each_free_pair(side, theta, free_of_node, |a, b, v| triplets.push((a, b, v)));
    CsrMatrix::from_triplets(n_free, triplets)
}

/// `int_cell grad p . grad w` for bilinear `p`, `w` on cell `(k, n)`.
#[inline]
pub(crate) fn unit_cell_energy(p: &NodalField, w: &NodalField, k: usize, n: usize) -> f64 {
    let m = p.nodes_per_side();
    let nodes = corners(k, n, m);
    let pl = nodes.map(|g| p.values()[g]);
    let wl = nodes.map(|g| w.values()[g]);
    let mut acc = 0.0;
    for a in 0..4 {
        let s = K_REF[a][0] * pl[0] + K_REF[a][1] * pl[1] + K_REF[a][2] * pl[2] + K_REF[a][3] * pl[3];
        acc += wl[a] * s;
    }
    acc
}

/// Consistent load of a cell-wise constant source: `f_c h^2 / 4` per corner.
pub fn field_load(f: &GridField) -> Vec<f64> {
    let side = f.side();
    let m = side + 1;
    let q = f.cell_size() * f.cell_size() / 4.0;
    let mut load = vec![0.0; m * m];
    for k in 0..side {
        for n in 0..side {
            let v = f.get(k, n) * q;
            for g in corners(k, n, m) {
                load[g] += v;
            }
        }
    }
    load
}

/// Load of `sum_i weights_i delta_{x_i}`: hat-function values at each point.
pub fn point_load(exponent: u32, points: &[(f64, f64)], weights: &[f64]) -> Result<Vec<f64>> {
    if points.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} points but {} weights",
            points.len(),
            weights.len()
        )));
    }
    let m = (1usize << exponent) + 1;
    let mut load = vec![0.0; m * m];
    for (&(x, y), &w) in points.iter().zip(weights) {
        for (g, hat) in hat_weights(exponent, x, y)? {
            load[g] += w * hat;
        }
    }
    Ok(load)
}

/// Neumann flux load, midpoint rule per boundary segment split evenly
/// between its two end nodes.
pub fn neumann_load(exponent: u32, boundary: &BoundarySpec) -> Vec<f64> {
    let side = 1usize << exponent;
    let m = side + 1;
    let h = 1.0 / side as f64;
    let mut load = vec![0.0; m * m];
    for edge in Edge::ALL {
        let cond = boundary.edge(edge);
        if cond.kind != BoundaryKind::Neumann {
            continue;
        }
        for s in 0..side {
            let t = (s as f64 + 0.5) * h;
            let (x, y, a, b) = match edge {
                Edge::Left => (0.0, t, s, s + 1),
                Edge::Right => (1.0, t, side * m + s, side * m + s + 1),
                Edge::Bottom => (t, 0.0, s * m, (s + 1) * m),
                Edge::Top => (t, 1.0, s * m + side, (s + 1) * m + side),
            };
            let v = cond.data.eval(x, y) * h / 2.0;
            load[a] += v;
            load[b] += v;
        }
    }
    load
}

/// Nodal field carrying Dirichlet data on Dirichlet nodes, zero elsewhere.
/// Corners on two Dirichlet edges take the first of left, right, bottom, top.
pub fn dirichlet_values(exponent: u32, boundary: &BoundarySpec) -> NodalField {
    let side = 1usize << exponent;
    let h = 1.0 / side as f64;
    let mut out = NodalField::zeros(exponent);
    let m = side + 1;
    for i in 0..m {
        for j in 0..m {
            let on = [(Edge::Left, i == 0), (Edge::Right, i == side), (Edge::Bottom, j == 0), (Edge::Top, j == side)];
            if let Some((e, _)) = on
                .iter()
                .find(|(e, hit)| *hit && boundary.edge(*e).kind == BoundaryKind::Dirichlet)
            {
                out.values_mut()[i * m + j] = boundary.edge(*e).data.eval(i as f64 * h, j as f64 * h);
            }
        }
    }
    out
}
