//! Forward and adjoint solves of `-div(e^u grad p) = f` on the unit square.
//!
//! Discretization: bilinear finite elements on the uniform `2^N x 2^N` grid,
//! with `e^u` constant on each cell. Unknowns live on the `(2^N + 1)^2`
//! nodes. Dirichlet nodes are eliminated from the system, which stays
//! symmetric positive definite.

mod linalg;
mod multigrid;
mod system;

pub use linalg::{pcg, pcg_with, BandCholesky, CgOptions, CsrMatrix, Jacobi, Preconditioner};
pub use multigrid::Multigrid;
pub use system::{
    dirichlet_values, field_load, neumann_load, point_load, SolverKind, StiffnessSystem,
};

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::GridField;

/// Values at the grid nodes `(i h, j h)`, `0 <= i, j <= 2^N`, stored with
/// the x index outermost.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    exponent: u32,
    values: Vec<f64>,
}

impl NodalField {
    pub fn zeros(exponent: u32) -> Self {
        let m = (1usize << exponent) + 1;
        NodalField {
            exponent,
            values: vec![0.0; m * m],
        }
    }

    pub fn from_values(exponent: u32, values: Vec<f64>) -> Result<Self> {
        let m = (1usize << exponent) + 1;
        if values.len() != m * m {
            return Err(Error::invalid(format!(
                "nodal field of exponent {exponent} needs {} values, got {}",
                m * m,
                values.len()
            )));
        }
        Ok(NodalField { exponent, values })
    }

    pub fn from_fn(exponent: u32, f: impl Fn(f64, f64) -> f64) -> Self {
        let m = (1usize << exponent) + 1;
        let h = 1.0 / (m - 1) as f64;
        let mut values = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                values.push(f(i as f64 * h, j as f64 * h));
            }
        }
        NodalField { exponent, values }
    }

    pub fn exponent(&self) -> u32 {
        self.exponent
    }

    /// Nodes per side, `2^N + 1`.
    pub fn nodes_per_side(&self) -> usize {
        (1usize << self.exponent) + 1
    }

    pub fn cell_size(&self) -> f64 {
        1.0 / (1u64 << self.exponent) as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.nodes_per_side() + j]
    }

    pub fn dot(&self, other: &NodalField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs_diff(&self, other: &NodalField) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Bilinear interpolation at a point of the closed unit square.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        let w = hat_weights(self.exponent, x, y)?;
        Ok(w.iter().map(|&(idx, wt)| wt * self.values[idx]).sum())
    }

    /// Cell field holding each cell's lower-left node value.
    pub fn to_cell_samples(&self) -> GridField {
        let side = 1usize << self.exponent;
        let mut out = GridField::zeros(self.exponent);
        for k in 0..side {
            for n in 0..side {
                out.set(k, n, self.get(k, n));
            }
        }
        out
    }

    /// Cell field holding the interpolant's value at each cell centre.
    pub fn to_cell_centers(&self) -> GridField {
        let side = 1usize << self.exponent;
        let mut out = GridField::zeros(self.exponent);
        for k in 0..side {
            for n in 0..side {
                let v = self.get(k, n) + self.get(k + 1, n) + self.get(k, n + 1) + self.get(k + 1, n + 1);
                out.set(k, n, 0.25 * v);
            }
        }
        out
    }

    /// Writes `x,y,value` rows, one per node.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["x", "y", "value"])?;
        let m = self.nodes_per_side();
        let h = self.cell_size();
        for i in 0..m {
            for j in 0..m {
                wr.write_record([
                    format!("{:?}", i as f64 * h),
                    format!("{:?}", j as f64 * h),
                    format!("{:?}", self.get(i, j)),
                ])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

/// Bilinear hat weights `(node index, weight)` of the four corners of the
/// cell containing `(x, y)`. Points on the upper edges belong to the last
/// cell.
pub fn hat_weights(exponent: u32, x: f64, y: f64) -> Result<[(usize, f64); 4]> {
    if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
        return Err(Error::invalid(format!("point ({x}, {y}) outside the unit square")));
    }
    let side = 1usize << exponent;
    let m = side + 1;
    let sx = x * side as f64;
    let sy = y * side as f64;
    let k = (sx.floor() as usize).min(side - 1);
    let n = (sy.floor() as usize).min(side - 1);
    let (a, b) = (sx - k as f64, sy - n as f64);
    let idx = |i: usize, j: usize| i * m + j;
    Ok([
        (idx(k, n), (1.0 - a) * (1.0 - b)),
        (idx(k + 1, n), a * (1.0 - b)),
        (idx(k, n + 1), (1.0 - a) * b),
        (idx(k + 1, n + 1), a * b),
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Edge {
    /// `x = 0`
    Left,
    /// `x = 1`
    Right,
    /// `y = 0`
    Bottom,
    /// `y = 1`
    Top,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::Left, Edge::Right, Edge::Bottom, Edge::Top];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

/// Boundary data along one edge: `g` for Dirichlet, outward flux `h` for
/// Neumann.
#[derive(Clone)]
pub enum EdgeData {
    Constant(f64),
    Function(Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>),
}

impl EdgeData {
    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        match self {
            EdgeData::Constant(c) => *c,
            EdgeData::Function(f) => f(x, y),
        }
    }
}

impl fmt::Debug for EdgeData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdgeData::Constant(c) => write!(f, "Constant({c})"),
            EdgeData::Function(_) => write!(f, "Function(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EdgeCondition {
    pub kind: BoundaryKind,
    pub data: EdgeData,
}

impl EdgeCondition {
    pub fn dirichlet(value: f64) -> Self {
        EdgeCondition {
            kind: BoundaryKind::Dirichlet,
            data: EdgeData::Constant(value),
        }
    }

    pub fn neumann(flux: f64) -> Self {
        EdgeCondition {
            kind: BoundaryKind::Neumann,
            data: EdgeData::Constant(flux),
        }
    }

    pub fn with_fn(kind: BoundaryKind, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        EdgeCondition {
            kind,
            data: EdgeData::Function(Arc::new(f)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BoundarySpec {
    pub left: EdgeCondition,
    pub right: EdgeCondition,
    pub bottom: EdgeCondition,
    pub top: EdgeCondition,
}

impl BoundarySpec {
    /// `p = 0` on `x = 0`, no flux through the other three edges.
    pub fn groundwater() -> Self {
        BoundarySpec {
            left: EdgeCondition::dirichlet(0.0),
            right: EdgeCondition::neumann(0.0),
            bottom: EdgeCondition::neumann(0.0),
            top: EdgeCondition::neumann(0.0),
        }
    }

    pub fn edge(&self, e: Edge) -> &EdgeCondition {
        match e {
            Edge::Left => &self.left,
            Edge::Right => &self.right,
            Edge::Bottom => &self.bottom,
            Edge::Top => &self.top,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if Edge::ALL
            .iter()
            .all(|&e| self.edge(e).kind == BoundaryKind::Neumann)
        {
            return Err(Error::config(
                "boundary",
                "at least one edge must be Dirichlet; the pure Neumann operator is singular",
            ));
        }
        Ok(())
    }

    /// Same edge kinds with all data set to zero.
    pub fn homogeneous(&self) -> Self {
        let zero = |c: &EdgeCondition| EdgeCondition {
            kind: c.kind,
            data: EdgeData::Constant(0.0),
        };
        BoundarySpec {
            left: zero(&self.left),
            right: zero(&self.right),
            bottom: zero(&self.bottom),
            top: zero(&self.top),
        }
    }

    /// Whether node `(i, j)` of a grid with `side` cells lies on a Dirichlet
    /// edge. Corners shared with a Neumann edge count as Dirichlet.
    pub fn is_dirichlet_node(&self, i: usize, j: usize, side: usize) -> bool {
        (i == 0 && self.left.kind == BoundaryKind::Dirichlet)
            || (i == side && self.right.kind == BoundaryKind::Dirichlet)
            || (j == 0 && self.bottom.kind == BoundaryKind::Dirichlet)
            || (j == side && self.top.kind == BoundaryKind::Dirichlet)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSource {
    pub x: f64,
    pub y: f64,
    pub strength: f64,
}

#[derive(Debug, Clone)]
pub enum Source {
    /// Cell-wise constant volume source.
    Field(GridField),
    /// Weighted Dirac masses.
    Points(Vec<PointSource>),
}

/// Immutable description of one boundary value problem.
#[derive(Debug, Clone)]
pub struct EllipticProblem {
    exponent: u32,
    log_perm: GridField,
    source: Source,
    boundary: BoundarySpec,
}

impl EllipticProblem {
    /// Cell fields coarser than the solver grid are prolonged by constant
    /// injection; finer ones are rejected.
    pub fn new(exponent: u32, log_perm: GridField, source: Source, boundary: BoundarySpec) -> Result<Self> {
        if exponent == 0 {
            return Err(Error::config("N_solver", "solver grid needs at least 2x2 cells"));
        }
        boundary.validate()?;
        let log_perm = to_solver_grid(log_perm, exponent, "log_perm")?;
        let source = match source {
            Source::Field(f) => Source::Field(to_solver_grid(f, exponent, "source")?),
            Source::Points(pts) => {
                for p in &pts {
                    if !(0.0..=1.0).contains(&p.x) || !(0.0..=1.0).contains(&p.y) {
                        return Err(Error::invalid(format!(
                            "point source ({}, {}) outside the unit square",
                            p.x, p.y
                        )));
                    }
                }
                Source::Points(pts)
            }
        };
        Ok(EllipticProblem {
            exponent,
            log_perm,
            source,
            boundary,
        })
    }

    pub fn exponent(&self) -> u32 {
        self.exponent
    }

    pub fn log_perm(&self) -> &GridField {
        &self.log_perm
    }

    pub fn source(&self) -> &Source {
        &self.source
    }

    pub fn boundary(&self) -> &BoundarySpec {
        &self.boundary
    }

    /// Same sources and boundary with a new coefficient field.
    pub fn with_log_perm(&self, log_perm: GridField) -> Result<Self> {
        Ok(EllipticProblem {
            exponent: self.exponent,
            log_perm: to_solver_grid(log_perm, self.exponent, "log_perm")?,
            source: self.source.clone(),
            boundary: self.boundary.clone(),
        })
    }

    /// Nodal load vector from sources and Neumann data.
    pub fn load(&self) -> Result<Vec<f64>> {
        let mut load = match &self.source {
            Source::Field(f) => field_load(f),
            Source::Points(pts) => {
                let xy: Vec<(f64, f64)> = pts.iter().map(|p| (p.x, p.y)).collect();
                let w: Vec<f64> = pts.iter().map(|p| p.strength).collect();
                point_load(self.exponent, &xy, &w)?
            }
        };
        for (l, b) in load.iter_mut().zip(neumann_load(self.exponent, &self.boundary)) {
            *l += b;
        }
        Ok(load)
    }
}

fn to_solver_grid(field: GridField, exponent: u32, name: &str) -> Result<GridField> {
    use std::cmp::Ordering;
    match field.exponent().cmp(&exponent) {
        Ordering::Equal => Ok(field),
        Ordering::Less => field.prolong(exponent),
        Ordering::Greater => Err(Error::config(
            name,
            format!(
                "field exponent {} is finer than the solver exponent {exponent}",
                field.exponent()
            ),
        )),
    }
}

/// Point observations `y_i` with noise level `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    points: Vec<(f64, f64)>,
    values: Vec<f64>,
    gamma: f64,
}

impl ObservationSet {
    pub fn new(points: Vec<(f64, f64)>, values: Vec<f64>, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(Error::config("gamma", format!("noise level must be positive, got {gamma}")));
        }
        if points.len() != values.len() {
            return Err(Error::invalid(format!(
                "{} observation points but {} values",
                points.len(),
                values.len()
            )));
        }
        for &(x, y) in &points {
            if !(x > 0.0 && x < 1.0 && y > 0.0 && y < 1.0) {
                return Err(Error::invalid(format!(
                    "observation point ({x}, {y}) is not strictly inside the unit square"
                )));
            }
        }
        Ok(ObservationSet { points, values, gamma })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        ObservationSet::new(self.points.clone(), self.values.clone(), gamma)
    }

    /// `x,y,value` rows with a header.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        write_xyv_csv(w, &self.points, &self.values)
    }

    pub fn read_csv(r: impl Read, gamma: f64) -> Result<Self> {
        let (points, values) = read_xyv_csv(r)?;
        ObservationSet::new(points, values, gamma)
    }
}

pub fn write_xyv_csv(w: impl Write, points: &[(f64, f64)], values: &[f64]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["x", "y", "value"])?;
    for (&(x, y), v) in points.iter().zip(values) {
        wr.write_record([format!("{x:?}"), format!("{y:?}"), format!("{v:?}")])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_xyv_csv(r: impl Read) -> Result<(Vec<(f64, f64)>, Vec<f64>)> {
    let mut rd = csv::Reader::from_reader(r);
    let mut points = Vec::new();
    let mut values = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::Format(format!("row {}: expected x,y,value", line + 1)));
        }
        let parse = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("row {}: {e}", line + 1)))
        };
        points.push((parse(&rec[0])?, parse(&rec[1])?));
        values.push(parse(&rec[2])?);
    }
    Ok((points, values))
}

/// Point sources from `x,y,value` CSV.
pub fn read_point_sources(r: impl Read) -> Result<Vec<PointSource>> {
    let (points, values) = read_xyv_csv(r)?;
    Ok(points
        .into_iter()
        .zip(values)
        .map(|((x, y), strength)| PointSource { x, y, strength })
        .collect())
}

/// Pressure solving the problem with its own boundary data.
pub fn solve_forward(problem: &EllipticProblem) -> Result<NodalField> {
    let sys = StiffnessSystem::assemble(problem.log_perm(), problem.boundary(), SolverKind::Auto)?;
    sys.solve_problem(problem)
}

/// Solution with homogeneous boundary data driven by `sum_i weights_i delta_{x_i}`.
pub fn solve_adjoint(problem: &EllipticProblem, weights: &[f64], points: &[(f64, f64)]) -> Result<NodalField> {
    let sys = StiffnessSystem::assemble(problem.log_perm(), problem.boundary(), SolverKind::Auto)?;
    sys.solve_dirac(weights, points)
}

/// Bilinear interpolation of `p` at each point.
pub fn observe(p: &NodalField, points: &[(f64, f64)]) -> Result<Vec<f64>> {
    points.iter().map(|&(x, y)| p.eval(x, y)).collect()
}

/// Cell-centred gradient of a nodal field.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGradient {
    pub dx: GridField,
    pub dy: GridField,
}

/// Gradient of the bilinear interpolant at each cell centre: averaged
/// differences across the cell. Exact for affine fields.
pub fn gradient_field(p: &NodalField) -> CellGradient {
    let e = p.exponent();
    let side = 1usize << e;
    let inv_2h = 0.5 * side as f64;
    let mut dx = GridField::zeros(e);
    let mut dy = GridField::zeros(e);
    for k in 0..side {
        for n in 0..side {
            let (p00, p10, p01, p11) = (p.get(k, n), p.get(k + 1, n), p.get(k, n + 1), p.get(k + 1, n + 1));
            dx.set(k, n, (p10 - p00 + p11 - p01) * inv_2h);
            dy.set(k, n, (p01 - p00 + p11 - p10) * inv_2h);
        }
    }
    CellGradient { dx, dy }
}
