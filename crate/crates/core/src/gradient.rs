//! Data misfit, its adjoint gradient with respect to basis coefficients,
//! and the quadratic MAP objective.
//!
//! For coefficients `a` mapping to a cell-wise log-permeability `u`, the
//! misfit gradient is `dPhi/da_l = -int b_l e^u grad p . grad w`, where `p`
//! is the forward solution and `w` solves the same operator with load
//! `-(1/gamma^2) sum_i r_i delta_{x_i}`, `r = y - observe(p)`. Two ways of
//! projecting the product field onto the basis are provided:
//! [`GradMethod::Basiswise`] integrates against each basis function on its
//! own, [`GradMethod::Transform`] applies one fast transform.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::besov::cm_level_weight;
use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::pde::{gradient_field, EllipticProblem, NodalField, ObservationSet, SolverKind, StiffnessSystem};
use crate::prior::{TrigBasis, TrigPriorSpec};
use crate::wavelet::{fwt2d_counted, inverse_linear_index_2d, iwt2d, psi_2d, WaveletDecomp2D};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Haar coefficients of depth `depth`, `4^depth` of them.
    Wavelet { depth: u32 },
    /// Trigonometric products up to frequency `k_max`, `(2 k_max + 1)^2` of them.
    Fourier { k_max: usize },
}

/// Map from a coefficient vector to a log-permeability on the solver grid.
#[derive(Debug, Clone)]
pub struct Parameterization {
    kind: ParamKind,
    exponent: u32,
    trig_table: Vec<Vec<f64>>,
}

impl Parameterization {
    /// Wavelet map with the inverse-crime guard `exponent >= depth + 2`.
    pub fn wavelet(depth: u32, exponent: u32) -> Result<Self> {
        if exponent < depth + 2 {
            return Err(Error::config(
                "J_max",
                format!("solver exponent {exponent} must be at least J_max + 2 = {}", depth + 2),
            ));
        }
        Self::wavelet_unguarded(depth, exponent)
    }

    /// Wavelet map requiring only that the solver grid resolves the basis.
    pub fn wavelet_unguarded(depth: u32, exponent: u32) -> Result<Self> {
        if depth > exponent {
            return Err(Error::config(
                "J_max",
                format!("wavelet depth {depth} exceeds the solver exponent {exponent}"),
            ));
        }
        Ok(Parameterization {
            kind: ParamKind::Wavelet { depth },
            exponent,
            trig_table: Vec::new(),
        })
    }

    /// Trigonometric map; frequencies must stay below the grid's Nyquist limit.
    pub fn fourier(k_max: usize, exponent: u32) -> Result<Self> {
        if 2 * k_max >= 1usize << exponent {
            return Err(Error::config(
                "K_max",
                format!("K_max = {k_max} is not below half the solver grid side {}", 1usize << exponent),
            ));
        }
        Ok(Parameterization {
            kind: ParamKind::Fourier { k_max },
            exponent,
            trig_table: TrigBasis::new(k_max).factor_table(exponent),
        })
    }

    pub fn kind(&self) -> ParamKind {
        self.kind
    }

    pub fn exponent(&self) -> u32 {
        self.exponent
    }

    pub fn len(&self) -> usize {
        match self.kind {
            ParamKind::Wavelet { depth } => 1usize << (2 * depth),
            ParamKind::Fourier { k_max } => TrigBasis::new(k_max).len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn check_len(&self, coeffs: &[f64]) -> Result<()> {
        if coeffs.len() != self.len() {
            return Err(Error::invalid(format!(
                "expected {} coefficients, got {}",
                self.len(),
                coeffs.len()
            )));
        }
        Ok(())
    }

    /// One row per coefficient: `l,j,m,k,n,value` for wavelets (blank
    /// indices on the mean `l = 0`) and `l,a,b,value` for trigonometric
    /// products `f_a(x) f_b(y)`.
    pub fn write_coefficients_csv(&self, values: &[f64], w: impl std::io::Write) -> Result<()> {
        self.check_len(values)?;
        let mut out = csv::Writer::from_writer(w);
        match self.kind {
            ParamKind::Wavelet { .. } => {
                out.write_record(["l", "j", "m", "k", "n", "value"])?;
                out.write_record(["0", "", "", "", "", &values[0].to_string()])?;
                for (l, v) in values.iter().enumerate().skip(1) {
                    let (j, m, k, n) = inverse_linear_index_2d(l)?;
                    out.write_record([l.to_string(), j.to_string(), m.to_string(), k.to_string(), n.to_string(), v.to_string()])?;
                }
            }
            ParamKind::Fourier { k_max } => {
                let basis = TrigBasis::new(k_max);
                out.write_record(["l", "a", "b", "value"])?;
                for (l, v) in values.iter().enumerate() {
                    let (a, b) = basis.split(l);
                    out.write_record([l.to_string(), a.to_string(), b.to_string(), v.to_string()])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Log-permeability on the solver grid.
    pub fn to_field(&self, coeffs: &[f64]) -> Result<GridField> {
        self.check_len(coeffs)?;
        match self.kind {
            ParamKind::Wavelet { depth } => {
                let d = WaveletDecomp2D::from_coeffs(depth, coeffs.to_vec())?;
                iwt2d(&d).prolong(self.exponent)
            }
            ParamKind::Fourier { k_max } => Ok(TrigBasis::new(k_max).synthesize(coeffs, self.exponent)),
        }
    }

    /// Basis function `l` at the centre of solver cell `(k, n)`.
    fn basis_at_cell(&self, l: &BasisIndex, k: usize, n: usize) -> f64 {
        match *l {
            BasisIndex::Wavelet { j, m, kk, nn } => {
                let h = 1.0 / (1u64 << self.exponent) as f64;
                psi_2d(j, m, kk, nn, (k as f64 + 0.5) * h, (n as f64 + 0.5) * h)
            }
            BasisIndex::Scale => 1.0,
            BasisIndex::Trig { a, b } => self.trig_table[a][k] * self.trig_table[b][n],
        }
    }

    fn basis_index(&self, l: usize) -> BasisIndex {
        match self.kind {
            ParamKind::Wavelet { .. } => {
                if l == 0 {
                    BasisIndex::Scale
                } else {
                    let (j, m, kk, nn) = inverse_linear_index_2d(l).expect("index below 4^depth");
                    BasisIndex::Wavelet { j, m, kk, nn }
                }
            }
            ParamKind::Fourier { k_max } => {
                let (a, b) = TrigBasis::new(k_max).split(l);
                BasisIndex::Trig { a, b }
            }
        }
    }
}

enum BasisIndex {
    Scale,
    Wavelet { j: u32, m: usize, kk: usize, nn: usize },
    Trig { a: usize, b: usize },
}

/// How the adjoint product field is projected onto the basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMethod {
    /// One full-domain quadrature per basis function ("method 1").
    Basiswise,
    /// One fast transform of the product field ("method 2").
    Transform,
}

impl GradMethod {
    pub fn number(self) -> u32 {
        match self {
            GradMethod::Basiswise => 1,
            GradMethod::Transform => 2,
        }
    }

    pub fn from_number(n: u32) -> Result<Self> {
        match n {
            1 => Ok(GradMethod::Basiswise),
            2 => Ok(GradMethod::Transform),
            _ => Err(Error::config("method", format!("method must be 1 or 2, got {n}"))),
        }
    }
}

/// Work counters shared by every evaluation on one context.
#[derive(Debug, Default)]
pub struct Counters {
    pde_solves: AtomicU64,
    factorizations: AtomicU64,
    transforms: AtomicU64,
    quadratures: AtomicU64,
    gradients: AtomicU64,
    solve_ns: AtomicU64,
    projection_ns: AtomicU64,
}

/// Point-in-time copy of [`Counters`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CounterSnapshot {
    pub pde_solves: u64,
    pub factorizations: u64,
    pub transforms: u64,
    pub quadratures: u64,
    pub gradients: u64,
    /// Time spent assembling, factoring and solving.
    pub solve_ns: u64,
    /// Time spent projecting the product field onto the basis.
    pub projection_ns: u64,
}

impl CounterSnapshot {
    pub fn since(&self, earlier: &CounterSnapshot) -> CounterSnapshot {
        CounterSnapshot {
            pde_solves: self.pde_solves - earlier.pde_solves,
            factorizations: self.factorizations - earlier.factorizations,
            transforms: self.transforms - earlier.transforms,
            quadratures: self.quadratures - earlier.quadratures,
            gradients: self.gradients - earlier.gradients,
            solve_ns: self.solve_ns - earlier.solve_ns,
            projection_ns: self.projection_ns - earlier.projection_ns,
        }
    }
}

impl Counters {
    pub fn snapshot(&self) -> CounterSnapshot {
        let ld = |a: &AtomicU64| a.load(Ordering::Relaxed);
        CounterSnapshot {
            pde_solves: ld(&self.pde_solves),
            factorizations: ld(&self.factorizations),
            transforms: ld(&self.transforms),
            quadratures: ld(&self.quadratures),
            gradients: ld(&self.gradients),
            solve_ns: ld(&self.solve_ns),
            projection_ns: ld(&self.projection_ns),
        }
    }

    fn add(a: &AtomicU64, v: u64) {
        a.fetch_add(v, Ordering::Relaxed);
    }

    fn add_time(a: &AtomicU64, start: Instant) {
        Self::add(a, start.elapsed().as_nanos() as u64);
    }
}

/// Result of one forward solve.
#[derive(Debug, Clone)]
pub struct ForwardState {
    pub system: StiffnessSystem,
    pub pressure: NodalField,
    /// `y - observe(p)`.
    pub residual: Vec<f64>,
    pub phi: f64,
}

/// Problem template, data and parameterization. Immutable apart from its
/// atomic counters, so it can be shared across threads.
#[derive(Debug)]
pub struct MisfitContext {
    problem: EllipticProblem,
    observations: ObservationSet,
    param: Parameterization,
    solver: SolverKind,
    counters: Counters,
}

impl MisfitContext {
    pub fn new(problem: EllipticProblem, observations: ObservationSet, param: Parameterization) -> Result<Self> {
        if problem.exponent() != param.exponent() {
            return Err(Error::config(
                "N_solver",
                format!(
                    "problem exponent {} differs from the parameterization's {}",
                    problem.exponent(),
                    param.exponent()
                ),
            ));
        }
        Ok(MisfitContext {
            problem,
            observations,
            param,
            solver: SolverKind::Auto,
            counters: Counters::default(),
        })
    }

    pub fn with_solver(mut self, solver: SolverKind) -> Self {
        self.solver = solver;
        self
    }

    pub fn problem(&self) -> &EllipticProblem {
        &self.problem
    }

    pub fn observations(&self) -> &ObservationSet {
        &self.observations
    }

    pub fn param(&self) -> &Parameterization {
        &self.param
    }

    pub fn counters(&self) -> CounterSnapshot {
        self.counters.snapshot()
    }

    /// Same setup with different data; counters start from zero.
    pub fn with_observations(&self, observations: ObservationSet) -> MisfitContext {
        MisfitContext {
            problem: self.problem.clone(),
            observations,
            param: self.param.clone(),
            solver: self.solver,
            counters: Counters::default(),
        }
    }

    /// Forward solve at `coeffs`; counts as one PDE solve.
    pub fn forward(&self, coeffs: &[f64]) -> Result<ForwardState> {
        let u = self.param.to_field(coeffs)?;
        let start = Instant::now();
        let system = StiffnessSystem::assemble(&u, self.problem.boundary(), self.solver)?;
        Counters::add(&self.counters.factorizations, 1);
        let problem = self.problem.with_log_perm(u)?;
        let pressure = system.solve_problem(&problem)?;
        Counters::add(&self.counters.pde_solves, 1);
        Counters::add_time(&self.counters.solve_ns, start);
        let predicted = crate::pde::observe(&pressure, self.observations.points())?;
        let residual: Vec<f64> = self
            .observations
            .values()
            .iter()
            .zip(&predicted)
            .map(|(y, p)| y - p)
            .collect();
        let phi = misfit_from_residual(&residual, self.observations.gamma());
        Ok(ForwardState {
            system,
            pressure,
            residual,
            phi,
        })
    }

    /// `Phi = |y - observe(p)|^2 / (2 gamma^2)`.
    pub fn misfit(&self, coeffs: &[f64]) -> Result<f64> {
        Ok(self.forward(coeffs)?.phi)
    }

    /// Adjoint field for the state's residual; one PDE solve.
    pub fn adjoint(&self, state: &ForwardState) -> Result<NodalField> {
        let g2 = self.observations.gamma().powi(2);
        let weights: Vec<f64> = state.residual.iter().map(|r| -r / g2).collect();
        self.adjoint_with_weights(state, &weights)
    }

    /// Adjoint solve for arbitrary Dirac weights at the observation points,
    /// reusing the state's factorization.
    pub fn adjoint_with_weights(&self, state: &ForwardState, weights: &[f64]) -> Result<NodalField> {
        let start = Instant::now();
        let w = state.system.solve_dirac(weights, self.observations.points())?;
        Counters::add(&self.counters.pde_solves, 1);
        Counters::add_time(&self.counters.solve_ns, start);
        Ok(w)
    }

    /// `e^u grad p . grad w` with both gradients taken at cell centres.
    pub fn integrand_from(&self, state: &ForwardState, adjoint: &NodalField) -> GridField {
        let gp = gradient_field(&state.pressure);
        let gw = gradient_field(adjoint);
        let mut out = GridField::zeros(self.param.exponent());
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            *v = state.system.theta()[i]
                * (gp.dx.values()[i] * gw.dx.values()[i] + gp.dy.values()[i] * gw.dy.values()[i]);
        }
        out
    }

    /// Product field of the forward and adjoint solutions at `coeffs`.
    pub fn integrand(&self, coeffs: &[f64]) -> Result<GridField> {
        let state = self.forward(coeffs)?;
        let w = self.adjoint(&state)?;
        Ok(self.integrand_from(&state, &w))
    }

    /// Misfit value and gradient.
    pub fn misfit_and_gradient(&self, coeffs: &[f64], method: GradMethod) -> Result<(f64, Vec<f64>)> {
        let state = self.forward(coeffs)?;
        let w = self.adjoint(&state)?;
        let g = self.project(&state, &w, method)?;
        Counters::add(&self.counters.gradients, 1);
        Ok((state.phi, g))
    }

    pub fn grad_misfit(&self, coeffs: &[f64], method: GradMethod) -> Result<Vec<f64>> {
        Ok(self.misfit_and_gradient(coeffs, method)?.1)
    }

    pub fn grad_misfit_method1(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.grad_misfit(coeffs, GradMethod::Basiswise)
    }

    pub fn grad_misfit_method2(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        self.grad_misfit(coeffs, GradMethod::Transform)
    }

    /// Gradient from a solved forward/adjoint pair.
    pub fn project(&self, state: &ForwardState, adjoint: &NodalField, method: GradMethod) -> Result<Vec<f64>> {
        let start = Instant::now();
        let g = match method {
            GradMethod::Basiswise => self.project_basiswise(state, adjoint),
            GradMethod::Transform => self.project_transform(state, adjoint),
        };
        Counters::add_time(&self.counters.projection_ns, start);
        Ok(g)
    }

    /// Entry `l` is `-sum_c b_l(centre_c) int_c e^u grad p . grad w`, each
    /// a separate pass over every solver cell.
    fn project_basiswise(&self, state: &ForwardState, w: &NodalField) -> Vec<f64> {
        let side = 1usize << self.param.exponent();
        let p = &state.pressure;
        let mut out = Vec::with_capacity(self.param.len());
        for l in 0..self.param.len() {
            let idx = self.param.basis_index(l);
            let mut acc = 0.0;
            for k in 0..side {
                for n in 0..side {
                    let b = self.param.basis_at_cell(&idx, k, n);
                    acc += b * state.system.cell_energy(p, w, k, n);
                }
            }
            out.push(-acc);
            Counters::add(&self.counters.quadratures, 1);
        }
        out
    }

    fn project_transform(&self, state: &ForwardState, w: &NodalField) -> Vec<f64> {
        let field = self.integrand_from(state, w);
        Counters::add(&self.counters.transforms, 1);
        match self.param.kind() {
            ParamKind::Wavelet { depth } => {
                let mut ops = 0;
                // Orthonormal coefficients on the unit square are the
                // integrals against each basis function.
                let d = fwt2d_counted(&field, &mut ops);
                d.coeffs()[..1usize << (2 * depth)].iter().map(|c| -c).collect()
            }
            ParamKind::Fourier { k_max } => trig_moments_fft(&field, k_max).into_iter().map(|c| -c).collect(),
        }
    }
}

/// `sum r_i^2 / (2 gamma^2)`.
pub fn misfit_from_residual(residual: &[f64], gamma: f64) -> f64 {
    residual.iter().map(|r| r * r).sum::<f64>() / (2.0 * gamma * gamma)
}

/// Rectangle-rule moments `h^2 sum f[k][n] b(k h, n h)` of a cell field
/// against every trigonometric product, from one 2D FFT.
pub fn trig_moments_fft(field: &GridField, k_max: usize) -> Vec<f64> {
    let side = field.side();
    let mut data: Vec<Complex<f64>> = field.values().iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(side);
    for row in data.chunks_exact_mut(side) {
        fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); side];
    for n in 0..side {
        for k in 0..side {
            column[k] = data[k * side + n];
        }
        fft.process(&mut column);
        for k in 0..side {
            data[k * side + n] = column[k];
        }
    }
    let h2 = field.cell_size().powi(2);
    // F[p][q] = sum f e^{-2 pi i (p k + q n)/S}:
    // C(p, q) = sum f cos(..) = Re F, S(p, q) = sum f sin(..) = -Im F.
    let at = |p: usize, q: isize| {
        let q = q.rem_euclid(side as isize) as usize;
        let v = data[p * side + q];
        (h2 * v.re, -h2 * v.im)
    };
    let basis = TrigBasis::new(k_max);
    let mut out = Vec::with_capacity(basis.len());
    for l in 0..basis.len() {
        let (a, b) = basis.split(l);
        let (p, q) = (TrigBasis::frequency(a), TrigBasis::frequency(b) as isize);
        let (cp, sp) = at(p, q);
        let (cm, sm) = at(p, -q);
        // The constant factor is cos at frequency zero.
        let x_cos = a == 0 || a % 2 == 1;
        let y_cos = b == 0 || b % 2 == 1;
        let v = match (x_cos, y_cos) {
            (true, true) => 0.5 * (cp + cm),
            (true, false) => 0.5 * (sp - sm),
            (false, true) => 0.5 * (sp + sm),
            (false, false) => 0.5 * (cm - cp),
        };
        out.push(v);
    }
    out
}

/// Diagonal quadratic penalty `(1/2) sum_l weights_l a_l^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPenalty {
    weights: Vec<f64>,
}

impl QuadraticPenalty {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("penalty weights must be finite and non-negative"));
        }
        Ok(QuadraticPenalty { weights })
    }

    pub fn zero(len: usize) -> Self {
        QuadraticPenalty { weights: vec![0.0; len] }
    }

    /// Cameron-Martin penalty `kappa (w0^2 + sum_j 4^{js} |w_j|^2)`.
    pub fn wavelet(depth: u32, s: f64, kappa: f64) -> Result<Self> {
        let mut weights = vec![kappa; 1usize << (2 * depth)];
        for j in 0..depth {
            let wj = kappa * cm_level_weight(j, s);
            for w in &mut weights[1usize << (2 * j)..1usize << (2 * (j + 1))] {
                *w = wj;
            }
        }
        QuadraticPenalty::new(weights)
    }

    /// `kappa a_l^2 / sigma_l^2` per trigonometric product, weight `kappa`
    /// on the constant.
    pub fn fourier(spec: &TrigPriorSpec, kappa: f64) -> Result<Self> {
        spec.validate()?;
        let basis = TrigBasis::new(spec.k_max);
        let weights = basis
            .prior_std(spec)
            .into_iter()
            .map(|sd| sd.map_or(kappa, |sd| kappa / (sd * sd)))
            .collect();
        QuadraticPenalty::new(weights)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `sqrt(sum weights_l a_l^2)`.
    pub fn norm(&self, coeffs: &[f64]) -> f64 {
        self.weights.iter().zip(coeffs).map(|(w, a)| w * a * a).sum::<f64>().sqrt()
    }

    pub fn value(&self, coeffs: &[f64]) -> f64 {
        0.5 * self.norm(coeffs).powi(2)
    }

    pub fn gradient(&self, coeffs: &[f64]) -> Vec<f64> {
        self.weights.iter().zip(coeffs).map(|(w, a)| w * a).collect()
    }
}

/// One objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// `I = Phi + penalty`.
    pub value: f64,
    pub phi: f64,
    /// Norm of the coefficients in the penalty geometry.
    pub norm: f64,
}

/// `I(a) = Phi(a) + (1/2) sum_l weights_l a_l^2` with the chosen gradient method.
#[derive(Debug)]
pub struct MapObjective<'a> {
    pub ctx: &'a MisfitContext,
    pub penalty: QuadraticPenalty,
    pub method: GradMethod,
}

impl<'a> MapObjective<'a> {
    pub fn new(ctx: &'a MisfitContext, penalty: QuadraticPenalty, method: GradMethod) -> Result<Self> {
        if penalty.weights().len() != ctx.param().len() {
            return Err(Error::invalid(format!(
                "penalty has {} weights for {} coefficients",
                penalty.weights().len(),
                ctx.param().len()
            )));
        }
        Ok(MapObjective { ctx, penalty, method })
    }

    pub fn evaluate(&self, coeffs: &[f64]) -> Result<Evaluation> {
        let phi = self.ctx.misfit(coeffs)?;
        Ok(self.assemble(phi, coeffs))
    }

    pub fn evaluate_with_gradient(&self, coeffs: &[f64]) -> Result<(Evaluation, Vec<f64>)> {
        let (phi, mut g) = self.ctx.misfit_and_gradient(coeffs, self.method)?;
        for (gi, pi) in g.iter_mut().zip(self.penalty.gradient(coeffs)) {
            *gi += pi;
        }
        Ok((self.assemble(phi, coeffs), g))
    }

    fn assemble(&self, phi: f64, coeffs: &[f64]) -> Evaluation {
        let norm = self.penalty.norm(coeffs);
        Evaluation {
            value: phi + 0.5 * norm * norm,
            phi,
            norm,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pde::{BoundarySpec, Source};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_points(count: usize) -> Vec<(f64, f64)> {
        let mut pts = Vec::new();
        for a in 0..count {
            for b in 0..count {
                let step = 0.9 / (count - 1) as f64;
                pts.push((0.05 + a as f64 * step, 0.05 + b as f64 * step));
            }
        }
        pts
    }

    fn context(param: Parameterization, seed: u64) -> MisfitContext {
        let e = param.exponent();
        let source = GridField::from_fn_centers(e, |x, y| {
            let d1 = (x - 0.3).powi(2) + (y - 0.7).powi(2);
            let d2 = (x - 0.75).powi(2) + (y - 0.25).powi(2);
            100.0 * ((-d1 * 40.0).exp() - (-d2 * 40.0).exp())
        });
        let problem = EllipticProblem::new(e, GridField::zeros(e), Source::Field(source), BoundarySpec::groundwater())
            .unwrap();
        let pts = grid_points(7);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = pts.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let obs = ObservationSet::new(pts, values, 0.5).unwrap();
        MisfitContext::new(problem, obs, param).unwrap()
    }

    fn random_coeffs(n: usize, scale: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
    }

    fn fd_directional(ctx: &MisfitContext, a: &[f64], h: &[f64], eps: f64) -> f64 {
        let plus: Vec<f64> = a.iter().zip(h).map(|(x, d)| x + eps * d).collect();
        let minus: Vec<f64> = a.iter().zip(h).map(|(x, d)| x - eps * d).collect();
        (ctx.misfit(&plus).unwrap() - ctx.misfit(&minus).unwrap()) / (2.0 * eps)
    }

    #[test]
    fn guard_and_sizes() {
        assert!(Parameterization::wavelet(4, 5).is_err());
        assert_eq!(Parameterization::wavelet(3, 5).unwrap().len(), 64);
        assert_eq!(Parameterization::fourier(16, 7).unwrap().len(), 1089);
        assert!(Parameterization::fourier(16, 5).is_err());
        assert_eq!(Parameterization::wavelet(5, 7).unwrap().len(), 1024);
    }

    #[test]
    fn hand_computed_misfit() {
        assert_eq!(misfit_from_residual(&[1.0, -2.0], 1.0), 2.5);
        assert_eq!(misfit_from_residual(&[1.0, -2.0], 2.0), 2.5 / 4.0);
    }

    #[test]
    fn wavelet_field_matches_basis_sum() {
        let param = Parameterization::wavelet(2, 4).unwrap();
        let a = random_coeffs(16, 1.0, 1);
        let u = param.to_field(&a).unwrap();
        for k in 0..16 {
            for n in 0..16 {
                let (x, y) = ((k as f64 + 0.5) / 16.0, (n as f64 + 0.5) / 16.0);
                let direct: f64 = (0..16).map(|l| a[l] * crate::wavelet::basis_2d(l, x, y)).sum();
                assert!((u.get(k, n) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_data_give_zero_misfit() {
        let ctx = context(Parameterization::wavelet(2, 4).unwrap(), 2);
        let a = random_coeffs(16, 0.5, 3);
        let state = ctx.forward(&a).unwrap();
        let exact: Vec<f64> = ctx
            .observations()
            .values()
            .iter()
            .zip(&state.residual)
            .map(|(y, r)| y - r)
            .collect();
        let obs = ObservationSet::new(ctx.observations().points().to_vec(), exact, 0.5).unwrap();
        let ctx2 = ctx.with_observations(obs);
        assert!(ctx2.misfit(&a).unwrap() < 1e-20);
        let g = ctx2.grad_misfit_method2(&a).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-9));
        assert!(ctx2.integrand(&a).unwrap().values().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn method1_matches_finite_differences() {
        let ctx = context(Parameterization::wavelet(2, 5).unwrap(), 4);
        let a = random_coeffs(16, 0.5, 5);
        let g = ctx.grad_misfit_method1(&a).unwrap();
        for l in 0..16 {
            let mut e = vec![0.0; 16];
            e[l] = 1.0;
            let fd = fd_directional(&ctx, &a, &e, 1e-5);
            assert!((g[l] - fd).abs() < 1e-6 * fd.abs().max(1e-3), "{l}: {} vs {fd}", g[l]);
        }
    }

    #[test]
    fn fourier_method1_matches_directional_differences() {
        let ctx = context(Parameterization::fourier(2, 4).unwrap(), 6);
        let n = ctx.param().len();
        let a = random_coeffs(n, 0.2, 7);
        let g = ctx.grad_misfit_method1(&a).unwrap();
        for seed in 0..5 {
            let h = random_coeffs(n, 1.0, 100 + seed);
            let fd = fd_directional(&ctx, &a, &h, 1e-5);
            let dot: f64 = g.iter().zip(&h).map(|(x, y)| x * y).sum();
            assert!((dot - fd).abs() < 1e-6 * fd.abs(), "{dot} vs {fd}");
        }
    }

    #[test]
    fn methods_agree_at_refined_grid() {
        let ctx = context(Parameterization::wavelet(2, 5).unwrap(), 8);
        let a = random_coeffs(16, 0.5, 9);
        let g1 = ctx.grad_misfit_method1(&a).unwrap();
        let g2 = ctx.grad_misfit_method2(&a).unwrap();
        let dot: f64 = g1.iter().zip(&g2).map(|(x, y)| x * y).sum();
        let n1 = g1.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n2 = g2.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(dot / (n1 * n2) > 0.999, "cosine {}", dot / (n1 * n2));
    }

    #[test]
    fn coefficient_csv_rows() {
        let mut buf = Vec::new();
        let a: Vec<f64> = (0..16).map(|l| l as f64).collect();
        Parameterization::wavelet(2, 4).unwrap().write_coefficients_csv(&a, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 17);
        assert_eq!(lines[1], "0,,,,,0");
        assert_eq!(lines[12], "11,1,1,1,1,11");
        let mut buf = Vec::new();
        Parameterization::fourier(1, 3).unwrap().write_coefficients_csv(&[0.0; 9], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().nth(6), Some("5,1,2,0"));
    }

    #[test]
    fn solve_counts() {
        let ctx = context(Parameterization::wavelet(2, 4).unwrap(), 10);
        let a = vec![0.0; 16];
        let before = ctx.counters();
        ctx.grad_misfit_method2(&a).unwrap();
        let d = ctx.counters().since(&before);
        assert_eq!((d.pde_solves, d.transforms, d.quadratures), (2, 1, 0));
        let before = ctx.counters();
        ctx.grad_misfit_method1(&a).unwrap();
        let d = ctx.counters().since(&before);
        assert_eq!((d.pde_solves, d.transforms, d.quadratures), (2, 0, 16));
    }

    #[test]
    fn adjoint_linear_in_weights() {
        let ctx = context(Parameterization::wavelet(1, 4).unwrap(), 11);
        let a = random_coeffs(4, 0.3, 12);
        let state = ctx.forward(&a).unwrap();
        let r: Vec<f64> = state.residual.iter().map(|r| -r).collect();
        let r2: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        let w1 = ctx.adjoint_with_weights(&state, &r).unwrap();
        let w2 = ctx.adjoint_with_weights(&state, &r2).unwrap();
        let g1 = ctx.project(&state, &w1, GradMethod::Basiswise).unwrap();
        let g2 = ctx.project(&state, &w2, GradMethod::Basiswise).unwrap();
        for (x, y) in g1.iter().zip(&g2) {
            assert!((2.0 * x - y).abs() < 1e-12 * y.abs().max(1e-12));
        }
    }

    #[test]
    fn fft_moments_match_direct_rectangle_rule() {
        let f = GridField::from_fn_centers(4, |x, y| (x * 7.0).sin() + x * y * y - (y * 2.0).cos());
        let k_max = 3;
        let moments = trig_moments_fft(&f, k_max);
        let basis = TrigBasis::new(k_max);
        for (l, m) in moments.iter().enumerate() {
            let mut direct = 0.0;
            for k in 0..16 {
                for n in 0..16 {
                    direct += f.get(k, n) * basis.eval(l, k as f64 / 16.0, n as f64 / 16.0) / 256.0;
                }
            }
            assert!((m - direct).abs() < 1e-12, "{l}: {m} vs {direct}");
        }
    }

    #[test]
    fn objective_at_zero_is_misfit_and_penalty_monotone_in_s() {
        let ctx = context(Parameterization::wavelet(2, 4).unwrap(), 13);
        let zero = vec![0.0; 16];
        let obj = MapObjective::new(&ctx, QuadraticPenalty::wavelet(2, 1.5, 1.0).unwrap(), GradMethod::Basiswise)
            .unwrap();
        let ev = obj.evaluate(&zero).unwrap();
        assert_eq!(ev.value, ctx.misfit(&zero).unwrap());
        let a = random_coeffs(16, 1.0, 14);
        let mut last = 0.0;
        for s in [0.5, 1.0, 1.5, 2.0] {
            let v = QuadraticPenalty::wavelet(2, s, 1.0).unwrap().value(&a);
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn penalty_matches_cm_norm() {
        let a = random_coeffs(64, 1.0, 15);
        let d = WaveletDecomp2D::from_coeffs(3, a.clone()).unwrap();
        let pen = QuadraticPenalty::wavelet(3, 1.5, 2.0).unwrap();
        let cm = crate::besov::cm_norm(&d, 1.5);
        assert!((pen.norm(&a) - (2.0f64).sqrt() * cm).abs() < 1e-10 * cm);
    }

    #[test]
    fn objective_gradient_matches_differences() {
        let ctx = context(Parameterization::wavelet(2, 4).unwrap(), 16);
        let obj = MapObjective::new(&ctx, QuadraticPenalty::wavelet(2, 1.5, 1.0).unwrap(), GradMethod::Basiswise)
            .unwrap();
        let a = random_coeffs(16, 0.4, 17);
        let (_, g) = obj.evaluate_with_gradient(&a).unwrap();
        for seed in 0..4 {
            let h = random_coeffs(16, 1.0, 200 + seed);
            let eps = 1e-5;
            let plus: Vec<f64> = a.iter().zip(&h).map(|(x, d)| x + eps * d).collect();
            let minus: Vec<f64> = a.iter().zip(&h).map(|(x, d)| x - eps * d).collect();
            let fd = (obj.evaluate(&plus).unwrap().value - obj.evaluate(&minus).unwrap().value) / (2.0 * eps);
            let dot: f64 = g.iter().zip(&h).map(|(x, y)| x * y).sum();
            assert!((dot - fd).abs() < 1e-6 * fd.abs(), "{dot} vs {fd}");
        }
    }
}
