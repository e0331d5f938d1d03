//! The groundwater reconstruction scenario: ground truth, sources, noisy
//! observations, and the MAP runs comparing priors and gradient methods.

use std::cell::Cell;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::besov::l1_weights_2d;
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::gradient::{CounterSnapshot, Evaluation, GradMethod, MapObjective, MisfitContext, Parameterization, QuadraticPenalty};
use crate::grid::GridField;
use crate::optimize::{fista, gd_backtracking, Objective, OptimResult, Status, Trace};
use crate::pde::{observe, solve_forward, BoundarySpec, EllipticProblem, NodalField, ObservationSet, Source};

/// Magnitude below which a coefficient counts as zero.
pub const ZERO_TOL: f64 = 1e-8;

fn inv_log10_e() -> f64 {
    1.0 / std::f64::consts::LOG10_E
}

fn in_ring(x: f64, y: f64) -> bool {
    let r2 = (x - 1.0).powi(2) + y * y;
    x <= 0.85 && 0.55f64.powi(2) < r2 && r2 < 0.65f64.powi(2)
}

fn in_slab(x: f64, y: f64) -> bool {
    0.4375 < x && x < 0.5 && y > 0.625
}

/// Ground-truth log-permeability: a smooth ripple in x, a low-permeability
/// ring arc around (1, 0) and a thin vertical barrier in the upper half.
pub fn truth_value(x: f64, y: f64) -> f64 {
    let c = inv_log10_e();
    let base = 0.5 * c * (4.0 * x).sin();
    let (ring, slab) = (in_ring(x, y), in_slab(x, y));
    debug_assert!(!(ring && slab), "truth regions overlap at ({x}, {y})");
    if slab {
        base - 4.0 * c
    } else if ring {
        base - 2.0 * c
    } else {
        base
    }
}

/// [`truth_value`] at the cell centres of a `2^exponent` grid.
pub fn build_ground_truth(exponent: u32) -> GridField {
    GridField::from_fn_centers(exponent, truth_value)
}

const SOURCE_DISKS: [(f64, f64, f64); 3] = [(0.6, 0.85, -2000.0), (0.2, 0.75, 2000.0), (0.8, 0.2, -2000.0)];
const SOURCE_RADIUS: f64 = 0.1;

/// Sum of the three disk indicators with their strengths.
pub fn source_value(x: f64, y: f64) -> f64 {
    SOURCE_DISKS
        .iter()
        .filter(|(cx, cy, _)| (x - cx).powi(2) + (y - cy).powi(2) < SOURCE_RADIUS * SOURCE_RADIUS)
        .map(|d| d.2)
        .sum()
}

/// Source field with disk membership decided at cell centres.
pub fn build_sources(exponent: u32) -> GridField {
    GridField::from_fn_centers(exponent, source_value)
}

/// Observation points coinciding with a node of the solver mesh.
pub fn aligned_points(points: &[(f64, f64)], exponent: u32) -> Vec<(f64, f64)> {
    let scale = (1u64 << exponent) as f64;
    let on_line = |v: f64| ((v * scale) - (v * scale).round()).abs() < 1e-9;
    points.iter().copied().filter(|&(x, y)| on_line(x) && on_line(y)).collect()
}

/// Observes `truth_pressure` at the configured grid and adds Gaussian noise
/// of standard deviation `gamma` unless noise is disabled.
pub fn build_observations(cfg: &ExperimentConfig, truth_pressure: &NodalField, rng: &mut impl Rng) -> Result<ObservationSet> {
    let points = cfg.observation_points();
    let aligned = aligned_points(&points, truth_pressure.exponent());
    if !aligned.is_empty() {
        log::warn!("{} observation points coincide with solver nodes: {aligned:?}", aligned.len());
    }
    let gamma = cfg.observations.gamma;
    let mut values = observe(truth_pressure, &points)?;
    if cfg.observations.noise {
        for v in &mut values {
            *v += gamma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    ObservationSet::new(points, values, gamma)
}

/// Everything the MAP runs share.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub truth: GridField,
    pub truth_pressure: NodalField,
    /// Template problem; its log-permeability is replaced by each run.
    pub problem: EllipticProblem,
    pub observations: ObservationSet,
}

/// Solves the truth on the solver grid and draws the data from the seed.
pub fn build_scenario(cfg: &ExperimentConfig) -> Result<Scenario> {
    cfg.validate()?;
    let n = cfg.pde.exponent;
    let truth = build_ground_truth(n);
    let problem = EllipticProblem::new(n, GridField::zeros(n), Source::Field(build_sources(n)), BoundarySpec::groundwater())?;
    let truth_pressure = solve_forward(&problem.with_log_perm(truth.clone())?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let observations = build_observations(cfg, &truth_pressure, &mut rng)?;
    Ok(Scenario { truth, truth_pressure, problem, observations })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    Wavelet,
    Fourier,
}

impl PriorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PriorKind::Wavelet => "wavelet",
            PriorKind::Fourier => "fourier",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "wavelet" => Ok(PriorKind::Wavelet),
            "fourier" => Ok(PriorKind::Fourier),
            other => Err(Error::config("prior", format!("unknown prior `{other}` (expected wavelet or fourier)"))),
        }
    }
}

pub fn parameterization(cfg: &ExperimentConfig, prior: PriorKind) -> Result<Parameterization> {
    let n = cfg.pde.exponent;
    match prior {
        PriorKind::Wavelet if cfg.allow_inverse_crime => Parameterization::wavelet_unguarded(cfg.wavelet.depth, n),
        PriorKind::Wavelet => Parameterization::wavelet(cfg.wavelet.depth, n),
        PriorKind::Fourier => Parameterization::fourier(cfg.fourier.k_max, n),
    }
}

pub fn misfit_context(cfg: &ExperimentConfig, scenario: &Scenario, prior: PriorKind) -> Result<MisfitContext> {
    Ok(MisfitContext::new(scenario.problem.clone(), scenario.observations.clone(), parameterization(cfg, prior)?)?
        .with_solver(cfg.solver_kind()?))
}

/// Quadratic penalty of the Gaussian prior of each family.
pub fn penalty(cfg: &ExperimentConfig, prior: PriorKind) -> Result<QuadraticPenalty> {
    match prior {
        PriorKind::Wavelet => QuadraticPenalty::wavelet(cfg.wavelet.depth, cfg.wavelet.s, cfg.wavelet.kappa),
        PriorKind::Fourier => QuadraticPenalty::fourier(&cfg.trig_prior(), cfg.fourier.kappa),
    }
}

/// Wraps an objective and accounts the wall time and PDE solves spent in
/// gradient evaluations.
pub struct TimedObjective<'a> {
    inner: &'a dyn Objective,
    ctx: &'a MisfitContext,
    grad_calls: Cell<u64>,
    grad_ns: Cell<u64>,
    grad_solves: Cell<u64>,
}

impl<'a> TimedObjective<'a> {
    pub fn new(inner: &'a dyn Objective, ctx: &'a MisfitContext) -> Self {
        TimedObjective { inner, ctx, grad_calls: Cell::new(0), grad_ns: Cell::new(0), grad_solves: Cell::new(0) }
    }

    pub fn gradient_calls(&self) -> u64 {
        self.grad_calls.get()
    }

    pub fn gradient_seconds(&self) -> f64 {
        self.grad_ns.get() as f64 * 1e-9
    }

    pub fn gradient_solves(&self) -> u64 {
        self.grad_solves.get()
    }
}

impl Objective for TimedObjective<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        self.inner.evaluate(x)
    }

    fn evaluate_with_gradient(&self, x: &[f64]) -> Result<(Evaluation, Vec<f64>)> {
        let before = self.ctx.counters();
        let start = Instant::now();
        let out = self.inner.evaluate_with_gradient(x);
        self.grad_ns.set(self.grad_ns.get() + start.elapsed().as_nanos() as u64);
        self.grad_calls.set(self.grad_calls.get() + 1);
        let used = self.ctx.counters().since(&before);
        self.grad_solves.set(self.grad_solves.get() + used.pde_solves);
        out
    }
}

/// Outcome of one MAP run. Runs that error keep the message and no result.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub label: String,
    pub prior: PriorKind,
    /// `1` or `2` for the gradient methods, `0` for FISTA runs.
    pub method: u32,
    pub result: std::result::Result<OptimResult, String>,
    pub wall_s: f64,
    pub gradients: u64,
    pub gradient_solves: u64,
    pub counters: CounterSnapshot,
    pub gradient_s: f64,
}

impl RunReport {
    pub fn status(&self) -> Option<Status> {
        self.result.as_ref().ok().map(|r| r.status)
    }

    /// Errors and non-descent stops both count as failures.
    pub fn failed(&self) -> bool {
        self.result.as_ref().map_or(true, |r| r.status.is_failure())
    }

    pub fn final_value(&self) -> f64 {
        self.result.as_ref().map_or(f64::NAN, OptimResult::final_value)
    }

    pub fn trace(&self) -> Option<&Trace> {
        self.result.as_ref().ok().map(|r| &r.trace)
    }

    pub fn coeffs(&self) -> Option<&[f64]> {
        self.result.as_ref().ok().map(|r| r.x.as_slice())
    }

    pub fn per_gradient_s(&self) -> f64 {
        if self.gradients == 0 {
            f64::NAN
        } else {
            self.gradient_s / self.gradients as f64
        }
    }

    fn summary_record(&self) -> Vec<String> {
        let (status, iters, value, phi, norm) = match &self.result {
            Ok(r) => {
                let last = r.trace.last().expect("trace has its start row");
                (r.status.as_str().to_string(), r.iterations(), last.value, last.phi, last.norm)
            }
            Err(e) => (format!("error: {e}"), 0, f64::NAN, f64::NAN, f64::NAN),
        };
        vec![
            self.label.clone(),
            self.prior.as_str().to_string(),
            self.method.to_string(),
            status,
            self.failed().to_string(),
            iters.to_string(),
            value.to_string(),
            phi.to_string(),
            norm.to_string(),
            self.wall_s.to_string(),
            self.gradients.to_string(),
            self.gradient_solves.to_string(),
            self.counters.pde_solves.to_string(),
            self.gradient_s.to_string(),
            (self.counters.solve_ns as f64 * 1e-9).to_string(),
            (self.counters.projection_ns as f64 * 1e-9).to_string(),
            self.per_gradient_s().to_string(),
        ]
    }
}

pub const SUMMARY_COLUMNS: [&str; 17] = [
    "run",
    "prior",
    "method",
    "status",
    "failed",
    "iterations",
    "final_I",
    "final_Phi",
    "final_norm",
    "wall_s",
    "gradients",
    "pde_solves_gradient",
    "pde_solves_total",
    "gradient_s",
    "solve_s",
    "projection_s",
    "per_gradient_s",
];

pub fn write_summary_csv(runs: &[RunReport], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SUMMARY_COLUMNS)?;
    for r in runs {
        out.write_record(r.summary_record())?;
    }
    out.flush()?;
    Ok(())
}

pub fn run_label(prior: PriorKind, method: GradMethod) -> String {
    format!("{}-m{}", prior.as_str(), method.number())
}

/// Gradient-descent MAP run for one prior and gradient method from `x0`
/// (zero when `None`).
pub fn run_map(cfg: &ExperimentConfig, scenario: &Scenario, prior: PriorKind, method: GradMethod, x0: Option<&[f64]>) -> Result<RunReport> {
    let ctx = misfit_context(cfg, scenario, prior)?;
    let objective = MapObjective::new(&ctx, penalty(cfg, prior)?, method)?;
    let timed = TimedObjective::new(&objective, &ctx);
    let start = vec![0.0; ctx.param().len()];
    let x0 = x0.unwrap_or(&start);
    let clock = Instant::now();
    let result = gd_backtracking(&timed, x0, &cfg.gd_config()).map_err(|e| e.to_string());
    if let Err(e) = &result {
        log::warn!("{} failed: {e}", run_label(prior, method));
    }
    Ok(RunReport {
        label: run_label(prior, method),
        prior,
        method: method.number(),
        result,
        wall_s: clock.elapsed().as_secs_f64(),
        gradients: timed.gradient_calls(),
        gradient_solves: timed.gradient_solves(),
        counters: ctx.counters(),
        gradient_s: timed.gradient_seconds(),
    })
}

/// Log-permeability of a run's final coefficients on the solver grid.
pub fn run_field(cfg: &ExperimentConfig, report: &RunReport) -> Result<Option<GridField>> {
    let Some(x) = report.coeffs() else { return Ok(None) };
    Ok(Some(parameterization(cfg, report.prior)?.to_field(x)?))
}

/// Writes `<name>.csv` and, when requested, `<name>.png` with the value
/// range used for its grey levels in `<name>.png.txt`.
pub fn write_field(dir: &Path, name: &str, field: &GridField, png: bool) -> Result<()> {
    field.save(dir.join(format!("{name}.csv")))?;
    if png {
        let (lo, hi) = field.write_png(dir.join(format!("{name}.png")))?;
        fs::write(dir.join(format!("{name}.png.txt")), format!("min = {lo:?}\nmax = {hi:?}\n"))?;
    }
    Ok(())
}

/// Writes the trace CSV and final field of one run into `dir`.
pub fn write_run(cfg: &ExperimentConfig, dir: &Path, report: &RunReport, png: bool) -> Result<()> {
    if let Some(trace) = report.trace() {
        trace.write_csv(std::io::BufWriter::new(fs::File::create(dir.join(format!("trace_{}.csv", report.label)))?))?;
    }
    if let Some(field) = run_field(cfg, report)? {
        write_field(dir, &format!("field_{}", report.label), &field, png)?;
    }
    Ok(())
}

/// `metadata.toml`: the resolved configuration plus notes on the run setup.
pub fn write_metadata(cfg: &ExperimentConfig, scenario: &Scenario, dir: &Path) -> Result<()> {
    let aligned = aligned_points(scenario.observations.points(), cfg.pde.exponent).len();
    let text = format!(
        "# Run metadata\n# The trigonometric prior leaves the constant mode out of its random part;\n\
         # its coefficient is penalised with weight fourier.kappa.\n\
         # observation points coinciding with solver nodes: {aligned}\n\n{}",
        cfg.to_toml()
    );
    fs::write(dir.join("metadata.toml"), text)?;
    Ok(())
}

/// The four prior and gradient-method combinations, each under the
/// configured budget. Outputs go to `out` when given.
pub fn run_comparison(cfg: &ExperimentConfig, scenario: &Scenario, out: Option<&Path>, png: bool) -> Result<Vec<RunReport>> {
    let mut runs = Vec::new();
    for prior in [PriorKind::Wavelet, PriorKind::Fourier] {
        for method in [GradMethod::Basiswise, GradMethod::Transform] {
            log::info!("running {}", run_label(prior, method));
            let report = run_map(cfg, scenario, prior, method, None)?;
            log::info!(
                "{}: {} after {} iterations, I = {:.6e}",
                report.label,
                report.status().map_or("error", Status::as_str),
                report.result.as_ref().map_or(0, OptimResult::iterations),
                report.final_value()
            );
            runs.push(report);
        }
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        for r in &runs {
            write_run(cfg, dir, r, png)?;
        }
        write_summary_csv(&runs, fs::File::create(dir.join("summary.csv"))?)?;
        write_field(dir, "truth", &scenario.truth, png)?;
        write_metadata(cfg, scenario, dir)?;
    }
    Ok(runs)
}

pub fn count_zeros(coeffs: &[f64]) -> usize {
    coeffs.iter().filter(|v| v.abs() < ZERO_TOL).count()
}

/// Weighted-l1 and Gaussian MAP estimates on the same data.
#[derive(Debug, Clone)]
pub struct SparseReport {
    /// FISTA run for the weighted-l1 prior.
    pub l1: RunReport,
    /// Gradient-descent run (method 2) for the Gaussian wavelet prior.
    pub l2: RunReport,
    pub l1_zeros: usize,
    pub l2_zeros: usize,
}

/// FISTA MAP estimate under the weighted-l1 wavelet prior.
pub fn run_l1_map(cfg: &ExperimentConfig, scenario: &Scenario, scale: f64) -> Result<RunReport> {
    let ctx = misfit_context(cfg, scenario, PriorKind::Wavelet)?;
    let smooth = MapObjective::new(&ctx, QuadraticPenalty::zero(ctx.param().len()), GradMethod::Transform)?;
    let timed = TimedObjective::new(&smooth, &ctx);
    let fcfg = cfg.fista_config(l1_weights_2d(cfg.wavelet.depth, cfg.sparse.s), scale);
    let clock = Instant::now();
    let result = fista(&timed, &vec![0.0; ctx.param().len()], &fcfg).map_err(|e| e.to_string());
    Ok(RunReport {
        label: "wavelet-l1".into(),
        prior: PriorKind::Wavelet,
        method: 0,
        result,
        wall_s: clock.elapsed().as_secs_f64(),
        gradients: timed.gradient_calls(),
        gradient_solves: timed.gradient_solves(),
        counters: ctx.counters(),
        gradient_s: timed.gradient_seconds(),
    })
}

/// Runs both sparse and Gaussian wavelet MAP estimates and compares their
/// counts of zero coefficients. Writes sorted coefficient magnitudes to
/// `coefficients.csv` under `out`.
pub fn run_sparse(cfg: &ExperimentConfig, scenario: &Scenario, out: Option<&Path>, png: bool) -> Result<SparseReport> {
    let l1 = run_l1_map(cfg, scenario, cfg.sparse.kappa)?;
    let l2 = run_map(cfg, scenario, PriorKind::Wavelet, GradMethod::Transform, None)?;
    let zeros = |r: &RunReport| r.coeffs().map_or(0, count_zeros);
    let report = SparseReport { l1_zeros: zeros(&l1), l2_zeros: zeros(&l2), l1, l2 };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        write_run(cfg, dir, &report.l1, png)?;
        write_run(cfg, dir, &report.l2, png)?;
        write_sorted_magnitudes(&report, fs::File::create(dir.join("coefficients.csv"))?)?;
        write_summary_csv(&[report.l1.clone(), report.l2.clone()], fs::File::create(dir.join("summary.csv"))?)?;
        fs::write(
            dir.join("zeros.txt"),
            format!("l1_zeros = {}\nl2_zeros = {}\nzero_tol = {ZERO_TOL:e}\n", report.l1_zeros, report.l2_zeros),
        )?;
    }
    Ok(report)
}

fn sorted_magnitudes(coeffs: Option<&[f64]>, len: usize) -> Vec<f64> {
    let mut v: Vec<f64> = coeffs.map_or_else(|| vec![f64::NAN; len], |c| c.iter().map(|x| x.abs()).collect());
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// `rank,l1_abs,l2_abs`: coefficient magnitudes of both estimates in
/// decreasing order, one row per coefficient.
pub fn write_sorted_magnitudes(report: &SparseReport, w: impl Write) -> Result<()> {
    let len = report.l1.coeffs().or(report.l2.coeffs()).map_or(0, <[f64]>::len);
    let a = sorted_magnitudes(report.l1.coeffs(), len);
    let b = sorted_magnitudes(report.l2.coeffs(), len);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["rank", "l1_abs", "l2_abs"])?;
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        out.write_record([i.to_string(), x.to_string(), y.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Per-gradient cost of both methods at one wavelet depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub depth: u32,
    pub params: usize,
    /// Median wall time per gradient, seconds.
    pub method1_s: f64,
    pub method2_s: f64,
    pub method1_solves: f64,
    pub method2_solves: f64,
    /// Basis-function integrals per method-1 gradient.
    pub method1_quadratures: f64,
    pub method2_transforms: f64,
}

impl BenchRow {
    pub fn speedup(&self) -> f64 {
        self.method1_s / self.method2_s
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `repeats` gradients of each method per depth at a fixed random
/// coefficient vector.
pub fn bench(cfg: &ExperimentConfig, scenario: &Scenario, depths: &[u32], repeats: usize) -> Result<Vec<BenchRow>> {
    if repeats == 0 {
        return Err(Error::config("repeats", "must be at least 1"));
    }
    let mut rows = Vec::new();
    for &depth in depths {
        let mut c = cfg.clone();
        c.wavelet.depth = depth;
        let ctx = misfit_context(&c, scenario, PriorKind::Wavelet)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let x: Vec<f64> = (0..ctx.param().len()).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let measure = |method: GradMethod| -> Result<(f64, CounterSnapshot)> {
            let before = ctx.counters();
            let mut times = Vec::with_capacity(repeats);
            for _ in 0..repeats {
                let start = Instant::now();
                ctx.grad_misfit(&x, method)?;
                times.push(start.elapsed().as_secs_f64());
            }
            Ok((median(times), ctx.counters().since(&before)))
        };
        let (m1, c1) = measure(GradMethod::Basiswise)?;
        let (m2, c2) = measure(GradMethod::Transform)?;
        let per = |v: u64| v as f64 / repeats as f64;
        rows.push(BenchRow {
            depth,
            params: ctx.param().len(),
            method1_s: m1,
            method2_s: m2,
            method1_solves: per(c1.pde_solves),
            method2_solves: per(c2.pde_solves),
            method1_quadratures: per(c1.quadratures),
            method2_transforms: per(c2.transforms),
        });
    }
    Ok(rows)
}

pub fn write_bench_csv(rows: &[BenchRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "depth",
        "params",
        "method1_s",
        "method2_s",
        "speedup",
        "method1_solves",
        "method2_solves",
        "method1_quadratures",
        "method2_transforms",
    ])?;
    for r in rows {
        out.write_record([
            r.depth.to_string(),
            r.params.to_string(),
            r.method1_s.to_string(),
            r.method2_s.to_string(),
            r.speedup().to_string(),
            r.method1_solves.to_string(),
            r.method2_solves.to_string(),
            r.method1_quadratures.to_string(),
            r.method2_transforms.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truth_at_hand_evaluated_points() {
        assert_eq!(truth_value(0.0, 0.0), 0.0);
        let c = inv_log10_e();
        let expect = 0.5 * c * 1.8f64.sin() - 4.0 * c;
        assert!((truth_value(0.45, 0.7) - expect).abs() < 1e-14);
        // On the ring arc: (0.4 - 1)^2 + 0^2 = 0.36.
        assert!((truth_value(0.4, 0.0) - (0.5 * c * 1.6f64.sin() - 2.0 * c)).abs() < 1e-14);
    }

    #[test]
    fn truth_regions_are_disjoint_and_bounded() {
        let bound = 4.5 * inv_log10_e();
        for a in 0..=400 {
            for b in 0..=400 {
                let (x, y) = (a as f64 / 400.0, b as f64 / 400.0);
                assert!(!(in_ring(x, y) && in_slab(x, y)));
                assert!(truth_value(x, y).abs() <= bound);
            }
        }
    }

    #[test]
    fn source_values_and_integral() {
        assert_eq!(source_value(0.6, 0.85), -2000.0);
        assert_eq!(source_value(0.2, 0.75), 2000.0);
        assert_eq!(source_value(0.5, 0.5), 0.0);
        let f = build_sources(7);
        let integral = f.values().iter().sum::<f64>() * f.cell_size().powi(2);
        let expect = -20.0 * std::f64::consts::PI;
        assert!(((integral - expect) / expect).abs() < 0.05, "{integral}");
    }

    #[test]
    fn only_the_centre_observation_hits_a_node() {
        let cfg = ExperimentConfig::default();
        let pts = cfg.observation_points();
        // 0.05 2^N is never an integer, but the grid's middle point is a node.
        for n in [5, 7] {
            let hits = aligned_points(&pts, n);
            assert_eq!(hits.len(), 1);
            assert!((hits[0].0 - 0.5).abs() < 1e-15 && (hits[0].1 - 0.5).abs() < 1e-15);
        }
        assert!(aligned_points(&[(0.5, 0.3)], 3).is_empty());
    }

    fn fast_scenario() -> (ExperimentConfig, Scenario) {
        let cfg = ExperimentConfig::fast();
        let s = build_scenario(&cfg).unwrap();
        (cfg, s)
    }

    #[test]
    fn noise_free_data_equal_observed_truth() {
        let (mut cfg, s) = fast_scenario();
        cfg.observations.noise = false;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs = build_observations(&cfg, &s.truth_pressure, &mut rng).unwrap();
        assert_eq!(obs.values(), observe(&s.truth_pressure, obs.points()).unwrap().as_slice());
    }

    #[test]
    fn seeded_data_are_reproducible() {
        let (cfg, a) = fast_scenario();
        let b = build_scenario(&cfg).unwrap();
        assert_eq!(a.observations.values(), b.observations.values());
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(build_scenario(&other).unwrap().observations.values(), a.observations.values());
    }

    #[test]
    fn summary_has_one_row_per_run() {
        let (mut cfg, s) = fast_scenario();
        cfg.gd.max_iters = 2;
        let runs = run_comparison(&cfg, &s, None, false).unwrap();
        assert_eq!(runs.len(), 4);
        let mut buf = Vec::new();
        write_summary_csv(&runs, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(text.lines().next().unwrap(), SUMMARY_COLUMNS.join(","));
        for r in &runs {
            assert_eq!(r.gradient_solves, 2 * r.gradients, "{}", r.label);
        }
    }
}
