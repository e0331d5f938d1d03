//! MAP optimizers: gradient descent with a halving step rule for the smooth
//! objective, FISTA with weighted soft-thresholding for the weighted-l1
//! objective, and an optional limited-memory quasi-Newton method.
//!
//! All optimizers record a [`Trace`] with one row per accepted iterate.

use std::io::Write;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::gradient::{Evaluation, MapObjective};

/// A differentiable objective in coefficient space.
pub trait Objective {
    fn dim(&self) -> usize;
    fn evaluate(&self, x: &[f64]) -> Result<Evaluation>;
    fn evaluate_with_gradient(&self, x: &[f64]) -> Result<(Evaluation, Vec<f64>)>;
}

impl Objective for MapObjective<'_> {
    fn dim(&self) -> usize {
        self.ctx.param().len()
    }

    fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
        MapObjective::evaluate(self, x)
    }

    fn evaluate_with_gradient(&self, x: &[f64]) -> Result<(Evaluation, Vec<f64>)> {
        MapObjective::evaluate_with_gradient(self, x)
    }
}

/// How a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Converged,
    MaxIters,
    TimeBudget,
    /// Every trial step decreased the objective, but none by the required amount.
    BacktrackExhausted,
    /// No trial step decreased the objective at all: the search direction is
    /// not a descent direction.
    NotDescent,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::MaxIters => "max_iters",
            Status::TimeBudget => "time_budget",
            Status::BacktrackExhausted => "backtrack_exhausted",
            Status::NotDescent => "not_descent",
        }
    }

    /// A run that stopped because its direction was useless.
    pub fn is_failure(self) -> bool {
        self == Status::NotDescent
    }
}

/// One accepted iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    /// Seconds since the run started. Kept apart from the deterministic columns.
    pub time_s: f64,
    pub value: f64,
    pub phi: f64,
    pub norm: f64,
    pub grad_norm: f64,
    /// Halvings used to reach this iterate from the previous one.
    pub backtracks: usize,
    /// Objective at every trial step tried before acceptance, in order.
    /// Not written to CSV.
    pub trials: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Header of the norm column, e.g. `cm_norm` or `besov1_norm`.
    pub norm_label: String,
    pub rows: Vec<TraceRow>,
    /// Describes the event that ended the run, if it was not a clean stop.
    pub event: Option<String>,
}

impl Trace {
    pub fn new(norm_label: impl Into<String>) -> Self {
        Trace {
            norm_label: norm_label.into(),
            rows: Vec::new(),
            event: None,
        }
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Columns `iter,time_s,I,Phi,<norm>,grad_norm,backtracks,event`. The
    /// event column is empty except on the row where a run ended abnormally.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        self.write_csv_with(w, true)
    }

    /// As [`Trace::write_csv`], optionally leaving out the wall-clock column.
    pub fn write_csv_with(&self, w: impl Write, with_time: bool) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["iter"];
        if with_time {
            header.push("time_s");
        }
        header.extend(["I", "Phi", &self.norm_label, "grad_norm", "backtracks", "event"]);
        out.write_record(&header)?;
        let last = self.rows.len().saturating_sub(1);
        for (i, r) in self.rows.iter().enumerate() {
            let mut rec = vec![r.iter.to_string()];
            if with_time {
                rec.push(r.time_s.to_string());
            }
            rec.extend([
                r.value.to_string(),
                r.phi.to_string(),
                r.norm.to_string(),
                r.grad_norm.to_string(),
                r.backtracks.to_string(),
                if i == last { self.event.clone().unwrap_or_default() } else { String::new() },
            ]);
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub trace: Trace,
    pub status: Status,
}

impl OptimResult {
    pub fn final_value(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |r| r.value)
    }

    pub fn iterations(&self) -> usize {
        self.trace.last().map_or(0, |r| r.iter)
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_start(dim: usize, x0: &[f64]) -> Result<()> {
    if x0.len() != dim {
        return Err(Error::invalid(format!("start point has {} entries, objective has {dim}", x0.len())));
    }
    Ok(())
}

struct Clock {
    start: Instant,
    budget: Option<f64>,
}

impl Clock {
    fn new(budget: Option<f64>) -> Self {
        Clock { start: Instant::now(), budget }
    }

    fn elapsed(&self) -> f64 {
        self.start.elapsed().as_secs_f64()
    }

    fn expired(&self) -> bool {
        self.budget.is_some_and(|b| self.elapsed() >= b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdConfig {
    /// Base step; trial steps are `alpha / 2^N`.
    pub alpha: f64,
    pub max_backtracks: usize,
    pub max_iters: usize,
    /// Stop once `|grad I| <= grad_tol`.
    pub grad_tol: f64,
    /// Wall-clock budget in seconds.
    pub time_budget: Option<f64>,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig {
            alpha: 1e-2,
            max_backtracks: 40,
            max_iters: 1000,
            grad_tol: 1e-8,
            time_budget: None,
        }
    }
}

impl GdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::config("alpha", "must be positive and finite"));
        }
        if self.grad_tol < 0.0 {
            return Err(Error::config("grad_tol", "must be non-negative"));
        }
        Ok(())
    }
}

/// The acceptance test of the halving rule: the trial value must lie below
/// `I(u_k) - alpha/2 |grad I(u_k)|`, independently of the trial step.
#[inline]
pub fn gd_accepts(trial: f64, current: f64, alpha: f64, grad_norm: f64) -> bool {
    trial < current - 0.5 * alpha * grad_norm
}

/// Gradient descent `u_{k+1} = u_k - alpha/2^N grad I(u_k)` with `N` the
/// smallest integer in `0..=max_backtracks` passing [`gd_accepts`].
///
/// When no `N` passes, the run stops at `u_k`. The status records whether
/// any trial decreased `I` at all.
pub fn gd_backtracking(obj: &dyn Objective, x0: &[f64], cfg: &GdConfig) -> Result<OptimResult> {
    cfg.validate()?;
    check_start(obj.dim(), x0)?;
    let clock = Clock::new(cfg.time_budget);
    let mut trace = Trace::new("cm_norm");
    let mut x = x0.to_vec();
    let (mut eval, mut grad) = obj.evaluate_with_gradient(&x)?;
    let mut gnorm = norm2(&grad);
    trace.rows.push(row(0, &clock, &eval, gnorm, 0, Vec::new()));
    let mut trial_x = vec![0.0; x.len()];

    let status = loop {
        let iter = trace.rows.len();
        if gnorm <= cfg.grad_tol {
            break Status::Converged;
        }
        if iter > cfg.max_iters {
            break Status::MaxIters;
        }
        if clock.expired() {
            break Status::TimeBudget;
        }
        let mut trials = Vec::new();
        let mut accepted = None;
        for n in 0..=cfg.max_backtracks {
            let step = cfg.alpha / (n as f64).exp2();
            for ((t, xi), gi) in trial_x.iter_mut().zip(&x).zip(&grad) {
                *t = xi - step * gi;
            }
            let value = match obj.evaluate(&trial_x) {
                Ok(e) => e.value,
                Err(Error::NoConvergence { .. }) | Err(Error::Numerical(_)) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            trials.push(value);
            if gd_accepts(value, eval.value, cfg.alpha, gnorm) {
                accepted = Some(n);
                break;
            }
        }
        let Some(n) = accepted else {
            let status = if trials.iter().any(|&v| v < eval.value) {
                Status::BacktrackExhausted
            } else {
                Status::NotDescent
            };
            trace.event = Some(status.as_str().to_string());
            log::info!("gradient descent stopped at iteration {}: {}", iter - 1, status.as_str());
            break status;
        };
        x.copy_from_slice(&trial_x);
        (eval, grad) = obj.evaluate_with_gradient(&x)?;
        gnorm = norm2(&grad);
        trace.rows.push(row(iter, &clock, &eval, gnorm, n, trials));
    };
    Ok(OptimResult { x, trace, status })
}

fn row(iter: usize, clock: &Clock, eval: &Evaluation, grad_norm: f64, backtracks: usize, trials: Vec<f64>) -> TraceRow {
    TraceRow {
        iter,
        time_s: clock.elapsed(),
        value: eval.value,
        phi: eval.phi,
        norm: eval.norm,
        grad_norm,
        backtracks,
        trials,
    }
}

/// Checks every accepted step of a gradient-descent trace against the
/// halving rule, including that all earlier trials of the same iteration
/// were rejected. Returns the first offending iteration.
pub fn replay_gd_trace(trace: &Trace, alpha: f64) -> std::result::Result<(), usize> {
    for pair in trace.rows.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        let ok = gd_accepts(cur.value, prev.value, alpha, prev.grad_norm)
            && cur.trials.len() == cur.backtracks + 1
            && cur.trials[cur.backtracks] == cur.value
            && cur.trials[..cur.backtracks]
                .iter()
                .all(|&t| !gd_accepts(t, prev.value, alpha, prev.grad_norm));
        if !ok {
            return Err(cur.iter);
        }
    }
    Ok(())
}

/// `sign(v) max(|v| - threshold, 0)`, the proximal map of `threshold |.|`.
#[inline]
pub fn soft_threshold(v: f64, threshold: f64) -> f64 {
    if v > threshold {
        v - threshold
    } else if v < -threshold {
        v + threshold
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FistaConfig {
    /// Initial step, an estimate of `1/L` for the smooth part. Shrunk by
    /// `backtrack_factor` until the quadratic upper bound holds.
    pub step: f64,
    pub backtrack_factor: f64,
    /// Per-coefficient weights of the l1 penalty.
    pub weights: Vec<f64>,
    /// Global penalty scale multiplying every weight.
    pub scale: f64,
    pub max_iters: usize,
    /// Stop once `|x_{k+1} - x_k| <= tolerance max(1, |x_k|)`.
    pub tolerance: f64,
    pub time_budget: Option<f64>,
}

impl FistaConfig {
    pub fn new(weights: Vec<f64>, scale: f64) -> Self {
        FistaConfig {
            step: 1.0,
            backtrack_factor: 0.5,
            weights,
            scale,
            max_iters: 500,
            tolerance: 1e-10,
            time_budget: None,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(Error::config("step", "must be positive and finite"));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::config("backtrack_factor", "must lie in (0, 1)"));
        }
        if !(self.scale >= 0.0) || !self.scale.is_finite() {
            return Err(Error::config("scale", "must be non-negative and finite"));
        }
        if self.weights.len() != dim {
            return Err(Error::config("weights", format!("expected {dim} weights, got {}", self.weights.len())));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::config("weights", "must be non-negative and finite"));
        }
        Ok(())
    }

    /// `sum_l weights_l |x_l|`, without the global scale.
    pub fn weighted_l1(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v.abs()).sum()
    }

    fn prox(&self, y: &[f64], grad: &[f64], step: f64) -> Vec<f64> {
        y.iter()
            .zip(grad)
            .zip(&self.weights)
            .map(|((yi, gi), wi)| soft_threshold(yi - step * gi, step * self.scale * wi))
            .collect()
    }
}

/// Smallest step FISTA will try before giving up.
const MIN_STEP: f64 = 1e-300;

/// FISTA on `f(x) + scale sum_l weights_l |x_l|` where `f` is `smooth`'s
/// value. Momentum is reset and the step retried from the last iterate
/// whenever the full objective would increase, so accepted iterates never
/// increase it.
pub fn fista(smooth: &dyn Objective, x0: &[f64], cfg: &FistaConfig) -> Result<OptimResult> {
    check_start(smooth.dim(), x0)?;
    cfg.validate(smooth.dim())?;
    let clock = Clock::new(cfg.time_budget);
    let total = |f: f64, x: &[f64]| f + cfg.scale * cfg.weighted_l1(x);

    let mut x = x0.to_vec();
    let (e0, g0) = smooth.evaluate_with_gradient(&x)?;
    let mut fx = e0.value;
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut step = cfg.step;
    let mut trace = Trace::new("besov1_norm");
    trace.rows.push(fista_row(0, &clock, total(fx, &x), fx, cfg.weighted_l1(&x), &x, &g0, cfg, 0));

    let status = loop {
        let iter = trace.rows.len();
        if iter > cfg.max_iters {
            break Status::MaxIters;
        }
        if clock.expired() {
            break Status::TimeBudget;
        }
        let (ey, gy) = smooth.evaluate_with_gradient(&y)?;
        let fy = ey.value;
        let mut halvings = 0;
        let (x_new, f_new) = loop {
            let p = cfg.prox(&y, &gy, step);
            let fp = smooth.evaluate(&p).map_or(f64::INFINITY, |e| e.value);
            let d: Vec<f64> = p.iter().zip(&y).map(|(a, b)| a - b).collect();
            let bound = fy + d.iter().zip(&gy).map(|(a, b)| a * b).sum::<f64>() + 0.5 / step * d.iter().map(|v| v * v).sum::<f64>();
            if fp <= bound + 1e-12 * fy.abs().max(1.0) {
                break (p, fp);
            }
            step *= cfg.backtrack_factor;
            halvings += 1;
            if step < MIN_STEP {
                return Err(Error::Numerical("FISTA step collapsed below the machine threshold".into()));
            }
        };
        if total(f_new, &x_new) > total(fx, &x) {
            if y == x {
                // A proximal step from the iterate itself that still
                // increases the objective: only rounding is left to gain.
                break Status::Converged;
            }
            t = 1.0;
            y.clone_from(&x);
            continue;
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_new;
        let change = norm2(&x_new.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>());
        let scale = norm2(&x).max(1.0);
        y = x_new.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
        x = x_new;
        fx = f_new;
        t = t_new;
        let g = smooth.evaluate_with_gradient(&x)?.1;
        trace.rows.push(fista_row(iter, &clock, total(fx, &x), fx, cfg.weighted_l1(&x), &x, &g, cfg, halvings));
        if change <= cfg.tolerance * scale {
            break Status::Converged;
        }
    };
    Ok(OptimResult { x, trace, status })
}

/// Norm of the minimal-norm subgradient of the full objective, the natural
/// stationarity measure for the l1 problem.
fn prox_grad_norm(x: &[f64], g: &[f64], cfg: &FistaConfig) -> f64 {
    x.iter()
        .zip(g)
        .zip(&cfg.weights)
        .map(|((xi, gi), wi)| {
            let lam = cfg.scale * wi;
            let v = if *xi != 0.0 {
                gi + lam * xi.signum()
            } else {
                soft_threshold(*gi, lam)
            };
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

#[allow(clippy::too_many_arguments)]
fn fista_row(iter: usize, clock: &Clock, value: f64, phi: f64, norm: f64, x: &[f64], g: &[f64], cfg: &FistaConfig, backtracks: usize) -> TraceRow {
    TraceRow {
        iter,
        time_s: clock.elapsed(),
        value,
        phi,
        norm,
        grad_norm: prox_grad_norm(x, g, cfg),
        backtracks,
        trials: Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    /// Number of stored correction pairs.
    pub memory: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Armijo constant of the sufficient-decrease test.
    pub c1: f64,
    pub max_backtracks: usize,
    pub time_budget: Option<f64>,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iters: 500,
            grad_tol: 1e-8,
            c1: 1e-4,
            max_backtracks: 40,
            time_budget: None,
        }
    }
}

/// Limited-memory BFGS with an Armijo halving line search. Falls back to
/// the steepest-descent direction whenever the two-loop direction is not a
/// descent direction.
pub fn lbfgs(obj: &dyn Objective, x0: &[f64], cfg: &LbfgsConfig) -> Result<OptimResult> {
    check_start(obj.dim(), x0)?;
    if cfg.memory == 0 {
        return Err(Error::config("memory", "must be at least 1"));
    }
    let clock = Clock::new(cfg.time_budget);
    let mut trace = Trace::new("cm_norm");
    let mut x = x0.to_vec();
    let (mut eval, mut grad) = obj.evaluate_with_gradient(&x)?;
    trace.rows.push(row(0, &clock, &eval, norm2(&grad), 0, Vec::new()));
    let mut pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();

    let status = loop {
        let iter = trace.rows.len();
        if norm2(&grad) <= cfg.grad_tol {
            break Status::Converged;
        }
        if iter > cfg.max_iters {
            break Status::MaxIters;
        }
        if clock.expired() {
            break Status::TimeBudget;
        }
        let mut d = two_loop(&grad, &pairs);
        let mut slope: f64 = d.iter().zip(&grad).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            pairs.clear();
            d = grad.iter().map(|g| -g).collect();
            slope = -norm2(&grad).powi(2);
        }
        let mut step = if pairs.is_empty() { 1.0 / norm2(&grad).max(1.0) } else { 1.0 };
        let mut trials = Vec::new();
        let mut accepted = None;
        for n in 0..=cfg.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let value = obj.evaluate(&trial).map_or(f64::INFINITY, |e| e.value);
            trials.push(value);
            if value <= eval.value + cfg.c1 * step * slope {
                accepted = Some((n, trial));
                break;
            }
            step *= 0.5;
        }
        let Some((n, x_new)) = accepted else {
            let status = if trials.iter().any(|&v| v < eval.value) {
                Status::BacktrackExhausted
            } else {
                Status::NotDescent
            };
            trace.event = Some(status.as_str().to_string());
            break status;
        };
        let (e_new, g_new) = obj.evaluate_with_gradient(&x_new)?;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&yv).map(|(a, b)| a * b).sum();
        if sy > 1e-12 * norm2(&s) * norm2(&yv) {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, yv, 1.0 / sy));
        }
        x = x_new;
        eval = e_new;
        grad = g_new;
        trace.rows.push(row(iter, &clock, &eval, norm2(&grad), n, trials));
    };
    Ok(OptimResult { x, trace, status })
}

fn two_loop(grad: &[f64], pairs: &std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut q: Vec<f64> = grad.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `I(x) = 1/2 sum_i d_i (x_i - c_i)^2`.
    struct Quadratic {
        diag: Vec<f64>,
        center: Vec<f64>,
    }

    impl Objective for Quadratic {
        fn dim(&self) -> usize {
            self.diag.len()
        }

        fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
            let value = 0.5 * x.iter().zip(&self.center).zip(&self.diag).map(|((x, c), d)| d * (x - c).powi(2)).sum::<f64>();
            Ok(Evaluation { value, phi: value, norm: norm2(x) })
        }

        fn evaluate_with_gradient(&self, x: &[f64]) -> Result<(Evaluation, Vec<f64>)> {
            let g = x.iter().zip(&self.center).zip(&self.diag).map(|((x, c), d)| d * (x - c)).collect();
            Ok((self.evaluate(x)?, g))
        }
    }

    fn half_norm_sq(n: usize) -> Quadratic {
        Quadratic { diag: vec![1.0; n], center: vec![0.0; n] }
    }

    #[test]
    fn rule_boundary_case_rejects_then_exhausts() {
        // alpha = 1: the right-hand side is 0.5 - 0.5 |e1| = 0, never beaten.
        let cfg = GdConfig { alpha: 1.0, max_iters: 10, ..GdConfig::default() };
        let res = gd_backtracking(&half_norm_sq(2), &[1.0, 0.0], &cfg).unwrap();
        assert_eq!(res.trace.rows.len(), 1);
        assert_eq!(res.status, Status::BacktrackExhausted);
        assert_eq!(res.x, vec![1.0, 0.0]);
    }

    #[test]
    fn rule_accepts_half_step() {
        let cfg = GdConfig { alpha: 0.5, max_iters: 1, ..GdConfig::default() };
        let res = gd_backtracking(&half_norm_sq(2), &[1.0, 0.0], &cfg).unwrap();
        let r1 = &res.trace.rows[1];
        assert_eq!(r1.backtracks, 0);
        assert_eq!(r1.value, 0.125);
        assert_eq!(res.x, vec![0.5, 0.0]);
    }

    #[test]
    fn zero_gradient_returns_start() {
        let res = gd_backtracking(&half_norm_sq(3), &[0.0; 3], &GdConfig::default()).unwrap();
        assert_eq!(res.status, Status::Converged);
        assert_eq!(res.trace.rows.len(), 1);
    }

    #[test]
    fn gd_trace_is_strictly_decreasing_and_replays() {
        let q = Quadratic { diag: vec![3.0, 1.0, 0.2], center: vec![4.0, -2.0, 7.0] };
        let cfg = GdConfig { alpha: 0.3, max_iters: 200, ..GdConfig::default() };
        let res = gd_backtracking(&q, &[0.0; 3], &cfg).unwrap();
        assert!(res.trace.rows.len() > 3);
        for w in res.trace.rows.windows(2) {
            assert!(w[1].value < w[0].value);
        }
        replay_gd_trace(&res.trace, cfg.alpha).unwrap();
    }

    #[test]
    fn replay_detects_forged_rows() {
        let q = Quadratic { diag: vec![2.0, 1.0], center: vec![3.0, 3.0] };
        let cfg = GdConfig { alpha: 0.2, max_iters: 20, ..GdConfig::default() };
        let mut trace = gd_backtracking(&q, &[0.0; 2], &cfg).unwrap().trace;
        trace.rows[2].value = trace.rows[1].value;
        assert_eq!(replay_gd_trace(&trace, cfg.alpha), Err(2));
    }

    /// Reports the negated gradient, so no step ever decreases the objective.
    struct Uphill(Quadratic);

    impl Objective for Uphill {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn evaluate(&self, x: &[f64]) -> Result<Evaluation> {
            self.0.evaluate(x)
        }
        fn evaluate_with_gradient(&self, x: &[f64]) -> Result<(Evaluation, Vec<f64>)> {
            let (e, g) = self.0.evaluate_with_gradient(x)?;
            Ok((e, g.into_iter().map(|v| -v).collect()))
        }
    }

    #[test]
    fn non_descent_direction_is_flagged() {
        let res = gd_backtracking(&Uphill(half_norm_sq(2)), &[1.0, 1.0], &GdConfig::default()).unwrap();
        assert_eq!(res.status, Status::NotDescent);
        assert!(res.status.is_failure());
        assert_eq!(res.trace.event.as_deref(), Some("not_descent"));
    }

    #[test]
    fn invalid_alpha_names_field() {
        let cfg = GdConfig { alpha: 0.0, ..GdConfig::default() };
        match gd_backtracking(&half_norm_sq(1), &[1.0], &cfg) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "alpha"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
        assert_eq!(soft_threshold(-1.0, 1.0), 0.0);
        assert_eq!(soft_threshold(2.5, 0.0), 2.5);
    }

    #[test]
    fn fista_solves_scalar_prox_problem() {
        // 1/2 (w - 3)^2 + |w| has minimiser 2.
        let q = Quadratic { diag: vec![1.0], center: vec![3.0] };
        let res = fista(&q, &[0.0], &FistaConfig::new(vec![1.0], 1.0)).unwrap();
        assert!((res.x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fista_without_penalty_matches_gd_limit() {
        let q = Quadratic { diag: vec![4.0, 1.0, 0.25, 0.5], center: vec![1.0, -2.0, 0.5, 3.0] };
        let mut cfg = FistaConfig::new(vec![0.0; 4], 0.0);
        cfg.max_iters = 5000;
        cfg.tolerance = 1e-14;
        let f = fista(&q, &[0.0; 4], &cfg).unwrap();
        let g = gd_backtracking(&q, &[0.0; 4], &GdConfig { alpha: 0.1, max_iters: 100_000, grad_tol: 1e-12, ..GdConfig::default() }).unwrap();
        for ((a, b), c) in f.x.iter().zip(&g.x).zip(&q.center) {
            assert!((a - c).abs() < 1e-8, "{a} vs {c}");
            // The halving rule stops near the optimum; only compare loosely.
            assert!((a - b).abs() < 1.0);
        }
    }

    #[test]
    fn fista_objective_never_increases() {
        let q = Quadratic { diag: vec![10.0, 0.1, 1.0, 5.0], center: vec![1.0, -2.0, 0.5, -0.1] };
        let mut cfg = FistaConfig::new(vec![0.5, 0.2, 1.0, 0.0], 1.0);
        cfg.step = 10.0;
        let res = fista(&q, &[5.0, 5.0, 5.0, 5.0], &cfg).unwrap();
        for w in res.trace.rows.windows(2) {
            assert!(w[1].value <= w[0].value);
        }
    }

    #[test]
    fn large_penalty_zeroes_details() {
        // Coefficient 0 plays w0 with a unit weight; the details carry
        // weights far above their gradients at zero.
        let q = Quadratic { diag: vec![1.0; 5], center: vec![2.0, 0.1, -0.2, 0.05, 0.3] };
        let res = fista(&q, &[0.0; 5], &FistaConfig::new(vec![0.0, 10.0, 10.0, 10.0, 10.0], 1.0)).unwrap();
        assert!((res.x[0] - 2.0).abs() < 1e-10);
        assert!(res.x[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fista_sparsity_grows_with_scale() {
        let center: Vec<f64> = (0..20).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect();
        let q = Quadratic { diag: (0..20).map(|i| 0.5 + (i % 3) as f64).collect(), center };
        let mut last = 0;
        for scale in [0.1, 0.5, 2.0] {
            let res = fista(&q, &[0.0; 20], &FistaConfig::new(vec![1.0; 20], scale)).unwrap();
            let zeros = res.x.iter().filter(|v| **v == 0.0).count();
            assert!(zeros >= last);
            last = zeros;
        }
        assert!(last > 0);
    }

    #[test]
    fn fista_rejects_bad_weights() {
        let q = half_norm_sq(2);
        assert!(fista(&q, &[0.0; 2], &FistaConfig::new(vec![1.0], 1.0)).is_err());
        assert!(fista(&q, &[0.0; 2], &FistaConfig::new(vec![1.0, -1.0], 1.0)).is_err());
    }

    #[test]
    fn lbfgs_minimises_quadratic() {
        let q = Quadratic { diag: vec![100.0, 1.0, 0.01], center: vec![1.0, 2.0, 3.0] };
        let res = lbfgs(&q, &[0.0; 3], &LbfgsConfig { grad_tol: 1e-10, ..LbfgsConfig::default() }).unwrap();
        assert_eq!(res.status, Status::Converged);
        for (a, c) in res.x.iter().zip(&q.center) {
            assert!((a - c).abs() < 1e-6);
        }
    }

    #[test]
    fn trace_csv_layout() {
        let cfg = GdConfig { alpha: 0.5, max_iters: 2, ..GdConfig::default() };
        let res = gd_backtracking(&half_norm_sq(1), &[1.0], &cfg).unwrap();
        let mut buf = Vec::new();
        res.trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iter,time_s,I,Phi,cm_norm,grad_norm,backtracks,event"));
        assert_eq!(text.lines().count(), res.trace.rows.len() + 1);
        let mut plain = Vec::new();
        res.trace.write_csv_with(&mut plain, false).unwrap();
        assert!(String::from_utf8(plain).unwrap().starts_with("iter,I,Phi,"));
    }
}
