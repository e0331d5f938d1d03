//! Experiment configuration: a sectioned `key = value` TOML file.
//!
//! ```toml
//! seed = 7
//! output_dir = "out"
//!
//! [pde]
//! exponent = 7          # solver grid is 2^exponent per side
//! solver = "auto"       # auto | direct | iterative
//!
//! [wavelet]
//! depth = 5             # J_max: 4^depth coefficients
//! s = 1.5
//! kappa = 0.1
//!
//! [fourier]
//! k_max = 16            # (2 k_max + 1)^2 coefficients
//! beta = 2.0
//! alpha = 0.5
//! kappa = 1.0
//!
//! [sparse]
//! s = 0.5
//! kappa = 1.0
//!
//! [observations]
//! per_side = 7
//! lo = 0.05
//! hi = 0.95
//! gamma = 1.0
//! noise = true
//!
//! [gd]
//! alpha = 1e-6        # base step; the stiff mean mode rejects larger values
//! max_iters = 100000
//! max_backtracks = 40
//! grad_tol = 1e-8
//! time_budget = 120.0
//!
//! [fista]
//! step = 1e-4
//! max_iters = 1000000   # the time budget normally ends the run
//! tolerance = 1e-9
//! ```
//!
//! Every key is optional; missing keys take the desk-scale defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimize::{FistaConfig, GdConfig};
use crate::pde::SolverKind;
use crate::prior::TrigPriorSpec;

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "HAARMAP_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Permits solver grids closer to the parameter resolution than the
    /// inverse-crime guard allows.
    pub allow_inverse_crime: bool,
    pub pde: PdeSection,
    pub wavelet: WaveletSection,
    pub fourier: FourierSection,
    pub sparse: SparseSection,
    pub observations: ObservationSection,
    pub gd: GdSection,
    pub fista: FistaSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeSection {
    pub exponent: u32,
    pub solver: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaveletSection {
    pub depth: u32,
    pub s: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FourierSection {
    pub k_max: usize,
    pub beta: f64,
    pub alpha: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SparseSection {
    pub s: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationSection {
    pub per_side: usize,
    pub lo: f64,
    pub hi: f64,
    pub gamma: f64,
    pub noise: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GdSection {
    pub alpha: f64,
    pub max_iters: usize,
    pub max_backtracks: usize,
    pub grad_tol: f64,
    /// Seconds per run; absent means unlimited.
    pub time_budget: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FistaSection {
    pub step: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub time_budget: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 7,
            output_dir: PathBuf::from("out"),
            allow_inverse_crime: false,
            pde: PdeSection::default(),
            wavelet: WaveletSection::default(),
            fourier: FourierSection::default(),
            sparse: SparseSection::default(),
            observations: ObservationSection::default(),
            gd: GdSection::default(),
            fista: FistaSection::default(),
        }
    }
}

impl Default for PdeSection {
    fn default() -> Self {
        PdeSection { exponent: 7, solver: "auto".into() }
    }
}

impl Default for WaveletSection {
    fn default() -> Self {
        WaveletSection { depth: 5, s: 1.5, kappa: 0.1 }
    }
}

impl Default for FourierSection {
    fn default() -> Self {
        FourierSection { k_max: 16, beta: 2.0, alpha: 0.5, kappa: 1.0 }
    }
}

impl Default for SparseSection {
    fn default() -> Self {
        SparseSection { s: 0.5, kappa: 1.0 }
    }
}

impl Default for ObservationSection {
    fn default() -> Self {
        ObservationSection { per_side: 7, lo: 0.05, hi: 0.95, gamma: 1.0, noise: true }
    }
}

impl Default for GdSection {
    fn default() -> Self {
        GdSection {
            alpha: 1e-6,
            max_iters: 100_000,
            max_backtracks: 40,
            grad_tol: 1e-8,
            time_budget: Some(120.0),
        }
    }
}

impl Default for FistaSection {
    fn default() -> Self {
        FistaSection { step: 1e-4, max_iters: 1_000_000, tolerance: 1e-9, time_budget: Some(120.0) }
    }
}

impl ExperimentConfig {
    /// Small profile for quick runs: 32x32 solver grid, 64 wavelet and 81
    /// trigonometric coefficients.
    pub fn fast() -> Self {
        let mut cfg = ExperimentConfig::default();
        cfg.pde.exponent = 5;
        cfg.wavelet.depth = 3;
        cfg.fourier.k_max = 4;
        cfg.gd.time_budget = Some(20.0);
        cfg.fista.time_budget = Some(20.0);
        cfg
    }

    /// `"fast"` or `"desk"`.
    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "fast" => Ok(ExperimentConfig::fast()),
            "desk" => Ok(ExperimentConfig::default()),
            other => Err(Error::config("profile", format!("unknown profile `{other}` (expected fast or desk)"))),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(toml_field(&e), e.message().to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ExperimentConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Fills keys present in `text` on top of `self`.
    pub fn merge_toml(&self, text: &str) -> Result<Self> {
        let mut base = toml::Table::try_from(self).map_err(|e| Error::Format(e.to_string()))?;
        let overlay: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::config(toml_field(&e), e.message().to_string()))?;
        merge_tables(&mut base, overlay);
        let merged = toml::to_string(&base).map_err(|e| Error::Format(e.to_string()))?;
        ExperimentConfig::from_toml(&merged)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Applies the seed from [`SEED_ENV`] when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::config("seed", format!("{SEED_ENV}=`{v}` is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.pde.exponent;
        if !(2..=12).contains(&n) {
            return Err(Error::config("pde.exponent", "must lie in 2..=12"));
        }
        self.solver_kind()?;
        let j = self.wavelet.depth;
        if j == 0 {
            return Err(Error::config("wavelet.depth", "must be at least 1"));
        }
        if !self.allow_inverse_crime && n < j + 2 {
            return Err(Error::config(
                "pde.exponent",
                format!("solver exponent {n} is below wavelet depth {j} + 2; set allow_inverse_crime to override"),
            ));
        }
        if j > n {
            return Err(Error::config("wavelet.depth", "cannot exceed the solver exponent"));
        }
        if !(self.wavelet.s > 0.0) {
            return Err(Error::config("wavelet.s", "must be > 0"));
        }
        if !(self.wavelet.kappa > 0.0) {
            return Err(Error::config("wavelet.kappa", "must be > 0"));
        }
        if self.fourier.k_max == 0 || 2 * self.fourier.k_max >= 1usize << n {
            return Err(Error::config("fourier.k_max", "must satisfy 1 <= k_max and 2 k_max < 2^exponent"));
        }
        if !(self.fourier.beta > 0.0) {
            return Err(Error::config("fourier.beta", "must be > 0"));
        }
        if !(self.fourier.kappa > 0.0) {
            return Err(Error::config("fourier.kappa", "must be > 0"));
        }
        if !(self.sparse.s > 0.0) {
            return Err(Error::config("sparse.s", "must be > 0"));
        }
        if !(self.sparse.kappa >= 0.0) {
            return Err(Error::config("sparse.kappa", "must be >= 0"));
        }
        let o = &self.observations;
        if o.per_side < 2 {
            return Err(Error::config("observations.per_side", "must be at least 2"));
        }
        if !(0.0 < o.lo && o.lo < o.hi && o.hi < 1.0) {
            return Err(Error::config("observations.lo", "need 0 < lo < hi < 1"));
        }
        if !(o.gamma > 0.0) {
            return Err(Error::config("observations.gamma", "must be > 0"));
        }
        if !(self.gd.alpha > 0.0) || !self.gd.alpha.is_finite() {
            return Err(Error::config("gd.alpha", "must be positive and finite"));
        }
        if self.gd.time_budget.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::config("gd.time_budget", "must be > 0"));
        }
        if !(self.fista.step > 0.0) {
            return Err(Error::config("fista.step", "must be > 0"));
        }
        if self.fista.time_budget.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::config("fista.time_budget", "must be > 0"));
        }
        Ok(())
    }

    pub fn solver_kind(&self) -> Result<SolverKind> {
        match self.pde.solver.as_str() {
            "auto" => Ok(SolverKind::Auto),
            "direct" => Ok(SolverKind::Direct),
            "iterative" => Ok(SolverKind::Iterative),
            other => Err(Error::config("pde.solver", format!("unknown solver `{other}`"))),
        }
    }

    pub fn trig_prior(&self) -> TrigPriorSpec {
        TrigPriorSpec {
            mu: 0.0,
            beta: self.fourier.beta,
            alpha: self.fourier.alpha,
            k_max: self.fourier.k_max,
        }
    }

    pub fn gd_config(&self) -> GdConfig {
        GdConfig {
            alpha: self.gd.alpha,
            max_backtracks: self.gd.max_backtracks,
            max_iters: self.gd.max_iters,
            grad_tol: self.gd.grad_tol,
            time_budget: self.gd.time_budget,
        }
    }

    /// FISTA settings for the given penalty weights and scale.
    pub fn fista_config(&self, weights: Vec<f64>, scale: f64) -> FistaConfig {
        let mut cfg = FistaConfig::new(weights, scale);
        cfg.step = self.fista.step;
        cfg.max_iters = self.fista.max_iters;
        cfg.tolerance = self.fista.tolerance;
        cfg.time_budget = self.fista.time_budget;
        cfg
    }

    /// Observation grid points, row by row in x.
    pub fn observation_points(&self) -> Vec<(f64, f64)> {
        let o = &self.observations;
        let last = (o.per_side - 1) as f64;
        // Snapped to 1e-12 so that decimal grids such as 0.05, 0.2, ... come
        // out as the nearest doubles to their decimal values.
        let coord = move |i: usize| ((o.lo + (o.hi - o.lo) * i as f64 / last) * 1e12).round() / 1e12;
        (0..o.per_side)
            .flat_map(|a| (0..o.per_side).map(move |b| (coord(a), coord(b))))
            .collect()
    }
}

fn toml_field(e: &toml::de::Error) -> String {
    // The parser reports unknown keys as "unknown field `x`"; anything else
    // is attributed to the file as a whole.
    let msg = e.message();
    msg.split('`').nth(1).map_or_else(|| "config".to_string(), str::to_string)
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
