use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use haarmap::config::ExperimentConfig;
use haarmap::experiment::{self, PriorKind, RunReport};
use haarmap::gradient::GradMethod;
use haarmap::pde::{solve_forward, EllipticProblem};
use haarmap::prior::{sample_trig_prior_2d, sample_wavelet_prior_2d, WaveletPriorSpec};
use haarmap::wavelet::{fwt2d, iwt2d, WaveletDecomp2D};
use haarmap::{Error, GridField, Result};

/// MAP reconstruction of log-permeability fields under Haar-wavelet and
/// trigonometric priors.
#[derive(Parser, Debug)]
#[command(name = "haarmap", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Base profile: `desk` (128x128 solver grid) or `fast`.
    #[arg(long, global = true, default_value = "desk")]
    profile: String,
    /// TOML configuration file layered over the profile.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Single override such as `gd.alpha=1e-5`; repeatable, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed; takes precedence over the file and HAARMAP_SEED.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (defaults to the configured `output_dir`).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Also write PNG images of every field.
    #[arg(long, global = true)]
    png: bool,
    /// Accept solver grids closer than four times the wavelet resolution.
    #[arg(long, global = true)]
    allow_inverse_crime: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw fields from a prior.
    SamplePrior {
        #[arg(long, default_value = "wavelet")]
        prior: String,
        /// Exponent of the wavelet prior's generalized Gaussian.
        #[arg(long, default_value_t = 2.0)]
        p: f64,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
    /// Solve the groundwater problem for a log-permeability (the ground truth by default).
    Forward {
        #[arg(long)]
        log_perm: Option<PathBuf>,
    },
    /// Haar coefficients of a field file, stored in linear-index order.
    Decompose {
        input: PathBuf,
        output: PathBuf,
        /// Keep only the coarsest levels.
        #[arg(long)]
        levels: Option<u32>,
    },
    /// Field from a coefficient file written by `decompose`.
    Reconstruct { input: PathBuf, output: PathBuf },
    /// Gradient-descent MAP estimate for one prior and gradient method.
    Map {
        #[arg(long, default_value = "wavelet")]
        prior: String,
        #[arg(long, default_value_t = 2)]
        method: u32,
        /// Also write the misfit gradient at the final iterate.
        #[arg(long)]
        dump_gradient: bool,
    },
    /// All four prior and gradient-method combinations.
    Compare,
    /// Weighted-l1 wavelet MAP against the Gaussian one on the same data.
    Sparse,
    /// Per-gradient cost of both gradient methods across wavelet depths.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "3,4,5")]
        jmax: Vec<u32>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
    },
}

/// Profile, then file, then `--set`, then environment, then flags.
fn resolve_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::profile(&c.profile)?;
    if let Some(path) = &c.config {
        cfg = cfg.merge_toml(&fs::read_to_string(path)?)?;
    }
    for item in &c.overrides {
        cfg = cfg.merge_toml(&override_toml(item)?)?;
    }
    cfg.apply_env()?;
    if let Some(seed) = c.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &c.out {
        cfg.output_dir = out.clone();
    }
    cfg.allow_inverse_crime |= c.allow_inverse_crime;
    cfg.validate()?;
    Ok(cfg)
}

/// `key=value` as a TOML line; bare words become strings.
fn override_toml(item: &str) -> Result<String> {
    let (key, value) = item
        .split_once('=')
        .ok_or_else(|| Error::config(item, "override must look like key=value"))?;
    let (key, value) = (key.trim(), value.trim());
    let line = format!("{key} = {value}");
    if line.parse::<toml::Table>().is_ok() {
        Ok(line)
    } else {
        Ok(format!("{key} = {value:?}"))
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn parse_method(n: u32) -> Result<GradMethod> {
    GradMethod::from_number(n).map_err(|_| Error::config("method", format!("unknown method {n} (expected 1 or 2)")))
}

fn print_runs(runs: &[RunReport]) -> Result<()> {
    experiment::write_summary_csv(runs, io::stdout().lock())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.common)?;
    let out = cfg.output_dir.clone();
    let png = cli.common.png;
    match cli.command {
        Command::SamplePrior { prior, p, count } => {
            create_dir(&out)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let n = cfg.pde.exponent;
            let prior = PriorKind::parse(&prior)?;
            for i in 0..count {
                let field = match prior {
                    PriorKind::Wavelet => {
                        let spec = WaveletPriorSpec {
                            kappa: cfg.wavelet.kappa,
                            p,
                            s: cfg.wavelet.s,
                            max_level: cfg.wavelet.depth.saturating_sub(1),
                        };
                        let decomp = sample_wavelet_prior_2d(&spec, &mut rng)?;
                        iwt2d(&decomp).prolong(n.max(decomp.depth()))?
                    }
                    PriorKind::Fourier => sample_trig_prior_2d(&cfg.trig_prior(), n, &mut rng)?,
                };
                experiment::write_field(&out, &format!("sample_{}_{i}", prior.as_str()), &field, png)?;
            }
            println!("wrote {count} {} prior samples to {}", prior.as_str(), out.display());
        }
        Command::Forward { log_perm } => {
            create_dir(&out)?;
            let scenario = experiment::build_scenario(&cfg)?;
            let n = cfg.pde.exponent;
            let field = match log_perm {
                Some(path) => {
                    let f = GridField::load(path)?;
                    if f.exponent() > n {
                        return Err(Error::invalid(format!(
                            "field resolution 2^{} exceeds the solver grid 2^{n}",
                            f.exponent()
                        )));
                    }
                    f.prolong(n)?
                }
                None => scenario.truth.clone(),
            };
            let problem: EllipticProblem = scenario.problem.with_log_perm(field.clone())?;
            let pressure = solve_forward(&problem)?;
            pressure.write_csv(BufWriter::new(fs::File::create(out.join("pressure.csv"))?))?;
            let points = scenario.observations.points();
            let values = haarmap::pde::observe(&pressure, points)?;
            haarmap::pde::write_xyv_csv(BufWriter::new(fs::File::create(out.join("observed.csv"))?), points, &values)?;
            scenario.observations.write_csv(BufWriter::new(fs::File::create(out.join("data.csv"))?))?;
            experiment::write_field(&out, "log_perm", &field, png)?;
            println!("wrote pressure.csv, observed.csv and data.csv to {}", out.display());
        }
        Command::Decompose { input, output, levels } => {
            let field = GridField::load(&input)?;
            let mut decomp = fwt2d(&field);
            if let Some(l) = levels {
                decomp.truncate(l);
            }
            let depth = decomp.depth();
            GridField::from_values(depth, decomp.into_coeffs())?.save(&output)?;
        }
        Command::Reconstruct { input, output } => {
            let coeffs = GridField::load(&input)?;
            let decomp = WaveletDecomp2D::from_coeffs(coeffs.exponent(), coeffs.into_values())?;
            iwt2d(&decomp).save(&output)?;
        }
        Command::Map { prior, method, dump_gradient } => {
            let prior = PriorKind::parse(&prior)?;
            let method = parse_method(method)?;
            let scenario = experiment::build_scenario(&cfg)?;
            let report = experiment::run_map(&cfg, &scenario, prior, method, None)?;
            create_dir(&out)?;
            experiment::write_run(&cfg, &out, &report, png)?;
            experiment::write_metadata(&cfg, &scenario, &out)?;
            if let Some(x) = report.coeffs() {
                let ctx = experiment::misfit_context(&cfg, &scenario, prior)?;
                let file = |name: &str| -> Result<BufWriter<fs::File>> {
                    Ok(BufWriter::new(fs::File::create(out.join(format!("{name}_{}.csv", report.label)))?))
                };
                ctx.param().write_coefficients_csv(x, file("coeffs")?)?;
                if dump_gradient {
                    ctx.param().write_coefficients_csv(&ctx.grad_misfit(x, method)?, file("gradient")?)?;
                }
            }
            print_runs(std::slice::from_ref(&report))?;
            if let Err(e) = &report.result {
                return Err(Error::Numerical(format!("{}: {e}", report.label)));
            }
        }
        Command::Compare => {
            let scenario = experiment::build_scenario(&cfg)?;
            let runs = experiment::run_comparison(&cfg, &scenario, Some(&out), png)?;
            print_runs(&runs)?;
        }
        Command::Sparse => {
            let scenario = experiment::build_scenario(&cfg)?;
            let report = experiment::run_sparse(&cfg, &scenario, Some(&out), png)?;
            println!("l1_zeros = {}\nl2_zeros = {}", report.l1_zeros, report.l2_zeros);
        }
        Command::Bench { jmax, repeats } => {
            let scenario = experiment::build_scenario(&cfg)?;
            let rows = experiment::bench(&cfg, &scenario, &jmax, repeats)?;
            create_dir(&out)?;
            experiment::write_bench_csv(&rows, fs::File::create(out.join("bench.csv"))?)?;
            experiment::write_bench_csv(&rows, io::stdout().lock())?;
        }
    }
    io::stdout().flush()?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.category();
            let field = match &e {
                Error::Config { field, .. } => format!(" field={field}"),
                _ => String::new(),
            };
            eprintln!("error: category={category}{field} message={:?}", e.to_string());
            ExitCode::from(category.exit_code() as u8)
        }
    }
}
