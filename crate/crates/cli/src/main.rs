use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use lbnpmle::asymptotics::{self, band_for_estimate, master_residual, BandConfig, BandMode, CensoringInput, LimitScheme};
use lbnpmle::distributions::CensoringModel;
use lbnpmle::estimator::{brute_force_npmle, fit_npmle, FitConfig};
use lbnpmle::io::{band_table, cohort_table, fit_table, mass_from_table, read_cohort, sim_table, Table};
use lbnpmle::simulate::{derive_seed, draw_cohort, draw_cohort_full, draw_tiny_cohort, replicate_rng};
use lbnpmle::study::{limit_scheme, run_study, scenario_truth, study_table, StudySpec};
use lbnpmle::{Error, Scenario, Scheme};

#[derive(Parser)]
#[command(name = "lbnpmle", version, about = "NPMLE for length-biased right-censored prevalent-cohort data")]
struct Cli {
    /// Directory for outputs written without an explicit `--out`.
    #[arg(long, global = true, env = "LBNPMLE_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Plugin,
    Oracle,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a prevalent cohort from a scenario file.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the latent residual and censoring times (scheme i only).
        #[arg(long)]
        full: bool,
    },
    /// Fit the NPMLE; exits nonzero when the iteration does not converge.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 100_000)]
        max_iter: usize,
    },
    /// Pointwise confidence bands for G and S_U.
    Band {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        fit: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        #[arg(long, value_enum, default_value_t = Mode::Plugin)]
        mode: Mode,
        /// Generating scenario, required in oracle mode.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = asymptotics::DEFAULT_PATHS)]
        paths: usize,
        #[arg(long)]
        t_star: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print α, β, membership in J and λ for a censoring model.
    Diag {
        #[arg(long)]
        cens: PathBuf,
        #[arg(long)]
        t: f64,
    },
    /// Maximum master-equation residual over simulated cohorts.
    CheckMaster {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 500)]
        k: usize,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a Monte Carlo study.
    Study {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare the EM fit with exhaustive search on tiny cohorts.
    OracleCompare {
        /// A cohort file; random tiny cohorts are drawn when absent.
        #[arg(long = "in")]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 1e-3)]
        grid: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn output_path(out: Option<PathBuf>, dir: &Path, default: &str) -> Result<PathBuf> {
    match out {
        Some(p) => Ok(p),
        None => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            Ok(dir.join(default))
        }
    }
}

fn write(table: &Table, path: &Path) -> Result<()> {
    table.write(path).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn seed_comment(seed: u64) -> String {
    format!("seed={seed}")
}

fn run(cli: Cli) -> Result<ExitCode> {
    let dir = cli.out_dir;
    match cli.command {
        Command::Simulate { scenario, out, seed, full } => {
            let mut s: Scenario = read_json(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            s.validate()?;
            let mut rng = replicate_rng(s.seed, 0);
            let table = if full {
                if s.scheme != Scheme::I {
                    bail!("--full is only available for scheme i");
                }
                sim_table(&draw_cohort_full(&s.lifetime, &s.censoring, s.k, &mut rng)?)
            } else {
                cohort_table(&draw_cohort(&s, &mut rng)?)
            };
            write(&table.with_comment(seed_comment(s.seed)), &output_path(out, &dir, "cohort.csv")?)?;
        }
        Command::Fit { input, out, tol, max_iter } => {
            let table = Table::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let records = lbnpmle::io::cohort_from_table(&table)?;
            let config = FitConfig { tol, max_iter, ..FitConfig::default() };
            let fit = fit_npmle(&records, &config)?;
            let mut t = fit_table(&fit);
            if let Some(seed) = table.seed() {
                t = t.with_comment(seed_comment(seed));
            }
            write(&t, &output_path(out, &dir, "fit.csv")?)?;
            eprintln!(
                "iterations={} change={:e} converged={} boundary_points={}",
                fit.iterations,
                fit.final_change,
                fit.converged,
                fit.boundary.len()
            );
            if !fit.converged {
                eprintln!("error: EM did not reach tol {tol} within {max_iter} iterations");
                return Ok(ExitCode::from(2));
            }
        }
        Command::Band { input, fit, level, mode, scenario, paths, t_star, seed, out } => {
            let records = read_cohort(&input).with_context(|| format!("reading {}", input.display()))?;
            let ghat = mass_from_table(&Table::read(&fit).with_context(|| format!("reading {}", fit.display()))?)?;
            let config = BandConfig { level, paths, seed, t_star, ..BandConfig::default() };
            let truth;
            let band_mode = match mode {
                Mode::Plugin => BandMode::Plugin { scheme: LimitScheme::I },
                Mode::Oracle => {
                    let path = scenario.context("oracle mode needs --scenario")?;
                    let s: Scenario = read_json(&path)?;
                    truth = scenario_truth(&s)?;
                    BandMode::Oracle { truth: &truth, scheme: limit_scheme(&s.scheme) }
                }
            };
            let band = band_for_estimate(&ghat, &records, band_mode, &config)?;
            write(&band_table(&band).with_comment(seed_comment(seed)), &output_path(out, &dir, "band.csv")?)?;
        }
        Command::Diag { cens, t } => {
            let model: CensoringModel = read_json(&cens)?;
            model.validate()?;
            if !(t > 0.0) {
                bail!("t must be positive");
            }
            let input = CensoringInput::Model(model);
            let lambda = match input.lambda(t) {
                Ok(l) => l.to_string(),
                Err(Error::NotInJ { .. }) => "NA".into(),
                Err(e) => return Err(e.into()),
            };
            println!("alpha={}", input.alpha(t));
            println!("beta={}", input.beta());
            println!("in_J={}", input.in_j(t));
            println!("lambda={lambda}");
        }
        Command::CheckMaster { scenario, k, reps, seed } => {
            let s: Scenario = read_json(&scenario)?;
            let s = s.with_k(k);
            s.validate()?;
            let truth = scenario_truth(&s)?;
            let mut worst = 0.0f64;
            for r in 0..reps {
                let records = draw_cohort(&s, &mut replicate_rng(derive_seed(seed, &[k as u64]), r as u64))?;
                let fit = fit_npmle(&records, &FitConfig::default())?;
                if !fit.converged {
                    bail!("replicate {r}: fit did not converge");
                }
                worst = worst.max(master_residual(&records, &fit.ghat, &truth)?);
            }
            println!("max_residual={worst:e}");
        }
        Command::Study { spec, out, seed } => {
            let mut s: StudySpec = read_json(&spec)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let rows = run_study(&s)?;
            let target = match (out, &s.out_dir) {
                (Some(p), _) => p,
                (None, Some(d)) => output_path(None, d, "study.csv")?,
                (None, None) => output_path(None, &dir, "study.csv")?,
            };
            write(&study_table(&s, &rows), &target)?;
        }
        Command::OracleCompare { input, reps, grid, seed } => {
            let cohorts = match input {
                Some(path) => vec![read_cohort(&path).with_context(|| format!("reading {}", path.display()))?],
                None => (0..reps).map(|r| draw_tiny_cohort(3, 8, &mut replicate_rng(seed, r as u64))).collect(),
            };
            let mut worst = 0.0f64;
            for (i, records) in cohorts.iter().enumerate() {
                let fit = fit_npmle(records, &FitConfig::default())?;
                let bf = brute_force_npmle(records, grid)?;
                let d = fit.ghat.sup_distance(&bf).unwrap_or(f64::INFINITY);
                println!("cohort={i} distinct={} sup_distance={d:e}", fit.ghat.len());
                worst = worst.max(d);
            }
            println!("max_sup_distance={worst:e}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
