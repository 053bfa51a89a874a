//! Reproducible Monte Carlo studies.
//!
//! Replicate `r` of scenario `s` at sample size `k` draws its cohort from
//! `derive_seed(seed, [s, k, r])`, so results do not depend on how rayon
//! schedules the work.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{limit_grid, oracle_limit_law, LimitScheme, DEFAULT_PATHS};
use crate::distributions::{CensoringModel, TrueModels};
use crate::error::{Error, Result};
use crate::estimator::{fit_npmle, km_naive, FitConfig};
use crate::io::Table;
use crate::mass::MassFunction;
use crate::simulate::{derive_seed, draw_cohort, replicate_rng, Scenario, Scheme};

pub const STUDY_HEADER: [&str; 7] = ["scenario", "k", "metric", "replicates", "mean", "median", "se"];

/// Per-replicate statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// `sup_{[0, t*]} |Ĝ - G|` with `t*` the true 0.9-quantile of `G`.
    SupError,
    /// Indicator that the oracle pointwise band at the true `G`-median covers `G`.
    Coverage,
    /// Median of the naive product-limit curve over the true unbiased median.
    MedianRatio,
}

impl Metric {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::SupError => "sup-error",
            Self::Coverage => "coverage",
            Self::MedianRatio => "median-ratio",
        }
    }
}

fn default_level() -> f64 {
    0.95
}

fn default_paths() -> usize {
    DEFAULT_PATHS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub scenarios: Vec<Scenario>,
    pub ks: Vec<usize>,
    pub replicates: usize,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    pub metrics: Vec<Metric>,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default = "default_paths")]
    pub paths: usize,
}

impl StudySpec {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidInput("replicates must be at least 1".into()));
        }
        if self.scenarios.is_empty() || self.ks.is_empty() || self.metrics.is_empty() {
            return Err(Error::InvalidInput("a study needs scenarios, sample sizes and metrics".into()));
        }
        for s in &self.scenarios {
            s.validate()?;
            for &k in &self.ks {
                s.with_k(k).validate()?;
            }
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidInput(format!("level {} must lie in (0, 1)", self.level)));
        }
        Ok(())
    }
}

/// One aggregated output row.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub scenario: usize,
    pub k: usize,
    pub metric: Metric,
    pub replicates: usize,
    pub mean: f64,
    pub median: f64,
    pub se: f64,
}

/// The generating models behind a scenario. Scheme (iii) is multiplicative
/// censoring with `p = m / k`.
pub fn scenario_truth(scenario: &Scenario) -> Result<TrueModels> {
    match scenario.scheme {
        Scheme::Iii { m, n } => TrueModels::new(
            scenario.lifetime,
            CensoringModel::Multiplicative { p: m as f64 / (m + n) as f64, tau: None },
        ),
        _ => TrueModels::new(scenario.lifetime, scenario.censoring.clone()),
    }
}

pub fn limit_scheme(scheme: &Scheme) -> LimitScheme {
    match scheme {
        Scheme::I => LimitScheme::I,
        Scheme::Ii { .. } => LimitScheme::Ii,
        Scheme::Iii { .. } => LimitScheme::Iii,
    }
}

/// `sup_{t ≤ t*} |Ĝ(t) - G(t)|` for continuous `G`, using both one-sided
/// limits of `Ĝ` at its jumps.
pub fn sup_error(ghat: &MassFunction<f64>, g: impl Fn(f64) -> f64, t_star: f64) -> f64 {
    let mut worst = (ghat.cdf(t_star) - g(t_star)).abs();
    for &t in ghat.support().iter().take_while(|&&t| t <= t_star) {
        let gt = g(t);
        worst = worst.max((ghat.cdf(t) - gt).abs()).max((ghat.cdf_left(t) - gt).abs());
    }
    worst
}

fn median_sorted(v: &[f64]) -> f64 {
    crate::asymptotics::quantile_sorted(v, 0.5)
}

/// Median of a right-continuous survivor curve: first time it drops to 1/2.
fn step_median(s: &crate::mass::StepFunction<f64>) -> f64 {
    s.first_crossing_below(0.5 + 1e-12).unwrap_or(f64::INFINITY)
}

struct Prepared {
    truth: TrueModels,
    t_star: f64,
    median_g: f64,
    // oracle |U| quantile at the G-median
    coverage_q: Option<f64>,
    true_unbiased_median: f64,
}

fn prepare(spec: &StudySpec, index: usize) -> Result<Prepared> {
    let scenario = &spec.scenarios[index];
    let truth = scenario_truth(scenario)?;
    let lt = truth.lifetime;
    let median_g = lt.length_biased_quantile(0.5);
    let t_star = lt.length_biased_quantile(0.9);
    let coverage_q = if spec.metrics.contains(&Metric::Coverage) {
        let grid = limit_grid(&lt, t_star, 400);
        let law = oracle_limit_law(&truth, &grid, limit_scheme(&scenario.scheme), spec.paths, derive_seed(spec.seed, &[index as u64, u64::MAX]))?;
        let j = law.index_of(median_g).expect("limit grid contains the median");
        Some(law.abs_quantile(j, spec.level))
    } else {
        None
    };
    Ok(Prepared { truth, t_star, median_g, coverage_q, true_unbiased_median: lt.quantile(0.5) })
}

fn replicate(spec: &StudySpec, prep: &Prepared, scenario: &Scenario, seed: u64) -> Result<Vec<f64>> {
    let records = draw_cohort(scenario, &mut replicate_rng(seed, 0))?;
    let needs_fit = spec.metrics.iter().any(|m| matches!(m, Metric::SupError | Metric::Coverage));
    let fit = if needs_fit {
        let fit = fit_npmle(&records, &FitConfig::default())?;
        if !fit.converged {
            return Err(Error::InvalidInput("fit did not converge".into()));
        }
        Some(fit)
    } else {
        None
    };
    let lt = prep.truth.lifetime;
    Ok(spec
        .metrics
        .iter()
        .map(|m| match m {
            Metric::SupError => sup_error(&fit.as_ref().expect("fit").ghat, |t| lt.length_biased_cdf(t), prep.t_star),
            Metric::Coverage => {
                let ghat = &fit.as_ref().expect("fit").ghat;
                let q = prep.coverage_q.expect("coverage law") / (records.len() as f64).sqrt();
                let err = (ghat.cdf(prep.median_g) - lt.length_biased_cdf(prep.median_g)).abs();
                if err <= q {
                    1.0
                } else {
                    0.0
                }
            }
            Metric::MedianRatio => step_median(&km_naive(&records)) / prep.true_unbiased_median,
        })
        .collect())
}

/// Run the study; rows are sorted by scenario, `k` and metric.
pub fn run_study(spec: &StudySpec) -> Result<Vec<StudyRow>> {
    spec.validate()?;
    let prepared = (0..spec.scenarios.len()).map(|i| prepare(spec, i)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize, usize)> = (0..spec.scenarios.len())
        .flat_map(|s| spec.ks.iter().flat_map(move |&k| (0..spec.replicates).map(move |r| (s, k, r))))
        .collect();
    let results: Vec<(u64, Result<Vec<f64>>)> = jobs
        .par_iter()
        .map(|&(s, k, r)| {
            let seed = derive_seed(spec.seed, &[s as u64, k as u64, r as u64]);
            let scenario = spec.scenarios[s].with_k(k);
            (seed, replicate(spec, &prepared[s], &scenario, seed))
        })
        .collect();
    let failed: Vec<u64> = results.iter().filter(|(_, r)| r.is_err()).map(|(s, _)| *s).collect();
    if !failed.is_empty() {
        return Err(Error::StudyFailures(failed));
    }
    let values: Vec<Vec<f64>> = results.into_iter().map(|(_, r)| r.expect("checked")).collect();
    let mut metrics = spec.metrics.clone();
    metrics.sort();
    metrics.dedup();
    let mut rows = Vec::new();
    for s in 0..spec.scenarios.len() {
        let mut ks = spec.ks.clone();
        ks.sort_unstable();
        ks.dedup();
        for k in ks {
            for &metric in &metrics {
                let col = spec.metrics.iter().position(|&m| m == metric).expect("metric listed");
                let mut v: Vec<f64> = jobs
                    .iter()
                    .zip(&values)
                    .filter(|((js, jk, _), _)| *js == s && *jk == k)
                    .map(|(_, row)| row[col])
                    .collect();
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
                v.sort_by(f64::total_cmp);
                rows.push(StudyRow {
                    scenario: s,
                    k,
                    metric,
                    replicates: v.len(),
                    mean,
                    median: median_sorted(&v),
                    se: (var / n).sqrt(),
                });
            }
        }
    }
    Ok(rows)
}

/// Rows as a table; the metric column holds `0 = sup-error`, `1 = coverage`,
/// `2 = median-ratio`.
pub fn study_table(spec: &StudySpec, rows: &[StudyRow]) -> Table {
    let mut t = Table::new(&STUDY_HEADER)
        .with_comment(format!("seed={}", spec.seed))
        .with_comment("metric: 0=sup-error 1=coverage 2=median-ratio");
    t.rows = rows
        .iter()
        .map(|r| vec![r.scenario as f64, r.k as f64, r.metric.code() as f64, r.replicates as f64, r.mean, r.median, r.se])
        .collect();
    t
}
