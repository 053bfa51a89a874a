//! Prevalent-cohort generators.
//!
//! Subjects are drawn directly from the joint law of current age and
//! residual life: `X ~ g`, `A | X ~ Uniform(0, X)`, `R = X - A`, and an
//! independent residual censoring time `C ~ F_C`.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::distributions::{CensoringModel, LifetimeModel};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Proposal cap for the acceptance–rejection samplers.
pub const REJECTION_CAP: usize = 1_000_000;
/// Attempt cap for scheme (ii) resampling.
pub const RESAMPLE_CAP: usize = 100_000;

/// One observed subject: current age `a`, follow-up `v = min(r, c)` and
/// `delta = (r ≤ c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct CohortRecord<T: Scalar> {
    pub a: T,
    pub v: T,
    pub delta: bool,
}

impl<T: Scalar> CohortRecord<T> {
    /// Observed value `a + v`: a length-biased lifetime when uncensored.
    pub fn total(&self) -> T {
        self.a + self.v
    }
}

/// A record with the latent residual life and censoring time retained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimRecord {
    pub a: f64,
    pub r: f64,
    pub c: f64,
    pub v: f64,
    pub delta: bool,
}

impl SimRecord {
    pub fn observed(&self) -> CohortRecord<f64> {
        CohortRecord { a: self.a, v: self.v, delta: self.delta }
    }
}

/// Sampling scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Scheme {
    /// Random censoring, random number of censored subjects.
    #[default]
    I,
    /// Scheme (i) conditional on exactly `censored` censored subjects.
    Ii { censored: usize },
    /// Multiplicative censoring: `m` fully observed, `n` censored at recruitment.
    Iii { m: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub lifetime: LifetimeModel,
    pub censoring: CensoringModel,
    pub k: usize,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.lifetime.validate()?;
        self.censoring.validate()?;
        if self.k == 0 {
            return Err(Error::InvalidInput("k must be at least 1".into()));
        }
        match self.scheme {
            Scheme::I => Ok(()),
            Scheme::Ii { censored } if censored <= self.k => Ok(()),
            Scheme::Ii { censored } => {
                Err(Error::InvalidInput(format!("scheme ii wants {censored} censored of k = {}", self.k)))
            }
            Scheme::Iii { m, n } if m + n == self.k => Ok(()),
            Scheme::Iii { m, n } => {
                Err(Error::InvalidInput(format!("scheme iii needs m + n = k, got {m} + {n} != {}", self.k)))
            }
        }
    }

    /// Same scenario with another sample size; scheme (iii) keeps its
    /// censored fraction.
    pub fn with_k(&self, k: usize) -> Self {
        let scheme = match self.scheme {
            Scheme::I => Scheme::I,
            Scheme::Ii { censored } => {
                Scheme::Ii { censored: (censored as f64 * k as f64 / self.k as f64).round() as usize }
            }
            Scheme::Iii { n, .. } => {
                let n = ((n as f64) * k as f64 / self.k as f64).round() as usize;
                Scheme::Iii { m: k - n.min(k), n: n.min(k) }
            }
        };
        Self { k, scheme, ..self.clone() }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Independent stream for replicate `rep` of a run seeded with `seed`.
pub fn replicate_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Derive a child seed from a parent seed and a sequence of labels.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(splitmix64(seed), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Open01)
}

/// Draw from the length-biased density `g(x) = x f_U(x) / μ_U`.
///
/// Exponential lifetimes use the exact `Gamma(2, rate)` law. Weibull and
/// gamma lifetimes use acceptance–rejection from a rescaled member of the
/// same family, with the envelope constant taken at the analytic maximum of
/// the density ratio.
pub fn draw_length_biased<R: Rng + ?Sized>(model: &LifetimeModel, rng: &mut R) -> Result<f64> {
    model.validate()?;
    match *model {
        LifetimeModel::Exponential { rate } => {
            Ok(Gamma::new(2.0, 1.0 / rate).expect("validated rate").sample(rng))
        }
        LifetimeModel::Weibull { shape, scale } => {
            // proposal Weibull(shape, scale·2^{1/shape}); g/h ∝ x exp(-(x/scale)^shape / 2)
            let wide = scale * 2f64.powf(1.0 / shape);
            let u_star = 2.0 / shape;
            let peak = scale * u_star.powf(1.0 / shape) * (-u_star / 2.0).exp();
            for _ in 0..REJECTION_CAP {
                let x = wide * (-open01(rng).ln()).powf(1.0 / shape);
                let u = (x / scale).powf(shape);
                let ratio = x * (-u / 2.0).exp() / peak;
                if rng.random::<f64>() < ratio {
                    return Ok(x);
                }
            }
            Err(Error::RejectionCap(REJECTION_CAP))
        }
        LifetimeModel::Gamma { shape, rate } => {
            // proposal Gamma(shape, rate·a/(a+1)); g/h ∝ x exp(-rate x / (a+1))
            let stretch = 1.0 + 1.0 / shape;
            let proposal = Gamma::new(shape, stretch / rate).expect("validated gamma");
            let mode = (shape + 1.0) / rate;
            for _ in 0..REJECTION_CAP {
                let x: f64 = proposal.sample(rng);
                let z = x / mode;
                let ratio = z * (1.0 - z).exp();
                if rng.random::<f64>() < ratio {
                    return Ok(x);
                }
            }
            Err(Error::RejectionCap(REJECTION_CAP))
        }
    }
}

fn draw_subject<R: Rng + ?Sized>(model: &LifetimeModel, cens: &CensoringModel, rng: &mut R) -> Result<SimRecord> {
    let x = draw_length_biased(model, rng)?;
    let a = x * open01(rng);
    let r = x - a;
    let c = cens.sample(rng);
    let delta = r <= c;
    Ok(SimRecord { a, r, c, v: r.min(c), delta })
}

/// Scheme (i) cohort with the latent `r` and `c` retained.
pub fn draw_cohort_full<R: Rng + ?Sized>(
    model: &LifetimeModel,
    cens: &CensoringModel,
    k: usize,
    rng: &mut R,
) -> Result<Vec<SimRecord>> {
    model.validate()?;
    cens.validate()?;
    (0..k).map(|_| draw_subject(model, cens, rng)).collect()
}

/// Draw an observed cohort under the scenario's sampling scheme.
pub fn draw_cohort<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<Vec<CohortRecord<f64>>> {
    scenario.validate()?;
    let Scenario { lifetime, censoring, k, scheme, .. } = scenario;
    match *scheme {
        Scheme::I => Ok(draw_cohort_full(lifetime, censoring, *k, rng)?.iter().map(SimRecord::observed).collect()),
        Scheme::Ii { censored } => {
            for _ in 0..RESAMPLE_CAP {
                let cohort = draw_cohort_full(lifetime, censoring, *k, rng)?;
                if cohort.iter().filter(|r| !r.delta).count() == censored {
                    return Ok(cohort.iter().map(SimRecord::observed).collect());
                }
            }
            Err(Error::ResampleCap(RESAMPLE_CAP))
        }
        Scheme::Iii { m, n } => {
            let mut out = Vec::with_capacity(m + n);
            for _ in 0..m {
                let x = draw_length_biased(lifetime, rng)?;
                let a = x * open01(rng);
                out.push(CohortRecord { a, v: x - a, delta: true });
            }
            for _ in 0..n {
                let x = draw_length_biased(lifetime, rng)?;
                out.push(CohortRecord { a: x * open01(rng), v: 0.0, delta: false });
            }
            Ok(out)
        }
    }
}

/// A small random cohort on at most `max_distinct` distinct observed values,
/// for checks against [`crate::estimator::brute_force_npmle`].
pub fn draw_tiny_cohort<R: Rng + ?Sized>(max_distinct: usize, max_size: usize, rng: &mut R) -> Vec<CohortRecord<f64>> {
    let distinct = rng.random_range(1..=max_distinct.max(1));
    let values: Vec<f64> = (0..distinct).map(|_| (rng.random_range(0.5..5.0f64) * 100.0).round() / 100.0).collect();
    let size = rng.random_range(1..=max_size.max(1));
    (0..size)
        .map(|_| {
            let x = values[rng.random_range(0..distinct)];
            if rng.random_bool(0.5) {
                // halving keeps a + v == x exactly
                CohortRecord { a: 0.5 * x, v: 0.5 * x, delta: true }
            } else {
                CohortRecord { a: x, v: 0.0, delta: false }
            }
        })
        .collect()
}

/// Result of the incident-population oracle.
#[derive(Debug, Clone)]
pub struct IncidentCohort {
    pub records: Vec<SimRecord>,
    pub onsets: usize,
    pub acceptance: f64,
}

/// Simulate stationary Poisson disease onsets at intensity `rate` over the
/// calendar window `(-window, 0)`, keep the subjects still alive at the
/// recruitment time 0 and follow them forward.
pub fn draw_cohort_incident_rejection<R: Rng + ?Sized>(
    model: &LifetimeModel,
    cens: &CensoringModel,
    window: f64,
    rate: f64,
    rng: &mut R,
) -> Result<IncidentCohort> {
    model.validate()?;
    cens.validate()?;
    let mu = model.mean();
    if !(window >= 20.0 * mu) || !window.is_finite() {
        return Err(Error::InvalidInput(format!("window {window} must be at least 20 mean lifetimes ({})", 20.0 * mu)));
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::InvalidInput(format!("onset rate {rate} must be positive")));
    }
    let expected = rate * window;
    let onsets = Poisson::new(expected)
        .map_err(|e| Error::InvalidInput(format!("onset count: {e}")))?
        .sample(rng) as usize;
    let mut records = Vec::new();
    for _ in 0..onsets {
        let since_onset = window * open01(rng);
        let lifetime = model.sample(rng);
        if lifetime >= since_onset {
            let r = lifetime - since_onset;
            let c = cens.sample(rng);
            records.push(SimRecord { a: since_onset, r, c, v: r.min(c), delta: r <= c });
        }
    }
    let acceptance = if onsets == 0 { 0.0 } else { records.len() as f64 / onsets as f64 };
    if acceptance < 1e-4 {
        return Err(Error::LowAcceptance(acceptance));
    }
    Ok(IncidentCohort { records, onsets, acceptance })
}

/// Sample check of `Cov(A + R, A + C) = σ_A² [1 + ρ_{A,R} σ_R / σ_A]`.
///
/// Returns `(lhs, rhs)`: the sample covariance of the uncensored-scale
/// lifetime `X = A + R` and `Y = A + C`, and `σ_A² + Cov(A, R)` from sample
/// moments. Requires finite censoring times.
pub fn covariance_check(records: &[SimRecord]) -> (f64, f64) {
    let n = records.len() as f64;
    let mean = |f: &dyn Fn(&SimRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let ma = mean(&|s| s.a);
    let mr = mean(&|s| s.r);
    let mx = mean(&|s| s.a + s.r);
    let my = mean(&|s| s.a + s.c);
    let denom = n - 1.0;
    let cov = |f: &dyn Fn(&SimRecord) -> f64| records.iter().map(f).sum::<f64>() / denom;
    let lhs = cov(&|s| (s.a + s.r - mx) * (s.a + s.c - my));
    let var_a = cov(&|s| (s.a - ma).powi(2));
    let var_r = cov(&|s| (s.r - mr).powi(2));
    let cov_ar = cov(&|s| (s.a - ma) * (s.r - mr));
    let (sd_a, sd_r) = (var_a.sqrt(), var_r.sqrt());
    let rho = if sd_a > 0.0 && sd_r > 0.0 { cov_ar / (sd_a * sd_r) } else { 0.0 };
    let rhs = if sd_a > 0.0 { var_a * (1.0 + rho * sd_r / sd_a) } else { cov_ar };
    (lhs, rhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ks_one_sample(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = cdf(x);
                (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
            })
            .fold(0.0, f64::max)
    }

    fn exp1() -> LifetimeModel {
        LifetimeModel::Exponential { rate: 1.0 }
    }

    #[test]
    fn exponential_length_biased_mean() {
        let mut rng = replicate_rng(7, 0);
        let n = 100_000;
        let mean = (0..n).map(|_| draw_length_biased(&exp1(), &mut rng).unwrap()).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn rejection_samplers_match_cdf() {
        let models = [
            exp1(),
            LifetimeModel::Weibull { shape: 2.0, scale: 1.5 },
            LifetimeModel::Weibull { shape: 0.6, scale: 1.0 },
            LifetimeModel::Gamma { shape: 3.0, rate: 2.0 },
            LifetimeModel::Gamma { shape: 0.5, rate: 1.0 },
        ];
        for (i, m) in models.iter().enumerate() {
            let mut rng = replicate_rng(11, i as u64);
            let xs: Vec<f64> = (0..100_000).map(|_| draw_length_biased(m, &mut rng).unwrap()).collect();
            let d = ks_one_sample(xs, |x| m.length_biased_cdf(x));
            assert!(d < 0.01, "{m:?}: KS {d}");
        }
    }

    #[test]
    fn rejection_samplers_match_exact_representations() {
        // length-biased gamma(a, b) is gamma(a + 1, b); length-biased
        // Weibull(k, s) is s·Gamma(1 + 1/k)^{1/k}
        let mut rng = replicate_rng(3, 1);
        let g = LifetimeModel::Gamma { shape: 1.7, rate: 0.8 };
        let ar: f64 = (0..50_000).map(|_| draw_length_biased(&g, &mut rng).unwrap()).sum::<f64>() / 50_000.0;
        let exact = Gamma::new(2.7, 1.0 / 0.8).unwrap();
        let ex: f64 = (0..50_000).map(|_| exact.sample(&mut rng)).sum::<f64>() / 50_000.0;
        assert!((ar - ex).abs() < 0.05, "{ar} vs {ex}");

        let w = LifetimeModel::Weibull { shape: 3.0, scale: 2.0 };
        let ar: Vec<f64> = (0..50_000).map(|_| draw_length_biased(&w, &mut rng).unwrap()).collect();
        let tr = Gamma::new(1.0 + 1.0 / 3.0, 1.0).unwrap();
        let ex: Vec<f64> = (0..50_000).map(|_| 2.0 * Distribution::<f64>::sample(&tr, &mut rng).powf(1.0 / 3.0)).collect();
        let m1 = ar.iter().sum::<f64>() / 5e4;
        let m2 = ex.iter().sum::<f64>() / 5e4;
        assert!((m1 - m2).abs() < 0.02, "{m1} vs {m2}");
    }

    #[test]
    fn narrow_weibull_concentrates_at_mode() {
        let m = LifetimeModel::Weibull { shape: 200.0, scale: 3.0 };
        let mut rng = replicate_rng(5, 5);
        for _ in 0..1000 {
            let x = draw_length_biased(&m, &mut rng).unwrap();
            assert!((x - 3.0).abs() < 0.2, "{x}");
        }
    }

    #[test]
    fn no_censoring_means_all_observed() {
        let s = Scenario { lifetime: exp1(), censoring: CensoringModel::None, k: 500, scheme: Scheme::I, seed: 1 };
        let cohort = draw_cohort(&s, &mut replicate_rng(1, 0)).unwrap();
        assert!(cohort.iter().all(|r| r.delta && r.a > 0.0 && r.v >= 0.0));
    }

    #[test]
    fn scheme_iii_without_censoring_matches_scheme_i() {
        let base = Scenario { lifetime: exp1(), censoring: CensoringModel::None, k: 50, scheme: Scheme::I, seed: 9 };
        let iii = Scenario { scheme: Scheme::Iii { m: 50, n: 0 }, ..base.clone() };
        let a = draw_cohort(&base, &mut replicate_rng(9, 0)).unwrap();
        let b = draw_cohort(&iii, &mut replicate_rng(9, 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scheme_iii_censored_values_follow_residual_cdf() {
        let m = LifetimeModel::Gamma { shape: 2.0, rate: 1.0 };
        let s = Scenario { lifetime: m, censoring: CensoringModel::None, k: 40_000, scheme: Scheme::Iii { m: 0, n: 40_000 }, seed: 2 };
        let cohort = draw_cohort(&s, &mut replicate_rng(2, 0)).unwrap();
        assert!(cohort.iter().all(|r| !r.delta && r.v == 0.0));
        let d = ks_one_sample(cohort.iter().map(|r| r.a).collect(), |t| m.residual_cdf(t));
        assert!(d < 0.012, "KS {d}");
    }

    #[test]
    fn scheme_ii_hits_censored_count() {
        let s = Scenario {
            lifetime: exp1(),
            censoring: CensoringModel::Exponential { rate: 1.0 },
            k: 40,
            scheme: Scheme::Ii { censored: 20 },
            seed: 4,
        };
        let cohort = draw_cohort(&s, &mut replicate_rng(4, 0)).unwrap();
        assert_eq!(cohort.iter().filter(|r| !r.delta).count(), 20);
        let impossible = Scenario { censoring: CensoringModel::None, k: 5, scheme: Scheme::Ii { censored: 1 }, ..s };
        assert!(matches!(draw_cohort(&impossible, &mut replicate_rng(4, 1)), Err(Error::ResampleCap(_))));
    }

    #[test]
    fn same_seed_same_cohort() {
        let s = Scenario {
            lifetime: LifetimeModel::Weibull { shape: 1.5, scale: 1.0 },
            censoring: CensoringModel::Uniform { upper: 2.0 },
            k: 100,
            scheme: Scheme::I,
            seed: 77,
        };
        let a = draw_cohort(&s, &mut replicate_rng(s.seed, 3)).unwrap();
        let b = draw_cohort(&s, &mut replicate_rng(s.seed, 3)).unwrap();
        let c = draw_cohort(&s, &mut replicate_rng(s.seed, 4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn current_and_residual_have_equal_means() {
        let cohort = draw_cohort_full(&exp1(), &CensoringModel::Exponential { rate: 1.0 }, 100_000, &mut replicate_rng(8, 0)).unwrap();
        let n = cohort.len() as f64;
        let diff: Vec<f64> = cohort.iter().map(|s| s.a - s.r).collect();
        let mean = diff.iter().sum::<f64>() / n;
        let sd = (diff.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!(mean.abs() < 3.0 * sd / n.sqrt(), "mean diff {mean}");
    }

    #[test]
    fn incident_oracle_acceptance_and_p() {
        let m = exp1();
        let c = CensoringModel::Exponential { rate: 1.0 };
        let out = draw_cohort_incident_rejection(&m, &c, 40.0, 500.0, &mut replicate_rng(6, 0)).unwrap();
        assert!((out.acceptance - 1.0 / 40.0).abs() < 0.005);
        let p = crate::distributions::p_uncensored(&m, &c).unwrap();
        let n = out.records.len() as f64;
        let phat = out.records.iter().filter(|r| r.delta).count() as f64 / n;
        assert!((phat - p).abs() < 3.0 * (p * (1.0 - p) / n).sqrt(), "{phat} vs {p}");
        assert!(matches!(
            draw_cohort_incident_rejection(&m, &c, 10.0, 1.0, &mut replicate_rng(6, 1)),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            draw_cohort_incident_rejection(&m, &c, 1e6, 1e-3, &mut replicate_rng(6, 2)),
            Err(Error::LowAcceptance(_))
        ));
    }

    #[test]
    fn covariance_identity_and_degenerate_lifetime() {
        let mut recs = draw_cohort_full(&exp1(), &CensoringModel::Exponential { rate: 1.0 }, 100_000, &mut replicate_rng(10, 0)).unwrap();
        let (lhs, rhs) = covariance_check(&recs);
        assert!(lhs > 0.0 && ((lhs - rhs) / rhs).abs() < 0.05, "{lhs} {rhs}");

        // permuting censoring times across subjects keeps C independent
        let mut rng = replicate_rng(10, 1);
        let n = recs.len();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            let (ci, cj) = (recs[i].c, recs[j].c);
            recs[i].c = cj;
            recs[j].c = ci;
        }
        let (l2, r2) = covariance_check(&recs);
        assert!(((l2 - r2) / r2).abs() < 0.05);

        // point-mass lifetime x = 2: A uniform on (0, 2), R = 2 - A
        let mut rng = replicate_rng(10, 2);
        let recs: Vec<SimRecord> = (0..20_000)
            .map(|_| {
                let a = 2.0 * rng.random::<f64>();
                let c = rng.random::<f64>() * 3.0;
                SimRecord { a, r: 2.0 - a, c, v: (2.0 - a).min(c), delta: 2.0 - a <= c }
            })
            .collect();
        let (lhs, _) = covariance_check(&recs);
        let ma = recs.iter().map(|s| s.a).sum::<f64>() / 2e4;
        let mr = recs.iter().map(|s| s.r).sum::<f64>() / 2e4;
        let va = recs.iter().map(|s| (s.a - ma).powi(2)).sum::<f64>() / 2e4;
        let vr = recs.iter().map(|s| (s.r - mr).powi(2)).sum::<f64>() / 2e4;
        assert!((va - vr).abs() < 1e-9);
        // X = A + R is constant, so both sides vanish
        let (_, rhs) = covariance_check(&recs);
        assert!(lhs.abs() < 1e-12 && rhs.abs() < 1e-12, "{lhs} {rhs}");
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let a = derive_seed(1, &[0, 0]);
        let b = derive_seed(1, &[0, 1]);
        let c = derive_seed(2, &[0, 0]);
        assert!(a != b && a != c && b != c);
        assert_eq!(a, derive_seed(1, &[0, 0]));
    }
}
