//! Unconditional NPMLE of the length-biased lifetime distribution `G`.
//!
//! With distinct observed values `t_1 < ⋯ < t_h`, uncensored counts `c_j`
//! and censored counts `d_j`, the log-likelihood is
//!
//! ```text
//! ℓ(w) = Σ_j c_j log w_j + Σ_j d_j log f⁻(t_j),   f⁻(y) = Σ_{t_i ≥ y} w_i / t_i
//! ```
//!
//! and the self-consistency (EM) map is
//!
//! ```text
//! T(w)_j = k⁻¹ [c_j + (w_j / t_j) Σ_{l ≤ j} d_l / f⁻(t_l)].
//! ```

use crate::error::{Error, Result};
use crate::linalg::{Lu, Matrix};
use crate::mass::{MassFunction, StepFunction};
use crate::scalar::{neumaier_sum, Scalar};
use crate::simulate::CohortRecord;

/// Masses below this are reported as boundary points.
pub const BOUNDARY_MASS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum FitInit<T: Scalar> {
    Uniform,
    Custom(MassFunction<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig<T: Scalar> {
    /// Stop when the sup-norm mass change falls to this level.
    pub tol: T,
    pub max_iter: usize,
    pub init: FitInit<T>,
    /// Largest support size for the Newton refinement of the EM limit
    /// (0 disables it).
    pub polish_limit: usize,
}

impl<T: Scalar> Default for FitConfig<T> {
    fn default() -> Self {
        Self { tol: T::lit(1e-10), max_iter: 100_000, init: FitInit::Uniform, polish_limit: 600 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult<T: Scalar> {
    pub ghat: MassFunction<T>,
    /// `m / k`.
    pub p_hat: T,
    pub m: usize,
    pub k: usize,
    pub iterations: usize,
    /// Sup-norm distance between the returned masses and their EM image.
    pub final_change: T,
    pub loglik_trace: Vec<T>,
    pub converged: bool,
    /// Whether the Newton refinement was applied and accepted.
    pub polished: bool,
    /// Support points carrying mass below [`BOUNDARY_MASS`].
    pub boundary: Vec<T>,
}

/// Cohort reduced to distinct observed values with multiplicities.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedData<T: Scalar> {
    pub support: Vec<T>,
    pub uncensored: Vec<usize>,
    pub censored: Vec<usize>,
    pub k: usize,
    pub m: usize,
}

impl<T: Scalar> ObservedData<T> {
    pub fn new(records: &[CohortRecord<T>]) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidInput("empty cohort".into()));
        }
        let mut obs: Vec<(T, bool)> = Vec::with_capacity(records.len());
        for r in records {
            if !(r.a.is_finite() && r.a > T::zero() && r.v.is_finite() && r.v >= T::zero()) {
                return Err(Error::InvalidInput(format!("record a = {}, v = {} out of range", r.a, r.v)));
            }
            obs.push((r.total(), r.delta));
        }
        obs.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite values"));
        let mut data = Self { support: Vec::new(), uncensored: Vec::new(), censored: Vec::new(), k: records.len(), m: 0 };
        for (t, delta) in obs {
            if data.support.last() != Some(&t) {
                data.support.push(t);
                data.uncensored.push(0);
                data.censored.push(0);
            }
            let j = data.support.len() - 1;
            if delta {
                data.uncensored[j] += 1;
                data.m += 1;
            } else {
                data.censored[j] += 1;
            }
        }
        Ok(data)
    }

    pub fn h(&self) -> usize {
        self.support.len()
    }

    pub fn n(&self) -> usize {
        self.k - self.m
    }

    pub fn p_hat(&self) -> T {
        T::count(self.m) / T::count(self.k)
    }

    /// Empirical distribution `G_m` of the uncensored values (None if m = 0).
    pub fn uncensored_empirical(&self) -> Option<MassFunction<T>> {
        empirical(&self.support, &self.uncensored)
    }

    /// Empirical distribution `F_n` of the censored values (None if n = 0).
    pub fn censored_empirical(&self) -> Option<MassFunction<T>> {
        empirical(&self.support, &self.censored)
    }

    // f⁻(t_j) = Σ_{i ≥ j} w_i / t_i
    fn left_tails(&self, w: &[T]) -> Vec<T> {
        let mut tail = vec![T::zero(); w.len()];
        let mut acc = T::zero();
        for j in (0..w.len()).rev() {
            acc = acc + w[j] / self.support[j];
            tail[j] = acc;
        }
        tail
    }

    /// `S_j = Σ_{l ≤ j} d_l / f⁻(t_l)`.
    fn censored_weights(&self, tails: &[T]) -> Result<Vec<T>> {
        let mut out = Vec::with_capacity(tails.len());
        let mut acc = T::zero();
        for (j, &d) in self.censored.iter().enumerate() {
            if d > 0 {
                if !(tails[j] > T::zero()) {
                    return Err(Error::ZeroResidual(self.support[j].as_f64()));
                }
                acc = acc + T::count(d) / tails[j];
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// The EM map `T(w)`.
    pub fn em_map(&self, w: &[T]) -> Result<Vec<T>> {
        let tails = self.left_tails(w);
        let s = self.censored_weights(&tails)?;
        let k = T::count(self.k);
        let mut out: Vec<T> = (0..w.len())
            .map(|j| (T::count(self.uncensored[j]) + w[j] / self.support[j] * s[j]) / k)
            .collect();
        let total = neumaier_sum(out.iter().copied());
        for v in &mut out {
            *v = *v / total;
        }
        Ok(out)
    }

    /// Log-likelihood of masses on the observed support.
    pub fn loglik(&self, w: &[T]) -> T {
        let tails = self.left_tails(w);
        let mut terms = Vec::with_capacity(2 * w.len());
        for j in 0..w.len() {
            if self.uncensored[j] > 0 {
                if !(w[j] > T::zero()) {
                    return T::neg_infinity();
                }
                terms.push(T::count(self.uncensored[j]) * w[j].ln());
            }
            if self.censored[j] > 0 {
                if !(tails[j] > T::zero()) {
                    return T::neg_infinity();
                }
                terms.push(T::count(self.censored[j]) * tails[j].ln());
            }
        }
        neumaier_sum(terms)
    }

    fn masses_on_support(&self, g: &MassFunction<T>) -> Result<Vec<T>> {
        if g.support() != self.support.as_slice() {
            return Err(Error::InvalidInput(format!(
                "mass function has {} support points, data has {} distinct values; supports must coincide",
                g.len(),
                self.h()
            )));
        }
        Ok(g.masses().to_vec())
    }
}

fn empirical<T: Scalar>(support: &[T], counts: &[usize]) -> Option<MassFunction<T>> {
    let (s, w): (Vec<T>, Vec<T>) = support
        .iter()
        .zip(counts)
        .filter(|(_, &c)| c > 0)
        .map(|(&t, &c)| (t, T::count(c)))
        .unzip();
    if s.is_empty() {
        None
    } else {
        Some(MassFunction::from_weights(s, w).expect("positive counts"))
    }
}

/// Log-likelihood of `G` for the cohort:
/// `Σ δ_i log dG(x_i) + Σ (1 - δ_i) log f(y_i⁻)`. Returns `-∞` when an
/// uncensored value carries no mass or a censored value has no residual mass.
pub fn log_likelihood<T: Scalar>(g: &MassFunction<T>, records: &[CohortRecord<T>]) -> T {
    let mut terms = Vec::with_capacity(records.len());
    for r in records {
        let t = r.total();
        let v = if r.delta { g.mass_at(t) } else { g.residual_density_left(t) };
        if !(v > T::zero()) {
            return T::neg_infinity();
        }
        terms.push(v.ln());
    }
    neumaier_sum(terms)
}

/// One EM / self-consistency step. `G` must live on the observed support.
pub fn em_step<T: Scalar>(g: &MassFunction<T>, records: &[CohortRecord<T>]) -> Result<MassFunction<T>> {
    let data = ObservedData::new(records)?;
    let w = data.masses_on_support(g)?;
    Ok(MassFunction::build(data.support.clone(), data.em_map(&w)?))
}

/// Sup-norm violation of the score equation,
/// `max_j |dG(t_j) - p̂ dG_m(t_j) - (1 - p̂) (Σ_{y_i ≤ t_j} dF_n(y_i) / f(y_i⁻)) dG(t_j) / t_j|`.
pub fn score_residual<T: Scalar>(g: &MassFunction<T>, records: &[CohortRecord<T>]) -> Result<T> {
    let data = ObservedData::new(records)?;
    let w = data.masses_on_support(g)?;
    Ok(fixed_point_gap(&data, &w)?.0)
}

fn fixed_point_gap<T: Scalar>(data: &ObservedData<T>, w: &[T]) -> Result<(T, Vec<T>)> {
    let tw = data.em_map(w)?;
    let gap = w.iter().zip(&tw).fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()));
    Ok((gap, tw))
}

/// Fit the NPMLE by EM iteration from the configured start, then refine
/// the limit by Newton's method on the support points that carry mass.
pub fn fit_npmle<T: Scalar>(records: &[CohortRecord<T>], config: &FitConfig<T>) -> Result<FitResult<T>> {
    if !(config.tol > T::zero()) || config.max_iter == 0 {
        return Err(Error::InvalidInput("tol must be positive and max_iter at least 1".into()));
    }
    let data = ObservedData::new(records)?;
    fit_observed(&data, config)
}

/// [`fit_npmle`] on pre-tabulated data.
pub fn fit_observed<T: Scalar>(data: &ObservedData<T>, config: &FitConfig<T>) -> Result<FitResult<T>> {
    let h = data.h();
    let mut w = match &config.init {
        FitInit::Uniform => vec![T::one() / T::count(h); h],
        FitInit::Custom(g) => {
            let w = data.masses_on_support(g)?;
            if w.iter().any(|&x| !(x > T::zero())) {
                return Err(Error::InvalidInput("custom start must be strictly positive".into()));
            }
            w
        }
    };
    let mut trace = vec![data.loglik(&w)];
    let mut iterations = 0;
    let mut change = T::infinity();
    while iterations < config.max_iter {
        let next = data.em_map(&w)?;
        change = w.iter().zip(&next).fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()));
        w = next;
        iterations += 1;
        trace.push(data.loglik(&w));
        if change <= config.tol {
            break;
        }
    }
    let mut converged = change <= config.tol;
    let mut polished = false;
    if config.polish_limit > 0 && h <= config.polish_limit && data.n() > 0 {
        if let Some(refined) = newton_polish(data, &w) {
            let ll = data.loglik(&refined);
            let last = *trace.last().expect("non-empty trace");
            let slack = T::lit(64.0) * T::epsilon() * (T::one() + last.abs());
            if ll >= last - slack {
                w = refined;
                trace.push(ll);
                polished = true;
            }
        }
    }
    let (gap, _) = fixed_point_gap(data, &w)?;
    if polished {
        converged = gap <= config.tol;
    }
    let boundary = data
        .support
        .iter()
        .zip(&w)
        .filter(|(_, &x)| x < T::lit(BOUNDARY_MASS))
        .map(|(&t, _)| t)
        .collect();
    Ok(FitResult {
        ghat: MassFunction::build(data.support.clone(), w),
        p_hat: data.p_hat(),
        m: data.m,
        k: data.k,
        iterations,
        final_change: gap,
        loglik_trace: trace,
        converged,
        polished,
        boundary,
    })
}

// Newton's method for w = T(w) restricted to an active set, with
// inactive points held at zero and checked against the Kuhn–Tucker
// condition S_j / (k t_j) ≤ 1.
fn newton_polish<T: Scalar>(data: &ObservedData<T>, start: &[T]) -> Option<Vec<T>> {
    let h = data.h();
    let floor = T::lit(1e-13);
    let mut active: Vec<bool> = (0..h).map(|j| data.uncensored[j] > 0 || start[j] > floor).collect();
    let mut w = start.to_vec();
    let k = T::count(data.k);
    let target = T::lit(16.0) * T::epsilon();
    let mut fallback = None;
    for _round in 0..12 {
        for j in 0..h {
            if !active[j] {
                w[j] = T::zero();
            }
        }
        normalize(&mut w);
        let mut ok = false;
        for _ in 0..40 {
            let tails = data.left_tails(&w);
            let s = data.censored_weights(&tails).ok()?;
            let tw = data.em_map(&w).ok()?;
            let idx: Vec<usize> = (0..h).filter(|&j| active[j]).collect();
            let gap = idx.iter().fold(T::zero(), |acc, &j| acc.max((w[j] - tw[j]).abs()));
            if gap <= target {
                ok = true;
                break;
            }
            // R_m = Σ_{l ≤ m} d_l / f⁻(t_l)²
            let mut r = vec![T::zero(); h];
            let mut acc = T::zero();
            for j in 0..h {
                if data.censored[j] > 0 {
                    acc = acc + T::count(data.censored[j]) / (tails[j] * tails[j]);
                }
                r[j] = acc;
            }
            let na = idx.len();
            let mut jac = Matrix::zeros(na);
            for (a, &j) in idx.iter().enumerate() {
                let wj = w[j] / data.support[j];
                for (b, &i) in idx.iter().enumerate() {
                    let mut dt = -wj / data.support[i] * r[j.min(i)];
                    if i == j {
                        dt = dt + s[j] / data.support[j];
                    }
                    let v = if i == j { T::one() } else { T::zero() } - dt / k;
                    jac.set(a, b, v);
                }
            }
            let lu = Lu::factor(&jac).ok()?;
            let rhs: Vec<T> = idx.iter().map(|&j| tw[j] - w[j]).collect();
            let delta = lu.solve(&rhs);
            let mut step = T::one();
            let mut dropped = false;
            for (a, &j) in idx.iter().enumerate() {
                let next = w[j] + delta[a];
                if !(next > T::zero()) {
                    if data.uncensored[j] == 0 {
                        active[j] = false;
                        dropped = true;
                    } else {
                        step = step.min(T::lit(0.5) * w[j] / (-delta[a]));
                    }
                }
            }
            if dropped {
                break;
            }
            for (a, &j) in idx.iter().enumerate() {
                w[j] = w[j] + step * delta[a];
            }
            normalize(&mut w);
        }
        if !ok {
            continue;
        }
        // Kuhn–Tucker check for the points held at zero.
        let tails = data.left_tails(&w);
        let s = data.censored_weights(&tails).ok()?;
        let mut reactivated = false;
        for j in 0..h {
            if !active[j] && s[j] / (k * data.support[j]) > T::one() + T::lit(1e-9) {
                active[j] = true;
                w[j] = T::lit(1e-6);
                reactivated = true;
            }
        }
        if !reactivated {
            // Degenerate boundary points creep towards zero only linearly;
            // try them at exactly zero once.
            let tiny: Vec<usize> =
                (0..h).filter(|&j| active[j] && data.uncensored[j] == 0 && w[j] < T::lit(1e-6)).collect();
            if fallback.is_some() || tiny.is_empty() {
                return Some(w);
            }
            fallback = Some(w.clone());
            for j in tiny {
                active[j] = false;
            }
            continue;
        }
        normalize(&mut w);
        for _ in 0..200 {
            w = data.em_map(&w).ok()?;
        }
    }
    fallback
}

fn normalize<T: Scalar>(w: &mut [T]) {
    let total = neumaier_sum(w.iter().copied());
    for v in w.iter_mut() {
        *v = *v / total;
    }
}

/// Exhaustive maximization of the likelihood over the simplex lattice with
/// spacing `grid_step`, on at most four distinct observed values. Ties go to
/// the lexicographically smallest mass vector.
pub fn brute_force_npmle<T: Scalar>(records: &[CohortRecord<T>], grid_step: T) -> Result<MassFunction<T>> {
    let data = ObservedData::new(records)?;
    let h = data.h();
    if h > 4 {
        return Err(Error::TooManyPoints(h));
    }
    if !(grid_step > T::zero() && grid_step <= T::one()) {
        return Err(Error::InvalidInput(format!("grid step {grid_step} must lie in (0, 1]")));
    }
    let steps = (T::one() / grid_step).round().to_usize().expect("finite step count");
    let n = T::count(steps);
    let mut best = T::neg_infinity();
    let mut best_idx: Option<Vec<usize>> = None;
    let mut idx = vec![0usize; h];
    let mut w = vec![T::zero(); h];
    lattice(&data, steps, n, 0, steps, &mut idx, &mut w, &mut best, &mut best_idx);
    let idx = best_idx.ok_or(Error::NoUncensored)?;
    let masses = idx.iter().map(|&i| T::count(i) / n).collect();
    Ok(MassFunction::build(data.support.clone(), masses))
}

#[allow(clippy::too_many_arguments)]
fn lattice<T: Scalar>(
    data: &ObservedData<T>,
    steps: usize,
    n: T,
    pos: usize,
    left: usize,
    idx: &mut Vec<usize>,
    w: &mut Vec<T>,
    best: &mut T,
    best_idx: &mut Option<Vec<usize>>,
) {
    let h = idx.len();
    if pos == h - 1 {
        idx[pos] = left;
        w[pos] = T::count(left) / n;
        let ll = data.loglik(w);
        if ll > *best {
            *best = ll;
            *best_idx = Some(idx.clone());
        }
        return;
    }
    for i in 0..=left {
        idx[pos] = i;
        w[pos] = T::count(i) / n;
        lattice(data, steps, n, pos + 1, left - i, idx, w, best, best_idx);
    }
}

/// `Ŝ_U(t) = f̂(t) / f̂(0)`: survival of the unbiased law implied by `Ĝ`.
pub fn unbiased_survival<T: Scalar>(fit: &FitResult<T>) -> StepFunction<T> {
    survival_from_biased(&fit.ghat)
}

/// Incident-case survival implied by a length-biased mass function.
pub fn survival_from_biased<T: Scalar>(g: &MassFunction<T>) -> StepFunction<T> {
    let f = g.residual_step();
    let f0 = f.initial();
    f.map(|v| v / f0)
}

/// Product-limit survival curve for `(time, event)` pairs; events precede
/// censorings at tied times.
pub fn product_limit<T: Scalar>(pairs: &[(T, bool)]) -> StepFunction<T> {
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|x, y| x.0.partial_cmp(&y.0).expect("finite times"));
    let mut at_risk = sorted.len();
    let mut surv = T::one();
    let mut knots = Vec::new();
    let mut values = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let t = sorted[i].0;
        let mut events = 0;
        let mut total = 0;
        while i < sorted.len() && sorted[i].0 == t {
            events += sorted[i].1 as usize;
            total += 1;
            i += 1;
        }
        if events > 0 {
            surv = surv * (T::one() - T::count(events) / T::count(at_risk));
            knots.push(t);
            values.push(surv);
        }
        at_risk -= total;
    }
    StepFunction::new(knots, values, T::one()).expect("distinct sorted knots")
}

/// Classical product-limit estimate on `(a + v, δ)`, ignoring length bias.
pub fn km_naive<T: Scalar>(records: &[CohortRecord<T>]) -> StepFunction<T> {
    let pairs: Vec<(T, bool)> = records.iter().map(|r| (r.total(), r.delta)).collect();
    product_limit(&pairs)
}

/// Product-limit estimate of the residual censoring survival `S_C` from
/// `(v, 1 - δ)`.
pub fn censoring_survival<T: Scalar>(records: &[CohortRecord<T>]) -> StepFunction<T> {
    let pairs: Vec<(T, bool)> = records.iter().map(|r| (r.v, !r.delta)).collect();
    product_limit(&pairs)
}
