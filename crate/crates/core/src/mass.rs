//! Discrete distributions on the positive half-line and right-continuous
//! step functions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{neumaier_sum, Scalar};

/// A discrete distribution: strictly ascending positive support points
/// carrying non-negative masses that sum to one.
///
/// Zero masses are allowed so that an estimate keeps the full observed
/// support even when the maximizer sits on the boundary of the simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMass<T>", into = "RawMass<T>")]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct MassFunction<T: Scalar> {
    support: Vec<T>,
    masses: Vec<T>,
    // cumulative masses, cum[j] = Σ_{i ≤ j} masses[i]
    cum: Vec<T>,
    // tail[j] = Σ_{i ≥ j} masses[i] / support[i]
    tail: Vec<T>,
}

#[derive(Serialize, Deserialize)]
struct RawMass<T> {
    support: Vec<T>,
    masses: Vec<T>,
}

impl<T: Scalar> TryFrom<RawMass<T>> for MassFunction<T> {
    type Error = Error;
    fn try_from(raw: RawMass<T>) -> Result<Self> {
        MassFunction::new(raw.support, raw.masses)
    }
}

impl<T: Scalar> From<MassFunction<T>> for RawMass<T> {
    fn from(m: MassFunction<T>) -> Self {
        RawMass { support: m.support, masses: m.masses }
    }
}

/// Tolerance on `Σ masses = 1`.
pub fn normalization_tolerance<T: Scalar>(n: usize) -> T {
    T::lit(1e-12).max(T::epsilon() * T::count(8 * n.max(1)))
}

impl<T: Scalar> MassFunction<T> {
    pub fn new(support: Vec<T>, masses: Vec<T>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidMass("empty support".into()));
        }
        if support.len() != masses.len() {
            return Err(Error::InvalidMass(format!(
                "{} support points but {} masses",
                support.len(),
                masses.len()
            )));
        }
        if !support.iter().all(|t| t.is_finite() && *t > T::zero()) {
            return Err(Error::InvalidMass("support points must be finite and > 0".into()));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidMass("support must be strictly ascending".into()));
        }
        if !masses.iter().all(|w| w.is_finite() && *w >= T::zero()) {
            return Err(Error::InvalidMass("masses must be finite and non-negative".into()));
        }
        let total = neumaier_sum(masses.iter().copied());
        if (total - T::one()).abs() > normalization_tolerance::<T>(masses.len()) {
            return Err(Error::InvalidMass(format!("masses sum to {total}, not 1")));
        }
        Ok(Self::build(support, masses))
    }

    /// Normalize non-negative weights into a mass function.
    pub fn from_weights(support: Vec<T>, weights: Vec<T>) -> Result<Self> {
        let total = neumaier_sum(weights.iter().copied());
        if !(total > T::zero()) || !total.is_finite() {
            return Err(Error::InvalidMass(format!("weights sum to {total}")));
        }
        let masses = weights.into_iter().map(|w| w / total).collect();
        Self::new(support, masses)
    }

    pub fn point_mass(t: T) -> Result<Self> {
        Self::new(vec![t], vec![T::one()])
    }

    /// Uniform masses over the given support.
    pub fn uniform(support: Vec<T>) -> Result<Self> {
        let n = T::count(support.len());
        let masses = vec![T::one() / n; support.len()];
        Self::from_weights(support, masses)
    }

    // Caller guarantees the invariants.
    pub(crate) fn build(support: Vec<T>, masses: Vec<T>) -> Self {
        let mut cum = Vec::with_capacity(masses.len());
        let mut acc = T::zero();
        for &w in &masses {
            acc = acc + w;
            cum.push(acc);
        }
        let mut tail = vec![T::zero(); masses.len()];
        let mut acc = T::zero();
        for j in (0..masses.len()).rev() {
            acc = acc + masses[j] / support[j];
            tail[j] = acc;
        }
        Self { support, masses, cum, tail }
    }

    pub fn support(&self) -> &[T] {
        &self.support
    }

    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    // Number of support points ≤ t.
    fn count_le(&self, t: T) -> usize {
        self.support.partition_point(|&s| s <= t)
    }

    // Number of support points < t.
    fn count_lt(&self, t: T) -> usize {
        self.support.partition_point(|&s| s < t)
    }

    /// `G(t) = Σ_{t_j ≤ t} w_j`.
    pub fn cdf(&self, t: T) -> T {
        match self.count_le(t) {
            0 => T::zero(),
            n => self.cum[n - 1],
        }
    }

    /// `G(t⁻) = Σ_{t_j < t} w_j`.
    pub fn cdf_left(&self, t: T) -> T {
        match self.count_lt(t) {
            0 => T::zero(),
            n => self.cum[n - 1],
        }
    }

    /// Residual lifetime density `f(t) = Σ_{t_j > t} w_j / t_j`; right-continuous
    /// and non-increasing.
    pub fn residual_density(&self, t: T) -> T {
        let n = self.count_le(t);
        self.tail.get(n).copied().unwrap_or_else(T::zero)
    }

    /// Left limit `f(t⁻) = Σ_{t_j ≥ t} w_j / t_j`.
    pub fn residual_density_left(&self, t: T) -> T {
        let n = self.count_lt(t);
        self.tail.get(n).copied().unwrap_or_else(T::zero)
    }

    /// Mass carried by the support point `t` (zero off the support).
    pub fn mass_at(&self, t: T) -> T {
        match self.support.binary_search_by(|s| s.partial_cmp(&t).expect("finite support")) {
            Ok(i) => self.masses[i],
            Err(_) => T::zero(),
        }
    }

    pub fn mean(&self) -> T {
        neumaier_sum(self.support.iter().zip(&self.masses).map(|(&t, &w)| t * w))
    }

    /// Undo length bias: masses proportional to `w_j / t_j`.
    pub fn unbias(&self) -> Self {
        let w: Vec<T> = self.support.iter().zip(&self.masses).map(|(&t, &w)| w / t).collect();
        Self::from_weights(self.support.clone(), w).expect("positive support keeps weights valid")
    }

    /// Apply length bias: masses proportional to `w_j t_j`.
    pub fn bias(&self) -> Self {
        let w: Vec<T> = self.support.iter().zip(&self.masses).map(|(&t, &w)| w * t).collect();
        Self::from_weights(self.support.clone(), w).expect("positive support keeps weights valid")
    }

    /// Distribution function as a step function.
    pub fn cdf_step(&self) -> StepFunction<T> {
        StepFunction::new(self.support.clone(), self.cum.clone(), T::zero())
            .expect("support strictly ascending")
    }

    /// Survival function `1 - G` as a step function.
    pub fn survival_step(&self) -> StepFunction<T> {
        let vals = self.cum.iter().map(|&c| (T::one() - c).max(T::zero())).collect();
        StepFunction::new(self.support.clone(), vals, T::one()).expect("support strictly ascending")
    }

    /// Residual density as a step function.
    pub fn residual_step(&self) -> StepFunction<T> {
        let vals = (0..self.len()).map(|j| self.tail.get(j + 1).copied().unwrap_or_else(T::zero)).collect();
        StepFunction::new(self.support.clone(), vals, self.tail[0]).expect("support strictly ascending")
    }

    /// Sup-norm distance between mass vectors on an identical support.
    pub fn sup_distance(&self, other: &Self) -> Option<T> {
        if self.support != other.support {
            return None;
        }
        Some(
            self.masses
                .iter()
                .zip(&other.masses)
                .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs())),
        )
    }
}

/// A right-continuous step function on `[0, ∞)`: `initial` before the first
/// knot, `values[i]` on `[knots[i], knots[i + 1])`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFunction<T: Scalar> {
    knots: Vec<T>,
    values: Vec<T>,
    initial: T,
}

impl<T: Scalar> StepFunction<T> {
    pub fn new(knots: Vec<T>, values: Vec<T>, initial: T) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(Error::InvalidInput("knot/value length mismatch".into()));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("step knots must be strictly ascending".into()));
        }
        Ok(Self { knots, values, initial })
    }

    pub fn constant(value: T) -> Self {
        Self { knots: Vec::new(), values: Vec::new(), initial: value }
    }

    pub fn knots(&self) -> &[T] {
        &self.knots
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn initial(&self) -> T {
        self.initial
    }

    pub fn eval(&self, t: T) -> T {
        match self.knots.partition_point(|&k| k <= t) {
            0 => self.initial,
            n => self.values[n - 1],
        }
    }

    pub fn eval_left(&self, t: T) -> T {
        match self.knots.partition_point(|&k| k < t) {
            0 => self.initial,
            n => self.values[n - 1],
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            knots: self.knots.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            initial: f(self.initial),
        }
    }

    /// `∫_0^x s(y) dy`, exact.
    pub fn integral(&self, x: T) -> T {
        let mut acc = T::zero();
        let mut left = T::zero();
        let mut level = self.initial;
        for (&k, &v) in self.knots.iter().zip(&self.values) {
            if k >= x {
                break;
            }
            if k > left {
                acc = acc + level * (k - left);
                left = k;
            }
            level = v;
        }
        if x > left {
            acc = acc + level * (x - left);
        }
        acc
    }

    /// Running integrals `∫_0^{x_i} s(y) dy` at ascending points, exact.
    pub fn cumulative_integral(&self, points: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(points.len());
        let mut acc = T::zero();
        let mut pos = T::zero();
        let mut idx = 0;
        for &x in points {
            while idx < self.knots.len() && self.knots[idx] <= x {
                let k = self.knots[idx];
                if k > pos {
                    acc = acc + self.eval_left(k) * (k - pos);
                    pos = k;
                }
                idx += 1;
            }
            if x > pos {
                acc = acc + self.eval(pos) * (x - pos);
                pos = x;
            }
            out.push(acc);
        }
        out
    }

    /// Smallest knot at which the function drops to `level` or below, for a
    /// non-increasing function (e.g. the median of a survival curve at 0.5).
    pub fn first_crossing_below(&self, level: T) -> Option<T> {
        if self.initial <= level {
            return Some(T::zero());
        }
        self.knots.iter().zip(&self.values).find(|(_, &v)| v <= level).map(|(&k, _)| k)
    }
}
