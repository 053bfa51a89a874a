//! Discretized linear operators on right-continuous step functions.
//!
//! A step function `u` with `u(0) = 0` and jumps only at grid points
//! `s_1 < ⋯ < s_N` is represented by its values `u_j = u(s_j)`; beyond `s_N`
//! it is held constant. Operators of the form
//!
//! ```text
//! 𝒪(u)(t) = c_H u(t) + c_1 ∫_{(0,t]} α du + c_2 ∫ z⁻¹ Q_t(min(z, t)) du(z),
//! Q_t(x) = ∫_0^x (1 - φ(t)/φ(y)) F_C(y) dy,
//! ```
//!
//! evaluated at the grid points are exact matrices acting on `(u_j)`.

use crate::error::{Error, Result};
use crate::linalg::{Lu, Matrix};
use crate::scalar::Scalar;

/// Condition estimates above this are reported as ill-conditioned.
pub const CONDITION_FLAG: f64 = 1e10;
/// Condition estimates above this are treated as singular.
pub const CONDITION_SINGULAR: f64 = 1e14;

/// Square coefficient table on a grid: `(𝒪u)(s_j) = Σ_l coef[j][l] u_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridOperator<T: Scalar> {
    grid: Vec<T>,
    coef: Matrix<T>,
}

/// Grid quantities defining an operator of the kernel form above.
///
/// `alpha[i] = α(s_i)`, `phi[i] = φ(s_i)`, `p1[i] = ∫_0^{s_i} F_C` and
/// `p2[i] = ∫_0^{s_i} F_C / φ`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParts<T: Scalar> {
    pub grid: Vec<T>,
    pub alpha: Vec<T>,
    pub phi: Vec<T>,
    pub p1: Vec<T>,
    pub p2: Vec<T>,
    pub c_h: T,
    pub c1: T,
    pub c2: T,
}

impl<T: Scalar> KernelParts<T> {
    /// `Q_{s_j}(s_i)` for `i ≤ j`.
    pub fn q(&self, j: usize, i: usize) -> T {
        self.p1[i] - self.phi[j] * self.p2[i]
    }
}

impl<T: Scalar> GridOperator<T> {
    pub fn new(grid: Vec<T>, coef: Matrix<T>) -> Result<Self> {
        if coef.n != grid.len() {
            return Err(Error::InvalidInput(format!("{} grid points for a {}x{} table", grid.len(), coef.n, coef.n)));
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("grid must be strictly ascending".into()));
        }
        Ok(Self { grid, coef })
    }

    pub fn identity(grid: Vec<T>) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, Matrix::identity(n))
    }

    /// Assemble the kernel operator; `O(N²)`.
    pub fn from_kernel(parts: &KernelParts<T>) -> Result<Self> {
        let n = parts.grid.len();
        for (name, v) in [("alpha", &parts.alpha), ("phi", &parts.phi), ("p1", &parts.p1), ("p2", &parts.p2)] {
            if v.len() != n {
                return Err(Error::InvalidInput(format!("{name} has {} entries, grid has {n}", v.len())));
            }
        }
        let s = &parts.grid;
        let mut coef = Matrix::zeros(n);
        let mut b = vec![T::zero(); n + 1];
        for j in 0..n {
            // B_{j,i}: response at s_j to a unit jump at s_i
            let q_jj = parts.q(j, j);
            for i in 0..n {
                b[i] = if i <= j {
                    parts.c1 * parts.alpha[i] + parts.c2 * parts.q(j, i) / s[i]
                } else {
                    parts.c2 * q_jj / s[i]
                };
            }
            b[n] = T::zero();
            for l in 0..n {
                let mut v = b[l] - b[l + 1];
                if l == j {
                    v = v + parts.c_h;
                }
                coef.set(j, l, v);
            }
        }
        Self::new(parts.grid.clone(), coef)
    }

    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn coefficients(&self) -> &Matrix<T> {
        &self.coef
    }

    pub fn apply(&self, u: &[T]) -> Vec<T> {
        self.coef.matvec(u)
    }

    /// Maximum absolute row sum: the operator norm on grid step functions.
    pub fn norm_inf(&self) -> T {
        self.coef.norm_inf()
    }

    pub fn factor(&self) -> Result<FactoredOperator<T>> {
        let lu = Lu::factor(&self.coef)?;
        let condition = lu.condition_inf();
        if !(condition.as_f64() <= CONDITION_SINGULAR) {
            return Err(Error::SingularOperator {
                condition: condition.as_f64(),
                hint: "condition estimate exceeds 1e14".into(),
            });
        }
        Ok(FactoredOperator { grid: self.grid.clone(), lu, condition, flagged: condition.as_f64() > CONDITION_FLAG })
    }
}

/// LU-factored operator ready for repeated solves.
#[derive(Debug, Clone)]
pub struct FactoredOperator<T: Scalar> {
    grid: Vec<T>,
    lu: Lu<T>,
    pub condition: T,
    /// Condition estimate above [`CONDITION_FLAG`].
    pub flagged: bool,
}

impl<T: Scalar> FactoredOperator<T> {
    pub fn grid(&self) -> &[T] {
        &self.grid
    }

    pub fn solve(&self, v: &[T]) -> Vec<T> {
        self.lu.solve(v)
    }

    /// Hager estimate of `‖𝒪⁻¹‖_∞`.
    pub fn inverse_norm_estimate(&self) -> T {
        self.lu.inverse_norm_inf()
    }

    /// Exact `‖𝒪⁻¹‖_∞` from the explicit inverse; `O(N³)`.
    pub fn inverse_norm_exact(&self) -> T {
        self.lu.inverse().norm_inf()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parts(n: usize) -> KernelParts<f64> {
        let grid: Vec<f64> = (1..=n).map(|i| i as f64 * 0.3).collect();
        // exponential censoring with rate 1 and φ(y) = e^{-y}
        let alpha = grid.iter().map(|&t| (1.0 - (-t).exp()) / t).collect();
        let phi: Vec<f64> = grid.iter().map(|&t| (-t).exp()).collect();
        let p1 = grid.iter().map(|&t| t - (1.0 - (-t).exp())).collect();
        // ∫_0^x (1 - e^{-y}) e^{y} dy on a step φ: use the exact continuous value
        let p2 = grid.iter().map(|&t| (t.exp() - 1.0) - t).collect();
        KernelParts { grid, alpha, phi, p1, p2, c_h: 0.0, c1: 1.0, c2: 1.0 }
    }

    #[test]
    fn pure_identity_when_only_c_h() {
        let mut p = parts(5);
        p.c_h = 1.0;
        p.c1 = 0.0;
        p.c2 = 0.0;
        let op = GridOperator::from_kernel(&p).unwrap();
        assert_eq!(op, GridOperator::identity(p.grid.clone()).unwrap());
    }

    #[test]
    fn alpha_term_is_a_stieltjes_sum() {
        let mut p = parts(6);
        p.c2 = 0.0;
        let op = GridOperator::from_kernel(&p).unwrap();
        let u: Vec<f64> = vec![0.1, -0.3, 0.2, 0.5, 0.5, -0.1];
        let out = op.apply(&u);
        let mut acc = 0.0;
        let mut prev = 0.0;
        for j in 0..6 {
            acc += p.alpha[j] * (u[j] - prev);
            prev = u[j];
            assert!((out[j] - acc).abs() < 1e-14);
        }
    }

    #[test]
    fn kernel_rows_match_direct_sum() {
        let p = parts(7);
        let op = GridOperator::from_kernel(&p).unwrap();
        let u: Vec<f64> = vec![0.2, 0.1, -0.4, 0.3, 0.0, 0.6, -0.2];
        let out = op.apply(&u);
        let du: Vec<f64> = (0..7).map(|i| u[i] - if i == 0 { 0.0 } else { u[i - 1] }).collect();
        for j in 0..7 {
            let mut direct = 0.0;
            for i in 0..7 {
                let m = i.min(j);
                direct += du[i] * (p.p1[m] - p.phi[j] * p.p2[m]) / p.grid[i];
                if i <= j {
                    direct += du[i] * p.alpha[i];
                }
            }
            assert!((out[j] - direct).abs() < 1e-13);
        }
    }

    #[test]
    fn factor_round_trip() {
        let p = parts(40);
        let op = GridOperator::from_kernel(&p).unwrap();
        let f = op.factor().unwrap();
        let u: Vec<f64> = (0..40).map(|i| ((i * 7) % 11) as f64 / 11.0 - 0.5).collect();
        let back = f.solve(&op.apply(&u));
        assert!(u.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-10));
        assert!(!f.flagged);
        let est = f.inverse_norm_estimate();
        let exact = f.inverse_norm_exact();
        assert!(est <= exact * (1.0 + 1e-10) && est >= exact / 3.0);
    }

    #[test]
    fn singular_table_is_rejected() {
        let grid = vec![1.0, 2.0];
        let op = GridOperator::new(grid, Matrix::from_rows(2, vec![1.0, 1.0, 1.0, 1.0]).unwrap()).unwrap();
        assert!(matches!(op.factor(), Err(Error::SingularOperator { .. })));
    }
}
