//! Dense LU factorization with partial pivoting and Hager's estimator for
//! the norm of the inverse.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T: Scalar> {
    pub n: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![T::zero(); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn from_rows(n: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::InvalidInput(format!("{} entries for a {n}x{n} matrix", data.len())));
        }
        Ok(Self { n, data })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        (0..self.n).map(|i| self.row(i).iter().zip(x).map(|(&a, &b)| a * b).sum()).collect()
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> T {
        (0..self.n)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> T {
        (0..self.n)
            .map(|j| (0..self.n).map(|i| self.get(i, j).abs()).sum::<T>())
            .fold(T::zero(), T::max)
    }
}

/// `PA = LU` with unit lower-triangular `L`.
#[derive(Debug, Clone)]
pub struct Lu<T: Scalar> {
    n: usize,
    lu: Vec<T>,
    perm: Vec<usize>,
    norm_inf: T,
    norm_1: T,
}

impl<T: Scalar> Lu<T> {
    pub fn factor(a: &Matrix<T>) -> Result<Self> {
        let n = a.n;
        let norm_inf = a.norm_inf();
        let norm_1 = a.norm_1();
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, best) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -T::one()), |acc, x| if x.1 > acc.1 { x } else { acc });
            if !(best > T::zero()) || !best.is_finite() {
                return Err(Error::SingularOperator {
                    condition: f64::INFINITY,
                    hint: format!("zero pivot in column {k}"),
                });
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            for i in k + 1..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                if factor != T::zero() {
                    for j in k + 1..n {
                        lu[i * n + j] = lu[i * n + j] - factor * lu[k * n + j];
                    }
                }
            }
        }
        Ok(Self { n, lu, perm, norm_inf, norm_1 })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s = s - self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s = s - self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        x
    }

    /// Solve `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        // Aᵀ = Uᵀ Lᵀ P
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for j in 0..i {
                s = s - self.lu[j * n + i] * y[j];
            }
            y[i] = s / self.lu[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in i + 1..n {
                s = s - self.lu[j * n + i] * y[j];
            }
            y[i] = s;
        }
        let mut x = vec![T::zero(); n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }

    /// Hager's lower estimate of `‖B‖_1` given products with `B` and `Bᵀ`.
    fn hager(&self, apply: impl Fn(&[T]) -> Vec<T>, apply_t: impl Fn(&[T]) -> Vec<T>) -> T {
        let n = self.n;
        if n == 0 {
            return T::zero();
        }
        let mut x = vec![T::one() / T::count(n); n];
        let mut est = T::zero();
        for _ in 0..5 {
            let y = apply(&x);
            let norm: T = y.iter().map(|v| v.abs()).sum();
            if norm <= est {
                break;
            }
            est = norm;
            let s: Vec<T> = y.iter().map(|&v| if v >= T::zero() { T::one() } else { -T::one() }).collect();
            let z = apply_t(&s);
            let (jmax, zmax) = z
                .iter()
                .enumerate()
                .map(|(j, v)| (j, v.abs()))
                .fold((0, -T::one()), |acc, x| if x.1 > acc.1 { x } else { acc });
            let ztx: T = z.iter().zip(&x).map(|(&a, &b)| a * b).sum();
            if zmax <= ztx {
                break;
            }
            x = vec![T::zero(); n];
            x[jmax] = T::one();
        }
        // alternating-sign probe guards against the classic failure cases
        let alt: Vec<T> = (0..n)
            .map(|i| {
                let sign = if i % 2 == 0 { T::one() } else { -T::one() };
                sign * (T::one() + T::count(i) / T::count(n.max(2) - 1))
            })
            .collect();
        let y = apply(&alt);
        let alt_est = T::lit(2.0) * y.iter().map(|v| v.abs()).sum::<T>() / (T::lit(3.0) * T::count(n));
        est.max(alt_est)
    }

    /// Estimate of `‖A⁻¹‖_∞` (maximum absolute row sum of the inverse).
    pub fn inverse_norm_inf(&self) -> T {
        // ‖A⁻¹‖_∞ = ‖A⁻ᵀ‖_1
        self.hager(|x| self.solve_transpose(x), |x| self.solve(x))
    }

    /// Estimate of `‖A⁻¹‖_1`.
    pub fn inverse_norm_1(&self) -> T {
        self.hager(|x| self.solve(x), |x| self.solve_transpose(x))
    }

    /// `∞`-norm condition number estimate.
    pub fn condition_inf(&self) -> T {
        self.norm_inf * self.inverse_norm_inf()
    }

    /// Explicit inverse, column by column.
    pub fn inverse(&self) -> Matrix<T> {
        let n = self.n;
        let mut inv = Matrix::zeros(n);
        for j in 0..n {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv.set(i, j, col[i]);
            }
        }
        inv
    }

    pub fn norm_1(&self) -> T {
        self.norm_1
    }
}
