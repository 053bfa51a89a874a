//! Operator machinery for the NPMLE: the invertibility set, norm bounds,
//! the discretized master-equation operators, the exact master-equation
//! residual, Gaussian limit-process simulation and pointwise bands.
//!
//! All operators share the kernel form documented in [`crate::operator`]:
//!
//! | operator | `c_H` | `c_1` | `c_2` | `φ` |
//! |---|---|---|---|---|
//! | `ℱ_k` | `(p̂-p)/(1-p)` | `(1-p̂)/(1-p)` | `(1-p̂)/(1-p)` | `f̂` |
//! | `Υ_k` | 0 | 1 | `(1-p̂)/(1-p)` | `f̂` |
//! | `ℱ` | 0 | 1 | 1 | `f` |
//! | `Ψ` | 0 | 1 | 1 | `f`, with `F_C ≡ 1-p` |

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::distributions::{CensoringModel, LifetimeModel, TrueModels};
use crate::error::{Error, Result};
use crate::estimator::{censoring_survival, survival_from_biased, FitResult, ObservedData};
use crate::mass::{MassFunction, StepFunction};
use crate::operator::{FactoredOperator, GridOperator, KernelParts};
use crate::quadrature::integrate;
use crate::simulate::{replicate_rng, CohortRecord};

/// Default number of simulated limit paths for bands.
pub const DEFAULT_PATHS: usize = 2000;
/// Minimum operator grid size.
pub const MIN_GRID: usize = 200;
/// Scheme (iii) needs `p` above this for `Ψ` to be invertible.
pub const SCHEME_III_P: f64 = 0.59;

/// `α(t) = t⁻¹ ∫_0^t S_C`.
pub fn alpha(cens: &CensoringModel, t: f64) -> f64 {
    cens.alpha(t)
}

/// `β = F_C(0)`.
pub fn beta(cens: &CensoringModel) -> f64 {
    cens.beta()
}

fn j_factor(alpha: f64, beta: f64) -> f64 {
    2.0 / alpha - 1.0 / (1.0 - beta)
}

fn in_j_raw(alpha: f64, beta: f64) -> bool {
    beta == 0.0 || j_factor(alpha, beta) * beta < 1.0
}

/// Membership of `t` in `𝒥 = {t : (2/α(t) - 1/(1-β)) β < 1}`.
pub fn in_j(cens: &CensoringModel, t: f64) -> bool {
    in_j_raw(cens.alpha(t), cens.beta())
}

fn lambda_raw(t: f64, alpha: f64, beta: f64) -> Result<f64> {
    if !in_j_raw(alpha, beta) {
        return Err(Error::NotInJ { t, alpha, beta });
    }
    let a = j_factor(alpha, beta);
    Ok(a / (1.0 - a * beta))
}

/// `λ(t) = (2/α - 1/(1-β)) / (1 - (2/α - 1/(1-β)) β)`, the bound on `‖ℱ⁻¹‖`.
pub fn lambda_bound(cens: &CensoringModel, t: f64) -> Result<f64> {
    lambda_raw(t, cens.alpha(t), cens.beta())
}

/// `λ̂(t) = ((1-p)/(1-p̂)) λ(t)`.
pub fn lambda_hat(cens: &CensoringModel, t: f64, p: f64, p_hat: f64) -> Result<f64> {
    Ok((1.0 - p) / (1.0 - p_hat) * lambda_bound(cens, t)?)
}

/// Bound on `‖ℱ_k‖`: `|p̂-p|/(1-p) + (1-p̂)/(1-p)`.
pub fn fk_norm_bound(p: f64, p_hat: f64) -> f64 {
    ((p_hat - p).abs() + (1.0 - p_hat)) / (1.0 - p)
}

/// Bound on `‖ℱ_k⁻¹‖`: `λ̂/(1 - λ̂|p̂-p|/(1-p))`, infinite when vacuous.
pub fn fk_inverse_bound(cens: &CensoringModel, t: f64, p: f64, p_hat: f64) -> Result<f64> {
    let lh = lambda_hat(cens, t, p, p_hat)?;
    let denom = 1.0 - lh * (p_hat - p).abs() / (1.0 - p);
    Ok(if denom > 0.0 { lh / denom } else { f64::INFINITY })
}

/// Residual censoring law used inside an operator: the generating model or
/// a product-limit estimate of `S_C`.
#[derive(Debug, Clone, PartialEq)]
pub enum CensoringInput {
    Model(CensoringModel),
    Estimate(StepFunction<f64>),
}

impl CensoringInput {
    pub fn from_records(records: &[CohortRecord<f64>]) -> Self {
        Self::Estimate(censoring_survival(records))
    }

    pub fn cdf(&self, t: f64) -> f64 {
        match self {
            Self::Model(c) => c.cdf(t),
            Self::Estimate(s) => 1.0 - s.eval(t),
        }
    }

    pub fn beta(&self) -> f64 {
        self.cdf(0.0)
    }

    pub fn alpha(&self, t: f64) -> f64 {
        match self {
            Self::Model(c) => c.alpha(t),
            Self::Estimate(s) if t > 0.0 => s.integral(t) / t,
            Self::Estimate(_) => 1.0 - self.beta(),
        }
    }

    /// `∫_0^x F_C`.
    pub fn int_cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        match self {
            Self::Model(c) => x * (1.0 - c.alpha(x)),
            Self::Estimate(s) => x - s.integral(x),
        }
    }

    pub fn in_j(&self, t: f64) -> bool {
        in_j_raw(self.alpha(t), self.beta())
    }

    pub fn lambda(&self, t: f64) -> Result<f64> {
        lambda_raw(t, self.alpha(t), self.beta())
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            Self::Model(c) => c.kinks(),
            Self::Estimate(s) => s.knots().to_vec(),
        }
    }
}

/// The function `φ` in the kernel: `f̂` from a mass function or the model `f`.
#[derive(Debug, Clone, Copy)]
pub enum Phi<'a> {
    Step(&'a MassFunction<f64>),
    Model(&'a LifetimeModel),
}

impl Phi<'_> {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Step(g) => g.residual_density(t),
            Self::Model(m) => m.residual_density(t),
        }
    }
}

/// `∫_0^{s_i} F_C / φ` at every grid point, exact for step `φ`.
fn p2_on_grid(grid: &[f64], cens: &CensoringInput, phi: &Phi) -> Result<Vec<f64>> {
    let last = *grid.last().expect("non-empty grid");
    let mut cuts: Vec<f64> = match phi {
        Phi::Step(g) => g.support().iter().copied().filter(|&t| t < last).collect(),
        Phi::Model(_) => cens.breakpoints().into_iter().filter(|&t| t > 0.0 && t < last).collect(),
    };
    cuts.extend_from_slice(grid);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut out = Vec::with_capacity(grid.len());
    let mut acc = 0.0;
    let mut comp = 0.0;
    let mut prev = 0.0;
    let mut gi = 0;
    for &x in &cuts {
        if x > prev {
            let piece = match phi {
                Phi::Step(_) => {
                    let level = phi.eval(prev);
                    if !(level > 0.0) {
                        return Err(Error::InvalidInput(format!(
                            "residual density vanishes at {prev}; the grid must stay below the largest support point"
                        )));
                    }
                    (cens.int_cdf(x) - cens.int_cdf(prev)) / level
                }
                Phi::Model(_) => integrate(|y: f64| cens.cdf(y) / phi.eval(y), prev, x, 1e-14, 1e-13).value,
            };
            let y = piece - comp;
            let t = acc + y;
            comp = (t - acc) - y;
            acc = t;
            prev = x;
        }
        while gi < grid.len() && grid[gi] == x {
            out.push(acc);
            gi += 1;
        }
    }
    Ok(out)
}

/// Assemble the kernel pieces on a grid.
pub fn kernel_parts(
    grid: &[f64],
    cens: &CensoringInput,
    phi: &Phi,
    c_h: f64,
    c1: f64,
    c2: f64,
) -> Result<KernelParts<f64>> {
    if grid.is_empty() || grid[0] <= 0.0 || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput("operator grid must be positive and strictly ascending".into()));
    }
    Ok(KernelParts {
        grid: grid.to_vec(),
        alpha: grid.iter().map(|&s| cens.alpha(s)).collect(),
        phi: grid.iter().map(|&s| phi.eval(s)).collect(),
        p1: grid.iter().map(|&s| cens.int_cdf(s)).collect(),
        p2: p2_on_grid(grid, cens, phi)?,
        c_h,
        c1,
        c2,
    })
}

/// Support points up to `t_star`, with the largest gaps (including the one
/// from 0) bisected until there are at least `min_points`.
pub fn operator_grid(support: &[f64], t_star: f64, min_points: usize) -> Vec<f64> {
    let mut grid: Vec<f64> = support.iter().copied().filter(|&t| t > 0.0 && t <= t_star).collect();
    if grid.last().is_none_or(|&l| l < t_star) {
        grid.push(t_star);
    }
    while grid.len() < min_points {
        let (mut best, mut width) = (0, grid[0]);
        for i in 1..grid.len() {
            let w = grid[i] - grid[i - 1];
            if w > width {
                best = i;
                width = w;
            }
        }
        let lo = if best == 0 { 0.0 } else { grid[best - 1] };
        let mid = 0.5 * (lo + grid[best]);
        if !(mid > lo && mid < grid[best]) {
            break;
        }
        grid.insert(best, mid);
    }
    grid
}

/// Where the operator's inputs come from.
#[derive(Debug, Clone, Copy)]
pub enum OperatorMode<'a> {
    /// True `p`, `α` and `F_C` from the generating models.
    Oracle(&'a TrueModels),
    /// `p̂`, and `S_C` from the product-limit estimate on `(v, 1-δ)`.
    Plugin,
}

fn require_j(cens: &CensoringInput, t_star: f64) -> Result<()> {
    if cens.in_j(t_star) {
        Ok(())
    } else {
        Err(Error::NotInJ { t: t_star, alpha: cens.alpha(t_star), beta: cens.beta() })
    }
}

fn require_below_top(ghat: &MassFunction<f64>, t_star: f64) -> Result<()> {
    if ghat.residual_density(t_star) > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("t* = {t_star} must lie below the largest support point carrying mass")))
    }
}

/// `ℱ_k = ℋ_k + 𝒢_{k,1} + 𝒢_{k,2}` on `grid`. In plug-in mode `p = p̂`, so
/// `ℋ_k` vanishes and the result is the plug-in estimate of the limit `ℱ`.
pub fn build_fk(
    records: &[CohortRecord<f64>],
    ghat: &MassFunction<f64>,
    mode: OperatorMode,
    grid: &[f64],
) -> Result<GridOperator<f64>> {
    let data = ObservedData::new(records)?;
    let p_hat = data.p_hat();
    let t_star = *grid.last().ok_or_else(|| Error::InvalidInput("empty grid".into()))?;
    require_below_top(ghat, t_star)?;
    let (cens, p) = match mode {
        OperatorMode::Oracle(truth) => (CensoringInput::Model(truth.censoring.clone()), truth.p),
        OperatorMode::Plugin => (CensoringInput::from_records(records), p_hat),
    };
    if p >= 1.0 {
        return GridOperator::identity(grid.to_vec());
    }
    require_j(&cens, t_star)?;
    let c = (1.0 - p_hat) / (1.0 - p);
    let parts = kernel_parts(grid, &cens, &Phi::Step(ghat), (p_hat - p) / (1.0 - p), c, c)?;
    GridOperator::from_kernel(&parts)
}

/// Scheme (ii) operator `Υ_k = 𝒢_1 + 𝒢_{k,2}`.
pub fn build_upsilon_k(
    records: &[CohortRecord<f64>],
    ghat: &MassFunction<f64>,
    truth: &TrueModels,
    grid: &[f64],
) -> Result<GridOperator<f64>> {
    let data = ObservedData::new(records)?;
    let t_star = *grid.last().ok_or_else(|| Error::InvalidInput("empty grid".into()))?;
    require_below_top(ghat, t_star)?;
    if truth.p >= 1.0 {
        return GridOperator::identity(grid.to_vec());
    }
    let cens = CensoringInput::Model(truth.censoring.clone());
    require_j(&cens, t_star)?;
    let c2 = (1.0 - data.p_hat()) / (1.0 - truth.p);
    GridOperator::from_kernel(&kernel_parts(grid, &cens, &Phi::Step(ghat), 0.0, 1.0, c2)?)
}

fn check_scheme_iii(p: f64) -> Result<()> {
    if p > SCHEME_III_P && p <= 1.0 {
        Ok(())
    } else {
        Err(Error::SchemeIiiCondition(p))
    }
}

/// Scheme (iii) operator `Ψ_k = p_k I + (1 - p_k) A_f̂`.
pub fn build_psi_k(ghat: &MassFunction<f64>, p_k: f64, grid: &[f64]) -> Result<GridOperator<f64>> {
    check_scheme_iii(p_k)?;
    let t_star = *grid.last().ok_or_else(|| Error::InvalidInput("empty grid".into()))?;
    require_below_top(ghat, t_star)?;
    let cens = CensoringInput::Model(CensoringModel::Multiplicative { p: p_k, tau: None });
    GridOperator::from_kernel(&kernel_parts(grid, &cens, &Phi::Step(ghat), 0.0, 1.0, 1.0)?)
}

/// Limit operator `ℱ = 𝒢_1 + 𝒢_2` from the generating models; `Ψ` when the
/// censoring is multiplicative. The identity when `p = 1`.
pub fn build_f_limit(truth: &TrueModels, grid: &[f64]) -> Result<GridOperator<f64>> {
    if truth.p >= 1.0 {
        return GridOperator::identity(grid.to_vec());
    }
    let cens = CensoringInput::Model(truth.censoring.clone());
    let t_star = *grid.last().ok_or_else(|| Error::InvalidInput("empty grid".into()))?;
    require_j(&cens, t_star)?;
    GridOperator::from_kernel(&kernel_parts(grid, &cens, &Phi::Model(&truth.lifetime), 0.0, 1.0, 1.0)?)
}

/// Scheme (iii) limit `Ψ = pI + (1-p)A_f`; refused unless `p > 0.59`.
pub fn build_psi(lifetime: &LifetimeModel, p: f64, grid: &[f64]) -> Result<GridOperator<f64>> {
    check_scheme_iii(p)?;
    if p >= 1.0 {
        return GridOperator::identity(grid.to_vec());
    }
    let cens = CensoringInput::Model(CensoringModel::Multiplicative { p, tau: None });
    GridOperator::from_kernel(&kernel_parts(grid, &cens, &Phi::Model(lifetime), 0.0, 1.0, 1.0)?)
}

/// Both sides of the master equation `ℱ_k(U_{m,n}) = V_{m,n}` on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterSides {
    pub grid: Vec<f64>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl MasterSides {
    pub fn residual(&self) -> f64 {
        self.lhs.iter().zip(&self.rhs).fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }
}

/// Evaluate `ℱ_k(U_{m,n})` and `V_{m,n}` with the oracle-mode operator.
///
/// The left side applies the discretized `ℱ_k` to `√k Ĝ` on the grid, adds
/// the contribution of the mass of `Ĝ` beyond the grid, and subtracts the
/// image of the continuous part `√k G`, which is available in closed form:
/// `c_H √k G(t) + c √k [p G_*(t) + ∫_0^t (1 - f̂(t)/f̂(y)) F_C(y) f(y) dy]`.
///
/// `grid` defaults to every support point but the last.
pub fn master_sides(
    records: &[CohortRecord<f64>],
    ghat: &MassFunction<f64>,
    truth: &TrueModels,
    grid: Option<&[f64]>,
) -> Result<MasterSides> {
    let data = ObservedData::new(records)?;
    if ghat.support() != data.support.as_slice() {
        return Err(Error::InvalidInput("Ĝ must live on the observed support".into()));
    }
    let h = data.h();
    if h < 2 {
        return Err(Error::InvalidInput("master equation needs at least two distinct values".into()));
    }
    let grid: Vec<f64> = match grid {
        Some(g) => g.to_vec(),
        None => data.support[..h - 1].to_vec(),
    };
    let t_top = data.support[h - 1];
    if grid.last().is_none_or(|&l| l >= t_top) {
        return Err(Error::InvalidInput("grid must end below the largest observed value".into()));
    }
    let k = data.k as f64;
    let sk = k.sqrt();
    let m = data.m as f64;
    let n = data.n() as f64;
    let p_hat = data.p_hat();
    let p = truth.p;
    let g_true: Vec<f64> = grid.iter().map(|&t| truth.lifetime.length_biased_cdf(t)).collect();
    let g_m: Vec<f64> = match data.uncensored_empirical() {
        Some(e) => grid.iter().map(|&t| e.cdf(t)).collect(),
        None => vec![0.0; grid.len()],
    };
    let u: Vec<f64> = grid.iter().map(|&t| sk * ghat.cdf(t)).collect();

    if p >= 1.0 {
        let lhs = u.iter().zip(&g_true).map(|(a, g)| a - sk * g).collect();
        let rhs = g_m.iter().zip(&g_true).map(|(e, g)| sk * (e - g)).collect();
        return Ok(MasterSides { grid, lhs, rhs });
    }

    let cens = CensoringInput::Model(truth.censoring.clone());
    let c_h = (p_hat - p) / (1.0 - p);
    let c = (1.0 - p_hat) / (1.0 - p);
    let parts = kernel_parts(&grid, &cens, &Phi::Step(ghat), c_h, c, c)?;
    let op = GridOperator::from_kernel(&parts)?;
    let applied = op.apply(&u);

    let w_top = ghat.masses()[h - 1];
    let g_star = truth.g_star_cdf(&grid);
    let f_star = truth.f_star_cdf(&grid);
    let phi = &parts.phi;
    let phi0 = ghat.residual_density(0.0);

    let mut lhs = Vec::with_capacity(grid.len());
    let mut rhs = Vec::with_capacity(grid.len());
    // running sums over intervals (s_{i-1}, s_i]: Σ I2 and Σ I2 / f̂_{i-1}
    let (mut sum_i2, mut sum_i2_phi) = (0.0, 0.0);
    // running Σ (F_n - F_*)(s_i) (1/f̂(s_i) - 1/f̂(s_i⁻))
    let mut stieltjes = 0.0;
    let f_n = data.censored_empirical();
    let mut prev_fs = 0.0;
    let mut prev_phi = phi0;
    for j in 0..grid.len() {
        let i2 = (1.0 - p) * (f_star[j] - prev_fs);
        sum_i2 += i2;
        sum_i2_phi += i2 / prev_phi;
        prev_fs = f_star[j];

        let tail = c * parts.q(j, j) / t_top * sk * w_top;
        let smooth = c_h * sk * g_true[j] + c * sk * (p * g_star[j] + sum_i2 - phi[j] * sum_i2_phi);
        lhs.push(applied[j] + tail - smooth);

        let fn_j = f_n.as_ref().map_or(0.0, |e| e.cdf(grid[j]));
        stieltjes += (fn_j - f_star[j]) * (1.0 / phi[j] - 1.0 / prev_phi);
        prev_phi = phi[j];
        let w_x = m / sk * (g_m[j] - g_star[j]);
        let w_y = n / sk * phi[j] * stieltjes;
        let z = sk * (p_hat - p) * (g_star[j] - g_true[j]) / (1.0 - p);
        rhs.push(w_x + w_y + z);
    }
    Ok(MasterSides { grid, lhs, rhs })
}

/// `sup_t |ℱ_k(U_{m,n})(t) - V_{m,n}(t)|` over the observed support below
/// the largest value; round-off sized at an exact fixed point.
pub fn master_residual(records: &[CohortRecord<f64>], ghat: &MassFunction<f64>, truth: &TrueModels) -> Result<f64> {
    Ok(master_sides(records, ghat, truth, None)?.residual())
}

/// Which Gaussian limit to simulate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitScheme {
    /// `V = √p B_1(G_*) + √(1-p) f ∫ B_2(F_*) d(1/f) + √(p/(1-p)) (G_* - G) Z`.
    #[default]
    I,
    /// As (i) without the `Z` term.
    Ii,
    /// As (ii) with `(G, F)` in place of `(G_*, F_*)`.
    Iii,
}

/// Grid images driving the limit process `V`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitInputs {
    pub grid: Vec<f64>,
    /// Time change of `B_1` (`G_*`, or `G` for scheme iii).
    pub b1_time: Vec<f64>,
    /// Time change of `B_2` (`F_*`, or `F` for scheme iii).
    pub b2_time: Vec<f64>,
    /// `G` on the grid.
    pub g: Vec<f64>,
    /// `G_*` on the grid (for the `Z` term).
    pub g_star: Vec<f64>,
    /// `φ` on the grid and at 0.
    pub phi: Vec<f64>,
    pub phi0: f64,
    /// Whether `1/φ` is a step function jumping at grid points (plug-in).
    pub step_phi: bool,
    pub p: f64,
    pub scheme: LimitScheme,
}

fn running_max(v: Vec<f64>) -> Vec<f64> {
    let mut hi = 0.0f64;
    v.into_iter()
        .map(|x| {
            hi = hi.max(x);
            hi.min(1.0)
        })
        .collect()
}

impl LimitInputs {
    /// Inputs from the generating models.
    pub fn oracle(truth: &TrueModels, grid: &[f64], scheme: LimitScheme) -> Result<Self> {
        let lt = &truth.lifetime;
        let g: Vec<f64> = grid.iter().map(|&t| lt.length_biased_cdf(t)).collect();
        let (b1, b2, g_star) = match scheme {
            LimitScheme::Iii => {
                check_scheme_iii(truth.p)?;
                let f: Vec<f64> = grid.iter().map(|&t| lt.residual_cdf(t)).collect();
                (g.clone(), f, g.clone())
            }
            _ => {
                let gs = running_max(truth.g_star_cdf(grid));
                let fs = if truth.p < 1.0 { running_max(truth.f_star_cdf(grid)) } else { vec![0.0; grid.len()] };
                (gs.clone(), fs, gs)
            }
        };
        Ok(Self {
            grid: grid.to_vec(),
            b1_time: b1,
            b2_time: b2,
            g,
            g_star,
            phi: grid.iter().map(|&t| lt.residual_density(t)).collect(),
            phi0: lt.residual_density(0.0),
            step_phi: false,
            p: truth.p,
            scheme,
        })
    }

    /// Plug-in inputs: `G_m`, `F_n`, `Ĝ`, `f̂`, `p̂`.
    pub fn plugin(records: &[CohortRecord<f64>], ghat: &MassFunction<f64>, grid: &[f64], scheme: LimitScheme) -> Result<Self> {
        let data = ObservedData::new(records)?;
        let p = data.p_hat();
        let cdf_on = |e: Option<MassFunction<f64>>| -> Vec<f64> {
            match e {
                Some(e) => running_max(grid.iter().map(|&t| e.cdf(t)).collect()),
                None => vec![0.0; grid.len()],
            }
        };
        let g_m = cdf_on(data.uncensored_empirical());
        let f_n = cdf_on(data.censored_empirical());
        let g: Vec<f64> = grid.iter().map(|&t| ghat.cdf(t)).collect();
        let (b1, b2) = match scheme {
            LimitScheme::Iii => {
                check_scheme_iii(p)?;
                let f = survival_from_biased(ghat);
                // F(t) = ∫_0^t f̂ for the estimated residual law
                let phi0 = ghat.residual_density(0.0);
                let fcdf = f.cumulative_integral(grid).into_iter().map(|x| (x * phi0).min(1.0)).collect();
                (g.clone(), fcdf)
            }
            _ => (g_m.clone(), f_n),
        };
        Ok(Self {
            grid: grid.to_vec(),
            b1_time: b1,
            b2_time: b2,
            g,
            g_star: g_m,
            phi: grid.iter().map(|&t| ghat.residual_density(t)).collect(),
            phi0: ghat.residual_density(0.0),
            step_phi: true,
            p,
            scheme,
        })
    }

    fn z_coef(&self, j: usize) -> f64 {
        if self.scheme != LimitScheme::I || self.p >= 1.0 {
            return 0.0;
        }
        (self.p / (1.0 - self.p)).sqrt() * (self.g_star[j] - self.g[j])
    }

    // coefficients λ_i of B_2(b2_time[i]) in the V-value at grid point j
    fn b2_coefs(&self, j: usize) -> Vec<f64> {
        let scale = (1.0 - self.p).max(0.0).sqrt() * self.phi[j];
        let inv = |i: usize| if i == 0 { 1.0 / self.phi0 } else { 1.0 / self.phi[i - 1] };
        let delta = |i: usize| 1.0 / self.phi[i] - inv(i);
        (0..=j)
            .map(|i| {
                if self.step_phi {
                    scale * delta(i)
                } else if i < j {
                    scale * 0.5 * (delta(i) + delta(i + 1))
                } else {
                    scale * 0.5 * delta(i)
                }
            })
            .collect()
    }

    /// One draw of `V` on the grid.
    pub fn draw_v<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let b1 = brownian_bridge(&self.b1_time, rng);
        let b2 = brownian_bridge(&self.b2_time, rng);
        let z: f64 = rng.sample(StandardNormal);
        let sp = self.p.sqrt();
        let sq = (1.0 - self.p).max(0.0).sqrt();
        let n = self.grid.len();
        let mut out = Vec::with_capacity(n);
        let mut integral = 0.0;
        let mut prev_b2 = 0.0;
        let mut prev_inv = 1.0 / self.phi0;
        for j in 0..n {
            let inv = 1.0 / self.phi[j];
            let level = if self.step_phi { b2[j] } else { 0.5 * (prev_b2 + b2[j]) };
            integral += level * (inv - prev_inv);
            prev_inv = inv;
            prev_b2 = b2[j];
            out.push(sp * b1[j] + sq * self.phi[j] * integral + self.z_coef(j) * z);
        }
        out
    }

    /// Exact variance of the discretized `V` at every grid point.
    pub fn v_variance(&self) -> Vec<f64> {
        let n = self.grid.len();
        (0..n)
            .map(|j| {
                let a = self.b1_time[j];
                let b1 = self.p * a * (1.0 - a);
                let lam = self.b2_coefs(j);
                let b = &self.b2_time;
                // Σ λ_i B(b_i) = Σ_r (Λ_r - L) ΔW_r - L ΔW_tail
                let big_l: f64 = lam.iter().zip(b).map(|(l, x)| l * x).sum();
                let mut suffix = 0.0;
                let mut var = 0.0;
                for r in (0..=j).rev() {
                    suffix += lam[r];
                    let width = b[r] - if r == 0 { 0.0 } else { b[r - 1] };
                    var += (suffix - big_l).powi(2) * width;
                }
                var += big_l * big_l * (1.0 - b[j]);
                b1 + var + self.z_coef(j).powi(2)
            })
            .collect()
    }
}

/// Brownian bridge at non-decreasing times in `[0, 1]`.
pub fn brownian_bridge<R: Rng + ?Sized>(times: &[f64], rng: &mut R) -> Vec<f64> {
    let mut w = Vec::with_capacity(times.len());
    let mut acc = 0.0;
    let mut prev = 0.0;
    for &t in times {
        let dt = (t - prev).max(0.0);
        let z: f64 = rng.sample(StandardNormal);
        acc += dt.sqrt() * z;
        w.push(acc);
        prev = t.max(prev);
    }
    let z: f64 = rng.sample(StandardNormal);
    let w1 = acc + (1.0 - prev).max(0.0).sqrt() * z;
    w.iter().zip(times).map(|(x, t)| x - t * w1).collect()
}

/// Simulated limit paths `U = 𝒪⁻¹(V)`, one row per path.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitPaths {
    pub grid: Vec<f64>,
    pub u: Vec<Vec<f64>>,
}

/// Draw `V` paths; path `i` uses stream `i` of `seed`.
pub fn simulate_v(inputs: &LimitInputs, paths: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..paths)
        .into_par_iter()
        .map(|i| inputs.draw_v(&mut replicate_rng(seed, i as u64)))
        .collect()
}

/// Solve `𝒪 U = V` for simulated `V` paths. Scheme (iii) is refused
/// unless `p > 0.59`.
pub fn simulate_limit(op: &FactoredOperator<f64>, inputs: &LimitInputs, paths: usize, seed: u64) -> Result<LimitPaths> {
    if inputs.scheme == LimitScheme::Iii {
        check_scheme_iii(inputs.p)?;
    }
    if op.grid() != inputs.grid.as_slice() {
        return Err(Error::InvalidInput("operator and limit inputs use different grids".into()));
    }
    let u = (0..paths)
        .into_par_iter()
        .map(|i| op.solve(&inputs.draw_v(&mut replicate_rng(seed, i as u64))))
        .collect();
    Ok(LimitPaths { grid: inputs.grid.clone(), u })
}

/// Type-7 quantile of an ascending sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pointwise summary of simulated `U` paths.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitLaw {
    pub grid: Vec<f64>,
    pub sd: Vec<f64>,
    pub paths: LimitPaths,
}

impl LimitLaw {
    pub fn new(paths: LimitPaths) -> Self {
        let np = paths.u.len() as f64;
        let sd = (0..paths.grid.len())
            .map(|j| {
                let mean = paths.u.iter().map(|u| u[j]).sum::<f64>() / np;
                (paths.u.iter().map(|u| (u[j] - mean).powi(2)).sum::<f64>() / (np - 1.0)).sqrt()
            })
            .collect();
        Self { grid: paths.grid.clone(), sd, paths }
    }

    /// Quantile of `|U(s_j)|` at `level`.
    pub fn abs_quantile(&self, j: usize, level: f64) -> f64 {
        let mut v: Vec<f64> = self.paths.u.iter().map(|u| u[j].abs()).collect();
        v.sort_by(f64::total_cmp);
        quantile_sorted(&v, level)
    }

    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.grid.iter().position(|&s| s == t)
    }
}

/// A true-`G` quantile grid on `(0, t_star]` with `n` points, always
/// containing the `G`-median when it lies below `t_star`.
pub fn limit_grid(lifetime: &LifetimeModel, t_star: f64, n: usize) -> Vec<f64> {
    let top = lifetime.length_biased_cdf(t_star);
    let mut grid: Vec<f64> = (1..n).map(|i| lifetime.length_biased_quantile(top * i as f64 / n as f64)).collect();
    grid.push(t_star);
    let median = lifetime.length_biased_quantile(0.5);
    if median < t_star {
        grid.push(median);
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid.retain(|&t| t > 0.0);
    grid
}

/// Data-independent oracle-mode law of `U`.
pub fn oracle_limit_law(
    truth: &TrueModels,
    grid: &[f64],
    scheme: LimitScheme,
    paths: usize,
    seed: u64,
) -> Result<LimitLaw> {
    let op = match scheme {
        LimitScheme::Iii => build_psi(&truth.lifetime, truth.p, grid)?,
        _ => build_f_limit(truth, grid)?,
    };
    let inputs = LimitInputs::oracle(truth, grid, scheme)?;
    let fop = op.factor()?;
    Ok(LimitLaw::new(simulate_limit(&fop, &inputs, paths, seed)?))
}

/// Plug-in law of `U` for one cohort.
pub fn plugin_limit_law(
    records: &[CohortRecord<f64>],
    ghat: &MassFunction<f64>,
    grid: &[f64],
    scheme: LimitScheme,
    paths: usize,
    seed: u64,
) -> Result<LimitLaw> {
    let hint = |e: Error| match e {
        Error::SingularOperator { condition, .. } => Error::SingularOperator {
            condition,
            hint: "plug-in operator is not invertible; use oracle mode or a larger cohort".into(),
        },
        other => other,
    };
    let op = match scheme {
        LimitScheme::Iii => {
            let data = ObservedData::new(records)?;
            build_psi_k(ghat, data.p_hat(), grid)?
        }
        _ => build_fk(records, ghat, OperatorMode::Plugin, grid)?,
    };
    let fop = op.factor().map_err(hint)?;
    let inputs = LimitInputs::plugin(records, ghat, grid, scheme)?;
    Ok(LimitLaw::new(simulate_limit(&fop, &inputs, paths, seed)?))
}

/// Pointwise confidence limits for `Ĝ` and `Ŝ_U`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandResult {
    pub grid: Vec<f64>,
    pub g: Vec<f64>,
    pub se: Vec<f64>,
    pub lo_g: Vec<f64>,
    pub hi_g: Vec<f64>,
    pub s_u: Vec<f64>,
    pub lo_s: Vec<f64>,
    pub hi_s: Vec<f64>,
    pub level: f64,
    pub paths: usize,
}

/// How the limit law is obtained.
#[derive(Debug, Clone, Copy)]
pub enum BandMode<'a> {
    Oracle { truth: &'a TrueModels, scheme: LimitScheme },
    Plugin { scheme: LimitScheme },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandConfig {
    pub level: f64,
    pub paths: usize,
    pub seed: u64,
    /// Upper end of the band; defaults to the `Ĝ` 0.9-quantile.
    pub t_star: Option<f64>,
    /// Grid size for oracle mode, minimum grid size for plug-in mode.
    pub grid_points: usize,
}

impl Default for BandConfig {
    fn default() -> Self {
        Self { level: 0.95, paths: DEFAULT_PATHS, seed: 0, t_star: None, grid_points: 400 }
    }
}

fn default_t_star(ghat: &MassFunction<f64>) -> f64 {
    let h = ghat.len();
    let q = ghat.support().iter().zip(ghat.masses()).scan(0.0, |acc, (&t, &w)| {
        *acc += w;
        Some((t, *acc))
    });
    let mut t = ghat.support()[0];
    for (s, c) in q {
        t = s;
        if c >= 0.9 {
            break;
        }
    }
    // stay strictly below the top support point
    if h >= 2 && t >= ghat.support()[h - 1] {
        t = ghat.support()[h - 2];
    }
    t
}

/// Turn a law of `U` into pointwise bands around `Ĝ` for a sample of size `k`.
pub fn band_from_law(ghat: &MassFunction<f64>, k: usize, law: &LimitLaw, level: f64) -> Result<BandResult> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!("level {level} must lie in (0, 1)")));
    }
    let sk = (k as f64).sqrt();
    let grid = law.grid.clone();
    let n = grid.len();
    let g: Vec<f64> = grid.iter().map(|&t| ghat.cdf(t)).collect();
    let s_hat = survival_from_biased(ghat);
    let s_u: Vec<f64> = grid.iter().map(|&t| s_hat.eval(t)).collect();
    let mut se = Vec::with_capacity(n);
    let mut lo_g = Vec::with_capacity(n);
    let mut hi_g = Vec::with_capacity(n);
    for j in 0..n {
        let q = law.abs_quantile(j, level) / sk;
        se.push(law.sd[j] / sk);
        lo_g.push((g[j] - q).clamp(0.0, 1.0));
        hi_g.push((g[j] + q).clamp(0.0, 1.0));
    }
    // push each perturbed Ĝ + U/√k through the unbias transform:
    // f̃(t) = f̂(t) + k^{-1/2} Σ_{s_i > t} ΔU_i / s_i
    let f_hat: Vec<f64> = grid.iter().map(|&t| ghat.residual_density(t)).collect();
    let f0 = ghat.residual_density(0.0);
    let diffs: Vec<Vec<f64>> = law
        .paths
        .u
        .par_iter()
        .map(|u| {
            let mut tail = vec![0.0; n + 1];
            for i in (0..n).rev() {
                let du = u[i] - if i == 0 { 0.0 } else { u[i - 1] };
                tail[i] = tail[i + 1] + du / grid[i];
            }
            let f0_t = f0 + tail[0] / sk;
            (0..n).map(|j| (f_hat[j] + tail[j + 1] / sk) / f0_t - s_u[j]).collect()
        })
        .collect();
    let mut lo_s = Vec::with_capacity(n);
    let mut hi_s = Vec::with_capacity(n);
    let gamma = 1.0 - level;
    for j in 0..n {
        let mut d: Vec<f64> = diffs.iter().map(|row| row[j]).collect();
        d.sort_by(f64::total_cmp);
        let lo = (s_u[j] + quantile_sorted(&d, gamma / 2.0)).clamp(0.0, 1.0).min(s_u[j]);
        let hi = (s_u[j] + quantile_sorted(&d, 1.0 - gamma / 2.0)).clamp(0.0, 1.0).max(s_u[j]);
        lo_s.push(lo);
        hi_s.push(hi);
    }
    Ok(BandResult { grid, g, se, lo_g, hi_g, s_u, lo_s, hi_s, level, paths: law.paths.u.len() })
}

/// Pointwise bands `Ĝ ± q_{1-γ}(|U|)/√k` and the push-forward band for `Ŝ_U`.
pub fn confidence_band(
    fit: &FitResult<f64>,
    records: &[CohortRecord<f64>],
    mode: BandMode,
    config: &BandConfig,
) -> Result<BandResult> {
    band_for_estimate(&fit.ghat, records, mode, config)
}

/// [`confidence_band`] for an estimate read back from disk.
pub fn band_for_estimate(
    ghat: &MassFunction<f64>,
    records: &[CohortRecord<f64>],
    mode: BandMode,
    config: &BandConfig,
) -> Result<BandResult> {
    let t_star = config.t_star.unwrap_or_else(|| default_t_star(ghat));
    let law = match mode {
        BandMode::Oracle { truth, scheme } => {
            let grid = limit_grid(&truth.lifetime, t_star, config.grid_points);
            oracle_limit_law(truth, &grid, scheme, config.paths, config.seed)?
        }
        BandMode::Plugin { scheme } => {
            require_below_top(ghat, t_star)?;
            let grid = operator_grid(ghat.support(), t_star, config.grid_points.max(MIN_GRID));
            plugin_limit_law(records, ghat, &grid, scheme, config.paths, config.seed)?
        }
    };
    band_from_law(ghat, records.len(), &law, config.level)
}
