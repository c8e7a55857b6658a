//! Choosing the mixture variance, and the asymptotic power and runtime
//! quantities that compare a truncated mSPRT with a fixed-horizon test.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numeric::{integrate, norm_pdf, norm_quantile, norm_sf, QuadOptions};

/// Normal prior `θ ~ N(0, variance)` over the true effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub variance: f64,
}

impl PriorSpec {
    pub fn new(variance: f64) -> Result<Self> {
        if !(variance.is_finite() && variance > 0.0) {
            return Err(invalid(format!("prior variance must be finite and > 0, got {variance}")));
        }
        Ok(Self { variance })
    }

    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Type I level and horizon that define the region `A = {θ : I(θ) ≥ ln(1/α)/n}`
/// of effects large enough to be detected before truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationSet {
    pub alpha: f64,
    pub horizon_n: u64,
}

impl TruncationSet {
    pub fn new(alpha: f64, horizon_n: u64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if horizon_n == 0 {
            return Err(invalid("horizon must be >= 1"));
        }
        Ok(Self { alpha, horizon_n })
    }

    /// `ln(1/α)/n`, the information threshold defining `A`.
    pub fn info_threshold(&self) -> f64 {
        -self.alpha.ln() / self.horizon_n as f64
    }

    /// Boundary `δ = sqrt(2 ln(1/α)/n)` of `A` for unit-variance normal data.
    pub fn delta(&self) -> f64 {
        (2.0 * self.info_threshold()).sqrt()
    }
}

/// One-parameter exponential family, described by its log-partition function
/// and its KL divergence to the null `I(θ) = θΨ'(θ) − Ψ(θ)`.
pub struct ExpFamilySpec {
    pub log_partition: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    pub kl_to_null: Box<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl ExpFamilySpec {
    /// `N(θ, 1)`: `Ψ(θ) = θ²/2`, `I(θ) = θ²/2`.
    pub fn normal_unit_variance() -> Self {
        Self { log_partition: Box::new(|t| 0.5 * t * t), kl_to_null: Box::new(|t| 0.5 * t * t) }
    }

    fn kl(&self, theta: f64) -> f64 {
        (self.kl_to_null)(theta)
    }

    /// Boundary of `A` on the positive (`sign = 1`) or negative side, found by
    /// bisection on the monotone branch of `I`. `None` if `A` misses that side
    /// within `limit`.
    fn boundary(&self, threshold: f64, sign: f64, limit: f64) -> Option<f64> {
        if self.kl(sign * limit) < threshold {
            return None;
        }
        let (mut lo, mut hi) = (0.0, limit);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.kl(sign * mid) >= threshold {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    }
}

/// Prior over effects for the general mixture objective.
pub enum EffectPrior {
    /// Density with an effective support half-width (integration is cut off there).
    Density { density: Box<dyn Fn(f64) -> f64 + Send + Sync>, half_width: f64 },
    /// Discrete prior; weights need not sum to one.
    Atoms(Vec<(f64, f64)>),
}

impl EffectPrior {
    /// `N(0, variance)`, integrated over ±8 standard deviations.
    pub fn normal(prior: PriorSpec) -> Self {
        let sd = prior.sd();
        EffectPrior::Density { density: Box::new(move |t| norm_pdf(t / sd) / sd), half_width: 8.0 * sd }
    }

    pub fn point(theta: f64) -> Self {
        EffectPrior::Atoms(vec![(theta, 1.0)])
    }
}

/// Parametric mixture family `h_γ`, given by its log density.
pub struct MixtureFamily {
    pub log_density: Box<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl MixtureFamily {
    /// Zero-centred normals parameterised by their variance `γ = τ²`.
    pub fn normal_by_variance() -> Self {
        Self {
            log_density: Box::new(|tau_sq, t| {
                -0.5 * (2.0 * std::f64::consts::PI * tau_sq).ln() - t * t / (2.0 * tau_sq)
            }),
        }
    }
}

/// Value of `−E_G[1_A I(θ)⁻¹ log h_γ(θ)]`.
pub fn mixture_objective(
    prior: &EffectPrior,
    family: &ExpFamilySpec,
    mixture: &MixtureFamily,
    trunc: &TruncationSet,
    gamma: f64,
) -> Result<f64> {
    let threshold = trunc.info_threshold();
    let integrand = |t: f64| -(mixture.log_density)(gamma, t) / family.kl(t);
    match prior {
        EffectPrior::Atoms(atoms) => {
            Ok(atoms.iter().filter(|(t, _)| family.kl(*t) >= threshold).map(|&(t, w)| w * integrand(t)).sum())
        }
        EffectPrior::Density { density, half_width } => {
            let opts = QuadOptions { abs_tol: 1e-12, rel_tol: 1e-10, max_segments: 4000 };
            let mut total = 0.0;
            for sign in [1.0, -1.0] {
                if let Some(edge) = family.boundary(threshold, sign, *half_width) {
                    let (a, b) = if sign > 0.0 { (edge, *half_width) } else { (-half_width, -edge) };
                    total += integrate(|t| density(t) * integrand(t), a, b, opts)?.value;
                }
            }
            Ok(total)
        }
    }
}

/// Outcome of the general mixture search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureOptimum {
    /// Grid point with the smallest objective (ties go to the smaller γ).
    pub grid_argmin: f64,
    pub grid_index: usize,
    /// Golden-section refinement between the argmin's grid neighbours.
    pub refined: f64,
    pub objective: Vec<f64>,
}

/// Minimises the asymptotic runtime objective over a γ grid, then refines
/// the grid minimum by golden-section search in `ln γ`.
pub fn optimal_mixture_general(
    prior: &EffectPrior,
    family: &ExpFamilySpec,
    mixture: &MixtureFamily,
    trunc: &TruncationSet,
    gamma_grid: &[f64],
) -> Result<MixtureOptimum> {
    if gamma_grid.is_empty() {
        return Err(invalid("gamma grid is empty"));
    }
    let objective =
        gamma_grid.iter().map(|&g| mixture_objective(prior, family, mixture, trunc, g)).collect::<Result<Vec<_>>>()?;
    let mut best: Option<usize> = None;
    for (i, v) in objective.iter().enumerate() {
        if v.is_finite() && best.is_none_or(|b| *v < objective[b]) {
            best = Some(i);
        }
    }
    let grid_index = best.ok_or_else(|| Error::Numeric("objective is non-finite on the whole grid".into()))?;
    let grid_argmin = gamma_grid[grid_index];

    let mut refined = grid_argmin;
    let lo = grid_index.checked_sub(1).map(|i| gamma_grid[i]);
    let hi = gamma_grid.get(grid_index + 1).copied();
    if let (Some(lo), Some(hi)) = (lo, hi) {
        if lo > 0.0 && hi > lo {
            let f = |lg: f64| mixture_objective(prior, family, mixture, trunc, lg.exp()).unwrap_or(f64::INFINITY);
            let x = golden_section(f, lo.ln(), hi.ln(), 1e-10);
            if f(x) <= objective[grid_index] {
                refined = x.exp();
            }
        }
    }
    Ok(MixtureOptimum { grid_argmin, grid_index, refined, objective })
}

fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Closed-form optimal mixing variance for a normal prior and normal mixture,
/// with `b = δ/σ_G`.
pub fn optimal_tau_normal(prior: &PriorSpec, trunc: &TruncationSet) -> Result<f64> {
    optimal_tau_normal_at(trunc.delta() / prior.sd(), prior.variance)
}

/// `τ²* = σ² Φ(−b) / (φ(b)/b − Φ(−b))` for an explicit `b > 0`.
pub fn optimal_tau_normal_at(b: f64, prior_variance: f64) -> Result<f64> {
    if !(b > 0.0 && b.is_finite()) {
        return Err(invalid(format!("b must be finite and > 0, got {b}")));
    }
    let tail = norm_sf(b);
    let denom = norm_pdf(b) / b - tail;
    if denom.is_nan() || denom <= 0.0 {
        return Err(Error::Numeric(format!("non-positive denominator {denom} at b = {b}")));
    }
    Ok(prior_variance * tail / denom)
}

/// Fixed-horizon sample size `ceil((z_{1−α/2} + z_{1−β})² · variance / mde²)`.
pub fn fixed_horizon_sample_size(mde: f64, alpha: f64, beta: f64, variance_per_obs: f64) -> Result<u64> {
    if mde == 0.0 || !mde.is_finite() {
        return Err(invalid(format!("minimum detectable effect must be finite and non-zero, got {mde}")));
    }
    if !(alpha > 0.0 && alpha < 1.0 && beta > 0.0 && beta < 1.0) {
        return Err(invalid(format!("alpha and beta must lie in (0, 1), got {alpha}, {beta}")));
    }
    if !(variance_per_obs > 0.0 && variance_per_obs.is_finite()) {
        return Err(invalid(format!("variance must be > 0, got {variance_per_obs}")));
    }
    let z = norm_quantile(1.0 - alpha / 2.0) + norm_quantile(1.0 - beta);
    Ok((z * z * variance_per_obs / (mde * mde)).ceil().max(1.0) as u64)
}

/// Constants `(C_f, C_S)` in the asymptotic type II error of the fixed-horizon
/// test and the truncated mSPRT.
pub fn asymptotic_power_constants(alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    asymptotic_power_constants_tol(alpha, 1e-10)
}

pub(crate) fn asymptotic_power_constants_tol(alpha: f64, abs_tol: f64) -> Result<(f64, f64)> {
    let log_inv = -alpha.ln();
    let opts = QuadOptions { abs_tol, rel_tol: 0.0, max_segments: 2000 };
    let fixed = integrate(|x| norm_sf(log_inv.sqrt() * (x - 1.0)), 0.0, 1.0, opts)?.value;
    let sequential = integrate(|x| norm_sf((0.5 * log_inv).sqrt() * (x * x - 1.0)), 0.0, 1.0, opts)?.value;
    Ok((fixed, sequential))
}

/// Truncation `n_S = ceil((C_S/C_f)² n)` giving the mSPRT the fixed test's
/// asymptotic power.
pub fn msprt_truncation_horizon(n_fixed: u64, alpha: f64) -> Result<u64> {
    if n_fixed == 0 {
        return Err(invalid("fixed horizon must be >= 1"));
    }
    let (cf, cs) = asymptotic_power_constants(alpha)?;
    Ok(((cs / cf).powi(2) * n_fixed as f64).ceil() as u64)
}

/// Leading terms `(2 ln(1/α) + ln ln(1/α)) / θ²` of the mSPRT's expected
/// stopping time at a fixed alternative.
pub fn expected_runtime_leading(theta: f64, alpha: f64) -> Result<f64> {
    if theta == 0.0 || !theta.is_finite() {
        return Err(invalid(format!("theta must be finite and non-zero, got {theta}")));
    }
    if !(alpha > 0.0 && alpha < (-1f64).exp()) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1/e), got {alpha}")));
    }
    let log_inv = -alpha.ln();
    Ok((2.0 * log_inv + log_inv.ln()) / (theta * theta))
}

/// Probability mass of `A` under the normal prior, `2Φ̄(b)`.
pub fn prior_mass_detectable(prior: &PriorSpec, trunc: &TruncationSet) -> f64 {
    2.0 * norm_sf(trunc.delta() / prior.sd())
}
