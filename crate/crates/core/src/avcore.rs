//! Streaming mixture-SPRT engine for a single experiment.
//!
//! Observations arrive in batches, tagged as control or treatment. After each
//! batch the engine forms the effect estimate `θ̂` and its variance `V̂`,
//! evaluates the normal-mixture likelihood ratio
//!
//! ```text
//!     Λ̃ = sqrt(V̂ / (V̂ + τ²)) · exp(τ²(θ̂ − θ₀)² / (2 V̂ (V̂ + τ²)))
//! ```
//!
//! and folds it into a running-minimum p-value `p = min(1, min_k 1/Λ̃_k)` and
//! into one running-intersection confidence sequence per configured level.
//! Both processes only ever tighten, so any user may stop whenever they like
//! and read off a valid answer.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::numeric::{integrate_real_line, norm_sf, QuadOptions};

/// Default confidence levels maintained per experiment.
pub const DEFAULT_LEVELS: [f64; 3] = [0.90, 0.95, 0.99];

/// Normal mixing distribution `H = N(center, tau_sq)` over the effect.
///
/// `tau_sq = 0` is the point mass at the null, for which `Λ ≡ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub center: f64,
    pub tau_sq: f64,
}

impl MixtureSpec {
    pub fn new(center: f64, tau_sq: f64) -> Result<Self> {
        let spec = Self { center, tau_sq };
        spec.validate()?;
        Ok(spec)
    }

    /// Mixture centred on a zero effect.
    pub fn centered(tau_sq: f64) -> Result<Self> {
        Self::new(0.0, tau_sq)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_finite("mixture center", self.center)?;
        ensure_finite("tau_sq", self.tau_sq)?;
        if self.tau_sq < 0.0 {
            return Err(invalid(format!("tau_sq must be >= 0, got {}", self.tau_sq)));
        }
        Ok(())
    }
}

/// Data model for the observation streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StreamModel {
    /// Normal observations with known per-observation variance. With only
    /// treatment data the test is one-sample against the mixture center;
    /// once both arms have data it is the two-sample difference in means.
    NormalKnownVariance { sigma_sq: f64 },
    /// Two binary streams, tested through the CLT approximation on `Ȳ − X̄`.
    BernoulliTwoStream,
}

impl StreamModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StreamModel::NormalKnownVariance { sigma_sq } => {
                if !(sigma_sq.is_finite() && sigma_sq > 0.0) {
                    return Err(invalid(format!("sigma_sq must be finite and > 0, got {sigma_sq}")));
                }
                Ok(())
            }
            StreamModel::BernoulliTwoStream => Ok(()),
        }
    }

    fn check_value(&self, value: f64) -> Result<()> {
        match self {
            StreamModel::BernoulliTwoStream if value != 0.0 && value != 1.0 => {
                Err(invalid(format!("Bernoulli observations must be 0 or 1, got {value}")))
            }
            _ => ensure_finite("observation", value),
        }
    }
}

/// Which stream an observation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Control,
    Treatment,
}

impl std::str::FromStr for Arm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "control" => Ok(Arm::Control),
            "treatment" => Ok(Arm::Treatment),
            other => Err(invalid(format!("variation must be control or treatment, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    #[serde(rename = "variation")]
    pub arm: Arm,
    pub value: f64,
}

impl Observation {
    pub fn control(value: f64) -> Self {
        Self { arm: Arm::Control, value }
    }

    pub fn treatment(value: f64) -> Self {
        Self { arm: Arm::Treatment, value }
    }
}

/// Sufficient statistics of the two streams. Means are always derived.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TwoStreamStats {
    pub m: u64,
    pub n: u64,
    pub sum_x: f64,
    pub sum_y: f64,
    pub sum_sq_x: f64,
    pub sum_sq_y: f64,
}

impl TwoStreamStats {
    pub fn push(&mut self, obs: Observation) {
        match obs.arm {
            Arm::Control => {
                self.m += 1;
                self.sum_x += obs.value;
                self.sum_sq_x += obs.value * obs.value;
            }
            Arm::Treatment => {
                self.n += 1;
                self.sum_y += obs.value;
                self.sum_sq_y += obs.value * obs.value;
            }
        }
    }

    pub fn control_mean(&self) -> Option<f64> {
        (self.m > 0).then(|| self.sum_x / self.m as f64)
    }

    pub fn treatment_mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum_y / self.n as f64)
    }

    pub fn total(&self) -> u64 {
        self.m + self.n
    }

    /// Effect estimate and its variance, or `None` while `V̂` is zero or undefined.
    pub fn effect_and_variance(&self, model: &StreamModel) -> Option<(f64, f64)> {
        let (effect, variance) = match (*model, self.control_mean(), self.treatment_mean()) {
            (StreamModel::BernoulliTwoStream, Some(x), Some(y)) => {
                (y - x, x * (1.0 - x) / self.m as f64 + y * (1.0 - y) / self.n as f64)
            }
            (StreamModel::NormalKnownVariance { sigma_sq }, None, Some(y)) => (y, sigma_sq / self.n as f64),
            (StreamModel::NormalKnownVariance { sigma_sq }, Some(x), Some(y)) => {
                (y - x, sigma_sq * (1.0 / self.m as f64 + 1.0 / self.n as f64))
            }
            _ => return None,
        };
        (variance > 0.0 && variance.is_finite()).then_some((effect, variance))
    }
}

/// Open interval `(lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, theta: f64) -> bool {
        self.lo < theta && theta < self.hi
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }
}

/// State of one confidence sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CiBand {
    /// The whole line: no scale information yet.
    Unbounded,
    Interval {
        lo: f64,
        hi: f64,
    },
    /// The running intersection has become empty.
    Empty,
}

impl CiBand {
    pub fn contains(&self, theta: f64) -> bool {
        match *self {
            CiBand::Unbounded => true,
            CiBand::Interval { lo, hi } => Interval { lo, hi }.contains(theta),
            CiBand::Empty => false,
        }
    }

    pub fn intersect(self, other: Interval) -> CiBand {
        match self {
            CiBand::Empty => CiBand::Empty,
            CiBand::Unbounded => CiBand::Interval { lo: other.lo, hi: other.hi },
            CiBand::Interval { lo, hi } => {
                let lo = lo.max(other.lo);
                let hi = hi.min(other.hi);
                if lo < hi {
                    CiBand::Interval { lo, hi }
                } else {
                    CiBand::Empty
                }
            }
        }
    }

    /// `self ⊆ other` as sets.
    pub fn is_subset_of(&self, other: &CiBand) -> bool {
        match (*self, *other) {
            (CiBand::Empty, _) | (_, CiBand::Unbounded) => true,
            (CiBand::Unbounded, _) | (CiBand::Interval { .. }, CiBand::Empty) => false,
            (CiBand::Interval { lo, hi }, CiBand::Interval { lo: olo, hi: ohi }) => lo >= olo && hi <= ohi,
        }
    }
}

/// Confidence sequence at one level `1 − α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelBand {
    pub level: f64,
    pub band: CiBand,
}

impl LevelBand {
    pub fn alpha(&self) -> f64 {
        1.0 - self.level
    }
}

/// Streaming inference state of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AvState {
    pub stats: TwoStreamStats,
    /// `ln Λ̃` at the most recent batch boundary with `V̂ > 0`.
    pub log_lambda: f64,
    pub p_value: f64,
    pub ci_by_level: Vec<LevelBand>,
    pub updated_at: u64,
}

pub fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(invalid("at least one confidence level is required"));
    }
    for &level in levels {
        if !(level > 0.0 && level < 1.0) {
            return Err(invalid(format!("confidence levels must lie in (0, 1), got {level}")));
        }
    }
    Ok(())
}

impl AvState {
    /// Fresh state with `p = 1` and unbounded intervals at each level.
    pub fn new(levels: &[f64]) -> Result<Self> {
        validate_levels(levels)?;
        let mut sorted = levels.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        Ok(Self {
            stats: TwoStreamStats::default(),
            log_lambda: 0.0,
            p_value: 1.0,
            ci_by_level: sorted.into_iter().map(|level| LevelBand { level, band: CiBand::Unbounded }).collect(),
            updated_at: 0,
        })
    }

    /// Current `Λ̃` (may overflow to `+inf`).
    pub fn lambda(&self) -> f64 {
        self.log_lambda.exp()
    }

    pub fn band(&self, level: f64) -> Option<&LevelBand> {
        self.ci_by_level.iter().find(|b| b.level == level)
    }

    pub fn has_empty_ci(&self) -> bool {
        self.ci_by_level.iter().any(|b| b.band == CiBand::Empty)
    }
}

/// `ln Λ̃` for a normal mixture; `0` for the point-mass mixture.
pub fn log_mixture_lr_normal(effect_estimate: f64, variance_estimate: f64, mixture: &MixtureSpec) -> Result<f64> {
    ensure_finite("effect estimate", effect_estimate)?;
    ensure_finite("variance estimate", variance_estimate)?;
    mixture.validate()?;
    if variance_estimate <= 0.0 {
        return Err(invalid(format!("variance estimate must be > 0, got {variance_estimate}")));
    }
    Ok(log_lr_unchecked(effect_estimate - mixture.center, variance_estimate, mixture.tau_sq))
}

#[inline]
pub(crate) fn log_lr_unchecked(diff: f64, v: f64, tau_sq: f64) -> f64 {
    if tau_sq == 0.0 {
        return 0.0;
    }
    -0.5 * (tau_sq / v).ln_1p() + tau_sq * diff * diff / (2.0 * v * (v + tau_sq))
}

/// Closed-form normal-mixture likelihood ratio `Λ̃`.
pub fn mixture_lr_normal(effect_estimate: f64, variance_estimate: f64, mixture: &MixtureSpec) -> Result<f64> {
    log_mixture_lr_normal(effect_estimate, variance_estimate, mixture).map(f64::exp)
}

/// `Λ̃` by adaptive quadrature of the mixture integral; a reference oracle for
/// [`mixture_lr_normal`].
pub fn mixture_lr_quadrature(
    effect_estimate: f64,
    variance_estimate: f64,
    mixture: &MixtureSpec,
    rel_tol: f64,
) -> Result<f64> {
    if !(rel_tol > 0.0 && rel_tol <= 1e-3) {
        return Err(invalid(format!("rel_tol must lie in (0, 1e-3], got {rel_tol}")));
    }
    ensure_finite("effect estimate", effect_estimate)?;
    ensure_finite("variance estimate", variance_estimate)?;
    mixture.validate()?;
    if variance_estimate <= 0.0 {
        return Err(invalid(format!("variance estimate must be > 0, got {variance_estimate}")));
    }
    if mixture.tau_sq == 0.0 {
        return Ok(1.0);
    }
    let (x, v, c, t2) = (effect_estimate, variance_estimate, mixture.center, mixture.tau_sq);
    let log_integrand = |theta: f64| {
        let log_h = -0.5 * (2.0 * std::f64::consts::PI * t2).ln() - (theta - c).powi(2) / (2.0 * t2);
        let log_ratio = ((x - c).powi(2) - (x - theta).powi(2)) / (2.0 * v);
        log_h + log_ratio
    };
    // Product of two Gaussians in θ: peak and width used only to place the mapping.
    let peak = (x * t2 + c * v) / (t2 + v);
    let width = (t2 * v / (t2 + v)).sqrt();
    let offset = log_integrand(peak);
    let opts = QuadOptions { abs_tol: 0.0, rel_tol: rel_tol * 1e-3, max_segments: 2000 };
    let q = integrate_real_line(|theta| (log_integrand(theta) - offset).exp(), peak, width, opts)?;
    Ok(q.value * offset.exp())
}

/// Always-valid interval `{θ₀ : Λ̃(θ₀) < 1/α}` at a single step.
pub fn av_ci_interval(
    effect_estimate: f64,
    variance_estimate: f64,
    mixture: &MixtureSpec,
    alpha: f64,
) -> Result<Interval> {
    ensure_finite("effect estimate", effect_estimate)?;
    mixture.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(variance_estimate > 0.0 && variance_estimate.is_finite()) {
        return Err(invalid(format!("variance estimate must be > 0, got {variance_estimate}")));
    }
    if mixture.tau_sq == 0.0 {
        return Err(Error::Unsupported(
            "a point-mass mixture never rejects; its confidence set is the whole line".into(),
        ));
    }
    let w = ci_half_width(variance_estimate, mixture.tau_sq, alpha);
    Ok(Interval { lo: effect_estimate - w, hi: effect_estimate + w })
}

#[inline]
pub(crate) fn ci_half_width(v: f64, tau_sq: f64, alpha: f64) -> f64 {
    let log_term = -alpha.ln() + 0.5 * (tau_sq / v).ln_1p();
    (2.0 * v * (v + tau_sq) / tau_sq * log_term).sqrt()
}

/// `min(1, exp(-ln Λ̃))`; underflow lands on 0.
#[inline]
pub(crate) fn p_from_log_lambda(log_lambda: f64) -> f64 {
    (-log_lambda).exp().min(1.0)
}

/// Folds one batch into the state and returns the new state.
///
/// The batch is validated as a whole before anything is aggregated. When the
/// variance estimate is zero or undefined the inference fields are carried
/// over unchanged.
pub fn update_state(
    state: &AvState,
    batch: &[Observation],
    model: &StreamModel,
    mixture: &MixtureSpec,
) -> Result<AvState> {
    model.validate()?;
    mixture.validate()?;
    for obs in batch {
        model.check_value(obs.value)?;
    }
    if batch.is_empty() {
        return Ok(state.clone());
    }
    let mut next = state.clone();
    for &obs in batch {
        next.stats.push(obs);
    }
    next.updated_at = next.stats.total();
    if let Some((effect, variance)) = next.stats.effect_and_variance(model) {
        next.log_lambda = log_lr_unchecked(effect - mixture.center, variance, mixture.tau_sq);
        next.p_value = next.p_value.min(p_from_log_lambda(next.log_lambda));
        if mixture.tau_sq > 0.0 {
            for band in &mut next.ci_by_level {
                let w = ci_half_width(variance, mixture.tau_sq, band.alpha());
                band.band = band.band.intersect(Interval { lo: effect - w, hi: effect + w });
            }
        }
    }
    Ok(next)
}

/// Stopping decision `(T(α), δ(α))` for a p-value history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionOutcome {
    /// 1-based index of the first update with `p ≤ α`; `None` if never.
    pub stopped_at: Option<usize>,
    pub rejected: bool,
    pub level: f64,
}

/// Stops at the first update whose p-value is at most `alpha`.
pub fn decide<I>(p_history: I, alpha: f64) -> DecisionOutcome
where
    I: IntoIterator<Item = f64>,
{
    let stopped_at = p_history.into_iter().position(|p| p <= alpha).map(|i| i + 1);
    DecisionOutcome { stopped_at, rejected: stopped_at.is_some(), level: alpha }
}

/// Dashboard "chance to beat baseline".
pub fn chance_to_beat(p: f64) -> f64 {
    1.0 - p
}

/// Recovers a grid-granular p-value for `theta0` from the stored confidence
/// sequences: the smallest stored `α` whose band excludes `theta0`, or 1 when
/// every band contains it. For every stored `α`,
/// `theta0 ∈ CI(1 − α) ⟺ p > α`.
pub fn pvalue_from_ci_family(ci_by_level: &[LevelBand], theta0: f64) -> Result<f64> {
    if ci_by_level.is_empty() {
        return Err(Error::InvalidState("no confidence levels stored".into()));
    }
    Ok(ci_by_level.iter().filter(|b| !b.band.contains(theta0)).map(LevelBand::alpha).fold(1.0, f64::min))
}

/// Two-sided z-test p-value for a sample mean with known variance.
pub fn fixed_horizon_p_normal(mean: f64, n: u64, sigma_sq: f64) -> Result<f64> {
    if n == 0 {
        return Err(invalid("fixed-horizon p-value needs n >= 1"));
    }
    ensure_finite("mean", mean)?;
    if !(sigma_sq > 0.0 && sigma_sq.is_finite()) {
        return Err(invalid(format!("sigma_sq must be > 0, got {sigma_sq}")));
    }
    Ok((2.0 * norm_sf(mean.abs() * (n as f64 / sigma_sq).sqrt())).min(1.0))
}

/// One-sample normal mSPRT monitor updated per observation. The simulation
/// laboratory runs millions of these; it tracks the same quantities as
/// [`update_state`] with unit batches on a treatment-only stream.
#[derive(Debug, Clone)]
pub struct NormalMonitor {
    pub n: u64,
    pub sum: f64,
    pub sigma_sq: f64,
    pub mixture: MixtureSpec,
    pub p_value: f64,
}

impl NormalMonitor {
    pub fn new(sigma_sq: f64, mixture: MixtureSpec) -> Self {
        Self { n: 0, sum: 0.0, sigma_sq, mixture, p_value: 1.0 }
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.n as f64
    }

    pub fn variance(&self) -> f64 {
        self.sigma_sq / self.n as f64
    }

    /// Adds one observation and returns the updated running-minimum p-value.
    #[inline]
    pub fn push(&mut self, x: f64) -> f64 {
        self.n += 1;
        self.sum += x;
        let log_lambda = log_lr_unchecked(self.mean() - self.mixture.center, self.variance(), self.mixture.tau_sq);
        self.p_value = self.p_value.min(p_from_log_lambda(log_lambda));
        self.p_value
    }
}
