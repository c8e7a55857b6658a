//! Exact mixture likelihood ratios for two Bernoulli streams under adaptive
//! allocation, with the average success rate `p̄` known.
//!
//! Under the null each arrival multiplies every per-atom likelihood ratio by
//! a factor with conditional mean one, whatever arm the policy picked, so the
//! mixture stays a martingale as long as the arm is chosen before the value
//! is seen. [`allocate_next`] only ever sees the history.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::avcore::{Arm, Observation};
use crate::error::{invalid, Error, Result};
use crate::numeric::log_sum_exp;

/// Number of atoms used to discretize a Gaussian mixing distribution.
pub const GAUSSIAN_ATOMS: usize = 201;
/// Half-width of the discretized Gaussian, in standard deviations.
pub const GAUSSIAN_SPAN_SD: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AllocationPolicy {
    /// Control first, then strictly alternating.
    Alternating,
    /// Each arrival goes to control with probability `weight`.
    IidRandom { weight: f64 },
    /// Higher observed mean with probability `1 − ε` (ties to control),
    /// otherwise a fair coin. An arm with no data is pulled first.
    GreedyMean { epsilon: f64 },
}

impl AllocationPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AllocationPolicy::Alternating => Ok(()),
            AllocationPolicy::IidRandom { weight } if (0.0..=1.0).contains(&weight) => Ok(()),
            AllocationPolicy::GreedyMean { epsilon } if (0.0..=1.0).contains(&epsilon) => Ok(()),
            other => Err(invalid(format!("policy parameter must lie in [0, 1]: {other:?}"))),
        }
    }
}

/// Binary arrivals on the two streams, in arrival order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairedStreams {
    arrivals: Vec<Observation>,
}

/// Prefix counts `m(t), n(t)` and success counts on each stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamCounts {
    pub m: u64,
    pub n: u64,
    pub successes_x: u64,
    pub successes_y: u64,
}

impl StreamCounts {
    pub fn push(&mut self, obs: Observation) {
        let hit = (obs.value == 1.0) as u64;
        match obs.arm {
            Arm::Control => {
                self.m += 1;
                self.successes_x += hit;
            }
            Arm::Treatment => {
                self.n += 1;
                self.successes_y += hit;
            }
        }
    }

    pub fn control_mean(&self) -> Option<f64> {
        (self.m > 0).then(|| self.successes_x as f64 / self.m as f64)
    }

    pub fn treatment_mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.successes_y as f64 / self.n as f64)
    }
}

impl PairedStreams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_arrivals(arrivals: Vec<Observation>) -> Result<Self> {
        let mut s = Self::new();
        for obs in arrivals {
            s.push(obs)?;
        }
        Ok(s)
    }

    pub fn push(&mut self, obs: Observation) -> Result<()> {
        if obs.value != 0.0 && obs.value != 1.0 {
            return Err(invalid(format!("Bernoulli observations must be 0 or 1, got {}", obs.value)));
        }
        self.arrivals.push(obs);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.arrivals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrivals.is_empty()
    }

    pub fn arrivals(&self) -> &[Observation] {
        &self.arrivals
    }

    /// Counts over the first `t` arrivals.
    pub fn counts_at(&self, t: usize) -> Result<StreamCounts> {
        if t > self.arrivals.len() {
            return Err(invalid(format!("t = {t} exceeds the {} recorded arrivals", self.arrivals.len())));
        }
        let mut c = StreamCounts::default();
        for &obs in &self.arrivals[..t] {
            c.push(obs);
        }
        Ok(c)
    }
}

/// Discrete mixing distribution over `θ = p₁ − p₀`; total mass may be below one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMixture {
    pub atoms: Vec<(f64, f64)>,
}

fn feasible(theta: f64, p_bar: f64) -> bool {
    let (p0, p1) = (p_bar - theta / 2.0, p_bar + theta / 2.0);
    p0 > 0.0 && p0 < 1.0 && p1 > 0.0 && p1 < 1.0
}

fn check_p_bar(p_bar: f64) -> Result<()> {
    if p_bar > 0.0 && p_bar < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("p_bar must lie in (0, 1), got {p_bar}")))
    }
}

impl GridMixture {
    pub fn point(theta: f64) -> Self {
        Self { atoms: vec![(theta, 1.0)] }
    }

    /// `N(0, τ²)` on an equally spaced grid over `±6τ`, normalized over the
    /// full grid; atoms infeasible for `p_bar` are then dropped without
    /// renormalizing.
    pub fn gaussian(tau: f64, p_bar: f64) -> Result<Self> {
        check_p_bar(p_bar)?;
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid(format!("tau must be > 0, got {tau}")));
        }
        let half = (GAUSSIAN_ATOMS / 2) as f64;
        let grid: Vec<(f64, f64)> = (0..GAUSSIAN_ATOMS)
            .map(|i| {
                let z = GAUSSIAN_SPAN_SD * (i as f64 - half) / half;
                (z * tau, (-0.5 * z * z).exp())
            })
            .collect();
        let total: f64 = grid.iter().map(|a| a.1).sum();
        Ok(Self {
            atoms: grid
                .into_iter()
                .filter(|&(theta, _)| feasible(theta, p_bar))
                .map(|(theta, w)| (theta, w / total))
                .collect(),
        })
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    pub fn validate_for(&self, p_bar: f64) -> Result<()> {
        check_p_bar(p_bar)?;
        for &(theta, w) in &self.atoms {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(invalid(format!("atom weights must be finite and >= 0, got {w}")));
            }
            if !feasible(theta, p_bar) {
                return Err(invalid(format!(
                    "atom θ = {theta} puts a success probability outside (0, 1) for p̄ = {p_bar}"
                )));
            }
        }
        if self.total_mass() > 1.0 + 1e-12 {
            return Err(invalid(format!("mixture mass {} exceeds 1", self.total_mass())));
        }
        Ok(())
    }
}

/// Per-atom log-likelihood-ratio factors for one success or failure on each arm.
#[derive(Debug, Clone)]
struct AtomFactors {
    log_w: Vec<f64>,
    x_hit: Vec<f64>,
    x_miss: Vec<f64>,
    y_hit: Vec<f64>,
    y_miss: Vec<f64>,
}

impl AtomFactors {
    fn new(mixture: &GridMixture, p_bar: f64) -> Self {
        let k = mixture.atoms.len();
        let mut f = AtomFactors {
            log_w: Vec::with_capacity(k),
            x_hit: Vec::with_capacity(k),
            x_miss: Vec::with_capacity(k),
            y_hit: Vec::with_capacity(k),
            y_miss: Vec::with_capacity(k),
        };
        let (lp, lq) = (p_bar.ln(), (1.0 - p_bar).ln());
        for &(theta, w) in &mixture.atoms {
            let (p0, p1) = (p_bar - theta / 2.0, p_bar + theta / 2.0);
            f.log_w.push(w.ln());
            f.x_hit.push(p0.ln() - lp);
            f.x_miss.push((1.0 - p0).ln() - lq);
            f.y_hit.push(p1.ln() - lp);
            f.y_miss.push((1.0 - p1).ln() - lq);
        }
        f
    }

    fn log_lambda(&self, c: &StreamCounts) -> f64 {
        let (sx, fx) = (c.successes_x as f64, (c.m - c.successes_x) as f64);
        let (sy, fy) = (c.successes_y as f64, (c.n - c.successes_y) as f64);
        let terms: Vec<f64> = (0..self.log_w.len())
            .map(|k| {
                self.log_w[k] + sx * self.x_hit[k] + fx * self.x_miss[k] + sy * self.y_hit[k] + fy * self.y_miss[k]
            })
            .collect();
        log_sum_exp(&terms)
    }
}

/// `Λ_t = Σ_k w_k · LR_t(θ_k)` over the first `t` arrivals with known `p̄`.
pub fn exact_mixture_lr_bernoulli(streams: &PairedStreams, t: usize, p_bar: f64, mixture: &GridMixture) -> Result<f64> {
    mixture.validate_for(p_bar)?;
    let counts = streams.counts_at(t)?;
    Ok(AtomFactors::new(mixture, p_bar).log_lambda(&counts).exp())
}

/// A value computed by a heuristic with no Type I error guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Experimental<T> {
    pub value: T,
    /// Always false; present so serialized output carries the caveat.
    pub guaranteed: bool,
}

/// Plug-in mixture LR with `p̄` replaced by `(X̄ + Ȳ)/2` at time `t`. Atoms
/// infeasible for the estimate are dropped; a zero effect always counts as
/// a likelihood ratio of one.
pub fn plugin_mixture_lr(streams: &PairedStreams, t: usize, mixture: &GridMixture) -> Result<Experimental<f64>> {
    let counts = streams.counts_at(t)?;
    let (Some(x), Some(y)) = (counts.control_mean(), counts.treatment_mean()) else {
        return Err(Error::InvalidState(format!(
            "plug-in LR needs data on both streams at t = {t} (m = {}, n = {})",
            counts.m, counts.n
        )));
    };
    let p_hat = 0.5 * (x + y);
    let mut terms = Vec::with_capacity(mixture.atoms.len());
    let mut kept = GridMixture { atoms: Vec::new() };
    for &(theta, w) in &mixture.atoms {
        if theta == 0.0 {
            terms.push(w.ln());
        } else if p_hat > 0.0 && p_hat < 1.0 && feasible(theta, p_hat) {
            kept.atoms.push((theta, w));
        }
    }
    if !kept.atoms.is_empty() {
        terms.push(AtomFactors::new(&kept, p_hat).log_lambda(&counts));
    }
    Ok(Experimental { value: log_sum_exp(&terms).exp(), guaranteed: false })
}

/// Incremental `ln Λ_t` with known `p̄`: O(atoms) per arrival.
#[derive(Debug, Clone)]
pub struct MixtureLrTracker {
    factors: AtomFactors,
    log_lr: Vec<f64>,
    counts: StreamCounts,
}

impl MixtureLrTracker {
    pub fn new(mixture: &GridMixture, p_bar: f64) -> Result<Self> {
        mixture.validate_for(p_bar)?;
        let factors = AtomFactors::new(mixture, p_bar);
        let log_lr = factors.log_w.clone();
        Ok(Self { factors, log_lr, counts: StreamCounts::default() })
    }

    pub fn push(&mut self, obs: Observation) {
        let f = &self.factors;
        let step = match (obs.arm, obs.value == 1.0) {
            (Arm::Control, true) => &f.x_hit,
            (Arm::Control, false) => &f.x_miss,
            (Arm::Treatment, true) => &f.y_hit,
            (Arm::Treatment, false) => &f.y_miss,
        };
        for (l, s) in self.log_lr.iter_mut().zip(step) {
            *l += s;
        }
        self.counts.push(obs);
    }

    pub fn log_lambda(&self) -> f64 {
        log_sum_exp(&self.log_lr)
    }

    pub fn counts(&self) -> StreamCounts {
        self.counts
    }
}

/// Equal-allocation mixture LR over `(x_i, y_i)` pairs, built pair by pair
/// from the joint Bernoulli likelihood.
pub fn paired_mixture_lr(pairs: &[(bool, bool)], p_bar: f64, mixture: &GridMixture) -> Result<f64> {
    mixture.validate_for(p_bar)?;
    let bern = |p: f64, hit: bool| if hit { p } else { 1.0 - p };
    let terms: Vec<f64> = mixture
        .atoms
        .iter()
        .map(|&(theta, w)| {
            let (p0, p1) = (p_bar - theta / 2.0, p_bar + theta / 2.0);
            w.ln()
                + pairs
                    .iter()
                    .map(|&(x, y)| (bern(p0, x) * bern(p1, y) / (bern(p_bar, x) * bern(p_bar, y))).ln())
                    .sum::<f64>()
        })
        .collect();
    Ok(log_sum_exp(&terms).exp())
}

/// Next arm for `policy`, from the history and fresh randomness only.
pub fn allocate_next<R: Rng + ?Sized>(policy: &AllocationPolicy, history: &StreamCounts, rng: &mut R) -> Arm {
    let coin = |rng: &mut R, p_control: f64| {
        if rng.gen::<f64>() < p_control {
            Arm::Control
        } else {
            Arm::Treatment
        }
    };
    match *policy {
        AllocationPolicy::Alternating => {
            if (history.m + history.n).is_multiple_of(2) {
                Arm::Control
            } else {
                Arm::Treatment
            }
        }
        AllocationPolicy::IidRandom { weight } => coin(rng, weight),
        AllocationPolicy::GreedyMean { epsilon } => {
            let explore = rng.gen::<f64>() < epsilon;
            if explore {
                return coin(rng, 0.5);
            }
            match (history.control_mean(), history.treatment_mean()) {
                (None, _) => Arm::Control,
                (_, None) => Arm::Treatment,
                (Some(x), Some(y)) if y > x => Arm::Treatment,
                _ => Arm::Control,
            }
        }
    }
}
