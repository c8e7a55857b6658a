//! Multiple-testing corrections over a vector of p-values: Bonferroni,
//! Benjamini–Hochberg under independence (BH-I) and under arbitrary
//! dependence (BH-G), their q-values, and FCR-corrected confidence levels.
//!
//! Hypotheses are identified by their 0-based position in the input vector.
//! Ties in p are broken by position, so every result is deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Validated p-values, one per hypothesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PValueVector(Vec<f64>);

impl PValueVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(invalid("a p-value vector needs at least one entry"));
        }
        if let Some((i, p)) = values.iter().enumerate().find(|(_, p)| !(0.0..=1.0).contains(*p)) {
            return Err(invalid(format!("p-value {i} must lie in [0, 1], got {p}")));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn m(&self) -> usize {
        self.0.len()
    }

    /// Positions ordered by increasing p, ties by position.
    fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.0.len()).collect();
        idx.sort_by(|&a, &b| self.0[a].total_cmp(&self.0[b]).then(a.cmp(&b)));
        idx
    }
}

impl TryFrom<Vec<f64>> for PValueVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<PValueVector> for Vec<f64> {
    fn from(p: PValueVector) -> Self {
        p.0
    }
}

/// Rejected hypotheses as sorted positions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionSet {
    pub indices: Vec<usize>,
}

impl RejectionSet {
    fn from_unsorted(mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        Self { indices }
    }

    pub fn r(&self) -> usize {
        self.indices.len()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }

    pub fn is_subset_of(&self, other: &RejectionSet) -> bool {
        self.indices.iter().all(|&i| other.contains(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    Bonferroni,
    BhI,
    BhG,
}

impl Procedure {
    pub const ALL: [Procedure; 3] = [Procedure::Bonferroni, Procedure::BhI, Procedure::BhG];

    pub fn name(self) -> &'static str {
        match self {
            Procedure::Bonferroni => "bonferroni",
            Procedure::BhI => "bh_i",
            Procedure::BhG => "bh_g",
        }
    }

    pub fn apply(self, p: &PValueVector, alpha: f64) -> Result<RejectionSet> {
        match self {
            Procedure::Bonferroni => bonferroni(p, alpha),
            Procedure::BhI => bh_independent(p, alpha),
            Procedure::BhG => bh_general(p, alpha),
        }
    }
}

impl std::str::FromStr for Procedure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "bonferroni" => Ok(Procedure::Bonferroni),
            "bh_i" | "bhi" | "bh" => Ok(Procedure::BhI),
            "bh_g" | "bhg" | "by" => Ok(Procedure::BhG),
            _ => Err(invalid(format!("unknown procedure {s:?}; expected bonferroni, bh_i or bh_g"))),
        }
    }
}

/// q-values aligned with the input positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QValueVector {
    pub values: Vec<f64>,
}

impl QValueVector {
    /// `{i : q_i ≤ α}`.
    pub fn threshold(&self, alpha: f64) -> RejectionSet {
        RejectionSet { indices: (0..self.values.len()).filter(|&i| self.values[i] <= alpha).collect() }
    }
}

/// Per-hypothesis confidence levels after FCR correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedCiLevels {
    pub levels: Vec<f64>,
    pub selected: RejectionSet,
    /// Set when some level fell outside (0, 1) and was clamped. Unselected
    /// hypotheses exist only when `R < m`, so every level is at least `1 − α`
    /// and this stays false for valid inputs.
    pub clamped: bool,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn harmonic(m: usize) -> f64 {
    (1..=m).map(|r| 1.0 / r as f64).sum()
}

pub fn bonferroni(p: &PValueVector, alpha: f64) -> Result<RejectionSet> {
    check_alpha(alpha)?;
    let cut = alpha / p.m() as f64;
    Ok(RejectionSet { indices: (0..p.m()).filter(|&i| p.0[i] <= cut).collect() })
}

/// Step-up rule: reject the `j` smallest p-values for the largest `j` with
/// `p_(j) ≤ α·j / (m·c)`.
fn step_up(p: &PValueVector, alpha: f64, c: f64) -> RejectionSet {
    let order = p.order();
    let m = p.m() as f64;
    let j = (1..=order.len()).rev().find(|&j| p.0[order[j - 1]] <= alpha * j as f64 / (m * c)).unwrap_or(0);
    RejectionSet::from_unsorted(order[..j].to_vec())
}

pub fn bh_independent(p: &PValueVector, alpha: f64) -> Result<RejectionSet> {
    check_alpha(alpha)?;
    Ok(step_up(p, alpha, 1.0))
}

/// BH with the `Σ_{r≤m} 1/r` correction, valid under arbitrary dependence.
pub fn bh_general(p: &PValueVector, alpha: f64) -> Result<RejectionSet> {
    check_alpha(alpha)?;
    Ok(step_up(p, alpha, harmonic(p.m())))
}

pub fn qvalues(p: &PValueVector, procedure: Procedure) -> QValueVector {
    let m = p.m() as f64;
    let mut q = vec![0.0; p.m()];
    match procedure {
        Procedure::Bonferroni => {
            for (qi, &pi) in q.iter_mut().zip(&p.0) {
                *qi = (pi * m).min(1.0);
            }
        }
        Procedure::BhI | Procedure::BhG => {
            let c = if procedure == Procedure::BhG { harmonic(p.m()) } else { 1.0 };
            let order = p.order();
            let mut running = 1.0f64;
            for (k, &i) in order.iter().enumerate().rev() {
                running = running.min(p.0[i] * m * c / (k + 1) as f64);
                q[i] = running;
            }
        }
    }
    QValueVector { values: q }
}

/// Levels `1 − R·α/m` for BH-I selections and `1 − (R+1)·α/m` otherwise.
pub fn fcr_adjusted_levels(p: &PValueVector, alpha: f64) -> Result<AdjustedCiLevels> {
    let selected = bh_independent(p, alpha)?;
    let m = p.m() as f64;
    let r = selected.r() as f64;
    let mut clamped = false;
    let mut clamp = |level: f64| {
        if level > 0.0 {
            level
        } else {
            clamped = true;
            f64::EPSILON
        }
    };
    let levels = (0..p.m())
        .map(|i| {
            let k = if selected.contains(i) { r } else { r + 1.0 };
            clamp(1.0 - k * alpha / m)
        })
        .collect();
    Ok(AdjustedCiLevels { levels, selected, clamped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> PValueVector {
        PValueVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn bonferroni_examples() {
        let mut v = vec![0.9; 10];
        v[2] = 0.004;
        assert_eq!(bonferroni(&pv(&v), 0.05).unwrap().indices, vec![2]);
        assert_eq!(bonferroni(&pv(&[1.0; 5]), 0.05).unwrap().r(), 0);
        assert_eq!(bonferroni(&pv(&[0.05]), 0.05).unwrap().r(), 1);
        assert_eq!(bonferroni(&pv(&[0.0501]), 0.05).unwrap().r(), 0);
    }

    #[test]
    fn bh_examples() {
        let p = pv(&[0.01, 0.02, 0.04, 0.9]);
        assert_eq!(bh_independent(&p, 0.05).unwrap().indices, vec![0, 1]);
        assert_eq!(bh_independent(&pv(&[0.0; 4]), 0.05).unwrap().r(), 4);
        assert_eq!(bh_independent(&pv(&[0.2, 0.3]), 0.05).unwrap().r(), 0);
        assert_eq!(bh_general(&pv(&[0.01, 0.5]), 0.06).unwrap().indices, vec![0]);
        assert_eq!(bh_general(&pv(&[0.03]), 0.05), bh_independent(&pv(&[0.03]), 0.05));
        // Step-up: a large p can be rejected on the strength of later ones.
        assert_eq!(bh_independent(&pv(&[0.04, 0.03, 0.02]), 0.05).unwrap().r(), 3);
    }

    #[test]
    fn qvalue_examples() {
        let mut v = vec![0.9; 10];
        v[0] = 0.2;
        assert_eq!(qvalues(&pv(&v), Procedure::Bonferroni).values[0], 1.0);
        let q = qvalues(&pv(&[0.01, 0.02, 0.9]), Procedure::BhI).values;
        assert_relative_eq!(q[0], 0.03, epsilon = 1e-15);
        assert_relative_eq!(q[1], 0.03, epsilon = 1e-15);
        assert_relative_eq!(q[2], 0.9, epsilon = 1e-15);
        let g = qvalues(&pv(&[0.01, 0.02, 0.9]), Procedure::BhG).values;
        assert_relative_eq!(g[0], 0.03 * (1.0 + 0.5 + 1.0 / 3.0), epsilon = 1e-15);
        assert_eq!(g[2], 1.0);
    }

    #[test]
    fn fcr_level_examples() {
        let mut v = vec![0.9; 10];
        v[0] = 0.001;
        v[1] = 0.002;
        let adj = fcr_adjusted_levels(&pv(&v), 0.1).unwrap();
        assert_eq!(adj.selected.r(), 2);
        assert_relative_eq!(adj.levels[0], 0.98, epsilon = 1e-15);
        assert_relative_eq!(adj.levels[5], 0.97, epsilon = 1e-15);
        assert!(!adj.clamped);
        let none = fcr_adjusted_levels(&pv(&[0.9; 4]), 0.1).unwrap();
        assert!(none.levels.iter().all(|&l| (l - 0.975).abs() < 1e-15));
        let all = fcr_adjusted_levels(&pv(&[0.0; 4]), 0.1).unwrap();
        assert!(all.levels.iter().all(|&l| (l - 0.9).abs() < 1e-15));
    }

    #[test]
    fn invalid_inputs() {
        assert!(PValueVector::new(vec![]).is_err());
        assert!(PValueVector::new(vec![0.5, 1.2]).is_err());
        assert!(PValueVector::new(vec![f64::NAN]).is_err());
        assert!(bonferroni(&pv(&[0.5]), 0.0).is_err());
        assert!(serde_json::from_str::<PValueVector>("[0.1, -0.1]").is_err());
        assert_eq!("BH-G".parse::<Procedure>().unwrap(), Procedure::BhG);
    }

    fn p_strategy() -> impl Strategy<Value = Vec<f64>> {
        // Mix of continuous values and repeated grid values to exercise ties.
        prop::collection::vec(prop_oneof![0.0..=1.0f64, (0..20u32).prop_map(|k| k as f64 / 200.0)], 1..40)
    }

    proptest! {
        #[test]
        fn qvalue_thresholding_matches_procedures(v in p_strategy(), alpha in 0.001..0.999f64) {
            let p = pv(&v);
            for proc in Procedure::ALL {
                prop_assert_eq!(qvalues(&p, proc).threshold(alpha), proc.apply(&p, alpha).unwrap());
            }
        }

        #[test]
        fn nesting_and_bh_g_inside_bh_i(v in p_strategy(), a in 0.001..0.999f64, b in 0.001..0.999f64) {
            let p = pv(&v);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for proc in Procedure::ALL {
                prop_assert!(proc.apply(&p, lo).unwrap().is_subset_of(&proc.apply(&p, hi).unwrap()));
            }
            prop_assert!(bh_general(&p, hi).unwrap().is_subset_of(&bh_independent(&p, hi).unwrap()));
        }

        #[test]
        fn fcr_levels_never_drop_below_one_minus_alpha(v in p_strategy(), alpha in 0.001..0.999f64) {
            let adj = fcr_adjusted_levels(&pv(&v), alpha).unwrap();
            prop_assert!(!adj.clamped);
            prop_assert!(adj.levels.iter().all(|&l| l >= 1.0 - alpha - 1e-15 && l < 1.0));
        }

        #[test]
        fn raising_a_pvalue_never_adds_rejections(v in p_strategy(), i in any::<prop::sample::Index>(), eps in 0.0..0.5f64, alpha in 0.001..0.999f64) {
            let p = pv(&v);
            let mut raised = v.clone();
            let k = i.index(v.len());
            raised[k] = (raised[k] + eps).min(1.0);
            let raised = pv(&raised);
            for proc in Procedure::ALL {
                prop_assert!(proc.apply(&raised, alpha).unwrap().is_subset_of(&proc.apply(&p, alpha).unwrap()));
            }
        }

        #[test]
        fn permutation_equivariance(v in p_strategy(), seed in any::<u64>(), alpha in 0.001..0.999f64) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut perm: Vec<usize> = (0..v.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let permuted: Vec<f64> = perm.iter().map(|&j| v[j]).collect();
            let (p, pp) = (pv(&v), pv(&permuted));
            for proc in Procedure::ALL {
                let q = qvalues(&p, proc).values;
                let qp = qvalues(&pp, proc).values;
                for (pos, &j) in perm.iter().enumerate() {
                    prop_assert_eq!(qp[pos], q[j]);
                }
                let rej = proc.apply(&p, alpha).unwrap();
                let rejp = proc.apply(&pp, alpha).unwrap();
                for (pos, &j) in perm.iter().enumerate() {
                    prop_assert_eq!(rejp.contains(pos), rej.contains(j));
                }
            }
        }
    }
}
