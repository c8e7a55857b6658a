//! Scalar numerics shared by the inference modules: standard normal
//! functions and adaptive Gauss–Kronrod quadrature.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::erfc;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Standard normal CDF, `Φ(x)`.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail `Φ̄(x) = 1 − Φ(x)`, accurate far into the right tail.
pub fn norm_sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Standard normal quantile. `p` must lie in (0, 1).
pub fn norm_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let x = Normal::standard().inverse_cdf(p);
    // One Halley step against the full-precision CDF.
    let err = if p < 0.5 { norm_cdf(x) - p } else { (1.0 - p) - norm_sf(x) };
    let u = err / norm_pdf(x);
    x - u / (1.0 + 0.5 * x * u)
}

/// `ln(Σ exp(x_i))` without overflow; `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

// Gauss–Kronrod 7/15 nodes on [-1, 1]; Gauss nodes are the odd-indexed Kronrod nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] =
    [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let pair = f(center - dx) + f(center + dx);
        kronrod += w * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    (kronrod * half, ((kronrod - gauss) * half).abs())
}

struct Segment {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

/// Tolerances and subdivision budget for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_segments: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { abs_tol: 1e-12, rel_tol: 1e-10, max_segments: 4000 }
    }
}

/// Result of an adaptive quadrature.
#[derive(Debug, Clone, Copy)]
pub struct Quadrature {
    pub value: f64,
    pub abs_error: f64,
    pub segments: usize,
}

/// Globally adaptive Gauss–Kronrod (7/15) integration of `f` over `[a, b]`.
///
/// The segment with the largest error estimate is bisected until the summed
/// error passes `max(abs_tol, rel_tol·|I|)`. Running out of segments is a
/// numeric error rather than a silently inaccurate answer.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<Quadrature> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidInput(format!("integration bounds must be finite: [{a}, {b}]")));
    }
    if a == b {
        return Ok(Quadrature { value: 0.0, abs_error: 0.0, segments: 0 });
    }
    let (value, err) = gk15(&f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, err });
    let mut total = value;
    let mut total_err = err;
    loop {
        if !total.is_finite() || !total_err.is_finite() {
            return Err(Error::Numeric(format!("non-finite integrand on [{a}, {b}]")));
        }
        if total_err <= opts.abs_tol.max(opts.rel_tol * total.abs()) {
            break;
        }
        if heap.len() >= opts.max_segments {
            return Err(Error::Numeric(format!(
                "quadrature did not converge in {} segments (estimate {total}, error {total_err})",
                opts.max_segments
            )));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        let (lv, le) = gk15(&f, worst.a, mid);
        let (rv, re) = gk15(&f, mid, worst.b);
        total += lv + rv - worst.value;
        total_err += le + re - worst.err;
        heap.push(Segment { a: worst.a, b: mid, value: lv, err: le });
        heap.push(Segment { a: mid, b: worst.b, value: rv, err: re });
    }
    // Re-sum to shed the drift of the running updates.
    let segments = heap.len();
    let (value, abs_error) = heap.into_iter().fold((0.0, 0.0), |(v, e), s| (v + s.value, e + s.err));
    Ok(Quadrature { value, abs_error, segments })
}

/// Integrates `f` over the whole real line through the substitution
/// `x = center + scale·t/(1 − t²)`, `t ∈ (−1, 1)`.
pub fn integrate_real_line<F: Fn(f64) -> f64>(f: F, center: f64, scale: f64, opts: QuadOptions) -> Result<Quadrature> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidInput(format!("scale must be positive, got {scale}")));
    }
    let mapped = |t: f64| {
        let d = 1.0 - t * t;
        let x = center + scale * t / d;
        let fx = f(x);
        if fx == 0.0 {
            0.0
        } else {
            fx * scale * (1.0 + t * t) / (d * d)
        }
    };
    integrate(mapped, -1.0, 1.0, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn normal_functions_match_reference_values() {
        assert_relative_eq!(norm_cdf(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(norm_cdf(-1.0), 0.158_655_253_931_457_05, epsilon = 1e-14);
        assert_relative_eq!(norm_pdf(1.0), 0.241_970_724_519_143_37, epsilon = 1e-15);
        assert_relative_eq!(norm_quantile(0.975), 1.959_963_984_540_054, epsilon = 1e-9);
        assert_relative_eq!(norm_sf(10.0), 7.619_853_024_160_527e-24, max_relative = 1e-10);
    }

    #[test]
    fn integrates_polynomials_and_gaussians() {
        let q = integrate(|x| x * x, 0.0, 3.0, QuadOptions::default()).unwrap();
        assert_relative_eq!(q.value, 9.0, epsilon = 1e-12);
        let g = integrate_real_line(norm_pdf, 0.0, 1.0, QuadOptions::default()).unwrap();
        assert_relative_eq!(g.value, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn budget_exhaustion_is_an_error() {
        let opts = QuadOptions { abs_tol: 0.0, rel_tol: 0.0, max_segments: 8 };
        assert!(matches!(integrate(|x: f64| x.sqrt(), 0.0, 1.0, opts), Err(Error::Numeric(_))));
    }

    #[test]
    fn log_sum_exp_is_stable() {
        assert_relative_eq!(log_sum_exp(&[1000.0, 1000.0]), 1000.0 + 2f64.ln());
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }
}
