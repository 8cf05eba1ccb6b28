//! Resonator mathematics.
//!
//! A resonator maps a scalar input `x` through a monotonic transform `X = f(x)`
//! and emits `y = X (k - X)`. The output peaks at `k²/4` when `X = k/2`, no
//! matter how the input was scaled or shifted, which is what keeps a node's
//! output bounded while its tuning changes.
//!
//! Everything here is a pure function of its arguments.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gain between a Gaussian standard deviation and the sigmoid control
/// parameter whose half-power coverage matches it: `ρ = 1.4652 / σ`.
pub const RHO_SIGMA_GAIN: f64 = 1.4652;

/// Half-power coverage of a Gaussian in units of σ, `√(ln 2)`.
pub const GAUSSIAN_HALF_POWER_ALPHA: f64 = 0.832_554_611_157_697_7;

/// Threshold used when quoting coverage widths at the half-power point.
pub const HALF_POWER_T: f64 = 0.176;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResonanceError {
    #[error("invalid resonator parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("threshold {threshold} is not below the resonator peak {peak}; coverage is empty")]
    EmptyCoverage { threshold: f64, peak: f64 },
}

type Result<T> = std::result::Result<T, ResonanceError>;

/// Input transform applied before the resonance polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    /// `X = x·p`.
    ScaledInput { scale: f64 },
    /// `X = x − p`.
    TranslatedInput { offset: f64 },
    /// `X = 1 / (1 + e^{−ρ(x − c)})`, with the midpoint `c` placed so that the
    /// resonance peak lands on `center`.
    Sigmoid { center: f64, rho: f64 },
}

/// One scalar input's tuned resonance curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonatorSpec {
    k: f64,
    transform: Transform,
}

/// Raw input values at which a resonator's output crosses a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageInterval {
    pub lower: f64,
    pub upper: f64,
}

impl CoverageInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower < x && x < self.upper
    }
}

fn positive(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(ResonanceError::InvalidParameter { name, value })
    }
}

fn finite(name: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(ResonanceError::InvalidParameter { name, value })
    }
}

impl ResonatorSpec {
    /// Builds a resonator, checking that the transform can place inputs on
    /// both sides of `X = k/2`. The sigmoid only spans `(0, 1)`, so it needs
    /// `k < 2`.
    pub fn new(k: f64, transform: Transform) -> Result<Self> {
        positive("k", k)?;
        match transform {
            Transform::ScaledInput { scale } => {
                positive("p", scale)?;
            }
            Transform::TranslatedInput { offset } => {
                finite("p", offset)?;
            }
            Transform::Sigmoid { center, rho } => {
                finite("x_m", center)?;
                positive("rho", rho)?;
                if k >= 2.0 {
                    return Err(ResonanceError::InvalidParameter { name: "k", value: k });
                }
            }
        }
        Ok(Self { k, transform })
    }

    /// Sigmoid resonator with `k = 1`, the configuration used by the networks.
    pub fn sigmoid(center: f64, rho: f64) -> Result<Self> {
        Self::new(1.0, Transform::Sigmoid { center, rho })
    }

    pub fn scaled(k: f64, scale: f64) -> Result<Self> {
        Self::new(k, Transform::ScaledInput { scale })
    }

    pub fn translated(k: f64, offset: f64) -> Result<Self> {
        Self::new(k, Transform::TranslatedInput { offset })
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    /// Offset between the sigmoid midpoint and the peak, `logit(k/2)`; zero for `k = 1`.
    fn sigmoid_shift(&self) -> f64 {
        let half = self.k / 2.0;
        (half / (1.0 - half)).ln()
    }

    /// The transformed input `X = f(x)`.
    pub fn transformed(&self, x: f64) -> f64 {
        match self.transform {
            Transform::ScaledInput { scale } => x * scale,
            Transform::TranslatedInput { offset } => x - offset,
            Transform::Sigmoid { center, rho } => {
                let z = rho * (x - center) + self.sigmoid_shift();
                1.0 / (1.0 + (-z).exp())
            }
        }
    }

    /// Resonator output `X (k − X)`, floored at zero where the polynomial
    /// would go negative (far tails of the scaled and translated transforms).
    pub fn resonate(&self, x: f64) -> f64 {
        if let Transform::Sigmoid { center, rho } = self.transform {
            if self.k == 1.0 {
                return sigmoid_resonance(rho * (x - center));
            }
        }
        let big_x = self.transformed(x);
        (big_x * (self.k - big_x)).max(0.0)
    }

    /// Output normalized so the peak is 1.
    pub fn normalized(&self, x: f64) -> f64 {
        self.resonate(x) * 4.0 / (self.k * self.k)
    }

    /// Analytic peak location and value.
    pub fn peak(&self) -> (f64, f64) {
        let k = self.k;
        let x_m = match self.transform {
            Transform::TranslatedInput { offset } => k / 2.0 + offset,
            Transform::ScaledInput { scale } => k / (2.0 * scale),
            Transform::Sigmoid { center, .. } => center,
        };
        (x_m, k * k / 4.0)
    }

    /// Input interval over which `resonate(x) > t`, with `t` on the raw
    /// (peak `k²/4`) scale.
    pub fn coverage_bounds(&self, t: f64) -> Result<CoverageInterval> {
        if !(t > 0.0) {
            return Err(ResonanceError::InvalidParameter { name: "T", value: t });
        }
        let (x_m, peak) = self.peak();
        if t >= peak {
            return Err(ResonanceError::EmptyCoverage { threshold: t, peak });
        }
        let k = self.k;
        // Roots of X (k − X) = t in the transformed domain.
        let disc = (k * k - 4.0 * t).sqrt();
        let (lo_x, hi_x) = ((k - disc) / 2.0, (k + disc) / 2.0);
        let interval = match self.transform {
            Transform::ScaledInput { scale } => CoverageInterval {
                lower: lo_x / scale,
                upper: hi_x / scale,
            },
            Transform::TranslatedInput { offset } => CoverageInterval {
                lower: lo_x + offset,
                upper: hi_x + offset,
            },
            Transform::Sigmoid { center, rho } if k == 1.0 => {
                let half = sigmoid_half_width(t) / rho;
                CoverageInterval {
                    lower: center - half,
                    upper: center + half,
                }
            }
            Transform::Sigmoid { .. } => CoverageInterval {
                lower: self.bisect_crossing(x_m, t, -1.0),
                upper: self.bisect_crossing(x_m, t, 1.0),
            },
        };
        Ok(interval)
    }

    /// Finds where the output falls to `t` walking away from the peak in
    /// `direction`. The bracket doubles until it straddles the crossing.
    fn bisect_crossing(&self, x_m: f64, t: f64, direction: f64) -> f64 {
        // X tends to 0 or 1 in the tails, so the output tends to 0 or k − 1.
        let tail = if direction > 0.0 { self.k - 1.0 } else { 0.0 };
        if tail >= t {
            return direction * f64::INFINITY;
        }
        let mut width = 1.0;
        while self.resonate(x_m + direction * width) > t {
            width *= 2.0;
        }
        let (mut inside, mut outside) = (0.0_f64, width);
        for _ in 0..200 {
            if outside - inside <= 1e-10 * width.max(1.0) {
                break;
            }
            let mid = 0.5 * (inside + outside);
            if self.resonate(x_m + direction * mid) > t {
                inside = mid;
            } else {
                outside = mid;
            }
        }
        x_m + direction * 0.5 * (inside + outside)
    }
}

/// `X(1 − X)` for `X = sigmoid(z)`, written in terms of `e^{−|z|}` so the
/// tails neither cancel nor overflow.
#[inline]
pub fn sigmoid_resonance(z: f64) -> f64 {
    let e = (-z.abs()).exp();
    e / ((1.0 + e) * (1.0 + e))
}

/// `4 X(1 − X)` for `X = sigmoid(z)`; equals `sech²(z/2)` and peaks at 1.
#[inline]
pub fn normalized_sigmoid_resonance(z: f64) -> f64 {
    if z == 0.0 {
        return 1.0;
    }
    let e = (-z.abs()).exp();
    4.0 * e / ((1.0 + e) * (1.0 + e))
}

/// Distance `ρ·|x − x_m|` at which a `k = 1` sigmoid resonator falls to `t`:
/// `cosh⁻¹((1/t − 2) / 2)`.
pub fn sigmoid_half_width(t: f64) -> f64 {
    ((1.0 / t - 2.0) / 2.0).acosh()
}

/// Half-power threshold `(k²/4)/√2`.
pub fn half_power_threshold(k: f64) -> f64 {
    k * k / 4.0 / std::f64::consts::SQRT_2
}

/// Sigmoid control parameter matching a Gaussian spread.
pub fn rho_from_sigma(sigma: f64) -> Result<f64> {
    Ok(RHO_SIGMA_GAIN / positive("sigma", sigma)?)
}

/// Coverage `x_m ± α σ` derived from input statistics.
pub fn coverage_from_stats(x_m: f64, sigma: f64, alpha: f64) -> Result<CoverageInterval> {
    finite("x_m", x_m)?;
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(ResonanceError::InvalidParameter {
            name: "sigma",
            value: sigma,
        });
    }
    positive("alpha", alpha)?;
    Ok(CoverageInterval {
        lower: x_m - alpha * sigma,
        upper: x_m + alpha * sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// Independent crossing finder: plain bisection on the raw resonator
    /// between the peak and a far point known to be below threshold.
    fn oracle_crossing(spec: &ResonatorSpec, t: f64, dir: f64) -> f64 {
        let (x_m, _) = spec.peak();
        let mut far = 1e-3;
        while spec.resonate(x_m + dir * far) > t {
            far *= 1.5;
        }
        let (mut a, mut b) = (x_m, x_m + dir * far);
        for _ in 0..300 {
            let m = 0.5 * (a + b);
            if spec.resonate(m) > t {
                a = m;
            } else {
                b = m;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn sigmoid_peak_is_quarter() {
        let s = ResonatorSpec::sigmoid(0.3, 2.42).unwrap();
        assert_eq!(s.resonate(0.3), 0.25);
        assert_abs_diff_eq!(s.resonate(0.3 + 1000.0), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(s.resonate(0.3 - 1000.0), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn sigmoid_at_half_power_edge() {
        // 1.2198 / 2.42 from the center lands on the T = 0.176 crossing.
        let s = ResonatorSpec::sigmoid(0.0, 2.42).unwrap();
        assert_abs_diff_eq!(s.resonate(0.5041), 0.175_988_894, epsilon = 1e-8);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(matches!(
            ResonatorSpec::sigmoid(0.0, 0.0),
            Err(ResonanceError::InvalidParameter { name: "rho", .. })
        ));
        assert!(ResonatorSpec::scaled(1.0, -1.0).is_err());
        assert!(ResonatorSpec::scaled(0.0, 1.0).is_err());
        // k = 2 puts X_m = 1 outside the sigmoid's open range.
        assert!(ResonatorSpec::new(
            2.0,
            Transform::Sigmoid {
                center: 0.0,
                rho: 1.0
            }
        )
        .is_err());
        assert!(ResonatorSpec::translated(1.0, f64::NAN).is_err());
    }

    #[test]
    fn peaks() {
        assert_eq!(ResonatorSpec::scaled(1.0, 1.0).unwrap().peak(), (0.5, 0.25));
        assert_eq!(ResonatorSpec::translated(1.0, 0.0).unwrap().peak(), (0.5, 0.25));
        assert_eq!(ResonatorSpec::scaled(2.0, 0.5).unwrap().peak(), (2.0, 1.0));
    }

    #[test]
    fn half_power() {
        assert_abs_diff_eq!(half_power_threshold(1.0), 0.176_776_695, epsilon = 1e-9);
        assert_abs_diff_eq!(
            half_power_threshold(2.0),
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
        assert!(half_power_threshold(1e-9) < 1e-15);
    }

    #[test]
    fn scaled_coverage() {
        let s = ResonatorSpec::scaled(1.0, 1.0).unwrap();
        let c = s.coverage_bounds(0.176).unwrap();
        assert_abs_diff_eq!(c.lower, 0.227_970_590, epsilon = 1e-8);
        assert_abs_diff_eq!(c.upper, 0.772_029_410, epsilon = 1e-8);
        assert_abs_diff_eq!(c.lower, oracle_crossing(&s, 0.176, -1.0), epsilon = 1e-9);
    }

    #[test]
    fn sigmoid_coverage() {
        let c = ResonatorSpec::sigmoid(0.0, 1.0)
            .unwrap()
            .coverage_bounds(0.176)
            .unwrap();
        assert_abs_diff_eq!(c.upper, 1.219_806_017, epsilon = 1e-8);
        assert_abs_diff_eq!(c.lower, -1.219_806_017, epsilon = 1e-8);
        let c = ResonatorSpec::sigmoid(0.0, 2.0)
            .unwrap()
            .coverage_bounds(0.176)
            .unwrap();
        assert_abs_diff_eq!(c.upper, 0.609_903_008, epsilon = 1e-8);
    }

    #[test]
    fn coverage_errors() {
        let s = ResonatorSpec::sigmoid(0.0, 1.0).unwrap();
        assert!(matches!(
            s.coverage_bounds(0.25),
            Err(ResonanceError::EmptyCoverage { .. })
        ));
        assert!(matches!(
            s.coverage_bounds(0.0),
            Err(ResonanceError::InvalidParameter { .. })
        ));
    }

    #[test]
    fn rho_sigma() {
        assert_eq!(rho_from_sigma(1.0).unwrap(), 1.4652);
        assert_abs_diff_eq!(rho_from_sigma(0.5).unwrap(), 2.9304, epsilon = 1e-12);
        let rho = rho_from_sigma(0.8325).unwrap();
        assert_abs_diff_eq!(rho, 1.76, epsilon = 1e-4);
        let c = ResonatorSpec::sigmoid(0.0, rho)
            .unwrap()
            .coverage_bounds(HALF_POWER_T)
            .unwrap();
        assert_abs_diff_eq!(c.upper, 0.693_071_6, epsilon = 1e-4);
        assert!(rho_from_sigma(0.0).is_err());
        assert!(rho_from_sigma(-1.0).is_err());
    }

    #[test]
    fn stats_coverage() {
        let c = coverage_from_stats(0.5, 0.1, 0.8325).unwrap();
        assert_abs_diff_eq!(c.lower, 0.41675, epsilon = 1e-12);
        assert_abs_diff_eq!(c.upper, 0.58325, epsilon = 1e-12);
        let c = coverage_from_stats(0.0, 1.0, 0.8325).unwrap();
        assert_eq!((c.lower, c.upper), (-0.8325, 0.8325));
        let c = coverage_from_stats(0.7, 0.0, 0.8325).unwrap();
        assert_eq!((c.lower, c.upper), (0.7, 0.7));
    }

    #[test]
    fn constants() {
        assert_abs_diff_eq!(sigmoid_half_width(0.176), 1.2198, epsilon = 1e-3);
        assert_abs_diff_eq!(2f64.ln().sqrt(), GAUSSIAN_HALF_POWER_ALPHA, epsilon = 1e-15);
        assert_abs_diff_eq!(1.2198 / 0.8325, RHO_SIGMA_GAIN, epsilon = 1e-3);
    }

    #[test]
    fn general_k_sigmoid_uses_bisection() {
        let s = ResonatorSpec::new(
            1.5,
            Transform::Sigmoid {
                center: 0.2,
                rho: 3.0,
            },
        )
        .unwrap();
        let (x_m, peak) = s.peak();
        assert_abs_diff_eq!(s.resonate(x_m), peak, epsilon = 1e-12);
        let t = 0.55;
        let c = s.coverage_bounds(t).unwrap();
        assert!(c.contains(x_m));
        assert_abs_diff_eq!(s.resonate(c.lower), t, epsilon = 1e-9);
        assert_abs_diff_eq!(s.resonate(c.upper), t, epsilon = 1e-9);
        // k ≠ 1 skews the curve.
        assert!((c.upper - x_m - (x_m - c.lower)).abs() > 1e-3);
        // Output tends to k − 1 = 0.5 on the right, so T = 0.4 never closes.
        let open = s.coverage_bounds(0.4).unwrap();
        assert!(open.lower.is_finite());
        assert_eq!(open.upper, f64::INFINITY);
    }

    proptest! {
        #[test]
        fn sigmoid_symmetric(center in -5.0..5.0f64, rho in 0.1..50.0f64, d in 0.0..3.0f64) {
            let s = ResonatorSpec::sigmoid(center, rho).unwrap();
            prop_assert!((s.resonate(center + d) - s.resonate(center - d)).abs() < 1e-12);
        }

        #[test]
        fn monotone_away_from_peak(center in -1.0..1.0f64, rho in 0.5..20.0f64, a in 0.0..1.0f64, b in 0.0..1.0f64) {
            let s = ResonatorSpec::sigmoid(center, rho).unwrap();
            let (near, far) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(s.resonate(center + near) >= s.resonate(center + far));
        }

        #[test]
        fn coverage_endpoints_hit_threshold(center in -2.0..2.0f64, rho in 0.2..40.0f64, t in 0.01..0.249f64) {
            let s = ResonatorSpec::sigmoid(center, rho).unwrap();
            let c = s.coverage_bounds(t).unwrap();
            prop_assert!((s.resonate(c.lower) - t).abs() < 1e-9);
            prop_assert!((s.resonate(c.upper) - t).abs() < 1e-9);
            prop_assert!((c.upper - oracle_crossing(&s, t, 1.0)).abs() < 1e-8);
        }

        #[test]
        fn wider_rho_shrinks_coverage(rho in 0.2..20.0f64, bump in 0.01..5.0f64, t in 0.05..0.24f64) {
            let a = ResonatorSpec::sigmoid(0.0, rho).unwrap().coverage_bounds(t).unwrap();
            let b = ResonatorSpec::sigmoid(0.0, rho + bump).unwrap().coverage_bounds(t).unwrap();
            prop_assert!(b.width() < a.width());
        }
    }
}
