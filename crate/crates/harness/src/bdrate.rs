//! Rate-quality curves and the Bjøntegaard delta rate.
//!
//! Each curve's log-rate is fitted as a polynomial in quality (cubic when
//! four or more points are available, least squares beyond four) on a
//! centred and scaled quality axis. The fits are integrated over the
//! overlapping quality interval and the mean log-rate difference is
//! reported as a percentage. Negative values mean the test curve needs
//! fewer bits for the same quality.

use nalgebra::{DMatrix, DVector};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RdCurve {
    pub metric: String,
    /// `(bpp, quality)` sorted by bpp.
    points: Vec<(f64, f64)>,
}

impl RdCurve {
    pub fn new(metric: impl Into<String>, mut points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(HarnessError::Curve(format!("{} point(s); at least 2 required", points.len())));
        }
        if points.iter().any(|&(r, q)| !(r.is_finite() && q.is_finite() && r > 0.0)) {
            return Err(HarnessError::Curve("rates must be positive and all values finite".into()));
        }
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(HarnessError::Curve("duplicate rate points".into()));
        }
        Ok(Self { metric: metric.into(), points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    fn quality_range(&self) -> (f64, f64) {
        self.points.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, q)| (lo.min(q), hi.max(q)))
    }
}

/// `ln(rate)` as a polynomial in `(quality - centre) / scale`.
struct LogRateFit {
    coeffs: Vec<f64>,
    centre: f64,
    scale: f64,
}

impl LogRateFit {
    fn new(curve: &RdCurve) -> Result<Self> {
        let n = curve.points.len();
        let qs: Vec<f64> = curve.points.iter().map(|p| p.1).collect();
        let centre = qs.iter().sum::<f64>() / n as f64;
        let scale = (qs.iter().map(|q| (q - centre).powi(2)).sum::<f64>() / n as f64).sqrt();
        if scale <= 0.0 {
            return Err(HarnessError::Curve("all points share one quality value".into()));
        }
        let degree = (n - 1).min(3);
        let a = DMatrix::from_fn(n, degree + 1, |i, j| ((qs[i] - centre) / scale).powi(j as i32));
        let b = DVector::from_iterator(n, curve.points.iter().map(|p| p.0.ln()));
        let coeffs = a.svd(true, true).solve(&b, 1e-12).map_err(|e| HarnessError::Curve(format!("fit failed: {e}")))?;
        Ok(Self { coeffs: coeffs.iter().copied().collect(), centre, scale })
    }

    /// Integral of the fit over quality in `[lo, hi]`.
    fn integral(&self, lo: f64, hi: f64) -> f64 {
        let anti = |q: f64| {
            let s = (q - self.centre) / self.scale;
            self.coeffs.iter().enumerate().map(|(j, c)| c * s.powi(j as i32 + 1) / (j + 1) as f64).sum::<f64>()
        };
        self.scale * (anti(hi) - anti(lo))
    }
}

/// Average rate difference of `test` relative to `anchor` at equal quality,
/// in percent.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<f64> {
    for (name, c) in [("anchor", anchor), ("test", test)] {
        if c.points.len() < 3 {
            return Err(HarnessError::Curve(format!("{name} has {} points; at least 3 required", c.points.len())));
        }
    }
    let (a_lo, a_hi) = anchor.quality_range();
    let (t_lo, t_hi) = test.quality_range();
    let (lo, hi) = (a_lo.max(t_lo), a_hi.min(t_hi));
    if hi <= lo {
        return Err(HarnessError::Curve(format!("quality ranges [{a_lo}, {a_hi}] and [{t_lo}, {t_hi}] do not overlap")));
    }
    let fa = LogRateFit::new(anchor)?;
    let ft = LogRateFit::new(test)?;
    let mean_diff = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
    Ok((mean_diff.exp() - 1.0) * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn anchor() -> RdCurve {
        RdCurve::new("ssim", vec![(0.02, 0.80), (0.05, 0.88), (0.1, 0.92), (0.2, 0.95), (0.4, 0.97)]).unwrap()
    }

    #[test]
    fn identical_is_zero() {
        assert_eq!(bd_rate(&anchor(), &anchor()).unwrap(), 0.0);
    }

    #[test]
    fn doubled_rate_is_plus_hundred() {
        let a = anchor();
        let doubled = RdCurve::new("ssim", a.points().iter().map(|&(r, q)| (2.0 * r, q)).collect()).unwrap();
        assert!((bd_rate(&a, &doubled).unwrap() - 100.0).abs() < 1e-9);
        assert!((bd_rate(&doubled, &a).unwrap() + 50.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(RdCurve::new("q", vec![(0.1, 1.0)]).is_err());
        assert!(RdCurve::new("q", vec![(0.1, 1.0), (0.1, 2.0)]).is_err());
        assert!(RdCurve::new("q", vec![(0.0, 1.0), (0.1, 2.0)]).is_err());
        let two = RdCurve::new("q", vec![(0.1, 1.0), (0.2, 2.0)]).unwrap();
        assert!(bd_rate(&two, &anchor()).is_err());
        let far = RdCurve::new("q", vec![(0.1, 5.0), (0.2, 6.0), (0.3, 7.0)]).unwrap();
        assert!(bd_rate(&anchor(), &far).is_err());
    }

    #[test]
    fn sort_order_is_irrelevant() {
        let mut pts = anchor().points().to_vec();
        pts.reverse();
        assert_eq!(RdCurve::new("ssim", pts).unwrap(), anchor());
    }
}
