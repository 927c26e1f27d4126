//! Least-squares slopes on log-log data.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Half-width of the 95% confidence interval on the slope; `None`
    /// with fewer than three points.
    pub half_width: Option<f64>,
    pub points: usize,
}

impl SlopeFit {
    /// Whether the confidence interval (or the point estimate, when there
    /// is no interval) meets `[lo, hi]`.
    pub fn within(&self, lo: f64, hi: f64) -> bool {
        let w = self.half_width.unwrap_or(0.0);
        self.slope + w >= lo && self.slope - w <= hi
    }
}

/// Fits `ln y = intercept + slope ln x` over points with positive
/// coordinates. Needs at least two distinct abscissae.
pub fn fit_loglog(points: &[(f64, f64)]) -> Option<SlopeFit> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = logs.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let half_width = (n >= 3).then(|| {
        let rss: f64 = logs
            .iter()
            .map(|p| (p.1 - intercept - slope * p.0).powi(2))
            .sum();
        let se = (rss / (nf - 2.0) / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, nf - 2.0)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        t * se
    });
    Some(SlopeFit {
        slope,
        intercept,
        half_width,
        points: n,
    })
}
