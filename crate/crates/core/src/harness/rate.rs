use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Least-squares fit of `log statistic = intercept + slope * log n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits a power law through `(n, statistic)` points. Nonpositive statistics
/// are dropped with a warning; fewer than three usable points is an error.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(n, y)| {
            let ok = n > 0.0 && y > 0.0 && y.is_finite();
            if !ok {
                log::warn!("dropping point (n={n}, statistic={y}) from rate fit");
            }
            ok
        })
        .map(|&(n, y)| (n.ln(), y.ln()))
        .collect();
    if usable.len() < 3 {
        return Err(Error::InsufficientPoints(usable.len()));
    }
    let k = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / k;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = usable.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::param("rate fit needs at least two distinct n"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(RateFit {
        slope,
        intercept,
        r_squared,
        points: usable.len(),
    })
}

/// Median (mean of the middle pair for even lengths); `None` when empty.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 { v[k / 2] } else { 0.5 * (v[k / 2 - 1] + v[k / 2]) })
}
