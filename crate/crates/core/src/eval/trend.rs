use serde::Serialize;

use crate::error::{Error, Result};

pub const MIN_TREND_SAMPLES: usize = 20;

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut r = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman rank correlation; `None` when either series is constant or
/// the lengths differ or are below 2.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| !v.is_finite()) {
        return None;
    }
    pearson(&ranks(x), &ranks(y))
}

/// Per-sample values feeding the two trend analyses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrendPoint {
    pub visible_ratio: f64,
    pub initial_error: f64,
    pub mde: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendReport {
    pub samples: usize,
    /// Rank correlation of visible ratio against MDE; `None` if undefined.
    pub visible_ratio_rho: Option<f64>,
    /// Rank correlation of initial rigid error against MDE.
    pub initial_error_rho: Option<f64>,
    pub points: Vec<TrendPoint>,
}

pub fn trend_analysis(points: &[TrendPoint]) -> Result<TrendReport> {
    if points.len() < MIN_TREND_SAMPLES {
        return Err(Error::Precondition(format!(
            "trend analysis needs at least {MIN_TREND_SAMPLES} samples, got {}",
            points.len()
        )));
    }
    let col = |f: fn(&TrendPoint) -> f64| points.iter().map(f).collect::<Vec<f64>>();
    let mde = col(|p| p.mde);
    Ok(TrendReport {
        samples: points.len(),
        visible_ratio_rho: spearman(&col(|p| p.visible_ratio), &mde),
        initial_error_rho: spearman(&col(|p| p.initial_error), &mde),
        points: points.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ties_share_average_rank() {
        assert_eq!(ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn monotone_series() {
        let x: Vec<f64> = (0..30).map(|i| i as f64 / 30.0).collect();
        let down: Vec<f64> = x.iter().map(|v| (-3.0 * v).exp()).collect();
        assert_eq!(spearman(&x, &down), Some(-1.0));
        assert_eq!(spearman(&x, &x), Some(1.0));
        assert_eq!(spearman(&x, &vec![1.0; 30]), None);
    }

    #[test]
    fn independent_series_are_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        let y: Vec<f64> = (0..1000).map(|_| rng.random()).collect();
        assert!(spearman(&x, &y).unwrap().abs() < 0.1);
    }

    #[test]
    fn needs_twenty_samples() {
        let p = TrendPoint { visible_ratio: 0.5, initial_error: 1.0, mde: 1.0 };
        assert!(trend_analysis(&vec![p; 19]).is_err());
        let r = trend_analysis(&vec![p; 20]).unwrap();
        assert_eq!(r.visible_ratio_rho, None);
    }
}
