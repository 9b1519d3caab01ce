//! Sample moments with standard errors.

use serde::{Deserialize, Serialize};

/// Sample mean and its standard error.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub se_mean: f64,
    /// Delta-method standard error from the fourth central moment.
    pub se_variance: f64,
}

pub fn moments(xs: &[f64]) -> Moments {
    let n = xs.len() as f64;
    let (mean, se_mean) = mean_and_se(xs);
    if xs.len() < 2 {
        return Moments { mean, variance: 0.0, se_mean, se_variance: 0.0 };
    }
    let (m2, m4) = xs.iter().fold((0.0, 0.0), |(a, b), x| {
        let d2 = (x - mean) * (x - mean);
        (a + d2, b + d2 * d2)
    });
    let variance = m2 / (n - 1.0);
    let m2n = m2 / n;
    let m4n = m4 / n;
    let se_variance = ((m4n - m2n * m2n).max(0.0) / n).sqrt();
    Moments { mean, variance, se_mean, se_variance }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sample_has_zero_spread() {
        let m = moments(&[2.0; 10]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.variance, 0.0);
        assert_eq!(m.se_mean, 0.0);
    }

    #[test]
    fn two_point_sample() {
        let m = moments(&[0.0, 2.0]);
        assert_eq!(m.mean, 1.0);
        assert_eq!(m.variance, 2.0);
        assert!((m.se_mean - 1.0).abs() < 1e-15);
    }
}
