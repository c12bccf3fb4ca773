use alloc::vec::Vec;

use crate::error::{Error, Result};

fn validate(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InvalidSpectrum("empty"));
    }
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidSpectrum("values must be finite and non-negative"));
    }
    if values.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidSpectrum("values must be sorted non-increasing"));
    }
    let total: f64 = values.iter().sum();
    if total == 0.0 {
        return Err(Error::InvalidSpectrum("all values are zero"));
    }
    Ok(total)
}

/// Smallest `k` whose leading values hold at least `threshold` of the total.
///
/// Pass squared singular values for an SVD spectrum and covariance
/// eigenvalues for PCA; both then measure captured energy.
pub fn explained_variance_counts(values: &[f64], threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidThreshold(threshold));
    }
    let total = validate(values)?;
    let target = threshold * total;
    let mut cum = 0.0;
    for (i, v) in values.iter().enumerate() {
        cum += v;
        if cum >= target {
            return Ok(i + 1);
        }
    }
    Ok(values.len())
}

/// Cumulative captured fraction after each component.
pub fn cumulative_fractions(values: &[f64]) -> Result<Vec<f64>> {
    let total = validate(values)?;
    let mut cum = 0.0;
    Ok(values
        .iter()
        .map(|v| {
            cum += v;
            cum / total
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rank_one_spectrum() {
        assert_eq!(explained_variance_counts(&[4.0, 0.0, 0.0], 0.999).unwrap(), 1);
    }

    #[test]
    fn uniform_spectrum() {
        assert_eq!(explained_variance_counts(&[1.0; 4], 0.5).unwrap(), 2);
        assert_eq!(explained_variance_counts(&[1.0; 4], 1.0).unwrap(), 4);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(explained_variance_counts(&[0.0, 0.0], 0.5).is_err());
        assert!(explained_variance_counts(&[1.0, 2.0], 0.5).is_err());
        assert!(explained_variance_counts(&[1.0, -0.5], 0.5).is_err());
        assert!(explained_variance_counts(&[1.0], 0.0).is_err());
        assert!(explained_variance_counts(&[1.0], 1.5).is_err());
    }

    #[test]
    fn fractions_end_at_one() {
        let f = cumulative_fractions(&[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(f[2], 1.0);
        assert!((f[0] - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn monotone_in_threshold(mut v in proptest::collection::vec(0.0f64..10.0, 1..20), t1 in 0.01f64..1.0, t2 in 0.01f64..1.0) {
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            prop_assume!(v[0] > 0.0);
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(explained_variance_counts(&v, lo).unwrap() <= explained_variance_counts(&v, hi).unwrap());
        }
    }
}
