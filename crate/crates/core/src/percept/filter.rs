//! Two-step Chebyshev outlier filter.
//!
//! Per stimulus level: a first pass computes mean and sample deviation of all
//! responses and trims everything outside `mean +- sqrt(1/p1) * sd`; a second
//! pass recomputes the statistics on the trimmed data and determines the
//! final bounds with `sqrt(1/p2)`. The returned partition applies the final
//! bounds to the complete input, so a point trimmed in pass one can still be
//! kept if it falls inside the final bounds.

use crate::error::{Error, Result};
use std::collections::BTreeMap;

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Split `(stimulus, response)` pairs into kept points and outliers.
/// Requires at least 3 responses per stimulus level and `0 < p2 <= p1 < 1`.
pub fn chebyshev_filter(
    values: &[(f64, f64)],
    p1: f64,
    p2: f64,
) -> Result<(Vec<(f64, f64)>, Vec<(f64, f64)>)> {
    if !(p2 > 0.0 && p2 <= p1 && p1 < 1.0) {
        return Err(Error::validation(format!(
            "filter parameters need 0 < p2 <= p1 < 1, got p1={p1}, p2={p2}"
        )));
    }
    let mut groups: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for &(s, r) in values {
        groups.entry(s.to_bits()).or_default().push(r);
    }

    let k1 = (1.0 / p1).sqrt();
    let k2 = (1.0 / p2).sqrt();
    let mut bounds: BTreeMap<u64, (f64, f64)> = BTreeMap::new();
    for (key, responses) in &groups {
        if responses.len() < 3 {
            return Err(Error::validation(format!(
                "stimulus level {} has only {} responses (need 3)",
                f64::from_bits(*key),
                responses.len()
            )));
        }
        let (m1, sd1) = mean_sd(responses);
        if sd1 == 0.0 {
            bounds.insert(*key, (f64::NEG_INFINITY, f64::INFINITY));
            continue;
        }
        let (lo1, hi1) = (m1 - k1 * sd1, m1 + k1 * sd1);
        let trimmed: Vec<f64> = responses
            .iter()
            .copied()
            .filter(|r| (lo1..=hi1).contains(r))
            .collect();
        let (m2, sd2) = if trimmed.is_empty() {
            (m1, sd1)
        } else {
            mean_sd(&trimmed)
        };
        bounds.insert(*key, (m2 - k2 * sd2, m2 + k2 * sd2));
    }

    let mut kept = Vec::new();
    let mut outliers = Vec::new();
    for &(s, r) in values {
        let (lo, hi) = bounds[&s.to_bits()];
        if (lo..=hi).contains(&r) {
            kept.push((s, r));
        } else {
            outliers.push((s, r));
        }
    }
    Ok((kept, outliers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    #[test]
    fn identical_responses_have_no_outliers() {
        let data: Vec<(f64, f64)> = (0..20).map(|_| (3.0, 7.0)).collect();
        let (kept, out) = chebyshev_filter(&data, 0.375, 0.175).unwrap();
        assert_eq!(kept.len(), 20);
        assert!(out.is_empty());
    }

    #[test]
    fn gross_error_is_the_sole_outlier() {
        let mut rng = StdRng::seed_from_u64(42);
        let normal = Normal::new(5.0, 1.0).unwrap();
        let mut data: Vec<(f64, f64)> = (0..100).map(|_| (2.0, normal.sample(&mut rng))).collect();
        data.push((2.0, 50.0));
        let (kept, out) = chebyshev_filter(&data, 0.375, 0.175).unwrap();
        assert!(out.iter().any(|&(_, r)| r == 50.0));
        assert_eq!(kept.len() + out.len(), data.len());
        // the two-step bounds sit near 1.9 sd, so a few tail samples may go;
        // the gross error must dominate the removed set
        assert!(out.len() <= 8, "removed {} points", out.len());
    }

    #[test]
    fn partition_property() {
        let mut rng = StdRng::seed_from_u64(7);
        let data: Vec<(f64, f64)> = (0..300)
            .map(|i| ((i % 5) as f64, rng.gen_range(0.0..10.0)))
            .collect();
        let (kept, out) = chebyshev_filter(&data, 0.375, 0.175).unwrap();
        assert_eq!(kept.len() + out.len(), data.len());
        let mut merged = kept.clone();
        merged.extend(out.clone());
        merged.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut orig = data.clone();
        orig.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(merged, orig);
    }

    #[test]
    fn larger_p2_keeps_fewer_points() {
        let mut rng = StdRng::seed_from_u64(8);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let data: Vec<(f64, f64)> = (0..500).map(|_| (1.0, normal.sample(&mut rng))).collect();
        let (kept_tight, _) = chebyshev_filter(&data, 0.375, 0.375).unwrap();
        let (kept_loose, _) = chebyshev_filter(&data, 0.375, 0.175).unwrap();
        // smaller p2 means wider final bounds: its kept set is a superset
        for p in &kept_tight {
            assert!(kept_loose.contains(p));
        }
    }

    #[test]
    fn too_few_responses_per_level_is_an_error() {
        let data = vec![(1.0, 2.0), (1.0, 3.0)];
        assert!(chebyshev_filter(&data, 0.375, 0.175).is_err());
    }
}
