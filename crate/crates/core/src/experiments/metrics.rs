//! Task metrics.

use std::collections::BTreeSet;

use crate::error::{check_len, Result};

/// Fraction of exact matches.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check_len(labels.len(), preds.len(), "predictions")?;
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Root mean squared error over entries where `mask` is set.
pub fn rmse(preds: &[f64], targets: &[f64], mask: &[bool]) -> Result<f64> {
    check_len(targets.len(), preds.len(), "predictions")?;
    check_len(targets.len(), mask.len(), "mask")?;
    let (mut s, mut c) = (0.0, 0usize);
    for ((p, t), &m) in preds.iter().zip(targets).zip(mask) {
        if m {
            s += (p - t) * (p - t);
            c += 1;
        }
    }
    Ok(if c == 0 { 0.0 } else { (s / c as f64).sqrt() })
}

/// Number of distinct items among every list's first `k` entries.
pub fn ad_at_k(lists: &[Vec<usize>], k: usize) -> usize {
    lists
        .iter()
        .flat_map(|l| l.iter().take(k).copied())
        .collect::<BTreeSet<_>>()
        .len()
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert!(accuracy(&[1], &[1, 2]).is_err());
        let same: Vec<Vec<usize>> = vec![(0..10).collect(); 5];
        assert_eq!(ad_at_k(&same, 10), 10);
        assert_eq!(ad_at_k(&[(0..10).collect(), (10..20).collect()], 10), 20);
        let r = rmse(&[1.0, 5.0, 2.0], &[2.0, 0.0, 4.0], &[true, false, true]).unwrap();
        assert!((r - (2.5f64).sqrt()).abs() < 1e-15);
    }
}
