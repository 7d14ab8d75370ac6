//! Step-curve average precision and precision-recall curves.
//!
//! Items are ranked by descending score. Equal scores keep their input
//! order, so the first-listed of two tied items ranks higher.

use std::cmp::Ordering;

use crate::error::{Error, Result};

fn check(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {s}")));
    }
    if !labels.contains(&true) {
        return Err(Error::NoPositives);
    }
    Ok(())
}

/// Indices by descending score, ties in input order.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    idx
}

/// Mean of the precision at the rank of each positive.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check(scores, labels)?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, i) in ranking(scores).into_iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / hits as f64)
}

/// `(recall, precision)` after each ranked item, starting from `(0, 1)`.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>> {
    check(scores, labels)?;
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut out = Vec::with_capacity(scores.len() + 1);
    out.push((0.0, 1.0));
    let mut hits = 0usize;
    for (rank, i) in ranking(scores).into_iter().enumerate() {
        hits += usize::from(labels[i]);
        out.push((hits as f64 / positives, hits as f64 / (rank + 1) as f64));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_examples() {
        assert_eq!(average_precision(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap(), (1.0 + 2.0 / 3.0) / 2.0);
        assert_eq!(average_precision(&[0.4, 0.3, 0.2, 0.1], &[false, false, false, true]).unwrap(), 0.25);
        assert_eq!(average_precision(&[0.1, 0.9, 0.2], &[false, true, false]).unwrap(), 1.0);
    }

    #[test]
    fn ties_keep_input_order() {
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]).unwrap(), 0.5);
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(average_precision(&[0.1], &[false]), Err(Error::NoPositives)));
        assert!(matches!(average_precision(&[0.1], &[true, false]), Err(Error::Shape(_))));
        assert!(matches!(average_precision(&[f64::NAN], &[true]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn curve_spans_recall_zero_to_one() {
        let c = pr_curve(&[0.3, 0.9, 0.1, 0.5], &[true, false, false, true]).unwrap();
        assert_eq!(c.first(), Some(&(0.0, 1.0)));
        assert_eq!(c.last().unwrap().0, 1.0);
        assert_eq!(c.len(), 5);
    }

    proptest! {
        #[test]
        fn invariant_under_increasing_transforms(
            data in prop::collection::vec((0u8..6, any::<bool>()), 1..30)
        ) {
            prop_assume!(data.iter().any(|d| d.1));
            let s: Vec<f64> = data.iter().map(|d| d.0 as f64).collect();
            let l: Vec<bool> = data.iter().map(|d| d.1).collect();
            let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
            prop_assert_eq!(average_precision(&s, &l).unwrap(), average_precision(&t, &l).unwrap());
        }

        #[test]
        fn lies_in_unit_interval(
            data in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 1..30)
        ) {
            prop_assume!(data.iter().any(|d| d.1));
            let s: Vec<f64> = data.iter().map(|d| d.0).collect();
            let l: Vec<bool> = data.iter().map(|d| d.1).collect();
            let ap = average_precision(&s, &l).unwrap();
            prop_assert!(ap > 0.0 && ap <= 1.0);
        }
    }
}
