//! Trajectory bins, event windows and the pretraining losses.

use ndarray::{Array2, Array4, ArrayView2, ArrayView4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::play::events::N_EVENTS;
use crate::play::sequence::STEP_HZ;

pub const BINS_PER_AXIS: usize = 11;
pub const N_BINS: usize = BINS_PER_AXIS * BINS_PER_AXIS;
pub const BIN_HALF_EXTENT: f64 = 5.5;
pub const N_REGIONS: usize = 3;
/// Floor applied to probabilities before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Past,
    Current,
    Future,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Past, Region::Current, Region::Future];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::Past => "past",
            Region::Current => "current",
            Region::Future => "future",
        }
    }
}

/// Row-major bin of a per-step displacement: `x_cell * 11 + y_cell`.
///
/// Each component is clamped to `[-5.5, 5.5)` and floored to a 1 ft cell, so
/// any finite input maps to a bin.
pub fn bin_delta(d: [f64; 2]) -> usize {
    let cell = |v: f64| {
        let c = (v + BIN_HALF_EXTENT).floor();
        if c.is_nan() {
            return BINS_PER_AXIS / 2;
        }
        c.clamp(0.0, (BINS_PER_AXIS - 1) as f64) as usize
    };
    cell(d[0]) * BINS_PER_AXIS + cell(d[1])
}

/// Center of a bin's cell.
pub fn bin_center(bin: usize) -> [f64; 2] {
    let (x, y) = (bin / BINS_PER_AXIS, bin % BINS_PER_AXIS);
    [x as f64 - 5.0, y as f64 - 5.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindowConfig {
    #[serde(rename = "delta_past")]
    pub past_s: f64,
    #[serde(rename = "delta_future")]
    pub future_s: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            past_s: 2.0,
            future_s: 2.0,
        }
    }
}

impl WindowConfig {
    pub fn from_steps(past: usize, future: usize) -> Self {
        WindowConfig {
            past_s: past as f64 / STEP_HZ,
            future_s: future as f64 / STEP_HZ,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.past_s > 0.0) {
            return Err(Error::config("objectives.delta_past", "must be > 0 seconds"));
        }
        if !(self.future_s > 0.0) {
            return Err(Error::config("objectives.delta_future", "must be > 0 seconds"));
        }
        Ok(())
    }

    pub fn past_steps(&self) -> usize {
        (self.past_s * STEP_HZ).round() as usize
    }

    pub fn future_steps(&self) -> usize {
        (self.future_s * STEP_HZ).round() as usize
    }
}

/// Expands (T, N, E) indicators into (T, N, E, 3) past/current/future windows.
/// Window terms outside the sequence are skipped.
pub fn derive_event_windows(events: &ndarray::Array3<u8>, cfg: &WindowConfig) -> Array4<u8> {
    let (t_n, n, e_n) = events.dim();
    let (dp, df) = (cfg.past_steps(), cfg.future_steps());
    let mut out = Array4::zeros((t_n, n, e_n, N_REGIONS));
    for i in 0..n {
        for e in 0..e_n {
            // last step carrying the event, swept forward for the past window
            let mut last: Option<usize> = None;
            for t in 0..t_n {
                if last.is_some_and(|s| t - s <= dp) {
                    out[[t, i, e, 0]] = 1;
                }
                let v = events[[t, i, e]];
                out[[t, i, e, 1]] = v;
                if v != 0 {
                    last = Some(t);
                }
            }
            let mut next: Option<usize> = None;
            for t in (0..t_n).rev() {
                if next.is_some_and(|s| s - t <= df) {
                    out[[t, i, e, 2]] = 1;
                }
                if events[[t, i, e]] != 0 {
                    next = Some(t);
                }
            }
        }
    }
    out
}

/// Mean negative log-likelihood of the true bins; also reports whether the
/// probability floor was hit.
pub fn trajectory_nll(probs: ArrayView2<f64>, truth: &[usize]) -> Result<(f64, bool)> {
    if probs.nrows() != truth.len() {
        return Err(Error::Shape(format!(
            "{} probability rows for {} targets",
            probs.nrows(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::Shape("no rows".into()));
    }
    let mut clamped = false;
    let mut total = 0.0;
    for (row, &b) in probs.rows().into_iter().zip(truth) {
        let s: f64 = row.sum();
        if (s - 1.0).abs() > 1e-6 {
            return Err(Error::Shape(format!("probability row sums to {s}")));
        }
        let p = row[b];
        if p < PROB_FLOOR {
            clamped = true;
        }
        total -= p.max(PROB_FLOOR).ln();
    }
    if clamped {
        log::warn!("trajectory probability clamped at {PROB_FLOOR}");
    }
    Ok((total / truth.len() as f64, clamped))
}

/// Binary cross-entropy summed over events and regions, averaged over (t, i).
pub fn event_bce(pred: ArrayView4<f64>, truth: ArrayView4<u8>) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs truth {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    let (t_n, n, _, _) = pred.dim();
    if t_n * n == 0 {
        return Err(Error::Shape("no rows".into()));
    }
    let mut total = 0.0;
    for (&p, &y) in pred.iter().zip(truth.iter()) {
        let p = p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
        total -= if y != 0 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / (t_n * n) as f64)
}

pub fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::config("objectives.alpha", format!("{alpha} is outside [0, 1]")));
    }
    Ok(())
}

pub fn total_loss(l_traj: f64, l_events: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(alpha * l_traj + (1.0 - alpha) * l_events)
}

/// True bins of every player's next-step displacement, (T-1, N).
pub fn displacement_bins(positions: &ndarray::Array3<f32>) -> Array2<usize> {
    let (t_n, n, _) = positions.dim();
    let mut out = Array2::zeros((t_n.saturating_sub(1), n));
    for t in 0..t_n.saturating_sub(1) {
        for i in 0..n {
            let d = [
                positions[[t + 1, i, 0]] as f64 - positions[[t, i, 0]] as f64,
                positions[[t + 1, i, 1]] as f64 - positions[[t, i, 1]] as f64,
            ];
            out[[t, i]] = bin_delta(d);
        }
    }
    out
}

/// Number of binary terms per (t, i) in the event loss.
pub const EVENT_TERMS: usize = N_EVENTS * N_REGIONS;

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array3, Array4};
    use proptest::prelude::*;

    #[test]
    fn bin_examples() {
        assert_eq!(bin_delta([0.0, 0.0]), 60);
        assert_eq!(bin_delta([-5.5, -5.5]), 0);
        assert_eq!(bin_delta([9.0, 0.0]), 115);
        assert_eq!(bin_delta([5.5, 5.5]), 120);
        assert_eq!(bin_center(60), [0.0, 0.0]);
    }

    #[test]
    fn window_examples() {
        let mut ev = Array3::zeros((12, 1, 1));
        ev[[5, 0, 0]] = 1;
        let w = derive_event_windows(&ev, &WindowConfig::from_steps(2, 2));
        let fut: Vec<usize> = (0..12).filter(|&t| w[[t, 0, 0, 2]] == 1).collect();
        let past: Vec<usize> = (0..12).filter(|&t| w[[t, 0, 0, 0]] == 1).collect();
        assert_eq!(fut, vec![3, 4]);
        assert_eq!(past, vec![6, 7]);
        let mut ev = Array3::zeros((6, 1, 1));
        ev[[0, 0, 0]] = 1;
        let w = derive_event_windows(&ev, &WindowConfig::from_steps(2, 2));
        assert!((0..6).all(|t| w[[t, 0, 0, 0]] == 0 || t > 0));
        assert_eq!(w[[0, 0, 0, 0]], 0);
    }

    #[test]
    fn nll_examples() {
        let uni = Array2::from_elem((1, N_BINS), 1.0 / N_BINS as f64);
        let (v, _) = trajectory_nll(uni.view(), &[7]).unwrap();
        assert!((v - (121f64).ln()).abs() < 1e-12);
        let mut mixed = Array2::from_elem((2, N_BINS), 1.0 / N_BINS as f64);
        mixed.row_mut(1).fill(0.0);
        mixed[[1, 3]] = 1.0;
        let (v, _) = trajectory_nll(mixed.view(), &[0, 3]).unwrap();
        assert!((v - (121f64).ln() / 2.0).abs() < 1e-12);
        let (_, clamped) = trajectory_nll(mixed.view(), &[0, 4]).unwrap();
        assert!(clamped);
    }

    #[test]
    fn bce_examples() {
        let pred = Array4::from_elem((2, 3, N_EVENTS, 3), 0.5);
        let truth = Array4::<u8>::zeros((2, 3, N_EVENTS, 3));
        let v = event_bce(pred.view(), truth.view()).unwrap();
        assert!((v - 27.0 * 2f64.ln()).abs() < 1e-9);
        let mut exact = truth.mapv(|y| y as f64);
        exact[[1, 2, 4, 1]] = 0.5;
        let v = event_bce(exact.view(), truth.view()).unwrap();
        assert!((v - 2f64.ln() / 6.0).abs() < 1e-9);
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(2.0, 4.0, 1.0).unwrap(), 2.0);
        assert_eq!(total_loss(2.0, 4.0, 0.0).unwrap(), 4.0);
        assert_eq!(total_loss(2.0, 4.0, 0.5).unwrap(), 3.0);
        assert!(total_loss(2.0, 4.0, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn bin_is_total_and_idempotent(x in -1e6f64..1e6, y in -1e6f64..1e6) {
            let b = bin_delta([x, y]);
            prop_assert!(b < N_BINS);
            prop_assert_eq!(bin_delta(bin_center(b)), b);
        }

        #[test]
        fn windows_shift_with_events(t0 in 8usize..20, k in 0usize..6) {
            let cfg = WindowConfig::from_steps(3, 4);
            let mut a = Array3::zeros((40, 1, 1));
            a[[t0, 0, 0]] = 1;
            let mut b = Array3::zeros((40, 1, 1));
            b[[t0 + k, 0, 0]] = 1;
            let (wa, wb) = (derive_event_windows(&a, &cfg), derive_event_windows(&b, &cfg));
            for t in 0..30 {
                for r in 0..3 {
                    prop_assert_eq!(wa[[t, 0, 0, r]], wb[[t + k, 0, 0, r]]);
                }
            }
        }

        #[test]
        fn total_loss_is_affine(a in 0.0f64..1.0, l1 in 0.0f64..10.0, l2 in 0.0f64..10.0, d in 0.0f64..5.0) {
            let base = total_loss(l1, l2, a).unwrap();
            prop_assert!((total_loss(l1 + d, l2, a).unwrap() - base - a * d).abs() < 1e-9);
            prop_assert!((total_loss(l1, l2 + d, a).unwrap() - base - (1.0 - a) * d).abs() < 1e-9);
        }
    }
}
