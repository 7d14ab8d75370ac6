//! Central finite-difference checks of analytic parameter gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, ParamId, ParamStore, Var};

/// Relative errors use `max(|analytic|, |numeric|, DENOM_FLOOR)` as the
/// denominator, so coordinates with vanishing gradients (a bias feeding a
/// normalization, say) are held to an absolute error of `1e-4 * DENOM_FLOOR`
/// instead of comparing round-off against round-off.
pub const DENOM_FLOOR: f64 = 1e-4;

/// Adds uniform noise in `[-scale, scale]` to every trainable entry. Checks
/// run at such generic points so no rectifier input sits exactly on its kink
/// (zero-initialized biases put all-zero rows there).
pub fn jitter_params<R: Rng>(store: &mut ParamStore<f64>, scale: f64, rng: &mut R) {
    let ids: Vec<ParamId> = store.trainable_ids().collect();
    for id in ids {
        store
            .get_mut(id)
            .mapv_inplace(|v| v + rng.random_range(-scale..scale));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compares gradients of the scalar built by `f` against central differences
/// with step `eps`. `sample = Some((n, seed))` checks `n` random coordinates,
/// `None` checks every trainable scalar.
pub fn check_gradients<F>(
    store: &ParamStore<f64>,
    eps: f64,
    sample: Option<(usize, u64)>,
    f: F,
) -> GradCheckReport
where
    F: Fn(&mut Graph<f64>) -> Var,
{
    let mut g = Graph::new(store);
    let loss = f(&mut g);
    let grads = g.backward(loss);
    drop(g);

    let all: Vec<(ParamId, usize)> = store
        .trainable_ids()
        .flat_map(|id| (0..store.get(id).len()).map(move |k| (id, k)))
        .collect();
    let coords: Vec<(ParamId, usize)> = match sample {
        Some((n, seed)) if n < all.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n).map(|_| all[rng.random_range(0..all.len())]).collect()
        }
        _ => all,
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let mut probe = store.clone();
    for (id, k) in coords {
        let orig = probe.get(id).as_slice().expect("standard layout")[k];
        let mut eval = |x: f64| {
            probe.get_mut(id).as_slice_mut().expect("standard layout")[k] = x;
            let mut g = Graph::new(&probe);
            let l = f(&mut g);
            g.scalar(l)
        };
        let plus = eval(orig + eps);
        let minus = eval(orig - eps);
        probe.get_mut(id).as_slice_mut().expect("standard layout")[k] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = grads
            .get(id)
            .map_or(0.0, |g| g.as_slice().expect("standard layout")[k]);
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = err.max(report.max_rel_error);
            if err >= report.max_rel_error {
                report.worst = Some((store.name(id).to_string(), k));
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
    }
    report
}
