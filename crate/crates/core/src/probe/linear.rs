//! L2-regularized logistic and multinomial linear probes.
//!
//! Features are standardized with training-set statistics, then the convex
//! objective `mean cross-entropy + l2/2 * |W|^2` (bias unpenalized) is
//! minimized by accelerated full-batch gradient descent with backtracking
//! and function-value restarts, starting from zero.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeFitConfig {
    pub l2: f64,
    /// Stop once the gradient's Euclidean norm falls below this.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ProbeFitConfig {
    fn default() -> Self {
        ProbeFitConfig {
            l2: 1e-4,
            tol: 1e-6,
            max_iters: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
    /// `(d + 1, k)`: weights over standardized features, bias in the last
    /// row. `k = 1` for a binary probe.
    pub theta: Array2<f64>,
    pub n_classes: usize,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn augment(x: ArrayView2<f64>, mean: &Array1<f64>, scale: &Array1<f64>) -> Array2<f64> {
    let z = (&x - mean) / scale;
    concatenate![Axis(1), z, Array2::ones((x.nrows(), 1))]
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Objective and gradient at `theta`.
fn objective(xa: &Array2<f64>, y: &[usize], n_classes: usize, theta: &Array2<f64>, l2: f64) -> (f64, Array2<f64>) {
    let n = xa.nrows() as f64;
    let z = xa.dot(theta);
    let mut resid = Array2::zeros(z.raw_dim());
    let mut loss = 0.0;
    if n_classes == 2 {
        for (r, &yi) in y.iter().enumerate() {
            let v = z[[r, 0]];
            // softplus(v) - y v
            loss += v.max(0.0) + (-v.abs()).exp().ln_1p() - if yi == 1 { v } else { 0.0 };
            resid[[r, 0]] = sigmoid(v) - yi as f64;
        }
    } else {
        for (r, &yi) in y.iter().enumerate() {
            let row = z.row(r);
            let m = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[yi];
            for c in 0..n_classes {
                resid[[r, c]] = (row[c] - lse).exp() - f64::from(c == yi);
            }
        }
    }
    let d = theta.nrows() - 1;
    let w = theta.slice(s![..d, ..]);
    let mut grad = xa.t().dot(&resid) / n;
    grad.slice_mut(s![..d, ..]).scaled_add(l2, &w);
    (loss / n + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>(), grad)
}

fn norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

impl LinearProbe {
    /// Fits on rows of `x` with labels in `0..n_classes`; every class must
    /// occur.
    pub fn fit(x: ArrayView2<f64>, y: &[usize], n_classes: usize, cfg: &ProbeFitConfig) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!("{} rows for {} labels", x.nrows(), y.len())));
        }
        if n_classes < 2 {
            return Err(Error::Probe("a probe needs at least two classes".into()));
        }
        let mut counts = vec![0usize; n_classes];
        for &c in y {
            if c >= n_classes {
                return Err(Error::Probe(format!("label {c} outside 0..{n_classes}")));
            }
            counts[c] += 1;
        }
        if let Some(c) = counts.iter().position(|&k| k == 0) {
            return Err(Error::Probe(format!(
                "class {c} is absent from the training rows; cannot fit a probe on single-class data"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("probe features".into()));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let scale = x.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
        let xa = augment(x, &mean, &scale);
        let k = if n_classes == 2 { 1 } else { n_classes };
        let f = |th: &Array2<f64>| objective(&xa, y, n_classes, th, cfg.l2);

        let mut theta = Array2::zeros((xa.ncols(), k));
        let (mut f_theta, mut g_theta) = f(&theta);
        let mut look = theta.clone();
        let (mut f_look, mut g_look) = (f_theta, g_theta.clone());
        let mut momentum = 1.0f64;
        let mut step = 1.0f64;
        let mut iterations = 0;
        while iterations < cfg.max_iters && norm(&g_theta) >= cfg.tol {
            iterations += 1;
            let gn2 = g_look.iter().map(|v| v * v).sum::<f64>();
            let (next, f_next, g_next) = loop {
                let cand = &look - &(&g_look * step);
                let (fc, gc) = f(&cand);
                if fc <= f_look - 0.5 * step * gn2 || step < 1e-12 {
                    break (cand, fc, gc);
                }
                step *= 0.5;
            };
            if f_next > f_theta {
                // restart the momentum from the last accepted point
                momentum = 1.0;
                look = theta.clone();
                f_look = f_theta;
                g_look = g_theta.clone();
                continue;
            }
            let m_next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / m_next;
            look = &next + &((&next - &theta) * beta);
            (f_look, g_look) = f(&look);
            theta = next;
            f_theta = f_next;
            g_theta = g_next;
            momentum = m_next;
            step *= 1.25;
        }
        Ok(LinearProbe {
            mean,
            scale,
            theta,
            n_classes,
            iterations,
            grad_norm: norm(&g_theta),
        })
    }

    /// Logits, `(rows, 1)` for a binary probe and `(rows, classes)` otherwise.
    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.mean.len() {
            return Err(Error::Shape(format!(
                "probe expects {} features, got {}",
                self.mean.len(),
                x.ncols()
            )));
        }
        Ok(augment(x, &self.mean, &self.scale).dot(&self.theta))
    }

    /// Score of class `c` for ranking: the logit for a binary probe's
    /// positive class, the log-probability otherwise.
    pub fn class_scores(&self, x: ArrayView2<f64>, c: usize) -> Result<Vec<f64>> {
        let z = self.logits(x)?;
        if self.n_classes == 2 {
            return Ok(z.column(0).iter().map(|&v| if c == 1 { v } else { -v }).collect());
        }
        Ok(z.rows()
            .into_iter()
            .map(|row| {
                let m = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
                row[c] - lse
            })
            .collect())
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        let z = self.logits(x)?;
        Ok(z.rows()
            .into_iter()
            .map(|row| {
                if self.n_classes == 2 {
                    usize::from(row[0] > 0.0)
                } else {
                    let mut best = 0;
                    for c in 1..row.len() {
                        if row[c] > row[best] {
                            best = c;
                        }
                    }
                    best
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn blobs(n: usize, classes: usize, sep: f64, rng: &mut ChaCha8Rng) -> (Array2<f64>, Vec<usize>) {
        let y: Vec<usize> = (0..n).map(|i| i % classes).collect();
        let x = Array2::from_shape_fn((n, 3), |(r, c)| {
            let centre = if c == y[r] % 3 { sep } else { 0.0 };
            centre + rng.random_range(-1.0..1.0)
        });
        (x, y)
    }

    #[test]
    fn separable_binary_data_is_fit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (x, y) = blobs(80, 2, 3.0, &mut rng);
        let p = LinearProbe::fit(x.view(), &y, 2, &ProbeFitConfig::default()).unwrap();
        assert_eq!(p.predict(x.view()).unwrap(), y);
        assert!(p.grad_norm < 1e-6, "{} after {}", p.grad_norm, p.iterations);
    }

    #[test]
    fn multinomial_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, y) = blobs(90, 3, 1.5, &mut rng);
        let p = LinearProbe::fit(x.view(), &y, 3, &ProbeFitConfig::default()).unwrap();
        assert!(p.grad_norm < 1e-6, "{} after {}", p.grad_norm, p.iterations);
        let acc = p.predict(x.view()).unwrap().iter().zip(&y).filter(|(a, b)| a == b).count();
        assert!(acc as f64 / 90.0 > 0.8);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for classes in [2, 4] {
            let (x, y) = blobs(20, classes, 1.0, &mut rng);
            let xa = augment(x.view(), &Array1::zeros(3), &Array1::ones(3));
            let k = if classes == 2 { 1 } else { classes };
            let theta = Array2::from_shape_fn((4, k), |_| rng.random_range(-0.5..0.5));
            let (_, g) = objective(&xa, &y, classes, &theta, 0.3);
            for idx in [(0, 0), (3, 0), (2, k - 1)] {
                let mut a = theta.clone();
                let mut b = theta.clone();
                a[idx] += 1e-6;
                b[idx] -= 1e-6;
                let num = (objective(&xa, &y, classes, &a, 0.3).0 - objective(&xa, &y, classes, &b, 0.3).0) / 2e-6;
                assert!((num - g[idx]).abs() < 1e-7, "{num} vs {}", g[idx]);
            }
        }
    }

    #[test]
    fn single_class_data_is_rejected() {
        let x = Array2::zeros((4, 2));
        assert!(matches!(
            LinearProbe::fit(x.view(), &[1, 1, 1, 1], 2, &ProbeFitConfig::default()),
            Err(Error::Probe(_))
        ));
    }

    #[test]
    fn rescaled_features_give_the_same_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, y) = blobs(60, 2, 0.7, &mut rng);
        let cfg = ProbeFitConfig::default();
        let a = LinearProbe::fit(x.view(), &y, 2, &cfg).unwrap();
        let x10 = &x * 10.0;
        let b = LinearProbe::fit(x10.view(), &y, 2, &cfg).unwrap();
        let sa = a.class_scores(x.view(), 1).unwrap();
        let sb = b.class_scores(x10.view(), 1).unwrap();
        for (u, v) in sa.iter().zip(&sb) {
            assert!((u - v).abs() < 1e-6);
        }
    }
}
