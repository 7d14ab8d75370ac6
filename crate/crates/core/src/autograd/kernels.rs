//! Slice-level loops for the hot element-wise ops. ndarray's generic zips
//! and axis reductions are several times slower on these shapes.

use ndarray::Array2;

use crate::real::Real;

pub(super) fn std_slice<T: Real>(a: &Array2<T>) -> &[T] {
    a.as_slice().expect("tape arrays are standard layout")
}

/// Column sums as a 1-row matrix.
pub(super) fn col_sums<T: Real>(a: &Array2<T>) -> Array2<T> {
    let d = a.ncols();
    let mut out = vec![T::zero(); d];
    if d > 0 {
        for row in std_slice(a).chunks_exact(d) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
    }
    Array2::from_shape_vec((1, d), out).expect("1 x d")
}

/// Column sums of `g` and of `g * x`.
pub(super) fn col_sums_pair<T: Real>(g: &Array2<T>, x: &Array2<T>) -> (Vec<T>, Vec<T>) {
    let d = g.ncols();
    let mut s1 = vec![T::zero(); d];
    let mut s2 = vec![T::zero(); d];
    if d > 0 {
        for (gr, xr) in std_slice(g).chunks_exact(d).zip(std_slice(x).chunks_exact(d)) {
            for (((a, b), &g), &x) in s1.iter_mut().zip(s2.iter_mut()).zip(gr).zip(xr) {
                *a += g;
                *b += g * x;
            }
        }
    }
    (s1, s2)
}

pub(super) fn relu<T: Real>(a: &Array2<T>) -> Array2<T> {
    let out: Vec<T> = std_slice(a)
        .iter()
        .map(|&v| if v > T::zero() { v } else { T::zero() })
        .collect();
    Array2::from_shape_vec(a.dim(), out).expect("same shape")
}

/// Zeroes `d` where the forward output `y` is not positive.
pub(super) fn relu_mask<T: Real>(d: &mut Array2<T>, y: &Array2<T>) {
    let d = d.as_slice_mut().expect("standard layout");
    for (v, &y) in d.iter_mut().zip(std_slice(y)) {
        *v = if y > T::zero() { *v } else { T::zero() };
    }
}

/// Per-column mean and biased variance.
pub(super) fn col_moments<T: Real>(x: &Array2<T>) -> (Vec<T>, Vec<T>) {
    let (n, d) = x.dim();
    let m = T::of(n.max(1) as f64);
    let mut mean = col_sums(x).into_raw_vec_and_offset().0;
    for v in &mut mean {
        *v /= m;
    }
    let mut var = vec![T::zero(); d];
    if d > 0 {
        for row in std_slice(x).chunks_exact(d) {
            for ((v, &x), &mu) in var.iter_mut().zip(row).zip(&mean) {
                let z = x - mu;
                *v += z * z;
            }
        }
    }
    for v in &mut var {
        *v /= m;
    }
    (mean, var)
}

/// `xhat = (x - mean) * inv` and `y = xhat * gamma + beta`, column-wise.
pub(super) fn affine_normalize<T: Real>(
    x: &Array2<T>,
    mean: &[T],
    inv: &[T],
    gamma: &[T],
    beta: &[T],
) -> (Array2<T>, Array2<T>) {
    let d = x.ncols();
    let mut xhat = Array2::zeros(x.dim());
    let mut y = Array2::zeros(x.dim());
    if d > 0 {
        let hs = xhat.as_slice_mut().expect("fresh array");
        let ys = y.as_slice_mut().expect("fresh array");
        let rows = std_slice(x).chunks_exact(d).zip(hs.chunks_exact_mut(d)).zip(ys.chunks_exact_mut(d));
        for ((xr, hr), yr) in rows {
            for (((h, &x), &mu), &iv) in hr.iter_mut().zip(xr).zip(mean).zip(inv) {
                *h = (x - mu) * iv;
            }
            for (((y, &h), &g), &b) in yr.iter_mut().zip(hr.iter()).zip(gamma).zip(beta) {
                *y = h * g + b;
            }
        }
    }
    (xhat, y)
}

/// Adds a 1-row bias to every row in place.
pub(super) fn add_bias<T: Real>(y: &mut Array2<T>, b: &Array2<T>) {
    let d = y.ncols();
    let b = std_slice(b);
    assert_eq!(b.len(), d, "bias width");
    if d > 0 {
        for row in y.as_slice_mut().expect("standard layout").chunks_exact_mut(d) {
            for (v, &bb) in row.iter_mut().zip(b) {
                *v += bb;
            }
        }
    }
}

/// Copies column blocks side by side.
pub(super) fn concat_cols<T: Real>(parts: &[&Array2<T>]) -> Array2<T> {
    let n = parts.first().map_or(0, |p| p.nrows());
    let widths: Vec<usize> = parts.iter().map(|p| p.ncols()).collect();
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(n * total);
    for r in 0..n {
        for (p, &w) in parts.iter().zip(&widths) {
            out.extend_from_slice(&std_slice(p)[r * w..(r + 1) * w]);
        }
    }
    Array2::from_shape_vec((n, total), out).expect("row counts agree")
}

/// Columns `start..start + width` of `a` as a fresh matrix.
pub(super) fn take_cols<T: Real>(a: &Array2<T>, start: usize, width: usize) -> Array2<T> {
    let d = a.ncols();
    let mut out = Vec::with_capacity(a.nrows() * width);
    if d > 0 {
        for row in std_slice(a).chunks_exact(d) {
            out.extend_from_slice(&row[start..start + width]);
        }
    }
    Array2::from_shape_vec((a.nrows(), width), out).expect("n x width")
}
