//! Forward constructors and their reverse rules.

use std::sync::Arc;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use super::kernels::{self, col_sums};
use super::{Graph, Op, Var, NO_ROW};
use crate::real::Real;

/// Row-wise softmax.
pub fn softmax_rows<T: Real>(x: ArrayView2<T>) -> Array2<T> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let m = row.fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut z = T::zero();
        row.mapv_inplace(|v| {
            let e = (v - m).exp();
            z += e;
            e
        });
        row.mapv_inplace(|v| v / z);
    }
    out
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn acc<T: Real>(grads: &mut [Option<Array2<T>>], v: Var, d: Array2<T>) {
    match &mut grads[v.0] {
        Some(g) => *g += &d,
        slot @ None => *slot = Some(d),
    }
}

fn acc_ref<T: Real>(grads: &mut [Option<Array2<T>>], v: Var, d: &Array2<T>) {
    match &mut grads[v.0] {
        Some(g) => *g += d,
        slot @ None => *slot = Some(d.clone()),
    }
}

impl<T: Real> Graph<'_, T> {
    fn any_needs(&self, vs: &[Var]) -> bool {
        vs.iter().any(|&v| self.needs(v))
    }

    /// `x W + b` with `b` a 1-row bias.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let mut y = super::standard(self.value(x).dot(self.value(w)));
        kernels::add_bias(&mut y, self.value(b));
        let ng = self.any_needs(&[x, w, b]);
        self.push(y, Op::Linear(x, w, b), ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).dot(self.value(b));
        let ng = self.any_needs(&[a, b]);
        self.push(y, Op::MatMul(a, b), ng)
    }

    /// `a bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a).dot(&self.value(b).t());
        let ng = self.any_needs(&[a, b]);
        self.push(y, Op::MatMulNT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) + self.value(b);
        let ng = self.any_needs(&[a, b]);
        self.push(y, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) - self.value(b);
        let ng = self.any_needs(&[a, b]);
        self.push(y, Op::Sub(a, b), ng)
    }

    /// Adds a 1-row matrix to every row.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1);
        let y = self.value(a) + self.value(row);
        let ng = self.any_needs(&[a, row]);
        self.push(y, Op::AddRow(a, row), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let y = self.value(a) * self.value(b);
        let ng = self.any_needs(&[a, b]);
        self.push(y, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let y = self.value(a).mapv(|v| v * c);
        let ng = self.needs(a);
        self.push(y, Op::Scale(a, c), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let y = kernels::relu(self.value(a));
        let ng = self.needs(a);
        self.push(y, Op::Relu(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(sigmoid);
        let ng = self.needs(a);
        self.push(y, Op::Sigmoid(a), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        assert!(views.iter().all(|v| v.nrows() == views[0].nrows()), "row counts agree");
        let y = kernels::concat_cols(&views);
        let ng = self.any_needs(parts);
        self.push(y, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = concatenate(Axis(0), &views).expect("column counts agree");
        let ng = self.any_needs(parts);
        self.push(y, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let y = kernels::take_cols(self.value(a), start, width);
        let ng = self.needs(a);
        self.push(y, Op::SliceCols(a, start), ng)
    }

    /// `out[r] = a[idx[r]]`, or zeros where `idx[r] == NO_ROW`.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<[u32]>) -> Var {
        let src = self.value(a);
        let d = src.ncols();
        let mut y = Array2::zeros((idx.len(), d));
        {
            let src = src.as_standard_layout();
            let s = src.as_slice().expect("standard layout");
            let o = y.as_slice_mut().expect("fresh array");
            for (r, &i) in idx.iter().enumerate() {
                if i != NO_ROW {
                    let i = i as usize;
                    o[r * d..(r + 1) * d].copy_from_slice(&s[i * d..(i + 1) * d]);
                }
            }
        }
        let ng = self.needs(a);
        self.push(y, Op::Gather(a, idx), ng)
    }

    /// `out[idx[r]] += a[r]` into `n_out` rows; `NO_ROW` entries are dropped.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Arc<[u32]>, n_out: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.nrows(), idx.len());
        let d = src.ncols();
        let mut y = Array2::zeros((n_out, d));
        scatter_into(src.view(), &idx, &mut y);
        let ng = self.needs(a);
        self.push(y, Op::ScatterAdd(a, idx), ng)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let d = xv.ncols();
        let mut xhat = xv.to_owned();
        let mut inv = Vec::with_capacity(xv.nrows());
        let eps = T::of(eps);
        let dn = T::of(d as f64);
        for mut row in xhat.rows_mut() {
            let mu = row.sum() / dn;
            let var = row.fold(T::zero(), |a, &v| a + (v - mu) * (v - mu)) / dn;
            let iv = T::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mu) * iv);
            inv.push(iv);
        }
        let y = &(&xhat * self.value(gamma)) + self.value(beta);
        let ng = self.any_needs(&[x, gamma, beta]);
        self.push(
            y,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv,
            },
            ng,
        )
    }

    /// Batch normalization with statistics of this batch's rows. Returns the
    /// output plus the per-column mean and (biased) variance.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> (Var, Vec<T>, Vec<T>) {
        let (mean, var) = kernels::col_moments(self.value(x));
        let y = self.normalize(x, gamma, beta, &mean, &var, eps, true);
        (y, mean, var)
    }

    /// Batch normalization with fixed (running) statistics.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm_fixed(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: f64,
    ) -> Var {
        self.normalize(x, gamma, beta, mean, var, eps, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn normalize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[T],
        var: &[T],
        eps: f64,
        batch_stats: bool,
    ) -> Var {
        let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + T::of(eps)).sqrt()).collect();
        let (xhat, y) = kernels::affine_normalize(
            self.value(x),
            mean,
            &inv,
            kernels::std_slice(self.value(gamma)),
            kernels::std_slice(self.value(beta)),
        );
        let ng = self.any_needs(&[x, gamma, beta]);
        self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv,
                batch_stats,
            },
            ng,
        )
    }

    /// Row softmax restricted to `mask` (true = allowed). Every row must allow
    /// at least one entry.
    pub fn masked_softmax(&mut self, a: Var, mask: &Array2<bool>) -> Var {
        let mut y = self.value(a).to_owned();
        assert_eq!(y.dim(), mask.dim());
        for (mut row, mrow) in y.rows_mut().into_iter().zip(mask.rows()) {
            let mut mx = T::neg_infinity();
            for (&v, &ok) in row.iter().zip(mrow.iter()) {
                if ok && v > mx {
                    mx = v;
                }
            }
            let mut z = T::zero();
            for (v, &ok) in row.iter_mut().zip(mrow.iter()) {
                *v = if ok { (*v - mx).exp() } else { T::zero() };
                z += *v;
            }
            row.mapv_inplace(|v| v / z);
        }
        let ng = self.needs(a);
        self.push(y, Op::MaskedSoftmax(a), ng)
    }

    /// Mean over rows of `-ln softmax(logits)[target]`.
    pub fn softmax_nll(&mut self, logits: Var, targets: Arc<[u32]>) -> Var {
        let probs = softmax_rows(self.value(logits).view());
        assert_eq!(probs.nrows(), targets.len());
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let p = probs[[r, t as usize]].as_f64();
            // `max` would swallow a NaN; let it through so divergence shows.
            total -= if p.is_nan() { p } else { p.max(1e-300).ln() };
        }
        let y = Array2::from_elem((1, 1), T::of(total / targets.len().max(1) as f64));
        let ng = self.needs(logits);
        self.push(
            y,
            Op::SoftmaxNll {
                logits,
                targets,
                probs,
            },
            ng,
        )
    }

    /// Binary cross-entropy on logits, summed over columns and averaged over
    /// rows.
    pub fn bce_logits(&mut self, logits: Var, targets: Arc<Array2<T>>) -> Var {
        let x = self.value(logits);
        assert_eq!(x.dim(), targets.dim());
        let mut total = T::zero();
        for (&v, &t) in x.iter().zip(targets.iter()) {
            total += v.max(T::zero()) - v * t + (T::one() + (-v.abs()).exp()).ln();
        }
        let y = Array2::from_elem((1, 1), total / T::of(x.nrows().max(1) as f64));
        let ng = self.needs(logits);
        self.push(y, Op::BceLogits { logits, targets }, ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let y = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.needs(a);
        self.push(y, Op::SumAll(a), ng)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1);
        let s = self.sum_all(a);
        self.scale(s, T::of(1.0 / n as f64))
    }

    pub(super) fn backprop(&self, k: usize, g: Array2<T>, grads: &mut [Option<Array2<T>>]) {
        let need = |v: Var| self.needs(v);
        match &self.nodes[k].op {
            Op::Leaf | Op::Param(_) => {}
            Op::Linear(x, w, b) => {
                if need(*w) {
                    acc(grads, *w, self.value(*x).t().dot(&g));
                }
                if need(*b) {
                    acc(grads, *b, col_sums(&g));
                }
                if need(*x) {
                    acc(grads, *x, g.dot(&self.value(*w).t()));
                }
            }
            Op::MatMul(a, b) => {
                if need(*a) {
                    acc(grads, *a, g.dot(&self.value(*b).t()));
                }
                if need(*b) {
                    acc(grads, *b, self.value(*a).t().dot(&g));
                }
            }
            Op::MatMulNT(a, b) => {
                if need(*a) {
                    acc(grads, *a, g.dot(self.value(*b)));
                }
                if need(*b) {
                    acc(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                if need(*a) {
                    acc_ref(grads, *a, &g);
                }
                if need(*b) {
                    acc(grads, *b, g);
                }
            }
            Op::Sub(a, b) => {
                if need(*a) {
                    acc_ref(grads, *a, &g);
                }
                if need(*b) {
                    acc(grads, *b, g.mapv(|v| -v));
                }
            }
            Op::AddRow(a, row) => {
                if need(*row) {
                    acc(grads, *row, col_sums(&g));
                }
                if need(*a) {
                    acc(grads, *a, g);
                }
            }
            Op::Mul(a, b) => {
                if need(*a) {
                    acc(grads, *a, &g * self.value(*b));
                }
                if need(*b) {
                    acc(grads, *b, &g * self.value(*a));
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                acc(grads, *a, g.mapv(|v| v * c));
            }
            Op::Relu(a) => {
                let mut d = g;
                kernels::relu_mask(&mut d, &self.nodes[k].value);
                acc(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = g;
                d.zip_mut_with(&self.nodes[k].value, |d, &y| *d *= y * (T::one() - y));
                acc(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    if need(p) {
                        acc(grads, p, kernels::take_cols(&g, off, w));
                    }
                    off += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let h = self.value(p).nrows();
                    if need(p) {
                        acc(grads, p, g.slice(s![off..off + h, ..]).to_owned());
                    }
                    off += h;
                }
            }
            Op::SliceCols(a, start) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                let w = g.ncols();
                d.slice_mut(s![.., *start..*start + w]).assign(&g);
                acc(grads, *a, d);
            }
            Op::Gather(a, idx) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                scatter_into(g.view(), idx, &mut d);
                acc(grads, *a, d);
            }
            Op::ScatterAdd(a, idx) => {
                let dcols = g.ncols();
                let mut d = Array2::zeros((idx.len(), dcols));
                let gs = g.as_slice().expect("standard layout");
                let o = d.as_slice_mut().expect("fresh array");
                for (r, &i) in idx.iter().enumerate() {
                    if i != NO_ROW {
                        let i = i as usize;
                        o[r * dcols..(r + 1) * dcols].copy_from_slice(&gs[i * dcols..(i + 1) * dcols]);
                    }
                }
                acc(grads, *a, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv,
            } => {
                if need(*gamma) {
                    acc(grads, *gamma, col_sums(&(&g * xhat)));
                }
                if need(*beta) {
                    acc(grads, *beta, col_sums(&g));
                }
                if need(*x) {
                    let dxhat = &g * self.value(*gamma);
                    let d = xhat.ncols();
                    let dn = T::of(d as f64);
                    let mut dx = dxhat.clone();
                    for ((mut row, xr), &iv) in dx.rows_mut().into_iter().zip(xhat.rows()).zip(inv) {
                        let m1 = row.sum() / dn;
                        let m2 = row.iter().zip(xr.iter()).fold(T::zero(), |a, (&p, &q)| a + p * q) / dn;
                        for (v, &xh) in row.iter_mut().zip(xr.iter()) {
                            *v = iv * (*v - m1 - xh * m2);
                        }
                    }
                    acc(grads, *x, dx);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv,
                batch_stats,
            } => {
                let (sum_g, sum_gx) = kernels::col_sums_pair(&g, xhat);
                let dcols = g.ncols();
                if need(*gamma) {
                    acc(grads, *gamma, Array2::from_shape_vec((1, dcols), sum_gx.clone()).expect("1 x d"));
                }
                if need(*beta) {
                    acc(grads, *beta, Array2::from_shape_vec((1, dcols), sum_g.clone()).expect("1 x d"));
                }
                if need(*x) {
                    let gam = kernels::std_slice(self.value(*gamma));
                    let scale: Vec<T> = gam.iter().zip(inv).map(|(&a, &b)| a * b).collect();
                    let mut dx = g;
                    let d = dx.as_slice_mut().expect("standard layout");
                    if *batch_stats {
                        let m = T::of(xhat.nrows().max(1) as f64);
                        let m1: Vec<T> = sum_g.iter().map(|&v| v / m).collect();
                        let m2: Vec<T> = sum_gx.iter().map(|&v| v / m).collect();
                        for (row, xr) in d.chunks_exact_mut(dcols).zip(kernels::std_slice(xhat).chunks_exact(dcols)) {
                            let it = row.iter_mut().zip(xr).zip(&scale).zip(&m1).zip(&m2);
                            for ((((v, &xh), &sc), &a), &b) in it {
                                *v = sc * (*v - a - xh * b);
                            }
                        }
                    } else {
                        for row in d.chunks_exact_mut(dcols) {
                            for (v, &sc) in row.iter_mut().zip(&scale) {
                                *v *= sc;
                            }
                        }
                    }
                    acc(grads, *x, dx);
                }
            }
            Op::MaskedSoftmax(a) => {
                let y = &self.nodes[k].value;
                let mut d = g;
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                    let dot = drow.iter().zip(yrow.iter()).fold(T::zero(), |a, (&p, &q)| a + p * q);
                    for (v, &yy) in drow.iter_mut().zip(yrow.iter()) {
                        *v = yy * (*v - dot);
                    }
                }
                acc(grads, *a, d);
            }
            Op::SoftmaxNll {
                logits,
                targets,
                probs,
            } => {
                let c = g[[0, 0]] / T::of(targets.len().max(1) as f64);
                let mut d = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    d[[r, t as usize]] -= T::one();
                }
                d.mapv_inplace(|v| v * c);
                acc(grads, *logits, d);
            }
            Op::BceLogits { logits, targets } => {
                let x = self.value(*logits);
                let c = g[[0, 0]] / T::of(x.nrows().max(1) as f64);
                let mut d = x.mapv(sigmoid);
                d.zip_mut_with(targets.as_ref(), |v, &t| *v = (*v - t) * c);
                acc(grads, *logits, d);
            }
            Op::SumAll(a) => {
                let c = g[[0, 0]];
                acc(grads, *a, Array2::from_elem(self.value(*a).dim(), c));
            }
        }
    }
}

fn scatter_into<T: Real>(src: ArrayView2<T>, idx: &[u32], out: &mut Array2<T>) {
    let d = src.ncols();
    let src = src.as_standard_layout();
    let s = src.as_slice().expect("standard layout");
    let o = out.as_slice_mut().expect("standard layout");
    for (r, &i) in idx.iter().enumerate() {
        if i != NO_ROW {
            let i = i as usize;
            for (a, &b) in o[i * d..(i + 1) * d].iter_mut().zip(&s[r * d..(r + 1) * d]) {
                *a += b;
            }
        }
    }
}
