use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

/// Central-difference check of every parameter entry of `store` for the
/// scalar produced by `f`.
fn check<F>(store: &ParamStore<f64>, f: F)
where
    F: Fn(&mut Graph<f64>) -> Var,
{
    let mut g = Graph::new(store);
    let loss = f(&mut g);
    let grads = g.backward(loss);
    let eps = 1e-6;
    for id in store.trainable_ids() {
        let shape = store.get(id).dim();
        for r in 0..shape.0 {
            for c in 0..shape.1 {
                let eval = |delta: f64| {
                    let mut s = store.clone();
                    s.get_mut(id)[[r, c]] += delta;
                    let mut g = Graph::new(&s);
                    let l = f(&mut g);
                    g.scalar(l)
                };
                let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
                let an = grads.get(id).map_or(0.0, |g| g[[r, c]]);
                let err = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
                assert!(
                    err < 1e-5,
                    "{}[{r},{c}]: analytic {an}, numeric {fd}",
                    store.name(id)
                );
            }
        }
    }
}

#[test]
fn linear_relu_sigmoid_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s = ParamStore::new();
    let x = s.add("x", rand_mat(&mut rng, 5, 3), true);
    let w = s.add("w", rand_mat(&mut rng, 3, 4), true);
    let b = s.add("b", rand_mat(&mut rng, 1, 4), true);
    check(&s, |g| {
        let (x, w, b) = (g.param(x), g.param(w), g.param(b));
        let y = g.linear(x, w, b);
        let y = g.relu(y);
        let z = g.sigmoid(y);
        let z = g.mul(z, y);
        g.sum_all(z)
    });
}

#[test]
fn matmul_variants_and_concat() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut s = ParamStore::new();
    let a = s.add("a", rand_mat(&mut rng, 4, 3), true);
    let b = s.add("b", rand_mat(&mut rng, 5, 3), true);
    let c = s.add("c", rand_mat(&mut rng, 3, 2), true);
    check(&s, |g| {
        let (a, b, c) = (g.param(a), g.param(b), g.param(c));
        let ab = g.matmul_nt(a, b);
        let ac = g.matmul(a, c);
        let cat = g.concat_cols(&[ab, ac]);
        let sl = g.slice_cols(cat, 2, 4);
        let rows = g.concat_rows(&[sl, sl]);
        let sq = g.mul(rows, rows);
        let d = g.sub(sq, rows);
        let e = g.scale(d, 0.3);
        g.mean_all(e)
    });
}

#[test]
fn gather_scatter_and_add_row() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = ParamStore::new();
    let a = s.add("a", rand_mat(&mut rng, 4, 3), true);
    let r = s.add("r", rand_mat(&mut rng, 1, 3), true);
    let idx: Arc<[u32]> = Arc::from(vec![2, 0, NO_ROW, 2, 3]);
    let sidx: Arc<[u32]> = Arc::from(vec![1, 1, 0, NO_ROW, 2]);
    check(&s, |g| {
        let (a, r) = (g.param(a), g.param(r));
        let x = g.gather_rows(a, idx.clone());
        let x = g.add_row(x, r);
        let y = g.scatter_add_rows(x, sidx.clone(), 3);
        let y2 = g.mul(y, y);
        g.sum_all(y2)
    });
}

#[test]
fn normalizations() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut s = ParamStore::new();
    let x = s.add("x", rand_mat(&mut rng, 6, 4), true);
    let ga = s.add("gamma", rand_mat(&mut rng, 1, 4), true);
    let be = s.add("beta", rand_mat(&mut rng, 1, 4), true);
    let w = s.add("w", rand_mat(&mut rng, 4, 4), true);
    check(&s, |g| {
        let (x, ga, be, w) = (g.param(x), g.param(ga), g.param(be), g.param(w));
        let h = g.layer_norm(x, ga, be, 1e-5);
        let (h, _, _) = g.batch_norm(h, ga, be, 1e-5);
        let h = g.batch_norm_fixed(h, ga, be, &[0.1, -0.2, 0.0, 0.3], &[1.0, 0.5, 2.0, 0.1], 1e-5);
        let h = g.matmul(h, w);
        let h2 = g.mul(h, h);
        g.sum_all(h2)
    });
}

#[test]
fn masked_softmax_and_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = ParamStore::new();
    let q = s.add("q", rand_mat(&mut rng, 4, 3), true);
    let k = s.add("k", rand_mat(&mut rng, 4, 3), true);
    let v = s.add("v", rand_mat(&mut rng, 4, 5), true);
    let mask = Array2::from_shape_fn((4, 4), |(i, j)| j <= i);
    let targets: Arc<[u32]> = Arc::from(vec![0, 4, 2, 1]);
    let y = Arc::new(Array2::from_shape_fn((4, 5), |(i, j)| ((i + j) % 2) as f64));
    check(&s, |g| {
        let (q, k, v) = (g.param(q), g.param(k), g.param(v));
        let sc = g.matmul_nt(q, k);
        let p = g.masked_softmax(sc, &mask);
        let o = g.matmul(p, v);
        let l1 = g.softmax_nll(o, targets.clone());
        let l2 = g.bce_logits(o, y.clone());
        let l = g.add(l1, l2);
        g.scale(l, 0.5)
    });
}

#[test]
fn masked_entries_get_zero_weight() {
    let s = ParamStore::<f64>::new();
    let mut g = Graph::new(&s);
    let a = g.constant(Array2::from_elem((2, 3), 5.0));
    let mask = Array2::from_shape_vec((2, 3), vec![true, false, true, false, false, true]).unwrap();
    let p = g.masked_softmax(a, &mask);
    assert_eq!(g.value(p)[[0, 1]], 0.0);
    assert_eq!(g.value(p)[[1, 2]], 1.0);
    assert!((g.value(p)[[0, 0]] - 0.5).abs() < 1e-15);
}

#[test]
fn loss_reference_values() {
    let s = ParamStore::<f64>::new();
    let mut g = Graph::new(&s);
    let z = g.constant(Array2::zeros((3, 121)));
    let l = g.softmax_nll(z, Arc::from(vec![0, 5, 120]));
    assert!((g.scalar(l) - 121f64.ln()).abs() < 1e-12);
    let z = g.constant(Array2::zeros((2, 27)));
    let l = g.bce_logits(z, Arc::new(Array2::zeros((2, 27))));
    assert!((g.scalar(l) - 27.0 * 2f64.ln()).abs() < 1e-12);
}

#[test]
fn frozen_params_get_no_gradient() {
    let mut s = ParamStore::<f64>::new();
    let a = s.add("a", Array2::ones((2, 2)), true);
    let b = s.add("b", Array2::ones((2, 2)), false);
    let mut g = Graph::new(&s);
    let (va, vb) = (g.param(a), g.param(b));
    let m = g.mul(va, vb);
    let l = g.sum_all(m);
    let gr = g.backward(l);
    assert!(gr.get(a).is_some());
    assert!(gr.get(b).is_none());
}
