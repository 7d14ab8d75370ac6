use ndarray::{s, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autograd::{softmax_rows, Graph, ParamStore};
use crate::gradcheck::{check_gradients, jitter_params};

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn small_cfg(width: usize, layers: usize, heads: usize) -> TransformerConfig {
    TransformerConfig {
        width,
        layers,
        heads,
        ffn_mult: 2,
        id_width: 3,
        max_steps: 8,
    }
}

fn zero_all(store: &mut ParamStore<f64>) {
    for id in store.ids().collect::<Vec<_>>() {
        store.get_mut(id).fill(0.0);
    }
}

#[test]
fn zero_weights_are_the_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f64>::new();
    let stack = TransformerStack::new(&small_cfg(8, 2, 2), &mut store, &mut rng).unwrap();
    zero_all(&mut store);
    let m = build_attention_mask(2, 2).unwrap();
    let x = rand_matrix(&mut rng, m.index.len(), 8);
    let mut g = Graph::new(&store);
    let xv = g.constant(x.clone());
    let y = stack.forward(&mut g, xv, &m.allowed).unwrap();
    assert_eq!(g.value(y), &x);
}

fn layer_norm_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let mu = row.mean().unwrap();
        let var = row.mapv(|v| (v - mu) * (v - mu)).mean().unwrap();
        row.mapv_inplace(|v| (v - mu) / (var + crate::nn::NORM_EPS).sqrt());
    }
    out
}

#[test]
fn self_only_attention_reduces_to_value_path() {
    // one row attending only to itself: softmax weight 1, so the layer is
    // x1 = x + (ln(x) Wv + bv) Wo + bo, x2 = x1 + relu(ln(x1) W1 + b1) W2 + b2
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f64>::new();
    let stack = TransformerStack::new(&small_cfg(4, 1, 1), &mut store, &mut rng).unwrap();
    jitter_params(&mut store, 0.3, &mut rng);
    let x = rand_matrix(&mut rng, 1, 4);
    let mask = Array2::from_elem((1, 1), true);
    let mut g = Graph::new(&store);
    let xv = g.constant(x.clone());
    let y = stack.forward(&mut g, xv, &mask).unwrap();

    let l = &stack.layers[0];
    let p = |id| store.get(id).clone();
    let lin = |a: &Array2<f64>, w: &crate::nn::Linear| a.dot(&p(w.w)) + &p(w.b);
    let ln = |a: &Array2<f64>, n: &crate::nn::LayerNorm| layer_norm_rows(a) * &p(n.gamma) + &p(n.beta);
    let x1 = &x + &lin(&lin(&ln(&x, &l.ln1), &l.v), &l.o);
    let h = lin(&ln(&x1, &l.ln2), &l.ff1).mapv(|v| v.max(0.0));
    let x2 = &x1 + &lin(&h, &l.ff2);
    for (a, b) in g.value(y).iter().zip(x2.iter()) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

/// Rows whose transitive attention closure contains `q`.
fn reachers(mask: &Array2<bool>, q: usize, layers: usize) -> Vec<bool> {
    let n = mask.nrows();
    let mut reach: Vec<bool> = (0..n).map(|r| r == q).collect();
    for _ in 0..layers {
        reach = (0..n).map(|r| reach[r] || (0..n).any(|k| mask[[r, k]] && reach[k])).collect();
    }
    reach
}

#[test]
fn masked_rows_ignore_perturbations_outside_their_closure() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let stack = TransformerStack::new(&small_cfg(8, 2, 2), &mut store, &mut rng).unwrap();
    jitter_params(&mut store, 0.1, &mut rng);
    let m = build_attention_mask(3, 2).unwrap();
    let len = m.index.len();
    let x = rand_matrix(&mut rng, len, 8);
    let run = |x: &Array2<f64>| {
        let mut g = Graph::new(&store);
        let v = g.constant(x.clone());
        let y = stack.forward(&mut g, v, &m.allowed).unwrap();
        g.value(y).clone()
    };
    let base = run(&x);
    for q in 0..len {
        let mut x2 = x.clone();
        x2[[q, 1]] += 0.7;
        x2[[q, 5]] -= 0.4;
        let out = run(&x2);
        let reach = reachers(&m.allowed, q, 2);
        for (r, &reached) in reach.iter().enumerate().take(len) {
            let diff = (&out.row(r) - &base.row(r)).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            if !reached {
                assert!(diff <= 1e-12, "row {r} moved by {diff} after perturbing {q}");
            } else if m.allowed[[r, q]] {
                assert!(diff > 0.0, "row {r} attends to {q} but did not move");
            }
        }
    }
}

#[test]
fn heads_at_zero_are_uniform_and_one_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let heads = Heads::new(8, &mut store, &mut rng);
    zero_all(&mut store);
    let mut g = Graph::new(&store);
    let z = g.constant(rand_matrix(&mut rng, 5, 8));
    let t = heads.trajectory_logits(&mut g, z);
    let e = heads.event_logits(&mut g, z);
    let probs = softmax_rows(g.value(t).view());
    assert_eq!(probs.dim(), (5, N_BINS));
    assert!(probs.iter().all(|&p| (p - 1.0 / 121.0).abs() < 1e-15));
    assert_eq!(g.value(e).dim(), (5, 27));
    assert!(g.value(e).iter().all(|&v| crate::autograd::sigmoid(v) == 0.5));
}

#[test]
fn trajectory_softmax_is_shift_invariant_and_normalized() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let logits = rand_matrix(&mut rng, 3, N_BINS) * 4.0;
    let p = softmax_rows(logits.view());
    let q = softmax_rows((&logits + 2.5).view());
    for row in p.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&v| v > 0.0));
    }
    assert!(p.iter().zip(q.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn region_heads_are_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f64>::new();
    let heads = Heads::new(4, &mut store, &mut rng);
    let ids: Vec<_> = heads.events.iter().map(|l| l.w).collect();
    assert!(ids[0] != ids[1] && ids[1] != ids[2] && ids[0] != ids[2]);
}

fn feature_fixture(t_n: usize, n: usize, rng: &mut ChaCha8Rng) -> FeatureSource {
    let positions = Array3::from_shape_fn((t_n, n, 2), |(_, _, a)| {
        rng.random_range(0.0..if a == 0 { 94.0 } else { 50.0 }) as f32
    });
    let normals = Array3::from_shape_fn((t_n, n, 2), |(t, i, a)| {
        let th = (t * 7 + i) as f64 * 0.3;
        if a == 0 {
            th.cos()
        } else {
            th.sin()
        }
    });
    FeatureSource {
        positions,
        normals,
        ids: (0..n).collect(),
    }
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("P{i}")).collect()
}

#[test]
fn feature_rows_follow_the_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::<f64>::new();
    let cfg = small_cfg(8, 1, 1);
    let fp = FeatureParams::new(&cfg, ids(2), 3, &mut store, &mut rng);
    let src = feature_fixture(3, 2, &mut rng);
    let mut g = Graph::new(&store);
    let pose = g.constant(rand_matrix(&mut rng, 6, 3));
    let (z, index) = fp.assemble(&mut g, &src, Some(pose), &[0, 1]).unwrap();
    assert_eq!(index.len(), 10);
    assert_eq!(g.value(z).dim(), (10, 8));
    let short = feature_fixture(1, 2, &mut rng);
    assert!(fp.assemble(&mut g, &short, None, &[0, 1]).is_err());
    assert!(fp.assemble(&mut g, &src, None, &[0, 0]).is_err());
    assert!(fp.lookup_ids(&["P9".to_string()]).is_err());
}

#[test]
fn identical_players_get_identical_state_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::<f64>::new();
    let cfg = small_cfg(8, 1, 1);
    let fp = FeatureParams::new(&cfg, ids(1), 3, &mut store, &mut rng);
    let mut src = feature_fixture(4, 2, &mut rng);
    src.ids = vec![0, 0];
    let p0 = src.positions.slice(s![.., 0, ..]).to_owned();
    src.positions.slice_mut(s![.., 1, ..]).assign(&p0);
    let n0 = src.normals.slice(s![.., 0, ..]).to_owned();
    src.normals.slice_mut(s![.., 1, ..]).assign(&n0);
    let mut g = Graph::new(&store);
    let (z, index) = fp.assemble(&mut g, &src, None, &[0, 1]).unwrap();
    let v = g.value(z);
    for t in 0..index.t_eff {
        let a = index.flat(RowKind::State, t, 0);
        let b = index.flat(RowKind::State, t, 1);
        assert_eq!(v.row(a), v.row(b));
    }
}

#[test]
fn same_step_players_only_see_earlier_slots() {
    // a state row (t, j) reaches state outputs (t, i >= j); a look-ahead row
    // (t, j) only reaches (t, i > j)
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::<f64>::new();
    let cfg = small_cfg(8, 2, 2);
    let stack = TransformerStack::new(&cfg, &mut store, &mut rng).unwrap();
    jitter_params(&mut store, 0.1, &mut rng);
    let mask = build_attention_mask(3, 3).unwrap();
    let x = rand_matrix(&mut rng, mask.index.len(), 8);
    let run = |x: &Array2<f64>| {
        let mut g = Graph::new(&store);
        let v = g.constant(x.clone());
        let y = stack.forward(&mut g, v, &mask.allowed).unwrap();
        g.value(y).clone()
    };
    let base = run(&x);
    let t = 1;
    for (kind, strict) in [(RowKind::State, false), (RowKind::Lookahead, true)] {
        for j in 0..3 {
            let mut x2 = x.clone();
            let mut row = x2.row_mut(mask.index.flat(kind, t, j));
            row[0] += 0.8;
            row[3] -= 0.5;
            let out = run(&x2);
            for i in 0..3 {
                let r = mask.index.flat(RowKind::State, t, i);
                let moved = (&out.row(r) - &base.row(r)).iter().any(|v| v.abs() > 1e-12);
                let expected = if strict { j < i } else { j <= i };
                assert_eq!(moved, expected, "{kind:?} slot {j} -> state slot {i}");
            }
        }
    }
}

#[test]
fn next_position_reaches_only_later_slots() {
    // p_{t+1} of player j enters look-ahead (t, j) and state (t+1, j)
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut store = ParamStore::<f64>::new();
    let cfg = small_cfg(8, 2, 2);
    let fp = FeatureParams::new(&cfg, ids(3), 2, &mut store, &mut rng);
    let stack = TransformerStack::new(&cfg, &mut store, &mut rng).unwrap();
    jitter_params(&mut store, 0.1, &mut rng);
    let src = feature_fixture(4, 3, &mut rng);
    let mask = build_attention_mask(3, 3).unwrap();
    let run = |src: &FeatureSource| {
        let mut g = Graph::new(&store);
        let (z, _) = fp.assemble(&mut g, src, None, &[0, 1, 2]).unwrap();
        let y = stack.forward(&mut g, z, &mask.allowed).unwrap();
        g.value(y).clone()
    };
    let base = run(&src);
    let t = 1;
    for j in 0..3 {
        let mut s2 = src.clone();
        s2.positions[[t + 1, j, 0]] += 1.5;
        let out = run(&s2);
        for i in 0..3 {
            let r = mask.index.flat(RowKind::State, t, i);
            let moved = (&out.row(r) - &base.row(r)).iter().any(|v| v.abs() > 1e-12);
            assert_eq!(moved, j < i, "slot {i} vs perturbed {j}");
        }
    }
}

#[test]
fn stack_and_heads_pass_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut store = ParamStore::<f64>::new();
    let cfg = small_cfg(8, 2, 2);
    let fp = FeatureParams::new(&cfg, ids(2), 3, &mut store, &mut rng);
    let stack = TransformerStack::new(&cfg, &mut store, &mut rng).unwrap();
    let heads = Heads::new(8, &mut store, &mut rng);
    jitter_params(&mut store, 0.1, &mut rng);
    let src = feature_fixture(3, 2, &mut rng);
    let pose = rand_matrix(&mut rng, 6, 3);
    let mask = build_attention_mask(2, 2).unwrap();
    let targets: std::sync::Arc<[u32]> = vec![3u32, 60, 100, 7].into();
    let ev = std::sync::Arc::new(Array2::from_shape_fn((4, 27), |(r, c)| ((r + c) % 3 == 0) as u8 as f64));
    let report = check_gradients(&store, 1e-5, None, |g| {
        let pv = g.constant(pose.clone());
        let (z, index) = fp.assemble(g, &src, Some(pv), &[1, 0]).unwrap();
        let y = stack.forward(g, z, &mask.allowed).unwrap();
        let zh = g.gather_rows(y, index.state_rows().into());
        let tl = heads.trajectory_logits(g, zh);
        let lt = g.softmax_nll(tl, targets.clone());
        let el = heads.event_logits(g, zh);
        let le = g.bce_logits(el, ev.clone());
        let a = g.scale(lt, 0.5);
        let b = g.scale(le, 0.5);
        g.add(a, b)
    });
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}
