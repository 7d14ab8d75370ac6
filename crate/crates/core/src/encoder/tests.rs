use ndarray::{array, Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::check_gradients;

fn rig17() -> SkeletonTopology {
    SkeletonTopology::preset("default17").unwrap()
}

fn random_joints(rng: &mut ChaCha8Rng, frames: usize, n: usize, j: usize) -> Array4<f32> {
    Array4::from_shape_fn((frames, n, j, 3), |_| rng.random_range(-3.0..3.0))
}

fn small_cfg() -> EncoderConfig {
    EncoderConfig {
        widths: vec![4, 4],
        kernels: vec![3, 3],
        strides: vec![2, 3],
        d_r: 4,
        share_conv: true,
    }
}

fn encoder<T: Real>(cfg: EncoderConfig, topo: SkeletonTopology, seed: u64) -> (PoseEncoder, ParamStore<T>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = PoseEncoder::new(cfg, topo, &mut store, &mut rng).unwrap();
    (enc, store)
}

#[test]
fn bones_and_aggregates() {
    let topo = SkeletonTopology::from_parents(
        "fork",
        vec!["a".into(), "b".into(), "c".into()],
        &[None, Some(0), Some(0)],
    )
    .unwrap();
    let frame = array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 2.0, 0.0]];
    let st = init_graph_state(frame.view(), &topo).unwrap();
    assert_eq!(st.edge.row(0).to_vec(), vec![-1.0, 0.0, 0.0]);
    assert_eq!(aggregate_incoming(&st, &topo, 0).to_vec(), vec![0.0; 3]);
    assert_eq!(aggregate_outgoing(&st, &topo, 1).to_vec(), vec![0.0; 3]);
    assert_eq!(aggregate_outgoing(&st, &topo, 0).to_vec(), vec![-1.0, -2.0, 0.0]);

    let zero = Array2::zeros((17, 3));
    let st = init_graph_state(zero.view(), &rig17()).unwrap();
    assert_eq!(st.edge.dim(), (16, 3));
    assert!(st.edge.iter().all(|&v| v == 0.0));
    let mut bad = Array2::zeros((17, 3));
    bad[[3, 1]] = f64::NAN;
    assert!(init_graph_state(bad.view(), &rig17()).is_err());
}

#[test]
fn stride_product_is_validated() {
    let cfg = EncoderConfig {
        strides: vec![2, 2, 1, 1, 1],
        ..EncoderConfig::default()
    };
    let err = cfg.validate().unwrap_err();
    assert!(err.to_string().contains("encoder.strides"));
}

#[test]
fn two_joint_block_matches_hand_arithmetic() {
    let topo =
        SkeletonTopology::from_parents("pair", vec!["a".into(), "b".into()], &[None, Some(0)]).unwrap();
    let cfg = EncoderConfig {
        widths: vec![1],
        kernels: vec![1],
        strides: vec![6],
        d_r: 1,
        share_conv: true,
    };
    let (enc, mut store) = encoder::<f64>(cfg, topo, 0);
    let blk = enc.blocks[0].clone();
    // vertex: w . [v(3), e_in(3), e_out(3)] with weights on x-coordinates only
    let wv = Array2::from_shape_vec((9, 1), vec![2.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0, 0.0, 0.0]).unwrap();
    store.set(blk.vertex.w, wv).unwrap();
    store.set(blk.vertex.b, array![[0.5]]).unwrap();
    // edge: u . [bone(3), h_src, h_tgt]
    let we = Array2::from_shape_vec((5, 1), vec![1.0, 0.0, 0.0, 3.0, -2.0]).unwrap();
    store.set(blk.edge.w, we).unwrap();
    store.set(blk.edge.b, array![[0.0]]).unwrap();

    let joints = Array4::from_shape_vec((1, 1, 2, 3), vec![1.0, 0.0, 0.0, 3.0, 0.0, 0.0]).unwrap();
    let mut g = Graph::new(&store);
    let (h, e, layout) = enc.inputs(&mut g, &joints).unwrap();
    let (h2, e2) = enc.dgn_block(&mut g, 0, h, e, layout, NormMode::Running, &mut Vec::new());

    let bn = 1.0 / (1.0 + crate::nn::NORM_EPS).sqrt();
    let bone = 1.0 - 3.0; // v(a) - v(b)
    // a: no incoming, outgoing = bone; b: incoming = bone, no outgoing
    let ha = (2.0 * 1.0 + 0.0 - bone + 0.5) * bn;
    let hb = (2.0 * 3.0 + bone - 0.0 + 0.5) * bn;
    let (ha, hb) = (ha.max(0.0), hb.max(0.0));
    let eab = ((bone + 3.0 * ha - 2.0 * hb) * bn).max(0.0);
    assert!((g.value(h2)[[0, 0]] - ha).abs() < 1e-12);
    assert!((g.value(h2)[[1, 0]] - hb).abs() < 1e-12);
    assert!((g.value(e2)[[0, 0]] - eab).abs() < 1e-12);
}

#[test]
fn causal_conv_identity_and_length() {
    let store = {
        let mut s = ParamStore::<f64>::new();
        s.add("conv.w", Array2::eye(2), true);
        s.add("conv.b", Array2::zeros((1, 2)), true);
        s
    };
    let conv = Linear {
        w: store.id("conv.w").unwrap(),
        b: store.id("conv.b").unwrap(),
        d_in: 2,
        d_out: 2,
    };
    let x = Array2::from_shape_fn((30, 2), |(i, k)| (i * 2 + k) as f64);
    let mut g = Graph::new(&store);
    let xv = g.constant(x.clone());
    let layout = SeqLayout { n_seq: 1, frames: 30 };
    let y = causal_conv(&mut g, xv, &conv, 1, 1, layout, 1);
    assert_eq!(g.value(y), &x);
    let y2 = causal_conv(&mut g, xv, &conv, 1, 2, layout, 1);
    assert_eq!(g.value(y2).nrows(), 15);
    assert_eq!(g.value(y2).row(3), x.row(6));
}

#[test]
fn causal_conv_taps_read_past_frames() {
    let mut s = ParamStore::<f64>::new();
    // two taps: y = x[t] + 10 x[t-1]
    let w = s.add("w", array![[1.0], [10.0]], true);
    let b = s.add("b", array![[0.0]], true);
    let conv = Linear { w, b, d_in: 2, d_out: 1 };
    let x = array![[1.0], [2.0], [3.0], [4.0]];
    let mut g = Graph::new(&s);
    let xv = g.constant(x);
    let y = causal_conv(&mut g, xv, &conv, 2, 2, SeqLayout { n_seq: 1, frames: 4 }, 1);
    // outputs at frames 0 and 2
    assert_eq!(g.value(y).column(0).to_vec(), vec![1.0, 3.0 + 20.0]);
}

#[test]
fn downsamples_thirty_to_five_hz() {
    let topo = rig17();
    let (enc, store) = encoder::<f32>(EncoderConfig::default(), topo, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let j = random_joints(&mut rng, 60, 2, 17);
    let r = enc.embed(&store, &j).unwrap();
    assert_eq!(r.dim(), (10, 2, 64));
}

#[test]
fn encoder_is_causal_in_frames() {
    let topo = rig17();
    let cfg = EncoderConfig {
        widths: vec![6, 6, 6, 6, 6],
        d_r: 5,
        ..EncoderConfig::default()
    };
    let (enc, store) = encoder::<f64>(cfg, topo, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let j = random_joints(&mut rng, 48, 2, 17);
    let base = enc.embed(&store, &j).unwrap();
    for t in [0usize, 3, 6] {
        let mut j2 = j.clone();
        for f in 6 * t + 1..48 {
            for v in j2.slice_mut(ndarray::s![f, .., .., ..]).iter_mut() {
                *v += 1.5;
            }
        }
        let out = enc.embed(&store, &j2).unwrap();
        for tt in 0..=t {
            for s in 0..2 {
                for k in 0..5 {
                    assert_eq!(out[[tt, s, k]], base[[tt, s, k]], "t {t} tt {tt}");
                }
            }
        }
        assert_ne!(out[[t + 1, 0, 0]], base[[t + 1, 0, 0]]);
    }
}

#[test]
fn players_are_encoded_independently() {
    let (enc, store) = encoder::<f64>(small_cfg(), SkeletonTopology::preset("minimal5").unwrap(), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let j = random_joints(&mut rng, 24, 3, 5);
    let base = enc.embed(&store, &j).unwrap();
    let swapped = j.select(ndarray::Axis(1), &[2, 0, 1]);
    let out = enc.embed(&store, &swapped).unwrap();
    for t in 0..4 {
        for k in 0..4 {
            assert_eq!(out[[t, 0, k]], base[[t, 2, k]]);
            assert_eq!(out[[t, 1, k]], base[[t, 0, k]]);
        }
    }
    let mut dup = j.clone();
    let first = j.slice(ndarray::s![.., 0, .., ..]).to_owned();
    dup.slice_mut(ndarray::s![.., 1, .., ..]).assign(&first);
    let out = enc.embed(&store, &dup).unwrap();
    for t in 0..4 {
        for k in 0..4 {
            assert_eq!(out[[t, 0, k]], out[[t, 1, k]]);
        }
    }
}

#[test]
fn zero_input_is_a_fixed_point() {
    let (enc, store) = encoder::<f64>(EncoderConfig::default(), rig17(), 7);
    let j = Array4::zeros((12, 2, 17, 3));
    let r = enc.embed(&store, &j).unwrap();
    assert!(r.iter().all(|&v| v == 0.0));
}

#[test]
fn joint_relabeling_permutes_block_and_keeps_embedding() {
    let topo = SkeletonTopology::preset("minimal5").unwrap();
    let perm = [3usize, 0, 4, 1, 2];
    let relabeled = topo.relabeled(&perm);
    let (enc, store) = encoder::<f64>(small_cfg(), topo, 8);
    let mut enc2 = enc.clone();
    enc2.topology = relabeled;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let j = random_joints(&mut rng, 12, 2, 5);
    let jp = j.select(ndarray::Axis(2), &perm);

    let mut g = Graph::new(&store);
    let (h, e, l) = enc.inputs(&mut g, &j).unwrap();
    let (h2, e2) = enc.dgn_block(&mut g, 0, h, e, l, NormMode::Running, &mut Vec::new());
    let (hp, ep, lp) = enc2.inputs(&mut g, &jp).unwrap();
    let (hp2, ep2) = enc2.dgn_block(&mut g, 0, hp, ep, lp, NormMode::Running, &mut Vec::new());
    let (a, b) = (g.value(h2), g.value(hp2));
    for sf in 0..24 {
        for (new, &old) in perm.iter().enumerate() {
            for k in 0..4 {
                assert!((a[[sf * 5 + old, k]] - b[[sf * 5 + new, k]]).abs() < 1e-9);
            }
        }
    }
    let diff = (g.value(e2) - g.value(ep2)).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
    assert!(diff < 1e-9);

    let r1 = enc.embed(&store, &j).unwrap();
    let r2 = enc2.embed(&store, &jp).unwrap();
    let diff = (&r1 - &r2).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
    assert!(diff < 1e-6);
}

#[test]
fn gradients_match_finite_differences() {
    let (enc, mut store) = encoder::<f64>(small_cfg(), SkeletonTopology::preset("minimal5").unwrap(), 10);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    crate::gradcheck::jitter_params(&mut store, 0.1, &mut rng);
    let j = random_joints(&mut rng, 12, 2, 5);
    let target = Array2::from_shape_fn((4, 4), |_| rng.random_range(-1.0..1.0));
    let rep = check_gradients(&store, 1e-5, None, |g| {
        let (r, _) = enc.forward(g, &j, NormMode::Batch, &mut Vec::new()).unwrap();
        let t = g.constant(target.clone());
        let d = g.sub(r, t);
        let sq = g.mul(d, d);
        g.sum_all(sq)
    });
    assert!(rep.max_rel_error <= 1e-4, "{rep:?}");
}

