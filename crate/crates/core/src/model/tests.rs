use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{check_gradients, jitter_params};
use crate::play::{ScenarioKind, Team};

/// A random play on the 5-joint rig with distinct shoulders.
pub(crate) fn tiny_play(t_n: usize, n: usize, rng: &mut ChaCha8Rng) -> PlaySequence {
    let positions = Array3::from_shape_fn((t_n, n, 2), |(_, _, a)| {
        rng.random_range(10.0..if a == 0 { 80.0 } else { 40.0 }) as f32
    });
    let rest = [[0.0, 0.0, 3.0], [0.0, 0.0, 5.0], [0.0, 0.0, 5.8], [0.0, 0.8, 5.0], [0.0, -0.8, 5.0]];
    let joints30 = Array4::from_shape_fn((6 * t_n, n, 5, 3), |(f, i, j, a)| {
        let base = if a < 2 { positions[[f / 6, i, a]] } else { 0.0 };
        base + rest[j][a] as f32 + rng.random_range(-0.2..0.2f32)
    });
    let mut events = Array3::zeros((t_n, n, N_EVENTS));
    for t in 0..t_n {
        for i in 0..n {
            events[[t, i, rng.random_range(0..N_EVENTS)]] = 1;
        }
    }
    PlaySequence {
        seed: 0,
        scenario: ScenarioKind::RandomMotion,
        rig: "minimal5".into(),
        player_ids: (0..n).map(|i| format!("P{i}")).collect(),
        teams: (0..n).map(|i| if i % 2 == 0 { Team::Offense } else { Team::Defense }).collect(),
        positions,
        joints30,
        events,
        ball: None,
    }
}

pub(crate) fn tiny_config(n: usize, variant: Variant) -> ModelConfig {
    ModelConfig {
        rig: "minimal5".into(),
        identities: (0..n).map(|i| format!("P{i}")).collect(),
        encoder: EncoderConfig {
            widths: vec![4, 4],
            kernels: vec![2, 2],
            strides: vec![2, 3],
            d_r: 4,
            share_conv: true,
        },
        transformer: TransformerConfig {
            width: 8,
            layers: 1,
            heads: 2,
            ffn_mult: 2,
            id_width: 3,
            max_steps: 8,
        },
        variant,
    }
}

#[test]
fn variant_names_round_trip() {
    for v in Variant::ALL {
        assert_eq!(Variant::from_name(v.name()), Some(v));
    }
    assert_eq!(Variant::from_name("baseline"), None);
    assert!(!Variant::PositionOnly.uses_pose() && !Variant::PositionOnly.uses_normals());
    assert!(Variant::PositionOnly.uses_events());
    assert_eq!(Variant::NoGnnNoEvents.alpha(0.5), 1.0);
    assert_eq!(Variant::NoShoulder.alpha(0.25), 0.25);
}

#[test]
fn prepare_checks_rig_and_ids() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f64>::new();
    let model = Model::new(tiny_config(2, Variant::Full), &mut store, &mut rng).unwrap();
    let mut play = tiny_play(3, 2, &mut rng);
    let w = WindowConfig::default();
    let p = model.prepare(&play, &w).unwrap();
    assert_eq!(p.t_eff(), 2);
    assert_eq!(p.event_targets.dim(), (2, 2, 27));
    play.player_ids[1] = "X".into();
    assert!(matches!(model.prepare(&play, &w), Err(Error::UnknownPlayer(_))));
    play.rig = "default17".into();
    assert!(matches!(model.prepare(&play, &w), Err(Error::Shape(_))));
}

#[test]
fn position_only_drops_normals_and_skips_the_encoder() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f64>::new();
    let model = Model::new(tiny_config(2, Variant::PositionOnly), &mut store, &mut rng).unwrap();
    let play = model.prepare(&tiny_play(3, 2, &mut rng), &WindowConfig::default()).unwrap();
    assert!(play.source.normals.iter().all(|&v| v == 0.0));
    let mut g = Graph::new(&store);
    let l = model
        .losses(&mut g, &play, &[0, 1], 0.5, NormMode::Batch, &mut Vec::new())
        .unwrap();
    let grads = g.backward(l.total);
    assert!(grads.get(model.encoder.out.w).is_none());
}

#[test]
fn alpha_one_leaves_event_heads_without_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let model = Model::new(tiny_config(2, Variant::NoEvents), &mut store, &mut rng).unwrap();
    let play = model.prepare(&tiny_play(3, 2, &mut rng), &WindowConfig::default()).unwrap();
    let mut g = Graph::new(&store);
    let l = model
        .losses(&mut g, &play, &[1, 0], 0.5, NormMode::Batch, &mut Vec::new())
        .unwrap();
    assert_eq!(g.scalar(l.total), g.scalar(l.traj));
    let grads = g.backward(l.total);
    for head in model.heads.events {
        assert!(grads.get(head.w).unwrap().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn player_order_is_deterministic() {
    // with one step of context per slot the loss depends on the order only
    // through same-step attention; both orders must stay finite and differ
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let model = Model::new(tiny_config(3, Variant::Full), &mut store, &mut rng).unwrap();
    let play = model.prepare(&tiny_play(4, 3, &mut rng), &WindowConfig::default()).unwrap();
    let loss = |order: &[usize]| {
        let mut g = Graph::new(&store);
        let l = model
            .losses(&mut g, &play, order, 0.5, NormMode::Running, &mut Vec::new())
            .unwrap();
        g.scalar(l.total)
    };
    let a = loss(&[0, 1, 2]);
    let b = loss(&[2, 0, 1]);
    assert!(a.is_finite() && b.is_finite());
    assert_eq!(a, loss(&[0, 1, 2]));
}

#[test]
fn full_model_passes_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::<f64>::new();
    let model = Model::new(tiny_config(2, Variant::Full), &mut store, &mut rng).unwrap();
    jitter_params(&mut store, 0.1, &mut rng);
    let play = model.prepare(&tiny_play(3, 2, &mut rng), &WindowConfig::default()).unwrap();
    let report = check_gradients(&store, 1e-5, Some((300, 7)), |g| {
        model
            .losses(g, &play, &[1, 0], 0.5, NormMode::Batch, &mut Vec::new())
            .unwrap()
            .total
    });
    assert!(report.max_rel_error <= 1e-4, "{report:?}");
}

#[test]
fn embeddings_have_one_row_per_step_and_player() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f64>::new();
    let model = Model::new(tiny_config(2, Variant::Full), &mut store, &mut rng).unwrap();
    let play = model.prepare(&tiny_play(5, 2, &mut rng), &WindowConfig::default()).unwrap();
    let e = model.embeddings(&store, &play).unwrap();
    assert_eq!(e.dim(), (4, 2, 8));
    let p = model.trajectory_probs(&store, &play).unwrap();
    assert!(p.rows().into_iter().all(|r| (r.sum() - 1.0).abs() < 1e-12));
    let q = model.event_probs(&store, &play).unwrap();
    assert!(q.iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn pose_embedding_ignores_where_the_player_stands() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::<f64>::new();
    let model = Model::new(tiny_config(2, Variant::Full), &mut store, &mut rng).unwrap();
    let play = tiny_play(4, 2, &mut rng);
    let mut moved = play.clone();
    for mut frame in moved.joints30.outer_iter_mut() {
        for mut joint in frame.index_axis_mut(ndarray::Axis(0), 1).outer_iter_mut() {
            joint[0] += 30.0;
            joint[1] -= 7.5;
        }
    }
    let wc = WindowConfig::default();
    let a = model.prepare(&play, &wc).unwrap();
    let b = model.prepare(&moved, &wc).unwrap();
    let ra = model.encoder.embed(&store, &a.joints30).unwrap();
    let rb = model.encoder.embed(&store, &b.joints30).unwrap();
    for (x, y) in ra.iter().zip(&rb) {
        assert!((x - y).abs() < 1e-4, "{x} vs {y}");
    }
    let root = model.topology().root();
    assert!(a.joints30.outer_iter().all(|f| f.outer_iter().all(|p| p[[root, 0]] == 0.0 && p[[root, 1]] == 0.0)));
}
