//! Built-in self-checks: every contract that has an exact or near-exact
//! oracle, run against small seeded instances.
//!
//! The oracles here are deliberately naive restatements of each rule, not
//! calls back into the code under test. A seeded fault can be injected into
//! the mask check to confirm the harness actually notices a broken rule.

use std::fmt;
use std::time::Instant;

use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, ParamStore};
use crate::encoder::{EncoderConfig, PoseEncoder};
use crate::error::{Error, Result};
use crate::gradcheck::{check_gradients, jitter_params};
use crate::model::{Model, ModelConfig, Variant};
use crate::nn::NormMode;
use crate::objectives::{derive_event_windows, WindowConfig, N_BINS, N_REGIONS};
use crate::par::Exec;
use crate::play::generator::{generate_dataset, player_ids_for, DatasetSpec};
use crate::play::geometry::shoulder_normal;
use crate::play::{PlaySequence, SkeletonTopology, N_EVENTS};
use crate::probe::average_precision;
use crate::train::{eval_nll_by_timestep, gradient_check, load_checkpoint, save_checkpoint, Checkpoint, TrainConfig};
use crate::transformer::{build_attention_mask, RowIndex, RowKind, TransformerConfig};

/// Deliberate corruptions of the code under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// State rows also see their own look-ahead row.
    MaskOwnLookahead,
    /// Look-ahead rows lose sight of the start rows.
    MaskDropStart,
}

impl Fault {
    pub const ALL: [Fault; 2] = [Fault::MaskOwnLookahead, Fault::MaskDropStart];

    pub fn name(self) -> &'static str {
        match self {
            Fault::MaskOwnLookahead => "mask_own_lookahead",
            Fault::MaskDropStart => "mask_drop_start",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VerifyOptions {
    pub seed: u64,
    pub fault: Option<Fault>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{tag} {:<22} {:>7.2}s  {}", c.name, c.seconds, c.detail)?;
        }
        let n_fail = self.failed().count();
        write!(f, "{} checks, {} failed", self.checks.len(), n_fail)
    }
}

type Check = fn(&VerifyOptions) -> Result<(bool, String)>;

const CHECKS: [(&str, Check); 9] = [
    ("attention_mask", check_mask),
    ("average_precision", check_ap),
    ("event_windows", check_event_windows),
    ("calibration", check_calibration),
    ("downsampling", check_downsampling),
    ("shoulder_normals", check_normals),
    ("causality", check_causality),
    ("gradients", check_gradients_all),
    ("checkpoint_roundtrip", check_checkpoint),
];

/// Runs every check. Errors inside a check count as a failure of that check.
pub fn run_verify(opts: &VerifyOptions) -> VerifyReport {
    let checks = CHECKS
        .iter()
        .map(|&(name, f)| {
            let t0 = Instant::now();
            let (passed, detail) = match f(opts) {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckResult {
                name,
                passed,
                detail,
                seconds: t0.elapsed().as_secs_f64(),
            }
        })
        .collect();
    VerifyReport { checks }
}

/// May row `q` attend to row `k`? Read straight off the rule list.
pub fn mask_rule(q: (RowKind, usize, usize), k: (RowKind, usize, usize)) -> bool {
    let ((qk, qt, qi), (kk, kt, kj)) = (q, k);
    match (qk, kk) {
        (_, RowKind::Start) => true,
        (RowKind::Start, _) => false,
        (RowKind::State, RowKind::State) => kt < qt || (kt == qt && kj <= qi),
        (RowKind::State, RowKind::Lookahead) => kt < qt || (kt == qt && kj < qi),
        (RowKind::Lookahead, _) => kt < qt || (kt == qt && kj <= qi),
    }
}

fn faulty_mask(t_eff: usize, n: usize, fault: Option<Fault>) -> Result<Array2<bool>> {
    let m = build_attention_mask(t_eff, n)?;
    let (mut allowed, index) = (m.allowed, m.index);
    match fault {
        Some(Fault::MaskOwnLookahead) => {
            let (t, i) = (t_eff - 1, n - 1);
            allowed[[index.flat(RowKind::State, t, i), index.flat(RowKind::Lookahead, t, i)]] = true;
        }
        Some(Fault::MaskDropStart) => {
            allowed[[index.flat(RowKind::Lookahead, 0, 0), index.flat(RowKind::Start, 0, 0)]] = false;
        }
        None => {}
    }
    Ok(allowed)
}

fn check_mask(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut cases = 0;
    for t_eff in 1..=4 {
        for n in 1..=3 {
            let index = RowIndex::new(t_eff, n)?;
            let allowed = faulty_mask(t_eff, n, opts.fault)?;
            for q in 0..index.len() {
                for k in 0..index.len() {
                    if allowed[[q, k]] != mask_rule(index.decode(q), index.decode(k)) {
                        return Ok((
                            false,
                            format!(
                                "T_eff={t_eff} N={n}: row {:?} -> {:?} is {}",
                                index.decode(q),
                                index.decode(k),
                                allowed[[q, k]]
                            ),
                        ));
                    }
                }
            }
            cases += 1;
        }
    }
    Ok((true, format!("{cases} shapes match the rule interpreter")))
}

/// AP by enumerating each positive's cut-off: everything scored above it,
/// plus ties that come no later in input order.
pub fn brute_force_ap(scores: &[f64], labels: &[bool]) -> f64 {
    let mut per_positive: Vec<(usize, f64)> = Vec::new();
    for i in (0..scores.len()).filter(|&i| labels[i]) {
        let above: Vec<usize> = (0..scores.len())
            .filter(|&j| scores[j] > scores[i] || (scores[j] == scores[i] && j <= i))
            .collect();
        let hits = above.iter().filter(|&&j| labels[j]).count();
        per_positive.push((above.len(), hits as f64 / above.len() as f64));
    }
    per_positive.sort_by_key(|&(rank, _)| rank);
    let sum: f64 = per_positive.iter().map(|&(_, p)| p).sum();
    sum / per_positive.len() as f64
}

fn check_ap(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xA9);
    for trial in 0..1000 {
        let m = rng.random_range(1..=20);
        let scores: Vec<f64> = (0..m).map(|_| f64::from(rng.random_range(0..6u8)) / 5.0).collect();
        let mut labels: Vec<bool> = (0..m).map(|_| rng.random_bool(0.4)).collect();
        let k = rng.random_range(0..m);
        labels[k] = true;
        let got = average_precision(&scores, &labels)?;
        let want = brute_force_ap(&scores, &labels);
        if got != want {
            return Ok((false, format!("trial {trial}: {got} vs brute force {want}")));
        }
    }
    Ok((true, "1000 random instances, exact".into()))
}

fn check_event_windows(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xE7);
    for trial in 0..100 {
        let t_n = rng.random_range(1..30);
        let n = rng.random_range(1..4);
        let events = Array3::from_shape_fn((t_n, n, N_EVENTS), |_| u8::from(rng.random_bool(0.1)));
        for delta in [1, 2, 5] {
            let got = derive_event_windows(&events, &WindowConfig::from_steps(delta, delta));
            let want = Array4::from_shape_fn((t_n, n, N_EVENTS, N_REGIONS), |(t, i, e, r)| {
                let hit = |s: usize| events[[s, i, e]] == 1;
                u8::from(match r {
                    0 => (t.saturating_sub(delta)..t).any(hit),
                    1 => hit(t),
                    _ => (t + 1..=(t + delta).min(t_n - 1)).any(hit),
                })
            });
            if got != want {
                return Ok((false, format!("trial {trial}, delta {delta} steps differs")));
            }
        }
    }
    Ok((true, "100 sequences x 3 window widths, exact".into()))
}

fn small_config(n: usize, variant: Variant) -> ModelConfig {
    ModelConfig {
        rig: "minimal5".into(),
        identities: player_ids_for(n),
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
            max_steps: 16,
        },
        variant,
    }
}

fn small_plays(n_plays: usize, n: usize, t_n: usize, seed: u64) -> Result<Vec<PlaySequence>> {
    let spec = DatasetSpec {
        n_plays,
        n_players: n,
        n_steps: t_n,
        seed,
        mix: [0.0, 0.0, 0.0, 1.0],
        margin: 1,
        ..DatasetSpec::default()
    };
    generate_dataset(&spec, &SkeletonTopology::preset("minimal5")?, Exec::Sequential)
}

fn check_calibration(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut store = ParamStore::<f64>::new();
    let model = Model::new(small_config(2, Variant::Full), &mut store, &mut ChaCha8Rng::seed_from_u64(opts.seed))?;
    for l in std::iter::once(&model.heads.trajectory).chain(&model.heads.events) {
        store.get_mut(l.w).fill(0.0);
        store.get_mut(l.b).fill(0.0);
    }
    let plays = small_plays(2, 2, 6, opts.seed)?;
    let prepared = plays
        .iter()
        .map(|p| model.prepare(p, &WindowConfig::default()))
        .collect::<Result<Vec<_>>>()?;
    let nll = eval_nll_by_timestep(&model, &store, &prepared, Exec::Sequential)?;
    let uniform = (N_BINS as f64).ln();
    let nll_err = nll.iter().map(|v| (v - uniform).abs()).fold(0.0, f64::max);
    let mut g = Graph::new(&store);
    let l = model.losses(&mut g, &prepared[0], &[0, 1], 0.5, NormMode::Running, &mut Vec::new())?;
    let bce = g.scalar(l.events);
    let coin = (N_EVENTS * N_REGIONS) as f64 * std::f64::consts::LN_2;
    let bce_err = (bce - coin).abs();
    Ok((
        nll_err <= 1e-6 && bce_err <= 1e-9,
        format!("|NLL - ln 121| = {nll_err:.1e}, |BCE - 27 ln 2| = {bce_err:.1e}"),
    ))
}

fn check_downsampling(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut store = ParamStore::<f64>::new();
    let model = Model::new(small_config(2, Variant::Full), &mut store, &mut ChaCha8Rng::seed_from_u64(opts.seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6);
    for t_n in 1..=8 {
        let joints = Array4::from_shape_fn((6 * t_n, 2, 5, 3), |_| rng.random_range(-3.0..3.0f32));
        let r = model.encoder.embed(&store, &joints)?;
        if 6 * r.dim().0 != joints.dim().0 {
            return Ok((false, format!("{} frames gave {} embeddings", joints.dim().0, r.dim().0)));
        }
    }
    Ok((true, "30 Hz frames / 5 Hz embeddings = 6 for 6..48 frames".into()))
}

fn rotate(p: [f64; 2], c: [f64; 2], th: f64) -> [f64; 2] {
    let (s, co) = th.sin_cos();
    let (x, y) = (p[0] - c[0], p[1] - c[1]);
    [c[0] + co * x - s * y, c[1] + s * x + co * y]
}

fn check_normals(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let l = [rng.random_range(0.0..94.0), rng.random_range(0.0..50.0)];
        let r = [l[0] + rng.random_range(-2.0..2.0), l[1] + rng.random_range(-2.0..2.0)];
        let Ok(n) = shoulder_normal(l, r) else { continue };
        let w = [r[0] - l[0], r[1] - l[1]];
        worst = worst
            .max((n[0].hypot(n[1]) - 1.0).abs())
            .max((n[0] * w[0] + n[1] * w[1]).abs() / w[0].hypot(w[1]));
        let c = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
        for th in [std::f64::consts::FRAC_PI_2, std::f64::consts::PI, rng.random_range(0.0..6.3)] {
            let m = shoulder_normal(rotate(l, c, th), rotate(r, c, th))?;
            let want = rotate(n, [0.0, 0.0], th);
            worst = worst.max((m[0] - want[0]).abs()).max((m[1] - want[1]).abs());
        }
    }
    Ok((worst <= 1e-6, format!("worst deviation {worst:.1e}")))
}

/// Two causality statements. At the row level, perturbing every input row of
/// steps `>= t'` leaves all state outputs of steps `< t'` fixed. End to end,
/// the same holds for raw inputs one step further back, because the
/// look-ahead rows of step `t' - 1` carry step `t'` positions and poses:
/// outputs of steps `< t' - 1` and slot 0 of step `t' - 1` stay fixed.
fn check_causality(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0xCA);
    let mut worst_rows = 0.0f64;
    let mut worst_raw = 0.0f64;
    // the perturbation must reach the later outputs, or the check is vacuous
    let mut moved = 0.0f64;
    let mut moved_raw = 0.0f64;
    for instance in 0..20 {
        let n = rng.random_range(2..=3);
        let t_n = rng.random_range(4..=7);
        let mut store = ParamStore::<f64>::new();
        let model = Model::new(small_config(n, Variant::Full), &mut store, &mut rng)?;
        jitter_params(&mut store, 0.05, &mut rng);
        let t_cut = rng.random_range(1..t_n - 1);

        // row level
        let index = RowIndex::new(t_n - 1, n)?;
        let mask = build_attention_mask(index.t_eff, n)?;
        let z = Array2::from_shape_fn((index.len(), model.stack.width), |_| rng.random_range(-1.0..1.0));
        let mut z2 = z.clone();
        for row in 0..index.len() {
            let (kind, t, _) = index.decode(row);
            if kind != RowKind::Start && t >= t_cut {
                z2.row_mut(row).mapv_inplace(|v| v + rng.random_range(-3.0..3.0));
            }
        }
        let run = |z: Array2<f64>| -> Result<Array2<f64>> {
            let mut g = Graph::new(&store);
            let x = g.constant(z);
            let out = model.stack.forward(&mut g, x, &mask.allowed)?;
            Ok(g.value(out).clone())
        };
        let (a, b) = (run(z)?, run(z2)?);
        for t in 0..index.t_eff {
            for i in 0..n {
                let r = index.flat(RowKind::State, t, i);
                let d = (&a.row(r) - &b.row(r)).mapv(f64::abs).fold(0.0, |m: f64, &v| m.max(v));
                if t < t_cut {
                    worst_rows = worst_rows.max(d);
                } else {
                    moved = moved.max(d);
                }
            }
        }

        // raw inputs
        let play = small_plays(1, n, t_n, opts.seed.wrapping_add(instance))?.remove(0);
        let mut bent = play.clone();
        for t in t_cut..t_n {
            for i in 0..n {
                let d = [rng.random_range(-2.0..2.0f32), rng.random_range(-2.0..2.0f32)];
                bent.positions[[t, i, 0]] += d[0];
                bent.positions[[t, i, 1]] += d[1];
            }
        }
        for f in 6 * t_cut..6 * t_n {
            bent.joints30.index_axis_mut(ndarray::Axis(0), f).mapv_inplace(|v| v + rng.random_range(-0.5..0.5f32));
        }
        let wc = WindowConfig::default();
        let ea = model.embeddings(&store, &model.prepare(&play, &wc)?)?;
        let eb = model.embeddings(&store, &model.prepare(&bent, &wc)?)?;
        for t in 0..ea.dim().0 {
            for i in 0..n {
                let d = (&ea.slice(ndarray::s![t, i, ..]) - &eb.slice(ndarray::s![t, i, ..]))
                    .mapv(f64::abs)
                    .fold(0.0, |m: f64, &v| m.max(v));
                if t + 1 < t_cut || (t + 1 == t_cut && i == 0) {
                    worst_raw = worst_raw.max(d);
                } else if t >= t_cut {
                    moved_raw = moved_raw.max(d);
                }
            }
        }
    }
    Ok((
        worst_rows <= 1e-6 && worst_raw <= 1e-6 && moved.min(moved_raw) > 1e-6,
        format!("20 instances, row-level drift {worst_rows:.1e}, raw-input drift {worst_raw:.1e}, later rows moved {:.1e}", moved.min(moved_raw)),
    ))
}

fn check_gradients_all(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6C);
    let plays = small_plays(1, 2, 4, opts.seed)?;
    let mut worst = Vec::new();

    let mut store = ParamStore::<f64>::new();
    let model = Model::new(small_config(2, Variant::Full), &mut store, &mut rng)?;
    jitter_params(&mut store, 0.05, &mut rng);
    let play = model.prepare(&plays[0], &WindowConfig::default())?;
    let full = gradient_check(&model, &store, &play, 0.5, 1e-5, 60, opts.seed)?;
    worst.push(("full", full.max_rel_error));

    let joints = play.joints30.clone();
    let mut enc_store = ParamStore::<f64>::new();
    let encoder = PoseEncoder::new(small_config(2, Variant::Full).encoder, SkeletonTopology::preset("minimal5")?, &mut enc_store, &mut rng)?;
    jitter_params(&mut enc_store, 0.05, &mut rng);
    let enc = check_gradients(&enc_store, 1e-5, Some((60, opts.seed)), |g| {
        let (r, _) = encoder
            .forward(g, &joints, NormMode::Batch, &mut Vec::new())
            .expect("shapes checked by prepare");
        let sq = g.mul(r, r);
        g.mean_all(sq)
    });
    worst.push(("encoder", enc.max_rel_error));

    let mut store = ParamStore::<f64>::new();
    let model = Model::new(small_config(2, Variant::PositionOnly), &mut store, &mut rng)?;
    jitter_params(&mut store, 0.05, &mut rng);
    let play = model.prepare(&plays[0], &WindowConfig::default())?;
    let tr = gradient_check(&model, &store, &play, 0.5, 1e-5, 60, opts.seed)?;
    worst.push(("transformer", tr.max_rel_error));

    let ok = worst.iter().all(|&(_, e)| e <= 1e-4);
    let detail = worst
        .iter()
        .map(|(k, e)| format!("{k} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((ok, format!("max relative error: {detail}")))
}

fn check_checkpoint(opts: &VerifyOptions) -> Result<(bool, String)> {
    let mut store = ParamStore::<f32>::new();
    let cfg = small_config(2, Variant::Full);
    let model = Model::new(cfg.clone(), &mut store, &mut ChaCha8Rng::seed_from_u64(opts.seed))?;
    let plays = small_plays(1, 2, 5, opts.seed)?;
    let ck = Checkpoint {
        model: cfg,
        trainer: TrainConfig::default(),
        windows: WindowConfig::default(),
        step: 3,
        fingerprint: crate::train::dataset_fingerprint(&plays)?,
        store,
        adam: None,
    };
    let path = std::env::temp_dir().join(format!("skeletrack-verify-{}-{}.ckpt", std::process::id(), opts.seed));
    save_checkpoint(&ck, &path)?;
    let loaded = load_checkpoint::<f32>(&path);
    let _ = std::fs::remove_file(&path);
    let (model2, ck2) = loaded?;
    if ck2.store != ck.store || model2 != model {
        return Ok((false, "parameters or structure changed".into()));
    }
    let play = model.prepare(&plays[0], &WindowConfig::default())?;
    let a = model.embeddings(&ck.store, &play)?;
    let b = model2.embeddings(&ck2.store, &play)?;
    let same = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
    if !same {
        return Err(Error::Format("reloaded model embeds differently".into()));
    }
    Ok((true, format!("{} tensors, embeddings bit-identical", ck.store.len())))
}
