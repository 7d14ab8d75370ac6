//! Linear probing of frozen embeddings: task datasets at several horizons,
//! average precision, PR curves, data-efficiency sweeps and the variant
//! ablation report.

mod ap;
mod linear;
mod report;
mod tasks;

pub use ap::{average_precision, pr_curve, ranking};
pub use linear::{LinearProbe, ProbeFitConfig};
pub use report::{run_ablation_matrix, AblationCell, AblationReport};
pub use tasks::{horizon_steps, task_anchors, Anchor, AnchorRows, LabelConfig, ProbeTask, TaskKind};

use std::collections::HashSet;

use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::ParamStore;
use crate::error::{Error, Result};
use crate::model::{Model, PreparedPlay, Variant};
use crate::par::Exec;
use crate::play::PlaySequence;
use crate::real::Real;

/// State-row embeddings of every play, `(T-1, N, F)` each, from one model.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub variant: Variant,
    pub per_play: Vec<Array3<f64>>,
}

impl EmbeddingTable {
    pub fn n_rows(&self) -> usize {
        self.per_play.iter().map(|e| e.len_of(Axis(0)) * e.len_of(Axis(1))).sum()
    }

    pub fn width(&self) -> usize {
        self.per_play.first().map_or(0, |e| e.len_of(Axis(2)))
    }
}

/// Inference-mode embeddings for every play. `variant` must be the one the
/// model was trained as.
pub fn extract_embeddings<T: Real>(
    model: &Model,
    store: &ParamStore<T>,
    plays: &[PreparedPlay],
    variant: Variant,
    exec: Exec,
) -> Result<EmbeddingTable> {
    if model.variant() != variant {
        return Err(Error::Probe(format!(
            "checkpoint was trained as `{}`, embeddings were requested for `{variant}`",
            model.variant()
        )));
    }
    let per_play = exec
        .map(plays, |p| model.embeddings(store, p).map(|e| e.mapv(|v| v.as_f64())))
        .into_iter()
        .collect::<Result<_>>()?;
    Ok(EmbeddingTable { variant, per_play })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeDataset {
    pub x: Array2<f64>,
    pub labels: Vec<usize>,
    /// Source play of each row.
    pub play: Vec<usize>,
    pub n_classes: usize,
    pub horizon: f64,
    /// Anchors dropped because the horizon reaches before the play starts.
    pub skipped: usize,
}

impl ProbeDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows whose play is in `keep`, in their original order.
    pub fn subset(&self, keep: &HashSet<usize>) -> ProbeDataset {
        let rows: Vec<usize> = (0..self.len()).filter(|&r| keep.contains(&self.play[r])).collect();
        ProbeDataset {
            x: self.x.select(Axis(0), &rows),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            play: rows.iter().map(|&r| self.play[r]).collect(),
            n_classes: self.n_classes,
            horizon: self.horizon,
            skipped: self.skipped,
        }
    }
}

/// Samples each anchor's embedding `horizon` seconds before it.
pub fn build_probe_dataset(
    emb: &EmbeddingTable,
    anchors: &[Anchor],
    n_classes: usize,
    horizon: f64,
) -> Result<ProbeDataset> {
    let steps = horizon_steps(horizon)?;
    let width = emb.width();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut play = Vec::new();
    let mut skipped = 0;
    for a in anchors {
        let e = emb
            .per_play
            .get(a.play)
            .ok_or_else(|| Error::Shape(format!("anchor refers to play {} of {}", a.play, emb.per_play.len())))?;
        if a.step < steps || a.step - steps >= e.len_of(Axis(0)) {
            skipped += 1;
            continue;
        }
        let at = e.index_axis(Axis(0), a.step - steps);
        match a.rows {
            AnchorRows::EachPlayer { positive } => {
                for (i, row) in at.rows().into_iter().enumerate() {
                    data.extend(row.iter().copied());
                    labels.push(usize::from(i == positive));
                    play.push(a.play);
                }
            }
            AnchorRows::Pooled { label } => {
                data.extend(at.mean_axis(Axis(0)).expect("players").iter().copied());
                labels.push(label);
                play.push(a.play);
            }
            AnchorRows::Player { player, label } => {
                data.extend(at.row(player).iter().copied());
                labels.push(label);
                play.push(a.play);
            }
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} anchors lack {horizon} s of history and were skipped");
    }
    let x = Array2::from_shape_vec((labels.len(), width), data).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(ProbeDataset {
        x,
        labels,
        play,
        n_classes,
        horizon,
        skipped,
    })
}

/// Disjoint probe-train and probe-eval play sets.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaySplit {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
}

impl PlaySplit {
    /// Seeded shuffle of `0..n_plays`; the first `eval_fraction` go to eval.
    pub fn new(n_plays: usize, eval_fraction: f64, seed: u64) -> Result<Self> {
        if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
            return Err(Error::config("probe.eval_fraction", "must be in (0, 1)"));
        }
        let mut ids: Vec<usize> = (0..n_plays).collect();
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_eval = ((n_plays as f64 * eval_fraction).round() as usize).clamp(1.min(n_plays), n_plays);
        let eval = ids[..n_eval].to_vec();
        let train = ids[n_eval..].to_vec();
        let split = PlaySplit { train, eval };
        split.assert_disjoint();
        Ok(split)
    }

    pub fn assert_disjoint(&self) {
        let train: HashSet<_> = self.train.iter().collect();
        assert!(
            self.eval.iter().all(|p| !train.contains(p)),
            "a play is in both probe-train and probe-eval"
        );
    }

    /// Keeps a seeded `fraction` of the training plays (at least one);
    /// `fraction = 1` keeps all of them.
    pub fn subsample(&self, fraction: f64, seed: u64) -> Result<PlaySplit> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::config("probe.fractions", format!("{fraction} is outside (0, 1]")));
        }
        if fraction == 1.0 {
            return Ok(self.clone());
        }
        let mut train = self.train.clone();
        train.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let keep = ((train.len() as f64 * fraction).round() as usize).max(1).min(train.len());
        train.truncate(keep);
        Ok(PlaySplit {
            train,
            eval: self.eval.clone(),
        })
    }
}

/// AP of one fitted probe on held-out rows. Multi-class tasks report the
/// mean one-vs-rest AP over classes that occur in the eval rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeScore {
    pub ap: f64,
    /// `(class name, PR points)` per scored class.
    pub curves: Vec<(String, Vec<(f64, f64)>)>,
    pub n_train: usize,
    pub n_eval: usize,
}

pub fn fit_and_score(
    data: &ProbeDataset,
    split: &PlaySplit,
    kind: TaskKind,
    cfg: &ProbeFitConfig,
) -> Result<ProbeScore> {
    split.assert_disjoint();
    let train = data.subset(&split.train.iter().copied().collect());
    let eval = data.subset(&split.eval.iter().copied().collect());
    let probe = LinearProbe::fit(train.x.view(), &train.labels, data.n_classes, cfg)?;
    let classes: Vec<usize> = if data.n_classes == 2 { vec![1] } else { (0..data.n_classes).collect() };
    let mut aps = Vec::new();
    let mut curves = Vec::new();
    for c in classes {
        let truth: Vec<bool> = eval.labels.iter().map(|&l| l == c).collect();
        if !truth.contains(&true) {
            continue;
        }
        let scores = probe.class_scores(eval.x.view(), c)?;
        aps.push(average_precision(&scores, &truth)?);
        curves.push((kind.class_name(c), pr_curve(&scores, &truth)?));
    }
    if aps.is_empty() {
        return Err(Error::NoPositives);
    }
    Ok(ProbeScore {
        ap: aps.iter().sum::<f64>() / aps.len() as f64,
        curves,
        n_train: train.len(),
        n_eval: eval.len(),
    })
}

/// Probe settings shared by curves, sweeps and the ablation report.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSetup {
    pub labels: LabelConfig,
    pub fit: ProbeFitConfig,
    pub eval_fraction: f64,
}

impl Default for ProbeSetup {
    fn default() -> Self {
        ProbeSetup {
            labels: LabelConfig::default(),
            fit: ProbeFitConfig::default(),
            eval_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonResult {
    pub horizon: f64,
    pub score: ProbeScore,
    pub skipped: usize,
}

/// AP and PR curves at each of the task's horizons for one split seed.
pub fn eval_task_curve(
    emb: &EmbeddingTable,
    plays: &[PlaySequence],
    task: &ProbeTask,
    setup: &ProbeSetup,
    seed: u64,
) -> Result<Vec<HorizonResult>> {
    task.validate()?;
    check_table(emb, plays)?;
    let anchors = task_anchors(task.kind, plays, &setup.labels)?;
    let split = PlaySplit::new(plays.len(), setup.eval_fraction, seed)?;
    task.horizons
        .iter()
        .map(|&h| {
            let data = build_probe_dataset(emb, &anchors, task.kind.n_classes(), h)?;
            Ok(HorizonResult {
                horizon: h,
                score: fit_and_score(&data, &split, task.kind, &setup.fit)?,
                skipped: data.skipped,
            })
        })
        .collect()
}

fn check_table(emb: &EmbeddingTable, plays: &[PlaySequence]) -> Result<()> {
    if emb.per_play.len() != plays.len() {
        return Err(Error::Shape(format!(
            "{} embedded plays for {} plays",
            emb.per_play.len(),
            plays.len()
        )));
    }
    Ok(())
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt())
}

/// AP per seed at one horizon, with the mean over seeds.
pub fn mean_ap_over_seeds(
    emb: &EmbeddingTable,
    plays: &[PlaySequence],
    kind: TaskKind,
    horizon: f64,
    setup: &ProbeSetup,
    seeds: &[u64],
) -> Result<(f64, Vec<f64>)> {
    check_table(emb, plays)?;
    let anchors = task_anchors(kind, plays, &setup.labels)?;
    let data = build_probe_dataset(emb, &anchors, kind.n_classes(), horizon)?;
    let aps = seeds
        .iter()
        .map(|&s| {
            let split = PlaySplit::new(plays.len(), setup.eval_fraction, s)?;
            Ok(fit_and_score(&data, &split, kind, &setup.fit)?.ap)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((mean_std(&aps).0, aps))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencyRow {
    pub fraction: f64,
    /// AP per seed; `None` where the subsample missed a class.
    pub per_seed: Vec<Option<f64>>,
    pub mean: f64,
    pub std: f64,
}

/// Probe AP as the training plays shrink. Each seed fixes its eval split;
/// only the training side is subsampled.
pub fn data_efficiency_sweep(
    emb: &EmbeddingTable,
    plays: &[PlaySequence],
    kind: TaskKind,
    horizon: f64,
    fractions: &[f64],
    setup: &ProbeSetup,
    seeds: &[u64],
) -> Result<Vec<EfficiencyRow>> {
    check_table(emb, plays)?;
    let anchors = task_anchors(kind, plays, &setup.labels)?;
    let data = build_probe_dataset(emb, &anchors, kind.n_classes(), horizon)?;
    fractions
        .iter()
        .map(|&fraction| {
            let mut per_seed = Vec::with_capacity(seeds.len());
            for &s in seeds {
                let split = PlaySplit::new(plays.len(), setup.eval_fraction, s)?.subsample(fraction, s ^ 0xF4AC)?;
                match fit_and_score(&data, &split, kind, &setup.fit) {
                    Ok(score) => per_seed.push(Some(score.ap)),
                    Err(Error::Probe(msg)) => {
                        log::warn!("fraction {fraction}, seed {s}: {msg}; skipped");
                        per_seed.push(None);
                    }
                    Err(e) => return Err(e),
                }
            }
            let ok: Vec<f64> = per_seed.iter().flatten().copied().collect();
            let (mean, std) = mean_std(&ok);
            Ok(EfficiencyRow {
                fraction,
                per_seed,
                mean,
                std,
            })
        })
        .collect()
}
