//! The full pretraining model: pose encoder, feature assembly, transformer
//! stack and heads, with the ablation variants.

use std::fmt;
use std::sync::Arc;

use ndarray::{Array2, Array3, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{softmax_rows, Graph, ParamStore, Var};
use crate::encoder::{EncoderConfig, PoseEncoder};
use crate::error::{Error, Result};
use crate::nn::{BnUpdate, NormMode};
use crate::objectives::{derive_event_windows, displacement_bins, WindowConfig, EVENT_TERMS, N_REGIONS};
use crate::play::{PlaySequence, SkeletonTopology, N_EVENTS};
use crate::real::Real;
use crate::transformer::{build_attention_mask, FeatureParams, FeatureSource, Heads, RowIndex, TransformerConfig, TransformerStack};

/// Which input channels and objectives a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    NoGnn,
    NoShoulder,
    NoEvents,
    NoGnnNoEvents,
    NoShoulderNoEvents,
    PositionOnly,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Full,
        Variant::NoGnn,
        Variant::NoShoulder,
        Variant::NoEvents,
        Variant::NoGnnNoEvents,
        Variant::NoShoulderNoEvents,
        Variant::PositionOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoGnn => "no_gnn",
            Variant::NoShoulder => "no_shoulder",
            Variant::NoEvents => "no_events",
            Variant::NoGnnNoEvents => "no_gnn_no_events",
            Variant::NoShoulderNoEvents => "no_shoulder_no_events",
            Variant::PositionOnly => "position_only",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }

    /// Pose embeddings enter the state vector.
    pub fn uses_pose(self) -> bool {
        !matches!(self, Variant::NoGnn | Variant::NoGnnNoEvents | Variant::PositionOnly)
    }

    pub fn uses_normals(self) -> bool {
        !matches!(
            self,
            Variant::NoShoulder | Variant::NoShoulderNoEvents | Variant::PositionOnly
        )
    }

    /// Event heads contribute to the loss.
    pub fn uses_events(self) -> bool {
        !matches!(
            self,
            Variant::NoEvents | Variant::NoGnnNoEvents | Variant::NoShoulderNoEvents
        )
    }

    /// Loss weight on the trajectory term under this variant.
    pub fn alpha(self, alpha: f64) -> f64 {
        if self.uses_events() {
            alpha
        } else {
            1.0
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub rig: String,
    /// Player identities the identity embedding knows, in table order.
    pub identities: Vec<String>,
    pub encoder: EncoderConfig,
    pub transformer: TransformerConfig,
    pub variant: Variant,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.transformer.validate()?;
        if self.identities.is_empty() {
            return Err(Error::config("model.identities", "need at least one player identity"));
        }
        Ok(())
    }
}

/// Per-play tensors ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPlay {
    pub joints30: Array4<f32>,
    pub source: FeatureSource,
    /// True displacement bin per usable step and player, (T-1, N).
    pub traj_bins: Array2<usize>,
    /// Windowed event labels, (T-1, N, 27) with columns `region * 9 + event`.
    pub event_targets: Array3<u8>,
}

impl PreparedPlay {
    pub fn n_players(&self) -> usize {
        self.source.n_players()
    }

    pub fn t_eff(&self) -> usize {
        self.traj_bins.nrows()
    }

    fn targets_in_order(&self, order: &[usize]) -> (Arc<[u32]>, Array2<f64>) {
        let t_eff = self.t_eff();
        let bins = (0..t_eff)
            .flat_map(|t| order.iter().map(move |&p| (t, p)))
            .map(|(t, p)| self.traj_bins[[t, p]] as u32)
            .collect();
        let n = order.len();
        let ev = Array2::from_shape_fn((t_eff * n, EVENT_TERMS), |(r, c)| {
            self.event_targets[[r / n, order[r % n], c]] as f64
        });
        (bins, ev)
    }
}

/// Moves every skeleton so its root sits over the origin on the court plane,
/// frame by frame. Heights are kept. Court location already reaches the
/// transformer through the position features; left in, it swamps the pose.
pub fn root_centered(joints30: &Array4<f32>, root: usize) -> Array4<f32> {
    let mut out = joints30.clone();
    let (frames, n, nj, _) = joints30.dim();
    for f in 0..frames {
        for i in 0..n {
            let (x, y) = (joints30[[f, i, root, 0]], joints30[[f, i, root, 1]]);
            for j in 0..nj {
                out[[f, i, j, 0]] -= x;
                out[[f, i, j, 1]] -= y;
            }
        }
    }
    out
}

/// State-row outputs of one forward pass, rows `(t, slot)`.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    pub zhat: Var,
    pub index: RowIndex,
}

/// Loss nodes of one play.
#[derive(Debug, Clone, Copy)]
pub struct Losses {
    pub traj: Var,
    pub events: Var,
    pub total: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub cfg: ModelConfig,
    pub encoder: PoseEncoder,
    pub features: FeatureParams,
    pub stack: TransformerStack,
    pub heads: Heads,
}

impl Model {
    /// Registers every parameter in `store`. All variants share one
    /// parameter layout; dropped channels are simply not computed.
    pub fn new<T: Real, R: Rng>(cfg: ModelConfig, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let topology = SkeletonTopology::preset(&cfg.rig)?;
        let encoder = PoseEncoder::new(cfg.encoder.clone(), topology, store, rng)?;
        let features = FeatureParams::new(&cfg.transformer, cfg.identities.clone(), cfg.encoder.d_r, store, rng);
        let stack = TransformerStack::new(&cfg.transformer, store, rng)?;
        let heads = Heads::new(cfg.transformer.width, store, rng);
        Ok(Model {
            cfg,
            encoder,
            features,
            stack,
            heads,
        })
    }

    pub fn topology(&self) -> &SkeletonTopology {
        &self.encoder.topology
    }

    pub fn variant(&self) -> Variant {
        self.cfg.variant
    }

    pub fn prepare(&self, seq: &PlaySequence, windows: &WindowConfig) -> Result<PreparedPlay> {
        if seq.rig != self.cfg.rig {
            return Err(Error::Shape(format!(
                "play uses rig `{}`, model was built for `{}`",
                seq.rig, self.cfg.rig
            )));
        }
        if seq.n_steps() < 2 {
            return Err(Error::Shape(format!("plays need at least 2 steps, got {}", seq.n_steps())));
        }
        let ids = self.features.lookup_ids(&seq.player_ids)?;
        let normals = if self.variant().uses_normals() {
            seq.shoulder_normals(self.topology())
        } else {
            Array3::zeros((seq.n_steps(), seq.n_players(), 2))
        };
        let t_eff = seq.n_steps() - 1;
        let win = derive_event_windows(&seq.events, windows);
        let event_targets = Array3::from_shape_fn((t_eff, seq.n_players(), EVENT_TERMS), |(t, i, c)| {
            win[[t, i, c % N_EVENTS, c / N_EVENTS]]
        });
        debug_assert_eq!(EVENT_TERMS, N_EVENTS * N_REGIONS);
        Ok(PreparedPlay {
            joints30: root_centered(&seq.joints30, self.topology().root()),
            source: FeatureSource {
                positions: seq.positions.clone(),
                normals,
                ids,
            },
            traj_bins: displacement_bins(&seq.positions),
            event_targets,
        })
    }

    /// Teacher-forced forward pass; slot `k` holds player `order[k]`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        play: &PreparedPlay,
        order: &[usize],
        mode: NormMode,
        updates: &mut Vec<BnUpdate<T>>,
    ) -> Result<Forward> {
        let pose = if self.variant().uses_pose() {
            let (r, layout) = self.encoder.forward(g, &play.joints30, mode, updates)?;
            if layout.frames != play.source.n_steps() {
                return Err(Error::Shape(format!(
                    "skeleton frames give {} steps, positions have {}",
                    layout.frames,
                    play.source.n_steps()
                )));
            }
            Some(r)
        } else {
            None
        };
        let (z, index) = self.features.assemble(g, &play.source, pose, order)?;
        let mask = build_attention_mask(index.t_eff, index.n)?;
        let out = self.stack.forward(g, z, &mask.allowed)?;
        let zhat = g.gather_rows(out, index.state_rows().into());
        Ok(Forward { zhat, index })
    }

    /// `alpha * L_traj + (1 - alpha) * L_events` for one play; the variant
    /// may force `alpha = 1`.
    pub fn losses<T: Real>(
        &self,
        g: &mut Graph<T>,
        play: &PreparedPlay,
        order: &[usize],
        alpha: f64,
        mode: NormMode,
        updates: &mut Vec<BnUpdate<T>>,
    ) -> Result<Losses> {
        crate::objectives::check_alpha(alpha)?;
        let alpha = self.variant().alpha(alpha);
        let fwd = self.forward(g, play, order, mode, updates)?;
        let (bins, ev) = play.targets_in_order(order);
        let logits = self.heads.trajectory_logits(g, fwd.zhat);
        let traj = g.softmax_nll(logits, bins);
        let el = self.heads.event_logits(g, fwd.zhat);
        let events = g.bce_logits(el, Arc::new(ev.mapv(T::of)));
        let a = g.scale(traj, T::of(alpha));
        let b = g.scale(events, T::of(1.0 - alpha));
        let total = g.add(a, b);
        Ok(Losses { traj, events, total })
    }

    /// Inference-mode state-row embeddings, `(T-1, N, F)` in player order.
    pub fn embeddings<T: Real>(&self, store: &ParamStore<T>, play: &PreparedPlay) -> Result<Array3<T>> {
        let mut g = Graph::new(store);
        let order: Vec<usize> = (0..play.n_players()).collect();
        let fwd = self.forward(&mut g, play, &order, NormMode::Running, &mut Vec::new())?;
        let v = g.value(fwd.zhat);
        let (t_eff, n) = (fwd.index.t_eff, fwd.index.n);
        Ok(Array3::from_shape_fn((t_eff, n, v.ncols()), |(t, i, k)| v[[t * n + i, k]]))
    }

    /// Inference-mode bin probabilities, rows `(t, player)`.
    pub fn trajectory_probs<T: Real>(&self, store: &ParamStore<T>, play: &PreparedPlay) -> Result<Array2<T>> {
        let mut g = Graph::new(store);
        let order: Vec<usize> = (0..play.n_players()).collect();
        let fwd = self.forward(&mut g, play, &order, NormMode::Running, &mut Vec::new())?;
        let logits = self.heads.trajectory_logits(&mut g, fwd.zhat);
        Ok(softmax_rows(g.value(logits).view()))
    }

    /// Inference-mode event probabilities, rows `(t, player)`, region-major columns.
    pub fn event_probs<T: Real>(&self, store: &ParamStore<T>, play: &PreparedPlay) -> Result<Array2<T>> {
        let mut g = Graph::new(store);
        let order: Vec<usize> = (0..play.n_players()).collect();
        let fwd = self.forward(&mut g, play, &order, NormMode::Running, &mut Vec::new())?;
        let logits = self.heads.event_logits(&mut g, fwd.zhat);
        Ok(g.value(logits).mapv(crate::autograd::sigmoid))
    }
}

#[cfg(test)]
pub(crate) mod tests;
