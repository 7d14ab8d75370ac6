//! Downstream tasks: where each play is anchored and what gets labeled.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::play::geometry::{beyond_arc, ATTACK_BASKET};
use crate::play::labels::{find_assists, label_picks, AssistConfig, PickConfig};
use crate::play::{PlaySequence, ShotKind, STEP_HZ};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Which player takes the upcoming shot; one row per player.
    ShotTaker,
    /// Whether a pick happens; one pooled row per play.
    Pick,
    /// Whether the upcoming shot is assisted; one pooled row per shot.
    Assist,
    /// Two- or three-point attempt; the shooter's row.
    ShotLocation,
    /// Dunk, hook, jumpshot or layup; the shooter's row.
    ShotType,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::ShotTaker,
        TaskKind::Pick,
        TaskKind::Assist,
        TaskKind::ShotLocation,
        TaskKind::ShotType,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::ShotTaker => "shot_taker",
            TaskKind::Pick => "pick",
            TaskKind::Assist => "assist",
            TaskKind::ShotLocation => "shot_location",
            TaskKind::ShotType => "shot_type",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn n_classes(self) -> usize {
        match self {
            TaskKind::ShotType => ShotKind::ALL.len(),
            _ => 2,
        }
    }

    pub fn class_name(self, c: usize) -> String {
        match self {
            TaskKind::ShotType => ShotKind::ALL[c].name().to_string(),
            TaskKind::ShotLocation => ["two", "three"][c].to_string(),
            _ => ["negative", "positive"][c].to_string(),
        }
    }

    /// Seconds before the anchor, longest first.
    pub fn default_horizons(self) -> Vec<f64> {
        match self {
            TaskKind::ShotTaker | TaskKind::Assist => vec![2.8, 2.0, 1.6, 0.8],
            TaskKind::Pick => vec![1.4, 1.0, 0.6, 0.2, 0.0],
            TaskKind::ShotLocation | TaskKind::ShotType => vec![1.6, 1.2, 0.8, 0.4],
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeTask {
    pub kind: TaskKind,
    pub horizons: Vec<f64>,
}

/// Whole timesteps in `horizon` seconds; errors unless it is a multiple of
/// the step period.
pub fn horizon_steps(horizon: f64) -> Result<usize> {
    let steps = horizon * STEP_HZ;
    if !(horizon >= 0.0) || (steps - steps.round()).abs() > 1e-9 {
        return Err(Error::config(
            "probe.horizons",
            format!("{horizon} s is not a non-negative multiple of {} s", 1.0 / STEP_HZ),
        ));
    }
    Ok(steps.round() as usize)
}

impl ProbeTask {
    pub fn new(kind: TaskKind, horizons: Vec<f64>) -> Result<Self> {
        let t = ProbeTask { kind, horizons };
        t.validate()?;
        Ok(t)
    }

    pub fn with_defaults(kind: TaskKind) -> Self {
        ProbeTask {
            kind,
            horizons: kind.default_horizons(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() {
            return Err(Error::config("probe.horizons", "need at least one horizon"));
        }
        for &h in &self.horizons {
            horizon_steps(h)?;
        }
        if self.horizons.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::config("probe.horizons", "horizons must be strictly decreasing"));
        }
        Ok(())
    }
}

/// Which embedding rows an anchor contributes and their labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorRows {
    /// One row per player, positive for `positive`.
    EachPlayer { positive: usize },
    /// One row: the mean over players.
    Pooled { label: usize },
    /// One row: this player's embedding.
    Player { player: usize, label: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Anchor {
    pub play: usize,
    /// Step of the anchored moment.
    pub step: usize,
    pub rows: AnchorRows,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LabelConfig {
    pub pick: PickConfig,
    pub assist: AssistConfig,
}

/// SplitMix64 finalizer, for per-play choices that must not depend on order.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Anchors of `kind` over a dataset, in play order.
///
/// Shot tasks anchor on every shot. Pick plays anchor on their first
/// labeled step; plays without a pick borrow the step of a pick play chosen
/// from their own seed, so both classes share one distribution of anchor
/// times.
pub fn task_anchors(kind: TaskKind, plays: &[PlaySequence], labels: &LabelConfig) -> Result<Vec<Anchor>> {
    let mut out = Vec::new();
    if kind == TaskKind::Pick {
        let mut firsts = Vec::with_capacity(plays.len());
        for seq in plays {
            firsts.push(label_picks(seq, &labels.pick)?.iter().position(|&l| l == 1));
        }
        let pool: Vec<usize> = firsts.iter().flatten().copied().collect();
        if pool.is_empty() {
            return Err(Error::Probe("no play contains a pick".into()));
        }
        for (k, (seq, first)) in plays.iter().zip(firsts).enumerate() {
            let (step, label) = match first {
                Some(s) => (s, 1),
                None => (pool[(mix(seq.seed) % pool.len() as u64) as usize], 0),
            };
            out.push(Anchor {
                play: k,
                step,
                rows: AnchorRows::Pooled { label },
            });
        }
        return Ok(out);
    }
    for (k, seq) in plays.iter().enumerate() {
        let ball = seq.ball()?;
        let assists = if kind == TaskKind::Assist {
            find_assists(seq, &labels.assist)?
        } else {
            Vec::new()
        };
        for shot in &ball.shots {
            let rows = match kind {
                TaskKind::ShotTaker => AnchorRows::EachPlayer { positive: shot.shooter },
                TaskKind::Assist => AnchorRows::Pooled {
                    label: usize::from(
                        assists
                            .iter()
                            .any(|a| a.shot_frame == shot.frame && a.receiver == shot.shooter),
                    ),
                },
                TaskKind::ShotLocation => AnchorRows::Player {
                    player: shot.shooter,
                    label: usize::from(beyond_arc(
                        [shot.location[0] as f64, shot.location[1] as f64],
                        ATTACK_BASKET,
                    )),
                },
                TaskKind::ShotType => AnchorRows::Player {
                    player: shot.shooter,
                    label: shot.kind.index(),
                },
                TaskKind::Pick => unreachable!(),
            };
            out.push(Anchor {
                play: k,
                step: shot.frame,
                rows,
            });
        }
    }
    Ok(out)
}
