use ndarray::{Array2, Array3, Array4};

use super::events::{EXCLUSIVE, N_EVENTS};
use super::geometry::{in_court, NormalTracker};
use super::topology::SkeletonTopology;
use crate::error::{Error, Result};

/// Skeleton frames per 5 Hz timestep (30 Hz capture).
pub const FRAMES_PER_STEP: usize = 6;
/// Centroid sampling rate.
pub const STEP_HZ: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Team {
    Offense,
    Defense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioKind {
    Pick,
    Assist,
    IsoShot,
    RandomMotion,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Pick,
        ScenarioKind::Assist,
        ScenarioKind::IsoShot,
        ScenarioKind::RandomMotion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Pick => "pick",
            ScenarioKind::Assist => "assist",
            ScenarioKind::IsoShot => "iso_shot",
            ScenarioKind::RandomMotion => "random_motion",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShotKind {
    Dunk,
    Hook,
    Jumpshot,
    Layup,
}

impl ShotKind {
    pub const ALL: [ShotKind; 4] = [ShotKind::Dunk, ShotKind::Hook, ShotKind::Jumpshot, ShotKind::Layup];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ShotKind::Dunk => "dunk",
            ShotKind::Hook => "hook",
            ShotKind::Jumpshot => "jumpshot",
            ShotKind::Layup => "layup",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PassRecord {
    pub passer: usize,
    pub receiver: usize,
    pub release: usize,
    pub reception: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DribbleRecord {
    pub player: usize,
    pub frame: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShotRecord {
    pub shooter: usize,
    pub frame: usize,
    pub made: bool,
    pub kind: ShotKind,
    pub location: [f32; 2],
}

/// Ball state used only by the labelers; never a model input.
#[derive(Debug, Clone, PartialEq)]
pub struct BallSidecar {
    /// (T, 2) court coordinates.
    pub position: Array2<f32>,
    /// Player in possession per timestep (`None` while the ball is in flight).
    pub handler: Vec<Option<usize>>,
    pub passes: Vec<PassRecord>,
    pub dribbles: Vec<DribbleRecord>,
    pub shots: Vec<ShotRecord>,
}

/// One continuous gameplay segment.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaySequence {
    pub seed: u64,
    pub scenario: ScenarioKind,
    pub rig: String,
    pub player_ids: Vec<String>,
    pub teams: Vec<Team>,
    /// (T, N, 2) centroid positions in feet at 5 Hz.
    pub positions: Array3<f32>,
    /// (6T, N, J, 3) joint coordinates in feet at 30 Hz, z up.
    pub joints30: Array4<f32>,
    /// (T, N, 9) binary event indicators.
    pub events: Array3<u8>,
    pub ball: Option<BallSidecar>,
}

impl PlaySequence {
    pub fn n_steps(&self) -> usize {
        self.positions.shape()[0]
    }

    pub fn n_players(&self) -> usize {
        self.positions.shape()[1]
    }

    pub fn n_joints(&self) -> usize {
        self.joints30.shape()[2]
    }

    pub fn position(&self, t: usize, i: usize) -> [f64; 2] {
        [
            self.positions[[t, i, 0]] as f64,
            self.positions[[t, i, 1]] as f64,
        ]
    }

    pub fn teammates(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let team = self.teams[i];
        (0..self.n_players()).filter(move |&j| j != i && self.teams[j] == team)
    }

    pub fn opponents(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let team = self.teams[i];
        (0..self.n_players()).filter(move |&j| self.teams[j] != team)
    }

    pub fn ball(&self) -> Result<&BallSidecar> {
        self.ball.as_ref().ok_or(Error::MissingSidecar)
    }

    /// Shoulder normals at each 5 Hz step from skeleton frame `6t`, (T, N, 2).
    /// Degenerate poses reuse the player's previous normal.
    pub fn shoulder_normals(&self, topology: &SkeletonTopology) -> Array3<f64> {
        let (t_n, n) = (self.n_steps(), self.n_players());
        let (l, r) = (topology.left_shoulder(), topology.right_shoulder());
        let mut out = Array3::zeros((t_n, n, 2));
        for i in 0..n {
            let mut tracker = NormalTracker::default();
            for t in 0..t_n {
                let f = FRAMES_PER_STEP * t;
                let ul = [self.joints30[[f, i, l, 0]] as f64, self.joints30[[f, i, l, 1]] as f64];
                let ur = [self.joints30[[f, i, r, 0]] as f64, self.joints30[[f, i, r, 1]] as f64];
                let nv = tracker.next(ul, ur);
                out[[t, i, 0]] = nv[0];
                out[[t, i, 1]] = nv[1];
            }
        }
        out
    }

    /// Event totals per vocabulary column.
    pub fn event_counts(&self) -> [u64; N_EVENTS] {
        let mut c = [0u64; N_EVENTS];
        for ((_, _, e), &v) in self.events.indexed_iter() {
            c[e] += v as u64;
        }
        c
    }

    /// Checks the structural invariants of a play against its rig.
    pub fn validate(&self, topology: &SkeletonTopology) -> Result<()> {
        let (t_n, n) = (self.n_steps(), self.n_players());
        let shape = |m: String| Err(Error::Shape(m));
        if self.positions.shape()[2] != 2 {
            return shape("positions must be (T, N, 2)".into());
        }
        let js = self.joints30.shape();
        if js != [FRAMES_PER_STEP * t_n, n, topology.n_joints(), 3] {
            return shape(format!(
                "joints30 is {js:?}, expected [{}, {n}, {}, 3]",
                FRAMES_PER_STEP * t_n,
                topology.n_joints()
            ));
        }
        if self.events.shape() != [t_n, n, N_EVENTS] {
            return shape(format!("events is {:?}", self.events.shape()));
        }
        if self.player_ids.len() != n || self.teams.len() != n {
            return shape("player ids / teams must have one entry per player".into());
        }
        for t in 0..t_n {
            for i in 0..n {
                if !in_court(self.position(t, i)) {
                    return Err(Error::Script(format!("player {i} off court at step {t}")));
                }
                let mut exclusive = 0;
                for e in 0..N_EVENTS {
                    let v = self.events[[t, i, e]];
                    if v > 1 {
                        return Err(Error::Script(format!("event value {v} at ({t}, {i}, {e})")));
                    }
                }
                for e in EXCLUSIVE {
                    exclusive += self.events[[t, i, e.index()]];
                }
                if exclusive > 1 {
                    return Err(Error::Script(format!(
                        "more than one of shot/pass/steal at ({t}, {i})"
                    )));
                }
            }
        }
        if let Some(b) = &self.ball {
            if b.position.shape() != [t_n, 2] || b.handler.len() != t_n {
                return shape("ball sidecar length differs from the play".into());
            }
        }
        Ok(())
    }

    /// Reorders players so new player `k` is old player `perm[k]`.
    pub fn permute_players(&self, perm: &[usize]) -> PlaySequence {
        let n = self.n_players();
        assert_eq!(perm.len(), n);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let positions = self.positions.select(ndarray::Axis(1), perm);
        let joints30 = self.joints30.select(ndarray::Axis(1), perm);
        let events = self.events.select(ndarray::Axis(1), perm);
        let ball = self.ball.as_ref().map(|b| BallSidecar {
            position: b.position.clone(),
            handler: b.handler.iter().map(|h| h.map(|h| inv[h])).collect(),
            passes: b
                .passes
                .iter()
                .map(|p| PassRecord {
                    passer: inv[p.passer],
                    receiver: inv[p.receiver],
                    ..*p
                })
                .collect(),
            dribbles: b
                .dribbles
                .iter()
                .map(|d| DribbleRecord {
                    player: inv[d.player],
                    ..*d
                })
                .collect(),
            shots: b
                .shots
                .iter()
                .map(|s| ShotRecord {
                    shooter: inv[s.shooter],
                    ..*s
                })
                .collect(),
        });
        PlaySequence {
            seed: self.seed,
            scenario: self.scenario,
            rig: self.rig.clone(),
            player_ids: perm.iter().map(|&o| self.player_ids[o].clone()).collect(),
            teams: perm.iter().map(|&o| self.teams[o]).collect(),
            positions,
            joints30,
            events,
            ball,
        }
    }
}
