//! Seeded synthetic play generator.
//!
//! Centroids follow smooth random walks at 5 Hz; a kinematic rig places joints
//! at 30 Hz around each centroid. Scripted actions are rendered as pose
//! overlays on the rig only (the mid-hip ground projection never moves for
//! them), so intent shows up in the skeleton before it shows up in positions:
//!
//! * shooters gather (crouch, hands to chest) over the 16 steps before the
//!   shot and then raise the shooting arm(s) over the final 4 steps, with a
//!   release pose that depends on the shot kind;
//! * every player holds still during the final 4 steps before a shot, so the
//!   release happens with the shooter's centroid stationary;
//! * passers extend their arms around the release frame;
//! * screeners take a wide stance while they hold their spot.

use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::events::{EventKind, N_EVENTS};
use super::geometry::{clamp_to_court, ATTACK_BASKET};
use super::sequence::{
    BallSidecar, DribbleRecord, PassRecord, PlaySequence, ScenarioKind, ShotKind, ShotRecord,
    Team, FRAMES_PER_STEP,
};
use super::topology::SkeletonTopology;
use crate::error::{Error, Result};
use crate::par::Exec;

/// Steps over which a shooter gathers before the shot.
pub const GATHER_STEPS: f64 = 16.0;
/// Steps over which the shooting arm rises; also the pre-shot hold window.
pub const RELEASE_STEPS: usize = 4;
/// Steps between a pass release and its reception.
pub const PASS_FLIGHT: usize = 1;

const COURT_MARGIN: f64 = 0.5;
const MAX_STEP: f64 = 4.5;

#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    Pick {
        handler: usize,
        screener: usize,
        defender: usize,
        /// Last step before the handler crosses the screener–basket line.
        crossing: usize,
    },
    Assist {
        passer: usize,
        receiver: usize,
        pass_frame: usize,
        dribbles: usize,
        shot_frame: usize,
        made: bool,
        shot: ShotKind,
    },
    IsoShot {
        shooter: usize,
        shot_frame: usize,
        made: bool,
        shot: ShotKind,
    },
    RandomMotion {
        anchor: usize,
    },
}

/// What a generated play should contain.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayScript {
    pub scenario: Scenario,
    /// Standard deviation of per-frame joint jitter, feet.
    pub noise_scale: f64,
    /// Scripted frames must lie in `[margin, T - margin]`.
    pub margin: usize,
}

pub fn offense_count(n_players: usize) -> usize {
    n_players.div_ceil(2)
}

pub fn teams_for(n_players: usize) -> Vec<Team> {
    let n_off = offense_count(n_players);
    (0..n_players)
        .map(|i| if i < n_off { Team::Offense } else { Team::Defense })
        .collect()
}

pub fn player_ids_for(n_players: usize) -> Vec<String> {
    let n_off = offense_count(n_players);
    (0..n_players)
        .map(|i| {
            if i < n_off {
                format!("O{}", i + 1)
            } else {
                format!("D{}", i - n_off + 1)
            }
        })
        .collect()
}

impl PlayScript {
    pub fn kind(&self) -> ScenarioKind {
        match self.scenario {
            Scenario::Pick { .. } => ScenarioKind::Pick,
            Scenario::Assist { .. } => ScenarioKind::Assist,
            Scenario::IsoShot { .. } => ScenarioKind::IsoShot,
            Scenario::RandomMotion { .. } => ScenarioKind::RandomMotion,
        }
    }

    /// Scripted frame indices.
    pub fn event_frames(&self) -> Vec<usize> {
        match self.scenario {
            Scenario::Pick { crossing, .. } => vec![crossing],
            Scenario::Assist {
                pass_frame,
                shot_frame,
                ..
            } => vec![pass_frame, shot_frame],
            Scenario::IsoShot { shot_frame, .. } => vec![shot_frame],
            Scenario::RandomMotion { anchor } => vec![anchor],
        }
    }

    /// Frame the downstream tasks anchor on (pick moment, shot, or the
    /// nominal frame of a random play).
    pub fn anchor_frame(&self) -> usize {
        match self.scenario {
            Scenario::Pick { crossing, .. } => crossing,
            Scenario::Assist { shot_frame, .. } | Scenario::IsoShot { shot_frame, .. } => shot_frame,
            Scenario::RandomMotion { anchor } => anchor,
        }
    }

    pub fn validate(&self, n_players: usize, n_steps: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Script(m));
        if !(self.noise_scale >= 0.0) {
            return bad(format!("noise scale {} must be >= 0", self.noise_scale));
        }
        if n_steps < 2 * self.margin + 2 {
            return bad(format!(
                "{n_steps} steps cannot hold margin {} on both sides",
                self.margin
            ));
        }
        let lo = self.margin;
        let hi = n_steps - self.margin;
        for f in self.event_frames() {
            if f < lo || f > hi {
                return bad(format!("event frame {f} outside [{lo}, {hi}]"));
            }
        }
        let teams = teams_for(n_players);
        let offense = |i: usize, role: &str| {
            if i >= n_players || teams[i] != Team::Offense {
                Err(Error::Script(format!("{role} {i} must be an offensive player")))
            } else {
                Ok(())
            }
        };
        match self.scenario {
            Scenario::Pick {
                handler,
                screener,
                defender,
                crossing,
            } => {
                offense(handler, "handler")?;
                offense(screener, "screener")?;
                if handler == screener {
                    return bad("handler and screener must differ".into());
                }
                if defender >= n_players || teams[defender] != Team::Defense {
                    return bad(format!("defender {defender} must be a defensive player"));
                }
                if crossing + 1 >= n_steps {
                    return bad("crossing needs a following step".into());
                }
            }
            Scenario::Assist {
                passer,
                receiver,
                pass_frame,
                dribbles,
                shot_frame,
                ..
            } => {
                offense(passer, "passer")?;
                offense(receiver, "receiver")?;
                if passer == receiver {
                    return bad("passer and receiver must differ".into());
                }
                let reception = pass_frame + PASS_FLIGHT;
                if shot_frame < reception + 2 * dribbles + 1 {
                    return bad(format!(
                        "shot at {shot_frame} leaves no room for {dribbles} dribbles after reception at {reception}"
                    ));
                }
            }
            Scenario::IsoShot { shooter, .. } => offense(shooter, "shooter")?,
            Scenario::RandomMotion { .. } => {
                if n_players < 1 {
                    return bad("no players".into());
                }
            }
        }
        Ok(())
    }

    /// Draws a script of the given kind with randomized actors and timing.
    pub fn sample<R: Rng>(
        kind: ScenarioKind,
        n_players: usize,
        n_steps: usize,
        margin: usize,
        noise_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let n_off = offense_count(n_players);
        let n_def = n_players - n_off;
        if n_steps < 2 * margin + 2 {
            return Err(Error::Script(format!(
                "{n_steps} steps cannot hold margin {margin} on both sides"
            )));
        }
        // shots leave room for the longest probe horizon (14 steps) when possible
        let lo = margin.max(15.min(n_steps - margin));
        let hi = n_steps - margin;
        let frame = |rng: &mut R, lo: usize, hi: usize| rng.random_range(lo..=hi.max(lo));
        let shot_kind = |rng: &mut R| ShotKind::ALL[rng.random_range(0..4)];
        let two_offense = || {
            if n_off < 2 {
                Err(Error::Script(format!(
                    "{} needs two offensive players, {n_players} players give {n_off}",
                    kind.name()
                )))
            } else {
                Ok(())
            }
        };
        let scenario = match kind {
            ScenarioKind::Pick => {
                two_offense()?;
                if n_def < 1 {
                    return Err(Error::Script("pick needs a defender".into()));
                }
                let handler = rng.random_range(0..n_off);
                let screener = (handler + 1 + rng.random_range(0..n_off - 1)) % n_off;
                Scenario::Pick {
                    handler,
                    screener,
                    defender: n_off + rng.random_range(0..n_def),
                    crossing: frame(rng, lo.max(margin + 8), hi.min(n_steps - 2)),
                }
            }
            ScenarioKind::Assist => {
                two_offense()?;
                let passer = rng.random_range(0..n_off);
                let receiver = (passer + 1 + rng.random_range(0..n_off - 1)) % n_off;
                let dribbles = rng.random_range(0..=3usize);
                let shot_frame = frame(rng, lo, hi);
                // mostly inside the 3 s reception window, sometimes beyond it
                let gap_max = if rng.random_bool(0.75) { 15 } else { 22 };
                let gap_min = 2 * dribbles + 1 + PASS_FLIGHT;
                let gap = rng.random_range(gap_min..=gap_max.max(gap_min));
                let pass_frame = shot_frame.saturating_sub(gap).max(margin);
                let shot_frame = shot_frame.max(pass_frame + gap_min);
                Scenario::Assist {
                    passer,
                    receiver,
                    pass_frame,
                    dribbles,
                    shot_frame,
                    made: rng.random_bool(0.6),
                    shot: shot_kind(rng),
                }
            }
            ScenarioKind::IsoShot => Scenario::IsoShot {
                shooter: rng.random_range(0..n_off),
                shot_frame: frame(rng, lo, hi),
                made: rng.random_bool(0.5),
                shot: shot_kind(rng),
            },
            ScenarioKind::RandomMotion => Scenario::RandomMotion {
                anchor: frame(rng, lo, hi),
            },
        };
        let script = PlayScript {
            scenario,
            noise_scale,
            margin,
        };
        script.validate(n_players, n_steps)?;
        Ok(script)
    }
}

/// Dataset-level generation settings.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_plays: usize,
    pub n_players: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Relative weights of pick, assist, iso_shot, random_motion plays.
    pub mix: [f64; 4],
    pub noise_scale: f64,
    pub margin: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_plays: 200,
            n_players: 4,
            n_steps: 50,
            seed: 7,
            mix: [0.2, 0.25, 0.35, 0.2],
            noise_scale: 0.05,
            margin: 10,
        }
    }
}

/// Seed of play `k` in a dataset with base seed `seed` (SplitMix64 mixing).
pub fn play_seed(seed: u64, k: usize) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(k as u64 + 1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates `spec.n_plays` plays; play `k` depends only on `(spec, k)`.
pub fn generate_dataset(
    spec: &DatasetSpec,
    topology: &SkeletonTopology,
    exec: Exec,
) -> Result<Vec<PlaySequence>> {
    let total: f64 = spec.mix.iter().sum();
    if !(total > 0.0) || spec.mix.iter().any(|w| *w < 0.0) {
        return Err(Error::config("generator.mix", "weights must be >= 0 with a positive sum"));
    }
    exec.map_range(spec.n_plays, |k| {
        let seed = play_seed(spec.seed, k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = rng.random::<f64>() * total;
        let mut kind = ScenarioKind::RandomMotion;
        for (w, kd) in spec.mix.iter().zip(ScenarioKind::ALL) {
            if u < *w {
                kind = kd;
                break;
            }
            u -= w;
        }
        let script = PlayScript::sample(
            kind,
            spec.n_players,
            spec.n_steps,
            spec.margin,
            spec.noise_scale,
            &mut rng,
        )?;
        generate_play(&script, topology, spec.n_players, spec.n_steps, seed)
    })
    .into_iter()
    .collect()
}

/// Body-frame rest offsets (forward, right, up) in feet.
fn rest_offset(joint: &str) -> [f64; 3] {
    match joint {
        "mid_hip" => [0.0, 0.0, 3.2],
        "spine" => [0.0, 0.0, 4.2],
        "neck" => [0.0, 0.0, 5.3],
        "head" => [0.05, 0.0, 6.0],
        "l_shoulder" => [0.0, -0.7, 5.0],
        "l_elbow" => [0.0, -0.85, 4.0],
        "l_wrist" => [0.1, -0.85, 3.1],
        "r_shoulder" => [0.0, 0.7, 5.0],
        "r_elbow" => [0.0, 0.85, 4.0],
        "r_wrist" => [0.1, 0.85, 3.1],
        "l_hip" => [0.0, -0.45, 3.1],
        "l_knee" => [0.05, -0.45, 1.7],
        "l_ankle" => [0.0, -0.45, 0.3],
        "r_hip" => [0.0, 0.45, 3.1],
        "r_knee" => [0.05, 0.45, 1.7],
        "r_ankle" => [0.0, 0.45, 0.3],
        "l_foot_tip" => [0.6, -0.45, 0.1],
        "r_foot_tip" => [0.6, 0.45, 0.1],
        _ => [0.0, 0.0, 3.2],
    }
}

/// Named joint slots used by the overlays; rigs without a joint skip it.
struct RigSlots {
    root: usize,
    upper: Vec<usize>,
    l_elbow: Option<usize>,
    r_elbow: Option<usize>,
    l_wrist: Option<usize>,
    r_wrist: Option<usize>,
    l_knee: Option<usize>,
    r_knee: Option<usize>,
    l_ankle: Option<usize>,
    r_ankle: Option<usize>,
    l_foot: Option<usize>,
    r_foot: Option<usize>,
}

impl RigSlots {
    fn new(t: &SkeletonTopology) -> Self {
        let j = |n: &str| t.joint_index(n);
        let upper = [
            "spine", "neck", "head", "l_shoulder", "r_shoulder", "l_elbow", "r_elbow", "l_wrist",
            "r_wrist",
        ]
        .iter()
        .filter_map(|n| j(n))
        .collect();
        RigSlots {
            root: t.root(),
            upper,
            l_elbow: j("l_elbow"),
            r_elbow: j("r_elbow"),
            l_wrist: j("l_wrist"),
            r_wrist: j("r_wrist"),
            l_knee: j("l_knee"),
            r_knee: j("r_knee"),
            l_ankle: j("l_ankle"),
            r_ankle: j("r_ankle"),
            l_foot: j("l_foot_tip"),
            r_foot: j("r_foot_tip"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Overlay {
    Shot { player: usize, frame: usize, kind: ShotKind },
    Pass { player: usize, frame: usize },
    Screen { player: usize, from: usize, to: usize },
}

fn add(pose: &mut [[f64; 3]], j: Option<usize>, d: [f64; 3]) {
    if let Some(j) = j {
        for a in 0..3 {
            pose[j][a] += d[a];
        }
    }
}

fn ramp_up(tau: f64, end: f64, len: f64) -> f64 {
    // 0 at end - len, 1 at end, decays to 0 over two steps afterwards
    if tau <= end {
        ((tau - (end - len)) / len).clamp(0.0, 1.0)
    } else {
        (1.0 - (tau - end) / 2.0).clamp(0.0, 1.0)
    }
}

impl Overlay {
    fn apply(&self, slots: &RigSlots, player: usize, tau: f64, pose: &mut [[f64; 3]]) {
        match *self {
            Overlay::Shot { player: p, frame, kind } if p == player => {
                let s = frame as f64;
                let g = ramp_up(tau, s, GATHER_STEPS);
                let r = ramp_up(tau, s, RELEASE_STEPS as f64);
                if g > 0.0 {
                    pose[slots.root][2] -= 0.5 * g;
                    for &u in &slots.upper {
                        pose[u][2] -= 0.5 * g;
                    }
                    add(pose, slots.l_knee, [0.5 * g, 0.0, -0.2 * g]);
                    add(pose, slots.r_knee, [0.5 * g, 0.0, -0.2 * g]);
                    add(pose, slots.l_elbow, [0.5 * g, 0.2 * g, 0.3 * g]);
                    add(pose, slots.r_elbow, [0.5 * g, -0.2 * g, 0.3 * g]);
                    add(pose, slots.l_wrist, [0.7 * g, 0.45 * g, 1.0 * g]);
                    add(pose, slots.r_wrist, [0.7 * g, -0.45 * g, 1.0 * g]);
                }
                if r > 0.0 {
                    let jump = match kind {
                        ShotKind::Dunk => 1.5,
                        ShotKind::Layup => 1.0,
                        ShotKind::Jumpshot => 0.8,
                        ShotKind::Hook => 0.3,
                    } * r;
                    for row in pose.iter_mut() {
                        row[2] += jump;
                    }
                    match kind {
                        ShotKind::Jumpshot => {
                            add(pose, slots.l_wrist, [-0.3 * r, 0.0, 4.0 * r]);
                            add(pose, slots.r_wrist, [-0.3 * r, 0.0, 4.0 * r]);
                            add(pose, slots.l_elbow, [0.0, 0.0, 2.0 * r]);
                            add(pose, slots.r_elbow, [0.0, 0.0, 2.0 * r]);
                        }
                        ShotKind::Dunk => {
                            add(pose, slots.l_wrist, [0.2 * r, 0.0, 5.0 * r]);
                            add(pose, slots.r_wrist, [0.2 * r, 0.0, 5.0 * r]);
                            add(pose, slots.l_elbow, [0.1 * r, 0.0, 2.5 * r]);
                            add(pose, slots.r_elbow, [0.1 * r, 0.0, 2.5 * r]);
                        }
                        ShotKind::Layup => {
                            add(pose, slots.r_wrist, [0.3 * r, 0.0, 4.5 * r]);
                            add(pose, slots.r_elbow, [0.2 * r, 0.0, 2.2 * r]);
                            add(pose, slots.l_knee, [0.6 * r, 0.0, 1.2 * r]);
                            add(pose, slots.l_ankle, [0.3 * r, 0.0, 0.9 * r]);
                            add(pose, slots.l_foot, [0.3 * r, 0.0, 0.9 * r]);
                        }
                        ShotKind::Hook => {
                            add(pose, slots.r_wrist, [-0.2 * r, 1.2 * r, 3.8 * r]);
                            add(pose, slots.r_elbow, [-0.1 * r, 0.8 * r, 1.8 * r]);
                            add(pose, slots.l_wrist, [0.0, -0.6 * r, 0.5 * r]);
                        }
                    }
                }
            }
            Overlay::Pass { player: p, frame } if p == player => {
                let q = (1.0 - (tau - frame as f64).abs() / 1.5).clamp(0.0, 1.0);
                if q > 0.0 {
                    add(pose, slots.l_wrist, [1.3 * q, 0.3 * q, 1.0 * q]);
                    add(pose, slots.r_wrist, [1.3 * q, -0.3 * q, 1.0 * q]);
                    add(pose, slots.l_elbow, [0.7 * q, 0.1 * q, 0.5 * q]);
                    add(pose, slots.r_elbow, [0.7 * q, -0.1 * q, 0.5 * q]);
                }
            }
            Overlay::Screen { player: p, from, to } if p == player => {
                let w = if tau < from as f64 {
                    (1.0 - (from as f64 - tau)).clamp(0.0, 1.0)
                } else if tau > to as f64 {
                    (1.0 - (tau - to as f64)).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                if w > 0.0 {
                    pose[slots.root][2] -= 0.3 * w;
                    add(pose, slots.l_ankle, [0.0, -0.5 * w, 0.0]);
                    add(pose, slots.r_ankle, [0.0, 0.5 * w, 0.0]);
                    add(pose, slots.l_foot, [0.0, -0.5 * w, 0.0]);
                    add(pose, slots.r_foot, [0.0, 0.5 * w, 0.0]);
                    add(pose, slots.l_knee, [0.0, -0.3 * w, -0.2 * w]);
                    add(pose, slots.r_knee, [0.0, 0.3 * w, -0.2 * w]);
                    add(pose, slots.l_wrist, [0.4 * w, 0.75 * w, 1.1 * w]);
                    add(pose, slots.r_wrist, [0.4 * w, -0.75 * w, 1.1 * w]);
                }
            }
            _ => {}
        }
    }
}

struct Motion {
    /// [t][i] centroid.
    pos: Vec<Vec<[f64; 2]>>,
    /// [t][i] facing angle (radians, unwrapped).
    heading: Vec<Vec<f64>>,
}

fn random_motion<R: Rng>(
    n_players: usize,
    n_steps: usize,
    teams: &[Team],
    holds: &[(usize, usize)],
    rng: &mut R,
) -> Motion {
    let n_off = offense_count(n_players);
    let basket = ATTACK_BASKET;
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut pos = vec![vec![[0.0; 2]; n_players]; n_steps];
    let mut heading = vec![vec![0.0; n_players]; n_steps];
    let mut vel = vec![[0.0f64; 2]; n_players];
    let mut pause = vec![0usize; n_players];
    for i in 0..n_players {
        pos[0][i] = [rng.random_range(55.0..88.0), rng.random_range(5.0..45.0)];
        heading[0][i] = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    }
    // defenders start between their matchup and the basket
    for i in n_off..n_players {
        let m = (i - n_off) % n_off.max(1);
        let o = pos[0][m];
        let to_b = [basket[0] - o[0], basket[1] - o[1]];
        let d = to_b[0].hypot(to_b[1]).max(1e-9);
        pos[0][i] = clamp_to_court([o[0] + 3.5 * to_b[0] / d, o[1] + 3.5 * to_b[1] / d], COURT_MARGIN);
    }
    let held = |t: usize| holds.iter().any(|&(a, b)| t > a && t <= b);
    for t in 1..n_steps {
        for i in 0..n_players {
            let prev = pos[t - 1][i];
            let mut step = if teams[i] == Team::Defense && n_off > 0 {
                let m = (i - n_off) % n_off;
                let o = pos[t - 1][m];
                let to_b = [basket[0] - o[0], basket[1] - o[1]];
                let d = to_b[0].hypot(to_b[1]).max(1e-9);
                let target = [o[0] + 3.5 * to_b[0] / d, o[1] + 3.5 * to_b[1] / d];
                [
                    0.45 * (target[0] - prev[0]) + 0.5 * unit.sample(rng),
                    0.45 * (target[1] - prev[1]) + 0.5 * unit.sample(rng),
                ]
            } else {
                if pause[i] == 0 && rng.random_bool(0.06) {
                    pause[i] = rng.random_range(3..7);
                }
                vel[i] = [
                    0.75 * vel[i][0] + 0.9 * unit.sample(rng),
                    0.75 * vel[i][1] + 0.9 * unit.sample(rng),
                ];
                // offense drifts back toward the attacking half
                if prev[0] < 52.0 {
                    vel[i][0] += 0.8;
                }
                if pause[i] > 0 {
                    pause[i] -= 1;
                    [0.0, 0.0]
                } else {
                    vel[i]
                }
            };
            let speed = step[0].hypot(step[1]);
            if speed > MAX_STEP {
                step = [step[0] * MAX_STEP / speed, step[1] * MAX_STEP / speed];
            }
            if held(t) {
                step = [0.0, 0.0];
            }
            let next = clamp_to_court([prev[0] + step[0], prev[1] + step[1]], COURT_MARGIN);
            pos[t][i] = next;
            let mut th = heading[t - 1][i] + 0.2 * unit.sample(rng);
            let moved = [next[0] - prev[0], next[1] - prev[1]];
            if moved[0].hypot(moved[1]) > 1.0 {
                let target = moved[1].atan2(moved[0]);
                let mut diff = target - th;
                diff = (diff + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI)
                    - std::f64::consts::PI;
                th += 0.3 * diff;
            }
            heading[t][i] = th;
        }
    }
    Motion { pos, heading }
}

/// Ball and event bookkeeping built alongside the motion.
struct Timeline {
    handler: Vec<Option<usize>>,
    passes: Vec<PassRecord>,
    dribbles: Vec<DribbleRecord>,
    shots: Vec<ShotRecord>,
    events: Array3<u8>,
}

impl Timeline {
    fn new(n_steps: usize, n_players: usize) -> Self {
        Timeline {
            handler: vec![None; n_steps],
            passes: Vec::new(),
            dribbles: Vec::new(),
            shots: Vec::new(),
            events: Array3::zeros((n_steps, n_players, N_EVENTS)),
        }
    }

    fn mark(&mut self, t: usize, i: usize, e: EventKind) {
        if t < self.events.shape()[0] {
            self.events[[t, i, e.index()]] = 1;
        }
    }

    fn hold(&mut self, from: usize, to: usize, i: usize) {
        for t in from..to.min(self.handler.len()) {
            self.handler[t] = Some(i);
        }
    }

    /// Dribbles every other step in `[from, to)` for `i`.
    fn dribble(&mut self, from: usize, to: usize, i: usize) {
        let mut t = from;
        while t < to.min(self.handler.len()) {
            self.dribbles.push(DribbleRecord { player: i, frame: t });
            self.mark(t, i, EventKind::Dribble);
            t += 2;
        }
    }

    fn pass(&mut self, passer: usize, receiver: usize, release: usize) {
        let reception = release + PASS_FLIGHT;
        self.passes.push(PassRecord {
            passer,
            receiver,
            release,
            reception,
        });
        self.mark(release, passer, EventKind::Pass);
    }

    /// Shot at `frame`, then possession after the ball comes down.
    #[allow(clippy::too_many_arguments)]
    fn shot<R: Rng>(
        &mut self,
        shooter: usize,
        frame: usize,
        made: bool,
        kind: ShotKind,
        location: [f64; 2],
        teams: &[Team],
        motion: &Motion,
        rng: &mut R,
    ) {
        let n_steps = self.handler.len();
        self.shots.push(ShotRecord {
            shooter,
            frame,
            made,
            kind,
            location: [location[0] as f32, location[1] as f32],
        });
        self.mark(frame, shooter, EventKind::ShotAttempt);
        let defenders: Vec<usize> = (0..teams.len()).filter(|&j| teams[j] == Team::Defense).collect();
        for t in frame + 1..(frame + 3).min(n_steps) {
            self.handler[t] = None;
        }
        let down = frame + 3;
        if down >= n_steps {
            return;
        }
        let next = if made {
            defenders.first().copied().unwrap_or(shooter)
        } else {
            if !defenders.is_empty() && rng.random_bool(0.25) {
                // nearest defender gets a hand on it
                let p = motion.pos[frame][shooter];
                let d = *defenders
                    .iter()
                    .min_by(|&&a, &&b| {
                        let da = super::geometry::dist(motion.pos[frame][a], p);
                        let db = super::geometry::dist(motion.pos[frame][b], p);
                        da.total_cmp(&db)
                    })
                    .expect("non-empty");
                self.mark(frame, d, EventKind::Block);
            }
            let r = if !defenders.is_empty() && rng.random_bool(0.6) {
                defenders[rng.random_range(0..defenders.len())]
            } else {
                rng.random_range(0..teams.len())
            };
            self.mark(down, r, EventKind::Rebound);
            r
        };
        self.hold(down, n_steps, next);
    }

    fn finish(&mut self) {
        let (t_n, n, _) = self.events.dim();
        for t in 0..t_n {
            for i in 0..n {
                let any = (1..N_EVENTS).any(|e| self.events[[t, i, e]] == 1);
                self.events[[t, i, EventKind::NoAction.index()]] = u8::from(!any);
            }
        }
    }
}

/// Generates one play; deterministic in `(script, topology, n_players, n_steps, seed)`.
pub fn generate_play(
    script: &PlayScript,
    topology: &SkeletonTopology,
    n_players: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PlaySequence> {
    script.validate(n_players, n_steps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0FC0_u64);
    let teams = teams_for(n_players);
    let n_off = offense_count(n_players);

    let holds: Vec<(usize, usize)> = match script.scenario {
        Scenario::Assist { shot_frame, .. } | Scenario::IsoShot { shot_frame, .. } => {
            vec![(shot_frame.saturating_sub(RELEASE_STEPS), shot_frame)]
        }
        _ => vec![],
    };
    let mut motion = random_motion(n_players, n_steps, &teams, &holds, &mut rng);
    let mut overlays = Vec::new();
    let mut tl = Timeline::new(n_steps, n_players);
    let basket = ATTACK_BASKET;

    match script.scenario {
        Scenario::Pick {
            handler,
            screener,
            defender,
            crossing,
        } => {
            let phi = std::f64::consts::PI + rng.random_range(-0.5..0.5);
            let er = [phi.cos(), phi.sin()];
            let ep = [-phi.sin(), phi.cos()];
            let dir = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let screen = [basket[0] + 25.0 * er[0], basket[1] + 25.0 * er[1]];
            let set_from = crossing.saturating_sub(8);
            let set_to = crossing + 3;
            let approach = rng.random_range(0.0..std::f64::consts::TAU);
            let ua = [approach.cos(), approach.sin()];
            for t in 0..n_steps {
                let w = dir * (1.5 * (t as f64 - crossing as f64 - 0.5)).clamp(-12.0, 12.0);
                let h = [
                    basket[0] + 28.0 * er[0] + w * ep[0],
                    basket[1] + 28.0 * er[1] + w * ep[1],
                ];
                let away = if t < set_from {
                    (set_from - t) as f64
                } else if t > set_to {
                    (t - set_to) as f64
                } else {
                    0.0
                };
                let s = [screen[0] + 1.2 * away * ua[0], screen[1] + 1.2 * away * ua[1]];
                let mid = [0.5 * (h[0] + s[0]), 0.5 * (h[1] + s[1])];
                let d = [mid[0] - 1.5 * er[0], mid[1] - 1.5 * er[1]];
                motion.pos[t][handler] = clamp_to_court(h, COURT_MARGIN);
                motion.pos[t][screener] = clamp_to_court(s, COURT_MARGIN);
                motion.pos[t][defender] = clamp_to_court(d, COURT_MARGIN);
            }
            overlays.push(Overlay::Screen {
                player: screener,
                from: set_from,
                to: set_to,
            });
            tl.hold(0, n_steps, handler);
            tl.dribble(0, n_steps, handler);
        }
        Scenario::Assist {
            passer,
            receiver,
            pass_frame,
            dribbles,
            shot_frame,
            made,
            shot,
        } => {
            let reception = pass_frame + PASS_FLIGHT;
            tl.hold(0, reception, passer);
            tl.dribble(pass_frame % 2, pass_frame.saturating_sub(1), passer);
            tl.pass(passer, receiver, pass_frame);
            for t in pass_frame + 1..reception {
                tl.handler[t] = None;
            }
            tl.hold(reception, shot_frame + 1, receiver);
            for k in 0..dribbles {
                let f = reception + 1 + 2 * k;
                tl.dribbles.push(DribbleRecord {
                    player: receiver,
                    frame: f,
                });
                tl.mark(f, receiver, EventKind::Dribble);
            }
            overlays.push(Overlay::Pass {
                player: passer,
                frame: pass_frame,
            });
            overlays.push(Overlay::Shot {
                player: receiver,
                frame: shot_frame,
                kind: shot,
            });
            let loc = motion.pos[shot_frame][receiver];
            tl.shot(receiver, shot_frame, made, shot, loc, &teams, &motion, &mut rng);
        }
        Scenario::IsoShot {
            shooter,
            shot_frame,
            made,
            shot,
        } => {
            tl.hold(0, shot_frame + 1, shooter);
            tl.dribble(shot_frame % 2, shot_frame.saturating_sub(RELEASE_STEPS), shooter);
            overlays.push(Overlay::Shot {
                player: shooter,
                frame: shot_frame,
                kind: shot,
            });
            let loc = motion.pos[shot_frame][shooter];
            tl.shot(shooter, shot_frame, made, shot, loc, &teams, &motion, &mut rng);
        }
        Scenario::RandomMotion { anchor } => {
            let handler = rng.random_range(0..n_off);
            let roll: f64 = rng.random();
            if roll < 0.4 && n_off >= 2 {
                let receiver = (handler + 1 + rng.random_range(0..n_off - 1)) % n_off;
                tl.hold(0, anchor + 1, handler);
                tl.dribble(anchor % 2, anchor.saturating_sub(1), handler);
                tl.pass(handler, receiver, anchor);
                overlays.push(Overlay::Pass {
                    player: handler,
                    frame: anchor,
                });
                let reception = anchor + PASS_FLIGHT;
                if n_players > n_off && rng.random_bool(0.3) {
                    let d = n_off + rng.random_range(0..n_players - n_off);
                    tl.mark(reception, d, EventKind::Deflection);
                }
                tl.hold(reception, n_steps, receiver);
                tl.dribble(reception + 1, n_steps, receiver);
            } else if roll < 0.6 && n_players > n_off {
                let thief = n_off + rng.random_range(0..n_players - n_off);
                tl.hold(0, anchor, handler);
                tl.dribble(0, anchor.saturating_sub(1), handler);
                tl.mark(anchor, thief, EventKind::Steal);
                tl.hold(anchor, n_steps, thief);
                tl.dribble(anchor + 2, n_steps, thief);
            } else if roll < 0.7 {
                tl.hold(0, n_steps, handler);
                tl.dribble(0, anchor.saturating_sub(1), handler);
                tl.mark(anchor, handler, EventKind::FreeThrow);
            } else {
                tl.hold(0, n_steps, handler);
                tl.dribble(0, n_steps, handler);
            }
        }
    }
    tl.finish();

    let joints30 = render_joints(&motion, &overlays, topology, script.noise_scale, &mut rng);

    let mut positions = Array3::<f32>::zeros((n_steps, n_players, 2));
    for t in 0..n_steps {
        for i in 0..n_players {
            positions[[t, i, 0]] = motion.pos[t][i][0] as f32;
            positions[[t, i, 1]] = motion.pos[t][i][1] as f32;
        }
    }
    let ball_pos = ball_track(&tl, &motion, n_steps);
    let play = PlaySequence {
        seed,
        scenario: script.kind(),
        rig: topology.name().to_string(),
        player_ids: player_ids_for(n_players),
        teams,
        positions,
        joints30,
        events: tl.events,
        ball: Some(BallSidecar {
            position: ball_pos,
            handler: tl.handler,
            passes: tl.passes,
            dribbles: tl.dribbles,
            shots: tl.shots,
        }),
    };
    play.validate(topology)?;
    Ok(play)
}

fn ball_track(tl: &Timeline, motion: &Motion, n_steps: usize) -> Array2<f32> {
    let mut out = Array2::<f32>::zeros((n_steps, 2));
    let mut last = ATTACK_BASKET;
    for t in 0..n_steps {
        let p = match tl.handler[t] {
            Some(h) => motion.pos[t][h],
            None => {
                // in flight: halfway between the last holder and the basket
                [0.5 * (last[0] + ATTACK_BASKET[0]), 0.5 * (last[1] + ATTACK_BASKET[1])]
            }
        };
        if tl.handler[t].is_some() {
            last = p;
        }
        let p = clamp_to_court(p, 0.0);
        out[[t, 0]] = p[0] as f32;
        out[[t, 1]] = p[1] as f32;
    }
    out
}

fn render_joints<R: Rng>(
    motion: &Motion,
    overlays: &[Overlay],
    topology: &SkeletonTopology,
    noise_scale: f64,
    rng: &mut R,
) -> Array4<f32> {
    let n_steps = motion.pos.len();
    let n_players = motion.pos[0].len();
    let n_frames = FRAMES_PER_STEP * n_steps;
    let n_joints = topology.n_joints();
    let slots = RigSlots::new(topology);
    let rest: Vec<[f64; 3]> = topology.joints().iter().map(|j| rest_offset(j)).collect();
    let noise = Normal::new(0.0, noise_scale.max(0.0)).expect("noise scale >= 0");
    let mut out = Array4::<f32>::zeros((n_frames, n_players, n_joints, 3));
    for i in 0..n_players {
        let scale = rng.random_range(0.92..1.08);
        let mut phase = rng.random_range(0.0..std::f64::consts::TAU);
        for f in 0..n_frames {
            let t0 = f / FRAMES_PER_STEP;
            let t1 = (t0 + 1).min(n_steps - 1);
            let a = (f % FRAMES_PER_STEP) as f64 / FRAMES_PER_STEP as f64;
            let (p0, p1) = (motion.pos[t0][i], motion.pos[t1][i]);
            let c = [p0[0] + a * (p1[0] - p0[0]), p0[1] + a * (p1[1] - p0[1])];
            let th = motion.heading[t0][i] + a * (motion.heading[t1][i] - motion.heading[t0][i]);
            let speed = (p1[0] - p0[0]).hypot(p1[1] - p0[1]);
            phase += 0.35 * speed;
            let swing = (speed / 4.0).min(1.0) * 0.6 * phase.sin();

            let mut pose: Vec<[f64; 3]> = rest.iter().map(|r| [r[0] * scale, r[1] * scale, r[2] * scale]).collect();
            add(&mut pose, slots.l_ankle, [swing, 0.0, 0.0]);
            add(&mut pose, slots.l_foot, [swing, 0.0, 0.0]);
            add(&mut pose, slots.l_knee, [0.5 * swing, 0.0, 0.0]);
            add(&mut pose, slots.r_ankle, [-swing, 0.0, 0.0]);
            add(&mut pose, slots.r_foot, [-swing, 0.0, 0.0]);
            add(&mut pose, slots.r_knee, [-0.5 * swing, 0.0, 0.0]);
            add(&mut pose, slots.l_wrist, [-0.4 * swing, 0.0, 0.0]);
            add(&mut pose, slots.r_wrist, [0.4 * swing, 0.0, 0.0]);

            let tau = f as f64 / FRAMES_PER_STEP as f64;
            for o in overlays {
                o.apply(&slots, i, tau, &mut pose);
            }

            let (s, co) = th.sin_cos();
            let fwd = [co, s];
            let right = [s, -co];
            for j in 0..n_joints {
                let [pf, pr, pz] = pose[j];
                let (x, y, z) = if j == slots.root {
                    // the root's ground projection is the centroid
                    (c[0], c[1], pz + noise.sample(rng))
                } else {
                    (
                        c[0] + pf * fwd[0] + pr * right[0] + noise.sample(rng),
                        c[1] + pf * fwd[1] + pr * right[1] + noise.sample(rng),
                        pz + noise.sample(rng),
                    )
                };
                out[[f, i, j, 0]] = x as f32;
                out[[f, i, j, 1]] = y as f32;
                out[[f, i, j, 2]] = z as f32;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::play::geometry::shoulder_normal;

    fn rig() -> SkeletonTopology {
        SkeletonTopology::preset("default17").unwrap()
    }

    fn iso(shot_frame: usize) -> PlayScript {
        PlayScript {
            scenario: Scenario::IsoShot {
                shooter: 0,
                shot_frame,
                made: true,
                shot: ShotKind::Jumpshot,
            },
            noise_scale: 0.05,
            margin: 10,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_play(&iso(20), &rig(), 4, 50, 11).unwrap();
        let b = generate_play(&iso(20), &rig(), 4, 50, 11).unwrap();
        assert_eq!(a, b);
        let c = generate_play(&iso(20), &rig(), 4, 50, 12).unwrap();
        assert_ne!(a.positions, c.positions);
    }

    #[test]
    fn iso_shot_marks_the_shooter() {
        let p = generate_play(&iso(20), &rig(), 4, 50, 3).unwrap();
        assert_eq!(p.events[[20, 0, EventKind::ShotAttempt.index()]], 1);
        assert_eq!(p.ball().unwrap().shots[0].frame, 20);
    }

    #[test]
    fn joints_align_with_centroids() {
        let topo = rig();
        let p = generate_play(&iso(25), &topo, 4, 50, 5).unwrap();
        assert_eq!(p.joints30.shape()[0], 6 * p.n_steps());
        for t in 0..p.n_steps() {
            for i in 0..4 {
                assert_eq!(p.joints30[[6 * t, i, topo.root(), 0]], p.positions[[t, i, 0]]);
                assert_eq!(p.joints30[[6 * t, i, topo.root(), 1]], p.positions[[t, i, 1]]);
            }
        }
    }

    #[test]
    fn shooter_raises_wrists_with_centroid_still() {
        let topo = rig();
        let p = generate_play(&iso(30), &topo, 4, 50, 9).unwrap();
        let (w, s) = (topo.joint_index("r_wrist").unwrap(), topo.right_shoulder());
        let f = 6 * 30;
        assert!(p.joints30[[f, 0, w, 2]] > p.joints30[[f, 0, s, 2]]);
        let f_early = 6 * 10;
        assert!(p.joints30[[f_early, 0, w, 2]] < p.joints30[[f_early, 0, s, 2]]);
        for t in 26..=30 {
            for i in 0..4 {
                assert_eq!(p.positions[[t, i, 0]], p.positions[[26, i, 0]]);
            }
        }
    }

    #[test]
    fn rejects_out_of_range_timing() {
        assert!(matches!(
            generate_play(&iso(45), &rig(), 4, 50, 1),
            Err(Error::Script(_))
        ));
        let mut s = iso(20);
        s.noise_scale = -1.0;
        assert!(generate_play(&s, &rig(), 4, 50, 1).is_err());
    }

    #[test]
    fn dataset_plays_are_valid_and_on_court() {
        let topo = rig();
        let spec = DatasetSpec {
            n_plays: 24,
            ..DatasetSpec::default()
        };
        let plays = generate_dataset(&spec, &topo, Exec::Sequential).unwrap();
        assert_eq!(plays.len(), 24);
        let mut kinds = std::collections::BTreeSet::new();
        for p in &plays {
            p.validate(&topo).unwrap();
            kinds.insert(p.scenario);
            for t in 0..p.n_steps() {
                for i in 0..p.n_players() {
                    let [x, y] = p.position(t, i);
                    assert!((0.0..=94.0).contains(&x) && (0.0..=50.0).contains(&y));
                }
            }
        }
        assert!(kinds.len() >= 3);
        let again = generate_dataset(&spec, &topo, Exec::Parallel).unwrap();
        assert_eq!(plays, again);
    }

    #[test]
    fn rendered_shoulders_face_heading() {
        let topo = rig();
        let p = generate_play(&iso(20), &topo, 4, 50, 2).unwrap();
        let (l, r) = (topo.left_shoulder(), topo.right_shoulder());
        let f = 0;
        let n = shoulder_normal(
            [p.joints30[[f, 0, l, 0]] as f64, p.joints30[[f, 0, l, 1]] as f64],
            [p.joints30[[f, 0, r, 0]] as f64, p.joints30[[f, 0, r, 1]] as f64],
        )
        .unwrap();
        assert!((n[0].hypot(n[1]) - 1.0).abs() < 1e-9);
    }
}
