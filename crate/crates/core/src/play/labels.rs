//! Geometric pick and assist labelers over a play's ball sidecar.

use super::geometry::{beyond_arc, dist, in_half_of, side_of_line, ATTACK_BASKET};
use super::sequence::{PlaySequence, STEP_HZ};
use crate::error::{Error, Result};

/// Thresholds for the pick conditions.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PickConfig {
    /// Speed below which a teammate counts as stationary, ft/s.
    pub v_stat: f64,
    /// Consecutive stationary steps required, ending at the labeled step.
    pub k_stat: usize,
    /// Defender proximity to both handler and screener, feet.
    pub d_near: f64,
    /// Look-ahead for the side switch, steps.
    pub flip_steps: usize,
}

impl Default for PickConfig {
    fn default() -> Self {
        PickConfig {
            v_stat: 2.0,
            k_stat: 3,
            d_near: 6.0,
            flip_steps: 5,
        }
    }
}

impl PickConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_stat > 0.0) {
            return Err(Error::config("labels.pick.v_stat", "must be > 0"));
        }
        if self.k_stat == 0 {
            return Err(Error::config("labels.pick.k_stat", "must be >= 1"));
        }
        if !(self.d_near > 0.0) {
            return Err(Error::config("labels.pick.d_near", "must be > 0"));
        }
        if self.flip_steps == 0 {
            return Err(Error::config("labels.pick.flip_steps", "must be >= 1"));
        }
        Ok(())
    }
}

/// Per-step pick labels from the sidecar's ball handler track.
pub fn label_picks(seq: &PlaySequence, cfg: &PickConfig) -> Result<Vec<u8>> {
    let ball = seq.ball()?;
    label_picks_with(seq, &ball.handler, cfg)
}

/// Pick labels for an explicit handler track.
///
/// Step `t` is labeled when the handler is outside the arc in the attacking
/// half, a stationary teammate has a defender within `d_near` of both of
/// them, and the handler switches sides of the teammate–basket line within
/// `flip_steps` steps.
pub fn label_picks_with(
    seq: &PlaySequence,
    handler: &[Option<usize>],
    cfg: &PickConfig,
) -> Result<Vec<u8>> {
    cfg.validate()?;
    let (t_n, n) = (seq.n_steps(), seq.n_players());
    if handler.len() != t_n {
        return Err(Error::Shape(format!(
            "handler track has {} steps, play has {t_n}",
            handler.len()
        )));
    }
    // still_run[i] = consecutive slow steps ending at the current t
    let mut still_run = vec![0usize; n];
    let mut labels = vec![0u8; t_n];
    let basket = ATTACK_BASKET;
    for t in 0..t_n {
        for (i, run) in still_run.iter_mut().enumerate() {
            *run = if t >= 1 && dist(seq.position(t, i), seq.position(t - 1, i)) * STEP_HZ < cfg.v_stat {
                *run + 1
            } else {
                0
            };
        }
        let Some(h) = handler[t] else { continue };
        if h >= n {
            return Err(Error::UnknownPlayer(format!("handler index {h}")));
        }
        let ph = seq.position(t, h);
        if !(beyond_arc(ph, basket) && in_half_of(ph, basket)) {
            continue;
        }
        let hit = seq.teammates(h).any(|m| {
            if still_run[m] < cfg.k_stat {
                return false;
            }
            let pm = seq.position(t, m);
            let guarded = seq.opponents(h).any(|d| {
                let pd = seq.position(t, d);
                dist(pd, ph) <= cfg.d_near && dist(pd, pm) <= cfg.d_near
            });
            if !guarded {
                return false;
            }
            let side = side_of_line(pm, basket, ph);
            side != 0
                && (1..=cfg.flip_steps)
                    .take_while(|k| t + k < t_n)
                    .any(|k| side_of_line(pm, basket, seq.position(t + k, h)) == -side)
        });
        labels[t] = u8::from(hit);
    }
    Ok(labels)
}

/// Limits for the assist chain.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssistConfig {
    pub max_dribbles: usize,
    /// Reception-to-shot window, steps.
    pub max_gap: usize,
}

impl Default for AssistConfig {
    fn default() -> Self {
        AssistConfig {
            max_dribbles: 2,
            max_gap: 15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssistRecord {
    pub passer: usize,
    pub receiver: usize,
    pub pass_frame: usize,
    pub reception: usize,
    /// Frame of the made shot; the probing anchor.
    pub shot_frame: usize,
}

/// Passes that lead to a made basket by the receiver within the dribble and
/// time limits, with the receiver keeping the ball until the shot.
pub fn find_assists(seq: &PlaySequence, cfg: &AssistConfig) -> Result<Vec<AssistRecord>> {
    let ball = seq.ball()?;
    let mut out = Vec::new();
    for p in &ball.passes {
        if p.passer == p.receiver || seq.teams[p.passer] != seq.teams[p.receiver] {
            continue;
        }
        // the receiver's next shot, unless they give the ball up first
        let handoff = ball
            .passes
            .iter()
            .filter(|q| q.passer == p.receiver && q.release >= p.reception)
            .map(|q| q.release)
            .min();
        let Some(shot) = ball
            .shots
            .iter()
            .filter(|s| s.shooter == p.receiver && s.frame >= p.reception)
            .min_by_key(|s| s.frame)
        else {
            continue;
        };
        if handoff.is_some_and(|h| h < shot.frame) || !shot.made {
            continue;
        }
        let dribbles = ball
            .dribbles
            .iter()
            .filter(|d| d.player == p.receiver && d.frame >= p.reception && d.frame < shot.frame)
            .count();
        if dribbles <= cfg.max_dribbles && shot.frame - p.reception <= cfg.max_gap {
            out.push(AssistRecord {
                passer: p.passer,
                receiver: p.receiver,
                pass_frame: p.release,
                reception: p.reception,
                shot_frame: shot.frame,
            });
        }
    }
    Ok(out)
}

/// Per-step assist labels, set on each qualifying pass frame.
pub fn label_assists(seq: &PlaySequence, cfg: &AssistConfig) -> Result<Vec<u8>> {
    let mut labels = vec![0u8; seq.n_steps()];
    for a in find_assists(seq, cfg)? {
        if a.pass_frame < labels.len() {
            labels[a.pass_frame] = 1;
        }
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::play::generator::{generate_play, PlayScript, Scenario};
    use crate::play::sequence::ShotKind;
    use crate::play::topology::SkeletonTopology;

    fn rig() -> SkeletonTopology {
        SkeletonTopology::preset("default17").unwrap()
    }

    #[test]
    fn scripted_pick_fires_at_crossing() {
        let script = PlayScript {
            scenario: Scenario::Pick {
                handler: 0,
                screener: 1,
                defender: 2,
                crossing: 15,
            },
            noise_scale: 0.05,
            margin: 5,
        };
        for seed in 0..5 {
            let p = generate_play(&script, &rig(), 4, 30, seed).unwrap();
            let l = label_picks(&p, &PickConfig::default()).unwrap();
            assert_eq!(l[15], 1, "seed {seed}: {l:?}");
        }
    }

    #[test]
    fn assist_chain_rules() {
        let make = |dribbles, made, shot_frame| PlayScript {
            scenario: Scenario::Assist {
                passer: 0,
                receiver: 1,
                pass_frame: 10,
                dribbles,
                shot_frame,
                made,
                shot: ShotKind::Layup,
            },
            noise_scale: 0.0,
            margin: 5,
        };
        let cfg = AssistConfig::default();
        let p = generate_play(&make(0, true, 18), &rig(), 4, 40, 1).unwrap();
        let a = find_assists(&p, &cfg).unwrap();
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].shot_frame, 18);
        assert_eq!(label_assists(&p, &cfg).unwrap()[10], 1);
        let p = generate_play(&make(3, true, 20), &rig(), 4, 40, 1).unwrap();
        assert!(find_assists(&p, &cfg).unwrap().is_empty());
        let p = generate_play(&make(0, false, 18), &rig(), 4, 40, 1).unwrap();
        assert!(find_assists(&p, &cfg).unwrap().is_empty());
    }

    #[test]
    fn missing_sidecar_is_an_error() {
        let script = PlayScript {
            scenario: Scenario::RandomMotion { anchor: 10 },
            noise_scale: 0.0,
            margin: 5,
        };
        let mut p = generate_play(&script, &rig(), 4, 20, 1).unwrap();
        p.ball = None;
        assert!(matches!(label_picks(&p, &PickConfig::default()), Err(Error::MissingSidecar)));
        assert!(matches!(label_assists(&p, &AssistConfig::default()), Err(Error::MissingSidecar)));
    }
}
