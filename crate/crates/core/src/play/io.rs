//! Dataset files: one container with per-play sections.
//!
//! Per play `k`: `play{k}.meta` (text), `play{k}.positions`,
//! `play{k}.joints30`, `play{k}.events` (tensors, 32-bit floats) and,
//! when present, `play{k}.ball` (text) plus `play{k}.ball_position`.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use ndarray::{Array2, Array3, Array4};

use super::sequence::{
    BallSidecar, DribbleRecord, PassRecord, PlaySequence, ScenarioKind, ShotKind, ShotRecord, Team,
};
use crate::container::{
    decode_tensor, decode_text, encode_tensor, encode_text, read_container, text_get, text_parse,
    write_container, Section,
};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 8] = b"SKTRDATA";
pub const DATASET_VERSION: u32 = 1;

fn join<T: ToString>(xs: impl IntoIterator<Item = T>) -> String {
    xs.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn split(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').filter(|p| !p.is_empty())
}

fn parse_list<V: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<V>> {
    split(s)
        .map(|p| {
            p.parse()
                .map_err(|_| Error::Format(format!("bad list item `{p}` in {what}")))
        })
        .collect()
}

fn play_sections(k: usize, p: &PlaySequence) -> Vec<Section> {
    let teams = p.teams.iter().map(|t| match t {
        Team::Offense => "O",
        Team::Defense => "D",
    });
    let meta = vec![
        ("seed".to_string(), p.seed.to_string()),
        ("scenario".into(), p.scenario.name().into()),
        ("rig".into(), p.rig.clone()),
        ("player_ids".into(), p.player_ids.join(",")),
        ("teams".into(), join(teams)),
        ("has_ball".into(), p.ball.is_some().to_string()),
    ];
    let events: Vec<f32> = p.events.iter().map(|&v| v as f32).collect();
    let mut out = vec![
        Section::new(format!("play{k}.meta"), encode_text(&meta)),
        Section::new(
            format!("play{k}.positions"),
            encode_tensor(p.positions.shape(), p.positions.as_slice().expect("standard layout")),
        ),
        Section::new(
            format!("play{k}.joints30"),
            encode_tensor(p.joints30.shape(), p.joints30.as_slice().expect("standard layout")),
        ),
        Section::new(format!("play{k}.events"), encode_tensor(p.events.shape(), &events)),
    ];
    if let Some(b) = &p.ball {
        let handler = b.handler.iter().map(|h| match h {
            Some(i) => i.to_string(),
            None => "-".into(),
        });
        let passes = b
            .passes
            .iter()
            .map(|q| format!("{}:{}:{}:{}", q.passer, q.receiver, q.release, q.reception));
        let dribbles = b.dribbles.iter().map(|d| format!("{}:{}", d.player, d.frame));
        let shots = b.shots.iter().map(|s| {
            format!(
                "{}:{}:{}:{}:{}:{}",
                s.shooter,
                s.frame,
                u8::from(s.made),
                s.kind.name(),
                s.location[0].to_bits(),
                s.location[1].to_bits()
            )
        });
        let text = vec![
            ("handler".to_string(), join(handler)),
            ("passes".into(), join(passes)),
            ("dribbles".into(), join(dribbles)),
            ("shots".into(), join(shots)),
        ];
        out.push(Section::new(format!("play{k}.ball"), encode_text(&text)));
        out.push(Section::new(
            format!("play{k}.ball_position"),
            encode_tensor(b.position.shape(), b.position.as_slice().expect("standard layout")),
        ));
    }
    out
}

/// Serializes plays into container bytes.
pub fn dataset_bytes(plays: &[PlaySequence]) -> Result<Vec<u8>> {
    let mut sections = vec![Section::new(
        "dataset",
        encode_text(&[("plays".to_string(), plays.len().to_string())]),
    )];
    for (k, p) in plays.iter().enumerate() {
        sections.extend(play_sections(k, p));
    }
    let mut buf = Vec::new();
    write_container(&mut buf, DATASET_MAGIC, DATASET_VERSION, &sections)?;
    Ok(buf)
}

pub fn save_dataset(plays: &[PlaySequence], path: &Path) -> Result<()> {
    std::fs::write(path, dataset_bytes(plays)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<PlaySequence>> {
    let r = BufReader::new(File::open(path)?);
    parse_sections(read_container(r, DATASET_MAGIC, DATASET_VERSION)?)
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Vec<PlaySequence>> {
    parse_sections(read_container(bytes, DATASET_MAGIC, DATASET_VERSION)?)
}

fn parse_sections(sections: Vec<Section>) -> Result<Vec<PlaySequence>> {
    let mut map: std::collections::HashMap<String, Vec<u8>> =
        sections.into_iter().map(|s| (s.name, s.payload)).collect();
    let mut take = |name: String| {
        map.remove(&name)
            .ok_or_else(|| Error::Format(format!("missing section `{name}`")))
    };
    let head = decode_text(&take("dataset".into())?, "dataset")?;
    let count: usize = text_parse(&head, "plays", "dataset")?;
    let mut plays = Vec::with_capacity(count);
    for k in 0..count {
        let what = format!("play{k}.meta");
        let meta = decode_text(&take(what.clone())?, &what)?;
        let scenario_name = text_get(&meta, "scenario", &what)?;
        let scenario = ScenarioKind::from_name(scenario_name)
            .ok_or_else(|| Error::Format(format!("unknown scenario `{scenario_name}`")))?;
        let teams = split(text_get(&meta, "teams", &what)?)
            .map(|t| match t {
                "O" => Ok(Team::Offense),
                "D" => Ok(Team::Defense),
                other => Err(Error::Format(format!("unknown team tag `{other}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        let player_ids: Vec<String> = split(text_get(&meta, "player_ids", &what)?)
            .map(str::to_string)
            .collect();

        let tensor = |payload: Vec<u8>, name: &str, ndim: usize| -> Result<(Vec<usize>, Vec<f32>)> {
            let t = decode_tensor::<f32>(&payload, name)?;
            if t.dims.len() != ndim {
                return Err(Error::Format(format!("`{name}` has {} dims, expected {ndim}", t.dims.len())));
            }
            Ok((t.dims, t.data))
        };
        let shape_err = |e: ndarray::ShapeError| Error::Format(e.to_string());
        let (d, v) = tensor(take(format!("play{k}.positions"))?, "positions", 3)?;
        let positions = Array3::from_shape_vec((d[0], d[1], d[2]), v).map_err(shape_err)?;
        let (d, v) = tensor(take(format!("play{k}.joints30"))?, "joints30", 4)?;
        let joints30 = Array4::from_shape_vec((d[0], d[1], d[2], d[3]), v).map_err(shape_err)?;
        let (d, v) = tensor(take(format!("play{k}.events"))?, "events", 3)?;
        let events = Array3::from_shape_vec((d[0], d[1], d[2]), v.iter().map(|&x| x as u8).collect())
            .map_err(shape_err)?;

        let ball = if text_parse::<bool>(&meta, "has_ball", &what)? {
            let bw = format!("play{k}.ball");
            let b = decode_text(&take(bw.clone())?, &bw)?;
            let handler = split(text_get(&b, "handler", &bw)?)
                .map(|h| {
                    if h == "-" {
                        Ok(None)
                    } else {
                        h.parse().map(Some).map_err(|_| Error::Format(format!("bad handler `{h}`")))
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let passes = split(text_get(&b, "passes", &bw)?)
                .map(|s| {
                    let f: Vec<usize> = parse_list(&s.replace(':', ","), "passes")?;
                    match f[..] {
                        [passer, receiver, release, reception] => Ok(PassRecord {
                            passer,
                            receiver,
                            release,
                            reception,
                        }),
                        _ => Err(Error::Format(format!("bad pass record `{s}`"))),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let dribbles = split(text_get(&b, "dribbles", &bw)?)
                .map(|s| {
                    let f: Vec<usize> = parse_list(&s.replace(':', ","), "dribbles")?;
                    match f[..] {
                        [player, frame] => Ok(DribbleRecord { player, frame }),
                        _ => Err(Error::Format(format!("bad dribble record `{s}`"))),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let shots = split(text_get(&b, "shots", &bw)?)
                .map(|s| {
                    let f: Vec<&str> = s.split(':').collect();
                    let bad = || Error::Format(format!("bad shot record `{s}`"));
                    if f.len() != 6 {
                        return Err(bad());
                    }
                    let num = |x: &str| x.parse::<u64>().map_err(|_| bad());
                    Ok(ShotRecord {
                        shooter: num(f[0])? as usize,
                        frame: num(f[1])? as usize,
                        made: num(f[2])? == 1,
                        kind: ShotKind::from_name(f[3]).ok_or_else(bad)?,
                        location: [
                            f32::from_bits(num(f[4])? as u32),
                            f32::from_bits(num(f[5])? as u32),
                        ],
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let (d, v) = tensor(take(format!("play{k}.ball_position"))?, "ball_position", 2)?;
            Some(BallSidecar {
                position: Array2::from_shape_vec((d[0], d[1]), v).map_err(shape_err)?,
                handler,
                passes,
                dribbles,
                shots,
            })
        } else {
            None
        };
        plays.push(PlaySequence {
            seed: text_parse(&meta, "seed", &what)?,
            scenario,
            rig: text_get(&meta, "rig", &what)?.to_string(),
            player_ids,
            teams,
            positions,
            joints30,
            events,
            ball,
        });
    }
    Ok(plays)
}
