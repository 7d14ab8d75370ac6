//! Checkpoint files in the section container.
//!
//! Sections: `meta` (text: precision, step, rig, variant, fingerprint,
//! adam_t), `config` (TOML snapshot of model, trainer and window settings),
//! one `param.<name>` tensor per parameter and, when optimizer state is
//! saved, `adam.m.<name>` / `adam.v.<name>`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Adam, TrainConfig};
use crate::autograd::ParamStore;
use crate::container::{
    decode_tensor, decode_text, encode_tensor, encode_text, read_container, text_get, text_parse,
    write_container, Section,
};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Variant};
use crate::objectives::WindowConfig;
use crate::play::io::dataset_bytes;
use crate::play::PlaySequence;
use crate::real::{Precision, Real};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SKTRCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Hex SHA-256 of the dataset's file encoding.
pub fn dataset_fingerprint(plays: &[PlaySequence]) -> Result<String> {
    let digest = Sha256::digest(dataset_bytes(plays)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigSnapshot {
    model: ModelConfig,
    trainer: TrainConfig,
    objectives: WindowConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub precision: Precision,
    pub step: u64,
    pub rig: String,
    pub variant: Variant,
    pub fingerprint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: ModelConfig,
    pub trainer: TrainConfig,
    pub windows: WindowConfig,
    pub step: u64,
    pub fingerprint: String,
    pub store: ParamStore<T>,
    pub adam: Option<Adam<T>>,
}

impl<T: Real> Checkpoint<T> {
    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            precision: T::PRECISION,
            step: self.step,
            rig: self.model.rig.clone(),
            variant: self.model.variant,
            fingerprint: self.fingerprint.clone(),
        }
    }

    /// Rebuilds the model structure; parameter values live in `self.store`.
    pub fn build_model(&self) -> Result<Model> {
        let mut scratch = ParamStore::<T>::new();
        Model::new(self.model.clone(), &mut scratch, &mut ChaCha8Rng::seed_from_u64(0))
    }

    /// Errors if the plays use another rig; warns and returns `false` if
    /// they are not the data the checkpoint was trained on.
    pub fn check_dataset(&self, plays: &[PlaySequence]) -> Result<bool> {
        if let Some(p) = plays.iter().find(|p| p.rig != self.model.rig) {
            return Err(Error::Shape(format!(
                "checkpoint was trained on rig `{}`, dataset uses `{}`",
                self.model.rig, p.rig
            )));
        }
        let fp = dataset_fingerprint(plays)?;
        let same = fp == self.fingerprint;
        if !same {
            log::warn!(
                "dataset fingerprint {} differs from the checkpoint's {}",
                &fp[..16.min(fp.len())],
                &self.fingerprint[..16.min(self.fingerprint.len())]
            );
        }
        Ok(same)
    }
}

fn tensor_section<T: Real>(name: String, a: &Array2<T>) -> Section {
    let a = a.as_standard_layout();
    Section::new(name, encode_tensor(&[a.nrows(), a.ncols()], a.as_slice().expect("standard layout")))
}

pub fn save_checkpoint<T: Real>(ck: &Checkpoint<T>, path: &Path) -> Result<()> {
    let snapshot = ConfigSnapshot {
        model: ck.model.clone(),
        trainer: ck.trainer.clone(),
        objectives: ck.windows,
    };
    let toml = toml::to_string(&snapshot).map_err(|e| Error::Format(format!("config snapshot: {e}")))?;
    let meta = vec![
        ("precision".to_string(), T::BITS.to_string()),
        ("step".to_string(), ck.step.to_string()),
        ("rig".to_string(), ck.model.rig.clone()),
        ("variant".to_string(), ck.model.variant.name().to_string()),
        ("fingerprint".to_string(), ck.fingerprint.clone()),
        (
            "adam_t".to_string(),
            ck.adam.as_ref().map_or("-".to_string(), |a| a.t.to_string()),
        ),
    ];
    let mut sections = vec![
        Section::new("meta", encode_text(&meta)),
        Section::new("config", toml.into_bytes()),
    ];
    let store = &ck.store;
    for id in store.ids() {
        sections.push(tensor_section(format!("param.{}", store.name(id)), store.get(id)));
    }
    if let Some(adam) = &ck.adam {
        for id in store.ids() {
            sections.push(tensor_section(format!("adam.m.{}", store.name(id)), &adam.m[id.0]));
            sections.push(tensor_section(format!("adam.v.{}", store.name(id)), &adam.v[id.0]));
        }
    }
    let w = BufWriter::new(File::create(path)?);
    write_container(w, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, &sections)
}

fn read_sections(path: &Path) -> Result<Vec<Section>> {
    read_container(BufReader::new(File::open(path)?), CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
}

fn parse_meta(sections: &[Section]) -> Result<CheckpointMeta> {
    let s = sections
        .iter()
        .find(|s| s.name == "meta")
        .ok_or_else(|| Error::Format("checkpoint has no `meta` section".into()))?;
    let meta = decode_text(&s.payload, "meta")?;
    let bits: u32 = text_parse(&meta, "precision", "meta")?;
    let variant = text_get(&meta, "variant", "meta")?;
    Ok(CheckpointMeta {
        precision: Precision::from_bits(bits)
            .ok_or_else(|| Error::Format(format!("unsupported precision {bits}")))?,
        step: text_parse(&meta, "step", "meta")?,
        rig: text_get(&meta, "rig", "meta")?.to_string(),
        variant: Variant::from_name(variant)
            .ok_or_else(|| Error::Format(format!("unknown variant `{variant}`")))?,
        fingerprint: text_get(&meta, "fingerprint", "meta")?.to_string(),
    })
}

/// Header information without decoding any tensor, e.g. to pick a precision.
pub fn read_checkpoint_meta(path: &Path) -> Result<CheckpointMeta> {
    parse_meta(&read_sections(path)?)
}

fn decode_matrix<T: Real>(payload: &[u8], name: &str) -> Result<Array2<T>> {
    let t = decode_tensor::<T>(payload, name)?;
    if t.dims.len() != 2 {
        return Err(Error::Format(format!("`{name}` has {} dims, expected 2", t.dims.len())));
    }
    Array2::from_shape_vec((t.dims[0], t.dims[1]), t.data).map_err(|e| Error::Format(e.to_string()))
}

/// Loads a checkpoint saved at precision `T`.
pub fn load_checkpoint<T: Real>(path: &Path) -> Result<(Model, Checkpoint<T>)> {
    let sections = read_sections(path)?;
    let meta = parse_meta(&sections)?;
    if meta.precision != T::PRECISION {
        return Err(Error::Format(format!(
            "checkpoint holds {}-bit parameters, {}-bit were requested",
            meta.precision.bits(),
            T::BITS
        )));
    }
    let mut by_name: HashMap<&str, &[u8]> =
        sections.iter().map(|s| (s.name.as_str(), s.payload.as_slice())).collect();
    let config = by_name
        .remove("config")
        .ok_or_else(|| Error::Format("checkpoint has no `config` section".into()))?;
    let config = std::str::from_utf8(config).map_err(|_| Error::Format("config snapshot is not UTF-8".into()))?;
    let snap: ConfigSnapshot =
        toml::from_str(config).map_err(|e| Error::Format(format!("config snapshot: {e}")))?;

    let mut store = ParamStore::<T>::new();
    let model = Model::new(snap.model.clone(), &mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
    let ids: Vec<_> = store.ids().collect();
    let fetch = |key: String| -> Result<Array2<T>> {
        let payload = by_name
            .get(key.as_str())
            .ok_or_else(|| Error::Format(format!("checkpoint is missing `{key}`")))?;
        decode_matrix(payload, &key)
    };
    for &id in &ids {
        let v = fetch(format!("param.{}", store.name(id)))?;
        store.set(id, v)?;
    }
    let meta_text = decode_text(by_name["meta"], "meta")?;
    let adam = match text_get(&meta_text, "adam_t", "meta")? {
        "-" => None,
        t => {
            let t = t
                .parse()
                .map_err(|_| Error::Format(format!("bad adam_t `{t}`")))?;
            let mut adam = Adam::new(&store);
            adam.t = t;
            for &id in &ids {
                let name = store.name(id);
                let (m, v) = (fetch(format!("adam.m.{name}"))?, fetch(format!("adam.v.{name}"))?);
                if m.dim() != store.get(id).dim() || v.dim() != store.get(id).dim() {
                    return Err(Error::Shape(format!("optimizer state for `{name}` has the wrong shape")));
                }
                adam.m[id.0] = m;
                adam.v[id.0] = v;
            }
            Some(adam)
        }
    };
    let ck = Checkpoint {
        model: snap.model,
        trainer: snap.trainer,
        windows: snap.objectives,
        step: meta.step,
        fingerprint: meta.fingerprint,
        store,
        adam,
    };
    Ok((model, ck))
}
