//! Run configuration: one TOML document of `section.key = value` settings.
//!
//! Files may use dotted keys or `[section]` tables; unknown keys are
//! rejected. Overrides given as `section.key=value` strings are merged on
//! top before validation.

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use crate::objectives::WindowConfig;
use crate::play::generator::DatasetSpec;
use crate::play::labels::{AssistConfig, PickConfig};
use crate::play::SkeletonTopology;
use crate::probe::{horizon_steps, LabelConfig, ProbeFitConfig, ProbeSetup, ProbeTask, TaskKind};
use crate::train::TrainConfig;
use crate::transformer::TransformerConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub rig: String,
    pub n_plays: usize,
    pub n_players: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Relative weights of pick, assist, iso_shot and random_motion plays.
    pub mix: [f64; 4],
    pub noise_scale: f64,
    pub margin: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        let d = DatasetSpec::default();
        GeneratorConfig {
            rig: "default17".into(),
            n_plays: d.n_plays,
            n_players: d.n_players,
            n_steps: d.n_steps,
            seed: d.seed,
            mix: d.mix,
            noise_scale: d.noise_scale,
            margin: d.margin,
        }
    }
}

impl GeneratorConfig {
    pub fn spec(&self) -> DatasetSpec {
        DatasetSpec {
            n_plays: self.n_plays,
            n_players: self.n_players,
            n_steps: self.n_steps,
            seed: self.seed,
            mix: self.mix,
            noise_scale: self.noise_scale,
            margin: self.margin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelsConfig {
    pub pick: PickConfig,
    pub assist: AssistConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HorizonsConfig {
    pub shot_taker: Vec<f64>,
    pub pick: Vec<f64>,
    pub assist: Vec<f64>,
    pub shot_location: Vec<f64>,
    pub shot_type: Vec<f64>,
}

impl Default for HorizonsConfig {
    fn default() -> Self {
        HorizonsConfig {
            shot_taker: TaskKind::ShotTaker.default_horizons(),
            pick: TaskKind::Pick.default_horizons(),
            assist: TaskKind::Assist.default_horizons(),
            shot_location: TaskKind::ShotLocation.default_horizons(),
            shot_type: TaskKind::ShotType.default_horizons(),
        }
    }
}

impl HorizonsConfig {
    pub fn get(&self, kind: TaskKind) -> &[f64] {
        match kind {
            TaskKind::ShotTaker => &self.shot_taker,
            TaskKind::Pick => &self.pick,
            TaskKind::Assist => &self.assist,
            TaskKind::ShotLocation => &self.shot_location,
            TaskKind::ShotType => &self.shot_type,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub tasks: Vec<TaskKind>,
    pub horizons: HorizonsConfig,
    /// Training-set fractions for the data-efficiency sweep.
    pub fractions: Vec<f64>,
    pub seeds: Vec<u64>,
    pub efficiency_seeds: Vec<u64>,
    pub efficiency_task: TaskKind,
    pub efficiency_horizon: f64,
    pub eval_fraction: f64,
    pub l2: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        let fit = ProbeFitConfig::default();
        ProbeConfig {
            tasks: TaskKind::ALL.to_vec(),
            horizons: HorizonsConfig::default(),
            fractions: vec![1.0, 0.5, 0.25, 0.125],
            seeds: vec![0, 1, 2, 3, 4],
            efficiency_seeds: vec![0, 1, 2],
            efficiency_task: TaskKind::ShotTaker,
            efficiency_horizon: 0.8,
            eval_fraction: 0.5,
            l2: fit.l2,
            tol: fit.tol,
            max_iters: fit.max_iters,
        }
    }
}

impl ProbeConfig {
    pub fn tasks(&self) -> Vec<ProbeTask> {
        self.tasks
            .iter()
            .map(|&k| ProbeTask {
                kind: k,
                horizons: self.horizons.get(k).to_vec(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub encoder: EncoderConfig,
    pub transformer: TransformerConfig,
    pub objectives: WindowConfig,
    pub labels: LabelsConfig,
    pub model: ModelSection,
    pub trainer: TrainConfig,
    pub probe: ProbeConfig,
}

fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn parse_table(text: &str, what: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::config(what, e.message().to_string()))
}

impl RunConfig {
    /// Parses `text` and applies `overrides` (`section.key=value`) in order.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table = parse_table(text, "config")?;
        for o in overrides {
            let Some((key, value)) = o.split_once('=') else {
                return Err(Error::config(o.as_str(), "overrides look like section.key=value"));
            };
            let (key, value) = (key.trim(), value.trim());
            let line = format!("{key} = {value}");
            // bare words are taken as strings, so `model.variant=no_gnn` works
            let parsed = parse_table(&line, key).or_else(|_| parse_table(&format!("{key} = \"{value}\""), key))?;
            merge(&mut table, parsed);
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every setting as a `section.key = value` line.
    pub fn dump(&self) -> Result<String> {
        let value = toml::Value::try_from(self).map_err(|e| Error::Format(e.to_string()))?;
        let mut out = String::new();
        flatten("", &value, &mut out);
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.generator;
        SkeletonTopology::preset(&g.rig).map_err(|e| Error::config("generator.rig", e.to_string()))?;
        if g.n_plays == 0 {
            return Err(Error::config("generator.n_plays", "must be >= 1"));
        }
        if g.n_players < 2 {
            return Err(Error::config("generator.n_players", "need at least one player per team"));
        }
        if g.n_steps < 2 * g.margin + 2 {
            return Err(Error::config(
                "generator.n_steps",
                format!("{} steps cannot hold margin {} on both sides", g.n_steps, g.margin),
            ));
        }
        if g.mix.iter().any(|w| !(*w >= 0.0)) || !(g.mix.iter().sum::<f64>() > 0.0) {
            return Err(Error::config("generator.mix", "weights must be >= 0 with a positive sum"));
        }
        if !(g.noise_scale >= 0.0) {
            return Err(Error::config("generator.noise_scale", "must be >= 0"));
        }
        self.encoder.validate()?;
        self.transformer.validate()?;
        if self.transformer.max_steps < g.n_steps - 1 {
            return Err(Error::config(
                "transformer.max_steps",
                format!("{} is shorter than the {} usable steps per play", self.transformer.max_steps, g.n_steps - 1),
            ));
        }
        self.objectives.validate()?;
        self.labels.pick.validate()?;
        if self.labels.assist.max_gap == 0 {
            return Err(Error::config("labels.assist.max_gap", "must be >= 1"));
        }
        self.trainer.validate()?;
        let p = &self.probe;
        for kind in TaskKind::ALL {
            let field = format!("probe.horizons.{kind}");
            let task = ProbeTask {
                kind,
                horizons: p.horizons.get(kind).to_vec(),
            };
            task.validate().map_err(|e| match e {
                Error::Config { message, .. } => Error::config(field.as_str(), message),
                e => e,
            })?;
            for &h in &task.horizons {
                if horizon_steps(h)? + 2 > g.n_steps {
                    return Err(Error::config(
                        field.as_str(),
                        format!("{h} s reaches before the start of a {}-step play", g.n_steps),
                    ));
                }
            }
        }
        if p.fractions.is_empty() || p.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::config("probe.fractions", "need fractions in (0, 1]"));
        }
        if p.seeds.is_empty() {
            return Err(Error::config("probe.seeds", "need at least one seed"));
        }
        if p.efficiency_seeds.is_empty() {
            return Err(Error::config("probe.efficiency_seeds", "need at least one seed"));
        }
        horizon_steps(p.efficiency_horizon).map_err(|_| {
            Error::config("probe.efficiency_horizon", "must be a non-negative multiple of 0.2 s")
        })?;
        if !(p.eval_fraction > 0.0 && p.eval_fraction < 1.0) {
            return Err(Error::config("probe.eval_fraction", "must be in (0, 1)"));
        }
        if !(p.l2 >= 0.0) {
            return Err(Error::config("probe.l2", "must be >= 0"));
        }
        if !(p.tol > 0.0) {
            return Err(Error::config("probe.tol", "must be > 0"));
        }
        Ok(())
    }

    pub fn model_config(&self, identities: Vec<String>) -> ModelConfig {
        ModelConfig {
            rig: self.generator.rig.clone(),
            identities,
            encoder: self.encoder.clone(),
            transformer: self.transformer.clone(),
            variant: self.model.variant,
        }
    }

    pub fn probe_setup(&self) -> ProbeSetup {
        ProbeSetup {
            labels: LabelConfig {
                pick: self.labels.pick,
                assist: self.labels.assist,
            },
            fit: ProbeFitConfig {
                l2: self.probe.l2,
                tol: self.probe.tol,
                max_iters: self.probe.max_iters,
            },
            eval_fraction: self.probe.eval_fraction,
        }
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut String) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        v => {
            out.push_str(prefix);
            out.push_str(" = ");
            out.push_str(&v.to_string());
            out.push('\n');
        }
    }
}
