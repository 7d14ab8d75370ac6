//! Variant x task x horizon AP matrix, as CSV and as a text table.

use std::fmt::Write as _;

use super::{build_probe_dataset, fit_and_score, mean_std, task_anchors, EmbeddingTable, PlaySplit, ProbeSetup, ProbeTask};
use crate::error::{Error, Result};
use crate::model::Variant;
use crate::par::Exec;
use crate::play::PlaySequence;

#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub variant: Variant,
    pub task: super::TaskKind,
    pub horizon: f64,
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub variants: Vec<Variant>,
    pub columns: Vec<(super::TaskKind, f64)>,
    /// Row-major: variant, then column.
    pub cells: Vec<AblationCell>,
}

pub const ESTIMATOR_NOTE: &str = "step-curve average precision (not interpolated), ties in input order; \
shot_taker negatives are the other players at the same anchor";

/// Fits one probe per (variant, task, horizon, seed). Every variant in
/// `variants` needs an embedding table.
pub fn run_ablation_matrix(
    tables: &[EmbeddingTable],
    variants: &[Variant],
    plays: &[PlaySequence],
    tasks: &[ProbeTask],
    setup: &ProbeSetup,
    seeds: &[u64],
    exec: Exec,
) -> Result<AblationReport> {
    let missing: Vec<&str> = variants
        .iter()
        .filter(|v| !tables.iter().any(|t| t.variant == **v))
        .map(|v| v.name())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingVariants(missing.join(", ")));
    }
    for t in tasks {
        t.validate()?;
    }
    let columns: Vec<_> = tasks
        .iter()
        .flat_map(|t| t.horizons.iter().map(move |&h| (t.kind, h)))
        .collect();
    let anchors = tasks
        .iter()
        .map(|t| Ok((t.kind, task_anchors(t.kind, plays, &setup.labels)?)))
        .collect::<Result<Vec<_>>>()?;
    let splits = seeds
        .iter()
        .map(|&s| PlaySplit::new(plays.len(), setup.eval_fraction, s))
        .collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(Variant, usize)> = variants
        .iter()
        .flat_map(|&v| (0..columns.len()).map(move |c| (v, c)))
        .collect();
    let cells = exec
        .map(&jobs, |&(variant, c)| -> Result<AblationCell> {
            let (task, horizon) = columns[c];
            let table = tables.iter().find(|t| t.variant == variant).expect("checked above");
            if table.per_play.len() != plays.len() {
                return Err(Error::Shape(format!(
                    "`{variant}` embeddings cover {} plays, dataset has {}",
                    table.per_play.len(),
                    plays.len()
                )));
            }
            let a = &anchors.iter().find(|(k, _)| *k == task).expect("task anchors").1;
            let data = build_probe_dataset(table, a, task.n_classes(), horizon)?;
            let per_seed = splits
                .iter()
                .map(|s| fit_and_score(&data, s, task, &setup.fit).map(|r| r.ap))
                .collect::<Result<Vec<_>>>()?;
            let (mean, std) = mean_std(&per_seed);
            Ok(AblationCell {
                variant,
                task,
                horizon,
                mean,
                std,
                per_seed,
            })
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(AblationReport {
        variants: variants.to_vec(),
        columns,
        cells,
    })
}

impl AblationReport {
    pub fn cell(&self, variant: Variant, task: super::TaskKind, horizon: f64) -> Option<&AblationCell> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.task == task && (c.horizon - horizon).abs() < 1e-9)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,task,horizon_s,ap_mean,ap_std,n_seeds\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{:.1},{:.6},{:.6},{}",
                c.variant,
                c.task,
                c.horizon,
                c.mean,
                c.std,
                c.per_seed.len()
            );
        }
        out
    }

    /// Fixed-width table with the best variant per column wrapped in `**`.
    pub fn to_text_table(&self) -> String {
        let head: Vec<String> = self.columns.iter().map(|(t, h)| format!("{t}@{h:.1}s")).collect();
        let name_w = self.variants.iter().map(|v| v.name().len()).max().unwrap_or(7).max(7);
        let col_w: Vec<usize> = head.iter().map(|h| h.len().max(10)).collect();
        let best: Vec<f64> = self
            .columns
            .iter()
            .map(|&(t, h)| {
                self.variants
                    .iter()
                    .filter_map(|&v| self.cell(v, t, h).map(|c| c.mean))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let mut out = format!("# AP: {ESTIMATOR_NOTE}\n");
        let _ = write!(out, "{:<name_w$}", "variant");
        for (h, w) in head.iter().zip(&col_w) {
            let _ = write!(out, "  {h:>w$}");
        }
        out.push('\n');
        for &v in &self.variants {
            let _ = write!(out, "{:<name_w$}", v.name());
            for (k, &(t, h)) in self.columns.iter().enumerate() {
                let w = col_w[k];
                let text = match self.cell(v, t, h) {
                    Some(c) if c.mean == best[k] => format!("**{:.3}**", c.mean),
                    Some(c) => format!("{:.3}", c.mean),
                    None => "-".to_string(),
                };
                let _ = write!(out, "  {text:>w$}");
            }
            out.push('\n');
        }
        out
    }
}
