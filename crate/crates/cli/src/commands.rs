use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skeletrack::autograd::ParamStore;
use skeletrack::config::RunConfig;
use skeletrack::model::{Model, PreparedPlay};
use skeletrack::play::labels::{find_assists, label_picks};
use skeletrack::play::{generate_dataset, load_dataset, save_dataset, PlaySequence, ScenarioKind, SkeletonTopology, EVENT_NAMES};
use skeletrack::probe::{
    data_efficiency_sweep, eval_task_curve, extract_embeddings, run_ablation_matrix, EmbeddingTable,
};
use skeletrack::train::{
    dataset_fingerprint, load_checkpoint, pretrain as train, read_checkpoint_meta, save_checkpoint, write_trace_csv,
    Checkpoint,
};
use skeletrack::transformer::{build_attention_mask, pack_mask};
use skeletrack::verify::{run_verify, Fault, VerifyOptions};
use skeletrack::{Exec, Precision, Real};

use crate::Usage;

fn existing(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        bail!(Usage(format!("{what} not found: {}", path.display())));
    }
    Ok(())
}

fn read_plays(path: &Path) -> Result<Vec<PlaySequence>> {
    existing(path, "dataset")?;
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{suffix}"))
}

pub fn generate(cfg: &RunConfig, output: &Path) -> Result<u8> {
    let topo = SkeletonTopology::preset(&cfg.generator.rig)?;
    let plays = generate_dataset(&cfg.generator.spec(), &topo, Exec::Parallel)?;
    save_dataset(&plays, output).with_context(|| format!("writing {}", output.display()))?;

    let mut labels = String::from("play,scenario,shots,pick_steps,assists\n");
    let mut pick_plays = 0;
    let mut assist_total = 0;
    for (k, p) in plays.iter().enumerate() {
        let picks = label_picks(p, &cfg.labels.pick)?.iter().filter(|&&l| l == 1).count();
        let assists = find_assists(p, &cfg.labels.assist)?.len();
        pick_plays += usize::from(picks > 0);
        assist_total += assists;
        let shots = p.ball()?.shots.len();
        let _ = writeln!(labels, "{k},{},{shots},{picks},{assists}", p.scenario.name());
    }
    let labels_path = sibling(output, "labels.csv");
    fs::write(&labels_path, labels).with_context(|| format!("writing {}", labels_path.display()))?;

    println!("wrote {} plays to {}", plays.len(), output.display());
    for kind in ScenarioKind::ALL {
        let n = plays.iter().filter(|p| p.scenario == kind).count();
        println!("  {:<14} {n}", kind.name());
    }
    println!("event counts:");
    for (e, name) in EVENT_NAMES.iter().enumerate() {
        let n: u64 = plays
            .iter()
            .flat_map(|p| p.events.indexed_iter())
            .filter(|&((_, _, k), _)| k == e)
            .map(|(_, &v)| u64::from(v))
            .sum();
        println!("  {name:<14} {n}");
    }
    println!("plays with a pick: {pick_plays}, assists: {assist_total}");
    println!("labels written to {}", labels_path.display());
    Ok(0)
}

fn identities(plays: &[PlaySequence]) -> Vec<String> {
    plays
        .iter()
        .flat_map(|p| p.player_ids.iter().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn pretrain_at<T: Real>(cfg: &RunConfig, plays: &[PlaySequence], output: &Path) -> Result<u8> {
    let mcfg = cfg.model_config(identities(plays));
    let mut store = ParamStore::<T>::new();
    let model = Model::new(mcfg.clone(), &mut store, &mut ChaCha8Rng::seed_from_u64(cfg.trainer.seed))?;
    let prepared = plays
        .iter()
        .map(|p| model.prepare(p, &cfg.objectives))
        .collect::<skeletrack::Result<Vec<_>>>()?;
    let t0 = Instant::now();
    let out = train(&model, &mut store, &prepared, &cfg.trainer, Exec::Parallel)?;
    let steps = out.steps();
    let ck = Checkpoint {
        model: mcfg,
        trainer: cfg.trainer.clone(),
        windows: cfg.objectives,
        step: steps as u64,
        fingerprint: dataset_fingerprint(plays)?,
        store,
        adam: Some(out.adam.clone()),
    };
    save_checkpoint(&ck, output).with_context(|| format!("writing {}", output.display()))?;
    let csv_path = sibling(output, "loss.csv");
    let file = fs::File::create(&csv_path).with_context(|| format!("writing {}", csv_path.display()))?;
    write_trace_csv(std::io::BufWriter::new(file), &out.trace)?;

    println!(
        "trained `{}` for {} steps in {:.1}s",
        cfg.model.variant,
        steps,
        t0.elapsed().as_secs_f64()
    );
    if let (Some(first), Some(last)) = (out.trace.first(), out.epochs.last()) {
        println!("  first-step loss {:.4}, final-epoch mean {:.4}", first.l_total, last.l_total);
    }
    println!("checkpoint: {}", output.display());
    println!("loss trace: {}", csv_path.display());
    Ok(0)
}

pub fn pretrain(cfg: &RunConfig, data: &Path, output: &Path) -> Result<u8> {
    let plays = read_plays(data)?;
    if let Some(p) = plays.iter().find(|p| p.rig != cfg.generator.rig) {
        bail!(Usage(format!(
            "dataset uses rig `{}` but generator.rig is `{}`",
            p.rig, cfg.generator.rig
        )));
    }
    match cfg.trainer.precision {
        Precision::F32 => pretrain_at::<f32>(cfg, &plays, output),
        Precision::F64 => pretrain_at::<f64>(cfg, &plays, output),
    }
}

fn embed_at<T: Real>(path: &Path, cfg: &RunConfig, plays: &[PlaySequence]) -> Result<EmbeddingTable> {
    let (model, ck) = load_checkpoint::<T>(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    ck.check_dataset(plays)?;
    let prepared = plays
        .iter()
        .map(|p| model.prepare(p, &cfg.objectives))
        .collect::<skeletrack::Result<Vec<PreparedPlay>>>()?;
    Ok(extract_embeddings(&model, &ck.store, &prepared, model.variant(), Exec::Parallel)?)
}

pub fn probe(cfg: &RunConfig, data: &Path, checkpoints: &[PathBuf], output: &Path) -> Result<u8> {
    for c in checkpoints {
        existing(c, "checkpoint")?;
    }
    let plays = read_plays(data)?;
    let mut tables = Vec::new();
    for c in checkpoints {
        let meta = read_checkpoint_meta(c).with_context(|| format!("reading {}", c.display()))?;
        if tables.iter().any(|t: &EmbeddingTable| t.variant == meta.variant) {
            bail!(Usage(format!("two checkpoints are `{}` models", meta.variant)));
        }
        let table = match meta.precision {
            Precision::F32 => embed_at::<f32>(c, cfg, &plays)?,
            Precision::F64 => embed_at::<f64>(c, cfg, &plays)?,
        };
        tables.push(table);
    }
    fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
    let setup = cfg.probe_setup();
    let tasks = cfg.probe.tasks();
    let variants: Vec<_> = tables.iter().map(|t| t.variant).collect();
    let report = run_ablation_matrix(&tables, &variants, &plays, &tasks, &setup, &cfg.probe.seeds, Exec::Parallel)?;
    let write = |name: PathBuf, text: String| fs::write(&name, text).with_context(|| format!("writing {}", name.display()));
    write(output.join("report.csv"), report.to_csv())?;
    let table_text = report.to_text_table();
    write(output.join("report.txt"), table_text.clone())?;

    for table in &tables {
        let dir = output.join(table.variant.name());
        fs::create_dir_all(&dir)?;
        for task in &tasks {
            let mut ap = String::from("horizon_s,ap_mean,ap_std,n_seeds\n");
            for &h in &task.horizons {
                let c = report.cell(table.variant, task.kind, h).expect("every cell is computed");
                let _ = writeln!(ap, "{h:.1},{:.6},{:.6},{}", c.mean, c.std, c.per_seed.len());
            }
            write(dir.join(format!("ap_{}.csv", task.kind)), ap)?;

            let curve = eval_task_curve(table, &plays, task, &setup, cfg.probe.seeds[0])?;
            let mut pr = String::from("horizon_s,class,recall,precision\n");
            for hr in &curve {
                for (class, pts) in &hr.score.curves {
                    for (r, p) in pts {
                        let _ = writeln!(pr, "{:.1},{class},{r:.6},{p:.6}", hr.horizon);
                    }
                }
            }
            write(dir.join(format!("pr_{}.csv", task.kind)), pr)?;
        }
        let rows = data_efficiency_sweep(
            table,
            &plays,
            cfg.probe.efficiency_task,
            cfg.probe.efficiency_horizon,
            &cfg.probe.fractions,
            &setup,
            &cfg.probe.efficiency_seeds,
        )?;
        let mut eff = String::from("task,horizon_s,fraction,ap_mean,ap_std,n_seeds\n");
        for r in rows {
            let n = r.per_seed.iter().flatten().count();
            let _ = writeln!(
                eff,
                "{},{:.1},{},{:.6},{:.6},{n}",
                cfg.probe.efficiency_task, cfg.probe.efficiency_horizon, r.fraction, r.mean, r.std
            );
        }
        write(dir.join("efficiency.csv"), eff)?;
    }
    print!("{table_text}");
    println!("report written to {}", output.display());
    Ok(0)
}

pub fn verify(seed: u64, fault: Option<&str>) -> Result<u8> {
    let fault = match fault {
        Some(name) => Some(Fault::from_name(name).ok_or_else(|| {
            let names: Vec<_> = Fault::ALL.iter().map(|f| f.name()).collect();
            Usage(format!("unknown fault `{name}` (one of {})", names.join(", ")))
        })?),
        None => None,
    };
    let report = run_verify(&VerifyOptions { seed, fault });
    println!("{report}");
    Ok(if report.all_passed() { 0 } else { 1 })
}

pub fn mask(steps: usize, players: usize, output: &Path) -> Result<u8> {
    let m = build_attention_mask(steps, players)?;
    let (rows, cols) = m.allowed.dim();
    fs::write(output, pack_mask(&m.allowed)).with_context(|| format!("writing {}", output.display()))?;
    let allowed = m.allowed.iter().filter(|&&v| v).count();
    println!(
        "{rows} x {cols} mask, {allowed} allowed pairs, rows padded to {} bytes, written to {}",
        cols.div_ceil(8),
        output.display()
    );
    Ok(0)
}
