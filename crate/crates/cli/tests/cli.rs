use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--set",
    "generator.rig=\"minimal5\"",
    "--set",
    "generator.n_plays=100",
    "--set",
    "generator.n_steps=30",
    "--set",
    "generator.margin=8",
    "--set",
    "encoder.widths=[4, 4]",
    "--set",
    "encoder.kernels=[2, 2]",
    "--set",
    "encoder.strides=[2, 3]",
    "--set",
    "encoder.d_r=4",
    "--set",
    "transformer.width=8",
    "--set",
    "transformer.heads=2",
    "--set",
    "transformer.layers=1",
    "--set",
    "trainer.epochs=1",
    "--set",
    "probe.seeds=[0, 1]",
    "--set",
    "probe.efficiency_seeds=[0]",
    "--set",
    "probe.horizons.shot_taker=[1.6, 0.8]",
    "--set",
    "probe.horizons.assist=[1.6, 0.8]",
    "--set",
    "probe.horizons.pick=[0.6, 0.0]",
];

fn skeletrack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skeletrack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tiny(args: &[&str]) -> Output {
    let mut all: Vec<&str> = TINY.to_vec();
    all.extend_from_slice(args);
    skeletrack(&all)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn dump_defaults_lists_every_section() {
    let o = skeletrack(&["--dump-defaults"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    for key in [
        "generator.seed = 7",
        "trainer.alpha = 0.5",
        "objectives.delta_past = 2.0",
        "encoder.strides = [2, 3, 1, 1, 1]",
        "probe.eval_fraction = 0.5",
    ] {
        assert!(text.contains(key), "missing `{key}` in\n{text}");
    }
    let o = skeletrack(&["--dump-defaults", "--set", "trainer.epochs=3"]);
    assert!(stdout(&o).contains("trainer.epochs = 3"));
}

#[test]
fn bad_settings_exit_with_code_two_and_name_the_field() {
    let o = skeletrack(&["--set", "trainer.alpha=1.5", "--dump-defaults"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("trainer.alpha"), "{}", stderr(&o));

    let o = skeletrack(&["--set", "encoder.strides=[2, 2, 1, 1, 1]", "--dump-defaults"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("encoder.strides"), "{}", stderr(&o));

    let o = skeletrack(&["--variant", "baseline", "--dump-defaults"]);
    assert_eq!(o.status.code(), Some(2));

    let o = skeletrack(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));

    let o = skeletrack(&[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn generate_is_reproducible_and_counts_events() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.skd");
    let b = dir.path().join("b.skd");
    let o = tiny(&["generate", "--output", s(&a)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("wrote 100 plays"));
    assert!(out.contains("shot_attempt"));
    assert!(dir.path().join("a.labels.csv").is_file());
    tiny(&["generate", "--output", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let plays = skeletrack::play::load_dataset(&a).unwrap();
    let total: u64 = plays.iter().map(|p| p.events.iter().map(|&v| u64::from(v)).sum::<u64>()).sum();
    let printed: u64 = out
        .lines()
        .skip_while(|l| !l.starts_with("event counts"))
        .skip(1)
        .take(skeletrack::play::N_EVENTS)
        .map(|l| l.split_whitespace().last().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(printed, total);

    let c = dir.path().join("c.skd");
    tiny(&["--seed", "8", "generate", "--output", s(&c)]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn pretrain_then_probe_writes_the_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("plays.skd");
    assert_eq!(tiny(&["generate", "--output", s(&data)]).status.code(), Some(0));

    let full = dir.path().join("full.ckpt");
    let o = tiny(&["pretrain", "--data", s(&data), "--output", s(&full)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("full.loss.csv")).unwrap();
    assert!(csv.starts_with("step,l_traj,l_events,l_total\n"));
    assert_eq!(csv.lines().count(), 1 + 13);

    let pos = dir.path().join("pos.ckpt");
    let o = tiny(&["--variant", "position_only", "pretrain", "--data", s(&data), "--output", s(&pos)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let meta = skeletrack::train::read_checkpoint_meta(&pos).unwrap();
    assert_eq!(meta.variant.name(), "position_only");

    let o = tiny(&["--set", "trainer.alpha=-0.1", "pretrain", "--data", s(&data), "--output", s(&pos)]);
    assert_eq!(o.status.code(), Some(2));

    let report = dir.path().join("report");
    let o = tiny(&["probe", "--data", s(&data), "--checkpoint", s(&full), "--output", s(&report)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for task in ["shot_taker", "pick", "assist", "shot_location", "shot_type"] {
        let ap = std::fs::read_to_string(report.join("full").join(format!("ap_{task}.csv"))).unwrap();
        assert!(ap.starts_with("horizon_s,ap_mean,ap_std,n_seeds\n"));
        assert!(report.join("full").join(format!("pr_{task}.csv")).is_file());
    }
    assert!(report.join("full/efficiency.csv").is_file());

    let o = tiny(&[
        "probe",
        "--data",
        s(&data),
        "--checkpoint",
        s(&full),
        "--checkpoint",
        s(&pos),
        "--output",
        s(&report),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let table = std::fs::read_to_string(report.join("report.txt")).unwrap();
    assert!(table.contains("position_only") && table.contains("**"));
    let csv = std::fs::read_to_string(report.join("report.csv")).unwrap();
    assert!(csv.lines().skip(1).all(|l| l.starts_with("full,") || l.starts_with("position_only,")));

    let missing = dir.path().join("nope.ckpt");
    let o = tiny(&["probe", "--data", s(&data), "--checkpoint", s(&missing), "--output", s(&report)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nope.ckpt"), "{}", stderr(&o));
}

#[test]
fn verify_passes_clean_and_fails_under_fault_injection() {
    let o = skeletrack(&["verify"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("0 failed"));

    let o = skeletrack(&["verify", "--fault", "mask_own_lookahead"]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.starts_with("FAIL attention_mask")), "{out}");
    assert!(out.lines().filter(|l| l.starts_with("FAIL")).count() == 1);

    let o = skeletrack(&["verify", "--fault", "nonsense"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mask_export_is_bit_packed() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mask.bin");
    let o = skeletrack(&["mask", "--steps", "3", "--players", "2", "--output", s(&path)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let bytes = std::fs::read(&path).unwrap();
    // 2*3*2 + 2 = 14 rows of 14 bits -> 2 bytes each
    assert_eq!(bytes.len(), 14 * 2);
    let m = skeletrack::transformer::unpack_mask(&bytes, 14, 14).unwrap();
    assert_eq!(m, skeletrack::transformer::build_attention_mask(3, 2).unwrap().allowed);
}
