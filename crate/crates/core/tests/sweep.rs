use std::fs;
use std::path::Path;

use clipa_core::ingest::{synth_generate, SynthConfig};
use clipa_core::model::ModelConfig;
use clipa_core::sweep::{
    compute_cost, min_tokens_within_drop, run_sweep, speedup_ratio, CurvePoint, Manifest, RunRecord, ScalingReport,
    ScheduleStage, SweepGrid, MANIFEST,
};
use clipa_core::trainer::StageKind;
use proptest::prelude::*;

fn write_grid(dir: &Path, extra: &str) -> SweepGrid {
    synth_generate(&SynthConfig { records: 128, seed: 1, ..SynthConfig::default() }).unwrap().write(dir.join("train.clpa")).unwrap();
    synth_generate(&SynthConfig { records: 36, seed: 2, ..SynthConfig::default() }).unwrap().write(dir.join("eval.clpa")).unwrap();
    let text = format!(
        r#"
shard = "train.clpa"
eval_shard = "eval.clpa"
seeds = [3]
image_reductions = ["none", "resize:16"]
{extra}

[[model]]
preset = "tiny"
patch_size = 8

[[model]]
preset = "mini"
patch_size = 8

[pretrain]
samples = 32
batch_size = 16
base_lr = 1e-3

[finetune]
samples = 16
batch_size = 16
"#
    );
    fs::write(dir.join("grid.toml"), text).unwrap();
    SweepGrid::load(dir.join("grid.toml")).unwrap()
}

#[test]
fn two_by_two_grid_yields_eight_records_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let grid = write_grid(dir.path(), "workers = 2");
    let out = dir.path().join("out");
    let first = run_sweep(&grid, &out).unwrap();
    assert_eq!(first.trained.len(), 4);
    assert!(first.failed.is_empty(), "{:?}", first.failed);
    assert_eq!(first.records.len(), 8);
    for r in &first.records {
        let full = if r.strategy == "baseline" { 17 } else { 5 };
        assert_eq!(r.img_tokens, full, "{r:?}");
        assert!((0.0..=1.0).contains(&r.top1));
        assert!(r.r1_image_to_text.is_some());
    }

    let manifest = Manifest::read(&out).unwrap();
    assert_eq!(manifest.cells.len(), 4);
    assert!(manifest.cells.keys().all(|k| manifest.is_done(k)));
    let text = fs::read_to_string(out.join(MANIFEST)).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    let sorted = {
        let mut l = lines.clone();
        l.sort();
        l
    };
    assert_eq!(lines, sorted);
    lines.retain(|l| !l.contains("= \"done\""));
    assert!(lines.is_empty(), "{lines:?}");

    let csv = fs::read_to_string(out.join("records.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
    assert!(out.join("report.csv").exists());
    let svgs: Vec<_> = fs::read_dir(out.join("curves")).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(svgs.len(), 2, "{svgs:?}");

    let again = run_sweep(&grid, &out).unwrap();
    assert!(again.trained.is_empty());
    assert_eq!(again.skipped.len(), 4);
    assert_eq!(again.records, first.records);
}

#[test]
fn cumulative_compute_adds_up_per_stage() {
    let dir = tempfile::tempdir().unwrap();
    let grid = write_grid(dir.path(), "");
    let out = run_sweep(&grid, &dir.path().join("out")).unwrap();
    for pair in out.records.chunks(2) {
        let (pre, ft) = (&pair[0], &pair[1]);
        let cfg = grid.models.iter().find(|m| m.preset == pre.model).unwrap().resolve().unwrap();
        assert_eq!((pre.stage.as_str(), ft.stage.as_str()), ("pre-train", "fine-tune"));
        let pre_gf = cfg.flops_estimate(pre.img_tokens, 12);
        assert!((pre.gflops_per_sample - pre_gf).abs() < 1e-15);
        assert!((pre.cumulative_gflops - 32.0 * pre_gf).abs() < 1e-12);
        let ft_gf = cfg.flops_estimate(17, 12);
        assert!((ft.cumulative_gflops - pre.cumulative_gflops - 16.0 * ft_gf).abs() < 1e-12);
    }
}

#[test]
fn grids_without_baselines_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    write_grid(dir.path(), "");
    let text = fs::read_to_string(dir.path().join("grid.toml")).unwrap().replace(r#"["none", "resize:16"]"#, r#"["resize:16"]"#);
    fs::write(dir.path().join("bad.toml"), text).unwrap();
    assert!(SweepGrid::load(dir.path().join("bad.toml")).is_err());
}

fn record(model: &str, strategy: &str, tokens: usize, seed: u64, top1: f64) -> RunRecord {
    RunRecord {
        model: model.into(),
        strategy: strategy.into(),
        image_reduce: if strategy == "baseline" { "none".into() } else { format!("resize:{}", tokens) },
        text_reduce: "none".into(),
        img_tokens: tokens,
        txt_tokens: 32,
        stage: "fine-tune".into(),
        seed,
        top1,
        r1_image_to_text: None,
        r1_text_to_image: None,
        gflops_per_sample: 1.0,
        cumulative_gflops: 1.0,
        wallclock_s: 0.0,
    }
}

#[test]
fn report_averages_seeds_and_finds_min_tokens() {
    let records = vec![
        record("L", "baseline", 197, 0, 0.692),
        record("L", "baseline", 197, 1, 0.692),
        record("L", "resize", 50, 0, 0.683),
        record("L", "resize", 50, 1, 0.695),
        record("L", "resize", 17, 0, 0.662),
        record("L", "resize", 17, 1, 0.662),
    ];
    let rep = ScalingReport::build(&records, StageKind::Finetune, 1.0).unwrap();
    let avg = rep.curves.iter().find(|c| c.seed.is_none() && c.model == "L").unwrap();
    assert!((avg.baseline - 69.2).abs() < 1e-9);
    assert!((rep.drop_at("L", "resize", None, 50).unwrap() - 0.3).abs() < 1e-9);
    assert!((rep.drop_at("L", "resize", Some(0), 50).unwrap() - 0.9).abs() < 1e-9);
    assert!((rep.drop_at("L", "resize", None, 17).unwrap() - 3.0).abs() < 1e-9);
    assert_eq!(avg.min_tokens, 50);
}

fn preset(name: &str) -> ModelConfig {
    ModelConfig::preset(name).unwrap()
}

proptest! {
    #[test]
    fn compute_is_additive_over_stages(
        stages in prop::collection::vec((1u64..1_000_000_000, 2usize..300, 2usize..40), 1..6),
        split in 0usize..6,
    ) {
        let cfg = preset("B/16");
        let sched: Vec<ScheduleStage> = stages.iter().map(|&(s, i, t)| ScheduleStage::new(s, i, t)).collect();
        let k = split.min(sched.len());
        let whole = compute_cost(&cfg, &sched);
        let parts = compute_cost(&cfg, &sched[..k]) + compute_cost(&cfg, &sched[k..]);
        prop_assert!((whole - parts).abs() <= 1e-9 * whole);
    }

    #[test]
    fn speedup_is_antisymmetric(a in 2usize..300, b in 2usize..300) {
        let (s, l) = (preset("S/16"), preset("L/16"));
        let sa = [ScheduleStage::new(1000, a, 32)];
        let sb = [ScheduleStage::new(1000, b, 32)];
        let r = speedup_ratio((&s, &sa), (&l, &sb));
        prop_assert!((r * speedup_ratio((&l, &sb), (&s, &sa)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn min_tokens_shrinks_as_threshold_grows(
        drops in prop::collection::vec(-2.0f64..10.0, 1..8),
        t1 in -1.0f64..5.0,
        dt in 0.0f64..5.0,
    ) {
        let curve: Vec<CurvePoint> =
            drops.iter().enumerate().map(|(i, &d)| CurvePoint { tokens: 10 + 7 * i, drop: d }).collect();
        let strict = min_tokens_within_drop(&curve, t1).unwrap();
        let loose = min_tokens_within_drop(&curve, t1 + dt).unwrap();
        prop_assert!(loose <= strict);
        prop_assert!(curve.iter().any(|p| p.tokens == strict));
    }
}
