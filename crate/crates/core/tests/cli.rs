//! End-to-end command-line behavior at micro scale.

use std::path::Path;
use std::process::Command;

fn vdim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vdim"))
}

fn micro_args(out: &Path) -> Vec<String> {
    vec![
        "--output-dir".into(),
        out.display().to_string(),
        "--dataset.synthetic.clips_per_class=3".into(),
        "--dataset.synthetic.clip_length=40".into(),
        "--pretrain.steps=2".into(),
        "--pretrain.batch_size=2".into(),
        "--pretrain.checkpoint_interval=2".into(),
        "--pretrain.log_interval=1".into(),
        "--finetune.steps=2".into(),
        "--finetune.batch_size=2".into(),
        "--finetune.views=1".into(),
        "--finetune.samples_per_video=2".into(),
        "--finetune.log_interval=1".into(),
    ]
}

#[test]
fn selfcheck_passes_with_exit_zero() {
    let out = vdim().arg("selfcheck").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let text = String::from_utf8_lossy(&out.stdout);
    assert_eq!(text.matches("[PASS]").count(), 4, "{text}");
}

#[test]
fn pretrain_finetune_evaluate_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let out = vdim().arg("pretrain").args(micro_args(&dir)).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("ckpt_2").exists());
    assert!(dir.join("metrics_pretrain.jsonl").exists());
    assert!(dir.join("config_resolved.toml").exists());

    let out = vdim()
        .arg("finetune")
        .args(micro_args(&dir))
        .args(["--checkpoint", dir.join("ckpt_2").to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("finetuned_2").exists());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("eval_report.json")).unwrap()).unwrap();
    assert!(report["video_accuracy"].is_f64());
    assert_eq!(report["clips"].as_array().unwrap().len(), 4); // 4 test videos

    let out = vdim()
        .arg("evaluate")
        .args(micro_args(&dir))
        .args(["--checkpoint", dir.join("finetuned_2").to_str().unwrap(), "--split", "train"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("eval_report_train.json").exists());
}

#[test]
fn corrupt_checkpoint_exits_nonzero_naming_file() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("broken_ckpt");
    std::fs::write(&bad, b"garbage").unwrap();
    let out = vdim()
        .arg("evaluate")
        .args(micro_args(&tmp.path().join("out")))
        .args(["--checkpoint", bad.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("broken_ckpt"), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    let out = vdim().arg("no-such-command").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = vdim().arg("evaluate").output().unwrap(); // missing required --checkpoint
    assert_eq!(out.status.code(), Some(1));
    let out = vdim().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn bad_override_exits_two_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let out = vdim()
        .arg("pretrain")
        .args(["--output-dir", tmp.path().to_str().unwrap()])
        .arg("--pretrain.not_a_knob=5")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not_a_knob"));
}

#[test]
fn ablation_grid_csv_has_axis_product_rows() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("abl");
    let out = vdim()
        .arg("ablate")
        .args(micro_args(&dir))
        .args(["--axes", "initial_lr=1e-3,1e-4;decay_factor=0.5,0.9"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.join("ablation.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 5, "{csv}"); // header + 2x2 grid
    assert!(rows[0].starts_with("initial_lr,decay_factor,test_acc"));
    assert!(dir.join("ablation_heatmap.png").exists());
}

#[test]
fn synthesize_writes_frame_directory_layout() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("synth");
    let out = vdim()
        .arg("synthesize")
        .args([
            "--output-dir",
            dir.to_str().unwrap(),
            "--dataset.synthetic.clips_per_class=2",
            "--dataset.synthetic.clip_length=3",
            "--dataset.synthetic.resolution=[16,16]",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = std::fs::read_to_string(dir.join("dataset/manifest.tsv")).unwrap();
    // one line per video: `dir<TAB>label<TAB>split`
    for line in manifest.lines() {
        let parts: Vec<&str> = line.split('\t').collect();
        assert_eq!(parts.len(), 3, "{line}");
        let video_dir = dir.join("dataset").join(parts[0]);
        assert!(video_dir.join("frame_00000.png").exists());
    }
    assert_eq!(manifest.lines().count(), 8);
}

#[test]
fn resolved_config_reruns_identically() {
    // a command is reproducible from the resolved config it wrote
    let tmp = tempfile::tempdir().unwrap();
    let dir_a = tmp.path().join("a");
    let out = vdim().arg("pretrain").args(micro_args(&dir_a)).output().unwrap();
    assert!(out.status.success());
    let dir_b = tmp.path().join("b");
    let out = vdim()
        .arg("pretrain")
        .args([
            "--config",
            dir_a.join("config_resolved.toml").to_str().unwrap(),
            "--output-dir",
            dir_b.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let loss = |dir: &Path| -> Vec<f64> {
        vdim::metrics::read_metrics(&dir.join("metrics_pretrain.jsonl"))
            .unwrap()
            .iter()
            .map(|(_, o)| o.get("loss").unwrap().as_f64().unwrap())
            .collect()
    };
    assert_eq!(loss(&dir_a), loss(&dir_b));
}
