//! Medium-scale pipeline properties: the pretraining objective actually
//! improves its bound on real data, and a frozen pretrained encoder carries
//! linearly separable class information.

use vdim::downstream::{evaluate, finetune, FinetuneConfig, FinetuneRun};
use vdim::encoder::EncoderSpec;
use vdim::metrics::read_metrics;
use vdim::pretrain::{pretrain, PretrainConfig, PretrainRun, TrainState};
use vdim::video_io::synth::{generate_synthetic_dataset, SyntheticMotionSpec};
use vdim::view::ViewConfig;

fn dataset() -> (vdim::video_io::DatasetSplit, vdim::video_io::DatasetSplit) {
    let spec = SyntheticMotionSpec {
        clip_length: 48,
        seed: 4,
        ..Default::default()
    };
    generate_synthetic_dataset(&spec).unwrap()
}

fn view() -> ViewConfig {
    ViewConfig {
        final_length: 16,
        output_size: 64,
        crop_scale: (0.6, 1.0),
        ..ViewConfig::default()
    }
}

fn pretrain_for(steps: u64, dir: &std::path::Path, train: &vdim::video_io::DatasetSplit) -> TrainState {
    let cfg = PretrainConfig {
        steps,
        batch_size: 16,
        head_dim: 64,
        log_interval: 1,
        checkpoint_interval: 0,
        ..Default::default()
    };
    let run = PretrainRun {
        dataset: train,
        view: view(),
        cfg,
        encoder_spec: EncoderSpec::tiny(),
        seed: 2024,
        out_dir: dir.to_path_buf(),
        config_hash: "pipeline".into(),
        quiet: true,
    };
    pretrain(&run, None).unwrap()
}

#[test]
fn pretraining_mi_estimates_rise_over_200_steps() {
    let (train, _) = dataset();
    let tmp = tempfile::tempdir().unwrap();
    let _state = pretrain_for(200, tmp.path(), &train);
    let records = read_metrics(&tmp.path().join("metrics_pretrain.jsonl")).unwrap();
    assert_eq!(records.len(), 200);
    let mi_keys: Vec<String> = records[0]
        .1
        .keys()
        .filter(|k| k.starts_with("mi/"))
        .cloned()
        .collect();
    assert!(!mi_keys.is_empty());
    let mean_mi = |span: &[(u64, serde_json::Map<String, serde_json::Value>)]| -> f64 {
        let mut total = 0.0;
        for (_, obj) in span {
            for k in &mi_keys {
                total += obj[k].as_f64().unwrap();
            }
        }
        total / (span.len() * mi_keys.len()) as f64
    };
    let first = mean_mi(&records[..20]);
    let last = mean_mi(&records[180..]);
    println!("mean MI estimate: first 20 steps {first:.3}, last 20 steps {last:.3}");
    assert!(
        last > first,
        "no learning signal: MI went from {first:.3} to {last:.3}"
    );
}

#[test]
fn frozen_encoder_beats_chance_after_500_steps() {
    let (train, test) = dataset();
    let tmp = tempfile::tempdir().unwrap();
    let state = pretrain_for(400, tmp.path(), &train);
    let cfg = FinetuneConfig {
        views: 1,
        steps: 500,
        batch_size: 16,
        freeze_encoder: true,
        samples_per_video: 4,
        log_interval: 100,
        ..Default::default()
    };
    let run = FinetuneRun {
        train_split: &train,
        cfg: cfg.clone(),
        seed: 31,
        out_dir: tmp.path().join("frozen"),
        config_hash: "pipeline".into(),
        quiet: true,
    };
    let mut model = finetune(&state, &run).unwrap();
    let report = evaluate(&mut model, &test, &cfg, "pipeline", "frozen").unwrap();
    println!("frozen-encoder probe accuracy {:.3}", report.video_accuracy);
    assert!(
        report.video_accuracy > 0.25,
        "frozen-encoder accuracy {:.3} does not beat chance",
        report.video_accuracy
    );
}
