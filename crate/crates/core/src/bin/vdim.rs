//! Command-line entry point: pretraining, fine-tuning, evaluation, ablation
//! grids, synthetic-dataset export, and the selfcheck gate.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vdim::config::{DatasetSource, RunConfig};
use vdim::downstream::{
    ablation_grid, evaluate, finetune, load_downstream, save_downstream, write_ablation_csv, FinetuneRun,
};
use vdim::error::{Result, VdimError};
use vdim::pretrain::{pretrain, PretrainRun, TrainState};
use vdim::video_io::{export_frame_directory, generate_synthetic_dataset, load_frame_directory_dataset, DatasetSplit};

#[derive(Parser)]
#[command(name = "vdim", version, about = "Multi-view contrastive video pretraining")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides config and VDIM_OUTPUT_DIR).
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Run seed (overrides the config's `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Self-supervised pretraining on the configured dataset.
    Pretrain {
        #[command(flatten)]
        common: CommonArgs,
        /// Resume from an existing pretrain checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Supervised fine-tuning from a pretrain checkpoint, then evaluation.
    Finetune {
        #[command(flatten)]
        common: CommonArgs,
        /// Pretrain checkpoint to start from; omitted = random init.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a fine-tuned checkpoint on a split.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split name: train or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Fine-tuning ablation grid from a shared pretrain checkpoint.
    Ablate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Axes spec: key=v1,v2,...;key2=w1,w2,...
        #[arg(long)]
        axes: String,
    },
    /// Materialize the synthetic dataset in the frame-directory layout.
    Synthesize {
        #[command(flatten)]
        common: CommonArgs,
        /// Destination (default: <output_dir>/dataset).
        #[arg(long)]
        dest: Option<PathBuf>,
    },
    /// Run the fast invariant suite.
    Selfcheck,
}

struct LoadedRun {
    config: RunConfig,
    hash: String,
    out_dir: PathBuf,
}

/// Dot-path config overrides (`--section.field=value`) are split off ahead
/// of normal flag parsing so they can appear anywhere on the command line.
fn extract_overrides(args: impl Iterator<Item = String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut plain = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        let is_override = arg.strip_prefix("--").and_then(|rest| {
            let (key, value) = rest.split_once('=')?;
            let dotted = key.split('.').collect::<Vec<_>>();
            let well_formed = dotted.len() >= 2
                && dotted.iter().all(|seg| {
                    !seg.is_empty() && seg.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
                });
            well_formed.then(|| (key.to_string(), value.to_string()))
        });
        match is_override {
            Some(kv) => overrides.push(kv),
            None => plain.push(arg),
        }
    }
    (plain, overrides)
}

fn load_run(common: &CommonArgs, overrides: &[(String, String)]) -> Result<LoadedRun> {
    let mut config = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for (key, value) in overrides {
        config.apply_override(key, value)?;
    }
    if let Some(dir) = &common.output_dir {
        config.output_dir = Some(dir.clone());
    }
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    config.validate()?;
    let out_dir = config.resolve_output_dir();
    std::fs::create_dir_all(&out_dir)?;
    config.write_resolved(&out_dir)?;
    let hash = config.content_hash();
    Ok(LoadedRun { config, hash, out_dir })
}

fn load_splits(config: &RunConfig) -> Result<(DatasetSplit, DatasetSplit)> {
    match config.dataset.source {
        DatasetSource::Synthetic => generate_synthetic_dataset(&config.dataset.synthetic),
        DatasetSource::FrameDir => {
            let fd = &config.dataset.frame_dir;
            let train = load_frame_directory_dataset(&fd.root, &fd.manifest, &fd.train_split, fd.resize, fd.fps)?;
            let test = load_frame_directory_dataset(&fd.root, &fd.manifest, &fd.test_split, fd.resize, fd.fps)?;
            Ok((train, test))
        }
    }
}

fn parse_axes(spec: &str) -> Result<Vec<(String, Vec<String>)>> {
    let mut axes = Vec::new();
    for part in spec.split(';').filter(|p| !p.trim().is_empty()) {
        let (key, values) = part
            .split_once('=')
            .ok_or_else(|| VdimError::Config(format!("axis `{part}` must look like key=v1,v2")))?;
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(VdimError::Config(format!("axis `{key}` has no values")));
        }
        axes.push((key.trim().to_string(), values));
    }
    if axes.is_empty() {
        return Err(VdimError::Config("no ablation axes given".into()));
    }
    Ok(axes)
}

fn cmd_pretrain(common: &CommonArgs, overrides: &[(String, String)], resume: &Option<PathBuf>) -> Result<()> {
    let run = load_run(common, overrides)?;
    let (train, _test) = load_splits(&run.config)?;
    let resumed = match resume {
        Some(path) => Some(TrainState::resume(path, &run.config.pretrain)?),
        None => None,
    };
    let ctx = PretrainRun {
        dataset: &train,
        view: run.config.view.clone(),
        cfg: run.config.pretrain.clone(),
        encoder_spec: run.config.encoder.build_spec()?,
        seed: run.config.seed,
        out_dir: run.out_dir.clone(),
        config_hash: run.hash.clone(),
        quiet: false,
    };
    let mut state = pretrain(&ctx, resumed)?;
    let final_path = run.out_dir.join(format!("ckpt_{}", state.step));
    state.save(&final_path, &run.hash)?;
    println!("pretrained {} steps; checkpoint at {}", state.step, final_path.display());
    Ok(())
}

fn cmd_finetune(common: &CommonArgs, overrides: &[(String, String)], checkpoint: &Option<PathBuf>) -> Result<()> {
    let run = load_run(common, overrides)?;
    let (train, test) = load_splits(&run.config)?;
    let pretrained = match checkpoint {
        Some(path) => TrainState::resume(path, &run.config.pretrain)?,
        None => TrainState::init(run.config.encoder.build_spec()?, &run.config.pretrain, run.config.seed)?,
    };
    let ft = FinetuneRun {
        train_split: &train,
        cfg: run.config.finetune.clone(),
        seed: run.config.seed,
        out_dir: run.out_dir.clone(),
        config_hash: run.hash.clone(),
        quiet: false,
    };
    let mut model = finetune(&pretrained, &ft)?;
    let ckpt_path = run.out_dir.join(format!("finetuned_{}", run.config.finetune.steps));
    save_downstream(
        &ckpt_path,
        &mut model,
        &run.config.finetune,
        run.config.finetune.steps,
        &run.hash,
        train.class_count,
        run.config.seed,
    )?;
    let report = evaluate(
        &mut model,
        &test,
        &run.config.finetune,
        &run.hash,
        &ckpt_path.display().to_string(),
    )?;
    let report_path = run.out_dir.join("eval_report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report).map_err(std::io::Error::from)?)?;
    println!(
        "finetuned {} steps; test accuracy {:.4}; report at {}",
        run.config.finetune.steps,
        report.video_accuracy,
        report_path.display()
    );
    Ok(())
}

fn cmd_evaluate(common: &CommonArgs, overrides: &[(String, String)], checkpoint: &PathBuf, split: &str) -> Result<()> {
    let run = load_run(common, overrides)?;
    let (train, test) = load_splits(&run.config)?;
    let chosen = match split {
        "train" => &train,
        "test" => &test,
        other => return Err(VdimError::Config(format!("unknown split `{other}`"))),
    };
    let (mut model, meta) = load_downstream(checkpoint, &run.config.finetune)?;
    if chosen.class_count != meta.class_count {
        return Err(VdimError::Config(format!(
            "checkpoint has {} classes but split `{split}` has {}",
            meta.class_count, chosen.class_count
        )));
    }
    let report = evaluate(
        &mut model,
        chosen,
        &run.config.finetune,
        &run.hash,
        &checkpoint.display().to_string(),
    )?;
    let report_path = run.out_dir.join(format!("eval_report_{split}.json"));
    std::fs::write(&report_path, serde_json::to_string_pretty(&report).map_err(std::io::Error::from)?)?;
    println!("{split} accuracy {:.4}; report at {}", report.video_accuracy, report_path.display());
    Ok(())
}

fn cmd_ablate(common: &CommonArgs, overrides: &[(String, String)], checkpoint: &Option<PathBuf>, axes_spec: &str) -> Result<()> {
    let run = load_run(common, overrides)?;
    let axes = parse_axes(axes_spec)?;
    let (train, test) = load_splits(&run.config)?;
    let pretrained = match checkpoint {
        Some(path) => TrainState::resume(path, &run.config.pretrain)?,
        None => TrainState::init(run.config.encoder.build_spec()?, &run.config.pretrain, run.config.seed)?,
    };
    let cells = ablation_grid(
        &pretrained,
        &train,
        &test,
        &run.config.finetune,
        &axes,
        run.config.seed,
        &run.out_dir,
        &run.hash,
        false,
    )?;
    let csv_path = run.out_dir.join("ablation.csv");
    write_ablation_csv(&csv_path, &axes, &cells)?;
    println!("ablation table at {}", csv_path.display());

    if axes.len() == 2 {
        // cells enumerate axis 2 fastest; lay rows out by the second axis
        let (rows, cols) = (axes[1].1.len(), axes[0].1.len());
        let mut grid = vec![vec![None; cols]; rows];
        for (idx, cell) in cells.iter().enumerate() {
            let row = idx % rows;
            let col = idx / rows;
            grid[row][col] = cell.test_acc;
        }
        let png = run.out_dir.join("ablation_heatmap.png");
        vdim::plot::save_heatmap(&png, &grid)?;
        println!("heatmap at {}", png.display());
    }
    Ok(())
}

fn cmd_synthesize(common: &CommonArgs, overrides: &[(String, String)], dest: &Option<PathBuf>) -> Result<()> {
    let run = load_run(common, overrides)?;
    if run.config.dataset.source != DatasetSource::Synthetic {
        return Err(VdimError::Config("synthesize requires dataset.source = \"synthetic\"".into()));
    }
    let (train, test) = generate_synthetic_dataset(&run.config.dataset.synthetic)?;
    let dest = dest.clone().unwrap_or_else(|| run.out_dir.join("dataset"));
    let manifest = export_frame_directory(&dest, &[&train, &test])?;
    println!(
        "wrote {} train / {} test videos; manifest at {}",
        train.len(),
        test.len(),
        manifest.display()
    );
    Ok(())
}

fn run(cli: Cli, overrides: &[(String, String)]) -> Result<()> {
    match &cli.command {
        Command::Pretrain { common, resume } => cmd_pretrain(common, overrides, resume),
        Command::Finetune { common, checkpoint } => cmd_finetune(common, overrides, checkpoint),
        Command::Evaluate { common, checkpoint, split } => cmd_evaluate(common, overrides, checkpoint, split),
        Command::Ablate { common, checkpoint, axes } => cmd_ablate(common, overrides, checkpoint, axes),
        Command::Synthesize { common, dest } => cmd_synthesize(common, overrides, dest),
        Command::Selfcheck => {
            if vdim::selfcheck::run_selfcheck() {
                Ok(())
            } else {
                Err(VdimError::invalid("selfcheck failed"))
            }
        }
    }
}

fn main() -> ExitCode {
    let (plain, overrides) = extract_overrides(std::env::args());
    let cli = match Cli::try_parse_from(plain) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
