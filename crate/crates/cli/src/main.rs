use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use wscdn::checks::loss_gradient_checks;
use wscdn::data::{generate_dataset, Dataset, DatasetConfig};
use wscdn::eval::write_detections_csv;
use wscdn::nn::Checkpoint;
use wscdn::pipeline::{
    check_checkpoint, emit_plots, evaluate_scenes, model_config, train, write_outputs, DetectorTag, RunLog,
    TrainConfig,
};

#[derive(Parser)]
#[command(name = "wscdn", version, about = "Weakly supervised collaborative detection on synthetic shapes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic shapes dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 400)]
        n_train: usize,
        #[arg(long, default_value_t = 100)]
        n_test: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 64)]
        image_size: usize,
        /// Distractor strokes and blobs per image.
        #[arg(long)]
        distractors: Option<usize>,
        /// Pixel noise amplitude.
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train in weak_only, collaborative or cascade mode.
    Train {
        /// Starting configuration: default or benchmark.
        #[arg(long, default_value = "default")]
        preset: String,
        /// key = value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<u32>,
        #[arg(long)]
        weak_checkpoint: Option<PathBuf>,
        /// Override any option, e.g. `--set beta=0.5`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Evaluate a checkpoint on one split and write its detections.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// I_W, CL_W, CL_S or CS_S.
        #[arg(long)]
        detector: String,
        #[arg(long, default_value = "detections.csv")]
        out: PathBuf,
        #[arg(long, default_value_t = 0.6)]
        nms_threshold: f64,
    },
    /// Draw the mAP chart of a run log.
    Plot {
        #[arg(long)]
        runlog: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of both training losses.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData { out, seed, n_train, n_test, classes, image_size, distractors, noise } => {
            let mut cfg = DatasetConfig { seed, n_train, n_test, n_classes: classes, image_size, ..Default::default() };
            if let Some(d) = distractors {
                cfg.distractors = d;
            }
            if let Some(n) = noise {
                cfg.noise = n;
            }
            let data = generate_dataset(&cfg)?;
            data.save(&out)?;
            println!("wrote {} train and {} test scenes to {}", data.train.len(), data.test.len(), out.display());
        }
        Command::Train { preset, config, mode, dataset, out, seed, epochs, weak_checkpoint, overrides } => {
            let mut cfg = TrainConfig::preset(&preset)?;
            if let Some(path) = &config {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                cfg.apply_text(&text)?;
            }
            if let Some(m) = mode {
                cfg.set("mode", &m)?;
            }
            if let Some(d) = dataset {
                cfg.dataset = d;
            }
            if let Some(o) = out {
                cfg.out_dir = Some(o);
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(w) = weak_checkpoint {
                cfg.weak_checkpoint = Some(w);
            }
            for kv in &overrides {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| wscdn::Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
                cfg.set(k, v)?;
            }
            cfg.validate()?;
            let data = Dataset::load(&cfg.dataset)?;
            let result = train(&cfg, &data)?;
            let dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs").join(cfg.mode.as_str()));
            write_outputs(&cfg, &result, &dir)?;
            print!("{}", result.run_log.to_csv());
            println!("outputs in {}", dir.display());
        }
        Command::Eval { checkpoint, dataset, split, detector, out, nms_threshold } => {
            let tag: DetectorTag = detector.parse()?;
            let ckpt = Checkpoint::load(&checkpoint)?;
            let data = Dataset::load(&dataset)?;
            check_checkpoint(&ckpt, tag, data.config.n_classes)?;
            let cfg = TrainConfig { nms_threshold, ..Default::default() };
            let model = model_config(&cfg, data.config.n_classes);
            let scenes = match split {
                SplitArg::Train => &data.train,
                SplitArg::Test => &data.test,
            };
            let r = evaluate_scenes(&model, &ckpt.params, scenes, tag, data.config.seed)?;
            write_detections_csv(&out, &r.detections)?;
            println!("detector,split,map,corloc,detections");
            let name = match split {
                SplitArg::Train => "train",
                SplitArg::Test => "test",
            };
            println!("{tag},{name},{:.6},{:.6},{}", r.map, r.corloc, r.detections.len());
        }
        Command::Plot { runlog, out } => {
            let text = std::fs::read_to_string(&runlog).with_context(|| format!("reading {}", runlog.display()))?;
            let log = RunLog::from_csv(&text)?;
            if emit_plots(&log, &out)? {
                println!("wrote {}", out.join("map.svg").display());
            }
        }
        Command::Gradcheck { instances, seed, tolerance } => {
            let checks = loss_gradient_checks(instances, seed)?;
            let mut worst: f64 = 0.0;
            for c in &checks {
                println!(
                    "instance {:2} {:6} max rel error {:.3e} over {} coordinates ({} at kinks)",
                    c.instance, c.loss, c.report.max_rel_error, c.report.coordinates_checked, c.report.kinks
                );
                if c.report.max_rel_error >= tolerance {
                    if let Some((name, k, a, n)) = &c.report.worst {
                        println!("  worst: {name}[{k}] analytic {a:.6e} numeric {n:.6e}");
                    }
                }
                worst = worst.max(c.report.max_rel_error);
            }
            if worst >= tolerance {
                return Err(wscdn::Error::InvalidInput(format!("max relative error {worst:.3e} >= {tolerance:e}")).into());
            }
            println!("ok: max relative error {worst:.3e}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let category = e.downcast_ref::<wscdn::Error>().map_or("error", |w| w.category());
            eprintln!("error [{category}]: {e:#}");
            ExitCode::FAILURE
        }
    }
}
