use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use contexthar::data::{synth_generate, write_csv, write_label_map, LabelMap, Normalizer, SynthSpec, LABEL_MAP_FILE};
use contexthar::experiment::{
    complexity_report, evaluate_recording, load_dataset, run_batch_sweep, run_loso, train_model, write_loso_outputs,
    Dataset, ExperimentConfig, TrainedModel, SWEEP_BATCH_SIZES,
};
use contexthar::metrics::{aggregate_seeds, write_confusion_csv};
use contexthar::models::{load_checkpoint, save_checkpoint, ComplexityReport};
use contexthar::{DataError, Error, Result};

#[derive(Parser)]
#[command(name = "contexthar", version, about = "Sliding-window activity recognition with inter-window context")]
struct Cli {
    /// Log progress (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model on every subject and save it.
    Train {
        #[arg(short, long)]
        config: PathBuf,
        /// Seed for initialization and dropout (default: first configured seed).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dry_run: bool,
    },
    /// Score a saved model on every subject of the configured dataset.
    Evaluate {
        #[arg(short, long)]
        config: PathBuf,
        /// Directory written by `train`.
        #[arg(long)]
        model_dir: PathBuf,
    },
    /// Leave-one-subject-out cross-validation over all configured seeds.
    Loso {
        #[arg(short, long)]
        config: PathBuf,
        /// Train folds on separate threads.
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        dry_run: bool,
    },
    /// LOSO at several train/test batch sizes.
    Sweep {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = SWEEP_BATCH_SIZES)]
        batch_sizes: Vec<usize>,
        #[arg(long)]
        dry_run: bool,
    },
    /// Parameter, FLOP, memory and context-length table for every variant.
    Complexity {
        /// Without a config: 3 channels, 6 classes, 50 Hz, 1 s windows, 0.5 s overlap.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic dataset as per-subject CSV files.
    Synth {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Preset::Separable)]
        preset: Preset,
        #[arg(long, default_value_t = 4)]
        subjects: usize,
        /// Class count for the separable preset (the context preset has 4).
        #[arg(long, default_value_t = 6)]
        classes: usize,
        #[arg(long, default_value_t = 50.0)]
        rate: f64,
        #[arg(long, default_value_t = 300.0)]
        seconds: f64,
        /// Mean activity duration for the context preset.
        #[arg(long, default_value_t = 5.0)]
        segment_seconds: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Separable,
    Context,
}

const REFERENCE_CONFIG: &str = r#"
[data]
dir = "."
sampling_rate = 50.0

[window]
window_seconds = 1.0
overlap_seconds = 0.5
"#;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
        .into()
    }
}

fn print_complexity(rows: &[ComplexityReport]) {
    println!(
        "{:<22} {:>12} {:>16} {:>14} {:>12}",
        "variant", "params", "flops", "memory_bytes", "context_s"
    );
    for r in rows {
        let ctx = r.context_length_seconds.map_or("-".into(), |c| format!("{c}"));
        println!(
            "{:<22} {:>12} {:>16} {:>14} {:>12}{}",
            r.variant.to_string(),
            r.param_count,
            r.flop_estimate,
            r.memory_estimate_bytes,
            ctx,
            r.note.as_ref().map_or(String::new(), |n| format!("  ({n})"))
        );
    }
}

/// Loads config and data, then prints the complexity table for the
/// configured dataset.
fn dry_run(cfg: &ExperimentConfig, ds: &Dataset) -> Result<()> {
    println!(
        "config ok: {} subjects, {} channels, {} classes, variant {}",
        ds.recordings.len(),
        ds.sensor_channels(),
        ds.n_classes,
        cfg.model.variant
    );
    print_complexity(&complexity_report(cfg, ds.sensor_channels(), ds.n_classes)?);
    Ok(())
}

fn prepare_out(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = cfg.resolved_output_dir();
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    Ok(dir)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, dry_run: dry } => {
            let cfg = ExperimentConfig::load(&config)?;
            let ds = load_dataset(&cfg)?;
            if dry {
                return dry_run(&cfg, &ds);
            }
            let seed = seed.unwrap_or(cfg.train.seeds[0]);
            let train: Vec<_> = ds.recordings.iter().collect();
            let trained = train_model(&cfg, ds.n_classes, &train, seed, "all")?;
            let dir = prepare_out(&cfg)?;
            save_checkpoint(&trained.model, &dir.join("model.json"))?;
            let norm_path = dir.join("normalizer.json");
            fs::write(&norm_path, serde_json::to_string_pretty(&trained.normalizer)?).map_err(io_err(&norm_path))?;
            let mut losses = String::from("epoch,lr,loss\n");
            for e in &trained.epochs {
                losses.push_str(&format!("{},{},{}\n", e.epoch, e.lr, e.loss));
            }
            let loss_path = dir.join("losses.csv");
            fs::write(&loss_path, losses).map_err(io_err(&loss_path))?;
            let last = trained.epochs.last().expect("at least one epoch");
            println!("trained {} for {} epochs, final loss {:.5}", cfg.model.variant, trained.epochs.len(), last.loss);
            println!("model written to {}", dir.display());
        }
        Command::Evaluate { config, model_dir } => {
            let cfg = ExperimentConfig::load(&config)?;
            let ds = load_dataset(&cfg)?;
            let model = load_checkpoint(&model_dir.join("model.json"))?;
            let norm_path = model_dir.join("normalizer.json");
            let text = fs::read_to_string(&norm_path).map_err(io_err(&norm_path))?;
            let normalizer: Normalizer = serde_json::from_str(&text)?;
            if model.config().n_classes != ds.n_classes || model.config().sensor_channels != ds.sensor_channels() {
                return Err(Error::Config(format!(
                    "model expects {} channels / {} classes, dataset has {} / {}",
                    model.config().sensor_channels,
                    model.config().n_classes,
                    ds.sensor_channels(),
                    ds.n_classes
                )));
            }
            let trained = TrainedModel {
                model,
                normalizer,
                epochs: Vec::new(),
            };
            let subjects = ds
                .recordings
                .iter()
                .map(|r| evaluate_recording(&trained, r, &cfg, ds.n_classes))
                .collect::<Result<Vec<_>>>()?;
            for s in &subjects {
                println!("{:<12} macro-F1 {:.4}  mAP {}", s.subject_id, s.macro_f1, fmt_opt(s.map));
            }
            let report = aggregate_seeds(vec![(0, subjects)], ds.n_classes, &cfg.eval);
            let dir = prepare_out(&cfg)?;
            let path = dir.join("metrics.json");
            fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(io_err(&path))?;
            write_confusion_csv(&report.confusion, &dir.join("confusion.csv"))?;
            println!("mean macro-F1 {:.4}  mAP {}", report.macro_f1, fmt_opt(report.map));
        }
        Command::Loso {
            config,
            parallel,
            dry_run: dry,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.train.parallel_folds |= parallel;
            let ds = load_dataset(&cfg)?;
            if dry {
                return dry_run(&cfg, &ds);
            }
            let out = run_loso(&cfg, &ds)?;
            let dir = prepare_out(&cfg)?;
            write_loso_outputs(&out, &dir)?;
            for s in &out.report.seeds {
                println!("seed {:<6} macro-F1 {:.4}  mAP {}", s.seed, s.mean_macro_f1, fmt_opt(s.mean_map));
            }
            println!(
                "mean over seeds: macro-F1 {:.4}  mAP {}",
                out.report.macro_f1,
                fmt_opt(out.report.map)
            );
            println!("results written to {}", dir.display());
        }
        Command::Sweep {
            config,
            batch_sizes,
            dry_run: dry,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let ds = load_dataset(&cfg)?;
            if batch_sizes.contains(&0) {
                return Err(Error::Config("batch sizes must be at least 1".into()));
            }
            if dry {
                return dry_run(&cfg, &ds);
            }
            let rows = run_batch_sweep(&cfg, &ds, &batch_sizes)?;
            let dir = prepare_out(&cfg)?;
            let path = dir.join("sweep.json");
            fs::write(&path, serde_json::to_string_pretty(&rows)?).map_err(io_err(&path))?;
            println!("{:>6} {:>10} {:>10} {:>10}", "batch", "macro_f1", "map", "context_s");
            for r in &rows {
                println!(
                    "{:>6} {:>10.4} {:>10} {:>10}{}",
                    r.batch_size,
                    r.macro_f1,
                    fmt_opt(r.map),
                    r.context_length_seconds,
                    r.warning.as_ref().map_or(String::new(), |w| format!("  warning: {w}"))
                );
            }
        }
        Command::Complexity { config, json } => {
            let (cfg, channels, classes) = match config {
                Some(path) => {
                    let cfg = ExperimentConfig::load(&path)?;
                    let ds = load_dataset(&cfg)?;
                    let (c, n) = (ds.sensor_channels(), ds.n_classes);
                    (cfg, c, n)
                }
                None => (ExperimentConfig::from_toml_str(REFERENCE_CONFIG)?, 3, 6),
            };
            let rows = complexity_report(&cfg, channels, classes)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&rows)?);
            } else {
                print_complexity(&rows);
            }
        }
        Command::Synth {
            out,
            preset,
            subjects,
            classes,
            rate,
            seconds,
            segment_seconds,
            seed,
        } => {
            if !(rate > 0.0 && seconds > 0.0 && segment_seconds > 0.0) || subjects == 0 || classes == 0 {
                return Err(Error::Config(
                    "rate, seconds, segment-seconds, subjects and classes must be positive".into(),
                ));
            }
            let spec = match preset {
                Preset::Separable => SynthSpec::separable(subjects, classes, rate, seconds, seed),
                Preset::Context => SynthSpec::context(subjects, rate, seconds, segment_seconds, seed),
            };
            let recs = synth_generate(&spec)?;
            fs::create_dir_all(&out).map_err(io_err(&out))?;
            let map: LabelMap = (0..spec.n_classes).map(|c| (format!("class_{c}"), c)).collect();
            write_label_map(&map, &out.join(LABEL_MAP_FILE))?;
            for r in &recs {
                write_csv(r, &out.join(format!("{}.csv", r.subject_id)), Some(&map))?;
            }
            let spec_path = out.join("synth_spec.json");
            fs::write(&spec_path, serde_json::to_string_pretty(&spec)?).map_err(io_err(&spec_path))?;
            println!("wrote {} subjects to {}", recs.len(), out.display());
        }
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |x| format!("{x:.4}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
