use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kws::data::{
    import_speech_commands, mix, read_manifest, sample_records, sample_subset, toy_generate, write_manifest, DataError,
    SpeechCommandsSplit, ToyOptions,
};
use kws::exec::limit_global_threads;
use kws::experiment::{
    build_report, featurize_manifest, interpolate_requirement, load_config, load_eval_data, read_curve_csv,
    run_evaluation, run_sweep, run_training, training_manifest, write_report, CountScale, ExperimentError, Metric,
    SweepConfig, TrainConfig, TrainData,
};
use kws::experiment::load_features;
use kws::{Error, Exec, Result};

#[derive(Debug, Parser)]
#[command(name = "kws", version, about = "Custom keyword spotting: train, evaluate and sweep data resources")]
struct Cli {
    /// JSON config (train and sweep).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Run every loop on the calling thread.
    #[arg(long, global = true)]
    single_thread: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write one feature-cache file per manifest utterance into OUT.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Build a manifest from an extracted Speech Commands directory.
    ImportSpeechCommands {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SpeechCommandsSplit,
    },
    /// Generate the synthetic tone-phrase corpus.
    ToyGenerate {
        #[arg(long, default_value_t = 20)]
        phrases: usize,
        #[arg(long, default_value_t = 40)]
        per_phrase: usize,
        #[arg(long, default_value_t = 0)]
        phrase_offset: usize,
    },
    /// Subsample a manifest, by phrase (`--phrases`/`--per-phrase`) or by record count (`--count`).
    Sample {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, requires = "per_phrase", conflicts_with = "count")]
        phrases: Option<usize>,
        #[arg(long, requires = "phrases")]
        per_phrase: Option<usize>,
        #[arg(long, required_unless_present = "phrases")]
        count: Option<usize>,
    },
    /// Concatenate a real and a synthetic manifest.
    Mix {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        tts: PathBuf,
    },
    /// Train a model; writes checkpoints, log.csv and the effective config.
    Train {
        #[arg(long)]
        real: Option<PathBuf>,
        #[arg(long)]
        tts: Option<PathBuf>,
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Evaluate a checkpoint on a manifest; writes metric, DET and histogram CSVs.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = kws::metrics::DEFAULT_ENROLL)]
        n_enroll: usize,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Run a resource sweep described by --config.
    Sweep,
    /// Real-data count needed to reach a target metric, from a (real_count, eer_percent, auc_percent) CSV.
    Interpolate {
        #[arg(long)]
        curve: PathBuf,
        #[arg(long, value_enum, default_value = "eer")]
        metric: Metric,
        #[arg(long)]
        target: f64,
        #[arg(long, value_enum, default_value = "raw")]
        scale: CountScale,
    },
    /// Merge sweep tables into report.json plus trend and DET CSVs.
    Report { inputs: Vec<PathBuf> },
}

fn manifest_out(out: &Path) -> PathBuf {
    out.join("manifest.jsonl")
}

fn run(cli: Cli) -> Result<()> {
    let exec = Exec::from_single_thread(cli.single_thread);
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out.as_path();
    match cli.command {
        Command::Featurize { manifest } => {
            let m = read_manifest(&manifest)?;
            let report = featurize_manifest(&m, out, exec)?;
            println!("written,reused,failed");
            println!("{},{},{}", report.written, report.reused, report.failures.len());
            if !report.failures.is_empty() {
                for (p, e) in &report.failures {
                    eprintln!("{}: {e}", p.display());
                }
                return Err(DataError::Invalid(format!("{} files failed", report.failures.len())).into());
            }
        }
        Command::ImportSpeechCommands { root, split } => {
            let m = import_speech_commands(&root, split)?;
            write_manifest(&m, &manifest_out(out))?;
            println!("records,phrases");
            println!("{},{}", m.len(), m.phrase_index().len());
        }
        Command::ToyGenerate {
            phrases,
            per_phrase,
            phrase_offset,
        } => {
            let m = toy_generate(
                &ToyOptions {
                    n_phrases: phrases,
                    per_phrase,
                    seed,
                    phrase_offset,
                },
                out,
            )?;
            println!("records,phrases");
            println!("{},{}", m.len(), phrases);
        }
        Command::Sample {
            manifest,
            phrases,
            per_phrase,
            count,
        } => {
            let m = read_manifest(&manifest)?;
            let sub = match (phrases, per_phrase, count) {
                (Some(n), Some(pp), _) => sample_subset(&m, n, pp, seed)?,
                (_, _, Some(c)) => sample_records(&m, c, seed)?,
                _ => unreachable!("clap enforces one mode"),
            };
            write_manifest(&sub.absolutized(), &manifest_out(out))?;
        }
        Command::Mix { real, tts } => {
            let m = mix(&read_manifest(&real)?, &read_manifest(&tts)?)?;
            write_manifest(&m, &manifest_out(out))?;
        }
        Command::Train { real, tts, eval, steps } => {
            let mut config: TrainConfig = load_config(cli.config.as_deref())?;
            config.real_manifest = real.or(config.real_manifest);
            config.tts_manifest = tts.or(config.tts_manifest);
            config.eval_manifest = eval.or(config.eval_manifest);
            if let Some(s) = steps {
                config.max_steps = s;
            }
            if let Some(s) = cli.seed {
                config.seed = s;
            }
            config.single_thread |= cli.single_thread;
            config.checkpoint_dir = Some(out.to_path_buf());
            let exec = config.exec();
            let manifest = training_manifest(&config)?;
            let cache = config.cache_dir.as_deref();
            let data = TrainData::new(load_features(&manifest, cache, exec)?, &manifest.phrases());
            let eval = match &config.eval_manifest {
                Some(p) => Some(load_eval_data(&read_manifest(p)?, cache, exec)?),
                None => None,
            };
            let (outcome, report) = run_training(&config, &data, eval.as_ref(), out, exec)?;
            let last = outcome.log.last().map_or(f64::NAN, |r| r.loss);
            println!("steps,final_loss,eer_percent,auc_percent");
            let (e, a) = report.map_or((String::new(), String::new()), |r| {
                (format!("{:.6}", r.mean_eer), format!("{:.6}", r.mean_auc))
            });
            println!("{},{last:.6},{e},{a}", outcome.log.len());
        }
        Command::Evaluate {
            checkpoint,
            manifest,
            n_enroll,
            cache,
        } => {
            let data = load_eval_data(&read_manifest(&manifest)?, cache.as_deref(), exec)?;
            let report = run_evaluation(&checkpoint, &data, n_enroll, seed, out, exec)?;
            println!("phrases,eer_percent,auc_percent");
            println!("{},{:.6},{:.6}", report.per_phrase.len(), report.mean_eer, report.mean_auc);
        }
        Command::Sweep => {
            let Some(path) = cli.config.as_deref() else {
                return Err(ExperimentError::Config("sweep needs --config".into()).into());
            };
            let mut config: SweepConfig = load_config(Some(path))?;
            if let Some(s) = cli.seed {
                config.seed = s;
            }
            config.train.single_thread |= cli.single_thread;
            let outcome = run_sweep(&config, out, config.train.exec())?;
            println!("cells,failed");
            println!("{},{}", outcome.rows.len(), outcome.failures());
        }
        Command::Interpolate {
            curve,
            metric,
            target,
            scale,
        } => {
            let file = std::fs::File::open(&curve).map_err(|source| Error::Io {
                context: format!("reading {}", curve.display()),
                source,
            })?;
            let points = read_curve_csv(file).map_err(|e| ExperimentError::Parse {
                path: curve.display().to_string(),
                reason: e.to_string(),
            })?;
            let r = interpolate_requirement(&points, metric, target, scale).map_err(ExperimentError::from)?;
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "target,real_count,exact");
            let _ = writeln!(stdout, "{target},{},{:.3}", r.count, r.exact);
        }
        Command::Report { inputs } => {
            let report = build_report(&inputs)?;
            write_report(&report, out)?;
            println!("rows,det_points");
            println!("{},{}", report.rows.len(), report.det.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if cli.single_thread {
        limit_global_threads(1);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
