use clap::{Args, Parser, Subcommand};
use plotvqa::fusion::FusionVariant;
use plotvqa::plot_synth::SplitName;
use plotvqa_cli::commands::{self, IngestArgs, TrainArgs};
use plotvqa_cli::{CliError, ExperimentConfig, Result};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "plotvqa",
    version,
    about = "Yes/no question answering over plots: data, training and evaluation"
)]
struct Cli {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides both the dataset and the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only print warnings and errors.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic plot dataset (train/val/test).
    Generate,
    /// Import a PlotQA-format question file as one split.
    Ingest(IngestCmd),
    /// Train one fusion variant.
    Train(TrainCmd),
    /// Evaluate a run's best checkpoint.
    Eval(EvalCmd),
    /// Evaluate several runs on one split and compare them.
    Compare(CompareCmd),
    /// Rebuild a comparison from predictions written by `eval`.
    Report(ReportCmd),
}

#[derive(Args)]
struct IngestCmd {
    #[arg(long)]
    qa: PathBuf,
    #[arg(long)]
    images: PathBuf,
    #[arg(long, default_value = "test")]
    split: SplitName,
    /// Subsample the majority answer to a 50/50 split.
    #[arg(long)]
    balance: bool,
}

#[derive(Args)]
struct TrainCmd {
    /// Dataset directory (default: paths.data_dir).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    variant: Option<FusionVariant>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Continue the run in --out from its last checkpoint.
    #[arg(long)]
    resume: bool,
    /// Train with and without classifier dropout.
    #[arg(long)]
    dropout_ablation: bool,
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long)]
    run: PathBuf,
    /// Dataset directory (default: the one the run trained on).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: SplitName,
}

#[derive(Args)]
struct CompareCmd {
    #[arg(long, num_args = 2.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: SplitName,
}

#[derive(Args)]
struct ReportCmd {
    #[arg(long, num_args = 2.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value = "test")]
    split: SplitName,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn out_or(cli: &Cli, fallback: impl FnOnce() -> PathBuf) -> PathBuf {
    cli.out.clone().unwrap_or_else(fallback)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Generate => {
            let out = out_or(cli, || cfg.paths.data_dir.clone());
            let summary = commands::generate(&cfg, &out)?;
            println!("wrote {}", out.display());
            print!("{}", commands::format_summary(&summary));
        }
        Command::Ingest(a) => {
            let out = cli
                .out
                .clone()
                .ok_or_else(|| CliError::Usage("ingest needs --out".into()))?;
            let summary = commands::ingest(&IngestArgs {
                qa_file: a.qa.clone(),
                images_dir: a.images.clone(),
                split: a.split,
                balance: a.balance,
                seed: cfg.dataset.seed,
                out: out.clone(),
            })?;
            println!("wrote {}", out.display());
            print!("{}", commands::format_summary(&[summary]));
        }
        Command::Train(a) => {
            let variant = a.variant.unwrap_or(cfg.model.variant);
            let run_dir = out_or(cli, || cfg.paths.runs_dir.join(variant.as_str()));
            let args = TrainArgs {
                data_dir: a.data.clone().unwrap_or_else(|| cfg.paths.data_dir.clone()),
                variant: a.variant,
                run_dir,
                resume: a.resume,
                epochs: a.epochs,
            };
            if a.dropout_ablation {
                let (on, off) = commands::dropout_ablation(&cfg, &args)?;
                for s in [on, off] {
                    print_run(&s);
                }
            } else {
                print_run(&commands::train(&cfg, &args)?);
            }
        }
        Command::Eval(a) => {
            let (report, out) = commands::eval(&a.run, a.data.as_deref(), a.split, cli.out.as_deref())?;
            let m = &report.metrics;
            println!(
                "{} on {} (n={}): accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}",
                report.model,
                report.split,
                m.matrix.total(),
                m.accuracy,
                m.precision,
                m.recall,
                m.f1
            );
            println!("wrote {}", out.display());
        }
        Command::Compare(a) => {
            let out = out_or(cli, || cfg.paths.runs_dir.join("compare"));
            let res = commands::compare(&a.runs, a.data.as_deref(), a.split, &out)?;
            print_compare(&res, &out);
        }
        Command::Report(a) => {
            let out = out_or(cli, || cfg.paths.runs_dir.join("report"));
            let res = commands::report(&a.runs, a.split, &out)?;
            print_compare(&res, &out);
        }
    }
    Ok(())
}

fn print_run(s: &commands::RunSummary) {
    println!(
        "{}: {} epochs, best epoch {} (val accuracy {:.4}, f1 {:.4}) -> {}",
        s.variant,
        s.epochs_completed,
        s.best_epoch,
        s.best_val_accuracy,
        s.best_val_f1,
        s.run_dir.display()
    );
}

fn print_compare(res: &commands::CompareOutput, out: &Path) {
    print!("{}", res.table);
    for o in &res.overlaps {
        print!("{}", commands::overlap_summary(o));
    }
    println!("wrote {}", out.display());
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
