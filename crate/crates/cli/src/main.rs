//! `five`: generate the toy benchmark, run an editor over a manifest,
//! evaluate metrics and FiVE-Acc, and merge runs into combined reports.
//!
//! Exit codes: 0 success, 2 validation/setup error, 3 partial failure
//! (some records failed or were excluded while the run completed).

use clap::{Parser, Subcommand};
use five_bench::bench::{generate_toy_benchmark, ToyBenchConfig};
use five_bench::harness::{
    accuracy_csv, cmd_acc, cmd_edit, cmd_eval, cmd_report, AccOptions, EditMethod, EvalOptions,
    MetricKind, MetricValue, ProviderChoice, RunConfig, VlmChoice,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "five", version, about = "Rectified-flow video editing lab and evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic toy benchmark (videos, masks, oracle edits,
    /// tracklets, pristine NIQE model, mock VLM answers).
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 48)]
        height: usize,
    },
    /// Run an editor over every record of a manifest.
    Edit {
        #[arg(long)]
        manifest: PathBuf,
        /// flowedit | pyramid-edit | wan-edit (overrides the config file)
        #[arg(long)]
        method: Option<String>,
        /// JSON run config; defaults are used when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate metrics over a finished edit run.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated metric list, or "default" / "all"
        #[arg(long, default_value = "default")]
        metrics: String,
        /// builtin | http:URL (default: FIVE_PROVIDER_URL or builtin)
        #[arg(long)]
        provider: Option<String>,
        #[arg(long, default_value_t = 8)]
        stride: usize,
        /// Pristine NIQE statistics file (default: niqe_pristine.json next
        /// to the manifest)
        #[arg(long)]
        niqe_model: Option<PathBuf>,
    },
    /// Run the FiVE-Acc protocol over a finished edit run.
    Acc {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// mock:FILE | http:URL (default: FIVE_VLM_URL)
        #[arg(long)]
        vlm: Option<String>,
        #[arg(long, default_value_t = 8)]
        stride: usize,
    },
    /// Merge finished run directories into one combined table.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// csv | json
        #[arg(long, default_value = "csv")]
        format: String,
        /// Comma-separated column subset for CSV output
        #[arg(long)]
        columns: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn worker_count() -> usize {
    std::env::var("FIVE_WORKERS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or(1)
}

fn run(cli: Cli) -> Result<u8, five_bench::Error> {
    match cli.command {
        Command::Generate {
            out,
            seed,
            frames,
            width,
            height,
        } => {
            let config = ToyBenchConfig {
                num_frames: frames,
                width,
                height,
                ..ToyBenchConfig::default()
            };
            let manifest = generate_toy_benchmark(&config, seed, &out)?;
            println!(
                "generated {} videos, {} edit records at {}",
                manifest.videos.len(),
                manifest.edits.len(),
                out.display()
            );
            Ok(0)
        }
        Command::Edit {
            manifest,
            method,
            config,
            seed,
            out,
        } => {
            let mut run_config = match (&config, &method) {
                (Some(path), _) => RunConfig::load(path)?,
                (None, Some(m)) => RunConfig::new(EditMethod::parse(m)?),
                (None, None) => {
                    return Err(five_bench::Error::Config(
                        "either --config or --method is required".into(),
                    ))
                }
            };
            if let Some(m) = &method {
                run_config.method = EditMethod::parse(m)?;
            }
            if let Some(s) = seed {
                run_config.seed = s;
            }
            let outcome = cmd_edit(&manifest, &run_config, &out, worker_count())?;
            println!(
                "edited {} records ({} failed) -> {}",
                outcome.ok.len() + outcome.failed.len(),
                outcome.failed.len(),
                out.display()
            );
            for (id, err) in &outcome.failed {
                eprintln!("  {id}: {err}");
            }
            Ok(if outcome.failed.is_empty() { 0 } else { 3 })
        }
        Command::Eval {
            run,
            manifest,
            metrics,
            provider,
            stride,
            niqe_model,
        } => {
            let provider = match provider.or_else(|| std::env::var("FIVE_PROVIDER_URL").ok()) {
                Some(p) => ProviderChoice::parse(&p)?,
                None => ProviderChoice::Builtin,
            };
            let options = EvalOptions {
                metrics: MetricKind::parse_list(&metrics)?,
                provider,
                stride,
                niqe_model,
            };
            let report = cmd_eval(&run, &manifest, &options)?;
            print!("{}", report.to_csv());
            let partial = report.items.iter().any(|item| {
                item.metrics
                    .values()
                    .any(|v| matches!(v, MetricValue::Unavailable { .. }))
            });
            Ok(if partial { 3 } else { 0 })
        }
        Command::Acc {
            run,
            manifest,
            vlm,
            stride,
        } => {
            let vlm = match vlm.or_else(|| std::env::var("FIVE_VLM_URL").ok()) {
                Some(v) => VlmChoice::parse(&v)?,
                None => {
                    return Err(five_bench::Error::Config(
                        "--vlm (or FIVE_VLM_URL) is required".into(),
                    ))
                }
            };
            let options = AccOptions { vlm, stride };
            let report = cmd_acc(&run, &manifest, &options)?;
            // cmd_acc wrote acc_report.csv with the run's method name
            let csv = std::fs::read_to_string(run.join("acc_report.csv"))
                .unwrap_or_else(|_| accuracy_csv("unknown", &report));
            print!("{csv}");
            Ok(if report.invalid_items > 0 { 3 } else { 0 })
        }
        Command::Report {
            runs,
            format,
            columns,
            out,
        } => {
            let combined = cmd_report(&runs, None)?;
            let columns: Option<Vec<String>> =
                columns.map(|c| c.split(',').map(|s| s.trim().to_string()).collect());
            if combined.version_mismatch {
                eprintln!("warning: runs were produced by different tool versions");
            }
            let text = match format.as_str() {
                "csv" => combined.to_csv(columns.as_deref()),
                "json" => serde_json::to_string_pretty(&combined)?,
                other => {
                    return Err(five_bench::Error::Config(format!(
                        "unknown format {other:?} (use csv or json)"
                    )))
                }
            };
            match out {
                Some(path) => std::fs::write(&path, text)
                    .map_err(|e| five_bench::Error::io(path.display().to_string(), e))?,
                None => print!("{text}"),
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
