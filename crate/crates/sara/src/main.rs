use anyhow::Result;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "sara", version, about = "Gaze-driven reading assistance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline over a recorded gaze file and write the event log.
    Replay {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's output_log.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Serve live sessions over WebSocket at /ws.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 8787)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Generate a synthetic session with ground-truth labels.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Episode spec `kind:anchor[:key=value,...]`, e.g. `word:17:factor=5`
        /// or `paragraph:1:regressions=3,back=4`. Repeatable; `;` separates
        /// several specs in one argument.
        #[arg(long)]
        inject: Vec<String>,
        #[arg(long, default_value = "sim-gaze.jsonl")]
        gaze_out: PathBuf,
        #[arg(long, default_value = "sim-truth.jsonl")]
        truth_out: PathBuf,
        /// Also run the pipeline on the generated gaze and write its event log.
        #[arg(long)]
        events_out: Option<PathBuf>,
    },
    /// Score DifficultyDetected events in a log against truth labels.
    Evaluate {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, default_value_t = 1000.0)]
        match_window_ms: f64,
        #[arg(long)]
        json: bool,
    },
    /// Summarize an event log.
    Analyze {
        log: PathBuf,
        #[arg(long)]
        json: bool,
    },
}

async fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Replay { config, output } => {
            let (n, path) = sara::replay(&config, output).await?;
            match path {
                Some(p) => println!("wrote {n} envelopes to {}", p.display()),
                None => println!("processed {n} envelopes (no output_log configured)"),
            }
        }
        Command::Serve { config, port, host } => sara::serve(&config, &host, port).await?,
        Command::Simulate { config, seed, inject, gaze_out, truth_out, events_out } => {
            let opts = sara::SimulateOptions {
                seed,
                inject,
                gaze_out: gaze_out.clone(),
                truth_out: truth_out.clone(),
                events_out: events_out.clone(),
            };
            let sim = sara::simulate(&config, opts).await?;
            println!("wrote {} samples to {}", sim.samples.len(), gaze_out.display());
            println!("wrote {} labels to {}", sim.labels.len(), truth_out.display());
            if let Some(p) = events_out {
                println!("wrote event log to {}", p.display());
            }
        }
        Command::Evaluate { events, truth, match_window_ms, json } => {
            let report = sara::evaluate_files(&events, &truth, match_window_ms)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", sara::render_eval(&report));
            }
        }
        Command::Analyze { log, json } => {
            let report = sara::analyze(&log)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", report.to_text());
            }
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
