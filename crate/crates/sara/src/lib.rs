//! Command implementations behind the `sara` binary.

pub mod server;

use anyhow::{bail, Context, Result};
use sara_core::classifier::DifficultyEvent;
use sara_core::layout::TextLayout;
use sara_core::session::{
    analyze_log, read_envelopes, run_replay, AnalysisReport, EventEnvelope, LiveContext, Payload, Session, SessionConfig,
};
use sara_core::sim::{evaluate, generate_session, parse_inject_list, EvalReport, GroundTruthLabel, SimSession};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

pub fn load_config(path: &Path) -> Result<SessionConfig> {
    SessionConfig::load(path).with_context(|| format!("loading config {}", path.display()))
}

/// `sara replay`: returns the number of envelopes written and the log path.
pub async fn replay(config: &Path, output: Option<PathBuf>) -> Result<(usize, Option<PathBuf>)> {
    let mut cfg = load_config(config)?;
    if output.is_some() {
        cfg.output_log = output;
    }
    let out = run_replay(&cfg).await?;
    Ok((out.envelopes.len(), out.log_path))
}

pub async fn serve(config: &Path, host: &str, port: u16) -> Result<()> {
    let cfg = load_config(config)?;
    let ctx = LiveContext::from_config(&cfg)?;
    let state = server::ServerState::new(ctx, Duration::from_millis(cfg.heartbeat_ms.max(1)));
    let listener = tokio::net::TcpListener::bind((host, port)).await.with_context(|| format!("binding {host}:{port}"))?;
    tracing::info!(addr = %listener.local_addr()?, "listening; connect to /ws");
    eprintln!("listening on ws://{}/ws", listener.local_addr()?);
    server::serve(listener, state).await?;
    Ok(())
}

pub struct SimulateOptions {
    pub seed: Option<u64>,
    pub inject: Vec<String>,
    pub gaze_out: PathBuf,
    pub truth_out: PathBuf,
    pub events_out: Option<PathBuf>,
}

fn write_jsonl<T: serde::Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Runs the full pipeline over a simulated session.
pub async fn pipeline_over(layout: Arc<TextLayout>, cfg: &SessionConfig, sim: &SimSession) -> Result<Vec<EventEnvelope>> {
    let mut session = Session::new(layout, cfg.params()?, cfg.build_assistant()?)?;
    let mut envelopes = Vec::new();
    for s in &sim.samples {
        envelopes.extend(session.push_sample(*s).await?);
    }
    envelopes.extend(session.finish().await?);
    Ok(envelopes)
}

/// `sara simulate`: writes pixel-mode gaze and truth labels, optionally the
/// event log of running the pipeline on them.
pub async fn simulate(config: &Path, opts: SimulateOptions) -> Result<SimSession> {
    let cfg = load_config(config)?;
    let layout = Arc::new(cfg.load_layout()?);
    let mut sim_cfg = cfg.sim.clone();
    sim_cfg.seed = opts.seed.unwrap_or(cfg.seed);
    if !opts.inject.is_empty() {
        sim_cfg.episodes.clear();
        for spec in &opts.inject {
            sim_cfg.episodes.extend(parse_inject_list(spec)?);
        }
    }
    let sim = generate_session(&layout, &sim_cfg)?;
    let gaze: Vec<serde_json::Value> =
        sim.samples.iter().map(|s| serde_json::json!({"t": s.t, "x": s.p.x_px, "y": s.p.y_px, "valid": s.valid})).collect();
    write_jsonl(&opts.gaze_out, &gaze)?;
    write_jsonl(&opts.truth_out, &sim.labels)?;
    if let Some(path) = &opts.events_out {
        let envelopes = pipeline_over(layout, &cfg, &sim).await?;
        write_jsonl(path, &envelopes)?;
    }
    Ok(sim)
}

pub fn read_truth(path: &Path) -> Result<Vec<GroundTruthLabel>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

pub fn difficulty_events(envelopes: &[EventEnvelope]) -> Vec<DifficultyEvent> {
    envelopes
        .iter()
        .filter_map(|e| match &e.payload {
            Payload::DifficultyDetected(ev) => Some(*ev),
            _ => None,
        })
        .collect()
}

/// `sara evaluate`.
pub fn evaluate_files(events: &Path, truth: &Path, match_window_ms: f64) -> Result<EvalReport> {
    if !(match_window_ms >= 0.0) {
        bail!("match window must be non-negative");
    }
    let envelopes = read_envelopes(events)?;
    let labels = read_truth(truth)?;
    Ok(evaluate(&difficulty_events(&envelopes), &labels, match_window_ms))
}

pub fn render_eval(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "match window: ±{} ms", report.match_window_ms);
    let _ = writeln!(out, "{:<24} {:>4} {:>4} {:>4} {:>9} {:>7} {:>6}", "kind", "tp", "fp", "fn", "precision", "recall", "f1");
    let rows = report.per_kind.iter().map(|(k, m)| (k.as_str(), m)).chain(std::iter::once(("overall", &report.overall)));
    for (kind, m) in rows {
        let note = if m.zero_predictions { "  (no predictions)" } else { "" };
        let _ = writeln!(
            out,
            "{:<24} {:>4} {:>4} {:>4} {:>9.3} {:>7.3} {:>6.3}{note}",
            kind, m.true_positives, m.false_positives, m.false_negatives, m.precision, m.recall, m.f1
        );
    }
    out
}

/// `sara analyze`.
pub fn analyze(log: &Path) -> Result<AnalysisReport> {
    Ok(analyze_log(log)?)
}
