//! Summaries of event logs.

use super::{EventEnvelope, Payload, SessionError};
use crate::classifier::Anchor;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

pub const HISTOGRAM_BIN_MS: f64 = 100.0;
pub const HISTOGRAM_BINS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo_ms: f64,
    /// `None` for the open last bin.
    pub hi_ms: Option<f64>,
    pub count: usize,
}

fn empty_histogram() -> Vec<HistogramBin> {
    (0..=HISTOGRAM_BINS)
        .map(|i| HistogramBin {
            lo_ms: i as f64 * HISTOGRAM_BIN_MS,
            hi_ms: (i < HISTOGRAM_BINS).then(|| (i + 1) as f64 * HISTOGRAM_BIN_MS),
            count: 0,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub envelopes: usize,
    pub samples: usize,
    pub fixations: usize,
    pub word_hits: usize,
    pub off_text_hits: usize,
    pub regressions: usize,
    pub events_by_kind: BTreeMap<String, usize>,
    pub cards_delivered: usize,
    pub assist_failures: usize,
    /// Total dwell per fixated word, binned.
    pub dwell_histogram: Vec<HistogramBin>,
    /// Mean of (card delivery t − triggering event t), ms.
    pub mean_time_to_assistance_ms: Option<f64>,
    pub ended: bool,
}

impl Default for SessionSummary {
    fn default() -> Self {
        Self {
            envelopes: 0,
            samples: 0,
            fixations: 0,
            word_hits: 0,
            off_text_hits: 0,
            regressions: 0,
            events_by_kind: BTreeMap::new(),
            cards_delivered: 0,
            assist_failures: 0,
            dwell_histogram: empty_histogram(),
            mean_time_to_assistance_ms: None,
            ended: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub lines_read: usize,
    pub lines_processed: usize,
    pub warnings: Vec<String>,
    pub sessions: Vec<SessionSummary>,
    pub totals: SessionSummary,
}

#[derive(Default)]
struct Accumulator {
    summary: SessionSummary,
    dwell: BTreeMap<usize, f64>,
    last_ordinal: Option<usize>,
    recomputed_regressions: usize,
    pending: BTreeMap<Anchor, f64>,
    delays: Vec<f64>,
}

impl Accumulator {
    fn push(&mut self, env: &EventEnvelope) {
        let s = &mut self.summary;
        s.envelopes += 1;
        match &env.payload {
            Payload::GazeAccepted { .. } => s.samples += 1,
            Payload::FixationEnded(_) => s.fixations += 1,
            Payload::WordHit(hit) => match hit.word {
                Some(w) => {
                    s.word_hits += 1;
                    *self.dwell.entry(w.word_id).or_insert(0.0) += hit.duration();
                    if self.last_ordinal.is_some_and(|prev| w.ordinal + 2 <= prev) {
                        self.recomputed_regressions += 1;
                    }
                    if self.last_ordinal != Some(w.ordinal) {
                        self.last_ordinal = Some(w.ordinal);
                    }
                }
                None => s.off_text_hits += 1,
            },
            Payload::DifficultyDetected(ev) => {
                *s.events_by_kind.entry(ev.kind.label().to_string()).or_insert(0) += 1;
                self.pending.insert(ev.kind.anchor(), ev.t);
            }
            Payload::AssistRequested { .. } => {}
            Payload::AssistDelivered(card) => {
                s.cards_delivered += 1;
                if let Some(t0) = self.pending.remove(&card.anchor) {
                    self.delays.push(env.t - t0);
                }
            }
            Payload::AssistFailed { .. } => s.assist_failures += 1,
            Payload::SessionEnded(stats) => {
                s.regressions = stats.regressions;
                s.ended = true;
            }
        }
    }

    fn finish(mut self) -> SessionSummary {
        let s = &mut self.summary;
        if !s.ended {
            s.regressions = self.recomputed_regressions;
        }
        for d in self.dwell.values() {
            let bin = ((d / HISTOGRAM_BIN_MS).floor().max(0.0) as usize).min(HISTOGRAM_BINS);
            s.dwell_histogram[bin].count += 1;
        }
        if !self.delays.is_empty() {
            s.mean_time_to_assistance_ms = Some(self.delays.iter().sum::<f64>() / self.delays.len() as f64);
        }
        self.summary
    }
}

fn add_into(total: &mut SessionSummary, s: &SessionSummary, delays: &mut (f64, usize)) {
    total.envelopes += s.envelopes;
    total.samples += s.samples;
    total.fixations += s.fixations;
    total.word_hits += s.word_hits;
    total.off_text_hits += s.off_text_hits;
    total.regressions += s.regressions;
    for (k, v) in &s.events_by_kind {
        *total.events_by_kind.entry(k.clone()).or_insert(0) += v;
    }
    total.cards_delivered += s.cards_delivered;
    total.assist_failures += s.assist_failures;
    for (t, b) in total.dwell_histogram.iter_mut().zip(&s.dwell_histogram) {
        t.count += b.count;
    }
    if let Some(m) = s.mean_time_to_assistance_ms {
        delays.0 += m * s.cards_delivered as f64;
        delays.1 += s.cards_delivered;
    }
}

/// Summarizes log text. Unparseable lines become warnings. A new session
/// starts after `SessionEnded` or when `seq` drops back to 0.
pub fn analyze_str(text: &str) -> AnalysisReport {
    let mut report =
        AnalysisReport { lines_read: 0, lines_processed: 0, warnings: Vec::new(), sessions: Vec::new(), totals: SessionSummary::default() };
    let mut current: Option<Accumulator> = None;
    let mut last_seq: Option<u64> = None;
    let mut skipped = false;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        report.lines_read += 1;
        let env: EventEnvelope = match serde_json::from_str(line) {
            Ok(env) => env,
            Err(e) => {
                report.warnings.push(format!("line {}: skipped unparseable envelope ({e})", i + 1));
                skipped = true;
                continue;
            }
        };
        report.lines_processed += 1;
        if env.seq == 0 && current.is_some() {
            report.sessions.extend(current.take().map(Accumulator::finish));
        } else if let Some(prev) = last_seq.filter(|p| env.seq != p + 1 && current.is_some() && !skipped) {
            report.warnings.push(format!("line {}: seq jumps from {prev} to {}", i + 1, env.seq));
        }
        last_seq = Some(env.seq);
        skipped = false;
        let acc = current.get_or_insert_with(Accumulator::default);
        acc.push(&env);
        if matches!(env.payload, Payload::SessionEnded(_)) {
            report.sessions.extend(current.take().map(Accumulator::finish));
        }
    }
    report.sessions.extend(current.take().map(Accumulator::finish));
    let mut delays = (0.0, 0);
    for s in &report.sessions {
        add_into(&mut report.totals, s, &mut delays);
    }
    report.totals.ended = !report.sessions.is_empty() && report.sessions.iter().all(|s| s.ended);
    if delays.1 > 0 {
        report.totals.mean_time_to_assistance_ms = Some(delays.0 / delays.1 as f64);
    }
    report
}

pub fn analyze_log(path: &Path) -> Result<AnalysisReport, SessionError> {
    let text = std::fs::read_to_string(path).map_err(|e| SessionError::io(path, e))?;
    Ok(analyze_str(&text))
}

fn render_summary(out: &mut String, s: &SessionSummary) {
    let _ = writeln!(out, "  envelopes        {}", s.envelopes);
    let _ = writeln!(out, "  gaze samples     {}", s.samples);
    let _ = writeln!(out, "  fixations        {} ({} on text, {} off text)", s.fixations, s.word_hits, s.off_text_hits);
    let _ = writeln!(out, "  regressions      {}", s.regressions);
    if s.events_by_kind.is_empty() {
        let _ = writeln!(out, "  events           none");
    }
    for (k, v) in &s.events_by_kind {
        let _ = writeln!(out, "  events           {k}: {v}");
    }
    let _ = writeln!(out, "  cards delivered  {}", s.cards_delivered);
    let _ = writeln!(out, "  assist failures  {}", s.assist_failures);
    match s.mean_time_to_assistance_ms {
        Some(m) => {
            let _ = writeln!(out, "  time to card     {m:.1} ms (mean)");
        }
        None => {
            let _ = writeln!(out, "  time to card     n/a");
        }
    }
    let _ = writeln!(out, "  word dwell histogram:");
    for b in &s.dwell_histogram {
        let range = match b.hi_ms {
            Some(hi) => format!("{:>5.0}-{:<5.0}", b.lo_ms, hi),
            None => format!("{:>5.0}+     ", b.lo_ms),
        };
        let _ = writeln!(out, "    {range} ms {:>5} {}", b.count, "#".repeat(b.count.min(60)));
    }
}

impl AnalysisReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "lines: {} read, {} processed", self.lines_read, self.lines_processed);
        for (i, s) in self.sessions.iter().enumerate() {
            let _ = writeln!(out, "session {}{}", i + 1, if s.ended { "" } else { " (no end record)" });
            render_summary(&mut out, s);
        }
        let _ = writeln!(out, "totals over {} session(s)", self.sessions.len());
        render_summary(&mut out, &self.totals);
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        out
    }
}
