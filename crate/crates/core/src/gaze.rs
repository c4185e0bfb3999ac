//! Pixel-space gaze samples to fixations, word hits, dwell and progression.
//!
//! Fixations come from a dispersion-threshold detector run as a streaming
//! state machine. The batch entry point [`detect_fixations`] feeds the same
//! machine, so live and recorded sessions see identical fixations.

use crate::geometry::PixelPoint;
use crate::layout::TextLayout;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GazeError {
    #[error("gaze sample at t={t} ms does not follow t={prev} ms")]
    NonIncreasingTime { prev: f64, t: f64 },
    #[error("gaze sample has a non-finite timestamp")]
    NonFiniteTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub t: f64,
    pub p: PixelPoint,
    pub valid: bool,
}

impl GazeSample {
    pub fn new(t: f64, x_px: f64, y_px: f64) -> Self {
        Self { t, p: PixelPoint::new(x_px, y_px), valid: true }
    }

    pub fn invalid(t: f64) -> Self {
        Self { t, p: PixelPoint::new(f64::NAN, f64::NAN), valid: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixationConfig {
    /// Maximum (max x − min x) + (max y − min y) over a window, pixels.
    pub dispersion_px: f64,
    /// Minimum t_end − t_start for a window to count as a fixation.
    pub min_fix_ms: f64,
    /// A gap between consecutive valid samples larger than this splits a window.
    pub max_gap_ms: f64,
}

impl Default for FixationConfig {
    fn default() -> Self {
        Self { dispersion_px: 35.0, min_fix_ms: 80.0, max_gap_ms: 200.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub fixation_id: usize,
    pub centroid: PixelPoint,
    pub t_start: f64,
    pub t_end: f64,
    pub n_samples: usize,
}

impl Fixation {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Greedy left-to-right I-DT over a sample stream.
///
/// The window buffer always holds an admissible window (dispersion and gap
/// limits satisfied). When a new sample cannot join, the buffer is the maximal
/// window for its start: it becomes a fixation if long enough, otherwise the
/// start advances by one sample and extension is retried.
#[derive(Debug, Clone)]
pub struct FixationDetector {
    cfg: FixationConfig,
    window: Vec<GazeSample>,
    last_t: Option<f64>,
    next_id: usize,
}

impl FixationDetector {
    pub fn new(cfg: FixationConfig) -> Self {
        Self { cfg, window: Vec::new(), last_t: None, next_id: 0 }
    }

    pub fn config(&self) -> &FixationConfig {
        &self.cfg
    }

    /// Feeds one sample; returns a fixation if this sample closed one.
    pub fn push(&mut self, sample: GazeSample) -> Result<Option<Fixation>, GazeError> {
        if !sample.t.is_finite() {
            return Err(GazeError::NonFiniteTime);
        }
        if let Some(prev) = self.last_t {
            if sample.t <= prev {
                return Err(GazeError::NonIncreasingTime { prev, t: sample.t });
            }
        }
        self.last_t = Some(sample.t);
        if !sample.valid || !sample.p.is_finite() {
            return Ok(None);
        }
        if self.admits(&sample) {
            self.window.push(sample);
            return Ok(None);
        }
        if let Some(fix) = self.close_window() {
            self.window.clear();
            self.window.push(sample);
            return Ok(Some(fix));
        }
        // The maximal window for the current start is too short; advance the
        // start until the new sample fits or the buffer empties. Shorter
        // windows cannot meet the duration limit either, so nothing is emitted.
        while !self.window.is_empty() {
            self.window.remove(0);
            if self.admits(&sample) {
                break;
            }
        }
        self.window.push(sample);
        Ok(None)
    }

    /// Flushes the trailing window at end of stream.
    pub fn finish(&mut self) -> Option<Fixation> {
        let fix = self.close_window();
        self.window.clear();
        fix
    }

    fn admits(&self, sample: &GazeSample) -> bool {
        let Some(last) = self.window.last() else {
            return true;
        };
        if sample.t - last.t > self.cfg.max_gap_ms {
            return false;
        }
        let (mut x0, mut x1, mut y0, mut y1) = (sample.p.x_px, sample.p.x_px, sample.p.y_px, sample.p.y_px);
        for s in &self.window {
            x0 = x0.min(s.p.x_px);
            x1 = x1.max(s.p.x_px);
            y0 = y0.min(s.p.y_px);
            y1 = y1.max(s.p.y_px);
        }
        (x1 - x0) + (y1 - y0) <= self.cfg.dispersion_px
    }

    fn close_window(&mut self) -> Option<Fixation> {
        let (first, last) = (self.window.first()?, self.window.last()?);
        if self.window.len() < 2 || last.t - first.t < self.cfg.min_fix_ms {
            return None;
        }
        let fix = Fixation {
            fixation_id: self.next_id,
            centroid: centroid(&self.window),
            t_start: first.t,
            t_end: last.t,
            n_samples: self.window.len(),
        };
        self.next_id += 1;
        Some(fix)
    }
}

fn centroid(samples: &[GazeSample]) -> PixelPoint {
    let n = samples.len() as f64;
    let (sx, sy) = samples.iter().fold((0.0, 0.0), |(sx, sy), s| (sx + s.p.x_px, sy + s.p.y_px));
    PixelPoint::new(sx / n, sy / n)
}

/// Batch fixation detection. Samples whose timestamp does not increase are
/// skipped; invalid samples are dropped before windowing.
pub fn detect_fixations(samples: &[GazeSample], cfg: &FixationConfig) -> Vec<Fixation> {
    let mut detector = FixationDetector::new(*cfg);
    let mut out: Vec<Fixation> = samples.iter().filter_map(|s| detector.push(*s).ok().flatten()).collect();
    out.extend(detector.finish());
    out
}

/// The word a fixation landed on, with its reading position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordRef {
    pub word_id: usize,
    pub line_id: usize,
    pub word_index_in_line: usize,
    pub ordinal: usize,
    pub paragraph_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WordHit {
    pub fixation_id: usize,
    pub t_start: f64,
    pub t_end: f64,
    /// `None` for fixations off the text.
    pub word: Option<WordRef>,
}

impl WordHit {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

pub fn assign_fixation(fixation: &Fixation, layout: &TextLayout, slack_px: f64) -> WordHit {
    let word = layout.word_at(&fixation.centroid, slack_px).map(|word_id| {
        let pos = layout.position(word_id).expect("word_at returns layout words");
        WordRef {
            word_id,
            line_id: pos.line_id,
            word_index_in_line: pos.word_index_in_line,
            ordinal: pos.ordinal,
            paragraph_id: pos.paragraph_id,
        }
    });
    WordHit { fixation_id: fixation.fixation_id, t_start: fixation.t_start, t_end: fixation.t_end, word }
}

pub fn assign_fixations(fixations: &[Fixation], layout: &TextLayout, slack_px: f64) -> Vec<WordHit> {
    fixations.iter().map(|f| assign_fixation(f, layout, slack_px)).collect()
}

/// Cumulative fixation duration per word, ms.
pub type DwellMap = BTreeMap<usize, f64>;

/// Sums fixation durations per word. Hits are joined to fixations by id; a
/// hit whose fixation is missing contributes nothing.
pub fn accumulate_dwell(hits: &[WordHit], fixations: &[Fixation]) -> DwellMap {
    let durations: BTreeMap<usize, f64> = fixations.iter().map(|f| (f.fixation_id, f.duration())).collect();
    let mut dwell = DwellMap::new();
    for hit in hits {
        if let (Some(word), Some(d)) = (hit.word, durations.get(&hit.fixation_id)) {
            *dwell.entry(word.word_id).or_insert(0.0) += d;
        }
    }
    dwell
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressionStep {
    pub word_id: usize,
    pub line_id: usize,
    pub word_index_in_line: usize,
    pub ordinal: usize,
    pub paragraph_id: usize,
    pub t_start: f64,
}

/// Incremental form of [`reading_progression`].
#[derive(Debug, Clone, Default)]
pub struct ProgressionTracker {
    last_word: Option<usize>,
}

impl ProgressionTracker {
    pub fn push(&mut self, hit: &WordHit) -> Option<ProgressionStep> {
        let word = hit.word?;
        if self.last_word == Some(word.word_id) {
            return None;
        }
        self.last_word = Some(word.word_id);
        Some(ProgressionStep {
            word_id: word.word_id,
            line_id: word.line_id,
            word_index_in_line: word.word_index_in_line,
            ordinal: word.ordinal,
            paragraph_id: word.paragraph_id,
            t_start: hit.t_start,
        })
    }
}

/// On-text hits projected to reading positions, consecutive repeats collapsed.
pub fn reading_progression(hits: &[WordHit]) -> Vec<ProgressionStep> {
    let mut tracker = ProgressionTracker::default();
    hits.iter().filter_map(|h| tracker.push(h)).collect()
}
