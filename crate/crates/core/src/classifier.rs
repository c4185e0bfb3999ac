//! Reading difficulty detection.
//!
//! Two signals are used. Unfamiliar words: a word's fixation dwell compared to
//! the median dwell of its reading-order neighbours. Paragraph comprehension:
//! repeated regressions (backward saccades in global reading order) landing in
//! the same paragraph inside a sliding time window.
//!
//! Detection is evaluated when a fixation ends. The word rule is checked for
//! the fixated word against the dwell accumulated so far; the paragraph rule
//! is checked when a regression lands. Both are rate-limited per anchor by a
//! cooldown. [`classify_batch`] replays a hit sequence through the batch
//! detectors; [`OnlineClassifier`] keeps running state and must emit the same
//! events.

use crate::gaze::{reading_progression, DwellMap, ProgressionStep, ProgressionTracker, WordHit};
use crate::layout::TextLayout;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("classifier setting `{0}` must be positive")]
    NotPositive(&'static str),
    #[error("dwell_ratio_threshold must exceed 1, got {0}")]
    RatioTooSmall(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub neighbor_window_words: usize,
    pub dwell_ratio_threshold: f64,
    pub min_abs_dwell_ms: f64,
    pub regression_min_back_words: usize,
    pub regression_count_threshold: usize,
    pub regression_window_ms: f64,
    pub cooldown_ms: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            neighbor_window_words: 5,
            dwell_ratio_threshold: 3.0,
            min_abs_dwell_ms: 600.0,
            regression_min_back_words: 2,
            regression_count_threshold: 3,
            regression_window_ms: 5000.0,
            cooldown_ms: 30_000.0,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("neighbor_window_words", self.neighbor_window_words as f64),
            ("min_abs_dwell_ms", self.min_abs_dwell_ms),
            ("regression_min_back_words", self.regression_min_back_words as f64),
            ("regression_count_threshold", self.regression_count_threshold as f64),
            ("regression_window_ms", self.regression_window_ms),
            ("cooldown_ms", self.cooldown_ms),
        ];
        for (name, value) in positive {
            if !(value > 0.0) {
                return Err(ConfigError::NotPositive(name));
            }
        }
        if !(self.dwell_ratio_threshold > 1.0) {
            return Err(ConfigError::RatioTooSmall(self.dwell_ratio_threshold));
        }
        Ok(())
    }
}

/// What a difficulty event is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum DifficultyKind {
    UnfamiliarWord { word_id: usize },
    ParagraphComprehension { paragraph_id: usize },
}

impl DifficultyKind {
    pub fn anchor(&self) -> Anchor {
        match *self {
            DifficultyKind::UnfamiliarWord { word_id } => Anchor::Word(word_id),
            DifficultyKind::ParagraphComprehension { paragraph_id } => Anchor::Paragraph(paragraph_id),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            DifficultyKind::UnfamiliarWord { .. } => "UnfamiliarWord",
            DifficultyKind::ParagraphComprehension { .. } => "ParagraphComprehension",
        }
    }
}

/// Text region that help is attached to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Anchor {
    Word(usize),
    Paragraph(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Evidence {
    Dwell { observed_ms: f64, baseline_ms: f64, ratio: f64 },
    Regressions { count: usize, window_ms: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifficultyEvent {
    #[serde(flatten)]
    pub kind: DifficultyKind,
    pub t: f64,
    pub evidence: Evidence,
    pub confidence: f64,
}

fn confidence(score: f64, threshold: f64) -> f64 {
    (score / (2.0 * threshold)).min(1.0)
}

/// Median dwell over up to `window_words` reading-order neighbours on each
/// side that have non-zero dwell, excluding the word itself. `None` when
/// fewer than three such neighbours exist.
pub fn baseline_dwell(dwell: &DwellMap, word_id: usize, layout: &TextLayout, window_words: usize) -> Option<f64> {
    let ordinal = layout.position(word_id)?.ordinal;
    let order = layout.reading_order();
    let lo = ordinal.saturating_sub(window_words);
    let hi = (ordinal + window_words + 1).min(order.len());
    let mut values: Vec<f64> =
        (lo..hi).filter(|&o| o != ordinal).filter_map(|o| dwell.get(&order[o]).copied()).filter(|&d| d > 0.0).collect();
    if values.len() < 3 {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 })
}

fn word_flag(dwell: &DwellMap, word_id: usize, layout: &TextLayout, cfg: &ClassifierConfig, t: f64) -> Option<DifficultyEvent> {
    let observed = *dwell.get(&word_id)?;
    if observed < cfg.min_abs_dwell_ms {
        return None;
    }
    let baseline = baseline_dwell(dwell, word_id, layout, cfg.neighbor_window_words)?;
    let ratio = observed / baseline;
    if ratio < cfg.dwell_ratio_threshold {
        return None;
    }
    Some(DifficultyEvent {
        kind: DifficultyKind::UnfamiliarWord { word_id },
        t,
        evidence: Evidence::Dwell { observed_ms: observed, baseline_ms: baseline, ratio },
        confidence: confidence(ratio, cfg.dwell_ratio_threshold),
    })
}

/// Every word the dwell map flags as unfamiliar, stamped with time `t`.
pub fn detect_unfamiliar_words(dwell: &DwellMap, layout: &TextLayout, cfg: &ClassifierConfig, t: f64) -> Vec<DifficultyEvent> {
    dwell.keys().filter_map(|&w| word_flag(dwell, w, layout, cfg, t)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub from_ordinal: usize,
    pub to_ordinal: usize,
    pub back_words: usize,
    /// Landing word.
    pub word_id: usize,
    pub paragraph_id: usize,
    /// Start of the landing fixation.
    pub t: f64,
}

fn regression_between(prev: &ProgressionStep, next: &ProgressionStep, cfg: &ClassifierConfig) -> Option<Regression> {
    let back = prev.ordinal.checked_sub(next.ordinal)?;
    (back >= cfg.regression_min_back_words).then_some(Regression {
        from_ordinal: prev.ordinal,
        to_ordinal: next.ordinal,
        back_words: back,
        word_id: next.word_id,
        paragraph_id: next.paragraph_id,
        t: next.t_start,
    })
}

/// Backward steps in global reading order of at least the configured size.
/// Return sweeps move forward in the global order and are never counted.
pub fn detect_regressions(progression: &[ProgressionStep], cfg: &ClassifierConfig) -> Vec<Regression> {
    progression.windows(2).filter_map(|w| regression_between(&w[0], &w[1], cfg)).collect()
}

/// Sliding-window regression counter for one paragraph.
#[derive(Debug, Clone, Default)]
struct RegressionWindow {
    times: VecDeque<f64>,
    last_event: Option<f64>,
}

impl RegressionWindow {
    fn push(&mut self, r: &Regression, cfg: &ClassifierConfig) -> Option<DifficultyEvent> {
        self.times.push_back(r.t);
        while self.times.front().is_some_and(|&t0| r.t - t0 > cfg.regression_window_ms) {
            self.times.pop_front();
        }
        let count = self.times.len();
        if count < cfg.regression_count_threshold {
            return None;
        }
        if self.last_event.is_some_and(|te| r.t - te < cfg.cooldown_ms) {
            return None;
        }
        self.last_event = Some(r.t);
        Some(DifficultyEvent {
            kind: DifficultyKind::ParagraphComprehension { paragraph_id: r.paragraph_id },
            t: r.t,
            evidence: Evidence::Regressions { count, window_ms: cfg.regression_window_ms },
            confidence: confidence(count as f64, cfg.regression_count_threshold as f64),
        })
    }
}

/// Flags a paragraph when enough regressions land in it within the window;
/// at most one event per paragraph per cooldown period.
pub fn detect_comprehension_difficulty(regressions: &[Regression], layout: &TextLayout, cfg: &ClassifierConfig) -> Vec<DifficultyEvent> {
    let mut windows: BTreeMap<usize, RegressionWindow> = BTreeMap::new();
    regressions
        .iter()
        .filter(|r| r.paragraph_id < layout.paragraphs.len())
        .filter_map(|r| windows.entry(r.paragraph_id).or_default().push(r, cfg))
        .collect()
}

/// Whole-stream classification through the batch detectors.
///
/// After each on-text hit the dwell map so far is run through
/// [`detect_unfamiliar_words`] and the flag for the hit word is kept if that
/// word is out of cooldown. Paragraph events come from the full progression.
pub fn classify_batch(hits: &[WordHit], layout: &TextLayout, cfg: &ClassifierConfig) -> Vec<DifficultyEvent> {
    let mut events = Vec::new();
    let mut dwell = DwellMap::new();
    let mut last_flag: BTreeMap<usize, f64> = BTreeMap::new();
    for hit in hits {
        let Some(word) = hit.word else { continue };
        *dwell.entry(word.word_id).or_insert(0.0) += hit.duration();
        let flagged = detect_unfamiliar_words(&dwell, layout, cfg, hit.t_end);
        if let Some(ev) = flagged.into_iter().find(|e| e.kind == DifficultyKind::UnfamiliarWord { word_id: word.word_id }) {
            if last_flag.get(&word.word_id).is_none_or(|&t0| hit.t_end - t0 >= cfg.cooldown_ms) {
                last_flag.insert(word.word_id, hit.t_end);
                events.push(ev);
            }
        }
    }
    let progression = reading_progression(hits);
    let regressions = detect_regressions(&progression, cfg);
    events.extend(detect_comprehension_difficulty(&regressions, layout, cfg));
    events
}

/// Per-session running classifier fed one word hit at a time.
#[derive(Debug, Clone)]
pub struct OnlineClassifier {
    layout: Arc<TextLayout>,
    cfg: ClassifierConfig,
    dwell: DwellMap,
    last_word_flag: BTreeMap<usize, f64>,
    progression: ProgressionTracker,
    last_step: Option<ProgressionStep>,
    paragraphs: BTreeMap<usize, RegressionWindow>,
    regressions: usize,
}

impl OnlineClassifier {
    pub fn new(layout: Arc<TextLayout>, cfg: ClassifierConfig) -> Result<Self, ConfigError> {
        cfg.validate()?;
        Ok(Self {
            layout,
            cfg,
            dwell: DwellMap::new(),
            last_word_flag: BTreeMap::new(),
            progression: ProgressionTracker::default(),
            last_step: None,
            paragraphs: BTreeMap::new(),
            regressions: 0,
        })
    }

    pub fn dwell(&self) -> &DwellMap {
        &self.dwell
    }

    pub fn regression_count(&self) -> usize {
        self.regressions
    }

    /// Updates state with one hit and returns the events it triggers: the
    /// word event (if any) first, then the paragraph event.
    pub fn push(&mut self, hit: &WordHit) -> Vec<DifficultyEvent> {
        let mut events = Vec::new();
        let Some(word) = hit.word else { return events };
        *self.dwell.entry(word.word_id).or_insert(0.0) += hit.duration();
        if let Some(ev) = word_flag(&self.dwell, word.word_id, &self.layout, &self.cfg, hit.t_end) {
            let cooled = self.last_word_flag.get(&word.word_id).is_none_or(|&t0| hit.t_end - t0 >= self.cfg.cooldown_ms);
            if cooled {
                self.last_word_flag.insert(word.word_id, hit.t_end);
                events.push(ev);
            }
        }
        if let Some(step) = self.progression.push(hit) {
            if let Some(reg) = self.last_step.as_ref().and_then(|prev| regression_between(prev, &step, &self.cfg)) {
                self.regressions += 1;
                if let Some(ev) = self.paragraphs.entry(reg.paragraph_id).or_default().push(&reg, &self.cfg) {
                    events.push(ev);
                }
            }
            self.last_step = Some(step);
        }
        events
    }
}
