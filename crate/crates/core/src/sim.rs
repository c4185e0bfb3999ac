//! Synthetic reading sessions with labelled difficulty episodes, and scoring
//! of detected events against those labels.
//!
//! Normal reading is one fixation per word in reading order (short words are
//! sometimes skipped) with a sampled duration and jittered gaze. Two episode
//! kinds can be injected: a long dwell on one word, and a burst of backward
//! re-fixations inside one paragraph. Output is pixel-mode gaze only.

use crate::classifier::{DifficultyEvent, DifficultyKind};
use crate::gaze::GazeSample;
use crate::geometry::{ImageDims, PixelPoint};
use crate::layout::{LayoutDocument, TextLayout, WordRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulator setting: {0}")]
    Config(String),
    #[error("episode anchor {0} is not in the layout")]
    UnknownAnchor(String),
    #[error("paragraph {paragraph_id} is too short for {regressions} regressions of {back_words} words")]
    ParagraphTooShort { paragraph_id: usize, regressions: usize, back_words: usize },
    #[error("invalid --inject spec `{spec}`: {reason}")]
    InjectSpec { spec: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Episode {
    /// Dwell on the word is `factor` × the mean first-pass dwell of its
    /// neighbours (five words each side).
    UnfamiliarWord { word_id: usize, factor: f64 },
    /// After the paragraph's last word is read, `regressions` backward jumps
    /// of `back_words` words, each followed by re-reading `reread_words` words.
    ParagraphComprehension { paragraph_id: usize, regressions: usize, back_words: usize, reread_words: usize },
}

impl Episode {
    pub fn kind(&self) -> DifficultyKind {
        match *self {
            Episode::UnfamiliarWord { word_id, .. } => DifficultyKind::UnfamiliarWord { word_id },
            Episode::ParagraphComprehension { paragraph_id, .. } => DifficultyKind::ParagraphComprehension { paragraph_id },
        }
    }
}

/// Parses `kind:anchor[:param=value,...]`, e.g. `word:17:factor=5` or
/// `paragraph:1:regressions=3,back=4`.
impl FromStr for Episode {
    type Err = SimError;

    fn from_str(spec: &str) -> Result<Self, Self::Err> {
        let fail = |reason: &str| SimError::InjectSpec { spec: spec.to_string(), reason: reason.to_string() };
        let mut parts = spec.trim().splitn(3, ':');
        let kind = parts.next().unwrap_or_default().to_ascii_lowercase();
        let anchor: usize = parts
            .next()
            .ok_or_else(|| fail("missing anchor id"))?
            .trim()
            .parse()
            .map_err(|_| fail("anchor id must be a non-negative integer"))?;
        let mut params = BTreeMap::new();
        if let Some(list) = parts.next().filter(|l| !l.trim().is_empty()) {
            for kv in list.split(',') {
                let (k, v) = kv.split_once('=').ok_or_else(|| fail("parameters must be key=value"))?;
                let v: f64 = v.trim().parse().map_err(|_| fail("parameter values must be numbers"))?;
                params.insert(k.trim().to_ascii_lowercase(), v);
            }
        }
        let mut take = |key: &str, default: f64| params.remove(key).unwrap_or(default);
        let count = |v: f64, name: &str| -> Result<usize, SimError> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(fail(&format!("{name} must be a positive integer")))
            }
        };
        let episode = match kind.as_str() {
            "word" | "unfamiliar_word" | "unfamiliarword" => {
                let factor = take("factor", 5.0);
                Episode::UnfamiliarWord { word_id: anchor, factor }
            }
            "paragraph" | "paragraph_comprehension" | "paragraphcomprehension" => {
                let regressions = count(take("regressions", 3.0), "regressions")?;
                let back_words = count(take("back", 4.0), "back")?;
                let reread_words = count(take("reread", 2.0), "reread")?;
                Episode::ParagraphComprehension { paragraph_id: anchor, regressions, back_words, reread_words }
            }
            _ => return Err(fail("kind must be `word` or `paragraph`")),
        };
        if let Some(unknown) = params.keys().next() {
            return Err(fail(&format!("unknown parameter `{unknown}`")));
        }
        Ok(episode)
    }
}

/// Parses several `;`-separated episode specs.
pub fn parse_inject_list(spec: &str) -> Result<Vec<Episode>, SimError> {
    spec.split(';').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub fixation_mean_ms: f64,
    pub fixation_sd_ms: f64,
    /// Lower truncation point of the duration distribution.
    pub fixation_min_ms: f64,
    /// Per-sample gaze noise, pixels (isotropic Gaussian).
    pub jitter_px: f64,
    /// Per-fixation horizontal landing offset, as a fraction of word width.
    pub landing_sd_frac: f64,
    pub skip_probability: f64,
    /// Only words with at most this many letters may be skipped.
    pub skip_max_chars: usize,
    pub sample_rate_hz: f64,
    pub saccade_ms: f64,
    /// Duration multiplier for re-reading fixations during regressions.
    pub reread_duration_factor: f64,
    pub episodes: Vec<Episode>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            fixation_mean_ms: 220.0,
            fixation_sd_ms: 50.0,
            fixation_min_ms: 80.0,
            jitter_px: 2.5,
            landing_sd_frac: 0.1,
            skip_probability: 0.15,
            skip_max_chars: 3,
            sample_rate_hz: 30.0,
            saccade_ms: 30.0,
            reread_duration_factor: 0.75,
            episodes: Vec::new(),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.fixation_mean_ms > 0.0 && self.fixation_min_ms > 0.0) {
            return bad("fixation durations must be positive");
        }
        if !(self.fixation_sd_ms >= 0.0 && self.jitter_px >= 0.0 && self.landing_sd_frac >= 0.0 && self.saccade_ms >= 0.0) {
            return bad("spreads and saccade time must be non-negative");
        }
        if !(self.sample_rate_hz > 0.0) {
            return bad("sample rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.skip_probability) {
            return bad("skip probability must lie in [0, 1]");
        }
        if !(self.reread_duration_factor > 0.0) {
            return bad("reread_duration_factor must be positive");
        }
        for ep in &self.episodes {
            if let Episode::UnfamiliarWord { factor, .. } = ep {
                if !(*factor > 0.0) {
                    return bad("episode factor must be positive");
                }
            }
        }
        Ok(())
    }
}

/// Ground truth for one injected episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabel {
    #[serde(flatten)]
    pub kind: DifficultyKind,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedFixation {
    pub word_id: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub target: PixelPoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSession {
    pub samples: Vec<GazeSample>,
    pub labels: Vec<GroundTruthLabel>,
    pub plan: Vec<PlannedFixation>,
}

fn letters(text: &str) -> usize {
    text.chars().filter(|c| c.is_alphanumeric()).count()
}

struct Durations {
    normal: Normal<f64>,
    min: f64,
}

impl Durations {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        // Rejection keeps the distribution truncated rather than piling mass at the floor.
        for _ in 0..1000 {
            let d = self.normal.sample(rng);
            if d >= self.min {
                return d.round();
            }
        }
        self.min
    }
}

/// Generates one session. Deterministic for a given layout and config.
pub fn generate_session(layout: &TextLayout, cfg: &SimConfig) -> Result<SimSession, SimError> {
    cfg.validate()?;
    let mut word_factor: BTreeMap<usize, f64> = BTreeMap::new();
    let mut para_episodes: BTreeMap<usize, &Episode> = BTreeMap::new();
    for ep in &cfg.episodes {
        match ep {
            Episode::UnfamiliarWord { word_id, factor } => {
                if layout.word(*word_id).is_none() {
                    return Err(SimError::UnknownAnchor(format!("word {word_id}")));
                }
                word_factor.insert(*word_id, *factor);
            }
            Episode::ParagraphComprehension { paragraph_id, regressions, back_words, reread_words } => {
                let range =
                    layout.paragraph_ordinals(*paragraph_id).ok_or_else(|| SimError::UnknownAnchor(format!("paragraph {paragraph_id}")))?;
                let last = range.end - 1;
                let deepest =
                    last as i64 - (*back_words as i64) - (*regressions as i64 - 1) * (*back_words as i64 - *reread_words as i64 + 1);
                if *back_words < 2 || *reread_words == 0 || *reread_words > *back_words || deepest < range.start as i64 {
                    return Err(SimError::ParagraphTooShort {
                        paragraph_id: *paragraph_id,
                        regressions: *regressions,
                        back_words: *back_words,
                    });
                }
                para_episodes.insert(*paragraph_id, ep);
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let durations = Durations {
        normal: Normal::new(cfg.fixation_mean_ms, cfg.fixation_sd_ms).map_err(|e| SimError::Config(e.to_string()))?,
        min: cfg.fixation_min_ms,
    };
    let order = layout.reading_order();

    struct Step {
        word_id: usize,
        duration: f64,
        first_pass: bool,
    }
    let mut steps: Vec<Step> = Vec::new();
    let mut para_spans: Vec<(DifficultyKind, usize, usize)> = Vec::new();
    for (ordinal, &word_id) in order.iter().enumerate() {
        let text = &layout.words[word_id].text;
        let skippable = letters(text) <= cfg.skip_max_chars && !word_factor.contains_key(&word_id);
        let roll: f64 = rng.random();
        let duration = durations.sample(&mut rng);
        if !(skippable && roll < cfg.skip_probability) {
            steps.push(Step { word_id, duration, first_pass: true });
        }
        let pos = layout.position(word_id).expect("reading order word");
        let Some(&&Episode::ParagraphComprehension { paragraph_id, regressions, back_words, reread_words }) =
            para_episodes.get(&pos.paragraph_id)
        else {
            continue;
        };
        if layout.paragraph_ordinals(paragraph_id).is_some_and(|r| r.end - 1 == ordinal) {
            let first = steps.len();
            let mut current = ordinal;
            for _ in 0..regressions {
                let landing = current - back_words;
                for &word_id in &order[landing..landing + reread_words] {
                    let d = (durations.sample(&mut rng) * cfg.reread_duration_factor).round().max(cfg.fixation_min_ms);
                    steps.push(Step { word_id, duration: d, first_pass: false });
                }
                current = landing + reread_words - 1;
            }
            para_spans.push((DifficultyKind::ParagraphComprehension { paragraph_id }, first, steps.len()));
        }
    }

    // Long dwell: factor × mean first-pass dwell of fixated neighbours.
    let first_pass: BTreeMap<usize, f64> = steps.iter().filter(|s| s.first_pass).map(|s| (s.word_id, s.duration)).collect();
    for (&word_id, &factor) in &word_factor {
        let ordinal = layout.position(word_id).expect("checked").ordinal;
        let lo = ordinal.saturating_sub(5);
        let hi = (ordinal + 6).min(order.len());
        let neighbours: Vec<f64> = (lo..hi).filter(|&o| o != ordinal).filter_map(|o| first_pass.get(&order[o]).copied()).collect();
        let base = if neighbours.is_empty() { cfg.fixation_mean_ms } else { neighbours.iter().sum::<f64>() / neighbours.len() as f64 };
        if let Some(step) = steps.iter_mut().find(|s| s.first_pass && s.word_id == word_id) {
            step.duration = (factor * base).ceil();
        }
    }

    // Timeline and gaze targets.
    let landing = Normal::new(0.0, 1.0).expect("unit normal");
    let mut plan = Vec::with_capacity(steps.len());
    let mut t = 0.0;
    for step in &steps {
        let b = &layout.words[step.word_id].bbox;
        let offset = (landing.sample(&mut rng) * cfg.landing_sd_frac * b.w).clamp(-0.3 * b.w, 0.3 * b.w);
        let c = b.center();
        plan.push(PlannedFixation {
            word_id: step.word_id,
            t_start: t,
            t_end: t + step.duration,
            target: PixelPoint::new(c.x_px + offset, c.y_px),
        });
        t += step.duration + cfg.saccade_ms;
    }

    let mut labels = Vec::new();
    for (i, step) in steps.iter().enumerate() {
        if step.first_pass && word_factor.contains_key(&step.word_id) {
            labels.push(GroundTruthLabel {
                kind: DifficultyKind::UnfamiliarWord { word_id: step.word_id },
                t_start: plan[i].t_start,
                t_end: plan[i].t_end,
            });
        }
    }
    for (kind, first, end) in para_spans {
        labels.push(GroundTruthLabel { kind, t_start: plan[first].t_start, t_end: plan[end - 1].t_end });
    }
    labels.sort_by(|a, b| a.t_start.total_cmp(&b.t_start));

    let samples = sample_plan(&plan, cfg, &mut rng);
    Ok(SimSession { samples, labels, plan })
}

fn sample_plan(plan: &[PlannedFixation], cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Vec<GazeSample> {
    let Some(last) = plan.last() else { return Vec::new() };
    let noise = Normal::new(0.0, cfg.jitter_px.max(f64::MIN_POSITIVE)).expect("finite jitter");
    let period = 1000.0 / cfg.sample_rate_hz;
    let mut samples = Vec::new();
    let mut idx = 0;
    let mut k = 0u64;
    loop {
        let t = (k as f64 * period).round();
        k += 1;
        if t > last.t_end {
            break;
        }
        if samples.last().is_some_and(|s: &GazeSample| s.t >= t) {
            continue;
        }
        while idx + 1 < plan.len() && t >= plan[idx + 1].t_start {
            idx += 1;
        }
        let f = &plan[idx];
        let p = if t <= f.t_end {
            let (dx, dy) = if cfg.jitter_px > 0.0 { (noise.sample(rng), noise.sample(rng)) } else { (0.0, 0.0) };
            PixelPoint::new(f.target.x_px + dx, f.target.y_px + dy)
        } else {
            // In flight towards the next fixation.
            let next = &plan[idx + 1];
            let a = (t - f.t_end) / (next.t_start - f.t_end);
            PixelPoint::new(f.target.x_px + a * (next.target.x_px - f.target.x_px), f.target.y_px + a * (next.target.y_px - f.target.y_px))
        };
        samples.push(GazeSample { t, p, valid: true });
    }
    samples
}

/// Detection scores for one event kind (or overall).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KindMetrics {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    /// 1.0 by convention when there were no predictions (see `zero_predictions`).
    pub precision: f64,
    /// 1.0 by convention when there were no labels (see `zero_labels`).
    pub recall: f64,
    pub f1: f64,
    pub zero_predictions: bool,
    pub zero_labels: bool,
}

impl KindMetrics {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let predictions = tp + fp;
        let labels = tp + fn_;
        let precision = if predictions == 0 { 1.0 } else { tp as f64 / predictions as f64 };
        let recall = if labels == 0 { 1.0 } else { tp as f64 / labels as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision,
            recall,
            f1,
            zero_predictions: predictions == 0,
            zero_labels: labels == 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub match_window_ms: f64,
    pub per_kind: BTreeMap<String, KindMetrics>,
    pub overall: KindMetrics,
}

pub const KIND_LABELS: [&str; 2] = ["UnfamiliarWord", "ParagraphComprehension"];

/// Greedy one-to-one matching in event-time order. An event matches a label
/// with the same kind and anchor whose span, padded by `match_window_ms` on
/// both sides, contains the event time; the earliest such label is taken.
pub fn evaluate(events: &[DifficultyEvent], truth: &[GroundTruthLabel], match_window_ms: f64) -> EvalReport {
    let mut events: Vec<&DifficultyEvent> = events.iter().collect();
    events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.kind.cmp(&b.kind)));
    let mut labels: Vec<&GroundTruthLabel> = truth.iter().collect();
    labels.sort_by(|a, b| a.t_start.total_cmp(&b.t_start).then(a.t_end.total_cmp(&b.t_end)).then(a.kind.cmp(&b.kind)));

    let mut matched = vec![false; labels.len()];
    let mut counts: BTreeMap<&'static str, (usize, usize, usize)> = KIND_LABELS.iter().map(|k| (*k, (0, 0, 0))).collect();
    for ev in events {
        let hit = labels.iter().enumerate().position(|(i, l)| {
            !matched[i] && l.kind == ev.kind && ev.t >= l.t_start - match_window_ms && ev.t <= l.t_end + match_window_ms
        });
        let entry = counts.get_mut(ev.kind.label()).expect("known kind");
        match hit {
            Some(i) => {
                matched[i] = true;
                entry.0 += 1;
            }
            None => entry.1 += 1,
        }
    }
    for (i, l) in labels.iter().enumerate() {
        if !matched[i] {
            counts.get_mut(l.kind.label()).expect("known kind").2 += 1;
        }
    }
    let (tp, fp, fn_) = counts.values().fold((0, 0, 0), |a, c| (a.0 + c.0, a.1 + c.1, a.2 + c.2));
    EvalReport {
        match_window_ms,
        per_kind: counts.into_iter().map(|(k, (tp, fp, fn_))| (k.to_string(), KindMetrics::from_counts(tp, fp, fn_))).collect(),
        overall: KindMetrics::from_counts(tp, fp, fn_),
    }
}

/// Monospace typesetting of plain paragraphs into a layout document, used for
/// synthetic material and fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TypesetStyle {
    pub page_width_px: u32,
    pub margin_px: f64,
    pub char_width_px: f64,
    pub space_px: f64,
    pub line_height_px: f64,
    pub line_gap_px: f64,
    pub paragraph_gap_px: f64,
}

impl Default for TypesetStyle {
    fn default() -> Self {
        Self {
            page_width_px: 900,
            margin_px: 40.0,
            char_width_px: 13.0,
            space_px: 16.0,
            line_height_px: 24.0,
            line_gap_px: 12.0,
            paragraph_gap_px: 40.0,
        }
    }
}

pub fn typeset(paragraphs: &[&str], style: &TypesetStyle) -> LayoutDocument {
    let right_edge = f64::from(style.page_width_px) - style.margin_px;
    let mut words = Vec::new();
    let mut y = style.margin_px;
    for (pi, para) in paragraphs.iter().enumerate() {
        if pi > 0 {
            y += style.line_height_px + style.paragraph_gap_px;
        }
        let mut x = style.margin_px;
        for token in para.split_whitespace() {
            let w = token.chars().count() as f64 * style.char_width_px;
            if x > style.margin_px && x + w > right_edge {
                x = style.margin_px;
                y += style.line_height_px + style.line_gap_px;
            }
            words.push(WordRecord { id: words.len(), text: token.to_string(), x, y, w, h: style.line_height_px });
            x += w + style.space_px;
        }
    }
    let height = (y + style.line_height_px + style.margin_px).ceil() as u32;
    LayoutDocument { image: ImageDims { width_px: style.page_width_px, height_px: height }, words, lines: None, paragraphs: None }
}

/// Built-in multi-paragraph reading passage.
pub const SAMPLE_PASSAGE: [&str; 4] = [
    "Harbour towns grew up around the rhythm of the tides. Twice each day the water rose along the stone quays, lifting fishing boats until their decks were level with the street, and twice each day it drained away again to leave them resting on the mud. Children learned to read the height of the water from the weed line on the harbour wall long before they could read the printed tables that the harbour master pinned beside his door.",
    "The tables themselves were the work of patient observers. For decades someone climbed down to a marked post every hour, wrote down the level of the sea, and sent the notebooks to an office inland. There the long columns of numbers were broken into a handful of regular waves, each tied to the motion of the moon or the sun, and those waves could be added together again to predict the water years in advance.",
    "Prediction was never perfect, because weather pushes the sea around in ways no table can foresee. A steady wind blowing onshore for several days can pile water against the coast, and a deep storm lowers the pressure of the air so that the ocean surface bulges upward beneath it. When such a surge arrives together with a spring tide, the harbour fills far beyond the expected mark and the quays disappear beneath the waves.",
    "Modern gauges send their readings by radio every few minutes, and computer models blend the old harmonic predictions with forecasts of wind and pressure. The harbour master still pins a printed table beside the door, but it now carries a warning line at the bottom, and the children who once watched the weed on the wall check a small screen in the window before they run down to the boats.",
];

pub fn sample_layout_document() -> LayoutDocument {
    typeset(&SAMPLE_PASSAGE, &TypesetStyle::default())
}

/// Words that are safe anchors for injected long-dwell episodes: at least
/// `min_ordinal` words into the text, longer than the skip limit, and not in
/// the given excluded paragraphs.
pub fn eligible_word_anchors(layout: &TextLayout, cfg: &SimConfig, min_ordinal: usize, exclude_paragraphs: &BTreeSet<usize>) -> Vec<usize> {
    layout
        .reading_order()
        .iter()
        .enumerate()
        .filter(|&(o, &w)| {
            let pos = layout.position(w).expect("layout word");
            o >= min_ordinal && letters(&layout.words[w].text) > cfg.skip_max_chars && !exclude_paragraphs.contains(&pos.paragraph_id)
        })
        .map(|(_, &w)| w)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Evidence;
    use crate::layout::LayoutConfig;

    fn layout() -> TextLayout {
        TextLayout::from_document(&sample_layout_document(), &LayoutConfig::default()).unwrap()
    }

    fn ev(kind: DifficultyKind, t: f64) -> DifficultyEvent {
        DifficultyEvent { kind, t, evidence: Evidence::Regressions { count: 3, window_ms: 5000.0 }, confidence: 0.5 }
    }

    fn label(kind: DifficultyKind, t0: f64, t1: f64) -> GroundTruthLabel {
        GroundTruthLabel { kind, t_start: t0, t_end: t1 }
    }

    #[test]
    fn sample_passage_layout() {
        let l = layout();
        assert_eq!(l.paragraphs.len(), 4);
        assert!(l.word_count() > 250);
    }

    #[test]
    fn clean_session_has_no_labels_and_is_deterministic() {
        let l = layout();
        let cfg = SimConfig { seed: 42, ..Default::default() };
        let a = generate_session(&l, &cfg).unwrap();
        assert!(a.labels.is_empty());
        let b = generate_session(&l, &cfg).unwrap();
        assert_eq!(a, b);
        let other = generate_session(&l, &SimConfig { seed: 43, ..Default::default() }).unwrap();
        assert_ne!(a.samples, other.samples);
        assert!(a.samples.windows(2).all(|w| w[0].t < w[1].t));
    }

    #[test]
    fn long_dwell_episode_dominates_neighbours() {
        let l = layout();
        let target = 30;
        let cfg = SimConfig { seed: 7, episodes: vec![Episode::UnfamiliarWord { word_id: target, factor: 5.0 }], ..Default::default() };
        let s = generate_session(&l, &cfg).unwrap();
        assert_eq!(s.labels.len(), 1);
        let dwell = |w: usize| s.plan.iter().filter(|f| f.word_id == w).map(|f| f.t_end - f.t_start).sum::<f64>();
        let o = l.position(target).unwrap().ordinal;
        let neighbours: Vec<f64> = (o - 5..=o + 5).filter(|&n| n != o).map(|n| dwell(l.reading_order()[n])).filter(|&d| d > 0.0).collect();
        let mean = neighbours.iter().sum::<f64>() / neighbours.len() as f64;
        assert!(dwell(target) >= 5.0 * mean, "{} vs {}", dwell(target), mean);

        // Same check on the sample stream: samples inside the word's box.
        let period = 1000.0 / cfg.sample_rate_hz;
        let in_box = |w: usize| s.samples.iter().filter(|p| l.words[w].bbox.contains_inflated(&p.p, 0.0)).count() as f64 * period;
        let stream_neighbours: Vec<f64> =
            (o - 5..=o + 5).filter(|&n| n != o).map(|n| in_box(l.reading_order()[n])).filter(|&d| d > 0.0).collect();
        let stream_mean = stream_neighbours.iter().sum::<f64>() / stream_neighbours.len() as f64;
        assert!(in_box(target) >= 4.0 * stream_mean);
    }

    #[test]
    fn regression_episode_labels_span() {
        let l = layout();
        let cfg = SimConfig { seed: 3, episodes: vec!["paragraph:1:regressions=3,back=4".parse().unwrap()], ..Default::default() };
        let s = generate_session(&l, &cfg).unwrap();
        assert_eq!(s.labels.len(), 1);
        assert_eq!(s.labels[0].kind, DifficultyKind::ParagraphComprehension { paragraph_id: 1 });
        assert!(s.labels[0].t_end - s.labels[0].t_start < 5000.0);
        let back = s.plan.windows(2).filter(|w| {
            let a = l.position(w[0].word_id).unwrap().ordinal;
            let b = l.position(w[1].word_id).unwrap().ordinal;
            b + 2 <= a
        });
        assert_eq!(back.count(), 3);
    }

    #[test]
    fn bad_anchors_rejected() {
        let l = layout();
        let cfg = SimConfig { episodes: vec![Episode::UnfamiliarWord { word_id: 10_000, factor: 5.0 }], ..Default::default() };
        assert!(matches!(generate_session(&l, &cfg), Err(SimError::UnknownAnchor(_))));
        let cfg = SimConfig { episodes: vec!["paragraph:9".parse().unwrap()], ..Default::default() };
        assert!(matches!(generate_session(&l, &cfg), Err(SimError::UnknownAnchor(_))));
        let cfg = SimConfig { episodes: vec!["paragraph:0:regressions=40".parse().unwrap()], ..Default::default() };
        assert!(matches!(generate_session(&l, &cfg), Err(SimError::ParagraphTooShort { .. })));
    }

    #[test]
    fn inject_spec_parsing() {
        assert_eq!("word:7:factor=5".parse::<Episode>().unwrap(), Episode::UnfamiliarWord { word_id: 7, factor: 5.0 });
        assert_eq!("word:7".parse::<Episode>().unwrap(), Episode::UnfamiliarWord { word_id: 7, factor: 5.0 });
        assert_eq!(
            "paragraph:2:regressions=4,back=5,reread=3".parse::<Episode>().unwrap(),
            Episode::ParagraphComprehension { paragraph_id: 2, regressions: 4, back_words: 5, reread_words: 3 }
        );
        assert_eq!(parse_inject_list("word:1;paragraph:0").unwrap().len(), 2);
        for bad in ["glance:1", "word", "word:x", "word:1:factor", "word:1:speed=2", "paragraph:1:regressions=1.5"] {
            assert!(bad.parse::<Episode>().is_err(), "{bad}");
        }
    }

    #[test]
    fn evaluation_examples() {
        let w = |id| DifficultyKind::UnfamiliarWord { word_id: id };
        let labels = [label(w(3), 1000.0, 2000.0), label(w(9), 5000.0, 6000.0)];
        let exact = evaluate(&[ev(w(3), 2000.0), ev(w(9), 6000.0)], &labels, 500.0);
        assert_eq!(exact.overall.precision, 1.0);
        assert_eq!(exact.overall.recall, 1.0);

        let none = evaluate(&[], &labels[..1], 500.0);
        assert_eq!(none.overall.recall, 0.0);
        assert_eq!(none.overall.precision, 1.0);
        assert!(none.overall.zero_predictions);

        let half = evaluate(&[ev(w(3), 1500.0), ev(w(4), 1500.0)], &labels, 500.0);
        assert_eq!(half.overall.precision, 0.5);
        assert_eq!(half.overall.recall, 0.5);
        assert_eq!(half.per_kind["UnfamiliarWord"].false_positives, 1);

        let late = evaluate(&[ev(w(3), 2600.0)], &labels[..1], 500.0);
        assert_eq!(late.overall.true_positives, 0);
        let dup = evaluate(&[ev(w(3), 1500.0), ev(w(3), 1600.0)], &labels[..1], 500.0);
        assert_eq!((dup.overall.true_positives, dup.overall.false_positives), (1, 1));
    }

    #[test]
    fn evaluation_permutation_invariant() {
        use rand::seq::SliceRandom;
        let l = layout();
        let kinds = [DifficultyKind::UnfamiliarWord { word_id: 1 }, DifficultyKind::ParagraphComprehension { paragraph_id: 0 }];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let labels: Vec<_> = (0..20).map(|i| label(kinds[i % 2], i as f64 * 1000.0, i as f64 * 1000.0 + 400.0)).collect();
        let mut events: Vec<_> = (0..30).map(|i| ev(kinds[i % 2], i as f64 * 700.0)).collect();
        let base = evaluate(&events, &labels, 300.0);
        for _ in 0..10 {
            events.shuffle(&mut rng);
            assert_eq!(evaluate(&events, &labels, 300.0), base);
        }
        assert!(l.word_count() > 0);
    }

    #[test]
    fn truth_label_json_shape() {
        let l = label(DifficultyKind::UnfamiliarWord { word_id: 7 }, 1.0, 2.0);
        let json = serde_json::to_string(&l).unwrap();
        assert_eq!(json, r#"{"kind":"UnfamiliarWord","word_id":7,"t_start":1.0,"t_end":2.0}"#);
        assert_eq!(serde_json::from_str::<GroundTruthLabel>(&json).unwrap(), l);
    }
}
