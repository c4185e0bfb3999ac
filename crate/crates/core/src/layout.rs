//! Text layout: OCR word boxes, reading order, and spatial queries.
//!
//! The on-disk form is [`LayoutDocument`] (UTF-8 JSON). Lines and paragraphs
//! may be supplied by the producer; when absent they are reconstructed from
//! the box geometry. Only single-column left-to-right text is supported.

use crate::geometry::{GeometryError, ImageDims, PixelPoint};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LayoutError {
    #[error("layout parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid image dimensions: {0}")]
    Dims(#[from] GeometryError),
    #[error("layout has no words")]
    Empty,
    #[error("word {word_id}: {reason}")]
    InvalidWord { word_id: usize, reason: String },
    #[error("word ids must be dense 0..{count}; word {word_id} is out of range or repeated")]
    NonDenseIds { word_id: usize, count: usize },
    #[error("words {a} and {b} have overlapping boxes")]
    OverlappingBoxes { a: usize, b: usize },
    #[error("words {left} and {right} on the same band are separated by a column gutter; multi-column text is not supported")]
    MultiColumn { left: usize, right: usize },
    #[error("invalid lines: {0}")]
    InvalidLines(String),
    #[error("invalid paragraphs: {0}")]
    InvalidParagraphs(String),
    #[error("unknown word id {0}")]
    UnknownWord(usize),
}

/// Persisted layout, field names fixed by the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayoutDocument {
    pub image: ImageDims,
    pub words: Vec<WordRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lines: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paragraphs: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WordRecord {
    pub id: usize,
    pub text: String,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

/// Axis-aligned box, top-left origin, pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn center(&self) -> PixelPoint {
        PixelPoint::new(self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Containment test after growing the box by `slack` on every side.
    pub fn contains_inflated(&self, p: &PixelPoint, slack: f64) -> bool {
        p.x_px >= self.x - slack && p.x_px <= self.right() + slack && p.y_px >= self.y - slack && p.y_px <= self.bottom() + slack
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.right().min(other.right()) - self.x.max(other.x);
        let h = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordBox {
    pub word_id: usize,
    pub text: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub line_id: usize,
    pub word_ids: Vec<usize>,
    pub top_px: f64,
    pub bottom_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paragraph {
    pub paragraph_id: usize,
    /// First line (inclusive).
    pub first_line: usize,
    /// One past the last line.
    pub end_line: usize,
}

impl Paragraph {
    pub fn line_ids(&self) -> std::ops::Range<usize> {
        self.first_line..self.end_line
    }
}

/// Tunables for reconstructing reading order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LayoutConfig {
    /// Words share a line when their vertical centers differ by less than this
    /// multiple of the median box height.
    pub line_merge_factor: f64,
    /// A paragraph break is placed where the inter-line gap exceeds this
    /// multiple of the median gap.
    pub paragraph_gap_factor: f64,
    /// Horizontal gap between consecutive words of a line, as a multiple of the
    /// median box height, beyond which the line is treated as two columns.
    pub column_gap_factor: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self { line_merge_factor: 0.6, paragraph_gap_factor: 1.8, column_gap_factor: 4.0 }
    }
}

/// Position of a word in reading order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordPosition {
    pub line_id: usize,
    pub word_index_in_line: usize,
    /// Global reading-order index.
    pub ordinal: usize,
    pub paragraph_id: usize,
}

/// Words plus reading structure, immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct TextLayout {
    pub dims: ImageDims,
    pub words: Vec<WordBox>,
    pub lines: Vec<Line>,
    pub paragraphs: Vec<Paragraph>,
    pub full_text: String,
    order: Vec<usize>,
    positions: Vec<WordPosition>,
}

/// Words surrounding a target word, plus its sentence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextWindow {
    pub word_id: usize,
    pub before: Vec<usize>,
    pub after: Vec<usize>,
    /// The window words (before, target, after) joined by single spaces.
    pub text: String,
    pub sentence: String,
    /// Reading-order ordinals of the sentence, `start..end`.
    pub sentence_span: (usize, usize),
}

pub fn parse_layout(document: &[u8]) -> Result<TextLayout, LayoutError> {
    parse_layout_with(document, &LayoutConfig::default())
}

pub fn parse_layout_with(document: &[u8], cfg: &LayoutConfig) -> Result<TextLayout, LayoutError> {
    let doc: LayoutDocument = serde_json::from_slice(document)?;
    TextLayout::from_document(&doc, cfg)
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn median_height(words: &[WordBox]) -> f64 {
    let mut hs: Vec<f64> = words.iter().map(|w| w.bbox.h).collect();
    hs.sort_by(f64::total_cmp);
    median(&hs)
}

fn line_band(words: &[WordBox], ids: &[usize], by_id: impl Fn(usize) -> usize) -> (f64, f64) {
    ids.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(top, bottom), &id| {
        let b = &words[by_id(id)].bbox;
        (top.min(b.y), bottom.max(b.bottom()))
    })
}

/// Clusters words into lines and orders them top-to-bottom, left-to-right.
///
/// Clustering is single-linkage on vertical centers: two words are linked when
/// their centers differ by less than `line_merge_factor` × median height, and
/// lines are the connected components.
pub fn build_reading_order(words: &[WordBox], cfg: &LayoutConfig) -> Vec<Line> {
    if words.is_empty() {
        return Vec::new();
    }
    let threshold = cfg.line_merge_factor * median_height(words);
    let mut by_center: Vec<usize> = (0..words.len()).collect();
    by_center.sort_by(|&a, &b| {
        words[a].bbox.center().y_px.total_cmp(&words[b].bbox.center().y_px).then(words[a].word_id.cmp(&words[b].word_id))
    });

    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut prev_center = f64::NEG_INFINITY;
    for idx in by_center {
        let c = words[idx].bbox.center().y_px;
        match clusters.last_mut() {
            Some(cluster) if c - prev_center < threshold => cluster.push(idx),
            _ => clusters.push(vec![idx]),
        }
        prev_center = c;
    }

    let mut lines: Vec<Line> = clusters
        .into_iter()
        .map(|mut members| {
            members.sort_by(|&a, &b| {
                words[a].bbox.center().x_px.total_cmp(&words[b].bbox.center().x_px).then(words[a].word_id.cmp(&words[b].word_id))
            });
            let (top, bottom) = line_band(words, &members, |i| i);
            Line { line_id: 0, word_ids: members.iter().map(|&i| words[i].word_id).collect(), top_px: top, bottom_px: bottom }
        })
        .collect();
    lines.sort_by(|a, b| a.top_px.total_cmp(&b.top_px).then(a.word_ids[0].cmp(&b.word_ids[0])));
    for (i, line) in lines.iter_mut().enumerate() {
        line.line_id = i;
    }
    lines
}

/// Splits lines into paragraphs at unusually large vertical gaps.
///
/// The reference gap is the lower median of the inter-line gaps so that one
/// paragraph break among few lines does not inflate it.
pub fn segment_paragraphs(lines: &[Line], cfg: &LayoutConfig) -> Vec<Paragraph> {
    if lines.is_empty() {
        return Vec::new();
    }
    let whole = || vec![Paragraph { paragraph_id: 0, first_line: 0, end_line: lines.len() }];
    if lines.len() < 3 {
        return whole();
    }
    let gaps: Vec<f64> = lines.windows(2).map(|w| w[1].top_px - w[0].bottom_px).collect();
    let mut sorted = gaps.clone();
    sorted.sort_by(f64::total_cmp);
    let reference = sorted[(sorted.len() - 1) / 2];
    let threshold = cfg.paragraph_gap_factor * reference;

    let mut paragraphs = Vec::new();
    let mut start = 0;
    for (i, gap) in gaps.iter().enumerate() {
        if *gap > threshold {
            paragraphs.push(Paragraph { paragraph_id: paragraphs.len(), first_line: start, end_line: i + 1 });
            start = i + 1;
        }
    }
    paragraphs.push(Paragraph { paragraph_id: paragraphs.len(), first_line: start, end_line: lines.len() });
    paragraphs
}

fn ends_sentence(token: &str) -> bool {
    let trimmed = token.trim_end_matches(['"', '\'', ')', ']', '\u{201d}', '\u{2019}']);
    trimmed.ends_with(['.', '!', '?'])
}

impl TextLayout {
    pub fn from_document(doc: &LayoutDocument, cfg: &LayoutConfig) -> Result<Self, LayoutError> {
        doc.image.validate()?;
        if doc.words.is_empty() {
            return Err(LayoutError::Empty);
        }
        let n = doc.words.len();
        let mut slots: Vec<Option<WordBox>> = vec![None; n];
        for rec in &doc.words {
            if rec.id >= n || slots[rec.id].is_some() {
                return Err(LayoutError::NonDenseIds { word_id: rec.id, count: n });
            }
            let bad = |reason: &str| LayoutError::InvalidWord { word_id: rec.id, reason: reason.to_string() };
            if rec.text.trim().is_empty() {
                return Err(bad("text is empty"));
            }
            if ![rec.x, rec.y, rec.w, rec.h].iter().all(|v| v.is_finite()) {
                return Err(bad("non-finite box coordinate"));
            }
            if !(rec.w > 0.0 && rec.h > 0.0) {
                return Err(bad("box width and height must be positive"));
            }
            if rec.x < 0.0 || rec.y < 0.0 || rec.x + rec.w > f64::from(doc.image.width_px) || rec.y + rec.h > f64::from(doc.image.height_px)
            {
                return Err(bad("box extends outside the image"));
            }
            slots[rec.id] =
                Some(WordBox { word_id: rec.id, text: rec.text.clone(), bbox: BBox { x: rec.x, y: rec.y, w: rec.w, h: rec.h } });
        }
        let words: Vec<WordBox> = slots.into_iter().map(|w| w.expect("dense ids checked")).collect();

        for a in 0..n {
            for b in a + 1..n {
                let (ba, bb) = (&words[a].bbox, &words[b].bbox);
                if ba.intersection_area(bb) > 0.5 * ba.area().min(bb.area()) {
                    return Err(LayoutError::OverlappingBoxes { a, b });
                }
            }
        }

        let lines = match &doc.lines {
            Some(declared) => Self::declared_lines(&words, declared)?,
            None => build_reading_order(&words, cfg),
        };
        Self::check_single_column(&words, &lines, cfg)?;
        let paragraphs = match &doc.paragraphs {
            Some(declared) => Self::declared_paragraphs(lines.len(), declared)?,
            None => segment_paragraphs(&lines, cfg),
        };
        Ok(Self::assemble(doc.image, words, lines, paragraphs))
    }

    fn declared_lines(words: &[WordBox], declared: &[Vec<usize>]) -> Result<Vec<Line>, LayoutError> {
        let mut seen = vec![false; words.len()];
        let mut lines = Vec::with_capacity(declared.len());
        for (line_id, ids) in declared.iter().enumerate() {
            if ids.is_empty() {
                return Err(LayoutError::InvalidLines(format!("line {line_id} is empty")));
            }
            for &id in ids {
                if id >= words.len() {
                    return Err(LayoutError::UnknownWord(id));
                }
                if std::mem::replace(&mut seen[id], true) {
                    return Err(LayoutError::InvalidLines(format!("word {id} appears in more than one line")));
                }
            }
            for pair in ids.windows(2) {
                if words[pair[1]].bbox.center().x_px <= words[pair[0]].bbox.center().x_px {
                    return Err(LayoutError::InvalidLines(format!("line {line_id}: word {} is not right of word {}", pair[1], pair[0])));
                }
            }
            let (top, bottom) = line_band(words, ids, |id| id);
            lines.push(Line { line_id, word_ids: ids.clone(), top_px: top, bottom_px: bottom });
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(LayoutError::InvalidLines(format!("word {missing} is not in any line")));
        }
        for pair in lines.windows(2) {
            if pair[1].top_px < pair[0].top_px {
                return Err(LayoutError::InvalidLines(format!("line {} starts above line {}", pair[1].line_id, pair[0].line_id)));
            }
        }
        Ok(lines)
    }

    fn declared_paragraphs(line_count: usize, declared: &[Vec<usize>]) -> Result<Vec<Paragraph>, LayoutError> {
        let mut next = 0;
        let mut paragraphs = Vec::with_capacity(declared.len());
        for (paragraph_id, ids) in declared.iter().enumerate() {
            if ids.is_empty() {
                return Err(LayoutError::InvalidParagraphs(format!("paragraph {paragraph_id} is empty")));
            }
            for &line in ids {
                if line != next {
                    return Err(LayoutError::InvalidParagraphs(format!("paragraph {paragraph_id}: expected line {next}, found {line}")));
                }
                next += 1;
            }
            paragraphs.push(Paragraph { paragraph_id, first_line: ids[0], end_line: next });
        }
        if next != line_count {
            return Err(LayoutError::InvalidParagraphs(format!("paragraphs cover {next} of {line_count} lines")));
        }
        Ok(paragraphs)
    }

    fn check_single_column(words: &[WordBox], lines: &[Line], cfg: &LayoutConfig) -> Result<(), LayoutError> {
        let gutter = cfg.column_gap_factor * median_height(words);
        for line in lines {
            for pair in line.word_ids.windows(2) {
                if words[pair[1]].bbox.center().x_px <= words[pair[0]].bbox.center().x_px {
                    return Err(LayoutError::InvalidLines(format!(
                        "words {} and {} share a horizontal center on line {}",
                        pair[0], pair[1], line.line_id
                    )));
                }
                let gap = words[pair[1]].bbox.x - words[pair[0]].bbox.right();
                if gap > gutter {
                    return Err(LayoutError::MultiColumn { left: pair[0], right: pair[1] });
                }
            }
        }
        // Declared lines sharing a band must not sit side by side.
        for pair in lines.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if b.top_px < a.bottom_px {
                let (a0, a1) = (words[a.word_ids[0]].bbox.x, words[*a.word_ids.last().unwrap()].bbox.right());
                let (b0, b1) = (words[b.word_ids[0]].bbox.x, words[*b.word_ids.last().unwrap()].bbox.right());
                if a1 <= b0 || b1 <= a0 {
                    return Err(LayoutError::MultiColumn { left: *a.word_ids.last().unwrap(), right: b.word_ids[0] });
                }
            }
        }
        Ok(())
    }

    fn assemble(dims: ImageDims, words: Vec<WordBox>, lines: Vec<Line>, paragraphs: Vec<Paragraph>) -> Self {
        let mut positions = vec![WordPosition { line_id: 0, word_index_in_line: 0, ordinal: 0, paragraph_id: 0 }; words.len()];
        let mut order = Vec::with_capacity(words.len());
        let mut full_text = String::new();
        for para in &paragraphs {
            if !full_text.is_empty() {
                full_text.push_str("\n\n");
            }
            let mut first = true;
            for line in &lines[para.line_ids()] {
                for (idx, &id) in line.word_ids.iter().enumerate() {
                    positions[id] = WordPosition {
                        line_id: line.line_id,
                        word_index_in_line: idx,
                        ordinal: order.len(),
                        paragraph_id: para.paragraph_id,
                    };
                    order.push(id);
                    if !first {
                        full_text.push(' ');
                    }
                    first = false;
                    full_text.push_str(&words[id].text);
                }
            }
        }
        Self { dims, words, lines, paragraphs, full_text, order, positions }
    }

    pub fn to_document(&self) -> LayoutDocument {
        LayoutDocument {
            image: self.dims,
            words: self
                .words
                .iter()
                .map(|w| WordRecord { id: w.word_id, text: w.text.clone(), x: w.bbox.x, y: w.bbox.y, w: w.bbox.w, h: w.bbox.h })
                .collect(),
            lines: Some(self.lines.iter().map(|l| l.word_ids.clone()).collect()),
            paragraphs: Some(self.paragraphs.iter().map(|p| p.line_ids().collect()).collect()),
        }
    }

    pub fn word_count(&self) -> usize {
        self.words.len()
    }

    pub fn word(&self, word_id: usize) -> Option<&WordBox> {
        self.words.get(word_id)
    }

    pub fn position(&self, word_id: usize) -> Option<WordPosition> {
        self.positions.get(word_id).copied()
    }

    /// Word ids in reading order.
    pub fn reading_order(&self) -> &[usize] {
        &self.order
    }

    pub fn word_at_ordinal(&self, ordinal: usize) -> Option<usize> {
        self.order.get(ordinal).copied()
    }

    pub fn paragraph_of(&self, word_id: usize) -> Option<usize> {
        self.positions.get(word_id).map(|p| p.paragraph_id)
    }

    /// Reading-order ordinal range `start..end` of a paragraph.
    pub fn paragraph_ordinals(&self, paragraph_id: usize) -> Option<std::ops::Range<usize>> {
        let para = self.paragraphs.get(paragraph_id)?;
        let first = self.lines[para.first_line].word_ids[0];
        let last = *self.lines[para.end_line - 1].word_ids.last()?;
        Some(self.positions[first].ordinal..self.positions[last].ordinal + 1)
    }

    pub fn paragraph_text(&self, paragraph_id: usize) -> Option<String> {
        let range = self.paragraph_ordinals(paragraph_id)?;
        Some(self.join_ordinals(range))
    }

    fn join_ordinals(&self, range: std::ops::Range<usize>) -> String {
        self.order[range].iter().map(|&id| self.words[id].text.as_str()).collect::<Vec<_>>().join(" ")
    }

    /// Word under a pixel point; boxes are inflated by `slack_px`. Ties go to
    /// the nearest box center, then to the smaller word id.
    pub fn word_at(&self, p: &PixelPoint, slack_px: f64) -> Option<usize> {
        self.words
            .iter()
            .filter(|w| w.bbox.contains_inflated(p, slack_px))
            .map(|w| (w.bbox.center().distance(p), w.word_id))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, id)| id)
    }

    /// Ordinal span `start..end` of the sentence containing `ordinal`.
    /// Sentences end at a token ending in `.`, `!` or `?` and never cross a
    /// paragraph boundary.
    pub fn sentence_span(&self, ordinal: usize) -> (usize, usize) {
        let para = self.positions[self.order[ordinal]].paragraph_id;
        let bounds = self.paragraph_ordinals(para).expect("paragraph exists");
        let mut start = ordinal;
        while start > bounds.start && !ends_sentence(&self.words[self.order[start - 1]].text) {
            start -= 1;
        }
        let mut end = ordinal;
        while end + 1 < bounds.end && !ends_sentence(&self.words[self.order[end]].text) {
            end += 1;
        }
        (start, end + 1)
    }

    pub fn context_window(&self, word_id: usize, n_words: usize) -> Result<ContextWindow, LayoutError> {
        let pos = self.position(word_id).ok_or(LayoutError::UnknownWord(word_id))?;
        let lo = pos.ordinal.saturating_sub(n_words);
        let hi = (pos.ordinal + n_words + 1).min(self.order.len());
        let (s0, s1) = self.sentence_span(pos.ordinal);
        Ok(ContextWindow {
            word_id,
            before: self.order[lo..pos.ordinal].to_vec(),
            after: self.order[pos.ordinal + 1..hi].to_vec(),
            text: self.join_ordinals(lo..hi),
            sentence: self.join_ordinals(s0..s1),
            sentence_span: (s0, s1),
        })
    }
}
