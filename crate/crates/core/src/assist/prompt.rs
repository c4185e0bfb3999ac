//! Prompt templates.
//!
//! A template file holds three sections introduced by a line containing only
//! `[DEFINITION]`, `[TRANSLATION]` or `[SIMPLIFICATION]`. Text before the first
//! header is ignored. Placeholders are `{{word}}`, `{{context}}`,
//! `{{paragraph}}`, `{{target_language}}` and `{{max_chars}}`.

use super::{AssistError, AssistRequest, CardKind};
use std::path::Path;
use thiserror::Error;

pub const DEFAULT_TEMPLATES: &str = include_str!("default_templates.txt");

const PLACEHOLDERS: [&str; 5] = ["word", "context", "paragraph", "target_language", "max_chars"];

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("template file: {0}")]
    Io(#[from] std::io::Error),
    #[error("template section [{0}] is missing")]
    MissingSection(&'static str),
    #[error("template section [{0}] appears twice")]
    DuplicateSection(String),
    #[error("unknown template section [{0}]")]
    UnknownSection(String),
    #[error("section [{section}] uses unknown placeholder {{{{{name}}}}}")]
    UnknownPlaceholder { section: &'static str, name: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    definition: String,
    translation: String,
    simplification: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATES).expect("built-in templates are valid")
    }
}

fn header(line: &str) -> Option<&str> {
    let t = line.trim();
    let inner = t.strip_prefix('[')?.strip_suffix(']')?;
    (!inner.is_empty() && inner.chars().all(|c| c.is_ascii_uppercase() || c == '_')).then_some(inner)
}

fn check_placeholders(section: &'static str, body: &str) -> Result<(), TemplateError> {
    let mut rest = body;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else { break };
        let name = after[..end].trim();
        if !PLACEHOLDERS.contains(&name) {
            return Err(TemplateError::UnknownPlaceholder { section, name: name.to_string() });
        }
        rest = &after[end + 2..];
    }
    Ok(())
}

impl PromptTemplates {
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut sections: [Option<String>; 3] = [None, None, None];
        let mut current: Option<usize> = None;
        for line in text.lines() {
            if let Some(name) = header(line) {
                let idx = match name {
                    "DEFINITION" => 0,
                    "TRANSLATION" => 1,
                    "SIMPLIFICATION" => 2,
                    other => return Err(TemplateError::UnknownSection(other.to_string())),
                };
                if sections[idx].is_some() {
                    return Err(TemplateError::DuplicateSection(name.to_string()));
                }
                sections[idx] = Some(String::new());
                current = Some(idx);
                continue;
            }
            if let Some(idx) = current {
                let body = sections[idx].as_mut().expect("section opened");
                body.push_str(line);
                body.push('\n');
            }
        }
        let names = ["DEFINITION", "TRANSLATION", "SIMPLIFICATION"];
        let mut bodies = Vec::with_capacity(3);
        for (slot, name) in sections.into_iter().zip(names) {
            let body = slot.ok_or(TemplateError::MissingSection(name))?.trim().to_string();
            check_placeholders(name, &body)?;
            bodies.push(body);
        }
        let simplification = bodies.pop().unwrap();
        let translation = bodies.pop().unwrap();
        let definition = bodies.pop().unwrap();
        Ok(Self { definition, translation, simplification })
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn section(&self, kind: CardKind) -> &str {
        match kind {
            CardKind::Definition => &self.definition,
            CardKind::Translation => &self.translation,
            CardKind::Simplification => &self.simplification,
        }
    }

    /// Instantiates the template for the request's resolved card kind.
    pub fn render(&self, req: &AssistRequest) -> Result<String, AssistError> {
        req.validate()?;
        let kind = req.card_kind();
        let target = match (kind, req.prefs.target_language.as_deref()) {
            (CardKind::Translation, None) => {
                return Err(AssistError::InvalidRequest { anchor: req.anchor(), reason: "translation requires a target language".into() })
            }
            (_, Some(tag)) => describe_language(tag),
            (_, None) => String::new(),
        };
        let max_chars = req.prefs.max_card_chars.to_string();
        let paragraph = if kind == CardKind::Simplification { req.anchor_text.as_str() } else { req.context.as_str() };
        let values = [
            ("word", req.anchor_text.as_str()),
            ("context", req.context.as_str()),
            ("paragraph", paragraph),
            ("target_language", target.as_str()),
            ("max_chars", max_chars.as_str()),
        ];
        let mut out = String::with_capacity(self.section(kind).len() + req.context.len() * 2);
        let mut rest = self.section(kind);
        while let Some(start) = rest.find("{{") {
            out.push_str(&rest[..start]);
            let after = &rest[start + 2..];
            match after.find("}}") {
                Some(end) => {
                    let name = after[..end].trim();
                    let value = values.iter().find(|(k, _)| *k == name).map(|(_, v)| *v).unwrap_or("");
                    out.push_str(value);
                    rest = &after[end + 2..];
                }
                None => {
                    out.push_str(&rest[start..]);
                    rest = "";
                }
            }
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// Builds the prompt with the built-in templates.
pub fn build_prompt(req: &AssistRequest) -> Result<String, AssistError> {
    PromptTemplates::default().render(req)
}

const LANGUAGE_NAMES: &[(&str, &str)] = &[
    ("ar", "Arabic"),
    ("de", "German"),
    ("el", "Greek"),
    ("en", "English"),
    ("es", "Spanish"),
    ("fa", "Persian"),
    ("fr", "French"),
    ("he", "Hebrew"),
    ("hi", "Hindi"),
    ("it", "Italian"),
    ("ja", "Japanese"),
    ("ko", "Korean"),
    ("nl", "Dutch"),
    ("pl", "Polish"),
    ("pt", "Portuguese"),
    ("ru", "Russian"),
    ("sq", "Albanian"),
    ("sv", "Swedish"),
    ("tr", "Turkish"),
    ("uk", "Ukrainian"),
    ("zh", "Chinese"),
];

fn primary_subtag(tag: &str) -> String {
    tag.split(['-', '_']).next().unwrap_or(tag).to_ascii_lowercase()
}

/// `"de"` → `"German (de)"`; unknown tags are passed through.
pub fn describe_language(tag: &str) -> String {
    let primary = primary_subtag(tag);
    match LANGUAGE_NAMES.iter().find(|(code, _)| *code == primary) {
        Some((_, name)) => format!("{name} ({tag})"),
        None => tag.to_string(),
    }
}

/// Writing system, used to decide whether a word is foreign to the reader.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Script {
    Latin,
    Cyrillic,
    Greek,
    Arabic,
    Hebrew,
    Devanagari,
    Han,
    Kana,
    Hangul,
    Unknown,
}

fn char_script(c: char) -> Option<Script> {
    let script = match c as u32 {
        0x0041..=0x024F if c.is_alphabetic() => Script::Latin,
        0x1E00..=0x1EFF => Script::Latin,
        0x0370..=0x03FF | 0x1F00..=0x1FFF => Script::Greek,
        0x0400..=0x052F => Script::Cyrillic,
        0x0590..=0x05FF => Script::Hebrew,
        0x0600..=0x06FF | 0x0750..=0x077F => Script::Arabic,
        0x0900..=0x097F => Script::Devanagari,
        0x3040..=0x30FF => Script::Kana,
        0x4E00..=0x9FFF | 0x3400..=0x4DBF => Script::Han,
        0xAC00..=0xD7AF | 0x1100..=0x11FF => Script::Hangul,
        _ => return None,
    };
    Some(script)
}

/// Majority script of the letters in `text`.
pub fn detect_script(text: &str) -> Script {
    let mut counts: Vec<(Script, usize)> = Vec::new();
    for s in text.chars().filter_map(char_script) {
        match counts.iter_mut().find(|(k, _)| *k == s) {
            Some((_, n)) => *n += 1,
            None => counts.push((s, 1)),
        }
    }
    counts.into_iter().max_by_key(|&(_, n)| n).map(|(s, _)| s).unwrap_or(Script::Unknown)
}

pub fn language_script(tag: &str) -> Script {
    match primary_subtag(tag).as_str() {
        "ru" | "uk" | "bg" | "sr" | "be" | "mk" | "kk" => Script::Cyrillic,
        "el" => Script::Greek,
        "ar" | "fa" | "ur" | "ps" => Script::Arabic,
        "he" | "yi" => Script::Hebrew,
        "hi" | "mr" | "ne" | "sa" => Script::Devanagari,
        "zh" => Script::Han,
        "ja" => Script::Kana,
        "ko" => Script::Hangul,
        _ => Script::Latin,
    }
}

/// Whether `text` is written in a script the target language does not use.
pub fn script_differs(text: &str, target_language: &str) -> bool {
    let word = detect_script(text);
    let target = language_script(target_language);
    match (word, target) {
        (Script::Unknown, _) => false,
        (Script::Han | Script::Kana, Script::Kana) => false,
        (a, b) => a != b,
    }
}
