use super::SessionError;
use crate::assist::{Assistant, LlmBackend, PromptTemplates, RetryPolicy, UserPrefs};
use crate::classifier::ClassifierConfig;
use crate::gaze::FixationConfig;
use crate::geometry::{ImageDims, ScreenPose, ScreenPoseSpec};
use crate::layout::{parse_layout_with, LayoutConfig, TextLayout};
use crate::sim::SimConfig;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GazeMode {
    #[default]
    Pixel,
    Ray,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GazeInput {
    File {
        path: PathBuf,
        #[serde(default)]
        mode: GazeMode,
    },
    Live {
        #[serde(default)]
        mode: GazeMode,
    },
}

impl GazeInput {
    pub fn mode(&self) -> GazeMode {
        match self {
            GazeInput::File { mode, .. } | GazeInput::Live { mode } => *mode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryConfig {
    pub pose: ScreenPoseSpec,
    pub dims: ImageDims,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    pub backend: LlmBackend,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    /// Prompt template file; built-in templates when absent.
    pub templates: Option<PathBuf>,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self { backend: LlmBackend::default(), retry: RetryPolicy::default(), max_in_flight: 2, templates: None }
    }
}

fn default_slack() -> f64 {
    4.0
}

fn default_heartbeat() -> u64 {
    5000
}

/// Session configuration file. Relative paths are resolved against the
/// directory containing the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub layout: PathBuf,
    pub gaze_input: GazeInput,
    #[serde(default)]
    pub geometry: Option<GeometryConfig>,
    #[serde(default)]
    pub layout_config: LayoutConfig,
    #[serde(default)]
    pub fixation: FixationConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub prefs: UserPrefs,
    #[serde(default)]
    pub llm: LlmSettings,
    #[serde(default = "default_slack")]
    pub slack_px: f64,
    #[serde(default)]
    pub output_log: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sim: SimConfig,
    /// Named layouts a live client may reference at init (serve mode).
    #[serde(default)]
    pub layouts: BTreeMap<String, PathBuf>,
    /// Per-session logs for live sessions (serve mode).
    #[serde(default)]
    pub log_dir: Option<PathBuf>,
    #[serde(default = "default_heartbeat")]
    pub heartbeat_ms: u64,
}

/// Pipeline settings a [`super::Session`] needs once its inputs are loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionParams {
    pub fixation: FixationConfig,
    pub classifier: ClassifierConfig,
    pub prefs: UserPrefs,
    pub slack_px: f64,
    pub geometry: Option<(ScreenPose, ImageDims)>,
}

impl Default for SessionParams {
    fn default() -> Self {
        Self {
            fixation: FixationConfig::default(),
            classifier: ClassifierConfig::default(),
            prefs: UserPrefs::default(),
            slack_px: default_slack(),
            geometry: None,
        }
    }
}

impl SessionParams {
    pub fn validate(&self, layout: &TextLayout) -> Result<(), SessionError> {
        let cfg = |m: String| SessionError::Config(m);
        let f = &self.fixation;
        if !(f.dispersion_px > 0.0 && f.min_fix_ms > 0.0 && f.max_gap_ms > 0.0) {
            return Err(cfg("fixation thresholds must be positive".into()));
        }
        self.classifier.validate().map_err(|e| cfg(e.to_string()))?;
        self.prefs.validate().map_err(cfg)?;
        if !(self.slack_px >= 0.0 && self.slack_px.is_finite()) {
            return Err(cfg("slack_px must be a non-negative number".into()));
        }
        if let Some((pose, dims)) = &self.geometry {
            pose.validate()?;
            dims.validate()?;
            if *dims != layout.dims {
                return Err(cfg(format!(
                    "geometry dims {}x{} differ from the layout image {}x{}",
                    dims.width_px, dims.height_px, layout.dims.width_px, layout.dims.height_px
                )));
            }
        }
        Ok(())
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn require_file(what: &str, p: &Path) -> Result<(), SessionError> {
    if p.is_file() {
        Ok(())
    } else {
        Err(SessionError::Config(format!("{what} {} does not exist", p.display())))
    }
}

impl SessionConfig {
    /// Parses config JSON; relative paths are resolved against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self, SessionError> {
        let mut cfg: SessionConfig = serde_json::from_str(text).map_err(|e| SessionError::Config(e.to_string()))?;
        resolve(base_dir, &mut cfg.layout);
        if let GazeInput::File { path, .. } = &mut cfg.gaze_input {
            resolve(base_dir, path);
        }
        if let Some(p) = cfg.llm.templates.as_mut() {
            resolve(base_dir, p);
        }
        if let Some(p) = cfg.output_log.as_mut() {
            resolve(base_dir, p);
        }
        if let Some(p) = cfg.log_dir.as_mut() {
            resolve(base_dir, p);
        }
        for p in cfg.layouts.values_mut() {
            resolve(base_dir, p);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SessionError> {
        let text = std::fs::read_to_string(path).map_err(|e| SessionError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    /// Checks that referenced files exist and settings are consistent.
    pub fn validate(&self) -> Result<(), SessionError> {
        require_file("layout", &self.layout)?;
        if let GazeInput::File { path, .. } = &self.gaze_input {
            require_file("gaze input", path)?;
        }
        if self.gaze_input.mode() == GazeMode::Ray && self.geometry.is_none() {
            return Err(SessionError::Config("ray-mode gaze input needs a geometry section".into()));
        }
        if let Some(p) = &self.llm.templates {
            require_file("templates", p)?;
        }
        for (name, p) in &self.layouts {
            require_file(&format!("layout `{name}`"), p)?;
        }
        if self.llm.max_in_flight == 0 {
            return Err(SessionError::Config("llm.max_in_flight must be at least 1".into()));
        }
        self.sim.validate().map_err(|e| SessionError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn load_layout_file(&self, path: &Path) -> Result<TextLayout, SessionError> {
        let bytes = std::fs::read(path).map_err(|e| SessionError::io(path, e))?;
        parse_layout_with(&bytes, &self.layout_config).map_err(|source| SessionError::Layout { path: path.to_path_buf(), source })
    }

    pub fn load_layout(&self) -> Result<TextLayout, SessionError> {
        self.load_layout_file(&self.layout)
    }

    pub fn load_named_layouts(&self) -> Result<BTreeMap<String, Arc<TextLayout>>, SessionError> {
        self.layouts.iter().map(|(name, p)| Ok((name.clone(), Arc::new(self.load_layout_file(p)?)))).collect()
    }

    pub fn params(&self) -> Result<SessionParams, SessionError> {
        let geometry = match &self.geometry {
            Some(g) => Some((ScreenPose::try_from(g.pose)?, g.dims)),
            None => None,
        };
        Ok(SessionParams {
            fixation: self.fixation,
            classifier: self.classifier,
            prefs: self.prefs.clone(),
            slack_px: self.slack_px,
            geometry,
        })
    }

    pub fn build_assistant(&self) -> Result<Assistant, SessionError> {
        let templates = match &self.llm.templates {
            Some(p) => PromptTemplates::load(p).map_err(|e| SessionError::Config(format!("templates {}: {e}", p.display())))?,
            None => PromptTemplates::default(),
        };
        let client = self.llm.backend.build().map_err(|e| SessionError::Config(format!("llm client: {e}")))?;
        Ok(Assistant::new(client, templates, self.llm.retry, self.llm.max_in_flight))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assist::{AssistanceMode, MockReply};

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = SessionConfig::from_json(r#"{"layout":"l.json","gaze_input":{"file":{"path":"g.jsonl"}}}"#, Path::new("/data")).unwrap();
        assert_eq!(cfg.layout, PathBuf::from("/data/l.json"));
        assert_eq!(cfg.gaze_input, GazeInput::File { path: "/data/g.jsonl".into(), mode: GazeMode::Pixel });
        assert_eq!(cfg.classifier, ClassifierConfig::default());
        assert_eq!(cfg.slack_px, 4.0);
        assert_eq!(cfg.llm.max_in_flight, 2);
        assert!(matches!(cfg.llm.backend, LlmBackend::Mock(_)));
    }

    #[test]
    fn full_config_round_trip() {
        let text = r#"{
            "layout": "/abs/layout.json",
            "gaze_input": {"live": {"mode": "ray"}},
            "geometry": {"pose": {"center": {"x": 0, "y": 0, "z": 0.6}, "orientation": [1, 0, 0, 0], "width_m": 0.4, "height_m": 0.3},
                         "dims": {"width_px": 800, "height_px": 600}},
            "classifier": {"dwell_ratio_threshold": 2.5},
            "prefs": {"assistance_mode": "auto", "target_language": "ja"},
            "llm": {"backend": {"client": "mock", "reply": {"filler": 50}}, "retry": {"max_retries": 0}},
            "layouts": {"a": "a.json"}
        }"#;
        let cfg = SessionConfig::from_json(text, Path::new("/base")).unwrap();
        assert_eq!(cfg.classifier.dwell_ratio_threshold, 2.5);
        assert_eq!(cfg.classifier.neighbor_window_words, 5);
        assert_eq!(cfg.prefs.assistance_mode, AssistanceMode::Auto);
        assert_eq!(cfg.llm.retry.max_retries, 0);
        assert_eq!(cfg.llm.retry.timeout_ms, 15_000);
        let LlmBackend::Mock(m) = &cfg.llm.backend else { panic!() };
        assert_eq!(m.reply, MockReply::Filler(50));
        assert_eq!(cfg.layouts["a"], PathBuf::from("/base/a.json"));
        let params = cfg.params().unwrap();
        assert!(params.geometry.is_some());
        let again: SessionConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn startup_errors() {
        assert!(SessionConfig::from_json(r#"{"layout":"l.json"}"#, Path::new(".")).is_err());
        assert!(SessionConfig::from_json(r#"{"layout":"l.json","gaze_input":{"live":{}},"surprise":1}"#, Path::new(".")).is_err());
        let cfg = SessionConfig::from_json(r#"{"layout":"missing.json","gaze_input":{"live":{}}}"#, Path::new("/nonexistent")).unwrap();
        assert!(matches!(cfg.validate(), Err(SessionError::Config(m)) if m.contains("missing.json")));
    }
}
