use super::{read_gaze_file, EventEnvelope, GazeInput, GazeRecord, Session, SessionConfig, SessionError};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Append-only JSONL event log.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    out: BufWriter<File>,
}

impl EventLog {
    /// Creates (or truncates) the log, creating parent directories.
    pub fn create(path: &Path) -> Result<Self, SessionError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| SessionError::io(dir, e))?;
        }
        let file = File::create(path).map_err(|e| SessionError::io(path, e))?;
        Ok(Self { path: path.to_path_buf(), out: BufWriter::new(file) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes the envelopes and flushes, so a crash loses at most the batch in progress.
    pub fn append(&mut self, envelopes: &[EventEnvelope]) -> Result<(), SessionError> {
        for env in envelopes {
            let line = serde_json::to_string(env).map_err(|e| SessionError::io(&self.path, e))?;
            self.out.write_all(line.as_bytes()).map_err(|e| SessionError::io(&self.path, e))?;
            self.out.write_all(b"\n").map_err(|e| SessionError::io(&self.path, e))?;
        }
        self.out.flush().map_err(|e| SessionError::io(&self.path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutput {
    pub envelopes: Vec<EventEnvelope>,
    pub log_path: Option<PathBuf>,
}

/// Replays the configured gaze file through a fresh session. All inputs are
/// loaded and validated before the first sample is processed.
pub async fn run_replay(cfg: &SessionConfig) -> Result<ReplayOutput, SessionError> {
    cfg.validate()?;
    let GazeInput::File { path, mode } = &cfg.gaze_input else {
        return Err(SessionError::Config("replay needs a file gaze input".into()));
    };
    let layout = Arc::new(cfg.load_layout()?);
    let params = cfg.params()?;
    let assistant = cfg.build_assistant()?;
    let records = read_gaze_file(path, *mode)?;
    let mut session = Session::new(layout, params, assistant)?;
    // Surface projection errors before anything is written.
    for r in &records {
        session.sample_from_record(r)?;
    }
    let log = cfg.output_log.as_deref().map(EventLog::create).transpose()?;
    run_replay_records(&mut session, &records, log).await
}

/// Feeds records through an existing session, then ends it.
pub async fn run_replay_records(
    session: &mut Session,
    records: &[GazeRecord],
    mut log: Option<EventLog>,
) -> Result<ReplayOutput, SessionError> {
    let mut envelopes = Vec::new();
    for r in records {
        let batch = session.push_record(r).await?;
        if let Some(log) = log.as_mut() {
            log.append(&batch)?;
        }
        envelopes.extend(batch);
    }
    let batch = session.finish().await?;
    if let Some(log) = log.as_mut() {
        log.append(&batch)?;
    }
    envelopes.extend(batch);
    Ok(ReplayOutput { envelopes, log_path: log.map(|l| l.path.clone()) })
}

/// Reads a log strictly; any malformed line is an error.
pub fn read_envelopes(path: &Path) -> Result<Vec<EventEnvelope>, SessionError> {
    let text = std::fs::read_to_string(path).map_err(|e| SessionError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| SessionError::io(path, format!("line {}: {e}", i + 1))))
        .collect()
}
