use sara_core::classifier::{classify_batch, ClassifierConfig, DifficultyEvent, OnlineClassifier};
use sara_core::gaze::{assign_fixations, detect_fixations, FixationConfig};
use sara_core::layout::{LayoutConfig, TextLayout};
use sara_core::session::{run_replay, Payload, SessionConfig};
use sara_core::sim::{generate_session, sample_layout_document, Episode, SimConfig};
use std::path::PathBuf;
use std::sync::Arc;

fn sorted(mut v: Vec<DifficultyEvent>) -> Vec<String> {
    let mut out: Vec<String> = v.drain(..).map(|e| serde_json::to_string(&e).unwrap()).collect();
    out.sort();
    out
}

#[test]
fn online_and_batch_agree_on_simulated_sessions() {
    let layout = Arc::new(TextLayout::from_document(&sample_layout_document(), &LayoutConfig::default()).unwrap());
    let cfg = ClassifierConfig::default();
    for seed in 0..10u64 {
        let episodes = vec![Episode::UnfamiliarWord { word_id: 40 + seed as usize, factor: 5.0 }, "paragraph:2".parse().unwrap()];
        let sim = generate_session(&layout, &SimConfig { seed, episodes, ..Default::default() }).unwrap();
        let hits = assign_fixations(&detect_fixations(&sim.samples, &FixationConfig::default()), &layout, 4.0);
        let mut online = OnlineClassifier::new(layout.clone(), cfg).unwrap();
        let streamed: Vec<DifficultyEvent> = hits.iter().flat_map(|h| online.push(h)).collect();
        let batch = classify_batch(&hits, &layout, &cfg);
        assert_eq!(sorted(streamed), sorted(batch.clone()), "seed {seed}");
        assert!(!batch.is_empty());
    }
}

fn fixture_config(name: &str, log: &std::path::Path) -> SessionConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name).join("session.json");
    let mut cfg = SessionConfig::load(&path).unwrap();
    cfg.output_log = Some(log.to_path_buf());
    cfg
}

#[tokio::test]
async fn replay_logs_are_byte_identical_and_well_formed() {
    let dir = std::env::temp_dir().join(format!("sara-pipeline-{}", std::process::id()));
    for name in ["easy_read", "hard_word", "hard_word_ray", "regress_para"] {
        let a = dir.join(format!("{name}-a.jsonl"));
        let b = dir.join(format!("{name}-b.jsonl"));
        let out = run_replay(&fixture_config(name, &a)).await.unwrap();
        run_replay(&fixture_config(name, &b)).await.unwrap();
        let bytes = std::fs::read(&a).unwrap();
        assert_eq!(bytes, std::fs::read(&b).unwrap(), "{name}");
        let lines: Vec<&str> = std::str::from_utf8(&bytes).unwrap().lines().collect();
        assert_eq!(lines.len(), out.envelopes.len());
        for (i, env) in out.envelopes.iter().enumerate() {
            assert_eq!(env.seq, i as u64);
            assert_eq!(serde_json::to_string(env).unwrap(), lines[i]);
        }
        assert!(out.envelopes.windows(2).all(|w| w[0].t <= w[1].t));
        assert!(matches!(out.envelopes.last().unwrap().payload, Payload::SessionEnded(_)));
    }
    std::fs::remove_dir_all(&dir).unwrap();
}

#[tokio::test]
async fn replay_fails_before_writing_on_bad_input() {
    let dir = std::env::temp_dir().join(format!("sara-badinput-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures");
    std::fs::write(dir.join("gaze.jsonl"), "{\"t\":0,\"x\":1,\"y\":1}\n{\"t\":-5,\"x\":1,\"y\":1}\n").unwrap();
    let text = serde_json::json!({
        "layout": fixtures.join("hard_word/layout.json"),
        "gaze_input": {"file": {"path": "gaze.jsonl"}},
        "output_log": "events.jsonl"
    })
    .to_string();
    let cfg = SessionConfig::from_json(&text, &dir).unwrap();
    assert!(run_replay(&cfg).await.is_err());
    assert!(!dir.join("events.jsonl").exists());

    let mut missing = cfg.clone();
    missing.layout = dir.join("nope.json");
    assert!(run_replay(&missing).await.is_err());
    std::fs::remove_dir_all(&dir).unwrap();
}
