//! Regenerates the scripted fixtures under `fixtures/`.
//!
//!     cargo run -p sara --example make_fixtures -- fixtures

use nalgebra::{UnitQuaternion, Vector3};
use sara_core::geometry::{pixel_to_screen_local, screen_local_to_world, ImageDims, PixelPoint, ScreenPose, WorldPoint};
use sara_core::layout::{LayoutConfig, LayoutDocument, TextLayout};
use sara_core::sim::{typeset, TypesetStyle};
use serde_json::json;
use std::fs;
use std::path::Path;

const SAMPLE_MS: f64 = 10.0;
const SACCADE_MS: f64 = 30.0;
const JITTER: [(f64, f64); 4] = [(0.0, 0.0), (1.0, -0.5), (-1.0, 0.5), (0.5, 0.0)];
const RHYTHM: [f64; 5] = [200.0, 215.0, 190.0, 205.0, 195.0];

struct Sample {
    t: f64,
    p: Option<PixelPoint>,
}

/// Fixates each (ordinal, duration) at the word centre, 100 Hz.
fn script(layout: &TextLayout, fixations: &[(usize, f64)], blink_at: Option<usize>) -> Vec<Sample> {
    let mut out = Vec::new();
    let mut t = 0.0;
    for (i, &(ordinal, dur)) in fixations.iter().enumerate() {
        let c = layout.words[layout.reading_order()[ordinal]].bbox.center();
        let n = (dur / SAMPLE_MS).round() as usize;
        for k in 0..=n {
            let (dx, dy) = JITTER[k % JITTER.len()];
            let blink = blink_at == Some(i) && (3..8).contains(&k);
            out.push(Sample { t, p: (!blink).then(|| PixelPoint::new(c.x_px + dx, c.y_px + dy)) });
            t += SAMPLE_MS;
        }
        t += SACCADE_MS - SAMPLE_MS;
    }
    out
}

fn write_pixel(path: &Path, samples: &[Sample]) {
    let lines: Vec<String> = samples
        .iter()
        .map(|s| match s.p {
            Some(p) => json!({"t": s.t, "x": p.x_px, "y": p.y_px}).to_string(),
            None => json!({"t": s.t, "valid": false}).to_string(),
        })
        .collect();
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

fn write_ray(path: &Path, samples: &[Sample], pose: &ScreenPose, dims: ImageDims) {
    let lines: Vec<String> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            // Slow head sway so origins differ between samples.
            let phase = i as f64 * 0.01;
            let origin = Vector3::new(0.01 * phase.sin(), 0.005 * phase.cos(), 0.0);
            let (ox, oy, oz) = (origin.x, origin.y, origin.z);
            match s.p {
                Some(p) => {
                    let w = screen_local_to_world(pixel_to_screen_local(p, pose, dims), pose);
                    let d = (Vector3::new(w.x, w.y, w.z) - origin).normalize();
                    json!({"t": s.t, "ox": ox, "oy": oy, "oz": oz, "dx": d.x, "dy": d.y, "dz": d.z}).to_string()
                }
                None => json!({"t": s.t, "valid": false}).to_string(),
            }
        })
        .collect();
    fs::write(path, lines.join("\n") + "\n").unwrap();
}

fn session_config(dir: &Path, layout: &str, mode: &str, geometry: Option<serde_json::Value>) {
    let mut cfg = json!({
        "layout": layout,
        "gaze_input": {"file": {"path": "gaze.jsonl", "mode": mode}},
        "llm": {"backend": {"client": "mock"}},
        "output_log": "events.jsonl"
    });
    if let Some(g) = geometry {
        cfg["geometry"] = g;
    }
    fs::write(dir.join("session.json"), serde_json::to_string_pretty(&cfg).unwrap() + "\n").unwrap();
}

fn save_layout(dir: &Path, doc: &LayoutDocument) -> TextLayout {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("layout.json"), serde_json::to_string_pretty(doc).unwrap() + "\n").unwrap();
    TextLayout::from_document(doc, &LayoutConfig::default()).unwrap()
}

fn normal_reading(ordinals: impl Iterator<Item = usize>) -> Vec<(usize, f64)> {
    ordinals.enumerate().map(|(i, o)| (o, RHYTHM[i % RHYTHM.len()])).collect()
}

fn main() {
    let root = std::env::args().nth(1).unwrap_or_else(|| "fixtures".into());
    let root = Path::new(&root);
    let style = TypesetStyle::default();

    let dir = root.join("easy_read");
    let layout = save_layout(
        &dir,
        &typeset(
            &[
                "Morning light crept across the quiet valley while farmers walked toward their fields carrying baskets of bread and cheese for the long working day ahead.",
                "Along the river several children played beside the old mill, tossing smooth pebbles into the water and counting every ripple before it faded away.",
            ],
            &style,
        ),
    );
    write_pixel(&dir.join("gaze.jsonl"), &script(&layout, &normal_reading(0..layout.word_count()), Some(9)));
    session_config(&dir, "layout.json", "pixel", None);

    let dir = root.join("hard_word");
    let layout = save_layout(
        &dir,
        &typeset(
            &["The committee reviewed every proposal carefully before the chairman described the plan as sesquipedalian and asked the authors to rewrite it using plainer words that ordinary readers could follow without a dictionary."],
            &style,
        ),
    );
    let mut fixations: Vec<(usize, f64)> = (0..layout.word_count()).map(|o| (o, 200.0)).collect();
    for (o, d) in [(8, 180.0), (9, 200.0), (10, 220.0), (11, 190.0), (12, 210.0), (13, 900.0)] {
        fixations[o].1 = d;
    }
    let samples = script(&layout, &fixations, None);
    write_pixel(&dir.join("gaze.jsonl"), &samples);
    session_config(&dir, "layout.json", "pixel", None);

    let dir = root.join("hard_word_ray");
    fs::create_dir_all(&dir).unwrap();
    let dims = layout.dims;
    let width_m = 0.45;
    let height_m = width_m * f64::from(dims.height_px) / f64::from(dims.width_px);
    let orientation = UnitQuaternion::from_euler_angles(0.05, 0.2, 0.0);
    let pose = ScreenPose::new(WorldPoint::new(0.05, -0.02, 0.7), orientation, width_m, height_m).unwrap();
    write_ray(&dir.join("gaze.jsonl"), &samples, &pose, dims);
    let geometry = json!({"pose": pose.to_spec(), "dims": dims});
    session_config(&dir, "../hard_word/layout.json", "ray", Some(geometry));

    let dir = root.join("regress_para");
    let layout = save_layout(
        &dir,
        &typeset(
            &[
                "Ships once relied on the stars to find their way across open water, and a skilled navigator could fix a position with little more than a sextant and a clock.",
                "Modern receivers compare the arrival times of signals from several satellites, and because each signal travels at the speed of light, tiny timing errors translate into large errors in the computed position on the ground.",
            ],
            &style,
        ),
    );
    let start = layout.paragraph_ordinals(1).unwrap().start;
    let q = start + 14;
    let mut path: Vec<usize> = (0..=q).collect();
    path.extend([q - 4, q - 3, q - 6, q - 5, q - 8, q - 7]);
    path.extend(q + 1..layout.word_count());
    write_pixel(&dir.join("gaze.jsonl"), &script(&layout, &normal_reading(path.into_iter()), None));
    session_config(&dir, "layout.json", "pixel", None);

    // Three lines of four words in two paragraphs, ids deliberately out of
    // reading order. expected.json declares the order by hand.
    let dir = root.join("twelve_words");
    let mut doc = typeset(
        &["alpha bravo charlie delta echo foxtrot golf hotel", "india juliet kilo lima"],
        &TypesetStyle { page_width_px: 420, ..style },
    );
    let perm = [7, 2, 11, 0, 5, 9, 1, 10, 3, 8, 6, 4];
    for (w, &id) in doc.words.iter_mut().zip(&perm) {
        w.id = id;
    }
    doc.words.sort_by_key(|w| w.id);
    save_layout(&dir, &doc);
    let expected = json!({
        "reading_order": [7, 2, 11, 0, 5, 9, 1, 10, 3, 8, 6, 4],
        "lines": [[7, 2, 11, 0], [5, 9, 1, 10], [3, 8, 6, 4]],
        "paragraphs": [[0, 1], [2]],
        "context": {"word_id": 9, "n": 2, "text": "delta echo foxtrot golf hotel"}
    });
    fs::write(dir.join("expected.json"), serde_json::to_string_pretty(&expected).unwrap() + "\n").unwrap();

    let serve = json!({
        "layout": "hard_word/layout.json",
        "gaze_input": {"live": {"mode": "pixel"}},
        "layouts": {
            "easy_read": "easy_read/layout.json",
            "hard_word": "hard_word/layout.json",
            "regress_para": "regress_para/layout.json"
        },
        "llm": {"backend": {"client": "mock"}},
        "heartbeat_ms": 5000
    });
    fs::write(root.join("serve.json"), serde_json::to_string_pretty(&serve).unwrap() + "\n").unwrap();
}
