use nalgebra::Vector3;
use sara_core::classifier::{classify_batch, ClassifierConfig, DifficultyKind, Evidence};
use sara_core::gaze::{assign_fixations, detect_fixations, FixationConfig, GazeSample};
use sara_core::geometry::{gaze_to_pixel, GazeRay, ScreenPose, WorldPoint};
use sara_core::layout::{parse_layout, TextLayout};
use sara_core::session::{read_gaze_file, GazeMode, GazeRecord, SessionConfig};
use std::path::PathBuf;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

fn layout(name: &str) -> TextLayout {
    parse_layout(&std::fs::read(fixture(name).join("layout.json")).unwrap()).unwrap()
}

fn pixel_samples(name: &str) -> Vec<GazeSample> {
    read_gaze_file(&fixture(name).join("gaze.jsonl"), GazeMode::Pixel)
        .unwrap()
        .into_iter()
        .map(|r| match r {
            GazeRecord::Pixel(p) if p.valid => GazeSample::new(p.t, p.x.unwrap(), p.y.unwrap()),
            GazeRecord::Pixel(p) => GazeSample::invalid(p.t),
            GazeRecord::Ray(_) => unreachable!(),
        })
        .collect()
}

fn events(layout: &TextLayout, samples: &[GazeSample]) -> Vec<sara_core::classifier::DifficultyEvent> {
    let fixations = detect_fixations(samples, &FixationConfig::default());
    let hits = assign_fixations(&fixations, layout, 4.0);
    classify_batch(&hits, layout, &ClassifierConfig::default())
}

#[test]
fn twelve_word_layout_matches_declared_order() {
    let l = layout("twelve_words");
    let expected: serde_json::Value =
        serde_json::from_slice(&std::fs::read(fixture("twelve_words").join("expected.json")).unwrap()).unwrap();
    let ids = |v: &serde_json::Value| -> Vec<usize> { v.as_array().unwrap().iter().map(|x| x.as_u64().unwrap() as usize).collect() };
    assert_eq!(l.reading_order(), ids(&expected["reading_order"]).as_slice());
    let lines: Vec<Vec<usize>> = l.lines.iter().map(|line| line.word_ids.clone()).collect();
    let want: Vec<Vec<usize>> = expected["lines"].as_array().unwrap().iter().map(ids).collect();
    assert_eq!(lines, want);
    let paras: Vec<Vec<usize>> = l.paragraphs.iter().map(|p| p.line_ids().collect()).collect();
    let want: Vec<Vec<usize>> = expected["paragraphs"].as_array().unwrap().iter().map(ids).collect();
    assert_eq!(paras, want);

    let ctx = &expected["context"];
    let window = l.context_window(ctx["word_id"].as_u64().unwrap() as usize, ctx["n"].as_u64().unwrap() as usize).unwrap();
    assert_eq!(window.text, ctx["text"].as_str().unwrap());
    assert_eq!(l.context_window(7, 3).unwrap().before.len(), 0);
}

#[test]
fn scripted_fixtures_classify_as_constructed() {
    let easy = layout("easy_read");
    assert!(events(&easy, &pixel_samples("easy_read")).is_empty());

    let hard = layout("hard_word");
    let evs = events(&hard, &pixel_samples("hard_word"));
    assert_eq!(evs.len(), 1);
    let sesq = hard.words.iter().find(|w| w.text == "sesquipedalian").unwrap().word_id;
    assert_eq!(evs[0].kind, DifficultyKind::UnfamiliarWord { word_id: sesq });
    let Evidence::Dwell { observed_ms, baseline_ms, ratio } = evs[0].evidence else { panic!() };
    assert_eq!((observed_ms, baseline_ms), (900.0, 200.0));
    assert!((ratio - 4.5).abs() < 1e-9);
    assert!((evs[0].confidence - 0.75).abs() < 1e-12);

    let para = layout("regress_para");
    let evs = events(&para, &pixel_samples("regress_para"));
    assert_eq!(evs.len(), 1);
    assert_eq!(evs[0].kind, DifficultyKind::ParagraphComprehension { paragraph_id: 1 });
}

#[test]
fn ray_fixture_projects_onto_pixel_fixture() {
    let cfg = SessionConfig::load(&fixture("hard_word_ray").join("session.json")).unwrap();
    let g = cfg.geometry.unwrap();
    let pose = ScreenPose::try_from(g.pose).unwrap();
    let rays = read_gaze_file(&fixture("hard_word_ray").join("gaze.jsonl"), GazeMode::Ray).unwrap();
    let pixels = pixel_samples("hard_word");
    assert_eq!(rays.len(), pixels.len());
    for (r, p) in rays.iter().zip(&pixels) {
        let GazeRecord::Ray(r) = r else { unreachable!() };
        let ray = GazeRay::new(
            WorldPoint::new(r.ox.unwrap(), r.oy.unwrap(), r.oz.unwrap()),
            Vector3::new(r.dx.unwrap(), r.dy.unwrap(), r.dz.unwrap()),
            r.t,
        )
        .unwrap();
        let px = gaze_to_pixel(&ray, &pose, g.dims).unwrap();
        assert!(px.distance(&p.p) < 1e-6, "{px:?} vs {:?}", p.p);
    }
}
