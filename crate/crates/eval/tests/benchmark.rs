use insertkit_eval::benchmark::{SourcesConfig, Task};
use insertkit_eval::demo::{write_demo_sources, DemoLayout};
use insertkit_eval::{assemble_benchmark, BenchmarkManifest, EvalError};

fn demo(seed: u64) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = write_demo_sources(dir.path(), &DemoLayout::default(), seed).unwrap();
    (dir, path)
}

#[test]
fn filter_removes_exactly_the_flagged_samples() {
    let (_dir, sources) = demo(0);
    let m = assemble_benchmark(&sources).unwrap();
    let tficon: Vec<&str> = m
        .samples
        .iter()
        .filter(|s| s.category == "tficon")
        .map(|s| s.id.as_str())
        .collect();
    assert_eq!(
        tficon,
        ["tficon-00", "tficon-02", "tficon-03", "tficon-05", "tficon-06", "tficon-08", "tficon-09"]
    );
    assert_eq!(m.header.category_counts["tficon"], 7);
}

#[test]
fn custom_categories_get_exactly_twenty() {
    let (_dir, sources) = demo(0);
    let m = assemble_benchmark(&sources).unwrap();
    for cat in ["bikes", "cars", "products"] {
        assert_eq!(m.samples.iter().filter(|s| s.category == cat).count(), 20);
        assert_eq!(m.header.category_counts[cat], 20);
    }
    assert!(m.header.provenance.iter().any(|p| p.starts_with("tficon: 10 candidates, 3 removed")));
}

#[test]
fn fixed_seed_is_reproducible() {
    let (_dir, sources) = demo(4);
    let a = assemble_benchmark(&sources).unwrap();
    let b = assemble_benchmark(&sources).unwrap();
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    let text = std::fs::read_to_string(&sources).unwrap().replace("seed = 4", "seed = 5");
    std::fs::write(&sources, text).unwrap();
    let c = assemble_benchmark(&sources).unwrap();
    assert_ne!(a.to_jsonl(), c.to_jsonl());
}

#[test]
fn manifest_round_trips_and_verifies() {
    let (dir, sources) = demo(0);
    let m = assemble_benchmark(&sources).unwrap();
    let path = dir.path().join("out/manifest.jsonl");
    m.save(&path).unwrap();
    let back = BenchmarkManifest::load(&path).unwrap();
    assert_eq!(back, m);
    back.verify().unwrap();
    for s in &m.samples {
        let dims = image::image_dimensions(m.resolve(&s.object)).unwrap();
        s.placement.validate(dims).unwrap();
        assert!(!s.prompt.place.is_empty());
    }
}

#[test]
fn missing_sources_are_listed() {
    let (dir, sources) = demo(0);
    std::fs::remove_file(dir.path().join("cars/index.jsonl")).unwrap();
    match assemble_benchmark(&sources) {
        Err(EvalError::MissingInputs(paths)) => assert_eq!(paths, vec![dir.path().join("cars/index.jsonl")]),
        other => panic!("{other:?}"),
    }
    let (dir, sources) = demo(0);
    std::fs::remove_file(dir.path().join("tficon/bg_03.png")).unwrap();
    std::fs::remove_file(dir.path().join("tficon/bg_01.png")).unwrap();
    match assemble_benchmark(&sources) {
        Err(EvalError::MissingInputs(paths)) => {
            assert_eq!(paths, vec![dir.path().join("tficon/bg_03.png")], "flagged samples need no files")
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn too_few_candidates_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let layout = DemoLayout {
        per_category: 12,
        ..Default::default()
    };
    let sources = write_demo_sources(dir.path(), &layout, 0).unwrap();
    let err = assemble_benchmark(&sources).unwrap_err().to_string();
    assert!(err.contains("12 eligible samples, 20 requested"), "{err}");
}

#[test]
fn generated_task_assigns_background_prompts() {
    let (dir, sources) = demo(0);
    let mut cfg = SourcesConfig::load(&sources).unwrap();
    cfg.task = Task::Generated;
    cfg.canvas = (96, 96);
    cfg.background_prompts = vec!["a beach".into(), "a snowy road".into()];
    cfg.sources.retain(|s| s.category != "tficon");
    let m = insertkit_eval::assemble_from(&cfg, dir.path()).unwrap();
    assert_eq!(m.samples.len(), 60);
    for s in &m.samples {
        assert!(s.background.is_none());
        let p = s.background_prompt.as_deref().unwrap();
        assert!(cfg.background_prompts.iter().any(|b| b == p));
        assert_eq!(s.placement.canvas_size, (96, 96));
    }
}
