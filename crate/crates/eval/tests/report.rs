use std::path::Path;

use insertkit_adapters::AdapterSet;
use insertkit_eval::demo::{write_demo_sources, DemoLayout};
use insertkit_eval::report::{aggregate, reference};
use insertkit_eval::study::{StudyKey, KEY_FILE};
use insertkit_eval::{
    assemble_benchmark, build_human_study_bundle, generate_outputs, run_eval, write_table, BenchmarkManifest,
    EvalError, EvalOptions, EvalRecord, LpipsMode, ResizePolicy, Scorers, StudyMethod, StudyOptions,
};
use insertkit_pipeline::{Pipeline, PipelineConfig, TemplateSet};

fn manifest(dir: &Path) -> BenchmarkManifest {
    let sources = write_demo_sources(&dir.join("data"), &DemoLayout::default(), 0).unwrap();
    assemble_benchmark(&sources).unwrap()
}

/// Writes each sample's reference composition as the method output.
fn write_references(m: &BenchmarkManifest, out: &Path) {
    std::fs::create_dir_all(out).unwrap();
    for s in &m.samples {
        reference(m, s, 0.95).unwrap().image.save(out.join(format!("{}.png", s.id))).unwrap();
    }
}

fn record(category: &str, clip: f64, hps: f64, lpips: f64) -> EvalRecord {
    EvalRecord {
        sample_id: format!("{category}-{clip}"),
        category: category.into(),
        method: "m".into(),
        clip,
        hpsv2: hps,
        lpips,
        artifact: String::new(),
        bbox: None,
        resized: false,
    }
}

#[test]
fn two_sample_mean() {
    let recs = [record("bikes", 30.0, 0.2, 0.2), record("bikes", 32.0, 0.3, 0.4)];
    let a = aggregate("bikes", &recs.iter().collect::<Vec<_>>()).unwrap();
    assert!((a.lpips - 0.3).abs() < 1e-12);
    assert_eq!(a.clip, 31.0);
    assert_eq!(a.n, 2);
}

#[test]
fn identical_outputs_have_zero_lpips_and_hand_checked_means() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path());
    let out = dir.path().join("ref");
    write_references(&m, &out);
    let report = run_eval(&m, &out, &Scorers::toy(), &EvalOptions::new("reference")).unwrap();
    assert!(report.is_complete(), "{:?} {:?}", report.missing, report.errors);
    assert_eq!(report.records.len(), m.samples.len());
    assert!(report.records.iter().all(|r| r.lpips == 0.0));
    for agg in &report.categories {
        let rs: Vec<&EvalRecord> = report.records.iter().filter(|r| r.category == agg.category).collect();
        let mut clip = 0.0;
        for r in &rs {
            clip += r.clip;
        }
        assert_eq!(agg.n, rs.len());
        assert_eq!(agg.clip, clip / rs.len() as f64);
    }
    let overall = report.overall.as_ref().unwrap();
    assert_eq!(overall.n, 67);

    let table = dir.path().join("report");
    report.write(&table).unwrap();
    let csv = std::fs::read_to_string(table.join("summary.csv")).unwrap();
    assert!(csv.starts_with("category,method,n,clip,hpsv2,lpips"));
    assert_eq!(csv.lines().last().unwrap().split(',').take(3).collect::<Vec<_>>(), ["overall", "reference", "67"]);
    assert_eq!(std::fs::read_to_string(table.join("records.jsonl")).unwrap().lines().count(), 67);
}

#[test]
fn missing_unexpected_and_mismatched_outputs_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path());
    let out = dir.path().join("ref");
    write_references(&m, &out);
    let first_bike = m.samples.iter().find(|s| s.category == "bikes").unwrap().id.clone();
    std::fs::remove_file(out.join(format!("{first_bike}.png"))).unwrap();
    image::RgbImage::new(8, 8).save(out.join("stray.png")).unwrap();
    let car = m.samples.iter().find(|s| s.category == "cars").unwrap().id.clone();
    image::RgbImage::new(32, 32).save(out.join(format!("{car}.png"))).unwrap();

    let report = run_eval(&m, &out, &Scorers::toy(), &EvalOptions::new("x")).unwrap();
    assert!(!report.is_complete());
    assert_eq!(report.missing, vec![first_bike]);
    assert_eq!(report.unexpected, vec!["stray".to_string()]);
    assert_eq!(report.errors.len(), 1);
    assert_eq!(report.errors[0].sample_id, car);
    assert!(report.errors[0].reason.contains("(32, 32)"));

    let resized = run_eval(
        &m,
        &out,
        &Scorers::toy(),
        &EvalOptions {
            resize: ResizePolicy::ResizeSecond,
            ..EvalOptions::new("x")
        },
    )
    .unwrap();
    assert!(resized.errors.is_empty());
    assert!(resized.records.iter().find(|r| r.sample_id == car).unwrap().resized);
}

#[test]
fn crop_mode_uses_sidecar_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path());
    let out = dir.path().join("ref");
    write_references(&m, &out);
    let id = &m.samples[0].id;
    std::fs::write(out.join(format!("{id}.json")), r#"{"bbox":[0,0,16,16]}"#).unwrap();
    let opts = EvalOptions {
        lpips_mode: LpipsMode::Crop,
        ..EvalOptions::new("ref")
    };
    let report = run_eval(&m, &out, &Scorers::toy(), &opts).unwrap();
    assert!(report.is_complete());
    assert_eq!(report.records[0].bbox, Some((0, 0, 16, 16)));
    assert!(report.records.iter().all(|r| r.bbox.is_some() && r.lpips == 0.0));
}

#[test]
fn pipeline_outputs_score_and_tabulate() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = manifest(dir.path());
    m.samples.retain(|s| s.category == "tficon");
    let cfg = PipelineConfig {
        compose_steps: 6,
        refine_inference_steps: 10,
        refine_noise_steps: 2,
        ..Default::default()
    };
    let ours = dir.path().join("ours");
    let dirs = generate_outputs(&m, &Pipeline::new(AdapterSet::toy()), &cfg, &ours).unwrap();
    assert_eq!(dirs.len(), 7);
    let refs = dir.path().join("ref");
    write_references(&m, &refs);

    let a = run_eval(&m, &ours, &Scorers::toy(), &EvalOptions::new("ours")).unwrap();
    let b = run_eval(&m, &refs, &Scorers::toy(), &EvalOptions::new("paste")).unwrap();
    assert!(a.is_complete() && b.is_complete());
    assert!(a.records.iter().all(|r| r.lpips > 0.0 && r.artifact.ends_with("/final.png")));
    let table = dir.path().join("comparison.csv");
    write_table(&table, &[a, b]).unwrap();
    let text = std::fs::read_to_string(table).unwrap();
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn study_bundle_selection_shuffle_and_key() {
    let dir = tempfile::tempdir().unwrap();
    let m = manifest(dir.path());
    let methods: Vec<StudyMethod> = ["ours", "alt", "paste"]
        .iter()
        .map(|name| {
            let out = dir.path().join(name);
            write_references(&m, &out);
            if *name != "paste" {
                for s in &m.samples {
                    let p = out.join(format!("{}.png", s.id));
                    let img = image::open(&p).unwrap().to_rgb8();
                    insertkit_eval::corrupt(&img, if *name == "ours" { 0.1 } else { 0.4 }, 1).save(&p).unwrap();
                }
            }
            StudyMethod {
                name: name.to_string(),
                outputs: out,
            }
        })
        .collect();
    let templates = TemplateSet::default();
    let a = build_human_study_bundle(&m, &methods, &StudyOptions::default(), &templates, &dir.path().join("a")).unwrap();
    assert_eq!(a.key.pages.len(), 21);
    for cat in ["bikes", "cars", "products"] {
        assert_eq!(a.key.pages.iter().filter(|p| p.category == cat).count(), 7);
    }
    let key = StudyKey::load(&a.dir).unwrap();
    assert_eq!(key, a.key);
    let key_bytes = std::fs::read(a.dir.join(KEY_FILE)).unwrap();
    assert_eq!(a.index.key_sha256, insertkit_pipeline::imaging::sha256_hex(&key_bytes));
    for page in &key.pages {
        for (letter, method) in &page.slots {
            let shown = image::open(a.dir.join("pages").join(&page.page).join(format!("{letter}.png"))).unwrap();
            let src = methods.iter().find(|m| &m.name == method).unwrap();
            let orig = image::open(src.outputs.join(format!("{}.png", page.sample_id))).unwrap();
            assert_eq!(shown.to_rgb8(), orig.to_rgb8());
        }
    }

    let b = build_human_study_bundle(
        &m,
        &methods,
        &StudyOptions {
            seed: 1,
            ..Default::default()
        },
        &templates,
        &dir.path().join("b"),
    )
    .unwrap();
    let order = |k: &StudyKey| k.pages.iter().map(|p| p.sample_id.clone()).collect::<Vec<_>>();
    assert_ne!(order(&a.key), order(&b.key));

    std::fs::remove_file(methods[1].outputs.join(format!("{}.png", a.key.pages[0].sample_id))).unwrap();
    match build_human_study_bundle(&m, &methods, &StudyOptions::default(), &templates, &dir.path().join("c")) {
        Err(EvalError::Samples(list)) => {
            assert_eq!(list.len(), 1);
            assert!(list[0].reason.contains("`alt`"));
        }
        other => panic!("{other:?}"),
    }
}
