mod common;

use axum::http::StatusCode;
use common::*;
use insertkit_pipeline::{PipelineConfig, PlacementSpec, PromptSpec, TemplateId};
use insertkit_server::session::{AssetKind, AssetRef, JobKind, PreviewRef, Session, SessionState, Stage, VariantRef};
use proptest::prelude::*;
use serde_json::json;

fn rank(s: SessionState) -> usize {
    s as usize
}

/// Forward moves advance one step, except that colorization is optional and
/// refinement can be switched off.
fn legal_move(from: SessionState, to: SessionState) -> bool {
    use SessionState::*;
    if from == Done {
        return to == Done;
    }
    rank(to) <= rank(from) + 1 || matches!((from, to), (Placed, Composed) | (Composed, Done))
}

#[derive(Debug, Clone)]
enum Action {
    Upload(bool),
    Place,
    Run(u8, usize),
    Finish(bool),
    Select(u8, usize),
    Batch,
}

fn stage(i: u8) -> Stage {
    Stage::ALL[i as usize % 3]
}

fn action() -> impl Strategy<Value = Action> {
    prop_oneof![
        any::<bool>().prop_map(Action::Upload),
        Just(Action::Place),
        (0u8..3, 0usize..10).prop_map(|(s, k)| Action::Run(s, k)),
        any::<bool>().prop_map(Action::Finish),
        (0u8..3, 0usize..6).prop_map(|(s, i)| Action::Select(s, i)),
        Just(Action::Batch),
    ]
}

fn variants(k: usize) -> Vec<VariantRef> {
    (0..k)
        .map(|i| VariantRef {
            index: i,
            sha256: format!("{i:064}"),
            file: format!("v{i}.png"),
            latent: None,
        })
        .collect()
}

/// Applies `a` through the same check/apply pairs the handlers use and
/// reports whether it was accepted.
fn step(s: &mut Session, a: &Action, jobs: &mut usize) -> bool {
    *jobs += 1;
    let job = format!("job-{jobs}");
    match *a {
        Action::Upload(bg) => {
            let kind = if bg { AssetKind::Background } else { AssetKind::Object };
            s.check_upload().is_ok() && {
                let asset = AssetRef { sha256: "a".repeat(64), file: "assets/a".into(), width: 32, height: 32 };
                s.apply_upload(kind, asset);
                true
            }
        }
        Action::Place => {
            s.check_placement().is_ok() && {
                let preview = PreviewRef { image: "p.png".into(), overlay: "o.png".into(), sha256: "p".into(), mask_area: 1 };
                s.apply_placement(PlacementSpec::new(0, 0, 1.0, (64, 64)), preview);
                true
            }
        }
        Action::Run(st, k) => {
            s.check_run(stage(st), k).is_ok() && {
                s.apply_run(stage(st), k, &job);
                true
            }
        }
        Action::Batch => {
            s.check_batch().is_ok() && {
                s.apply_batch_queued(&job);
                true
            }
        }
        Action::Finish(ok) => {
            let Some(active) = s.active_job.clone() else { return false };
            match (active.kind, ok) {
                (JobKind::Stage { stage }, true) => {
                    let k = s.stages[&stage].k;
                    if s.apply_stage_result(stage, variants(k)) {
                        s.apply_finalize_queued(&job);
                    }
                }
                (JobKind::Stage { stage }, false) => s.apply_stage_failure(stage, "boom"),
                (JobKind::Finalize, true) => s.apply_result(insertkit_server::session::ResultRef {
                    dir: "result".into(),
                    sha256: "f".into(),
                }),
                (_, _) => s.apply_job_failure("boom"),
            }
            true
        }
        Action::Select(st, i) => {
            s.check_select(stage(st), i).is_ok() && {
                if s.apply_selection(stage(st), i) {
                    s.apply_finalize_queued(&job);
                }
                true
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn random_action_sequences_keep_the_machine_consistent(
        refine in any::<bool>(),
        actions in prop::collection::vec(action(), 1..40),
    ) {
        let cfg = PipelineConfig { refine, ..Default::default() };
        let prompt = PromptSpec::new("bike", "red", "street", TemplateId::Insertion);
        let mut s = Session::new("s".into(), prompt, cfg);
        let mut jobs = 0;
        for a in &actions {
            let before = s.state;
            let audit = s.audit.len();
            let accepted = step(&mut s, a, &mut jobs);
            prop_assert!(s.check_invariants().is_ok(), "{:?} after {:?}: {:?}", s.check_invariants(), a, s.state);
            prop_assert!(legal_move(before, s.state), "{before:?} -> {:?} via {a:?}", s.state);
            if accepted {
                prop_assert!(s.audit.len() > audit, "{a:?} was not audit-logged");
            } else {
                prop_assert_eq!(s.audit.len(), audit);
            }
            for (i, e) in s.audit.iter().enumerate() {
                prop_assert_eq!(e.seq, i);
            }
        }
    }

    #[test]
    fn compose_cannot_start_from_an_unselected_multi_variant_colorize(k in 2usize..=8) {
        let prompt = PromptSpec::new("bike", "red", "street", TemplateId::Insertion);
        let mut s = Session::new("s".into(), prompt, PipelineConfig::default());
        let mut jobs = 0;
        for a in [Action::Upload(false), Action::Place, Action::Run(0, k), Action::Finish(true)] {
            prop_assert!(step(&mut s, &a, &mut jobs));
        }
        prop_assert!(s.check_run(Stage::Compose, 1).is_err());
        prop_assert!(s.check_run(Stage::Refine, 1).is_err());
    }
}

#[derive(Debug, Clone)]
enum Call {
    Upload(bool, bool),
    Place(i64, i64, u8),
    Run(u8, usize),
    Select(u8, usize),
    Batch,
    Config(bool),
    Wait,
    Result,
}

fn call() -> impl Strategy<Value = Call> {
    prop_oneof![
        (any::<bool>(), any::<bool>()).prop_map(|(bg, corrupt)| Call::Upload(bg, corrupt)),
        (-10i64..60, -10i64..60, 0u8..4).prop_map(|(x, y, s)| Call::Place(x, y, s)),
        (0u8..3, 0usize..4).prop_map(|(s, k)| Call::Run(s, k)),
        (0u8..3, 0usize..3).prop_map(|(s, i)| Call::Select(s, i)),
        Just(Call::Batch),
        any::<bool>().prop_map(Call::Config),
        Just(Call::Wait),
        Just(Call::Result),
    ]
}

async fn settle(srv: &TestServer, id: &str) {
    for _ in 0..3000 {
        let s = srv.get(&format!("/sessions/{id}")).await.json();
        if s["active_job"].is_null() {
            return;
        }
        tokio::time::sleep(std::time::Duration::from_millis(5)).await;
    }
    panic!("session {id} never settled");
}

async fn perform(srv: &TestServer, id: &str, c: &Call) -> StatusCode {
    match *c {
        Call::Upload(bg, corrupt) => {
            let mut bytes = if bg { png_rgb(&background(64, 64)) } else { png_rgb(&object(32)) };
            if corrupt {
                bytes.truncate(30);
            }
            srv.upload(id, if bg { "background" } else { "object" }, bytes).await.status
        }
        Call::Place(x, y, s) => {
            let scale = [0.5, 1.0, 1.5, 3.0][s as usize];
            srv.put_json(
                &format!("/sessions/{id}/placement"),
                json!({ "x": x, "y": y, "scale": scale, "canvas_size": [64, 64] }),
            )
            .await
            .status
        }
        Call::Run(s, k) => srv.post(&format!("/sessions/{id}/stages/{}?k={k}", stage(s))).await.status,
        Call::Select(s, i) => {
            srv.post_json(&format!("/sessions/{id}/variants/{}/select", stage(s)), json!({ "index": i }))
                .await
                .status
        }
        Call::Batch => srv.post(&format!("/sessions/{id}/run")).await.status,
        Call::Config(refine) => srv.put_json(&format!("/sessions/{id}/config"), json!({ "refine": refine })).await.status,
        Call::Wait => {
            settle(srv, id).await;
            StatusCode::OK
        }
        Call::Result => srv.get(&format!("/sessions/{id}/result")).await.status,
    }
}

#[test]
fn random_api_call_sequences_never_fail_internally() {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let srv = rt.block_on(async {
        start_with(|c| {
            c.pipeline.compose_steps = 4;
            c.pipeline.refine_inference_steps = 4;
            c.pipeline.refine_noise_steps = 1;
            c.pipeline.colorize_steps = 2;
        })
    });
    let mut runner = proptest::test_runner::TestRunner::new(ProptestConfig::with_cases(24));
    runner
        .run(&(any::<bool>(), prop::collection::vec(call(), 1..14)), |(prefix, calls)| {
            rt.block_on(async {
                let id = if prefix { srv.placed_session(json!({})).await } else { srv.session(json!({})).await };
                let mut busy = false;
                let mut state = if prefix { SessionState::Placed } else { SessionState::Created };
                for c in &calls {
                    let status = perform(&srv, &id, c).await;
                    prop_assert!(!status.is_server_error(), "{c:?} gave {status}");
                    let s: Session = serde_json::from_slice(&srv.get(&format!("/sessions/{id}")).await.body).unwrap();
                    prop_assert!(s.check_invariants().is_ok(), "{:?}", s.check_invariants());
                    // A running job may advance several steps between two looks.
                    if !busy {
                        prop_assert!(legal_move(state, s.state), "{state:?} -> {:?} via {c:?}", s.state);
                    }
                    busy = s.active_job.is_some();
                    state = s.state;
                }
                settle(&srv, &id).await;
                let s: Session = serde_json::from_slice(&srv.get(&format!("/sessions/{id}")).await.body).unwrap();
                prop_assert!(s.check_invariants().is_ok());
                for run in s.stages.values() {
                    // Tickets turn terminal just after the session is released.
                    let t = srv.wait_job(&run.job_id).await;
                    prop_assert!(t["status"] == "succeeded" || t["status"] == "failed", "{t}");
                    prop_assert_eq!(t["error"].is_null(), t["status"] == "succeeded");
                }
                Ok(())
            })
        })
        .unwrap();
}

#[test]
fn restart_fails_interrupted_jobs_and_releases_sessions() {
    use insertkit_server::jobs::JobTicket;
    use insertkit_server::store::Store;

    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let prompt = PromptSpec::new("bike", "red", "street", TemplateId::Insertion);
    let mut s = Session::new(uuid_v4(), prompt, PipelineConfig::default());
    let mut jobs = 0;
    for a in [Action::Upload(false), Action::Place] {
        assert!(step(&mut s, &a, &mut jobs));
    }
    let ticket = JobTicket::new(&s.id, JobKind::Stage { stage: Stage::Compose });
    s.apply_run(Stage::Compose, 3, &ticket.id);
    store.create(&s).unwrap();
    store.save_job(&ticket).unwrap();
    drop(store);

    let cfg = fast_config(dir.path());
    let state = insertkit_server::AppState::start(cfg, std::sync::Arc::new(|| Ok(insertkit_adapters::AdapterSet::toy())))
        .unwrap();
    let t = state.inner.store.load_job(&ticket.id).unwrap();
    assert_eq!(t.status, insertkit_server::JobStatus::Failed);
    assert_eq!(t.error.unwrap().stage, "compose");
    let s = state.inner.store.load(&s.id).unwrap();
    assert!(s.active_job.is_none());
    assert!(s.check_run(Stage::Compose, 2).is_ok());
}

fn uuid_v4() -> String {
    format!("{:08x}-0000-4000-8000-{:012x}", std::process::id(), 7)
}
