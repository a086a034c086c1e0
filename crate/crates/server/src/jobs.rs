//! Job tickets and the worker pool that executes stages.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use image::{DynamicImage, RgbImage};
use insertkit_adapters::{AdapterError, AdapterSet};
use insertkit_core::LatentTensor;
use insertkit_pipeline::imaging::{decode_image, encode_png, sha256_hex};
use insertkit_pipeline::placement::white_canvas;
use insertkit_pipeline::{
    place_object, stages, ColorizeMode, FixedChoices, InsertRequest, Interaction, Pipeline, PipelineError, Prompts,
    TemplateId, TemplateSet,
};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};
use crate::session::{AssetKind, JobKind, JobStatus, ResultRef, Session, Stage, VariantRef};
use crate::store::Store;

pub type AdapterFactory = Arc<dyn Fn() -> Result<AdapterSet, AdapterError> + Send + Sync>;

pub const RESULT_DIR: &str = "result";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobError {
    pub stage: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobTicket {
    pub id: String,
    pub session_id: String,
    pub kind: JobKind,
    pub status: JobStatus,
    /// Fraction of the work done, in `[0, 1]`.
    pub progress: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<JobError>,
}

impl JobTicket {
    pub fn new(session_id: &str, kind: JobKind) -> Self {
        Self {
            id: uuid::Uuid::new_v4().to_string(),
            session_id: session_id.to_string(),
            kind,
            status: JobStatus::Queued,
            progress: 0.0,
            error: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Job {
    pub id: String,
    pub session_id: String,
    pub kind: JobKind,
}

impl From<&JobTicket> for Job {
    fn from(t: &JobTicket) -> Self {
        Self {
            id: t.id.clone(),
            session_id: t.session_id.clone(),
            kind: t.kind.clone(),
        }
    }
}

pub struct WorkerPool {
    sender: Mutex<Option<Sender<Job>>>,
    handles: Vec<JoinHandle<()>>,
}

impl WorkerPool {
    /// Builds one adapter set per worker up front so a broken model
    /// configuration fails at startup.
    pub fn start(
        workers: usize,
        store: Arc<Store>,
        templates: TemplateSet,
        factory: &AdapterFactory,
    ) -> Result<Self, AdapterError> {
        let (tx, rx) = mpsc::channel::<Job>();
        let rx = Arc::new(Mutex::new(rx));
        let mut handles = Vec::new();
        for n in 0..workers.max(1) {
            let pipeline = Pipeline::new(factory()?).with_templates(templates.clone());
            let store = store.clone();
            let rx = rx.clone();
            let handle = std::thread::Builder::new()
                .name(format!("insertkit-worker-{n}"))
                .spawn(move || worker_loop(&pipeline, &store, &rx))
                .expect("spawn worker thread");
            handles.push(handle);
        }
        Ok(Self {
            sender: Mutex::new(Some(tx)),
            handles,
        })
    }

    pub fn submit(&self, job: Job) -> ApiResult<()> {
        let sender = self.sender.lock().unwrap_or_else(|e| e.into_inner());
        sender
            .as_ref()
            .ok_or_else(|| ApiError::internal("worker pool is shut down"))?
            .send(job)
            .map_err(|_| ApiError::internal("worker pool is shut down"))
    }
}

impl Drop for WorkerPool {
    fn drop(&mut self) {
        self.sender.lock().unwrap_or_else(|e| e.into_inner()).take();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

fn worker_loop(pipeline: &Pipeline, store: &Store, rx: &Mutex<Receiver<Job>>) {
    loop {
        let job = {
            let rx = rx.lock().unwrap_or_else(|e| e.into_inner());
            match rx.recv() {
                Ok(job) => job,
                Err(_) => return,
            }
        };
        run_job(pipeline, store, &job);
    }
}

fn label(kind: &JobKind) -> String {
    match kind {
        JobKind::Stage { stage } => stage.to_string(),
        JobKind::Finalize => "finalize".into(),
        JobKind::Batch => "batch".into(),
    }
}

fn failure(err: &ApiError, default_stage: &str) -> JobError {
    JobError {
        stage: default_stage.to_string(),
        message: err.to_string(),
    }
}

pub fn run_job(pipeline: &Pipeline, store: &Store, job: &Job) {
    let _ = store.update_job(&job.id, |t| t.status = JobStatus::Running);
    tracing::info!(job = %job.id, session = %job.session_id, kind = %label(&job.kind), "job started");
    let outcome = match &job.kind {
        JobKind::Stage { stage } => run_stage_job(pipeline, store, job, *stage),
        JobKind::Finalize => finalize(pipeline, store, job),
        JobKind::Batch => run_batch(pipeline, store, job),
    };
    match outcome {
        Ok(()) => {
            let _ = store.update_job(&job.id, |t| {
                t.status = JobStatus::Succeeded;
                t.progress = 1.0;
            });
        }
        Err((stage, err)) => {
            tracing::warn!(job = %job.id, stage = %stage, error = %err, "job failed");
            let message = err.to_string();
            let _ = store.update(&job.session_id, |s| {
                if s.active_job.as_ref().is_some_and(|a| a.id == job.id) {
                    match Stage::ALL.into_iter().find(|st| st.as_str() == stage) {
                        Some(st) if s.stages.get(&st).is_some_and(|r| !r.status.is_terminal()) => {
                            s.apply_stage_failure(st, &message)
                        }
                        _ => s.apply_job_failure(&message),
                    }
                }
                Ok(())
            });
            let _ = store.update_job(&job.id, |t| {
                t.status = JobStatus::Failed;
                t.error = Some(failure(&err, &stage));
            });
        }
    }
}

type JobResult = Result<(), (String, ApiError)>;

fn at(stage: &str) -> impl Fn(ApiError) -> (String, ApiError) + '_ {
    move |e| (stage.to_string(), e)
}

fn pipeline_err(e: PipelineError) -> ApiError {
    ApiError::internal(e)
}

struct Inputs {
    object: DynamicImage,
    background: Option<RgbImage>,
}

fn inputs(store: &Store, s: &Session) -> ApiResult<Inputs> {
    let asset = |kind: AssetKind| -> ApiResult<Option<DynamicImage>> {
        match s.assets.get(&kind) {
            Some(a) => Ok(Some(decode_image(&store.read_file(&s.id, &a.file)?).map_err(pipeline_err)?)),
            None => Ok(None),
        }
    };
    let object = asset(AssetKind::Object)?.ok_or_else(|| ApiError::conflict("session has no object"))?;
    let background = asset(AssetKind::Background)?.map(|b| b.to_rgb8());
    Ok(Inputs { object, background })
}

fn selected(s: &Session, stage: Stage) -> Option<&VariantRef> {
    let run = s.stages.get(&stage)?;
    run.variants.get(run.selected?)
}

/// Object as it enters composition: the selected colorization if any.
pub fn current_object(store: &Store, s: &Session) -> ApiResult<DynamicImage> {
    match selected(s, Stage::Colorize) {
        Some(v) => decode_image(&store.read_file(&s.id, &v.file)?).map_err(pipeline_err),
        None => inputs(store, s).map(|i| i.object),
    }
}

fn prompt_text(templates: &TemplateSet, s: &Session, id: TemplateId) -> ApiResult<String> {
    let prompts = Prompts::for_insert(templates, &s.prompt).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    prompts
        .text(id)
        .map(str::to_string)
        .map_err(|e| ApiError::unprocessable(e.to_string()))
}

/// Computes the variants of `stage` for the session snapshot `s` and writes
/// them below the session directory.
fn compute_stage(
    pipeline: &Pipeline,
    store: &Store,
    s: &Session,
    stage: Stage,
    job_id: &str,
) -> ApiResult<Vec<VariantRef>> {
    let run = s
        .stages
        .get(&stage)
        .ok_or_else(|| ApiError::conflict(format!("{stage} was not started")))?;
    let adapters = &pipeline.adapters;
    let cfg = &s.config;
    let dir = format!("stages/{stage}/{}", run.attempt);
    let mut variants = Vec::with_capacity(run.k);
    let mut store_variant = |v: usize, image: &DynamicImage, latent: Option<&LatentTensor>| -> ApiResult<()> {
        let bytes = encode_png(image).map_err(pipeline_err)?;
        let file = format!("{dir}/variant_{v}.png");
        store.write_file(&s.id, &file, &bytes)?;
        let latent = match latent {
            Some(z) => {
                let rel = format!("{dir}/variant_{v}.latent");
                store.write_file(&s.id, &rel, &z.to_bytes())?;
                Some(rel)
            }
            None => None,
        };
        variants.push(VariantRef {
            index: v,
            sha256: sha256_hex(&bytes),
            file,
            latent,
        });
        let _ = store.update_job(job_id, |t| t.progress = (v + 1) as f64 / run.k as f64);
        Ok(())
    };
    match stage {
        Stage::Colorize => {
            let object = inputs(store, s)?.object;
            let prompt = prompt_text(&pipeline.templates, s, TemplateId::Colorization)?;
            for (v, &seed) in run.seeds.iter().enumerate() {
                let out = stages::colorize(adapters, &object, &prompt, cfg, seed).map_err(pipeline_err)?;
                store_variant(v, &stages::restore_colorized(&object, &out), None)?;
            }
        }
        Stage::Compose => {
            let placement = s.placement.ok_or_else(|| ApiError::conflict("session is not placed"))?;
            let background = inputs(store, s)?.background;
            let object = current_object(store, s)?;
            let canvas = background.clone().unwrap_or_else(|| white_canvas(placement.canvas_size));
            let placed = place_object(&object, &canvas, &placement, cfg.mask_threshold).map_err(pipeline_err)?;
            let prompt = prompt_text(&pipeline.templates, s, TemplateId::Insertion)?;
            for (v, &seed) in run.seeds.iter().enumerate() {
                let out = stages::compose(
                    adapters,
                    &placed.image,
                    &placed.mask,
                    background.as_ref(),
                    &prompt,
                    cfg,
                    seed,
                    None,
                )
                .map_err(pipeline_err)?;
                store_variant(v, &DynamicImage::ImageRgb8(out.image), out.latent.as_ref())?;
            }
        }
        Stage::Refine => {
            let source = selected(s, Stage::Compose).ok_or_else(|| ApiError::conflict("no compose variant selected"))?;
            let image = decode_image(&store.read_file(&s.id, &source.file)?)
                .map_err(pipeline_err)?
                .to_rgb8();
            let latent = match &source.latent {
                Some(rel) => Some(LatentTensor::from_bytes(&store.read_file(&s.id, rel)?).map_err(ApiError::internal)?),
                None => None,
            };
            let prompt = prompt_text(&pipeline.templates, s, TemplateId::Insertion)?;
            for (v, &seed) in run.seeds.iter().enumerate() {
                let out = stages::refine(adapters, &image, latent.as_ref(), &prompt, cfg, seed).map_err(pipeline_err)?;
                store_variant(v, &DynamicImage::ImageRgb8(out), None)?;
            }
        }
    }
    Ok(variants)
}

/// Records finished variants unless the session moved on meanwhile.
/// Returns whether the session now needs finalizing.
fn commit_stage(store: &Store, job: &Job, stage: Stage, variants: Vec<VariantRef>) -> ApiResult<bool> {
    store.update(&job.session_id, |s| {
        let current = s.active_job.as_ref().is_some_and(|a| a.id == job.id)
            && s.stages.get(&stage).is_some_and(|r| r.job_id == job.id);
        if !current {
            return Err(ApiError::conflict("session changed while the job ran"));
        }
        Ok(s.apply_stage_result(stage, variants))
    })
}

fn run_stage_job(pipeline: &Pipeline, store: &Store, job: &Job, stage: Stage) -> JobResult {
    let name = stage.as_str();
    let s = store.load(&job.session_id).map_err(at(name))?;
    let variants = compute_stage(pipeline, store, &s, stage, &job.id).map_err(at(name))?;
    if commit_stage(store, job, stage, variants).map_err(at(name))? {
        store
            .update(&job.session_id, |s| {
                s.apply_finalize_queued(&job.id);
                Ok(())
            })
            .map_err(at("finalize"))?;
        finalize(pipeline, store, job)?;
    }
    Ok(())
}

/// One variant per stage, selected automatically, then finalized.
fn run_batch(pipeline: &Pipeline, store: &Store, job: &Job) -> JobResult {
    let s = store.load(&job.session_id).map_err(at("batch"))?;
    let object = current_object(store, &s).map_err(at("colorize"))?;
    let colorize = stages::needs_colorization(&object, &s.config)
        .map_err(pipeline_err)
        .map_err(at("colorize"))?;
    let mut plan: Vec<Stage> = Vec::new();
    if colorize {
        plan.push(Stage::Colorize);
    }
    plan.push(Stage::Compose);
    if s.config.refine {
        plan.push(Stage::Refine);
    }
    for stage in plan {
        let name = stage.as_str();
        let snapshot = store
            .update(&job.session_id, |s| {
                s.apply_run(stage, 1, &job.id);
                Ok(s.clone())
            })
            .map_err(at(name))?;
        let variants = compute_stage(pipeline, store, &snapshot, stage, &job.id).map_err(at(name))?;
        let done = commit_stage(store, job, stage, variants).map_err(at(name))?;
        store
            .update(&job.session_id, |s| {
                if done {
                    s.apply_finalize_queued(&job.id);
                } else {
                    s.active_job = Some(crate::session::ActiveJob {
                        id: job.id.clone(),
                        kind: JobKind::Batch,
                    });
                }
                Ok(())
            })
            .map_err(at(name))?;
    }
    finalize(pipeline, store, job)
}

/// Writes the replayable run directory by re-executing the pipeline with the
/// session's seeds, candidate counts and selections, then checks the final
/// image against the selected variant.
fn finalize(pipeline: &Pipeline, store: &Store, job: &Job) -> JobResult {
    let err = at("finalize");
    let s = store.load(&job.session_id).map_err(&err)?;
    let last = if s.config.refine { Stage::Refine } else { Stage::Compose };
    let expected = selected(&s, last)
        .ok_or_else(|| ApiError::conflict(format!("no {last} variant selected")))
        .map_err(&err)?
        .sha256
        .clone();
    let Inputs { object, background } = inputs(store, &s).map_err(&err)?;
    let req = InsertRequest {
        object,
        background,
        placement: s.placement.ok_or_else(|| ApiError::conflict("session is not placed")).map_err(&err)?,
        prompt: s.prompt.clone(),
        segment_category: None,
    };
    let mut cfg = s.config.clone();
    cfg.colorize = if selected(&s, Stage::Colorize).is_some() {
        ColorizeMode::Force
    } else {
        ColorizeMode::Off
    };
    let (plan, selections) = s.plan();
    let mut choices = FixedChoices(selections);
    let prompts = Prompts::for_insert(&pipeline.templates, &s.prompt)
        .map_err(pipeline_err)
        .map_err(&err)?;
    let out = store.session_dir(&s.id).join(RESULT_DIR);
    remove_stale(&out).map_err(&err)?;
    let outcome = pipeline
        .insert_planned(&req, &prompts, &cfg, Interaction::Interactive(&mut choices), &plan, &out)
        .map_err(|e| {
            let stage = e.stage().unwrap_or("finalize").to_string();
            (stage, pipeline_err(e))
        })?;
    let digest = outcome
        .manifest
        .final_output
        .as_ref()
        .map(|o| o.file.sha256.clone())
        .unwrap_or_default();
    if digest != expected {
        let _ = std::fs::remove_dir_all(&out);
        return Err(err(ApiError::internal(format!(
            "final image {digest} differs from the selected {last} variant {expected}"
        ))));
    }
    store
        .update(&job.session_id, |s| {
            if !s.active_job.as_ref().is_some_and(|a| a.id == job.id) {
                return Err(ApiError::conflict("session changed while the job ran"));
            }
            s.apply_result(ResultRef {
                dir: RESULT_DIR.into(),
                sha256: digest.clone(),
            });
            Ok(())
        })
        .map_err(&err)
}

fn remove_stale(dir: &Path) -> ApiResult<()> {
    if dir.exists() {
        std::fs::remove_dir_all(dir)?;
    }
    Ok(())
}

/// Fails every job left unfinished by a previous process and releases the
/// sessions they held.
pub fn recover(store: &Store) -> std::io::Result<usize> {
    let mut failed = 0;
    let mut held: BTreeMap<String, String> = BTreeMap::new();
    for id in store.job_ids()? {
        let Ok(ticket) = store.load_job(&id) else { continue };
        if ticket.status.is_terminal() {
            continue;
        }
        let stage = label(&ticket.kind);
        let _ = store.update_job(&id, |t| {
            t.status = JobStatus::Failed;
            t.error = Some(JobError {
                stage,
                message: "interrupted by a server restart".into(),
            });
        });
        held.insert(ticket.id.clone(), ticket.session_id.clone());
        failed += 1;
    }
    for (job, session) in held {
        let _ = store.update(&session, |s| {
            if s.active_job.as_ref().is_some_and(|a| a.id == job) {
                let running: Vec<Stage> = s
                    .stages
                    .values()
                    .filter(|r| !r.status.is_terminal())
                    .map(|r| r.stage)
                    .collect();
                for st in running {
                    s.apply_stage_failure(st, "interrupted by a server restart");
                }
                s.apply_job_failure("interrupted by a server restart");
            }
            Ok(())
        });
    }
    Ok(failed)
}
