//! Session records and the stage state machine. Everything here is pure;
//! persistence and execution live in `store` and `jobs`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use insertkit_pipeline::imaging::stage_seed;
use insertkit_pipeline::{PipelineConfig, PlacementSpec, PromptSpec, RunPlan, TemplateId, MAX_VARIANTS};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Colorize,
    Compose,
    Refine,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Colorize, Stage::Compose, Stage::Refine];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Colorize => "colorize",
            Stage::Compose => "compose",
            Stage::Refine => "refine",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = ApiError;

    fn from_str(s: &str) -> ApiResult<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| ApiError::NotFound(format!("unknown stage `{s}`")))
    }
}

/// `created → placed → colorized? → composed → refined → done`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Created,
    Placed,
    Colorized,
    Composed,
    Refined,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetKind {
    Object,
    Background,
}

impl FromStr for AssetKind {
    type Err = ApiError;

    fn from_str(s: &str) -> ApiResult<Self> {
        match s {
            "object" => Ok(AssetKind::Object),
            "background" => Ok(AssetKind::Background),
            _ => Err(ApiError::BadRequest(format!("asset kind must be `object` or `background`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssetRef {
    pub sha256: String,
    /// Relative to the session directory.
    pub file: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreviewRef {
    pub image: String,
    pub overlay: String,
    pub sha256: String,
    pub mask_area: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
}

impl JobStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobStatus::Succeeded | JobStatus::Failed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantRef {
    pub index: usize,
    pub sha256: String,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRun {
    pub stage: Stage,
    pub attempt: u32,
    pub k: usize,
    pub job_id: String,
    pub status: JobStatus,
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantRef>,
    pub selected: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRef {
    /// Run directory, relative to the session directory.
    pub dir: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub seq: usize,
    pub action: String,
    pub detail: serde_json::Value,
}

/// What the active job does.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum JobKind {
    Stage { stage: Stage },
    /// Writes the replayable run directory from the selections.
    Finalize,
    /// All stages with one variant each.
    Batch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveJob {
    pub id: String,
    pub kind: JobKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub state: SessionState,
    pub assets: BTreeMap<AssetKind, AssetRef>,
    pub placement: Option<PlacementSpec>,
    pub preview: Option<PreviewRef>,
    pub prompt: PromptSpec,
    pub config: PipelineConfig,
    pub stages: BTreeMap<Stage, StageRun>,
    pub attempts: BTreeMap<Stage, u32>,
    pub active_job: Option<ActiveJob>,
    pub result: Option<ResultRef>,
    pub audit: Vec<AuditEntry>,
}

pub const MIN_K: usize = 1;

impl Session {
    pub fn new(id: String, prompt: PromptSpec, config: PipelineConfig) -> Self {
        let mut s = Self {
            id,
            state: SessionState::Created,
            assets: BTreeMap::new(),
            placement: None,
            preview: None,
            prompt,
            config,
            stages: BTreeMap::new(),
            attempts: BTreeMap::new(),
            active_job: None,
            result: None,
            audit: Vec::new(),
        };
        s.log("create", serde_json::json!({ "prompt": s.prompt, "config": s.config }));
        s
    }

    pub fn log(&mut self, action: &str, detail: serde_json::Value) {
        self.audit.push(AuditEntry {
            seq: self.audit.len(),
            action: action.to_string(),
            detail,
        });
    }

    fn idle(&self) -> ApiResult<()> {
        match &self.active_job {
            Some(job) => Err(ApiError::conflict(format!("job {} is still running", job.id))),
            None => Ok(()),
        }
    }

    fn not_done(&self) -> ApiResult<()> {
        if self.state == SessionState::Done {
            return Err(ApiError::conflict("session is done"));
        }
        Ok(())
    }

    /// Settings may change only before any stage ran.
    pub fn check_configurable(&self) -> ApiResult<()> {
        self.idle()?;
        if !matches!(self.state, SessionState::Created | SessionState::Placed) || !self.stages.is_empty() {
            return Err(ApiError::conflict(format!(
                "settings are fixed once stages have run (state {:?})",
                self.state
            )));
        }
        Ok(())
    }

    pub fn check_upload(&self) -> ApiResult<()> {
        self.check_configurable()
    }

    /// Records an uploaded asset. Replacing an asset drops the placement.
    pub fn apply_upload(&mut self, kind: AssetKind, asset: AssetRef) {
        self.log("upload", serde_json::json!({ "kind": kind, "sha256": asset.sha256 }));
        self.assets.insert(kind, asset);
        self.placement = None;
        self.preview = None;
        self.state = SessionState::Created;
    }

    pub fn check_placement(&self) -> ApiResult<()> {
        self.idle()?;
        if !matches!(
            self.state,
            SessionState::Created | SessionState::Placed | SessionState::Colorized
        ) {
            return Err(ApiError::conflict(format!(
                "placement is fixed once composition started (state {:?})",
                self.state
            )));
        }
        if !self.assets.contains_key(&AssetKind::Object) {
            return Err(ApiError::conflict("upload an object before placing it"));
        }
        Ok(())
    }

    pub fn apply_placement(&mut self, spec: PlacementSpec, preview: PreviewRef) {
        self.log("placement", serde_json::json!({ "placement": spec, "preview": preview.sha256 }));
        self.placement = Some(spec);
        self.preview = Some(preview);
        self.stages.remove(&Stage::Compose);
        self.stages.remove(&Stage::Refine);
        if self.state == SessionState::Created {
            self.state = SessionState::Placed;
        }
    }

    /// State the session returns to when `stage` is (re)started.
    fn state_before(&self, stage: Stage) -> SessionState {
        match stage {
            Stage::Colorize => SessionState::Placed,
            Stage::Compose => {
                if self.stages.get(&Stage::Colorize).is_some_and(|r| r.selected.is_some()) {
                    SessionState::Colorized
                } else {
                    SessionState::Placed
                }
            }
            Stage::Refine => SessionState::Composed,
        }
    }

    pub fn check_run(&self, stage: Stage, k: usize) -> ApiResult<()> {
        if !(MIN_K..=MAX_VARIANTS).contains(&k) {
            return Err(ApiError::unprocessable(format!("k must lie in {MIN_K}..={MAX_VARIANTS}, got {k}")));
        }
        self.idle()?;
        self.not_done()?;
        use SessionState::*;
        let legal = match stage {
            Stage::Colorize => matches!(self.state, Placed | Colorized),
            Stage::Compose => matches!(self.state, Placed | Colorized | Composed),
            Stage::Refine => matches!(self.state, Composed | Refined),
        };
        if !legal {
            return Err(ApiError::conflict(format!("cannot run {stage} in state {:?}", self.state)));
        }
        if stage == Stage::Compose && self.state == Placed {
            if let Some(run) = self.stages.get(&Stage::Colorize) {
                if run.selected.is_none() {
                    return Err(ApiError::conflict("select a colorize variant first"));
                }
            }
        }
        if stage == Stage::Refine && !self.config.refine {
            return Err(ApiError::conflict("refinement is disabled in this session's config"));
        }
        let template = match stage {
            Stage::Colorize => TemplateId::Colorization,
            _ => TemplateId::Insertion,
        };
        self.check_prompt(template)
    }

    pub fn check_prompt(&self, template: TemplateId) -> ApiResult<()> {
        insertkit_pipeline::TemplateSet::default()
            .render(&self.prompt.with_template(template))
            .map(|_| ())
            .map_err(|e| ApiError::unprocessable(e.to_string()))
    }

    /// Starts `stage`: drops it and every later stage, rewinds the state and
    /// derives fresh seeds for this attempt.
    pub fn apply_run(&mut self, stage: Stage, k: usize, job_id: &str) {
        let attempt = self.attempts.get(&stage).map_or(0, |a| a + 1);
        self.attempts.insert(stage, attempt);
        self.state = self.state_before(stage);
        self.stages.retain(|&s, _| s < stage);
        self.result = None;
        let key = if attempt == 0 {
            stage.to_string()
        } else {
            format!("{stage}.{attempt}")
        };
        let seeds = (0..k).map(|v| stage_seed(self.config.seed, &key, v)).collect();
        self.stages.insert(
            stage,
            StageRun {
                stage,
                attempt,
                k,
                job_id: job_id.to_string(),
                status: JobStatus::Queued,
                seeds,
                variants: Vec::new(),
                selected: None,
            },
        );
        self.active_job = Some(ActiveJob {
            id: job_id.to_string(),
            kind: JobKind::Stage { stage },
        });
        self.log("run_stage", serde_json::json!({ "stage": stage, "k": k, "job": job_id, "attempt": attempt }));
    }

    /// Job finished. A single variant is selected automatically. Returns
    /// whether the run needs finalizing.
    pub fn apply_stage_result(&mut self, stage: Stage, variants: Vec<VariantRef>) -> bool {
        self.active_job = None;
        let Some(run) = self.stages.get_mut(&stage) else {
            return false;
        };
        run.status = JobStatus::Succeeded;
        run.variants = variants;
        let single = run.k == 1;
        self.log("stage_done", serde_json::json!({ "stage": stage }));
        if single {
            self.apply_selection(stage, 0)
        } else {
            false
        }
    }

    pub fn apply_stage_failure(&mut self, stage: Stage, error: &str) {
        self.active_job = None;
        if let Some(run) = self.stages.get_mut(&stage) {
            run.status = JobStatus::Failed;
        }
        self.log("stage_failed", serde_json::json!({ "stage": stage, "error": error }));
    }

    pub fn check_select(&self, stage: Stage, index: usize) -> ApiResult<()> {
        self.idle()?;
        self.not_done()?;
        let run = self
            .stages
            .get(&stage)
            .ok_or_else(|| ApiError::conflict(format!("{stage} has not run")))?;
        if run.status != JobStatus::Succeeded {
            return Err(ApiError::conflict(format!("{stage} job has not finished")));
        }
        if self.stages.keys().any(|&s| s > stage) {
            return Err(ApiError::conflict(format!("a later stage already ran; rerun {stage} instead")));
        }
        if index >= run.variants.len() {
            return Err(ApiError::unprocessable(format!(
                "index {index} out of range for {} variants",
                run.variants.len()
            )));
        }
        Ok(())
    }

    /// Pins a variant and advances. Returns whether the run needs finalizing.
    pub fn apply_selection(&mut self, stage: Stage, index: usize) -> bool {
        if let Some(run) = self.stages.get_mut(&stage) {
            run.selected = Some(index);
        }
        self.log("select", serde_json::json!({ "stage": stage, "index": index }));
        self.state = match stage {
            Stage::Colorize => SessionState::Colorized,
            Stage::Compose => SessionState::Composed,
            Stage::Refine => SessionState::Refined,
        };
        stage == Stage::Refine || (stage == Stage::Compose && !self.config.refine)
    }

    pub fn apply_finalize_queued(&mut self, job_id: &str) {
        self.active_job = Some(ActiveJob {
            id: job_id.to_string(),
            kind: JobKind::Finalize,
        });
        self.log("finalize", serde_json::json!({ "job": job_id }));
    }

    pub fn check_batch(&self) -> ApiResult<()> {
        self.idle()?;
        if self.state != SessionState::Placed || !self.stages.is_empty() {
            return Err(ApiError::conflict(format!(
                "batch runs start from a placed session without stages (state {:?})",
                self.state
            )));
        }
        self.check_prompt(TemplateId::Insertion)
    }

    pub fn apply_batch_queued(&mut self, job_id: &str) {
        self.active_job = Some(ActiveJob {
            id: job_id.to_string(),
            kind: JobKind::Batch,
        });
        self.log("batch", serde_json::json!({ "job": job_id }));
    }

    pub fn apply_result(&mut self, result: ResultRef) {
        self.active_job = None;
        self.log("done", serde_json::json!({ "sha256": result.sha256 }));
        self.result = Some(result);
        self.state = SessionState::Done;
    }

    pub fn apply_job_failure(&mut self, error: &str) {
        self.active_job = None;
        self.log("job_failed", serde_json::json!({ "error": error }));
    }

    /// Selections, seeds and candidate counts for the run directory.
    pub fn plan(&self) -> (RunPlan, BTreeMap<String, usize>) {
        let mut plan = RunPlan::default();
        let mut selections = BTreeMap::new();
        for run in self.stages.values() {
            let name = run.stage.to_string();
            for (v, &seed) in run.seeds.iter().enumerate() {
                plan.seeds.insert((name.clone(), v), seed);
            }
            plan.candidates.insert(name.clone(), run.k);
            if let Some(sel) = run.selected {
                selections.insert(name, sel);
            }
        }
        (plan, selections)
    }

    /// Structural consistency of the state machine.
    pub fn check_invariants(&self) -> Result<(), String> {
        use SessionState::*;
        let selected = |s: Stage| self.stages.get(&s).is_some_and(|r| r.selected.is_some());
        let ok = match self.state {
            Created => self.placement.is_none() && self.stages.is_empty(),
            Placed => {
                self.placement.is_some()
                    && !self.stages.contains_key(&Stage::Refine)
                    && !selected(Stage::Colorize)
                    && !selected(Stage::Compose)
            }
            Colorized => self.placement.is_some() && selected(Stage::Colorize) && !selected(Stage::Compose),
            Composed => selected(Stage::Compose) && !selected(Stage::Refine),
            Refined => selected(Stage::Compose) && selected(Stage::Refine),
            Done => self.result.is_some() && self.active_job.is_none(),
        };
        if !ok {
            return Err(format!("inconsistent session in state {:?}", self.state));
        }
        for run in self.stages.values() {
            if run.seeds.len() != run.k || run.selected.is_some_and(|i| i >= run.variants.len()) {
                return Err(format!("bad {} record", run.stage));
            }
            if run.status == JobStatus::Succeeded && run.variants.len() != run.k {
                return Err(format!("{} finished with {} of {} variants", run.stage, run.variants.len(), run.k));
            }
        }
        if self.result.is_some() != (self.state == Done) {
            return Err("result present outside the done state".into());
        }
        Ok(())
    }
}
