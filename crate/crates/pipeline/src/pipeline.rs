//! Run drivers: chain the stages, write the run directory and manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::{DynamicImage, RgbImage};
use insertkit_adapters::AdapterSet;

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result, StageContext};
use crate::imaging::{contact_sheet, flatten_on_white, stage_seed};
use crate::manifest::{FileRecord, OutputRecord, RunDir, RunKind, RunManifest, StageRecord};
use crate::placement::{mask_overlay, place_object, thumbnail, white_canvas, PlacementSpec};
use crate::prompt::{PromptSpec, RenderedPrompt, TemplateId, TemplateSet};
use crate::stages;

pub const THUMBNAIL_SIDE: u32 = 256;

/// Picks one of several candidates at an interactive pause.
pub trait Chooser {
    /// `sheet` is a contact sheet of the candidates, left to right.
    fn choose(&mut self, stage: &str, candidates: &[RgbImage], sheet: &Path) -> Result<usize>;
}

/// Replays recorded selections.
#[derive(Debug, Clone, Default)]
pub struct FixedChoices(pub BTreeMap<String, usize>);

impl Chooser for FixedChoices {
    fn choose(&mut self, stage: &str, candidates: &[RgbImage], _sheet: &Path) -> Result<usize> {
        let i = *self
            .0
            .get(stage)
            .ok_or_else(|| PipelineError::Manifest(format!("no recorded selection for stage `{stage}`")))?;
        if i >= candidates.len() {
            return Err(PipelineError::Manifest(format!(
                "recorded selection {i} for `{stage}` but only {} candidates",
                candidates.len()
            )));
        }
        Ok(i)
    }
}

/// Batch runs produce `variants_k` independent chains. Interactive runs
/// produce `variants_k` candidates at each of colorize, compose and refine
/// and continue from the chosen one.
pub enum Interaction<'c> {
    Batch,
    Interactive(&'c mut dyn Chooser),
}

#[derive(Debug, Clone)]
pub struct InsertRequest {
    pub object: DynamicImage,
    /// `None` synthesises the background from noise.
    pub background: Option<RgbImage>,
    pub placement: PlacementSpec,
    pub prompt: PromptSpec,
    /// Segment the object out of its image first.
    pub segment_category: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    /// Final image per variant (one in interactive mode).
    pub finals: Vec<RgbImage>,
    /// Intermediate composition per variant, before refinement.
    pub composed: Vec<RgbImage>,
}

struct StageWriter<'r> {
    run: &'r RunDir,
    counter: usize,
}

struct OpenStage {
    name: String,
    dir: String,
    start: Instant,
    outputs: Vec<FileRecord>,
    candidates: usize,
    selected: Option<usize>,
}

impl<'r> StageWriter<'r> {
    fn open(&mut self, name: &str) -> OpenStage {
        self.counter += 1;
        OpenStage {
            name: name.to_string(),
            dir: format!("stages/{:02}_{name}", self.counter),
            start: Instant::now(),
            outputs: Vec::new(),
            candidates: 1,
            selected: None,
        }
    }

    fn rgb(&self, stage: &mut OpenStage, file: &str, image: &RgbImage) -> Result<()> {
        let rec = self.run.write_rgb(&format!("{}/{file}", stage.dir), image)?;
        stage.outputs.push(rec);
        Ok(())
    }

    fn image(&self, stage: &mut OpenStage, file: &str, image: &DynamicImage) -> Result<()> {
        let rec = self.run.write_image(&format!("{}/{file}", stage.dir), image)?;
        stage.outputs.push(rec);
        Ok(())
    }

    fn close(&self, mut stage: OpenStage, thumb_of: &RgbImage, manifest: &mut RunManifest) -> Result<()> {
        self.rgb(&mut stage, "thumbnail.png", &thumbnail(thumb_of, THUMBNAIL_SIDE))?;
        manifest.stages.push(StageRecord {
            name: stage.name,
            dir: stage.dir,
            seconds: stage.start.elapsed().as_secs_f64(),
            candidates: stage.candidates,
            selected: stage.selected,
            outputs: stage.outputs,
        });
        Ok(())
    }
}

/// Rendered prompts a run uses; replays take them from the manifest.
#[derive(Debug, Clone, Default)]
pub struct Prompts(pub BTreeMap<String, RenderedPrompt>);

impl Prompts {
    pub fn render(templates: &TemplateSet, spec: &PromptSpec, ids: &[TemplateId]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for &id in ids {
            map.insert(id.to_string(), templates.render_recorded(&spec.with_template(id))?);
        }
        Ok(Self(map))
    }

    /// Insertion prompt, plus the colorization prompt when its slots are
    /// filled.
    pub fn for_insert(templates: &TemplateSet, spec: &PromptSpec) -> Result<Self> {
        Self::render(templates, spec, &[TemplateId::Insertion, TemplateId::Colorization])
            .or_else(|_| Self::render(templates, spec, &[TemplateId::Insertion]))
    }

    pub fn text(&self, id: TemplateId) -> Result<&str> {
        self.0
            .get(id.as_str())
            .map(|r| r.text.as_str())
            .ok_or_else(|| PipelineError::param(format!("no `{id}` prompt rendered")))
    }
}

/// Seeds and candidate counts fixed ahead of a run. Replays and the
/// service use it to reproduce recorded runs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunPlan {
    /// `(stage, variant)` to seed; absent entries derive from the config seed.
    pub seeds: BTreeMap<(String, usize), u64>,
    /// Candidates per interactive stage; absent entries use `variants_k`.
    pub candidates: BTreeMap<String, usize>,
}

impl RunPlan {
    pub fn from_manifest(m: &RunManifest) -> Self {
        Self {
            seeds: m.seeds.iter().map(|s| ((s.stage.clone(), s.variant), s.seed)).collect(),
            candidates: if m.interactive {
                m.stages.iter().map(|s| (s.name.clone(), s.candidates)).collect()
            } else {
                BTreeMap::new()
            },
        }
    }

    pub fn seed(&self, base: u64, stage: &str, variant: usize) -> u64 {
        self.seeds
            .get(&(stage.to_string(), variant))
            .copied()
            .unwrap_or_else(|| stage_seed(base, stage, variant))
    }

    pub fn candidates(&self, stage: &str, default: usize) -> usize {
        self.candidates.get(stage).copied().unwrap_or(default)
    }
}

pub struct Pipeline {
    pub adapters: AdapterSet,
    pub templates: TemplateSet,
}

fn choose(
    interaction: &mut Interaction<'_>,
    run: &RunDir,
    stage: &mut OpenStage,
    candidates: &[RgbImage],
    manifest: &mut RunManifest,
) -> Result<usize> {
    stage.candidates = candidates.len();
    let Interaction::Interactive(chooser) = interaction else {
        return Ok(0);
    };
    let rel = format!("{}/contact_sheet.png", stage.dir);
    let rec = run.write_rgb(&rel, &contact_sheet(candidates, THUMBNAIL_SIDE))?;
    stage.outputs.push(rec);
    let i = chooser.choose(&stage.name, candidates, &run.root().join(&rel))?;
    if i >= candidates.len() {
        return Err(PipelineError::param(format!(
            "selection {i} out of range for {} candidates",
            candidates.len()
        )));
    }
    stage.selected = Some(i);
    manifest.selections.insert(stage.name.clone(), i);
    Ok(i)
}

impl Pipeline {
    pub fn new(adapters: AdapterSet) -> Self {
        Self {
            adapters,
            templates: TemplateSet::default(),
        }
    }

    pub fn with_templates(mut self, templates: TemplateSet) -> Self {
        self.templates = templates;
        self
    }

    fn manifest(&self, kind: RunKind, cfg: &PipelineConfig) -> RunManifest {
        RunManifest::new(kind, cfg.clone(), self.adapters.registry.clone(), self.adapters.model_ids())
    }

    /// Full insertion run into `out`.
    pub fn insert(
        &self,
        req: &InsertRequest,
        cfg: &PipelineConfig,
        interaction: Interaction<'_>,
        out: &Path,
    ) -> Result<RunOutcome> {
        let prompts = Prompts::for_insert(&self.templates, &req.prompt)?;
        self.insert_with_prompts(req, &prompts, cfg, interaction, out)
    }

    pub fn insert_with_prompts(
        &self,
        req: &InsertRequest,
        prompts: &Prompts,
        cfg: &PipelineConfig,
        interaction: Interaction<'_>,
        out: &Path,
    ) -> Result<RunOutcome> {
        self.insert_planned(req, prompts, cfg, interaction, &RunPlan::default(), out)
    }

    /// Insertion with seeds and candidate counts taken from `plan` where it
    /// has them.
    pub fn insert_planned(
        &self,
        req: &InsertRequest,
        prompts: &Prompts,
        cfg: &PipelineConfig,
        mut interaction: Interaction<'_>,
        plan: &RunPlan,
        out: &Path,
    ) -> Result<RunOutcome> {
        cfg.validate()?;
        let run = RunDir::create(out)?;
        let kind = if req.background.is_some() {
            RunKind::Insert
        } else {
            RunKind::InsertGenerated
        };
        let mut m = self.manifest(kind, cfg);
        m.interactive = matches!(interaction, Interaction::Interactive(_));
        m.prompt = Some(req.prompt.clone());
        m.prompts = prompts.0.clone();
        m.placement = Some(req.placement);
        m.category = req.segment_category.clone();
        m.inputs.insert("object".into(), run.write_image("inputs/object.png", &req.object)?);
        if let Some(bg) = &req.background {
            m.inputs.insert("background".into(), run.write_rgb("inputs/background.png", bg)?);
        }
        let insertion_prompt = prompts.text(TemplateId::Insertion)?.to_string();
        let threshold = cfg.mask_threshold;
        let k = cfg.variants_k;
        let mut w = StageWriter { run: &run, counter: 0 };
        let mut object = req.object.clone();

        if let Some(category) = &req.segment_category {
            let mut st = w.open("segment");
            let flat = flatten_on_white(&object);
            let seg = stages::segment(&self.adapters, &flat, category, threshold).stage("segment")?;
            w.image(&mut st, "mask.png", &DynamicImage::ImageLuma8(seg.mask.to_gray_image()))?;
            w.image(&mut st, "cutout.png", &seg.cutout)?;
            m.warnings.extend(seg.warning.clone());
            object = seg.cutout;
            w.close(st, &flatten_on_white(&object), &mut m)?;
        }

        if stages::needs_colorization(&object, cfg).stage("colorize")? {
            let mut st = w.open("colorize");
            let prompt = prompts.text(TemplateId::Colorization).stage("colorize")?.to_string();
            let n = if m.interactive { plan.candidates("colorize", k) } else { 1 };
            let mut outs = Vec::with_capacity(n);
            for v in 0..n {
                let seed = m.seed("colorize", v, plan.seed(cfg.seed, "colorize", v));
                outs.push(stages::colorize(&self.adapters, &object, &prompt, cfg, seed).stage("colorize")?);
            }
            if let Some(up) = &outs[0].upscaled {
                w.rgb(&mut st, "upscaled.png", up)?;
            }
            let images: Vec<RgbImage> = outs.iter().map(|o| o.image.clone()).collect();
            for (v, img) in images.iter().enumerate() {
                w.rgb(&mut st, &format!("candidate_{v}.png"), img)?;
            }
            let sel = choose(&mut interaction, &run, &mut st, &images, &mut m)?;
            let chosen = &outs[sel];
            object = stages::restore_colorized(&object, chosen);
            w.close(st, &chosen.image, &mut m)?;
        }

        let mut st = w.open("place");
        let canvas = match &req.background {
            Some(bg) => bg.clone(),
            None => white_canvas(req.placement.canvas_size),
        };
        let placed = place_object(&object, &canvas, &req.placement, threshold).stage("place")?;
        w.rgb(&mut st, "pasted.png", &placed.image)?;
        w.image(&mut st, "mask.png", &DynamicImage::ImageLuma8(placed.mask.to_gray_image()))?;
        w.rgb(&mut st, "overlay.png", &mask_overlay(&placed))?;
        w.close(st, &placed.image, &mut m)?;
        let bbox = placed.mask.bounding_box();

        let chains = if m.interactive { 1 } else { k };
        let interactive = m.interactive;
        let per_stage = |stage: &str| if interactive { plan.candidates(stage, k) } else { 1 };

        let mut st = w.open("compose");
        let mut composed = Vec::new();
        for v in 0..chains * per_stage("compose") {
            let seed = m.seed("compose", v, plan.seed(cfg.seed, "compose", v));
            let out = stages::compose(
                &self.adapters,
                &placed.image,
                &placed.mask,
                req.background.as_ref(),
                &insertion_prompt,
                cfg,
                seed,
                None,
            )
            .stage("compose")?;
            if v == 0 {
                m.warnings.extend(out.warnings.iter().cloned());
            }
            w.rgb(&mut st, &format!("variant_{v}.png"), &out.image)?;
            composed.push(out);
        }
        let composed_images: Vec<RgbImage> = composed.iter().map(|c| c.image.clone()).collect();
        let sel = choose(&mut interaction, &run, &mut st, &composed_images, &mut m)?;
        w.close(st, &composed_images[sel], &mut m)?;
        let composed: Vec<stages::ComposeOutput> = if m.interactive {
            vec![composed.swap_remove(sel)]
        } else {
            composed
        };

        let mut finals = Vec::new();
        if cfg.refine {
            let mut st = w.open("refine");
            let mut refined = Vec::new();
            for v in 0..chains * per_stage("refine") {
                let source = &composed[if m.interactive { 0 } else { v }];
                let seed = m.seed("refine", v, plan.seed(cfg.seed, "refine", v));
                let img = stages::refine(
                    &self.adapters,
                    &source.image,
                    source.latent.as_ref(),
                    &insertion_prompt,
                    cfg,
                    seed,
                )
                .stage("refine")?;
                w.rgb(&mut st, &format!("variant_{v}.png"), &img)?;
                refined.push(img);
            }
            let sel = choose(&mut interaction, &run, &mut st, &refined, &mut m)?;
            w.close(st, &refined[sel], &mut m)?;
            if m.interactive {
                finals.push(refined.swap_remove(sel));
            } else {
                finals = refined;
            }
        } else {
            finals = composed.iter().map(|c| c.image.clone()).collect();
        }

        for (v, img) in finals.iter().enumerate() {
            let file = run.write_rgb(&format!("variants/variant_{v}.png"), img)?;
            run.write_json(&format!("variants/variant_{v}.json"), &serde_json::json!({ "bbox": bbox }))?;
            m.outputs.push(OutputRecord { file, variant: v, bbox });
        }
        let file = run.write_rgb("final.png", &finals[0])?;
        run.write_json("final.json", &serde_json::json!({ "bbox": bbox }))?;
        m.final_output = Some(OutputRecord { file, variant: 0, bbox });
        let dir = run.finalize(&m)?;
        Ok(RunOutcome {
            dir,
            manifest: m,
            finals,
            composed: composed.into_iter().map(|c| c.image).collect(),
        })
    }

    /// Background generation run: `variants_k` seeded images.
    pub fn generate_background(
        &self,
        spec: &PromptSpec,
        size: (u32, u32),
        cfg: &PipelineConfig,
        out: &Path,
    ) -> Result<RunOutcome> {
        let prompts = Prompts::render(&self.templates, spec, &[TemplateId::Background])?;
        self.generate_background_with_prompts(&prompts, size, cfg, out)
    }

    pub fn generate_background_with_prompts(
        &self,
        prompts: &Prompts,
        size: (u32, u32),
        cfg: &PipelineConfig,
        out: &Path,
    ) -> Result<RunOutcome> {
        cfg.validate()?;
        let run = RunDir::create(out)?;
        let mut m = self.manifest(RunKind::GenerateBackground, cfg);
        m.prompts = prompts.0.clone();
        m.size = Some(size);
        let prompt = prompts.text(TemplateId::Background)?.to_string();
        let mut w = StageWriter { run: &run, counter: 0 };
        let mut st = w.open("generate");
        let mut finals = Vec::new();
        for v in 0..cfg.variants_k {
            let seed = m.seed("generate", v, stage_seed(cfg.seed, "generate", v));
            let img = stages::generate_background(&self.adapters, &prompt, seed, size).stage("generate")?;
            w.rgb(&mut st, &format!("variant_{v}.png"), &img)?;
            finals.push(img);
        }
        st.candidates = finals.len();
        w.close(st, &finals[0], &mut m)?;
        self.finish(run, m, finals)
    }

    /// Colorization-only run on an object image.
    pub fn colorize(&self, object: &DynamicImage, spec: &PromptSpec, cfg: &PipelineConfig, out: &Path) -> Result<RunOutcome> {
        let prompts = Prompts::render(&self.templates, spec, &[TemplateId::Colorization])?;
        self.colorize_with_prompts(object, &prompts, cfg, out)
    }

    pub fn colorize_with_prompts(
        &self,
        object: &DynamicImage,
        prompts: &Prompts,
        cfg: &PipelineConfig,
        out: &Path,
    ) -> Result<RunOutcome> {
        cfg.validate()?;
        let run = RunDir::create(out)?;
        let mut m = self.manifest(RunKind::Colorize, cfg);
        m.prompts = prompts.0.clone();
        m.inputs.insert("object".into(), run.write_image("inputs/object.png", object)?);
        let prompt = prompts.text(TemplateId::Colorization)?.to_string();
        let mut w = StageWriter { run: &run, counter: 0 };
        let mut st = w.open("colorize");
        let mut finals = Vec::new();
        for v in 0..cfg.variants_k {
            let seed = m.seed("colorize", v, stage_seed(cfg.seed, "colorize", v));
            let o = stages::colorize(&self.adapters, object, &prompt, cfg, seed).stage("colorize")?;
            if v == 0 {
                if let Some(up) = &o.upscaled {
                    w.rgb(&mut st, "upscaled.png", up)?;
                }
            }
            w.rgb(&mut st, &format!("variant_{v}.png"), &o.image)?;
            finals.push(o.image);
        }
        st.candidates = finals.len();
        w.close(st, &finals[0], &mut m)?;
        self.finish(run, m, finals)
    }

    /// Segmentation-only run: mask, cutout and fallback warning.
    pub fn segment(&self, image: &RgbImage, category: &str, cfg: &PipelineConfig, out: &Path) -> Result<RunOutcome> {
        cfg.validate()?;
        let run = RunDir::create(out)?;
        let mut m = self.manifest(RunKind::Segment, cfg);
        m.category = Some(category.to_string());
        m.inputs.insert("image".into(), run.write_rgb("inputs/image.png", image)?);
        let mut w = StageWriter { run: &run, counter: 0 };
        let mut st = w.open("segment");
        let seg = stages::segment(&self.adapters, image, category, cfg.mask_threshold).stage("segment")?;
        let mask_img = DynamicImage::ImageLuma8(seg.mask.to_gray_image());
        w.image(&mut st, "mask.png", &mask_img)?;
        w.image(&mut st, "cutout.png", &seg.cutout)?;
        m.warnings.extend(seg.warning);
        let flat = flatten_on_white(&seg.cutout);
        w.close(st, &flat, &mut m)?;
        let file = run.write_image("mask.png", &mask_img)?;
        let bbox = seg.mask.bounding_box();
        m.outputs.push(OutputRecord { file, variant: 0, bbox });
        let file = run.write_image("final.png", &seg.cutout)?;
        m.final_output = Some(OutputRecord { file, variant: 0, bbox });
        let dir = run.finalize(&m)?;
        Ok(RunOutcome {
            dir,
            manifest: m,
            finals: vec![flat],
            composed: Vec::new(),
        })
    }

    fn finish(&self, run: RunDir, mut m: RunManifest, finals: Vec<RgbImage>) -> Result<RunOutcome> {
        for (v, img) in finals.iter().enumerate() {
            let file = run.write_rgb(&format!("variants/variant_{v}.png"), img)?;
            m.outputs.push(OutputRecord { file, variant: v, bbox: None });
        }
        let file = run.write_rgb("final.png", &finals[0])?;
        m.final_output = Some(OutputRecord { file, variant: 0, bbox: None });
        let dir = run.finalize(&m)?;
        Ok(RunOutcome {
            dir,
            manifest: m,
            finals,
            composed: Vec::new(),
        })
    }
}
