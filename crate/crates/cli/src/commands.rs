use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use insertkit_adapters::{fetch_models, AdapterSet, ModelRegistry, ModelRole};
use insertkit_core::UpdateMode;
use insertkit_eval::demo::{write_demo_sources, DemoLayout};
use insertkit_eval::{
    assemble_benchmark, build_human_study_bundle, generate_outputs, run_eval, BenchmarkManifest, EvalOptions,
    LpipsMode, ResizePolicy, Scorers, StudyMethod, StudyOptions,
};
use insertkit_pipeline::imaging::load_image;
use insertkit_pipeline::{
    replay, InsertRequest, Interaction, Pipeline, PipelineConfig, PlacementSpec, PromptSpec, RunOutcome, TemplateId,
    TemplateSet,
};
use insertkit_server::config::ServerConfig;
use insertkit_server::AppState;

use crate::args::*;
use crate::interactive::PromptChooser;

/// Replay finished but some outputs differ from the recording.
#[derive(Debug)]
pub struct Diverged {
    pub count: usize,
}

impl std::fmt::Display for Diverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} output(s) differ from the recorded run", self.count)
    }
}

impl std::error::Error for Diverged {}

pub const INTERACTIVE_CANDIDATES: usize = 5;

impl PipelineArgs {
    /// The config file (or defaults) with flag overrides applied.
    /// `default_k` is used when neither the file nor a flag sets `variants_k`.
    pub fn resolve(&self, default_k: Option<usize>) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => {
                let mut c = PipelineConfig::default();
                if let Some(k) = default_k {
                    c.variants_k = k;
                }
                c
            }
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    cfg.$field = v.into();
                }
            )*};
        }
        set!(
            compose_steps,
            compose_guidance,
            compose_strength,
            refine_inference_steps,
            refine_noise_steps,
            refine_guidance,
            colorize_steps,
            colorize_strength,
            colorize_guidance,
            upscale_factor,
            colorize_upscale_max_side,
            colorize,
            saturation_threshold,
            variants_k,
            seed,
            mask_threshold,
            mask_coverage
        );
        if let Some(m) = self.update_mode {
            cfg.update_mode = match m {
                UpdateModeArg::Literal => UpdateMode::Literal,
                UpdateModeArg::Scheduler => UpdateMode::Scheduler,
            };
        }
        if self.no_refine {
            cfg.refine = false;
        }
        cfg.refine_in_latent |= self.refine_in_latent;
        cfg.sdxl_compose |= self.sdxl_compose;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ModelArgs {
    pub fn registry(&self) -> Result<ModelRegistry> {
        if self.toy_adapters {
            return Ok(ModelRegistry::toy());
        }
        Ok(match &self.registry {
            Some(path) => ModelRegistry::load(path)?,
            None => ModelRegistry::default_stack(),
        })
    }

    pub fn adapters(&self) -> Result<AdapterSet> {
        if self.toy_adapters {
            return Ok(AdapterSet::toy());
        }
        let registry = self.registry()?;
        let root = registry.cache_root(self.cache_root.as_deref());
        Ok(AdapterSet::load(&registry, &root)?)
    }
}

fn templates(path: Option<&Path>) -> Result<TemplateSet> {
    Ok(match path {
        Some(p) => TemplateSet::load(p)?,
        None => TemplateSet::default(),
    })
}

fn pipeline(models: &ModelArgs, templates_path: Option<&Path>) -> Result<Pipeline> {
    Ok(Pipeline::new(models.adapters()?).with_templates(templates(templates_path)?))
}

fn report(outcome: &RunOutcome) {
    for w in &outcome.manifest.warnings {
        eprintln!("warning: {w}");
    }
    println!("{}", outcome.dir.display());
    if let Some(f) = &outcome.manifest.final_output {
        println!("{}  {}", f.file.sha256, outcome.dir.join(&f.file.path).display());
    }
}

pub fn insert(a: InsertArgs) -> Result<()> {
    let cfg = a.pipeline.resolve(a.interactive.then_some(INTERACTIVE_CANDIDATES))?;
    let object = load_image(&a.object)?;
    let background = a.background.as_deref().map(load_image).transpose()?.map(|b| b.to_rgb8());
    let canvas = background.as_ref().map_or(a.canvas, |b| b.dimensions());
    let prompt = PromptSpec::new(&a.prompt.product_type, &a.prompt.color, &a.prompt.place, TemplateId::Insertion);
    let req = InsertRequest {
        object,
        background,
        placement: PlacementSpec::new(a.x, a.y, a.scale, canvas),
        prompt,
        segment_category: a.segment,
    };
    let pipeline = pipeline(&a.models, a.prompt.templates.as_deref())?;
    let outcome = if a.interactive {
        let stdin = std::io::stdin();
        let mut chooser = PromptChooser::new(stdin.lock(), std::io::stderr());
        pipeline.insert(&req, &cfg, Interaction::Interactive(&mut chooser), &a.out)?
    } else {
        pipeline.insert(&req, &cfg, Interaction::Batch, &a.out)?
    };
    report(&outcome);
    Ok(())
}

pub fn generate_bg(a: GenerateBgArgs) -> Result<()> {
    let cfg = a.pipeline.resolve(None)?;
    let spec = PromptSpec::new("", "", &a.place, TemplateId::Background);
    let outcome = pipeline(&a.models, a.templates.as_deref())?.generate_background(&spec, a.size, &cfg, &a.out)?;
    report(&outcome);
    Ok(())
}

pub fn colorize(a: ColorizeArgs) -> Result<()> {
    let cfg = a.pipeline.resolve(None)?;
    let object = load_image(&a.object)?;
    let spec = PromptSpec::new(&a.prompt.product_type, &a.prompt.color, &a.prompt.place, TemplateId::Colorization);
    let outcome = pipeline(&a.models, a.prompt.templates.as_deref())?.colorize(&object, &spec, &cfg, &a.out)?;
    report(&outcome);
    Ok(())
}

pub fn segment(a: SegmentArgs) -> Result<()> {
    let cfg = a.pipeline.resolve(None)?;
    let image = load_image(&a.image)?.to_rgb8();
    let outcome = pipeline(&a.models, None)?.segment(&image, &a.category, &cfg, &a.out)?;
    report(&outcome);
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let manifest = BenchmarkManifest::load(&a.manifest)?;
    if a.generate {
        let cfg = a.pipeline.resolve(None)?;
        let pipeline = pipeline(&a.models, None)?;
        generate_outputs(&manifest, &pipeline, &cfg, &a.outputs)?;
    }
    let scorers = if a.toy_scorers {
        Scorers::toy()
    } else {
        let registry = a.models.registry()?;
        Scorers::load(&registry, &registry.cache_root(a.models.cache_root.as_deref()))?
    };
    let mut opts = EvalOptions::new(&a.method);
    opts.lpips_mode = match a.lpips_mode {
        LpipsModeArg::Full => LpipsMode::Full,
        LpipsModeArg::Crop => LpipsMode::Crop,
    };
    opts.resize = match a.resize {
        ResizeArg::Reject => ResizePolicy::Reject,
        ResizeArg::ResizeSecond => ResizePolicy::ResizeSecond,
    };
    let report = run_eval(&manifest, &a.outputs, &scorers, &opts)?;
    report.write(&a.out)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<12} {:>5} {:>9} {:>9} {:>9}", "category", "n", "clip", "hpsv2", "lpips")?;
    for agg in report.categories.iter().chain(&report.overall) {
        writeln!(
            out,
            "{:<12} {:>5} {:>9.3} {:>9.4} {:>9.4}",
            agg.category, agg.n, agg.clip, agg.hpsv2, agg.lpips
        )?;
    }
    for e in &report.errors {
        eprintln!("error: {e}");
    }
    if !report.is_complete() {
        bail!(
            "evaluation incomplete: {} missing, {} unexpected, {} failed (report in {})",
            report.missing.len(),
            report.unexpected.len(),
            report.errors.len(),
            a.out.display()
        );
    }
    Ok(())
}

pub fn bench_assemble(a: BenchAssembleArgs) -> Result<()> {
    let sources = match (&a.sources, &a.demo) {
        (Some(s), _) => s.clone(),
        (None, Some(dir)) => write_demo_sources(dir, &DemoLayout::default(), a.demo_seed)?,
        (None, None) => bail!("either --sources or --demo is required"),
    };
    let manifest = assemble_benchmark(&sources)?;
    manifest.save(&a.out)?;
    for (category, n) in &manifest.header.category_counts {
        println!("{category:<12} {n}");
    }
    println!("{}", a.out.display());
    Ok(())
}

pub fn study_bundle(a: StudyBundleArgs) -> Result<()> {
    let manifest = BenchmarkManifest::load(&a.manifest)?;
    let methods: Vec<StudyMethod> = a
        .methods
        .into_iter()
        .map(|(name, outputs)| StudyMethod { name, outputs })
        .collect();
    let opts = StudyOptions {
        per_category: a.per_category,
        categories: a.categories,
        seed: a.seed,
    };
    let bundle = build_human_study_bundle(&manifest, &methods, &opts, &templates(a.templates.as_deref())?, &a.out)?;
    println!("{} pages in {}", bundle.index.pages.len(), bundle.dir.display());
    Ok(())
}

pub fn fetch(a: FetchModelsArgs) -> Result<()> {
    let registry = match &a.registry {
        Some(p) => ModelRegistry::load(p)?,
        None => ModelRegistry::default_stack(),
    };
    let mut roles: Vec<ModelRole> = a.roles.iter().map(|r| r.parse()).collect::<Result<_, _>>()?;
    if roles.is_empty() {
        roles.extend(ModelRole::PIPELINE);
    }
    if a.scoring {
        roles.extend(ModelRole::SCORING);
    }
    roles.dedup();
    let root = registry.cache_root(a.cache_root.as_deref());
    let report = fetch_models(&registry, &roles, &root, a.endpoint.as_deref())?;
    for p in &report.downloaded {
        println!("downloaded {}", p.display());
    }
    for p in &report.present {
        println!("present    {}", p.display());
    }
    for r in &report.builtin {
        println!("builtin    {r}");
    }
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let mut config = ServerConfig::new(&a.data_dir);
    config.bind = format!("{}:{}", a.host, a.port)
        .parse::<SocketAddr>()
        .with_context(|| format!("invalid bind address {}:{}", a.host, a.port))?;
    config.workers = a.workers.max(1);
    config.max_upload_bytes = a.max_upload_bytes;
    config.pipeline = a.pipeline.resolve(None)?;
    config.templates = templates(a.templates.as_deref())?;
    // Fail before binding when weights are missing.
    a.models.adapters()?;
    let models = a.models.clone();
    let factory = Arc::new(move || models.adapters().map_err(|e| match e.downcast() {
        Ok(adapter) => adapter,
        Err(other) => insertkit_adapters::AdapterError::Registry(other.to_string()),
    }));
    let state = AppState::start(config, factory)?;
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(insertkit_server::serve(state))?;
    Ok(())
}

pub fn replay_cmd(a: ReplayArgs) -> Result<()> {
    let (run_dir, manifest) = insertkit_pipeline::replay::locate_run(&a.manifest)?;
    let adapters = if a.toy_adapters {
        AdapterSet::toy()
    } else {
        let root = manifest.registry.cache_root(a.cache_root.as_deref());
        AdapterSet::load(&manifest.registry, &root)?
    };
    let out = a.out.unwrap_or_else(|| default_replay_dir(&run_dir));
    let report = replay(&run_dir, adapters, &out)?;
    for d in &report.divergences {
        println!(
            "DIFF {}  recorded {}  replayed {}",
            d.path,
            d.recorded,
            d.replayed.as_deref().unwrap_or("missing")
        );
    }
    println!(
        "{} of {} outputs identical; replay in {}",
        report.compared - report.divergences.len(),
        report.compared,
        report.replay_dir.display()
    );
    if !report.identical() {
        return Err(Diverged {
            count: report.divergences.len(),
        }
        .into());
    }
    Ok(())
}

fn default_replay_dir(run: &Path) -> PathBuf {
    let name = run.file_name().map(|n| n.to_string_lossy().to_string()).unwrap_or_else(|| "run".into());
    run.with_file_name(format!("{name}-replay"))
}
