use std::fmt::Display;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use insertkit_pipeline::{ColorizeMode, PipelineConfig};

fn defaults() -> PipelineConfig {
    PipelineConfig::default()
}

fn hd(text: &str, value: impl Display) -> String {
    format!("{text} [default: {value}]")
}

#[derive(Debug, Parser)]
#[command(name = "insertkit", version, about = "Object insertion into images with masked latent diffusion")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Insert an object into a background, or into a generated one.
    Insert(InsertArgs),
    /// Generate a background image from the background template.
    GenerateBg(GenerateBgArgs),
    /// Colorize a line drawing or greyscale object.
    Colorize(ColorizeArgs),
    /// Cut an object out of its image.
    Segment(SegmentArgs),
    /// Score method outputs against a benchmark manifest.
    Evaluate(EvaluateArgs),
    /// Build a benchmark manifest from source indexes.
    BenchAssemble(BenchAssembleArgs),
    /// Build an anonymised side-by-side study bundle.
    StudyBundle(StudyBundleArgs),
    /// Download model weights into the cache.
    FetchModels(FetchModelsArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Re-run a recorded run and compare its outputs byte for byte.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ColorizeArg {
    Auto,
    Force,
    Off,
}

impl From<ColorizeArg> for ColorizeMode {
    fn from(c: ColorizeArg) -> Self {
        match c {
            ColorizeArg::Auto => ColorizeMode::Auto,
            ColorizeArg::Force => ColorizeMode::Force,
            ColorizeArg::Off => ColorizeMode::Off,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum UpdateModeArg {
    Literal,
    Scheduler,
}

/// Pipeline settings. A `--config` file is read first; flags given on the
/// command line override it.
#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// TOML file with pipeline settings.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[arg(long, help = hd("Denoising steps of the composition stage", defaults().compose_steps))]
    pub compose_steps: Option<usize>,
    #[arg(long, help = hd("Guidance scale of the composition stage", defaults().compose_guidance))]
    pub compose_guidance: Option<f32>,
    #[arg(long, help = hd("Fraction of the schedule composition starts from", defaults().compose_strength))]
    pub compose_strength: Option<f64>,
    #[arg(long, help = hd("Inference steps of the refinement schedule", defaults().refine_inference_steps))]
    pub refine_inference_steps: Option<usize>,
    #[arg(long, help = hd("Refinement steps actually run (noise level)", defaults().refine_noise_steps))]
    pub refine_noise_steps: Option<usize>,
    #[arg(long, help = hd("Guidance scale of refinement", defaults().refine_guidance))]
    pub refine_guidance: Option<f32>,
    #[arg(long, help = hd("Denoising steps of colorization", defaults().colorize_steps))]
    pub colorize_steps: Option<usize>,
    #[arg(long, help = hd("Strength of colorization", defaults().colorize_strength))]
    pub colorize_strength: Option<f64>,
    #[arg(long, help = hd("Guidance scale of colorization", defaults().colorize_guidance))]
    pub colorize_guidance: Option<f32>,
    #[arg(long, help = hd("Upscaling factor before colorization", defaults().upscale_factor))]
    pub upscale_factor: Option<u32>,
    #[arg(long, help = hd("Objects up to this side are upscaled before colorization", defaults().colorize_upscale_max_side))]
    pub colorize_upscale_max_side: Option<u32>,
    #[arg(long, value_enum, help = "When to colorize the object [default: auto]")]
    pub colorize: Option<ColorizeArg>,
    #[arg(long, help = hd("Mean saturation below which auto colorization triggers", defaults().saturation_threshold))]
    pub saturation_threshold: Option<f64>,
    #[arg(long, help = hd("Variants per run; candidates per stage with --interactive (then 5)", defaults().variants_k))]
    pub variants_k: Option<usize>,
    #[arg(long, help = hd("Base seed", defaults().seed))]
    pub seed: Option<u64>,
    #[arg(long, help = hd("Brightness threshold separating object from white", defaults().mask_threshold))]
    pub mask_threshold: Option<f32>,
    #[arg(long, help = hd("Pixel coverage that marks a latent cell as object", defaults().mask_coverage))]
    pub mask_coverage: Option<f64>,
    #[arg(long, value_enum, help = "Update applied outside the mask [default: scheduler]")]
    pub update_mode: Option<UpdateModeArg>,
    /// Skip the refinement stage.
    #[arg(long)]
    pub no_refine: bool,
    /// Refine the composed latent directly instead of re-encoding pixels.
    #[arg(long)]
    pub refine_in_latent: bool,
    /// Compose with the refiner model instead of the base model.
    #[arg(long)]
    pub sdxl_compose: bool,
}

/// Where adapters come from.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Use deterministic toy adapters; no weights needed.
    #[arg(long)]
    pub toy_adapters: bool,
    /// Model registry TOML; defaults to the published model stack.
    #[arg(long, value_name = "FILE")]
    pub registry: Option<PathBuf>,
    /// Model cache root.
    #[arg(long, env = "INSERTKIT_CACHE", value_name = "DIR")]
    pub cache_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PromptArgs {
    #[arg(long)]
    pub product_type: String,
    #[arg(long, default_value = "")]
    pub color: String,
    #[arg(long, default_value = "")]
    pub place: String,
    /// Prompt template TOML replacing the bundled wording.
    #[arg(long, value_name = "FILE")]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InsertArgs {
    #[arg(long, value_name = "IMAGE")]
    pub object: PathBuf,
    /// Omit to synthesise the background from noise.
    #[arg(long, value_name = "IMAGE")]
    pub background: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub x: i64,
    #[arg(long, allow_hyphen_values = true)]
    pub y: i64,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Canvas as WxH when there is no background.
    #[arg(long, value_parser = parse_size, default_value = "1024x1024")]
    pub canvas: (u32, u32),
    /// Segment the object out of its image first, using this category.
    #[arg(long)]
    pub segment: Option<String>,
    /// Pause at colorize, compose and refine, show a contact sheet and read
    /// the chosen candidate from standard input.
    #[arg(long)]
    pub interactive: bool,
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub models: ModelArgs,
    /// Run directory to create.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateBgArgs {
    #[arg(long)]
    pub place: String,
    #[arg(long, value_parser = parse_size, default_value = "1024x1024")]
    pub size: (u32, u32),
    #[arg(long, value_name = "FILE")]
    pub templates: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ColorizeArgs {
    #[arg(long, value_name = "IMAGE")]
    pub object: PathBuf,
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long, value_name = "IMAGE")]
    pub image: PathBuf,
    #[arg(long)]
    pub category: String,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub models: ModelArgs,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LpipsModeArg {
    Full,
    Crop,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ResizeArg {
    Reject,
    ResizeSecond,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Benchmark manifest (JSON lines).
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Directory with one output per sample.
    #[arg(long, value_name = "DIR")]
    pub outputs: PathBuf,
    #[arg(long, default_value = "ours")]
    pub method: String,
    /// Run the pipeline for samples without an output first.
    #[arg(long)]
    pub generate: bool,
    #[arg(long, value_enum, default_value = "full")]
    pub lpips_mode: LpipsModeArg,
    #[arg(long, value_enum, default_value = "reject")]
    pub resize: ResizeArg,
    /// Score with toy CLIP and preference models.
    #[arg(long)]
    pub toy_scorers: bool,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub models: ModelArgs,
    /// Report directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchAssembleArgs {
    /// Sources TOML.
    #[arg(long, value_name = "FILE", required_unless_present = "demo")]
    pub sources: Option<PathBuf>,
    /// Write synthetic demo sources into this directory and use them.
    #[arg(long, value_name = "DIR", conflicts_with = "sources")]
    pub demo: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub demo_seed: u64,
    /// Manifest file to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StudyBundleArgs {
    #[arg(long, value_name = "FILE")]
    pub manifest: PathBuf,
    /// Method outputs as NAME=DIR (repeatable).
    #[arg(long = "method", value_parser = parse_method, required = true)]
    pub methods: Vec<(String, PathBuf)>,
    #[arg(long, default_value_t = 7)]
    pub per_category: usize,
    /// Comma-separated categories; default all except tficon.
    #[arg(long, value_delimiter = ',')]
    pub categories: Option<Vec<String>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "FILE")]
    pub templates: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FetchModelsArgs {
    /// Roles to fetch (repeatable); default every pipeline role.
    #[arg(long = "role")]
    pub roles: Vec<String>,
    /// Also fetch the scoring models.
    #[arg(long)]
    pub scoring: bool,
    #[arg(long, value_name = "FILE")]
    pub registry: Option<PathBuf>,
    #[arg(long, env = "INSERTKIT_CACHE", value_name = "DIR")]
    pub cache_root: Option<PathBuf>,
    /// Download endpoint.
    #[arg(long, env = "INSERTKIT_HF_ENDPOINT")]
    pub endpoint: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "INSERTKIT_HOST", default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, env = "INSERTKIT_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "INSERTKIT_DATA", default_value = "insertkit-data")]
    pub data_dir: PathBuf,
    #[arg(long, env = "INSERTKIT_WORKERS", default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = insertkit_server::config::DEFAULT_MAX_UPLOAD_BYTES)]
    pub max_upload_bytes: usize,
    #[arg(long, value_name = "FILE")]
    pub templates: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[command(flatten)]
    pub models: ModelArgs,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Run manifest or run directory.
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    /// Replay with toy adapters instead of the recorded registry.
    #[arg(long)]
    pub toy_adapters: bool,
    #[arg(long, env = "INSERTKIT_CACHE", value_name = "DIR")]
    pub cache_root: Option<PathBuf>,
    /// Directory for the replayed run; default `<run>-replay`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

pub fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got `{s}`"))?;
    let w: u32 = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
    let h: u32 = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
    if w == 0 || h == 0 {
        return Err(format!("size `{s}` is empty"));
    }
    Ok((w, h))
}

fn parse_method(s: &str) -> Result<(String, PathBuf), String> {
    let (name, dir) = s.split_once('=').ok_or_else(|| format!("expected NAME=DIR, got `{s}`"))?;
    if name.is_empty() || dir.is_empty() {
        return Err(format!("expected NAME=DIR, got `{s}`"));
    }
    Ok((name.to_string(), PathBuf::from(dir)))
}
