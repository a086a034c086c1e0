//! SD-2.1 and SDXL adapters on candle, loaded from safetensors in the model
//! cache. Everything runs on the CPU in f32.
//!
//! The codec encodes to the posterior mean rather than a sample, so encoding
//! is deterministic and runs replay byte for byte.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::VarBuilder;
use candle_transformers::models::stable_diffusion::clip::{ClipTextTransformer, Config as ClipConfig};
use candle_transformers::models::stable_diffusion::unet_2d::UNet2DConditionModel;
use candle_transformers::models::stable_diffusion::unet_2d_blocks::{
    DownEncoderBlock2D, DownEncoderBlock2DConfig, UNetMidBlock2D, UNetMidBlock2DConfig,
};
use candle_transformers::models::stable_diffusion::vae::AutoEncoderKL;
use candle_transformers::models::stable_diffusion::{build_clip_transformer, StableDiffusionConfig};
use image::RgbImage;
use insertkit_core::compositor::{self, DiffusionContext};
use insertkit_core::{
    BinaryMask, Denoiser, LatentRole, LatentTensor, MaskResolution, NoiseSchedule, PromptEmbedding, RandomSource,
    TimestepPlan, UpdateMode,
};
use tokenizers::Tokenizer;

use crate::error::{AdapterError, Result};
use crate::pixels::{from_signed_planes, to_signed_planes};
use crate::registry::{ModelRegistry, ModelRole, ResolvedModel};
use crate::set::DiffusionStack;
use crate::traits::{BackgroundGenerator, EncodedPrompt, LatentCodec, Segmenter, TextEncoder, Upscaler};

const LATENT_CHANNELS: usize = 4;
const SPATIAL_FACTOR: usize = 8;
const SD21_VAE_SCALE: f64 = 0.18215;
const SDXL_VAE_SCALE: f64 = 0.13025;
const VAE_BLOCKS: [usize; 4] = [128, 256, 512, 512];
const BG_STEPS: usize = 30;
const BG_GUIDANCE: f32 = 7.5;

fn device() -> Device {
    Device::Cpu
}

fn model_err(id: &str) -> impl Fn(candle_core::Error) -> AdapterError + '_ {
    move |e| AdapterError::model(id, e)
}

fn required<'a>(model: &'a ResolvedModel, suffix: &str) -> Result<&'a Path> {
    model.file(suffix).ok_or_else(|| {
        AdapterError::Registry(format!(
            "registry entry {} for role `{}` lists no file ending in `{suffix}`",
            model.identifier, model.role
        ))
    })
}

fn tag(model: &ResolvedModel) -> String {
    format!("{}@{}", model.identifier, model.revision)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Family {
    Sd21,
    Sdxl,
}

impl Family {
    fn config(self) -> StableDiffusionConfig {
        match self {
            Family::Sd21 => StableDiffusionConfig::v2_1(None, None, None),
            Family::Sdxl => StableDiffusionConfig::sdxl(None, None, None),
        }
    }

    fn vae_scale(self) -> f64 {
        match self {
            Family::Sd21 => SD21_VAE_SCALE,
            Family::Sdxl => SDXL_VAE_SCALE,
        }
    }

    fn v_prediction(self) -> bool {
        self == Family::Sd21
    }
}

// ---- codec ----

/// The VAE encoder path up to the posterior mean.
struct MeanEncoder {
    conv_in: candle_nn::Conv2d,
    down: Vec<DownEncoderBlock2D>,
    mid: UNetMidBlock2D,
    norm_out: candle_nn::GroupNorm,
    conv_out: candle_nn::Conv2d,
    quant_conv: candle_nn::Conv2d,
}

impl MeanEncoder {
    fn load(vae: &Path, dev: &Device) -> candle_core::Result<Self> {
        let vb = unsafe { VarBuilder::from_mmaped_safetensors(&[vae], DType::F32, dev)? };
        let enc = vb.pp("encoder");
        let conv3 = candle_nn::Conv2dConfig {
            padding: 1,
            ..Default::default()
        };
        let conv_in = candle_nn::conv2d(3, VAE_BLOCKS[0], 3, conv3, enc.pp("conv_in"))?;
        let mut down = Vec::new();
        for (i, &out) in VAE_BLOCKS.iter().enumerate() {
            let inc = if i == 0 { VAE_BLOCKS[0] } else { VAE_BLOCKS[i - 1] };
            let cfg = DownEncoderBlock2DConfig {
                num_layers: 2,
                resnet_eps: 1e-6,
                resnet_groups: 32,
                add_downsample: i + 1 < VAE_BLOCKS.len(),
                downsample_padding: 0,
                ..Default::default()
            };
            down.push(DownEncoderBlock2D::new(enc.pp("down_blocks").pp(i.to_string()), inc, out, cfg)?);
        }
        let last = VAE_BLOCKS[VAE_BLOCKS.len() - 1];
        let mid_cfg = UNetMidBlock2DConfig {
            resnet_eps: 1e-6,
            output_scale_factor: 1.,
            attn_num_head_channels: None,
            resnet_groups: Some(32),
            ..Default::default()
        };
        let mid = UNetMidBlock2D::new(enc.pp("mid_block"), last, None, mid_cfg)?;
        let norm_out = candle_nn::group_norm(32, last, 1e-6, enc.pp("conv_norm_out"))?;
        let conv_out = candle_nn::conv2d(last, 2 * LATENT_CHANNELS, 3, conv3, enc.pp("conv_out"))?;
        let quant_conv = candle_nn::conv2d(
            2 * LATENT_CHANNELS,
            2 * LATENT_CHANNELS,
            1,
            Default::default(),
            vb.pp("quant_conv"),
        )?;
        Ok(Self {
            conv_in,
            down,
            mid,
            norm_out,
            conv_out,
            quant_conv,
        })
    }

    fn mean(&self, xs: &Tensor) -> candle_core::Result<Tensor> {
        let mut xs = xs.apply(&self.conv_in)?;
        for block in &self.down {
            xs = xs.apply(block)?;
        }
        let xs = self.mid.forward(&xs, None)?.apply(&self.norm_out)?;
        let moments = candle_nn::ops::silu(&xs)?.apply(&self.conv_out)?.apply(&self.quant_conv)?;
        moments.narrow(1, 0, LATENT_CHANNELS)
    }
}

pub struct SdCodec {
    id: String,
    encoder: MeanEncoder,
    decoder: AutoEncoderKL,
    scale: f64,
    device: Device,
}

impl SdCodec {
    fn load(family: Family, encoder_file: &Path, decoder_file: &Path, id: String) -> Result<Self> {
        let dev = device();
        let (encoder, decoder) = {
            let err = model_err(&id);
            let encoder = MeanEncoder::load(encoder_file, &dev).map_err(&err)?;
            (encoder, family.config().build_vae(decoder_file, &dev, DType::F32).map_err(&err)?)
        };
        Ok(Self {
            encoder,
            decoder,
            scale: family.vae_scale(),
            device: dev,
            id,
        })
    }
}

impl LatentCodec for SdCodec {
    fn id(&self) -> &str {
        &self.id
    }

    fn spatial_factor(&self) -> usize {
        SPATIAL_FACTOR
    }

    fn latent_channels(&self) -> usize {
        LATENT_CHANNELS
    }

    fn encode(&self, image: &RgbImage) -> Result<LatentTensor> {
        self.check_dims(image)?;
        let (w, h) = (image.width() as usize, image.height() as usize);
        let err = model_err(&self.id);
        let xs = Tensor::from_vec(to_signed_planes(image), (1, 3, h, w), &self.device).map_err(&err)?;
        let z = (self.encoder.mean(&xs).map_err(&err)? * self.scale).map_err(&err)?;
        let data = z.flatten_all().and_then(|t| t.to_vec1::<f32>()).map_err(&err)?;
        Ok(LatentTensor::from_vec(
            LATENT_CHANNELS,
            h / SPATIAL_FACTOR,
            w / SPATIAL_FACTOR,
            data,
            LatentRole::Working,
        )?)
    }

    fn decode(&self, latent: &LatentTensor) -> Result<RgbImage> {
        let (c, h, w) = latent.shape();
        if c != LATENT_CHANNELS {
            return Err(AdapterError::param(format!("codec `{}` expects {LATENT_CHANNELS} channels, got {c}", self.id)));
        }
        let err = model_err(&self.id);
        let z = Tensor::from_slice(latent.as_slice(), (1, c, h, w), &self.device).map_err(&err)?;
        let xs = self.decoder.decode(&(z / self.scale).map_err(&err)?).map_err(&err)?;
        let planes = xs.flatten_all().and_then(|t| t.to_vec1::<f32>()).map_err(&err)?;
        Ok(from_signed_planes(&planes, w * SPATIAL_FACTOR, h * SPATIAL_FACTOR))
    }
}

// ---- text encoders ----

struct ClipTower {
    model: ClipTextTransformer,
    tokenizer: Tokenizer,
    max_len: usize,
    pad_id: u32,
    /// Take the penultimate layer instead of the final normed output.
    penultimate: bool,
}

impl ClipTower {
    fn load(config: &ClipConfig, weights: &Path, tokenizer: &Path, penultimate: bool, id: &str) -> Result<Self> {
        let tokenizer = Tokenizer::from_file(tokenizer).map_err(|e| AdapterError::model(id, e))?;
        let pad = config.pad_with.clone().unwrap_or_else(|| "<|endoftext|>".to_string());
        let pad_id = tokenizer
            .get_vocab(true)
            .get(&pad)
            .copied()
            .ok_or_else(|| AdapterError::model(id, format!("tokenizer has no `{pad}` token")))?;
        let model = build_clip_transformer(config, weights, &device(), DType::F32).map_err(model_err(id))?;
        Ok(Self {
            model,
            tokenizer,
            max_len: config.max_position_embeddings,
            pad_id,
            penultimate,
        })
    }

    fn tokens(&self, text: &str, id: &str) -> Result<(Vec<u32>, bool)> {
        let enc = self.tokenizer.encode(text, true).map_err(|e| AdapterError::model(id, e))?;
        let mut ids = enc.get_ids().to_vec();
        let truncated = ids.len() > self.max_len;
        if truncated {
            let eos = *ids.last().expect("non-empty after truncation check");
            ids.truncate(self.max_len - 1);
            ids.push(eos);
        }
        ids.resize(self.max_len, self.pad_id);
        Ok((ids, truncated))
    }

    /// `[max_len, dim]` hidden states.
    fn hidden(&self, ids: &[u32], id: &str) -> Result<Tensor> {
        let err = model_err(id);
        let xs = Tensor::new(ids, &device()).and_then(|t| t.unsqueeze(0)).map_err(&err)?;
        let out = if self.penultimate {
            self.model.forward_until_encoder_layer(&xs, usize::MAX, -2).map_err(&err)?.1
        } else {
            self.model.forward(&xs).map_err(&err)?
        };
        out.squeeze(0).map_err(&err)
    }
}

pub struct SdTextEncoder {
    id: String,
    towers: Vec<ClipTower>,
    /// Use zeros for the unconditional embedding instead of encoding "".
    zero_uncond: bool,
}

impl SdTextEncoder {
    fn embed_towers(&self, text: &str) -> Result<(Tensor, bool)> {
        let mut parts = Vec::new();
        let mut truncated = false;
        for tower in &self.towers {
            let (ids, cut) = tower.tokens(text, &self.id)?;
            truncated |= cut;
            parts.push(tower.hidden(&ids, &self.id)?);
        }
        let joined = Tensor::cat(&parts, 1).map_err(model_err(&self.id))?;
        Ok((joined, truncated))
    }
}

fn to_vec(t: &Tensor, id: &str) -> Result<Vec<f32>> {
    t.flatten_all().and_then(|t| t.to_vec1::<f32>()).map_err(model_err(id))
}

impl TextEncoder for SdTextEncoder {
    fn id(&self) -> &str {
        &self.id
    }

    fn token_limit(&self) -> usize {
        self.towers[0].max_len
    }

    fn embed(&self, text: &str) -> Result<EncodedPrompt> {
        if text.trim().is_empty() {
            return Err(AdapterError::param("prompt text must be non-empty"));
        }
        let (cond, truncated) = self.embed_towers(text)?;
        if truncated {
            tracing::warn!(limit = self.token_limit(), "prompt truncated to the encoder token limit");
        }
        let shape = cond.dims().to_vec();
        let conditional = to_vec(&cond, &self.id)?;
        let unconditional = if self.zero_uncond {
            vec![0.0; conditional.len()]
        } else {
            to_vec(&self.embed_towers("")?.0, &self.id)?
        };
        Ok(EncodedPrompt {
            embedding: PromptEmbedding::new(text, &self.id, shape, conditional, Some(unconditional)),
            truncated,
        })
    }
}

// ---- denoiser ----

pub struct SdDenoiser {
    id: String,
    unet: UNet2DConditionModel,
    v_prediction: bool,
    schedule: NoiseSchedule,
    device: Device,
}

impl SdDenoiser {
    fn run(&self, latent: &LatentTensor, t: usize, prompt: &PromptEmbedding, guidance: f32) -> candle_core::Result<Vec<f32>> {
        let (c, h, w) = latent.shape();
        let x = Tensor::from_slice(latent.as_slice(), (1, c, h, w), &self.device)?;
        let dims = prompt.shape().to_vec();
        let emb = |v: &[f32]| Tensor::from_slice(v, dims.as_slice(), &self.device).and_then(|t| t.unsqueeze(0));
        let cond = emb(prompt.conditional())?;
        let out = match prompt.unconditional() {
            Some(u) if guidance != 1.0 => {
                let x2 = Tensor::cat(&[&x, &x], 0)?;
                let e2 = Tensor::cat(&[&emb(u)?, &cond], 0)?;
                let both = self.unet.forward(&x2, t as f64, &e2)?;
                let parts = both.chunk(2, 0)?;
                (&parts[0] + ((&parts[1] - &parts[0])? * guidance as f64)?)?
            }
            _ => self.unet.forward(&x, t as f64, &cond)?,
        };
        let out = if self.v_prediction {
            // ε = √ᾱ·v + √(1−ᾱ)·x_t
            let ab = self.schedule.alpha_bar(t);
            ((out * ab.sqrt())? + (x * (1.0 - ab).sqrt())?)?
        } else {
            out
        };
        out.flatten_all()?.to_vec1::<f32>()
    }
}

impl Denoiser for SdDenoiser {
    fn id(&self) -> &str {
        &self.id
    }

    fn predict(
        &self,
        latent: &LatentTensor,
        t: usize,
        prompt: &PromptEmbedding,
        guidance_scale: f32,
    ) -> insertkit_core::Result<LatentTensor> {
        self.schedule.check_timestep(t)?;
        let data = self
            .run(latent, t, prompt, guidance_scale)
            .map_err(|e| insertkit_core::CoreError::from(AdapterError::model(&self.id, e)))?;
        let (c, h, w) = latent.shape();
        LatentTensor::from_vec(c, h, w, data, LatentRole::Working)
    }
}

// ---- stacks ----

/// Loaded stacks keyed by model identity, so a model shared by several roles
/// is held in memory once.
fn stack_cache() -> &'static Mutex<HashMap<String, DiffusionStack>> {
    static CACHE: OnceLock<Mutex<HashMap<String, DiffusionStack>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

fn cached(key: String, build: impl FnOnce() -> Result<DiffusionStack>) -> Result<DiffusionStack> {
    if let Some(s) = stack_cache().lock().expect("stack cache lock").get(&key) {
        return Ok(s.clone());
    }
    let stack = build()?;
    stack_cache().lock().expect("stack cache lock").insert(key, stack.clone());
    Ok(stack)
}

fn load_unet(family: Family, weights: &Path, id: &str) -> Result<UNet2DConditionModel> {
    family
        .config()
        .build_unet(weights, &device(), LATENT_CHANNELS, false, DType::F32)
        .map_err(model_err(id))
}

fn denoiser(family: Family, weights: &Path, id: String) -> Result<SdDenoiser> {
    Ok(SdDenoiser {
        unet: load_unet(family, weights, &id)?,
        v_prediction: family.v_prediction(),
        schedule: NoiseSchedule::scaled_linear_default(),
        device: device(),
        id,
    })
}

/// SD-2.1 stack from the encoder, decoder, base-denoiser and text-encoder roles.
pub fn base_stack(registry: &ModelRegistry, cache_root: &Path) -> Result<DiffusionStack> {
    let enc = registry.resolve(ModelRole::Encoder, cache_root)?;
    let dec = registry.resolve(ModelRole::Decoder, cache_root)?;
    let unet = registry.resolve(ModelRole::BaseDenoiser, cache_root)?;
    let text = registry.resolve(ModelRole::TextEncoder, cache_root)?;
    let key = format!("sd21|{}|{}|{}|{}", tag(&enc), tag(&dec), tag(&unet), tag(&text));
    cached(key, || {
        let vae = "vae/diffusion_pytorch_model.safetensors";
        let codec = SdCodec::load(Family::Sd21, required(&enc, vae)?, required(&dec, vae)?, format!("vae:{}", tag(&dec)))?;
        let id = format!("clip:{}", tag(&text));
        let tower = ClipTower::load(
            &ClipConfig::v2_1(),
            required(&text, "text_encoder/model.safetensors")?,
            required(&text, "tokenizer.json")?,
            false,
            &id,
        )?;
        Ok(DiffusionStack {
            codec: Arc::new(codec),
            denoiser: Arc::new(denoiser(
                Family::Sd21,
                required(&unet, "unet/diffusion_pytorch_model.safetensors")?,
                format!("unet:{}", tag(&unet)),
            )?),
            text: Arc::new(SdTextEncoder {
                id,
                towers: vec![tower],
                zero_uncond: false,
            }),
            schedule: NoiseSchedule::scaled_linear_default(),
        })
    })
}

fn tokenizer_path(model: &ResolvedModel, repo_hint: &str) -> Result<PathBuf> {
    let hinted = model
        .files
        .iter()
        .find(|p| p.to_string_lossy().contains(repo_hint) && p.to_string_lossy().ends_with("tokenizer.json"));
    hinted
        .cloned()
        .ok_or_else(|| AdapterError::Registry(format!("{} lists no `{repo_hint}` tokenizer", model.identifier)))
}

/// SDXL stack from a single registry entry holding every SDXL file.
pub fn sdxl_stack(registry: &ModelRegistry, role: ModelRole, cache_root: &Path) -> Result<DiffusionStack> {
    let m = registry.resolve(role, cache_root)?;
    cached(format!("sdxl|{}", tag(&m)), || {
        let vae = required(&m, "vae/diffusion_pytorch_model.safetensors")?;
        let codec = SdCodec::load(Family::Sdxl, vae, vae, format!("vae:{}", tag(&m)))?;
        let id = format!("clip-pair:{}", tag(&m));
        let towers = vec![
            ClipTower::load(
                &ClipConfig::sdxl(),
                required(&m, "/text_encoder/model.safetensors")?,
                &tokenizer_path(&m, "clip-vit-large-patch14")?,
                true,
                &id,
            )?,
            ClipTower::load(
                &ClipConfig::sdxl2(),
                required(&m, "text_encoder_2/model.safetensors")?,
                &tokenizer_path(&m, "CLIP-ViT-bigG-14")?,
                true,
                &id,
            )?,
        ];
        Ok(DiffusionStack {
            codec: Arc::new(codec),
            denoiser: Arc::new(denoiser(
                Family::Sdxl,
                required(&m, "unet/diffusion_pytorch_model.safetensors")?,
                format!("unet:{}", tag(&m)),
            )?),
            text: Arc::new(SdTextEncoder {
                id,
                towers,
                zero_uncond: true,
            }),
            schedule: NoiseSchedule::scaled_linear_default(),
        })
    })
}

// ---- background generator ----

/// Text-to-image with an SDXL stack: the masked loop with an empty mask
/// started from pure noise.
pub struct StackBackgroundGenerator {
    id: String,
    stack: DiffusionStack,
}

impl BackgroundGenerator for StackBackgroundGenerator {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, prompt: &str, seed: u64, (w, h): (u32, u32)) -> Result<RgbImage> {
        let f = self.stack.codec.spatial_factor();
        let (lw, lh) = ((w as usize).div_ceil(f), (h as usize).div_ceil(f));
        let embedding = self.stack.text.embed(prompt)?.embedding;
        let ctx = DiffusionContext {
            denoiser: &*self.stack.denoiser,
            prompt: &embedding,
            guidance_scale: BG_GUIDANCE,
            schedule: &self.stack.schedule,
            mode: UpdateMode::Scheduler,
        };
        let plan = TimestepPlan::standard(self.stack.schedule.train_steps(), BG_STEPS)?;
        let blank = LatentTensor::zeros(self.stack.codec.latent_channels(), lh, lw);
        let mask = BinaryMask::zeros(lh, lw, MaskResolution::Latent);
        let z = compositor::run_masked_diffusion(&ctx, &blank, None, &mask, &plan, &mut RandomSource::new(seed))?;
        let img = self.stack.codec.decode(&z)?;
        Ok(image::imageops::crop_imm(&img, 0, 0, w, h).to_image())
    }
}

pub fn bg_generator(registry: &ModelRegistry, cache_root: &Path) -> Result<Arc<dyn BackgroundGenerator>> {
    let m = registry.resolve(ModelRole::BgGenerator, cache_root)?;
    Ok(Arc::new(StackBackgroundGenerator {
        id: format!("sdxl-t2i:{}", tag(&m)),
        stack: sdxl_stack(registry, ModelRole::BgGenerator, cache_root)?,
    }))
}

// ---- roles without a candle model ----

fn unsupported(registry: &ModelRegistry, role: ModelRole, cache_root: &Path, builtin: &str) -> AdapterError {
    if let Err(missing) = registry.resolve(role, cache_root) {
        return missing;
    }
    let id = registry.get(role).map(|e| e.identifier.clone()).unwrap_or_default();
    AdapterError::model(id, format!("no candle implementation for this model; register `{builtin}` instead"))
}

pub fn upscaler(registry: &ModelRegistry, cache_root: &Path) -> Result<Arc<dyn Upscaler>> {
    Err(unsupported(registry, ModelRole::Upscaler, cache_root, "classical:lanczos3"))
}

pub fn segmenter(registry: &ModelRegistry, cache_root: &Path) -> Result<Arc<dyn Segmenter>> {
    Err(unsupported(registry, ModelRole::Segmenter, cache_root, "classical:threshold"))
}
