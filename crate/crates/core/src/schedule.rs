use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// How β evolves over the training timesteps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// β is linear in √β between the endpoints (the latent-diffusion default).
    ScaledLinear,
    Linear,
    /// Every β equals `beta_start`.
    Constant,
}

/// Standard endpoints shipped with SD-2.1 and SDXL scheduler configs.
pub const DEFAULT_BETA_START: f64 = 0.00085;
pub const DEFAULT_BETA_END: f64 = 0.012;
pub const DEFAULT_TRAIN_STEPS: usize = 1000;

/// β, α = 1 − β and ᾱ_t = ∏_{s≤t} α_s over the training timesteps.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![start];
    }
    let step = (end - start) / (n - 1) as f64;
    (0..n).map(|i| start + step * i as f64).collect()
}

impl NoiseSchedule {
    /// Builds a schedule. β = 0 is accepted so that a zero-noise constant
    /// schedule can be expressed; all β must stay below 1.
    pub fn build(kind: ScheduleKind, beta_start: f64, beta_end: f64, train_steps: usize) -> Result<Self> {
        if train_steps == 0 {
            return Err(CoreError::param("train_steps must be at least 1"));
        }
        if !(beta_start >= 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(CoreError::param(format!(
                "beta range must satisfy 0 <= start <= end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let betas = match kind {
            ScheduleKind::Linear => linspace(beta_start, beta_end, train_steps),
            ScheduleKind::ScaledLinear => linspace(beta_start.sqrt(), beta_end.sqrt(), train_steps)
                .into_iter()
                .map(|b| b * b)
                .collect(),
            ScheduleKind::Constant => {
                if beta_end != beta_start {
                    return Err(CoreError::param(format!(
                        "constant schedule needs beta_start == beta_end, got {beta_start} and {beta_end}"
                    )));
                }
                vec![beta_start; train_steps]
            }
        };
        Ok(Self::from_betas(kind, betas))
    }

    /// The scaled-linear schedule with the standard endpoints over 1000 steps.
    pub fn scaled_linear_default() -> Self {
        Self::build(
            ScheduleKind::ScaledLinear,
            DEFAULT_BETA_START,
            DEFAULT_BETA_END,
            DEFAULT_TRAIN_STEPS,
        )
        .expect("default schedule parameters are valid")
    }

    fn from_betas(kind: ScheduleKind, betas: Vec<f64>) -> Self {
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Self {
            kind,
            betas,
            alphas,
            alpha_bars,
        }
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn train_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check_timestep(&self, t: usize) -> Result<()> {
        if t >= self.train_steps() {
            return Err(CoreError::param(format!(
                "timestep {t} outside [0, {})",
                self.train_steps()
            )));
        }
        Ok(())
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// √ᾱ_t, the signal coefficient of the forward process.
    pub fn signal_level(&self, t: usize) -> f64 {
        self.alpha_bars[t].sqrt()
    }

    /// √(1 − ᾱ_t), the noise coefficient of the forward process.
    pub fn noise_level(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bars[t]).sqrt()
    }
}
