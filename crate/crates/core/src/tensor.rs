use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// What a latent represents inside one compositing run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentRole {
    Object,
    Background,
    Pasted,
    Composite,
    Refined,
    /// Intermediate state inside a loop, or a denoiser prediction.
    Working,
}

impl LatentRole {
    fn code(self) -> u32 {
        match self {
            LatentRole::Object => 0,
            LatentRole::Background => 1,
            LatentRole::Pasted => 2,
            LatentRole::Composite => 3,
            LatentRole::Refined => 4,
            LatentRole::Working => 5,
        }
    }

    fn from_code(code: u32) -> Option<Self> {
        Some(match code {
            0 => LatentRole::Object,
            1 => LatentRole::Background,
            2 => LatentRole::Pasted,
            3 => LatentRole::Composite,
            4 => LatentRole::Refined,
            5 => LatentRole::Working,
            _ => return None,
        })
    }
}

/// Channel-major `[C, H, W]` float latent.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
    role: LatentRole,
}

const CONTAINER_MAGIC: &[u8; 4] = b"LTN1";
const HEADER_LEN: usize = 20;

impl LatentTensor {
    /// Builds a tensor, rejecting a wrong length or any non-finite entry.
    pub fn from_vec(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
        role: LatentRole,
    ) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(CoreError::param(format!(
                "latent data has {} entries, shape {}x{}x{} needs {}",
                data.len(),
                channels,
                height,
                width,
                channels * height * width
            )));
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(CoreError::param(format!(
                "latent entry {idx} is not finite ({})",
                data[idx]
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
            role,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32, role: LatentRole) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
            role,
        }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0, LatentRole::Working)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn role(&self) -> LatentRole {
        self.role
    }

    pub fn with_role(mut self, role: LatentRole) -> Self {
        self.role = role;
        self
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Plane of channel `c`, row-major.
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &LatentTensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(CoreError::ShapeMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> LatentTensor {
        LatentTensor {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    /// Element-wise combination of two equally shaped tensors.
    pub fn zip_map(&self, other: &LatentTensor, f: impl Fn(f32, f32) -> f32) -> Result<LatentTensor> {
        self.ensure_same_shape(other)?;
        Ok(LatentTensor {
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            ..self.clone()
        })
    }

    pub fn max_abs_diff(&self, other: &LatentTensor) -> Result<f32> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }

    /// Serializes to the flat container: `LTN1`, then `C`, `H`, `W` and the
    /// role code as little-endian u32, then row-major little-endian f32 data.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(CONTAINER_MAGIC);
        for dim in [self.channels, self.height, self.width] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.role.code().to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != CONTAINER_MAGIC {
            return Err(CoreError::Container("missing LTN1 header".into()));
        }
        let word = |i: usize| {
            let start = 4 + 4 * i;
            u32::from_le_bytes(bytes[start..start + 4].try_into().unwrap())
        };
        let (c, h, w) = (word(0) as usize, word(1) as usize, word(2) as usize);
        let role = LatentRole::from_code(word(3))
            .ok_or_else(|| CoreError::Container(format!("unknown role code {}", word(3))))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != 4 * c * h * w {
            return Err(CoreError::Container(format!(
                "body holds {} bytes, header {}x{}x{} needs {}",
                body.len(),
                c,
                h,
                w,
                4 * c * h * w
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Self::from_vec(c, h, w, data, role)
    }
}
