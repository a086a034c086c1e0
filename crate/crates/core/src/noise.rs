use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Source of ε ∼ N(0, I) draws for the forward process.
pub trait NoiseSource {
    /// Draws `len` independent standard-normal values.
    fn draw_gaussian(&mut self, len: usize) -> Vec<f32>;
}

/// Seeded Gaussian source. The same seed yields the same draw sequence on
/// every platform (ChaCha8 stream, ziggurat normal sampling).
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl NoiseSource for RandomSource {
    fn draw_gaussian(&mut self, len: usize) -> Vec<f32> {
        (0..len).map(|_| self.rng.sample::<f32, _>(StandardNormal)).collect()
    }
}

/// Always returns ε = 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn draw_gaussian(&mut self, len: usize) -> Vec<f32> {
        vec![0.0; len]
    }
}

impl<T: NoiseSource + ?Sized> NoiseSource for &mut T {
    fn draw_gaussian(&mut self, len: usize) -> Vec<f32> {
        (**self).draw_gaussian(len)
    }
}
