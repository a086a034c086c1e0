//! Small image feature helpers shared by the toy scorers and the
//! perceptual metric.

use image::RgbImage;

/// Planar float image, row-major per channel.
#[derive(Debug, Clone)]
pub(crate) struct Planes {
    pub width: usize,
    pub height: usize,
    pub data: Vec<Vec<f64>>,
}

impl Planes {
    /// Luminance and two opponent channels, each roughly in [-1, 1].
    pub fn opponent(image: &RgbImage) -> Self {
        let (w, h) = (image.width() as usize, image.height() as usize);
        let mut data = vec![Vec::with_capacity(w * h); 3];
        for p in image.pixels() {
            let [r, g, b] = p.0.map(|v| v as f64 / 127.5 - 1.0);
            data[0].push((r + g + b) / 3.0);
            data[1].push((r - g) / 2.0);
            data[2].push((r + g) / 4.0 - b / 2.0);
        }
        Self { width: w, height: h, data }
    }

    pub fn at(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[c][y * self.width + x]
    }

    /// Clamped-border sample.
    pub fn clamped(&self, c: usize, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.at(c, x, y)
    }

    /// 2x2 average pooling; odd trailing rows/columns are dropped.
    pub fn pooled(&self) -> Self {
        let (w, h) = (self.width / 2, self.height / 2);
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(c, _)| {
                let mut out = Vec::with_capacity(w * h);
                for y in 0..h {
                    for x in 0..w {
                        let s = self.at(c, 2 * x, 2 * y)
                            + self.at(c, 2 * x + 1, 2 * y)
                            + self.at(c, 2 * x, 2 * y + 1)
                            + self.at(c, 2 * x + 1, 2 * y + 1);
                        out.push(s / 4.0);
                    }
                }
                out
            })
            .collect();
        Self { width: w, height: h, data }
    }

    /// Mean absolute 4-neighbour Laplacian of channel `c`.
    pub fn laplacian_energy(&self, c: usize) -> f64 {
        let mut sum = 0.0;
        for y in 0..self.height as isize {
            for x in 0..self.width as isize {
                let l = 4.0 * self.clamped(c, x, y)
                    - self.clamped(c, x - 1, y)
                    - self.clamped(c, x + 1, y)
                    - self.clamped(c, x, y - 1)
                    - self.clamped(c, x, y + 1);
                sum += l.abs();
            }
        }
        sum / (self.width * self.height).max(1) as f64
    }
}

/// `100 * cos(a, b)`, 0 when either vector is zero. Self-similarity is
/// exactly 100.
pub fn cosine_score(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    100.0 * (dot / (aa * bb).sqrt()).clamp(-1.0, 1.0)
}

/// Blends each pixel with uniform noise: `(1 - level) * x + level * u`.
pub fn corrupt(image: &RgbImage, level: f64, seed: u64) -> RgbImage {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.clone();
    for p in out.pixels_mut() {
        for v in p.0.iter_mut() {
            let u: f64 = rng.random_range(0.0..255.0);
            *v = ((1.0 - level) * *v as f64 + level * u).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}
