//! Deterministic synthetic grayscale frames.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameSource {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub seed: u64,
}

impl Default for FrameSource {
    fn default() -> Self {
        FrameSource { width: 1280, height: 720, frames: 10, seed: 0 }
    }
}

impl FrameSource {
    /// Pixel values 0..=255 of frame `i`, row-major. Each frame is an
    /// independent stream of the seed.
    pub fn frame(&self, i: usize) -> Vec<u8> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(i as u64);
        (0..self.width * self.height).map(|_| rng.gen()).collect()
    }

    /// Frame `i` as floats with a one-pixel zero border:
    /// `(height + 2) x (width + 2)`.
    pub fn padded(&self, i: usize) -> Vec<f64> {
        let px = self.frame(i);
        let pw = self.width + 2;
        let mut out = vec![0.0; (self.height + 2) * pw];
        for y in 0..self.height {
            for x in 0..self.width {
                out[(y + 1) * pw + x + 1] = px[y * self.width + x] as f64;
            }
        }
        out
    }
}

/// Binary PGM (P5) encoding of 8-bit pixels.
pub fn to_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Clamps filter output to 0..=255 for viewing.
pub fn to_pixels(values: &[f64]) -> Vec<u8> {
    values.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()
}
