//! Counter-based Gaussian increments.
//!
//! Each `(seed, stream_id)` pair selects an independent ChaCha8 stream. Step
//! `k` of a stream of dimension `dim` owns a fixed window of the keystream, so
//! increments can be drawn by random access ([`NoiseStream::increments`]) or
//! sequentially ([`NoiseCursor`]) with identical results.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NoiseStream {
    pub seed: u64,
    pub stream_id: u64,
    pub dim: usize,
}

impl NoiseStream {
    pub fn new(seed: u64, stream_id: u64, dim: usize) -> Self {
        Self {
            seed,
            stream_id,
            dim,
        }
    }

    /// u32 words consumed per step: two u64 draws per Box–Muller pair.
    fn words_per_step(&self) -> u128 {
        4 * self.dim.div_ceil(2) as u128
    }

    fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }

    /// Wiener increments for step `step_index`: `dim` independent N(0, dt) draws.
    pub fn increments(&self, step_index: u64, dt: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.fill_increments(step_index, dt, &mut out);
        out
    }

    pub fn fill_increments(&self, step_index: u64, dt: f64, out: &mut [f64]) {
        debug_assert!(dt > 0.0);
        debug_assert_eq!(out.len(), self.dim);
        if self.dim == 0 {
            return;
        }
        let mut rng = self.rng();
        rng.set_word_pos(step_index as u128 * self.words_per_step());
        fill_normals(&mut rng, dt.sqrt(), out);
    }

    /// Sequential reader starting at step 0.
    pub fn cursor(&self) -> NoiseCursor {
        NoiseCursor {
            rng: self.rng(),
            dim: self.dim,
            step: 0,
        }
    }
}

/// Free-function form of [`NoiseStream::increments`].
pub fn gaussian_increments(stream: &NoiseStream, step_index: u64, dt: f64) -> Vec<f64> {
    stream.increments(step_index, dt)
}

/// Sequential access to a [`NoiseStream`]. The `k`-th call to `next_into`
/// returns exactly `stream.increments(k, dt)`.
#[derive(Debug, Clone)]
pub struct NoiseCursor {
    rng: ChaCha8Rng,
    dim: usize,
    step: u64,
}

impl NoiseCursor {
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn next_into(&mut self, dt: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        fill_normals(&mut self.rng, dt.sqrt(), out);
        self.step += 1;
    }

    /// Advance to an absolute step index.
    pub fn seek(&mut self, step: u64) {
        let words = 4 * self.dim.div_ceil(2) as u128;
        self.rng.set_word_pos(step as u128 * words);
        self.step = step;
    }
}

fn fill_normals(rng: &mut ChaCha8Rng, scale: f64, out: &mut [f64]) {
    for pair in out.chunks_mut(2) {
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let radius = scale * (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        pair[0] = radius * c;
        if pair.len() == 2 {
            pair[1] = radius * s;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeatable_for_identical_arguments() {
        let s = NoiseStream::new(7, 0, 2);
        assert_eq!(s.increments(0, 0.01), s.increments(0, 0.01));
        assert_eq!(s.increments(0, 0.01).len(), 2);
    }

    #[test]
    fn zero_dimension_is_empty() {
        assert!(NoiseStream::new(7, 0, 0).increments(3, 0.01).is_empty());
    }

    #[test]
    fn cursor_matches_random_access() {
        for dim in [1, 2, 3, 5] {
            let s = NoiseStream::new(11, 4, dim);
            let mut cur = s.cursor();
            let mut buf = vec![0.0; dim];
            for k in 0..50 {
                cur.next_into(0.1, &mut buf);
                assert_eq!(buf, s.increments(k, 0.1), "dim {dim} step {k}");
            }
            cur.seek(17);
            cur.next_into(0.1, &mut buf);
            assert_eq!(buf, s.increments(17, 0.1));
        }
    }

    #[test]
    fn streams_differ() {
        let a = NoiseStream::new(1, 0, 4).increments(0, 1.0);
        let b = NoiseStream::new(1, 1, 4).increments(0, 1.0);
        let c = NoiseStream::new(2, 0, 4).increments(0, 1.0);
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn empirical_variance_matches_dt() {
        let dt = 0.01;
        let s = NoiseStream::new(2024, 3, 1);
        let mut cur = s.cursor();
        let n = 1_000_000;
        let (mut sum, mut sum2) = (0.0, 0.0);
        let mut buf = [0.0];
        for _ in 0..n {
            cur.next_into(dt, &mut buf);
            sum += buf[0];
            sum2 += buf[0] * buf[0];
        }
        let mean = sum / n as f64;
        let var = sum2 / n as f64 - mean * mean;
        // standard error of the variance estimate is dt * sqrt(2/n) ~ 0.14%
        assert!((var - dt).abs() / dt < 0.01, "var {var}");
        assert!(mean.abs() < 5.0 * (dt / n as f64).sqrt());
    }

    #[test]
    fn independent_streams_are_uncorrelated() {
        let a = NoiseStream::new(5, 0, 1);
        let b = NoiseStream::new(5, 1, 1);
        let (mut ca, mut cb) = (a.cursor(), b.cursor());
        let n = 200_000;
        let mut cov = 0.0;
        let (mut x, mut y) = ([0.0], [0.0]);
        for _ in 0..n {
            ca.next_into(1.0, &mut x);
            cb.next_into(1.0, &mut y);
            cov += x[0] * y[0];
        }
        assert!((cov / n as f64).abs() < 5.0 / (n as f64).sqrt());
    }
}
