use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::math;

/// ChaCha words consumed by one variate (two `u64`s).
const WORDS_PER_DRAW: u128 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrawKind {
    Uniform01,
    StandardNormal,
}

/// Counter-based random stream.
///
/// Every variate consumes exactly two 64-bit words of a ChaCha8 keystream
/// keyed by `seed` and selected by `stream_id`, so the `n`-th variate of a
/// stream can be reproduced by seeking to `n` without replaying the prefix.
#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self::at(seed, stream_id, 0)
    }

    /// Stream positioned after `counter` variates.
    pub fn at(seed: u64, stream_id: u64, counter: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        rng.set_word_pos(counter as u128 * WORDS_PER_DRAW);
        Self {
            seed,
            stream_id,
            counter,
            rng,
        }
    }

    /// Independent stream sharing this seed.
    pub fn fork(&self, stream_id: u64) -> Self {
        Self::new(self.seed, stream_id)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    fn words(&mut self) -> (u64, u64) {
        self.counter += 1;
        (self.rng.next_u64(), self.rng.next_u64())
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        let (a, _) = self.words();
        (a >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller (one output per variate).
    pub fn normal(&mut self) -> f64 {
        let (a, b) = self.words();
        // u1 in (0, 1] keeps the log finite.
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        math::sqrt(-2.0 * math::ln(u1)) * math::cos(2.0 * math::PI * u2)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn fill(&mut self, kind: DrawKind, out: &mut [f64]) {
        for x in out {
            *x = match kind {
                DrawKind::Uniform01 => self.uniform(),
                DrawKind::StandardNormal => self.normal(),
            };
        }
    }

    pub fn draw(&mut self, kind: DrawKind, n: usize) -> Vec<f64> {
        let mut out = alloc::vec![0.0; n];
        self.fill(kind, &mut out);
        out
    }

    /// Uniform index in `0..n` (`n > 0`).
    pub fn index(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }
}

pub fn rng_draw(stream: &mut RandomStream, kind: DrawKind, n: usize) -> Vec<f64> {
    stream.draw(kind, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_draw_leaves_counter() {
        let mut s = RandomStream::new(7, 3);
        assert!(rng_draw(&mut s, DrawKind::StandardNormal, 0).is_empty());
        assert_eq!(s.counter(), 0);
    }

    #[test]
    fn replay_and_seek() {
        let mut a = RandomStream::new(42, 1);
        let mut b = RandomStream::new(42, 1);
        let xa = a.draw(DrawKind::StandardNormal, 100);
        let xb = b.draw(DrawKind::StandardNormal, 100);
        assert_eq!(xa, xb);
        assert_eq!(a.counter(), 100);

        let mut c = RandomStream::at(42, 1, 37);
        let tail = c.draw(DrawKind::StandardNormal, 63);
        assert_eq!(&xa[37..], &tail[..]);

        // Mixed kinds still seek consistently.
        let mut d = RandomStream::new(9, 0);
        let _ = d.uniform();
        let n1 = d.normal();
        let mut e = RandomStream::at(9, 0, 1);
        assert_eq!(n1, e.normal());
    }

    #[test]
    fn streams_differ() {
        let a = RandomStream::new(5, 0).draw(DrawKind::Uniform01, 16);
        let b = RandomStream::new(5, 1).draw(DrawKind::Uniform01, 16);
        assert_ne!(a, b);
    }

    #[test]
    fn normal_moments() {
        let mut s = RandomStream::new(2024, 0);
        let xs = s.draw(DrawKind::StandardNormal, 100_000);
        let m = math::mean(&xs);
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!(m.abs() < 0.02, "mean {m}");
        assert!((v - 1.0).abs() < 0.05, "var {v}");
    }

    #[test]
    fn uniform_range_bounds() {
        let mut s = RandomStream::new(1, 2);
        for _ in 0..10_000 {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }
}
