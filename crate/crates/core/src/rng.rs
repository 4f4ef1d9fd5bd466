//! Counter-based random streams.
//!
//! Every rank owns one [`RngStream`] keyed by `(seed, stream_id)`. The full
//! generator state is the triple `(seed, stream_id, counter)`, 256 bits in
//! total, which is what restart records persist.

use rand_chacha::ChaCha12Rng;
use rand_core::{RngCore, SeedableRng};

/// Serializable snapshot of a stream: 64-bit seed, 64-bit stream id and a
/// 128-bit word counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngState {
    pub seed: u64,
    pub stream_id: u64,
    pub counter: u128,
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    core: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut core = ChaCha12Rng::seed_from_u64(seed);
        core.set_stream(stream_id);
        RngStream { seed, stream_id, core }
    }

    pub fn restore(state: RngState) -> Self {
        let mut stream = RngStream::new(state.seed, state.stream_id);
        stream.core.set_word_pos(state.counter);
        stream
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.seed,
            stream_id: self.stream_id,
            counter: self.core.get_word_pos(),
        }
    }

    /// Uniform variate in `[0, 1)` with 53 random mantissa bits.
    pub fn uniform(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        (self.core.next_u64() >> 11) as f64 * SCALE
    }

    /// Standard normal variate via Box-Muller. Consumes exactly two uniforms;
    /// the sine branch is discarded so no variate is cached between calls.
    pub fn gaussian(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn fill_gaussian(&mut self, out: &mut [f64]) {
        for z in out.iter_mut() {
            *z = self.gaussian();
        }
    }
}
