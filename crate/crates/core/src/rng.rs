//! Splittable counter-based random generator.
//!
//! Every stream is keyed by an explicit tuple such as
//! `(seed, scene, frame, agent, purpose)`, so a draw is a pure function of
//! its key and never depends on iteration order. All sampling is plain
//! integer/float arithmetic (no libm transcendentals), which keeps output
//! bit-identical across platforms.

/// What a keyed stream is used for. Part of the key, so adding a new
/// purpose never perturbs existing streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Purpose {
    Spawn = 1,
    Behavior = 2,
    Speed = 3,
    Turn = 4,
    Noise = 5,
    Dropout = 6,
    Init = 7,
    Shuffle = 8,
    Clutter = 9,
    Test = 10,
}

/// FNV-1a, for folding names into RNG keys.
pub fn hash_str(s: &str) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A stream of pseudo-random values for one key.
#[derive(Clone, Copy, Debug)]
pub struct KeyedRng {
    state: u64,
}

impl KeyedRng {
    pub fn from_key(parts: &[u64]) -> Self {
        let mut state = 0x6A09_E667_F3BC_C909; // arbitrary nonzero start
        for &p in parts {
            state = splitmix64(state ^ p);
        }
        KeyedRng { state }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Standard normal via the Irwin-Hall sum of 12 uniforms.
    /// Arithmetic only, so the value is platform-stable; the tails are
    /// truncated at +-6 sigma, which is irrelevant at desk scale.
    pub fn normal(&mut self) -> f64 {
        let mut s = 0.0;
        for _ in 0..12 {
            s += self.uniform();
        }
        s - 6.0
    }

    pub fn normal_scaled(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.normal()
    }

    /// Bernoulli draw.
    pub fn below(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in [0, n).
    pub fn pick(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }
}
