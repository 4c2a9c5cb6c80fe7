//! Counter-based deterministic random number generation.
//!
//! Every random draw in the simulator is produced by a [`CounterRng`] keyed
//! by `(seed, domain, node, round, slot)`. The generator is stateless across
//! calls sites: two workers constructing the same key observe the same
//! stream, so parallel execution order cannot change results. Not suitable
//! for cryptographic use.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// splitmix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key domains, separating honest oracle draws from attack randomness and
/// harness-level decisions that share one experiment seed.
pub mod domain {
    pub const ORACLE: u64 = 1;
    pub const ATTACK: u64 = 2;
    pub const HARNESS: u64 = 3;
    pub const OUTPUT: u64 = 4;
}

/// Stateless keyed generator (splitmix64 stream over a hashed key).
#[derive(Debug, Clone)]
pub struct CounterRng {
    state: u64,
    spare_normal: Option<f64>,
}

impl CounterRng {
    /// Build a generator from an arbitrary key. Identical keys yield
    /// identical streams.
    pub fn from_key(words: &[u64]) -> Self {
        let mut h: u64 = 0x243F_6A88_85A3_08D3;
        for &w in words {
            h = mix64(h.wrapping_mul(0x100_0000_01B3) ^ w);
        }
        CounterRng {
            state: h,
            spare_normal: None,
        }
    }

    /// Stream for one stochastic-gradient draw of `node` at `(round, slot)`.
    pub fn for_oracle(seed: u64, node: usize, round: u64, slot: u64) -> Self {
        Self::from_key(&[seed, domain::ORACLE, node as u64, round, slot])
    }

    /// Stream for the Byzantine messages of one round; `stream` distinguishes
    /// the two upload channels of accelerated methods.
    pub fn for_attack(seed: u64, round: u64, stream: u64) -> Self {
        Self::from_key(&[seed, domain::ATTACK, round, stream])
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform in `[0, 1)` with 53-bit resolution.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `(0, 1]`; never returns zero (safe for `ln`).
    #[inline]
    fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw (Box-Muller; the second variate is cached).
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let r = (-2.0 * self.next_f64_open().ln()).sqrt();
        let theta = std::f64::consts::TAU * self.next_f64();
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Uniform integer in `[0, n)`.
    #[inline]
    pub fn gen_range(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.gen_range(i + 1);
            items.swap(i, j);
        }
    }
}
