//! Deterministic random number generation.
//!
//! Everything stochastic in this crate flows from [`SplitMix64`], a tiny
//! counter-based generator with a fully specified update rule, so that a
//! given seed produces the exact same activation bytes on every platform and
//! in every implementation of the same rule. Normal deviates come from
//! [`NormalSource`], a Box-Muller transform over consecutive uniform draws.

/// SplitMix64 pseudo-random stream.
///
/// State advances by the 64-bit golden-gamma constant; output is the
/// finalizer of Vigna's reference implementation. Passes through every seed,
/// including 0.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    /// Create a stream starting from `seed`.
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Next 64-bit word.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of mantissa.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, bound)` by rejection-free modular reduction.
    /// Bias is negligible for the small bounds used here.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        self.next_u64() % bound.max(1)
    }
}

/// Standard normal deviates via the Box-Muller transform.
///
/// Each pair of uniform words yields two deviates; the second is cached so
/// consumption order is exactly one deviate per call.
#[derive(Debug, Clone)]
pub struct NormalSource {
    rng: SplitMix64,
    spare: Option<f64>,
}

impl NormalSource {
    /// Create a source over a fresh SplitMix64 stream.
    pub fn new(seed: u64) -> Self {
        NormalSource {
            rng: SplitMix64::new(seed),
            spare: None,
        }
    }

    /// Wrap an existing stream.
    pub fn from_stream(rng: SplitMix64) -> Self {
        NormalSource { rng, spare: None }
    }

    /// Next standard normal deviate.
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.rng.next_f64();
        let u2 = self.rng.next_f64();
        // 1 - u1 lies in (0, 1], so the logarithm is finite.
        let r = (-2.0 * (1.0 - u1).ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}
