//! Counter-based, splittable pseudo-random numbers.
//!
//! A generator is a 64-bit key plus a counter. Output `i` of a generator is
//! `splitmix64(key + (i + 1) * GOLDEN)`, so any draw can be reproduced from
//! `(key, i)` alone. Child generators get keys derived from the parent key
//! and a stream index, which keeps e.g. per-layer or per-class draws
//! independent of how many siblings exist.
//!
//! Derived quantities:
//! - `next_f64`: top 53 bits scaled by 2^-53, in `[0, 1)`.
//! - `below(n)`: `(u64 * n) >> 64` (multiply-shift, no rejection).
//! - `normal`: Box-Muller on two consecutive uniforms, cosine branch only.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng {
            key: splitmix64(seed.wrapping_add(GOLDEN)),
            counter: 0,
        }
    }

    /// Generator for `stream` under `seed`; equal to `new(seed).split(stream)`.
    pub fn stream(seed: u64, stream: u64) -> Self {
        Self::new(seed).split(stream)
    }

    /// Child generator. Does not advance `self`.
    pub fn split(&self, stream: u64) -> Self {
        let salt = splitmix64(stream.wrapping_mul(GOLDEN) ^ 0xD1B5_4A32_D192_ED03);
        CounterRng {
            key: splitmix64(self.key ^ salt),
            counter: 0,
        }
    }

    /// Output at absolute position `index`, independent of the counter.
    #[inline]
    pub fn at(&self, index: u64) -> u64 {
        splitmix64(self.key.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = self.at(self.counter);
        self.counter += 1;
        v
    }

    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates, high index first.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct values from `0..n`, in draw order (partial Fisher-Yates).
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}
