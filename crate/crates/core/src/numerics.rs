//! Extended-range positive weights and the random primitives built on them.
//!
//! Every rate in the simulator is a [`LogWeight`]: a strictly positive real
//! stored as its base-2 logarithm. The counter-example attachment function
//! reaches `2^(2^27)`, far outside `f64`, but its logarithm is an ordinary
//! number. Sampling never leaves log space: categorical draws use the
//! Gumbel-max rule and exponential draws scale a unit exponential by
//! `2^(-log2 rate)`.

use std::cmp::Ordering;
use std::f64::consts::LN_2;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A strictly positive quantity represented by its base-2 logarithm.
///
/// The logarithm is always finite, so zero and infinity are not representable
/// and the total order on `log2` values is the order on the quantities.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct LogWeight(f64);

impl LogWeight {
    pub const ONE: LogWeight = LogWeight(0.0);

    pub fn from_log2(x: f64) -> Result<Self> {
        if x.is_finite() {
            Ok(LogWeight(x))
        } else {
            Err(invalid(format!("log2 weight must be finite, got {x}")))
        }
    }

    /// Builds a weight from its linear value, which must be positive and finite.
    pub fn from_value(x: f64) -> Result<Self> {
        if x > 0.0 && x.is_finite() {
            Ok(LogWeight(x.log2()))
        } else {
            Err(invalid(format!("weight must be positive and finite, got {x}")))
        }
    }

    /// `log2(n)` for a positive integer; exact for powers of two.
    pub fn from_count(n: u64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("count weight must be positive"));
        }
        Ok(LogWeight((n as f64).log2()))
    }

    #[inline]
    pub fn log2(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn ln(self) -> f64 {
        self.0 * LN_2
    }

    /// Linear value; saturates to `inf` or `0` outside the `f64` range.
    pub fn value(self) -> f64 {
        self.0.exp2()
    }

    /// `1 / w` in linear space, flushed to exactly zero below the normal range.
    pub fn recip_value(self) -> f64 {
        flush_subnormal((-self.0).exp2())
    }

    /// Product of the represented quantities.
    #[inline]
    pub fn mul(self, other: LogWeight) -> LogWeight {
        LogWeight(self.0 + other.0)
    }

    /// `w^p` for a finite exponent.
    pub fn powf(self, p: f64) -> Result<LogWeight> {
        LogWeight::from_log2(self.0 * p)
    }

    /// Sum of the represented quantities, `max + log2(1 + 2^(min - max))`.
    ///
    /// When the gap underflows the correction term the result is exactly
    /// `max`.
    pub fn add(self, other: LogWeight) -> LogWeight {
        let (hi, lo) = if self.0 >= other.0 {
            (self.0, other.0)
        } else {
            (other.0, self.0)
        };
        let gap = lo - hi;
        if gap == 0.0 {
            return LogWeight(hi + 1.0);
        }
        LogWeight(hi + gap.exp2().ln_1p() / LN_2)
    }

    /// Sum of a non-empty sequence of weights, `None` when empty.
    pub fn sum<I: IntoIterator<Item = LogWeight>>(weights: I) -> Option<LogWeight> {
        weights.into_iter().reduce(LogWeight::add)
    }
}

impl Eq for LogWeight {}

impl PartialOrd for LogWeight {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for LogWeight {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl fmt::Debug for LogWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LogWeight(2^{})", self.0)
    }
}

impl fmt::Display for LogWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.abs() < 1000.0 {
            write!(f, "{}", self.value())
        } else {
            write!(f, "2^{}", self.0)
        }
    }
}

impl TryFrom<f64> for LogWeight {
    type Error = crate::Error;

    fn try_from(x: f64) -> Result<Self> {
        LogWeight::from_log2(x)
    }
}

impl From<LogWeight> for f64 {
    fn from(w: LogWeight) -> f64 {
        w.0
    }
}

pub fn lw_from_log2(x: f64) -> Result<LogWeight> {
    LogWeight::from_log2(x)
}

pub fn lw_add(a: LogWeight, b: LogWeight) -> LogWeight {
    a.add(b)
}

#[inline]
fn flush_subnormal(x: f64) -> f64 {
    if x < f64::MIN_POSITIVE {
        0.0
    } else {
        x
    }
}

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for replica `replica` of an experiment seeded with `master`:
/// `mix64(master ^ mix64(replica + GOLDEN_GAMMA))`.
pub fn replica_seed(master: u64, replica: u64) -> u64 {
    mix64(master ^ mix64(replica.wrapping_add(GOLDEN_GAMMA)))
}

/// Counter-based 64-bit generator.
///
/// Draw number `i` (starting at 1) is `mix64(seed + i * GOLDEN_GAMMA)`, which
/// is the SplitMix64 sequence. The state is the seed and the number of draws
/// taken, so a stream can be reproduced or fast-forwarded from those two
/// values alone.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    position: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, position: 0 }
    }

    pub fn for_replica(master: u64, replica: u64) -> Self {
        RngStream::new(replica_seed(master, replica))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 64-bit draws consumed so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.position = self.position.wrapping_add(1);
        mix64(
            self.seed
                .wrapping_add(self.position.wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform on the open interval `(0, 1)`, with 53 bits of resolution.
    #[inline]
    pub fn uniform_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n` by multiply-high; bias is at most `n / 2^64`.
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    #[inline]
    pub fn standard_exponential(&mut self) -> f64 {
        -self.uniform_open().ln()
    }

    #[inline]
    pub fn standard_gumbel(&mut self) -> f64 {
        -self.standard_exponential().ln()
    }
}

/// Index of the maximal `ln w_i + G_i` over independent standard Gumbel
/// variables `G_i`, which is distributed as `w_i / sum w`. One Gumbel draw is
/// consumed per weight, in iteration order.
pub fn gumbel_argmax<I>(weights: I, rng: &mut RngStream) -> Option<usize>
where
    I: IntoIterator<Item = LogWeight>,
{
    let mut best: Option<(usize, f64)> = None;
    for (i, w) in weights.into_iter().enumerate() {
        let key = w.ln() + rng.standard_gumbel();
        match best {
            Some((_, k)) if k >= key => {}
            _ => best = Some((i, key)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn sample_categorical(weights: &[LogWeight], rng: &mut RngStream) -> Result<usize> {
    gumbel_argmax(weights.iter().copied(), rng)
        .ok_or_else(|| invalid("cannot sample from an empty weight sequence"))
}

/// `standard / rate`, clamped to exactly 0 when the result falls below the
/// normal `f64` range.
#[inline]
pub fn scale_exponential(standard: f64, rate: LogWeight) -> f64 {
    flush_subnormal(standard * (-rate.log2()).exp2())
}

/// An `Exp(rate)` draw. Consumes one draw from `rng`.
pub fn sample_exponential(rate: LogWeight, rng: &mut RngStream) -> f64 {
    scale_exponential(rng.standard_exponential(), rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lw(x: f64) -> LogWeight {
        LogWeight::from_log2(x).unwrap()
    }

    #[test]
    fn from_log2_examples() {
        assert_eq!(lw(0.0).value(), 1.0);
        assert_eq!(lw(2.0).value(), 4.0);
        assert_eq!(lw(256.0).value(), 2f64.powi(256));
    }

    #[test]
    fn from_log2_rejects_non_finite() {
        for x in [f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
            assert!(matches!(
                LogWeight::from_log2(x),
                Err(crate::Error::InvalidArgument(_))
            ));
        }
        assert!(LogWeight::from_value(0.0).is_err());
        assert!(LogWeight::from_count(0).is_err());
    }

    #[test]
    fn add_examples() {
        assert_eq!(lw_add(lw(0.0), lw(0.0)).log2(), 1.0);
        assert_eq!(lw_add(lw(2.0), lw(2.0)).log2(), 3.0);
        // log2(1 + 2^256) = 256 + log2(1 + 2^-256); the correction is far
        // below one ulp of 256.
        assert_eq!(lw_add(lw(0.0), lw(256.0)).log2(), 256.0);
        assert_eq!(lw_add(lw(256.0), lw(0.0)).log2(), 256.0);
        assert!((lw_add(lw(0.0), lw(1.0)).log2() - 3f64.log2()).abs() < 1e-15);
    }

    #[test]
    fn exponential_scaling_examples() {
        assert_eq!(scale_exponential(0.7, lw(0.0)), 0.7);
        assert_eq!(scale_exponential(0.7, lw(1.0)), 0.35);
        // 2^-(2^27) is far below the smallest normal double.
        assert!((-((1u64 << 27) as f64)).exp2() < f64::MIN_POSITIVE);
        assert_eq!(scale_exponential(0.7, lw((1u64 << 27) as f64)), 0.0);
        assert_eq!(scale_exponential(1e300, lw((1u64 << 27) as f64)), 0.0);
    }

    #[test]
    fn recip_value_flushes() {
        assert_eq!(lw(2.0).recip_value(), 0.25);
        assert_eq!(lw(1100.0).recip_value(), 0.0);
        assert_eq!(lw(1022.0).recip_value(), f64::MIN_POSITIVE);
        assert_eq!(lw(1023.0).recip_value(), 0.0);
    }

    #[test]
    fn categorical_rejects_empty() {
        let mut rng = RngStream::new(1);
        assert!(sample_categorical(&[], &mut rng).is_err());
    }

    #[test]
    fn categorical_single_category() {
        let mut rng = RngStream::new(2);
        for _ in 0..1000 {
            assert_eq!(sample_categorical(&[lw(3.0)], &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn categorical_one_to_four() {
        let mut rng = RngStream::new(3);
        let w = [lw(0.0), lw(2.0)];
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| sample_categorical(&w, &mut rng).unwrap() == 1)
            .count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.8).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn categorical_extreme_range() {
        let mut rng = RngStream::new(4);
        let w = [lw(0.0), lw(256.0)];
        for _ in 0..100_000 {
            assert_eq!(sample_categorical(&w, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn uniform_stays_open() {
        let mut rng = RngStream::new(5);
        for _ in 0..10_000 {
            let u = rng.uniform_open();
            assert!(u > 0.0 && u < 1.0);
        }
    }

    #[test]
    fn stream_is_splitmix64() {
        // First outputs of SplitMix64 seeded with 0.
        let mut rng = RngStream::new(0);
        assert_eq!(rng.next_u64(), 0xe220_a839_7b1d_cdaf);
        assert_eq!(rng.next_u64(), 0x6e78_9e6a_a1b9_65f4);
        assert_eq!(rng.position(), 2);
    }

    #[test]
    fn replica_seeds_differ() {
        let seeds: std::collections::BTreeSet<u64> =
            (0..1000).map(|r| replica_seed(42, r)).collect();
        assert_eq!(seeds.len(), 1000);
    }

    proptest! {
        #[test]
        fn ordering_matches_log2(a in -1e9f64..1e9, b in -1e9f64..1e9) {
            let (x, y) = (lw(a), lw(b));
            prop_assert_eq!(x < y, a < b);
            prop_assert_eq!(x.cmp(&y), a.partial_cmp(&b).unwrap());
        }

        #[test]
        fn add_commutes_and_associates(a in -30.0f64..30.0, b in -30.0f64..30.0, c in -30.0f64..30.0) {
            let (x, y, z) = (lw(a), lw(b), lw(c));
            prop_assert_eq!(x.add(y), y.add(x));
            let left = x.add(y).add(z).log2();
            let right = x.add(y.add(z)).log2();
            // Rounding error scales with the inputs, not the (possibly tiny) result.
            let scale = 1.0 + a.abs().max(b.abs()).max(c.abs());
            prop_assert!((left - right).abs() <= 4.0 * f64::EPSILON * scale, "{} vs {}", left, right);
        }

        #[test]
        fn add_dominates_both(a in -500.0f64..500.0, b in -500.0f64..500.0) {
            let s = lw(a).add(lw(b));
            prop_assert!(s >= lw(a) && s >= lw(b));
        }

        #[test]
        fn equal_seeds_equal_streams(seed in any::<u64>()) {
            let mut a = RngStream::new(seed);
            let mut b = RngStream::new(seed);
            for _ in 0..64 {
                prop_assert_eq!(a.next_u64(), b.next_u64());
            }
        }
    }
}
