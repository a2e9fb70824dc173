//! Attachment functions `f: N0 -> (0, inf)` and their summability sums.
//!
//! Besides the usual families (constant, shifted linear, power) this module
//! carries the block-structured counter-example sequence
//!
//! ```text
//! 1, a_1 x d_1, 2, a_2 x d_2, 3, a_3 x d_3, ...     d_k = 4^(k^2), log2 a_k = 2^(k^3)
//! ```
//!
//! and its dominated companion in which every integer ("slow") entry is 1.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::LogWeight;

/// Position of an index within the block layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockEntry {
    /// The integer entry `k` sitting just before block `k`.
    Slow(u32),
    /// An entry of block `k`, carrying `a_k`.
    Alpha(u32),
}

/// Layout shared by the counter-example and its lower companion.
///
/// Block `k` has length `d_k = 4^(k^2)` and value `a_k` with
/// `log2 a_k = 2^(k^3)`. Slow entry `k` sits at `s_k`, with `s_1 = 0` and
/// `s_(k+1) = s_k + 1 + d_k`. Integer arithmetic is exact through `k = 4`;
/// evaluation is supported through block 3 only, since `log2 a_4 = 2^64`
/// has no exact `f64` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout;

impl BlockLayout {
    /// Largest block whose entries can be evaluated.
    pub const MAX_BLOCK: u32 = 3;
    /// Largest block the integer helpers accept.
    pub const MAX_EXACT_BLOCK: u32 = 4;

    fn check(k: u32) {
        assert!(
            (1..=Self::MAX_EXACT_BLOCK).contains(&k),
            "block index {k} outside 1..={}",
            Self::MAX_EXACT_BLOCK
        );
    }

    /// `d_k = 4^(k^2)`.
    pub fn block_len(k: u32) -> u128 {
        Self::check(k);
        1u128 << (2 * k * k)
    }

    /// `log2 a_k = 2^(k^3)`.
    pub fn alpha_log2(k: u32) -> u128 {
        Self::check(k);
        1u128 << (k * k * k)
    }

    /// Index `s_k` of slow entry `k`.
    pub fn slow_position(k: u32) -> u128 {
        Self::check(k);
        (1..k).map(|i| 1 + Self::block_len(i)).sum()
    }

    /// Largest evaluable index: the last entry of block [`Self::MAX_BLOCK`].
    pub fn max_index() -> u64 {
        (Self::slow_position(Self::MAX_BLOCK + 1) - 1) as u64
    }

    pub fn locate(j: u64) -> Result<BlockEntry> {
        let max = Self::max_index();
        if j > max {
            return Err(Error::OutOfRange { index: j, max });
        }
        let j = j as u128;
        let mut slow = 0u128;
        for k in 1..=Self::MAX_BLOCK {
            if j == slow {
                return Ok(BlockEntry::Slow(k));
            }
            let len = Self::block_len(k);
            if j <= slow + len {
                return Ok(BlockEntry::Alpha(k));
            }
            slow += 1 + len;
        }
        unreachable!("index {j} passed the range check")
    }

    fn alpha_weight(k: u32) -> LogWeight {
        // 2^(k^3) <= 2^27 for k <= 3, exact in f64.
        LogWeight::from_log2(Self::alpha_log2(k) as f64).expect("finite")
    }
}

/// Counter-example value at index `j`.
pub fn counterexample_value(j: u64) -> Result<LogWeight> {
    Ok(match BlockLayout::locate(j)? {
        BlockEntry::Slow(k) => LogWeight::from_count(k as u64)?,
        BlockEntry::Alpha(k) => BlockLayout::alpha_weight(k),
    })
}

/// The dominated companion: equal on block entries, 1 on slow entries.
pub fn gi_lower_value(j: u64) -> Result<LogWeight> {
    Ok(match BlockLayout::locate(j)? {
        BlockEntry::Slow(_) => LogWeight::ONE,
        BlockEntry::Alpha(k) => BlockLayout::alpha_weight(k),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailRule {
    /// Every index past the table repeats the last entry.
    RepeatLast,
    /// `f(j) = j + 1` past the table.
    LinearShift,
}

/// An explicit finite prefix of `f` plus a rule for the remaining indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub entries: Vec<LogWeight>,
    pub tail: TailRule,
}

impl Table {
    /// Parses the table-file format:
    ///
    /// ```text
    /// # comment
    /// 0 1
    /// 1 log2 256
    /// 2 3.5
    /// tail repeat_last
    /// ```
    ///
    /// Indices must run contiguously from 0, and `tail <rule>` must be the
    /// last non-blank line.
    pub fn parse(text: &str) -> Result<Table> {
        let mut entries = Vec::new();
        let mut tail = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |msg: String| Error::Table(format!("line {}: {msg}", lineno + 1));
            if tail.is_some() {
                return Err(at("entries after the tail line".into()));
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["tail", rule] => {
                    tail = Some(match *rule {
                        "repeat_last" => TailRule::RepeatLast,
                        "linear_shift" => TailRule::LinearShift,
                        other => return Err(at(format!("unknown tail rule `{other}`"))),
                    });
                }
                [index, rest @ ..] => {
                    let index: usize = index
                        .parse()
                        .map_err(|_| at(format!("bad index `{index}`")))?;
                    if index != entries.len() {
                        return Err(at(format!(
                            "expected index {}, found {index}",
                            entries.len()
                        )));
                    }
                    let weight = match rest {
                        [value] => {
                            let v: f64 =
                                value.parse().map_err(|_| at(format!("bad value `{value}`")))?;
                            LogWeight::from_value(v).map_err(|e| at(e.to_string()))?
                        }
                        ["log2", exp] => {
                            let x: f64 =
                                exp.parse().map_err(|_| at(format!("bad exponent `{exp}`")))?;
                            LogWeight::from_log2(x).map_err(|e| at(e.to_string()))?
                        }
                        _ => return Err(at(format!("cannot parse `{line}`"))),
                    };
                    entries.push(weight);
                }
                [] => unreachable!(),
            }
        }
        if entries.is_empty() {
            return Err(Error::Table("no entries".into()));
        }
        let tail = tail.ok_or_else(|| Error::Table("missing final `tail <rule>` line".into()))?;
        Ok(Table { entries, tail })
    }

    pub fn load(path: &Path) -> Result<Table> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Table(format!("{}: {e}", path.display())))?;
        Table::parse(&text)
    }

    fn eval(&self, j: u64) -> LogWeight {
        match self.entries.get(j as usize) {
            Some(w) => *w,
            None => match self.tail {
                TailRule::RepeatLast => *self.entries.last().expect("non-empty"),
                TailRule::LinearShift => linear_shift(j),
            },
        }
    }
}

fn linear_shift(j: u64) -> LogWeight {
    LogWeight::from_log2(((j + 1) as f64).log2()).expect("finite")
}

/// Declarative description of an attachment function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttachmentSpec {
    Constant { value: LogWeight },
    /// `f(j) = j + 1`.
    LinearShift,
    /// `f(j) = (j + 1)^exponent`.
    Power { exponent: f64 },
    Counterexample,
    GiLower,
    Table(Table),
}

impl AttachmentSpec {
    pub fn constant(value: f64) -> Result<Self> {
        Ok(AttachmentSpec::Constant {
            value: LogWeight::from_value(value)?,
        })
    }

    pub fn power(exponent: f64) -> Result<Self> {
        if !exponent.is_finite() {
            return Err(invalid("power exponent must be finite"));
        }
        Ok(AttachmentSpec::Power { exponent })
    }

    /// `f(j)`.
    pub fn eval(&self, j: u64) -> Result<LogWeight> {
        match self {
            AttachmentSpec::Constant { value } => Ok(*value),
            AttachmentSpec::LinearShift => Ok(linear_shift(j)),
            AttachmentSpec::Power { exponent } => linear_shift(j).powf(*exponent),
            AttachmentSpec::Counterexample => counterexample_value(j),
            AttachmentSpec::GiLower => gi_lower_value(j),
            AttachmentSpec::Table(t) => Ok(t.eval(j)),
        }
    }

    /// Largest index `eval` accepts, if bounded.
    pub fn max_index(&self) -> Option<u64> {
        match self {
            AttachmentSpec::Counterexample | AttachmentSpec::GiLower => {
                Some(BlockLayout::max_index())
            }
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AttachmentSpec::Constant { .. } => "constant",
            AttachmentSpec::LinearShift => "linear_shift",
            AttachmentSpec::Power { .. } => "power",
            AttachmentSpec::Counterexample => "counterexample",
            AttachmentSpec::GiLower => "gi_lower",
            AttachmentSpec::Table(_) => "table",
        }
    }

    /// Known behaviour of `sum 1/f` and `sum 1/f^2` for the built-in families.
    /// These are analytic facts, not computed from partial sums.
    pub fn classification(&self) -> Option<&'static str> {
        Some(match self {
            AttachmentSpec::Constant { .. } => "sum 1/f diverges; sum 1/f^2 diverges",
            AttachmentSpec::LinearShift => "sum 1/f diverges; sum 1/f^2 converges (pi^2/6)",
            AttachmentSpec::Power { exponent } => {
                if *exponent <= 0.5 {
                    "sum 1/f diverges; sum 1/f^2 diverges"
                } else if *exponent <= 1.0 {
                    "sum 1/f diverges; sum 1/f^2 converges"
                } else {
                    "sum 1/f converges; sum 1/f^2 converges"
                }
            }
            AttachmentSpec::Counterexample => {
                "sum 1/f diverges (dominates the harmonic series on slow entries); \
                 sum 1/f^2 converges (pi^2/6 + sum d_k / a_k^2)"
            }
            AttachmentSpec::GiLower => {
                "sum 1/f diverges (infinitely many unit entries); sum 1/f^2 diverges"
            }
            AttachmentSpec::Table(_) => return None,
        })
    }

    /// First index in `0..count` where `self` falls below `lower`, if any.
    pub fn first_domination_failure(
        &self,
        lower: &AttachmentSpec,
        count: u64,
    ) -> Result<Option<u64>> {
        for j in 0..count {
            if self.eval(j)? < lower.eval(j)? {
                return Ok(Some(j));
            }
        }
        Ok(None)
    }
}

impl fmt::Display for AttachmentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttachmentSpec::Constant { value } => write!(f, "constant:{value}"),
            AttachmentSpec::Power { exponent } => write!(f, "power:{exponent}"),
            other => f.write_str(other.name()),
        }
    }
}

impl FromStr for AttachmentSpec {
    type Err = Error;

    /// Accepts `constant[:c]`, `linear_shift`, `power:p`, `counterexample`,
    /// `gi_lower` and `@path/to/table`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(path) = s.strip_prefix('@') {
            return Ok(AttachmentSpec::Table(Table::load(Path::new(path))?));
        }
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let number = |p: &str| -> Result<f64> {
            p.parse()
                .map_err(|_| invalid(format!("bad parameter `{p}` for `{name}`")))
        };
        match (name, param) {
            ("constant", None) => AttachmentSpec::constant(1.0),
            ("constant", Some(p)) => AttachmentSpec::constant(number(p)?),
            ("linear_shift", None) => Ok(AttachmentSpec::LinearShift),
            ("power", Some(p)) => AttachmentSpec::power(number(p)?),
            ("counterexample", None) => Ok(AttachmentSpec::Counterexample),
            ("gi_lower", None) => Ok(AttachmentSpec::GiLower),
            _ => Err(invalid(format!("unknown attachment function `{s}`"))),
        }
    }
}

/// Partial sums `S1 = sum_{j<=last} 1/f(j)` and `S2 = sum_{j<=last} 1/f(j)^2`.
///
/// Terms below the normal `f64` range count as exactly zero; each sum is
/// accumulated in nondecreasing term order.
pub fn partial_inverse_sums(spec: &AttachmentSpec, last: u64) -> Result<(f64, f64)> {
    let mut s1 = Vec::with_capacity(last as usize + 1);
    let mut s2 = Vec::with_capacity(last as usize + 1);
    for j in 0..=last {
        let w = spec.eval(j)?;
        s1.push(w.recip_value());
        s2.push(w.mul(w).recip_value());
    }
    Ok((ascending_sum(s1), ascending_sum(s2)))
}

fn ascending_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

/// `sum_{k=1..K} 1/k`, the lower bound for `S1` through the `K`-th slow entry.
pub fn harmonic_number(k: u32) -> f64 {
    ascending_sum((1..=k).map(|i| 1.0 / i as f64).collect())
}

/// Limit of `S2` for the counter-example: `sum_k (1/k^2 + d_k / a_k^2)`.
///
/// Block terms are evaluated as `2^(2 k^2 - 2^(k^3 + 1))`, which is zero in
/// `f64` from `k = 3` on and negligible against the running sum from `k = 2`.
/// The slow-entry series is summed directly over `k <= 10^6` and closed
/// with the Euler-Maclaurin tail `1/N + 1/(2N^2) + 1/(6N^3)`, `N = 10^6 + 1`.
pub fn counterexample_s2_limit() -> f64 {
    const TERMS: u64 = 1_000_000;
    let mut terms = Vec::with_capacity(TERMS as usize + 8);
    for k in 1..=TERMS {
        let kf = k as f64;
        terms.push(1.0 / (kf * kf));
    }
    for k in 1..=8u32 {
        let kf = k as f64;
        let exponent = 2.0 * kf * kf - (kf * kf * kf + 1.0).exp2();
        let term = exponent.exp2();
        terms.push(if term < f64::MIN_POSITIVE { 0.0 } else { term });
    }
    let n = (TERMS + 1) as f64;
    let tail = 1.0 / n + 1.0 / (2.0 * n * n) + 1.0 / (6.0 * n * n * n);
    ascending_sum(terms) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent oracle: write the sequence out entry by entry from the
    /// definition, with log2 values.
    fn enumerate_counterexample(lower: bool) -> Vec<f64> {
        let mut seq = Vec::new();
        for k in 1u32..=3 {
            seq.push(if lower { 0.0 } else { (k as f64).log2() });
            let d = 4u64.pow(k * k);
            let a = 2f64.powi((k * k * k) as i32);
            seq.extend(std::iter::repeat_n(a, d as usize));
        }
        seq
    }

    #[test]
    fn layout_values() {
        assert_eq!(BlockLayout::block_len(1), 4);
        assert_eq!(BlockLayout::block_len(2), 256);
        assert_eq!(BlockLayout::block_len(3), 262_144);
        assert_eq!(BlockLayout::block_len(4), 1u128 << 32);
        assert_eq!(BlockLayout::alpha_log2(1), 2);
        assert_eq!(BlockLayout::alpha_log2(2), 256);
        assert_eq!(BlockLayout::alpha_log2(3), 1 << 27);
        assert_eq!(BlockLayout::alpha_log2(4), 1u128 << 64);
        assert_eq!(BlockLayout::slow_position(1), 0);
        assert_eq!(BlockLayout::slow_position(2), 5);
        assert_eq!(BlockLayout::slow_position(3), 262);
        assert_eq!(BlockLayout::slow_position(4), 262_407);
        assert_eq!(BlockLayout::max_index(), 262_406);
    }

    #[test]
    fn counterexample_matches_enumeration() {
        let seq = enumerate_counterexample(false);
        assert_eq!(seq.len() as u64, BlockLayout::max_index() + 1);
        for (j, &x) in seq.iter().enumerate() {
            assert_eq!(counterexample_value(j as u64).unwrap().log2(), x, "index {j}");
        }
        let lower = enumerate_counterexample(true);
        for (j, &x) in lower.iter().enumerate() {
            assert_eq!(gi_lower_value(j as u64).unwrap().log2(), x, "index {j}");
        }
    }

    #[test]
    fn eval_examples() {
        assert_eq!(AttachmentSpec::LinearShift.eval(0).unwrap(), LogWeight::ONE);
        let ce = AttachmentSpec::Counterexample;
        assert_eq!(ce.eval(0).unwrap(), LogWeight::ONE);
        assert_eq!(ce.eval(5).unwrap().value(), 2.0);
        assert_eq!(counterexample_value(1).unwrap().log2(), 2.0);
        assert_eq!(counterexample_value(6).unwrap().log2(), 256.0);
        assert_eq!(counterexample_value(262).unwrap().value(), 3.0);
        assert_eq!(gi_lower_value(0).unwrap(), LogWeight::ONE);
        assert_eq!(gi_lower_value(5).unwrap(), LogWeight::ONE);
        assert_eq!(gi_lower_value(6).unwrap().log2(), 256.0);
    }

    #[test]
    fn out_of_range_names_maximum() {
        let err = AttachmentSpec::Counterexample.eval(262_407).unwrap_err();
        assert_eq!(
            err,
            Error::OutOfRange {
                index: 262_407,
                max: 262_406
            }
        );
        assert!(err.to_string().contains("262406"));
        assert!(gi_lower_value(1 << 40).is_err());
        assert!(partial_inverse_sums(&AttachmentSpec::GiLower, 300_000).is_err());
    }

    #[test]
    fn partial_sum_examples() {
        let (s1, s2) = partial_inverse_sums(&AttachmentSpec::Counterexample, 5).unwrap();
        assert_eq!(s1, 2.5);
        assert_eq!(s2, 1.5);

        let (s1, s2) = partial_inverse_sums(&AttachmentSpec::Counterexample, 262).unwrap();
        // Direct evaluation: 1 + 4/4 + 1/2 + 256 * 2^-256 + 1/3.
        assert!((s1 - (2.5 + 1.0 / 3.0)).abs() < 1e-12, "{s1}");
        assert!((s2 - (1.5 + 1.0 / 9.0)).abs() < 1e-12, "{s2}");

        let (s1, s2) = partial_inverse_sums(&AttachmentSpec::LinearShift, 3).unwrap();
        assert!((s1 - 25.0 / 12.0).abs() < 1e-15);
        assert!((s2 - (1.0 + 0.25 + 1.0 / 9.0 + 0.0625)).abs() < 1e-15);

        let (s1, s2) = partial_inverse_sums(&AttachmentSpec::constant(1.0).unwrap(), 9).unwrap();
        assert_eq!((s1, s2), (10.0, 10.0));
    }

    #[test]
    fn slow_entries_dominate_harmonic() {
        for k in 1..=3u32 {
            let s = BlockLayout::slow_position(k) as u64;
            let (s1, _) = partial_inverse_sums(&AttachmentSpec::Counterexample, s).unwrap();
            assert!(s1 >= harmonic_number(k), "K={k}: {s1}");
        }
    }

    #[test]
    fn s2_plateau_and_limit() {
        let ce = AttachmentSpec::Counterexample;
        let end2 = BlockLayout::slow_position(3) as u64 - 1;
        let end3 = BlockLayout::max_index();
        let (_, through2) = partial_inverse_sums(&ce, end2).unwrap();
        let (_, through3) = partial_inverse_sums(&ce, end3).unwrap();
        // Block 3 adds only the slow entry 3; its own terms are zero.
        assert_eq!(through3, through2 + 1.0 / 9.0);
        let limit = counterexample_s2_limit();
        let expected = std::f64::consts::PI.powi(2) / 6.0 + 0.25;
        assert!((limit - expected).abs() < 1e-10, "{limit}");
        assert!((limit - 1.89493).abs() < 5e-6);
    }

    #[test]
    fn table_parsing() {
        let t = Table::parse("# demo\n0 1\n1 log2 256\n2 0.5\n\ntail repeat_last\n").unwrap();
        let spec = AttachmentSpec::Table(t);
        assert_eq!(spec.eval(0).unwrap(), LogWeight::ONE);
        assert_eq!(spec.eval(1).unwrap().log2(), 256.0);
        assert_eq!(spec.eval(2).unwrap().value(), 0.5);
        assert_eq!(spec.eval(1000).unwrap().value(), 0.5);

        let t = Table::parse("0 7\ntail linear_shift").unwrap();
        assert_eq!(t.eval(0).value(), 7.0);
        assert_eq!(t.eval(3).value(), 4.0);
    }

    #[test]
    fn table_rejects_malformed() {
        for bad in [
            "",
            "0 1\n",
            "1 1\ntail repeat_last",
            "0 1\n2 1\ntail repeat_last",
            "0 -1\ntail repeat_last",
            "0 0\ntail repeat_last",
            "0 1\ntail sideways",
            "0 1\ntail repeat_last\n1 2",
            "0 log2 inf\ntail repeat_last",
            "0 one\ntail repeat_last",
        ] {
            assert!(
                matches!(Table::parse(bad), Err(Error::Table(_))),
                "accepted {bad:?}"
            );
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("linear_shift".parse::<AttachmentSpec>().unwrap(), AttachmentSpec::LinearShift);
        assert_eq!(
            "constant".parse::<AttachmentSpec>().unwrap(),
            AttachmentSpec::constant(1.0).unwrap()
        );
        assert_eq!(
            "power:1.5".parse::<AttachmentSpec>().unwrap(),
            AttachmentSpec::Power { exponent: 1.5 }
        );
        assert!("constant:0".parse::<AttachmentSpec>().is_err());
        assert!("power".parse::<AttachmentSpec>().is_err());
        assert!("nope".parse::<AttachmentSpec>().is_err());
        for s in ["counterexample", "gi_lower", "linear_shift", "constant:2", "power:0.5"] {
            let spec: AttachmentSpec = s.parse().unwrap();
            assert_eq!(spec.to_string().parse::<AttachmentSpec>().unwrap(), spec);
        }
    }

    #[test]
    fn domination_check() {
        let hi = AttachmentSpec::Counterexample;
        let lo = AttachmentSpec::GiLower;
        assert_eq!(hi.first_domination_failure(&lo, 263).unwrap(), None);
        assert_eq!(lo.first_domination_failure(&hi, 6).unwrap(), Some(5));
    }

    proptest! {
        #[test]
        fn lower_is_pointwise_dominated(j in 0u64..=262_406) {
            prop_assert!(gi_lower_value(j).unwrap() <= counterexample_value(j).unwrap());
        }

        #[test]
        fn eval_positive_and_pure(j in 0u64..1_000_000, p in -3.0f64..3.0) {
            for spec in [AttachmentSpec::LinearShift, AttachmentSpec::power(p).unwrap()] {
                let a = spec.eval(j).unwrap();
                prop_assert!(a.log2().is_finite());
                prop_assert_eq!(a, spec.eval(j).unwrap());
            }
        }

        #[test]
        fn s2_nondecreasing(a in 0u64..400, b in 0u64..400) {
            let (lo, hi) = (a.min(b), a.max(b));
            let ce = AttachmentSpec::Counterexample;
            prop_assert!(partial_inverse_sums(&ce, lo).unwrap().1 <= partial_inverse_sums(&ce, hi).unwrap().1);
        }
    }
}
