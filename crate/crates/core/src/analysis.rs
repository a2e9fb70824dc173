//! Diagnostics: leader timelines, jump-time profiles, the exact small-tree
//! oracle, total-variation distance and replica aggregation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::attachment::AttachmentSpec;
use crate::discrete::{AttachEvent, AttachObserver};
use crate::error::{invalid, Error, Result};
use crate::numerics::LogWeight;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderRecord {
    pub step: u64,
    pub leader: u64,
    pub max_degree: u64,
    pub argmax_size: u64,
}

/// Tracks the canonical leader: a node of maximal out-degree, ties going to
/// the node that reached that degree first.
///
/// Since each step raises a single degree by one, a tie can only form when
/// some node catches up with the current maximum, and the incumbent reached
/// it first; a change therefore happens only on a strict overtake.
/// `records` holds one entry per step at which leader, maximum or argmax-set
/// size changed, starting with the single-node tree at step 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderTimeline {
    pub records: Vec<LeaderRecord>,
    pub change_steps: Vec<u64>,
    /// Steps at which the argmax set changed membership.
    pub argmax_change_steps: Vec<u64>,
    leaders: BTreeSet<u64>,
    step: u64,
}

impl Default for LeaderTimeline {
    fn default() -> Self {
        Self::new()
    }
}

impl LeaderTimeline {
    pub fn new() -> Self {
        LeaderTimeline {
            records: vec![LeaderRecord {
                step: 0,
                leader: 0,
                max_degree: 0,
                argmax_size: 1,
            }],
            change_steps: Vec::new(),
            argmax_change_steps: Vec::new(),
            leaders: BTreeSet::from([0]),
            step: 0,
        }
    }

    pub fn current(&self) -> LeaderRecord {
        *self.records.last().expect("timeline starts with a record")
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn last_change(&self) -> Option<u64> {
        self.change_steps.last().copied()
    }

    pub fn distinct_leaders(&self) -> usize {
        self.leaders.len()
    }

    /// Leader changes at steps `<= step`.
    pub fn changes_up_to(&self, step: u64) -> usize {
        self.change_steps.partition_point(|&s| s <= step)
    }

    pub fn last_change_up_to(&self, step: u64) -> Option<u64> {
        let n = self.changes_up_to(step);
        (n > 0).then(|| self.change_steps[n - 1])
    }

    pub fn update(&mut self, event: &AttachEvent) -> Result<()> {
        if event.step != self.step + 1 {
            return Err(invalid(format!(
                "leader timeline at step {} received step {}",
                self.step, event.step
            )));
        }
        self.step = event.step;
        let mut rec = self.current();
        // The newborn joins the argmax set only while the maximum is 0, which
        // cannot happen after the first step.
        if event.parent_new_degree > rec.max_degree {
            rec.max_degree = event.parent_new_degree;
            rec.argmax_size = 1;
            self.argmax_change_steps.push(event.step);
            if event.parent != rec.leader {
                rec.leader = event.parent;
                self.change_steps.push(event.step);
                self.leaders.insert(event.parent);
            }
        } else if event.parent_new_degree == rec.max_degree {
            rec.argmax_size += 1;
            self.argmax_change_steps.push(event.step);
        } else {
            return Ok(());
        }
        rec.step = event.step;
        self.records.push(rec);
        Ok(())
    }

    pub fn summary(&self, horizons: &[u64]) -> LeaderSummary {
        LeaderSummary {
            steps: self.step,
            changes: self.change_steps.len() as u64,
            last_change: self.last_change(),
            distinct_leaders: self.distinct_leaders() as u64,
            argmax_changes: self.argmax_change_steps.len() as u64,
            final_leader: self.current().leader,
            max_degree: self.current().max_degree,
            by_horizon: horizons
                .iter()
                .filter(|&&h| h <= self.step)
                .map(|&h| HorizonLeaderStat {
                    horizon: h,
                    changes: self.changes_up_to(h) as u64,
                    last_change: self.last_change_up_to(h),
                })
                .collect(),
        }
    }
}

impl AttachObserver for LeaderTimeline {
    fn observe(&mut self, event: &AttachEvent) -> Result<()> {
        self.update(event)
    }
}

/// Keeps every event; meant for short runs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog(pub Vec<AttachEvent>);

impl AttachObserver for EventLog {
    fn observe(&mut self, event: &AttachEvent) -> Result<()> {
        self.0.push(*event);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HorizonLeaderStat {
    pub horizon: u64,
    pub changes: u64,
    pub last_change: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderSummary {
    pub steps: u64,
    pub changes: u64,
    pub last_change: Option<u64>,
    pub distinct_leaders: u64,
    pub argmax_changes: u64,
    pub final_leader: u64,
    pub max_degree: u64,
    pub by_horizon: Vec<HorizonLeaderStat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauProfile {
    /// `(k, tau_k)`.
    pub checkpoints: Vec<(u64, f64)>,
    /// `(k, tau_2k - tau_k)`.
    pub doubling_gaps: Vec<(u64, f64)>,
}

/// Extracts `tau_k` and `tau_2k - tau_k` at each checkpoint `k`, where
/// `tau[k - 1]` holds `tau_k`.
pub fn tau_profile(tau: &[f64], checkpoints: &[u64]) -> Result<TauProfile> {
    let realized = tau.len() as u64;
    let at = |k: u64| -> Result<f64> {
        if k == 0 || k > realized {
            return Err(Error::OutOfRange {
                index: k,
                max: realized,
            });
        }
        Ok(tau[(k - 1) as usize])
    };
    let mut profile = TauProfile {
        checkpoints: Vec::with_capacity(checkpoints.len()),
        doubling_gaps: Vec::with_capacity(checkpoints.len()),
    };
    for &k in checkpoints {
        let t = at(k)?;
        profile.checkpoints.push((k, t));
        profile.doubling_gaps.push((k, at(2 * k)? - t));
    }
    Ok(profile)
}

/// `true` when each doubling gap is at most `1 / factor` of the previous one.
/// Gaps that have collapsed to exactly zero satisfy this trivially.
pub fn explosive_signature(gaps: &[f64], factor: f64) -> bool {
    gaps.len() >= 2 && gaps.windows(2).all(|w| w[1] * factor <= w[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    RootDegree,
    MaxDegree,
    /// Out-degrees sorted in decreasing order.
    DegreeMultiset,
}

impl Statistic {
    pub fn of(self, outdeg: &[u64]) -> Vec<u64> {
        match self {
            Statistic::RootDegree => vec![outdeg[0]],
            Statistic::MaxDegree => vec![outdeg.iter().copied().max().unwrap_or(0)],
            Statistic::DegreeMultiset => {
                let mut d = outdeg.to_vec();
                d.sort_unstable_by(|a, b| b.cmp(a));
                d
            }
        }
    }
}

pub type Distribution<K> = BTreeMap<K, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactDistribution {
    pub support: Vec<Vec<u64>>,
    pub probabilities: Vec<f64>,
    pub log2_probabilities: Vec<f64>,
}

impl ExactDistribution {
    pub fn to_map(&self) -> Distribution<Vec<u64>> {
        self.support
            .iter()
            .cloned()
            .zip(self.probabilities.iter().copied())
            .collect()
    }
}

/// Largest tree the enumeration oracle accepts.
pub const MAX_ORACLE_NODES: u64 = 8;

/// Law of `statistic` on the tree with `nodes` nodes, by enumerating all
/// `(nodes - 1)!` attachment sequences and multiplying step probabilities in
/// log space.
pub fn exact_small_tree_distribution(
    spec: &AttachmentSpec,
    nodes: u64,
    statistic: Statistic,
) -> Result<ExactDistribution> {
    if nodes == 0 || nodes > MAX_ORACLE_NODES {
        return Err(invalid(format!(
            "enumeration supports 1..={MAX_ORACLE_NODES} nodes, got {nodes}"
        )));
    }
    let mut mass: BTreeMap<Vec<u64>, LogWeight> = BTreeMap::new();
    let mut degrees = vec![0u64];
    enumerate(spec, nodes as usize, &mut degrees, 0.0, statistic, &mut mass)?;
    let total = LogWeight::sum(mass.values().copied()).expect("at least one path");
    let mut out = ExactDistribution {
        support: Vec::with_capacity(mass.len()),
        probabilities: Vec::with_capacity(mass.len()),
        log2_probabilities: Vec::with_capacity(mass.len()),
    };
    for (key, w) in mass {
        let lp = w.log2() - total.log2();
        out.support.push(key);
        out.log2_probabilities.push(lp);
        out.probabilities.push(lp.exp2());
    }
    Ok(out)
}

fn enumerate(
    spec: &AttachmentSpec,
    nodes: usize,
    degrees: &mut Vec<u64>,
    log2_prob: f64,
    statistic: Statistic,
    mass: &mut BTreeMap<Vec<u64>, LogWeight>,
) -> Result<()> {
    if degrees.len() == nodes {
        let w = LogWeight::from_log2(log2_prob)?;
        mass.entry(statistic.of(degrees))
            .and_modify(|m| *m = m.add(w))
            .or_insert(w);
        return Ok(());
    }
    let weights = degrees
        .iter()
        .map(|&d| spec.eval(d))
        .collect::<Result<Vec<_>>>()?;
    let total = LogWeight::sum(weights.iter().copied()).expect("non-empty");
    for (parent, w) in weights.iter().enumerate() {
        degrees[parent] += 1;
        degrees.push(0);
        enumerate(
            spec,
            nodes,
            degrees,
            log2_prob + w.log2() - total.log2(),
            statistic,
            mass,
        )?;
        degrees.pop();
        degrees[parent] -= 1;
    }
    Ok(())
}

/// Relative frequencies of `samples`.
pub fn empirical<K: Ord, I: IntoIterator<Item = K>>(samples: I) -> Distribution<K> {
    let mut counts: BTreeMap<K, u64> = BTreeMap::new();
    let mut n = 0u64;
    for s in samples {
        *counts.entry(s).or_default() += 1;
        n += 1;
    }
    counts
        .into_iter()
        .map(|(k, c)| (k, c as f64 / n as f64))
        .collect()
}

fn check_distribution<K>(p: &Distribution<K>) -> Result<()> {
    if p.values().any(|&x| !(x >= 0.0)) {
        return Err(invalid("distribution has negative or NaN mass"));
    }
    let total: f64 = p.values().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(invalid(format!("distribution sums to {total}, not 1")));
    }
    Ok(())
}

/// `(1/2) sum |p_i - q_i|` over the union of the supports.
pub fn tv_distance<K: Ord>(p: &Distribution<K>, q: &Distribution<K>) -> Result<f64> {
    check_distribution(p)?;
    check_distribution(q)?;
    let mut sum = 0.0;
    for (k, &pk) in p {
        sum += (pk - q.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, &qk) in q {
        if !p.contains_key(k) {
            sum += qk;
        }
    }
    Ok((0.5 * sum).min(1.0))
}

/// Output of one replica: whichever observers ran.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSummary {
    pub replica: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader: Option<LeaderSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<TauProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    /// Order-insensitive: values are sorted before any arithmetic.
    pub fn of(values: &[f64]) -> Stats {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let q = |p: f64| -> f64 {
            if n == 0 {
                return f64::NAN;
            }
            let pos = p * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Stats {
            count: n,
            mean: v.iter().sum::<f64>() / n as f64,
            median: q(0.5),
            q10: q(0.1),
            q90: q(0.9),
            min: v.first().copied().unwrap_or(f64::NAN),
            max: v.last().copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonAggregate {
    pub horizon: u64,
    pub changes: Stats,
    pub last_change: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderAggregate {
    pub changes: Stats,
    /// Replicas that never changed leader count as 0.
    pub last_change: Stats,
    pub distinct_leaders: Stats,
    pub by_horizon: Vec<HorizonAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauAggregate {
    pub k: u64,
    pub tau: Stats,
    pub doubling_gap: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub replicas: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leader: Option<LeaderAggregate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Vec<TauAggregate>>,
}

pub fn replica_aggregate(summaries: &[ReplicaSummary]) -> Result<AggregateReport> {
    let first = summaries
        .first()
        .ok_or_else(|| invalid("no replica summaries to aggregate"))?;
    let leader_horizons: Option<Vec<u64>> = first
        .leader
        .as_ref()
        .map(|l| l.by_horizon.iter().map(|h| h.horizon).collect());
    let tau_ks: Option<Vec<u64>> = first
        .tau
        .as_ref()
        .map(|t| t.checkpoints.iter().map(|c| c.0).collect());
    for s in summaries {
        let lh: Option<Vec<u64>> = s
            .leader
            .as_ref()
            .map(|l| l.by_horizon.iter().map(|h| h.horizon).collect());
        let tk: Option<Vec<u64>> = s
            .tau
            .as_ref()
            .map(|t| t.checkpoints.iter().map(|c| c.0).collect());
        if lh != leader_horizons || tk != tau_ks {
            return Err(invalid(format!(
                "replica {} has a different summary schema from replica {}",
                s.replica, first.replica
            )));
        }
    }

    let leader = leader_horizons.map(|horizons| {
        let all: Vec<&LeaderSummary> = summaries
            .iter()
            .map(|s| s.leader.as_ref().expect("checked"))
            .collect();
        let col = |f: &dyn Fn(&LeaderSummary) -> f64| -> Stats {
            Stats::of(&all.iter().map(|l| f(l)).collect::<Vec<_>>())
        };
        LeaderAggregate {
            changes: col(&|l| l.changes as f64),
            last_change: col(&|l| l.last_change.unwrap_or(0) as f64),
            distinct_leaders: col(&|l| l.distinct_leaders as f64),
            by_horizon: horizons
                .iter()
                .enumerate()
                .map(|(i, &h)| HorizonAggregate {
                    horizon: h,
                    changes: col(&|l| l.by_horizon[i].changes as f64),
                    last_change: col(&|l| l.by_horizon[i].last_change.unwrap_or(0) as f64),
                })
                .collect(),
        }
    });

    let tau = tau_ks.map(|ks| {
        ks.iter()
            .enumerate()
            .map(|(i, &k)| {
                let profiles = summaries.iter().map(|s| s.tau.as_ref().expect("checked"));
                let taus: Vec<f64> = profiles.clone().map(|p| p.checkpoints[i].1).collect();
                let gaps: Vec<f64> = profiles.map(|p| p.doubling_gaps[i].1).collect();
                TauAggregate {
                    k,
                    tau: Stats::of(&taus),
                    doubling_gap: Stats::of(&gaps),
                }
            })
            .collect()
    });

    Ok(AggregateReport {
        replicas: summaries.len(),
        leader,
        tau,
    })
}
