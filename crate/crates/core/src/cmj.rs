//! Continuous-time embedding of the attachment chain.
//!
//! Every individual `u` carries exponential clocks: the gap between its
//! `(i-1)`-th and `i`-th child is `Exp(f(i-1))`, so the `i`-th child is born at
//! `B(u) + X(u1) + ... + X(ui)`. Only the next birth of each individual is
//! ever scheduled. The population observed at its jump times
//! `tau_k = inf { t : |T_t| >= k }` has the law of the discrete chain.
//!
//! Indexing: `tau()[k - 1]` holds `tau_k`, so `tau()[0] = tau_1 = 0`.
//!
//! Event times live in linear `f64`. A gap drawn at an astronomically large
//! rate is either flushed to zero or absorbed by the addition, which produces
//! exact ties; ties pop in insertion order. Each birth draws exactly two
//! standard exponentials: first the newborn's first clock, then the parent's
//! next clock.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::attachment::AttachmentSpec;
use crate::discrete::{AttachEvent, AttachObserver};
use crate::error::{invalid, Error, Result};
use crate::numerics::{scale_exponential, RngStream};

#[derive(Debug, Clone, Copy)]
struct Pending {
    time: f64,
    parent: u64,
    seq: u64,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.seq.cmp(&other.seq))
    }
}

/// Population reached `k` at `time` when `parent` gave birth to `child`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirthRecord {
    pub k: u64,
    pub time: f64,
    pub parent: u64,
    pub child: u64,
    pub parent_new_degree: u64,
}

impl BirthRecord {
    /// The same birth as a step of the discrete skeleton.
    pub fn as_attach(&self) -> AttachEvent {
        AttachEvent {
            step: self.k - 1,
            child: self.child,
            parent: self.parent,
            parent_new_degree: self.parent_new_degree,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CmjState {
    outdeg: Vec<u64>,
    birth: Vec<f64>,
    /// Time of each individual's most recent event (its birth or last child).
    last_event: Vec<f64>,
    queue: BinaryHeap<Reverse<Pending>>,
    next_seq: u64,
    tau: Vec<f64>,
    displacements: Option<Vec<Vec<f64>>>,
}

impl CmjState {
    /// The root alone at time 0, with its first clock running.
    pub fn new(spec: &AttachmentSpec, rng: &mut RngStream) -> Result<Self> {
        Self::start(spec, rng, false)
    }

    /// Like [`CmjState::new`], additionally keeping every displacement drawn,
    /// per individual, for replay checks.
    pub fn with_displacement_log(spec: &AttachmentSpec, rng: &mut RngStream) -> Result<Self> {
        Self::start(spec, rng, true)
    }

    fn start(spec: &AttachmentSpec, rng: &mut RngStream, log: bool) -> Result<Self> {
        let mut state = CmjState {
            outdeg: vec![0],
            birth: vec![0.0],
            last_event: vec![0.0],
            queue: BinaryHeap::new(),
            next_seq: 0,
            tau: vec![0.0],
            displacements: log.then(|| vec![Vec::new()]),
        };
        state.schedule(0, spec, rng)?;
        Ok(state)
    }

    pub fn population(&self) -> u64 {
        self.outdeg.len() as u64
    }

    /// `tau_1, tau_2, ...`, one entry per realized population size.
    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn outdeg(&self) -> &[u64] {
        &self.outdeg
    }

    pub fn birth_time(&self, v: u64) -> f64 {
        self.birth[v as usize]
    }

    pub fn displacements(&self, v: u64) -> Option<&[f64]> {
        self.displacements
            .as_ref()
            .map(|d| d[v as usize].as_slice())
    }

    /// Number of scheduled births; one per living individual.
    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Time of the next birth, if any is pending.
    pub fn next_time(&self) -> Option<f64> {
        self.queue.peek().map(|Reverse(p)| p.time)
    }

    /// Draws the gap to `v`'s next child and queues it.
    fn schedule(&mut self, v: u64, spec: &AttachmentSpec, rng: &mut RngStream) -> Result<()> {
        let vi = v as usize;
        let rate = spec.eval(self.outdeg[vi])?;
        let gap = scale_exponential(rng.standard_exponential(), rate);
        if let Some(log) = self.displacements.as_mut() {
            log[vi].push(gap);
        }
        let time = self.last_event[vi] + gap;
        self.queue.push(Reverse(Pending {
            time,
            parent: v,
            seq: self.next_seq,
        }));
        self.next_seq += 1;
        Ok(())
    }

    /// Realizes the earliest pending birth.
    pub fn next_event(&mut self, spec: &AttachmentSpec, rng: &mut RngStream) -> Result<BirthRecord> {
        let Reverse(ev) = self
            .queue
            .pop()
            .ok_or_else(|| Error::Internal("no pending births".into()))?;
        let child = self.outdeg.len() as u64;
        let parent = ev.parent;
        let pi = parent as usize;
        if let Some(&last) = self.tau.last() {
            if ev.time < last {
                return Err(Error::Internal(format!(
                    "birth at {} precedes previous jump at {last}",
                    ev.time
                )));
            }
        }
        self.tau.push(ev.time);
        self.outdeg.push(0);
        self.birth.push(ev.time);
        self.last_event.push(ev.time);
        if let Some(log) = self.displacements.as_mut() {
            log.push(Vec::new());
        }
        self.schedule(child, spec, rng)?;

        self.outdeg[pi] += 1;
        self.last_event[pi] = ev.time;
        self.schedule(parent, spec, rng)?;

        Ok(BirthRecord {
            k: self.outdeg.len() as u64,
            time: ev.time,
            parent,
            child,
            parent_new_degree: self.outdeg[pi],
        })
    }
}

/// Runs until the population reaches `max_population` or the next birth
/// would happen after `max_time`.
pub fn run(
    spec: &AttachmentSpec,
    max_population: u64,
    max_time: Option<f64>,
    rng: &mut RngStream,
    observers: &mut [&mut dyn AttachObserver],
) -> Result<CmjState> {
    if max_population == 0 {
        return Err(invalid("population horizon must be at least 1"));
    }
    let mut state = CmjState::new(spec, rng)?;
    while state.population() < max_population {
        match (state.next_time(), max_time) {
            (Some(t), Some(limit)) if t > limit => break,
            (None, _) => break,
            _ => {}
        }
        let record = state.next_event(spec, rng)?;
        let event = record.as_attach();
        for obs in observers.iter_mut() {
            obs.observe(&event)?;
        }
    }
    Ok(state)
}

/// Pairs `(E_j / f_hi(j-1), E_j / f_lo(j-1))` for `j = 1..=count`, sharing
/// one standard exponential `E_j` per pair.
///
/// Requires `f_hi >= f_lo` on `0..count`; then every pair has
/// `gap_hi <= gap_lo`.
pub fn coupled_birth_gaps(
    hi: &AttachmentSpec,
    lo: &AttachmentSpec,
    count: u64,
    rng: &mut RngStream,
) -> Result<Vec<(f64, f64)>> {
    if let Some(j) = hi.first_domination_failure(lo, count)? {
        return Err(invalid(format!(
            "upper function is below the lower one at index {j}"
        )));
    }
    (0..count)
        .map(|j| {
            let e = rng.standard_exponential();
            Ok((
                scale_exponential(e, hi.eval(j)?),
                scale_exponential(e, lo.eval(j)?),
            ))
        })
        .collect()
}

/// Time one individual needs to have `children` children:
/// `sum_{j < children} Exp(f(j))`.
pub fn lineage_waiting_time(
    spec: &AttachmentSpec,
    children: u64,
    rng: &mut RngStream,
) -> Result<f64> {
    let mut total = 0.0;
    for j in 0..children {
        total += scale_exponential(rng.standard_exponential(), spec.eval(j)?);
    }
    Ok(total)
}
