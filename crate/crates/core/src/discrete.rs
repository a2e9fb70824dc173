//! The discrete attachment chain.
//!
//! Nodes are grouped into degree classes. A step picks a class with
//! probability proportional to `count(d) * f(d)` by Gumbel-max, then a node
//! uniformly within the class. Class weights are recomputed from counts on
//! every step, so there is no running total to drift.
//!
//! RNG consumption per step: one Gumbel draw per non-empty class in
//! increasing degree order, then one uniform draw for the node.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::attachment::AttachmentSpec;
use crate::error::{Error, Result};
use crate::numerics::{gumbel_argmax, LogWeight, RngStream};

/// Node `child` arrived at `step` and attached to `parent`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttachEvent {
    pub step: u64,
    pub child: u64,
    pub parent: u64,
    pub parent_new_degree: u64,
}

/// Receives every attachment in step order.
pub trait AttachObserver {
    fn observe(&mut self, event: &AttachEvent) -> Result<()>;
}

#[derive(Debug, Clone)]
pub struct TreeState {
    outdeg: Vec<u64>,
    parent: Vec<u64>,
    /// Position of each node inside its degree class.
    slot: Vec<usize>,
    classes: BTreeMap<u64, Vec<u64>>,
    scratch: Vec<(u64, LogWeight)>,
}

impl Default for TreeState {
    fn default() -> Self {
        Self::new()
    }
}

impl TreeState {
    /// The single-node tree.
    pub fn new() -> Self {
        TreeState {
            outdeg: vec![0],
            parent: vec![0],
            slot: vec![0],
            classes: BTreeMap::from([(0, vec![0])]),
            scratch: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.outdeg.len() as u64 - 1
    }

    pub fn node_count(&self) -> u64 {
        self.outdeg.len() as u64
    }

    pub fn outdeg(&self) -> &[u64] {
        &self.outdeg
    }

    pub fn parent(&self, v: u64) -> Option<u64> {
        (v != 0).then(|| self.parent[v as usize])
    }

    /// `(degree, nodes)` for each non-empty class, ascending by degree.
    pub fn classes(&self) -> impl Iterator<Item = (u64, &[u64])> {
        self.classes.iter().map(|(d, nodes)| (*d, nodes.as_slice()))
    }

    pub fn max_degree(&self) -> u64 {
        self.classes.keys().next_back().copied().unwrap_or(0)
    }

    /// `count(d) * f(d)` for each class, ascending by degree.
    pub fn class_weights(&self, spec: &AttachmentSpec) -> Result<Vec<(u64, LogWeight)>> {
        self.classes
            .iter()
            .map(|(&d, nodes)| class_weight(spec, d, nodes.len()).map(|w| (d, w)))
            .collect()
    }

    /// `sum_v f(outdeg v)`.
    pub fn total_weight(&self, spec: &AttachmentSpec) -> Result<LogWeight> {
        let weights = self.class_weights(spec)?;
        Ok(LogWeight::sum(weights.into_iter().map(|(_, w)| w)).expect("tree is non-empty"))
    }

    /// Attaches node `n + 1`.
    pub fn step(&mut self, spec: &AttachmentSpec, rng: &mut RngStream) -> Result<AttachEvent> {
        self.scratch.clear();
        for (&d, nodes) in &self.classes {
            self.scratch.push((d, class_weight(spec, d, nodes.len())?));
        }
        let pick = gumbel_argmax(self.scratch.iter().map(|&(_, w)| w), rng)
            .ok_or_else(|| Error::Internal("no degree classes".into()))?;
        let degree = self.scratch[pick].0;
        let members = &self.classes[&degree];
        let parent = members[rng.below(members.len() as u64) as usize];

        self.move_up(parent)?;
        let child = self.outdeg.len() as u64;
        self.outdeg.push(0);
        self.parent.push(parent);
        let zero = self.classes.entry(0).or_default();
        self.slot.push(zero.len());
        zero.push(child);

        Ok(AttachEvent {
            step: child,
            child,
            parent,
            parent_new_degree: self.outdeg[parent as usize],
        })
    }

    fn move_up(&mut self, v: u64) -> Result<()> {
        let d = self.outdeg[v as usize];
        let class = self
            .classes
            .get_mut(&d)
            .ok_or_else(|| Error::Internal(format!("missing class {d} for node {v}")))?;
        let at = self.slot[v as usize];
        if class.get(at) != Some(&v) {
            return Err(Error::Internal(format!("node {v} not at its class slot")));
        }
        class.swap_remove(at);
        if let Some(&moved) = class.get(at) {
            self.slot[moved as usize] = at;
        }
        if class.is_empty() {
            self.classes.remove(&d);
        }
        let next = self.classes.entry(d + 1).or_default();
        self.slot[v as usize] = next.len();
        next.push(v);
        self.outdeg[v as usize] = d + 1;
        Ok(())
    }

    /// Verifies the edge count, class membership, and class weights
    /// recomputed from scratch.
    pub fn check_invariants(&self, spec: &AttachmentSpec) -> Result<()> {
        let edges: u64 = self.outdeg.iter().sum();
        if edges != self.step_count() {
            return Err(Error::Internal(format!(
                "{edges} edges after {} steps",
                self.step_count()
            )));
        }
        let mut seen = vec![false; self.outdeg.len()];
        for (&d, nodes) in &self.classes {
            if nodes.is_empty() {
                return Err(Error::Internal(format!("empty class {d} retained")));
            }
            for (i, &v) in nodes.iter().enumerate() {
                let vi = v as usize;
                if seen[vi] || self.outdeg[vi] != d || self.slot[vi] != i {
                    return Err(Error::Internal(format!("node {v} misfiled in class {d}")));
                }
                seen[vi] = true;
            }
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::Internal("node missing from degree classes".into()));
        }
        let mut from_scratch: BTreeMap<u64, u64> = BTreeMap::new();
        for &d in &self.outdeg {
            *from_scratch.entry(d).or_default() += 1;
        }
        for (d, w) in self.class_weights(spec)? {
            let expected = class_weight(spec, d, from_scratch[&d] as usize)?;
            if w != expected {
                return Err(Error::Internal(format!("class {d} weight drifted")));
            }
        }
        Ok(())
    }
}

fn class_weight(spec: &AttachmentSpec, degree: u64, count: usize) -> Result<LogWeight> {
    Ok(LogWeight::from_count(count as u64)?.mul(spec.eval(degree)?))
}

/// Grows a tree for `horizon` steps, feeding every event to `observers`.
pub fn run(
    spec: &AttachmentSpec,
    horizon: u64,
    rng: &mut RngStream,
    observers: &mut [&mut dyn AttachObserver],
) -> Result<TreeState> {
    if horizon == 0 {
        return Err(crate::error::invalid("horizon must be at least 1"));
    }
    let mut state = TreeState::new();
    for _ in 0..horizon {
        let event = state.step(spec, rng)?;
        for obs in observers.iter_mut() {
            obs.observe(&event)?;
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn freq_parent_zero(spec: &AttachmentSpec, trials: u32) -> f64 {
        let mut hits = 0;
        for r in 0..trials {
            let mut rng = RngStream::new(r as u64);
            let mut s = TreeState::new();
            s.step(spec, &mut rng).unwrap();
            if s.step(spec, &mut rng).unwrap().parent == 0 {
                hits += 1;
            }
        }
        hits as f64 / trials as f64
    }

    #[test]
    fn init_state() {
        let s = TreeState::new();
        assert_eq!(s.outdeg(), &[0]);
        assert_eq!(s.step_count(), 0);
        let classes: Vec<_> = s.classes().map(|(d, n)| (d, n.to_vec())).collect();
        assert_eq!(classes, vec![(0, vec![0])]);
        assert_eq!(s.parent(0), None);
        s.check_invariants(&AttachmentSpec::LinearShift).unwrap();
    }

    #[test]
    fn first_step_is_forced() {
        for seed in 0..50 {
            let mut s = TreeState::new();
            let e = s
                .step(&AttachmentSpec::Counterexample, &mut RngStream::new(seed))
                .unwrap();
            assert_eq!(
                e,
                AttachEvent {
                    step: 1,
                    child: 1,
                    parent: 0,
                    parent_new_degree: 1
                }
            );
        }
    }

    #[test]
    fn second_step_probabilities() {
        let n = 100_000;
        let c = freq_parent_zero(&AttachmentSpec::constant(1.0).unwrap(), n);
        assert!((c - 0.5).abs() < 0.01, "{c}");
        let l = freq_parent_zero(&AttachmentSpec::LinearShift, n);
        assert!((l - 2.0 / 3.0).abs() < 0.01, "{l}");
        let ce = freq_parent_zero(&AttachmentSpec::Counterexample, n);
        assert!((ce - 0.8).abs() < 0.01, "{ce}");
    }

    #[test]
    fn rng_consumption_is_classes_plus_one() {
        let spec = AttachmentSpec::LinearShift;
        let mut rng = RngStream::new(9);
        let mut s = TreeState::new();
        for _ in 0..200 {
            let classes = s.classes().count() as u64;
            let before = rng.position();
            s.step(&spec, &mut rng).unwrap();
            assert_eq!(rng.position() - before, classes + 1);
        }
    }

    #[test]
    fn invariants_hold_along_runs() {
        for spec in [
            AttachmentSpec::constant(1.0).unwrap(),
            AttachmentSpec::LinearShift,
            AttachmentSpec::Counterexample,
            AttachmentSpec::power(2.0).unwrap(),
        ] {
            let mut rng = RngStream::new(17);
            let mut s = TreeState::new();
            for _ in 0..2000 {
                s.step(&spec, &mut rng).unwrap();
                s.check_invariants(&spec).unwrap();
            }
        }
    }

    #[test]
    fn run_horizon_one() {
        struct Log(Vec<AttachEvent>);
        impl AttachObserver for Log {
            fn observe(&mut self, e: &AttachEvent) -> Result<()> {
                self.0.push(*e);
                Ok(())
            }
        }
        let mut log = Log(Vec::new());
        let s = run(
            &AttachmentSpec::constant(1.0).unwrap(),
            1,
            &mut RngStream::new(0),
            &mut [&mut log],
        )
        .unwrap();
        assert_eq!(log.0.len(), 1);
        assert_eq!((log.0[0].child, log.0[0].parent), (1, 0));
        assert_eq!(s.node_count(), 2);
        assert!(run(&AttachmentSpec::LinearShift, 0, &mut RngStream::new(0), &mut []).is_err());
    }

    #[test]
    fn long_linear_run_conserves_edges() {
        let s = run(&AttachmentSpec::LinearShift, 100_000, &mut RngStream::new(3), &mut []).unwrap();
        assert_eq!(s.outdeg().iter().sum::<u64>(), 100_000);
        s.check_invariants(&AttachmentSpec::LinearShift).unwrap();
    }

    #[test]
    fn counterexample_run_stays_in_range() {
        let spec = AttachmentSpec::Counterexample;
        let s = run(&spec, 100_000, &mut RngStream::new(5), &mut []).unwrap();
        assert!(s.max_degree() <= spec.max_index().unwrap());
        s.check_invariants(&spec).unwrap();
    }

    #[test]
    fn three_node_shapes_are_equally_likely() {
        let spec = AttachmentSpec::constant(1.0).unwrap();
        let n = 100_000;
        let star = (0..n)
            .filter(|&r| {
                let s = run(&spec, 2, &mut RngStream::for_replica(11, r), &mut []).unwrap();
                s.outdeg()[0] == 2
            })
            .count();
        let p = star as f64 / n as f64;
        assert!((p - 0.5).abs() < 0.01, "{p}");
    }

    #[test]
    fn out_of_range_degree_propagates() {
        let t = crate::attachment::Table::parse("0 1\ntail repeat_last").unwrap();
        let spec = AttachmentSpec::Table(t);
        assert!(run(&spec, 10, &mut RngStream::new(0), &mut []).is_ok());
        // Some node eventually takes a whole third block and runs past the
        // last supported index.
        let mut s = TreeState::new();
        let mut rng = RngStream::new(0);
        let lower = AttachmentSpec::GiLower;
        let mut err = None;
        for _ in 0..2_000_000 {
            if let Err(e) = s.step(&lower, &mut rng) {
                err = Some(e);
                break;
            }
        }
        assert!(matches!(err, Some(Error::OutOfRange { .. })), "{err:?}");
    }
}
