use gpalab::analysis::{
    empirical, exact_small_tree_distribution, replica_aggregate, tau_profile, tv_distance,
    LeaderTimeline, ReplicaSummary, Statistic,
};
use gpalab::{cmj, discrete, AttachmentSpec, RngStream};

const REPLICAS: u64 = 100_000;

fn discrete_law(spec: &AttachmentSpec, nodes: u64, stat: Statistic, master: u64) -> gpalab::analysis::Distribution<Vec<u64>> {
    empirical((0..REPLICAS).map(|r| {
        let s = discrete::run(spec, nodes - 1, &mut RngStream::for_replica(master, r), &mut []).unwrap();
        stat.of(s.outdeg())
    }))
}

fn cmj_law(spec: &AttachmentSpec, nodes: u64, stat: Statistic, master: u64) -> gpalab::analysis::Distribution<Vec<u64>> {
    empirical((0..REPLICAS).map(|r| {
        let s = cmj::run(spec, nodes, None, &mut RngStream::for_replica(master, r), &mut []).unwrap();
        stat.of(s.outdeg())
    }))
}

#[test]
fn discrete_matches_oracle_up_to_six_nodes() {
    for spec in [AttachmentSpec::constant(1.0).unwrap(), AttachmentSpec::LinearShift] {
        for n in [3, 5, 6] {
            let exact = exact_small_tree_distribution(&spec, n, Statistic::RootDegree)
                .unwrap()
                .to_map();
            let emp = discrete_law(&spec, n, Statistic::RootDegree, 10 + n);
            let tv = tv_distance(&emp, &exact).unwrap();
            assert!(tv < 0.02, "{spec} n={n}: TV {tv}");
        }
    }
}

#[test]
fn engines_agree_on_root_degree_up_to_six_nodes() {
    for spec in [
        AttachmentSpec::constant(1.0).unwrap(),
        AttachmentSpec::LinearShift,
        AttachmentSpec::Counterexample,
    ] {
        for n in [5, 6] {
            let exact = exact_small_tree_distribution(&spec, n, Statistic::RootDegree)
                .unwrap()
                .to_map();
            let d = discrete_law(&spec, n, Statistic::RootDegree, 20 + n);
            let c = cmj_law(&spec, n, Statistic::RootDegree, 30 + n);
            let dc = tv_distance(&d, &c).unwrap();
            let ce = tv_distance(&c, &exact).unwrap();
            assert!(dc < 0.03, "{spec} n={n}: TV(discrete, cmj) {dc}");
            assert!(ce < 0.02, "{spec} n={n}: TV(cmj, exact) {ce}");
        }
    }
}

#[test]
fn engines_agree_on_degree_multiset() {
    let spec = AttachmentSpec::Counterexample;
    let exact = exact_small_tree_distribution(&spec, 5, Statistic::DegreeMultiset)
        .unwrap()
        .to_map();
    let d = discrete_law(&spec, 5, Statistic::DegreeMultiset, 41);
    let c = cmj_law(&spec, 5, Statistic::DegreeMultiset, 42);
    assert!(tv_distance(&d, &exact).unwrap() < 0.02);
    assert!(tv_distance(&c, &exact).unwrap() < 0.02);
}

/// Under f(j) = j + 1 the total rate at population n is sum (deg + 1) =
/// (n - 1) + n, so the n-th inter-jump gap has mean 1 / (2n - 1).
#[test]
fn linear_shift_jump_gaps() {
    let n = 100_000;
    let mut sums = [0.0f64; 3];
    for r in 0..n {
        let s = cmj::run(&AttachmentSpec::LinearShift, 4, None, &mut RngStream::for_replica(50, r), &mut [])
            .unwrap();
        for (i, w) in s.tau().windows(2).enumerate() {
            sums[i] += w[1] - w[0];
        }
    }
    for (i, expected) in [1.0, 1.0 / 3.0, 1.0 / 5.0].into_iter().enumerate() {
        let mean = sums[i] / n as f64;
        assert!((mean - expected).abs() < 0.02 * expected, "gap {i}: {mean}");
    }
}

#[test]
fn linear_shift_tau_growth() {
    let k = 10_000u64;
    let oracle: f64 = (1..k).map(|n| 1.0 / (2 * n - 1) as f64).sum();
    let mean = (0..100)
        .map(|r| {
            let s = cmj::run(&AttachmentSpec::LinearShift, k, None, &mut RngStream::for_replica(51, r), &mut [])
                .unwrap();
            s.tau()[(k - 1) as usize]
        })
        .sum::<f64>()
        / 100.0;
    assert!((mean - oracle).abs() < 0.05 * oracle, "{mean} vs {oracle}");
}

/// Constant rates: total rate equals the population, so tau_2k - tau_k
/// tends to ln 2.
#[test]
fn constant_doubling_gap() {
    let gaps: Vec<f64> = (0..50)
        .map(|r| {
            let s = cmj::run(
                &AttachmentSpec::constant(1.0).unwrap(),
                20_000,
                None,
                &mut RngStream::for_replica(52, r),
                &mut [],
            )
            .unwrap();
            tau_profile(s.tau(), &[10_000]).unwrap().doubling_gaps[0].1
        })
        .collect();
    let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
    assert!((mean - std::f64::consts::LN_2).abs() < 0.03, "{mean}");
}

#[test]
fn cmj_skeleton_feeds_leader_timeline() {
    let mut timeline = LeaderTimeline::new();
    let s = cmj::run(
        &AttachmentSpec::Counterexample,
        5_000,
        None,
        &mut RngStream::new(53),
        &mut [&mut timeline],
    )
    .unwrap();
    assert_eq!(timeline.step(), s.population() - 1);
    assert_eq!(timeline.current().max_degree, *s.outdeg().iter().max().unwrap());
}

#[test]
fn counterexample_leader_changes_grow_with_horizon() {
    let horizons = [1_000u64, 10_000];
    let summaries: Vec<ReplicaSummary> = (0..30)
        .map(|r| {
            let mut timeline = LeaderTimeline::new();
            discrete::run(
                &AttachmentSpec::Counterexample,
                10_000,
                &mut RngStream::for_replica(54, r),
                &mut [&mut timeline],
            )
            .unwrap();
            ReplicaSummary {
                replica: r,
                leader: Some(timeline.summary(&horizons)),
                tau: None,
            }
        })
        .collect();
    let agg = replica_aggregate(&summaries).unwrap().leader.unwrap();
    assert!(agg.by_horizon[0].changes.median <= agg.by_horizon[1].changes.median);
    assert_eq!(agg.changes.count, 30);
}
