use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{anyhow, Context};
use gpalab::analysis::{
    empirical, exact_small_tree_distribution, explosive_signature, tau_profile, tv_distance,
    Distribution, Stats, Statistic, MAX_ORACLE_NODES,
};
use gpalab::attachment::{
    counterexample_s2_limit, harmonic_number, partial_inverse_sums, BlockEntry,
};
use gpalab::{cmj, discrete, AttachmentSpec, BlockLayout, RngStream};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{EngineChoice, SimConfig};
use crate::simulate::{self, SCHEMA_VERSION};

/// A command failure carrying its process exit code.
#[derive(Debug)]
pub struct Exit {
    pub code: u8,
    pub error: anyhow::Error,
}

impl From<anyhow::Error> for Exit {
    fn from(error: anyhow::Error) -> Self {
        Exit { code: 1, error }
    }
}

impl From<std::io::Error> for Exit {
    fn from(error: std::io::Error) -> Self {
        Exit { code: 1, error: error.into() }
    }
}

pub fn usage(error: impl Into<anyhow::Error>) -> Exit {
    Exit { code: 2, error: error.into() }
}

pub type CmdResult = Result<u8, Exit>;

/// Flags shared by every subcommand. Each overrides the matching field of
/// the `--config` file, or of the subcommand's defaults when none is given.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Common {
    /// TOML experiment file.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "N")]
    pub replicas: Option<u64>,
    /// Attachment steps.
    #[arg(long, value_name = "N")]
    pub horizon: Option<u64>,
    #[arg(long, value_enum)]
    pub engine: Option<EngineChoice>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Built-in name (`constant[:c]`, `linear_shift`, `power:p`,
    /// `counterexample`, `gi_lower`) or `@tablefile`.
    #[arg(long, value_name = "NAME|@tablefile")]
    pub spec: Option<String>,
}

impl Common {
    pub fn resolve(&self, defaults: SimConfig) -> Result<SimConfig, Exit> {
        let mut cfg = match &self.config {
            Some(path) => SimConfig::load(path).map_err(usage)?,
            None => defaults,
        };
        if let Some(v) = self.seed {
            cfg.master_seed = v;
        }
        if let Some(v) = self.replicas {
            cfg.replicas = v;
        }
        if let Some(v) = self.horizon {
            cfg.horizon = v;
        }
        if let Some(v) = self.engine {
            cfg.engine = v;
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = &self.spec {
            cfg.spec = v.clone();
        }
        Ok(cfg)
    }
}

fn print_json(value: &serde_json::Value) -> Result<(), Exit> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(anyhow::Error::from)?;
    writeln!(out)?;
    Ok(())
}

fn write_json(cfg: &SimConfig, name: &str, value: &serde_json::Value) -> Result<(), Exit> {
    std::fs::create_dir_all(&cfg.out)
        .with_context(|| format!("creating {}", cfg.out.display()))?;
    let text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
    std::fs::write(cfg.out.join(name), text + "\n")?;
    Ok(())
}

pub fn simulate(common: &Common) -> CmdResult {
    let started = Instant::now();
    let cfg = common.resolve(SimConfig::default())?;
    cfg.validate().map_err(usage)?;
    let spec = cfg.attachment().map_err(usage)?;
    let outputs = simulate::run_all(&cfg, &spec)?;
    let result = simulate::write_outputs(&cfg, &outputs, started)?;
    for f in &result.failed_replicas {
        eprintln!("replica {} ({}) failed: {}", f.replica, f.engine.name(), f.error);
    }
    eprintln!(
        "wrote {} replica run(s) to {}",
        outputs.len(),
        cfg.out.display()
    );
    Ok(if result.failed_replicas.is_empty() { 0 } else { 3 })
}

/// Number of slow entries at indices `<= last`.
fn slow_entries_through(last: u64) -> u32 {
    (1..=BlockLayout::MAX_EXACT_BLOCK)
        .take_while(|&k| BlockLayout::slow_position(k) <= last as u128)
        .count() as u32
}

pub fn check_conditions(common: &Common, last: u64) -> CmdResult {
    let cfg = common.resolve(SimConfig::default())?;
    let spec = cfg.attachment().map_err(usage)?;
    let (s1, s2) = partial_inverse_sums(&spec, last).map_err(|e| usage(anyhow!(e)))?;
    let mut report = json!({
        "schema_version": SCHEMA_VERSION,
        "spec": spec.to_string(),
        "last_index": last,
        "s1": s1,
        "s2": s2,
    });
    if matches!(spec, AttachmentSpec::Counterexample | AttachmentSpec::GiLower) {
        let k = slow_entries_through(last);
        report["slow_entries"] = json!(k);
        if matches!(spec, AttachmentSpec::Counterexample) {
            let bound = harmonic_number(k);
            report["harmonic_lower_bound"] = json!(bound);
            report["harmonic_bound_holds"] = json!(s1 >= bound);
            report["s2_limit"] = json!(counterexample_s2_limit());
        }
        report["last_entry"] = json!(match BlockLayout::locate(last).map_err(|e| usage(anyhow!(e)))? {
            BlockEntry::Slow(k) => format!("slow {k}"),
            BlockEntry::Alpha(k) => format!("block {k}"),
        });
    }
    if let Some(text) = spec.classification() {
        report["classification"] = json!({ "source": "documentation", "text": text });
    }
    print_json(&report)?;
    Ok(0)
}

pub struct EquivalenceArgs {
    pub nodes: u64,
    pub oracle_threshold: f64,
    pub engine_threshold: f64,
}

fn root_degree_law<F>(replicas: u64, run: F) -> Result<Distribution<Vec<u64>>, Exit>
where
    F: Fn(u64) -> gpalab::Result<Vec<u64>> + Sync,
{
    let samples = (0..replicas)
        .into_par_iter()
        .map(|r| run(r).map(|outdeg| Statistic::RootDegree.of(&outdeg)))
        .collect::<gpalab::Result<Vec<_>>>()
        .map_err(|e| Exit { code: 3, error: e.into() })?;
    Ok(empirical(samples))
}

fn law_json(d: &Distribution<Vec<u64>>) -> serde_json::Value {
    json!(d.iter().map(|(k, p)| json!({ "root_degree": k[0], "p": p })).collect::<Vec<_>>())
}

pub fn equivalence(common: &Common, args: &EquivalenceArgs) -> CmdResult {
    let cfg = common.resolve(SimConfig {
        replicas: 100_000,
        ..SimConfig::default()
    })?;
    if args.nodes > MAX_ORACLE_NODES || args.nodes < 2 {
        return Err(usage(anyhow!(
            "equivalence needs 2..={MAX_ORACLE_NODES} nodes (the exact oracle enumerates (n-1)! trees), got {}",
            args.nodes
        )));
    }
    if cfg.replicas == 0 {
        return Err(usage(anyhow!("replicas must be at least 1")));
    }
    let spec = cfg.attachment().map_err(usage)?;
    let pool = pool(&cfg)?;
    let (exact, d, c) = pool.install(|| -> Result<_, Exit> {
        let exact = exact_small_tree_distribution(&spec, args.nodes, Statistic::RootDegree)
            .map_err(|e| usage(anyhow!(e)))?
            .to_map();
        let d = root_degree_law(cfg.replicas, |r| {
            let mut rng = RngStream::for_replica(cfg.master_seed, 2 * r);
            Ok(discrete::run(&spec, args.nodes - 1, &mut rng, &mut [])?.outdeg().to_vec())
        })?;
        let c = root_degree_law(cfg.replicas, |r| {
            let mut rng = RngStream::for_replica(cfg.master_seed, 2 * r + 1);
            Ok(cmj::run(&spec, args.nodes, None, &mut rng, &mut [])?.outdeg().to_vec())
        })?;
        Ok((exact, d, c))
    })?;
    let tv = |p: &Distribution<Vec<u64>>, q: &Distribution<Vec<u64>>| -> Result<f64, Exit> {
        Ok(tv_distance(p, q).map_err(anyhow::Error::from)?)
    };
    let de = tv(&d, &exact)?;
    let ce = tv(&c, &exact)?;
    let dc = tv(&d, &c)?;
    let pass = de < args.oracle_threshold && ce < args.oracle_threshold && dc < args.engine_threshold;
    print_json(&json!({
        "schema_version": SCHEMA_VERSION,
        "spec": spec.to_string(),
        "nodes": args.nodes,
        "replicas": cfg.replicas,
        "master_seed": cfg.master_seed,
        "statistic": "root_degree",
        "tv": { "discrete_exact": de, "cmj_exact": ce, "discrete_cmj": dc },
        "thresholds": { "oracle": args.oracle_threshold, "engines": args.engine_threshold },
        "pass": pass,
        "exact": law_json(&exact),
        "discrete": law_json(&d),
        "cmj": law_json(&c),
    }))?;
    Ok(if pass { 0 } else { 1 })
}

fn pool(cfg: &SimConfig) -> Result<rayon::ThreadPool, Exit> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(simulate::thread_count(cfg))
        .build()
        .context("building thread pool")?)
}

pub struct ProbeArgs {
    pub checkpoints: Vec<u64>,
    pub factor: f64,
}

pub fn explosion_probe(common: &Common, args: &ProbeArgs) -> CmdResult {
    let cfg = common.resolve(SimConfig {
        replicas: 100,
        ..SimConfig::default()
    })?;
    let mut ks = args.checkpoints.clone();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] == 0 {
        return Err(usage(anyhow!("checkpoints must be positive")));
    }
    if !(args.factor >= 1.0) {
        return Err(usage(anyhow!("factor must be at least 1")));
    }
    if cfg.replicas == 0 {
        return Err(usage(anyhow!("replicas must be at least 1")));
    }
    let spec = cfg.attachment().map_err(usage)?;
    let population = 2 * ks[ks.len() - 1];
    let runs: Vec<gpalab::Result<_>> = pool(&cfg)?.install(|| {
        (0..cfg.replicas)
            .into_par_iter()
            .map(|r| {
                let mut rng = RngStream::for_replica(cfg.master_seed, 2 * r + 1);
                let s = cmj::run(&spec, population, None, &mut rng, &mut [])?;
                tau_profile(s.tau(), &ks)
            })
            .collect()
    });
    let mut failed = Vec::new();
    let mut profiles = Vec::new();
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(p) => profiles.push(p),
            Err(e) => failed.push(json!({ "replica": r, "error": e.to_string() })),
        }
    }
    let rows: Vec<_> = ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let tau = Stats::of(&profiles.iter().map(|p| p.checkpoints[i].1).collect::<Vec<_>>());
            let gap = Stats::of(&profiles.iter().map(|p| p.doubling_gaps[i].1).collect::<Vec<_>>());
            (k, tau, gap)
        })
        .collect();
    let medians: Vec<f64> = rows.iter().map(|r| r.2.median).collect();
    let explosive = !profiles.is_empty() && explosive_signature(&medians, args.factor);
    let report = json!({
        "schema_version": SCHEMA_VERSION,
        "spec": spec.to_string(),
        "replicas": cfg.replicas,
        "master_seed": cfg.master_seed,
        "factor": args.factor,
        "checkpoints": rows.iter().map(|(k, tau, gap)| json!({
            "k": k, "tau": tau, "doubling_gap": gap,
        })).collect::<Vec<_>>(),
        "median_doubling_gaps": medians,
        "explosive_signature": explosive,
        "failed_replicas": failed,
    });
    if common.out.is_some() || common.config.is_some() {
        write_json(&cfg, "explosion_probe.json", &report)?;
        let mut csv = String::from("k,median_tau,median_doubling_gap\n");
        for (k, tau, gap) in &rows {
            csv.push_str(&format!("{k},{},{}\n", tau.median, gap.median));
        }
        std::fs::write(cfg.out.join("tau_profile.csv"), csv)?;
    }
    print_json(&report)?;
    Ok(if failed.is_empty() { 0 } else { 3 })
}

/// Collapses sorted indices into inclusive `[start, end]` runs.
fn ranges(indices: &[u64]) -> Vec<[u64; 2]> {
    let mut out: Vec<[u64; 2]> = Vec::new();
    for &i in indices {
        match out.last_mut() {
            Some(r) if r[1] + 1 == i => r[1] = i,
            _ => out.push([i, i]),
        }
    }
    out
}

pub fn coupling_check(common: &Common, lower: &str, count: u64) -> CmdResult {
    let cfg = common.resolve(SimConfig::default())?;
    let hi = cfg.attachment().map_err(usage)?;
    let lo: AttachmentSpec = lower
        .parse()
        .map_err(|e| usage(anyhow!("lower attachment function `{lower}`: {e}")))?;
    if let Some(j) = hi
        .first_domination_failure(&lo, count)
        .map_err(|e| usage(anyhow!(e)))?
    {
        return Err(usage(anyhow!(
            "refused: `{hi}` does not dominate `{lo}`; domination fails at index {j} ({} < {})",
            hi.eval(j).map_err(anyhow::Error::from)?,
            lo.eval(j).map_err(anyhow::Error::from)?,
        )));
    }
    let mut rng = RngStream::new(cfg.master_seed);
    let gaps = cmj::coupled_birth_gaps(&hi, &lo, count, &mut rng).map_err(|e| usage(anyhow!(e)))?;
    let violations: Vec<u64> = (0..count).filter(|&j| gaps[j as usize].0 > gaps[j as usize].1).collect();
    let equal: Vec<u64> = (0..count).filter(|&j| gaps[j as usize].0 == gaps[j as usize].1).collect();
    print_json(&json!({
        "schema_version": SCHEMA_VERSION,
        "upper": hi.to_string(),
        "lower": lo.to_string(),
        "count": count,
        "master_seed": cfg.master_seed,
        "violations": violations.len(),
        "violation_indices": violations,
        "equalities": equal.len(),
        "equality_ranges": ranges(&equal),
    }))?;
    Ok(if violations.is_empty() { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_ranges() {
        assert_eq!(ranges(&[]), Vec::<[u64; 2]>::new());
        assert_eq!(ranges(&[0, 2, 3, 4, 9]), vec![[0, 0], [2, 4], [9, 9]]);
    }

    #[test]
    fn slow_entry_counts() {
        assert_eq!(slow_entries_through(0), 1);
        assert_eq!(slow_entries_through(4), 1);
        assert_eq!(slow_entries_through(5), 2);
        assert_eq!(slow_entries_through(262), 3);
    }
}
