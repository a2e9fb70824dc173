use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gpalab::AttachmentSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EngineChoice {
    Discrete,
    Cmj,
    Both,
}

impl EngineChoice {
    pub fn engines(self) -> &'static [Engine] {
        match self {
            EngineChoice::Discrete => &[Engine::Discrete],
            EngineChoice::Cmj => &[Engine::Cmj],
            EngineChoice::Both => &[Engine::Discrete, Engine::Cmj],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Discrete,
    Cmj,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Discrete => "discrete",
            Engine::Cmj => "cmj",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observer {
    Leader,
    Tau,
    Degrees,
    /// Every attachment event; intended for short runs.
    Events,
}

fn default_observers() -> Vec<Observer> {
    vec![Observer::Leader]
}

fn default_out() -> PathBuf {
    PathBuf::from("gpalab-out")
}

fn default_tau_stride() -> u64 {
    1
}

/// One experiment. `horizon` counts attachment steps; the continuous-time
/// engine runs to population `horizon + 1` so both engines grow trees of the
/// same size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// `constant[:c]`, `linear_shift`, `power:p`, `counterexample`,
    /// `gi_lower` or `@path/to/table`.
    pub spec: String,
    pub engine: EngineChoice,
    pub horizon: u64,
    pub replicas: u64,
    pub master_seed: u64,
    #[serde(default = "default_observers")]
    pub observers: Vec<Observer>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Population sizes `k` at which `tau_k` and `tau_2k - tau_k` are reported.
    #[serde(default)]
    pub checkpoints: Vec<u64>,
    /// Step horizons at which leader statistics are reported.
    #[serde(default)]
    pub leader_horizons: Vec<u64>,
    /// Stop the continuous-time engine once the next birth is later than this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_time: Option<f64>,
    /// Worker threads; 0 means one per available core.
    #[serde(default)]
    pub threads: usize,
    /// Write every `tau_stride`-th jump time to `tau.csv`.
    #[serde(default = "default_tau_stride")]
    pub tau_stride: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            spec: "linear_shift".into(),
            engine: EngineChoice::Discrete,
            horizon: 1_000,
            replicas: 1,
            master_seed: 0,
            observers: default_observers(),
            out: default_out(),
            checkpoints: Vec::new(),
            leader_horizons: Vec::new(),
            max_time: None,
            threads: 0,
            tau_stride: 1,
        }
    }
}

impl SimConfig {
    pub fn load(path: &Path) -> Result<SimConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn attachment(&self) -> Result<AttachmentSpec> {
        self.spec
            .parse()
            .with_context(|| format!("attachment function `{}`", self.spec))
    }

    pub fn wants(&self, obs: Observer) -> bool {
        self.observers.contains(&obs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicas == 0 {
            bail!("replicas must be at least 1");
        }
        if self.horizon == 0 {
            bail!("horizon must be at least 1");
        }
        if self.tau_stride == 0 {
            bail!("tau_stride must be at least 1");
        }
        if self.wants(Observer::Tau) && self.engine == EngineChoice::Discrete {
            bail!("the tau observer needs engine `cmj` or `both`");
        }
        let population = self.horizon + 1;
        if self.max_time.is_none() {
            for &k in &self.checkpoints {
                if k == 0 || 2 * k > population {
                    bail!("checkpoint {k} needs population {} but the horizon reaches {population}", 2 * k);
                }
            }
        }
        if let Some(h) = self.leader_horizons.iter().find(|&&h| h > self.horizon) {
            bail!("leader horizon {h} exceeds the run horizon {}", self.horizon);
        }
        if let Some(t) = self.max_time {
            if !(t > 0.0) {
                bail!("max_time must be positive");
            }
        }
        self.attachment()?;
        Ok(())
    }
}
