use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Model file, relative to the config file.
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub threads: usize,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_cap")]
    pub cap_states: usize,
    #[serde(default)]
    pub trace: bool,
    #[serde(default)]
    pub dump_particles: bool,
    pub data: Option<DataConfig>,
    pub cover: Option<CoverConfig>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub rates: Option<RatesConfig>,
    #[serde(default)]
    pub invariance: InvarianceConfig,
    pub stability: Option<StabilityConfig>,
    #[serde(default)]
    pub contraction: ContractionConfig,
}

/// Simulated observations, used when the model file carries none.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub length: Option<usize>,
    pub seed: Option<u64>,
}

/// A common cover `(T, L, p)` or explicit 1-based inclusive blocks.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverConfig {
    #[serde(rename = "T")]
    pub t: Option<usize>,
    #[serde(rename = "L")]
    pub l: Option<usize>,
    pub p: Option<usize>,
    pub blocks: Option<Vec<[usize; 2]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Ideal,
    Pg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProposalName {
    Bootstrap,
    Uniform,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default = "default_schedule")]
    pub schedule: String,
    #[serde(default = "default_kernel")]
    pub kernel: KernelKind,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_proposal")]
    pub proposal: ProposalName,
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "one")]
    pub replications: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            schedule: default_schedule(),
            kernel: default_kernel(),
            particles: default_particles(),
            proposal: default_proposal(),
            sweeps: default_sweeps(),
            burn_in: 0,
            replications: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(usize),
    Many(Vec<usize>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<usize> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

/// Rate reports over a grid. Missing `L`, `p` and `N` fall back to the cover and sampler.
/// `alpha` and `c` override the values derived from the model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesConfig {
    #[serde(default = "one_u32")]
    pub h: u32,
    pub alpha: Option<f64>,
    pub c: Option<f64>,
    #[serde(rename = "L")]
    pub l: Option<OneOrMany>,
    pub p: Option<OneOrMany>,
    #[serde(rename = "N")]
    pub n: Option<OneOrMany>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InvarianceMode {
    Auto,
    Exact,
    Statistical,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvarianceConfig {
    #[serde(default = "default_mode")]
    pub mode: InvarianceMode,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_level")]
    pub level: f64,
}

impl Default for InvarianceConfig {
    fn default() -> Self {
        InvarianceConfig {
            mode: default_mode(),
            chains: default_chains(),
            level: default_level(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    #[serde(rename = "T")]
    pub lengths: Vec<usize>,
    #[serde(rename = "L")]
    pub l: usize,
    pub p: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default = "default_sweeps")]
    pub sweeps: usize,
    #[serde(default)]
    pub burn_in: usize,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_schedule")]
    pub schedule: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionConfig {
    #[serde(default = "default_max_k")]
    pub max_k: usize,
    #[serde(default = "one_u32")]
    pub h: u32,
    #[serde(default = "default_schedules")]
    pub schedules: Vec<String>,
}

impl Default for ContractionConfig {
    fn default() -> Self {
        ContractionConfig {
            max_k: default_max_k(),
            h: 1,
            schedules: default_schedules(),
        }
    }
}

fn one() -> usize {
    1
}
fn one_u32() -> u32 {
    1
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_cap() -> usize {
    blockpg::exact::DEFAULT_STATE_CAP
}
fn default_schedule() -> String {
    "lr".into()
}
fn default_kernel() -> KernelKind {
    KernelKind::Pg
}
fn default_particles() -> usize {
    10
}
fn default_proposal() -> ProposalName {
    ProposalName::Bootstrap
}
fn default_sweeps() -> usize {
    1000
}
fn default_replications() -> usize {
    20
}
fn default_mode() -> InvarianceMode {
    InvarianceMode::Auto
}
fn default_chains() -> usize {
    100_000
}
fn default_level() -> f64 {
    1e-3
}
fn default_max_k() -> usize {
    10
}
fn default_schedules() -> Vec<String> {
    vec!["lr".into(), "par".into()]
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// Rewrites relative paths against the directory holding the config file.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(m) = &self.model {
            if m.is_relative() {
                self.model = Some(base.join(m));
            }
        }
        if self.out.is_relative() {
            self.out = base.join(&self.out);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }
}
