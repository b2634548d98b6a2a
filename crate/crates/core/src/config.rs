//! Run configuration: one TOML document with `target`, `process`, `net`,
//! `train`, `metrics` and `baseline` sections, validated across sections.

use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::approximator::{Activation, ControlNetSpec, ScoreNetSpec};
use crate::baselines::{ChainConfig, ChainKind};
use crate::error::{Error, Result};
use crate::ou::OuSchedule;
use crate::targets::{ContinuousTarget, DiscreteKind, DiscreteTarget};
use crate::trainer::{ContinuousProblem, DiscreteProblem, TrainConfig};

const CONTINUOUS_KINDS: &[&str] = &["many_well", "funnel", "gmm", "mos", "dw4", "lj"];
const DISCRETE_KINDS: &[&str] = &["ising", "potts", "max_cut"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DiscreteSpec {
    #[serde(flatten)]
    kind: DiscreteKind,
    beta: f64,
}

/// A continuous or discrete target, selected by its `kind` key.
#[derive(Clone, Debug, PartialEq)]
pub enum TargetConfig {
    Continuous(ContinuousTarget),
    Discrete(DiscreteTarget),
}

impl<'de> Deserialize<'de> for TargetConfig {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let table = toml::Table::deserialize(d)?;
        let kind = table
            .get("kind")
            .and_then(|v| v.as_str())
            .ok_or_else(|| D::Error::custom("target needs a string `kind`"))?
            .to_string();
        if CONTINUOUS_KINDS.contains(&kind.as_str()) {
            let t: ContinuousTarget = table.try_into().map_err(D::Error::custom)?;
            t.validate().map_err(D::Error::custom)?;
            Ok(TargetConfig::Continuous(t))
        } else if DISCRETE_KINDS.contains(&kind.as_str()) {
            let s: DiscreteSpec = table.try_into().map_err(D::Error::custom)?;
            Ok(TargetConfig::Discrete(
                DiscreteTarget::new(s.kind, s.beta).map_err(D::Error::custom)?,
            ))
        } else {
            let all: Vec<&str> = CONTINUOUS_KINDS.iter().chain(DISCRETE_KINDS).copied().collect();
            Err(D::Error::custom(format!(
                "unknown target kind `{kind}`; expected one of {}",
                all.join(", ")
            )))
        }
    }
}

impl Serialize for TargetConfig {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            TargetConfig::Continuous(t) => t.serialize(s),
            TargetConfig::Discrete(t) => DiscreteSpec {
                kind: t.kind.clone(),
                beta: t.beta,
            }
            .serialize(s),
        }
    }
}

impl TargetConfig {
    pub fn dim(&self) -> usize {
        match self {
            TargetConfig::Continuous(t) => t.dim(),
            TargetConfig::Discrete(t) => t.length(),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, TargetConfig::Discrete(_))
    }
}

fn d_true() -> bool {
    true
}

/// Time discretization plus, for continuous targets, the OU reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessConfig {
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_bar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory_gate: Option<f64>,
    /// Keep the Gaussian normalizing constant in the reward (needed for log Z).
    #[serde(default = "d_true")]
    pub include_constants: bool,
}

impl ProcessConfig {
    fn has_ou_fields(&self) -> bool {
        self.sigma_bar.is_some()
            || self.alpha_min.is_some()
            || self.alpha_max.is_some()
            || self.horizon.is_some()
            || self.memory_gate.is_some()
    }

    pub fn ou(&self) -> Result<OuSchedule> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::Config(format!("process.{name} is required for continuous targets")))
        };
        let s = OuSchedule {
            sigma_bar: need(self.sigma_bar, "sigma_bar")?,
            alpha_min: need(self.alpha_min, "alpha_min")?,
            alpha_max: need(self.alpha_max, "alpha_max")?,
            horizon: self.horizon.unwrap_or(1.0),
            steps: self.steps,
            memory_gate: self.memory_gate.unwrap_or(0.1),
        };
        s.validate()?;
        Ok(s)
    }
}

fn d_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn d_time_features() -> usize {
    8
}
fn d_one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    #[serde(default = "d_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "d_time_features")]
    pub time_features: usize,
    #[serde(default = "d_one")]
    pub input_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            hidden: d_hidden(),
            activation: Activation::default(),
            time_features: d_time_features(),
            input_scale: 1.0,
        }
    }
}

fn d_samples() -> usize {
    2000
}

/// Metrics computed on the final samples of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default)]
    pub names: Vec<String>,
    /// Size of the exact reference sample for continuous mixture targets.
    #[serde(default = "d_samples")]
    pub reference_samples: usize,
    /// Ball radius for mode histograms; defaults to half the closest centre distance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode_radius: Option<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            reference_samples: d_samples(),
            mode_radius: None,
        }
    }
}

fn d_kind() -> ChainKind {
    ChainKind::Sw
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    #[serde(default = "d_kind")]
    pub method: ChainKind,
    #[serde(flatten)]
    pub chain: ChainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub target: TargetConfig,
    pub process: ProcessConfig,
    #[serde(default)]
    pub net: NetConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<BaselineConfig>,
}

/// A configured problem of either family.
pub enum Problem {
    Continuous(ContinuousProblem),
    Discrete(DiscreteProblem),
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        match &self.target {
            TargetConfig::Continuous(_) => {
                self.process.ou()?;
            }
            TargetConfig::Discrete(t) => {
                if self.process.has_ou_fields() {
                    return Err(Error::Config(
                        "process: OU parameters apply only to continuous targets".into(),
                    ));
                }
                if self.process.steps == 0 {
                    return Err(Error::Config("process.steps must be positive".into()));
                }
                if self.train.warm_start_steps.is_some() && self.train.warm_start {
                    log::warn!("warm start is not available for discrete targets and will be skipped");
                }
                let _ = t;
            }
        }
        if self.net.hidden.is_empty() || self.net.hidden.contains(&0) {
            return Err(Error::Config("net.hidden needs at least one positive width".into()));
        }
        if !(self.net.input_scale > 0.0) || self.net.time_features == 0 {
            return Err(Error::Config(
                "net.input_scale and net.time_features must be positive".into(),
            ));
        }
        if let Some(b) = &self.baseline {
            b.chain.validate()?;
        }
        self.problem()?;
        Ok(())
    }

    pub fn problem(&self) -> Result<Problem> {
        match &self.target {
            TargetConfig::Continuous(t) => {
                let sched = self.process.ou()?;
                let net = ControlNetSpec {
                    dim: t.dim(),
                    hidden: self.net.hidden.clone(),
                    activation: self.net.activation,
                    time_features: self.net.time_features,
                    horizon: sched.horizon,
                    input_scale: self.net.input_scale,
                };
                Ok(Problem::Continuous(ContinuousProblem {
                    target: t.clone(),
                    sched,
                    net,
                    include_constants: self.process.include_constants,
                }))
            }
            TargetConfig::Discrete(t) => {
                let mut net = ScoreNetSpec::new(t.length(), t.alphabet(), self.net.hidden.clone());
                net.activation = self.net.activation;
                let p = DiscreteProblem {
                    target: t.clone(),
                    net,
                    steps: self.process.steps,
                    lambda_min: self.train.lambda_min,
                    replicates: self.train.replicates,
                };
                p.validate()?;
                Ok(Problem::Discrete(p))
            }
        }
    }

    /// Canonical TOML of every section except the seed.
    pub fn canonical(&self) -> Result<String> {
        let mut c = self.clone();
        c.seed = 0;
        toml::to_string(&c).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Hex SHA-256 of [`canonical`](Self::canonical).
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.canonical()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GAUSS: &str = r#"
seed = 3
[target]
kind = "gmm"
centers = [[2.0]]
std = 0.5
beta = 1.0
[process]
steps = 100
sigma_bar = 2.0
alpha_min = 0.5
alpha_max = 12.0
[train]
inner_steps = 10
batch_size = 32
buffer_size = 128
schedule = { mode = "linear", stages = 3 }
"#;

    const ISING: &str = r#"
[target]
kind = "ising"
side = 3
coupling = 1.0
beta = 0.3
[process]
steps = 9
[net]
hidden = [16]
[train]
inner_steps = 10
batch_size = 32
buffer_size = 128
schedule = { mode = "adaptive", eps = 0.1, stages = 2 }
[baseline]
method = "mh"
samples = 100
"#;

    #[test]
    fn parses_both_families() {
        let c = RunConfig::from_toml(GAUSS).unwrap();
        assert_eq!(c.seed, 3);
        assert!(matches!(c.problem().unwrap(), Problem::Continuous(_)));
        let c = RunConfig::from_toml(ISING).unwrap();
        assert!(c.target.is_discrete());
        assert_eq!(c.baseline.as_ref().unwrap().method, ChainKind::Mh);
        assert_eq!(c.baseline.as_ref().unwrap().chain.burn_in, 10_000);
    }

    #[test]
    fn canonical_form_round_trips_and_ignores_seed() {
        let c = RunConfig::from_toml(GAUSS).unwrap();
        let again = RunConfig::from_toml(&c.canonical().unwrap()).unwrap();
        assert_eq!(again.canonical().unwrap(), c.canonical().unwrap());
        let mut other = c.clone();
        other.seed = 99;
        assert_eq!(other.hash().unwrap(), c.hash().unwrap());
        other.train.inner_steps += 1;
        assert_ne!(other.hash().unwrap(), c.hash().unwrap());
        assert_eq!(c.hash().unwrap().len(), 64);
    }

    #[test]
    fn rejects_invalid_configs() {
        for (from, to) in [
            ("beta = 1.0", "beta = -1.0"),
            ("kind = \"gmm\"", "kind = \"blob\""),
            ("alpha_max = 12.0", "alpha_max = 1.0"),
            ("batch_size = 32", "batch_size = 1000"),
            ("steps = 100", "steps = 100\nbogus = 1"),
        ] {
            let text = GAUSS.replace(from, to);
            assert!(matches!(RunConfig::from_toml(&text), Err(Error::Config(_))), "{to}");
        }
        let text = ISING.replace("steps = 9", "steps = 9\nsigma_bar = 1.0");
        assert!(RunConfig::from_toml(&text).is_err());
    }

    #[test]
    fn error_mentions_location() {
        let text = GAUSS.replace("steps = 100", "steps = \"many\"");
        let Err(Error::Config(msg)) = RunConfig::from_toml(&text) else {
            panic!()
        };
        assert!(msg.contains("line"), "{msg}");
    }
}
