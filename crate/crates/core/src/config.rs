//! Experiment documents: which policies, instance, behavior and seeds to run.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::behavior::BehaviorConfig;
use crate::engine::{ConstantArm, Policy};
use crate::error::{Error, Result};
use crate::graph::presets::PresetParams;
use crate::graph::{
    build_full_disclosure, build_l_level, build_three_level, build_two_level, InfoGraph, LevelSpec,
};
use crate::model::BanditInstance;

/// Rounds per full-disclosure path that guarantee every arm is sampled when
/// all rewards come up zero: `(K - 1) * n_est + 1`.
pub fn fdp_path_len(num_arms: usize, n_est: u64) -> u64 {
    (num_arms as u64 - 1) * n_est + 1
}

/// A disclosure policy, sized for a horizon when built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    FullDisclosure,
    TwoLevel {
        t1: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path_len: Option<u64>,
    },
    ThreeLevel {
        t1: u64,
        t2: u64,
        sigma: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path_len: Option<u64>,
    },
    LLevel {
        sigma: u64,
        group_sizes: Vec<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        gamma_factor: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path_len: Option<u64>,
    },
    Preset(PresetParams),
    Constant {
        arm: ConstantArm,
    },
}

impl PolicySpec {
    pub fn preset(params: PresetParams) -> Self {
        PolicySpec::Preset(params)
    }

    /// Short label used in output rows.
    pub fn label(&self) -> String {
        match self {
            PolicySpec::FullDisclosure => "full_disclosure".into(),
            PolicySpec::TwoLevel { .. } => "two_level".into(),
            PolicySpec::ThreeLevel { .. } => "three_level".into(),
            PolicySpec::LLevel { group_sizes, .. } => format!("l_level_{}", group_sizes.len()),
            PolicySpec::Preset(params) => params.name.clone(),
            PolicySpec::Constant { arm } => match arm {
                ConstantArm::Best => "constant_best".into(),
                ConstantArm::Worst => "constant_worst".into(),
                ConstantArm::Index(a) => format!("constant_{a}"),
            },
        }
    }

    fn path_len(&self) -> Option<u64> {
        match self {
            PolicySpec::TwoLevel { path_len, .. }
            | PolicySpec::ThreeLevel { path_len, .. }
            | PolicySpec::LLevel { path_len, .. } => *path_len,
            PolicySpec::Preset(params) => params.path_len,
            _ => None,
        }
    }

    /// Checks what can be checked without a horizon.
    pub fn validate(&self) -> Result<()> {
        if self.path_len() == Some(0) {
            return Err(Error::config("path_len must be at least 1"));
        }
        if let PolicySpec::Preset(params) = self {
            params.validate()?;
        }
        Ok(())
    }

    /// The info-graph for horizon `t`, or `None` for constant policies.
    /// `default_path_len` applies when the policy leaves the path length open.
    pub fn graph(&self, horizon: u64, default_path_len: u64) -> Result<Option<InfoGraph>> {
        self.validate()?;
        let pl = self.path_len().unwrap_or(default_path_len);
        let g = match self {
            PolicySpec::FullDisclosure => build_full_disclosure(horizon)?,
            PolicySpec::TwoLevel { t1, .. } => build_two_level(horizon, *t1, pl)?,
            PolicySpec::ThreeLevel { t1, t2, sigma, .. } => {
                build_three_level(horizon, *t1, *t2, *sigma, pl)?
            }
            PolicySpec::LLevel {
                sigma,
                group_sizes,
                gamma_factor,
                ..
            } => {
                let spec = LevelSpec {
                    num_levels: group_sizes.len() as u32,
                    sigma: *sigma,
                    group_sizes: group_sizes.clone(),
                    path_len: pl,
                    gamma_factor: *gamma_factor,
                };
                build_l_level(&spec, horizon)?
            }
            PolicySpec::Preset(params) => params.build(horizon, pl)?,
            PolicySpec::Constant { .. } => return Ok(None),
        };
        Ok(Some(g))
    }

    pub fn build(&self, horizon: u64, default_path_len: u64) -> Result<Policy> {
        Ok(match self {
            PolicySpec::Constant { arm } => Policy::Constant(*arm),
            _ => Policy::Graph(
                self.graph(horizon, default_path_len)?
                    .expect("graph policy"),
            ),
        })
    }
}

/// Means given directly or as a symmetric gap around 1/2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub means: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(default = "yes")]
    pub strict_model: bool,
}

fn yes() -> bool {
    true
}

impl InstanceConfig {
    fn validate(&self) -> Result<()> {
        match (&self.means, self.delta) {
            (Some(_), Some(_)) => Err(Error::config(
                "instance: give either `means` or `delta`, not both",
            )),
            (None, None) => Err(Error::config(
                "instance: one of `means` or `delta` is required",
            )),
            _ => Ok(()),
        }
    }

    pub fn num_arms(&self) -> usize {
        self.means.as_ref().map_or(2, Vec::len)
    }

    /// The instance at `horizon`, with `delta` overriding the configured means.
    pub fn build(&self, horizon: u64, delta: Option<f64>) -> Result<BanditInstance> {
        match (delta.or(self.delta), &self.means) {
            (Some(d), _) => BanditInstance::from_gap(d, horizon, self.strict_model),
            (None, Some(m)) => BanditInstance::with_model(m.clone(), horizon, self.strict_model),
            (None, None) => Err(Error::config(
                "instance: one of `means` or `delta` is required",
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedConfig {
    #[serde(default)]
    pub base: u64,
    pub reps: u64,
}

impl SeedConfig {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.reps).map(|i| self.base.wrapping_add(i)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
    Dot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv, OutputFormat::Json]
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_dir(),
            formats: default_formats(),
        }
    }
}

/// A grid to sweep: horizons (regret curves) or gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizons: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
}

fn default_behavior() -> BehaviorConfig {
    BehaviorConfig::empirical()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicySpec>,
    /// Several policies run on the same tapes; the first is the pairing baseline.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub policies: Vec<PolicySpec>,
    pub instance: InstanceConfig,
    #[serde(default = "default_behavior")]
    pub behavior: BehaviorConfig,
    pub seeds: SeedConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub paired_tapes: bool,
}

impl ExperimentConfig {
    /// Parses and validates a JSON document; schema errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Schema {
                path,
                message: format!("{inner}"),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let schema = |path: &str, e: Error| Error::Schema {
            path: path.to_string(),
            message: match e {
                Error::Config(m) => m,
                other => other.to_string(),
            },
        };
        if self.policy.is_some() == !self.policies.is_empty() {
            return Err(schema(
                "policy",
                Error::config("give exactly one of `policy` or `policies`"),
            ));
        }
        for (i, p) in self.policy_list().iter().enumerate() {
            let path = if self.policy.is_some() {
                "policy".to_string()
            } else {
                format!("policies[{i}]")
            };
            p.validate().map_err(|e| schema(&path, e))?;
        }
        self.instance
            .validate()
            .map_err(|e| schema("instance", e))?;
        self.behavior
            .validate()
            .map_err(|e| schema("behavior", e))?;
        if self.seeds.reps == 0 {
            return Err(schema(
                "seeds.reps",
                Error::config("reps must be at least 1"),
            ));
        }
        match &self.sweep {
            Some(s) => {
                match (&s.horizons, &s.deltas) {
                    (Some(h), None) if h.is_empty() => {
                        return Err(schema("sweep.horizons", Error::config("grid is empty")))
                    }
                    (None, Some(d)) if d.is_empty() => {
                        return Err(schema("sweep.deltas", Error::config("grid is empty")))
                    }
                    (Some(_), None) => {}
                    (None, Some(_)) => {
                        if self.instance.horizon.is_none() {
                            return Err(schema(
                                "instance.horizon",
                                Error::config("a gap sweep needs a horizon"),
                            ));
                        }
                    }
                    _ => {
                        return Err(schema(
                            "sweep",
                            Error::config("give exactly one of `horizons` or `deltas`"),
                        ))
                    }
                }
                if let Some(h) = &s.horizons {
                    if h.contains(&0) {
                        return Err(schema(
                            "sweep.horizons",
                            Error::config("horizons must be positive"),
                        ));
                    }
                }
            }
            None => {
                if self.instance.horizon.is_none() {
                    return Err(schema(
                        "instance.horizon",
                        Error::config("missing field `horizon`"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn policy_list(&self) -> Vec<PolicySpec> {
        match &self.policy {
            Some(p) => vec![p.clone()],
            None => self.policies.clone(),
        }
    }

    /// Output label of each policy; repeated labels get a `#n` suffix.
    pub fn labels(&self) -> Vec<String> {
        let mut seen: Vec<String> = Vec::new();
        self.policy_list()
            .iter()
            .map(|p| {
                let base = p.label();
                let n = seen.iter().filter(|s| **s == base).count();
                seen.push(base.clone());
                if n == 0 {
                    base
                } else {
                    format!("{base}#{}", n + 1)
                }
            })
            .collect()
    }

    pub fn path_len(&self) -> u64 {
        fdp_path_len(self.instance.num_arms(), self.behavior.n_est)
    }

    /// SHA-256 of everything that determines results (output locations excluded).
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.outputs = OutputConfig::default();
        let text = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
