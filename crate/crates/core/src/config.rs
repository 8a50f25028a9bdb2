//! Experiment files: a TOML description of the network, the regions to sweep
//! and the simulation settings.

use crate::model::{LinkMatrix, ModelError, Policy, Scheme, SecondaryLink, SystemConfig};
use crate::optimizer::SearchSettings;
use crate::simulator::VerdictThresholds;
use serde::Deserialize;
use std::path::Path;
use toml::Spanned;

pub const FIG2: &str = include_str!("../configs/fig2.toml");
pub const FIG3: &str = include_str!("../configs/fig3.toml");
pub const FIG4: &str = include_str!("../configs/fig4.toml");

/// Bundled experiment by name.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "fig2" => Some(FIG2),
        "fig3" => Some(FIG3),
        "fig4" => Some(FIG4),
        _ => None,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Syntax(#[from] toml::de::Error),
    #[error("line {line}: {field}: {reason}")]
    Field {
        line: usize,
        field: String,
        reason: String,
    },
    #[error("{0}")]
    Invalid(String),
}

/// A region to sweep: the union of the listed schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    pub name: String,
    pub schemes: Vec<Scheme>,
    pub tie_rho_to_epsilon: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSettings {
    pub slots: u64,
    pub seed: u64,
    pub thresholds: VerdictThresholds,
    pub trace_slots: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidateSettings {
    pub points: usize,
    pub inner: String,
    /// Region whose exterior is probed; `None` skips the exterior check.
    pub outer: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub system: SystemConfig,
    pub grid_step: f64,
    pub search: SearchSettings,
    pub regions: Vec<RegionSpec>,
    /// Policy used by `simulate` when none is given.
    pub policy: Policy,
    pub simulation: SimulationSettings,
    pub validate: ValidateSettings,
    /// Exact text the spec was parsed from.
    pub source: String,
}

impl ExperimentSpec {
    fn points_needed(&self) -> bool {
        self.validate.points > 0
    }

    pub fn region(&self, name: &str) -> Option<&RegionSpec> {
        self.regions.iter().find(|r| r.name == name)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let raw: RawSpec = toml::from_str(text)?;
        raw.resolve(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }
}

type Num = Spanned<f64>;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    name: String,
    grid_step: Num,
    system: RawSystem,
    #[serde(default)]
    search: SearchSettings,
    #[serde(default)]
    region: Vec<RawRegion>,
    #[serde(default)]
    policy: Option<Spanned<RawPolicy>>,
    #[serde(default)]
    simulation: RawSimulation,
    #[serde(default)]
    validate: RawValidate,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    lambda_p: Num,
    p_succ_primary: Num,
    p_succ_p_to_s: Spanned<[f64; 2]>,
    secondary: RawLinks,
    relay: RawLinks,
}

/// Either rank-1 successes with rank-2/rank-1 ratios, or a full matrix.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLinks {
    rank1: Option<Spanned<[f64; 2]>>,
    ratio: Option<Spanned<[f64; 2]>>,
    matrix: Option<Spanned<LinkMatrix>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegion {
    name: String,
    schemes: Spanned<Vec<String>>,
    #[serde(default)]
    tie_rho_to_epsilon: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    epsilon: Option<f64>,
    rho: Option<f64>,
    p1: Option<f64>,
    p2: Option<f64>,
    f1: Option<f64>,
    f2: Option<f64>,
    alpha1: Option<f64>,
    alpha2: Option<f64>,
    #[serde(default)]
    tie_rho_to_epsilon: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSimulation {
    slots: u64,
    seed: u64,
    drift_threshold: f64,
    len_factor: f64,
    trace_slots: u64,
}

impl Default for RawSimulation {
    fn default() -> Self {
        let th = VerdictThresholds::default();
        RawSimulation {
            slots: 1_000_000,
            seed: 1,
            drift_threshold: th.drift,
            len_factor: th.len_factor,
            trace_slots: 0,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawValidate {
    points: usize,
    inner: String,
    outer: String,
}

impl Default for RawValidate {
    fn default() -> Self {
        RawValidate {
            points: 10,
            inner: "inner".into(),
            outer: "outer".into(),
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn field_err<T>(text: &str, span: std::ops::Range<usize>, field: &str, reason: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Field {
        line: line_of(text, span.start),
        field: field.to_string(),
        reason: reason.into(),
    })
}

fn prob(text: &str, field: &str, v: &Num) -> Result<f64, ConfigError> {
    let x = *v.get_ref();
    if !(0.0..=1.0).contains(&x) {
        return field_err(text, v.span(), field, format!("value {x} is not a probability in [0, 1]"));
    }
    Ok(x)
}

fn prob_pair(text: &str, field: &str, v: &Spanned<[f64; 2]>) -> Result<[f64; 2], ConfigError> {
    let x = *v.get_ref();
    for (i, p) in x.iter().enumerate() {
        if !(0.0..=1.0).contains(p) {
            return field_err(
                text,
                v.span(),
                &format!("{field}[{}]", i + 1),
                format!("value {p} is not a probability in [0, 1]"),
            );
        }
    }
    Ok(x)
}

impl RawLinks {
    fn resolve(&self, text: &str, field: &str) -> Result<LinkMatrix, ConfigError> {
        match (&self.rank1, &self.ratio, &self.matrix) {
            (Some(r1), Some(ratio), None) => {
                let r1v = prob_pair(text, &format!("{field}.rank1"), r1)?;
                let rv = prob_pair(text, &format!("{field}.ratio"), ratio)?;
                let d = SecondaryLink::direct;
                Ok([
                    [d(r1v[0]), d(r1v[1])],
                    [d(r1v[0] * rv[0]), d(r1v[1] * rv[1])],
                ])
            }
            (None, None, Some(m)) => Ok(*m.get_ref()),
            _ => Err(ConfigError::Invalid(format!(
                "{field}: give either `rank1` and `ratio`, or `matrix`"
            ))),
        }
    }
}

impl RawSpec {
    fn resolve(self, text: &str) -> Result<ExperimentSpec, ConfigError> {
        let step = *self.grid_step.get_ref();
        if !(step > 0.0 && step <= 1.0) {
            return field_err(text, self.grid_step.span(), "grid_step", format!("must lie in (0, 1], got {step}"));
        }
        let s = &self.system;
        let p_to = prob_pair(text, "system.p_succ_p_to_s", &s.p_succ_p_to_s)?;
        let system = SystemConfig {
            lambda_p: prob(text, "system.lambda_p", &s.lambda_p)?,
            lambda_1: 0.0,
            lambda_2: 0.0,
            p_succ_primary: prob(text, "system.p_succ_primary", &s.p_succ_primary)?,
            p_succ_p_to_s1: p_to[0],
            p_succ_p_to_s2: p_to[1],
            secondary_links: s.secondary.resolve(text, "system.secondary")?,
            relay_links: s.relay.resolve(text, "system.relay")?,
        };
        system.validate().map_err(|e| {
            let (field, reason) = match e {
                ModelError::InvalidProbability { field, value } => {
                    (field, format!("value {value} is not a probability in [0, 1]"))
                }
                ModelError::InvalidParameter { field, reason } => (field, reason),
                other => ("system".to_string(), other.to_string()),
            };
            ConfigError::Invalid(format!("system: {field}: {reason}"))
        })?;

        let mut regions: Vec<RegionSpec> = Vec::new();
        for r in self.region {
            let mut schemes = Vec::new();
            for name in r.schemes.get_ref() {
                match name.parse::<Scheme>() {
                    Ok(sc) => schemes.push(sc),
                    Err(_) => {
                        return field_err(
                            text,
                            r.schemes.span(),
                            &format!("region '{}'.schemes", r.name),
                            format!("unknown scheme '{name}'"),
                        )
                    }
                }
            }
            if regions.iter().any(|x| x.name == r.name) {
                return Err(ConfigError::Invalid(format!("duplicate region name '{}'", r.name)));
            }
            regions.push(RegionSpec {
                name: r.name,
                schemes,
                tie_rho_to_epsilon: r.tie_rho_to_epsilon,
            });
        }

        let policy = match &self.policy {
            None => Policy::default(),
            Some(p) => {
                let raw = p.get_ref();
                let d = Policy::default();
                let pol = Policy {
                    epsilon: raw.epsilon.unwrap_or(d.epsilon),
                    rho: raw.rho.unwrap_or(d.rho),
                    p1: raw.p1.unwrap_or(d.p1),
                    p2: raw.p2.unwrap_or(d.p2),
                    f1: raw.f1.unwrap_or(d.f1),
                    f2: raw.f2.unwrap_or(d.f2),
                    alpha1: raw.alpha1.unwrap_or(d.alpha1),
                    alpha2: raw.alpha2.unwrap_or(d.alpha2),
                    tie_rho_to_epsilon: raw.tie_rho_to_epsilon,
                };
                if let Err(e) = pol.validate() {
                    return field_err(text, p.span(), "policy", e.to_string());
                }
                pol
            }
        };

        let sim = self.simulation;
        if sim.slots == 0 {
            return Err(ConfigError::Invalid("simulation.slots: must be at least 1".into()));
        }
        let search = self.search;
        if search.n_starts == 0 || !(search.step_tol > 0.0) || !(search.initial_step > search.step_tol) {
            return Err(ConfigError::Invalid(
                "search: need n_starts >= 1 and initial_step > step_tol > 0".into(),
            ));
        }

        ExperimentSpec {
            name: self.name,
            system,
            grid_step: step,
            search,
            regions,
            policy,
            simulation: SimulationSettings {
                slots: sim.slots,
                seed: sim.seed,
                thresholds: VerdictThresholds {
                    drift: sim.drift_threshold,
                    len_factor: sim.len_factor,
                },
                trace_slots: sim.trace_slots,
            },
            validate: ValidateSettings {
                points: self.validate.points,
                inner: self.validate.inner,
                outer: Some(self.validate.outer).filter(|o| !o.is_empty()),
            },
            source: text.to_string(),
        }
        .checked()
    }
}

impl ExperimentSpec {
    fn checked(self) -> Result<Self, ConfigError> {
        let v = &self.validate;
        for name in std::iter::once(&v.inner).chain(v.outer.as_ref()) {
            if self.points_needed() && self.region(name).is_none() {
                return Err(ConfigError::Invalid(format!("validate: no region named '{name}'")));
            }
        }
        Ok(self)
    }
}
