//! TOML run configuration.
//!
//! One file drives all pipeline stages; each stage reads the blocks it
//! needs and ignores the rest. Unknown keys anywhere are hard errors so a
//! typo cannot silently fall back to a default.

use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::damping::{DampingSpec, Family, PerturbationProfile};
use crate::error::{Error, Result};
use crate::gauge::LambdaPolicy;
use crate::testfn::EnvelopeSpec;
use crate::wavesim::{DataKind, InitialData};

/// A value that is either a number or the literal string `"auto"`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AutoOrNumber {
    Number(f64),
    Word(String),
}

impl AutoOrNumber {
    pub fn auto() -> Self {
        AutoOrNumber::Word("auto".into())
    }

    /// `None` means auto; anything other than a number or "auto" is refused.
    pub fn resolve(&self, key: &str) -> Result<Option<f64>> {
        match self {
            AutoOrNumber::Number(v) => Ok(Some(*v)),
            AutoOrNumber::Word(w) if w == "auto" => Ok(None),
            AutoOrNumber::Word(w) => Err(Error::Config(format!(
                "{key} must be a number or \"auto\", got \"{w}\""
            ))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DampingConfig {
    /// "perturbation" | "scaleinv2" | "scaleinvmu"
    pub family: String,
    pub delta: f64,
    pub k: f64,
    #[serde(default)]
    pub mu: Option<f64>,
    /// "timeonly" (default) | "cosine" | "zero"
    #[serde(default = "default_profile")]
    pub profile: String,
    #[serde(default)]
    pub omega: Option<f64>,
}

fn default_profile() -> String {
    "timeonly".into()
}

impl DampingConfig {
    pub fn build(&self) -> Result<DampingSpec> {
        let family = match self.family.as_str() {
            "perturbation" => {
                if self.mu.is_some() {
                    return Err(Error::Config(
                        "mu only applies to the scaleinvmu family".into(),
                    ));
                }
                Family::Perturbation
            }
            "scaleinv2" => {
                if self.mu.is_some() {
                    return Err(Error::Config(
                        "mu only applies to the scaleinvmu family".into(),
                    ));
                }
                Family::ScaleInv2
            }
            "scaleinvmu" => Family::ScaleInvMu {
                mu: self.mu.ok_or_else(|| {
                    Error::Config("the scaleinvmu family needs the mu key".into())
                })?,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown damping family \"{other}\"; expected perturbation, scaleinv2, or scaleinvmu"
                )))
            }
        };
        let profile = match self.profile.as_str() {
            "timeonly" => PerturbationProfile::TimeOnlyPower,
            "zero" => PerturbationProfile::Zero,
            "cosine" => PerturbationProfile::SeparableCosine {
                omega: self.omega.ok_or_else(|| {
                    Error::Config("the cosine profile needs the omega key".into())
                })?,
            },
            "custom" => {
                return Err(Error::Config(
                    "custom profiles are a code-level extension point and cannot be \
                     configured from a file; construct a DampingSpec with \
                     PerturbationProfile::Custom directly"
                        .into(),
                ))
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown perturbation profile \"{other}\"; expected timeonly, cosine, or zero"
                )))
            }
        };
        if self.omega.is_some() && self.profile != "cosine" {
            return Err(Error::Config(
                "omega only applies to the cosine profile".into(),
            ));
        }
        DampingSpec::new(family, self.delta, self.k, profile)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaugeConfig {
    pub theta: f64,
    #[serde(default = "AutoOrNumber::auto")]
    pub lambda: AutoOrNumber,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "AutoOrNumber::auto")]
    pub s_max: AutoOrNumber,
    pub t_max: f64,
    pub x_min: f64,
    pub x_max: f64,
    pub delta_step: f64,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    200
}

impl GaugeConfig {
    pub fn lambda_policy(&self) -> Result<LambdaPolicy> {
        Ok(match self.lambda.resolve("gauge.lambda")? {
            None => LambdaPolicy::Auto,
            Some(l) => LambdaPolicy::Fixed(l),
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub p: f64,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub eps_list: Option<Vec<f64>>,
    /// "bump" (default) | "plateau"
    #[serde(default = "default_data")]
    pub data: String,
    #[serde(default = "one")]
    pub u0_amplitude: f64,
    #[serde(default)]
    pub u1_amplitude: f64,
    /// Half-width of the data support (the grid band is sized from it).
    #[serde(alias = "L")]
    pub support_radius: f64,
    pub dx: f64,
    #[serde(default = "default_threshold")]
    pub blowup_threshold: f64,
    pub t_cap: f64,
    #[serde(default)]
    pub record_fields: bool,
}

fn default_data() -> String {
    "bump".into()
}

fn one() -> f64 {
    1.0
}

fn default_threshold() -> f64 {
    1e8
}

impl SimConfig {
    pub fn build_data(&self, epsilon: f64) -> Result<InitialData> {
        let kind = match self.data.as_str() {
            "bump" => DataKind::Bump,
            "plateau" => DataKind::Plateau,
            other => {
                return Err(Error::Config(format!(
                    "unknown data kind \"{other}\"; expected bump or plateau (custom shapes are library-only)"
                )))
            }
        };
        Ok(InitialData {
            kind,
            u0_amplitude: self.u0_amplitude,
            u1_amplitude: self.u1_amplitude,
            support_radius: self.support_radius,
            epsilon,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalsConfig {
    pub tau_list: Vec<f64>,
    /// "equal_tau" (default) | "fixed" | "alpha_power" (R = τ^{1+1/p})
    #[serde(rename = "R_policy", alias = "r_policy", default = "default_r_policy")]
    pub r_policy: String,
    #[serde(rename = "R_fixed", alias = "r_fixed", default)]
    pub r_fixed: Option<f64>,
    /// "basic" (default) | "refined" | "scale_invariant"
    #[serde(default = "default_variant")]
    pub variant: String,
}

fn default_r_policy() -> String {
    "equal_tau".into()
}

fn default_variant() -> String {
    "basic".into()
}

impl FunctionalsConfig {
    pub fn r_for(&self, tau: f64, p: f64) -> Result<f64> {
        match self.r_policy.as_str() {
            "equal_tau" => Ok(tau),
            "fixed" => self.r_fixed.ok_or_else(|| {
                Error::Config("R_policy = \"fixed\" needs the R_fixed key".into())
            }),
            "alpha_power" => Ok(tau.powf(1.0 + 1.0 / p)),
            other => Err(Error::Config(format!(
                "unknown R_policy \"{other}\"; expected equal_tau, fixed, or alpha_power"
            ))),
        }
    }

    pub fn envelope(&self, spec: &DampingSpec) -> Result<EnvelopeSpec> {
        match self.variant.as_str() {
            "basic" => Ok(EnvelopeSpec::Basic),
            "refined" => Ok(EnvelopeSpec::Refined { k: spec.k }),
            "scale_invariant" => match spec.family {
                Family::ScaleInvMu { mu } => {
                    Ok(EnvelopeSpec::ScaleInvariant { k: spec.k, mu })
                }
                _ => Err(Error::Config(
                    "the scale_invariant envelope needs the scaleinvmu damping family".into(),
                )),
            },
            other => Err(Error::Config(format!(
                "unknown envelope variant \"{other}\"; expected basic, refined, or scale_invariant"
            ))),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: String,
    /// Any of "csv" (tables) and "json" (reports); the run manifest is
    /// always written.
    pub formats: Vec<String>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { directory: "out".into(), formats: vec!["csv".into(), "json".into()] }
    }
}

impl OutputConfig {
    pub fn validate(&self) -> Result<()> {
        for f in &self.formats {
            if f != "csv" && f != "json" {
                return Err(Error::Config(format!(
                    "unknown output format \"{f}\"; expected csv or json"
                )));
            }
        }
        Ok(())
    }

    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub damping: DampingConfig,
    #[serde(default)]
    pub gauge: Option<GaugeConfig>,
    #[serde(default)]
    pub sim: Option<SimConfig>,
    #[serde(default)]
    pub functionals: Option<FunctionalsConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    /// Parses a config file; the returned hash is the SHA-256 of the raw
    /// bytes, recorded in manifests so artifacts can be traced to inputs.
    pub fn from_path(path: &Path) -> Result<(RunConfig, String)> {
        let raw = std::fs::read(path)?;
        let hash = hex(&Sha256::digest(&raw));
        let text = String::from_utf8(raw)
            .map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        let cfg: RunConfig = toml::from_str(&text)?;
        cfg.output.validate()?;
        Ok((cfg, hash))
    }

    pub fn gauge_block(&self) -> Result<&GaugeConfig> {
        self.gauge.as_ref().ok_or_else(|| Error::Config("missing [gauge] block".into()))
    }

    pub fn sim_block(&self) -> Result<&SimConfig> {
        self.sim.as_ref().ok_or_else(|| Error::Config("missing [sim] block".into()))
    }

    pub fn functionals_block(&self) -> Result<&FunctionalsConfig> {
        self.functionals
            .as_ref()
            .ok_or_else(|| Error::Config("missing [functionals] block".into()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
