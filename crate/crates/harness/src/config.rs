//! Experiment configuration files.
//!
//! A config is TOML with an `[experiment]` table, optional `[geometry]` and
//! `[output]` tables, and at most one table named after the experiment kind.
//! Unknown keys anywhere are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    SurvivalScan,
    Llt,
    Concentration,
    BoxEvents,
    Encounters,
    Derivative,
    Displacement,
    EnvChain,
}

impl Kind {
    pub const ALL: [Kind; 8] = [
        Kind::SurvivalScan,
        Kind::Llt,
        Kind::Concentration,
        Kind::BoxEvents,
        Kind::Encounters,
        Kind::Derivative,
        Kind::Displacement,
        Kind::EnvChain,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Kind::SurvivalScan => "survival-scan",
            Kind::Llt => "llt",
            Kind::Concentration => "concentration",
            Kind::BoxEvents => "box-events",
            Kind::Encounters => "encounters",
            Kind::Derivative => "derivative",
            Kind::Displacement => "displacement",
            Kind::EnvChain => "env-chain",
        }
    }

    pub fn from_name(s: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Whether the kind reads `geometry.half_width`.
    pub fn uses_half_width(&self) -> bool {
        matches!(self, Kind::Llt | Kind::Concentration | Kind::BoxEvents | Kind::EnvChain)
    }
}

impl std::fmt::Display for Kind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Jsonl,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub geometry: Geometry,
    #[serde(default)]
    pub output: Output,
    #[serde(default, rename = "survival-scan", skip_serializing_if = "Option::is_none")]
    pub survival_scan: Option<SurvivalScanParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llt: Option<LltParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concentration: Option<ConcentrationParams>,
    #[serde(default, rename = "box-events", skip_serializing_if = "Option::is_none")]
    pub box_events: Option<BoxEventParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encounters: Option<EncounterParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derivative: Option<DerivativeParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub displacement: Option<DisplacementParams>,
    #[serde(default, rename = "env-chain", skip_serializing_if = "Option::is_none")]
    pub env_chain: Option<EnvChainParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub kind: Kind,
    pub seed: u64,
    /// Environments per run. For `derivative` this is the number of annealed
    /// replicas.
    pub replicas: u64,
    /// Worker threads; not part of the result identity.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Use the exact environment-free annealed law (valid for p in {0, 1}).
    #[serde(default)]
    pub analytic_annealed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Time steps kept between the last read time and the backbone horizon;
    /// also added to the spatial half-width.
    #[serde(default = "default_margin")]
    pub margin: i64,
    /// Explicit spatial half-width; must be at least the cone requirement.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<i64>,
}

fn default_d() -> usize {
    1
}

fn default_margin() -> i64 {
    opwalk_core::DEFAULT_SAFETY_MARGIN
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry { d: default_d(), p: None, margin: default_margin(), half_width: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Output {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub format: Format,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for Output {
    fn default() -> Self {
        Output { dir: default_dir(), format: Format::Jsonl }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurvivalScanParams {
    pub p_values: Vec<f64>,
    pub horizon: i64,
    /// The working point is the smallest `p` whose interval lower end
    /// exceeds this.
    pub ci_floor: f64,
}

impl Default for SurvivalScanParams {
    fn default() -> Self {
        SurvivalScanParams { p_values: (0..10).map(|i| 0.5 + 0.05 * i as f64).map(round2).collect(), horizon: 200, ci_floor: 0.3 }
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LltParams {
    pub n_values: Vec<u64>,
    /// Density depth; `n / 2` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<u64>,
    pub annealed_replicas: u64,
    /// Also evaluate the three-step comparison chain.
    pub chain: bool,
    pub eps: f64,
    pub delta: f64,
}

impl Default for LltParams {
    fn default() -> Self {
        LltParams { n_values: vec![25, 50, 100, 200], depth: None, annealed_replicas: 2000, chain: false, eps: 0.2, delta: 0.05 }
    }
}

impl LltParams {
    pub fn depth_for(&self, n: u64) -> u64 {
        self.depth.unwrap_or(n / 2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConcentrationParams {
    pub depth: u64,
    pub m_values: Vec<u64>,
    pub threshold: f64,
}

impl Default for ConcentrationParams {
    fn default() -> Self {
        ConcentrationParams { depth: 100, m_values: vec![8, 32, 128], threshold: 0.25 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoxEvent {
    G1,
    G2,
    G4,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoxEventParams {
    pub big_n: u64,
    pub theta: f64,
    pub event: BoxEvent,
    /// Fixed log-power for G2; the smallest passing power is always reported.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<u32>,
    /// Spatial start; the origin when empty.
    pub start: Vec<i64>,
    pub start_time: i64,
    pub annealed_replicas: u64,
}

impl Default for BoxEventParams {
    fn default() -> Self {
        BoxEventParams {
            big_n: 400,
            theta: 0.9,
            event: BoxEvent::G4,
            h: None,
            start: Vec::new(),
            start_time: 0,
            annealed_replicas: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncounterParams {
    pub big_n: u64,
    pub eps_values: Vec<f64>,
    /// Encounter distance; `ceil(ln^2 N)` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<u64>,
}

impl Default for EncounterParams {
    fn default() -> Self {
        EncounterParams { big_n: 10_000, eps_values: vec![0.1], radius: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DerivativeParams {
    pub n_values: Vec<u64>,
    pub smoothness_eps: f64,
}

impl Default for DerivativeParams {
    fn default() -> Self {
        DerivativeParams { n_values: (4..=9).map(|k| 1u64 << k).collect(), smoothness_eps: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisplacementParams {
    pub n_values: Vec<u64>,
    pub big_n: u64,
    /// Quenched tail level of the H event; square root of the annealed tail
    /// when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_threshold: Option<f64>,
}

impl Default for DisplacementParams {
    fn default() -> Self {
        DisplacementParams { n_values: vec![25, 50, 100], big_n: 100, h_threshold: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvChainParams {
    pub steps: u64,
}

impl Default for EnvChainParams {
    fn default() -> Self {
        EnvChainParams { steps: 100 }
    }
}

impl ExperimentConfig {
    /// A runnable config for `kind` with default parameters.
    pub fn defaults(kind: Kind) -> Self {
        let p = match kind {
            Kind::SurvivalScan => None,
            _ => Some(0.6),
        };
        let (replicas, analytic_annealed) = match kind {
            Kind::SurvivalScan => (2000, false),
            Kind::Encounters => (500, false),
            Kind::Derivative => (1, true),
            Kind::Concentration => (200, false),
            _ => (100, false),
        };
        let p = if kind == Kind::Derivative { Some(1.0) } else { p };
        let mut cfg = ExperimentConfig {
            experiment: Experiment { kind, seed: 1, replicas, threads: None, analytic_annealed },
            geometry: Geometry { p, ..Geometry::default() },
            output: Output::default(),
            survival_scan: None,
            llt: None,
            concentration: None,
            box_events: None,
            encounters: None,
            derivative: None,
            displacement: None,
            env_chain: None,
        };
        cfg.fill_section();
        cfg
    }

    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        toml::from_str(s).map_err(|e| HarnessError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn kind(&self) -> Kind {
        self.experiment.kind
    }

    /// Kinds whose parameter table is present.
    pub fn sections_present(&self) -> Vec<Kind> {
        let mut out = Vec::new();
        let flags = [
            (Kind::SurvivalScan, self.survival_scan.is_some()),
            (Kind::Llt, self.llt.is_some()),
            (Kind::Concentration, self.concentration.is_some()),
            (Kind::BoxEvents, self.box_events.is_some()),
            (Kind::Encounters, self.encounters.is_some()),
            (Kind::Derivative, self.derivative.is_some()),
            (Kind::Displacement, self.displacement.is_some()),
            (Kind::EnvChain, self.env_chain.is_some()),
        ];
        for (k, present) in flags {
            if present {
                out.push(k);
            }
        }
        out
    }

    /// Inserts the default table for the configured kind if it is missing.
    pub fn fill_section(&mut self) {
        match self.kind() {
            Kind::SurvivalScan => {
                self.survival_scan.get_or_insert_with(Default::default);
            }
            Kind::Llt => {
                self.llt.get_or_insert_with(Default::default);
            }
            Kind::Concentration => {
                self.concentration.get_or_insert_with(Default::default);
            }
            Kind::BoxEvents => {
                self.box_events.get_or_insert_with(Default::default);
            }
            Kind::Encounters => {
                self.encounters.get_or_insert_with(Default::default);
            }
            Kind::Derivative => {
                self.derivative.get_or_insert_with(Default::default);
            }
            Kind::Displacement => {
                self.displacement.get_or_insert_with(Default::default);
            }
            Kind::EnvChain => {
                self.env_chain.get_or_insert_with(Default::default);
            }
        }
    }

    pub fn p(&self) -> f64 {
        self.geometry.p.unwrap_or(f64::NAN)
    }

    /// The config with run-local settings (threads, output) reset, so that
    /// two configs describing the same results compare equal.
    pub fn identity(&self) -> ExperimentConfig {
        let mut c = self.clone();
        c.experiment.threads = None;
        c.output = Output::default();
        c.fill_section();
        c
    }
}
