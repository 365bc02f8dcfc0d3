//! Per-replica records (one JSON line each) and summary rows.
//!
//! Field names are part of the versioned output schema; see
//! `docs/schema.md`. Every record carries `kind`, `replica` and `seed`.

use serde::{Deserialize, Serialize};

use crate::config::Kind;

/// Version of the JSONL and CSV layouts.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub replica: u64,
    pub seed: u64,
    /// Survival of the origin at each configured `p`, in config order.
    pub survived: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LltRecord {
    pub replica: u64,
    pub seed: u64,
    pub n: Vec<u64>,
    pub depth: Vec<u64>,
    pub statistic: Vec<f64>,
    pub normalized: Vec<f64>,
    pub z: Vec<f64>,
    /// Chain distances; `null` unless the chain was requested.
    pub l1: Option<Vec<f64>>,
    pub l2: Option<Vec<f64>>,
    pub l3: Option<Vec<f64>>,
    pub markov_residual: Option<Vec<f64>>,
    pub closure_bound: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRecord {
    pub replica: u64,
    pub seed: u64,
    pub m: Vec<u64>,
    pub box_mean: Vec<f64>,
    pub deviation: Vec<f64>,
    pub phi_origin: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxEventRecord {
    pub replica: u64,
    pub seed: u64,
    pub event: String,
    pub start: Vec<i64>,
    pub start_time: i64,
    pub side: i64,
    pub boxes_scanned: u64,
    pub max_value: f64,
    pub threshold: f64,
    pub holds: bool,
    pub off_backbone: bool,
    pub min_h: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncounterRecord {
    pub replica: u64,
    pub seed: u64,
    /// First coordinate of the second walk's start, per pair.
    pub offset: Vec<i64>,
    pub count: Vec<u64>,
    pub renewals: Vec<u64>,
    pub max_gap: Vec<u64>,
    pub gaps_within_radius: Vec<bool>,
}

/// One grid point of the annealed difference analysis. `replica` is the
/// grid index and `seed` the annealed master seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeRecord {
    pub replica: u64,
    pub seed: u64,
    pub n: u64,
    pub law_sup: f64,
    pub start_space: f64,
    pub start_time: f64,
    pub target_space: f64,
    pub target_time: f64,
    pub start_space_se: f64,
    pub start_time_se: f64,
    pub target_space_se: f64,
    pub target_time_se: f64,
    /// Partition smoothness of the law at the configured `eps`; `null` when
    /// the box side is below 1.
    pub smoothness: Option<f64>,
    pub annealed_replicas: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisplacementRecord {
    pub replica: u64,
    pub seed: u64,
    pub n: Vec<u64>,
    pub tail: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvChainRecord {
    pub replica: u64,
    pub seed: u64,
    pub steps: u64,
    pub displacement: Vec<i64>,
    pub open_fraction: f64,
    pub backbone_fraction: f64,
    pub first_backbone_step: Option<u64>,
    /// Indicator that the first step lands on an open site.
    pub cylinder_sampled: f64,
    /// Exact probability of that event under the one-step kernel.
    pub cylinder_exact: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ReplicaRecord {
    SurvivalScan(SurvivalRecord),
    Llt(LltRecord),
    Concentration(ConcentrationRecord),
    BoxEvents(BoxEventRecord),
    Encounters(EncounterRecord),
    Derivative(DerivativeRecord),
    Displacement(DisplacementRecord),
    EnvChain(EnvChainRecord),
}

impl ReplicaRecord {
    pub fn kind(&self) -> Kind {
        match self {
            ReplicaRecord::SurvivalScan(_) => Kind::SurvivalScan,
            ReplicaRecord::Llt(_) => Kind::Llt,
            ReplicaRecord::Concentration(_) => Kind::Concentration,
            ReplicaRecord::BoxEvents(_) => Kind::BoxEvents,
            ReplicaRecord::Encounters(_) => Kind::Encounters,
            ReplicaRecord::Derivative(_) => Kind::Derivative,
            ReplicaRecord::Displacement(_) => Kind::Displacement,
            ReplicaRecord::EnvChain(_) => Kind::EnvChain,
        }
    }

    pub fn index(&self) -> u64 {
        match self {
            ReplicaRecord::SurvivalScan(r) => r.replica,
            ReplicaRecord::Llt(r) => r.replica,
            ReplicaRecord::Concentration(r) => r.replica,
            ReplicaRecord::BoxEvents(r) => r.replica,
            ReplicaRecord::Encounters(r) => r.replica,
            ReplicaRecord::Derivative(r) => r.replica,
            ReplicaRecord::Displacement(r) => r.replica,
            ReplicaRecord::EnvChain(r) => r.replica,
        }
    }

    /// The record as one JSON line, without the trailing newline.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("records serialize")
    }
}

/// Documented JSONL field names per kind, in serialization order.
pub fn replica_fields(kind: Kind) -> &'static [&'static str] {
    match kind {
        Kind::SurvivalScan => &["kind", "replica", "seed", "survived"],
        Kind::Llt => &[
            "kind",
            "replica",
            "seed",
            "n",
            "depth",
            "statistic",
            "normalized",
            "z",
            "l1",
            "l2",
            "l3",
            "markov_residual",
            "closure_bound",
        ],
        Kind::Concentration => &["kind", "replica", "seed", "m", "box_mean", "deviation", "phi_origin"],
        Kind::BoxEvents => &[
            "kind",
            "replica",
            "seed",
            "event",
            "start",
            "start_time",
            "side",
            "boxes_scanned",
            "max_value",
            "threshold",
            "holds",
            "off_backbone",
            "min_h",
        ],
        Kind::Encounters => &["kind", "replica", "seed", "offset", "count", "renewals", "max_gap", "gaps_within_radius"],
        Kind::Derivative => &[
            "kind",
            "replica",
            "seed",
            "n",
            "law_sup",
            "start_space",
            "start_time",
            "target_space",
            "target_time",
            "start_space_se",
            "start_time_se",
            "target_space_se",
            "target_time_se",
            "smoothness",
            "annealed_replicas",
        ],
        Kind::Displacement => &["kind", "replica", "seed", "n", "tail"],
        Kind::EnvChain => &[
            "kind",
            "replica",
            "seed",
            "steps",
            "displacement",
            "open_fraction",
            "backbone_fraction",
            "first_backbone_step",
            "cylinder_sampled",
            "cylinder_exact",
        ],
    }
}

/// Columns of every summary CSV.
pub const SUMMARY_FIELDS: [&str; 8] = ["kind", "statistic", "param", "value", "stderr", "ci_low", "ci_high", "count"];

/// Columns of the long-format per-replica CSV.
pub const REPLICA_CSV_FIELDS: [&str; 6] = ["kind", "replica", "seed", "field", "index", "value"];

/// One aggregate statistic. Missing values are empty in CSV and `null` in
/// JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub kind: String,
    pub statistic: String,
    pub param: String,
    pub value: Option<f64>,
    pub stderr: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub count: u64,
}

impl SummaryRow {
    pub fn new(kind: Kind, statistic: &str, param: impl Into<String>, value: f64, count: u64) -> Self {
        SummaryRow {
            kind: kind.name().to_string(),
            statistic: statistic.to_string(),
            param: param.into(),
            value: finite(value),
            stderr: None,
            ci_low: None,
            ci_high: None,
            count,
        }
    }

    pub fn with_stderr(mut self, se: f64) -> Self {
        self.stderr = finite(se);
        self
    }

    pub fn with_ci(mut self, lo: f64, hi: f64) -> Self {
        self.ci_low = finite(lo);
        self.ci_high = finite(hi);
        self
    }
}

pub(crate) fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}
