//! Study reports, tolerance bands and verdicts.

use std::collections::BTreeMap;

use serde::Serialize;

use super::config::ExperimentConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Pass,
    /// Nothing to assert (zero contrast).
    Neutral,
    /// A theorem hypothesis is not certified.
    Inconclusive,
    Fail,
}

impl Status {
    /// Verdict of a list of checks: any failure, else any inconclusive, else pass
    /// (neutral when nothing was asserted).
    pub fn combine(items: impl IntoIterator<Item = Status>) -> Status {
        let mut seen = Vec::new();
        for s in items {
            seen.push(s);
        }
        if seen.is_empty() || seen.iter().all(|s| *s == Status::Neutral) {
            return Status::Neutral;
        }
        let worst = seen.into_iter().max().unwrap_or(Status::Neutral);
        if worst == Status::Neutral {
            Status::Pass
        } else {
            worst
        }
    }

    /// Process exit code for an overall verdict.
    pub fn exit_code(&self) -> i32 {
        match self {
            Status::Pass | Status::Neutral => 0,
            Status::Fail => 2,
            Status::Inconclusive => 3,
        }
    }
}

/// Acceptance band of a check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bound {
    /// `value < max`.
    Below { max: f64 },
    /// `value ≤ max`.
    AtMost { max: f64 },
    /// `value > min`.
    Above { min: f64 },
    /// `value ≥ min`.
    AtLeast { min: f64 },
    /// `lo ≤ value ≤ hi`.
    Within { lo: f64, hi: f64 },
}

impl Bound {
    pub fn holds(&self, v: f64) -> bool {
        match *self {
            Bound::Below { max } => v < max,
            Bound::AtMost { max } => v <= max,
            Bound::Above { min } => v > min,
            Bound::AtLeast { min } => v >= min,
            Bound::Within { lo, hi } => v >= lo && v <= hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: Bound,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Check {
    pub fn new(name: impl Into<String>, value: f64, tolerance: Bound) -> Self {
        let status = if tolerance.holds(value) { Status::Pass } else { Status::Fail };
        Self {
            name: name.into(),
            value,
            tolerance,
            status,
            note: None,
        }
    }

    pub fn with_status(mut self, status: Status, note: impl Into<String>) -> Self {
        self.status = status;
        self.note = Some(note.into());
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// `κ·diam(B)` and `κR`, the governing dimensionless groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Groups {
    pub kappa_diam: f64,
    pub kappa_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub study: String,
    pub status: Status,
    pub version: String,
    pub seed: u64,
    pub groups: Groups,
    pub checks: Vec<Check>,
    pub results: serde_json::Value,
    pub tolerance_overrides: BTreeMap<String, f64>,
    pub config: ExperimentConfig,
}

impl StudyReport {
    pub fn new(cfg: &ExperimentConfig, groups: Groups, checks: Vec<Check>, results: serde_json::Value) -> Self {
        Self::with_status(cfg, groups, Status::combine(checks.iter().map(|c| c.status)), checks, results)
    }

    pub fn with_status(
        cfg: &ExperimentConfig,
        groups: Groups,
        status: Status,
        checks: Vec<Check>,
        results: serde_json::Value,
    ) -> Self {
        Self {
            study: cfg.study.name().into(),
            status,
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            groups,
            checks,
            results,
            tolerance_overrides: cfg.tolerances.clone(),
            config: cfg.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

const DEFAULTS: &[(&str, f64)] = &[
    ("born.certificate_band", 0.9),
    ("born.certificate_max", 1.0),
    ("born.error_min", 0.2),
    ("born.ratio_hi", 3.0),
    ("born.ratio_lo", 1.5),
    ("decay.alpha_spread", 0.2),
    ("decay.slope_hi", -1.7),
    ("decay.slope_lo", -2.3),
    ("decay.static_abs", 0.3),
    ("finite_delta.ratio", 0.1),
    ("oracle.aperture", 1e-12),
    ("oracle.asymptotic_factor", 5.0),
    ("oracle.e_conj", 1e-6),
    ("oracle.e_unimodular", 1e-12),
    ("oracle.farfield", 1e-2),
    ("oracle.g_from_l", 1e-4),
    ("oracle.g_imag", 1e-8),
    ("oracle.g_swap", 1e-10),
    ("oracle.l_imag", 1e-10),
    ("oracle.l_origin", 1e-8),
    ("oracle.l_series", 1e-6),
    ("oracle.reciprocity", 1e-3),
    ("sign.certificate_band", 0.9),
    ("sign.certificate_max", 1.0),
    ("sign.tally_min", 1.0),
];

pub fn default_tolerance(key: &str) -> Option<f64> {
    DEFAULTS.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

/// Tolerance `key`, taking a configured override into account.
pub fn tolerance(cfg: &ExperimentConfig, key: &str) -> f64 {
    cfg.tolerances
        .get(key)
        .copied()
        .or_else(|| default_tolerance(key))
        .unwrap_or_else(|| panic!("no tolerance named {key}"))
}
