//! Self-describing JSON run reports.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::detect::TrendStats;
use super::experiment::ExperimentConfig;
use crate::error::Result;

pub const SCHEMA: u32 = 1;

/// Library version stamped into every report.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Outcome of one acceptance check with its measured values and limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub measured: BTreeMap<String, f64>,
    pub limits: BTreeMap<String, f64>,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl CheckOutcome {
    pub fn new(id: u32, name: &str) -> Self {
        Self {
            id,
            name: name.into(),
            passed: true,
            measured: BTreeMap::new(),
            limits: BTreeMap::new(),
            seconds: 0.0,
            detail: None,
        }
    }

    pub fn measure(&mut self, key: &str, value: f64) -> &mut Self {
        self.measured.insert(key.into(), value);
        self
    }

    pub fn limit(&mut self, key: &str, value: f64) -> &mut Self {
        self.limits.insert(key.into(), value);
        self
    }

    /// Records a sub-condition; the check fails if any condition is false.
    pub fn require(&mut self, ok: bool) -> &mut Self {
        self.passed &= ok;
        self
    }

    /// A failed check carrying the error that stopped it.
    pub fn errored(id: u32, name: &str, err: impl std::fmt::Display) -> Self {
        let mut c = Self::new(id, name);
        c.passed = false;
        c.detail = Some(err.to_string());
        c
    }

    /// One-line summary, e.g. `criterion 3 [lanczos] PASS …`.
    pub fn line(&self) -> String {
        let fmt = |m: &BTreeMap<String, f64>| m.iter().map(|(k, v)| format!("{k}={v:.6e}")).collect::<Vec<_>>().join(" ");
        let mut s = format!(
            "criterion {} [{}] {} ({:.2}s) measured: {}",
            self.id,
            self.name,
            if self.passed { "PASS" } else { "FAIL" },
            self.seconds,
            fmt(&self.measured)
        );
        if !self.limits.is_empty() {
            s.push_str(&format!(" | limits: {}", fmt(&self.limits)));
        }
        if let Some(d) = &self.detail {
            s.push_str(&format!(" | {d}"));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: u32,
    pub version: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub eos_entry_step: Option<u64>,
    pub period2_fraction: Option<f64>,
    pub sharpness_trend: Option<TrendStats>,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<CheckOutcome>,
    pub diverged: Option<String>,
    pub flags: Vec<String>,
}

impl Report {
    pub fn new(config: &ExperimentConfig) -> Self {
        Self {
            schema: SCHEMA,
            version: VERSION.into(),
            config: config.clone(),
            seed: config.seed,
            eos_entry_step: None,
            period2_fraction: None,
            sharpness_trend: None,
            metrics: BTreeMap::new(),
            checks: Vec::new(),
            diverged: None,
            flags: Vec::new(),
        }
    }

    pub fn all_passed(&self) -> bool {
        self.diverged.is_none() && self.checks.iter().all(|c| c.passed)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }
}
