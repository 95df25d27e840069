//! Equivalence tests for the placebo coefficients.
//!
//! Each test's null hypothesis is that the pre-trend is at least as large
//! as a threshold (`||beta||_inf >= delta`, `|mean(beta)| >= tau` or
//! `rms(beta) >= zeta`), so a rejection is evidence that pre-trends are
//! negligible.

mod bootstrap;
mod boxqp;
mod constrained;
mod folded;
mod rms;
mod threshold;

use serde::{Deserialize, Serialize};

pub use bootstrap::{bootstrap_max_test, BootstrapConfig, BootstrapEngine, BootstrapVariant};
pub use boxqp::solve_box_qp;
pub use constrained::constrained_estimate;
pub use folded::{iu_max_test, mean_test};
pub use rms::{rms_confidence_interval, rms_test, RmsInterval};
pub use threshold::{bisect_minimal_threshold, upper_interval_threshold, SearchConfig};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    #[serde(alias = "iu")]
    IuMax,
    #[serde(alias = "boot")]
    BootMax,
    #[serde(alias = "cboot")]
    ClusterBootMax,
    Mean,
    Rms,
}

impl TestKind {
    pub const ALL: [TestKind; 5] =
        [TestKind::IuMax, TestKind::BootMax, TestKind::ClusterBootMax, TestKind::Mean, TestKind::Rms];

    pub fn name(self) -> &'static str {
        match self {
            TestKind::IuMax => "iu_max",
            TestKind::BootMax => "boot_max",
            TestKind::ClusterBootMax => "cluster_boot_max",
            TestKind::Mean => "mean",
            TestKind::Rms => "rms",
        }
    }

    /// Symbol of the threshold the test is stated in.
    pub fn threshold_symbol(self) -> &'static str {
        match self {
            TestKind::IuMax | TestKind::BootMax | TestKind::ClusterBootMax => "delta",
            TestKind::Mean => "tau",
            TestKind::Rms => "zeta",
        }
    }
}

impl std::str::FromStr for TestKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "iu" | "iu_max" => Ok(TestKind::IuMax),
            "boot" | "boot_max" => Ok(TestKind::BootMax),
            "cboot" | "cluster_boot" | "cluster_boot_max" => Ok(TestKind::ClusterBootMax),
            "mean" => Ok(TestKind::Mean),
            "rms" => Ok(TestKind::Rms),
            other => Err(Error::validation(format!("unknown test '{other}' (expected iu, boot, cboot, mean or rms)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CriticalValue {
    Scalar(f64),
    PerCoordinate(Vec<f64>),
}

/// Supporting numbers that explain a decision.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_b: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wtable_hash: Option<String>,
    /// Per-coordinate `critical value - |beta_hat_t|`; positive where the
    /// coordinate test rejects.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margins: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub standard_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_quantile: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TestKind,
    pub statistic: f64,
    pub critical_value: CriticalValue,
    pub threshold: f64,
    pub alpha: f64,
    pub reject: bool,
    pub minimal_threshold: Option<f64>,
    pub diagnostics: Diagnostics,
}

pub(crate) fn check_threshold(x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::validation(format!("equivalence threshold must be positive, got {x}")))
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::validation(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}
