//! Self-normalized test on the root mean square of the placebo effects.

use serde::{Deserialize, Serialize};

use super::{check_alpha, check_threshold, CriticalValue, Diagnostics, TestKind, TestResult};
use crate::dist::WQuantileTable;
use crate::error::{Error, Result};
use crate::panel::SequentialPath;

/// Reject when `rms^2 < zeta^2 + Q_W(alpha) V_hat`. The minimal threshold is
/// `sqrt(rms^2 - Q_W(alpha) V_hat)`.
pub fn rms_test(path: &SequentialPath, zeta: f64, alpha: f64, wtable: &WQuantileTable) -> Result<TestResult> {
    check_threshold(zeta)?;
    check_alpha(alpha)?;
    wtable.check_grid(&path.grid)?;
    let q = wtable.quantile(alpha)?;
    let crit = zeta * zeta + q * path.v_hat;
    let radicand = path.rms_sq_full - q * path.v_hat;
    if radicand < 0.0 {
        return Err(Error::validation(format!(
            "Q_W({alpha}) = {q} is positive; the test is only defined for levels with a negative quantile"
        )));
    }
    Ok(TestResult {
        kind: TestKind::Rms,
        statistic: path.rms_sq_full,
        critical_value: CriticalValue::Scalar(crit),
        threshold: zeta,
        alpha,
        reject: path.rms_sq_full < crit,
        minimal_threshold: Some(radicand.sqrt()),
        diagnostics: Diagnostics {
            wtable_hash: Some(wtable.hash()),
            v_hat: Some(path.v_hat),
            w_quantile: Some(q),
            ..Diagnostics::default()
        },
    })
}

/// Confidence interval for the squared RMS of the placebo effects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsInterval {
    /// Lower endpoint clipped at zero.
    pub lower: f64,
    pub upper: f64,
    pub raw_lower: f64,
    pub level: f64,
}

impl RmsInterval {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// `[rms^2 + Q_W(alpha/2) V_hat, rms^2 + Q_W(1 - alpha/2) V_hat]`.
pub fn rms_confidence_interval(path: &SequentialPath, alpha: f64, wtable: &WQuantileTable) -> Result<RmsInterval> {
    check_alpha(alpha)?;
    wtable.check_grid(&path.grid)?;
    let lo = path.rms_sq_full + wtable.quantile(alpha / 2.0)? * path.v_hat;
    let hi = path.rms_sq_full + wtable.quantile(1.0 - alpha / 2.0)? * path.v_hat;
    Ok(RmsInterval { lower: lo.max(0.0), upper: hi, raw_lower: lo, level: 1.0 - alpha })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::W_TABLE_FORMAT;
    use crate::panel::DEFAULT_GRID;

    fn table() -> WQuantileTable {
        WQuantileTable {
            format_version: W_TABLE_FORMAT,
            grid: DEFAULT_GRID.to_vec(),
            reps: 1000,
            seed: 0,
            levels: vec![0.025, 0.05, 0.5, 0.975],
            quantiles: vec![-2.6, -2.1, 0.0, 2.6],
        }
    }

    fn path(rms_sq: f64, v_hat: f64) -> SequentialPath {
        SequentialPath {
            grid: DEFAULT_GRID.to_vec(),
            rms_sq: vec![rms_sq; 5],
            rms_sq_full: rms_sq,
            v_hat,
            permutation_seed: 0,
        }
    }

    #[test]
    fn closed_form_boundary() {
        let p = path(0.04, 0.01);
        let r = rms_test(&p, 1.0, 0.05, &table()).unwrap();
        let z = r.minimal_threshold.unwrap();
        assert!((z - (0.04f64 + 2.1 * 0.01).sqrt()).abs() < 1e-15);
        assert!(rms_test(&p, z + 1e-6, 0.05, &table()).unwrap().reject);
        assert!(!rms_test(&p, z - 1e-6, 0.05, &table()).unwrap().reject);
    }

    #[test]
    fn zero_normalizer_gives_point_interval() {
        let ci = rms_confidence_interval(&path(0.3, 0.0), 0.05, &table()).unwrap();
        assert_eq!((ci.lower, ci.upper), (0.3, 0.3));
    }

    #[test]
    fn lower_endpoint_is_clipped() {
        let ci = rms_confidence_interval(&path(0.01, 0.1), 0.05, &table()).unwrap();
        assert_eq!(ci.lower, 0.0);
        assert!(ci.raw_lower < 0.0);
        assert!((ci.upper - 0.27).abs() < 1e-12);
    }

    #[test]
    fn grid_mismatch_is_an_error() {
        let mut p = path(0.1, 0.1);
        p.grid = vec![0.5, 1.0];
        assert!(rms_test(&p, 1.0, 0.05, &table()).is_err());
    }
}
